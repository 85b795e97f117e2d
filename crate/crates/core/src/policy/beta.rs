//! Mixtures of Beta distributions parameterised by raw network outputs.
//!
//! Each component takes three raw values `[logit, a, b]`: the weight is the
//! softmax of the logits and the concentrations are squashed into
//! `[CONC_MIN, CONC_MAX]` with a scaled sigmoid.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use statrs::function::gamma::{digamma, ln_gamma};

pub const CONC_MIN: f64 = 0.1;
pub const CONC_MAX: f64 = 100.0;
/// Samples and evaluation points are kept this far inside (0, 1).
pub const EDGE: f64 = 1e-10;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Concentration and its derivative with respect to the raw value.
pub fn squash(raw: f64) -> (f64, f64) {
    let s = sigmoid(raw);
    (
        CONC_MIN + (CONC_MAX - CONC_MIN) * s,
        (CONC_MAX - CONC_MIN) * s * (1.0 - s),
    )
}

/// Raw value whose squashed concentration is `c`.
pub fn unsquash(c: f64) -> f64 {
    let s = (c - CONC_MIN) / (CONC_MAX - CONC_MIN);
    (s / (1.0 - s)).ln()
}

pub fn clamp_unit(r: f64) -> f64 {
    r.clamp(EDGE, 1.0 - EDGE)
}

pub fn ln_beta_pdf(r: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * r.ln() + (b - 1.0) * (1.0 - r).ln() - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b))
}

/// `(∂/∂a, ∂/∂b)` of [`ln_beta_pdf`].
pub fn ln_beta_pdf_grad(r: f64, a: f64, b: f64) -> (f64, f64) {
    let dab = digamma(a + b);
    (r.ln() - digamma(a) + dab, (1.0 - r).ln() - digamma(b) + dab)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log density of the mixture at `r` (clamped into the open unit interval).
///
/// If `grad` is given, `scale · ∂/∂raw` is added to it.
pub fn mixture_ln_pdf(raw: &[f64], r: f64, grad: Option<&mut [f64]>) -> f64 {
    mixture_ln_pdf_scaled(raw, r, grad, 1.0)
}

pub fn mixture_ln_pdf_scaled(raw: &[f64], r: f64, grad: Option<&mut [f64]>, scale: f64) -> f64 {
    debug_assert_eq!(raw.len() % 3, 0);
    let r = clamp_unit(r);
    let k = raw.len() / 3;
    let logits: Vec<f64> = (0..k).map(|i| raw[3 * i]).collect();
    let log_norm = log_sum_exp(&logits);
    let mut joint = Vec::with_capacity(k);
    let mut conc = Vec::with_capacity(k);
    for i in 0..k {
        let (a, da) = squash(raw[3 * i + 1]);
        let (b, db) = squash(raw[3 * i + 2]);
        joint.push(logits[i] + ln_beta_pdf(r, a, b));
        conc.push((a, da, b, db));
    }
    let log_num = log_sum_exp(&joint);
    if let Some(g) = grad {
        for i in 0..k {
            let resp = (joint[i] - log_num).exp();
            let w = (logits[i] - log_norm).exp();
            let (a, da, b, db) = conc[i];
            let (ga, gb) = ln_beta_pdf_grad(r, a, b);
            g[3 * i] += scale * (resp - w);
            g[3 * i + 1] += scale * resp * ga * da;
            g[3 * i + 2] += scale * resp * gb * db;
        }
    }
    log_num - log_norm
}

/// Draw from the mixture; the result lies in `[EDGE, 1 − EDGE]`.
pub fn mixture_sample<R: Rng + ?Sized>(raw: &[f64], rng: &mut R) -> f64 {
    let k = raw.len() / 3;
    let logits: Vec<f64> = (0..k).map(|i| raw[3 * i]).collect();
    let log_norm = log_sum_exp(&logits);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut pick = k - 1;
    for (i, l) in logits.iter().enumerate() {
        acc += (l - log_norm).exp();
        if u < acc {
            pick = i;
            break;
        }
    }
    let (a, _) = squash(raw[3 * pick + 1]);
    let (b, _) = squash(raw[3 * pick + 2]);
    let dist = Beta::new(a, b).expect("concentrations are positive and finite");
    clamp_unit(dist.sample(rng))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn squash_stays_in_range() {
        for raw in [-1e6, -50.0, -3.0, 0.0, 2.5, 40.0, 1e6] {
            let (c, d) = squash(raw);
            assert!((CONC_MIN..=CONC_MAX).contains(&c));
            assert!(d >= 0.0);
        }
        assert!((squash(unsquash(1.0)).0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_component_has_zero_log_density() {
        let raw = [0.0, unsquash(1.0), unsquash(1.0)];
        for r in [0.01, 0.3, 0.77] {
            assert!(mixture_ln_pdf(&raw, r, None).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_derivative_at_one_one_half() {
        let (ga, gb) = ln_beta_pdf_grad(0.5, 1.0, 1.0);
        let expected = digamma(2.0) - digamma(1.0) + 0.5f64.ln();
        assert!((ga - expected).abs() < 1e-14);
        assert_eq!(ga, gb);
        // digamma(2) − digamma(1) = 1
        assert!((ga - (1.0 + 0.5f64.ln())).abs() < 1e-12);
        let h = 1e-6;
        let fd = (ln_beta_pdf(0.5, 1.0 + h, 1.0) - ln_beta_pdf(0.5, 1.0 - h, 1.0)) / (2.0 * h);
        assert!((fd - ga).abs() < 1e-8);
    }

    #[test]
    fn mixture_gradient_matches_finite_differences() {
        let raw = [0.3, -1.0, 0.5, -0.7, 2.0, -0.2, 1.1, -3.0, 1.5];
        for r in [0.05, 0.4, 0.93] {
            let mut g = vec![0.0; raw.len()];
            mixture_ln_pdf(&raw, r, Some(&mut g));
            for i in 0..raw.len() {
                let h = 1e-6;
                let (mut p, mut q) = (raw, raw);
                p[i] += h;
                q[i] -= h;
                let fd = (mixture_ln_pdf(&p, r, None) - mixture_ln_pdf(&q, r, None)) / (2.0 * h);
                assert!(
                    (fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()),
                    "raw {i} at {r}: {fd} vs {}",
                    g[i]
                );
            }
        }
    }

    #[test]
    fn mixture_integrates_to_one() {
        let raw = [0.3, 1.0, 0.5, -0.7, 2.0, -0.2, 1.1, 0.0, 1.5];
        let n = 100_000;
        let total: f64 = (0..n)
            .map(|i| mixture_ln_pdf(&raw, (i as f64 + 0.5) / n as f64, None).exp())
            .sum::<f64>()
            / n as f64;
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }

    #[test]
    fn samples_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let raw = [0.0, -40.0, -40.0, 0.0, 40.0, -40.0];
        for _ in 0..10_000 {
            let r = mixture_sample(&raw, &mut rng);
            assert!((EDGE..=1.0 - EDGE).contains(&r));
        }
    }
}
