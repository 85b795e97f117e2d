//! Brute-force ground truth for configurations small enough to enumerate.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use serde::Serialize;

use crate::env::{Action, CrystalEnv, CrystalState};
use crate::error::{Error, Result};
use crate::reward::{log_reward, EnergyModel};

/// Refuse to enumerate more terminals than this by default.
pub const DEFAULT_MAX_TERMINALS: usize = 1_000_000;

/// Every terminal state reachable from the initial state, in DFS discovery order.
///
/// The lattice stage must be fixed since continuous terminals cannot be listed.
pub fn enumerate_terminals(env: &CrystalEnv, max_terminals: usize) -> Result<Vec<CrystalState>> {
    if env.lp_stage_enabled() {
        return Err(Error::Config("enumeration needs a fixed lattice".into()));
    }
    let space = env.action_space();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut stack = vec![env.initial_state()];
    seen.insert(env.initial_state());
    while let Some(s) = stack.pop() {
        if s.is_done() {
            out.push(s);
            if out.len() > max_terminals {
                return Err(Error::TooLarge(max_terminals));
            }
            continue;
        }
        let mask = env.valid_actions(&s)?;
        if mask.is_empty() {
            return Err(Error::DeadEnd);
        }
        // push in reverse so children are expanded in action order
        for i in (0..mask.discrete.len()).rev().filter(|&i| mask.discrete[i]) {
            let next = env.step(&s, &space.action(i))?;
            if seen.insert(next.clone()) {
                stack.push(next);
            }
        }
        if mask.lp_stop {
            let next = env.step(&s, &Action::LpStop)?;
            if seen.insert(next.clone()) {
                stack.push(next);
            }
        }
    }
    Ok(out)
}

/// Target distribution `p(x) = R(x) / Σ R` over an enumerated support.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDistribution<K> {
    pub support: Vec<K>,
    pub probabilities: Vec<f64>,
    pub log_z: f64,
}

impl<K: Eq + Hash> ExactDistribution<K> {
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn probability_of(&self, x: &K) -> f64 {
        self.support
            .iter()
            .position(|k| k == x)
            .map_or(0.0, |i| self.probabilities[i])
    }
}

/// Normalize log-rewards with a log-sum-exp.
pub fn exact_distribution<K>(support: Vec<K>, log_rewards: &[f64]) -> Result<ExactDistribution<K>> {
    if support.is_empty() {
        return Err(Error::Empty("terminal set"));
    }
    if support.len() != log_rewards.len() {
        return Err(Error::Config(format!(
            "{} terminals but {} rewards",
            support.len(),
            log_rewards.len()
        )));
    }
    if let Some(v) = log_rewards.iter().find(|v| !v.is_finite()) {
        return Err(Error::Reward(format!("non-finite log reward {v}")));
    }
    let m = log_rewards
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = log_rewards.iter().map(|v| (v - m).exp()).sum();
    let log_z = m + sum.ln();
    let probabilities = log_rewards.iter().map(|v| (v - log_z).exp()).collect();
    Ok(ExactDistribution {
        support,
        probabilities,
        log_z,
    })
}

/// Enumerate `env` and weight each terminal by `exp(−E / T)`.
pub fn exact_distribution_of(
    env: &CrystalEnv,
    model: &dyn EnergyModel,
    temperature: f64,
    max_terminals: usize,
) -> Result<ExactDistribution<CrystalState>> {
    let terminals = enumerate_terminals(env, max_terminals)?;
    let log_r = terminals
        .iter()
        .map(|s| log_reward(model.energy(&env.terminal_record(s)?)?, temperature))
        .collect::<Result<Vec<_>>>()?;
    exact_distribution(terminals, &log_r)
}

/// `Σ_x |p̂(x) − p(x)|`, counting empirical mass outside the support in full.
pub fn l1_divergence<K: Eq + Hash>(
    counts: &HashMap<K, usize>,
    exact: &ExactDistribution<K>,
) -> Result<f64> {
    let total: usize = counts.values().sum();
    if total == 0 {
        return Err(Error::Empty("empirical counts"));
    }
    let n = total as f64;
    let mut covered = 0usize;
    let mut l1 = 0.0;
    for (x, p) in exact.support.iter().zip(&exact.probabilities) {
        let c = counts.get(x).copied().unwrap_or(0);
        covered += c;
        l1 += (c as f64 / n - p).abs();
    }
    l1 += (total - covered) as f64 / n;
    Ok(l1)
}

pub fn count<K: Eq + Hash, I: IntoIterator<Item = K>>(items: I) -> HashMap<K, usize> {
    let mut m = HashMap::new();
    for x in items {
        *m.entry(x).or_insert(0) += 1;
    }
    m
}

/// Probability mass per equal-width bin of a density known up to a constant on [0, 1].
///
/// Each bin is integrated with composite Simpson's rule on `2 * half_steps` panels.
pub fn binned_exact_marginal(
    log_density: impl Fn(f64) -> f64,
    bins: usize,
    half_steps: usize,
) -> Result<Vec<f64>> {
    if bins == 0 || half_steps == 0 {
        return Err(Error::Config(
            "bins and quadrature steps must be positive".into(),
        ));
    }
    let n = 2 * half_steps;
    let w = 1.0 / bins as f64;
    let h = w / n as f64;
    let mut mass = Vec::with_capacity(bins);
    for b in 0..bins {
        let lo = b as f64 * w;
        let mut s = 0.0;
        for i in 0..=n {
            let coef = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            s += coef * log_density(lo + i as f64 * h).exp();
        }
        mass.push(s * h / 3.0);
    }
    let total: f64 = mass.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::Numerical(format!("marginal normalizer {total}")));
    }
    Ok(mass.into_iter().map(|m| m / total).collect())
}

/// Normalized histogram of samples in [0, 1]; the value 1 lands in the last bin.
pub fn histogram_unit(samples: &[f64], bins: usize) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let mut h = vec![0.0; bins];
    for &x in samples {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Numerical(format!("sample {x} outside [0, 1]")));
        }
        h[((x * bins as f64) as usize).min(bins - 1)] += 1.0;
    }
    let n = samples.len() as f64;
    Ok(h.into_iter().map(|c| c / n).collect())
}

pub fn l1_between(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

/// Summary emitted by `oracle-check`.
#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub terminals: usize,
    pub log_z_true: f64,
    pub log_z_learned: f64,
    pub log_z_gap: f64,
    pub samples: usize,
    pub l1: f64,
}
