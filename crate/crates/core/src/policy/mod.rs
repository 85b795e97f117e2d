//! Forward and backward policies over the crystal environment.
//!
//! Each direction is one [`Mlp`] whose output vector is sliced per stage:
//! categorical logits for the discrete actions, and for the lattice stage a
//! stop logit plus Beta-mixture parameters for every lattice parameter.
//! Only the slots of free representatives are ever read.

pub mod beta;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    Action, ActionMask, BackwardAction, BackwardMask, CrystalEnv, CrystalState, Stage,
};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::symtab::LatticeConstraint;
use crate::tensors::TensorFile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub hidden_layers: usize,
    pub hidden_units: usize,
    /// Beta components per lattice dimension.
    pub mixture_components: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 3,
            hidden_units: 256,
            mixture_components: 5,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_units == 0 || self.mixture_components == 0 {
            return Err(Error::Config("policy sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Length of the state encoding for a vocabulary of `n_elements`.
pub fn encoding_len(n_elements: usize) -> usize {
    9 + 6 + 231 + n_elements + 7 + 4
}

/// One-hot categories, counts / K, lattice coordinates with a source flag, stage.
pub fn encode(env: &CrystalEnv, s: &CrystalState) -> Vec<f64> {
    let d = env.n_elements();
    let mut x = vec![0.0; encoding_len(d)];
    let sg = &s.space_group;
    x[sg.cls.map_or(8, |c| c.index())] = 1.0;
    x[9 + sg.ps.map_or(5, |p| p.index())] = 1.0;
    x[15 + sg.sg.map_or(230, |n| n as usize - 1)] = 1.0;
    let k = env.config().max_atoms_per_element as f64;
    for (i, &c) in s.composition.counts.iter().enumerate() {
        x[246 + i] = c as f64 / k;
    }
    let lp = 246 + d;
    match s.lattice.coords {
        Some(c) => x[lp..lp + 6].copy_from_slice(&c),
        None => x[lp + 6] = 1.0,
    }
    x[lp + 7 + s.stage.index().min(3)] = 1.0;
    x
}

/// Offsets into the two output vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    n_discrete: usize,
    n_elements: usize,
    components: usize,
}

impl Layout {
    fn mixture_len(&self) -> usize {
        6 * self.components * 3
    }

    fn stop(&self) -> usize {
        self.n_discrete
    }

    fn source(&self, dim: usize) -> std::ops::Range<usize> {
        let start = self.n_discrete + 1 + dim * self.components * 3;
        start..start + self.components * 3
    }

    fn increment(&self, dim: usize) -> std::ops::Range<usize> {
        let start = self.n_discrete + 1 + self.mixture_len() + dim * self.components * 3;
        start..start + self.components * 3
    }

    fn forward_len(&self) -> usize {
        self.n_discrete + 1 + 2 * self.mixture_len()
    }

    // backward: unset_cls, unset_ps, unset_sg × 4, remove × D, to_source, mixtures
    fn back_slot(&self, b: &BackwardAction) -> Option<usize> {
        match b {
            BackwardAction::UnsetCls => Some(0),
            BackwardAction::UnsetPs => Some(1),
            BackwardAction::UnsetSg { keep_cls, keep_ps } => {
                Some(2 + 2 * *keep_cls as usize + *keep_ps as usize)
            }
            BackwardAction::RemoveElement(d) => Some(6 + d),
            _ => None,
        }
    }

    fn source_slot(&self) -> usize {
        6 + self.n_elements
    }

    fn decrement(&self, dim: usize) -> std::ops::Range<usize> {
        let start = 7 + self.n_elements + dim * self.components * 3;
        start..start + self.components * 3
    }

    fn backward_len(&self) -> usize {
        7 + self.n_elements + self.mixture_len()
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    log_sigmoid(x).exp()
}

/// Masked log-softmax at `chosen`; adds `scale · ∂/∂logits` into `grad`.
fn masked_log_softmax(
    logits: &[f64],
    valid: &[usize],
    chosen: usize,
    grad: Option<(&mut [f64], f64)>,
) -> f64 {
    if valid.len() == 1 {
        return 0.0;
    }
    let m = valid
        .iter()
        .map(|&i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = valid.iter().map(|&i| (logits[i] - m).exp()).sum();
    let lse = m + z.ln();
    if let Some((g, scale)) = grad {
        for &i in valid {
            g[i] -= scale * (logits[i] - lse).exp();
        }
        g[chosen] += scale;
    }
    logits[chosen] - lse
}

fn sample_masked<R: Rng + ?Sized>(logits: &[f64], valid: &[usize], rng: &mut R) -> Result<usize> {
    match valid.len() {
        0 => return Err(Error::DeadEnd),
        1 => return Ok(valid[0]),
        _ => {}
    }
    let m = valid
        .iter()
        .map(|&i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = valid.iter().map(|&i| (logits[i] - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (j, wj) in w.iter().enumerate() {
        if u < *wj {
            return Ok(valid[j]);
        }
        u -= wj;
    }
    Ok(*valid.last().unwrap())
}

fn spread(values: &[f64; 6], constraint: &LatticeConstraint) -> [f64; 6] {
    let mut out = [0.0; 6];
    for g in constraint.free_groups() {
        for &m in &g.members {
            out[m] = values[g.representative()];
        }
    }
    out
}

/// Gradient sink: a buffer over network outputs plus a multiplier.
pub type GradSink<'a> = Option<(&'a mut [f64], f64)>;

fn reborrow<'a>(g: &'a mut GradSink<'_>) -> GradSink<'a> {
    g.as_mut().map(|(buf, s)| (&mut **buf, *s))
}

/// Learned forward and backward policies.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub config: PolicyConfig,
    pub forward: Mlp,
    pub backward: Mlp,
    layout: Layout,
}

impl Policy {
    /// Glorot trunk, zero output weights, and biases that make every Beta
    /// component uniform: the fresh policy is uniform over valid actions.
    pub fn new<R: Rng + ?Sized>(
        env: &CrystalEnv,
        config: PolicyConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let layout = Layout {
            n_discrete: env.action_space().len(),
            n_elements: env.n_elements(),
            components: config.mixture_components,
        };
        let input = encoding_len(env.n_elements());
        let sizes = |out: usize| {
            let mut v = vec![input];
            v.extend(std::iter::repeat_n(
                config.hidden_units,
                config.hidden_layers,
            ));
            v.push(out);
            v
        };
        let mut forward =
            Mlp::glorot_zero_head(&sizes(layout.forward_len()), Activation::Tanh, rng);
        let mut backward =
            Mlp::glorot_zero_head(&sizes(layout.backward_len()), Activation::Tanh, rng);
        let uniform = beta::unsquash(1.0);
        let last = forward.n_layers() - 1;
        let fb = forward.bias_mut(last);
        for dim in 0..6 {
            for range in [layout.source(dim), layout.increment(dim)] {
                for c in range.step_by(3) {
                    fb[c + 1] = uniform;
                    fb[c + 2] = uniform;
                }
            }
        }
        let bb = backward.bias_mut(last);
        for dim in 0..6 {
            for c in layout.decrement(dim).step_by(3) {
                bb[c + 1] = uniform;
                bb[c + 2] = uniform;
            }
        }
        Ok(Self {
            config,
            forward,
            backward,
            layout,
        })
    }

    pub fn n_params(&self) -> usize {
        self.forward.n_params() + self.backward.n_params()
    }

    pub fn forward_output_len(&self) -> usize {
        self.layout.forward_len()
    }

    pub fn backward_output_len(&self) -> usize {
        self.layout.backward_len()
    }

    /// Mixture parameters (weight, α, β per component) of one lattice dimension.
    pub fn mixture_params(
        &self,
        out: &[f64],
        dim: usize,
        from_source: bool,
    ) -> Vec<(f64, f64, f64)> {
        let range = if from_source {
            self.layout.source(dim)
        } else {
            self.layout.increment(dim)
        };
        let raw = &out[range];
        let k = raw.len() / 3;
        let m = (0..k).map(|i| raw[3 * i]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..k).map(|i| (raw[3 * i] - m).exp()).sum();
        (0..k)
            .map(|i| {
                (
                    (raw[3 * i] - m).exp() / z,
                    beta::squash(raw[3 * i + 1]).0,
                    beta::squash(raw[3 * i + 2]).0,
                )
            })
            .collect()
    }

    /// Stop probability in a placed lattice state.
    pub fn stop_probability(&self, out: &[f64]) -> f64 {
        sigmoid(out[self.layout.stop()])
    }

    /// `log P_F(a | s)` from forward outputs `out`.
    pub fn forward_log_prob(
        &self,
        env: &CrystalEnv,
        s: &CrystalState,
        mask: &ActionMask,
        out: &[f64],
        a: &Action,
        mut grad: GradSink<'_>,
    ) -> Result<f64> {
        let l = &self.layout;
        if s.stage != Stage::Lattice {
            let space = env.action_space();
            let chosen = space
                .index(a)
                .filter(|&i| mask.discrete[i])
                .ok_or_else(|| Error::MaskedAction(a.to_string()))?;
            let valid: Vec<usize> = (0..l.n_discrete).filter(|&i| mask.discrete[i]).collect();
            return Ok(masked_log_softmax(
                &out[..l.n_discrete],
                &valid,
                chosen,
                grad,
            ));
        }
        let c = env.constraint(s).ok_or(Error::UnsetLattice)?;
        let reps = c.free_representatives();
        match (a, s.lattice.coords) {
            (Action::LpFromSource(y), None) => {
                let mut lp = 0.0;
                for &r in &reps {
                    let range = l.source(r);
                    lp += self.mixture_term(out, range, y[r], reborrow(&mut grad));
                }
                Ok(lp)
            }
            (Action::LpStop, Some(_)) => {
                if !mask.lp_increment {
                    return Ok(0.0);
                }
                let st = out[l.stop()];
                if let Some((g, scale)) = grad {
                    g[l.stop()] += scale * sigmoid(-st);
                }
                Ok(log_sigmoid(st))
            }
            (Action::LpIncrement(u), Some(x)) if mask.lp_increment => {
                let delta = env.min_increment();
                let st = out[l.stop()];
                let mut lp = log_sigmoid(-st);
                if let Some((g, scale)) = grad.as_mut() {
                    g[l.stop()] -= *scale * sigmoid(st);
                }
                for &r in &reps {
                    let span = 1.0 - x[r] - delta;
                    let rr = (u[r] - delta) / span;
                    lp +=
                        self.mixture_term(out, l.increment(r), rr, reborrow(&mut grad)) - span.ln();
                }
                Ok(lp)
            }
            _ => Err(Error::MaskedAction(a.to_string())),
        }
    }

    fn mixture_term(
        &self,
        out: &[f64],
        range: std::ops::Range<usize>,
        r: f64,
        grad: GradSink<'_>,
    ) -> f64 {
        match grad {
            Some((g, scale)) => {
                let start = range.start;
                let len = range.len();
                beta::mixture_ln_pdf_scaled(&out[range], r, Some(&mut g[start..start + len]), scale)
            }
            None => beta::mixture_ln_pdf(&out[range], r, None),
        }
    }

    /// `log P_B(b | child)` from backward outputs `out`.
    pub fn backward_log_prob(
        &self,
        env: &CrystalEnv,
        child: &CrystalState,
        mask: &BackwardMask,
        out: &[f64],
        b: &BackwardAction,
        mut grad: GradSink<'_>,
    ) -> Result<f64> {
        let l = &self.layout;
        if mask.forced {
            return match b {
                BackwardAction::Forced => Ok(0.0),
                _ => Err(Error::MaskedAction(format!("{b:?}"))),
            };
        }
        if child.stage != Stage::Lattice {
            let mut valid = Vec::new();
            if mask.unset_sg {
                valid.extend(2..6);
            }
            if mask.unset_cls {
                valid.push(0);
            }
            if mask.unset_ps {
                valid.push(1);
            }
            valid.extend(
                mask.remove
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v)
                    .map(|(d, _)| 6 + d),
            );
            valid.sort_unstable();
            let chosen = l
                .back_slot(b)
                .filter(|i| valid.contains(i))
                .ok_or_else(|| Error::MaskedAction(format!("{b:?}")))?;
            return Ok(masked_log_softmax(
                &out[..6 + l.n_elements],
                &valid,
                chosen,
                grad,
            ));
        }
        let x = child.lattice.coords.ok_or(Error::UnsetLattice)?;
        let t = out[l.source_slot()];
        match b {
            BackwardAction::LpToSource => {
                if !mask.lp_decrement {
                    return Ok(0.0);
                }
                if let Some((g, scale)) = grad {
                    g[l.source_slot()] += scale * sigmoid(-t);
                }
                Ok(log_sigmoid(t))
            }
            BackwardAction::LpDecrement(u) if mask.lp_decrement => {
                let c = env.constraint(child).ok_or(Error::UnsetLattice)?;
                let delta = env.min_increment();
                let mut lp = log_sigmoid(-t);
                if let Some((g, scale)) = grad.as_mut() {
                    g[l.source_slot()] -= *scale * sigmoid(t);
                }
                for r in c.free_representatives() {
                    let span = x[r] - delta;
                    let rr = (u[r] - delta) / span;
                    lp +=
                        self.mixture_term(out, l.decrement(r), rr, reborrow(&mut grad)) - span.ln();
                }
                Ok(lp)
            }
            _ => Err(Error::MaskedAction(format!("{b:?}"))),
        }
    }

    /// Draw a forward action from the policy.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        env: &CrystalEnv,
        s: &CrystalState,
        mask: &ActionMask,
        out: &[f64],
        rng: &mut R,
    ) -> Result<Action> {
        let l = &self.layout;
        if s.stage != Stage::Lattice {
            let valid: Vec<usize> = (0..l.n_discrete).filter(|&i| mask.discrete[i]).collect();
            let i = sample_masked(&out[..l.n_discrete], &valid, rng)?;
            return Ok(env.action_space().action(i));
        }
        let c = env.constraint(s).ok_or(Error::UnsetLattice)?;
        let mut v = [0.0; 6];
        match s.lattice.coords {
            None => {
                for r in c.free_representatives() {
                    v[r] = beta::mixture_sample(&out[l.source(r)], rng);
                }
                Ok(Action::LpFromSource(crate::env::lattice::project(
                    &v,
                    c,
                    env.ranges(),
                )))
            }
            Some(x) => {
                if !mask.lp_increment || rng.gen::<f64>() < sigmoid(out[l.stop()]) {
                    return Ok(Action::LpStop);
                }
                let delta = env.min_increment();
                for r in c.free_representatives() {
                    let rr = beta::mixture_sample(&out[l.increment(r)], rng);
                    v[r] = delta + rr * (1.0 - x[r] - delta);
                }
                Ok(Action::LpIncrement(spread(&v, c)))
            }
        }
    }

    pub fn write_tensors(&self, file: &mut TensorFile) -> Result<()> {
        self.forward.write_tensors("forward", file)?;
        self.backward.write_tensors("backward", file)?;
        file.metadata
            .insert("policy".into(), serde_json::to_string(&self.config)?);
        Ok(())
    }

    /// Restore a policy for `env`; shapes must match exactly.
    pub fn read_tensors(env: &CrystalEnv, file: &TensorFile) -> Result<Self> {
        let config: PolicyConfig = match file.metadata.get("policy") {
            Some(s) => serde_json::from_str(s)?,
            None => return Err(Error::Format("checkpoint lacks policy metadata".into())),
        };
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut p = Self::new(env, config, &mut rng)?;
        p.forward = Mlp::read_tensors(p.forward.sizes(), Activation::Tanh, "forward", file)?;
        p.backward = Mlp::read_tensors(p.backward.sizes(), Activation::Tanh, "backward", file)?;
        Ok(p)
    }
}
