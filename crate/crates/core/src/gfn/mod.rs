//! Trajectory sampling, the trajectory-balance objective, and training.
//!
//! Every trajectory draws from its own ChaCha stream derived from
//! `(seed, iteration, index)`, rollouts run on a rayon pool, and gradients are
//! reduced in index order, so a run is bit-reproducible for any thread count.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Action, CrystalEnv, CrystalState};
use crate::error::{Error, Result};
use crate::nn::{Adam, MlpCache};
use crate::policy::{encode, Policy, PolicyConfig};
use crate::record::CrystalRecord;
use crate::reward::{log_reward, EnergyModel};
use crate::tensors::TensorFile;

/// Number of learned scalars whose sum is `log Z`.
pub const LOG_Z_WEIGHTS: usize = 16;

/// Environment variable capping the rollout thread count.
pub const THREADS_VAR: &str = "CRYSTALFLOW_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub trajectories_per_iter: usize,
    /// Probability of replacing a policy step with a uniform valid action.
    pub exploration: f64,
    pub lr_policy: f64,
    pub lr_log_z: f64,
    /// Write a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 50_000,
            trajectories_per_iter: 10,
            exploration: 0.1,
            lr_policy: 1e-4,
            lr_log_z: 0.01,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.exploration) {
            return Err(Error::Config(format!(
                "exploration must lie in [0, 1], got {}",
                self.exploration
            )));
        }
        if self.trajectories_per_iter == 0 {
            return Err(Error::Config(
                "trajectories_per_iter must be positive".into(),
            ));
        }
        for (name, lr) in [("lr_policy", self.lr_policy), ("lr_log_z", self.lr_log_z)] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be a non-negative number"
                )));
            }
        }
        Ok(())
    }

    /// Reward evaluations over a full run.
    pub fn queries(&self) -> usize {
        self.iterations * self.trajectories_per_iter
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<CrystalState>,
    pub actions: Vec<Action>,
    pub log_pf: f64,
    pub log_pb: f64,
    pub log_reward: f64,
    pub energy: f64,
    pub record: CrystalRecord,
}

impl Trajectory {
    pub fn terminal(&self) -> &CrystalState {
        self.states.last().expect("trajectories are non-empty")
    }
}

/// Random stream for trajectory `index` of `iteration`.
pub fn trajectory_rng(seed: u64, iteration: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((iteration << 20) | index);
    rng
}

/// Sample one trajectory. With probability `exploration` each step is a
/// uniform valid action; log-probabilities always use the policies.
#[allow(clippy::too_many_arguments)]
pub fn rollout<R: Rng + ?Sized>(
    policy: &Policy,
    env: &CrystalEnv,
    model: &dyn EnergyModel,
    temperature: f64,
    exploration: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut states = vec![env.initial_state()];
    let mut actions = Vec::new();
    let mut log_pf = 0.0;
    let limit = env.max_trajectory_length();
    loop {
        let s = states.last().expect("non-empty");
        if s.is_done() {
            break;
        }
        if actions.len() >= limit {
            return Err(Error::Numerical(format!(
                "trajectory exceeded {limit} steps"
            )));
        }
        let mask = env.valid_actions(s)?;
        if mask.is_empty() {
            return Err(Error::DeadEnd);
        }
        let out = policy.forward.forward(&encode(env, s));
        let explore = rng.gen::<f64>() < exploration;
        let a = if explore {
            env.uniform_action(s, &mask, rng)?
        } else {
            policy.sample(env, s, &mask, &out, rng)?
        };
        log_pf += policy.forward_log_prob(env, s, &mask, &out, &a, None)?;
        let next = env.step(s, &a)?;
        actions.push(a);
        states.push(next);
    }
    let mut log_pb = 0.0;
    for (t, a) in actions.iter().enumerate() {
        let child = &states[t + 1];
        let bmask = env.backward_mask(child)?;
        let out = policy.backward.forward(&encode(env, child));
        log_pb += policy.backward_log_prob(
            env,
            child,
            &bmask,
            &out,
            &env.backward_action(&states[t], a),
            None,
        )?;
    }
    let record = env.terminal_record(states.last().expect("non-empty"))?;
    let energy = model.energy(&record)?;
    let log_reward = log_reward(energy, temperature)?;
    Ok(Trajectory {
        states,
        actions,
        log_pf,
        log_pb,
        log_reward,
        energy,
        record,
    })
}

/// Gradients of the batch loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TbGradients {
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
    pub log_z: [f64; LOG_Z_WEIGHTS],
}

/// Per-trajectory sums of log-probabilities and their parameter gradients.
struct PathTerms {
    log_pf: f64,
    log_pb: f64,
    grad_f: Vec<f64>,
    grad_b: Vec<f64>,
}

fn path_terms(policy: &Policy, env: &CrystalEnv, tr: &Trajectory) -> Result<PathTerms> {
    let mut grad_f = vec![0.0; policy.forward.n_params()];
    let mut grad_b = vec![0.0; policy.backward.n_params()];
    let (mut log_pf, mut log_pb) = (0.0, 0.0);
    let mut go = vec![0.0; policy.forward_output_len()];
    let mut gbo = vec![0.0; policy.backward_output_len()];
    for (t, a) in tr.actions.iter().enumerate() {
        let (s, child) = (&tr.states[t], &tr.states[t + 1]);
        let mask = env.valid_actions(s)?;
        let (out, cache): (Vec<f64>, MlpCache) = policy.forward.forward_cached(&encode(env, s));
        go.fill(0.0);
        log_pf += policy.forward_log_prob(env, s, &mask, &out, a, Some((&mut go, 1.0)))?;
        policy.forward.backward_params(&cache, &go, &mut grad_f);

        let bmask = env.backward_mask(child)?;
        let (bout, bcache) = policy.backward.forward_cached(&encode(env, child));
        gbo.fill(0.0);
        let b = env.backward_action(s, a);
        log_pb += policy.backward_log_prob(env, child, &bmask, &bout, &b, Some((&mut gbo, 1.0)))?;
        policy.backward.backward_params(&bcache, &gbo, &mut grad_b);
    }
    Ok(PathTerms {
        log_pf,
        log_pb,
        grad_f,
        grad_b,
    })
}

/// Trajectory-balance residual `log Z + Σ log P_F − log R − Σ log P_B`.
pub fn tb_residual(log_z: f64, tr: &Trajectory) -> f64 {
    log_z + tr.log_pf - tr.log_reward - tr.log_pb
}

/// Mean squared trajectory-balance residual without gradients.
pub fn tb_loss_value(log_z: &[f64; LOG_Z_WEIGHTS], batch: &[Trajectory]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("trajectory batch"));
    }
    let z: f64 = log_z.iter().sum();
    Ok(batch.iter().map(|t| tb_residual(z, t).powi(2)).sum::<f64>() / batch.len() as f64)
}

/// Loss and exact gradients; log-probabilities are recomputed from the
/// recorded states and actions under the current parameters.
pub fn tb_loss(
    policy: &Policy,
    log_z: &[f64; LOG_Z_WEIGHTS],
    env: &CrystalEnv,
    batch: &[Trajectory],
) -> Result<(f64, TbGradients)> {
    if batch.is_empty() {
        return Err(Error::Empty("trajectory batch"));
    }
    for tr in batch {
        if !tr.log_reward.is_finite() {
            return Err(Error::Reward(format!(
                "log reward {} is not finite",
                tr.log_reward
            )));
        }
    }
    let terms: Vec<PathTerms> = batch
        .par_iter()
        .map(|tr| path_terms(policy, env, tr))
        .collect::<Result<_>>()?;
    let z: f64 = log_z.iter().sum();
    let n = batch.len() as f64;
    let mut grads = TbGradients {
        forward: vec![0.0; policy.forward.n_params()],
        backward: vec![0.0; policy.backward.n_params()],
        log_z: [0.0; LOG_Z_WEIGHTS],
    };
    let mut loss = 0.0;
    for (tr, p) in batch.iter().zip(&terms) {
        let delta = z + p.log_pf - tr.log_reward - p.log_pb;
        loss += delta * delta / n;
        let c = 2.0 * delta / n;
        for (g, v) in grads.forward.iter_mut().zip(&p.grad_f) {
            *g += c * v;
        }
        for (g, v) in grads.backward.iter_mut().zip(&p.grad_b) {
            *g -= c * v;
        }
        for g in &mut grads.log_z {
            *g += c;
        }
    }
    Ok((loss, grads))
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub iteration: usize,
    pub loss: f64,
    pub log_z: f64,
    pub mean_reward: f64,
    pub mean_energy: f64,
}

/// Parameters being trained.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub policy: Policy,
    pub log_z: [f64; LOG_Z_WEIGHTS],
}

impl Learner {
    pub fn new(env: &CrystalEnv, config: PolicyConfig, seed: u64) -> Result<Self> {
        // a stream no trajectory uses
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        Ok(Self {
            policy: Policy::new(env, config, &mut rng)?,
            log_z: [0.0; LOG_Z_WEIGHTS],
        })
    }

    pub fn log_z(&self) -> f64 {
        self.log_z.iter().sum()
    }

    /// Checkpoint carrying the environment config so mismatches are caught on load.
    pub fn to_tensors(&self, env: &CrystalEnv) -> Result<TensorFile> {
        let mut f = TensorFile::default();
        self.policy.write_tensors(&mut f)?;
        f.insert("log_z", vec![LOG_Z_WEIGHTS], self.log_z.to_vec())?;
        f.metadata
            .insert("env".into(), serde_json::to_string(env.config())?);
        Ok(f)
    }

    pub fn from_tensors(env: &CrystalEnv, f: &TensorFile) -> Result<Self> {
        let stored = f
            .metadata
            .get("env")
            .ok_or_else(|| Error::Format("checkpoint lacks env metadata".into()))?;
        let current = serde_json::to_string(env.config())?;
        if *stored != current {
            return Err(Error::Format(
                "checkpoint was trained for a different environment config".into(),
            ));
        }
        let policy = Policy::read_tensors(env, f)?;
        let log_z = f
            .get("log_z", &[LOG_Z_WEIGHTS])?
            .try_into()
            .expect("length checked");
        Ok(Self { policy, log_z })
    }

    pub fn save(&self, env: &CrystalEnv, path: &Path) -> Result<()> {
        self.to_tensors(env)?.save(path)
    }

    pub fn load(env: &CrystalEnv, path: &Path) -> Result<Self> {
        Self::from_tensors(env, &TensorFile::load(path)?)
    }
}

/// Thread pool sized by [`THREADS_VAR`] if set, else rayon's default.
pub fn rollout_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::Config(format!(
                "{THREADS_VAR} must be a positive integer, got {v:?}"
            ))
        })?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(e.to_string()))
}

/// `n` trajectories of iteration `iteration`, sampled in parallel.
#[allow(clippy::too_many_arguments)]
pub fn rollout_batch(
    policy: &Policy,
    env: &CrystalEnv,
    model: &dyn EnergyModel,
    temperature: f64,
    exploration: f64,
    seed: u64,
    iteration: u64,
    n: usize,
) -> Result<Vec<Trajectory>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(seed, iteration, i as u64);
            rollout(policy, env, model, temperature, exploration, &mut rng)
        })
        .collect()
}

/// Train with trajectory balance. `on_iteration` sees every log row with the
/// updated parameters and may stop the run by returning an error.
pub fn train<F>(
    env: &CrystalEnv,
    learner: &mut Learner,
    config: &TrainConfig,
    model: &dyn EnergyModel,
    temperature: f64,
    seed: u64,
    mut on_iteration: F,
) -> Result<()>
where
    F: FnMut(&LogRow, &Learner) -> Result<()>,
{
    config.validate()?;
    let pool = rollout_pool()?;
    let mut opt_f = Adam::new(learner.policy.forward.n_params(), config.lr_policy);
    let mut opt_b = Adam::new(learner.policy.backward.n_params(), config.lr_policy);
    let mut opt_z = Adam::new(LOG_Z_WEIGHTS, config.lr_log_z);
    for it in 0..config.iterations {
        let (batch, loss, grads) = pool.install(|| -> Result<_> {
            let batch = rollout_batch(
                &learner.policy,
                env,
                model,
                temperature,
                config.exploration,
                seed,
                it as u64,
                config.trajectories_per_iter,
            )?;
            let (loss, grads) = tb_loss(&learner.policy, &learner.log_z, env, &batch)?;
            Ok((batch, loss, grads))
        })?;
        if !loss.is_finite()
            || grads
                .forward
                .iter()
                .chain(&grads.backward)
                .any(|g| !g.is_finite())
        {
            let worst = batch
                .iter()
                .map(|t| {
                    format!(
                        "log_pf={:.4} log_pb={:.4} log_r={:.4}",
                        t.log_pf, t.log_pb, t.log_reward
                    )
                })
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::Numerical(format!(
                "loss diverged at iteration {it} (loss={loss}): {worst}"
            )));
        }
        opt_f.step(&mut learner.policy.forward.params, &grads.forward);
        opt_b.step(&mut learner.policy.backward.params, &grads.backward);
        opt_z.step(&mut learner.log_z, &grads.log_z);
        let n = batch.len() as f64;
        let row = LogRow {
            iteration: it,
            loss,
            log_z: learner.log_z(),
            mean_reward: batch.iter().map(|t| t.log_reward.exp()).sum::<f64>() / n,
            mean_energy: batch.iter().map(|t| t.energy).sum::<f64>() / n,
        };
        on_iteration(&row, learner)?;
    }
    Ok(())
}

/// Terminal samples from the policy alone (no exploration).
///
/// Sample `i` uses a stream disjoint from every training iteration.
pub fn sample(
    learner: &Learner,
    env: &CrystalEnv,
    model: &dyn EnergyModel,
    temperature: f64,
    seed: u64,
    n: usize,
) -> Result<Vec<Trajectory>> {
    const TOP: u64 = u64::MAX >> 20;
    let pool = rollout_pool()?;
    pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let i = i as u64;
                let mut rng = trajectory_rng(seed, TOP - (i >> 20), i & 0xF_FFFF);
                rollout(&learner.policy, env, model, temperature, 0.0, &mut rng)
            })
            .collect()
    })
}
