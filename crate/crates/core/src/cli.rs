//! Config-driven commands behind the `crystalflow` binary.
//!
//! Every command is a function of `(RunConfig, seed)` and writes only under
//! the output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::env::{CrystalEnv, EnvConfig};
use crate::error::{Error, Result};
use crate::gfn::{self, Learner, LogRow, TrainConfig};
use crate::metrics::{
    diversity_report, energy_report, topk, DiversityReport, EnergyReport, Histogram,
};
use crate::oracle::{
    count, exact_distribution_of, l1_divergence, OracleReport, DEFAULT_MAX_TERMINALS,
};
use crate::policy::PolicyConfig;
use crate::record::{read_samples_csv, write_samples_csv};
use crate::reward::{EnergyModel, RewardConfig};
use crate::symtab::{tables, CrystalLatticeSystem, PointSymmetry};

pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const ORACLE_FILE: &str = "oracle.json";
pub const TABLES_FILE: &str = "tables.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub n: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { n: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Energies for the strict `fraction_below` statistic.
    pub thresholds: Vec<f64>,
    pub histogram_range: [f64; 2],
    pub histogram_bins: usize,
    /// Size of the lowest-energy subset summarized separately.
    pub top_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![-2.0],
            histogram_range: [-6.0, 4.0],
            histogram_bins: 50,
            top_k: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub samples: usize,
    pub max_terminals: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            max_terminals: DEFAULT_MAX_TERMINALS,
        }
    }
}

/// Complete description of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
    pub reward: RewardConfig,
    pub sample: SampleConfig,
    pub eval: EvalConfig,
    pub oracle: OracleConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            policy: PolicyConfig::default(),
            train: TrainConfig::default(),
            reward: RewardConfig::default(),
            sample: SampleConfig::default(),
            eval: EvalConfig::default(),
            oracle: OracleConfig::default(),
            output_dir: PathBuf::from("runs/default"),
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Parse and validate; schema errors name the offending JSON path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        CrystalEnv::new(self.env.clone())?;
        self.policy.validate()?;
        self.train.validate()?;
        self.reward.validate()?;
        if self.eval.histogram_bins == 0
            || self.eval.histogram_range[0].partial_cmp(&self.eval.histogram_range[1])
                != Some(std::cmp::Ordering::Less)
        {
            return Err(Error::Config(
                "eval histogram needs a positive bin count and an increasing range".into(),
            ));
        }
        Ok(())
    }
}

/// A validated config plus the directory relative paths inside it resolve against.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub base: PathBuf,
}

impl Run {
    /// Load `path`, or the defaults when absent, then apply command-line overrides.
    pub fn new(path: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> Result<Self> {
        let (mut config, base) = match path {
            Some(p) => (
                RunConfig::load(p)?,
                p.parent().map(Path::to_path_buf).unwrap_or_default(),
            ),
            None => (RunConfig::default(), PathBuf::new()),
        };
        if let Some(s) = seed {
            config.seed = s;
        }
        if let Some(o) = out {
            config.output_dir = o.to_path_buf();
        }
        Ok(Self { config, base })
    }

    pub fn from_config(config: RunConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            base: PathBuf::new(),
        })
    }

    pub fn out(&self) -> &Path {
        &self.config.output_dir
    }

    pub fn env(&self) -> Result<CrystalEnv> {
        CrystalEnv::new(self.config.env.clone())
    }

    pub fn model(&self) -> Result<Box<dyn EnergyModel>> {
        self.config.reward.load_model(&self.base)
    }

    fn create_out(&self) -> Result<&Path> {
        fs::create_dir_all(self.out())?;
        Ok(self.out())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Train, writing the checkpoint, per-iteration log, wall-clock sidecar and resolved config.
pub fn train(run: &Run) -> Result<Vec<LogRow>> {
    let out = run.create_out()?.to_path_buf();
    let cfg = &run.config;
    write_json(&out.join(RESOLVED_CONFIG_FILE), cfg)?;
    let env = run.env()?;
    let model = run.model()?;
    let mut learner = Learner::new(&env, cfg.policy.clone(), cfg.seed)?;
    let mut log = csv::Writer::from_path(out.join(TRAIN_LOG_FILE))?;
    let mut timing = csv::Writer::from_path(out.join(TIMING_FILE))?;
    timing.write_record(["iteration", "wall_ms"])?;
    let mut rows = Vec::with_capacity(cfg.train.iterations);
    let start = Instant::now();
    let every = cfg.train.checkpoint_every;
    let result = gfn::train(
        &env,
        &mut learner,
        &cfg.train,
        model.as_ref(),
        cfg.reward.temperature,
        cfg.seed,
        |row, l| {
            log.serialize(row)?;
            timing.write_record([
                row.iteration.to_string(),
                start.elapsed().as_millis().to_string(),
            ])?;
            if every > 0 && (row.iteration + 1) % every == 0 {
                l.save(
                    &env,
                    &out.join(format!("checkpoint_{}.safetensors", row.iteration + 1)),
                )?;
            }
            rows.push(row.clone());
            Ok(())
        },
    );
    if rows.is_empty() {
        // header only, so that a zero-iteration log is still well formed
        log.write_record(["iteration", "loss", "log_z", "mean_reward", "mean_energy"])?;
    }
    log.flush()?;
    timing.flush()?;
    result?;
    learner.save(&env, &out.join(CHECKPOINT_FILE))?;
    Ok(rows)
}

/// Draw `n` crystals from a checkpoint and write them as CSV.
///
/// Each terminal is re-validated against the constraint tables before writing.
pub fn sample(run: &Run, checkpoint: &Path, n: usize) -> Result<PathBuf> {
    let env = run.env()?;
    let model = run.model()?;
    let learner = Learner::load(&env, checkpoint)?;
    let trajectories = gfn::sample(
        &learner,
        &env,
        model.as_ref(),
        run.config.reward.temperature,
        run.config.seed,
        n,
    )?;
    let mut rows = Vec::with_capacity(n);
    for t in trajectories {
        let errs = env.validate_terminal(t.terminal());
        if !errs.is_empty() {
            return Err(Error::Numerical(format!(
                "sampled an invalid crystal: {}",
                errs.join("; ")
            )));
        }
        rows.push((t.record, t.energy));
    }
    let path = run.create_out()?.join(SAMPLES_FILE);
    write_samples_csv(BufWriter::new(File::create(&path)?), &rows)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub energy: EnergyReport,
    /// Statistics of the `top_k` lowest-energy samples.
    pub top_k: EnergyReport,
    pub diversity: DiversityReport,
}

pub fn evaluate(
    cfg: &RunConfig,
    samples: &[(crate::record::CrystalRecord, f64)],
) -> Result<MetricsReport> {
    let e = &cfg.eval;
    let edges =
        Histogram::uniform_edges(e.histogram_range[0], e.histogram_range[1], e.histogram_bins);
    let top = topk(samples, e.top_k.min(samples.len()))?;
    Ok(MetricsReport {
        energy: energy_report(samples, &e.thresholds, &edges)?,
        top_k: energy_report(&top, &e.thresholds, &edges)?,
        diversity: diversity_report(samples, &cfg.env.elements, &cfg.env.space_groups)?,
    })
}

/// Metrics of a samples CSV, written as JSON.
pub fn eval(run: &Run, samples: &Path) -> Result<MetricsReport> {
    let rows = read_samples_csv(File::open(samples)?)?;
    let report = evaluate(&run.config, &rows)?;
    write_json(&run.create_out()?.join(METRICS_FILE), &report)?;
    Ok(report)
}

/// Enumerate the configured space, train briefly, and compare samples to `R / Z`.
pub fn oracle_check(run: &Run) -> Result<OracleReport> {
    let cfg = &run.config;
    let env = run.env()?;
    let model = run.model()?;
    let exact = exact_distribution_of(
        &env,
        model.as_ref(),
        cfg.reward.temperature,
        cfg.oracle.max_terminals,
    )?;
    let mut learner = Learner::new(&env, cfg.policy.clone(), cfg.seed)?;
    gfn::train(
        &env,
        &mut learner,
        &cfg.train,
        model.as_ref(),
        cfg.reward.temperature,
        cfg.seed,
        |_, _| Ok(()),
    )?;
    let samples = gfn::sample(
        &learner,
        &env,
        model.as_ref(),
        cfg.reward.temperature,
        cfg.seed,
        cfg.oracle.samples,
    )?;
    let counts = count(
        samples
            .into_iter()
            .map(|t| t.states.into_iter().last().expect("non-empty")),
    );
    let report = OracleReport {
        terminals: exact.len(),
        log_z_true: exact.log_z,
        log_z_learned: learner.log_z(),
        log_z_gap: learner.log_z() - exact.log_z,
        samples: cfg.oracle.samples,
        l1: l1_divergence(&counts, &exact)?,
    };
    write_json(&run.create_out()?.join(ORACLE_FILE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryCount {
    pub name: String,
    pub space_groups: usize,
}

/// Summary of the built-in crystallographic tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TablesReport {
    pub space_groups: usize,
    pub by_crystal_lattice_system: Vec<CategoryCount>,
    pub by_point_symmetry: Vec<CategoryCount>,
    pub non_centrosymmetric_space_groups: usize,
    pub non_centrosymmetric_crystal_lattice_systems: Vec<String>,
    /// Smallest positive per-element atom count admissible in space group 230.
    pub min_count_space_group_230: u32,
    pub max_min_multiplicity: u32,
    pub default_whitelist: Vec<u16>,
}

pub fn tables_report() -> TablesReport {
    let t = tables();
    let ncs = PointSymmetry::NonCentrosymmetric;
    let sg230 = t.space_group(230).expect("230 exists");
    TablesReport {
        space_groups: t.space_groups().len(),
        by_crystal_lattice_system: CrystalLatticeSystem::ALL
            .iter()
            .map(|&c| CategoryCount {
                name: c.to_string(),
                space_groups: t.space_groups_matching(Some(c), None).len(),
            })
            .collect(),
        by_point_symmetry: PointSymmetry::ALL
            .iter()
            .map(|&p| CategoryCount {
                name: p.to_string(),
                space_groups: t.space_groups_matching(None, Some(p)).len(),
            })
            .collect(),
        non_centrosymmetric_space_groups: t.space_groups_matching(None, Some(ncs)).len(),
        non_centrosymmetric_crystal_lattice_systems: t
            .compatible_categories(Some(ncs), None)
            .0
            .iter()
            .map(|c| c.to_string())
            .collect(),
        min_count_space_group_230: (1..)
            .find(|&n| sg230.count_compatible(n))
            .expect("some count fits"),
        max_min_multiplicity: t
            .space_groups()
            .iter()
            .map(|r| r.min_multiplicity())
            .max()
            .expect("non-empty"),
        default_whitelist: t.default_whitelist().to_vec(),
    }
}

pub fn tables_command(run: &Run) -> Result<TablesReport> {
    let report = tables_report();
    write_json(&run.create_out()?.join(TABLES_FILE), &report)?;
    Ok(report)
}

/// Process exit status for an error: 2 config, 3 numerical, 4 resource refusal, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Json(_)
        | Error::Parse { .. }
        | Error::Format(_)
        | Error::UnknownElement(_)
        | Error::UnknownSpaceGroup(_)
        | Error::Csv(_)
        | Error::Empty(_) => 2,
        Error::Numerical(_) | Error::Reward(_) => 3,
        Error::TooLarge(_) => 4,
        _ => 1,
    }
}
