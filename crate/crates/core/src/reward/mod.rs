//! Energy models and the Boltzmann reward `R = exp(−E / T)`.

mod proxy;
mod surrogate;

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use proxy::{ProxyHyperparameters, ProxyModel};
pub use surrogate::Surrogate;

use crate::error::{Error, Result};
use crate::record::{read_samples_csv, CrystalRecord};

/// Predicts a formation energy in eV/atom for a terminal crystal.
pub trait EnergyModel: Send + Sync {
    fn energy(&self, x: &CrystalRecord) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Backend {
    Surrogate,
    Proxy { weights: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub backend: Backend,
    pub temperature: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Surrogate,
            temperature: 8.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Instantiate the backend; relative weight paths resolve against `base`.
    pub fn load_model(&self, base: &Path) -> Result<Box<dyn EnergyModel>> {
        Ok(match &self.backend {
            Backend::Surrogate => Box::new(Surrogate),
            Backend::Proxy { weights } => Box::new(ProxyModel::load(&base.join(weights))?),
        })
    }
}

pub fn log_reward(energy: f64, temperature: f64) -> Result<f64> {
    if !energy.is_finite() {
        return Err(Error::Reward(format!("non-finite energy {energy}")));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::Reward(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    Ok(-energy / temperature)
}

/// `exp(−energy / temperature)`.
pub fn reward(energy: f64, temperature: f64) -> Result<f64> {
    let r = log_reward(energy, temperature)?.exp();
    if r > 0.0 && r.is_finite() {
        Ok(r)
    } else {
        Err(Error::Reward(format!(
            "reward of energy {energy} at T={temperature} is not representable"
        )))
    }
}

/// Mean absolute error of `model` on a labelled CSV.
pub fn proxy_mae<R: Read>(model: &dyn EnergyModel, labelled: R) -> Result<f64> {
    let rows = read_samples_csv(labelled)?;
    if rows.is_empty() {
        return Err(Error::Empty("labelled data"));
    }
    let mut total = 0.0;
    for (x, y) in &rows {
        total += (model.energy(x)? - y).abs();
    }
    Ok(total / rows.len() as f64)
}
