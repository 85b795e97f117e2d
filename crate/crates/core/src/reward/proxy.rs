//! Inference-only formation-energy network over (composition, space group, lattice).
//!
//! ```text
//! e_Z   = [W_P p_Z, E_Z[Z], E_P[period], E_G[group]]        per element
//! h_C   = relu(W_C Σ_Z f_Z e_Z + b_C)                       f_Z = atomic fraction
//! h_SG  = E_SG[sg]
//! h_LP  = relu-trunk((LP − μ) / σ)
//! E     = MLP_out([h_C, h_SG, h_LP])
//! ```
//!
//! Elements are summed in increasing atomic number, so the result does not
//! depend on how the composition was assembled.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::EnergyModel;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::record::CrystalRecord;
use crate::symtab::tables;
use crate::tensors::TensorFile;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyHyperparameters {
    pub n_properties: usize,
    pub properties_proj_size: usize,
    pub z_vocab: usize,
    pub z_emb_size: usize,
    pub period_vocab: usize,
    pub period_emb_size: usize,
    pub group_vocab: usize,
    pub group_emb_size: usize,
    pub comp_hidden_channels: usize,
    pub n_space_groups: usize,
    pub sg_emb_size: usize,
    pub lat_hidden_channels: usize,
    pub lat_num_layers: usize,
    pub num_layers: usize,
    pub hidden_channels: usize,
}

impl Default for ProxyHyperparameters {
    fn default() -> Self {
        Self {
            n_properties: 8,
            properties_proj_size: 64,
            z_vocab: 119,
            z_emb_size: 128,
            period_vocab: 8,
            period_emb_size: 256,
            group_vocab: 19,
            group_emb_size: 16,
            comp_hidden_channels: 256,
            n_space_groups: 230,
            sg_emb_size: 128,
            lat_hidden_channels: 284,
            lat_num_layers: 1,
            num_layers: 5,
            hidden_channels: 576,
        }
    }
}

impl ProxyHyperparameters {
    pub fn element_feature_size(&self) -> usize {
        self.properties_proj_size + self.z_emb_size + self.period_emb_size + self.group_emb_size
    }

    fn lat_sizes(&self) -> Vec<usize> {
        let mut v = vec![6];
        v.extend(std::iter::repeat_n(
            self.lat_hidden_channels,
            self.lat_num_layers,
        ));
        v
    }

    fn out_sizes(&self) -> Vec<usize> {
        let mut v = vec![self.comp_hidden_channels + self.sg_emb_size + self.lat_hidden_channels];
        v.extend(std::iter::repeat_n(
            self.hidden_channels,
            self.num_layers - 1,
        ));
        v.push(1);
        v
    }

    /// Number of learned scalars implied by the shapes (statistics excluded).
    pub fn parameter_count(&self) -> usize {
        let dense = |sizes: &[usize]| sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>();
        self.n_properties * self.properties_proj_size
            + self.z_vocab * self.z_emb_size
            + self.period_vocab * self.period_emb_size
            + self.group_vocab * self.group_emb_size
            + dense(&[self.element_feature_size(), self.comp_hidden_channels])
            + self.n_space_groups * self.sg_emb_size
            + dense(&self.lat_sizes())
            + dense(&self.out_sizes())
    }

    fn validate(&self) -> Result<()> {
        let sizes = [
            self.n_properties,
            self.properties_proj_size,
            self.z_vocab,
            self.z_emb_size,
            self.period_vocab,
            self.period_emb_size,
            self.group_vocab,
            self.group_emb_size,
            self.comp_hidden_channels,
            self.n_space_groups,
            self.sg_emb_size,
            self.lat_hidden_channels,
            self.lat_num_layers,
            self.num_layers,
            self.hidden_channels,
        ];
        if sizes.contains(&0) {
            return Err(Error::Format(
                "proxy hyperparameters must be positive".into(),
            ));
        }
        Ok(())
    }
}

const STATS: [&str; 2] = ["lattice_mean", "lattice_std"];

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyModel {
    pub hyper: ProxyHyperparameters,
    /// `n_properties × properties_proj_size`, row per property.
    properties_proj: Vec<f64>,
    z_emb: Vec<f64>,
    period_emb: Vec<f64>,
    group_emb: Vec<f64>,
    comp: Mlp,
    sg_emb: Vec<f64>,
    lat: Mlp,
    pub out: Mlp,
    pub lattice_mean: [f64; 6],
    pub lattice_std: [f64; 6],
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        *x = x.max(0.0);
    }
}

impl ProxyModel {
    /// Randomly initialised network; embeddings are standard normal and dense
    /// layers Glorot-uniform.
    pub fn random<R: Rng + ?Sized>(
        hyper: ProxyHyperparameters,
        lattice_mean: [f64; 6],
        lattice_std: [f64; 6],
        rng: &mut R,
    ) -> Result<Self> {
        hyper.validate()?;
        check_std(&lattice_std)?;
        let mut normal =
            |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(rng)).collect() };
        let properties_proj = normal(hyper.n_properties * hyper.properties_proj_size);
        let z_emb = normal(hyper.z_vocab * hyper.z_emb_size);
        let period_emb = normal(hyper.period_vocab * hyper.period_emb_size);
        let group_emb = normal(hyper.group_vocab * hyper.group_emb_size);
        let sg_emb = normal(hyper.n_space_groups * hyper.sg_emb_size);
        let glorot = |sizes: &[usize], act, rng: &mut R| {
            let mut m = Mlp::zeros(sizes, act);
            for l in 0..m.n_layers() {
                let limit = (6.0 / (sizes[l] + sizes[l + 1]) as f64).sqrt();
                for w in m.weight_mut(l) {
                    *w = rng.gen_range(-limit..limit);
                }
            }
            m
        };
        let comp = glorot(
            &[hyper.element_feature_size(), hyper.comp_hidden_channels],
            Activation::Relu,
            rng,
        );
        let lat = glorot(&hyper.lat_sizes(), Activation::Relu, rng);
        let out = glorot(&hyper.out_sizes(), Activation::Relu, rng);
        Ok(Self {
            hyper,
            properties_proj,
            z_emb,
            period_emb,
            group_emb,
            comp,
            sg_emb,
            lat,
            out,
            lattice_mean,
            lattice_std,
        })
    }

    /// Lattice parameters after standardisation.
    pub fn standardize(&self, lattice: &[f64; 6]) -> [f64; 6] {
        let mut z = [0.0; 6];
        for k in 0..6 {
            z[k] = (lattice[k] - self.lattice_mean[k]) / self.lattice_std[k];
        }
        z
    }

    fn row<'a>(
        table: &'a [f64],
        width: usize,
        index: usize,
        vocab: usize,
        what: &str,
    ) -> Result<&'a [f64]> {
        if index >= vocab {
            return Err(Error::Format(format!(
                "{what} index {index} outside an embedding of {vocab} rows"
            )));
        }
        Ok(&table[index * width..(index + 1) * width])
    }

    fn element_features(&self, symbol: &str) -> Result<Vec<f64>> {
        let h = &self.hyper;
        let e = tables().element(symbol)?;
        let mut f = vec![0.0; h.properties_proj_size];
        for (p, &v) in e.properties.iter().enumerate().take(h.n_properties) {
            let w =
                &self.properties_proj[p * h.properties_proj_size..(p + 1) * h.properties_proj_size];
            for (fi, wi) in f.iter_mut().zip(w) {
                *fi += v * wi;
            }
        }
        f.extend_from_slice(Self::row(
            &self.z_emb,
            h.z_emb_size,
            e.atomic_number as usize,
            h.z_vocab,
            "atomic number",
        )?);
        f.extend_from_slice(Self::row(
            &self.period_emb,
            h.period_emb_size,
            e.period as usize,
            h.period_vocab,
            "period",
        )?);
        f.extend_from_slice(Self::row(
            &self.group_emb,
            h.group_emb_size,
            e.group as usize,
            h.group_vocab,
            "group",
        )?);
        Ok(f)
    }

    /// Composition representation before the final trunk. `composition`
    /// may list elements in any order.
    pub fn composition_embedding(&self, composition: &[(&str, u32)]) -> Result<Vec<f64>> {
        let t = tables();
        let mut elements: Vec<(u32, &str, u32)> = Vec::with_capacity(composition.len());
        for &(sym, k) in composition {
            elements.push((t.element(sym)?.atomic_number, sym, k));
        }
        elements.sort_unstable();
        let n: u32 = composition.iter().map(|c| c.1).sum();
        if n == 0 {
            return Err(Error::Empty("composition"));
        }
        let mut pooled = vec![0.0; self.hyper.element_feature_size()];
        for (_, sym, k) in elements {
            let w = k as f64 / n as f64;
            for (p, f) in pooled.iter_mut().zip(self.element_features(sym)?) {
                *p += w * f;
            }
        }
        let mut h = self.comp.forward(&pooled);
        relu_in_place(&mut h);
        Ok(h)
    }

    /// Energy from loose parts; see [`EnergyModel::energy`] for records.
    pub fn energy_of(
        &self,
        composition: &[(&str, u32)],
        space_group: u16,
        lattice: &[f64; 6],
    ) -> Result<f64> {
        let h = &self.hyper;
        let sg = space_group as usize;
        if sg == 0 || sg > h.n_space_groups {
            return Err(Error::UnknownSpaceGroup(space_group as u32));
        }
        let mut input = self.composition_embedding(composition)?;
        input.extend_from_slice(&self.sg_emb[(sg - 1) * h.sg_emb_size..sg * h.sg_emb_size]);
        let mut hl = self.lat.forward(&self.standardize(lattice));
        relu_in_place(&mut hl);
        input.extend(hl);
        Ok(self.out.forward(&input)[0])
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensors(&TensorFile::load(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_tensors()?.save(path)
    }

    pub fn to_tensors(&self) -> Result<TensorFile> {
        let h = &self.hyper;
        let mut f = TensorFile::default();
        f.metadata.insert("proxy".into(), serde_json::to_string(h)?);
        f.insert(
            "properties_proj",
            vec![h.n_properties, h.properties_proj_size],
            self.properties_proj.clone(),
        )?;
        f.insert("z_emb", vec![h.z_vocab, h.z_emb_size], self.z_emb.clone())?;
        f.insert(
            "period_emb",
            vec![h.period_vocab, h.period_emb_size],
            self.period_emb.clone(),
        )?;
        f.insert(
            "group_emb",
            vec![h.group_vocab, h.group_emb_size],
            self.group_emb.clone(),
        )?;
        f.insert(
            "sg_emb",
            vec![h.n_space_groups, h.sg_emb_size],
            self.sg_emb.clone(),
        )?;
        self.comp.write_tensors("comp", &mut f)?;
        self.lat.write_tensors("lat", &mut f)?;
        self.out.write_tensors("out", &mut f)?;
        f.insert(STATS[0], vec![6], self.lattice_mean.to_vec())?;
        f.insert(STATS[1], vec![6], self.lattice_std.to_vec())?;
        Ok(f)
    }

    /// Load and validate against the hyperparameters stored in the header.
    pub fn from_tensors(f: &TensorFile) -> Result<Self> {
        let hyper: ProxyHyperparameters = match f.metadata.get("proxy") {
            Some(s) => {
                serde_json::from_str(s).map_err(|e| Error::Format(format!("proxy header: {e}")))?
            }
            None => {
                return Err(Error::Format(
                    "weight file lacks proxy hyperparameters".into(),
                ))
            }
        };
        hyper.validate()?;
        let stored: usize = f
            .tensors
            .iter()
            .filter(|(k, _)| !STATS.contains(&k.as_str()))
            .map(|(_, t)| t.data.len())
            .sum();
        if stored != hyper.parameter_count() {
            return Err(Error::Format(format!(
                "weight file holds {stored} parameters, hyperparameters imply {}",
                hyper.parameter_count()
            )));
        }
        let h = &hyper;
        let get = |name: &str, shape: &[usize]| f.get(name, shape).map(|v| v.to_vec());
        let mean = get(STATS[0], &[6])?;
        let std = get(STATS[1], &[6])?;
        let lattice_std: [f64; 6] = std.try_into().expect("length checked");
        check_std(&lattice_std)?;
        Ok(Self {
            properties_proj: get("properties_proj", &[h.n_properties, h.properties_proj_size])?,
            z_emb: get("z_emb", &[h.z_vocab, h.z_emb_size])?,
            period_emb: get("period_emb", &[h.period_vocab, h.period_emb_size])?,
            group_emb: get("group_emb", &[h.group_vocab, h.group_emb_size])?,
            sg_emb: get("sg_emb", &[h.n_space_groups, h.sg_emb_size])?,
            comp: Mlp::read_tensors(
                &[h.element_feature_size(), h.comp_hidden_channels],
                Activation::Relu,
                "comp",
                f,
            )?,
            lat: Mlp::read_tensors(&h.lat_sizes(), Activation::Relu, "lat", f)?,
            out: Mlp::read_tensors(&h.out_sizes(), Activation::Relu, "out", f)?,
            lattice_mean: mean.try_into().expect("length checked"),
            lattice_std,
            hyper,
        })
    }

    /// Learned scalars held by this model.
    pub fn parameter_count(&self) -> usize {
        self.properties_proj.len()
            + self.z_emb.len()
            + self.period_emb.len()
            + self.group_emb.len()
            + self.sg_emb.len()
            + self.comp.n_params()
            + self.lat.n_params()
            + self.out.n_params()
    }
}

fn check_std(std: &[f64; 6]) -> Result<()> {
    if std.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::Format(
            "lattice standard deviations must be positive".into(),
        ))
    }
}

impl EnergyModel for ProxyModel {
    fn energy(&self, x: &CrystalRecord) -> Result<f64> {
        let comp: Vec<(&str, u32)> = x
            .composition
            .iter()
            .map(|(s, &k)| (s.as_str(), k))
            .collect();
        self.energy_of(&comp, x.space_group, &x.lattice.to_array())
    }
}
