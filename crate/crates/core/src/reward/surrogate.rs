use std::f64::consts::PI;

use super::EnergyModel;
use crate::env::LatticeRanges;
use crate::error::Result;
use crate::record::CrystalRecord;
use crate::symtab::tables;

/// Closed-form stand-in for a learned energy model.
///
/// With atomic fractions `f_i`, Pauling electronegativities `χ_i`, atomic
/// numbers `Z_i` and lattice parameters `x_k` mapped to the unit cube with
/// the default ranges:
///
/// ```text
/// E = −6 Σ_{i<j} f_i f_j |χ_i − χ_j|          ionic mixing
///     + 0.8 Σ_i f_i²                           penalty on near-elemental phases
///     + 0.3 cos(2π Σ_i f_i Z_i / 8)            oscillation in mean atomic number
///     + 0.25 (h(sg) − 0.5)                     fixed per-space-group offset
///     + 0.8 mean_k (x_k − m_k)²                preference for compact cells
/// ```
///
/// where `h(sg) = ((sg · 2654435761) mod 1000) / 1000` and
/// `m = (0.05, 0.05, 0.05, 0.4, 0.4, 0.4)` (about 5.9 Å and 90°).
/// Values fall roughly in [−5, 2] eV/atom.
#[derive(Debug, Clone, Copy, Default)]
pub struct Surrogate;

const LATTICE_CENTRE: [f64; 6] = [0.05, 0.05, 0.05, 0.4, 0.4, 0.4];

impl EnergyModel for Surrogate {
    fn energy(&self, x: &CrystalRecord) -> Result<f64> {
        let t = tables();
        let n = x.n_atoms() as f64;
        let mut parts = Vec::with_capacity(x.composition.len());
        for (sym, &k) in &x.composition {
            let e = t.element(sym)?;
            parts.push((k as f64 / n, e.properties[2], e.atomic_number as f64));
        }
        let mut mixing = 0.0;
        for i in 0..parts.len() {
            for j in i + 1..parts.len() {
                mixing += parts[i].0 * parts[j].0 * (parts[i].1 - parts[j].1).abs();
            }
        }
        let purity: f64 = parts.iter().map(|p| p.0 * p.0).sum();
        let mean_z: f64 = parts.iter().map(|p| p.0 * p.2).sum();
        let h = ((x.space_group as u64 * 2_654_435_761) % 1000) as f64 / 1000.0;
        let ranges = LatticeRanges::default();
        let lat = x.lattice.to_array();
        let spread: f64 = (0..6)
            .map(|k| {
                let d = ranges.to_cube(k, lat[k]) - LATTICE_CENTRE[k];
                d * d
            })
            .sum::<f64>()
            / 6.0;
        Ok(-6.0 * mixing
            + 0.8 * purity
            + 0.3 * (2.0 * PI * mean_z / 8.0).cos()
            + 0.25 * (h - 0.5)
            + 0.8 * spread)
    }
}
