//! Statistics over sets of generated crystals.
//!
//! All reports depend only on the multiset of samples: values are sorted
//! before any floating-point reduction so that reordering the input cannot
//! change a single bit of the output.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::record::CrystalRecord;
use crate::symtab::{tables, PARAMETER_NAMES};

/// A generated crystal with its predicted energy.
pub type Sample = (CrystalRecord, f64);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// `counts[i]` covers `[edges[i], edges[i + 1])`; the last bin is closed.
    pub counts: Vec<u64>,
    pub below: u64,
    pub above: u64,
}

impl Histogram {
    pub fn new(edges: &[f64], values: &[f64]) -> Result<Self> {
        if edges.len() < 2
            || edges
                .windows(2)
                .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
        {
            return Err(Error::Config(
                "histogram edges must be strictly increasing, at least two".into(),
            ));
        }
        let last = edges[edges.len() - 1];
        let mut h = Histogram {
            edges: edges.to_vec(),
            counts: vec![0; edges.len() - 1],
            below: 0,
            above: 0,
        };
        for &v in values {
            if v < edges[0] {
                h.below += 1;
            } else if v > last {
                h.above += 1;
            } else if v == last {
                *h.counts.last_mut().expect("at least one bin") += 1;
            } else {
                // first edge strictly greater than v closes its bin
                let i = edges.partition_point(|&e| e <= v);
                h.counts[i - 1] += 1;
            }
        }
        Ok(h)
    }

    /// `bins` equal-width bins over `[lo, hi]`.
    pub fn uniform_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
        (0..=bins)
            .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Threshold {
    pub threshold: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    /// Fraction of samples with energy strictly below each threshold.
    pub fraction_below: Vec<Threshold>,
    pub histogram: Histogram,
}

fn sorted(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v
}

fn median_of_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean_of_sorted(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn fraction_below(energies: &[f64], threshold: f64) -> f64 {
    energies.iter().filter(|&&e| e < threshold).count() as f64 / energies.len() as f64
}

pub fn energy_report(
    samples: &[Sample],
    thresholds: &[f64],
    edges: &[f64],
) -> Result<EnergyReport> {
    if samples.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    let e = sorted(samples.iter().map(|s| s.1));
    if let Some(v) = e.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite energy {v}")));
    }
    Ok(EnergyReport {
        count: e.len(),
        mean: mean_of_sorted(&e),
        median: median_of_sorted(&e),
        min: e[0],
        max: e[e.len() - 1],
        fraction_below: thresholds
            .iter()
            .map(|&t| Threshold {
                threshold: t,
                fraction: fraction_below(&e, t),
            })
            .collect(),
        histogram: Histogram::new(edges, &e)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

impl Summary {
    fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v = sorted(values);
        let mean = mean_of_sorted(&v);
        let var = sorted(v.iter().map(|x| (x - mean) * (x - mean)))
            .iter()
            .sum::<f64>()
            / v.len() as f64;
        Summary {
            min: v[0],
            max: v[v.len() - 1],
            mean,
            median: median_of_sorted(&v),
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coverage {
    pub observed: usize,
    pub configured: usize,
    pub fraction: f64,
}

impl Coverage {
    pub fn new(observed: usize, configured: usize) -> Self {
        let fraction = if configured == 0 {
            0.0
        } else {
            observed as f64 / configured as f64
        };
        Coverage {
            observed,
            configured,
            fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiversityReport {
    /// Atoms of each element summed over crystals.
    pub stoichiometric_prevalence: BTreeMap<String, u64>,
    /// Crystals containing each element.
    pub binary_prevalence: BTreeMap<String, u64>,
    /// Row/column labels of `cooccurrence`.
    pub elements: Vec<String>,
    /// Crystals containing both elements; the diagonal is the binary prevalence.
    pub cooccurrence: Vec<Vec<u64>>,
    pub space_group_histogram: BTreeMap<u16, u64>,
    pub space_group_coverage: Coverage,
    pub crystal_lattice_system_coverage: Coverage,
    pub point_symmetry_coverage: Coverage,
    /// Keyed by `a`, `b`, `c`, `alpha`, `beta`, `gamma`.
    pub lattice: BTreeMap<String, Summary>,
}

/// Diversity of `samples` relative to the configured vocabulary and space groups.
pub fn diversity_report(
    samples: &[Sample],
    elements: &[String],
    space_groups: &[u16],
) -> Result<DiversityReport> {
    if samples.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    let mut labels: BTreeSet<String> = elements.iter().cloned().collect();
    for (x, _) in samples {
        labels.extend(x.composition.keys().cloned());
    }
    let labels: Vec<String> = labels.into_iter().collect();
    let index: BTreeMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();

    let mut stoich: BTreeMap<String, u64> = labels.iter().map(|s| (s.clone(), 0)).collect();
    let mut binary = stoich.clone();
    let mut co = vec![vec![0u64; labels.len()]; labels.len()];
    let mut sg_hist = BTreeMap::new();
    for (x, _) in samples {
        let present: Vec<usize> = x
            .composition
            .iter()
            .filter(|(_, &k)| k > 0)
            .map(|(s, _)| index[s.as_str()])
            .collect();
        for (s, &k) in &x.composition {
            if k > 0 {
                *stoich.get_mut(s).expect("labelled") += k as u64;
                *binary.get_mut(s).expect("labelled") += 1;
            }
        }
        for &i in &present {
            for &j in &present {
                co[i][j] += 1;
            }
        }
        *sg_hist.entry(x.space_group).or_insert(0) += 1;
    }

    let configured: BTreeSet<u16> = space_groups.iter().copied().collect();
    let t = tables();
    let mut cls_conf = BTreeSet::new();
    let mut ps_conf = BTreeSet::new();
    for &n in &configured {
        let r = t.space_group(n as u32)?;
        cls_conf.insert(r.crystal_lattice_system);
        ps_conf.insert(r.point_symmetry);
    }
    let seen_sg = sg_hist.keys().filter(|n| configured.contains(n)).count();
    let seen_cls = samples
        .iter()
        .map(|s| s.0.crystal_lattice_system)
        .filter(|c| cls_conf.contains(c))
        .collect::<BTreeSet<_>>();
    let seen_ps = samples
        .iter()
        .map(|s| s.0.point_symmetry)
        .filter(|p| ps_conf.contains(p))
        .collect::<BTreeSet<_>>();

    let lattice = PARAMETER_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            (
                name.to_string(),
                Summary::of(samples.iter().map(|s| s.0.lattice.to_array()[k])),
            )
        })
        .collect();

    Ok(DiversityReport {
        stoichiometric_prevalence: stoich,
        binary_prevalence: binary,
        elements: labels,
        cooccurrence: co,
        space_group_histogram: sg_hist,
        space_group_coverage: Coverage::new(seen_sg, configured.len()),
        crystal_lattice_system_coverage: Coverage::new(seen_cls.len(), cls_conf.len()),
        point_symmetry_coverage: Coverage::new(seen_ps.len(), ps_conf.len()),
        lattice,
    })
}

/// The `k` lowest-energy samples; ties go to the canonically smaller record.
pub fn topk(samples: &[Sample], k: usize) -> Result<Vec<Sample>> {
    if k > samples.len() {
        return Err(Error::Config(format!(
            "top-{k} requested from {} samples",
            samples.len()
        )));
    }
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.canonical_cmp(&b.0)));
    v.truncate(k);
    Ok(v)
}
