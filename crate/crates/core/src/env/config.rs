use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::symtab::tables;

/// Environment configuration.
///
/// Setting one of the `fixed_*` fields removes the corresponding stage from
/// the trajectories; small verification configurations rely on this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Element vocabulary, by symbol.
    pub elements: Vec<String>,
    /// Space groups the sampler may choose from.
    pub space_groups: Vec<u16>,
    pub fixed_space_group: Option<u16>,
    pub fixed_composition: Option<BTreeMap<String, u32>>,
    /// Physical `[a, b, c, alpha, beta, gamma]`.
    pub fixed_lattice: Option<[f64; 6]>,
    pub max_atoms_per_element: u32,
    pub max_atoms: u32,
    pub max_elements: u32,
    pub enforce_neutrality: bool,
    pub enforce_wyckoff: bool,
    /// Ångström.
    pub length_range: [f64; 2],
    /// Degrees.
    pub angle_range: [f64; 2],
    /// Minimum increment as a fraction of each dimension's range.
    pub min_increment: f64,
}

pub const DEFAULT_ELEMENTS: [&str; 12] = [
    "H", "Li", "C", "N", "O", "F", "Mg", "Si", "P", "S", "Cl", "Fe",
];

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            elements: DEFAULT_ELEMENTS.iter().map(|s| s.to_string()).collect(),
            space_groups: tables().default_whitelist().to_vec(),
            fixed_space_group: None,
            fixed_composition: None,
            fixed_lattice: None,
            max_atoms_per_element: 16,
            max_atoms: 50,
            max_elements: 5,
            enforce_neutrality: true,
            enforce_wyckoff: true,
            length_range: [0.9, 100.0],
            angle_range: [50.0, 150.0],
            min_increment: 0.1,
        }
    }
}
