//! Unit-cube ↔ physical lattice parameter maps.

use serde::{Deserialize, Serialize};

use super::state::LatticeState;
use crate::error::{Error, Result};
use crate::symtab::{is_angle, LatticeConstraint};

/// Affine ranges for lengths (Å) and angles (degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeRanges {
    pub length: [f64; 2],
    pub angle: [f64; 2],
}

impl Default for LatticeRanges {
    fn default() -> Self {
        Self {
            length: [0.9, 100.0],
            angle: [50.0, 150.0],
        }
    }
}

impl LatticeRanges {
    fn range(&self, param: usize) -> [f64; 2] {
        if is_angle(param) {
            self.angle
        } else {
            self.length
        }
    }

    pub fn to_physical(&self, param: usize, x: f64) -> f64 {
        let [lo, hi] = self.range(param);
        lo + x * (hi - lo)
    }

    pub fn to_cube(&self, param: usize, value: f64) -> f64 {
        let [lo, hi] = self.range(param);
        (value - lo) / (hi - lo)
    }
}

/// Copy each free group's representative across its members and pin fixed angles.
pub fn project(
    coords: &[f64; 6],
    constraint: &LatticeConstraint,
    ranges: &LatticeRanges,
) -> [f64; 6] {
    let mut out = [0.0; 6];
    for g in &constraint.groups {
        let v = match g.fixed {
            Some(deg) => ranges.to_cube(g.members[0], deg),
            None => coords[g.representative()],
        };
        for &m in &g.members {
            out[m] = v;
        }
    }
    out
}

/// Physical `(a, b, c, alpha, beta, gamma)`; pinned angles are emitted verbatim.
pub fn cube_to_physical(
    lattice: &LatticeState,
    constraint: &LatticeConstraint,
    ranges: &LatticeRanges,
) -> Result<[f64; 6]> {
    let coords = lattice.coords.as_ref().ok_or(Error::UnsetLattice)?;
    let mut out = [0.0; 6];
    for g in &constraint.groups {
        let v = match g.fixed {
            Some(deg) => deg,
            None => ranges.to_physical(g.representative(), coords[g.representative()]),
        };
        for &m in &g.members {
            out[m] = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symtab::tables;

    #[test]
    fn endpoints_and_midpoint() {
        let r = LatticeRanges::default();
        assert_eq!(r.to_physical(0, 0.0), 0.9);
        assert_eq!(r.to_physical(0, 1.0), 100.0);
        assert_eq!(r.to_physical(3, 0.5), 100.0);
    }

    #[test]
    fn cubic_angles_are_exact() {
        let c = tables().lattice_constraint(225).unwrap();
        let lat = LatticeState {
            coords: Some([0.3, 0.7, 0.1, 0.123, 0.9, 0.2]),
            done: false,
        };
        let p = cube_to_physical(&lat, c, &LatticeRanges::default()).unwrap();
        assert_eq!(&p[3..], &[90.0, 90.0, 90.0]);
        assert_eq!(p[0], p[1]);
        assert_eq!(p[1], p[2]);
    }

    #[test]
    fn source_has_no_parameters() {
        let c = tables().lattice_constraint(1).unwrap();
        assert!(matches!(
            cube_to_physical(&LatticeState::source(), c, &LatticeRanges::default()),
            Err(Error::UnsetLattice)
        ));
    }
}
