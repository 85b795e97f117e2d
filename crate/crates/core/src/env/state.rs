use std::fmt;
use std::hash::{Hash, Hasher};

use crate::symtab::{CrystalLatticeSystem, PointSymmetry};

/// Which sub-environment a state belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    SpaceGroup,
    Composition,
    Lattice,
    Done,
}

impl Stage {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct SpaceGroupState {
    pub cls: Option<CrystalLatticeSystem>,
    pub ps: Option<PointSymmetry>,
    pub sg: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CompositionState {
    /// Atom count per vocabulary element.
    pub counts: Vec<u32>,
}

impl CompositionState {
    pub fn empty(n_elements: usize) -> Self {
        Self {
            counts: vec![0; n_elements],
        }
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn n_present(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }
}

/// Lattice parameters in unit-cube coordinates. `coords == None` is the source.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeState {
    pub coords: Option<[f64; 6]>,
    pub done: bool,
}

impl LatticeState {
    pub fn source() -> Self {
        Self {
            coords: None,
            done: false,
        }
    }

    pub fn is_source(&self) -> bool {
        self.coords.is_none()
    }
}

impl Eq for LatticeState {}

impl Hash for LatticeState {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.done.hash(state);
        match &self.coords {
            None => 0u8.hash(state),
            Some(c) => {
                1u8.hash(state);
                for v in c {
                    v.to_bits().hash(state);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CrystalState {
    pub stage: Stage,
    pub space_group: SpaceGroupState,
    pub composition: CompositionState,
    pub lattice: LatticeState,
}

impl CrystalState {
    pub fn is_done(&self) -> bool {
        self.stage == Stage::Done
    }
}

/// A forward transition.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    SetCls(CrystalLatticeSystem),
    SetPs(PointSymmetry),
    SetSg(u16),
    SgStop,
    AddAtoms {
        element: usize,
        count: u32,
    },
    CompStop,
    /// Absolute cube coordinates for the first lattice placement.
    LpFromSource([f64; 6]),
    /// Cube-coordinate increments applied to every free parameter.
    LpIncrement([f64; 6]),
    LpStop,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::SetCls(c) => write!(f, "SetCls({c})"),
            Action::SetPs(p) => write!(f, "SetPs({p})"),
            Action::SetSg(n) => write!(f, "SetSg({n})"),
            Action::SgStop => f.write_str("SgStop"),
            Action::AddAtoms { element, count } => write!(f, "AddAtoms({element}, {count})"),
            Action::CompStop => f.write_str("CompStop"),
            Action::LpFromSource(x) => write!(f, "LpFromSource({x:?})"),
            Action::LpIncrement(u) => write!(f, "LpIncrement({u:?})"),
            Action::LpStop => f.write_str("LpStop"),
        }
    }
}

/// A backward transition, identifying one parent of a state.
#[derive(Debug, Clone, PartialEq)]
pub enum BackwardAction {
    UnsetCls,
    UnsetPs,
    /// Undo `SetSg`; the flags say which categories the parent already had.
    UnsetSg {
        keep_cls: bool,
        keep_ps: bool,
    },
    RemoveElement(usize),
    /// The state has a single parent (reached by a stop action).
    Forced,
    LpToSource,
    LpDecrement([f64; 6]),
}

/// Valid forward actions of a state.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionMask {
    /// Indexed by [`ActionSpace`](super::ActionSpace) discrete slots.
    pub discrete: Vec<bool>,
    pub lp_from_source: bool,
    pub lp_increment: bool,
    pub lp_stop: bool,
}

impl ActionMask {
    pub fn n_valid_discrete(&self) -> usize {
        self.discrete.iter().filter(|&&v| v).count()
    }

    pub fn has_lattice_actions(&self) -> bool {
        self.lp_from_source || self.lp_increment || self.lp_stop
    }

    pub fn is_empty(&self) -> bool {
        self.n_valid_discrete() == 0 && !self.has_lattice_actions()
    }
}

/// Valid backward actions of a state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BackwardMask {
    pub unset_cls: bool,
    pub unset_ps: bool,
    pub unset_sg: bool,
    pub remove: Vec<bool>,
    pub forced: bool,
    pub lp_to_source: bool,
    pub lp_decrement: bool,
}
