//! Static crystallographic and chemical tables.
//!
//! Everything here is loaded once from the JSON files under `data/` (embedded
//! at compile time) and is immutable afterwards. The tables back all four
//! families of hard constraints used by the environment: category
//! compatibility inside the space-group stage, Wyckoff-multiplicity
//! feasibility of per-element counts, charge neutrality, and the lattice
//! parameter ties imposed by each lattice system.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SPACE_GROUPS_JSON: &str = include_str!("../data/space_groups.json");
const ELEMENTS_JSON: &str = include_str!("../data/elements.json");
const LATTICE_SYSTEMS_JSON: &str = include_str!("../data/lattice_systems.json");
const WHITELIST_JSON: &str = include_str!("../data/space_group_whitelist.json");

/// Combined crystal system / lattice system category (8 values).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrystalLatticeSystem {
    Triclinic,
    Monoclinic,
    Orthorhombic,
    Tetragonal,
    TrigonalRhombohedral,
    TrigonalHexagonal,
    HexagonalHexagonal,
    Cubic,
}

impl CrystalLatticeSystem {
    pub const ALL: [CrystalLatticeSystem; 8] = [
        Self::Triclinic,
        Self::Monoclinic,
        Self::Orthorhombic,
        Self::Tetragonal,
        Self::TrigonalRhombohedral,
        Self::TrigonalHexagonal,
        Self::HexagonalHexagonal,
        Self::Cubic,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// The 8 → 7 collapse onto lattice systems.
    pub fn lattice_system(self) -> LatticeSystem {
        match self {
            Self::Triclinic => LatticeSystem::Triclinic,
            Self::Monoclinic => LatticeSystem::Monoclinic,
            Self::Orthorhombic => LatticeSystem::Orthorhombic,
            Self::Tetragonal => LatticeSystem::Tetragonal,
            Self::TrigonalRhombohedral => LatticeSystem::Rhombohedral,
            Self::TrigonalHexagonal | Self::HexagonalHexagonal => LatticeSystem::Hexagonal,
            Self::Cubic => LatticeSystem::Cubic,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Triclinic => "triclinic",
            Self::Monoclinic => "monoclinic",
            Self::Orthorhombic => "orthorhombic",
            Self::Tetragonal => "tetragonal",
            Self::TrigonalRhombohedral => "trigonal-rhombohedral",
            Self::TrigonalHexagonal => "trigonal-hexagonal",
            Self::HexagonalHexagonal => "hexagonal-hexagonal",
            Self::Cubic => "cubic",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for CrystalLatticeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Point-group character of a space group (5 values).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointSymmetry {
    Centrosymmetric,
    NonCentrosymmetric,
    Enantiomorphic,
    Polar,
    EnantiomorphicPolar,
}

impl PointSymmetry {
    pub const ALL: [PointSymmetry; 5] = [
        Self::Centrosymmetric,
        Self::NonCentrosymmetric,
        Self::Enantiomorphic,
        Self::Polar,
        Self::EnantiomorphicPolar,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Centrosymmetric => "centrosymmetric",
            Self::NonCentrosymmetric => "non-centrosymmetric",
            Self::Enantiomorphic => "enantiomorphic",
            Self::Polar => "polar",
            Self::EnantiomorphicPolar => "enantiomorphic-polar",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for PointSymmetry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The seven lattice systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatticeSystem {
    Triclinic,
    Monoclinic,
    Orthorhombic,
    Tetragonal,
    Rhombohedral,
    Hexagonal,
    Cubic,
}

impl LatticeSystem {
    pub const ALL: [LatticeSystem; 7] = [
        Self::Triclinic,
        Self::Monoclinic,
        Self::Orthorhombic,
        Self::Tetragonal,
        Self::Rhombohedral,
        Self::Hexagonal,
        Self::Cubic,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpaceGroupRecord {
    pub number: u16,
    /// Hermann–Mauguin short symbol.
    pub symbol: String,
    pub point_group: String,
    pub crystal_lattice_system: CrystalLatticeSystem,
    pub point_symmetry: PointSymmetry,
    pub wyckoff_multiplicities: Vec<u32>,
}

impl SpaceGroupRecord {
    pub fn lattice_system(&self) -> LatticeSystem {
        self.crystal_lattice_system.lattice_system()
    }

    pub fn min_multiplicity(&self) -> u32 {
        *self.wyckoff_multiplicities.iter().min().expect("non-empty")
    }

    /// Whether `n` atoms can be distributed over the Wyckoff multiplicities.
    ///
    /// Coin-problem reachability; positions may be reused, so this is a
    /// necessary condition for an actual site assignment.
    pub fn count_compatible(&self, n: u32) -> bool {
        let n = n as usize;
        let mut reach = vec![false; n + 1];
        reach[0] = true;
        for i in 1..=n {
            reach[i] = self
                .wyckoff_multiplicities
                .iter()
                .any(|&m| m as usize <= i && reach[i - m as usize]);
        }
        reach[n]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ElementInfo {
    pub symbol: String,
    pub atomic_number: u32,
    pub period: u32,
    pub group: u32,
    pub oxidation_states: Vec<i32>,
    /// Fixed-length physical property vector, see `property_names`.
    pub properties: Vec<f64>,
}

/// Lattice parameter indices in the `[a, b, c, alpha, beta, gamma]` order.
pub const PARAMETER_NAMES: [&str; 6] = ["a", "b", "c", "alpha", "beta", "gamma"];

pub fn is_angle(param: usize) -> bool {
    param >= 3
}

/// A set of lattice parameters forced to share one value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    /// Indices into `[a, b, c, alpha, beta, gamma]`.
    pub members: Vec<usize>,
    /// Pinned angle in degrees, if any.
    pub fixed: Option<f64>,
}

impl ParamGroup {
    pub fn representative(&self) -> usize {
        self.members[0]
    }
}

/// Ties and pinned values imposed by a lattice system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeConstraint {
    pub system: LatticeSystem,
    /// Partition of the six parameters.
    pub groups: Vec<ParamGroup>,
}

impl LatticeConstraint {
    pub fn tied_length_groups(&self) -> Vec<Vec<usize>> {
        self.groups
            .iter()
            .filter(|g| !is_angle(g.members[0]))
            .map(|g| g.members.clone())
            .collect()
    }

    pub fn fixed_angles(&self) -> Vec<(usize, f64)> {
        self.groups
            .iter()
            .filter_map(|g| g.fixed.map(|v| (g.members[0], v)))
            .collect()
    }

    pub fn free_angles(&self) -> Vec<usize> {
        self.groups
            .iter()
            .filter(|g| g.fixed.is_none() && is_angle(g.members[0]))
            .flat_map(|g| g.members.iter().copied())
            .collect()
    }

    /// Groups whose shared value is sampled.
    pub fn free_groups(&self) -> impl Iterator<Item = &ParamGroup> {
        self.groups.iter().filter(|g| g.fixed.is_none())
    }

    /// One parameter index per free group; these carry the sampled values.
    pub fn free_representatives(&self) -> Vec<usize> {
        self.free_groups().map(ParamGroup::representative).collect()
    }

    pub fn n_free(&self) -> usize {
        self.free_groups().count()
    }

    pub fn group_of(&self, param: usize) -> &ParamGroup {
        self.groups
            .iter()
            .find(|g| g.members.contains(&param))
            .expect("groups partition the parameters")
    }
}

/// Set of reachable total charges, stored as a bitset over `[lo, lo + len)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ChargeSet {
    lo: i32,
    len: usize,
    words: Vec<u64>,
}

impl ChargeSet {
    /// The charge of zero atoms.
    pub fn zero() -> Self {
        Self::from_values(&[0])
    }

    pub fn from_values(values: &[i32]) -> Self {
        assert!(!values.is_empty(), "charge set needs at least one value");
        let lo = *values.iter().min().unwrap();
        let hi = *values.iter().max().unwrap();
        let len = (hi - lo + 1) as usize;
        let mut words = vec![0u64; len.div_ceil(64)];
        for &v in values {
            let i = (v - lo) as usize;
            words[i / 64] |= 1 << (i % 64);
        }
        Self { lo, len, words }
    }

    /// Charges reachable by `n` atoms each independently taking one of `states`.
    pub fn of_atoms(states: &[i32], n: u32) -> Self {
        let single = Self::from_values(states);
        let mut acc = Self::zero();
        for _ in 0..n {
            acc = acc.add(&single);
        }
        acc
    }

    pub fn contains(&self, q: i32) -> bool {
        if q < self.lo || q >= self.lo + self.len as i32 {
            return false;
        }
        let i = (q - self.lo) as usize;
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn min(&self) -> i32 {
        self.iter().next().expect("non-empty")
    }

    pub fn max(&self) -> i32 {
        self.iter().last().expect("non-empty")
    }

    pub fn iter(&self) -> impl Iterator<Item = i32> + '_ {
        (0..self.len)
            .filter(|&i| self.words[i / 64] >> (i % 64) & 1 == 1)
            .map(move |i| self.lo + i as i32)
    }

    /// Minkowski sum.
    pub fn add(&self, other: &ChargeSet) -> ChargeSet {
        let len = self.len + other.len - 1;
        let mut words = vec![0u64; len.div_ceil(64)];
        for shift in (0..other.len).filter(|&i| other.words[i / 64] >> (i % 64) & 1 == 1) {
            or_shifted(&mut words, &self.words, shift);
        }
        ChargeSet {
            lo: self.lo + other.lo,
            len,
            words,
        }
    }
}

fn or_shifted(dst: &mut [u64], src: &[u64], shift: usize) {
    let (ws, bs) = (shift / 64, shift % 64);
    for (i, &w) in src.iter().enumerate() {
        if w == 0 {
            continue;
        }
        dst[i + ws] |= w << bs;
        if bs > 0 && i + ws + 1 < dst.len() {
            dst[i + ws + 1] |= w >> (64 - bs);
        }
    }
}

/// True iff some per-atom assignment of oxidation states sums to zero.
///
/// `counts` pairs each element's oxidation states with its atom count.
pub fn neutrality_feasible<'a>(counts: impl IntoIterator<Item = (&'a [i32], u32)>) -> bool {
    counts
        .into_iter()
        .filter(|(_, n)| *n > 0)
        .fold(ChargeSet::zero(), |acc, (states, n)| {
            acc.add(&ChargeSet::of_atoms(states, n))
        })
        .contains(0)
}

#[derive(Deserialize)]
struct SpaceGroupFile {
    space_groups: Vec<SpaceGroupRecord>,
}

#[derive(Deserialize)]
struct ElementFile {
    property_names: Vec<String>,
    elements: Vec<ElementInfo>,
}

#[derive(Deserialize)]
struct LatticeGroupEntry {
    members: Vec<String>,
    #[serde(default)]
    fixed: Option<f64>,
}

#[derive(Deserialize)]
struct LatticeSystemEntry {
    name: LatticeSystem,
    groups: Vec<LatticeGroupEntry>,
}

#[derive(Deserialize)]
struct LatticeFile {
    lattice_systems: Vec<LatticeSystemEntry>,
}

#[derive(Deserialize)]
struct WhitelistFile {
    space_groups: Vec<u16>,
}

/// All static lookup tables.
#[derive(Debug)]
pub struct SymmetryTables {
    space_groups: Vec<SpaceGroupRecord>,
    elements: Vec<ElementInfo>,
    property_names: Vec<String>,
    lattice: Vec<LatticeConstraint>,
    default_whitelist: Vec<u16>,
}

/// The process-wide tables, parsed on first use.
pub fn tables() -> &'static SymmetryTables {
    static TABLES: OnceLock<SymmetryTables> = OnceLock::new();
    TABLES.get_or_init(|| SymmetryTables::load().expect("embedded tables are valid"))
}

impl SymmetryTables {
    fn load() -> Result<Self> {
        let sg: SpaceGroupFile = serde_json::from_str(SPACE_GROUPS_JSON)?;
        let el: ElementFile = serde_json::from_str(ELEMENTS_JSON)?;
        let lat: LatticeFile = serde_json::from_str(LATTICE_SYSTEMS_JSON)?;
        let wl: WhitelistFile = serde_json::from_str(WHITELIST_JSON)?;

        if sg.space_groups.len() != 230
            || sg
                .space_groups
                .iter()
                .enumerate()
                .any(|(i, r)| r.number as usize != i + 1)
        {
            return Err(Error::Config(
                "space group table must list 1..=230 in order".into(),
            ));
        }
        if sg
            .space_groups
            .iter()
            .any(|r| r.wyckoff_multiplicities.is_empty() || r.min_multiplicity() == 0)
        {
            return Err(Error::Config("empty or zero Wyckoff multiplicity".into()));
        }
        let n_props = el.property_names.len();
        for e in &el.elements {
            if e.oxidation_states.is_empty() || e.properties.len() != n_props {
                return Err(Error::Config(format!(
                    "malformed element entry {}",
                    e.symbol
                )));
            }
        }

        let mut lattice = Vec::with_capacity(7);
        for (expected, entry) in LatticeSystem::ALL.iter().zip(&lat.lattice_systems) {
            if entry.name != *expected {
                return Err(Error::Config("lattice systems out of order".into()));
            }
            let mut seen = [false; 6];
            let mut groups = Vec::new();
            for g in &entry.groups {
                let members =
                    g.members
                        .iter()
                        .map(|m| {
                            PARAMETER_NAMES.iter().position(|p| p == m).ok_or_else(|| {
                                Error::Config(format!("unknown lattice parameter {m}"))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                let angular = is_angle(members[0]);
                if members
                    .iter()
                    .any(|&m| is_angle(m) != angular || std::mem::replace(&mut seen[m], true))
                {
                    return Err(Error::Config(format!(
                        "bad parameter grouping in {:?}",
                        entry.name
                    )));
                }
                if g.fixed.is_some() && !angular {
                    return Err(Error::Config("only angles may be pinned".into()));
                }
                groups.push(ParamGroup {
                    members,
                    fixed: g.fixed,
                });
            }
            if seen.iter().any(|s| !s) {
                return Err(Error::Config(format!(
                    "{:?} does not cover all parameters",
                    entry.name
                )));
            }
            lattice.push(LatticeConstraint {
                system: entry.name,
                groups,
            });
        }
        if lattice.len() != 7 {
            return Err(Error::Config("expected 7 lattice systems".into()));
        }

        Ok(Self {
            space_groups: sg.space_groups,
            elements: el.elements,
            property_names: el.property_names,
            lattice,
            default_whitelist: wl.space_groups,
        })
    }

    pub fn space_groups(&self) -> &[SpaceGroupRecord] {
        &self.space_groups
    }

    pub fn space_group(&self, number: u32) -> Result<&SpaceGroupRecord> {
        match number {
            1..=230 => Ok(&self.space_groups[number as usize - 1]),
            _ => Err(Error::UnknownSpaceGroup(number)),
        }
    }

    pub fn elements(&self) -> &[ElementInfo] {
        &self.elements
    }

    pub fn element(&self, symbol: &str) -> Result<&ElementInfo> {
        self.elements
            .iter()
            .find(|e| e.symbol == symbol)
            .ok_or_else(|| Error::UnknownElement(symbol.to_string()))
    }

    pub fn property_names(&self) -> &[String] {
        &self.property_names
    }

    pub fn lattice_constraints(&self) -> &[LatticeConstraint] {
        &self.lattice
    }

    pub fn default_whitelist(&self) -> &[u16] {
        &self.default_whitelist
    }

    /// Space groups matching every provided filter.
    pub fn space_groups_matching(
        &self,
        cls: Option<CrystalLatticeSystem>,
        ps: Option<PointSymmetry>,
    ) -> BTreeSet<u16> {
        self.space_groups
            .iter()
            .filter(|r| cls.is_none_or(|c| r.crystal_lattice_system == c))
            .filter(|r| ps.is_none_or(|p| r.point_symmetry == p))
            .map(|r| r.number)
            .collect()
    }

    /// Categories co-occurring with the given filters in at least one record.
    pub fn compatible_categories(
        &self,
        ps: Option<PointSymmetry>,
        cls: Option<CrystalLatticeSystem>,
    ) -> (BTreeSet<CrystalLatticeSystem>, BTreeSet<PointSymmetry>) {
        let mut out = (BTreeSet::new(), BTreeSet::new());
        for r in &self.space_groups {
            if cls.is_none_or(|c| r.crystal_lattice_system == c)
                && ps.is_none_or(|p| r.point_symmetry == p)
            {
                out.0.insert(r.crystal_lattice_system);
                out.1.insert(r.point_symmetry);
            }
        }
        out
    }

    pub fn count_compatible(&self, sg: u32, n: u32) -> Result<bool> {
        Ok(self.space_group(sg)?.count_compatible(n))
    }

    /// Charge-neutrality feasibility for `(symbol, count)` pairs.
    pub fn neutrality_feasible(&self, counts: &[(&str, u32)]) -> Result<bool> {
        let resolved = counts
            .iter()
            .map(|(s, n)| Ok((self.element(s)?.oxidation_states.as_slice(), *n)))
            .collect::<Result<Vec<_>>>()?;
        Ok(neutrality_feasible(resolved))
    }

    pub fn lattice_constraint(&self, sg: u32) -> Result<&LatticeConstraint> {
        let system = self.space_group(sg)?.lattice_system();
        Ok(&self.lattice[system.index()])
    }

    pub fn lattice_constraint_for(&self, system: LatticeSystem) -> &LatticeConstraint {
        &self.lattice[system.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charge_set_sums() {
        let li = ChargeSet::of_atoms(&[1], 2);
        assert_eq!(li.iter().collect::<Vec<_>>(), vec![2]);
        let o = ChargeSet::of_atoms(&[-2], 1);
        assert!(li.add(&o).contains(0));
        let cl = ChargeSet::of_atoms(&[-1, 1, 3, 5, 7], 3);
        assert_eq!(cl.min(), -3);
        assert_eq!(cl.max(), 21);
        assert!(cl.contains(1) && !cl.contains(0));
    }

    #[test]
    fn charge_set_wide_shift() {
        // crosses several 64-bit words
        let a = ChargeSet::of_atoms(&[-7, 7], 30);
        assert_eq!(a.min(), -210);
        assert_eq!(a.max(), 210);
        assert!(a.contains(0) && a.contains(14) && !a.contains(7));
        assert_eq!(a.iter().count(), 31);
    }

    #[test]
    fn empty_composition_is_neutral() {
        assert!(neutrality_feasible(std::iter::empty()));
    }

    #[test]
    fn lithium_oxide_and_lithium_difluoride() {
        let t = tables();
        assert!(t.neutrality_feasible(&[("Li", 2), ("O", 1)]).unwrap());
        assert!(!t.neutrality_feasible(&[("Li", 1), ("F", 2)]).unwrap());
    }

    #[test]
    fn count_compatible_small_coin_sets() {
        let rec = SpaceGroupRecord {
            number: 0,
            symbol: String::new(),
            point_group: String::new(),
            crystal_lattice_system: CrystalLatticeSystem::Cubic,
            point_symmetry: PointSymmetry::Centrosymmetric,
            wyckoff_multiplicities: vec![4, 6],
        };
        assert!(!rec.count_compatible(9));
        assert!(rec.count_compatible(10));
        assert!(!rec.count_compatible(1));
        assert!(rec.count_compatible(0));
    }

    #[test]
    fn bad_table_key() {
        assert!(matches!(
            tables().count_compatible(0, 3),
            Err(Error::UnknownSpaceGroup(0))
        ));
        assert!(matches!(
            tables().lattice_constraint(231),
            Err(Error::UnknownSpaceGroup(231))
        ));
        assert!(tables().element("Xx").is_err());
    }

    #[test]
    fn lattice_constraint_shapes() {
        let t = tables();
        let cubic = t.lattice_constraint(225).unwrap();
        assert_eq!(cubic.tied_length_groups(), vec![vec![0, 1, 2]]);
        assert_eq!(cubic.fixed_angles(), vec![(3, 90.0), (4, 90.0), (5, 90.0)]);
        assert!(cubic.free_angles().is_empty());
        let tri = t.lattice_constraint(1).unwrap();
        assert_eq!(tri.n_free(), 6);
        assert!(tri.fixed_angles().is_empty());
        let hex = t.lattice_constraint_for(LatticeSystem::Hexagonal);
        assert_eq!(hex.tied_length_groups(), vec![vec![0, 1], vec![2]]);
        assert!(hex.fixed_angles().contains(&(5, 120.0)));
        let rh = t.lattice_constraint_for(LatticeSystem::Rhombohedral);
        assert_eq!(rh.free_angles(), vec![3, 4, 5]);
        assert_eq!(rh.n_free(), 2);
        let mono = t.lattice_constraint_for(LatticeSystem::Monoclinic);
        assert_eq!(mono.free_angles(), vec![4]);
    }

    #[test]
    fn empty_filter_is_everything() {
        assert_eq!(tables().space_groups_matching(None, None).len(), 230);
        let (c, p) = tables().compatible_categories(None, None);
        assert_eq!((c.len(), p.len()), (8, 5));
    }
}
