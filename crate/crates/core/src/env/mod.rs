//! The stacked crystal environment: space group → composition → lattice.
//!
//! States are plain values and the environment is a stateless rule object;
//! every method takes `&self` and is safe to call from many threads.

mod config;
pub mod lattice;
mod state;

use std::collections::{BTreeMap, HashSet};

use rand::Rng;

pub use config::{EnvConfig, DEFAULT_ELEMENTS};
pub use lattice::{cube_to_physical, LatticeRanges};
pub use state::{
    Action, ActionMask, BackwardAction, BackwardMask, CompositionState, CrystalState, LatticeState,
    SpaceGroupState, Stage,
};

use crate::error::{Error, Result};
use crate::record::{CrystalRecord, LatticeRecord};
use crate::symtab::{
    tables, ChargeSet, CrystalLatticeSystem, ElementInfo, LatticeConstraint, PointSymmetry,
    SpaceGroupRecord,
};

/// Slack used when comparing cube coordinates against the cube boundary.
const BOUNDARY_EPS: f64 = 1e-9;

/// Flat index space of the discrete forward actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSpace {
    pub n_elements: usize,
    pub max_count: usize,
}

impl ActionSpace {
    pub const CLS_OFFSET: usize = 0;
    pub const PS_OFFSET: usize = 8;
    pub const SG_OFFSET: usize = 13;
    pub const SG_STOP: usize = 243;
    pub const ADD_OFFSET: usize = 244;

    pub fn comp_stop(&self) -> usize {
        Self::ADD_OFFSET + self.n_elements * self.max_count
    }

    pub fn len(&self) -> usize {
        self.comp_stop() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn add_index(&self, element: usize, count: u32) -> usize {
        Self::ADD_OFFSET + element * self.max_count + count as usize - 1
    }

    /// Slot of a discrete action, `None` for lattice actions.
    pub fn index(&self, action: &Action) -> Option<usize> {
        Some(match action {
            Action::SetCls(c) => Self::CLS_OFFSET + c.index(),
            Action::SetPs(p) => Self::PS_OFFSET + p.index(),
            Action::SetSg(n) => Self::SG_OFFSET + *n as usize - 1,
            Action::SgStop => Self::SG_STOP,
            Action::AddAtoms { element, count } => {
                if *element >= self.n_elements || *count == 0 || *count as usize > self.max_count {
                    return None;
                }
                self.add_index(*element, *count)
            }
            Action::CompStop => self.comp_stop(),
            _ => return None,
        })
    }

    pub fn action(&self, index: usize) -> Action {
        match index {
            i if i < Self::PS_OFFSET => Action::SetCls(CrystalLatticeSystem::ALL[i]),
            i if i < Self::SG_OFFSET => Action::SetPs(PointSymmetry::ALL[i - Self::PS_OFFSET]),
            i if i < Self::SG_STOP => Action::SetSg((i - Self::SG_OFFSET + 1) as u16),
            Self::SG_STOP => Action::SgStop,
            i if i < self.comp_stop() => {
                let j = i - Self::ADD_OFFSET;
                Action::AddAtoms {
                    element: j / self.max_count,
                    count: (j % self.max_count + 1) as u32,
                }
            }
            _ => Action::CompStop,
        }
    }
}

/// Parents of a state: a finite list plus, for lattice states, the continuous
/// family reached through `LpIncrement`.
#[derive(Debug, Clone)]
pub struct ParentSet {
    pub discrete: Vec<(CrystalState, Action)>,
    pub continuous: Option<ContinuousParents>,
}

/// All `(x − u, LpIncrement(u))` with `min_increment ≤ u_j ≤ x_j` on every free dimension.
#[derive(Debug, Clone)]
pub struct ContinuousParents {
    child: CrystalState,
    constraint: LatticeConstraint,
    ranges: LatticeRanges,
    pub min_increment: f64,
    /// Upper bound on each representative's increment.
    pub max_increment: [f64; 6],
}

impl ContinuousParents {
    pub fn parent(&self, increment: &[f64; 6]) -> Result<(CrystalState, Action)> {
        let coords = self
            .child
            .lattice
            .coords
            .expect("continuous parents need coordinates");
        let mut prev = coords;
        for r in self.constraint.free_representatives() {
            let u = increment[r];
            if !(u >= self.min_increment - 1e-12 && u <= self.max_increment[r] + 1e-12) {
                return Err(Error::MaskedAction(format!(
                    "backward increment {u} out of range"
                )));
            }
            prev[r] = (coords[r] - u).max(0.0);
        }
        let mut parent = self.child.clone();
        parent.lattice.coords = Some(lattice::project(&prev, &self.constraint, &self.ranges));
        let action = Action::LpIncrement(project_increment(increment, &self.constraint));
        Ok((parent, action))
    }
}

fn project_increment(u: &[f64; 6], constraint: &LatticeConstraint) -> [f64; 6] {
    let mut out = [0.0; 6];
    for g in constraint.free_groups() {
        for &m in &g.members {
            out[m] = u[g.representative()];
        }
    }
    out
}

/// The stacked crystal environment.
#[derive(Debug, Clone)]
pub struct CrystalEnv {
    config: EnvConfig,
    elements: Vec<&'static ElementInfo>,
    whitelist: Vec<u16>,
    in_whitelist: Vec<bool>,
    /// `allowed_counts[sg][k]`: Wyckoff feasibility of k atoms of one element.
    allowed_counts: Vec<Vec<bool>>,
    /// `atom_charges[d][k]`: charges reachable by k atoms of element d.
    atom_charges: Vec<Vec<ChargeSet>>,
    /// Per-element (min, max) oxidation state.
    ox_bounds: Vec<(i32, i32)>,
    fixed_composition: Option<Vec<u32>>,
    fixed_lattice: Option<[f64; 6]>,
    ranges: LatticeRanges,
    space: ActionSpace,
}

impl CrystalEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        let t = tables();
        if config.elements.is_empty() {
            return Err(Error::Config("element vocabulary is empty".into()));
        }
        let elements = config
            .elements
            .iter()
            .map(|s| t.element(s))
            .collect::<Result<Vec<_>>>()?;
        let mut unique: Vec<_> = config.elements.clone();
        unique.sort();
        unique.dedup();
        if unique.len() != config.elements.len() {
            return Err(Error::Config("duplicate element in vocabulary".into()));
        }
        let k_max = config.max_atoms_per_element;
        if k_max == 0 || config.max_atoms == 0 || config.max_elements == 0 {
            return Err(Error::Config(
                "atom and element caps must be positive".into(),
            ));
        }
        if !(config.min_increment > 0.0 && config.min_increment < 1.0) {
            return Err(Error::Config("min_increment must lie in (0, 1)".into()));
        }
        for r in [config.length_range, config.angle_range] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] < r[1]) {
                return Err(Error::Config("lattice ranges must be increasing".into()));
            }
        }

        let whitelist: Vec<u16> = match config.fixed_space_group {
            Some(n) => vec![n],
            None => {
                let mut w = config.space_groups.clone();
                w.sort_unstable();
                w.dedup();
                w
            }
        };
        if whitelist.is_empty() {
            return Err(Error::Config("no space groups configured".into()));
        }
        let mut in_whitelist = vec![false; 231];
        for &n in &whitelist {
            t.space_group(n as u32)?;
            in_whitelist[n as usize] = true;
        }

        let mut allowed_counts = vec![Vec::new(); 231];
        for &n in &whitelist {
            let rec = t.space_group(n as u32)?;
            allowed_counts[n as usize] = (0..=k_max)
                .map(|k| k > 0 && (!config.enforce_wyckoff || rec.count_compatible(k)))
                .collect();
        }
        let atom_charges = elements
            .iter()
            .map(|e| {
                let single = ChargeSet::from_values(&e.oxidation_states);
                let mut acc = ChargeSet::zero();
                let mut per_k = vec![acc.clone()];
                for _ in 0..k_max {
                    acc = acc.add(&single);
                    per_k.push(acc.clone());
                }
                per_k
            })
            .collect();
        let ox_bounds = elements
            .iter()
            .map(|e| {
                let lo = *e.oxidation_states.iter().min().unwrap();
                let hi = *e.oxidation_states.iter().max().unwrap();
                (lo, hi)
            })
            .collect();

        let ranges = LatticeRanges {
            length: config.length_range,
            angle: config.angle_range,
        };
        let space = ActionSpace {
            n_elements: elements.len(),
            max_count: k_max as usize,
        };

        let fixed_composition = match &config.fixed_composition {
            None => None,
            Some(map) => {
                let mut counts = vec![0u32; elements.len()];
                for (sym, &n) in map {
                    let d = config
                        .elements
                        .iter()
                        .position(|s| s == sym)
                        .ok_or_else(|| {
                            Error::Config(format!(
                                "fixed composition uses {sym} outside the vocabulary"
                            ))
                        })?;
                    counts[d] = n;
                }
                Some(counts)
            }
        };
        let fixed_lattice = config.fixed_lattice.map(|p| {
            let mut x = [0.0; 6];
            for (i, v) in p.iter().enumerate() {
                x[i] = ranges.to_cube(i, *v);
            }
            x
        });

        let env = Self {
            config,
            elements,
            whitelist,
            in_whitelist,
            allowed_counts,
            atom_charges,
            ox_bounds,
            fixed_composition,
            fixed_lattice,
            ranges,
            space,
        };
        env.check_fixed_stages()?;
        for &n in &env.whitelist {
            if env.fixed_composition.is_none() && !env.space_group_completable(n) {
                return Err(Error::Config(format!(
                    "space group {n} admits no valid composition"
                )));
            }
        }
        Ok(env)
    }

    fn check_fixed_stages(&self) -> Result<()> {
        if let Some(counts) = &self.fixed_composition {
            let comp = CompositionState {
                counts: counts.clone(),
            };
            for &n in &self.whitelist {
                if let Some(msg) = self.composition_violation(n, &comp) {
                    return Err(Error::Config(format!(
                        "fixed composition invalid for space group {n}: {msg}"
                    )));
                }
            }
        }
        if let Some(x) = &self.fixed_lattice {
            if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config(
                    "fixed lattice lies outside the configured ranges".into(),
                ));
            }
            for &n in &self.whitelist {
                let c = tables().lattice_constraint(n as u32)?;
                let projected = lattice::project(x, c, &self.ranges);
                if projected.iter().zip(x).any(|(a, b)| (a - b).abs() > 1e-12) {
                    return Err(Error::Config(format!(
                        "fixed lattice violates the {:?} constraints of space group {n}",
                        c.system
                    )));
                }
            }
        }
        if self.config.fixed_space_group.is_some()
            && self.fixed_composition.is_some()
            && self.fixed_lattice.is_some()
        {
            return Err(Error::Config(
                "every stage is fixed; nothing to sample".into(),
            ));
        }
        Ok(())
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn elements(&self) -> &[&'static ElementInfo] {
        &self.elements
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn whitelist(&self) -> &[u16] {
        &self.whitelist
    }

    pub fn action_space(&self) -> ActionSpace {
        self.space
    }

    pub fn ranges(&self) -> &LatticeRanges {
        &self.ranges
    }

    pub fn min_increment(&self) -> f64 {
        self.config.min_increment
    }

    pub fn sg_stage_enabled(&self) -> bool {
        self.config.fixed_space_group.is_none()
    }

    pub fn comp_stage_enabled(&self) -> bool {
        self.fixed_composition.is_none()
    }

    pub fn lp_stage_enabled(&self) -> bool {
        self.fixed_lattice.is_none()
    }

    fn stage_enabled(&self, stage: Stage) -> bool {
        match stage {
            Stage::SpaceGroup => self.sg_stage_enabled(),
            Stage::Composition => self.comp_stage_enabled(),
            Stage::Lattice => self.lp_stage_enabled(),
            Stage::Done => true,
        }
    }

    fn next_stage(&self, after: Stage) -> Stage {
        [Stage::Composition, Stage::Lattice, Stage::Done]
            .into_iter()
            .filter(|s| *s > after)
            .find(|s| self.stage_enabled(*s))
            .unwrap_or(Stage::Done)
    }

    fn previous_stage(&self, before: Stage) -> Option<Stage> {
        [Stage::Lattice, Stage::Composition, Stage::SpaceGroup]
            .into_iter()
            .filter(|s| *s < before)
            .find(|s| self.stage_enabled(*s))
    }

    fn stop_action(stage: Stage) -> Action {
        match stage {
            Stage::SpaceGroup => Action::SgStop,
            Stage::Composition => Action::CompStop,
            Stage::Lattice => Action::LpStop,
            Stage::Done => unreachable!("no stop action leaves the terminal stage"),
        }
    }

    pub fn initial_state(&self) -> CrystalState {
        let mut space_group = SpaceGroupState::default();
        if let Some(n) = self.config.fixed_space_group {
            let rec = self.record_of(n);
            space_group = SpaceGroupState {
                cls: Some(rec.crystal_lattice_system),
                ps: Some(rec.point_symmetry),
                sg: Some(n),
            };
        }
        let composition = match &self.fixed_composition {
            Some(c) => CompositionState { counts: c.clone() },
            None => CompositionState::empty(self.n_elements()),
        };
        let lattice = LatticeState {
            coords: self.fixed_lattice,
            done: false,
        };
        let stage = [Stage::SpaceGroup, Stage::Composition, Stage::Lattice]
            .into_iter()
            .find(|s| self.stage_enabled(*s))
            .expect("at least one stage is enabled");
        CrystalState {
            stage,
            space_group,
            composition,
            lattice,
        }
    }

    pub fn is_initial(&self, s: &CrystalState) -> bool {
        *s == self.initial_state()
    }

    fn record_of(&self, sg: u16) -> &'static SpaceGroupRecord {
        tables()
            .space_group(sg as u32)
            .expect("validated space group")
    }

    /// Lattice constraint of the state's space group.
    pub fn constraint(&self, s: &CrystalState) -> Option<&'static LatticeConstraint> {
        s.space_group.sg.map(|n| {
            tables()
                .lattice_constraint(n as u32)
                .expect("validated space group")
        })
    }

    fn sg_matches(
        &self,
        n: u16,
        cls: Option<CrystalLatticeSystem>,
        ps: Option<PointSymmetry>,
    ) -> bool {
        let rec = self.record_of(n);
        cls.is_none_or(|c| rec.crystal_lattice_system == c)
            && ps.is_none_or(|p| rec.point_symmetry == p)
    }

    /// Wyckoff feasibility of `k` atoms of one element under the configured rules.
    pub fn count_allowed(&self, sg: u16, k: u32) -> bool {
        self.allowed_counts[sg as usize]
            .get(k as usize)
            .copied()
            .unwrap_or(false)
    }

    fn charges_of(&self, counts: &[u32]) -> ChargeSet {
        counts
            .iter()
            .enumerate()
            .filter(|(_, &k)| k > 0)
            .fold(ChargeSet::zero(), |acc, (d, &k)| {
                acc.add(&self.atom_charges[d][k as usize])
            })
    }

    /// Exact check that `counts` can be extended (with unused elements, within
    /// the atom and element budgets) to a charge-neutral composition.
    pub fn completion_feasible(&self, sg: u16, counts: &[u32]) -> bool {
        let charge = self.charges_of(counts);
        let total: u32 = counts.iter().sum();
        let present = counts.iter().filter(|&&c| c > 0).count() as u32;
        if total > self.config.max_atoms || present > self.config.max_elements {
            return false;
        }
        let unused: Vec<usize> = (0..counts.len()).filter(|&d| counts[d] == 0).collect();
        let mut failed = HashSet::new();
        self.search_completion(
            sg,
            &unused,
            0,
            self.config.max_atoms - total,
            self.config.max_elements - present,
            &charge,
            &mut failed,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn search_completion(
        &self,
        sg: u16,
        unused: &[usize],
        start: usize,
        budget: u32,
        slots: u32,
        charge: &ChargeSet,
        failed: &mut HashSet<(usize, u32, u32, ChargeSet)>,
    ) -> bool {
        if charge.contains(0) {
            return true;
        }
        if slots == 0 || budget == 0 || start >= unused.len() {
            return false;
        }
        // interval bound on what the remaining elements can contribute
        let cap = budget.min(slots * self.config.max_atoms_per_element) as i32;
        let (mut neg, mut pos) = (0, 0);
        for &d in &unused[start..] {
            neg = neg.min(self.ox_bounds[d].0);
            pos = pos.max(self.ox_bounds[d].1);
        }
        if charge.min() + cap * neg > 0 || charge.max() + cap * pos < 0 {
            return false;
        }
        let key = (start, budget, slots, charge.clone());
        if failed.contains(&key) {
            return false;
        }
        let k_max = budget.min(self.config.max_atoms_per_element);
        for (i, &d) in unused.iter().enumerate().skip(start) {
            for k in 1..=k_max {
                if !self.count_allowed(sg, k) {
                    continue;
                }
                let next = charge.add(&self.atom_charges[d][k as usize]);
                if self.search_completion(sg, unused, i + 1, budget - k, slots - 1, &next, failed) {
                    return true;
                }
            }
        }
        failed.insert(key);
        false
    }

    fn space_group_completable(&self, sg: u16) -> bool {
        let k_max = self.config.max_atoms_per_element.min(self.config.max_atoms);
        (0..self.n_elements()).any(|d| {
            (1..=k_max).any(|k| {
                if !self.count_allowed(sg, k) {
                    return false;
                }
                if !self.config.enforce_neutrality {
                    return true;
                }
                let mut counts = vec![0; self.n_elements()];
                counts[d] = k;
                self.completion_feasible(sg, &counts)
            })
        })
    }

    fn neutral(&self, counts: &[u32]) -> bool {
        !self.config.enforce_neutrality || self.charges_of(counts).contains(0)
    }

    /// Valid forward actions.
    pub fn valid_actions(&self, s: &CrystalState) -> Result<ActionMask> {
        let mut mask = ActionMask {
            discrete: vec![false; self.space.len()],
            lp_from_source: false,
            lp_increment: false,
            lp_stop: false,
        };
        match s.stage {
            Stage::Done => return Err(Error::TerminalState),
            Stage::SpaceGroup => {
                let st = &s.space_group;
                if st.sg.is_some() {
                    mask.discrete[ActionSpace::SG_STOP] = true;
                } else {
                    for &n in &self.whitelist {
                        if !self.sg_matches(n, st.cls, st.ps) {
                            continue;
                        }
                        let rec = self.record_of(n);
                        mask.discrete[ActionSpace::SG_OFFSET + n as usize - 1] = true;
                        if st.cls.is_none() {
                            mask.discrete
                                [ActionSpace::CLS_OFFSET + rec.crystal_lattice_system.index()] =
                                true;
                        }
                        if st.ps.is_none() {
                            mask.discrete[ActionSpace::PS_OFFSET + rec.point_symmetry.index()] =
                                true;
                        }
                    }
                }
            }
            Stage::Composition => {
                let sg = s
                    .space_group
                    .sg
                    .expect("space group is set in the composition stage");
                let comp = &s.composition;
                let total = comp.total();
                let present = comp.n_present() as u32;
                if present < self.config.max_elements {
                    let mut counts = comp.counts.clone();
                    for d in 0..self.n_elements() {
                        if comp.counts[d] != 0 {
                            continue;
                        }
                        for k in 1..=self.config.max_atoms_per_element {
                            if total + k > self.config.max_atoms || !self.count_allowed(sg, k) {
                                continue;
                            }
                            counts[d] = k;
                            if !self.config.enforce_neutrality
                                || self.completion_feasible(sg, &counts)
                            {
                                mask.discrete[self.space.add_index(d, k)] = true;
                            }
                        }
                        counts[d] = 0;
                    }
                }
                mask.discrete[self.space.comp_stop()] = !comp.is_empty()
                    && self.neutral(&comp.counts)
                    && comp
                        .counts
                        .iter()
                        .all(|&k| k == 0 || self.count_allowed(sg, k));
            }
            Stage::Lattice => match &s.lattice.coords {
                None => mask.lp_from_source = true,
                Some(x) => {
                    let c = self
                        .constraint(s)
                        .expect("space group is set in the lattice stage");
                    mask.lp_stop = true;
                    mask.lp_increment = c
                        .free_representatives()
                        .iter()
                        .all(|&r| 1.0 - x[r] - self.config.min_increment > BOUNDARY_EPS);
                }
            },
        }
        Ok(mask)
    }

    fn check_valid(&self, s: &CrystalState, mask: &ActionMask, a: &Action) -> Result<()> {
        let ok = match a {
            Action::LpFromSource(y) => {
                mask.lp_from_source
                    && self
                        .constraint(s)
                        .map(|c| {
                            c.free_representatives()
                                .iter()
                                .all(|&r| (0.0..=1.0).contains(&y[r]))
                        })
                        .unwrap_or(false)
            }
            Action::LpIncrement(u) => {
                let x = s.lattice.coords.unwrap_or_default();
                mask.lp_increment
                    && self
                        .constraint(s)
                        .map(|c| {
                            c.free_representatives().iter().all(|&r| {
                                u[r] >= self.config.min_increment - 1e-12
                                    && x[r] + u[r] <= 1.0 + 1e-12
                            })
                        })
                        .unwrap_or(false)
            }
            Action::LpStop => mask.lp_stop,
            other => self.space.index(other).is_some_and(|i| mask.discrete[i]),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::MaskedAction(a.to_string()))
        }
    }

    /// Apply a valid action.
    pub fn step(&self, s: &CrystalState, a: &Action) -> Result<CrystalState> {
        let mask = self.valid_actions(s)?;
        self.check_valid(s, &mask, a)?;
        Ok(self.apply(s, a))
    }

    /// Apply an action already known to be valid.
    pub(crate) fn apply(&self, s: &CrystalState, a: &Action) -> CrystalState {
        let mut next = s.clone();
        match a {
            Action::SetCls(c) => next.space_group.cls = Some(*c),
            Action::SetPs(p) => next.space_group.ps = Some(*p),
            Action::SetSg(n) => {
                let rec = self.record_of(*n);
                next.space_group = SpaceGroupState {
                    cls: Some(rec.crystal_lattice_system),
                    ps: Some(rec.point_symmetry),
                    sg: Some(*n),
                };
            }
            Action::AddAtoms { element, count } => next.composition.counts[*element] = *count,
            Action::SgStop | Action::CompStop | Action::LpStop => {
                next.stage = self.next_stage(s.stage);
                if next.stage == Stage::Done {
                    next.lattice.done = true;
                }
            }
            Action::LpFromSource(y) => {
                let c = self.constraint(s).expect("space group set");
                next.lattice.coords = Some(lattice::project(y, c, &self.ranges));
            }
            Action::LpIncrement(u) => {
                let c = self.constraint(s).expect("space group set");
                let mut x = s.lattice.coords.expect("increment after placement");
                for r in c.free_representatives() {
                    x[r] = (x[r] + u[r]).min(1.0);
                }
                next.lattice.coords = Some(lattice::project(&x, c, &self.ranges));
            }
        }
        next
    }

    /// All `(parent, action)` pairs with `step(parent, action) == s`.
    pub fn parent_transitions(&self, s: &CrystalState) -> Result<ParentSet> {
        if self.is_initial(s) {
            return Err(Error::NoParents);
        }
        let mut discrete = Vec::new();
        let mut continuous = None;
        let stage_entry = |stage: Stage| -> Option<(CrystalState, Action)> {
            self.previous_stage(stage).map(|prev| {
                let mut p = s.clone();
                p.stage = prev;
                p.lattice.done = false;
                (p, Self::stop_action(prev))
            })
        };
        match s.stage {
            Stage::Done => discrete.extend(stage_entry(Stage::Done)),
            Stage::SpaceGroup => {
                let st = &s.space_group;
                if let Some(n) = st.sg {
                    for keep_cls in [false, true] {
                        for keep_ps in [false, true] {
                            let mut p = s.clone();
                            p.space_group = SpaceGroupState {
                                cls: st.cls.filter(|_| keep_cls),
                                ps: st.ps.filter(|_| keep_ps),
                                sg: None,
                            };
                            discrete.push((p, Action::SetSg(n)));
                        }
                    }
                } else {
                    if let Some(c) = st.cls {
                        let mut p = s.clone();
                        p.space_group.cls = None;
                        discrete.push((p, Action::SetCls(c)));
                    }
                    if let Some(ps) = st.ps {
                        let mut p = s.clone();
                        p.space_group.ps = None;
                        discrete.push((p, Action::SetPs(ps)));
                    }
                }
            }
            Stage::Composition => {
                if s.composition.is_empty() {
                    discrete.extend(stage_entry(Stage::Composition));
                } else {
                    for (d, &k) in s.composition.counts.iter().enumerate() {
                        if k > 0 {
                            let mut p = s.clone();
                            p.composition.counts[d] = 0;
                            discrete.push((
                                p,
                                Action::AddAtoms {
                                    element: d,
                                    count: k,
                                },
                            ));
                        }
                    }
                }
            }
            Stage::Lattice => match s.lattice.coords {
                None => discrete.extend(stage_entry(Stage::Lattice)),
                Some(x) => {
                    let c = self.constraint(s).expect("space group set");
                    let mut p = s.clone();
                    p.lattice.coords = None;
                    discrete.push((p, Action::LpFromSource(x)));
                    let reps = c.free_representatives();
                    let delta = self.config.min_increment;
                    if reps.iter().all(|&r| x[r] - delta > BOUNDARY_EPS) {
                        let mut max_increment = [0.0; 6];
                        for &r in &reps {
                            max_increment[r] = x[r];
                        }
                        continuous = Some(ContinuousParents {
                            child: s.clone(),
                            constraint: c.clone(),
                            ranges: self.ranges,
                            min_increment: delta,
                            max_increment,
                        });
                    }
                }
            },
        }
        Ok(ParentSet {
            discrete,
            continuous,
        })
    }

    /// Backward action identifying `parent` as the predecessor through `action`.
    pub fn backward_action(&self, parent: &CrystalState, action: &Action) -> BackwardAction {
        match action {
            Action::SetCls(_) => BackwardAction::UnsetCls,
            Action::SetPs(_) => BackwardAction::UnsetPs,
            Action::SetSg(_) => BackwardAction::UnsetSg {
                keep_cls: parent.space_group.cls.is_some(),
                keep_ps: parent.space_group.ps.is_some(),
            },
            Action::AddAtoms { element, .. } => BackwardAction::RemoveElement(*element),
            Action::SgStop | Action::CompStop | Action::LpStop => BackwardAction::Forced,
            Action::LpFromSource(_) => BackwardAction::LpToSource,
            Action::LpIncrement(u) => BackwardAction::LpDecrement(*u),
        }
    }

    /// Valid backward actions of a non-initial state.
    pub fn backward_mask(&self, s: &CrystalState) -> Result<BackwardMask> {
        if self.is_initial(s) {
            return Err(Error::NoParents);
        }
        let mut m = BackwardMask {
            remove: vec![false; self.n_elements()],
            ..Default::default()
        };
        match s.stage {
            Stage::Done => m.forced = true,
            Stage::SpaceGroup => {
                if s.space_group.sg.is_some() {
                    m.unset_sg = true;
                } else {
                    m.unset_cls = s.space_group.cls.is_some();
                    m.unset_ps = s.space_group.ps.is_some();
                }
            }
            Stage::Composition => {
                if s.composition.is_empty() {
                    m.forced = true;
                } else {
                    for (d, &k) in s.composition.counts.iter().enumerate() {
                        m.remove[d] = k > 0;
                    }
                }
            }
            Stage::Lattice => match s.lattice.coords {
                None => m.forced = true,
                Some(x) => {
                    let c = self.constraint(s).expect("space group set");
                    m.lp_to_source = true;
                    m.lp_decrement = c
                        .free_representatives()
                        .iter()
                        .all(|&r| x[r] - self.config.min_increment > BOUNDARY_EPS);
                }
            },
        }
        Ok(m)
    }

    /// Draw uniformly among valid actions. In the lattice stage "uniform" means
    /// an even stop/continue split and uniform cube coordinates or increments.
    pub fn uniform_action<R: Rng + ?Sized>(
        &self,
        s: &CrystalState,
        mask: &ActionMask,
        rng: &mut R,
    ) -> Result<Action> {
        if s.stage == Stage::Lattice {
            let c = self.constraint(s).expect("space group set");
            let reps = c.free_representatives();
            if mask.lp_from_source {
                let mut y = [0.0; 6];
                for &r in &reps {
                    y[r] = rng.gen::<f64>();
                }
                return Ok(Action::LpFromSource(lattice::project(&y, c, &self.ranges)));
            }
            let x = s.lattice.coords.expect("placed");
            let stop = !mask.lp_increment || rng.gen::<f64>() < 0.5;
            if stop {
                return Ok(Action::LpStop);
            }
            let mut u = [0.0; 6];
            for &r in &reps {
                let rr: f64 = rng.gen();
                u[r] = self.config.min_increment + rr * (1.0 - x[r] - self.config.min_increment);
            }
            return Ok(Action::LpIncrement(project_increment(&u, c)));
        }
        let valid: Vec<usize> = (0..mask.discrete.len())
            .filter(|&i| mask.discrete[i])
            .collect();
        if valid.is_empty() {
            return Err(Error::DeadEnd);
        }
        Ok(self.space.action(valid[rng.gen_range(0..valid.len())]))
    }

    /// Roll out uniformly random valid actions until termination.
    ///
    /// Returns the visited states (initial to terminal) and the actions taken.
    pub fn random_trajectory<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<(Vec<CrystalState>, Vec<Action>)> {
        let mut states = vec![self.initial_state()];
        let mut actions = Vec::new();
        loop {
            let s = states.last().expect("non-empty");
            if s.is_done() {
                break;
            }
            let mask = self.valid_actions(s)?;
            let a = self.uniform_action(s, &mask, rng)?;
            let next = self.step(s, &a)?;
            actions.push(a);
            states.push(next);
        }
        Ok((states, actions))
    }

    /// Upper bound on the number of steps of any trajectory.
    pub fn max_trajectory_length(&self) -> usize {
        let mut n = 0;
        if self.sg_stage_enabled() {
            n += 3; // SetSg back-fills, so at most cls, ps, sg
            n += 1;
        }
        if self.comp_stage_enabled() {
            n += self.config.max_elements as usize + 1;
        }
        if self.lp_stage_enabled() {
            let delta = self.config.min_increment;
            // from-source, increments of at least delta inside [0, 1], stop
            n += 1 + (1.0 / delta).floor() as usize + 1;
        }
        n
    }

    pub fn physical_lattice(&self, s: &CrystalState) -> Result<[f64; 6]> {
        let c = self.constraint(s).ok_or(Error::UnsetLattice)?;
        cube_to_physical(&s.lattice, c, &self.ranges)
    }

    /// Canonical record of a terminal state.
    pub fn terminal_record(&self, s: &CrystalState) -> Result<CrystalRecord> {
        if !s.is_done() {
            return Err(Error::Config(
                "record requested for a non-terminal state".into(),
            ));
        }
        let sg = s.space_group.sg.ok_or(Error::UnknownSpaceGroup(0))?;
        let rec = self.record_of(sg);
        let composition: BTreeMap<String, u32> = s
            .composition
            .counts
            .iter()
            .enumerate()
            .filter(|(_, &k)| k > 0)
            .map(|(d, &k)| (self.elements[d].symbol.clone(), k))
            .collect();
        let p = self.physical_lattice(s)?;
        Ok(CrystalRecord {
            space_group: sg,
            crystal_lattice_system: rec.crystal_lattice_system,
            point_symmetry: rec.point_symmetry,
            composition,
            lattice: LatticeRecord {
                a: p[0],
                b: p[1],
                c: p[2],
                alpha: p[3],
                beta: p[4],
                gamma: p[5],
            },
        })
    }

    fn composition_violation(&self, sg: u16, comp: &CompositionState) -> Option<String> {
        let rec = self.record_of(sg);
        if comp.is_empty() {
            return Some("empty composition".into());
        }
        if comp.n_present() as u32 > self.config.max_elements {
            return Some("too many distinct elements".into());
        }
        if comp.total() > self.config.max_atoms {
            return Some("too many atoms".into());
        }
        for (d, &k) in comp.counts.iter().enumerate() {
            if k > self.config.max_atoms_per_element {
                return Some(format!(
                    "{} exceeds the per-element cap",
                    self.elements[d].symbol
                ));
            }
            if k > 0 && self.config.enforce_wyckoff && !rec.count_compatible(k) {
                return Some(format!(
                    "{} count {k} incompatible with Wyckoff multiplicities",
                    self.elements[d].symbol
                ));
            }
        }
        if self.config.enforce_neutrality {
            let pairs = comp
                .counts
                .iter()
                .enumerate()
                .map(|(d, &k)| (self.elements[d].oxidation_states.as_slice(), k));
            if !crate::symtab::neutrality_feasible(pairs) {
                return Some("no charge-neutral oxidation assignment".into());
            }
        }
        None
    }

    /// Re-check a terminal state against the constraint tables directly,
    /// independently of the action masks. Returns every violation found.
    pub fn validate_terminal(&self, s: &CrystalState) -> Vec<String> {
        let mut errs = Vec::new();
        if !s.is_done() || !s.lattice.done {
            errs.push("state is not terminal".into());
        }
        let Some(sg) = s.space_group.sg else {
            errs.push("space group unset".into());
            return errs;
        };
        let t = tables();
        let Ok(rec) = t.space_group(sg as u32) else {
            errs.push(format!("unknown space group {sg}"));
            return errs;
        };
        if !self.in_whitelist[sg as usize] {
            errs.push(format!("space group {sg} outside the configured set"));
        }
        if s.space_group.cls != Some(rec.crystal_lattice_system)
            || s.space_group.ps != Some(rec.point_symmetry)
        {
            errs.push("categories disagree with the space group".into());
        }
        if let Some(msg) = self.composition_violation(sg, &s.composition) {
            errs.push(msg);
        }
        let Some(x) = s.lattice.coords else {
            errs.push("lattice unset".into());
            return errs;
        };
        let c = t.lattice_constraint(sg as u32).expect("valid");
        for g in &c.groups {
            let v0 = x[g.members[0]];
            if let Some(deg) = g.fixed {
                let pin = self.ranges.to_cube(g.members[0], deg);
                if (v0 - pin).abs() > 1e-12 {
                    errs.push(format!("pinned parameter {} moved", g.members[0]));
                }
            }
            if g.members.iter().any(|&m| (x[m] - v0).abs() > 1e-12) {
                errs.push(format!("tied parameters {:?} differ", g.members));
            }
        }
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            errs.push("lattice coordinate outside the unit cube".into());
        }
        if let Ok(p) = cube_to_physical(&s.lattice, c, &self.ranges) {
            for (i, deg) in c.fixed_angles() {
                if p[i] != deg {
                    errs.push(format!("physical angle {i} is {} not {deg}", p[i]));
                }
            }
        }
        errs
    }
}
