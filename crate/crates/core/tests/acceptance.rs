//! Acceptance gate. Each criterion prints one PASS/FAIL line with its
//! measurements; the process fails if any criterion does.
//!
//! Runs without the libtest harness so the lines always reach the output.
//! A non-flag argument restricts the run to criteria whose name contains it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crystalflow::cli::{self, RunConfig, TRAIN_LOG_FILE};
use crystalflow::env::{Action, CrystalEnv, CrystalState, EnvConfig, LatticeRanges};
use crystalflow::gfn::{
    self, rollout, rollout_batch, tb_loss, Learner, TrainConfig, LOG_Z_WEIGHTS, THREADS_VAR,
};
use crystalflow::nn::Mlp;
use crystalflow::oracle::{
    binned_exact_marginal, count, exact_distribution_of, histogram_unit, l1_between, l1_divergence,
};
use crystalflow::policy::{beta, encode, PolicyConfig};
use crystalflow::record::CrystalRecord;
use crystalflow::reward::{
    log_reward, reward, EnergyModel, ProxyHyperparameters, ProxyModel, Surrogate,
};
use crystalflow::symtab::{tables, LatticeSystem, PointSymmetry};

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("constraint tables", constraint_tables),
        ("mask soundness", mask_soundness),
        ("gradient correctness", gradient_correctness),
        ("discrete proportionality", discrete_proportionality),
        ("continuous proportionality", continuous_proportionality),
        ("continuous calibration", continuous_calibration),
        ("proxy architecture", proxy_architecture),
        ("reproducibility", reproducibility),
        ("reward transform", reward_transform),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if filter.as_ref().is_some_and(|f| !name.contains(f.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Outcome {
            pass: false,
            detail: "panicked".into(),
        });
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "criterion {} {:<27} {}  {} [{:.1}s]",
            i + 1,
            name,
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail,
            t0.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

fn jitter(learner: &mut Learner, seed: u64, amp: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in learner
        .policy
        .forward
        .params
        .iter_mut()
        .chain(learner.policy.backward.params.iter_mut())
    {
        *v += rng.gen_range(-amp..amp);
    }
}

fn composition(pairs: &[(&str, u32)]) -> BTreeMap<String, u32> {
    pairs.iter().map(|(s, k)| (s.to_string(), *k)).collect()
}

// 1 -------------------------------------------------------------------------

fn constraint_tables() -> Outcome {
    let t0 = Instant::now();
    let t = tables();
    let ncs = t
        .space_groups_matching(None, Some(PointSymmetry::NonCentrosymmetric))
        .len();
    let (systems, _) = t.compatible_categories(Some(PointSymmetry::NonCentrosymmetric), None);
    let min_230 = (1..=64)
        .find(|&n| t.count_compatible(230, n).unwrap())
        .unwrap_or(0);
    let max_min = t
        .space_groups()
        .iter()
        .map(|r| r.min_multiplicity())
        .max()
        .unwrap_or(0);
    let secs = t0.elapsed().as_secs_f64();
    Outcome {
        pass: ncs == 25 && systems.len() == 3 && min_230 == 16 && max_min == 16 && secs < 1.0,
        detail: format!(
            "non-centrosymmetric {ncs} groups over {} systems; min count for 230 {min_230}; \
             max min multiplicity {max_min}; {secs:.3}s < 1s",
            systems.len()
        ),
    }
}

// 2 -------------------------------------------------------------------------

/// Lattice system from the space-group number alone.
fn lattice_system_of(sg: u16) -> LatticeSystem {
    const RHOMBOHEDRAL: [u16; 7] = [146, 148, 155, 160, 161, 166, 167];
    match sg {
        1..=2 => LatticeSystem::Triclinic,
        3..=15 => LatticeSystem::Monoclinic,
        16..=74 => LatticeSystem::Orthorhombic,
        75..=142 => LatticeSystem::Tetragonal,
        143..=167 if RHOMBOHEDRAL.contains(&sg) => LatticeSystem::Rhombohedral,
        143..=194 => LatticeSystem::Hexagonal,
        _ => LatticeSystem::Cubic,
    }
}

/// Tied parameter groups and fixed angles (degrees) of each lattice system.
fn lattice_rules(ls: LatticeSystem) -> (Vec<Vec<usize>>, Vec<(usize, f64)>) {
    let right = vec![(3, 90.0), (4, 90.0), (5, 90.0)];
    match ls {
        LatticeSystem::Cubic => (vec![vec![0, 1, 2]], right),
        LatticeSystem::Tetragonal => (vec![vec![0, 1]], right),
        LatticeSystem::Orthorhombic => (vec![], right),
        LatticeSystem::Hexagonal => (vec![vec![0, 1]], vec![(3, 90.0), (4, 90.0), (5, 120.0)]),
        LatticeSystem::Rhombohedral => (vec![vec![0, 1, 2], vec![3, 4, 5]], vec![]),
        LatticeSystem::Monoclinic => (vec![], vec![(3, 90.0), (5, 90.0)]),
        LatticeSystem::Triclinic => (vec![], vec![]),
    }
}

fn reachable(mults: &[u32], n: u32) -> bool {
    let mut ok = vec![false; n as usize + 1];
    ok[0] = true;
    for s in 1..=n as usize {
        ok[s] = mults.iter().any(|&m| m as usize <= s && ok[s - m as usize]);
    }
    ok[n as usize]
}

fn can_be_neutral(comp: &BTreeMap<String, u32>) -> bool {
    let mut sums = BTreeSet::from([0i32]);
    for (sym, &k) in comp {
        let states = &tables().element(sym).unwrap().oxidation_states;
        for _ in 0..k {
            sums = sums
                .iter()
                .flat_map(|s| states.iter().map(move |q| s + q))
                .collect();
        }
    }
    sums.contains(&0)
}

/// Every violated constraint of a terminal state, checked from the raw
/// tables without the environment's own validator.
fn violations(env: &CrystalEnv, s: &CrystalState, rec: &CrystalRecord) -> Vec<String> {
    let cfg = env.config();
    let mut out = Vec::new();
    let sg = rec.space_group;
    let row = &tables().space_groups()[sg as usize - 1];
    if !cfg.space_groups.contains(&sg) {
        out.push(format!("space group {sg} not allowed"));
    }
    if row.crystal_lattice_system != rec.crystal_lattice_system
        || row.point_symmetry != rec.point_symmetry
    {
        out.push("categories disagree".into());
    }
    let total: u32 = rec.composition.values().sum();
    if rec.composition.is_empty()
        || total > cfg.max_atoms
        || rec.composition.len() as u32 > cfg.max_elements
    {
        out.push("composition size".into());
    }
    for (sym, &k) in &rec.composition {
        if k == 0 || k > cfg.max_atoms_per_element || !reachable(&row.wyckoff_multiplicities, k) {
            out.push(format!("{sym}{k} incompatible"));
        }
    }
    if !can_be_neutral(&rec.composition) {
        out.push("not neutral".into());
    }
    let x = s.lattice.coords.unwrap_or([f64::NAN; 6]);
    let (ties, fixed) = lattice_rules(lattice_system_of(sg));
    for g in &ties {
        if g.iter().any(|&m| (x[m] - x[g[0]]).abs() > 1e-12) {
            out.push(format!("tie {g:?} broken"));
        }
    }
    let ranges = LatticeRanges {
        length: cfg.length_range,
        angle: cfg.angle_range,
    };
    let phys = [
        rec.lattice.a,
        rec.lattice.b,
        rec.lattice.c,
        rec.lattice.alpha,
        rec.lattice.beta,
        rec.lattice.gamma,
    ];
    for &(i, deg) in &fixed {
        let pin = (deg - cfg.angle_range[0]) / (cfg.angle_range[1] - cfg.angle_range[0]);
        if (x[i] - pin).abs() > 1e-12 || phys[i] != deg {
            out.push(format!("angle {i} not fixed at {deg}"));
        }
    }
    for i in 0..6 {
        if !(0.0..=1.0).contains(&x[i])
            || (ranges.to_physical(i, x[i]) - phys[i]).abs() > 1e-9 * phys[i].abs().max(1.0)
        {
            out.push(format!("parameter {i} inconsistent"));
        }
    }
    out
}

fn mask_soundness() -> Outcome {
    let t0 = Instant::now();
    let env = CrystalEnv::new(EnvConfig::default()).unwrap();
    let mut bad = 0;
    let mut first = String::new();
    let mut systems = BTreeSet::new();
    let mut check = |s: &CrystalState| {
        let rec = env.terminal_record(s).unwrap();
        systems.insert(rec.crystal_lattice_system);
        let v = violations(&env, s, &rec);
        if !v.is_empty() {
            if bad == 0 {
                first = v.join("; ");
            }
            bad += 1;
        }
    };
    // uniform random actions
    for i in 0..10_000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
        let (states, _) = env.random_trajectory(&mut rng).unwrap();
        check(states.last().unwrap());
    }
    // a policy with random weights
    let mut learner = Learner::new(
        &env,
        PolicyConfig {
            hidden_layers: 1,
            hidden_units: 16,
            mixture_components: 2,
        },
        5,
    )
    .unwrap();
    jitter(&mut learner, 6, 0.5);
    for i in 0..10_000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(50_000 + i);
        let tr = rollout(&learner.policy, &env, &Surrogate, 8.0, 0.0, &mut rng).unwrap();
        check(tr.terminal());
    }
    let secs = t0.elapsed().as_secs_f64();
    Outcome {
        pass: bad == 0 && secs < 120.0,
        detail: format!(
            "{bad} invalid of 20000 terminals ({} crystal-lattice systems seen){}",
            systems.len(),
            if first.is_empty() {
                String::new()
            } else {
                format!(", first: {first}")
            }
        ),
    }
}

// 3 -------------------------------------------------------------------------

/// Flat parameter indices of output-layer biases initialised for a uniform
/// Beta component, i.e. the α and β slots.
fn concentration_slots(m: &Mlp) -> Vec<usize> {
    let last = m.n_layers() - 1;
    let start = m.n_params() - m.output_size();
    let uniform = beta::unsquash(1.0);
    (0..m.output_size())
        .filter(|&j| m.bias(last)[j] == uniform)
        .map(|j| start + j)
        .collect()
}

fn gradient_correctness() -> Outcome {
    let env = CrystalEnv::new(EnvConfig {
        elements: vec!["Li".into(), "O".into(), "F".into()],
        space_groups: vec![1, 221],
        max_atoms_per_element: 3,
        max_atoms: 6,
        max_elements: 3,
        ..EnvConfig::default()
    })
    .unwrap();
    let mut l = Learner::new(
        &env,
        PolicyConfig {
            hidden_layers: 1,
            hidden_units: 8,
            mixture_components: 2,
        },
        31,
    )
    .unwrap();
    let fwd_slots = concentration_slots(&l.policy.forward);
    let bwd_slots = concentration_slots(&l.policy.backward);
    jitter(&mut l, 32, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for v in &mut l.log_z {
        *v = rng.gen_range(-0.3..0.3);
    }
    let batch = rollout_batch(&l.policy, &env, &Surrogate, 8.0, 0.5, 34, 0, 24).unwrap();
    let increments = batch
        .iter()
        .flat_map(|t| &t.actions)
        .filter(|a| matches!(a, Action::LpIncrement(_)))
        .count();
    let (_, g) = tb_loss(&l.policy, &l.log_z, &env, &batch).unwrap();
    let nf = l.policy.forward.n_params();
    let nb = l.policy.backward.n_params();

    // 50 concentration parameters on active paths, 50 drawn from everything
    let active = |slots: &[usize], grad: &[f64], offset: usize| -> Vec<usize> {
        slots
            .iter()
            .filter(|&&k| grad[k].abs() > 1e-8)
            .map(|&k| k + offset)
            .collect()
    };
    let mut fwd = active(&fwd_slots, &g.forward, 0);
    let mut bwd = active(&bwd_slots, &g.backward, nf);
    fwd.shuffle(&mut rng);
    bwd.shuffle(&mut rng);
    let mut picks: Vec<usize> = fwd
        .iter()
        .take(30)
        .chain(bwd.iter().take(20))
        .copied()
        .collect();
    let n_conc = picks.len();
    while picks.len() < 100 {
        picks.push(rng.gen_range(0..nf + nb + LOG_Z_WEIGHTS));
    }

    let h = 1e-5;
    let loss_at = |m: &Learner| tb_loss(&m.policy, &m.log_z, &env, &batch).unwrap().0;
    let mut worst: f64 = 0.0;
    for &k in &picks {
        let (mut p, mut q) = (l.clone(), l.clone());
        let analytic = if k < nf {
            p.policy.forward.params[k] += h;
            q.policy.forward.params[k] -= h;
            g.forward[k]
        } else if k < nf + nb {
            p.policy.backward.params[k - nf] += h;
            q.policy.backward.params[k - nf] -= h;
            g.backward[k - nf]
        } else {
            p.log_z[k - nf - nb] += h;
            q.log_z[k - nf - nb] -= h;
            g.log_z[k - nf - nb]
        };
        let fd = (loss_at(&p) - loss_at(&q)) / (2.0 * h);
        worst = worst.max((fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6));
    }
    Outcome {
        pass: worst < 1e-4 && n_conc == 50 && picks.len() == 100,
        detail: format!(
            "max relative error {worst:.2e} < 1e-4 over {} parameters ({n_conc} Beta α/β, {increments} lattice increments in batch)",
            picks.len()
        ),
    }
}

// 4 -------------------------------------------------------------------------

fn discrete_proportionality() -> Outcome {
    let t0 = Instant::now();
    let env = CrystalEnv::new(EnvConfig {
        elements: vec!["Li".into(), "O".into(), "Cl".into()],
        space_groups: vec![221],
        fixed_space_group: Some(221),
        fixed_lattice: Some([5.0, 5.0, 5.0, 90.0, 90.0, 90.0]),
        max_atoms_per_element: 3,
        max_atoms: 9,
        max_elements: 3,
        ..EnvConfig::default()
    })
    .unwrap();
    let exact = exact_distribution_of(&env, &Surrogate, 8.0, 10_000).unwrap();
    let seed = 0;
    let mut l = Learner::new(
        &env,
        PolicyConfig {
            hidden_layers: 2,
            hidden_units: 64,
            mixture_components: 5,
        },
        seed,
    )
    .unwrap();
    let cfg = TrainConfig {
        iterations: 5000,
        lr_policy: 1e-3,
        ..TrainConfig::default()
    };
    gfn::train(&env, &mut l, &cfg, &Surrogate, 8.0, seed, |_, _| Ok(())).unwrap();
    let samples = gfn::sample(&l, &env, &Surrogate, 8.0, seed, 10_000).unwrap();
    let counts: HashMap<CrystalState, usize> = count(
        samples
            .into_iter()
            .map(|t| t.states.into_iter().last().unwrap()),
    );
    let l1 = l1_divergence(&counts, &exact).unwrap();
    let gap = l.log_z() - exact.log_z;
    let secs = t0.elapsed().as_secs_f64();
    Outcome {
        pass: !env.sg_stage_enabled()
            && !env.lp_stage_enabled()
            && l1 < 0.10
            && gap.abs() < 0.1
            && secs < 300.0,
        detail: format!(
            "{} terminals, L1 {l1:.4} < 0.10, logZ {:.4} vs {:.4} (gap {gap:+.4}, bound 0.1)",
            exact.len(),
            l.log_z(),
            exact.log_z
        ),
    }
}

// 5 -------------------------------------------------------------------------

/// Quadratic well in the free cube coordinate of `a`.
struct Well;

impl EnergyModel for Well {
    fn energy(&self, x: &CrystalRecord) -> crystalflow::Result<f64> {
        let u = LatticeRanges::default().to_cube(0, x.lattice.a);
        Ok(6.0 * (u - 0.3) * (u - 0.3))
    }
}

fn continuous_proportionality() -> Outcome {
    let t0 = Instant::now();
    let env = CrystalEnv::new(EnvConfig {
        space_groups: vec![225],
        fixed_space_group: Some(225),
        fixed_composition: Some(composition(&[("Li", 4), ("F", 4)])),
        ..EnvConfig::default()
    })
    .unwrap();
    let seed = 0;
    let mut l = Learner::new(
        &env,
        PolicyConfig {
            hidden_layers: 2,
            hidden_units: 64,
            mixture_components: 5,
        },
        seed,
    )
    .unwrap();
    let cfg = TrainConfig {
        iterations: 10_000,
        lr_policy: 5e-4,
        ..TrainConfig::default()
    };
    gfn::train(&env, &mut l, &cfg, &Well, 1.0, seed, |_, _| Ok(())).unwrap();
    let samples = gfn::sample(&l, &env, &Well, 1.0, seed, 10_000).unwrap();
    let xs: Vec<f64> = samples
        .iter()
        .map(|t| t.terminal().lattice.coords.unwrap()[0])
        .collect();
    let hist = histogram_unit(&xs, 10).unwrap();
    let exact = binned_exact_marginal(|u| -6.0 * (u - 0.3) * (u - 0.3), 10, 64).unwrap();
    let l1 = l1_between(&hist, &exact);
    let secs = t0.elapsed().as_secs_f64();
    let lp_only = !env.sg_stage_enabled() && !env.comp_stage_enabled() && env.lp_stage_enabled();
    Outcome {
        pass: lp_only && l1 < 0.15 && secs < 300.0,
        detail: format!(
            "10-bin L1 {l1:.4} < 0.15 after {} iterations",
            cfg.iterations
        ),
    }
}

// 6 -------------------------------------------------------------------------

/// Map of the unit interval onto itself that flattens both ends, so Beta
/// densities with small concentrations become smooth integrands.
fn stretch(t: f64) -> (f64, f64) {
    const P: i32 = 12;
    let (a, b) = (t.powi(P), (1.0 - t).powi(P));
    let d = P as f64 * t.powi(P - 1) * (1.0 - t).powi(P - 1) / ((a + b) * (a + b));
    (a / (a + b), d)
}

/// Total mass of the increment density at a placed state, by midpoint
/// quadrature over every free dimension (at most two).
fn increment_mass(env: &CrystalEnv, learner: &Learner, s: &CrystalState, out: &[f64]) -> f64 {
    let mask = env.valid_actions(s).unwrap();
    let x = s.lattice.coords.unwrap();
    let c = env.constraint(s).unwrap();
    let reps = c.free_representatives();
    let delta = env.min_increment();
    let n = if reps.len() == 1 { 4000 } else { 600 };
    let nodes: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let (r, d) = stretch((i as f64 + 0.5) / n as f64);
            (r, d / n as f64)
        })
        .collect();
    let mut total = 0.0;
    let mut idx = vec![0usize; reps.len()];
    loop {
        let mut u = [0.0; 6];
        let mut w = 1.0;
        for (k, &r) in reps.iter().enumerate() {
            let span = 1.0 - x[r] - delta;
            let (rho, d) = nodes[idx[k]];
            for &m in &c.group_of(r).members {
                u[m] = delta + rho * span;
            }
            w *= d * span;
        }
        let lp = learner
            .policy
            .forward_log_prob(env, s, &mask, out, &Action::LpIncrement(u), None)
            .unwrap();
        total += w * lp.exp();
        let mut k = 0;
        loop {
            if k == idx.len() {
                return total;
            }
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

fn placed_states(env: &CrystalEnv, seed: u64, n: usize) -> Vec<CrystalState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < n {
        let (states, _) = env.random_trajectory(&mut rng).unwrap();
        for s in states {
            if s.lattice.coords.is_some()
                && !s.is_done()
                && env.valid_actions(&s).unwrap().lp_increment
            {
                out.push(s);
            }
        }
    }
    out.truncate(n);
    out
}

fn continuous_calibration() -> Outcome {
    let envs: Vec<CrystalEnv> = [
        (225, ("Li", 4), ("F", 4)),
        (123, ("Li", 1), ("F", 1)),
        (1, ("Li", 1), ("F", 1)),
    ]
    .into_iter()
    .map(|(sg, a, b)| {
        CrystalEnv::new(EnvConfig {
            space_groups: vec![sg],
            fixed_space_group: Some(sg),
            fixed_composition: Some(composition(&[a, b])),
            ..EnvConfig::default()
        })
        .unwrap()
    })
    .collect();
    let policy = PolicyConfig {
        hidden_layers: 1,
        hidden_units: 16,
        mixture_components: 3,
    };

    // quadrature against the continue probability, for 1 and 2 free dimensions
    let mut worst: f64 = 0.0;
    let mut integrals = 0;
    for (e, env) in envs.iter().take(2).enumerate() {
        let fresh = Learner::new(env, policy.clone(), 40 + e as u64).unwrap();
        let mut tuned = fresh.clone();
        jitter(&mut tuned, 50 + e as u64, 0.3);
        for (i, s) in placed_states(env, 60 + e as u64, 4).iter().enumerate() {
            let learner = if i == 0 { &fresh } else { &tuned };
            let out = learner.policy.forward.forward(&encode(env, s));
            let want = 1.0 - learner.policy.stop_probability(&out);
            worst = worst.max((increment_mass(env, learner, s, &out) - want).abs());
            integrals += 1;
        }
    }

    // delta respected by every drawn increment, from the policy and uniform exploration
    let delta = envs[0].min_increment();
    let (mut draws, mut violations, mut state_no) = (0usize, 0usize, 0u64);
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    'outer: for round in 0.. {
        for (e, env) in envs.iter().enumerate() {
            let mut learner = Learner::new(env, policy.clone(), 80 + e as u64).unwrap();
            jitter(&mut learner, 90 + round, 0.5);
            for s in placed_states(env, 100 + state_no, 20) {
                state_no += 1;
                let mask = env.valid_actions(&s).unwrap();
                let out = learner.policy.forward.forward(&encode(env, &s));
                let x = s.lattice.coords.unwrap();
                let reps = env.constraint(&s).unwrap().free_representatives();
                for j in 0..1000 {
                    let a = if j % 2 == 0 {
                        learner
                            .policy
                            .sample(env, &s, &mask, &out, &mut rng)
                            .unwrap()
                    } else {
                        env.uniform_action(&s, &mask, &mut rng).unwrap()
                    };
                    if let Action::LpIncrement(u) = a {
                        draws += 1;
                        if reps.iter().any(|&r| u[r] < delta || x[r] + u[r] > 1.0)
                            || env.step(&s, &a).is_err()
                        {
                            violations += 1;
                        }
                    }
                }
                if draws >= 1_000_000 {
                    break 'outer;
                }
            }
        }
    }
    Outcome {
        pass: worst < 1e-3 && integrals == 8 && violations == 0 && draws >= 1_000_000,
        detail: format!(
            "max |∫ density − continue mass| {worst:.2e} < 1e-3 over {integrals} states; \
             {violations} δ violations in {draws} increments"
        ),
    }
}

// 7 -------------------------------------------------------------------------

fn proxy_architecture() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mu = [6.0, 7.0, 8.0, 90.0, 95.0, 100.0];
    let sigma = [2.0, 2.5, 3.0, 10.0, 12.0, 15.0];
    let model = ProxyModel::random(ProxyHyperparameters::default(), mu, sigma, &mut rng).unwrap();

    // shapes: property projection 8→64; embeddings of Z (119 rows × 128),
    // period (8 × 256), group (19 × 16) and space group (230 × 128);
    // composition layer 464→256; lattice layer 6→284; then 668→576,
    // three 576→576 and 576→1, all dense layers with bias
    let dense = |i: usize, o: usize| i * o + o;
    let expected = 8 * 64
        + 119 * 128
        + 8 * 256
        + 19 * 16
        + 230 * 128
        + dense(64 + 128 + 256 + 16, 256)
        + dense(6, 284)
        + dense(256 + 128 + 284, 576)
        + 3 * dense(576, 576)
        + dense(576, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("proxy.safetensors");
    model.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let header = safetensors::SafeTensors::deserialize(&bytes).unwrap();
    let stored: usize = header
        .tensors()
        .iter()
        .filter(|(name, _)| !name.starts_with("lattice_"))
        .map(|(_, v)| v.shape().iter().product::<usize>())
        .sum();
    let count_ok = stored == expected && model.parameter_count() == expected;

    let symbols: Vec<&str> = tables()
        .elements()
        .iter()
        .map(|e| e.symbol.as_str())
        .collect();
    let mut order_breaks = 0;
    for _ in 0..1000 {
        let k = rng.gen_range(1..=5);
        let mut comp: Vec<(&str, u32)> = symbols
            .choose_multiple(&mut rng, k)
            .map(|&s| (s, rng.gen_range(1..=16)))
            .collect();
        let sg = rng.gen_range(1..=230);
        let lattice: [f64; 6] = std::array::from_fn(|i| {
            if i < 3 {
                rng.gen_range(1.0..30.0)
            } else {
                rng.gen_range(50.0..150.0)
            }
        });
        let e0 = model.energy_of(&comp, sg, &lattice).unwrap();
        comp.shuffle(&mut rng);
        let e1 = model.energy_of(&comp, sg, &lattice).unwrap();
        if e0.to_bits() != e1.to_bits() {
            order_breaks += 1;
        }
    }
    let z = model.standardize(&mu);
    let centred = z.iter().all(|v| v.to_bits() == 0.0f64.to_bits());
    Outcome {
        pass: count_ok && order_breaks == 0 && centred,
        detail: format!(
            "{stored} parameters in the weight file, {expected} from the shapes; \
             {order_breaks} order-dependent energies of 1000; standardised mean {z:?}"
        ),
    }
}

// 8 -------------------------------------------------------------------------

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        env: EnvConfig {
            elements: vec!["Li".into(), "O".into(), "F".into()],
            space_groups: vec![1, 221],
            max_atoms_per_element: 3,
            max_atoms: 6,
            max_elements: 3,
            ..EnvConfig::default()
        },
        policy: PolicyConfig {
            hidden_layers: 2,
            hidden_units: 32,
            mixture_components: 3,
        },
        train: TrainConfig {
            iterations: 60,
            trajectories_per_iter: 8,
            ..TrainConfig::default()
        },
        seed: 13,
        ..RunConfig::default()
    };
    let mut files = Vec::new();
    for (run, threads) in [("a", "1"), ("b", "3")] {
        let mut c = cfg.clone();
        c.output_dir = dir.path().join(run);
        std::env::set_var(THREADS_VAR, threads);
        let run = cli::Run::from_config(c).unwrap();
        cli::train(&run).unwrap();
        let log = std::fs::read(run.out().join(TRAIN_LOG_FILE)).unwrap();
        let ckpt = std::fs::read(run.out().join(cli::CHECKPOINT_FILE)).unwrap();
        files.push((log, ckpt));
    }
    std::env::remove_var(THREADS_VAR);
    let rows = files[0].0.iter().filter(|&&b| b == b'\n').count();
    let same_log = files[0].0 == files[1].0;
    let same_ckpt = files[0].1 == files[1].1;
    Outcome {
        pass: same_log && same_ckpt && rows == 61,
        detail: format!(
            "training logs ({rows} lines) identical: {same_log}; checkpoints identical: {same_ckpt}; \
             threads 1 vs 3"
        ),
    }
}

// 9 -------------------------------------------------------------------------

fn reward_transform() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut failures = 0;
    for _ in 0..100_000 {
        let t = rng.gen_range(0.5..50.0);
        let e1: f64 = rng.gen_range(-20.0..20.0);
        let e2: f64 = rng.gen_range(-20.0..20.0);
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let (r_lo, r_hi) = (reward(lo, t).unwrap(), reward(hi, t).unwrap());
        let positive = r_lo > 0.0 && r_hi > 0.0;
        let monotone = r_lo >= r_hi && log_reward(lo, t).unwrap() >= log_reward(hi, t).unwrap();
        let strict = hi - lo < 1e-9 || r_lo > r_hi;
        if !(positive && monotone && strict) {
            failures += 1;
        }
    }
    let r = reward(-3.1, 8.0).unwrap();
    let err = (r - 0.3875f64.exp()).abs();
    Outcome {
        pass: failures == 0 && err <= 1e-12,
        detail: format!(
            "{failures} failing pairs of 100000; |R(−3.1, 8) − e^0.3875| = {err:.1e} ≤ 1e-12"
        ),
    }
}
