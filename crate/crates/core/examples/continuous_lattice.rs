//! A lattice-only environment with one free parameter: the cubic edge length.
//! Trains against an analytic energy and compares the sampled histogram with
//! the normalized reward density.

use crystalflow::env::{CrystalEnv, EnvConfig, LatticeRanges};
use crystalflow::gfn::{sample, train, Learner, TrainConfig};
use crystalflow::oracle::{binned_exact_marginal, histogram_unit, l1_between};
use crystalflow::policy::PolicyConfig;
use crystalflow::record::CrystalRecord;
use crystalflow::reward::EnergyModel;

/// Quadratic well in the unit-cube coordinate of `a`.
struct Well;

fn well(u: f64) -> f64 {
    6.0 * (u - 0.3) * (u - 0.3)
}

impl EnergyModel for Well {
    fn energy(&self, x: &CrystalRecord) -> crystalflow::Result<f64> {
        Ok(well(LatticeRanges::default().to_cube(0, x.lattice.a)))
    }
}

fn main() -> crystalflow::Result<()> {
    let env = CrystalEnv::new(EnvConfig {
        space_groups: vec![225],
        fixed_space_group: Some(225),
        fixed_composition: Some(
            [("Li".to_string(), 4), ("F".to_string(), 4)]
                .into_iter()
                .collect(),
        ),
        ..EnvConfig::default()
    })?;
    let seed = 1;
    let policy = PolicyConfig {
        hidden_layers: 2,
        hidden_units: 64,
        mixture_components: 5,
    };
    let mut learner = Learner::new(&env, policy, seed)?;
    let cfg = TrainConfig {
        iterations: 3000,
        lr_policy: 1e-3,
        ..TrainConfig::default()
    };
    train(&env, &mut learner, &cfg, &Well, 1.0, seed, |_, _| Ok(()))?;

    let xs: Vec<f64> = sample(&learner, &env, &Well, 1.0, seed, 10_000)?
        .iter()
        .map(|t| t.terminal().lattice.coords.expect("placed")[0])
        .collect();
    let got = histogram_unit(&xs, 10)?;
    let want = binned_exact_marginal(|u| -well(u), 10, 64)?;
    for (b, (g, w)) in got.iter().zip(&want).enumerate() {
        println!(
            "[{:.1}, {:.1})  sampled {g:.3}  target {w:.3}",
            b as f64 / 10.0,
            (b + 1) as f64 / 10.0
        );
    }
    println!("L1 over bins: {:.4}", l1_between(&got, &want));
    Ok(())
}
