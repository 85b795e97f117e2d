//! Train on a configuration small enough to enumerate and compare the
//! sampler with the exact target distribution.
//!
//! ```text
//! CRYSTALFLOW_THREADS=1 cargo run --release --example train_tiny
//! ```

use crystalflow::env::{CrystalEnv, EnvConfig};
use crystalflow::gfn::{sample, train, Learner, TrainConfig};
use crystalflow::oracle::{count, exact_distribution_of, l1_divergence};
use crystalflow::policy::PolicyConfig;
use crystalflow::reward::Surrogate;

fn main() -> crystalflow::Result<()> {
    let env = CrystalEnv::new(EnvConfig {
        elements: vec!["Li".into(), "O".into(), "Cl".into()],
        space_groups: vec![221],
        fixed_space_group: Some(221),
        fixed_lattice: Some([5.0, 5.0, 5.0, 90.0, 90.0, 90.0]),
        max_atoms_per_element: 3,
        max_atoms: 9,
        max_elements: 3,
        ..EnvConfig::default()
    })?;
    let temperature = 8.0;
    let exact = exact_distribution_of(&env, &Surrogate, temperature, 10_000)?;
    println!(
        "{} terminal compositions, log Z = {:.4}",
        exact.len(),
        exact.log_z
    );

    let seed = 0;
    let policy = PolicyConfig {
        hidden_layers: 2,
        hidden_units: 64,
        mixture_components: 5,
    };
    let mut learner = Learner::new(&env, policy, seed)?;
    let cfg = TrainConfig {
        iterations: 2000,
        lr_policy: 1e-3,
        ..TrainConfig::default()
    };
    train(
        &env,
        &mut learner,
        &cfg,
        &Surrogate,
        temperature,
        seed,
        |row, _| {
            if (row.iteration + 1) % 500 == 0 {
                println!(
                    "iter {:>5}  loss {:.4}  log Z {:.4}",
                    row.iteration + 1,
                    row.loss,
                    row.log_z
                );
            }
            Ok(())
        },
    )?;

    let samples = sample(&learner, &env, &Surrogate, temperature, seed, 10_000)?;
    let counts = count(
        samples
            .into_iter()
            .map(|t| t.states.into_iter().last().expect("non-empty")),
    );
    println!("L1 to R/Z: {:.4}", l1_divergence(&counts, &exact)?);
    Ok(())
}
