//! Uniform random trajectories on the default configuration, re-validated
//! against the constraint tables and scored by the surrogate energy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crystalflow::env::{CrystalEnv, EnvConfig};
use crystalflow::reward::{EnergyModel, Surrogate};

fn main() -> crystalflow::Result<()> {
    let env = CrystalEnv::new(EnvConfig::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 2000;
    let mut invalid = 0;
    let mut longest = 0;
    let mut best: Option<(f64, String)> = None;
    for _ in 0..n {
        let (states, actions) = env.random_trajectory(&mut rng)?;
        let terminal = states.last().expect("non-empty");
        if !env.validate_terminal(terminal).is_empty() {
            invalid += 1;
        }
        longest = longest.max(actions.len());
        let record = env.terminal_record(terminal)?;
        let e = Surrogate.energy(&record)?;
        if best.as_ref().is_none_or(|b| e < b.0) {
            best = Some((e, serde_json::to_string(&record)?));
        }
    }
    println!(
        "{n} rollouts, {invalid} invalid, longest {longest} steps (bound {})",
        env.max_trajectory_length()
    );
    if let Some((e, rec)) = best {
        println!("lowest surrogate energy {e:.3} eV/atom:\n{rec}");
    }
    Ok(())
}
