//! Sample from an untrained policy and summarize the batch: the baseline
//! every trained sampler is compared against.

use crystalflow::env::{CrystalEnv, EnvConfig};
use crystalflow::gfn::{sample, Learner};
use crystalflow::metrics::{diversity_report, energy_report, topk, Histogram};
use crystalflow::policy::PolicyConfig;
use crystalflow::reward::Surrogate;

fn main() -> crystalflow::Result<()> {
    let env = CrystalEnv::new(EnvConfig::default())?;
    let policy = PolicyConfig {
        hidden_layers: 2,
        hidden_units: 64,
        mixture_components: 5,
    };
    let learner = Learner::new(&env, policy, 11)?;
    let samples: Vec<_> = sample(&learner, &env, &Surrogate, 8.0, 11, 2000)?
        .into_iter()
        .map(|t| (t.record, t.energy))
        .collect();

    let e = energy_report(
        &samples,
        &[-2.0, 0.0],
        &Histogram::uniform_edges(-6.0, 4.0, 20),
    )?;
    println!(
        "median {:.3}  mean {:.3}  range [{:.3}, {:.3}]",
        e.median, e.mean, e.min, e.max
    );
    for t in &e.fraction_below {
        println!("  below {:>5.1}: {:.3}", t.threshold, t.fraction);
    }

    let d = diversity_report(&samples, &env.config().elements, env.whitelist())?;
    println!(
        "space groups {}/{}, crystal-lattice systems {}/{}, point symmetries {}/{}",
        d.space_group_coverage.observed,
        d.space_group_coverage.configured,
        d.crystal_lattice_system_coverage.observed,
        d.crystal_lattice_system_coverage.configured,
        d.point_symmetry_coverage.observed,
        d.point_symmetry_coverage.configured,
    );
    println!("element prevalence (atoms / crystals):");
    for (el, n) in &d.stoichiometric_prevalence {
        println!("  {el:<3} {n:>6} / {:>5}", d.binary_prevalence[el]);
    }

    for (x, e) in topk(&samples, 3)? {
        println!("{e:.3}  sg {:>3}  {:?}", x.space_group, x.composition);
    }
    Ok(())
}
