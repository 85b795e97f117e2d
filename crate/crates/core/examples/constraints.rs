//! Walk the environment by hand and watch the masks react.

use crystalflow::env::{Action, CrystalEnv, EnvConfig};
use crystalflow::symtab::{CrystalLatticeSystem, PointSymmetry};

fn show(env: &CrystalEnv, s: &crystalflow::env::CrystalState) -> crystalflow::Result<()> {
    let mask = env.valid_actions(s)?;
    let space = env.action_space();
    let valid: Vec<String> = (0..mask.discrete.len())
        .filter(|&i| mask.discrete[i])
        .map(|i| space.action(i).to_string())
        .collect();
    let head = valid.iter().take(8).cloned().collect::<Vec<_>>().join(", ");
    println!(
        "  {:?}: {} valid [{head}{}]",
        s.stage,
        valid.len(),
        if valid.len() > 8 { ", ..." } else { "" }
    );
    Ok(())
}

fn main() -> crystalflow::Result<()> {
    let env = CrystalEnv::new(EnvConfig::default())?;
    let mut s = env.initial_state();
    println!("fresh state");
    show(&env, &s)?;

    s = env.step(&s, &Action::SetPs(PointSymmetry::NonCentrosymmetric))?;
    println!("after choosing non-centrosymmetric");
    show(&env, &s)?;

    s = env.step(&s, &Action::SetCls(CrystalLatticeSystem::Cubic))?;
    println!("after choosing cubic");
    show(&env, &s)?;

    // the space-group choice back-fills nothing here; both categories are set
    let sg = env
        .whitelist()
        .iter()
        .copied()
        .find(|&n| env.step(&s, &Action::SetSg(n)).is_ok())
        .expect("some group");
    s = env.step(&s, &Action::SetSg(sg))?;
    s = env.step(&s, &Action::SgStop)?;
    println!("space group {sg}; composition stage");
    show(&env, &s)?;

    let li = env
        .elements()
        .iter()
        .position(|e| e.symbol == "Li")
        .expect("Li in vocabulary");
    let k = (1..=16)
        .find(|&k| env.count_allowed(sg, k))
        .expect("some count");
    s = env.step(
        &s,
        &Action::AddAtoms {
            element: li,
            count: k,
        },
    )?;
    let stop = env.valid_actions(&s)?.discrete[env.action_space().comp_stop()];
    println!("{k} Li added; CompStop valid: {stop} (no anion yet)");

    let parents = env.parent_transitions(&s)?;
    println!(
        "{} parent(s): {:?}",
        parents.discrete.len(),
        parents
            .discrete
            .iter()
            .map(|p| p.1.to_string())
            .collect::<Vec<_>>()
    );
    Ok(())
}
