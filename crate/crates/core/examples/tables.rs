//! Query the embedded crystallographic tables.
//!
//! ```text
//! cargo run --example tables
//! ```

use crystalflow::symtab::{tables, CrystalLatticeSystem, PointSymmetry};

fn main() -> crystalflow::Result<()> {
    let t = tables();

    println!("space groups per crystal-lattice system:");
    for cls in CrystalLatticeSystem::ALL {
        let groups = t.space_groups_matching(Some(cls), None);
        println!("  {:<22} {:>3}", cls.to_string(), groups.len());
    }

    let ncs = t.space_groups_matching(None, Some(PointSymmetry::NonCentrosymmetric));
    let (systems, _) = t.compatible_categories(Some(PointSymmetry::NonCentrosymmetric), None);
    let names: Vec<String> = systems.iter().map(|c| c.to_string()).collect();
    println!(
        "\nnon-centrosymmetric: {} groups across {}",
        ncs.len(),
        names.join(", ")
    );

    let sg = t.space_group(230)?;
    println!(
        "\n{} ({}) multiplicities {:?}",
        sg.number, sg.symbol, sg.wyckoff_multiplicities
    );
    let counts: Vec<u32> = (1..=64).filter(|&n| sg.count_compatible(n)).collect();
    println!("admissible counts up to 64: {counts:?}");

    let c = t.lattice_constraint(166)?;
    println!(
        "\nspace group 166 lattice: {} free dims, tied lengths {:?}",
        c.n_free(),
        c.tied_length_groups()
    );

    for (syms, counts) in [
        (["Li", "O"], [2, 1]),
        (["Li", "O"], [1, 1]),
        (["Fe", "O"], [3, 4]),
    ] {
        let pairs: Vec<(&str, u32)> = syms.iter().copied().zip(counts).collect();
        println!(
            "{pairs:?} can be neutral: {}",
            t.neutrality_feasible(&pairs)?
        );
    }
    Ok(())
}
