//! Build a randomly initialized proxy, round-trip it through a weight file and
//! score a crystal with it.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crystalflow::record::{CrystalRecord, LatticeRecord};
use crystalflow::reward::{reward, EnergyModel, ProxyHyperparameters, ProxyModel, Surrogate};
use crystalflow::symtab::{CrystalLatticeSystem, PointSymmetry};

fn main() -> crystalflow::Result<()> {
    let hyper = ProxyHyperparameters::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mu = [5.0, 5.0, 5.0, 90.0, 90.0, 90.0];
    let sigma = [2.0, 2.0, 2.0, 15.0, 15.0, 15.0];
    let model = ProxyModel::random(hyper.clone(), mu, sigma, &mut rng)?;
    println!("proxy parameters: {}", model.parameter_count());

    let dir = std::env::temp_dir().join("crystalflow-proxy-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("proxy.safetensors");
    model.save(&path)?;
    let loaded = ProxyModel::load(&path)?;

    let x = CrystalRecord {
        space_group: 225,
        crystal_lattice_system: CrystalLatticeSystem::Cubic,
        point_symmetry: PointSymmetry::Centrosymmetric,
        composition: BTreeMap::from([("Mg".to_string(), 4), ("O".to_string(), 4)]),
        lattice: LatticeRecord {
            a: 4.21,
            b: 4.21,
            c: 4.21,
            alpha: 90.0,
            beta: 90.0,
            gamma: 90.0,
        },
    };
    let e = loaded.energy(&x)?;
    assert_eq!(e.to_bits(), model.energy(&x)?.to_bits());
    println!(
        "random proxy: {e:.4} eV/atom, reward at T=8: {:.4}",
        reward(e, 8.0)?
    );
    let s = Surrogate.energy(&x)?;
    println!(
        "surrogate:    {s:.4} eV/atom, reward at T=8: {:.4}",
        reward(s, 8.0)?
    );
    Ok(())
}
