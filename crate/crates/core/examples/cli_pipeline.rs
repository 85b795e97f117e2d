//! The train → sample → eval pipeline the binary runs, driven from a JSON config.

use crystalflow::cli::{self, Run, RunConfig, CHECKPOINT_FILE};

fn main() -> crystalflow::Result<()> {
    let out = std::env::temp_dir().join("crystalflow-pipeline-example");
    let config = RunConfig::from_json(&format!(
        r#"{{
            "env": {{ "elements": ["Li", "O", "F"], "space_groups": [1, 2, 221], "max_atoms": 8 }},
            "policy": {{ "hidden_layers": 2, "hidden_units": 32 }},
            "train": {{ "iterations": 50 }},
            "output_dir": {:?},
            "seed": 5
        }}"#,
        out
    ))?;
    let run = Run::from_config(config)?;
    let rows = cli::train(&run)?;
    println!(
        "trained {} iterations, final log Z {:.4}",
        rows.len(),
        rows.last().map_or(0.0, |r| r.log_z)
    );
    let samples = cli::sample(&run, &out.join(CHECKPOINT_FILE), 500)?;
    let report = cli::eval(&run, &samples)?;
    println!(
        "median energy {:.3}, outputs in {}",
        report.energy.median,
        out.display()
    );
    Ok(())
}
