//! Disparate-impact reduction on synthetic biased data, driven through the
//! experiment runner.

use ldf::report::{markdown_table, run_experiment, ExperimentConfig};

fn main() -> ldf::Result<()> {
    let cfg = ExperimentConfig::from_json(
        r#"{
        "name": "fairness-demo", "domain": "fairness",
        "source": {"kind": "synthetic", "samples": 3000}, "data_seed": 0, "batch": 64,
        "regimes": ["baseline", "ldf"], "seeds": [0, 1],
        "model": {"hidden": [10, 10]},
        "train": {"epochs": 40, "lr": 0.001, "s": 0.0001, "t": 0.01, "loss": "bce"}
    }"#,
    )?;
    let report = run_experiment(&cfg, None)?;
    print!("{}", markdown_table(&report));
    Ok(())
}
