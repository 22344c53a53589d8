//! Trains the same network on power-flow data with and without learned
//! multipliers and compares errors, violations and final multipliers.

use ldf::constraint::StepSchedule;
use ldf::domains::fixtures::opf_mini;
use ldf::domains::opf::{opf_problem, opf_samples, opf_terms, OPF_CLASSES};
use ldf::nn::{MlpModel, OutputActivation};
use ldf::oracle::generate_dataset;
use ldf::trainer::{evaluate, train_per_sample, Regime, TrainConfig};

fn main() -> ldf::Result<()> {
    let inst = opf_mini();
    let labels = generate_dataset(&opf_problem(&inst)?, 150, 0.2, 1)?;
    let data = opf_samples(&inst, &labels.points)?;
    let train = data.subset(&(0..120).collect::<Vec<_>>());
    let test = data.subset(&(120..150).collect::<Vec<_>>());
    let terms = opf_terms(&inst, true);
    let physical = opf_terms(&inst, false);
    let mut mean = vec![0.0; inst.output_dim()];
    for s in &train.samples {
        for (m, t) in mean.iter_mut().zip(&s.target) {
            *m += t / train.len() as f64;
        }
    }

    for regime in [Regime::Baseline, Regime::Ldf] {
        let mut model = MlpModel::new(
            vec![train.input_dim(), 32, 32, inst.output_dim()],
            OutputActivation::Identity,
            0,
        )?;
        model.output_bias_mut().copy_from_slice(&mean);
        let cfg = TrainConfig {
            epochs: 150,
            regime,
            s: StepSchedule::Constant(1e-4),
            ..TrainConfig::default()
        };
        let trace = train_per_sample(&train, &mut model, &terms, &cfg)?;
        let eval = evaluate(&model, &test, &physical, &[], &inst.output_blocks())?;
        println!("{} ({regime})", regime.label());
        for b in &eval.blocks {
            println!("  err_{:<6} {:.3}%", b.name, b.error);
        }
        println!("  violation {:.4e}", eval.total_violation());
        let last = trace.last().expect("at least one epoch");
        let lambda: Vec<String> = OPF_CLASSES
            .iter()
            .zip(&last.lambda)
            .map(|(c, l)| format!("{c}={l:.3}"))
            .collect();
        println!("  lambda {}", lambda.join(" "));
    }
    Ok(())
}
