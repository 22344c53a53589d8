//! Learns a monotone function of precision vectors with dominance pairs
//! attached as group constraints.

use ldf::constraint::StepSchedule;
use ldf::domains::monotone::{generate_monotone_dataset, mae, monotone_groups, vc_smvc};
use ldf::nn::{LossKind, MlpModel, OutputActivation, Predictor};
use ldf::trainer::{train_grouped, Regime, TrainConfig};

fn main() -> ldf::Result<()> {
    let train = generate_monotone_dataset(0, 150, 3)?;
    let test = generate_monotone_dataset(1, 300, 3)?;
    let data = train.to_dataset()?;
    let test_data = test.to_dataset()?;
    let groups = monotone_groups(train.len(), &train.pairs, 1, 0)?;
    println!("{} training pairs, {} test pairs", train.pairs.len(), test.pairs.len());

    for regime in [Regime::Baseline, Regime::Ldf] {
        let mut model = MlpModel::new(vec![3, 10, 10, 1], OutputActivation::Identity, 0)?;
        let cfg = TrainConfig {
            epochs: 100,
            regime,
            t: StepSchedule::Constant(1e-3),
            loss: LossKind::Mae,
            ..TrainConfig::default()
        };
        train_grouped(&data, &groups, &[], &mut model, &cfg)?;
        let preds: Vec<f64> = test_data
            .samples
            .iter()
            .map(|s| model.predict(&s.input).map(|p| p[0]))
            .collect::<ldf::Result<_>>()?;
        let (vc, smvc) = vc_smvc(&preds, &test.pairs);
        println!(
            "{:<6} MAE {:.4}  VC {vc:>4}  SMVC {smvc:.4}",
            regime.label(),
            mae(&preds, &test.y)
        );
    }
    Ok(())
}
