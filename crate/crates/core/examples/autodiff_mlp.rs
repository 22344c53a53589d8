//! Gradients on the tape, then a small perceptron fitted to `sin(3x)`.

use ldf::autodiff::Tape;
use ldf::data::{Dataset, Sample};
use ldf::nn::{LossKind, MlpModel, OutputActivation, Predictor};
use ldf::trainer::{train_per_sample, Regime, TrainConfig};

fn main() -> ldf::Result<()> {
    let mut t = Tape::new();
    let x = t.param(0.5);
    let y = t.param(2.0);
    let xy = t.mul(x, y);
    let s = t.sin(xy);
    let f = t.add(s, x);
    let g = t.backward(f)?;
    println!("f = sin(xy) + x at (0.5, 2): {:.6}", t.value(f));
    println!("df/dx = {:.6} (expect {:.6})", g.param(0), 2.0 * 1.0f64.cos() + 1.0);
    println!("df/dy = {:.6} (expect {:.6})", g.param(1), 0.5 * 1.0f64.cos());

    let samples = (0..64)
        .map(|i| {
            let x = -1.0 + 2.0 * f64::from(i) / 63.0;
            Sample::new(vec![x], vec![(3.0 * x).sin()], vec![])
        })
        .collect();
    let data = Dataset::new(samples)?;
    let mut model = MlpModel::new(vec![1, 32, 32, 1], OutputActivation::Identity, 0)?;
    let cfg = TrainConfig {
        epochs: 300,
        lr: 3e-3,
        regime: Regime::Baseline,
        loss: LossKind::Mse,
        ..TrainConfig::default()
    };
    let trace = train_per_sample(&data, &mut model, &[], &cfg)?;
    for r in trace.records.iter().step_by(60).chain(trace.last()) {
        println!("epoch {:>3}  mse {:.2e}", r.epoch, r.loss);
    }
    for x in [-0.8, 0.0, 0.6] {
        println!(
            "M({x:+.1}) = {:+.4}  sin(3x) = {:+.4}",
            model.predict(&[x])?[0],
            (3.0 * x).sin()
        );
    }
    Ok(())
}
