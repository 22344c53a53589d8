//! Training regimes and evaluation.
//!
//! Both trainers share one loop: an epoch is a sequence of units (minibatches
//! or groups); every unit takes one Adam step on its Lagrangian loss, and the
//! multipliers move once at the end of the epoch.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::constraint::{
    class_count, class_violations, group_class_count, group_lagrangian_loss, violation_node, ConstraintTerm,
    GroupConstraint, MultiplierState, StepSchedule,
};
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::nn::{base_loss, AdamState, LossKind, Predictor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Plain loss, multipliers pinned at zero.
    Baseline,
    /// Multipliers pinned at one.
    Fixed,
    /// Multipliers learned by dual ascent.
    Ldf,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::Baseline => "M",
            Regime::Fixed => "M_C",
            Regime::Ldf => "M_C^D",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Baseline => "baseline",
            Regime::Fixed => "fixed",
            Regime::Ldf => "ldf",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// 1 runs the per-sample loop; larger values average the loss over
    /// minibatches.
    pub batch_size: usize,
    pub regime: Regime,
    pub seed: u64,
    /// Step sizes for `λ`.
    pub s: StepSchedule,
    /// Step sizes for `μ`.
    pub t: StepSchedule,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 80,
            lr: 1e-3,
            batch_size: 1,
            regime: Regime::Ldf,
            seed: 0,
            s: StepSchedule::Constant(1e-4),
            t: StepSchedule::Constant(1e-3),
            loss: LossKind::Mse,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.s.validate()?;
        self.t.validate()
    }
}

/// Validation metrics reported by a monitor after each epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub accuracy: Option<f64>,
    pub dt: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean base loss over the samples visited.
    pub loss: f64,
    /// Mean per-sample violation of each `λ` class.
    pub violations: Vec<f64>,
    /// Mean violation of each `μ` class over the group terms visited.
    pub group_violations: Vec<f64>,
    /// Multipliers in force after the epoch's update.
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub accuracy: Option<f64>,
    pub dt: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
}

impl TrainTrace {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// True when every multiplier snapshot is nonnegative and no component
    /// decreases from one epoch to the next.
    pub fn multipliers_monotone(&self) -> bool {
        let nonneg = self
            .records
            .iter()
            .all(|r| r.lambda.iter().chain(&r.mu).all(|&x| x >= 0.0));
        let monotone = self.records.windows(2).all(|w| {
            w[0].lambda.iter().zip(&w[1].lambda).all(|(a, b)| a <= b)
                && w[0].mu.iter().zip(&w[1].mu).all(|(a, b)| a <= b)
        });
        nonneg && monotone
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let (m, q) = self.records.first().map_or((0, 0), |r| (r.lambda.len(), r.mu.len()));
        let mut header = vec!["epoch".to_string(), "loss".to_string()];
        header.extend((0..m).map(|i| format!("violation_{i}")));
        header.extend((0..q).map(|i| format!("group_violation_{i}")));
        header.extend((0..m).map(|i| format!("lambda_{i}")));
        header.extend((0..q).map(|i| format!("mu_{i}")));
        header.push("accuracy".into());
        header.push("dt".into());
        w.write_record(&header)?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            let mut row = vec![r.epoch.to_string(), r.loss.to_string()];
            row.extend(r.violations.iter().map(f64::to_string));
            row.extend(r.group_violations.iter().map(f64::to_string));
            row.extend(r.lambda.iter().map(f64::to_string));
            row.extend(r.mu.iter().map(f64::to_string));
            row.push(opt(r.accuracy));
            row.push(opt(r.dt));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<trace>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Custom per-sample base loss: `(tape, prediction, sample) → loss node`.
pub type SampleLoss<'a> = dyn Fn(&mut Tape, &[Var], &Sample) -> Result<Var> + 'a;

/// Per-epoch validation callback.
pub type Monitor<'a, P> = dyn Fn(&P) -> Result<Validation> + 'a;

/// Optional hooks for the trainers.
pub struct Hooks<'a, P> {
    /// Replaces the configured [`LossKind`].
    pub base_loss: Option<&'a SampleLoss<'a>>,
    /// Called after every epoch.
    pub monitor: Option<&'a Monitor<'a, P>>,
}

impl<P> Default for Hooks<'_, P> {
    fn default() -> Self {
        Hooks {
            base_loss: None,
            monitor: None,
        }
    }
}

/// Per-sample (or minibatch) training with per-sample constraints only.
pub fn train_per_sample<P: Predictor>(
    data: &Dataset,
    model: &mut P,
    terms: &[ConstraintTerm],
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    train_per_sample_with(data, model, terms, cfg, &Hooks::default())
}

pub fn train_per_sample_with<P: Predictor>(
    data: &Dataset,
    model: &mut P,
    terms: &[ConstraintTerm],
    cfg: &TrainConfig,
    hooks: &Hooks<'_, P>,
) -> Result<TrainTrace> {
    if data.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let n = data.len();
    let batch = cfg.batch_size.min(n);
    let units = |rng: &mut ChaCha8Rng| -> Vec<GroupConstraint> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        order
            .chunks(batch)
            .map(|c| {
                let mut members = c.to_vec();
                members.sort_unstable();
                GroupConstraint::new("batch", members)
            })
            .collect()
    };
    train_loop(data, model, terms, class_count(terms), 0, cfg, hooks, units)
}

/// Group-wise training: each epoch visits every group once, in a seeded
/// random order.
pub fn train_grouped<P: Predictor>(
    data: &Dataset,
    groups: &[GroupConstraint],
    terms: &[ConstraintTerm],
    model: &mut P,
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    train_grouped_with(data, groups, terms, model, cfg, &Hooks::default())
}

pub fn train_grouped_with<P: Predictor>(
    data: &Dataset,
    groups: &[GroupConstraint],
    terms: &[ConstraintTerm],
    model: &mut P,
    cfg: &TrainConfig,
    hooks: &Hooks<'_, P>,
) -> Result<TrainTrace> {
    if data.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    if groups.is_empty() {
        return Err(Error::Config("grouped training needs at least one group".into()));
    }
    let mut sorted = Vec::with_capacity(groups.len());
    for g in groups {
        g.validate(data.len())?;
        let mut g = g.clone();
        g.members.sort_unstable();
        sorted.push(g);
    }
    let units = |rng: &mut ChaCha8Rng| -> Vec<GroupConstraint> {
        let mut order = sorted.clone();
        order.shuffle(rng);
        order
    };
    let q = group_class_count(groups);
    train_loop(data, model, terms, class_count(terms), q, cfg, hooks, units)
}

#[allow(clippy::too_many_arguments)]
fn train_loop<P: Predictor>(
    data: &Dataset,
    model: &mut P,
    terms: &[ConstraintTerm],
    classes: usize,
    group_classes: usize,
    cfg: &TrainConfig,
    hooks: &Hooks<'_, P>,
    mut units: impl FnMut(&mut ChaCha8Rng) -> Vec<GroupConstraint>,
) -> Result<TrainTrace> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model.num_params(), cfg.lr);
    let mut state = MultiplierState::new(classes, group_classes, cfg.s.clone(), cfg.t.clone());
    let mut trace = TrainTrace::default();
    let mut tape = Tape::new();
    let samples = &data.samples;

    for epoch in 0..cfg.epochs {
        let (lambda, mu) = match cfg.regime {
            Regime::Baseline => (vec![0.0; classes], vec![0.0; group_classes]),
            Regime::Fixed => (vec![1.0; classes], vec![1.0; group_classes]),
            Regime::Ldf => (state.lambda.clone(), state.mu.clone()),
        };
        let mut viol_sum = vec![0.0; classes];
        let mut group_sum = vec![0.0; group_classes];
        let mut group_count = vec![0usize; group_classes];
        let mut loss_sum = 0.0;
        let mut visited = 0usize;

        for (step, unit) in units(&mut rng).iter().enumerate() {
            tape.reset();
            let params = tape.params(model.params());
            let mut preds: BTreeMap<usize, Vec<Var>> = BTreeMap::new();
            for i in unit.touched() {
                preds.insert(i, model.forward_tape(&mut tape, &params, &samples[i].input)?);
            }
            let mut losses = BTreeMap::new();
            for &i in &unit.members {
                let l = match hooks.base_loss {
                    Some(f) => f(&mut tape, &preds[&i], &samples[i])?,
                    None => base_loss(&mut tape, cfg.loss, &preds[&i], &samples[i].target)?,
                };
                losses.insert(i, l);
            }
            let parts = group_lagrangian_loss(&mut tape, unit, &losses, &preds, samples, terms, &lambda, &mu)?;
            if !tape.value(parts.loss).is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            let grads = tape.backward(parts.loss)?.params();
            adam.step(model.params_mut(), &grads)?;

            loss_sum += parts.base * unit.members.len() as f64;
            visited += unit.members.len();
            for (a, v) in viol_sum.iter_mut().zip(&parts.violations) {
                *a += v;
            }
            for (a, v) in group_sum.iter_mut().zip(&parts.group_violations) {
                *a += v;
            }
            for t in &unit.terms {
                group_count[t.class] += 1;
            }
        }

        if cfg.regime == Regime::Ldf {
            state.update_lambda(epoch, &viol_sum)?;
            state.update_mu(epoch, &group_sum)?;
        }
        let validation = match hooks.monitor {
            Some(f) => f(model)?,
            None => Validation::default(),
        };
        let (lambda, mu) = match cfg.regime {
            Regime::Ldf => (state.lambda.clone(), state.mu.clone()),
            _ => (lambda, mu),
        };
        let denom = visited.max(1) as f64;
        trace.records.push(EpochRecord {
            epoch,
            loss: loss_sum / denom,
            violations: viol_sum.iter().map(|v| v / denom).collect(),
            group_violations: group_sum
                .iter()
                .zip(&group_count)
                .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
                .collect(),
            lambda,
            mu,
            accuracy: validation.accuracy,
            dt: validation.dt,
        });
    }
    Ok(trace)
}

/// Prediction error of one output block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockError {
    pub name: String,
    /// `100·‖ŷ−y‖₁/‖y‖₁`, or the plain `‖ŷ−y‖₁` when `absolute` is set.
    pub error: f64,
    /// Set when `‖y‖₁ = 0` and the ratio is undefined.
    pub absolute: bool,
}

/// Named slice of the output vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputBlock {
    pub name: String,
    pub range: Range<usize>,
}

impl OutputBlock {
    pub fn new(name: impl Into<String>, range: Range<usize>) -> Self {
        OutputBlock {
            name: name.into(),
            range,
        }
    }
}

/// Error percentage over a set of predictions restricted to `range`.
pub fn error_percent(predictions: &[Vec<f64>], targets: &[Vec<f64>], range: Range<usize>) -> (f64, bool) {
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (p, t) in predictions.iter().zip(targets) {
        for k in range.clone() {
            diff += (p[k] - t[k]).abs();
            norm += t[k].abs();
        }
    }
    if norm == 0.0 {
        (diff, true)
    } else {
        (100.0 * diff / norm, false)
    }
}

/// `baseline_err / model_err`; infinite when the model error is zero.
pub fn gain(baseline_err: f64, model_err: f64) -> f64 {
    baseline_err / model_err
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub blocks: Vec<BlockError>,
    /// Mean per-sample violation of each `λ` class.
    pub violations: Vec<f64>,
    /// Mean violation of each `μ` class over the group terms.
    pub group_violations: Vec<f64>,
    pub predictions: Vec<Vec<f64>>,
}

impl Evaluation {
    pub fn total_violation(&self) -> f64 {
        self.violations.iter().sum()
    }
}

pub fn evaluate<P: Predictor>(
    model: &P,
    data: &Dataset,
    terms: &[ConstraintTerm],
    groups: &[GroupConstraint],
    blocks: &[OutputBlock],
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let predictions: Vec<Vec<f64>> = data
        .samples
        .iter()
        .map(|s| model.predict(&s.input))
        .collect::<Result<_>>()?;
    let targets: Vec<Vec<f64>> = data.samples.iter().map(|s| s.target.clone()).collect();
    let blocks = blocks
        .iter()
        .map(|b| {
            if b.range.end > model.output_dim() {
                return Err(Error::InputShape {
                    expected: model.output_dim(),
                    actual: b.range.end,
                });
            }
            let (error, absolute) = error_percent(&predictions, &targets, b.range.clone());
            Ok(BlockError {
                name: b.name.clone(),
                error,
                absolute,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let m = class_count(terms);
    let mut violations = vec![0.0; m];
    for (p, s) in predictions.iter().zip(&data.samples) {
        for (a, v) in violations.iter_mut().zip(class_violations(terms, m, p, s)?) {
            *a += v;
        }
    }
    for v in &mut violations {
        *v /= data.len() as f64;
    }

    let q = group_class_count(groups);
    let mut group_sum = vec![0.0; q];
    let mut group_count = vec![0usize; q];
    for g in groups {
        g.validate(data.len())?;
        for term in &g.terms {
            let mut tape = Tape::new();
            let consts: Vec<Vec<Var>> = term
                .members
                .iter()
                .map(|&i| predictions[i].iter().map(|&x| tape.constant(x)).collect())
                .collect();
            let views: Vec<&[Var]> = consts.iter().map(Vec::as_slice).collect();
            let smp: Vec<&Sample> = term.members.iter().map(|&i| &data.samples[i]).collect();
            let sigma = term.sigma(&mut tape, &views, &smp)?;
            let nu = violation_node(&mut tape, term.kind, sigma, term.slack);
            group_sum[term.class] += tape.value(nu);
            group_count[term.class] += 1;
        }
    }
    let group_violations = group_sum
        .iter()
        .zip(&group_count)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();

    Ok(Evaluation {
        blocks,
        violations,
        group_violations,
        predictions,
    })
}
