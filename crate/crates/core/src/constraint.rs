//! Satisfiability and violation degrees, Lagrangian losses and dual ascent.
//!
//! A constraint is described by its satisfiability degree `σ`: negative
//! values are slack, positive values are violations. Inequalities `g ≤ 0`
//! are violated by `max(0, σ)`, equalities `h = 0` by `|σ|`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::Sample;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Inequality,
    Equality,
}

/// `ν(σ)` for a plain float.
pub fn violation_degree(kind: ConstraintKind, sigma: f64) -> Result<f64> {
    if !sigma.is_finite() {
        return Err(Error::NumericFault {
            what: "satisfiability degree",
            slot: 0,
        });
    }
    Ok(match kind {
        ConstraintKind::Inequality => sigma.max(0.0),
        ConstraintKind::Equality => sigma.abs(),
    })
}

/// `ν(σ)` on the tape, with an optional slack `ε ≥ 0` subtracted before the
/// positive part is taken.
pub fn violation_node(tape: &mut Tape, kind: ConstraintKind, sigma: Var, slack: f64) -> Var {
    let base = match kind {
        ConstraintKind::Inequality => sigma,
        ConstraintKind::Equality => tape.abs(sigma),
    };
    if slack > 0.0 {
        let shifted = tape.offset(base, -slack);
        tape.relu(shifted)
    } else {
        match kind {
            ConstraintKind::Inequality => tape.relu(base),
            ConstraintKind::Equality => base,
        }
    }
}

/// Evaluator for per-sample constraints: maps the prediction of one sample
/// to a list of satisfiability degrees.
pub type SigmaFn = Arc<dyn Fn(&mut Tape, &[Var], &Sample) -> Result<Vec<Var>> + Send + Sync>;

/// One family of per-sample constraints sharing a multiplier class.
///
/// The violation of a term is `weight · Σ_k ν(σ_k)`, so averaging factors
/// such as `1/|N|` live in `weight`.
#[derive(Clone)]
pub struct ConstraintTerm {
    pub id: String,
    pub kind: ConstraintKind,
    pub class: usize,
    pub weight: f64,
    eval: SigmaFn,
}

impl fmt::Debug for ConstraintTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintTerm")
            .field("id", &self.id)
            .field("kind", &self.kind)
            .field("class", &self.class)
            .field("weight", &self.weight)
            .finish()
    }
}

impl ConstraintTerm {
    pub fn new<F>(id: impl Into<String>, kind: ConstraintKind, class: usize, weight: f64, eval: F) -> Self
    where
        F: Fn(&mut Tape, &[Var], &Sample) -> Result<Vec<Var>> + Send + Sync + 'static,
    {
        ConstraintTerm {
            id: id.into(),
            kind,
            class,
            weight,
            eval: Arc::new(eval),
        }
    }

    pub fn sigma(&self, tape: &mut Tape, prediction: &[Var], sample: &Sample) -> Result<Vec<Var>> {
        (self.eval)(tape, prediction, sample)
    }

    /// Weighted violation node of this term.
    pub fn violation(&self, tape: &mut Tape, prediction: &[Var], sample: &Sample) -> Result<Var> {
        let sigmas = self.sigma(tape, prediction, sample)?;
        let nus: Vec<Var> = sigmas
            .into_iter()
            .map(|s| violation_node(tape, self.kind, s, 0.0))
            .collect();
        let total = tape.sum(&nus);
        Ok(if self.weight == 1.0 {
            total
        } else {
            tape.scale(total, self.weight)
        })
    }

    /// Violation for a plain prediction vector.
    pub fn violation_value(&self, prediction: &[f64], sample: &Sample) -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = prediction.iter().map(|&p| tape.constant(p)).collect();
        let nu = self.violation(&mut tape, &vars, sample)?;
        let value = tape.value(nu);
        if !value.is_finite() {
            return Err(Error::NumericFault {
                what: "violation",
                slot: self.class,
            });
        }
        Ok(value)
    }
}

/// Number of multiplier classes spanned by `terms` (largest index plus one).
pub fn class_count(terms: &[ConstraintTerm]) -> usize {
    terms.iter().map(|t| t.class + 1).max().unwrap_or(0)
}

/// Per-class violation values of `prediction` (classes with no term are 0).
pub fn class_violations(
    terms: &[ConstraintTerm],
    classes: usize,
    prediction: &[f64],
    sample: &Sample,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; classes];
    for t in terms {
        check_class(t.class, classes, &t.id)?;
        out[t.class] += t.violation_value(prediction, sample)?;
    }
    Ok(out)
}

fn check_class(class: usize, classes: usize, id: &str) -> Result<()> {
    if class >= classes {
        return Err(Error::Contract(format!(
            "constraint `{id}` uses multiplier class {class} but only {classes} exist"
        )));
    }
    Ok(())
}

/// The per-sample Lagrangian loss together with the violation of every
/// class, so callers can accumulate them for dual ascent.
pub struct LagrangianParts {
    pub loss: Var,
    pub violations: Vec<f64>,
}

/// `L + Σ λ_class · ν_term`.
///
/// Terms whose multiplier is exactly zero still get their violation
/// evaluated (for bookkeeping) but are left out of the loss node, so the
/// loss and its gradient are bit-identical to the base loss.
pub fn lagrangian_loss(
    tape: &mut Tape,
    base: Var,
    terms: &[ConstraintTerm],
    prediction: &[Var],
    sample: &Sample,
    lambda: &[f64],
) -> Result<LagrangianParts> {
    let mut violations = vec![0.0; lambda.len()];
    let mut penalties = Vec::new();
    for t in terms {
        check_class(t.class, lambda.len(), &t.id)?;
        let nu = t.violation(tape, prediction, sample)?;
        let v = tape.value(nu);
        if !v.is_finite() {
            return Err(Error::NumericFault {
                what: "violation",
                slot: t.class,
            });
        }
        violations[t.class] += v;
        let l = lambda[t.class];
        if l < 0.0 {
            return Err(Error::Contract(format!("negative multiplier for class {}", t.class)));
        }
        if l != 0.0 {
            penalties.push(tape.scale(nu, l));
        }
    }
    let loss = if penalties.is_empty() {
        base
    } else {
        let p = tape.sum(&penalties);
        tape.add(base, p)
    };
    Ok(LagrangianParts { loss, violations })
}

/// Evaluator for a group constraint: receives the predictions of the term's
/// members (in member order) and the matching samples, returns `σ`.
pub type GroupSigmaFn = Arc<dyn Fn(&mut Tape, &[&[Var]], &[&Sample]) -> Result<Var> + Send + Sync>;

/// A constraint `h` over a set of samples.
#[derive(Clone)]
pub struct GroupTerm {
    pub id: String,
    pub kind: ConstraintKind,
    /// Index into `μ`.
    pub class: usize,
    pub members: Vec<usize>,
    /// Slack `ε` subtracted before taking the positive part.
    pub slack: f64,
    eval: GroupSigmaFn,
}

impl fmt::Debug for GroupTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroupTerm")
            .field("id", &self.id)
            .field("kind", &self.kind)
            .field("class", &self.class)
            .field("members", &self.members.len())
            .field("slack", &self.slack)
            .finish()
    }
}

impl GroupTerm {
    pub fn new<F>(id: impl Into<String>, kind: ConstraintKind, class: usize, members: Vec<usize>, eval: F) -> Self
    where
        F: Fn(&mut Tape, &[&[Var]], &[&Sample]) -> Result<Var> + Send + Sync + 'static,
    {
        GroupTerm {
            id: id.into(),
            kind,
            class,
            members,
            slack: 0.0,
            eval: Arc::new(eval),
        }
    }

    pub fn with_slack(mut self, slack: f64) -> Self {
        self.slack = slack;
        self
    }

    pub fn sigma(&self, tape: &mut Tape, predictions: &[&[Var]], samples: &[&Sample]) -> Result<Var> {
        (self.eval)(tape, predictions, samples)
    }
}

/// A subset `S` of the dataset visited as one unit by the grouped trainer,
/// plus the group constraints attached to it.
#[derive(Clone, Debug)]
pub struct GroupConstraint {
    pub id: String,
    pub members: Vec<usize>,
    pub terms: Vec<GroupTerm>,
}

impl GroupConstraint {
    pub fn new(id: impl Into<String>, members: Vec<usize>) -> Self {
        GroupConstraint {
            id: id.into(),
            members,
            terms: Vec::new(),
        }
    }

    pub fn with_term(mut self, term: GroupTerm) -> Self {
        self.terms.push(term);
        self
    }

    /// Checks membership against a dataset of `n` samples.
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |reason: String| Error::InvalidGroup {
            id: self.id.clone(),
            reason,
        };
        if self.members.is_empty() {
            return Err(bad("no members".into()));
        }
        for t in &self.terms {
            if t.members.is_empty() {
                return Err(bad(format!("term `{}` has no members", t.id)));
            }
        }
        let all = self.members.iter().chain(self.terms.iter().flat_map(|t| &t.members));
        for &m in all {
            if m >= n {
                return Err(bad(format!("member {m} out of range for {n} samples")));
            }
        }
        Ok(())
    }

    /// Every sample index touched by the group, sorted and deduplicated.
    pub fn touched(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .members
            .iter()
            .chain(self.terms.iter().flat_map(|t| &t.members))
            .copied()
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Number of `μ` classes spanned by the groups.
pub fn group_class_count(groups: &[GroupConstraint]) -> usize {
    groups
        .iter()
        .flat_map(|g| &g.terms)
        .map(|t| t.class + 1)
        .max()
        .unwrap_or(0)
}

/// Result of assembling one group's loss.
pub struct GroupLagrangianParts {
    pub loss: Var,
    /// Mean base loss over the members.
    pub base: f64,
    /// Per-`λ`-class violation summed over the members.
    pub violations: Vec<f64>,
    /// Per-`μ`-class group violation.
    pub group_violations: Vec<f64>,
}

/// `(1/|S|) Σ_{l∈S} L_λ(l) + Σ_h μ_class · ν(h)`.
///
/// `sample_loss(l)` must return the base-loss node of member `l`, and
/// `predictions` must hold the prediction of every index the group touches.
#[allow(clippy::too_many_arguments)]
pub fn group_lagrangian_loss(
    tape: &mut Tape,
    group: &GroupConstraint,
    sample_losses: &BTreeMap<usize, Var>,
    predictions: &BTreeMap<usize, Vec<Var>>,
    samples: &[Sample],
    terms: &[ConstraintTerm],
    lambda: &[f64],
    mu: &[f64],
) -> Result<GroupLagrangianParts> {
    let missing = |idx: usize| Error::InvalidGroup {
        id: group.id.clone(),
        reason: format!("no prediction for member {idx}"),
    };
    if group.members.is_empty() {
        return Err(Error::InvalidGroup {
            id: group.id.clone(),
            reason: "no members".into(),
        });
    }
    let mut violations = vec![0.0; lambda.len()];
    let mut inner = Vec::with_capacity(group.members.len());
    let mut base_sum = 0.0;
    for &l in &group.members {
        let base = *sample_losses.get(&l).ok_or_else(|| missing(l))?;
        let pred = predictions.get(&l).ok_or_else(|| missing(l))?;
        let sample = samples.get(l).ok_or_else(|| missing(l))?;
        base_sum += tape.value(base);
        let parts = lagrangian_loss(tape, base, terms, pred, sample, lambda)?;
        for (acc, v) in violations.iter_mut().zip(&parts.violations) {
            *acc += v;
        }
        inner.push(parts.loss);
    }
    let inner_mean = tape.mean(&inner);

    let mut group_violations = vec![0.0; mu.len()];
    let mut penalties = Vec::new();
    for term in &group.terms {
        check_class(term.class, mu.len(), &term.id)?;
        let mut preds: Vec<&[Var]> = Vec::with_capacity(term.members.len());
        let mut smp: Vec<&Sample> = Vec::with_capacity(term.members.len());
        for &m in &term.members {
            preds.push(predictions.get(&m).ok_or_else(|| missing(m))?);
            smp.push(samples.get(m).ok_or_else(|| missing(m))?);
        }
        let sigma = term.sigma(tape, &preds, &smp)?;
        let nu = violation_node(tape, term.kind, sigma, term.slack);
        let v = tape.value(nu);
        if !v.is_finite() {
            return Err(Error::NumericFault {
                what: "group violation",
                slot: term.class,
            });
        }
        group_violations[term.class] += v;
        let m = mu[term.class];
        if m < 0.0 {
            return Err(Error::Contract(format!(
                "negative group multiplier for class {}",
                term.class
            )));
        }
        if m != 0.0 {
            penalties.push(tape.scale(nu, m));
        }
    }
    let loss = if penalties.is_empty() {
        inner_mean
    } else {
        let p = tape.sum(&penalties);
        tape.add(inner_mean, p)
    };
    Ok(GroupLagrangianParts {
        loss,
        base: base_sum / group.members.len() as f64,
        violations,
        group_violations,
    })
}

/// Step-size schedule indexed by epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSchedule {
    Constant(f64),
    /// Per-epoch values; the last one repeats past the end.
    PerEpoch(Vec<f64>),
}

impl StepSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        match self {
            StepSchedule::Constant(s) => *s,
            StepSchedule::PerEpoch(v) => v.get(epoch).or(v.last()).copied().unwrap_or(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |s: f64| s.is_finite() && s >= 0.0;
        let fine = match self {
            StepSchedule::Constant(s) => ok(*s),
            StepSchedule::PerEpoch(v) => v.iter().all(|&s| ok(s)),
        };
        if fine {
            Ok(())
        } else {
            Err(Error::Config("step sizes must be finite and nonnegative".into()))
        }
    }
}

fn ascend(current: &[f64], step: f64, violations: &[f64], what: &str) -> Result<Vec<f64>> {
    if current.len() != violations.len() {
        return Err(Error::InputShape {
            expected: current.len(),
            actual: violations.len(),
        });
    }
    if !(step >= 0.0) || !step.is_finite() {
        return Err(Error::Contract(format!("{what} step must be nonnegative, got {step}")));
    }
    current
        .iter()
        .zip(violations)
        .enumerate()
        .map(|(i, (&m, &v))| {
            if !v.is_finite() {
                Err(Error::NumericFault {
                    what: "violation sum",
                    slot: i,
                })
            } else if v < 0.0 {
                Err(Error::Contract(format!(
                    "negative summed violation {v} for {what} class {i}"
                )))
            } else {
                Ok(m + step * v)
            }
        })
        .collect()
}

/// `λ_i ← λ_i + s · v_i`.
pub fn dual_ascent_lambda(lambda: &[f64], step: f64, summed_violations: &[f64]) -> Result<Vec<f64>> {
    ascend(lambda, step, summed_violations, "lambda")
}

/// `μ_i ← μ_i + t · ν_i`.
pub fn dual_ascent_mu(mu: &[f64], step: f64, group_violations: &[f64]) -> Result<Vec<f64>> {
    ascend(mu, step, group_violations, "mu")
}

/// Multipliers of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplierState {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub s: StepSchedule,
    pub t: StepSchedule,
}

impl MultiplierState {
    pub fn new(classes: usize, group_classes: usize, s: StepSchedule, t: StepSchedule) -> Self {
        MultiplierState {
            lambda: vec![0.0; classes],
            mu: vec![0.0; group_classes],
            s,
            t,
        }
    }

    pub fn update_lambda(&mut self, epoch: usize, summed: &[f64]) -> Result<()> {
        self.lambda = dual_ascent_lambda(&self.lambda, self.s.at(epoch), summed)?;
        Ok(())
    }

    pub fn update_mu(&mut self, epoch: usize, summed: &[f64]) -> Result<()> {
        self.mu = dual_ascent_mu(&self.mu, self.t.at(epoch), summed)?;
        Ok(())
    }
}
