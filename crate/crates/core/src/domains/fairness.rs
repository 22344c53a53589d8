//! Fairness-constrained classification.
//!
//! The bundle trains three sigmoid networks side by side: `M` over the whole
//! dataset and `M0`, `M1` over the two protected partitions. Group terms ask
//! the mean outputs to match across partitions, both between `M0` and `M1`
//! and for `M` itself. Reported accuracy and DT always come from `M`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::constraint::{ConstraintKind, GroupConstraint, GroupTerm};
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::nn::{base_loss, Ensemble, LossKind, Mlp, OutputActivation, Predictor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessDataset {
    pub feature_names: Vec<String>,
    pub features: Vec<Vec<f64>>,
    /// Binary outcome, 0 or 1.
    pub labels: Vec<u8>,
    /// Binary protected attribute, 0 or 1.
    pub protected: Vec<u8>,
}

impl FairnessDataset {
    pub fn new(
        feature_names: Vec<String>,
        features: Vec<Vec<f64>>,
        labels: Vec<u8>,
        protected: Vec<u8>,
    ) -> Result<Self> {
        let n = features.len();
        for len in [labels.len(), protected.len()] {
            if len != n {
                return Err(Error::InputShape {
                    expected: n,
                    actual: len,
                });
            }
        }
        if let Some(row) = features.iter().find(|r| r.len() != feature_names.len()) {
            return Err(Error::InputShape {
                expected: feature_names.len(),
                actual: row.len(),
            });
        }
        if labels.iter().chain(&protected).any(|&v| v > 1) {
            return Err(Error::Config("labels and protected values must be 0 or 1".into()));
        }
        Ok(FairnessDataset {
            feature_names,
            features,
            labels,
            protected,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Indices of `D_{s0}` and `D_{s1}`.
    pub fn partitions(&self) -> (Vec<usize>, Vec<usize>) {
        (0..self.len()).partition(|&i| self.protected[i] == 0)
    }

    pub fn subset(&self, indices: &[usize]) -> FairnessDataset {
        FairnessDataset {
            feature_names: self.feature_names.clone(),
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            protected: indices.iter().map(|&i| self.protected[i]).collect(),
        }
    }

    /// Samples with target `[y]` and context `[s]`.
    pub fn to_dataset(&self) -> Result<Dataset> {
        Dataset::new(
            (0..self.len())
                .map(|i| {
                    Sample::new(
                        self.features[i].clone(),
                        vec![f64::from(self.labels[i])],
                        vec![f64::from(self.protected[i])],
                    )
                })
                .collect(),
        )
    }
}

fn protected_of(sample: &Sample) -> Result<usize> {
    match sample.context.first() {
        Some(&s) if s == 0.0 || s == 1.0 => Ok(s as usize),
        _ => Err(Error::Config(
            "fairness samples must carry the protected value as context".into(),
        )),
    }
}

/// `|rate_{s0}(ŷ=1) − rate_{s1}(ŷ=1)|`.
pub fn dt_index(predictions: &[bool], protected: &[u8]) -> Result<f64> {
    if predictions.len() != protected.len() {
        return Err(Error::InputShape {
            expected: protected.len(),
            actual: predictions.len(),
        });
    }
    let mut pos = [0usize; 2];
    let mut size = [0usize; 2];
    for (&p, &s) in predictions.iter().zip(protected) {
        let s = usize::from(s.min(1));
        size[s] += 1;
        pos[s] += usize::from(p);
    }
    if size.contains(&0) {
        return Err(Error::UndefinedMetric(
            "DT needs both protected partitions to be nonempty".into(),
        ));
    }
    Ok((pos[0] as f64 / size[0] as f64 - pos[1] as f64 / size[1] as f64).abs())
}

/// `max(0, |mean(outputs0) − mean(outputs1)| − ε)`.
pub fn expectation_matching_violation(outputs0: &[f64], outputs1: &[f64], slack: f64) -> Result<f64> {
    if outputs0.is_empty() || outputs1.is_empty() {
        return Err(Error::UndefinedMetric(
            "expectation matching needs both partitions".into(),
        ));
    }
    let m0 = outputs0.iter().sum::<f64>() / outputs0.len() as f64;
    let m1 = outputs1.iter().sum::<f64>() / outputs1.len() as f64;
    Ok(((m0 - m1).abs() - slack).max(0.0))
}

/// Output slots of the bundled ensemble.
pub const GLOBAL: usize = 0;
pub const PARTITION: [usize; 2] = [1, 2];

/// `μ` classes of the group terms.
pub const MATCH_PARTITION_MODELS: usize = 0;
pub const MATCH_GLOBAL_MODEL: usize = 1;

pub struct FairnessBundle {
    pub model: Ensemble,
    pub groups: Vec<GroupConstraint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleOptions {
    pub hidden: Vec<usize>,
    pub batch: usize,
    pub slack: f64,
    pub seed: u64,
}

impl Default for BundleOptions {
    fn default() -> Self {
        BundleOptions {
            hidden: vec![16],
            batch: 64,
            slack: 0.0,
            seed: 0,
        }
    }
}

/// Joint per-sample loss `BCE(M) + BCE(M_s)`.
pub fn fairness_sample_loss(tape: &mut Tape, prediction: &[Var], sample: &Sample) -> Result<Var> {
    if prediction.len() != 3 {
        return Err(Error::InputShape {
            expected: 3,
            actual: prediction.len(),
        });
    }
    let s = protected_of(sample)?;
    let global = base_loss(tape, LossKind::Bce, &prediction[GLOBAL..=GLOBAL], &sample.target)?;
    let slot = PARTITION[s];
    let own = base_loss(tape, LossKind::Bce, &prediction[slot..=slot], &sample.target)?;
    Ok(tape.add(global, own))
}

/// Builds the ensemble `(M, M0, M1)` and the seeded batches with their
/// expectation-matching terms. Batches missing a partition carry no term.
pub fn fairness_objective_bundle(data: &Dataset, opts: &BundleOptions) -> Result<FairnessBundle> {
    if data.is_empty() {
        return Err(Error::Config("fairness bundle needs a nonempty dataset".into()));
    }
    if opts.batch == 0 || !(opts.slack >= 0.0) {
        return Err(Error::Config("batch must be positive and slack nonnegative".into()));
    }
    let protected: Vec<usize> = data.samples.iter().map(protected_of).collect::<Result<_>>()?;
    if !protected.contains(&0) || !protected.contains(&1) {
        return Err(Error::Config(
            "protected attribute is constant; one partition is empty".into(),
        ));
    }
    let mut widths = vec![data.input_dim()];
    widths.extend(&opts.hidden);
    widths.push(1);
    let member = Mlp::new(widths, OutputActivation::Sigmoid)?;
    let model = Ensemble::new(vec![member.clone(), member.clone(), member], opts.seed)?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    let groups = order
        .chunks(opts.batch)
        .enumerate()
        .map(|(g, chunk)| {
            let mut members = chunk.to_vec();
            members.sort_unstable();
            let (s0, s1): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&i| protected[i] == 0);
            let mut group = GroupConstraint::new(format!("batch{g}"), members);
            if !s0.is_empty() && !s1.is_empty() {
                let n0 = s0.len();
                let both: Vec<usize> = s0.iter().chain(&s1).copied().collect();
                for (class, slots) in [
                    (MATCH_PARTITION_MODELS, [PARTITION[0], PARTITION[1]]),
                    (MATCH_GLOBAL_MODEL, [GLOBAL, GLOBAL]),
                ] {
                    let term = GroupTerm::new(
                        format!("batch{g}/match{class}"),
                        ConstraintKind::Equality,
                        class,
                        both.clone(),
                        move |t, p, _| mean_gap(t, p, n0, slots),
                    )
                    .with_slack(opts.slack);
                    group = group.with_term(term);
                }
            }
            group
        })
        .collect();
    Ok(FairnessBundle { model, groups })
}

fn mean_gap(tape: &mut Tape, preds: &[&[Var]], n0: usize, slots: [usize; 2]) -> Result<Var> {
    let a: Vec<Var> = preds[..n0].iter().map(|p| p[slots[0]]).collect();
    let b: Vec<Var> = preds[n0..].iter().map(|p| p[slots[1]]).collect();
    let ma = tape.mean(&a);
    let mb = tape.mean(&b);
    Ok(tape.sub(ma, mb))
}

/// Accuracy and DT of the global model's thresholded predictions.
pub fn fairness_metrics<P: Predictor>(model: &P, data: &FairnessDataset) -> Result<(f64, f64)> {
    let mut hits = 0usize;
    let mut decisions = Vec::with_capacity(data.len());
    for (x, &y) in data.features.iter().zip(&data.labels) {
        let p = model.predict(x)?[GLOBAL] >= 0.5;
        hits += usize::from(p == (y == 1));
        decisions.push(p);
    }
    let accuracy = hits as f64 / data.len().max(1) as f64;
    Ok((accuracy, dt_index(&decisions, &data.protected)?))
}

/// Parameters of the synthetic generator: `P(y=1) = σ(a(x1−½) + c(x2−½) +
/// b(2s−1))`, with a proxy feature equal to `s` with probability
/// `proxy_agreement`. The protected value itself is never a feature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFairness {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub proxy_agreement: f64,
}

impl SyntheticFairness {
    pub const BIASED: SyntheticFairness = SyntheticFairness {
        a: 8.0,
        b: 1.0,
        c: 3.0,
        proxy_agreement: 0.85,
    };
    pub const UNBIASED: SyntheticFairness = SyntheticFairness {
        a: 8.0,
        b: 0.0,
        c: 3.0,
        proxy_agreement: 0.5,
    };

    pub fn generate(&self, seed: u64, n: usize) -> Result<FairnessDataset> {
        if n == 0 {
            return Err(Error::Config("synthetic dataset size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let mut protected = Vec::with_capacity(n);
        for _ in 0..n {
            let s: u8 = rng.gen_range(0..=1);
            let x: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
            let proxy = if rng.gen::<f64>() < self.proxy_agreement {
                s
            } else {
                1 - s
            };
            let z = self.a * (x[0] - 0.5) + self.c * (x[1] - 0.5) + self.b * (2.0 * f64::from(s) - 1.0);
            let y = u8::from(rng.gen::<f64>() < crate::autodiff::sigmoid(z));
            features.push(vec![x[0], x[1], x[2], f64::from(proxy)]);
            labels.push(y);
            protected.push(s);
        }
        FairnessDataset::new(
            ["x1", "x2", "x3", "proxy"].map(String::from).to_vec(),
            features,
            labels,
            protected,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dt_examples() {
        let p = [true, false, true, false];
        assert_eq!(dt_index(&p, &[0, 0, 1, 1]).unwrap(), 0.0);
        let p = [true, true, true, false, false, false];
        assert!((dt_index(&p, &[0, 0, 0, 0, 1, 1]).unwrap() - 0.75).abs() < 1e-15);
        assert!(matches!(dt_index(&[true], &[0]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn expectation_matching_examples() {
        assert_eq!(expectation_matching_violation(&[0.5], &[0.5], 0.0).unwrap(), 0.0);
        assert!((expectation_matching_violation(&[0.6], &[0.4], 0.0).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(expectation_matching_violation(&[0.6], &[0.4], 0.25).unwrap(), 0.0);
    }

    #[test]
    fn constant_protected_is_config_error() {
        let mut ds = SyntheticFairness::BIASED.generate(0, 50).unwrap();
        ds.protected = vec![1; 50];
        let data = ds.to_dataset().unwrap();
        assert!(matches!(
            fairness_objective_bundle(&data, &BundleOptions::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn partitions_cover_dataset() {
        let ds = SyntheticFairness::BIASED.generate(4, 300).unwrap();
        let (a, b) = ds.partitions();
        assert_eq!(a.len() + b.len(), 300);
        assert!(a.iter().all(|i| !b.contains(i)));
    }
}
