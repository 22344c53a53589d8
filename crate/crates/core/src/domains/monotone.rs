//! Monotone (transprecision-style) regression.
//!
//! Samples are precision vectors `x ∈ {2..32}^dim`. A pair `(a, b)` with
//! `x_a ⪯ x_b` requires `M(x_a) ≤ M(x_b)`; the synthetic label is a
//! precision score that grows along `⪯`, so noise-free labels satisfy every
//! pair.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::constraint::{ConstraintKind, GroupConstraint, GroupTerm};
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};

pub const PRECISION_MIN: u32 = 2;
pub const PRECISION_MAX: u32 = 32;

/// Label noise used by [`generate_monotone_dataset`].
pub const DEFAULT_NOISE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotoneDataset {
    pub x: Vec<Vec<u32>>,
    pub y: Vec<f64>,
    /// Every ordered pair `(a, b)`, `a ≠ b`, with `x_a ⪯ x_b`.
    pub pairs: Vec<(usize, usize)>,
}

impl MonotoneDataset {
    pub fn new(x: Vec<Vec<u32>>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::InputShape {
                expected: x.len(),
                actual: y.len(),
            });
        }
        let pairs = build_dominance_pairs(&x)?;
        Ok(MonotoneDataset { x, y, pairs })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Training samples: inputs scaled to `[0, 1]`, one-dimensional target.
    pub fn to_dataset(&self) -> Result<Dataset> {
        Dataset::new(
            self.x
                .iter()
                .zip(&self.y)
                .map(|(x, &y)| Sample::new(scale_precision(x), vec![y], Vec::new()))
                .collect(),
        )
    }
}

pub fn scale_precision(x: &[u32]) -> Vec<f64> {
    let span = f64::from(PRECISION_MAX - PRECISION_MIN);
    x.iter()
        .map(|&v| (f64::from(v) - f64::from(PRECISION_MIN)) / span)
        .collect()
}

/// `x1 ⪯ x2`: componentwise `≤`.
pub fn dominance(x1: &[u32], x2: &[u32]) -> Result<bool> {
    if x1.len() != x2.len() {
        return Err(Error::InputShape {
            expected: x1.len(),
            actual: x2.len(),
        });
    }
    Ok(x1.iter().zip(x2).all(|(a, b)| a <= b))
}

/// Every ordered pair of distinct indices `(a, b)` with `x_a ⪯ x_b`, sorted.
pub fn build_dominance_pairs(x: &[Vec<u32>]) -> Result<Vec<(usize, usize)>> {
    let mut pairs = Vec::new();
    for a in 0..x.len() {
        for b in 0..x.len() {
            if a != b && dominance(&x[a], &x[b])? {
                pairs.push((a, b));
            }
        }
    }
    Ok(pairs)
}

/// `max(0, M(x1) − M(x2))` for a pair `x1 ⪯ x2`.
pub fn monotonicity_violation(tape: &mut Tape, m1: Var, m2: Var) -> Var {
    let d = tape.sub(m1, m2);
    tape.relu(d)
}

pub fn monotonicity_violation_value(m1: f64, m2: f64) -> f64 {
    (m1 - m2).max(0.0)
}

/// `(VC, SMVC)`: the number of strictly violated pairs and the sum of their
/// magnitudes, given one scalar prediction per sample.
pub fn vc_smvc(predictions: &[f64], pairs: &[(usize, usize)]) -> (usize, f64) {
    pairs.iter().fold((0, 0.0), |(vc, smvc), &(a, b)| {
        let v = monotonicity_violation_value(predictions[a], predictions[b]);
        if v > 0.0 {
            (vc + 1, smvc + v)
        } else {
            (vc, smvc)
        }
    })
}

/// Noise-free score `−log2(Σ 2^{−x_i}) / 32`, non-decreasing along `⪯`.
pub fn ground_truth(x: &[u32]) -> f64 {
    let s: f64 = x.iter().map(|&v| (-f64::from(v)).exp2()).sum();
    -s.log2() / f64::from(PRECISION_MAX)
}

pub fn generate_monotone_dataset(seed: u64, n: usize, dim: usize) -> Result<MonotoneDataset> {
    generate_monotone_dataset_with(seed, n, dim, DEFAULT_NOISE)
}

/// Precision vectors uniform over `{2..32}^dim` with labels
/// `ground_truth(x) + U(−noise, noise)`.
pub fn generate_monotone_dataset_with(seed: u64, n: usize, dim: usize, noise: f64) -> Result<MonotoneDataset> {
    if n < 2 || dim == 0 {
        return Err(Error::Config(format!(
            "monotone dataset needs n ≥ 2 and dim ≥ 1, got n={n}, dim={dim}"
        )));
    }
    if !(noise >= 0.0) {
        return Err(Error::Config(format!("noise must be nonnegative, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let v: Vec<u32> = (0..dim).map(|_| rng.gen_range(PRECISION_MIN..=PRECISION_MAX)).collect();
        let e = if noise > 0.0 { rng.gen_range(-noise..noise) } else { 0.0 };
        y.push(ground_truth(&v) + e);
        x.push(v);
    }
    MonotoneDataset::new(x, y)
}

/// Splits the samples into seeded batches of `batch` members. Each pair is
/// attached, as a `μ`-class-0 inequality `M(x_a) − M(x_b) ≤ 0`, to the batch
/// owning its first index.
pub fn monotone_groups(n: usize, pairs: &[(usize, usize)], batch: usize, seed: u64) -> Result<Vec<GroupConstraint>> {
    if batch == 0 || n == 0 {
        return Err(Error::Config("monotone groups need n ≥ 1 and batch ≥ 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut owner = vec![0; n];
    let mut groups: Vec<GroupConstraint> = order
        .chunks(batch)
        .enumerate()
        .map(|(g, chunk)| {
            for &i in chunk {
                owner[i] = g;
            }
            GroupConstraint::new(format!("batch{g}"), chunk.to_vec())
        })
        .collect();
    for &(a, b) in pairs {
        if a >= n || b >= n {
            return Err(Error::InvalidGroup {
                id: format!("pair({a},{b})"),
                reason: format!("index out of range for {n} samples"),
            });
        }
        let term = GroupTerm::new(
            format!("pair({a},{b})"),
            ConstraintKind::Inequality,
            0,
            vec![a, b],
            |t, p, _| Ok(t.sub(p[0][0], p[1][0])),
        );
        groups[owner[a]].terms.push(term);
    }
    Ok(groups)
}

/// Mean absolute error of scalar predictions.
pub fn mae(predictions: &[f64], targets: &[f64]) -> f64 {
    let n = predictions.len().max(1) as f64;
    predictions.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / n
}
