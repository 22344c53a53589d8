//! Samples, datasets and the seeded train/test split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One training example. `context` carries whatever the constraint
/// evaluators need beyond the network input (raw demands, ground-truth
/// flows, a protected attribute, ...).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    pub context: Vec<f64>,
}

impl Sample {
    pub fn new(input: Vec<f64>, target: Vec<f64>, context: Vec<f64>) -> Self {
        Sample { input, target, context }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if let Some(first) = samples.first() {
            let (ni, nt) = (first.input.len(), first.target.len());
            for s in &samples {
                if s.input.len() != ni {
                    return Err(Error::InputShape {
                        expected: ni,
                        actual: s.input.len(),
                    });
                }
                if s.target.len() != nt {
                    return Err(Error::InputShape {
                        expected: nt,
                        actual: s.target.len(),
                    });
                }
            }
        }
        Ok(Dataset { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.input.len())
    }

    pub fn target_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.target.len())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Seeded shuffle followed by an 80/20 cut.
    pub fn split(&self, seed: u64) -> (Dataset, Dataset) {
        let (train, test) = split_indices(self.len(), 0.8, seed);
        (self.subset(&train), self.subset(&test))
    }
}

/// Shuffles `0..n` with `seed` and cuts after `round(fraction · n)` entries.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let cut = ((n as f64) * fraction).round() as usize;
    let test = idx.split_off(cut.min(n));
    (idx, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_a_seeded_partition() {
        let (a, b) = split_indices(10, 0.8, 3);
        assert_eq!((a.len(), b.len()), (8, 2));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_indices(10, 0.8, 3), (a, b));
    }

    #[test]
    fn ragged_samples_are_rejected() {
        let s = vec![
            Sample::new(vec![1.0], vec![0.0], vec![]),
            Sample::new(vec![1.0, 2.0], vec![0.0], vec![]),
        ];
        assert!(matches!(Dataset::new(s), Err(Error::InputShape { .. })));
    }
}
