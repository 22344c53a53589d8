//! Feed-forward models, Adam and the base losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Tape, Var};
use crate::error::{Error, Result};

/// Activation applied after the last layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

/// Anything the trainers can optimise: a flat parameter vector plus a
/// differentiable forward pass.
pub trait Predictor {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Records the forward pass on `tape`; `params` are the tape handles of
    /// [`Predictor::params`], in order.
    fn forward_tape(&self, tape: &mut Tape, params: &[Var], input: &[f64]) -> Result<Vec<Var>>;

    /// Plain forward pass, no tape.
    fn predict(&self, input: &[f64]) -> Result<Vec<f64>>;

    fn num_params(&self) -> usize {
        self.params().len()
    }
}

/// Layer widths and output activation of a ReLU perceptron. Parameters live
/// outside the architecture so several networks can share one flat vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    output: OutputActivation,
}

impl Mlp {
    pub fn new(widths: Vec<usize>, output: OutputActivation) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!(
                "layer widths must have at least two positive entries, got {widths:?}"
            )));
        }
        Ok(Mlp { widths, output })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// He-style uniform initialisation scaled by fan-in; biases start at zero.
    pub fn init(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut params = Vec::with_capacity(self.num_params());
        for w in self.widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.gen_range(-bound..bound));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        params
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::InputShape {
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward_tape(&self, tape: &mut Tape, params: &[Var], input: &[f64]) -> Result<Vec<Var>> {
        self.check_input(input)?;
        debug_assert_eq!(params.len(), self.num_params());
        let layers = self.widths.len() - 1;
        let mut offset = 0;
        let mut hidden: Vec<Var> = Vec::new();
        for (l, w) in self.widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[offset..offset + n_in * n_out];
            let biases = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let mut next = Vec::with_capacity(n_out);
            for j in 0..n_out {
                let row = &weights[j * n_in..(j + 1) * n_in];
                let z = if l == 0 {
                    tape.affine(row, input, biases[j])
                } else {
                    tape.dense(row, &hidden, biases[j])
                };
                let a = if l + 1 < layers {
                    tape.relu(z)
                } else {
                    match self.output {
                        OutputActivation::Identity => z,
                        OutputActivation::Sigmoid => tape.sigmoid(z),
                    }
                };
                next.push(a);
            }
            hidden = next;
        }
        Ok(hidden)
    }

    pub fn predict(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let layers = self.widths.len() - 1;
        let mut offset = 0;
        let mut hidden = input.to_vec();
        for (l, w) in self.widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[offset..offset + n_in * n_out];
            let biases = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let next = (0..n_out)
                .map(|j| {
                    let row = &weights[j * n_in..(j + 1) * n_in];
                    let mut z = biases[j];
                    for (wi, xi) in row.iter().zip(&hidden) {
                        z += wi * xi;
                    }
                    if l + 1 < layers {
                        z.max(0.0)
                    } else {
                        match self.output {
                            OutputActivation::Identity => z,
                            OutputActivation::Sigmoid => sigmoid(z),
                        }
                    }
                })
                .collect();
            hidden = next;
        }
        Ok(hidden)
    }
}

/// A single perceptron together with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    arch: Mlp,
    params: Vec<f64>,
}

impl MlpModel {
    pub fn new(widths: Vec<usize>, output: OutputActivation, seed: u64) -> Result<Self> {
        let arch = Mlp::new(widths, output)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch.init(&mut rng);
        Ok(MlpModel { arch, params })
    }

    pub fn from_params(arch: Mlp, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.num_params() {
            return Err(Error::InputShape {
                expected: arch.num_params(),
                actual: params.len(),
            });
        }
        Ok(MlpModel { arch, params })
    }

    pub fn arch(&self) -> &Mlp {
        &self.arch
    }

    /// Mutable view of the last layer's biases.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let n = self.arch.output_dim();
        let len = self.params.len();
        &mut self.params[len - n..]
    }

    /// Mutable view of the last layer's weight matrix (row per output).
    pub fn output_weights_mut(&mut self) -> &mut [f64] {
        let w = self.arch.widths();
        let (n_in, n_out) = (w[w.len() - 2], w[w.len() - 1]);
        let len = self.params.len();
        &mut self.params[len - n_out - n_in * n_out..len - n_out]
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.arch.predict(&self.params, input)
    }
}

impl Predictor for MlpModel {
    fn input_dim(&self) -> usize {
        self.arch.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.arch.output_dim()
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward_tape(&self, tape: &mut Tape, params: &[Var], input: &[f64]) -> Result<Vec<Var>> {
        self.arch.forward_tape(tape, params, input)
    }

    fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.arch.predict(&self.params, input)
    }
}

/// Several perceptrons over the same input, outputs concatenated in member
/// order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    members: Vec<Mlp>,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

impl Ensemble {
    pub fn new(members: Vec<Mlp>, seed: u64) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::Config("ensemble needs at least one member".into()));
        };
        let input = first.input_dim();
        if members.iter().any(|m| m.input_dim() != input) {
            return Err(Error::Config("ensemble members disagree on input width".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offsets = Vec::with_capacity(members.len() + 1);
        let mut params = Vec::new();
        for m in &members {
            offsets.push(params.len());
            params.extend(m.init(&mut rng));
        }
        offsets.push(params.len());
        Ok(Ensemble {
            members,
            offsets,
            params,
        })
    }

    pub fn members(&self) -> &[Mlp] {
        &self.members
    }

    /// Prediction of a single member.
    pub fn predict_member(&self, member: usize, input: &[f64]) -> Result<Vec<f64>> {
        let (a, b) = (self.offsets[member], self.offsets[member + 1]);
        self.members[member].predict(&self.params[a..b], input)
    }
}

impl Predictor for Ensemble {
    fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    fn output_dim(&self) -> usize {
        self.members.iter().map(Mlp::output_dim).sum()
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward_tape(&self, tape: &mut Tape, params: &[Var], input: &[f64]) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(self.output_dim());
        for (k, m) in self.members.iter().enumerate() {
            let (a, b) = (self.offsets[k], self.offsets[k + 1]);
            out.extend(m.forward_tape(tape, &params[a..b], input)?);
        }
        Ok(out)
    }

    fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.output_dim());
        for k in 0..self.members.len() {
            out.extend(self.predict_member(k, input)?);
        }
        Ok(out)
    }
}

/// Adam optimiser state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn second_moments(&self) -> &[f64] {
        &self.v
    }

    /// One bias-corrected Adam update. Parameters are left untouched when any
    /// gradient entry is non-finite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::InputShape {
                expected: self.m.len(),
                actual: grads.len(),
            });
        }
        if let Some(slot) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NumericFault { what: "gradient", slot });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Sample-level base loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Mae,
    Bce,
}

pub const BCE_EPS: f64 = 1e-7;

/// Mean over output components of the chosen loss.
pub fn base_loss(tape: &mut Tape, kind: LossKind, prediction: &[Var], target: &[f64]) -> Result<Var> {
    if prediction.len() != target.len() {
        return Err(Error::InputShape {
            expected: target.len(),
            actual: prediction.len(),
        });
    }
    let terms: Vec<Var> = prediction
        .iter()
        .zip(target)
        .map(|(&p, &t)| match kind {
            LossKind::Mse => {
                let d = tape.offset(p, -t);
                tape.square(d)
            }
            LossKind::Mae => {
                let d = tape.offset(p, -t);
                tape.abs(d)
            }
            LossKind::Bce => {
                let q = tape.clamp(p, BCE_EPS, 1.0 - BCE_EPS);
                let lq = tape.ln(q);
                let one_minus = tape.scale(q, -1.0);
                let one_minus = tape.offset(one_minus, 1.0);
                let l1q = tape.ln(one_minus);
                let a = tape.scale(lq, -t);
                let b = tape.scale(l1q, -(1.0 - t));
                tape.add(a, b)
            }
        })
        .collect();
    Ok(tape.mean(&terms))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss_value(kind: LossKind, p: &[f64], t: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = p.iter().map(|&x| tape.constant(x)).collect();
        let l = base_loss(&mut tape, kind, &vars, t).unwrap();
        tape.value(l)
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss_value(LossKind::Mse, &[1.0, 1.0], &[1.0, 1.0]), 0.0);
        assert_eq!(loss_value(LossKind::Mae, &[2.0], &[0.0]), 2.0);
        let bce = loss_value(LossKind::Bce, &[0.5], &[1.0]);
        assert!((bce - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_clamps_out_of_range_predictions() {
        let v = loss_value(LossKind::Bce, &[1.5], &[0.0]);
        assert!(v.is_finite());
        assert!((v + (BCE_EPS).ln()).abs() < 1e-6);
    }

    #[test]
    fn zero_weights_return_last_bias() {
        let arch = Mlp::new(vec![2, 3], OutputActivation::Identity).unwrap();
        let mut params = vec![0.0; arch.num_params()];
        params[6..].copy_from_slice(&[0.5, -1.0, 2.0]);
        let m = MlpModel::from_params(arch, params).unwrap();
        assert_eq!(m.forward(&[7.0, -3.0]).unwrap(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let arch = Mlp::new(vec![2, 2], OutputActivation::Identity).unwrap();
        let m = MlpModel::from_params(arch, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let m = MlpModel::new(vec![3, 4, 1], OutputActivation::Identity, 0).unwrap();
        assert!(matches!(
            m.forward(&[1.0]),
            Err(Error::InputShape { expected: 3, actual: 1 })
        ));
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![0.3, -0.2];
        let mut s = AdamState::new(2, 1e-3);
        s.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.3, -0.2]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0];
        let mut s = AdamState::new(1, 1e-3);
        s.step(&mut p, &[1.0]).unwrap();
        // bias-corrected moments are both exactly 1 at t = 1
        let expected = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut p = vec![0.0, 0.0, 0.0];
        let mut s = AdamState::new(3, 1e-3);
        let err = s.step(&mut p, &[0.0, f64::NAN, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NumericFault { slot: 1, .. }));
        assert_eq!(s.step, 0);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut p = vec![0.1, 0.2];
            let mut s = AdamState::new(2, 1e-2);
            for k in 0..5 {
                s.step(&mut p, &[0.3 * k as f64, -1.0]).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn tape_and_plain_forward_agree() {
        let m = MlpModel::new(vec![3, 5, 4, 2], OutputActivation::Sigmoid, 11).unwrap();
        let x = [0.2, -0.7, 1.3];
        let mut tape = Tape::new();
        let ps = tape.params(m.params());
        let out = m.forward_tape(&mut tape, &ps, &x).unwrap();
        assert_eq!(tape.values(&out), m.forward(&x).unwrap());
    }
}
