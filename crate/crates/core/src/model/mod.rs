//! The classifier: a one-hidden-layer tanh MLP with a sigmoid head, or plain
//! logistic regression (the convex mode used by the Hessian oracle).
//!
//! Parameters are stored flat in a fixed canonical order (W1 row-major, b1,
//! w2, b2; or w, b in linear mode) so gradients, optimizer state and the
//! checkpoint file all share one layout.

mod optim;
mod train;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::rng;
use crate::vecmath::{self, sigmoid};

pub use optim::AdamW;
pub use train::{train, train_masked, Checkpoint, CheckpointSeries, Hyperparams};

/// Probability clamp used by the loss.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Mlp,
    Linear,
}

impl Mode {
    pub fn code(self) -> u8 {
        match self {
            Mode::Mlp => 0,
            Mode::Linear => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Mode> {
        match code {
            0 => Some(Mode::Mlp),
            1 => Some(Mode::Linear),
            _ => None,
        }
    }
}

/// Which parameters gradients are taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradScope {
    #[default]
    Full,
    /// Only w2 and b2 (the whole vector in linear mode).
    OutputLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    mode: Mode,
    input_dim: usize,
    hidden_dim: usize,
    values: Vec<f64>,
}

pub fn param_count(mode: Mode, input_dim: usize, hidden_dim: usize) -> usize {
    match mode {
        Mode::Mlp => hidden_dim * input_dim + 2 * hidden_dim + 1,
        Mode::Linear => input_dim + 1,
    }
}

impl ModelParams {
    pub fn zeros(mode: Mode, input_dim: usize, hidden_dim: usize) -> Self {
        let hidden_dim = if mode == Mode::Linear { 0 } else { hidden_dim };
        ModelParams {
            mode,
            input_dim,
            hidden_dim,
            values: vec![0.0; param_count(mode, input_dim, hidden_dim)],
        }
    }

    pub fn from_values(mode: Mode, input_dim: usize, hidden_dim: usize, values: Vec<f64>) -> Result<Self> {
        let hidden_dim = if mode == Mode::Linear { 0 } else { hidden_dim };
        let expected = param_count(mode, input_dim, hidden_dim);
        if values.len() != expected {
            return Err(Error::Shape {
                expected,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(ModelParams {
            mode,
            input_dim,
            hidden_dim,
            values,
        })
    }

    /// Uniform in ±1/√fan_in per layer.
    pub fn init(mode: Mode, input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut p = Self::zeros(mode, input_dim, hidden_dim);
        let mut r = rng::derive(seed, 0x494e_4954);
        let in_bound = 1.0 / libm::sqrt(input_dim.max(1) as f64);
        match mode {
            Mode::Linear => p.values.iter_mut().for_each(|v| *v = rng::uniform_sym(&mut r, in_bound)),
            Mode::Mlp => {
                let h = p.hidden_dim;
                let hid_bound = 1.0 / libm::sqrt(h.max(1) as f64);
                let split = h * input_dim + h;
                for (i, v) in p.values.iter_mut().enumerate() {
                    let b = if i < split { in_bound } else { hid_bound };
                    *v = rng::uniform_sym(&mut r, b);
                }
            }
        }
        p
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Copy with every entry rounded to the nearest `f32`, the precision
    /// checkpoints are persisted at.
    pub fn to_f32_precision(&self) -> Self {
        let mut p = self.clone();
        p.values.iter_mut().for_each(|v| *v = *v as f32 as f64);
        p
    }

    /// Index range of the output layer within the flat vector.
    pub fn output_range(&self) -> core::ops::Range<usize> {
        match self.mode {
            Mode::Linear => 0..self.values.len(),
            Mode::Mlp => {
                let start = self.hidden_dim * self.input_dim + self.hidden_dim;
                start..self.values.len()
            }
        }
    }

    fn check_dims(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Shape {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn logit_with_hidden(&self, x: &[f64], hidden: &mut [f64]) -> f64 {
        let d = self.input_dim;
        match self.mode {
            Mode::Linear => vecmath::dot(&self.values[..d], x) + self.values[d],
            Mode::Mlp => {
                let h = self.hidden_dim;
                let (w1, rest) = self.values.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(h);
                for j in 0..h {
                    hidden[j] = libm::tanh(vecmath::dot(&w1[j * d..(j + 1) * d], x) + b1[j]);
                }
                vecmath::dot(w2, &hidden[..h]) + b2[0]
            }
        }
    }

    fn prob_unchecked(&self, x: &[f64], hidden: &mut [f64]) -> f64 {
        sigmoid(self.logit_with_hidden(x, hidden))
    }

    /// Adds `scale · ∂loss/∂θ` into `out` and returns the sample loss.
    pub(crate) fn accumulate_grad(&self, x: &[f64], y: u8, scale: f64, hidden: &mut [f64], out: &mut [f64]) -> f64 {
        let p = self.prob_unchecked(x, hidden);
        let dz = (p - y as f64) * scale;
        let d = self.input_dim;
        match self.mode {
            Mode::Linear => {
                for (o, xi) in out[..d].iter_mut().zip(x) {
                    *o += dz * xi;
                }
                out[d] += dz;
            }
            Mode::Mlp => {
                let h = self.hidden_dim;
                let w2_off = h * d + h;
                for j in 0..h {
                    let hj = hidden[j];
                    out[w2_off + j] += dz * hj;
                    let da = dz * self.values[w2_off + j] * (1.0 - hj * hj);
                    out[h * d + j] += da;
                    for (o, xk) in out[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *o += da * xk;
                    }
                }
                out[w2_off + h] += dz;
            }
        }
        bce(p, y)
    }

    fn hidden_scratch(&self) -> Vec<f64> {
        vec![0.0; self.hidden_dim]
    }
}

fn bce(p: f64, y: u8) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if y == 1 {
        -libm::log(p)
    } else {
        -libm::log(1.0 - p)
    }
}

/// Probability of class 1.
pub fn forward(params: &ModelParams, x: &[f64]) -> Result<f64> {
    params.check_dims(x)?;
    Ok(params.prob_unchecked(x, &mut params.hidden_scratch()))
}

/// Binary cross-entropy with the probability clamped to [1e-12, 1-1e-12].
pub fn loss(params: &ModelParams, sample: &Sample) -> Result<f64> {
    Ok(bce(forward(params, &sample.features)?, sample.label))
}

/// Probability assigned to the sample's true class.
pub fn confidence(params: &ModelParams, sample: &Sample) -> Result<f64> {
    let p = forward(params, &sample.features)?;
    Ok(if sample.label == 1 { p } else { 1.0 - p })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub values: Vec<f64>,
    pub norm: f64,
    sq_norm: f64,
    pub checkpoint_epoch: usize,
    pub sample_id: String,
}

impl GradientVector {
    pub fn new(values: Vec<f64>, checkpoint_epoch: usize, sample_id: String) -> Self {
        let sq_norm = vecmath::dot(&values, &values);
        GradientVector {
            norm: libm::sqrt(sq_norm),
            sq_norm,
            values,
            checkpoint_epoch,
            sample_id,
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.sq_norm
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Exact gradient of the sample loss w.r.t. all parameters.
pub fn grad(params: &ModelParams, sample: &Sample) -> Result<GradientVector> {
    grad_at(params, sample, 0, GradScope::Full)
}

pub fn grad_at(params: &ModelParams, sample: &Sample, epoch: usize, scope: GradScope) -> Result<GradientVector> {
    params.check_dims(&sample.features)?;
    let mut out = vec![0.0; params.len()];
    params.accumulate_grad(&sample.features, sample.label, 1.0, &mut params.hidden_scratch(), &mut out);
    if scope == GradScope::OutputLayer {
        out = out[params.output_range()].to_vec();
    }
    Ok(GradientVector::new(out, epoch, sample.id.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(x: &[f64], y: u8) -> Sample {
        Sample::new("s", "g", x.to_vec(), y)
    }

    #[test]
    fn zero_params_give_half() {
        for mode in [Mode::Mlp, Mode::Linear] {
            let p = ModelParams::zeros(mode, 3, 4);
            assert_eq!(forward(&p, &[0.3, -2.0, 5.0]).unwrap(), 0.5);
            assert_eq!(confidence(&p, &sample(&[1.0, 1.0, 1.0], 0)).unwrap(), 0.5);
        }
    }

    #[test]
    fn linear_bias_ten() {
        let p = ModelParams::from_values(Mode::Linear, 2, 0, vec![0.0, 0.0, 10.0]).unwrap();
        let v = forward(&p, &[1.0, 2.0]).unwrap();
        assert!((v - 0.99995).abs() < 1e-5);
        assert!((v - 1.0 / (1.0 + (-10.0f64).exp())).abs() < 1e-15);
    }

    fn fixture() -> ModelParams {
        // D = 3, hidden = 2
        ModelParams::from_values(
            Mode::Mlp,
            3,
            2,
            vec![
                0.5, -0.25, 0.1, // W1 row 0
                -0.3, 0.2, 0.4, // W1 row 1
                0.05, -0.1, // b1
                1.5, -2.0, // w2
                0.2, // b2
            ],
        )
        .unwrap()
    }

    // Hand expansion of the fixture for x = (1, 2, -1):
    //   a0 = 0.5 - 0.5 - 0.1 + 0.05 = -0.05
    //   a1 = -0.3 + 0.4 - 0.4 - 0.1 = -0.4
    //   z  = 1.5·tanh(-0.05) - 2·tanh(-0.4) + 0.2
    fn fixture_prob() -> f64 {
        let z = 1.5 * (-0.05f64).tanh() - 2.0 * (-0.4f64).tanh() + 0.2;
        1.0 / (1.0 + (-z).exp())
    }

    #[test]
    fn mlp_fixture_matches_hand_value() {
        let p = forward(&fixture(), &[1.0, 2.0, -1.0]).unwrap();
        // tanh(-0.05) = -0.04995837495787998, tanh(-0.4) = -0.3799489622552249
        // z = 0.8849603620736299, sigmoid(z) = 0.707849074417903
        assert!((p - fixture_prob()).abs() < 1e-12);
        assert!((p - 0.707_849_074_417_903).abs() < 1e-9, "{p}");
    }

    #[test]
    fn loss_fixture_label_zero() {
        let l = loss(&fixture(), &sample(&[1.0, 2.0, -1.0], 0)).unwrap();
        assert!((l - (-(1.0 - fixture_prob()).ln())).abs() < 1e-9);
    }

    #[test]
    fn loss_at_half_is_ln2() {
        let p = ModelParams::zeros(Mode::Linear, 2, 0);
        let l = loss(&p, &sample(&[1.0, 1.0], 1)).unwrap();
        assert!((l - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_loss_hits_floor() {
        let p = ModelParams::from_values(Mode::Linear, 1, 0, vec![0.0, 100.0]).unwrap();
        let s = sample(&[0.0], 1);
        assert!(loss(&p, &s).unwrap() <= 1e-11);
        assert!(grad(&p, &s).unwrap().norm <= 1e-8);
    }

    #[test]
    fn linear_grad_closed_form() {
        let p = ModelParams::from_values(Mode::Linear, 3, 0, vec![0.2, -0.1, 0.4, 0.05]).unwrap();
        let x = [1.0, -2.0, 0.5];
        let s = sample(&x, 1);
        let pr = forward(&p, &x).unwrap();
        let g = grad(&p, &s).unwrap();
        for k in 0..3 {
            assert_eq!(g.values[k], (pr - 1.0) * x[k]);
        }
        assert_eq!(g.values[3], pr - 1.0);
        assert!((g.norm - vecmath::norm(&g.values)).abs() <= 1e-12 * g.norm);
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let p = ModelParams::zeros(Mode::Mlp, 3, 2);
        assert!(matches!(forward(&p, &[1.0]), Err(Error::Shape { expected: 3, got: 1 })));
        assert!(ModelParams::from_values(Mode::Linear, 3, 0, vec![0.0; 3]).is_err());
    }

    #[test]
    fn output_scope_slices_tail() {
        let p = fixture();
        let s = sample(&[1.0, 2.0, -1.0], 1);
        let full = grad(&p, &s).unwrap();
        let out = grad_at(&p, &s, 1, GradScope::OutputLayer).unwrap();
        assert_eq!(out.values, full.values[8..].to_vec());
    }
}
