//! Two stacked LSTM layers and a sigmoid head, trained and sampled with
//! tied (variational) dropout masks.
//!
//! Dropout sits in exactly three places:
//!
//! 1. the input of the second LSTM layer,
//! 2. the hidden state each LSTM layer carries from one step to the next,
//! 3. the input of the dense head.
//!
//! A [`MaskSet`] is drawn once per sequence and reused at every time step.
//! The raw features entering layer 1 and the cell states are never masked.

mod cell;
mod gradcheck;
mod network;

pub use cell::{lstm_cell, CellOutput, GateRecord};
pub use gradcheck::{grad_check, numeric_gradients};
pub use network::{
    backward, backward_into, bce_loss, forward, predict_proba, ForwardCache, StepRecord,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmapss::{DEFAULT_WINDOW, N_FEATURES};
use crate::ndmath::{sample_mask, MathError, Matrix, Rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BrnnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Math(#[from] MathError),
    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
}

fn shape_err(what: impl Into<String>) -> BrnnError {
    BrnnError::Shape(what.into())
}

/// Layer sizes and sequence length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkDims {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub seq_len: usize,
}

impl Default for NetworkDims {
    fn default() -> Self {
        NetworkDims {
            input: N_FEATURES,
            hidden1: 100,
            hidden2: 50,
            seq_len: DEFAULT_WINDOW,
        }
    }
}

/// Drop rates for the three dropout placements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub layer2_input: f64,
    /// Shared by the recurrent connections of both layers.
    pub recurrent: f64,
    pub dense_input: f64,
}

impl Default for DropoutSpec {
    fn default() -> Self {
        DropoutSpec {
            layer2_input: 0.10,
            recurrent: 0.10,
            dense_input: 0.20,
        }
    }
}

impl DropoutSpec {
    pub const NONE: DropoutSpec = DropoutSpec {
        layer2_input: 0.0,
        recurrent: 0.0,
        dense_input: 0.0,
    };

    pub fn validate(&self) -> Result<(), BrnnError> {
        for rate in [self.layer2_input, self.recurrent, self.dense_input] {
            if !(0.0..1.0).contains(&rate) {
                return Err(MathError::InvalidDropRate(rate).into());
            }
        }
        Ok(())
    }
}

/// One draw of tied dropout masks. Entries are 0 or `1 / keep`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub layer2_input: Vec<f64>,
    pub recurrent1: Vec<f64>,
    pub recurrent2: Vec<f64>,
    pub dense_input: Vec<f64>,
}

impl MaskSet {
    pub fn ones(dims: &NetworkDims) -> Self {
        MaskSet {
            layer2_input: vec![1.0; dims.hidden1],
            recurrent1: vec![1.0; dims.hidden1],
            recurrent2: vec![1.0; dims.hidden2],
            dense_input: vec![1.0; dims.hidden2],
        }
    }

    fn check(&self, dims: &NetworkDims) -> Result<(), BrnnError> {
        let ok = self.layer2_input.len() == dims.hidden1
            && self.recurrent1.len() == dims.hidden1
            && self.recurrent2.len() == dims.hidden2
            && self.dense_input.len() == dims.hidden2;
        if ok {
            Ok(())
        } else {
            Err(shape_err("mask lengths do not match the hidden sizes"))
        }
    }
}

/// Draws the four masks in a fixed order: layer-2 input, layer-1 recurrent,
/// layer-2 recurrent, dense input.
pub fn sample_masks(
    rng: &mut Rng,
    spec: &DropoutSpec,
    dims: &NetworkDims,
) -> Result<MaskSet, BrnnError> {
    spec.validate()?;
    Ok(MaskSet {
        layer2_input: sample_mask(rng, dims.hidden1, spec.layer2_input)?,
        recurrent1: sample_mask(rng, dims.hidden1, spec.recurrent)?,
        recurrent2: sample_mask(rng, dims.hidden2, spec.recurrent)?,
        dense_input: sample_mask(rng, dims.hidden2, spec.dense_input)?,
    })
}

/// Weights of one LSTM layer. Gate blocks are stacked row-wise in the
/// order input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    /// `4·hidden × input_dim`
    pub w: Matrix,
    /// `4·hidden × hidden`
    pub u: Matrix,
    /// `4·hidden`
    pub b: Vec<f64>,
}

impl LstmLayerParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        LstmLayerParams {
            w: Matrix::zeros(4 * hidden, input_dim),
            u: Matrix::zeros(4 * hidden, hidden),
            b: vec![0.0; 4 * hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.b.len() / 4
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    fn check(&self, input_dim: usize, hidden: usize, name: &str) -> Result<(), BrnnError> {
        if self.w.shape() != (4 * hidden, input_dim)
            || self.u.shape() != (4 * hidden, hidden)
            || self.b.len() != 4 * hidden
        {
            return Err(shape_err(format!(
                "{name}: expected input {input_dim}, hidden {hidden}; got W {:?}, U {:?}, b {}",
                self.w.shape(),
                self.u.shape(),
                self.b.len()
            )));
        }
        Ok(())
    }
}

/// Full parameter set. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layer1: LstmLayerParams,
    pub layer2: LstmLayerParams,
    pub dense_w: Vec<f64>,
    pub dense_b: f64,
}

/// Gradients share the parameter layout.
pub type Gradients = NetworkParams;

impl NetworkParams {
    pub fn zeros(dims: &NetworkDims) -> Self {
        NetworkParams {
            layer1: LstmLayerParams::zeros(dims.input, dims.hidden1),
            layer2: LstmLayerParams::zeros(dims.hidden1, dims.hidden2),
            dense_w: vec![0.0; dims.hidden2],
            dense_b: 0.0,
        }
    }

    /// Input width and hidden sizes, with `seq_len` taken from the caller.
    pub fn dims(&self, seq_len: usize) -> NetworkDims {
        NetworkDims {
            input: self.layer1.input_dim(),
            hidden1: self.layer1.hidden(),
            hidden2: self.layer2.hidden(),
            seq_len,
        }
    }

    /// Confirms every tensor has the shape implied by `dims`.
    pub fn check_shape(&self, dims: &NetworkDims) -> Result<(), BrnnError> {
        self.layer1.check(dims.input, dims.hidden1, "layer1")?;
        self.layer2.check(dims.hidden1, dims.hidden2, "layer2")?;
        if self.dense_w.len() != dims.hidden2 {
            return Err(shape_err(format!(
                "dense: expected {} weights, got {}",
                dims.hidden2,
                self.dense_w.len()
            )));
        }
        Ok(())
    }

    /// All tensors in canonical order: layer1 W, U, b; layer2 W, U, b;
    /// dense weights; dense bias.
    pub fn tensors(&self) -> [&[f64]; 8] {
        [
            self.layer1.w.as_slice(),
            self.layer1.u.as_slice(),
            &self.layer1.b,
            self.layer2.w.as_slice(),
            self.layer2.u.as_slice(),
            &self.layer2.b,
            &self.dense_w,
            std::slice::from_ref(&self.dense_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 8] {
        [
            self.layer1.w.as_mut_slice(),
            self.layer1.u.as_mut_slice(),
            &mut self.layer1.b,
            self.layer2.w.as_mut_slice(),
            self.layer2.u.as_mut_slice(),
            &mut self.layer2.b,
            &mut self.dense_w,
            std::slice::from_mut(&mut self.dense_b),
        ]
    }

    pub const TENSOR_NAMES: [&'static str; 8] = [
        "layer1.w", "layer1.u", "layer1.b", "layer2.w", "layer2.u", "layer2.b", "dense.w",
        "dense.b",
    ];

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

fn glorot_fill(rng: &mut Rng, values: &mut [f64], fan_in: usize, fan_out: usize) {
    let bound = glorot_bound(fan_in, fan_out);
    for v in values {
        *v = rng.uniform(-bound, bound);
    }
}

/// `sqrt(6 / (fan_in + fan_out))`
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Glorot-uniform weights with `fan_in` = columns and `fan_out` = rows
/// (so `4·hidden` for gate matrices). Forget-gate biases start at 1, all
/// other biases at 0. Draw order: layer1 W, layer1 U, layer2 W, layer2 U,
/// dense weights, each row-major.
pub fn init_params(rng: &mut Rng, dims: &NetworkDims) -> NetworkParams {
    let mut p = NetworkParams::zeros(dims);
    for layer in [&mut p.layer1, &mut p.layer2] {
        let (rows, cols) = layer.w.shape();
        glorot_fill(rng, layer.w.as_mut_slice(), cols, rows);
        let (rows, cols) = layer.u.shape();
        glorot_fill(rng, layer.u.as_mut_slice(), cols, rows);
        let h = layer.hidden();
        layer.b[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
    }
    glorot_fill(rng, &mut p.dense_w, dims.hidden2, 1);
    p
}
