use super::{shape_err, BrnnError, LstmLayerParams};
use crate::ndmath::{dot, sigmoid};

/// Activated gate values of one cell step.
#[derive(Debug, Clone, PartialEq)]
pub struct GateRecord {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutput {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub gates: GateRecord,
}

/// Scratch and results for one step of one layer. The forward cache keeps
/// one of these per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Layer input as seen by `W` (already masked for layer 2).
    pub input: Vec<f64>,
    /// `h_prev ⊙ recurrent_mask`, as seen by `U`.
    pub h_masked: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl StepRecord {
    pub(super) fn new(input_dim: usize, hidden: usize) -> Self {
        let v = || vec![0.0; hidden];
        StepRecord {
            input: vec![0.0; input_dim],
            h_masked: v(),
            i: v(),
            f: v(),
            g: v(),
            o: v(),
            c: v(),
            tanh_c: v(),
            h: v(),
        }
    }
}

/// One LSTM step writing into `rec`. `wx` is scratch of length `4·hidden`.
///
/// Every forward path in the crate goes through here, so cached and
/// cache-free passes produce identical bits.
pub(super) fn step(
    layer: &LstmLayerParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    recurrent_mask: &[f64],
    wx: &mut [f64],
    rec: &mut StepRecord,
) {
    let hsz = layer.hidden();
    rec.input.copy_from_slice(x);
    for k in 0..hsz {
        rec.h_masked[k] = h_prev[k] * recurrent_mask[k];
    }
    layer.w.matvec_into(x, wx);
    let pre = |r: usize, wx: &[f64]| wx[r] + dot(layer.u.row(r), &rec.h_masked) + layer.b[r];
    for k in 0..hsz {
        let i = sigmoid(pre(k, wx));
        let f = sigmoid(pre(hsz + k, wx));
        let g = pre(2 * hsz + k, wx).tanh();
        let o = sigmoid(pre(3 * hsz + k, wx));
        let c = f * c_prev[k] + i * g;
        let tc = c.tanh();
        rec.i[k] = i;
        rec.f[k] = f;
        rec.g[k] = g;
        rec.o[k] = o;
        rec.c[k] = c;
        rec.tanh_c[k] = tc;
        rec.h[k] = o * tc;
    }
}

/// A single LSTM cell update.
///
/// With `h̃ = h_prev ⊙ recurrent_mask` and `z = W·x + U·h̃ + b` split into
/// `(zi, zf, zg, zo)`:
///
/// ```text
/// i = σ(zi)   f = σ(zf)   g = tanh(zg)   o = σ(zo)
/// c = f ⊙ c_prev + i ⊙ g
/// h = o ⊙ tanh(c)
/// ```
pub fn lstm_cell(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    params: &LstmLayerParams,
    recurrent_mask: &[f64],
) -> Result<CellOutput, BrnnError> {
    let hsz = params.hidden();
    if params.w.rows() != 4 * hsz || params.u.shape() != (4 * hsz, hsz) {
        return Err(shape_err("inconsistent LSTM parameter shapes"));
    }
    if x.len() != params.input_dim() {
        return Err(shape_err(format!(
            "input has {} entries, layer expects {}",
            x.len(),
            params.input_dim()
        )));
    }
    if h_prev.len() != hsz || c_prev.len() != hsz || recurrent_mask.len() != hsz {
        return Err(shape_err(format!("state vectors must have length {hsz}")));
    }
    let mut rec = StepRecord::new(x.len(), hsz);
    let mut wx = vec![0.0; 4 * hsz];
    step(params, x, h_prev, c_prev, recurrent_mask, &mut wx, &mut rec);
    Ok(CellOutput {
        h: rec.h,
        c: rec.c,
        gates: GateRecord {
            i: rec.i,
            f: rec.f,
            g: rec.g,
            o: rec.o,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::Matrix;

    #[test]
    fn all_zero_cell_stays_zero() {
        let layer = LstmLayerParams::zeros(3, 2);
        let out = lstm_cell(&[0.0; 3], &[0.0; 2], &[0.0; 2], &layer, &[1.0; 2]).unwrap();
        assert_eq!(out.h, vec![0.0; 2]);
        assert_eq!(out.c, vec![0.0; 2]);
        assert_eq!(out.gates.i, vec![0.5; 2]);
    }

    #[test]
    fn scalar_cell_matches_closed_form() {
        let layer = LstmLayerParams {
            w: Matrix::from_vec(4, 1, vec![1.0; 4]).unwrap(),
            u: Matrix::zeros(4, 1),
            b: vec![0.0; 4],
        };
        let out = lstm_cell(&[1.0], &[0.0], &[0.0], &layer, &[1.0]).unwrap();
        // 40-digit mpmath evaluation of σ(1)·tanh(1) and σ(1)·tanh(c)
        #[allow(clippy::excessive_precision)]
        let c = 0.556_769_941_145_939_744_272_240_464_689_321_6;
        #[allow(clippy::excessive_precision)]
        let h = 0.369_606_352_935_705_773_139_281_710_929_380_2;
        assert!((out.c[0] - c).abs() < 1e-12);
        assert!((out.h[0] - h).abs() < 1e-12);
    }

    #[test]
    fn output_has_hidden_length() {
        let layer = LstmLayerParams::zeros(5, 7);
        let out = lstm_cell(&[0.1; 5], &[0.0; 7], &[0.0; 7], &layer, &[1.0; 7]).unwrap();
        assert_eq!(out.h.len(), 7);
        assert_eq!(out.c.len(), 7);
    }

    #[test]
    fn recurrent_mask_zeroes_previous_state() {
        let mut layer = LstmLayerParams::zeros(1, 1);
        layer.u = Matrix::from_vec(4, 1, vec![2.0, -1.0, 0.5, 3.0]).unwrap();
        let masked = lstm_cell(&[0.0], &[0.9], &[0.3], &layer, &[0.0]).unwrap();
        let fresh = lstm_cell(&[0.0], &[0.0], &[0.3], &layer, &[1.0]).unwrap();
        assert_eq!(masked, fresh);
    }

    #[test]
    fn dimension_errors() {
        let layer = LstmLayerParams::zeros(3, 2);
        assert!(lstm_cell(&[0.0; 4], &[0.0; 2], &[0.0; 2], &layer, &[1.0; 2]).is_err());
        assert!(lstm_cell(&[0.0; 3], &[0.0; 1], &[0.0; 2], &layer, &[1.0; 2]).is_err());
        assert!(lstm_cell(&[0.0; 3], &[0.0; 2], &[0.0; 2], &layer, &[1.0; 3]).is_err());
    }
}
