use super::network::{backward, bce_loss, forward, predict_proba};
use super::{BrnnError, Gradients, MaskSet, NetworkParams};

/// Central-difference gradient of the loss, one parameter at a time, masks
/// held fixed.
pub fn numeric_gradients(
    params: &NetworkParams,
    masks: Option<&MaskSet>,
    sequence: &[f64],
    y: f64,
    epsilon: f64,
) -> Result<Gradients, BrnnError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(BrnnError::InvalidEpsilon(epsilon));
    }
    let mut probe = params.clone();
    let mut out = params.clone();
    for (ti, len) in params.tensors().map(|t| t.len()).into_iter().enumerate() {
        for j in 0..len {
            let orig = probe.tensors()[ti][j];
            probe.tensors_mut()[ti][j] = orig + epsilon;
            let plus = bce_loss(predict_proba(&probe, masks, sequence)?, y);
            probe.tensors_mut()[ti][j] = orig - epsilon;
            let minus = bce_loss(predict_proba(&probe, masks, sequence)?, y);
            probe.tensors_mut()[ti][j] = orig;
            out.tensors_mut()[ti][j] = (plus - minus) / (2.0 * epsilon);
        }
    }
    Ok(out)
}

/// Largest `|analytic − numeric| / max(|analytic| + |numeric|, 1e-8)` over
/// all parameters.
pub fn grad_check(
    params: &NetworkParams,
    masks: Option<&MaskSet>,
    sequence: &[f64],
    y: f64,
    epsilon: f64,
) -> Result<f64, BrnnError> {
    let numeric = numeric_gradients(params, masks, sequence, y, epsilon)?;
    let (_, cache) = forward(params, masks, sequence)?;
    let analytic = backward(params, &cache, y)?;
    let mut worst = 0.0f64;
    for (a, n) in analytic.tensors().iter().zip(numeric.tensors()) {
        for (x, z) in a.iter().zip(n) {
            let rel = (x - z).abs() / (x.abs() + z.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brnn::{init_params, sample_masks, DropoutSpec, NetworkDims};
    use crate::ndmath::Rng;

    fn tiny(seed: u64) -> (NetworkParams, NetworkDims, Vec<f64>) {
        let dims = NetworkDims {
            input: 24,
            hidden1: 4,
            hidden2: 3,
            seq_len: 5,
        };
        let mut rng = Rng::new(seed);
        let p = init_params(&mut rng, &dims);
        let seq: Vec<f64> = (0..dims.input * dims.seq_len)
            .map(|_| rng.normal())
            .collect();
        (p, dims, seq)
    }

    #[test]
    fn agrees_without_dropout() {
        let (p, _, seq) = tiny(1);
        for y in [0.0, 1.0] {
            let err = grad_check(&p, None, &seq, y, 1e-5).unwrap();
            assert!(err < 1e-4, "max relative error {err}");
        }
    }

    #[test]
    fn agrees_with_fixed_masks() {
        let (p, dims, seq) = tiny(2);
        let spec = DropoutSpec {
            layer2_input: 0.3,
            recurrent: 0.3,
            dense_input: 0.3,
        };
        let masks = sample_masks(&mut Rng::new(77), &spec, &dims).unwrap();
        let err = grad_check(&p, Some(&masks), &seq, 1.0, 1e-5).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn zero_epsilon_is_rejected() {
        let (p, _, seq) = tiny(3);
        assert_eq!(
            grad_check(&p, None, &seq, 1.0, 0.0),
            Err(BrnnError::InvalidEpsilon(0.0))
        );
        assert!(grad_check(&p, None, &seq, 1.0, f64::NAN).is_err());
    }
}
