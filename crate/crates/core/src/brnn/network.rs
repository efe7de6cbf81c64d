use super::cell::step;
pub use super::cell::StepRecord;
use super::{
    shape_err, BrnnError, Gradients, LstmLayerParams, MaskSet, NetworkDims, NetworkParams,
};
use crate::ndmath::{dot, sigmoid};

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub masks: MaskSet,
    pub layer1: Vec<StepRecord>,
    pub layer2: Vec<StepRecord>,
    /// `h2_T ⊙ dense mask`
    pub dense_input: Vec<f64>,
    pub logit: f64,
    pub p: f64,
}

fn check_inputs(
    params: &NetworkParams,
    masks: Option<&MaskSet>,
    sequence: &[f64],
) -> Result<(NetworkDims, usize), BrnnError> {
    let input = params.layer1.input_dim();
    if input == 0 || sequence.is_empty() || !sequence.len().is_multiple_of(input) {
        return Err(shape_err(format!(
            "sequence of {} values is not a whole number of {input}-wide steps",
            sequence.len()
        )));
    }
    let steps = sequence.len() / input;
    let dims = params.dims(steps);
    params.check_shape(&dims)?;
    if let Some(m) = masks {
        m.check(&dims)?;
    }
    Ok((dims, steps))
}

/// Runs both layers; `sink` sees each step's records after they are filled.
fn run(
    params: &NetworkParams,
    masks: &MaskSet,
    sequence: &[f64],
    steps: usize,
    mut sink: impl FnMut(&StepRecord, &StepRecord),
) -> (Vec<f64>, f64, f64) {
    let (l1, l2) = (&params.layer1, &params.layer2);
    let (h1, h2) = (l1.hidden(), l2.hidden());
    let input = l1.input_dim();
    let mut prev1 = StepRecord::new(input, h1);
    let mut cur1 = StepRecord::new(input, h1);
    let mut prev2 = StepRecord::new(h1, h2);
    let mut cur2 = StepRecord::new(h1, h2);
    let mut wx1 = vec![0.0; 4 * h1];
    let mut wx2 = vec![0.0; 4 * h2];
    let mut x2 = vec![0.0; h1];
    for t in 0..steps {
        let x = &sequence[t * input..(t + 1) * input];
        step(
            l1,
            x,
            &prev1.h,
            &prev1.c,
            &masks.recurrent1,
            &mut wx1,
            &mut cur1,
        );
        for k in 0..h1 {
            x2[k] = cur1.h[k] * masks.layer2_input[k];
        }
        step(
            l2,
            &x2,
            &prev2.h,
            &prev2.c,
            &masks.recurrent2,
            &mut wx2,
            &mut cur2,
        );
        sink(&cur1, &cur2);
        std::mem::swap(&mut prev1, &mut cur1);
        std::mem::swap(&mut prev2, &mut cur2);
    }
    let dense_input: Vec<f64> = prev2
        .h
        .iter()
        .zip(&masks.dense_input)
        .map(|(h, m)| h * m)
        .collect();
    let logit = dot(&params.dense_w, &dense_input) + params.dense_b;
    (dense_input, logit, sigmoid(logit))
}

/// Forward pass over a time-major sequence (`steps × input` values).
///
/// `masks = None` means all-ones masks, i.e. the deterministic network.
/// The probability comes from the final step's layer-2 hidden state.
pub fn forward(
    params: &NetworkParams,
    masks: Option<&MaskSet>,
    sequence: &[f64],
) -> Result<(f64, ForwardCache), BrnnError> {
    let (dims, steps) = check_inputs(params, masks, sequence)?;
    let masks = masks.cloned().unwrap_or_else(|| MaskSet::ones(&dims));
    let mut layer1 = Vec::with_capacity(steps);
    let mut layer2 = Vec::with_capacity(steps);
    let (dense_input, logit, p) = run(params, &masks, sequence, steps, |r1, r2| {
        layer1.push(r1.clone());
        layer2.push(r2.clone());
    });
    Ok((
        p,
        ForwardCache {
            masks,
            layer1,
            layer2,
            dense_input,
            logit,
            p,
        },
    ))
}

/// Same result as [`forward`] without keeping the cache.
pub fn predict_proba(
    params: &NetworkParams,
    masks: Option<&MaskSet>,
    sequence: &[f64],
) -> Result<f64, BrnnError> {
    let (dims, steps) = check_inputs(params, masks, sequence)?;
    let ones;
    let masks = match masks {
        Some(m) => m,
        None => {
            ones = MaskSet::ones(&dims);
            &ones
        }
    };
    Ok(run(params, masks, sequence, steps, |_, _| {}).2)
}

/// Binary cross-entropy with `p` clamped to `[1e-12, 1 - 1e-12]`.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Exact gradient of [`bce_loss`] with respect to every parameter, masks
/// held constant.
pub fn backward(
    params: &NetworkParams,
    cache: &ForwardCache,
    y: f64,
) -> Result<Gradients, BrnnError> {
    let mut grads = NetworkParams::zeros(&params.dims(cache.layer1.len()));
    backward_into(params, cache, y, 1.0, &mut grads)?;
    Ok(grads)
}

/// Adds `scale ×` the gradient into `grads`. Used to sum a mini-batch
/// without allocating per sample.
pub fn backward_into(
    params: &NetworkParams,
    cache: &ForwardCache,
    y: f64,
    scale: f64,
    grads: &mut Gradients,
) -> Result<(), BrnnError> {
    let steps = cache.layer1.len();
    let dims = params.dims(steps);
    params.check_shape(&dims)?;
    grads.check_shape(&dims)?;
    cache.masks.check(&dims)?;
    let consistent = steps > 0
        && cache.layer2.len() == steps
        && cache
            .layer1
            .iter()
            .all(|r| r.input.len() == dims.input && r.h.len() == dims.hidden1)
        && cache.layer2.iter().all(|r| r.h.len() == dims.hidden2)
        && cache.dense_input.len() == dims.hidden2;
    if !consistent {
        return Err(shape_err("forward cache does not match the parameters"));
    }

    let dlogit = (cache.p - y) * scale;
    grads.dense_b += dlogit;
    for (g, x) in grads.dense_w.iter_mut().zip(&cache.dense_input) {
        *g += dlogit * x;
    }

    let mut dh_ext2 = vec![vec![0.0; dims.hidden2]; steps];
    for k in 0..dims.hidden2 {
        dh_ext2[steps - 1][k] = dlogit * params.dense_w[k] * cache.masks.dense_input[k];
    }
    let dx2 = layer_backward(
        &params.layer2,
        &cache.layer2,
        &cache.masks.recurrent2,
        &dh_ext2,
        &mut grads.layer2,
        true,
    );
    let dh_ext1: Vec<Vec<f64>> = dx2
        .into_iter()
        .map(|dx| {
            dx.iter()
                .zip(&cache.masks.layer2_input)
                .map(|(d, m)| d * m)
                .collect()
        })
        .collect();
    layer_backward(
        &params.layer1,
        &cache.layer1,
        &cache.masks.recurrent1,
        &dh_ext1,
        &mut grads.layer1,
        false,
    );
    Ok(())
}

/// BPTT through one layer. `dh_ext[t]` is the loss gradient flowing into
/// `h_t` from above. Returns `dL/d input_t` per step when `want_dx`.
fn layer_backward(
    layer: &LstmLayerParams,
    records: &[StepRecord],
    recurrent_mask: &[f64],
    dh_ext: &[Vec<f64>],
    grads: &mut LstmLayerParams,
    want_dx: bool,
) -> Vec<Vec<f64>> {
    let hsz = layer.hidden();
    let zeros = vec![0.0; hsz];
    let mut dh_next = vec![0.0; hsz];
    let mut dc_next = vec![0.0; hsz];
    let mut dz = vec![0.0; 4 * hsz];
    let mut dx_all = vec![Vec::new(); if want_dx { records.len() } else { 0 }];
    for t in (0..records.len()).rev() {
        let rec = &records[t];
        let c_prev = if t > 0 { &records[t - 1].c } else { &zeros };
        for k in 0..hsz {
            let dh = dh_ext[t][k] + dh_next[k];
            let (i, f, g, o, tc) = (rec.i[k], rec.f[k], rec.g[k], rec.o[k], rec.tanh_c[k]);
            let d_o = dh * tc;
            let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
            let di = dc * g;
            let dg = dc * i;
            let df = dc * c_prev[k];
            dc_next[k] = dc * f;
            dz[k] = di * i * (1.0 - i);
            dz[hsz + k] = df * f * (1.0 - f);
            dz[2 * hsz + k] = dg * (1.0 - g * g);
            dz[3 * hsz + k] = d_o * o * (1.0 - o);
        }
        grads.w.add_outer(&dz, &rec.input);
        grads.u.add_outer(&dz, &rec.h_masked);
        for (b, d) in grads.b.iter_mut().zip(&dz) {
            *b += d;
        }
        if want_dx {
            let mut dx = vec![0.0; layer.input_dim()];
            layer.w.transpose_matvec_acc(&dz, &mut dx);
            dx_all[t] = dx;
        }
        let mut dh_masked = vec![0.0; hsz];
        layer.u.transpose_matvec_acc(&dz, &mut dh_masked);
        for k in 0..hsz {
            dh_next[k] = dh_masked[k] * recurrent_mask[k];
        }
    }
    dx_all
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brnn::{init_params, sample_masks, DropoutSpec};
    use crate::ndmath::Rng;

    fn tiny() -> (NetworkParams, NetworkDims, Vec<f64>) {
        let dims = NetworkDims {
            input: 6,
            hidden1: 4,
            hidden2: 3,
            seq_len: 5,
        };
        let mut rng = Rng::new(21);
        let p = init_params(&mut rng, &dims);
        let seq: Vec<f64> = (0..dims.input * dims.seq_len)
            .map(|_| rng.normal())
            .collect();
        (p, dims, seq)
    }

    #[test]
    fn deterministic_without_masks() {
        let (p, dims, seq) = tiny();
        let a = forward(&p, None, &seq).unwrap().0;
        let b = forward(&p, None, &seq).unwrap().0;
        assert_eq!(a.to_bits(), b.to_bits());
        let ones = MaskSet::ones(&dims);
        assert_eq!(
            forward(&p, Some(&ones), &seq).unwrap().0.to_bits(),
            a.to_bits()
        );
        let zero_rate = sample_masks(&mut Rng::new(1), &DropoutSpec::NONE, &dims).unwrap();
        assert_eq!(
            predict_proba(&p, Some(&zero_rate), &seq).unwrap().to_bits(),
            a.to_bits()
        );
        assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn cached_and_uncached_agree_with_masks() {
        let (p, dims, seq) = tiny();
        let m = sample_masks(&mut Rng::new(8), &DropoutSpec::default(), &dims).unwrap();
        let (a, cache) = forward(&p, Some(&m), &seq).unwrap();
        assert_eq!(
            a.to_bits(),
            predict_proba(&p, Some(&m), &seq).unwrap().to_bits()
        );
        assert_eq!(cache.layer1.len(), 5);
        assert_eq!(cache.masks, m);
    }

    #[test]
    fn bad_lengths_are_rejected() {
        let (p, dims, seq) = tiny();
        assert!(forward(&p, None, &seq[..seq.len() - 1]).is_err());
        assert!(forward(&p, None, &[]).is_err());
        let mut m = MaskSet::ones(&dims);
        m.recurrent2.push(1.0);
        assert!(forward(&p, Some(&m), &seq).is_err());
    }

    #[test]
    fn bce_values() {
        assert!((bce_loss(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(0.5, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        // -ln(0.1)
        assert!((bce_loss(0.9, 0.0) - std::f64::consts::LN_10).abs() < 1e-12);
        assert!(bce_loss(1.0, 1.0) < 1e-11);
        assert!(bce_loss(0.0, 0.0) < 1e-11);
        assert!(bce_loss(0.0, 1.0).is_finite());
    }

    #[test]
    fn dense_bias_gradient_is_p_minus_y() {
        let (p, _, seq) = tiny();
        let (prob, cache) = forward(&p, None, &seq).unwrap();
        for y in [0.0, 1.0] {
            let g = backward(&p, &cache, y).unwrap();
            assert_eq!(g.dense_b, prob - y);
            assert!(g.is_finite());
        }
    }

    #[test]
    fn backward_rejects_foreign_cache() {
        let (p, _, seq) = tiny();
        let (_, cache) = forward(&p, None, &seq).unwrap();
        let other = init_params(
            &mut Rng::new(0),
            &NetworkDims {
                input: 6,
                hidden1: 5,
                hidden2: 3,
                seq_len: 5,
            },
        );
        assert!(backward(&other, &cache, 1.0).is_err());
    }

    #[test]
    fn backward_into_scales_and_accumulates() {
        let (p, _, seq) = tiny();
        let (_, cache) = forward(&p, None, &seq).unwrap();
        let once = backward(&p, &cache, 1.0).unwrap();
        let mut twice = NetworkParams::zeros(&p.dims(5));
        backward_into(&p, &cache, 1.0, 0.5, &mut twice).unwrap();
        backward_into(&p, &cache, 1.0, 0.5, &mut twice).unwrap();
        for (a, b) in once.tensors().iter().zip(twice.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-15 * x.abs().max(1.0));
            }
        }
    }
}
