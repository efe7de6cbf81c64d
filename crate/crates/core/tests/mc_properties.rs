use pdm_brnn::brnn::{init_params, predict_proba, sample_masks, DropoutSpec, NetworkDims};
use pdm_brnn::cmapss::N_FEATURES;
use pdm_brnn::ndmath::Rng;
use pdm_brnn::predict::{cycle_rng, mc_predict, summarize};

fn dims() -> NetworkDims {
    NetworkDims {
        input: N_FEATURES,
        hidden1: 20,
        hidden2: 10,
        seq_len: 50,
    }
}

fn window(rng: &mut Rng) -> Vec<f64> {
    (0..50 * N_FEATURES).map(|_| rng.normal()).collect()
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn masked_mean_is_stable_and_near_unmasked() {
    let d = dims();
    let mut rng = Rng::new(41);
    let params = init_params(&mut rng, &d);
    let x = window(&mut rng);
    let spec = DropoutSpec::default();
    let draw = |rng: &mut Rng, n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let m = sample_masks(rng, &spec, &d).unwrap();
                predict_proba(&params, Some(&m), &x).unwrap()
            })
            .collect()
    };
    let (small, se) = mean_and_se(&draw(&mut rng, 500));
    let (stable, _) = mean_and_se(&draw(&mut rng, 5000));
    assert!(
        (small - stable).abs() < 3.0 * se,
        "{small} vs {stable}, se {se}"
    );
    let plain = predict_proba(&params, None, &x).unwrap();
    assert!(
        (stable - plain).abs() < 0.05,
        "{stable} vs unmasked {plain}"
    );
}

#[test]
fn median_converges_as_samples_grow() {
    let d = dims();
    let mut rng = Rng::new(42);
    let params = init_params(&mut rng, &d);
    let spec = DropoutSpec::default();
    for cycle in 50..55 {
        let x = window(&mut rng);
        let p50 = |s: usize| {
            let samples = mc_predict(&params, &spec, &x, s, &mut cycle_rng(3, 1, cycle)).unwrap();
            summarize(cycle, samples).unwrap().p50
        };
        let estimates: Vec<f64> = (1..=10).map(|k| p50(100 * k)).collect();
        for w in estimates.windows(2) {
            assert!((w[1] - w[0]).abs() < 0.02, "cycle {cycle}: {estimates:?}");
        }
    }
}

#[test]
fn sample_prefixes_are_shared_across_sample_counts() {
    // sample k depends only on (base, k), so S=100 is a prefix of S=1000
    let d = dims();
    let mut rng = Rng::new(43);
    let params = init_params(&mut rng, &d);
    let x = window(&mut rng);
    let spec = DropoutSpec::default();
    let short = mc_predict(&params, &spec, &x, 100, &mut cycle_rng(1, 2, 3)).unwrap();
    let long = mc_predict(&params, &spec, &x, 300, &mut cycle_rng(1, 2, 3)).unwrap();
    assert_eq!(short[..], long[..100]);
}
