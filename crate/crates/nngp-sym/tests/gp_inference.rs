use nalgebra::{DMatrix, DVector};
use nngp_sym::gp_inference::*;
use nngp_sym::hmm_data::{generate_dataset, MixtureParams};
use nngp_sym::kernel::{cross_matrix, gram_matrix, AnalyticKernel, KernelModel};
use nngp_sym::Error;
use proptest::prelude::*;

fn random_psd(n: usize, seed: u64) -> DMatrix<f64> {
    use rand::Rng;
    let mut r = nngp_sym::rng::rng(seed);
    let a = DMatrix::from_fn(n, n + 2, |_, _| r.random::<f64>() - 0.5);
    &a * a.transpose()
}

#[test]
fn posterior_mean_matches_lu_solve() {
    let k = random_psd(12, 1);
    let y: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
    let post = fit(&k, &y, 0.3).unwrap();
    let direct = (&k + DMatrix::identity(12, 12) * 0.3)
        .lu()
        .solve(&DVector::from_vec(y))
        .unwrap();
    assert!((post.weights() - &direct).amax() < 1e-10);
    assert_eq!(post.jitter, 0.0);
    let b = DVector::from_fn(12, |i, _| i as f64);
    assert!(((&k + DMatrix::identity(12, 12) * 0.3) * post.solve(&b) - b).amax() < 1e-10);
}

#[test]
fn jitter_rescues_a_nearly_singular_system() {
    let k = DMatrix::from_element(6, 6, 1.0);
    let post = fit(&k, &[1.0; 6], 1e-300).unwrap();
    assert!(post.jitter > 0.0 && post.jitter <= 1e-6);
    assert!(post.predict_mean(&[1.0; 6]).unwrap().is_finite());
    let neg = -DMatrix::identity(3, 3);
    assert!(matches!(fit(&neg, &[0.0; 3], 0.5), Err(Error::IllConditioned(_))));
}

#[test]
fn rejects_asymmetric_and_bad_noise() {
    let mut k = DMatrix::identity(3, 3);
    k[(0, 1)] = 0.5;
    assert!(fit(&k, &[0.0; 3], 1.0).is_err());
    assert!(fit(&DMatrix::identity(3, 3), &[0.0; 3], 0.0).is_err());
    assert!(fit(&DMatrix::identity(3, 3), &[0.0; 3], f64::NAN).is_err());
    assert!(mse(&[], &[]).is_err());
    assert_eq!(mse(&[1.0, 2.0], &[0.0, 2.0]).unwrap(), 0.5);
}

#[test]
fn training_order_does_not_matter() {
    let mix = MixtureParams::new(0.4, 0.5, 0.1).unwrap();
    let train = generate_dataset(&mix, 40, 8, 2).unwrap();
    let test = generate_dataset(&mix, 30, 8, 3).unwrap();
    let model = KernelModel::Analytic(AnalyticKernel::Full);
    let a = gp_predict(&model, &train.sequences, &train.labels, &test.sequences, 1.0).unwrap();
    let mut idx: Vec<usize> = (0..40).collect();
    idx.reverse();
    idx.swap(3, 17);
    let xs: Vec<_> = idx.iter().map(|&i| train.sequences[i].clone()).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| train.labels[i]).collect();
    let b = gp_predict(&model, &xs, &ys, &test.sequences, 1.0).unwrap();
    for (u, v) in a.iter().zip(&b) {
        assert!((u - v).abs() < 1e-12);
    }
    let k = gram_matrix(&model, &train.sequences).unwrap();
    let kx = cross_matrix(AnalyticKernel::Full, &test.sequences, &train.sequences).unwrap();
    let direct = &kx
        * (&k + DMatrix::identity(40, 40))
            .lu()
            .solve(&DVector::from_vec(train.labels.clone()))
            .unwrap();
    assert!((DVector::from_vec(a) - direct).amax() < 1e-10);
}

#[test]
fn learning_curve_is_deterministic_and_decreasing() {
    let mix = MixtureParams::new(0.4, 0.5, 0.1).unwrap();
    let mut cfg = LearningCurveConfig::new(KernelModel::Analytic(AnalyticKernel::Full), mix, mix, 8, vec![4, 256]);
    cfg.n_repeats = 6;
    cfg.n_test = 300;
    cfg.grid = 16;
    let rows = learning_curve(&cfg).unwrap();
    assert_eq!(rows, learning_curve(&cfg).unwrap());
    assert!(rows[1].mse_vs_optimal_mean < rows[0].mse_vs_optimal_mean);
    assert!(rows.iter().all(|r| r.mse_mean > r.mse_vs_optimal_mean));
    cfg.n_list = vec![8, 4];
    assert!(learning_curve(&cfg).is_err());
    cfg.n_list = vec![0, 4];
    assert!(learning_curve(&cfg).is_err());
}

#[test]
fn test_set_targets_are_probabilities() {
    let mix = MixtureParams::new(0.3, 0.6, 0.2).unwrap();
    let t = make_test_set(&mix, 6, 100, 16, 5).unwrap();
    assert_eq!(t.labels.len(), 100);
    assert!(t.optimal.iter().all(|v| (0.3..=0.8).contains(v)));
}

proptest! {
    #[test]
    fn mean_is_linear_in_labels(seed in 0u64..500, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let k = random_psd(8, seed);
        let y1: Vec<f64> = (0..8).map(|i| ((i as u64 + seed) % 5) as f64).collect();
        let y2: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).cos()).collect();
        let ks: Vec<f64> = k.column(0).iter().copied().collect();
        let f = |y: &[f64]| fit(&k, y, 0.5).unwrap().predict_mean(&ks).unwrap();
        let mix: Vec<f64> = y1.iter().zip(&y2).map(|(u, v)| a * u + b * v).collect();
        prop_assert!((f(&mix) - a * f(&y1) - b * f(&y2)).abs() < 1e-9);
    }
}
