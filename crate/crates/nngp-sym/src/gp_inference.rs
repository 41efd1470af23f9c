//! Exact GP regression with the NNGP kernel and dataset-averaged learning curves.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hmm_data::{generate_dataset, mixture_optimal_predictor, MixtureParams, TokenSequence};
use crate::kernel::{cross_matrix, gram_from_outputs, gram_matrix, mc_outputs, KernelModel};
use crate::rng::child_seed;

const JITTER_START: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-6;

/// Posterior given the training Gram `K`, labels `y` and noise `sigma2`.
#[derive(Clone, Debug)]
pub struct GpPosterior {
    pub sigma2: f64,
    /// Diagonal jitter that was added on top of `sigma2` (0 when none was needed).
    pub jitter: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

pub fn fit(k: &DMatrix<f64>, y: &[f64], sigma2: f64) -> Result<GpPosterior> {
    let n = k.nrows();
    if k.ncols() != n || y.len() != n {
        return invalid(format!("shape mismatch: K is {}x{}, y has {}", n, k.ncols(), y.len()));
    }
    if n == 0 {
        return invalid("empty training set");
    }
    if !(sigma2 > 0.0) {
        return invalid(format!("noise variance must be positive, got {sigma2}"));
    }
    let scale = k.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (k[(i, j)] - k[(j, i)]).abs() > 1e-12 * scale {
                return invalid("kernel matrix is not symmetric");
            }
        }
    }
    let mut jitter = 0.0;
    loop {
        let mut a = k.clone();
        for i in 0..n {
            a[(i, i)] += sigma2 + jitter;
        }
        if let Some(chol) = Cholesky::new(a) {
            let alpha = chol.solve(&DVector::from_column_slice(y));
            return Ok(GpPosterior {
                sigma2,
                jitter,
                chol,
                alpha,
            });
        }
        jitter = if jitter == 0.0 { JITTER_START } else { jitter * 10.0 };
        if jitter > JITTER_MAX * 1.000_001 {
            return Err(Error::IllConditioned(jitter / 10.0));
        }
    }
}

impl GpPosterior {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// `(K + sigma2 I)^-1 y`.
    pub fn weights(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// `k_star^T (K + sigma2 I)^-1 y`.
    pub fn predict_mean(&self, k_star: &[f64]) -> Result<f64> {
        if k_star.len() != self.len() {
            return invalid(format!("k_star has length {}, expected {}", k_star.len(), self.len()));
        }
        Ok(k_star.iter().zip(self.alpha.iter()).map(|(a, b)| a * b).sum())
    }

    /// Predictions for every row of the test-by-train kernel matrix.
    pub fn predict_many(&self, k_cross: &DMatrix<f64>) -> Result<DVector<f64>> {
        if k_cross.ncols() != self.len() {
            return invalid(format!(
                "cross kernel has {} columns, expected {}",
                k_cross.ncols(),
                self.len()
            ));
        }
        Ok(k_cross * &self.alpha)
    }

    /// Solves `(K + sigma2 I) a = b` with the stored factorization.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }
}

pub fn mse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return invalid(format!(
            "mse needs equal nonempty lengths, got {} and {}",
            predictions.len(),
            targets.len()
        ));
    }
    let s: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum();
    Ok(s / predictions.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurveConfig {
    pub kernel: KernelModel,
    pub mix_train: MixtureParams,
    pub mix_test: MixtureParams,
    pub l: usize,
    pub n_list: Vec<usize>,
    pub n_repeats: usize,
    pub sigma2: f64,
    pub n_test: usize,
    /// Quadrature resolution of the optimal predictor.
    pub grid: usize,
    pub seed: u64,
}

impl LearningCurveConfig {
    pub fn new(
        kernel: KernelModel,
        mix_train: MixtureParams,
        mix_test: MixtureParams,
        l: usize,
        n_list: Vec<usize>,
    ) -> Self {
        Self {
            kernel,
            mix_train,
            mix_test,
            l,
            n_list,
            n_repeats: 20,
            sigma2: 1.0,
            n_test: 2000,
            grid: 128,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurveRow {
    pub n: usize,
    pub mse_mean: f64,
    pub mse_stderr: f64,
    pub mse_vs_optimal_mean: f64,
    pub mse_vs_optimal_stderr: f64,
}

/// Held-out sequences, sampled labels and optimal-predictor targets.
pub struct TestSet {
    pub sequences: Vec<TokenSequence>,
    pub labels: Vec<f64>,
    pub optimal: Vec<f64>,
}

pub fn make_test_set(mix: &MixtureParams, l: usize, n: usize, grid: usize, seed: u64) -> Result<TestSet> {
    let d = generate_dataset(mix, n, l, seed)?;
    let optimal = d
        .sequences
        .par_iter()
        .map(|x| mixture_optimal_predictor(mix, x, grid))
        .collect::<Result<Vec<_>>>()?;
    Ok(TestSet {
        sequences: d.sequences,
        labels: d.labels,
        optimal,
    })
}

/// Test predictions of the posterior trained on `train`.
pub fn gp_predict(
    kernel: &KernelModel,
    train: &[TokenSequence],
    y: &[f64],
    test: &[TokenSequence],
    sigma2: f64,
) -> Result<Vec<f64>> {
    let (k, kx) = match kernel {
        KernelModel::Analytic(a) => (gram_matrix(kernel, train)?, cross_matrix(*a, test, train)?),
        KernelModel::MonteCarlo(m) => {
            // one joint draw table so train and test share parameter samples
            let all: Vec<TokenSequence> = train.iter().chain(test).cloned().collect();
            let g = gram_from_outputs(&mc_outputs(m, &all)?).0;
            let n = train.len();
            let mut k = g.view((0, 0), (n, n)).into_owned();
            for i in 0..n {
                for j in 0..i {
                    k[(i, j)] = k[(j, i)];
                }
            }
            (k, g.view((n, 0), (test.len(), n)).into_owned())
        }
    };
    let post = fit(&k, y, sigma2)?;
    Ok(post.predict_many(&kx)?.iter().copied().collect())
}

/// Dataset-averaged test MSE for every `N`. The held-out set is drawn once
/// from child seed `(seed, 0)`; repeat `r` at size `N` uses the training
/// set from child seed `(seed, 1 + r * |N_list| + index(N))`.
pub fn learning_curve(cfg: &LearningCurveConfig) -> Result<Vec<LearningCurveRow>> {
    if cfg.n_list.is_empty() || cfg.n_list.windows(2).any(|w| w[0] >= w[1]) || cfg.n_list[0] == 0 {
        return invalid("N list must be nonempty, positive and strictly ascending");
    }
    if cfg.n_repeats == 0 || cfg.n_test == 0 {
        return invalid("need at least one repeat and one test point");
    }
    let test = make_test_set(&cfg.mix_test, cfg.l, cfg.n_test, cfg.grid, child_seed(cfg.seed, 0))?;
    let mut rows = Vec::with_capacity(cfg.n_list.len());
    for (ni, &n) in cfg.n_list.iter().enumerate() {
        let runs = (0..cfg.n_repeats)
            .into_par_iter()
            .map(|r| {
                let s = child_seed(cfg.seed, 1 + (r * cfg.n_list.len() + ni) as u64);
                let train = generate_dataset(&cfg.mix_train, n, cfg.l, s)?;
                let pred = gp_predict(
                    &cfg.kernel,
                    &train.sequences,
                    &train.labels,
                    &test.sequences,
                    cfg.sigma2,
                )?;
                Ok((mse(&pred, &test.labels)?, mse(&pred, &test.optimal)?))
            })
            .collect::<Result<Vec<(f64, f64)>>>()?;
        let (a, b): (Vec<f64>, Vec<f64>) = runs.into_iter().unzip();
        let (mse_mean, mse_stderr) = mean_stderr(&a);
        let (mse_vs_optimal_mean, mse_vs_optimal_stderr) = mean_stderr(&b);
        rows.push(LearningCurveRow {
            n,
            mse_mean,
            mse_stderr,
            mse_vs_optimal_mean,
            mse_vs_optimal_stderr,
        });
    }
    Ok(rows)
}

pub(crate) fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_hand_case() {
        let k = DMatrix::identity(2, 2);
        let post = fit(&k, &[1.0, 0.0], 1.0).unwrap();
        assert!((post.predict_mean(&[1.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(post.predict_mean(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(post.predict_mean(&[1.0]).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let k = DMatrix::identity(2, 2);
        assert!(fit(&k, &[1.0], 1.0).is_err());
        assert!(fit(&k, &[1.0, 2.0], 0.0).is_err());
        let mut asym = k.clone();
        asym[(0, 1)] = 0.5;
        assert!(fit(&asym, &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn indefinite_matrix_exhausts_jitter() {
        let k = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(fit(&k, &[1.0, 1.0], 0.5), Err(Error::IllConditioned(_))));
    }

    #[test]
    fn mse_basics() {
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mse(&[0.3, 0.2], &[0.3, 0.2]).unwrap(), 0.0);
        assert!(mse(&[], &[]).is_err());
    }
}
