//! The NNGP kernel of the one-block transformer.

mod analytic;
mod mc;
mod network;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use analytic::{eval_via_q, psi, AnalyticKernel};
pub use mc::{gram_from_outputs, kernel_mc, mc_outputs, McKernel};
pub use network::{forward, init_params, AttnAct, LastPositionPe, MlpAct, NetworkConfig, NetworkParams};

use crate::error::{invalid, Result};
use crate::hmm_data::TokenSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum KernelModel {
    Analytic(AnalyticKernel),
    MonteCarlo(McKernel),
}

impl KernelModel {
    pub fn name(&self) -> String {
        match self {
            KernelModel::Analytic(k) => k.name().to_string(),
            KernelModel::MonteCarlo(m) => format!(
                "monte_carlo(attn={:?}, mlp={:?}, d_m={}, d_ff={}, heads={}, draws={}, seed={})",
                m.cfg.attn_act, m.cfg.mlp_act, m.cfg.d_m, m.cfg.d_ff, m.cfg.n_heads, m.n_draws, m.base_seed
            ),
        }
    }

    pub fn analytic(&self) -> Option<AnalyticKernel> {
        match self {
            KernelModel::Analytic(k) => Some(*k),
            KernelModel::MonteCarlo(_) => None,
        }
    }

    /// Kernel value; the Monte-Carlo variant returns its point estimate.
    pub fn eval(&self, x: &TokenSequence, y: &TokenSequence) -> Result<f64> {
        match self {
            KernelModel::Analytic(k) => k.eval(x, y),
            KernelModel::MonteCarlo(m) => Ok(kernel_mc(m, x, y)?.0),
        }
    }
}

pub fn kernel_analytic_full(x: &TokenSequence, y: &TokenSequence) -> Result<f64> {
    AnalyticKernel::Full.eval(x, y)
}

pub fn kernel_analytic_simplified(x: &TokenSequence, y: &TokenSequence) -> Result<f64> {
    AnalyticKernel::Simplified.eval(x, y)
}

/// Symmetric Gram matrix; each upper-triangle cell is computed once and mirrored.
/// The Monte-Carlo variant shares parameter draws across all cells.
pub fn gram_matrix(model: &KernelModel, xs: &[TokenSequence]) -> Result<DMatrix<f64>> {
    if xs.is_empty() {
        return invalid("Gram matrix of an empty list");
    }
    match model {
        KernelModel::Analytic(k) => {
            let n = xs.len();
            let rows: Vec<Vec<f64>> = (0..n)
                .into_par_iter()
                .map(|i| (i..n).map(|j| k.eval(&xs[i], &xs[j])).collect::<Result<Vec<_>>>())
                .collect::<Result<_>>()?;
            let mut g = DMatrix::zeros(n, n);
            for (i, row) in rows.iter().enumerate() {
                for (o, v) in row.iter().enumerate() {
                    g[(i, i + o)] = *v;
                    g[(i + o, i)] = *v;
                }
            }
            Ok(g)
        }
        KernelModel::MonteCarlo(m) => {
            let f = mc_outputs(m, xs)?;
            let mut g = gram_from_outputs(&f).0;
            // mirror the upper triangle so the result is exactly symmetric
            for i in 0..g.nrows() {
                for j in 0..i {
                    g[(i, j)] = g[(j, i)];
                }
            }
            Ok(g)
        }
    }
}

/// Rectangular kernel matrix `K[i, j] = k(xs[i], ys[j])` for analytic kernels.
pub fn cross_matrix(kernel: AnalyticKernel, xs: &[TokenSequence], ys: &[TokenSequence]) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = xs
        .par_iter()
        .map(|x| ys.iter().map(|y| kernel.eval(x, y)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(xs.len(), ys.len(), |i, j| rows[i][j]))
}
