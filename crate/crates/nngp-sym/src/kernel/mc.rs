//! Monte-Carlo NNGP estimation by sampling network outputs at initialization.
//!
//! Each draw reproduces the joint law of `f(x_1), ..., f(x_n)` at the
//! configured widths without materializing every weight. All inputs are
//! sums of `nb` basis vectors (token embeddings and positional encodings),
//! so every layer that acts on them only needs the `nb x nb` Gram of that
//! basis, which is Wishart and sampled by the Bartlett decomposition.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{attention, LastPositionPe, MlpAct, NetworkConfig};
use crate::error::{invalid, Result};
use crate::hmm_data::TokenSequence;
use crate::rng::{child_rng, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McKernel {
    pub cfg: NetworkConfig,
    pub n_draws: usize,
    pub base_seed: u64,
}

impl McKernel {
    pub fn new(cfg: NetworkConfig, n_draws: usize, base_seed: u64) -> Result<Self> {
        cfg.validate()?;
        if n_draws < 2 {
            return invalid("Monte-Carlo kernel needs at least 2 draws");
        }
        Ok(Self {
            cfg,
            n_draws,
            base_seed,
        })
    }
}

/// Basis indices used by one sequence.
struct Layout {
    nb: usize,
    /// Standard deviation of each basis vector's entries.
    std: Vec<f64>,
}

impl Layout {
    fn new(cfg: &NetworkConfig) -> Self {
        let extra = usize::from(cfg.last_position_pe == LastPositionPe::KeysValues);
        let nb = cfg.n_voc + cfg.l + extra;
        let mut std = vec![(1.0 / cfg.n_voc as f64).sqrt(); cfg.n_voc];
        std.extend(std::iter::repeat_n(0.5f64.sqrt(), cfg.l + extra));
        Self { nb, std }
    }
}

/// Keys of a sequence as (token index, optional encoding index), and the query token.
struct Encoded {
    keys: Vec<(usize, Option<usize>)>,
    query: usize,
}

fn encode(cfg: &NetworkConfig, x: &TokenSequence) -> Result<Encoded> {
    if x.l != cfg.l || x.n_voc != cfg.n_voc {
        return invalid(format!(
            "sequence (L={}, n_voc={}) does not match network (L={}, n_voc={})",
            x.l, x.n_voc, cfg.l, cfg.n_voc
        ));
    }
    let l = cfg.l;
    let keys = (0..=l)
        .map(|b| {
            let pe = if b < l {
                Some(cfg.n_voc + b)
            } else if cfg.last_position_pe == LastPositionPe::KeysValues {
                Some(cfg.n_voc + l)
            } else {
                None
            };
            (x.tokens[b] as usize, pe)
        })
        .collect();
    Ok(Encoded {
        keys,
        query: x.tokens[l] as usize,
    })
}

fn chi2(r: &mut Rng, k: usize) -> f64 {
    ChiSquared::new(k as f64).expect("positive dof").sample(r)
}

fn normal_matrix(r: &mut Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(r))
}

/// Returns `F` with `F^T F` distributed as the Gram `B^T B / d_m` of the
/// embedding and encoding vectors.
fn basis_factor(cfg: &NetworkConfig, lay: &Layout, r: &mut Rng) -> DMatrix<f64> {
    let (nb, d_m) = (lay.nb, cfg.d_m);
    let s = 1.0 / (d_m as f64).sqrt();
    if d_m >= nb {
        // Bartlett: B^T B = D A A^T D with A lower triangular
        let mut f = DMatrix::zeros(nb, nb);
        for i in 0..nb {
            f[(i, i)] = chi2(r, d_m - i).sqrt();
            for j in 0..i {
                f[(j, i)] = r.sample::<f64, _>(StandardNormal);
            }
        }
        // f holds A^T; scale column i by the std of basis vector i
        for (i, sd) in lay.std.iter().enumerate() {
            f.column_mut(i).scale_mut(sd * s);
        }
        f
    } else {
        let mut b = normal_matrix(r, d_m, nb);
        for (i, sd) in lay.std.iter().enumerate() {
            b.column_mut(i).scale_mut(sd * s);
        }
        b
    }
}

fn key_score(row: &[f64], key: (usize, Option<usize>)) -> f64 {
    row[key.0] + key.1.map_or(0.0, |p| row[p])
}

/// One draw of the outputs on all sequences.
fn draw(cfg: &NetworkConfig, lay: &Layout, seqs: &[Encoded], r: &mut Rng) -> Vec<f64> {
    let d_k = cfg.d_k();
    let f = basis_factor(cfg, lay, r);
    let rank = f.nrows();
    let inv_sqrt_dk = 1.0 / (d_k as f64).sqrt();
    let mut out = vec![0.0; seqs.len()];

    // readout chain: w_demb -> W5 -> W4 reduced to norms for a linear MLP
    let wd2 = chi2(r, cfg.d_m) / cfg.d_m as f64;
    let linear = cfg.mlp_act == MlpAct::Linear;
    let u4 = if linear {
        let u5 = wd2 * chi2(r, cfg.d_ff) / cfg.d_ff as f64;
        u5 * chi2(r, cfg.d_m) / cfg.d_m as f64
    } else {
        0.0
    };
    let mut z3 = if linear {
        DMatrix::zeros(0, 0)
    } else {
        DMatrix::zeros(cfg.d_m, seqs.len())
    };
    let n_voc = cfg.n_voc;

    for _ in 0..cfg.n_heads {
        // query rows only need the token columns
        let qb = normal_matrix(r, d_k, rank) * f.columns(0, n_voc);
        let kb = normal_matrix(r, d_k, rank) * &f;
        let sc = (qb.transpose() * kb) * inv_sqrt_dk;
        let rows: Vec<Vec<f64>> = (0..n_voc).map(|t| sc.row(t).iter().copied().collect()).collect();

        if linear {
            let uo = (u4 * chi2(r, d_k) / cfg.d_m as f64).sqrt();
            let xi: DVector<f64> = DVector::from_fn(rank, |_, _| r.sample(StandardNormal));
            let rho: Vec<f64> = (f.transpose() * xi * uo).iter().copied().collect();
            for (o, s) in out.iter_mut().zip(seqs) {
                let scores: Vec<f64> = s.keys.iter().map(|&k| key_score(&rows[s.query], k)).collect();
                let a = attention(cfg.attn_act, &scores);
                *o += a.iter().zip(&s.keys).map(|(w, &k)| w * key_score(&rho, k)).sum::<f64>();
            }
        } else {
            // P = W_O,h W_V,h B as a d_m x nb matrix
            let yv = normal_matrix(r, d_k, rank) * &f;
            let wo = normal_matrix(r, cfg.d_m, d_k) / (cfg.d_m as f64).sqrt();
            let p = wo * yv;
            for (j, s) in seqs.iter().enumerate() {
                let scores: Vec<f64> = s.keys.iter().map(|&k| key_score(&rows[s.query], k)).collect();
                let a = attention(cfg.attn_act, &scores);
                let mut m = DVector::zeros(lay.nb);
                for (w, &(t, pe)) in a.iter().zip(&s.keys) {
                    m[t] += w;
                    if let Some(pe) = pe {
                        m[pe] += w;
                    }
                }
                let mut col = z3.column_mut(j);
                col.gemv(1.0, &p, &m, 1.0);
            }
        }
    }
    if !linear {
        let w4 = normal_matrix(r, cfg.d_ff, cfg.d_m) / (cfg.d_m as f64).sqrt();
        let u = w4 * z3;
        let gamma = Normal::new(0.0, (wd2 / cfg.d_ff as f64).sqrt()).expect("positive std");
        let g: Vec<f64> = (0..cfg.d_ff).map(|_| gamma.sample(r)).collect();
        for (j, o) in out.iter_mut().enumerate() {
            *o = u
                .column(j)
                .iter()
                .zip(&g)
                .map(|(v, gi)| gi * cfg.mlp_act.apply(*v))
                .sum();
        }
    }
    out
}

/// `n x n_draws` matrix of sampled outputs; column `d` uses child seed `(base_seed, d)`.
pub fn mc_outputs(model: &McKernel, xs: &[TokenSequence]) -> Result<DMatrix<f64>> {
    let cfg = &model.cfg;
    cfg.validate()?;
    let lay = Layout::new(cfg);
    let seqs = xs.iter().map(|x| encode(cfg, x)).collect::<Result<Vec<_>>>()?;
    let cols: Vec<Vec<f64>> = (0..model.n_draws as u64)
        .into_par_iter()
        .map(|d| draw(cfg, &lay, &seqs, &mut child_rng(model.base_seed, d)))
        .collect();
    Ok(DMatrix::from_fn(xs.len(), model.n_draws, |i, d| cols[d][i]))
}

/// Mean and standard error of `f(x) f(y)` over the draws.
pub fn kernel_mc(model: &McKernel, x: &TokenSequence, y: &TokenSequence) -> Result<(f64, f64)> {
    let f = mc_outputs(model, &[x.clone(), y.clone()])?;
    let prods: Vec<f64> = (0..model.n_draws).map(|d| f[(0, d)] * f[(1, d)]).collect();
    Ok(mean_stderr(&prods))
}

pub(crate) fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Gram estimate and elementwise standard errors from sampled outputs.
pub fn gram_from_outputs(f: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, d) = f.shape();
    let df = d as f64;
    let k = (f * f.transpose()) / df;
    let sq = f.map(|v| v * v);
    // E[(f_i f_j)^2] from the squared outputs
    let m2 = (&sq * sq.transpose()) / df;
    let se = DMatrix::from_fn(n, n, |i, j| {
        let var = (m2[(i, j)] - k[(i, j)].powi(2)).max(0.0) * df / (df - 1.0);
        (var / df).sqrt()
    });
    (k, se)
}
