//! Finite-width one-block transformer: parameters and forward pass.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hmm_data::TokenSequence;
use crate::rng::{rng, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttnAct {
    /// `Phi(u) = u / (L+1)`.
    LinearScaled,
    /// Softmax over the key index.
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MlpAct {
    Linear,
    Erf,
    Relu,
}

impl MlpAct {
    pub fn apply(self, u: f64) -> f64 {
        match self {
            MlpAct::Linear => u,
            MlpAct::Erf => statrs::function::erf::erf(u),
            MlpAct::Relu => u.max(0.0),
        }
    }
}

/// Positional encoding seen at position `L+1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LastPositionPe {
    /// Zero everywhere (the default network).
    Zero,
    /// A random encoding added to the key and value of position `L+1` only;
    /// the query stays the bare embedding. This is the network whose kernel
    /// carries the delta term at `a = b = L+1` in [`super::AnalyticKernel::Full`].
    KeysValues,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub d_m: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub n_voc: usize,
    pub l: usize,
    pub attn_act: AttnAct,
    pub mlp_act: MlpAct,
    pub last_position_pe: LastPositionPe,
}

impl NetworkConfig {
    /// Widths `d_m = d_ff = 1024`, 16 heads, binary vocabulary.
    pub fn standard(l: usize, attn_act: AttnAct, mlp_act: MlpAct) -> Self {
        Self {
            d_m: 1024,
            d_ff: 1024,
            n_heads: 16,
            n_voc: 2,
            l,
            attn_act,
            mlp_act,
            last_position_pe: LastPositionPe::Zero,
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_m / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_m == 0 || self.d_ff == 0 || self.n_heads == 0 || self.n_voc == 0 || self.l == 0 {
            return invalid("all widths and L must be at least 1");
        }
        if self.d_m % self.n_heads != 0 {
            return invalid(format!(
                "d_m = {} not divisible by n_heads = {}",
                self.d_m, self.n_heads
            ));
        }
        Ok(())
    }
}

/// All weights of the network. Matrices act on column vectors.
#[derive(Clone, Debug)]
pub struct NetworkParams {
    pub cfg: NetworkConfig,
    /// `d_m x n_voc`.
    pub w_emb: DMatrix<f64>,
    /// `d_m x (L+1)`; column `L` (position `L+1`) is zero.
    pub pe: DMatrix<f64>,
    /// Key/value-only encoding of position `L+1` (see [`LastPositionPe`]).
    pub pe_last_kv: Option<DVector<f64>>,
    /// Per head, `d_k x d_m`.
    pub w_q: Vec<DMatrix<f64>>,
    pub w_k: Vec<DMatrix<f64>>,
    pub w_v: Vec<DMatrix<f64>>,
    /// `d_m x (n_heads d_k)`, columns grouped by head.
    pub w_o: DMatrix<f64>,
    pub w4: DMatrix<f64>,
    pub b4: DVector<f64>,
    pub w5: DMatrix<f64>,
    pub b5: DVector<f64>,
    /// `n_voc x d_m`.
    pub w_demb: DMatrix<f64>,
    pub seed: u64,
}

fn gaussian(r: &mut Rng, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    let n = Normal::new(0.0, std).expect("positive std");
    DMatrix::from_fn(rows, cols, |_, _| n.sample(r))
}

/// LeCun initialization: standard deviation `1/sqrt(fan-in)`, zero biases,
/// positional encodings `N(0, 1/2)` at positions `1..=L` and zero at `L+1`.
pub fn init_params(cfg: &NetworkConfig, seed: u64) -> Result<NetworkParams> {
    cfg.validate()?;
    let mut r = rng(seed);
    let (d_m, d_k, l) = (cfg.d_m, cfg.d_k(), cfg.l);
    let w_emb = gaussian(&mut r, d_m, cfg.n_voc, (1.0 / cfg.n_voc as f64).sqrt());
    let mut pe = gaussian(&mut r, d_m, l + 1, 0.5f64.sqrt());
    pe.column_mut(l).fill(0.0);
    let pe_last_kv = match cfg.last_position_pe {
        LastPositionPe::Zero => None,
        LastPositionPe::KeysValues => Some(gaussian(&mut r, d_m, 1, 0.5f64.sqrt()).column(0).into_owned()),
    };
    let s_m = 1.0 / (d_m as f64).sqrt();
    let heads = |r: &mut Rng| (0..cfg.n_heads).map(|_| gaussian(r, d_k, d_m, s_m)).collect::<Vec<_>>();
    let w_q = heads(&mut r);
    let w_k = heads(&mut r);
    let w_v = heads(&mut r);
    let w_o = gaussian(&mut r, d_m, cfg.n_heads * d_k, s_m);
    let w4 = gaussian(&mut r, cfg.d_ff, d_m, s_m);
    let w5 = gaussian(&mut r, d_m, cfg.d_ff, 1.0 / (cfg.d_ff as f64).sqrt());
    let w_demb = gaussian(&mut r, cfg.n_voc, d_m, s_m);
    Ok(NetworkParams {
        cfg: cfg.clone(),
        w_emb,
        pe,
        pe_last_kv,
        w_q,
        w_k,
        w_v,
        w_o,
        w4,
        b4: DVector::zeros(cfg.d_ff),
        w5,
        b5: DVector::zeros(d_m),
        w_demb,
        seed,
    })
}

impl NetworkParams {
    /// Sets every weight, bias and encoding to zero.
    pub fn zeroed(mut self) -> Self {
        for m in [
            &mut self.w_emb,
            &mut self.pe,
            &mut self.w_o,
            &mut self.w4,
            &mut self.w5,
            &mut self.w_demb,
        ] {
            m.fill(0.0);
        }
        if let Some(p) = &mut self.pe_last_kv {
            p.fill(0.0);
        }
        for v in self
            .w_q
            .iter_mut()
            .chain(self.w_k.iter_mut())
            .chain(self.w_v.iter_mut())
        {
            v.fill(0.0);
        }
        self.b4.fill(0.0);
        self.b5.fill(0.0);
        self
    }
}

/// Output `f(X)`: the first vocabulary component at position `L+1`.
///
/// Attention normalizes over keys at every query, but without residual
/// connections only the query at `L+1` reaches the readout, so only that
/// query is computed.
pub fn forward(params: &NetworkParams, x: &TokenSequence) -> Result<f64> {
    let cfg = &params.cfg;
    if x.l != cfg.l || x.n_voc != cfg.n_voc {
        return invalid(format!(
            "sequence (L={}, n_voc={}) does not match network (L={}, n_voc={})",
            x.l, x.n_voc, cfg.l, cfg.n_voc
        ));
    }
    let l = cfg.l;
    // z1 for keys/values at positions 1..=L+1, and the query input at L+1
    let kv: Vec<DVector<f64>> = (0..=l)
        .map(|b| {
            let mut z = params.w_emb.column(x.tokens[b] as usize) + params.pe.column(b);
            if b == l {
                if let Some(p) = &params.pe_last_kv {
                    z += p;
                }
            }
            z
        })
        .collect();
    let query_in = params.w_emb.column(x.tokens[l] as usize) + params.pe.column(l);
    let d_k = cfg.d_k();
    let scale = 1.0 / (d_k as f64).sqrt();
    let mut z2 = DVector::zeros(cfg.n_heads * d_k);
    for h in 0..cfg.n_heads {
        let q = &params.w_q[h] * &query_in;
        let scores: Vec<f64> = kv.iter().map(|z| q.dot(&(&params.w_k[h] * z)) * scale).collect();
        let attn = attention(cfg.attn_act, &scores);
        let mut acc = DVector::zeros(d_k);
        for (a, z) in attn.iter().zip(&kv) {
            acc += *a * (&params.w_v[h] * z);
        }
        z2.rows_mut(h * d_k, d_k).copy_from(&acc);
    }
    let z3 = &params.w_o * z2;
    let z4 = (&params.w4 * z3 + &params.b4).map(|u| cfg.mlp_act.apply(u));
    let z5 = &params.w5 * z4 + &params.b5;
    Ok(params.w_demb.row(0).dot(&z5.transpose()))
}

pub(crate) fn attention(act: AttnAct, scores: &[f64]) -> Vec<f64> {
    match act {
        AttnAct::LinearScaled => {
            let n = scores.len() as f64;
            scores.iter().map(|s| s / n).collect()
        }
        AttnAct::Softmax => {
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|v| v / z).collect()
        }
    }
}
