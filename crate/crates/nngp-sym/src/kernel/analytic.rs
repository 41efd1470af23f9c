//! Closed-form kernels of the linear-attention, linear-MLP network.
//!
//! Every variant is finite rank: with `psi(x) = (1, x^1, ..., x^L)` and the
//! last-token blocks `a = x^{L+1}`, `b = 1 - x^{L+1}`,
//! `k(x, y) = sum_blk blk(x) blk(y) psi(x)^T Q_blk psi(y)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm_data::TokenSequence;
use crate::symgroup::Block;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnalyticKernel {
    /// `(1/8) A (L+1)^-2 sum_{a,b<=L+1} (x^a.y^b + delta^ab)^2`, with the
    /// delta term present at `a = b = L+1`.
    Full,
    /// As `Full` but without the delta term at `L+1`: the kernel of the
    /// network whose positional encoding vanishes at position `L+1`.
    FullZeroLastPe,
    /// Leading order in `1/L` of `Full`:
    /// `A (8L^2)^-1 [sum_{a,b<=L} x^a.y^b + 2 sum_a x^a.y^a + L]`.
    Simplified,
    /// `A (8L^2)^-1 sum_{a,b<=L} (x^a.y^b + x^a.y^a / L + 1/L)`.
    SimplifiedPrinted,
}

impl AnalyticKernel {
    pub const ALL: [AnalyticKernel; 4] = [
        AnalyticKernel::Full,
        AnalyticKernel::FullZeroLastPe,
        AnalyticKernel::Simplified,
        AnalyticKernel::SimplifiedPrinted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AnalyticKernel::Full => "analytic_full",
            AnalyticKernel::FullZeroLastPe => "analytic_full_zero_last_pe",
            AnalyticKernel::Simplified => "analytic_simplified",
            AnalyticKernel::SimplifiedPrinted => "analytic_simplified_printed",
        }
    }

    pub fn eval(self, x: &TokenSequence, y: &TokenSequence) -> Result<f64> {
        check_pair(x, y)?;
        if self.is_simplified() && x.l < 2 {
            return Err(Error::InvalidArgument("simplified kernel needs L >= 2".into()));
        }
        if x.last() != y.last() {
            return Ok(0.0);
        }
        let l = x.l;
        let lf = l as f64;
        match self {
            AnalyticKernel::Full | AnalyticKernel::FullZeroLastPe => {
                let cross = cross_sum(x, y, l + 1);
                let diag = diag_sum(x, y, l);
                let last = if self == AnalyticKernel::Full { 1.0 } else { 0.0 };
                // (d + delta e)^2 = d + 2 delta e d + delta e for d, e in {0, 1}
                let s = cross + 2.0 * diag + 2.0 * last + lf + last;
                Ok(s / (8.0 * (lf + 1.0).powi(2)))
            }
            AnalyticKernel::Simplified => {
                let s = cross_sum(x, y, l) + 2.0 * diag_sum(x, y, l) + lf;
                Ok(s / (8.0 * lf * lf))
            }
            AnalyticKernel::SimplifiedPrinted => {
                let s = cross_sum(x, y, l) + diag_sum(x, y, l) + lf;
                Ok(s / (8.0 * lf * lf))
            }
        }
    }

    fn is_simplified(self) -> bool {
        matches!(self, AnalyticKernel::Simplified | AnalyticKernel::SimplifiedPrinted)
    }

    /// The `(L+1) x (L+1)` matrix `Q_blk` on `psi = (1, x^1, ..., x^L)`.
    pub fn q_matrix(self, l: usize, block: Block) -> DMatrix<f64> {
        let lf = l as f64;
        // constant, linear and (off-diagonal, diagonal) quadratic coefficients
        let (c0, c1, c2, c2d, scale) = match (self, block) {
            (AnalyticKernel::Full, Block::A) => (lf * lf + 3.0 * lf + 4.0, -(lf + 1.0), 2.0, 6.0, full_scale(l)),
            (AnalyticKernel::Full, Block::B) => (lf * lf + 5.0 * lf + 4.0, -(lf + 3.0), 2.0, 6.0, full_scale(l)),
            (AnalyticKernel::FullZeroLastPe, Block::A) => {
                (lf * lf + 3.0 * lf + 1.0, -(lf + 1.0), 2.0, 6.0, full_scale(l))
            }
            (AnalyticKernel::FullZeroLastPe, Block::B) => {
                (lf * lf + 5.0 * lf + 1.0, -(lf + 3.0), 2.0, 6.0, full_scale(l))
            }
            (AnalyticKernel::Simplified, _) => (lf * lf + 3.0 * lf, -(lf + 2.0), 2.0, 6.0, 1.0 / (8.0 * lf * lf)),
            (AnalyticKernel::SimplifiedPrinted, _) => {
                (lf * lf + 2.0 * lf, -(lf + 1.0), 2.0, 4.0, 1.0 / (8.0 * lf * lf))
            }
        };
        let mut q = DMatrix::from_element(l + 1, l + 1, c2);
        for a in 1..=l {
            q[(a, a)] = c2d;
            q[(0, a)] = c1;
            q[(a, 0)] = c1;
        }
        q[(0, 0)] = c0;
        q * scale
    }
}

fn full_scale(l: usize) -> f64 {
    1.0 / (8.0 * ((l + 1) as f64).powi(2))
}

fn check_pair(x: &TokenSequence, y: &TokenSequence) -> Result<()> {
    if x.n_voc != 2 || y.n_voc != 2 {
        return Err(Error::Unsupported("analytic kernels are derived for n_voc = 2".into()));
    }
    if x.l != y.l {
        return Err(Error::InvalidArgument(format!(
            "context lengths differ: {} vs {}",
            x.l, y.l
        )));
    }
    Ok(())
}

/// `sum_{a,b<=m} x^a . y^b` with one-hot dot products.
fn cross_sum(x: &TokenSequence, y: &TokenSequence, m: usize) -> f64 {
    let zx = x.tokens[..m].iter().filter(|&&t| t == 0).count() as f64;
    let zy = y.tokens[..m].iter().filter(|&&t| t == 0).count() as f64;
    let mf = m as f64;
    zx * zy + (mf - zx) * (mf - zy)
}

/// `sum_{a<=m} x^a . y^a`.
fn diag_sum(x: &TokenSequence, y: &TokenSequence, m: usize) -> f64 {
    x.tokens[..m].iter().zip(&y.tokens[..m]).filter(|(a, b)| a == b).count() as f64
}

/// `psi(x) = (1, x^1, ..., x^L)`.
pub fn psi(x: &TokenSequence) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.l + 1);
    v.push(1.0);
    v.extend((1..=x.l).map(|a| x.x(a)));
    v
}

/// Evaluates the kernel through its finite-rank form.
pub fn eval_via_q(kernel: AnalyticKernel, x: &TokenSequence, y: &TokenSequence) -> Result<f64> {
    check_pair(x, y)?;
    let (px, py) = (psi(x), psi(y));
    let mut total = 0.0;
    for blk in Block::ALL {
        let f = blk.factor(x) * blk.factor(y);
        if f == 0.0 {
            continue;
        }
        let q = kernel.q_matrix(x.l, blk);
        let mut s = 0.0;
        for i in 0..=x.l {
            for j in 0..=x.l {
                s += px[i] * q[(i, j)] * py[j];
            }
        }
        total += f * s;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_zero(l: usize) -> TokenSequence {
        TokenSequence::new(vec![0; l + 2], l, 2).unwrap()
    }

    #[test]
    fn hand_value_l1() {
        let x = all_zero(1);
        // (L+1)^2 = 4 terms: off-diagonal (1)^2 twice, diagonal (1+1)^2 twice
        let want = (1.0 + 1.0 + 4.0 + 4.0) / (8.0 * 4.0);
        assert_eq!(AnalyticKernel::Full.eval(&x, &x).unwrap(), want);
        assert!((want - 5.0 / 16.0).abs() < 1e-15);
        let zero_pe = (1.0 + 1.0 + 4.0 + 1.0) / (8.0 * 4.0);
        assert_eq!(AnalyticKernel::FullZeroLastPe.eval(&x, &x).unwrap(), zero_pe);
    }

    #[test]
    fn last_token_mismatch_vanishes() {
        let x = TokenSequence::new(vec![0, 1, 0, 1, 0, 1], 4, 2).unwrap();
        let y = TokenSequence::new(vec![0, 1, 0, 1, 1, 1], 4, 2).unwrap();
        for k in AnalyticKernel::ALL {
            assert_eq!(k.eval(&x, &y).unwrap(), 0.0);
        }
    }

    #[test]
    fn vocabulary_must_be_binary() {
        let x = TokenSequence::new(vec![0, 2, 1, 0], 2, 3).unwrap();
        assert!(matches!(AnalyticKernel::Full.eval(&x, &x), Err(Error::Unsupported(_))));
    }
}
