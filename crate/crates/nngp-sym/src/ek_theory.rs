//! Equivalent-kernel theory: spectra over the symmetry sectors of the HMM
//! measure, target projections, predictions and MSE in and out of distribution.
//!
//! The linear-attention kernels are finite rank on `psi = (1, x^1, ..., x^L)`
//! within each last-token block, so every quantity reduces to the per-block
//! moments `S = E[blk psi psi^T]` and `r = E[y blk psi]`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use num_traits::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{invalid, Error, Result};
use crate::gp_inference::mean_stderr;
use crate::hmm_data::{generate_dataset, mixture_optimal_from_counts, MixtureParams, ParityCounts, TokenSequence};
use crate::kernel::{gram_matrix, psi, AnalyticKernel, KernelModel};
use crate::symgroup::{fourier_eigenvector, trivial_raw_basis, BasisFunction, BasisKind, Block, Parity};

pub const EXACT_MAX_L: usize = 14;
pub const EXACT_MAX_GRID: usize = 64;
const SECTOR_TOL: f64 = 1e-8;
const MC_SECTOR_SIGMAS: f64 = 4.0;
const CLIP_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MeasureMode {
    /// Sum over all `2^{L+2}` sequences with a `grid x grid` midpoint rule in `(p, q)`.
    Exact {
        grid: usize,
    },
    /// Same quadrature, but moments are computed in closed form from the
    /// per-position independence given `(p, q, h^1)`; feasible for any `L`.
    Moments {
        grid: usize,
    },
    MonteCarlo {
        n_samples: usize,
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureHandle {
    pub mix: MixtureParams,
    pub l: usize,
    pub mode: MeasureMode,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Expectation {
    pub value: Complex64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockMoments {
    /// `E[blk psi psi^T]`.
    pub s: DMatrix<f64>,
    /// `E[y blk psi]` with `y` the label indicator.
    pub r: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasureMoments {
    pub a: BlockMoments,
    pub b: BlockMoments,
    pub label_mean: f64,
}

impl MeasureMoments {
    pub fn block(&self, b: Block) -> &BlockMoments {
        match b {
            Block::A => &self.a,
            Block::B => &self.b,
        }
    }
}

fn check_l(l: usize) -> Result<()> {
    if l < 2 || l % 2 == 1 {
        return invalid(format!("L must be even and at least 2, got {l}"));
    }
    Ok(())
}

impl MeasureHandle {
    pub fn new(mix: MixtureParams, l: usize, mode: MeasureMode) -> Result<Self> {
        mix.validate()?;
        check_l(l)?;
        match mode {
            MeasureMode::Exact { grid } => {
                if l > EXACT_MAX_L || grid > EXACT_MAX_GRID {
                    return Err(Error::Feasibility(format!(
                        "exact enumeration capped at L <= {EXACT_MAX_L}, grid <= {EXACT_MAX_GRID} (got L={l}, grid={grid}); use moments or Monte-Carlo mode"
                    )));
                }
                if grid < 1 {
                    return invalid("quadrature grid must be at least 1");
                }
            }
            MeasureMode::Moments { grid } => {
                if grid < 1 {
                    return invalid("quadrature grid must be at least 1");
                }
            }
            MeasureMode::MonteCarlo { n_samples, .. } => {
                if n_samples < 2 {
                    return invalid("Monte-Carlo measure needs at least 2 samples");
                }
            }
        }
        Ok(Self { mix, l, mode })
    }

    pub fn exact(mix: MixtureParams, l: usize, grid: usize) -> Result<Self> {
        Self::new(mix, l, MeasureMode::Exact { grid })
    }

    pub fn moments(mix: MixtureParams, l: usize, grid: usize) -> Result<Self> {
        Self::new(mix, l, MeasureMode::Moments { grid })
    }

    pub fn monte_carlo(mix: MixtureParams, l: usize, n_samples: usize, seed: u64) -> Result<Self> {
        Self::new(mix, l, MeasureMode::MonteCarlo { n_samples, seed })
    }

    pub fn is_sampled(&self) -> bool {
        matches!(self.mode, MeasureMode::MonteCarlo { .. })
    }

    /// Quadrature nodes as `(P(token 0 at odd positions), P(token 0 at even positions), weight)`,
    /// with both initial hidden states listed separately.
    fn nodes(&self) -> Vec<(f64, f64, f64)> {
        let grid = match self.mode {
            MeasureMode::Exact { grid } | MeasureMode::Moments { grid } => grid,
            MeasureMode::MonteCarlo { .. } => 1,
        };
        let (ps, qs) = if self.mix.w == 0.0 {
            (vec![self.mix.p_a], vec![self.mix.q_a])
        } else {
            (self.mix.p_nodes(grid), self.mix.q_nodes(grid))
        };
        let w = 0.5 / (ps.len() * qs.len()) as f64;
        let mut out = Vec::with_capacity(2 * ps.len() * qs.len());
        for &p in &ps {
            for &q in &qs {
                out.push((p, q, w));
                out.push((q, p, w));
            }
        }
        out
    }

    /// Weighted support: every sequence in exact mode, the samples in Monte-Carlo mode.
    pub fn support(&self) -> Result<Vec<(TokenSequence, f64)>> {
        match self.mode {
            MeasureMode::Exact { .. } => Ok(self.enumerate()),
            MeasureMode::MonteCarlo { n_samples, seed } => {
                let d = generate_dataset(&self.mix, n_samples, self.l, seed)?;
                let w = 1.0 / n_samples as f64;
                Ok(d.sequences.into_iter().map(|x| (x, w)).collect())
            }
            MeasureMode::Moments { .. } => Err(Error::Unsupported(
                "moments mode only provides low-order moments; use exact or Monte-Carlo mode for general expectations"
                    .into(),
            )),
        }
    }

    fn enumerate(&self) -> Vec<(TokenSequence, f64)> {
        let l = self.l;
        let half = l / 2 + 1; // odd and even positions among 1..=L+2
        let nodes = self.nodes();
        let mut table = vec![0.0; (half + 1) * (half + 1)];
        for n0o in 0..=half {
            for n0e in 0..=half {
                table[n0o * (half + 1) + n0e] = nodes
                    .iter()
                    .map(|&(po, pe, w)| {
                        w * po.powi(n0o as i32)
                            * (1.0 - po).powi((half - n0o) as i32)
                            * pe.powi(n0e as i32)
                            * (1.0 - pe).powi((half - n0e) as i32)
                    })
                    .sum();
            }
        }
        (0u64..1 << (l + 2))
            .filter_map(|bits| {
                let tokens: Vec<u8> = (0..l + 2).map(|i| (bits >> i & 1) as u8).collect();
                // index i is position i+1, so even indices are odd positions
                let n0o = tokens.iter().step_by(2).filter(|&&t| t == 0).count();
                let n0e = tokens.iter().skip(1).step_by(2).filter(|&&t| t == 0).count();
                let w = table[n0o * (half + 1) + n0e];
                (w > 0.0).then(|| (TokenSequence { tokens, l, n_voc: 2 }, w))
            })
            .collect()
    }

    /// Per-block moments `S`, `r` and the label mean.
    pub fn block_moments(&self) -> Result<MeasureMoments> {
        let n = self.l + 1;
        let mut acc = [
            (DMatrix::zeros(n, n), DVector::zeros(n)),
            (DMatrix::zeros(n, n), DVector::zeros(n)),
        ];
        let mut label_mean = 0.0;
        match self.mode {
            MeasureMode::Moments { .. } => {
                for (po, pe, w) in self.nodes() {
                    let pi: Vec<f64> = std::iter::once(1.0)
                        .chain((1..=self.l).map(|a| if a % 2 == 1 { po } else { pe }))
                        .collect();
                    // position L+1 is odd, the label at L+2 is even
                    for (bi, f) in [po, 1.0 - po].into_iter().enumerate() {
                        let (s, r) = &mut acc[bi];
                        for i in 0..n {
                            for j in 0..n {
                                s[(i, j)] += w * f * if i == j { pi[i] } else { pi[i] * pi[j] };
                            }
                            r[i] += w * f * pe * pi[i];
                        }
                    }
                    label_mean += w * pe;
                }
            }
            _ => {
                for (x, w) in self.support()? {
                    let ps = psi(&x);
                    let y = x.label();
                    let bi = if x.last() == 0 { 0 } else { 1 };
                    let (s, r) = &mut acc[bi];
                    for i in 0..n {
                        for j in 0..n {
                            s[(i, j)] += w * ps[i] * ps[j];
                        }
                        r[i] += w * y * ps[i];
                    }
                    label_mean += w * y;
                }
            }
        }
        let [(sa, ra), (sb, rb)] = acc;
        Ok(MeasureMoments {
            a: BlockMoments { s: sa, r: ra },
            b: BlockMoments { s: sb, r: rb },
            label_mean,
        })
    }

    /// `E[opt(X)^2]` for the mixture's own optimal predictor at quadrature `grid`.
    pub fn optimal_sq_mean(&self, grid: usize) -> Result<f64> {
        if let MeasureMode::MonteCarlo { .. } = self.mode {
            let sup = self.support()?;
            let mut s = 0.0;
            for (x, w) in &sup {
                let o = mixture_optimal_from_counts(&self.mix, &ParityCounts::of_context(x), true, grid)?;
                s += w * o * o;
            }
            return Ok(s);
        }
        // context counts: L/2+1 odd positions, L/2 even positions
        let (no, ne) = (self.l / 2 + 1, self.l / 2);
        let nodes = self.nodes();
        let classes: Vec<(usize, usize)> = (0..=no).flat_map(|a| (0..=ne).map(move |b| (a, b))).collect();
        let parts = classes
            .par_iter()
            .map(|&(k0, k1)| {
                let pr: f64 = nodes
                    .iter()
                    .map(|&(po, pe, w)| {
                        let lp = ln_binomial(no as u64, k0 as u64)
                            + xlogy(k0, po)
                            + xlogy(no - k0, 1.0 - po)
                            + ln_binomial(ne as u64, k1 as u64)
                            + xlogy(k1, pe)
                            + xlogy(ne - k1, 1.0 - pe);
                        w * lp.exp()
                    })
                    .sum();
                if pr == 0.0 {
                    return Ok(0.0);
                }
                let c = ParityCounts {
                    n0_odd: k0,
                    n_odd: no,
                    n0_even: k1,
                    n_even: ne,
                };
                let o = mixture_optimal_from_counts(&self.mix, &c, true, grid)?;
                Ok(pr * o * o)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(parts.iter().sum())
    }
}

fn xlogy(n: usize, p: f64) -> f64 {
    if n == 0 {
        0.0
    } else {
        n as f64 * p.ln()
    }
}

/// `E[h(X)]`: a weighted sum in exact mode, a sample mean with standard error in Monte-Carlo mode.
pub fn measure_expect<F>(h: F, m: &MeasureHandle) -> Result<Expectation>
where
    F: Fn(&TokenSequence) -> Complex64 + Sync,
{
    let sup = m.support()?;
    let vals: Vec<Complex64> = sup.par_iter().map(|(x, _)| h(x)).collect();
    let value: Complex64 = vals.iter().zip(&sup).map(|(v, (_, w))| v * w).sum();
    let stderr = if m.is_sampled() {
        let re: Vec<f64> = vals.iter().map(|v| v.re).collect();
        let im: Vec<f64> = vals.iter().map(|v| v.im).collect();
        let (a, b) = (mean_stderr(&re).1, mean_stderr(&im).1);
        (a * a + b * b).sqrt()
    } else {
        0.0
    };
    Ok(Expectation { value, stderr })
}

/// Operator and Gram matrices of a basis: `M[i,j] = <phi_i, K phi_j>`, `G[i,j] = <phi_i, phi_j>`.
#[derive(Clone, Debug)]
pub struct OperatorMatrices {
    pub m: DMatrix<Complex64>,
    pub g: DMatrix<Complex64>,
    /// Elementwise standard errors of `G` in Monte-Carlo mode.
    pub g_stderr: Option<DMatrix<f64>>,
}

fn check_basis(basis: &[BasisFunction], l: usize) -> Result<()> {
    if let Some(b) = basis.iter().find(|b| b.l != l) {
        return invalid(format!("basis function has L={} but the measure has L={l}", b.l));
    }
    Ok(())
}

fn hermitian_form(c1: &[Complex64], a: &DMatrix<f64>, c2: &[Complex64]) -> Complex64 {
    let mut s = Complex64::zero();
    for i in 0..c1.len() {
        let mut row = Complex64::zero();
        for j in 0..c2.len() {
            row += a[(i, j)] * c2[j];
        }
        s += c1[i].conj() * row;
    }
    s
}

/// Uses the finite-rank form for analytic kernels and the explicit double
/// sum over the measure's support otherwise.
pub fn operator_matrix(basis: &[BasisFunction], kernel: &KernelModel, m: &MeasureHandle) -> Result<OperatorMatrices> {
    match kernel {
        KernelModel::Analytic(k) => operator_matrix_finite_rank(basis, *k, m),
        KernelModel::MonteCarlo(_) => operator_matrix_direct(basis, kernel, m),
    }
}

pub fn operator_matrix_finite_rank(
    basis: &[BasisFunction],
    k: AnalyticKernel,
    m: &MeasureHandle,
) -> Result<OperatorMatrices> {
    check_basis(basis, m.l)?;
    let mom = m.block_moments()?;
    let n = basis.len();
    let coeffs: Vec<Vec<Complex64>> = basis.iter().map(BasisFunction::coefficients).collect();
    let sqs = Block::ALL.map(|b| {
        let s = &mom.block(b).s;
        s * k.q_matrix(m.l, b) * s
    });
    let mut om = DMatrix::zeros(n, n);
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if basis[i].block != basis[j].block {
                continue;
            }
            let bi = basis[i].block as usize;
            om[(i, j)] = hermitian_form(&coeffs[i], &sqs[bi], &coeffs[j]);
            g[(i, j)] = hermitian_form(&coeffs[i], &mom.block(basis[i].block).s, &coeffs[j]);
        }
    }
    let g_stderr = if m.is_sampled() {
        Some(gram_stderr(basis, m)?)
    } else {
        None
    };
    Ok(OperatorMatrices { m: om, g, g_stderr })
}

fn basis_values(basis: &[BasisFunction], sup: &[(TokenSequence, f64)]) -> DMatrix<Complex64> {
    DMatrix::from_fn(sup.len(), basis.len(), |s, i| basis[i].eval(&sup[s].0))
}

fn gram_stderr(basis: &[BasisFunction], m: &MeasureHandle) -> Result<DMatrix<f64>> {
    let sup = m.support()?;
    let phi = basis_values(basis, &sup);
    let n = basis.len();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let re: Vec<f64> = (0..sup.len()).map(|s| (phi[(s, i)].conj() * phi[(s, j)]).re).collect();
        let im: Vec<f64> = (0..sup.len()).map(|s| (phi[(s, i)].conj() * phi[(s, j)]).im).collect();
        mean_stderr(&re).1.hypot(mean_stderr(&im).1)
    }))
}

/// `M = Phi^H W K W Phi` over the weighted support.
pub fn operator_matrix_direct(
    basis: &[BasisFunction],
    kernel: &KernelModel,
    m: &MeasureHandle,
) -> Result<OperatorMatrices> {
    check_basis(basis, m.l)?;
    let sup = m.support()?;
    let xs: Vec<TokenSequence> = sup.iter().map(|(x, _)| x.clone()).collect();
    let k = gram_matrix(kernel, &xs)?.map(|v| Complex64::new(v, 0.0));
    let wphi = {
        let mut p = basis_values(basis, &sup);
        for (s, (_, w)) in sup.iter().enumerate() {
            p.row_mut(s).scale_mut(*w);
        }
        p
    };
    let phi = basis_values(basis, &sup);
    let om = wphi.adjoint() * k * &wphi;
    let g = wphi.adjoint() * phi;
    let g_stderr = if m.is_sampled() {
        Some(gram_stderr(basis, m)?)
    } else {
        None
    };
    Ok(OperatorMatrices { m: om, g, g_stderr })
}

/// Symmetry sector of a basis function: block plus trivial or Fourier `(parity, k)`.
fn sector(b: &BasisFunction) -> (Block, Option<(Parity, usize)>) {
    match b.kind {
        BasisKind::Fourier { parity, k } => (b.block, Some((parity, k))),
        BasisKind::TrivialRaw(_) => (b.block, None),
    }
}

/// Fails when the operator or Gram matrix couples different sectors.
pub fn check_sectors(basis: &[BasisFunction], ops: &OperatorMatrices) -> Result<()> {
    let n = basis.len();
    for i in 0..n {
        for j in 0..n {
            if sector(&basis[i]) == sector(&basis[j]) {
                continue;
            }
            let g = ops.g[(i, j)].norm();
            let bad = match &ops.g_stderr {
                Some(se) => g > MC_SECTOR_SIGMAS * se[(i, j)] + 1e-15,
                None => {
                    let gs = (ops.g[(i, i)].norm() * ops.g[(j, j)].norm()).sqrt();
                    let ms = (ops.m[(i, i)].norm() * ops.m[(j, j)].norm()).sqrt();
                    g > SECTOR_TOL * gs + 1e-15 || ops.m[(i, j)].norm() > SECTOR_TOL * ms + 1e-15
                }
            };
            if bad {
                return Err(Error::SymmetryViolation(format!(
                    "basis functions {:?} and {:?} mix (|G|={g:e}, |M|={:e})",
                    basis[i].kind,
                    basis[j].kind,
                    ops.m[(i, j)].norm()
                )));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sector {
    /// Trivial representation; `index` orders the block's eigenvalues descending.
    Trivial { index: usize },
    /// Standard representation of the odd- or even-position permutations.
    Standard { parity: Parity },
}

/// One orthonormal eigenfunction `blk(x) * coeffs . psi(x)` and its target projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eigenfunction {
    pub k: Option<usize>,
    pub coeffs: Vec<Complex64>,
    pub g: Complex64,
}

impl Eigenfunction {
    pub fn eval(&self, block: Block, x: &TokenSequence) -> Complex64 {
        let f = block.factor(x);
        if f == 0.0 {
            return Complex64::zero();
        }
        let mut v = self.coeffs[0];
        for (a, c) in self.coeffs.iter().enumerate().skip(1) {
            v += c * x.x(a);
        }
        v * f
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralEntry {
    pub sector: Sector,
    pub block: Block,
    pub eigenvalue: f64,
    pub degeneracy: usize,
    /// Relative spread of the eigenvalue across the family's members.
    pub spread: f64,
    pub members: Vec<Eigenfunction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TargetKind {
    None,
    Labels,
    Optimal { grid: usize },
    Function,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralModel {
    pub l: usize,
    pub kernel: AnalyticKernel,
    pub sigma2: f64,
    pub measure: MeasureHandle,
    pub entries: Vec<SpectralEntry>,
    pub target: TargetKind,
    pub target_norm: f64,
    /// Trace mass removed by clipping slightly negative eigenvalues.
    pub clipped_mass: f64,
}

impl SpectralModel {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }

    /// `sum_i m_i lambda_i`.
    pub fn trace(&self) -> f64 {
        self.entries.iter().map(|e| e.eigenvalue * e.degeneracy as f64).sum()
    }

    pub fn standard_entries(&self) -> impl Iterator<Item = &SpectralEntry> {
        self.entries
            .iter()
            .filter(|e| matches!(e.sector, Sector::Standard { .. }))
    }

    pub fn trivial_entries(&self) -> impl Iterator<Item = &SpectralEntry> {
        self.entries
            .iter()
            .filter(|e| matches!(e.sector, Sector::Trivial { .. }))
    }

    pub fn family(&self, parity: Parity, block: Block) -> Option<&SpectralEntry> {
        self.entries
            .iter()
            .find(|e| e.sector == Sector::Standard { parity } && e.block == block)
    }
}

/// Modified Gram-Schmidt of real vectors under the inner product `S`; drops
/// vectors whose residual norm is negligible.
fn gram_schmidt(vs: &[DVector<f64>], s: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    let scale = vs.iter().map(|v| v.dot(&(s * v))).fold(0.0f64, f64::max);
    for v in vs {
        let mut u = v.clone();
        for e in &out {
            let c = e.dot(&(s * &u));
            u -= e * c;
        }
        let n2 = u.dot(&(s * &u));
        if n2 > 1e-13 * scale.max(1e-300) {
            out.push(u / n2.sqrt());
        }
    }
    out
}

/// Exact spectrum of an analytic kernel on the measure: four standard-family
/// eigenvalues (degeneracy `L/2 - 1` each) and up to six trivial ones.
pub fn solve_spectrum(kernel: &KernelModel, m: &MeasureHandle, sigma2: f64) -> Result<SpectralModel> {
    let Some(k) = kernel.analytic() else {
        return Err(Error::Unsupported(
            "spectra are solved only for the analytic linear kernels".into(),
        ));
    };
    if !(sigma2 > 0.0) {
        return invalid(format!("noise variance must be positive, got {sigma2}"));
    }
    let l = m.l;
    let half = l / 2;
    // the whole basis, for the sector check
    let mut basis = Vec::new();
    for block in Block::ALL {
        basis.extend(trivial_raw_basis(l, block)?);
        for parity in [Parity::Odd, Parity::Even] {
            for kk in 1..half {
                basis.push(fourier_eigenvector(l, parity, kk, block)?);
            }
        }
    }
    let ops = operator_matrix_finite_rank(&basis, k, m)?;
    check_sectors(&basis, &ops)?;
    let mom = m.block_moments()?;

    let mut entries = Vec::new();
    for block in Block::ALL {
        let s = &mom.block(block).s;
        let q = k.q_matrix(l, block);
        let sqs = s * &q * s;
        // trivial sector
        let raw: Vec<DVector<f64>> = trivial_raw_basis(l, block)?
            .iter()
            .map(|b| DVector::from_iterator(l + 1, b.coefficients().iter().map(|c| c.re)))
            .collect();
        let u = gram_schmidt(&raw, s);
        if !u.is_empty() {
            let um = DMatrix::from_columns(&u);
            let t = um.transpose() * &sqs * &um;
            let t = (&t + t.transpose()) * 0.5;
            let eig = SymmetricEigen::new(t);
            let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            for (index, &o) in order.iter().enumerate() {
                let c = &um * eig.eigenvectors.column(o);
                entries.push(SpectralEntry {
                    sector: Sector::Trivial { index },
                    block,
                    eigenvalue: eig.eigenvalues[o],
                    degeneracy: 1,
                    spread: 0.0,
                    members: vec![Eigenfunction {
                        k: None,
                        coeffs: c.iter().map(|v| Complex64::new(*v, 0.0)).collect(),
                        g: Complex64::zero(),
                    }],
                });
            }
        }
        // standard families
        for parity in [Parity::Odd, Parity::Even] {
            if half < 2 {
                continue;
            }
            let mut lams = Vec::new();
            let mut members = Vec::new();
            for kk in 1..half {
                let c = fourier_eigenvector(l, parity, kk, block)?.coefficients();
                let nrm = hermitian_form(&c, s, &c).re;
                if nrm <= 0.0 {
                    return Err(Error::DegenerateEvidence(format!(
                        "Fourier mode k={kk} has zero norm under the measure"
                    )));
                }
                lams.push(hermitian_form(&c, &sqs, &c).re / nrm);
                let z = nrm.sqrt();
                members.push(Eigenfunction {
                    k: Some(kk),
                    coeffs: c.iter().map(|v| v / z).collect(),
                    g: Complex64::zero(),
                });
            }
            let max = lams.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = lams.iter().copied().fold(f64::INFINITY, f64::min);
            let spread = if max > 0.0 { (max - min) / max } else { 0.0 };
            if !m.is_sampled() && spread > SECTOR_TOL {
                return Err(Error::SymmetryViolation(format!(
                    "{parity:?}/{block:?} family not degenerate across k (relative spread {spread:e})"
                )));
            }
            entries.push(SpectralEntry {
                sector: Sector::Standard { parity },
                block,
                eigenvalue: lams[0],
                degeneracy: half - 1,
                spread,
                members,
            });
        }
    }
    let trace: f64 = entries.iter().map(|e| e.eigenvalue.abs() * e.degeneracy as f64).sum();
    let mut clipped_mass = 0.0;
    for e in &mut entries {
        if e.eigenvalue < 0.0 {
            if e.eigenvalue < -CLIP_TOL * trace.max(1.0) && !m.is_sampled() {
                return Err(Error::SymmetryViolation(format!(
                    "negative eigenvalue {:e}",
                    e.eigenvalue
                )));
            }
            clipped_mass += -e.eigenvalue * e.degeneracy as f64;
            e.eigenvalue = 0.0;
        }
    }
    Ok(SpectralModel {
        l,
        kernel: k,
        sigma2,
        measure: *m,
        entries,
        target: TargetKind::None,
        target_norm: 0.0,
        clipped_mass,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    /// The sampled next-token indicator.
    Labels,
    /// The mixture's Bayes-optimal predictor; its projections coincide with
    /// those of the labels, since `E[y | X] = opt(X)`.
    Optimal { grid: usize },
}

/// Fills `g_i = E[phi_i^* y]` and the target norm.
pub fn project_target(target: Target, model: &SpectralModel, m: &MeasureHandle) -> Result<SpectralModel> {
    check_same_l(model, m)?;
    let mom = m.block_moments()?;
    let mut out = model.clone();
    for e in &mut out.entries {
        let r = &mom.block(e.block).r;
        for f in &mut e.members {
            f.g = f.coeffs.iter().zip(r.iter()).map(|(c, ri)| c.conj() * ri).sum();
        }
    }
    let (kind, norm) = match target {
        Target::Labels => (TargetKind::Labels, mom.label_mean),
        Target::Optimal { grid } => (TargetKind::Optimal { grid }, m.optimal_sq_mean(grid)?),
    };
    out.target = kind;
    out.target_norm = norm;
    Ok(out)
}

/// Projections of an arbitrary real target through `measure_expect`.
pub fn project_function<F>(f: F, model: &SpectralModel, m: &MeasureHandle) -> Result<SpectralModel>
where
    F: Fn(&TokenSequence) -> f64 + Sync,
{
    check_same_l(model, m)?;
    let mut out = model.clone();
    for e in &mut out.entries {
        let block = e.block;
        for mem in &mut e.members {
            let phi = mem.clone();
            mem.g = measure_expect(|x| phi.eval(block, x).conj() * f(x), m)?.value;
        }
    }
    out.target = TargetKind::Function;
    out.target_norm = measure_expect(|x| Complex64::new(f(x).powi(2), 0.0), m)?.value.re;
    Ok(out)
}

fn check_same_l(model: &SpectralModel, m: &MeasureHandle) -> Result<()> {
    if model.l != m.l {
        return invalid(format!("model has L={} but the measure has L={}", model.l, m.l));
    }
    Ok(())
}

/// `lambda / (lambda + sigma2 / N)`; `N` may be 0 or infinite.
pub fn learnability(lambda: f64, sigma2: f64, n: f64) -> f64 {
    if lambda <= 0.0 || n <= 0.0 {
        return 0.0;
    }
    lambda / (lambda + sigma2 / n)
}

/// EK prediction `sum_i L_i g_i phi_i(x)`.
pub fn ek_predict(model: &SpectralModel, n: f64, x: &TokenSequence) -> Result<f64> {
    if !(n > 0.0) {
        return invalid(format!("N must be positive, got {n}"));
    }
    if x.l != model.l {
        return invalid(format!("sequence has L={} but the model has L={}", x.l, model.l));
    }
    let mut s = Complex64::zero();
    for e in &model.entries {
        let li = learnability(e.eigenvalue, model.sigma2, n);
        for f in &e.members {
            s += li * f.g * f.eval(e.block, x);
        }
    }
    Ok(s.re)
}

/// Coefficients of the EK predictor on `psi` for each block.
fn predictor_coeffs(model: &SpectralModel, n: f64) -> [DVector<f64>; 2] {
    let mut beta = [DVector::zeros(model.l + 1), DVector::zeros(model.l + 1)];
    for e in &model.entries {
        let li = learnability(e.eigenvalue, model.sigma2, n);
        let b = &mut beta[e.block as usize];
        for f in &e.members {
            for (i, c) in f.coeffs.iter().enumerate() {
                b[i] += (li * f.g * c).re;
            }
        }
    }
    beta
}

#[derive(Clone, Copy, Debug)]
pub enum TestMeasure<'a> {
    SameAsTrain,
    Other(&'a MeasureHandle),
}

/// EK test MSE at training size `N` (0 and infinity allowed).
pub fn ek_mse(model: &SpectralModel, n: f64, test: TestMeasure) -> Result<f64> {
    if n.is_nan() || n < 0.0 {
        return invalid(format!("N must be non-negative, got {n}"));
    }
    if model.target == TargetKind::None {
        return invalid("project a target before computing the MSE");
    }
    match test {
        TestMeasure::SameAsTrain => {
            let mut s = model.target_norm;
            for e in &model.entries {
                let li = learnability(e.eigenvalue, model.sigma2, n);
                for f in &e.members {
                    s += (li * li - 2.0 * li) * f.g.norm_sqr();
                }
            }
            Ok(s)
        }
        TestMeasure::Other(t) => {
            check_same_l(model, t)?;
            let mom = t.block_moments()?;
            let norm = match model.target {
                TargetKind::Labels => mom.label_mean,
                TargetKind::Optimal { grid } => t.optimal_sq_mean(grid)?,
                _ => {
                    return Err(Error::Unsupported(
                        "out-of-distribution MSE needs a label or optimal target".into(),
                    ))
                }
            };
            let beta = predictor_coeffs(model, n);
            let mut s = norm;
            for b in Block::ALL {
                let bm = mom.block(b);
                let be = &beta[b as usize];
                s += be.dot(&(&bm.s * be)) - 2.0 * be.dot(&bm.r);
            }
            Ok(s)
        }
    }
}

/// OOD MSE through the Gram matrix `G_ij = <phi_i, phi_j>_test` of all eigenfunctions.
pub fn ek_mse_gram(model: &SpectralModel, n: f64, test: &MeasureHandle) -> Result<f64> {
    check_same_l(model, test)?;
    let mom = test.block_moments()?;
    let norm = match model.target {
        TargetKind::Labels => mom.label_mean,
        TargetKind::Optimal { grid } => test.optimal_sq_mean(grid)?,
        _ => {
            return Err(Error::Unsupported(
                "out-of-distribution MSE needs a label or optimal target".into(),
            ))
        }
    };
    let mut flat = Vec::new();
    for e in &model.entries {
        let li = learnability(e.eigenvalue, model.sigma2, n);
        for f in &e.members {
            flat.push((e.block, li, f));
        }
    }
    let mut s = Complex64::new(norm, 0.0);
    for (bi, li, fi) in &flat {
        let bm = mom.block(*bi);
        // <phi_i, target>_test
        let proj: Complex64 = fi.coeffs.iter().zip(bm.r.iter()).map(|(c, r)| c.conj() * r).sum();
        s -= 2.0 * li * fi.g.conj() * proj;
        for (bj, lj, fj) in &flat {
            if bi == bj {
                s += li * lj * fi.g.conj() * fj.g * hermitian_form(&fi.coeffs, &bm.s, &fj.coeffs);
            }
        }
    }
    Ok(s.re)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValleyConfig {
    pub kernel: AnalyticKernel,
    pub mix_train: MixtureParams,
    pub mix_test: MixtureParams,
    pub l_list: Vec<usize>,
    pub n_list: Vec<f64>,
    pub sigma2: f64,
    pub grid: usize,
    pub target: Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValleyRow {
    pub l: usize,
    pub n: f64,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValleyThreshold {
    pub l: usize,
    pub small_n_plateau: f64,
    pub large_n_plateau: f64,
    /// First `N` where the MSE falls below the plateau midpoint, log-interpolated on the grid.
    pub n_star: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValleyReport {
    pub rows: Vec<ValleyRow>,
    pub thresholds: Vec<ValleyThreshold>,
    /// Log-log slope of `N*` against `L` with its standard error.
    pub slope: Option<(f64, f64)>,
}

/// EK OOD MSE on the `(L, N)` grid using closed-form moments.
pub fn valley_scan(cfg: &ValleyConfig) -> Result<ValleyReport> {
    let asc = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
    if cfg.l_list.is_empty() || cfg.n_list.is_empty() {
        return invalid("valley scan needs nonempty L and N lists");
    }
    if !cfg.l_list.windows(2).all(|w| w[0] < w[1]) || !asc(&cfg.n_list) {
        return invalid("L and N lists must be strictly ascending");
    }
    let per_l = cfg
        .l_list
        .par_iter()
        .map(|&l| {
            let train = MeasureHandle::moments(cfg.mix_train, l, cfg.grid)?;
            let test = MeasureHandle::moments(cfg.mix_test, l, cfg.grid)?;
            let sp = solve_spectrum(&KernelModel::Analytic(cfg.kernel), &train, cfg.sigma2)?;
            let sp = project_target(cfg.target, &sp, &train)?;
            let mses = cfg
                .n_list
                .iter()
                .map(|&n| ek_mse(&sp, n, TestMeasure::Other(&test)))
                .collect::<Result<Vec<f64>>>()?;
            let small = ek_mse(&sp, 0.0, TestMeasure::Other(&test))?;
            let large = ek_mse(&sp, f64::INFINITY, TestMeasure::Other(&test))?;
            Ok((l, mses, small, large))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut thresholds = Vec::new();
    for (l, mses, small, large) in per_l {
        let mid = 0.5 * (small + large);
        let mut n_star = None;
        for (i, &v) in mses.iter().enumerate() {
            if v < mid {
                n_star = Some(if i == 0 {
                    cfg.n_list[0]
                } else {
                    let (x0, x1) = (cfg.n_list[i - 1].ln(), cfg.n_list[i].ln());
                    let (y0, y1) = (mses[i - 1], v);
                    (x0 + (mid - y0) * (x1 - x0) / (y1 - y0)).exp()
                });
                break;
            }
        }
        rows.extend(cfg.n_list.iter().zip(&mses).map(|(&n, &mse)| ValleyRow { l, n, mse }));
        thresholds.push(ValleyThreshold {
            l,
            small_n_plateau: small,
            large_n_plateau: large,
            n_star,
        });
    }
    let pts: Vec<(f64, f64)> = thresholds
        .iter()
        .filter_map(|t| t.n_star.map(|n| ((t.l as f64).ln(), n.ln())))
        .collect();
    let slope = if pts.len() >= 3 {
        Some(crate::spectrum_scaling::ols_slope(&pts))
    } else {
        None
    };
    Ok(ValleyReport {
        rows,
        thresholds,
        slope,
    })
}
