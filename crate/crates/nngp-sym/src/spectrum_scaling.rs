//! Empirical kernel spectra against context length: clustering into
//! degenerate families and power-law fits.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hmm_data::{generate_dataset, MixtureParams, TokenSequence};
use crate::kernel::{gram_matrix, KernelModel};

const CLIP: f64 = -1e-10;

/// Descending eigenvalues of `G / n`, clipped below at `-1e-10`.
pub fn spectrum_of_gram(g: &DMatrix<f64>) -> Vec<f64> {
    let n = g.nrows() as f64;
    let mut e: Vec<f64> = (g / n).symmetric_eigenvalues().iter().map(|v| v.max(CLIP)).collect();
    e.sort_by(|a, b| b.total_cmp(a));
    e
}

pub fn spectrum_of_sequences(model: &KernelModel, xs: &[TokenSequence]) -> Result<Vec<f64>> {
    Ok(spectrum_of_gram(&gram_matrix(model, xs)?))
}

/// Eigenvalues of the empirical kernel over `n_samples` mixture draws.
pub fn empirical_spectrum(
    model: &KernelModel,
    mix: &MixtureParams,
    l: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_samples < 1 {
        return invalid("need at least one sample");
    }
    let d = generate_dataset(mix, n_samples, l, seed)?;
    spectrum_of_sequences(model, &d.sequences)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Rank of the first member in the descending spectrum.
    pub start: usize,
    pub size: usize,
    pub mean: f64,
    pub spread: f64,
    pub is_zero: bool,
    /// Guessed irrep `(L-k, k)`: 0 for singletons, 1 for standard-sized clusters, none for the zero cluster.
    pub irrep_k: Option<usize>,
}

/// Greedy single pass over a descending spectrum. Eigenvalues below
/// `zero_abs` form one zero cluster; others join the current cluster while
/// its relative spread stays within `rel_tol`.
pub fn cluster_degeneracies(eigs: &[f64], rel_tol: f64, zero_abs: f64) -> Vec<Cluster> {
    let mut out: Vec<Cluster> = Vec::new();
    let mut i = 0;
    while i < eigs.len() {
        let start = i;
        if eigs[i] <= zero_abs {
            let rest = &eigs[i..];
            out.push(Cluster {
                start,
                size: rest.len(),
                mean: rest.iter().sum::<f64>() / rest.len() as f64,
                spread: 0.0,
                is_zero: true,
                irrep_k: None,
            });
            break;
        }
        let top = eigs[i];
        i += 1;
        while i < eigs.len() && eigs[i] > zero_abs && (top - eigs[i]) / top <= rel_tol {
            i += 1;
        }
        let m = &eigs[start..i];
        out.push(Cluster {
            start,
            size: m.len(),
            mean: m.iter().sum::<f64>() / m.len() as f64,
            spread: (top - eigs[i - 1]) / top,
            is_zero: false,
            irrep_k: None,
        });
    }
    out
}

/// Tags clusters by expected size: singletons are trivial (k = 0), clusters
/// with at least half the `L/2 - 1` standard-family size are standard (k = 1).
pub fn assign_irreps(clusters: &mut [Cluster], l: usize) {
    let fam = (l / 2).saturating_sub(1).max(1);
    for c in clusters.iter_mut() {
        if c.is_zero {
            continue;
        }
        c.irrep_k = if c.size == 1 {
            Some(0)
        } else if 2 * c.size >= fam {
            Some(1)
        } else {
            Some(0)
        };
    }
}

/// Which part of the spectrum a scaling fit follows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterSelector {
    /// The largest eigenvalue (the leading trivial mode).
    Top,
    /// Mean of ranks `6 .. 6 + 2L - 4`: the four standard families after the six trivial modes.
    StandardBand,
}

impl ClusterSelector {
    pub fn select(self, eigs: &[f64], l: usize) -> Result<f64> {
        match self {
            ClusterSelector::Top => eigs
                .first()
                .copied()
                .ok_or_else(|| crate::Error::InvalidArgument("empty spectrum".into())),
            ClusterSelector::StandardBand => {
                let (a, b) = (6, 6 + 2 * l.saturating_sub(2));
                if b > eigs.len() || a >= b {
                    return invalid(format!(
                        "spectrum of {} values has no standard band at L={l}",
                        eigs.len()
                    ));
                }
                Ok(eigs[a..b].iter().sum::<f64>() / (b - a) as f64)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub l: usize,
    pub kernel: String,
    pub sample_count: usize,
    pub eigenvalues: Vec<f64>,
    pub clusters: Vec<Cluster>,
    pub rel_tol: f64,
}

impl SpectrumReport {
    pub fn select(&self, s: ClusterSelector) -> Result<f64> {
        s.select(&self.eigenvalues, self.l)
    }

    /// Cluster id of each eigenvalue rank.
    pub fn cluster_of_rank(&self) -> Vec<usize> {
        let mut out = vec![0; self.eigenvalues.len()];
        for (id, c) in self.clusters.iter().enumerate() {
            out[c.start..c.start + c.size].iter_mut().for_each(|v| *v = id);
        }
        out
    }
}

pub fn spectrum_report(
    model: &KernelModel,
    mix: &MixtureParams,
    l: usize,
    n_samples: usize,
    seed: u64,
    rel_tol: f64,
) -> Result<SpectrumReport> {
    let eigenvalues = empirical_spectrum(model, mix, l, n_samples, seed)?;
    let zero = 1e-8 * eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let mut clusters = cluster_degeneracies(&eigenvalues, rel_tol, zero);
    assign_irreps(&mut clusters, l);
    Ok(SpectrumReport {
        l,
        kernel: model.name(),
        sample_count: n_samples,
        eigenvalues,
        clusters,
        rel_tol,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
}

/// Least-squares slope and its residual standard error.
pub(crate) fn ols_slope(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    let se = if pts.len() > 2 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, se)
}

/// Power-law fit of `value` against `L` in log-log coordinates.
pub fn fit_scaling(points: &[(usize, f64)]) -> Result<ScalingFit> {
    let mut ls: Vec<usize> = points.iter().map(|p| p.0).collect();
    ls.sort_unstable();
    ls.dedup();
    if ls.len() < 3 {
        return invalid(format!("scaling fit needs at least 3 distinct L, got {}", ls.len()));
    }
    if let Some(p) = points.iter().find(|p| !(p.1 > 0.0)) {
        return invalid(format!("non-positive value {} at L={}", p.1, p.0));
    }
    let pts: Vec<(f64, f64)> = points.iter().map(|&(l, v)| ((l as f64).ln(), v.ln())).collect();
    let (slope, stderr) = ols_slope(&pts);
    let n = pts.len() as f64;
    let intercept = pts.iter().map(|p| p.1).sum::<f64>() / n - slope * pts.iter().map(|p| p.0).sum::<f64>() / n;
    Ok(ScalingFit {
        slope,
        stderr,
        intercept,
    })
}

pub fn fit_reports(reports: &[SpectrumReport], s: ClusterSelector) -> Result<ScalingFit> {
    let pts = reports
        .iter()
        .map(|r| Ok((r.l, r.select(s)?)))
        .collect::<Result<Vec<_>>>()?;
    fit_scaling(&pts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_input_is_one_cluster() {
        let c = cluster_degeneracies(&[2.0, 2.0, 2.0, 2.0], 1e-6, 1e-12);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].size, 4);
    }

    #[test]
    fn geometric_input_is_singletons() {
        let e: Vec<f64> = (0..10).map(|i| 0.5f64.powi(i)).collect();
        let c = cluster_degeneracies(&e, 0.1, 1e-12);
        assert_eq!(c.len(), 10);
        assert!(c.iter().all(|c| c.size == 1));
    }

    #[test]
    fn zero_cluster_separated() {
        let c = cluster_degeneracies(&[1.0, 1e-14, 0.0, -1e-12], 0.05, 1e-10);
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].size, 3);
        assert_eq!(c[1].irrep_k, None);
    }

    #[test]
    fn exact_power_law() {
        let pts: Vec<(usize, f64)> = [8, 16, 32, 64].iter().map(|&l| (l, 3.0 / l as f64)).collect();
        let f = fit_scaling(&pts).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12);
        assert!(f.stderr < 1e-10);
        assert!(fit_scaling(&pts[..2]).is_err());
    }
}
