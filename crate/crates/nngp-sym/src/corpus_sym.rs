//! Permutation-symmetry audit of token corpora through cyclic Fourier blocks
//! of the positional second-moment matrix.
//!
//! For Fourier index `k` each sequence gives `u^k = sum_a exp(i 2 pi a k / L) onehot(x^a)`
//! and the block is `C^kk = (1/N) sum u^k (u^k)^H`. The block is never needed in
//! full: inner products and spectra go through either the `N x N` Gram matrix
//! or the dense matrix on the observed vocabulary, whichever is smaller.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Zipf};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::io::read_token_table;
use crate::rng::{child_rng, rng};

/// Blocks whose trace is below this fraction of `L^2` count as identically zero.
const DEGENERATE_TOL: f64 = 1e-20;
/// Gram eigenvalues below this fraction of the largest are structural zeros.
const ZERO_EIG_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub sequences: Vec<Vec<u32>>,
    pub l: usize,
    pub vocab_size: usize,
    pub source: String,
    /// Lines dropped at load time for being shorter than `l`.
    pub dropped: usize,
}

impl Corpus {
    pub fn new(sequences: Vec<Vec<u32>>, l: usize, vocab_size: usize, source: impl Into<String>) -> Result<Self> {
        if l == 0 || vocab_size == 0 {
            return invalid("corpus needs positive L and vocabulary size");
        }
        for (i, s) in sequences.iter().enumerate() {
            if s.len() != l {
                return invalid(format!("sequence {i} has length {}, expected {l}", s.len()));
            }
            if let Some(t) = s.iter().find(|&&t| t as usize >= vocab_size) {
                return invalid(format!("sequence {i} has token {t} outside vocabulary {vocab_size}"));
            }
        }
        Ok(Self {
            sequences,
            l,
            vocab_size,
            source: source.into(),
            dropped: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Occurrence count of every token id.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.vocab_size];
        for s in &self.sequences {
            for &t in s {
                h[t as usize] += 1;
            }
        }
        h
    }
}

/// Parses the corpus format, keeping the first `l` tokens of each line and
/// dropping shorter lines. The dataset format loads through the same path.
pub fn parse_corpus<R: std::io::Read>(reader: R, l: usize, source: &str) -> Result<Corpus> {
    if l == 0 {
        return invalid("L must be positive");
    }
    let table = read_token_table(reader)?;
    let mut dropped = 0;
    let mut sequences = Vec::with_capacity(table.rows.len());
    for (_, mut row) in table.rows {
        if row.len() < l {
            dropped += 1;
            continue;
        }
        row.truncate(l);
        sequences.push(row);
    }
    let mut c = Corpus::new(sequences, l, table.header.vocab, source)?;
    c.dropped = dropped;
    Ok(c)
}

pub fn load_corpus(path: &Path, l: usize) -> Result<Corpus> {
    parse_corpus(fs::File::open(path)?, l, &path.display().to_string())
}

pub fn write_corpus<W: std::io::Write>(mut w: W, c: &Corpus) -> Result<()> {
    writeln!(w, "#L={} vocab={}", c.l, c.vocab_size)?;
    for s in &c.sequences {
        let line: Vec<String> = s.iter().map(|t| t.to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Sparse per-sequence Fourier vectors for one index `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusBlock {
    pub k: usize,
    pub l: usize,
    pub vocab_size: usize,
    /// `(token, coefficient)` pairs sorted by token, one list per sequence.
    pub vectors: Vec<Vec<(u32, Complex64)>>,
}

fn phase(a: usize, k: usize, l: usize) -> Complex64 {
    // reduce first so large a * k keeps full precision
    let r = (a * k) % l;
    if r == 0 {
        return Complex64::new(1.0, 0.0);
    }
    Complex64::from_polar(1.0, 2.0 * PI * r as f64 / l as f64)
}

pub fn fourier_block(c: &Corpus, k: usize) -> Result<CorpusBlock> {
    if c.is_empty() {
        return invalid("empty corpus");
    }
    if k >= c.l {
        return invalid(format!("Fourier index {k} outside 0..{}", c.l));
    }
    let phases: Vec<Complex64> = (1..=c.l).map(|a| phase(a, k, c.l)).collect();
    let vectors = c
        .sequences
        .par_iter()
        .map(|s| {
            let mut v: Vec<(u32, Complex64)> = s.iter().zip(&phases).map(|(&t, &p)| (t, p)).collect();
            v.sort_by_key(|e| e.0);
            let mut out: Vec<(u32, Complex64)> = Vec::with_capacity(v.len());
            for (t, p) in v {
                match out.last_mut() {
                    Some(last) if last.0 == t => last.1 += p,
                    _ => out.push((t, p)),
                }
            }
            out
        })
        .collect();
    Ok(CorpusBlock {
        k,
        l: c.l,
        vocab_size: c.vocab_size,
        vectors,
    })
}

impl CorpusBlock {
    pub fn n(&self) -> usize {
        self.vectors.len()
    }

    /// `tr C^kk = (1/N) sum ||u||^2`, computed from the sparse vectors.
    pub fn trace(&self) -> f64 {
        let s: f64 = self.vectors.iter().flat_map(|v| v.iter().map(|e| e.1.norm_sqr())).sum();
        s / self.n() as f64
    }

    pub fn is_degenerate(&self) -> bool {
        self.trace() <= DEGENERATE_TOL * (self.l * self.l) as f64
    }

    fn check(&self) -> Result<()> {
        if self.is_degenerate() {
            return Err(Error::DegenerateBlock(format!(
                "block k={} is identically zero",
                self.k
            )));
        }
        Ok(())
    }

    /// Tokens that occur with nonzero coefficient.
    pub fn support(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.vectors.iter().flat_map(|v| v.iter().map(|e| e.0)).collect();
        set.into_iter().collect()
    }

    /// `(1/N) [<u_mu, u_nu>]`, the `N x N` Hermitian Gram matrix.
    pub fn gram(&self) -> DMatrix<Complex64> {
        cross_gram(self, self)
    }

    /// `C^kk` restricted to `support`, materialized densely.
    pub fn dense(&self, support: &[u32]) -> DMatrix<Complex64> {
        self.dense_sum(support, 0..self.n()) / Complex64::new(self.n() as f64, 0.0)
    }

    /// Unnormalized `sum u u^H` over the sequences in `range`.
    fn dense_sum(&self, support: &[u32], range: Range<usize>) -> DMatrix<Complex64> {
        let index = index_of(support, self.vocab_size);
        let d = support.len();
        let mut c = DMatrix::<Complex64>::zeros(d, d);
        for v in &self.vectors[range] {
            for &(tj, uj) in v {
                let j = index[tj as usize];
                let ujc = uj.conj();
                for &(ti, ui) in v {
                    c[(index[ti as usize], j)] += ui * ujc;
                }
            }
        }
        c
    }

    /// Coefficients are real when `2k` is a multiple of `L`.
    pub fn is_real(&self) -> bool {
        (2 * self.k) % self.l == 0
    }
}

fn index_of(support: &[u32], vocab: usize) -> Vec<usize> {
    let mut index = vec![usize::MAX; vocab];
    for (i, &t) in support.iter().enumerate() {
        index[t as usize] = i;
    }
    index
}

fn sparse_dot(a: &[(u32, Complex64)], b: &[(u32, Complex64)]) -> Complex64 {
    // both sorted by token
    let (mut i, mut j) = (0, 0);
    let mut s = Complex64::new(0.0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a[i].1.conj() * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

/// `(1/N) [<u_mu, v_nu>]` between two blocks of the same corpus.
fn cross_gram(a: &CorpusBlock, b: &CorpusBlock) -> DMatrix<Complex64> {
    let n = a.n();
    let rows: Vec<Vec<Complex64>> = a
        .vectors
        .par_iter()
        .map(|u| b.vectors.iter().map(|v| sparse_dot(u, v) / n as f64).collect())
        .collect();
    DMatrix::from_fn(n, b.n(), |i, j| rows[i][j])
}

fn union_support(a: &CorpusBlock, b: &CorpusBlock) -> Vec<u32> {
    let mut s: BTreeSet<u32> = a.support().into_iter().collect();
    s.extend(b.support());
    s.into_iter().collect()
}

fn frob_inner(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x * y.conj()).re).sum()
}

/// Which side the implicit block is handled on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    Gram,
    Dense,
}

fn route(n: usize, support: usize) -> Route {
    if n <= support {
        Route::Gram
    } else {
        Route::Dense
    }
}

/// `Re <C1, C2>_F / (||C1||_F ||C2||_F)` with `<A, B>_F = tr(A B^H)`.
pub fn frobenius_cosine(b1: &CorpusBlock, b2: &CorpusBlock) -> Result<f64> {
    let support = union_support(b1, b2);
    frobenius_cosine_via(b1, b2, route(b1.n(), support.len()))
}

/// Same as [`frobenius_cosine`] with an explicit route.
pub fn frobenius_cosine_via(b1: &CorpusBlock, b2: &CorpusBlock, r: Route) -> Result<f64> {
    if b1.n() != b2.n() || b1.l != b2.l || b1.vocab_size != b2.vocab_size {
        return invalid("blocks come from different corpora");
    }
    b1.check()?;
    b2.check()?;
    let (ip, n1, n2) = match r {
        Route::Gram => {
            // <C1, C2>_F = (1/N^2) sum |<u_mu, v_nu>|^2
            let sq = |g: DMatrix<Complex64>| g.iter().map(|z| z.norm_sqr()).sum::<f64>();
            (sq(cross_gram(b1, b2)), sq(b1.gram()), sq(b2.gram()))
        }
        Route::Dense => {
            let s = union_support(b1, b2);
            let (c1, c2) = (b1.dense(&s), b2.dense(&s));
            (frob_inner(&c1, &c2), frob_inner(&c1, &c1), frob_inner(&c2, &c2))
        }
    };
    Ok((ip / (n1.sqrt() * n2.sqrt())).clamp(0.0, 1.0))
}

/// Step ECDF of a sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ecdf {
    /// Ascending sample values.
    pub values: Vec<f64>,
}

impl Ecdf {
    pub fn new(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        Self { values }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.values.partition_point(|&v| v <= x) as f64 / self.values.len() as f64
    }

    /// `(value, F(value))` at every step.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let n = self.values.len() as f64;
        self.values
            .iter()
            .enumerate()
            .map(|(i, &v)| (v, (i + 1) as f64 / n))
            .collect()
    }
}

/// Two-sample Kolmogorov-Smirnov distance `sup |F1 - F2|`.
pub fn ks_distance(a: &Ecdf, b: &Ecdf) -> f64 {
    let (na, nb) = (a.values.len() as f64, b.values.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.values.len() && j < b.values.len() {
        let x = a.values[i].min(b.values[j]);
        while i < a.values.len() && a.values[i] <= x {
            i += 1;
        }
        while j < b.values.len() && b.values[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

fn hermitian_eigs(m: DMatrix<Complex64>, real: bool) -> Vec<f64> {
    if real {
        m.map(|z| z.re).symmetric_eigenvalues().iter().copied().collect()
    } else {
        m.symmetric_eigenvalues().iter().copied().collect()
    }
}

/// Nonzero eigenvalues of `C^kk` through an explicit route.
pub fn block_spectrum_via(b: &CorpusBlock, r: Route) -> Result<Vec<f64>> {
    b.check()?;
    let m = match r {
        Route::Gram => b.gram(),
        Route::Dense => b.dense(&b.support()),
    };
    let mut e = hermitian_eigs(m, b.is_real());
    let top = e.iter().copied().fold(0.0, f64::max);
    e.retain(|&v| v > ZERO_EIG_TOL * top);
    e.sort_by(|x, y| y.total_cmp(x));
    Ok(e)
}

/// Nonzero spectrum of `C^kk`, descending.
pub fn block_spectrum(b: &CorpusBlock) -> Result<Vec<f64>> {
    block_spectrum_via(b, route(b.n(), b.support().len()))
}

pub fn block_spectrum_ecdf(b: &CorpusBlock) -> Result<Ecdf> {
    Ok(Ecdf::new(block_spectrum(b)?))
}

/// Pools every token occurrence and deals them back uniformly at random into
/// the same sequence-by-position grid.
pub fn shuffled_baseline(c: &Corpus, seed: u64) -> Corpus {
    let mut pool: Vec<u32> = c.sequences.iter().flatten().copied().collect();
    pool.shuffle(&mut rng(seed));
    let sequences = pool.chunks(c.l.max(1)).map(|s| s.to_vec()).collect();
    Corpus {
        sequences,
        l: c.l,
        vocab_size: c.vocab_size,
        source: format!("{} (shuffled, seed {seed})", c.source),
        dropped: 0,
    }
}

/// Similarities and spectra of the sampled blocks of one corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub k_sample: Vec<usize>,
    pub similarity: Vec<Vec<f64>>,
    pub ecdfs: Vec<Ecdf>,
    /// Mean similarity over pairs of distinct nonzero indices, with its
    /// delete-a-group jackknife standard error over sequences.
    pub mutual_nonzero: Option<(f64, f64)>,
    /// Mean similarity between `k = 0` and the nonzero indices.
    pub zero_vs_nonzero: Option<f64>,
    /// `mutual_nonzero - zero_vs_nonzero`.
    pub gap: Option<f64>,
    /// Largest pairwise KS distance between nonzero-index ECDFs.
    pub max_ks_nonzero: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub source: String,
    pub l: usize,
    pub n: usize,
    pub vocab_size: usize,
    pub seed: u64,
    /// Conjugation sits on the second factor of every outer product.
    pub conjugate_second: bool,
    pub corpus: BlockSummary,
    pub baseline: BlockSummary,
}

fn check_k_sample(c: &Corpus, k_sample: &[usize]) -> Result<()> {
    if !k_sample.contains(&0) {
        return invalid("k sample must include 0");
    }
    if let Some(k) = k_sample.iter().find(|&&k| k >= c.l) {
        return invalid(format!("Fourier index {k} outside 0..{}", c.l));
    }
    let set: BTreeSet<usize> = k_sample.iter().copied().collect();
    if set.len() != k_sample.len() {
        return invalid("k sample has duplicates");
    }
    Ok(())
}

/// Pairwise similarity matrix of the sampled blocks.
pub fn similarity_matrix(c: &Corpus, k_sample: &[usize]) -> Result<Vec<Vec<f64>>> {
    let blocks = k_sample
        .iter()
        .map(|&k| fourier_block(c, k))
        .collect::<Result<Vec<_>>>()?;
    similarity_of_blocks(&blocks)
}

/// Unnormalized Frobenius inner products between the sampled blocks, over all
/// sequences and with each of `groups` contiguous groups left out in turn.
/// Cosines are scale free, so the `1/N` factors never matter.
struct InnerProducts {
    full: DMatrix<f64>,
    leave_out: Vec<DMatrix<f64>>,
}

fn group_ranges(n: usize, groups: usize) -> Vec<Range<usize>> {
    let g = groups.min(n).max(1);
    (0..g).map(|i| i * n / g..(i + 1) * n / g).collect()
}

fn inner_products(blocks: &[CorpusBlock], groups: usize) -> Result<InnerProducts> {
    let support: BTreeSet<u32> = blocks.iter().flat_map(|b| b.support()).collect();
    inner_products_via(blocks, groups, route(blocks[0].n(), support.len()))
}

fn inner_products_via(blocks: &[CorpusBlock], groups: usize, via: Route) -> Result<InnerProducts> {
    for b in blocks {
        b.check()?;
    }
    let m = blocks.len();
    let n = blocks[0].n();
    let ranges = group_ranges(n, groups);
    let support: BTreeSet<u32> = blocks.iter().flat_map(|b| b.support()).collect();
    let support: Vec<u32> = support.into_iter().collect();
    let mut full = DMatrix::zeros(m, m);
    let mut leave_out = vec![DMatrix::zeros(m, m); if groups > 0 { ranges.len() } else { 0 }];
    match via {
        Route::Dense => {
            let total: Vec<DMatrix<Complex64>> = blocks.par_iter().map(|b| b.dense_sum(&support, 0..n)).collect();
            for i in 0..m {
                for j in 0..=i {
                    full[(i, j)] = frob_inner(&total[i], &total[j]);
                    full[(j, i)] = full[(i, j)];
                }
            }
            for (g, r) in leave_out.iter_mut().zip(&ranges) {
                let rest: Vec<DMatrix<Complex64>> = blocks
                    .par_iter()
                    .zip(&total)
                    .map(|(b, t)| t - b.dense_sum(&support, r.clone()))
                    .collect();
                for i in 0..m {
                    for j in 0..=i {
                        g[(i, j)] = frob_inner(&rest[i], &rest[j]);
                        g[(j, i)] = g[(i, j)];
                    }
                }
            }
        }
        Route::Gram => {
            for i in 0..m {
                for j in 0..=i {
                    let a = cross_gram(&blocks[i], &blocks[j]).map(|z| z.norm_sqr() * (n * n) as f64);
                    full[(i, j)] = a.sum();
                    full[(j, i)] = full[(i, j)];
                    for (g, r) in leave_out.iter_mut().zip(&ranges) {
                        let rows: f64 = r.clone().map(|mu| a.row(mu).sum()).sum();
                        let cols: f64 = r.clone().map(|nu| a.column(nu).sum()).sum();
                        let both: f64 = a.view((r.start, r.start), (r.len(), r.len())).sum();
                        g[(i, j)] = full[(i, j)] - rows - cols + both;
                        g[(j, i)] = g[(i, j)];
                    }
                }
            }
        }
    }
    Ok(InnerProducts { full, leave_out })
}

fn cosines(p: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let m = p.nrows();
    (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    if i == j {
                        1.0
                    } else {
                        (p[(i, j)] / (p[(i, i)] * p[(j, j)]).sqrt()).clamp(0.0, 1.0)
                    }
                })
                .collect()
        })
        .collect()
}

fn similarity_of_blocks(blocks: &[CorpusBlock]) -> Result<Vec<Vec<f64>>> {
    Ok(cosines(&inner_products(blocks, 0)?.full))
}

/// Leave-one-group-out replicates used for the standard error of the mutual similarity.
const JACKKNIFE_GROUPS: usize = 10;

fn mean_over_pairs(s: &[Vec<f64>], idx: &[usize]) -> Option<f64> {
    let mut v = Vec::new();
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            v.push(s[i][j]);
        }
    }
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn summarize(c: &Corpus, k_sample: &[usize]) -> Result<BlockSummary> {
    let blocks = k_sample
        .iter()
        .map(|&k| fourier_block(c, k))
        .collect::<Result<Vec<_>>>()?;
    let ip = inner_products(&blocks, JACKKNIFE_GROUPS)?;
    let similarity = cosines(&ip.full);
    let ecdfs = blocks.iter().map(block_spectrum_ecdf).collect::<Result<Vec<_>>>()?;
    let nz: Vec<usize> = (0..k_sample.len()).filter(|&i| k_sample[i] != 0).collect();
    let z = k_sample.iter().position(|&k| k == 0).unwrap_or(0);
    let mut ks: Option<f64> = None;
    for (a, &i) in nz.iter().enumerate() {
        for &j in &nz[a + 1..] {
            let d = ks_distance(&ecdfs[i], &ecdfs[j]);
            ks = Some(ks.map_or(d, |m| m.max(d)));
        }
    }
    let mutual_nonzero = mean_over_pairs(&similarity, &nz).map(|m| {
        let reps: Vec<f64> = ip
            .leave_out
            .iter()
            .filter_map(|p| mean_over_pairs(&cosines(p), &nz))
            .collect();
        let g = reps.len() as f64;
        if reps.len() < 2 {
            return (m, 0.0);
        }
        let mean = reps.iter().sum::<f64>() / g;
        let var = (g - 1.0) / g * reps.iter().map(|r| (r - mean).powi(2)).sum::<f64>();
        (m, var.sqrt())
    });
    let zero_vs_nonzero = (!nz.is_empty()).then(|| nz.iter().map(|&i| similarity[z][i]).sum::<f64>() / nz.len() as f64);
    let gap = match (mutual_nonzero, zero_vs_nonzero) {
        (Some((m, _)), Some(z)) => Some(m - z),
        _ => None,
    };
    Ok(BlockSummary {
        k_sample: k_sample.to_vec(),
        similarity,
        ecdfs,
        mutual_nonzero,
        zero_vs_nonzero,
        gap,
        max_ks_nonzero: ks,
    })
}

/// Similarity matrices, ECDFs and gaps for a corpus and its shuffled baseline.
pub fn symmetry_report(c: &Corpus, k_sample: &[usize], seed: u64) -> Result<SymmetryReport> {
    check_k_sample(c, k_sample)?;
    if c.is_empty() {
        return invalid("empty corpus");
    }
    let corpus = summarize(c, k_sample)?;
    let baseline = summarize(&shuffled_baseline(c, seed), k_sample)?;
    Ok(SymmetryReport {
        source: c.source.clone(),
        l: c.l,
        n: c.len(),
        vocab_size: c.vocab_size,
        seed,
        conjugate_second: true,
        corpus,
        baseline,
    })
}

/// Default Fourier indices: 0 and four nonzero indices spread below `L/2`.
pub fn default_k_sample(l: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = vec![0, 1, l / 13, l / 4, l / 2];
    ks.retain(|&k| k < l);
    let set: BTreeSet<usize> = ks.into_iter().collect();
    set.into_iter().collect()
}

/// I.i.d. Zipf tokens at every position.
pub fn zipf_exchangeable(n: usize, l: usize, vocab: usize, exponent: f64, seed: u64) -> Result<Corpus> {
    let zipf = Zipf::new(vocab as f64, exponent).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let sequences = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = child_rng(seed, i);
            (0..l).map(|_| zipf.sample(&mut r) as u32 - 1).collect()
        })
        .collect();
    Corpus::new(sequences, l, vocab, format!("zipf(s={exponent}, seed={seed})"))
}

/// Zipf tokens where, with probability `bias`, position `a` instead emits the
/// position-tied token `a mod vocab`.
pub fn position_biased(n: usize, l: usize, vocab: usize, exponent: f64, bias: f64, seed: u64) -> Result<Corpus> {
    if !(0.0..=1.0).contains(&bias) {
        return invalid(format!("bias must lie in [0, 1], got {bias}"));
    }
    let zipf = Zipf::new(vocab as f64, exponent).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let sequences = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = child_rng(seed, i);
            (0..l)
                .map(|a| {
                    if r.random::<f64>() < bias {
                        (a % vocab) as u32
                    } else {
                        zipf.sample(&mut r) as u32 - 1
                    }
                })
                .collect()
        })
        .collect();
    Corpus::new(
        sequences,
        l,
        vocab,
        format!("position-biased(s={exponent}, bias={bias}, seed={seed})"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_of_identical_and_disjoint() {
        let a = Ecdf::new(vec![1.0, 2.0, 3.0]);
        assert_eq!(ks_distance(&a, &a), 0.0);
        let b = Ecdf::new(vec![4.0, 5.0]);
        assert_eq!(ks_distance(&a, &b), 1.0);
        let c = Ecdf::new(vec![1.5, 2.5]);
        assert!((ks_distance(&a, &c) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.eval(2.0), 2.0 / 3.0);
    }

    #[test]
    fn leave_out_routes_agree() {
        let c = zipf_exchangeable(37, 9, 40, 1.0, 4).unwrap();
        let blocks: Vec<CorpusBlock> = [0, 2, 3].iter().map(|&k| fourier_block(&c, k).unwrap()).collect();
        let g = inner_products_via(&blocks, 5, Route::Gram).unwrap();
        let d = inner_products_via(&blocks, 5, Route::Dense).unwrap();
        assert!((&g.full - &d.full).amax() < 1e-9 * g.full.amax());
        for (a, b) in g.leave_out.iter().zip(&d.leave_out) {
            assert!((a - b).amax() < 1e-9 * g.full.amax());
        }
        // leaving out group 0 equals recomputing on the remaining sequences
        let rest = Corpus::new(c.sequences[7..].to_vec(), 9, 40, "rest").unwrap();
        let rb: Vec<CorpusBlock> = [0, 2, 3].iter().map(|&k| fourier_block(&rest, k).unwrap()).collect();
        let r = inner_products_via(&rb, 0, Route::Dense).unwrap();
        assert!((&r.full - &g.leave_out[0]).amax() < 1e-9 * g.full.amax());
    }

    #[test]
    fn phase_reduction() {
        assert_eq!(phase(7, 3, 7), Complex64::new(1.0, 0.0));
        assert!((phase(1, 1, 4) - Complex64::new(0.0, 1.0)).norm() < 1e-15);
    }
}
