//! Symmetric-group combinatorics: partitions, Young tableaux, symmetrizers
//! acting on multilinear polynomials, and the Fourier eigenbasis families.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hmm_data::TokenSequence;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Partition {
    parts: Vec<usize>,
}

impl Partition {
    pub fn new(parts: Vec<usize>) -> Result<Self> {
        if parts.is_empty() || parts.iter().any(|&p| p == 0) {
            return invalid("partition parts must be positive");
        }
        if parts.windows(2).any(|w| w[0] < w[1]) {
            return invalid("partition parts must be non-increasing");
        }
        Ok(Self { parts })
    }

    /// The two-row partition `(n-k, k)`; `k = 0` gives the single row `(n)`.
    pub fn two_row(n: usize, k: usize) -> Result<Self> {
        if 2 * k > n {
            return invalid(format!("(n-k, k) needs k <= n/2, got n={n}, k={k}"));
        }
        if k == 0 {
            Self::new(vec![n])
        } else {
            Self::new(vec![n - k, k])
        }
    }

    pub fn parts(&self) -> &[usize] {
        &self.parts
    }

    pub fn n(&self) -> usize {
        self.parts.iter().sum()
    }

    /// Column lengths of the Young diagram.
    pub fn conjugate(&self) -> Vec<usize> {
        (0..self.parts[0])
            .map(|j| self.parts.iter().filter(|&&p| p > j).count())
            .collect()
    }
}

/// All partitions of `n`, in reverse lexicographic order.
pub fn partitions_of(n: usize) -> Vec<Partition> {
    fn rec(rem: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Partition>) {
        if rem == 0 {
            out.push(Partition { parts: cur.clone() });
            return;
        }
        for p in (1..=rem.min(max)).rev() {
            cur.push(p);
            rec(rem - p, p, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        rec(n, n, &mut Vec::new(), &mut out);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct YoungTableau {
    pub partition: Partition,
    pub rows: Vec<Vec<usize>>,
}

impl YoungTableau {
    pub fn new(partition: Partition, rows: Vec<Vec<usize>>) -> Result<Self> {
        if rows.len() != partition.parts.len() || rows.iter().zip(&partition.parts).any(|(r, &p)| r.len() != p) {
            return invalid("filling does not match the diagram shape");
        }
        let n = partition.n();
        let mut seen = vec![false; n + 1];
        for &v in rows.iter().flatten() {
            if v == 0 || v > n || seen[v] {
                return invalid("filling must use 1..n exactly once");
            }
            seen[v] = true;
        }
        Ok(Self { partition, rows })
    }

    /// Row-major filling `1..n`.
    pub fn canonical(partition: &Partition) -> Self {
        let mut next = 1;
        let rows = partition
            .parts
            .iter()
            .map(|&len| {
                let r: Vec<usize> = (next..next + len).collect();
                next += len;
                r
            })
            .collect();
        Self {
            partition: partition.clone(),
            rows,
        }
    }

    pub fn n(&self) -> usize {
        self.partition.n()
    }

    pub fn columns(&self) -> Vec<Vec<usize>> {
        (0..self.rows[0].len())
            .map(|j| self.rows.iter().filter_map(|r| r.get(j).copied()).collect())
            .collect()
    }

    pub fn is_standard(&self) -> bool {
        let rows_ok = self.rows.iter().all(|r| r.windows(2).all(|w| w[0] < w[1]));
        let cols_ok = self.columns().iter().all(|c| c.windows(2).all(|w| w[0] < w[1]));
        rows_ok && cols_ok
    }

    /// Row-major list of entries, used as a canonical encoding.
    pub fn encode(&self) -> Vec<usize> {
        self.rows.iter().flatten().copied().collect()
    }
}

/// Standard tableaux of shape `p`, sorted by row-major filling.
pub fn standard_tableaux(p: &Partition) -> Vec<YoungTableau> {
    fn rec(v: usize, n: usize, shape: &[usize], rows: &mut Vec<Vec<usize>>, out: &mut Vec<Vec<Vec<usize>>>) {
        if v > n {
            out.push(rows.clone());
            return;
        }
        for i in 0..shape.len() {
            let len = rows[i].len();
            let fits = len < shape[i] && (i == 0 || rows[i - 1].len() > len);
            if fits {
                rows[i].push(v);
                rec(v + 1, n, shape, rows, out);
                rows[i].pop();
            }
        }
    }
    let mut out = Vec::new();
    let mut rows = vec![Vec::new(); p.parts.len()];
    rec(1, p.n(), &p.parts, &mut rows, &mut out);
    let mut t: Vec<YoungTableau> = out
        .into_iter()
        .map(|rows| YoungTableau {
            partition: p.clone(),
            rows,
        })
        .collect();
    t.sort_by_key(YoungTableau::encode);
    t
}

/// Irrep dimension `n! / prod(hook lengths)`.
pub fn hook_length_dim(p: &Partition) -> u128 {
    let conj = p.conjugate();
    let mut num: u128 = (1..=p.n() as u128).product();
    let mut hooks: u128 = 1;
    for (i, &len) in p.parts.iter().enumerate() {
        for (j, &col) in conj.iter().enumerate().take(len) {
            hooks *= ((len - j - 1) + (col - i - 1) + 1) as u128;
        }
    }
    num /= hooks;
    num
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k as u128).fold(1, |acc, i| acc * (n as u128 - i) / (i + 1))
}

/// Sparse multilinear polynomial: sorted 1-based index sets to exact rationals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultilinearPolynomial {
    pub n: usize,
    terms: BTreeMap<Vec<usize>, BigRational>,
}

impl MultilinearPolynomial {
    pub fn zero(n: usize) -> Self {
        Self {
            n,
            terms: BTreeMap::new(),
        }
    }

    pub fn monomial(n: usize, vars: &[usize]) -> Result<Self> {
        let mut p = Self::zero(n);
        p.add_term(vars, BigRational::one())?;
        Ok(p)
    }

    pub fn add_term(&mut self, vars: &[usize], c: BigRational) -> Result<()> {
        let mut key = vars.to_vec();
        key.sort_unstable();
        if key.windows(2).any(|w| w[0] == w[1]) {
            return invalid("multilinear terms cannot repeat a variable");
        }
        if key.iter().any(|&v| v == 0 || v > self.n) {
            return invalid(format!("variable index outside 1..{}", self.n));
        }
        let e = self.terms.entry(key.clone()).or_insert_with(BigRational::zero);
        *e += c;
        if e.is_zero() {
            self.terms.remove(&key);
        }
        Ok(())
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<usize>, &BigRational)> {
        self.terms.iter()
    }

    pub fn coefficient(&self, vars: &[usize]) -> BigRational {
        let mut key = vars.to_vec();
        key.sort_unstable();
        self.terms.get(&key).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (k, c) in &other.terms {
            out.add_term(k, c.clone()).expect("same variable range");
        }
        out
    }

    pub fn scale(&self, c: &BigRational) -> Self {
        if c.is_zero() {
            return Self::zero(self.n);
        }
        Self {
            n: self.n,
            terms: self.terms.iter().map(|(k, v)| (k.clone(), v * c)).collect(),
        }
    }

    /// Relabels variable `v` as `perm[v]` (`perm[0]` unused).
    pub fn permute(&self, perm: &[usize]) -> Self {
        let mut out = Self::zero(self.n);
        for (k, c) in &self.terms {
            let img: Vec<usize> = k.iter().map(|&v| perm[v]).collect();
            out.add_term(&img, c.clone()).expect("permutation stays in range");
        }
        out
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(k, c)| {
                let c = num_traits::ToPrimitive::to_f64(c).unwrap_or(f64::NAN);
                c * k.iter().map(|&v| x[v - 1]).product::<f64>()
            })
            .sum()
    }
}

/// All `d`-subsets of `1..=n` in lexicographic order.
pub fn subsets(n: usize, d: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, d: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == d {
            out.push(cur.clone());
            return;
        }
        for v in start..=n {
            if n - v + 1 < d - cur.len() {
                break;
            }
            cur.push(v);
            rec(v + 1, n, d, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(1, n, d, &mut Vec::new(), &mut out);
    out
}

fn factorial(n: usize) -> i64 {
    (1..=n as i64).product()
}

/// Every permutation of `items` with its sign, as `(image list, sign)`.
fn signed_permutations(items: &[usize]) -> Vec<(Vec<usize>, i64)> {
    let mut out = Vec::new();
    let mut a = items.to_vec();
    fn heap(k: usize, a: &mut Vec<usize>, sign: i64, out: &mut Vec<(Vec<usize>, i64)>) -> i64 {
        // returns the sign after generating all permutations of the first k entries
        if k <= 1 {
            out.push((a.clone(), sign));
            return sign;
        }
        let mut s = heap(k - 1, a, sign, out);
        for i in 0..k - 1 {
            if k % 2 == 0 {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
            s = heap(k - 1, a, -s, out);
        }
        s
    }
    heap(a.len(), &mut a, 1, &mut out);
    out
}

/// Column group of `t` as explicit permutations of `0..=n` with signs.
fn column_group(t: &YoungTableau) -> Vec<(Vec<usize>, i64)> {
    let n = t.n();
    let mut group = vec![((0..=n).collect::<Vec<usize>>(), 1i64)];
    for col in t.columns() {
        if col.len() < 2 {
            continue;
        }
        let perms = signed_permutations(&col);
        let mut next = Vec::with_capacity(group.len() * perms.len());
        for (g, s) in &group {
            for (img, ps) in &perms {
                let mut h = g.clone();
                for (src, &dst) in col.iter().zip(img) {
                    h[*src] = dst;
                }
                next.push((h, s * ps));
            }
        }
        group = next;
    }
    group
}

/// Row symmetrizer applied to the monomial `x_S`, as integer combination.
fn row_symmetrize(t: &YoungTableau, s: &[usize]) -> Vec<(Vec<usize>, i64)> {
    let mut mult = 1i64;
    let mut choices: Vec<Vec<Vec<usize>>> = Vec::new();
    for row in &t.rows {
        let j = row.iter().filter(|v| s.contains(v)).count();
        mult *= factorial(j) * factorial(row.len() - j);
        let picks = subsets(row.len(), j)
            .into_iter()
            .map(|idx| idx.iter().map(|&i| row[i - 1]).collect())
            .collect();
        choices.push(picks);
    }
    let mut acc: Vec<Vec<usize>> = vec![Vec::new()];
    for picks in choices {
        let mut next = Vec::with_capacity(acc.len() * picks.len());
        for a in &acc {
            for p in &picks {
                let mut v = a.clone();
                v.extend_from_slice(p);
                next.push(v);
            }
        }
        acc = next;
    }
    acc.into_iter()
        .map(|mut v| {
            v.sort_unstable();
            (v, mult)
        })
        .collect()
}

/// Integer image `C R x_S` for a single monomial.
fn symmetrize_monomial(t: &YoungTableau, cols: &[(Vec<usize>, i64)], s: &[usize]) -> HashMap<Vec<usize>, i64> {
    let mut out: HashMap<Vec<usize>, i64> = HashMap::new();
    for (term, m) in row_symmetrize(t, s) {
        for (perm, sign) in cols {
            let mut img: Vec<usize> = term.iter().map(|&v| perm[v]).collect();
            img.sort_unstable();
            *out.entry(img).or_insert(0) += sign * m;
        }
    }
    out.retain(|_, c| *c != 0);
    out
}

/// `C R m` with `R` the row symmetrizer and `C` the signed column
/// antisymmetrizer of the standard tableau `t`.
pub fn young_symmetrizer_apply(t: &YoungTableau, m: &MultilinearPolynomial) -> Result<MultilinearPolynomial> {
    if !t.is_standard() {
        return invalid("Young symmetrizer requires a standard tableau");
    }
    if t.n() != m.n {
        return invalid(format!("tableau has {} boxes, polynomial {} variables", t.n(), m.n));
    }
    let cols = column_group(t);
    let mut out = MultilinearPolynomial::zero(m.n);
    for (s, c) in m.terms() {
        for (img, k) in symmetrize_monomial(t, &cols, s) {
            out.add_term(&img, c * BigRational::from_integer(BigInt::from(k)))?;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IrrepLabel {
    pub n: usize,
    pub k: usize,
}

impl IrrepLabel {
    pub fn partition(&self) -> Partition {
        Partition::two_row(self.n, self.k).expect("label invariant 2k <= n")
    }

    pub fn dim(&self) -> u128 {
        hook_length_dim(&self.partition())
    }
}

/// Irreps `(n-k, k)`, `k <= min(d, n-d)`, of homogeneous degree-`d`
/// multilinear polynomials in `n` variables, with their dimensions.
pub fn decompose_multilinear(n: usize, d: usize) -> Result<Vec<(IrrepLabel, u128)>> {
    if d > n {
        return invalid(format!("degree {d} exceeds variable count {n}"));
    }
    Ok((0..=d.min(n - d))
        .map(|k| {
            let l = IrrepLabel { n, k };
            (l, l.dim())
        })
        .collect())
}

/// Exact incremental rank over the rationals using primitive integer rows.
#[derive(Default)]
pub struct RankAccumulator {
    rows: Vec<(usize, Vec<BigInt>)>,
}

impl RankAccumulator {
    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    /// Inserts `v`; returns true when it raised the rank.
    pub fn insert(&mut self, mut v: Vec<BigInt>) -> bool {
        for (col, row) in &self.rows {
            if v[*col].is_zero() {
                continue;
            }
            let a = row[*col].clone();
            let b = v[*col].clone();
            for (x, r) in v.iter_mut().zip(row) {
                if r.is_zero() && x.is_zero() {
                    continue;
                }
                *x = &a * &*x - &b * r;
            }
            normalize(&mut v);
        }
        match v.iter().position(|x| !x.is_zero()) {
            Some(col) => {
                if v[col].is_negative() {
                    v.iter_mut().for_each(|x| *x = -&*x);
                }
                self.rows.push((col, v));
                true
            }
            None => false,
        }
    }
}

fn normalize(v: &mut [BigInt]) {
    let mut g = BigInt::zero();
    for x in v.iter() {
        if !x.is_zero() {
            g = num_integer::Integer::gcd(&g, x);
            if g.is_one() {
                return;
            }
        }
    }
    if g > BigInt::one() {
        v.iter_mut().for_each(|x| *x = &*x / &g);
    }
}

/// Ranks of Young-symmetrizer images of all degree-`d` monomials.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SpanRank {
    pub n: usize,
    pub d: usize,
    /// `(k, rank)` for every two-row shape `(n-k, k)`.
    pub per_k: Vec<(usize, usize)>,
    pub total: usize,
}

/// Spans the symmetrizer images of every standard tableau with at most two
/// rows over every degree-`d` monomial, per shape and jointly.
pub fn symmetrizer_span_rank(n: usize, d: usize) -> Result<SpanRank> {
    if d > n || n == 0 {
        return invalid(format!("need 0 <= d <= n and n >= 1, got n={n}, d={d}"));
    }
    let monos = subsets(n, d);
    let index: HashMap<Vec<usize>, usize> = monos.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
    let mut total = RankAccumulator::default();
    let mut per_k = Vec::new();
    for k in 0..=n / 2 {
        let shape = Partition::two_row(n, k)?;
        let mut acc = RankAccumulator::default();
        for t in standard_tableaux(&shape) {
            let cols = column_group(&t);
            for s in &monos {
                let img = symmetrize_monomial(&t, &cols, s);
                if img.is_empty() {
                    continue;
                }
                let mut v = vec![BigInt::zero(); monos.len()];
                for (m, c) in img {
                    v[index[&m]] = BigInt::from(c);
                }
                normalize(&mut v);
                if acc.insert(v.clone()) {
                    total.insert(v);
                }
            }
        }
        per_k.push((k, acc.rank()));
    }
    Ok(SpanRank {
        n,
        d,
        per_k,
        total: total.rank(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parity {
    Odd,
    Even,
}

impl Parity {
    /// Context position of the `s`-th member, `s = 1..=L/2`.
    pub fn position(self, s: usize) -> usize {
        match self {
            Parity::Odd => 2 * s - 1,
            Parity::Even => 2 * s,
        }
    }
}

/// Last-token factor: `a = x^{L+1}`, `b = 1 - x^{L+1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Block {
    A,
    B,
}

impl Block {
    pub const ALL: [Block; 2] = [Block::A, Block::B];

    pub fn factor(self, x: &TokenSequence) -> f64 {
        let a = x.x(x.l + 1);
        match self {
            Block::A => a,
            Block::B => 1.0 - a,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrivialMember {
    Constant,
    OddSum,
    EvenSum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BasisKind {
    Fourier { parity: Parity, k: usize },
    TrivialRaw(TrivialMember),
}

/// A block factor times a linear function of the context indicators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisFunction {
    pub kind: BasisKind,
    pub l: usize,
    pub block: Block,
    pub normalization: f64,
}

impl BasisFunction {
    /// Coefficients on `(1, x^1, ..., x^L)`, already divided by the normalization.
    pub fn coefficients(&self) -> Vec<Complex64> {
        let mut c = vec![Complex64::zero(); self.l + 1];
        let half = self.l / 2;
        match self.kind {
            BasisKind::Fourier { parity, k } => {
                for s in 1..=half {
                    let th = std::f64::consts::TAU * (k * s) as f64 / half as f64;
                    c[parity.position(s)] = Complex64::from_polar(1.0, th);
                }
            }
            BasisKind::TrivialRaw(TrivialMember::Constant) => c[0] = Complex64::one(),
            BasisKind::TrivialRaw(TrivialMember::OddSum) => {
                (1..=half).for_each(|s| c[Parity::Odd.position(s)] = Complex64::one())
            }
            BasisKind::TrivialRaw(TrivialMember::EvenSum) => {
                (1..=half).for_each(|s| c[Parity::Even.position(s)] = Complex64::one())
            }
        }
        c.iter().map(|v| v / self.normalization).collect()
    }

    pub fn eval(&self, x: &TokenSequence) -> Complex64 {
        let f = self.block.factor(x);
        if f == 0.0 {
            return Complex64::zero();
        }
        let c = self.coefficients();
        let mut v = c[0];
        for (a, ca) in c.iter().enumerate().skip(1) {
            v += ca * x.x(a);
        }
        v * f
    }

    pub fn with_normalization(mut self, z: f64) -> Self {
        self.normalization = z;
        self
    }
}

fn check_even(l: usize) -> Result<()> {
    if l < 2 || l % 2 == 1 {
        return invalid(format!("L must be even and at least 2, got {l}"));
    }
    Ok(())
}

/// `block(x^{L+1}) * sum_s exp(2 pi i k s / (L/2)) x^{pos(s)}` with unit
/// normalization: a discrete Fourier mode on the `L/2` positions of one parity.
pub fn fourier_eigenvector(l: usize, parity: Parity, k: usize, block: Block) -> Result<BasisFunction> {
    check_even(l)?;
    if k == 0 || k + 1 > l / 2 {
        return invalid(format!("Fourier index must lie in 1..={}, got {k}", l / 2 - 1));
    }
    Ok(BasisFunction {
        kind: BasisKind::Fourier { parity, k },
        l,
        block,
        normalization: 1.0,
    })
}

/// `block * {1, sum over odd positions, sum over even positions}`.
pub fn trivial_raw_basis(l: usize, block: Block) -> Result<Vec<BasisFunction>> {
    check_even(l)?;
    Ok([TrivialMember::Constant, TrivialMember::OddSum, TrivialMember::EvenSum]
        .into_iter()
        .map(|m| BasisFunction {
            kind: BasisKind::TrivialRaw(m),
            l,
            block,
            normalization: 1.0,
        })
        .collect())
}
