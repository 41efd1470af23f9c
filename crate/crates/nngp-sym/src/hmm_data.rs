//! Two-state HMM mixture: sampling and exact next-token predictors.
//!
//! Hidden states are `{0, 1}` with `h^a = (h^1 + a - 1) mod 2` and the
//! transition is a deterministic swap. State 0 emits token 0 with probability
//! `p`, state 1 with probability `q`. Positions are 1-based throughout.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{child_rng, rng, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmmParams {
    pub p: f64,
    pub q: f64,
}

impl HmmParams {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) {
            return invalid(format!("emission probabilities out of range: p={p}, q={q}"));
        }
        Ok(Self { p, q })
    }

    /// Probability that hidden state `state` emits token 0.
    pub fn emit0(&self, state: usize) -> f64 {
        if state == 0 {
            self.p
        } else {
            self.q
        }
    }

    /// Emission matrix `[[p, q], [1-p, 1-q]]`, rows are tokens, columns states.
    pub fn emission(&self) -> [[f64; 2]; 2] {
        [[self.p, self.q], [1.0 - self.p, 1.0 - self.q]]
    }

    pub fn transition(&self) -> [[f64; 2]; 2] {
        [[0.0, 1.0], [1.0, 0.0]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub p_a: f64,
    pub q_a: f64,
    pub w: f64,
}

impl MixtureParams {
    pub fn new(p_a: f64, q_a: f64, w: f64) -> Result<Self> {
        let m = Self { p_a, q_a, w };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.p_a >= 0.0
            && self.q_a >= 0.0
            && self.w >= 0.0
            && self.p_a + self.w <= 1.0 + 1e-12
            && self.q_a + self.w <= 1.0 + 1e-12;
        if ok {
            Ok(())
        } else {
            invalid(format!(
                "mixture box outside [0,1]: p_a={}, q_a={}, w={}",
                self.p_a, self.q_a, self.w
            ))
        }
    }

    /// Midpoint nodes of a `grid`-point rule on `[lo, lo + w]`.
    pub fn p_nodes(&self, grid: usize) -> Vec<f64> {
        midpoints(self.p_a, self.w, grid)
    }

    pub fn q_nodes(&self, grid: usize) -> Vec<f64> {
        midpoints(self.q_a, self.w, grid)
    }
}

pub(crate) fn midpoints(lo: f64, w: f64, grid: usize) -> Vec<f64> {
    (0..grid).map(|i| lo + w * (i as f64 + 0.5) / grid as f64).collect()
}

/// Token ids at positions `1..=L+2`; the last one is the held-out label token.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<u8>,
    pub l: usize,
    pub n_voc: usize,
}

impl TokenSequence {
    /// Builds a sequence of length `l + 2`. Odd `l` is accepted here because
    /// the kernels are defined for any `l`; sampling requires even `l`.
    pub fn new(tokens: Vec<u8>, l: usize, n_voc: usize) -> Result<Self> {
        if l == 0 {
            return invalid("context length L must be positive");
        }
        if tokens.len() != l + 2 {
            return invalid(format!("expected {} tokens, got {}", l + 2, tokens.len()));
        }
        if let Some(t) = tokens.iter().find(|&&t| t as usize >= n_voc) {
            return invalid(format!("token {t} outside vocabulary of size {n_voc}"));
        }
        Ok(Self { tokens, l, n_voc })
    }

    /// Binary sequence from token-0 indicators (`true` means token 0).
    pub fn from_indicators(ind: &[bool], l: usize) -> Result<Self> {
        Self::new(ind.iter().map(|&b| u8::from(!b)).collect(), l, 2)
    }

    pub fn token(&self, pos: usize) -> u8 {
        self.tokens[pos - 1]
    }

    /// `x^pos_1`: 1.0 when the token at `pos` is token 0.
    pub fn x(&self, pos: usize) -> f64 {
        if self.tokens[pos - 1] == 0 {
            1.0
        } else {
            0.0
        }
    }

    pub fn last(&self) -> u8 {
        self.tokens[self.l]
    }

    pub fn label_token(&self) -> u8 {
        self.tokens[self.l + 1]
    }

    pub fn label(&self) -> f64 {
        self.x(self.l + 2)
    }

    /// Context positions `1..=L+1`.
    pub fn context(&self) -> &[u8] {
        &self.tokens[..=self.l]
    }

    pub fn one_hot(&self) -> Vec<Vec<f64>> {
        self.tokens
            .iter()
            .map(|&t| (0..self.n_voc).map(|v| f64::from(u8::from(v == t as usize))).collect())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub sequences: Vec<TokenSequence>,
    pub labels: Vec<f64>,
    pub mix: MixtureParams,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

fn check_l(l: usize) -> Result<()> {
    if l < 2 || l % 2 == 1 {
        return invalid(format!("L must be even and at least 2, got {l}"));
    }
    Ok(())
}

pub fn sample_hmm_with(mix: &MixtureParams, r: &mut Rng) -> HmmParams {
    let p = mix.p_a + mix.w * r.random::<f64>();
    let q = mix.q_a + mix.w * r.random::<f64>();
    HmmParams {
        p: p.min(1.0),
        q: q.min(1.0),
    }
}

pub fn sample_hmm(mix: &MixtureParams, seed: u64) -> HmmParams {
    sample_hmm_with(mix, &mut rng(seed))
}

pub fn sample_sequence_with(hmm: &HmmParams, l: usize, r: &mut Rng) -> Result<TokenSequence> {
    check_l(l)?;
    let h1: usize = r.random_range(0..2);
    let tokens = (1..=l + 2)
        .map(|a| {
            let state = (h1 + a - 1) % 2;
            u8::from(r.random::<f64>() >= hmm.emit0(state))
        })
        .collect();
    Ok(TokenSequence { tokens, l, n_voc: 2 })
}

pub fn sample_sequence(hmm: &HmmParams, l: usize, seed: u64) -> Result<TokenSequence> {
    sample_sequence_with(hmm, l, &mut rng(seed))
}

/// `n` sequences, each from its own HMM draw. Sequence `i` uses the child
/// seed `(seed, i)` so the output does not depend on the worker count.
pub fn generate_dataset(mix: &MixtureParams, n: usize, l: usize, seed: u64) -> Result<Dataset> {
    mix.validate()?;
    check_l(l)?;
    if n == 0 {
        return invalid("dataset size must be at least 1");
    }
    let sequences = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = child_rng(seed, i);
            let hmm = sample_hmm_with(mix, &mut r);
            sample_sequence_with(&hmm, l, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = sequences.iter().map(TokenSequence::label).collect();
    Ok(Dataset {
        sequences,
        labels,
        mix: *mix,
        seed,
    })
}

/// Token-0 counts of the context split by position parity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParityCounts {
    pub n0_odd: usize,
    pub n_odd: usize,
    pub n0_even: usize,
    pub n_even: usize,
}

impl ParityCounts {
    pub fn of_context(x: &TokenSequence) -> Self {
        let mut c = ParityCounts {
            n0_odd: 0,
            n_odd: 0,
            n0_even: 0,
            n_even: 0,
        };
        for a in 1..=x.l + 1 {
            let zero = usize::from(x.token(a) == 0);
            if a % 2 == 1 {
                c.n_odd += 1;
                c.n0_odd += zero;
            } else {
                c.n_even += 1;
                c.n0_even += zero;
            }
        }
        c
    }

    /// Log-likelihood of the context given `(p, q)` and initial state `h1`,
    /// together with the probability that position `L+2` emits token 0.
    /// `label_even` tells whether position `L+2` is even.
    fn branch(&self, p: f64, q: f64, h1: usize, label_even: bool) -> (f64, f64) {
        // odd positions sit in state h1, even ones in 1 - h1
        let (po, pe) = if h1 == 0 { (p, q) } else { (q, p) };
        let ll = xlogy(self.n0_odd, po)
            + xlogy(self.n_odd - self.n0_odd, 1.0 - po)
            + xlogy(self.n0_even, pe)
            + xlogy(self.n_even - self.n0_even, 1.0 - pe);
        (ll, if label_even { pe } else { po })
    }
}

fn xlogy(n: usize, p: f64) -> f64 {
    if n == 0 {
        0.0
    } else {
        n as f64 * p.ln()
    }
}

/// `P(token_{L+2} = 0 | context, hmm)` with a uniform prior on `h^1`.
pub fn conditional_next_prob(hmm: &HmmParams, x: &TokenSequence) -> Result<f64> {
    if x.n_voc != 2 {
        return Err(Error::Unsupported("conditional predictor needs n_voc = 2".into()));
    }
    let c = ParityCounts::of_context(x);
    let label_even = (x.l + 2) % 2 == 0;
    let b: Vec<(f64, f64)> = (0..2).map(|h| c.branch(hmm.p, hmm.q, h, label_even)).collect();
    let m = b[0].0.max(b[1].0);
    if m == f64::NEG_INFINITY {
        return Err(Error::DegenerateEvidence(
            "context impossible under both initial states".into(),
        ));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (ll, e) in b {
        let w = (ll - m).exp();
        num += w * e;
        den += w;
    }
    Ok(num / den)
}

/// Posterior-predictive probability of token 0 at `L+2` under the mixture,
/// integrating `(p, q)` over the box with a `grid x grid` midpoint rule.
pub fn mixture_optimal_predictor(mix: &MixtureParams, x: &TokenSequence, grid: usize) -> Result<f64> {
    if x.n_voc != 2 {
        return Err(Error::Unsupported("mixture predictor needs n_voc = 2".into()));
    }
    mixture_optimal_from_counts(mix, &ParityCounts::of_context(x), (x.l + 2) % 2 == 0, grid)
}

pub fn mixture_optimal_from_counts(
    mix: &MixtureParams,
    c: &ParityCounts,
    label_even: bool,
    grid: usize,
) -> Result<f64> {
    if grid < 2 {
        return invalid("quadrature grid must be at least 2");
    }
    mix.validate()?;
    let (ps, qs) = if mix.w == 0.0 {
        (vec![mix.p_a], vec![mix.q_a])
    } else {
        (mix.p_nodes(grid), mix.q_nodes(grid))
    };
    let mut terms = Vec::with_capacity(2 * ps.len() * qs.len());
    for &p in &ps {
        for &q in &qs {
            for h in 0..2 {
                terms.push(c.branch(p, q, h, label_even));
            }
        }
    }
    let m = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::DegenerateEvidence("all quadrature likelihoods vanish".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (ll, e) in terms {
        let w = (ll - m).exp();
        num += w * e;
        den += w;
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(bits: &[u8], l: usize) -> TokenSequence {
        TokenSequence::new(bits.to_vec(), l, 2).unwrap()
    }

    #[test]
    fn zero_width_box_is_a_point() {
        let mix = MixtureParams::new(0.4, 0.5, 0.0).unwrap();
        for s in 0..10 {
            assert_eq!(sample_hmm(&mix, s), HmmParams { p: 0.4, q: 0.5 });
        }
    }

    #[test]
    fn deterministic_emissions_alternate() {
        let hmm = HmmParams::new(1.0, 0.0).unwrap();
        for s in 0..20 {
            let x = sample_sequence(&hmm, 8, s).unwrap();
            for a in 1..x.tokens.len() {
                assert_ne!(x.token(a), x.token(a + 1));
            }
        }
    }

    #[test]
    fn odd_l_rejected() {
        let hmm = HmmParams::new(0.5, 0.5).unwrap();
        assert!(sample_sequence(&hmm, 3, 0).is_err());
        assert!(sample_sequence(&hmm, 0, 0).is_err());
    }

    #[test]
    fn state_independent_emissions() {
        let hmm = HmmParams::new(0.3, 0.3).unwrap();
        let x = seq(&[0, 1, 1, 0, 1, 0], 4);
        assert!((conditional_next_prob(&hmm, &x).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn forced_branch() {
        // token 0 at position 1 forces h1 = 0, so position L+2 is in state 1
        let hmm = HmmParams::new(1.0, 0.0).unwrap();
        let x = seq(&[0, 1, 0, 1, 0, 0], 4);
        assert_eq!(conditional_next_prob(&hmm, &x).unwrap(), 0.0);
        let bad = seq(&[0, 0, 0, 1, 0, 0], 4);
        assert!(matches!(
            conditional_next_prob(&hmm, &bad),
            Err(Error::DegenerateEvidence(_))
        ));
    }

    #[test]
    fn hand_enumeration_l2() {
        let (p, q) = (0.9, 0.1);
        let hmm = HmmParams::new(p, q).unwrap();
        let x = seq(&[0, 0, 0, 0], 2);
        // h1 = 0: states 0,1,0 then 1 at L+2; h1 = 1: states 1,0,1 then 0
        let w0 = p * q * p;
        let w1 = q * p * q;
        let want = (w0 * q + w1 * p) / (w0 + w1);
        assert!((conditional_next_prob(&hmm, &x).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn point_mass_mixture_matches_conditional() {
        let mix = MixtureParams::new(0.2, 0.7, 0.0).unwrap();
        let hmm = HmmParams::new(0.2, 0.7).unwrap();
        let x = seq(&[0, 1, 1, 0, 0, 1, 0, 1, 1, 0], 8);
        let a = mixture_optimal_predictor(&mix, &x, 16).unwrap();
        let b = conditional_next_prob(&hmm, &x).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn mirrored_box_gives_half() {
        // equal boxes centred on 1/2; position L+2 is even and the even
        // context positions hold one token of each kind
        let mix = MixtureParams::new(0.3, 0.3, 0.4).unwrap();
        let x = seq(&[0, 0, 1, 1, 1, 0], 4);
        let v = mixture_optimal_predictor(&mix, &x, 64).unwrap();
        assert!((v - 0.5).abs() < 1e-12, "{v}");
    }

    #[test]
    fn dataset_shape_and_determinism() {
        let mix = MixtureParams::new(0.4, 0.5, 10f64.powf(-1.5)).unwrap();
        let a = generate_dataset(&mix, 3, 4, 11).unwrap();
        assert_eq!(a.len(), 3);
        assert!(a.sequences.iter().all(|s| s.tokens.len() == 6));
        assert_eq!(a, generate_dataset(&mix, 3, 4, 11).unwrap());
        for (s, y) in a.sequences.iter().zip(&a.labels) {
            assert_eq!(*y, f64::from(u8::from(s.label_token() == 0)));
        }
    }
}
