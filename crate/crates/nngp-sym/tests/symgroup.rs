use nngp_sym::hmm_data::TokenSequence;
use nngp_sym::symgroup::*;
use num_complex::Complex64;
use num_rational::BigRational;
use proptest::prelude::*;

fn factorial(n: usize) -> u128 {
    (1..=n as u128).product()
}

#[test]
fn hook_formula_counts_tableaux() {
    for n in 1..=7 {
        let mut sq = 0;
        for p in partitions_of(n) {
            let tabs = standard_tableaux(&p);
            assert_eq!(tabs.len() as u128, hook_length_dim(&p), "{:?}", p.parts());
            assert!(tabs.iter().all(YoungTableau::is_standard));
            sq += hook_length_dim(&p).pow(2);
        }
        assert_eq!(sq, factorial(n));
    }
}

#[test]
fn partition_counts() {
    let counts: Vec<usize> = (1..=10).map(|n| partitions_of(n).len()).collect();
    assert_eq!(counts, vec![1, 2, 3, 5, 7, 11, 15, 22, 30, 42]);
}

#[test]
fn conjugate_is_an_involution() {
    for p in partitions_of(8) {
        let c = Partition::new(p.conjugate()).unwrap();
        assert_eq!(c.conjugate(), p.parts());
        assert_eq!(hook_length_dim(&c), hook_length_dim(&p));
    }
}

#[test]
fn multilinear_dimensions_add_up() {
    for n in 1..=12 {
        for d in 0..=n {
            let total: u128 = decompose_multilinear(n, d).unwrap().iter().map(|p| p.1).sum();
            assert_eq!(total, binomial(n, d), "n={n} d={d}");
        }
    }
    assert!(decompose_multilinear(3, 4).is_err());
}

#[test]
fn span_ranks_match_dimensions() {
    for n in 2..=6 {
        for d in 0..=n {
            let r = symmetrizer_span_rank(n, d).unwrap();
            assert_eq!(r.total as u128, binomial(n, d));
            for (k, rank) in r.per_k {
                let expect = if k <= d.min(n - d) {
                    hook_length_dim(&Partition::two_row(n, k).unwrap())
                } else {
                    0
                };
                assert_eq!(rank as u128, expect, "n={n} d={d} k={k}");
            }
        }
    }
}

/// The Young symmetrizer is quasi-idempotent: e_T^2 = (n! / dim) e_T.
#[test]
fn symmetrizer_is_quasi_idempotent() {
    for parts in [vec![3, 1], vec![2, 2], vec![3, 2], vec![2, 1, 1]] {
        let p = Partition::new(parts).unwrap();
        let n = p.n();
        let scale = BigRational::from_integer((factorial(n) / hook_length_dim(&p)).into());
        for t in standard_tableaux(&p) {
            for d in 0..=n {
                for s in subsets(n, d) {
                    let m = MultilinearPolynomial::monomial(n, &s).unwrap();
                    let once = young_symmetrizer_apply(&t, &m).unwrap();
                    let twice = young_symmetrizer_apply(&t, &once).unwrap();
                    assert_eq!(twice, once.scale(&scale));
                }
            }
        }
    }
}

#[test]
fn non_standard_tableau_is_rejected() {
    let p = Partition::new(vec![2, 1]).unwrap();
    assert!(YoungTableau::new(p.clone(), vec![vec![2, 1], vec![3]])
        .map(|t| !t.is_standard())
        .unwrap_or(true));
    let bad = YoungTableau::new(p, vec![vec![1, 2], vec![4]]);
    assert!(bad.is_err());
}

fn seq(bits: &[u8]) -> TokenSequence {
    TokenSequence::new(bits.to_vec(), bits.len() - 2, 2).unwrap()
}

/// Cyclic shift of the positions of one parity by one step.
fn shift(x: &TokenSequence, parity: Parity) -> TokenSequence {
    let half = x.l / 2;
    let mut t = x.tokens.clone();
    for s in 1..=half {
        let from = if s == 1 { half } else { s - 1 };
        t[parity.position(s) - 1] = x.tokens[parity.position(from) - 1];
    }
    seq(&t)
}

#[test]
fn fourier_modes_pick_up_a_phase_under_cyclic_shifts() {
    let l = 10;
    for code in [0b1011001101u32, 0b0110100111, 0b1111000010] {
        let bits: Vec<u8> = (0..l + 2).map(|i| ((code >> (i % 10)) & 1) as u8).collect();
        let x = seq(&bits);
        for parity in [Parity::Odd, Parity::Even] {
            for k in 1..l / 2 {
                let f = fourier_eigenvector(l, parity, k, Block::B).unwrap();
                let th = std::f64::consts::TAU * k as f64 / (l / 2) as f64;
                let expect = f.eval(&x) * Complex64::from_polar(1.0, th);
                assert!((f.eval(&shift(&x, parity)) - expect).norm() < 1e-12);
                let other = match parity {
                    Parity::Odd => Parity::Even,
                    Parity::Even => Parity::Odd,
                };
                assert!((f.eval(&shift(&x, other)) - f.eval(&x)).norm() < 1e-12);
            }
        }
    }
}

#[test]
fn fourier_coefficients_are_orthogonal() {
    let l = 12;
    let mut modes = Vec::new();
    for parity in [Parity::Odd, Parity::Even] {
        for k in 1..l / 2 {
            modes.push(fourier_eigenvector(l, parity, k, Block::A).unwrap().coefficients());
        }
    }
    modes.extend(
        trivial_raw_basis(l, Block::A)
            .unwrap()
            .iter()
            .map(BasisFunction::coefficients),
    );
    for (i, a) in modes.iter().enumerate() {
        for (j, b) in modes.iter().enumerate() {
            let ip: Complex64 = a.iter().zip(b).map(|(u, v)| u * v.conj()).sum();
            if i == j {
                assert!(ip.norm() > 0.5);
            } else if i < 2 * (l / 2 - 1) || j < 2 * (l / 2 - 1) {
                assert!(ip.norm() < 1e-12, "{i} {j}");
            }
        }
    }
}

#[test]
fn blocks_split_on_the_last_token() {
    let a = seq(&[1, 0, 1, 0, 0, 1]);
    let b = seq(&[1, 0, 1, 0, 1, 1]);
    assert_eq!((Block::A.factor(&a), Block::B.factor(&a)), (1.0, 0.0));
    assert_eq!((Block::A.factor(&b), Block::B.factor(&b)), (0.0, 1.0));
}

proptest! {
    #[test]
    fn permutation_round_trip(seed in 0u64..1000, n in 2usize..7) {
        use rand::seq::SliceRandom;
        let mut r = nngp_sym::rng::rng(seed);
        let mut perm: Vec<usize> = (1..=n).collect();
        perm.shuffle(&mut r);
        let perm: Vec<usize> = std::iter::once(0).chain(perm).collect();
        let mut inv = vec![0; n + 1];
        for v in 1..=n {
            inv[perm[v]] = v;
        }
        let mut poly = MultilinearPolynomial::zero(n);
        for (i, s) in subsets(n, 2).into_iter().enumerate() {
            poly.add_term(&s, BigRational::from_integer((i as i64 + 1).into())).unwrap();
        }
        let back = poly.permute(&perm).permute(&inv);
        prop_assert_eq!(&back, &poly);
        let x: Vec<f64> = (0..n).map(|i| 0.3 + i as f64).collect();
        let px: Vec<f64> = (1..=n).map(|v| x[perm[v] - 1]).collect();
        prop_assert!((poly.permute(&perm).evaluate(&x) - poly.evaluate(&px)).abs() < 1e-9);
    }
}
