use nngp_sym::hmm_data::*;
use proptest::prelude::*;

fn seq(bits: &[u8]) -> TokenSequence {
    TokenSequence::new(bits.to_vec(), bits.len() - 2, 2).unwrap()
}

/// Joint probability of the whole sequence under `(p, q)` with a uniform initial state.
fn joint(p: f64, q: f64, tokens: &[u8]) -> f64 {
    (0..2)
        .map(|h1| {
            0.5 * tokens
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    let e0 = if (h1 + i) % 2 == 0 { p } else { q };
                    if t == 0 {
                        e0
                    } else {
                        1.0 - e0
                    }
                })
                .product::<f64>()
        })
        .sum()
}

fn with_label(x: &TokenSequence, t: u8) -> Vec<u8> {
    let mut v = x.tokens.clone();
    v[x.l + 1] = t;
    v
}

#[test]
fn conditional_matches_joint_enumeration() {
    let hmm = HmmParams::new(0.3, 0.85).unwrap();
    for code in 0u32..1 << 7 {
        let bits: Vec<u8> = (0..8).map(|i| ((code >> i) & 1) as u8).collect();
        let x = seq(&bits);
        let (a, b) = (
            joint(hmm.p, hmm.q, &with_label(&x, 0)),
            joint(hmm.p, hmm.q, &with_label(&x, 1)),
        );
        let got = conditional_next_prob(&hmm, &x).unwrap();
        assert!((got - a / (a + b)).abs() < 1e-12, "{bits:?}");
    }
}

#[test]
fn mixture_predictor_matches_brute_quadrature() {
    let mix = MixtureParams::new(0.2, 0.6, 0.3).unwrap();
    let grid = 24;
    let x = seq(&[0, 1, 0, 0, 1, 0, 1, 1, 0, 0]);
    let (mut num, mut den) = (0.0, 0.0);
    for p in mix.p_nodes(grid) {
        for q in mix.q_nodes(grid) {
            num += joint(p, q, &with_label(&x, 0));
            den += joint(p, q, &with_label(&x, 0)) + joint(p, q, &with_label(&x, 1));
        }
    }
    assert!((mixture_optimal_predictor(&mix, &x, grid).unwrap() - num / den).abs() < 1e-12);
}

#[test]
fn zero_width_mixture_reduces_to_conditional() {
    let mix = MixtureParams::new(0.35, 0.7, 0.0).unwrap();
    let hmm = HmmParams::new(0.35, 0.7).unwrap();
    let d = generate_dataset(&mix, 50, 6, 4).unwrap();
    for x in &d.sequences {
        let a = mixture_optimal_predictor(&mix, x, 8).unwrap();
        assert!((a - conditional_next_prob(&hmm, x).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn sampled_frequencies_follow_emissions() {
    let mix = MixtureParams::new(0.1, 0.8, 0.0).unwrap();
    let n = 20_000;
    let d = generate_dataset(&mix, n, 4, 11).unwrap();
    let f1 = d.sequences.iter().map(|x| x.x(1)).sum::<f64>() / n as f64;
    assert!((f1 - 0.45).abs() < 4.0 * (0.25f64 / n as f64).sqrt());
    // positions 1 and 3 share a hidden state: P(both 0) = (p^2 + q^2) / 2
    let both = d.sequences.iter().map(|x| x.x(1) * x.x(3)).sum::<f64>() / n as f64;
    assert!((both - 0.325).abs() < 4.0 * (0.325f64 * 0.675 / n as f64).sqrt());
    let cross = d.sequences.iter().map(|x| x.x(1) * x.x(2)).sum::<f64>() / n as f64;
    assert!((cross - 0.08).abs() < 4.0 * (0.08f64 * 0.92 / n as f64).sqrt());
    assert_eq!(
        d.labels,
        d.sequences.iter().map(TokenSequence::label).collect::<Vec<_>>()
    );
}

#[test]
fn dataset_is_seed_deterministic() {
    let mix = MixtureParams::new(0.4, 0.5, 0.1).unwrap();
    let a = generate_dataset(&mix, 40, 8, 9).unwrap();
    assert_eq!(a, generate_dataset(&mix, 40, 8, 9).unwrap());
    assert_ne!(a.sequences, generate_dataset(&mix, 40, 8, 10).unwrap().sequences);
    let longer = generate_dataset(&mix, 60, 8, 9).unwrap();
    assert_eq!(a.sequences[..], longer.sequences[..40]);
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(MixtureParams::new(0.9, 0.5, 0.2).is_err());
    assert!(MixtureParams::new(-0.1, 0.5, 0.2).is_err());
    assert!(HmmParams::new(1.2, 0.5).is_err());
    let mix = MixtureParams::new(0.4, 0.5, 0.1).unwrap();
    assert!(generate_dataset(&mix, 10, 7, 0).is_err());
    assert!(generate_dataset(&mix, 0, 8, 0).is_err());
    assert!(TokenSequence::new(vec![0, 1, 2], 1, 2).is_err());
    assert!(TokenSequence::new(vec![0, 1], 1, 2).is_err());
    let x = seq(&[0, 0, 0, 0]);
    assert!(mixture_optimal_predictor(&mix, &x, 1).is_err());
    let certain = HmmParams::new(1.0, 1.0).unwrap();
    assert!(conditional_next_prob(&certain, &seq(&[1, 0, 0, 0])).is_err());
}

#[test]
fn parity_counts() {
    let c = ParityCounts::of_context(&seq(&[0, 1, 0, 0, 1, 1, 0]));
    assert_eq!(
        c,
        ParityCounts {
            n0_odd: 2,
            n_odd: 3,
            n0_even: 1,
            n_even: 3
        }
    );
}

proptest! {
    #[test]
    fn predictor_is_a_convex_combination_of_emissions(bits in proptest::collection::vec(0u8..2, 2usize..7).prop_map(|mut v| { let n = 2 * v.len(); v.resize(n + 2, 0); v }),
                                    p in 0.05f64..0.6, q in 0.05f64..0.6, w in 0.0f64..0.35) {
        let x = seq(&bits);
        let mix = MixtureParams::new(p, q, w).unwrap();
        let v = mixture_optimal_predictor(&mix, &x, 8).unwrap();
        prop_assert!(v >= p.min(q) - 1e-12 && v <= p.max(q) + w + 1e-12);
    }

    #[test]
    fn state_swap_symmetry(bits in proptest::collection::vec(0u8..2, 8), p in 0.05f64..0.95, q in 0.05f64..0.95) {
        let x = seq(&bits);
        let a = conditional_next_prob(&HmmParams::new(p, q).unwrap(), &x).unwrap();
        let b = conditional_next_prob(&HmmParams::new(q, p).unwrap(), &x).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }
}
