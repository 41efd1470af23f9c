use nngp_sym::hmm_data::{generate_dataset, MixtureParams, TokenSequence};
use nngp_sym::kernel::*;
use nngp_sym::rng::rng;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn seq(tokens: &[u8], l: usize) -> TokenSequence {
    TokenSequence::new(tokens.to_vec(), l, 2).unwrap()
}

fn random_seqs(n: usize, l: usize, seed: u64) -> Vec<TokenSequence> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| seq(&(0..l + 2).map(|_| r.random_range(0..2u8)).collect::<Vec<_>>(), l))
        .collect()
}

fn small_cfg(l: usize, attn: AttnAct, mlp: MlpAct, pe: LastPositionPe) -> NetworkConfig {
    NetworkConfig {
        d_m: 8,
        d_ff: 6,
        n_heads: 2,
        n_voc: 2,
        l,
        attn_act: attn,
        mlp_act: mlp,
        last_position_pe: pe,
    }
}

/// Plain nested-loop evaluation of the network, independent of `forward`.
fn loop_forward(p: &NetworkParams, x: &TokenSequence) -> f64 {
    let c = &p.cfg;
    let (d_m, d_k, l) = (c.d_m, c.d_k(), c.l);
    let mut z1 = vec![vec![0.0; d_m]; l + 1];
    for (b, z) in z1.iter_mut().enumerate() {
        for i in 0..d_m {
            z[i] = p.w_emb[(i, x.tokens[b] as usize)] + p.pe[(i, b)];
        }
    }
    let mut kv = z1.clone();
    if let Some(e) = &p.pe_last_kv {
        for i in 0..d_m {
            kv[l][i] += e[i];
        }
    }
    let mut z2 = vec![0.0; c.n_heads * d_k];
    for h in 0..c.n_heads {
        let mut q = vec![0.0; d_k];
        for r in 0..d_k {
            for i in 0..d_m {
                q[r] += p.w_q[h][(r, i)] * z1[l][i];
            }
        }
        let mut scores = vec![0.0; l + 1];
        let mut vals = vec![vec![0.0; d_k]; l + 1];
        for b in 0..=l {
            for r in 0..d_k {
                let mut kr = 0.0;
                for i in 0..d_m {
                    kr += p.w_k[h][(r, i)] * kv[b][i];
                    vals[b][r] += p.w_v[h][(r, i)] * kv[b][i];
                }
                scores[b] += q[r] * kr / (d_k as f64).sqrt();
            }
        }
        let att: Vec<f64> = match c.attn_act {
            AttnAct::LinearScaled => scores.iter().map(|s| s / (l + 1) as f64).collect(),
            AttnAct::Softmax => {
                let z: f64 = scores.iter().map(|s| s.exp()).sum();
                scores.iter().map(|s| s.exp() / z).collect()
            }
        };
        for r in 0..d_k {
            for b in 0..=l {
                z2[h * d_k + r] += att[b] * vals[b][r];
            }
        }
    }
    let mut z3 = vec![0.0; d_m];
    for i in 0..d_m {
        for j in 0..z2.len() {
            z3[i] += p.w_o[(i, j)] * z2[j];
        }
    }
    let mut z4 = vec![0.0; c.d_ff];
    for (u, zu) in z4.iter_mut().enumerate() {
        let mut s = p.b4[u];
        for i in 0..d_m {
            s += p.w4[(u, i)] * z3[i];
        }
        *zu = match c.mlp_act {
            MlpAct::Linear => s,
            MlpAct::Relu => s.max(0.0),
            MlpAct::Erf => statrs::function::erf::erf(s),
        };
    }
    let mut out = 0.0;
    for i in 0..d_m {
        let mut z5 = p.b5[i];
        for u in 0..c.d_ff {
            z5 += p.w5[(i, u)] * z4[u];
        }
        out += p.w_demb[(0, i)] * z5;
    }
    out
}

#[test]
fn init_embedding_variance() {
    let cfg = NetworkConfig {
        d_m: 1000,
        d_ff: 4,
        n_heads: 1000,
        n_voc: 1000,
        l: 2,
        attn_act: AttnAct::LinearScaled,
        mlp_act: MlpAct::Linear,
        last_position_pe: LastPositionPe::Zero,
    };
    let p = init_params(&cfg, 11).unwrap();
    let n = p.w_emb.len() as f64;
    let mean = p.w_emb.sum() / n;
    let var = p.w_emb.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((var * 1000.0 - 1.0).abs() < 0.01, "variance {var}");
}

#[test]
fn init_last_pe_zero_and_deterministic() {
    let cfg = small_cfg(4, AttnAct::Softmax, MlpAct::Erf, LastPositionPe::Zero);
    let a = init_params(&cfg, 5).unwrap();
    assert!(a.pe.column(4).iter().all(|&v| v == 0.0));
    assert!(a.pe.column(0).iter().any(|&v| v != 0.0));
    let b = init_params(&cfg, 5).unwrap();
    assert_eq!(a.w_q, b.w_q);
    assert_eq!(a.w_demb, b.w_demb);
    assert_ne!(a.w_q, init_params(&cfg, 6).unwrap().w_q);
}

#[test]
fn forward_matches_loop_oracle() {
    for (i, (attn, mlp, pe)) in [
        (AttnAct::LinearScaled, MlpAct::Linear, LastPositionPe::Zero),
        (AttnAct::Softmax, MlpAct::Erf, LastPositionPe::Zero),
        (AttnAct::Softmax, MlpAct::Relu, LastPositionPe::KeysValues),
        (AttnAct::LinearScaled, MlpAct::Erf, LastPositionPe::KeysValues),
    ]
    .into_iter()
    .enumerate()
    {
        let cfg = small_cfg(4, attn, mlp, pe);
        let p = init_params(&cfg, 100 + i as u64).unwrap();
        for x in random_seqs(10, 4, i as u64) {
            let (a, b) = (forward(&p, &x).unwrap(), loop_forward(&p, &x));
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn forward_zero_and_readout_linearity() {
    let cfg = small_cfg(4, AttnAct::LinearScaled, MlpAct::Linear, LastPositionPe::Zero);
    let p = init_params(&cfg, 3).unwrap();
    let x = seq(&[0, 1, 1, 0, 1, 0], 4);
    assert_eq!(forward(&p.clone().zeroed(), &x).unwrap(), 0.0);
    let mut p2 = p.clone();
    p2.w_demb *= 2.0;
    let (a, b) = (forward(&p, &x).unwrap(), forward(&p2, &x).unwrap());
    assert!((b - 2.0 * a).abs() < 1e-12 * (1.0 + a.abs()));
    let bad = TokenSequence::new(vec![0; 5], 3, 2).unwrap();
    assert!(forward(&p, &bad).is_err());
}

#[test]
fn linear_network_has_no_three_position_interactions() {
    // each output term couples the last token with a single key position
    let cfg = small_cfg(4, AttnAct::LinearScaled, MlpAct::Linear, LastPositionPe::Zero);
    let p = init_params(&cfg, 9).unwrap();
    let base = [0u8, 1, 0, 1, 1, 0];
    let mut d3 = 0.0;
    for mask in 0..8u8 {
        let mut t = base;
        for (j, pos) in [0usize, 1, 2].iter().enumerate() {
            if mask >> j & 1 == 1 {
                t[*pos] ^= 1;
            }
        }
        let sign = if mask.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        d3 += sign * forward(&p, &seq(&t, 4)).unwrap();
    }
    assert!(d3.abs() < 1e-12, "third difference {d3}");
}

/// Second moments `E[f_i f_j]` and their standard errors from an `n x D` output table.
fn moments(f: &nalgebra::DMatrix<f64>) -> (nalgebra::DMatrix<f64>, nalgebra::DMatrix<f64>) {
    gram_from_outputs(f)
}

#[test]
fn fast_sampler_matches_naive_forward_in_law() {
    let draws = 20_000;
    for (i, (attn, mlp, pe, d_m)) in [
        (AttnAct::LinearScaled, MlpAct::Linear, LastPositionPe::Zero, 8),
        (AttnAct::Softmax, MlpAct::Erf, LastPositionPe::Zero, 8),
        (AttnAct::Softmax, MlpAct::Relu, LastPositionPe::KeysValues, 8),
        (AttnAct::LinearScaled, MlpAct::Linear, LastPositionPe::KeysValues, 4),
    ]
    .into_iter()
    .enumerate()
    {
        let mut cfg = small_cfg(3, attn, mlp, pe);
        cfg.d_m = d_m;
        let xs = vec![
            seq(&[0, 0, 0, 0, 0], 3),
            seq(&[1, 0, 1, 0, 0], 3),
            seq(&[0, 1, 1, 1, 1], 3),
        ];
        let naive = nalgebra::DMatrix::from_fn(xs.len(), draws, |r, d| {
            let p = init_params(&cfg, 1_000_000 * (i as u64 + 1) + d as u64).unwrap();
            forward(&p, &xs[r]).unwrap()
        });
        let fast = mc_outputs(&McKernel::new(cfg.clone(), draws, 77 + i as u64).unwrap(), &xs).unwrap();
        let (kn, sn) = moments(&naive);
        let (kf, sf) = moments(&fast);
        for a in 0..xs.len() {
            for b in a..xs.len() {
                let se = (sn[(a, b)].powi(2) + sf[(a, b)].powi(2)).sqrt();
                let z = (kn[(a, b)] - kf[(a, b)]) / se;
                assert!(
                    z.abs() < 4.5,
                    "config {i} cell ({a},{b}): {} vs {} (z={z})",
                    kn[(a, b)],
                    kf[(a, b)]
                );
            }
        }
        // fourth moment on the diagonal, a check beyond the covariance
        let m4 = |f: &nalgebra::DMatrix<f64>| {
            let v: Vec<f64> = f.row(0).iter().map(|v| v.powi(4)).collect();
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
            (m, s)
        };
        let ((a4, s4), (b4, t4)) = (m4(&naive), m4(&fast));
        assert!(
            (a4 - b4).abs() < 4.5 * (s4 * s4 + t4 * t4).sqrt(),
            "config {i}: fourth moment {a4} vs {b4}"
        );
    }
}

#[test]
fn mc_matches_analytic_small() {
    let l = 4;
    let mut cfg = NetworkConfig::standard(l, AttnAct::LinearScaled, MlpAct::Linear);
    for (pe, kernel) in [
        (LastPositionPe::KeysValues, AnalyticKernel::Full),
        (LastPositionPe::Zero, AnalyticKernel::FullZeroLastPe),
    ] {
        cfg.last_position_pe = pe;
        let m = McKernel::new(cfg.clone(), 3000, 4).unwrap();
        let xs = random_seqs(6, l, 21);
        let f = mc_outputs(&m, &xs).unwrap();
        let (k, se) = gram_from_outputs(&f);
        for i in 0..xs.len() {
            for j in i..xs.len() {
                let want = kernel.eval(&xs[i], &xs[j]).unwrap();
                let z = (k[(i, j)] - want) / se[(i, j)].max(1e-12);
                assert!(z.abs() < 4.5, "{kernel:?} ({i},{j}) mc {} analytic {want}", k[(i, j)]);
            }
        }
    }
}

#[test]
fn mc_stderr_scales_with_draws() {
    let cfg = NetworkConfig::standard(4, AttnAct::LinearScaled, MlpAct::Linear);
    let x = seq(&[0, 1, 0, 0, 1, 0], 4);
    let (m1, s1) = kernel_mc(&McKernel::new(cfg.clone(), 2000, 1).unwrap(), &x, &x).unwrap();
    let (_, s2) = kernel_mc(&McKernel::new(cfg.clone(), 4000, 1).unwrap(), &x, &x).unwrap();
    assert!(m1 > -3.0 * s1);
    let ratio = s2 / s1;
    assert!((ratio * 2f64.sqrt() - 1.0).abs() < 0.2, "ratio {ratio}");
    assert!(McKernel::new(cfg, 1, 0).is_err());
}

#[test]
fn mc_is_deterministic_and_symmetric() {
    let cfg = small_cfg(4, AttnAct::Softmax, MlpAct::Erf, LastPositionPe::Zero);
    let m = KernelModel::MonteCarlo(McKernel::new(cfg, 200, 8).unwrap());
    let xs = random_seqs(5, 4, 2);
    let g1 = gram_matrix(&m, &xs).unwrap();
    let g2 = gram_matrix(&m, &xs).unwrap();
    assert_eq!(g1, g2);
    assert_eq!(g1, g1.transpose());
    let x = &xs[0];
    let y = &xs[1];
    assert_eq!(m.eval(x, y).unwrap(), m.eval(y, x).unwrap());
}

#[test]
fn hand_value_l1() {
    let x = seq(&[0, 0, 0], 1);
    assert!((kernel_analytic_full(&x, &x).unwrap() - 5.0 / 16.0).abs() < 1e-12);
}

#[test]
fn q_form_matches_direct_sum() {
    for l in [2, 3, 8, 13] {
        for (x, y) in random_seqs(30, l, l as u64)
            .iter()
            .zip(random_seqs(30, l, 99 + l as u64).iter())
        {
            for k in AnalyticKernel::ALL {
                let a = k.eval(x, y).unwrap();
                let b = eval_via_q(k, x, y).unwrap();
                assert!((a - b).abs() < 1e-13, "{k:?} L={l}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn gram_psd_l16() {
    let mix = MixtureParams::new(0.0, 0.0, 1.0).unwrap();
    let d = generate_dataset(&mix, 200, 16, 5).unwrap();
    for k in [AnalyticKernel::Full, AnalyticKernel::Simplified] {
        let g = gram_matrix(&KernelModel::Analytic(k), &d.sequences).unwrap();
        assert_eq!(g, g.transpose());
        let min = g.symmetric_eigenvalues().min();
        assert!(min >= -1e-10, "{k:?}: {min}");
    }
}

#[test]
fn cross_matrix_agrees_with_gram() {
    let xs = random_seqs(7, 6, 3);
    let g = gram_matrix(&KernelModel::Analytic(AnalyticKernel::Full), &xs).unwrap();
    let c = cross_matrix(AnalyticKernel::Full, &xs, &xs).unwrap();
    assert_eq!(g, c);
}

#[test]
fn trace_is_bounded() {
    let mix = MixtureParams::new(0.0, 0.0, 1.0).unwrap();
    let d = generate_dataset(&mix, 10_000, 12, 17).unwrap();
    for k in [AnalyticKernel::Full, AnalyticKernel::Simplified] {
        let t = d.sequences.iter().map(|x| k.eval(x, x).unwrap()).sum::<f64>() / 1e4;
        assert!(t > 0.0 && t < 2.0, "{k:?}: {t}");
    }
}

#[test]
fn simplified_gap_shrinks_with_l() {
    let gap = |l: usize| {
        // uniformly random tokens
        random_seqs(400, l, 1)
            .chunks(2)
            .map(|p| {
                let f = kernel_analytic_full(&p[0], &p[1]).unwrap();
                let s = kernel_analytic_simplified(&p[0], &p[1]).unwrap();
                if f == 0.0 {
                    0.0
                } else {
                    ((f - s) / f).abs()
                }
            })
            .fold(0.0, f64::max)
    };
    let (g32, g64) = (gap(32), gap(64));
    assert!(g64 < 0.5 * g32, "gap 32 {g32} gap 64 {g64}");
}

#[test]
fn simplified_needs_l2() {
    let x = seq(&[0, 0, 0], 1);
    assert!(kernel_analytic_simplified(&x, &x).is_err());
}

fn arb_pair() -> impl Strategy<Value = (Vec<u8>, Vec<u8>, Vec<usize>, usize)> {
    (2usize..20).prop_flat_map(|l| {
        (
            prop::collection::vec(0u8..2, l + 2),
            prop::collection::vec(0u8..2, l + 2),
            Just((0..l).collect::<Vec<usize>>()).prop_shuffle(),
            Just(l),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn analytic_kernels_are_sl_invariant((a, b, perm, l) in arb_pair()) {
        let (x, y) = (seq(&a, l), seq(&b, l));
        let permute = |t: &[u8]| {
            let mut out = t.to_vec();
            for (i, &p) in perm.iter().enumerate() {
                out[i] = t[p];
            }
            seq(&out, l)
        };
        let (px, py) = (permute(&a), permute(&b));
        for k in AnalyticKernel::ALL {
            let v = k.eval(&x, &y).unwrap();
            prop_assert!((k.eval(&px, &py).unwrap() - v).abs() < 1e-12);
            prop_assert_eq!(k.eval(&y, &x).unwrap(), v);
        }
    }
}

#[test]
fn shuffled_first_l_tokens_keep_full_kernel() {
    let mut r = rng(4);
    for x in random_seqs(50, 10, 8) {
        let y = random_seqs(1, 10, r.random())[0].clone();
        let mut perm: Vec<usize> = (0..10).collect();
        perm.shuffle(&mut r);
        let apply = |s: &TokenSequence| {
            let mut t = s.tokens.clone();
            for (i, &p) in perm.iter().enumerate() {
                t[i] = s.tokens[p];
            }
            seq(&t, 10)
        };
        let v = kernel_analytic_full(&x, &y).unwrap();
        assert_eq!(kernel_analytic_full(&apply(&x), &apply(&y)).unwrap(), v);
    }
}
