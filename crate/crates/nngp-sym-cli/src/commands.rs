//! Subcommand bodies. Each resolves its config, validates it before doing any
//! work, writes its outputs and returns the list of files written.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use nngp_sym::corpus_sym::{default_k_sample, load_corpus, position_biased, symmetry_report, zipf_exchangeable};
use nngp_sym::ek_theory::{ek_mse, project_target, solve_spectrum, MeasureHandle, MeasureMode, Target, TestMeasure};
use nngp_sym::gp_inference::{learning_curve, LearningCurveConfig};
use nngp_sym::hmm_data::{generate_dataset, MixtureParams};
use nngp_sym::io::{fmt_f64, save_csv, save_dataset};
use nngp_sym::kernel::{AnalyticKernel, AttnAct, KernelModel, LastPositionPe, McKernel, MlpAct, NetworkConfig};
use nngp_sym::spectrum_scaling::{fit_reports, spectrum_report, ClusterSelector, ScalingFit};
use nngp_sym::symgroup::{binomial, decompose_multilinear, standard_tableaux, symmetrizer_span_rank};
use serde_json::json;

use crate::config::{validation, CliError, CliResult, Defaults, ExperimentConfig};

const TRAIN_MIX: [(&str, &str, &str); 3] = [
    ("p_a", "0.4", "0.4"),
    ("q_a", "0.5", "0.5"),
    ("w", "0.031622776601683794", "0.031622776601683794"),
];

const NETWORK: [(&str, &str, &str); 7] = [
    ("attn", "linear", "linear"),
    ("mlp", "linear", "linear"),
    ("pe", "zero", "zero"),
    ("draws", "500", "3000"),
    ("d_m", "1024", "1024"),
    ("d_ff", "1024", "1024"),
    ("n_heads", "16", "16"),
];

pub const GENERATE: Defaults = &[
    ("l", "8", "12"),
    ("n", "100", "10000"),
    TRAIN_MIX[0],
    TRAIN_MIX[1],
    TRAIN_MIX[2],
];

pub const LEARNING_CURVE: Defaults = &[
    ("kernel", "full", "full"),
    ("l", "8", "12"),
    ("n_list", "16,32,64,128", "16,64,256,1024"),
    ("repeats", "5", "20"),
    ("n_test", "500", "2000"),
    ("sigma2", "1", "1"),
    ("grid", "32", "128"),
    TRAIN_MIX[0],
    TRAIN_MIX[1],
    TRAIN_MIX[2],
    ("test_p_a", "0", "0"),
    ("test_q_a", "0", "0"),
    ("test_w", "1", "1"),
    ("measure", "moments", "moments"),
    ("measure_grid", "16", "32"),
    ("measure_samples", "20000", "200000"),
    NETWORK[0],
    NETWORK[1],
    NETWORK[2],
    NETWORK[3],
    NETWORK[4],
    NETWORK[5],
    NETWORK[6],
];

pub const SPECTRUM: Defaults = &[
    ("kernel", "full", "mc"),
    ("l_list", "8,12,16", "8,16,32,64"),
    ("n_samples", "300", "1500"),
    ("rel_tol", "0.05", "0.05"),
    ("p_a", "0", "0"),
    ("q_a", "0", "0"),
    ("w", "1", "1"),
    ("attn", "linear", "softmax"),
    NETWORK[1],
    NETWORK[2],
    NETWORK[3],
    NETWORK[4],
    NETWORK[5],
    NETWORK[6],
];

pub const CORPUS: Defaults = &[
    ("input", "", ""),
    ("synthetic", "zipf", "zipf"),
    ("n", "500", "10000"),
    ("l", "31", "101"),
    ("vocab", "200", "2000"),
    ("exponent", "1", "1"),
    ("bias", "0.5", "0.5"),
    ("k_sample", "", ""),
];

pub const SYMCHECK: Defaults = &[("n_max", "6", "8")];

fn mixture(c: &ExperimentConfig, prefix: &str) -> CliResult<MixtureParams> {
    let g = |k: &str| c.get::<f64>(&format!("{prefix}{k}"));
    Ok(MixtureParams::new(g("p_a")?, g("q_a")?, g("w")?)?)
}

fn even_l(l: usize) -> CliResult<()> {
    if l < 2 || l % 2 == 1 {
        return validation(format!("L must be even and at least 2, got {l}"));
    }
    Ok(())
}

pub fn kernel_model(c: &ExperimentConfig, l: usize, seed: u64) -> CliResult<KernelModel> {
    let analytic = match c.str("kernel") {
        "full" => Some(AnalyticKernel::Full),
        "full_zero_pe" => Some(AnalyticKernel::FullZeroLastPe),
        "simplified" => Some(AnalyticKernel::Simplified),
        "simplified_printed" => Some(AnalyticKernel::SimplifiedPrinted),
        "mc" => None,
        k => {
            return validation(format!(
                "unknown kernel `{k}` (full, full_zero_pe, simplified, simplified_printed, mc)"
            ))
        }
    };
    if let Some(a) = analytic {
        return Ok(KernelModel::Analytic(a));
    }
    let attn = match c.str("attn") {
        "linear" => AttnAct::LinearScaled,
        "softmax" => AttnAct::Softmax,
        a => return validation(format!("unknown attention `{a}` (linear, softmax)")),
    };
    let mlp = match c.str("mlp") {
        "linear" => MlpAct::Linear,
        "erf" => MlpAct::Erf,
        "relu" => MlpAct::Relu,
        m => return validation(format!("unknown MLP activation `{m}` (linear, erf, relu)")),
    };
    let mut cfg = NetworkConfig::standard(l, attn, mlp);
    cfg.last_position_pe = match c.str("pe") {
        "zero" => LastPositionPe::Zero,
        "keys_values" => LastPositionPe::KeysValues,
        p => return validation(format!("unknown last-position encoding `{p}` (zero, keys_values)")),
    };
    cfg.d_m = c.get("d_m")?;
    cfg.d_ff = c.get("d_ff")?;
    cfg.n_heads = c.get("n_heads")?;
    Ok(KernelModel::MonteCarlo(McKernel::new(cfg, c.get("draws")?, seed)?))
}

pub fn generate(c: &ExperimentConfig, seed: u64, out: &Path) -> CliResult<Vec<String>> {
    let l: usize = c.get("l")?;
    let n: usize = c.get("n")?;
    let mix = mixture(c, "")?;
    even_l(l)?;
    if n == 0 {
        return validation("n must be positive");
    }
    let d = generate_dataset(&mix, n, l, seed)?;
    save_dataset(&out.join("dataset.txt"), &d.sequences)?;
    println!("wrote {n} sequences of L={l}");
    Ok(vec!["dataset.txt".into()])
}

pub fn learning(c: &ExperimentConfig, seed: u64, out: &Path) -> CliResult<Vec<String>> {
    let l: usize = c.get("l")?;
    even_l(l)?;
    let n_list: Vec<usize> = c.list("n_list")?;
    if n_list.is_empty() || n_list[0] == 0 || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return validation("n_list must be nonempty, positive and strictly ascending");
    }
    let train = mixture(c, "")?;
    let test = mixture(c, "test_")?;
    let sigma2: f64 = c.get("sigma2")?;
    if !(sigma2 > 0.0) {
        return validation("sigma2 must be positive");
    }
    let kernel = kernel_model(c, l, seed)?;
    let grid: usize = c.get("grid")?;
    let mode = |s: u64| -> CliResult<MeasureMode> {
        Ok(match c.str("measure") {
            "exact" => MeasureMode::Exact {
                grid: c.get("measure_grid")?,
            },
            "moments" => MeasureMode::Moments {
                grid: c.get("measure_grid")?,
            },
            "mc" => MeasureMode::MonteCarlo {
                n_samples: c.get("measure_samples")?,
                seed: s,
            },
            m => return validation(format!("unknown measure `{m}` (exact, moments, mc)")),
        })
    };
    // build the EK measures first so infeasible settings fail before the GP runs
    let ek = match kernel.analytic() {
        Some(a) => {
            let tr = MeasureHandle::new(train, l, mode(seed ^ 1)?)?;
            let te = MeasureHandle::new(test, l, mode(seed ^ 2)?)?;
            Some((a, tr, te))
        }
        None => None,
    };
    let mut cfg = LearningCurveConfig::new(kernel, train, test, l, n_list);
    cfg.n_repeats = c.get("repeats")?;
    cfg.n_test = c.get("n_test")?;
    cfg.sigma2 = sigma2;
    cfg.grid = grid;
    cfg.seed = seed;
    let rows = learning_curve(&cfg)?;
    let ek_cols = match &ek {
        Some((a, tr, te)) => {
            let sp = solve_spectrum(&KernelModel::Analytic(*a), tr, sigma2)?;
            let lab = project_target(Target::Labels, &sp, tr)?;
            let opt = project_target(Target::Optimal { grid }, &sp, tr)?;
            let mut v = Vec::new();
            for r in &rows {
                let n = r.n as f64;
                v.push((
                    ek_mse(&lab, n, TestMeasure::Other(te))?,
                    ek_mse(&opt, n, TestMeasure::Other(te))?,
                ));
            }
            Some(v)
        }
        None => None,
    };
    let mut header = vec!["n", "gp_mse", "gp_mse_se", "gp_mse_opt", "gp_mse_opt_se"];
    if ek_cols.is_some() {
        header.extend(["ek_mse", "ek_mse_opt"]);
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = vec![
                r.n.to_string(),
                fmt_f64(r.mse_mean),
                fmt_f64(r.mse_stderr),
                fmt_f64(r.mse_vs_optimal_mean),
                fmt_f64(r.mse_vs_optimal_stderr),
            ];
            if let Some(e) = &ek_cols {
                row.extend([fmt_f64(e[i].0), fmt_f64(e[i].1)]);
            }
            row
        })
        .collect();
    save_csv(&out.join("learning_curve.csv"), &header, &table)?;
    for r in &table {
        println!("{}", r.join(" "));
    }
    Ok(vec!["learning_curve.csv".into()])
}

fn fit_json(f: &ScalingFit) -> serde_json::Value {
    json!({ "slope": f.slope, "stderr": f.stderr, "intercept": f.intercept })
}

pub fn spectrum(c: &ExperimentConfig, seed: u64, out: &Path) -> CliResult<Vec<String>> {
    let ls: Vec<usize> = c.list("l_list")?;
    let distinct: BTreeSet<usize> = ls.iter().copied().collect();
    if distinct.len() < 3 {
        return validation(format!(
            "l_list needs at least 3 distinct values, got {}",
            distinct.len()
        ));
    }
    for &l in &ls {
        even_l(l)?;
    }
    let mix = mixture(c, "")?;
    let n: usize = c.get("n_samples")?;
    let rel_tol: f64 = c.get("rel_tol")?;
    let models = ls
        .iter()
        .map(|&l| kernel_model(c, l, seed.wrapping_add(l as u64)))
        .collect::<CliResult<Vec<_>>>()?;
    let reports = ls
        .iter()
        .zip(&models)
        .map(|(&l, m)| spectrum_report(m, &mix, l, n, seed, rel_tol).map_err(CliError::from))
        .collect::<CliResult<Vec<_>>>()?;
    let mut eig_rows = Vec::new();
    let mut cl_rows = Vec::new();
    for r in &reports {
        let cid = r.cluster_of_rank();
        for (i, e) in r.eigenvalues.iter().enumerate() {
            eig_rows.push(vec![r.l.to_string(), i.to_string(), fmt_f64(*e), cid[i].to_string()]);
        }
        for (id, cl) in r.clusters.iter().enumerate() {
            cl_rows.push(vec![
                r.l.to_string(),
                id.to_string(),
                cl.start.to_string(),
                cl.size.to_string(),
                fmt_f64(cl.mean),
                fmt_f64(cl.spread),
                cl.irrep_k.map_or("zero".into(), |k| k.to_string()),
            ]);
        }
    }
    save_csv(
        &out.join("spectrum.csv"),
        &["l", "rank", "eigenvalue", "cluster"],
        &eig_rows,
    )?;
    save_csv(
        &out.join("clusters.csv"),
        &["l", "cluster", "start", "size", "mean", "spread", "irrep_k"],
        &cl_rows,
    )?;
    let top = fit_reports(&reports, ClusterSelector::Top)?;
    let band = fit_reports(&reports, ClusterSelector::StandardBand)?;
    let slopes = json!({ "kernel": reports[0].kernel, "top": fit_json(&top), "standard_band": fit_json(&band) });
    fs::write(
        out.join("slopes.json"),
        serde_json::to_string_pretty(&slopes).expect("json") + "\n",
    )?;
    println!(
        "top slope {:.4} +- {:.4}, standard band slope {:.4} +- {:.4}",
        top.slope, top.stderr, band.slope, band.stderr
    );
    Ok(vec!["spectrum.csv".into(), "clusters.csv".into(), "slopes.json".into()])
}

pub fn corpus(c: &ExperimentConfig, seed: u64, out: &Path) -> CliResult<Vec<String>> {
    let l: usize = c.get("l")?;
    if l == 0 {
        return validation("l must be positive");
    }
    let mut ks: Vec<usize> = c.list("k_sample")?;
    if ks.is_empty() {
        ks = default_k_sample(l);
    }
    if !ks.contains(&0) {
        return validation("k_sample must include 0");
    }
    let input = c.str("input");
    let corpus = if input.is_empty() {
        let (n, vocab, s): (usize, usize, f64) = (c.get("n")?, c.get("vocab")?, c.get("exponent")?);
        match c.str("synthetic") {
            "zipf" => zipf_exchangeable(n, l, vocab, s, seed)?,
            "biased" => position_biased(n, l, vocab, s, c.get("bias")?, seed)?,
            k => return validation(format!("unknown synthetic corpus `{k}` (zipf, biased)")),
        }
    } else {
        load_corpus(Path::new(input), l)?
    };
    if corpus.dropped > 0 {
        eprintln!("warning: dropped {} sequences shorter than L={l}", corpus.dropped);
    }
    let rep = symmetry_report(&corpus, &ks, seed)?;
    let mut ecdf = Vec::new();
    for (tag, s) in [("corpus", &rep.corpus), ("baseline", &rep.baseline)] {
        for (k, e) in s.k_sample.iter().zip(&s.ecdfs) {
            for (v, f) in e.points() {
                ecdf.push(vec![tag.to_string(), k.to_string(), fmt_f64(v), fmt_f64(f)]);
            }
        }
    }
    save_csv(&out.join("ecdf.csv"), &["source", "k", "eigenvalue", "cdf"], &ecdf)?;
    let summary = |s: &nngp_sym::corpus_sym::BlockSummary| {
        json!({
            "k_sample": s.k_sample,
            "similarity": s.similarity,
            "mutual_nonzero": s.mutual_nonzero.map(|m| m.0),
            "mutual_nonzero_stderr": s.mutual_nonzero.map(|m| m.1),
            "zero_vs_nonzero": s.zero_vs_nonzero,
            "gap": s.gap,
            "max_ks_nonzero": s.max_ks_nonzero,
        })
    };
    let report = json!({
        "source": rep.source,
        "l": rep.l,
        "n": rep.n,
        "dropped": corpus.dropped,
        "vocab_size": rep.vocab_size,
        "seed": rep.seed,
        "conjugate_second": rep.conjugate_second,
        "corpus": summary(&rep.corpus),
        "baseline": summary(&rep.baseline),
    });
    fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&report).expect("json") + "\n",
    )?;
    let show = |v: Option<f64>| v.map_or("n/a".into(), |x| format!("{x:.4}"));
    println!(
        "corpus gap {}, baseline gap {}",
        show(rep.corpus.gap),
        show(rep.baseline.gap)
    );
    Ok(vec!["report.json".into(), "ecdf.csv".into()])
}

pub fn symcheck(c: &ExperimentConfig, out: &Path) -> CliResult<Vec<String>> {
    let n_max: usize = c.get("n_max")?;
    if !(1..=8).contains(&n_max) {
        return validation(format!("n_max must lie in 1..=8, got {n_max}"));
    }
    let mut rows = Vec::new();
    let mut totals = Vec::new();
    let mut all_ok = true;
    for n in 1..=n_max {
        for d in 0..=n {
            let span = symmetrizer_span_rank(n, d)?;
            let mut sum = 0u128;
            for (label, dim) in decompose_multilinear(n, d)? {
                let tab = standard_tableaux(&label.partition()).len();
                let rank = span.per_k.iter().find(|p| p.0 == label.k).map_or(0, |p| p.1);
                sum += dim;
                rows.push(vec![
                    n.to_string(),
                    d.to_string(),
                    label.k.to_string(),
                    format!("({};{})", n - label.k, label.k),
                    dim.to_string(),
                    tab.to_string(),
                    rank.to_string(),
                ]);
            }
            let b = binomial(n, d);
            let ok = sum == b && span.total as u128 == b;
            all_ok &= ok;
            totals.push(vec![
                n.to_string(),
                d.to_string(),
                sum.to_string(),
                b.to_string(),
                span.total.to_string(),
                ok.to_string(),
            ]);
        }
    }
    save_csv(
        &out.join("symcheck.csv"),
        &["n", "d", "k", "shape", "dim", "tableaux", "rank"],
        &rows,
    )?;
    save_csv(
        &out.join("symcheck_totals.csv"),
        &["n", "d", "sum_dims", "binomial", "span_rank", "ok"],
        &totals,
    )?;
    println!("{} (n, d) rows, all consistent: {all_ok}", totals.len());
    if !all_ok {
        return Err(CliError::Runtime(
            "decomposition mismatch, see symcheck_totals.csv".into(),
        ));
    }
    Ok(vec!["symcheck.csv".into(), "symcheck_totals.csv".into()])
}
