//! Acceptance suite. Each test prints one `[acceptance] <name>: PASS|FAIL`
//! line; run with `--nocapture` to see them.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use valuekit::features::FeatureMatrix;
use valuekit::gbm::{
    self, best_split, conflict_count, efb_bundle, goss_sample, grad_hess_squared, leaf_weight,
    BinMapper, BinnedData, EfbConfig, GossConfig, GradPair, GrowthVariant, Histogram,
    QuantizedGrads, SplitParams, TrainConfig,
};
use valuekit::pipeline;
use valuekit::preprocess::{
    convert_currency, extract_number, map_credit_rating, sanitize_token, CurrencyUnit,
};
use valuekit::rng::{Purpose, SplitRng};
use valuekit::stack::{self, bayesian_ridge_fit, kfold_split, ridge_fixed, rmse, RidgeParams};
use valuekit::synth::{self, SyntheticSpec, PLANTED};
use valuekit::tabular::Value;

fn report(name: &str, ok: bool, detail: String) {
    println!(
        "[acceptance] {name}: {} ({detail})",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "{name}: {detail}");
}

fn rng(index: u32) -> SplitRng {
    SplitRng::new(20_190_601, Purpose::Synthetic, index)
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("r{i}")).collect()
}

fn names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("x{j}")).collect()
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

/// Compares against the committed digest; `VALUEKIT_BLESS=1` rewrites it.
fn golden(name: &str, digest: &str) -> (bool, String) {
    let path = data_dir().join("golden").join(format!("{name}.sha256"));
    if std::env::var_os("VALUEKIT_BLESS").is_some() {
        std::fs::write(&path, format!("{digest}\n")).unwrap();
        return (true, format!("{name} blessed"));
    }
    match std::fs::read_to_string(&path) {
        Ok(text) if text.trim() == digest => (true, format!("{name} matches")),
        Ok(text) => (
            false,
            format!("{name}: expected {}, got {digest}", text.trim()),
        ),
        Err(e) => (false, format!("{name}: {e}")),
    }
}

fn dense(rows: usize, p: usize, r: &mut SplitRng) -> Vec<Vec<Option<f64>>> {
    (0..rows)
        .map(|_| (0..p).map(|_| Some(r.normal())).collect())
        .collect()
}

fn small_config(variant: GrowthVariant, rounds: usize) -> TrainConfig {
    TrainConfig {
        variant,
        n_rounds: rounds,
        max_depth: 3,
        max_leaves: 6,
        learning_rate: 0.3,
        min_child_hess: 1.0,
        ..TrainConfig::default()
    }
}

// ---------------------------------------------------------------------------

/// Brute-force best partition: every feature, every distinct finite value
/// as an upper bound, both directions for missing values. Same tie order as
/// the histogram search: lower feature, lower threshold, missing-left first.
fn brute_force(
    x: &[Vec<Option<f64>>],
    g: &[f64],
    params: &SplitParams,
) -> Option<(Vec<bool>, f64)> {
    let n = x.len();
    let p = x[0].len();
    let mut best: Option<(Vec<bool>, f64)> = None;
    for f in 0..p {
        let mut values: Vec<f64> = x.iter().filter_map(|r| r[f]).collect();
        values.sort_by(|a, b| a.total_cmp(b));
        values.dedup();
        for &t in &values {
            for missing_left in [true, false] {
                let left: Vec<bool> = (0..n)
                    .map(|i| match x[i][f] {
                        Some(v) => v <= t,
                        None => missing_left,
                    })
                    .collect();
                let nl = left.iter().filter(|&&l| l).count();
                if nl == 0 || nl == n {
                    continue;
                }
                let (hl, hr) = (nl as f64, (n - nl) as f64);
                if hl < params.min_child_hess || hr < params.min_child_hess {
                    continue;
                }
                let gl: f64 = (0..n).filter(|&i| left[i]).map(|i| g[i]).sum();
                let gr: f64 = (0..n).filter(|&i| !left[i]).map(|i| g[i]).sum();
                let gain = gbm::split_gain(gl, hl, gr, hr, params.lambda, params.gamma);
                if gain > best.as_ref().map_or(0.0, |b| b.1) {
                    best = Some((left, gain));
                }
            }
        }
    }
    best
}

fn partition_gain(left: &[bool], g: &[f64], params: &SplitParams) -> f64 {
    let (mut gl, mut gr, mut hl, mut hr) = (0.0, 0.0, 0.0, 0.0);
    for (i, &l) in left.iter().enumerate() {
        if l {
            gl += g[i];
            hl += 1.0;
        } else {
            gr += g[i];
            hr += 1.0;
        }
    }
    gbm::split_gain(gl, hl, gr, hr, params.lambda, params.gamma)
}

#[test]
fn exact_split_oracle() {
    let start = Instant::now();
    let mut agree = 0;
    let mut ties = 0;
    let mut failures = Vec::new();
    for case in 0..200u32 {
        let mut r = rng(case);
        let n = 2 + r.below(63) as usize;
        let p = 1 + r.below(4) as usize;
        let levels = 2 + r.below(12);
        let missing_rate = [0.0, 0.1, 0.3][r.below(3) as usize];
        let x: Vec<Vec<Option<f64>>> = (0..n)
            .map(|_| {
                (0..p)
                    .map(|_| (r.unit() >= missing_rate).then(|| r.below(levels) as f64 * 0.5 - 2.0))
                    .collect()
            })
            .collect();
        let y: Vec<f64> = (0..n).map(|_| 2.0 * r.normal()).collect();
        let params = SplitParams {
            lambda: [0.0, 0.5, 1.0, 3.0][r.below(4) as usize],
            gamma: [0.0, 0.0, 0.2][r.below(3) as usize],
            min_child_hess: [0.0, 1.0, 3.0][r.below(3) as usize],
        };
        let grads = grad_hess_squared(&y, &vec![0.25; n]).unwrap();
        let g: Vec<f64> = grads.iter().map(|p| p.g).collect();

        let matrix = FeatureMatrix::new(ids(n), names(p), x.clone()).unwrap();
        let mapper = BinMapper::fit(&matrix, 256).unwrap();
        let data = BinnedData::new(&matrix, &mapper, None).unwrap();
        let rows: Vec<u32> = (0..n as u32).collect();
        let q = QuantizedGrads::new(&grads, &rows, None).unwrap();
        let hist = Histogram::build(&data, &rows, &q);
        let found = best_split(&data, &hist, &q, &vec![true; p], &params);
        let oracle = brute_force(&x, &g, &params);

        let ok = match (&found, &oracle) {
            (None, None) => true,
            (Some(s), Some((want, gain))) => {
                let t = mapper.threshold(s.feature, s.bin);
                let got: Vec<bool> = x
                    .iter()
                    .map(|row| match row[s.feature] {
                        Some(v) => v <= t,
                        None => s.default_left,
                    })
                    .collect();
                let tol = 1e-9 * (1.0 + gain.abs());
                let gain_ok = (s.gain - gain).abs() <= tol;
                if &got == want {
                    gain_ok
                } else {
                    // an equally good partition found first under a different tie
                    let tie = (partition_gain(&got, &g, &params) - gain).abs() <= tol;
                    ties += tie as usize;
                    tie && gain_ok
                }
            }
            _ => false,
        };
        if ok {
            agree += 1;
        } else {
            failures.push(case);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "exact_split_oracle",
        agree == 200 && secs < 30.0,
        format!("{agree}/200 agree, {ties} exact ties, {secs:.2}s, failing cases {failures:?}"),
    );
}

#[test]
fn leaf_weight_closed_form() {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for i in 0..10 {
        for j in 0..10 {
            for k in 0..10 {
                let g = -50.0 + 100.0 * i as f64 / 9.0;
                let h = 100.0 * j as f64 / 9.0;
                let lambda = 0.01 + 9.99 * k as f64 / 9.0;
                let expected = -g / (h + lambda);
                let got = leaf_weight(g, h, lambda).unwrap();
                worst = worst.max((got - expected).abs());
                count += 1;
            }
        }
    }
    report(
        "leaf_weight_closed_form",
        count == 1000 && worst <= 1e-12,
        format!("{count} grid points, max abs error {worst:e}"),
    );
}

#[test]
fn monotone_training_loss() {
    let mut violations = 0;
    let mut worst = 0.0f64;
    for case in 0..50u32 {
        let mut r = rng(1000 + case);
        let (n, p) = (150, 5);
        let x = dense(n, p, &mut r);
        let y: Vec<f64> = x
            .iter()
            .map(|row| {
                let v: Vec<f64> = row.iter().map(|c| c.unwrap()).collect();
                3.0 * v[0] - 2.0 * v[1] * v[2] + (v[3] > 0.0) as u8 as f64 + 0.5 * r.normal()
            })
            .collect();
        let matrix = FeatureMatrix::new(ids(n), names(p), x).unwrap();
        let variant = if case % 2 == 0 {
            GrowthVariant::Depthwise
        } else {
            GrowthVariant::Leafwise
        };
        let config = TrainConfig {
            colsample: 0.8,
            seed: case as u64,
            ..small_config(variant, 100)
        };
        let out = gbm::train_with_trace(&matrix, &y, &config).unwrap();
        assert_eq!(out.rmse_trace.len(), 101);
        for w in out.rmse_trace.windows(2) {
            if w[1] > w[0] {
                violations += 1;
                worst = worst.max(w[1] - w[0]);
            }
        }
    }
    report(
        "monotone_training_loss",
        violations == 0,
        format!("50 datasets x 100 rounds, {violations} increases (largest {worst:e})"),
    );
}

#[test]
fn goss_degeneracy() {
    let mut r = rng(2000);
    let (n, p) = (300, 6);
    let x = dense(n, p, &mut r);
    let y: Vec<f64> = x
        .iter()
        .map(|row| row[0].unwrap() * 2.0 + row[1].unwrap().abs() + r.normal())
        .collect();
    let matrix = FeatureMatrix::new(ids(n), names(p), x).unwrap();
    let mut identical = true;
    for variant in [GrowthVariant::Depthwise, GrowthVariant::Leafwise] {
        let off = TrainConfig {
            goss: None,
            ..small_config(variant, 30)
        };
        let degenerate = TrainConfig {
            goss: Some(GossConfig {
                top_rate: 1.0,
                other_rate: 0.0,
            }),
            ..off.clone()
        };
        let a = gbm::train(&matrix, &y, &off).unwrap().to_json().unwrap();
        let b = gbm::train(&matrix, &y, &degenerate)
            .unwrap()
            .to_json()
            .unwrap();
        identical &= a == b;
    }

    let grads: Vec<GradPair> = (0..1000)
        .map(|_| GradPair {
            g: r.normal(),
            h: 1.0,
        })
        .collect();
    let sample = goss_sample(&grads, 0.2, 0.1, &mut SplitRng::new(5, Purpose::Goss, 0));
    let amplified: BTreeSet<u64> = sample
        .multipliers
        .iter()
        .filter(|&&m| m != 1.0)
        .map(|m| m.to_bits())
        .collect();
    let n_top = sample.multipliers.iter().filter(|&&m| m == 1.0).count();
    let n_rest = sample.multipliers.len() - n_top;
    let multiplier_ok =
        amplified == BTreeSet::from([8.0f64.to_bits()]) && n_top == 200 && n_rest == 100;
    report(
        "goss_degeneracy",
        identical && multiplier_ok,
        format!(
            "a=1,b=0 byte-identical: {identical}; kept {n_top} top + {n_rest} sampled, multipliers {:?}",
            amplified.iter().map(|&b| f64::from_bits(b)).collect::<Vec<_>>()
        ),
    );
}

/// Incremental conflict count of a bundle: rows each member shares with
/// the members placed before it.
fn bundle_conflicts(matrix: &FeatureMatrix, members: &[usize]) -> usize {
    let non_zero = |r: usize, f: usize| !matches!(matrix.get(r, f), Some(v) if v == 0.0);
    let mut total = 0;
    for (i, &f) in members.iter().enumerate() {
        total += (0..matrix.n_rows())
            .filter(|&r| non_zero(r, f) && members[..i].iter().any(|&e| non_zero(r, e)))
            .count();
    }
    total
}

#[test]
fn efb_fidelity() {
    // one-hot style groups: at most one non-zero per group on each row
    let mut r = rng(3000);
    let (n, groups, width) = (400, 3, 5);
    let p = groups * width;
    let mut x = vec![vec![Some(0.0); p]; n];
    let mut y = vec![0.0; n];
    for i in 0..n {
        for grp in 0..groups {
            let slot = r.below(width as u64 + 1) as usize;
            if slot < width {
                let v = 1.0 + r.below(4) as f64;
                x[i][grp * width + slot] = Some(v);
                y[i] += v * (slot as f64 - 2.0) * (grp as f64 + 1.0);
            }
        }
        y[i] += 0.3 * r.normal();
    }
    let matrix = FeatureMatrix::new(ids(n), names(p), x).unwrap();
    let base = TrainConfig {
        efb: None,
        ..small_config(GrowthVariant::Leafwise, 40)
    };
    let bundled = TrainConfig {
        efb: Some(EfbConfig { max_conflict: 0 }),
        ..base.clone()
    };
    let plain = gbm::train(&matrix, &y, &base).unwrap();
    let fused = gbm::train(&matrix, &y, &bundled).unwrap();
    let n_groups = fused.bundles.as_ref().map_or(p, |b| b.len());
    let a = plain.predict(&matrix).unwrap();
    let b = fused.predict(&matrix).unwrap();
    let worst = a
        .iter()
        .zip(&b)
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max);

    // conflict counting against brute force on random sparse data
    let mut counting_ok = true;
    let mut checked = 0;
    for case in 0..20u32 {
        let mut r = rng(3100 + case);
        let p = 2 + r.below(19) as usize;
        let n = 30 + r.below(50) as usize;
        let density = 0.05 + 0.3 * r.unit();
        let x: Vec<Vec<Option<f64>>> = (0..n)
            .map(|_| {
                (0..p)
                    .map(|_| match r.unit() {
                        u if u < density * 0.1 => None,
                        u if u < density => Some(1.0 + r.below(3) as f64),
                        _ => Some(0.0),
                    })
                    .collect()
            })
            .collect();
        let m = FeatureMatrix::new(ids(n), names(p), x.clone()).unwrap();
        for a in 0..p {
            for b in 0..p {
                let brute = (0..n)
                    .filter(|&i| x[i][a] != Some(0.0) && x[i][b] != Some(0.0))
                    .count();
                counting_ok &= conflict_count(&m, a, b) == brute;
                checked += 1;
            }
        }
        let mapper = BinMapper::fit(&m, 16).unwrap();
        for max_conflict in [0, 2, 5] {
            let bundles = efb_bundle(&m, &mapper, max_conflict);
            let mut seen: Vec<usize> = bundles.iter().flat_map(|b| b.members.clone()).collect();
            seen.sort_unstable();
            counting_ok &= seen == (0..p).collect::<Vec<_>>();
            for bundle in &bundles {
                let brute = bundle_conflicts(&m, &bundle.members);
                counting_ok &= bundle.conflicts == brute && brute <= max_conflict;
            }
        }
    }
    report(
        "efb_fidelity",
        worst <= 1e-12 && n_groups < p && counting_ok,
        format!(
            "{p} features in {n_groups} groups, max prediction gap {worst:e}; {checked} pair counts and bundle totals match brute force: {counting_ok}"
        ),
    );
}

#[test]
fn bayesian_ridge_closed_form() {
    let mut worst: f64 = 0.0;
    let mut converged = 0;
    let mut max_iter = 0;
    for case in 0..50u32 {
        let mut r = rng(4000 + case);
        let p = 1 + r.below(4) as usize;
        let n = (p + 2).max(5) + r.below(30 - (p + 2).max(5) as u64 + 1) as usize;
        let w: Vec<f64> = (0..p).map(|_| 2.0 * r.normal()).collect();
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| r.normal() * 3.0 + 1.0).collect())
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|row| 4.0 + row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.5 * r.normal())
            .collect();
        let alpha = 0.1 + 5.0 * r.unit();
        let lambda = 0.01 + 2.0 * r.unit();

        // direct inverse on centered data
        let xm: Vec<f64> = (0..p)
            .map(|j| x.iter().map(|row| row[j]).sum::<f64>() / n as f64)
            .collect();
        let ym = y.iter().sum::<f64>() / n as f64;
        let a = DMatrix::from_fn(n, p, |i, j| x[i][j] - xm[j]);
        let b = DVector::from_fn(n, |i, _| y[i] - ym);
        let lhs = a.transpose() * &a * alpha + DMatrix::identity(p, p) * lambda;
        let direct = lhs.try_inverse().unwrap() * a.transpose() * b * alpha;

        let fit = ridge_fixed(&x, &y, alpha, lambda).unwrap();
        for j in 0..p {
            worst = worst.max((fit.weights[j] - direct[j]).abs() / direct[j].abs().max(1.0));
        }
        let intercept = ym
            - xm.iter()
                .zip(direct.iter())
                .map(|(m, w)| m * w)
                .sum::<f64>();
        worst = worst.max((fit.intercept - intercept).abs() / intercept.abs().max(1.0));

        let params = RidgeParams {
            tol: 1e-6,
            max_iter: 300,
        };
        let evidence = bayesian_ridge_fit(&x, &y, &params).unwrap();
        if evidence.converged && evidence.n_iter <= 300 {
            converged += 1;
        }
        max_iter = max_iter.max(evidence.n_iter);
    }
    report(
        "bayesian_ridge_closed_form",
        worst <= 1e-10 && converged == 50,
        format!(
            "max weight error {worst:e}; {converged}/50 converged, at most {max_iter} iterations"
        ),
    );
}

#[test]
fn stacking_no_leakage() {
    let mut r = rng(5000);
    let (n, p) = (40, 3);
    let x = dense(n, p, &mut r);
    let y: Vec<f64> = x
        .iter()
        .map(|row| 2.0 * row[0].unwrap() - row[2].unwrap() + 0.3 * r.normal())
        .collect();
    let matrix = FeatureMatrix::new(ids(n), names(p), x).unwrap();
    let plan = kfold_split(n, 5, 11).unwrap();
    let bases = [
        TrainConfig {
            min_child_hess: 2.0,
            ..small_config(GrowthVariant::Depthwise, 20)
        },
        TrainConfig {
            min_child_hess: 2.0,
            goss: Some(GossConfig::default()),
            ..small_config(GrowthVariant::Leafwise, 20)
        },
    ];
    let clean = stack::oof_predictions(&matrix, &y, &bases, &plan).unwrap();
    let mut changed_elsewhere = 0;
    let mut leaks = Vec::new();
    for i in 0..n {
        let mut corrupted = y.clone();
        corrupted[i] += 1000.0;
        let dirty = stack::oof_predictions(&matrix, &corrupted, &bases, &plan).unwrap();
        let same = clean.predictions[i]
            .iter()
            .zip(&dirty.predictions[i])
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            leaks.push(i);
        }
        changed_elsewhere += (0..n)
            .filter(|&j| clean.predictions[j] != dirty.predictions[j])
            .count();
    }
    report(
        "stacking_no_leakage",
        leaks.is_empty() && changed_elsewhere > 0,
        format!("n=40, k=5: {} rows leak {leaks:?}; corruption moved {changed_elsewhere} other OOF rows", leaks.len()),
    );
}

#[test]
fn evaluation_grid_pattern() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec::default();
    let written = synth::generate(&spec, dir.path()).unwrap();
    let config = synth::paper_shape_config();
    let matrix = pipeline::build_matrix(&config, dir.path()).unwrap();
    let labels = pipeline::read_labels(&written.labels).unwrap();
    let y = pipeline::align_labels(&matrix, &labels, config.labels.duplicates).unwrap();
    let report_ = pipeline::evaluate(&config, &matrix, &y).unwrap();
    let secs = start.elapsed().as_secs_f64();

    let cell = |m: &str, set: usize| report_.cell(m, set).unwrap();
    let selected_bases = cell("depthwise", 1).min(cell("leafwise", 1));
    let stack_ok = cell("stacking", 1) <= selected_bases + 1e-9;
    let improved = ["depthwise", "leafwise", "stacking"]
        .iter()
        .filter(|m| cell(m, 1) <= cell(m, 0))
        .count();
    let report_json = report_.to_json().unwrap();
    let (golden_ok, golden_detail) = golden("evaluation_report", &sha256(report_json.as_bytes()));
    let shape_ok = matrix.n_rows() == 3500 && matrix.n_features() == 436;
    report(
        "evaluation_grid_pattern",
        shape_ok && stack_ok && improved >= 2 && golden_ok && secs < 300.0,
        format!(
            "{}x{} matrix; stacking {:.4} vs best base {:.4} on selected; selected <= all in {improved}/3 rows; {golden_detail}; {secs:.1}s\n{}",
            matrix.n_rows(),
            matrix.n_features(),
            cell("stacking", 1),
            selected_bases,
            report_.render_table()
        ),
    );
}

#[test]
fn selection_recovery() {
    let config = synth::paper_shape_config();
    let mut hits = Vec::new();
    for seed in 1..=20u64 {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            seed,
            ..SyntheticSpec::default()
        };
        let written = synth::generate(&spec, dir.path()).unwrap();
        let matrix = pipeline::build_matrix(&config, dir.path()).unwrap();
        assert_eq!(matrix.n_features(), 436);
        let y = pipeline::align_labels(
            &matrix,
            &pipeline::read_labels(&written.labels).unwrap(),
            config.labels.duplicates,
        )
        .unwrap();
        let mut seeded = config.clone();
        seeded.seed = seed;
        let result = pipeline::run_selection(&seeded, &matrix, &y).unwrap();
        assert_eq!(result.kept.len(), 66);
        let kept: BTreeSet<&str> = result.kept.iter().map(String::as_str).collect();
        hits.push(
            PLANTED
                .iter()
                .filter(|(name, _)| kept.contains(name))
                .count(),
        );
    }
    report(
        "selection_recovery",
        hits.iter().all(|&h| h >= 9),
        format!("planted features in top 66 of 436 per seed: {hits:?}"),
    );
}

#[test]
fn rmse_unit_truth() {
    let a = rmse(&[1.0, 2.0], &[4.0, 6.0]).unwrap();
    let mut r = rng(6000);
    let x: Vec<f64> = (0..100).map(|_| r.normal() * 1e3).collect();
    let zero = rmse(&x, &x).unwrap();
    report(
        "rmse_unit_truth",
        (a - 12.5f64.sqrt()).abs() <= 1e-12 && zero == 0.0,
        format!("rmse([1,2],[4,6]) = {a}, rmse(x,x) = {zero}"),
    );
}

/// Corpus, matrix, selection, trained stack and evaluation report, as bytes.
fn full_run(workers: usize, corpus: &Path) -> Vec<(String, Vec<u8>)> {
    valuekit::with_workers(workers, || {
        let mut config = synth::paper_shape_config();
        config.models.depthwise.n_rounds = 60;
        config.models.leafwise.n_rounds = 60;
        let matrix = pipeline::build_matrix(&config, corpus).unwrap();
        let labels = pipeline::read_labels(&corpus.join(synth::LABELS_FILE)).unwrap();
        let y = pipeline::align_labels(&matrix, &labels, config.labels.duplicates).unwrap();
        let out = tempfile::tempdir().unwrap();
        let matrix_path = out.path().join("matrix.csv");
        matrix.write_csv(&matrix_path).unwrap();
        let selection = pipeline::run_selection(&config, &matrix, &y).unwrap();
        let model = pipeline::train_model(&config, &matrix, &y).unwrap().model;
        let model_path = out.path().join("model.json");
        model.save(&model_path).unwrap();
        let report = pipeline::evaluate(&config, &matrix, &y).unwrap();
        vec![
            ("matrix".to_string(), std::fs::read(&matrix_path).unwrap()),
            (
                "selection".to_string(),
                valuekit::select::render_selection(&selection).into_bytes(),
            ),
            ("model".to_string(), std::fs::read(&model_path).unwrap()),
            ("report".to_string(), report.to_json().unwrap().into_bytes()),
        ]
    })
    .unwrap()
}

#[test]
fn end_to_end_determinism() {
    let corpus = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        companies: 500,
        seed: 77,
        ..SyntheticSpec::default()
    };
    synth::generate(&spec, corpus.path()).unwrap();
    let runs: Vec<_> = [1, 8, 1, 8]
        .iter()
        .map(|&w| full_run(w, corpus.path()))
        .collect();
    let mut differing = Vec::new();
    for (name, bytes) in &runs[0] {
        for run in &runs[1..] {
            let other = &run.iter().find(|(n, _)| n == name).unwrap().1;
            if other != bytes && !differing.contains(name) {
                differing.push(name.clone());
            }
        }
    }
    let mut details = Vec::new();
    let mut golden_ok = true;
    for (name, bytes) in &runs[0] {
        let (ok, detail) = golden(&format!("determinism_{name}"), &sha256(bytes));
        golden_ok &= ok;
        details.push(detail);
    }
    report(
        "end_to_end_determinism",
        differing.is_empty() && golden_ok,
        format!(
            "4 runs (workers 1, 8, 1, 8); differing artifacts {differing:?}; {}",
            details.join(", ")
        ),
    );
}

fn golden_extraction() -> Vec<(String, Option<f64>)> {
    let text = std::fs::read_to_string(data_dir().join("extract_number_golden.tsv")).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| {
            let (input, expected) = l.rsplit_once('\t').unwrap();
            let expected = (expected != "missing").then(|| expected.parse::<f64>().unwrap());
            (input.to_string(), expected)
        })
        .collect()
}

#[test]
fn preprocess_exactness() {
    let dollar = convert_currency(1.0, CurrencyUnit::Dollar);
    let rating = map_credit_rating("Advanced certification enterprise");
    let exception = sanitize_token(&Value::Text("--".into()));
    let table = golden_extraction();
    let mut wrong = Vec::new();
    for (input, expected) in &table {
        let got = extract_number(&Value::Text(input.clone()));
        let ok = match (expected, &got) {
            (Some(e), Value::Numeric(v)) => v == e,
            (None, Value::Missing) => true,
            _ => false,
        };
        if !ok {
            wrong.push(format!("{input:?} -> {got:?}"));
        }
    }
    let ok = dollar == 6.7
        && rating == 4.0
        && exception == Value::Numeric(-99.0)
        && wrong.is_empty()
        && table.len() >= 20;
    report(
        "preprocess_exactness",
        ok,
        format!(
            "1 dollar = {dollar} yuan; top rating = {rating}; \"--\" = {exception:?}; extraction {}/{} {wrong:?}",
            table.len() - wrong.len(),
            table.len()
        ),
    );
}
