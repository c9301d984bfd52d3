//! One test per acceptance criterion. Each prints a single
//! `criterion N: PASS|FAIL: ...` line on stderr (outside libtest capture)
//! and then asserts. Slow criteria are ignored by default; run them with
//! `cargo test --release -p metadyn --test acceptance -- --ignored`.
//!
//! Where a harness figure exists for a quantity, the test recomputes it from
//! the raw trace CSV and both routes must agree.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use metadyn::analysis::{probe_grid, snapshot_weights, steps_to_threshold, ProjectionKind, Threshold};
use metadyn::harness::*;
use metadyn::numerics::{dft_real, svd, Matrix, RngStream};
use metadyn::oracles::{bayes_bandit_posterior, bayes_linear_posterior, phase_bins, FourierOracle, PosteriorMean};
use metadyn::tasks::{eval_fourier, BanditStep, FourierTask};
use serde_json::{json, Value};

use common::{joint_enumeration, lstm_l2_case, lstm_reinforce_case, mlp_case, reinforce_case, ridge};

fn report(n: u32, pass: bool, detail: &str) {
    let line = format!("criterion {n}: {}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{}", line.trim_end());
}

// ---------------------------------------------------------------------------
// Running experiments

fn acceptance_root() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

/// Default config of `id` with `patch` merged into its settings.
fn config(id: &str, patch: Value) -> ExperimentConfig {
    let base = validate_config(&json!({ "experiment": id }).to_string()).unwrap();
    let mut v: Value = serde_json::from_str(&base.canonical_json()).unwrap();
    merge(&mut v, patch);
    validate_config(&v.to_string()).unwrap()
}

fn merge(dst: &mut Value, patch: Value) {
    match (dst, patch) {
        (Value::Object(d), Value::Object(p)) => {
            for (k, v) in p {
                merge(d.entry(k).or_insert(Value::Null), v);
            }
        }
        (d, p) => *d = p,
    }
}

fn execute(cfg: &ExperimentConfig, out: &Path, workers: usize) -> RunManifest {
    let m = run(cfg, &RunOptions { out: Some(out.to_path_buf()), workers, seed: None }).unwrap();
    assert_eq!(m.status, RunStatus::Completed, "{}", cfg.experiment);
    m
}

/// Fresh run into the acceptance directory.
fn fresh(name: &str, cfg: &ExperimentConfig) -> PathBuf {
    let out = acceptance_root().join(name);
    let _ = std::fs::remove_dir_all(&out);
    execute(cfg, &out, 1);
    out
}

/// Reuse a completed run of the same config hash, otherwise run it. Slow
/// criteria share meta-training this way.
fn cached(name: &str, cfg: &ExperimentConfig) -> PathBuf {
    let out = acceptance_root().join(name);
    if let Ok(raw) = std::fs::read_to_string(out.join("manifest.json")) {
        let m: RunManifest = serde_json::from_str(&raw).unwrap();
        if m.status == RunStatus::Completed && m.config_hash == config_hash(cfg) {
            return out;
        }
    }
    fresh(name, cfg)
}

// ---------------------------------------------------------------------------
// Reading raw traces and figure CSVs without the library's readers

struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    fn read(path: &Path) -> Csv {
        let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let mut lines = text.lines();
        let header = lines.next().unwrap().split(',').map(str::to_string).collect();
        let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        Csv { header, rows }
    }

    fn payload_start(&self, keys: usize) -> usize {
        assert!(self.header.len() > keys);
        keys
    }
}

fn num(s: &str) -> f64 {
    s.parse().unwrap_or_else(|_| panic!("not a number: {s:?}"))
}

/// Progress per payload row, computed from the payload's own target.
fn row_progress(header: &[String], payload: &[f64]) -> Vec<f64> {
    let first = header[0].as_str();
    if first.starts_with("shat_") {
        let k = payload.len() / 2;
        (0..k).map(|i| payload[i] / payload[k + i]).collect()
    } else if first.starts_with("q_c") {
        payload.to_vec()
    } else {
        let n = probe_grid().len();
        let k = (payload.len() - n) / 2;
        let task = FourierTask::new(payload[n..n + k].to_vec(), payload[n + k..].to_vec(), 0.0).unwrap();
        let target: Vec<f64> = probe_grid().iter().map(|&x| eval_fourier(&task, x)).collect();
        let (g_hat, g) = (naive_dft(&payload[..n]), naive_dft(&target));
        (1..=k)
            .map(|m| {
                let (a, b) = (g_hat[m], g[m]);
                (a.0 * b.0 + a.1 * b.1) / (b.0 * b.0 + b.1 * b.1)
            })
            .collect()
    }
}

fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            x.iter().enumerate().fold((0.0, 0.0), |(re, im), (j, v)| {
                let a = -2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
                (re + v * a.cos(), im + v * a.sin())
            })
        })
        .collect()
}

/// Learner trace: run id → (steps, q[t][k], targets).
struct LearnerRun {
    steps: Vec<usize>,
    q: Vec<Vec<f64>>,
}

fn learner_runs(path: &Path) -> BTreeMap<String, LearnerRun> {
    let csv = Csv::read(path);
    let p0 = csv.payload_start(3);
    let mut out: BTreeMap<String, LearnerRun> = BTreeMap::new();
    for r in &csv.rows {
        let payload: Vec<f64> = r[p0..].iter().map(|s| num(s)).collect();
        let e = out.entry(r[0].clone()).or_insert(LearnerRun { steps: Vec::new(), q: Vec::new() });
        e.steps.push(r[1].parse().unwrap());
        e.q.push(row_progress(&csv.header[p0..], &payload));
    }
    out
}

/// First payload row of each run: the targets (singular values) it carries.
fn learner_targets(path: &Path) -> BTreeMap<String, Vec<f64>> {
    let csv = Csv::read(path);
    let k = (csv.header.len() - 3) / 2;
    let mut out = BTreeMap::new();
    for r in &csv.rows {
        out.entry(r[0].clone()).or_insert_with(|| r[3 + k..].iter().map(|s| num(s)).collect());
    }
    out
}

/// Inner trace: meta run → checkpoint → episode → q[t][k], plus the shared t.
type Episodes = BTreeMap<usize, Vec<Vec<f64>>>;

struct InnerRun {
    ts: Vec<usize>,
    checkpoints: BTreeMap<usize, Episodes>,
    targets: Vec<f64>,
}

fn inner_runs(path: &Path) -> BTreeMap<String, InnerRun> {
    let csv = Csv::read(path);
    let p0 = csv.payload_start(4);
    let mut out: BTreeMap<String, InnerRun> = BTreeMap::new();
    for r in &csv.rows {
        let payload: Vec<f64> = r[p0..].iter().map(|s| num(s)).collect();
        let (ck, ep, t): (usize, usize, usize) = (r[1].parse().unwrap(), r[2].parse().unwrap(), r[3].parse().unwrap());
        let linear = csv.header[p0].starts_with("shat_");
        let e = out.entry(r[0].clone()).or_insert_with(|| InnerRun {
            ts: Vec::new(),
            checkpoints: BTreeMap::new(),
            targets: if linear { payload[payload.len() / 2..].to_vec() } else { Vec::new() },
        });
        if let Err(i) = e.ts.binary_search(&t) {
            e.ts.insert(i, t);
        }
        e.checkpoints.entry(ck).or_default().entry(ep).or_default().push(row_progress(&csv.header[p0..], &payload));
    }
    out
}

/// Mean over episodes of `q[t][k]`; bandit contexts are first rank-ordered
/// within each episode by their mean over t.
fn episode_mean(episodes: &Episodes, rank: bool) -> Vec<Vec<f64>> {
    let mut acc: Vec<Vec<f64>> = Vec::new();
    for q in episodes.values() {
        let q = if rank { rank_by_average(q, &vec![1.0; q.len()]) } else { q.clone() };
        if acc.is_empty() {
            acc = vec![vec![0.0; q[0].len()]; q.len()];
        }
        for (a, row) in acc.iter_mut().zip(&q) {
            for (x, v) in a.iter_mut().zip(row) {
                *x += v;
            }
        }
    }
    let n = episodes.len() as f64;
    acc.into_iter().map(|r| r.into_iter().map(|x| x / n).collect()).collect()
}

/// Reorder columns by decreasing weighted time-average.
fn rank_by_average(q: &[Vec<f64>], weights: &[f64]) -> Vec<Vec<f64>> {
    let k = q[0].len();
    let avg: Vec<f64> = (0..k).map(|c| q.iter().zip(weights).map(|(r, w)| r[c] * w).sum()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| avg[b].total_cmp(&avg[a]));
    q.iter().map(|r| order.iter().map(|&c| r[c]).collect()).collect()
}

/// First step with q strictly above the cutoff; `None` when never reached.
fn first_above(steps: &[usize], q: &[f64], cutoff: f64) -> Option<usize> {
    steps.iter().zip(q).find(|(_, v)| **v > cutoff).map(|(s, _)| *s)
}

fn column(q: &[Vec<f64>], k: usize) -> Vec<f64> {
    q.iter().map(|r| r[k]).collect()
}

/// Steps for censored comparison: unreached sorts after every budget.
fn censored(t: Option<usize>) -> f64 {
    t.map_or(f64::INFINITY, |s| s as f64)
}

/// `(x, series_id) → mean` of a figure CSV.
fn figure(path: &Path) -> BTreeMap<(String, String), f64> {
    let csv = Csv::read(path);
    assert_eq!(csv.header, ["x", "series_id", "mean", "stderr"]);
    csv.rows.iter().map(|r| ((r[0].clone(), r[1].clone()), num(&r[2]))).collect()
}

fn figure_mean(fig: &BTreeMap<(String, String), f64>, x: f64, series: &str) -> Option<f64> {
    fig.iter().find(|((fx, s), _)| s == series && (num(fx) - x).abs() <= 1e-12 * x.abs().max(1.0)).map(|(_, v)| *v)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

fn fmt_steps(t: f64) -> String {
    if t.is_finite() {
        format!("{t:.0}")
    } else {
        "unreached".into()
    }
}

/// Per-mode thresholds on an episode-mean inner curve, checked against the
/// harness threshold figure for `group`.
fn inner_thresholds(dir: &Path, trace: &str, fig: &str, group: &str, cutoff: f64, rank: bool) -> (Vec<Option<usize>>, Vec<f64>) {
    let runs = inner_runs(&dir.join("traces").join(trace));
    let members: Vec<&InnerRun> = runs.iter().filter(|(id, _)| group_of(id) == group).map(|(_, r)| r).collect();
    assert_eq!(members.len(), 1, "one meta run per group");
    let r = members[0];
    let curve = episode_mean(r.checkpoints.values().last().unwrap(), rank);
    let k = curve[0].len();
    let th: Vec<Option<usize>> = (0..k).map(|m| first_above(&r.ts, &column(&curve, m), cutoff)).collect();
    let f = figure(&dir.join("figures").join(fig));
    let series = format!("{group}/c={cutoff}");
    for (m, t) in th.iter().enumerate() {
        let x = if r.targets.is_empty() { (m + 1) as f64 } else { r.targets[m] };
        let fig_mean = figure_mean(&f, x, &series);
        match t {
            Some(s) => assert!(fig_mean.is_some_and(|v| close(v, *s as f64)), "{group} mode {m}: trace {s} vs figure {fig_mean:?}"),
            None => assert!(fig_mean.is_none(), "{group} mode {m}: figure reports a threshold the trace never reaches"),
        }
    }
    let finals = curve.last().unwrap().clone();
    (th, finals)
}

fn group_of(run_id: &str) -> &str {
    run_id.rsplit_once('/').map_or(run_id, |(g, _)| g)
}

// ---------------------------------------------------------------------------
// Criteria

#[test]
fn criterion_01_numerics() {
    let start = Instant::now();
    let mut rng = RngStream::new(1001, 0);
    let mut svd_err = 0.0f64;
    for _ in 0..1000 {
        let (r, c) = (1 + rng.below(5), 1 + rng.below(5));
        let m = Matrix::from_fn(r, c, |_, _| rng.uniform_range(-10.0, 10.0));
        let f = svd(&m).unwrap();
        let ortho = |q: &Matrix| q.t_matmul(q).unwrap().max_abs_diff(&Matrix::identity(q.cols()));
        svd_err = svd_err
            .max(f.reconstruct().max_abs_diff(&m) / m.max_abs().max(1.0))
            .max(ortho(&f.u))
            .max(ortho(&f.v));
    }
    let mut dft_err = 0.0f64;
    for _ in 0..1000 {
        let n = 2 * (1 + rng.below(32));
        let x: Vec<f64> = (0..n).map(|_| rng.uniform_range(-5.0, 5.0)).collect();
        let g = dft_real(&x).unwrap();
        for (c, (re, im)) in g.coefficients.iter().zip(naive_dft(&x)) {
            dft_err = dft_err.max((c.re - re / n as f64).abs()).max((c.im - im / n as f64).abs());
        }
    }
    let grads: Vec<(&str, fn(&mut RngStream) -> f64)> = vec![
        ("mlp", mlp_case),
        ("lstm-bptt", lstm_l2_case),
        ("lstm-reinforce", lstm_reinforce_case),
        ("reinforce", reinforce_case),
    ];
    let mut grad_err = Vec::new();
    let mut grad_ok = true;
    for (name, case) in grads {
        let worst = (0..100).map(|_| case(&mut rng)).fold(0.0, f64::max);
        grad_ok &= worst < 1e-4;
        grad_err.push(format!("{name} {worst:.1e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        svd_err < 1e-10 && dft_err < 1e-12 && grad_ok && secs < 60.0,
        &format!("svd {svd_err:.1e}, dft {dft_err:.1e}, gradients [{}], {secs:.1}s", grad_err.join(", ")),
    );
}

#[test]
fn criterion_02_linear_learner_ordering() {
    let start = Instant::now();
    let dir = fresh("exp1-learner-2d", &config("exp1-learner", json!({ "settings": { "replicas_5d": 0 } })));
    let trace = dir.join("traces/learner_2d.csv");
    let runs = learner_runs(&trace);
    let targets = learner_targets(&trace);
    let cutoff = 0.8;
    let mut ordered = 0;
    let mut extreme: Vec<(f64, f64)> = Vec::new();
    let mut by_group: BTreeMap<String, Vec<Vec<Option<usize>>>> = BTreeMap::new();
    for (id, r) in &runs {
        let s = &targets[id];
        let th: Vec<Option<usize>> = (0..s.len()).map(|k| first_above(&r.steps, &column(&r.q, k), cutoff)).collect();
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        if order.windows(2).all(|w| censored(th[w[0]]) < censored(th[w[1]])) {
            ordered += 1;
        }
        let (hi, lo) = (order[0], order[s.len() - 1]);
        if (s[hi] / s[lo] - 50.0).abs() < 1e-6 {
            extreme.push((censored(th[hi]), censored(th[lo])));
        }
        by_group.entry(group_of(id).to_string()).or_default().push(th);
    }
    // Both routes agree on the reached means.
    let fig = figure(&dir.join("figures/fig1_c_thresholds.csv"));
    for (group, ths) in &by_group {
        let id = runs.keys().find(|id| group_of(id) == group).unwrap();
        for (k, s) in targets[id].iter().enumerate() {
            let reached: Vec<f64> = ths.iter().filter_map(|t| t[k]).map(|s| s as f64).collect();
            let f = figure_mean(&fig, *s, &format!("{group}/c={cutoff}"));
            if reached.is_empty() {
                assert!(f.is_none());
            } else {
                assert!(close(f.unwrap(), mean(&reached)), "{group} s={s}");
            }
        }
    }
    let budget = config("exp1-learner", json!({})).canonical_json();
    let budget: Value = serde_json::from_str(&budget).unwrap();
    let budget = budget["settings"]["learner"]["steps"].as_f64().unwrap();
    // Unreached runs are censored at the budget, so the ratio is a lower bound.
    let hi = median(&extreme.iter().map(|e| e.0).collect::<Vec<_>>());
    let lo = median(&extreme.iter().map(|e| e.1.min(budget)).collect::<Vec<_>>());
    let unreached = extreme.iter().filter(|e| e.1.is_infinite()).count();
    let ratio = lo / hi;
    let frac = ordered as f64 / runs.len() as f64;
    let secs = start.elapsed().as_secs_f64();
    report(
        2,
        frac >= 0.9 && ratio >= 5.0 && secs < 600.0,
        &format!(
            "strictly ordered in {ordered}/{} runs ({:.0}%); median steps s=3 {hi:.0}, s=0.06 ≥ {lo:.0} ({unreached}/{} censored at {budget:.0}), ratio ≥ {ratio:.2}; {secs:.0}s",
            runs.len(),
            100.0 * frac,
            extreme.len()
        ),
    );
}

#[test]
fn criterion_03_linear_learner_staggering() {
    let dir = fresh("exp1-learner-5d", &config("exp1-learner", json!({ "settings": { "replicas": 1 } })));
    let trace = dir.join("traces/learner_5d.csv");
    let runs = learner_runs(&trace);
    let targets = learner_targets(&trace);
    let mut gaps = Vec::new();
    for (id, r) in &runs {
        let s = &targets[id];
        let (big, small) = (0, s.len() - 1);
        assert!(s[big] > s[small]);
        let Some(i) = r.q.iter().position(|q| q[big] > 0.8) else {
            return report(3, false, &format!("{id}: q_1 never exceeds 0.8"));
        };
        gaps.push(r.q[i][big] - r.q[i][small]);
    }
    // Cross-check the progress route against the figure's replica mean.
    let fig = figure(&dir.join("figures/fig4_b_proportions.csv"));
    let r0: Vec<&LearnerRun> = runs.values().collect();
    if r0.iter().all(|r| r.steps == r0[0].steps) {
        let t = r0[0].steps.len() / 2;
        let m = mean(&r0.iter().map(|r| r.q[t][0]).collect::<Vec<_>>());
        assert!(close(figure_mean(&fig, r0[0].steps[t] as f64, "5d/k1").unwrap(), m));
    }
    let g = mean(&gaps);
    report(3, g >= 0.3, &format!("mean q_1 − q_5 at the first q_1 > 0.8 snapshot = {g:.3} over {} runs", gaps.len()));
}

#[test]
fn criterion_04_linear_bayes_oracle() {
    let start = Instant::now();
    let mut rng = RngStream::new(1004, 0);
    let mut ridge_err = 0.0f64;
    for _ in 0..1000 {
        let (t, nx, ny) = (1 + rng.below(16), 1 + rng.below(5), 1 + rng.below(5));
        let var = 10f64.powf(rng.uniform_range(-3.0, 1.0));
        let x = Matrix::from_fn(t, nx, |_, _| rng.normal());
        let y = Matrix::from_fn(t, ny, |_, _| rng.normal());
        let PosteriorMean::Linear(w) = bayes_linear_posterior(&x, &y, var).unwrap().mean else { panic!() };
        let oracle = ridge(&x, &y, var);
        ridge_err = ridge_err.max(w.max_abs_diff(&oracle) / oracle.max_abs().max(1.0));
    }
    let dir = fresh("exp1-bayes", &config("exp1-bayes", json!({})));
    let runs = inner_runs(&dir.join("traces/bayes.csv"));
    let fig = figure(&dir.join("figures/fig6_a_proportions.csv"));
    let mut spread = 0.0f64;
    let mut episodes = 0;
    for (id, r) in &runs {
        let (_, eps) = r.checkpoints.iter().next().unwrap();
        episodes += eps.len();
        let curve = episode_mean(eps, false);
        for (t, row) in r.ts.iter().zip(&curve) {
            let hi = row.iter().copied().fold(f64::MIN, f64::max);
            let lo = row.iter().copied().fold(f64::MAX, f64::min);
            spread = spread.max(hi - lo);
            for (k, v) in row.iter().enumerate() {
                let f = figure_mean(&fig, *t as f64, &format!("{}/k{}", group_of(id), k + 1)).unwrap();
                assert!(close(f, *v), "t={t} k={k}: figure {f} vs trace {v}");
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        4,
        ridge_err < 1e-10 && spread <= 0.05 && secs < 120.0,
        &format!("ridge {ridge_err:.1e}; max spread of mean q_k(t) across modes {spread:.4} over {episodes} episodes; {secs:.0}s"),
    );
}

/// Learner median-threshold ratio between the modes of one spectrum.
fn learner_ratio(dir: &Path, trace: &str, cutoff: f64) -> (f64, f64) {
    let trace = dir.join("traces").join(trace);
    let runs = learner_runs(&trace);
    let targets = learner_targets(&trace);
    let (mut hi, mut lo) = (Vec::new(), Vec::new());
    for (id, r) in &runs {
        let s = &targets[id];
        let (b, m) = if s[0] >= s[1] { (0, 1) } else { (1, 0) };
        hi.push(censored(first_above(&r.steps, &column(&r.q, b), cutoff)));
        lo.push(censored(first_above(&r.steps, &column(&r.q, m), cutoff)));
    }
    (median(&hi), median(&lo))
}

fn meta_2d() -> ExperimentConfig {
    config("exp1-meta", json!({}))
}

#[test]
#[ignore = "SKIPPED: slow suite, run with --ignored"]
fn criterion_05_linear_meta_learner() {
    let (p20, p95) = percentiles_2d();
    let cutoff = 0.8;
    let dir = cached("exp1-meta", &meta_2d());
    let (th, _) = inner_thresholds(&dir, "meta.csv", "fig3_b_thresholds.csv", "spectrum0", cutoff, false);
    let runs = inner_runs(&dir.join("traces/meta.csv"));
    let targets = &runs.values().next().unwrap().targets;
    assert!((targets[0] - p95).abs() < 1e-9 && (targets[1] - p20).abs() < 1e-9);
    let meta_ratio = censored(th[1]) / censored(th[0]);
    let learner = cached(
        "exp1-learner-percentiles",
        &config("exp1-learner", json!({ "settings": { "spectra": [[p95, p20]], "replicas_5d": 0 } })),
    );
    let (hi, lo) = learner_ratio(&learner, "learner_2d.csv", cutoff);
    let learner_ratio = lo / hi;
    report(
        5,
        meta_ratio <= 2.0 && meta_ratio < learner_ratio,
        &format!(
            "Meta-Learner steps s={p95:.3} {}, s={p20:.3} {}, ratio {meta_ratio:.2}; Learner median ratio {learner_ratio:.2}",
            fmt_steps(censored(th[0])),
            fmt_steps(censored(th[1]))
        ),
    );
}

#[test]
#[ignore = "SKIPPED: slow suite, run with --ignored"]
fn criterion_06_linear_meta_learner_ood() {
    let (_, p95) = percentiles_2d();
    let meta = cached("exp1-meta", &meta_2d());
    let updates = serde_json::from_str::<Value>(&meta_2d().canonical_json()).unwrap()["settings"]["meta"]["updates"]
        .as_u64()
        .unwrap();
    let ck = meta.join(format!("checkpoints/meta/0/ck_{updates:09}"));
    let ood = config("exp1-ood", json!({}));
    let out = acceptance_root().join("exp1-ood-probe");
    let _ = std::fs::remove_dir_all(&out);
    let m = probe(&ck, &ood, &RunOptions { out: Some(out.clone()), workers: 1, seed: None }).unwrap();
    assert_eq!(m.status, RunStatus::Completed);
    let runs = inner_runs(&out.join("traces/meta.csv"));
    let mut in_dist = None;
    let mut far = None;
    for r in runs.values() {
        let q = episode_mean(r.checkpoints.values().last().unwrap(), false);
        let last = q.last().unwrap();
        for (k, s) in r.targets.iter().enumerate() {
            if (s - p95).abs() < 1e-9 {
                in_dist = Some(last[k]);
            }
            if (s - 3.0 * p95).abs() < 1e-6 {
                far = Some(last[k]);
            }
        }
    }
    let (in_dist, far) = (in_dist.expect("in-distribution mode probed"), far.expect("OOD mode probed"));
    report(
        6,
        far < 0.9 && in_dist > 0.9,
        &format!("asymptotic q at s={p95:.3}: {in_dist:.3}; at s={:.3}: {far:.3}", 3.0 * p95),
    );
}

/// Per-run Fourier thresholds from the raw trace.
fn fourier_learner(dir: &Path, cutoff: f64) -> (usize, usize, f64, f64) {
    let runs = learner_runs(&dir.join("traces/learner.csv"));
    let fig = figure(&dir.join("figures/fig8_c_thresholds.csv"));
    let k = runs.values().next().unwrap().q[0].len();
    let th: Vec<Vec<f64>> = runs
        .values()
        .map(|r| (0..k).map(|m| censored(first_above(&r.steps, &column(&r.q, m), cutoff))).collect())
        .collect();
    for m in 0..k {
        let reached: Vec<f64> = th.iter().map(|t| t[m]).filter(|v| v.is_finite()).collect();
        let group = group_of(runs.keys().next().unwrap());
        let f = figure_mean(&fig, (m + 1) as f64, &format!("{group}/c={cutoff}"));
        if reached.is_empty() {
            assert!(f.is_none());
        } else {
            assert!(close(f.unwrap(), mean(&reached)), "k={}", m + 1);
        }
    }
    let ordered = th.iter().filter(|t| t.windows(2).all(|w| w[0] <= w[1])).count();
    let first = median(&th.iter().map(|t| t[0]).collect::<Vec<_>>());
    let last = median(&th.iter().map(|t| t[k - 1]).collect::<Vec<_>>());
    (ordered, th.len(), first, last)
}

fn fourier_learner_config() -> ExperimentConfig {
    config("exp2-learner", json!({}))
}

#[test]
fn criterion_07_fourier_learner_ordering() {
    let start = Instant::now();
    let dir = fresh("exp2-learner", &fourier_learner_config());
    let (ordered, n, first, last) = fourier_learner(&dir, 0.5);
    let ratio = last / first;
    let frac = ordered as f64 / n as f64;
    let secs = start.elapsed().as_secs_f64();
    report(
        7,
        frac >= 0.9 && ratio >= 3.0 && secs < 1200.0,
        &format!(
            "non-decreasing in {ordered}/{n} runs; median steps k=1 {}, k=5 {}, ratio {ratio:.2}; {secs:.0}s",
            fmt_steps(first),
            fmt_steps(last)
        ),
    );
}

#[test]
fn criterion_08_fourier_bayes_oracle() {
    let mut rng = RngStream::new(1008, 0);
    let mut norm_err = 0.0f64;
    for _ in 0..50 {
        let k = 1 + rng.below(3);
        let amps: Vec<f64> = (0..k).map(|_| rng.uniform_range(0.2, 1.5)).collect();
        let phases: Vec<f64> = (0..k).map(|_| rng.uniform_range(0.0, std::f64::consts::TAU)).collect();
        let task = FourierTask::new(amps.clone(), phases, 0.1).unwrap();
        let mut oracle = FourierOracle::new(&amps, 8, 0.01).unwrap();
        for _ in 0..10 {
            let x = rng.uniform_range(-0.5, 0.5);
            oracle.observe(x, eval_fourier(&task, x) + 0.1 * rng.normal()).unwrap();
            norm_err = norm_err.max((oracle.weights().iter().sum::<f64>() - 1.0).abs());
        }
    }
    let bins = 16;
    let task = FourierTask::new(vec![1.0], vec![phase_bins(bins)[5]], 0.0).unwrap();
    let mut oracle = FourierOracle::new(&[1.0], bins, 1e-4).unwrap();
    for _ in 0..3 {
        let x = rng.uniform_range(-0.5, 0.5);
        oracle.observe(x, eval_fourier(&task, x)).unwrap();
    }
    let recovered = oracle.weights()[5];

    let dir = cached("exp2-bayes", &config("exp2-bayes", json!({})));
    let runs = inner_runs(&dir.join("traces/bayes.csv"));
    let fig = figure(&dir.join("figures/fig8-bayes_a_projections.csv"));
    let mut spread = 0.0f64;
    let mut episodes = 0;
    for (id, r) in &runs {
        let (_, eps) = r.checkpoints.iter().next().unwrap();
        episodes += eps.len();
        let curve = episode_mean(eps, false);
        for (t, row) in r.ts.iter().zip(&curve) {
            let hi = row.iter().copied().fold(f64::MIN, f64::max);
            let lo = row.iter().copied().fold(f64::MAX, f64::min);
            spread = spread.max(hi - lo);
            for (k, v) in row.iter().enumerate() {
                let f = figure_mean(&fig, *t as f64, &format!("{}/k{}", group_of(id), k + 1)).unwrap();
                assert!((f - v).abs() < 1e-9, "t={t} k={k}: figure {f} vs trace {v}");
            }
        }
    }
    report(
        8,
        norm_err < 1e-12 && recovered > 0.99 && spread < 0.1,
        &format!("weight normalisation {norm_err:.1e}; K=1 bin weight {recovered:.4}; max spread of mean q_k(t) {spread:.4} over {episodes} episodes"),
    );
}

#[test]
#[ignore = "SKIPPED: slow suite, run with --ignored"]
fn criterion_09_fourier_meta_learner() {
    let cutoff = 0.5;
    let learner = cached("exp2-learner", &fourier_learner_config());
    let (_, _, first, last) = fourier_learner(&learner, cutoff);
    let learner_ratio = last / first;
    let meta = cached("exp2-meta", &config("exp2-meta", json!({})));
    let group = group_of(inner_runs(&meta.join("traces/meta.csv")).keys().next().unwrap()).to_string();
    let (th, _) = inner_thresholds(&meta, "meta.csv", "figA5_b_thresholds.csv", &group, cutoff, false);
    let meta_ratio = censored(th[th.len() - 1]) / censored(th[0]);
    let bandpass = cached("exp2-bandpass", &config("exp2-bandpass", json!({})));
    let runs = inner_runs(&bandpass.join("traces/meta.csv"));
    let r = runs.values().next().unwrap();
    let finals = episode_mean(r.checkpoints.values().last().unwrap(), false);
    let last = finals.last().unwrap();
    let stop_band = [last[0].abs(), last[1].abs()];
    let worst = stop_band.iter().copied().fold(0.0, f64::max);
    report(
        9,
        meta_ratio <= 0.5 * learner_ratio && worst < 0.2,
        &format!(
            "Meta-Learner k=5/k=1 ratio {meta_ratio:.2} vs Learner {learner_ratio:.2}; bandpass stop-band asymptotic |q| k=1 {:.3}, k=2 {:.3}",
            stop_band[0], stop_band[1]
        ),
    );
}

#[test]
fn criterion_10_bandit_interference() {
    let start = Instant::now();
    let cfg = config("exp3-learner", json!({}));
    let dir = fresh("exp3-learner", &cfg);
    let cutoff = 0.9;
    // Route one: the library's progress and threshold functions.
    let raw = std::fs::read_to_string(dir.join("traces/learner.csv")).unwrap();
    let table = metadyn::analysis::csvio::read_learner(raw.as_bytes()).unwrap();
    let progress = learner_progress(TraceFamily::Bandit, &table, ProjectionKind::Phase).unwrap();
    let mut lib: BTreeMap<String, f64> = BTreeMap::new();
    for r in &progress {
        let k = r.q[0].len();
        let th = |m: usize| {
            let col: Vec<f64> = r.q.iter().map(|row| row[m]).collect();
            match steps_to_threshold(&r.steps, &col, cutoff).unwrap() {
                Threshold::Reached(s) => s as f64,
                Threshold::Unreached => f64::INFINITY,
            }
        };
        lib.insert(r.run_id.clone(), th(k - 1) / th(0).max(1.0));
    }
    // Route two: rank and threshold the raw trace independently.
    let mut own: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (id, r) in learner_runs(&dir.join("traces/learner.csv")) {
        let q = rank_by_average(&r.q, &snapshot_weights(&r.steps));
        let k = q[0].len();
        let th = |m: usize| censored(first_above(&r.steps, &column(&q, m), cutoff));
        let ratio = th(k - 1) / th(0).max(1.0);
        let other = lib.remove(&id).unwrap_or_else(|| panic!("{id} missing from the library route"));
        assert!(ratio == other || close(ratio, other), "{id}: routes disagree, {ratio} vs {other}");
        own.entry(group_of(&id).into()).or_default().push(ratio);
    }
    assert!(lib.is_empty());
    let coupled = median(&own["coupled"]);
    let decoupled = median(&own["decoupled"]);
    let secs = start.elapsed().as_secs_f64();
    report(
        10,
        coupled >= 10.0 * decoupled && secs < 1800.0,
        &format!(
            "median 5th/1st steps ratio coupled {coupled:.2}, decoupled {decoupled:.2} ({:.2}× vs ≥ 10× required) over {} runs each; {secs:.0}s",
            coupled / decoupled,
            own["coupled"].len()
        ),
    );
}

#[test]
#[ignore = "SKIPPED: slow suite, run with --ignored"]
fn criterion_11_bandit_meta_learner() {
    let cutoff = 0.9;
    let dir = cached("exp3-meta", &config("exp3-meta", json!({})));
    let ratio = |group: &str| {
        let (th, _) = inner_thresholds(&dir, "meta.csv", "fig9-meta_b_thresholds.csv", group, cutoff, true);
        censored(th[th.len() - 1]) / censored(th[0])
    };
    let (coupled, decoupled) = (ratio("coupled"), ratio("decoupled"));
    let quotient = coupled / decoupled;

    let mut rng = RngStream::new(1011, 0);
    let mut fact_err = 0.0f64;
    for _ in 0..200 {
        let (kc, ka) = (1 + rng.below(3), 1 + rng.below(3));
        let history: Vec<BanditStep> = (0..rng.below(30))
            .map(|_| BanditStep { context: rng.below(kc), action: rng.below(ka), reward: if rng.bernoulli(0.5) { 1.0 } else { 0.0 } })
            .collect();
        let PosteriorMean::Arms(p) = bayes_bandit_posterior(&history, kc, ka, 0.8, 0.2).unwrap().mean else { panic!() };
        fact_err = fact_err.max(p.max_abs_diff(&joint_enumeration(&history, kc, ka, 0.8, 0.2)));
    }
    report(
        11,
        quotient.is_finite() && quotient <= 2.0 && fact_err < 1e-12,
        &format!("5th/1st ratio coupled {coupled:.2}, decoupled {decoupled:.2}, quotient {quotient:.2}; factorisation error {fact_err:.1e}"),
    );
}

/// First checkpoint at which each mode's episode-mean inner curve crosses
/// the cutoff.
fn outer_thresholds(dir: &Path) -> (Vec<f64>, Vec<Option<usize>>) {
    let runs = inner_runs(&dir.join("traces/sweep.csv"));
    let (id, r) = runs.iter().next().unwrap();
    let cutoff: f64 = serde_json::from_str::<Value>(&std::fs::read_to_string(dir.join("traces/index.json")).unwrap()).unwrap()
        ["traces"]
        .as_array()
        .unwrap()
        .iter()
        .find_map(|t| t["sweep_cutoff"].as_f64())
        .unwrap();
    let k = r.checkpoints.values().next().unwrap().values().next().unwrap()[0].len();
    let mut first = vec![None; k];
    for (step, eps) in &r.checkpoints {
        let curve = episode_mean(eps, false);
        for (m, f) in first.iter_mut().enumerate() {
            if f.is_none() && first_above(&r.ts, &column(&curve, m), cutoff).is_some() {
                *f = Some(*step);
            }
        }
    }
    let fig = figure(&dir.join(format!("figures/fig{}_b_outer_steps.csv", if r.targets.is_empty() { 11 } else { 10 })));
    for (m, f) in first.iter().enumerate() {
        let x = if r.targets.is_empty() { (m + 1) as f64 } else { r.targets[m] };
        let v = figure_mean(&fig, x, &format!("{}/c={cutoff}", group_of(id)));
        assert_eq!(v.map(|v| v as usize), *f, "mode {m}");
    }
    (r.targets.clone(), first)
}

#[test]
#[ignore = "SKIPPED: slow suite, run with --ignored"]
fn criterion_12_outer_dynamics() {
    let linear = cached("outer-dynamics-1", &config("outer-dynamics-1", json!({})));
    let (s, first) = outer_thresholds(&linear);
    let (big, small) = (0, s.len() - 1);
    assert!(s[big] > s[small]);
    let lin_ok = first.iter().any(Option::is_some) && censored(first[small]) <= censored(first[big]);
    let fourier = cached("outer-dynamics-2", &config("outer-dynamics-2", json!({})));
    let (_, ff) = outer_thresholds(&fourier);
    let four_ok = ff.iter().any(Option::is_some) && censored(ff[0]) <= censored(ff[ff.len() - 1]);
    let show = |v: &[Option<usize>]| v.iter().map(|t| fmt_steps(censored(*t))).collect::<Vec<_>>().join("/");
    report(
        12,
        lin_ok && four_ok,
        &format!("linear outer steps by mode (largest s first) {}; fourier by k {}", show(&first), show(&ff)),
    );
}

/// Every experiment at a small size.
fn tiny(id: ExperimentId) -> ExperimentConfig {
    let small = json!({
        "updates": 12, "hidden": 6, "batch_size": 4, "episodes": 2, "replicas": 2, "steps": 150,
        "sweep_episodes": 2, "replicas_5d": 1, "save_every": 5, "count": 3, "episode_len": 10
    });
    fn shrink(v: &mut Value, small: &Value) {
        match v {
            Value::Object(m) => {
                for (k, x) in m.iter_mut() {
                    match (small.get(k), x.as_u64()) {
                        (Some(s), Some(n)) if n > 0 => *x = s.clone(),
                        _ => shrink(x, small),
                    }
                }
            }
            Value::Array(a) => a.iter_mut().for_each(|x| shrink(x, small)),
            _ => {}
        }
    }
    let base = validate_config(&json!({ "experiment": id.as_str() }).to_string()).unwrap();
    let mut v: Value = serde_json::from_str(&base.canonical_json()).unwrap();
    shrink(&mut v, &small);
    for (k, x) in v["settings"].as_object_mut().unwrap() {
        if k.ends_with("checkpoints") && x.is_array() {
            *x = json!([]);
        }
    }
    validate_config(&v.to_string()).unwrap()
}

fn csv_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in ["traces", "figures"] {
        for e in std::fs::read_dir(dir.join(sub)).unwrap() {
            let p = e.unwrap().path();
            if p.extension().is_some_and(|x| x == "csv") {
                out.insert(format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_13_reproducibility() {
    let root = tempfile::tempdir().unwrap();
    let mut mismatches = Vec::new();
    let mut files = 0;
    for id in ExperimentId::ALL {
        let cfg = tiny(id);
        let runs: Vec<BTreeMap<String, Vec<u8>>> = [(0, 1), (1, 1), (2, 4)]
            .iter()
            .map(|(i, workers)| {
                let out = root.path().join(format!("{id}-{i}"));
                execute(&cfg, &out, *workers);
                csv_bytes(&out)
            })
            .collect();
        assert!(!runs[0].is_empty(), "{id} wrote no CSVs");
        files += runs[0].len();
        if runs[0] != runs[1] {
            mismatches.push(format!("{id} rerun"));
        }
        if runs[0] != runs[2] {
            mismatches.push(format!("{id} workers=4"));
        }
    }
    report(
        13,
        mismatches.is_empty(),
        &format!(
            "{} experiments, {files} CSVs compared across rerun and workers=4; mismatches: {}",
            ExperimentId::ALL.len(),
            if mismatches.is_empty() { "none".into() } else { mismatches.join(", ") }
        ),
    );
}
