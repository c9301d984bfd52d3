//! Trace files in, figure-data CSVs out. Oracle and Meta-Learner traces go
//! through the same functions.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::traces::{progress, TraceEntry, TraceFamily, TraceIndex, TraceKind, INDEX_FILE};
use crate::analysis::csvio::{figure_to_file, fmt_f64, read_inner, read_learner, FigureRow, InnerRow, LearnerRow, Table};
use crate::analysis::{aggregate, rank_order_contexts, snapshot_weights, steps_to_threshold, ProjectionKind, Threshold};
use crate::error::{Error, Result};

/// Progress of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunProgress {
    pub run_id: String,
    pub steps: Vec<usize>,
    pub values: Vec<f64>,
    /// `q[t][k]`, NaN where undefined; bandit contexts in rank order.
    pub q: Vec<Vec<f64>>,
    /// Per mode: singular value (linear) or 1-based mode/rank index.
    pub targets: Vec<f64>,
}

/// Inner-loop progress of one Meta-Learner (or oracle) run.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerProgress {
    pub run_id: String,
    /// Inner steps, shared by every episode.
    pub ts: Vec<usize>,
    /// `(checkpoint_step, q[e][t][k])` in increasing checkpoint order.
    pub checkpoints: Vec<(usize, Vec<Vec<Vec<f64>>>)>,
    pub targets: Vec<f64>,
}

fn group_of(run_id: &str) -> &str {
    run_id.rsplit_once('/').map_or(run_id, |(g, _)| g)
}

fn nominal(family: TraceFamily, columns: &[String], payload: &[f64], projection: ProjectionKind) -> Result<Vec<f64>> {
    Ok(progress(family, columns, payload, projection)?
        .into_iter()
        .map(|q| q.unwrap_or(f64::NAN))
        .collect())
}

fn targets(family: TraceFamily, payload: &[f64], k: usize) -> Vec<f64> {
    match family {
        TraceFamily::Linear => payload[k..2 * k].to_vec(),
        _ => (1..=k).map(|i| i as f64).collect(),
    }
}

/// Group rows by key in order of first appearance.
fn grouped<R>(rows: &[R], key: impl Fn(&R) -> &str) -> Vec<(String, Vec<&R>)> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut out: Vec<(String, Vec<&R>)> = Vec::new();
    for r in rows {
        let k = key(r);
        let i = *index.entry(k).or_insert_with(|| {
            out.push((k.to_string(), Vec::new()));
            out.len() - 1
        });
        out[i].1.push(r);
    }
    out
}

pub fn learner_progress(
    family: TraceFamily,
    table: &Table<LearnerRow>,
    projection: ProjectionKind,
) -> Result<Vec<RunProgress>> {
    grouped(&table.rows, |r| r.run_id.as_str())
        .into_iter()
        .map(|(run_id, rows)| {
            if rows.windows(2).any(|w| w[0].step >= w[1].step) {
                return Err(Error::Trace(format!("run `{run_id}` has non-increasing steps")));
            }
            let steps: Vec<usize> = rows.iter().map(|r| r.step).collect();
            let mut q = rows
                .iter()
                .map(|r| nominal(family, &table.payload_columns, &r.payload, projection))
                .collect::<Result<Vec<_>>>()?;
            let k = q[0].len();
            if family == TraceFamily::Bandit {
                q = rank_order_contexts(&q, Some(&snapshot_weights(&steps)))?.q;
            }
            Ok(RunProgress {
                targets: targets(family, &rows[0].payload, k),
                values: rows.iter().map(|r| r.value).collect(),
                run_id,
                steps,
                q,
            })
        })
        .collect()
}

pub fn inner_progress(
    family: TraceFamily,
    table: &Table<InnerRow>,
    projection: ProjectionKind,
) -> Result<Vec<InnerProgress>> {
    grouped(&table.rows, |r| r.meta_run_id.as_str())
        .into_iter()
        .map(|(run_id, rows)| {
            let mut by_ck: BTreeMap<usize, BTreeMap<usize, Vec<&InnerRow>>> = BTreeMap::new();
            for r in &rows {
                by_ck.entry(r.checkpoint_step).or_default().entry(r.episode_id).or_default().push(r);
            }
            let mut ts: Option<Vec<usize>> = None;
            let mut checkpoints = Vec::with_capacity(by_ck.len());
            for (step, episodes) in by_ck {
                let mut curves = Vec::with_capacity(episodes.len());
                for (_, mut ep) in episodes {
                    ep.sort_by_key(|r| r.t);
                    let these: Vec<usize> = ep.iter().map(|r| r.t).collect();
                    match &ts {
                        None => ts = Some(these),
                        Some(prev) if *prev != these => {
                            return Err(Error::Trace(format!("run `{run_id}` has episodes with differing steps")))
                        }
                        _ => {}
                    }
                    let mut q = ep
                        .iter()
                        .map(|r| nominal(family, &table.payload_columns, &r.payload, projection))
                        .collect::<Result<Vec<_>>>()?;
                    if family == TraceFamily::Bandit {
                        q = rank_order_contexts(&q, None)?.q;
                    }
                    curves.push(q);
                }
                checkpoints.push((step, curves));
            }
            let k = checkpoints[0].1[0][0].len();
            Ok(InnerProgress {
                targets: targets(family, &rows[0].payload, k),
                ts: ts.unwrap_or_default(),
                run_id,
                checkpoints,
            })
        })
        .collect()
}

fn mean_se(v: &[f64]) -> (f64, Option<f64>) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let se = (v.len() >= 2).then(|| {
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        var.sqrt() / n.sqrt()
    });
    (mean, se)
}

fn curve_rows(out: &mut Vec<FigureRow>, xs: &[usize], series: &str, curves: &[Vec<Vec<f64>>], modes: &[usize]) -> Result<()> {
    let cols: Vec<Vec<Vec<f64>>> = curves
        .iter()
        .map(|c| c.iter().map(|row| modes.iter().map(|&k| row[k]).collect()).collect())
        .collect();
    let agg = aggregate(&cols)?;
    for (j, &k) in modes.iter().enumerate() {
        for (t, &x) in xs.iter().enumerate() {
            out.push(FigureRow {
                x: x as f64,
                series_id: format!("{series}/k{}", k + 1),
                mean: agg.mean[t][j],
                stderr: agg.stderr.as_ref().map(|s| s[t][j]),
            });
        }
    }
    Ok(())
}

/// Modes with a defined proportion everywhere.
fn active_modes<'a>(k: usize, curves: impl IntoIterator<Item = &'a Vec<Vec<f64>>> + Clone) -> Vec<usize> {
    (0..k)
        .filter(|&m| curves.clone().into_iter().all(|c| c.iter().all(|row| row[m].is_finite())))
        .collect()
}

fn threshold_rows(
    out: &mut Vec<FigureRow>,
    group: &str,
    cutoffs: &[f64],
    modes: &[usize],
    target: impl Fn(usize) -> f64,
    reached: impl Fn(usize, f64) -> Result<Vec<Threshold>>,
) -> Result<()> {
    for &c in cutoffs {
        for &k in modes {
            let th = reached(k, c)?;
            let steps: Vec<f64> = th.iter().filter_map(|t| t.step()).map(|s| s as f64).collect();
            let x = target(k);
            let series = format!("{group}/c={}", fmt_f64(c));
            if !steps.is_empty() {
                let (mean, stderr) = mean_se(&steps);
                out.push(FigureRow {
                    x,
                    series_id: series.clone(),
                    mean,
                    stderr,
                });
            }
            out.push(FigureRow {
                x,
                series_id: format!("{series}/reached"),
                mean: steps.len() as f64 / th.len() as f64,
                stderr: None,
            });
        }
    }
    Ok(())
}

fn mean_targets(runs: &[&[f64]], k: usize) -> f64 {
    runs.iter().map(|t| t[k]).sum::<f64>() / runs.len() as f64
}

/// Hold each run's last recorded value over the union of snapshot steps.
fn resample(run: &RunProgress, grid: &[usize]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut i = 0;
    let mut values = Vec::with_capacity(grid.len());
    let mut q = Vec::with_capacity(grid.len());
    for &s in grid {
        while i + 1 < run.steps.len() && run.steps[i + 1] <= s {
            i += 1;
        }
        values.push(run.values[i]);
        q.push(run.q[i].clone());
    }
    (values, q)
}

fn progress_name(family: TraceFamily) -> &'static str {
    match family {
        TraceFamily::Linear => "proportions",
        TraceFamily::Fourier => "projections",
        TraceFamily::Bandit => "contexts",
    }
}

type Panels = Vec<(String, Vec<FigureRow>)>;

fn learner_figures(entry: &TraceEntry, runs: &[RunProgress], cutoffs: &[f64]) -> Result<Panels> {
    let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
    for (group, members) in grouped(runs, |r| group_of(&r.run_id)) {
        let mut grid: Vec<usize> = members.iter().flat_map(|r| r.steps.iter().copied()).collect();
        grid.sort_unstable();
        grid.dedup();
        let (values, qs): (Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>) = members
            .iter()
            .map(|r| {
                let (v, q) = resample(r, &grid);
                (v.into_iter().map(|x| vec![x]).collect(), q)
            })
            .unzip();
        let agg = aggregate(&values)?;
        for (t, &x) in grid.iter().enumerate() {
            a.push(FigureRow {
                x: x as f64,
                series_id: group.clone(),
                mean: agg.mean[t][0],
                stderr: agg.stderr.as_ref().map(|s| s[t][0]),
            });
        }
        let k = members[0].targets.len();
        if members.iter().any(|r| r.targets.len() != k) {
            return Err(Error::Trace(format!("group `{group}` mixes mode counts")));
        }
        let modes = active_modes(k, &qs);
        curve_rows(&mut b, &grid, &group, &qs, &modes)?;
        let tg: Vec<&[f64]> = members.iter().map(|r| r.targets.as_slice()).collect();
        threshold_rows(&mut c, &group, cutoffs, &modes, |k| mean_targets(&tg, k), |k, cut| {
            members
                .iter()
                .map(|r| {
                    let col: Vec<f64> = r.q.iter().map(|row| row[k]).collect();
                    steps_to_threshold(&r.steps, &col, cut)
                })
                .collect()
        })?;
    }
    let value_name = if entry.family == TraceFamily::Bandit { "reward" } else { "loss" };
    Ok(vec![
        (format!("a_{value_name}"), a),
        (format!("b_{}", progress_name(entry.family)), b),
        ("c_thresholds".into(), c),
    ])
}

fn episode_mean(curves: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    Ok(aggregate(curves)?.mean)
}

fn inner_figures(entry: &TraceEntry, runs: &[InnerProgress], cutoffs: &[f64]) -> Result<Panels> {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (group, members) in grouped(runs, |r| group_of(&r.run_id)) {
        let ts = &members[0].ts;
        if members.iter().any(|r| &r.ts != ts) {
            return Err(Error::Trace(format!("group `{group}` mixes episode lengths")));
        }
        let finals: Vec<Vec<Vec<f64>>> = members
            .iter()
            .map(|r| episode_mean(&r.checkpoints.last().expect("run has rows").1))
            .collect::<Result<_>>()?;
        let k = members[0].targets.len();
        let modes = active_modes(k, &finals);
        curve_rows(&mut a, ts, &group, &finals, &modes)?;
        let tg: Vec<&[f64]> = members.iter().map(|r| r.targets.as_slice()).collect();
        threshold_rows(&mut b, &group, cutoffs, &modes, |k| mean_targets(&tg, k), |k, cut| {
            finals
                .iter()
                .map(|f| {
                    let col: Vec<f64> = f.iter().map(|row| row[k]).collect();
                    steps_to_threshold(ts, &col, cut)
                })
                .collect()
        })?;
    }
    Ok(vec![
        (format!("a_{}", progress_name(entry.family)), a),
        ("b_thresholds".into(), b),
    ])
}

fn sweep_figures(runs: &[InnerProgress], cutoff: f64) -> Result<Panels> {
    let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
    for (group, members) in grouped(runs, |r| group_of(&r.run_id)) {
        let steps: Vec<usize> = members[0].checkpoints.iter().map(|(s, _)| *s).collect();
        if members.iter().any(|r| r.checkpoints.iter().map(|(s, _)| *s).ne(steps.iter().copied())) {
            return Err(Error::Trace(format!("group `{group}` mixes checkpoint schedules")));
        }
        // means[r][checkpoint][t][k]
        let means: Vec<Vec<Vec<Vec<f64>>>> = members
            .iter()
            .map(|r| r.checkpoints.iter().map(|(_, e)| episode_mean(e)).collect())
            .collect::<Result<_>>()?;
        let k = members[0].targets.len();
        let modes = active_modes(k, means.iter().flatten());
        let inner: Vec<Vec<Vec<Threshold>>> = members
            .iter()
            .zip(&means)
            .map(|(r, per_ck)| {
                per_ck
                    .iter()
                    .map(|m| {
                        modes
                            .iter()
                            .map(|&j| {
                                let col: Vec<f64> = m.iter().map(|row| row[j]).collect();
                                steps_to_threshold(&r.ts, &col, cutoff)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for (mi, &j) in modes.iter().enumerate() {
            let series = format!("{group}/k{}", j + 1);
            for (ci, &step) in steps.iter().enumerate() {
                let reached: Vec<f64> = inner.iter().filter_map(|r| r[ci][mi].step()).map(|s| s as f64).collect();
                if !reached.is_empty() {
                    let (mean, stderr) = mean_se(&reached);
                    a.push(FigureRow {
                        x: step as f64,
                        series_id: series.clone(),
                        mean,
                        stderr,
                    });
                }
                let last: Vec<f64> = means.iter().map(|r| r[ci].last().map_or(f64::NAN, |row| row[j])).collect();
                let (mean, stderr) = mean_se(&last);
                c.push(FigureRow {
                    x: step as f64,
                    series_id: series.clone(),
                    mean,
                    stderr,
                });
            }
        }
        let tg: Vec<&[f64]> = members.iter().map(|r| r.targets.as_slice()).collect();
        threshold_rows(&mut b, &group, &[cutoff], &modes, |k| mean_targets(&tg, k), |k, _| {
            let mi = modes.iter().position(|&m| m == k).expect("active mode");
            Ok(inner
                .iter()
                .map(|r| {
                    steps
                        .iter()
                        .zip(r)
                        .find(|(_, th)| th[mi] != Threshold::Unreached)
                        .map_or(Threshold::Unreached, |(s, _)| Threshold::Reached(*s))
                })
                .collect())
        })?;
    }
    Ok(vec![
        ("a_inner_steps".into(), a),
        ("b_outer_steps".into(), b),
        ("c_final_q".into(), c),
    ])
}

fn entry_figures(dir: &Path, index: &TraceIndex, entry: &TraceEntry) -> Result<Panels> {
    if entry.file.contains(['/', '\\']) || entry.file.starts_with('.') {
        return Err(Error::Trace(format!("trace file `{}` must be a plain file name", entry.file)));
    }
    let reader = BufReader::new(File::open(dir.join(&entry.file))?);
    let with_file = |e: Error| Error::Trace(format!("{}: {e}", entry.file));
    match (entry.kind, entry.sweep_cutoff) {
        (TraceKind::Learner, _) => {
            let table = read_learner(reader)?;
            let runs = learner_progress(entry.family, &table, index.projection).map_err(with_file)?;
            learner_figures(entry, &runs, &index.cutoffs).map_err(with_file)
        }
        (TraceKind::Inner, None) => {
            let table = read_inner(reader)?;
            let runs = inner_progress(entry.family, &table, index.projection).map_err(with_file)?;
            inner_figures(entry, &runs, &index.cutoffs).map_err(with_file)
        }
        (TraceKind::Inner, Some(cut)) => {
            let table = read_inner(reader)?;
            let runs = inner_progress(entry.family, &table, index.projection).map_err(with_file)?;
            sweep_figures(&runs, cut).map_err(with_file)
        }
    }
}

/// Where `analyze` writes figures for a trace directory.
pub fn figure_dir_for(trace_dir: &Path) -> PathBuf {
    match (trace_dir.file_name(), trace_dir.parent()) {
        (Some(name), Some(parent)) if name == "traces" => parent.join("figures"),
        _ => trace_dir.join("figures"),
    }
}

/// Read `index.json` and the traces it lists from `trace_dir` (or its
/// `traces/` subdirectory) and write `fig<id>_<panel>.csv` files.
/// Returns the written paths in a fixed order.
pub fn analyze(trace_dir: &Path) -> Result<Vec<PathBuf>> {
    let dir = if trace_dir.join(INDEX_FILE).is_file() {
        trace_dir.to_path_buf()
    } else {
        trace_dir.join("traces")
    };
    let index: TraceIndex = serde_json::from_reader(BufReader::new(File::open(dir.join(INDEX_FILE))?))?;
    if index.cutoffs.iter().any(|c| !(*c > 0.0 && *c < 1.0)) {
        return Err(Error::Trace("cutoffs must lie in (0, 1)".into()));
    }
    let panels: Vec<Panels> = index
        .traces
        .par_iter()
        .map(|e| entry_figures(&dir, &index, e))
        .collect::<Result<_>>()?;
    let out = figure_dir_for(&dir);
    let mut written = Vec::new();
    for (entry, panels) in index.traces.iter().zip(panels) {
        for (name, rows) in panels {
            let path = out.join(format!("fig{}_{name}.csv", entry.figure));
            figure_to_file(&path, &rows)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(id: &str, steps: Vec<usize>, q: Vec<f64>) -> RunProgress {
        RunProgress {
            run_id: id.into(),
            values: vec![0.0; steps.len()],
            q: q.into_iter().map(|v| vec![v]).collect(),
            steps,
            targets: vec![1.0],
        }
    }

    #[test]
    fn resampling_holds_last_value() {
        let r = run("g/0", vec![0, 5, 10], vec![0.1, 0.5, 0.9]);
        let (_, q) = resample(&r, &[0, 3, 5, 7, 10, 12]);
        let flat: Vec<f64> = q.into_iter().map(|v| v[0]).collect();
        assert_eq!(flat, vec![0.1, 0.1, 0.5, 0.5, 0.9, 0.9]);
    }

    #[test]
    fn learner_thresholds_flag_unreached() {
        let runs = vec![run("g/0", vec![0, 5], vec![0.1, 0.9]), run("g/1", vec![0, 5], vec![0.1, 0.2])];
        let entry = TraceEntry {
            file: "x.csv".into(),
            kind: TraceKind::Learner,
            family: TraceFamily::Linear,
            figure: "1".into(),
            sweep_cutoff: None,
        };
        let panels = learner_figures(&entry, &runs, &[0.8]).unwrap();
        let c = &panels[2].1;
        assert_eq!(c[0].series_id, "g/c=0.8");
        assert_eq!(c[0].mean, 5.0);
        assert_eq!(c[1].series_id, "g/c=0.8/reached");
        assert_eq!(c[1].mean, 0.5);
    }

    #[test]
    fn figure_dir_is_a_sibling_of_traces() {
        assert_eq!(figure_dir_for(Path::new("out/traces")), PathBuf::from("out/figures"));
        assert_eq!(figure_dir_for(Path::new("elsewhere")), PathBuf::from("elsewhere/figures"));
    }
}
