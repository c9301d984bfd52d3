//! Trace and figure-data CSV files.
//!
//! Learner traces: `run_id, step, loss_or_reward, <payload...>`.
//! Inner traces: `meta_run_id, checkpoint_step, episode_id, t, <payload...>`.
//! Figure data: `x, series_id, mean, stderr` (empty stderr when undefined).
//! Every number is written in shortest round-trip decimal form.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const LEARNER_KEYS: [&str; 3] = ["run_id", "step", "loss_or_reward"];
pub const INNER_KEYS: [&str; 4] = ["meta_run_id", "checkpoint_step", "episode_id", "t"];
pub const FIGURE_COLUMNS: [&str; 4] = ["x", "series_id", "mean", "stderr"];

pub fn spectrum_columns(prefix: &str, k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("{prefix}_{i}")).collect()
}

pub fn policy_columns(contexts: usize, actions: usize) -> Vec<String> {
    (0..contexts)
        .flat_map(|c| (0..actions).map(move |a| format!("pi_c{c}_a{a}")))
        .collect()
}

/// Round-trip decimal form of a finite value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerRow {
    pub run_id: String,
    pub step: usize,
    pub value: f64,
    pub payload: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerRow {
    pub meta_run_id: String,
    pub checkpoint_step: usize,
    pub episode_id: usize,
    pub t: usize,
    pub payload: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigureRow {
    pub x: f64,
    pub series_id: String,
    pub mean: f64,
    pub stderr: Option<f64>,
}

/// Parsed trace: payload column names plus rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table<R> {
    pub payload_columns: Vec<String>,
    pub rows: Vec<R>,
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Trace("refusing to write a non-finite value".into()))
    }
}

pub fn write_learner<W: Write>(out: W, payload_columns: &[String], rows: &[LearnerRow]) -> Result<()> {
    let mut w = writer(out);
    let header: Vec<&str> = LEARNER_KEYS.iter().copied().chain(payload_columns.iter().map(String::as_str)).collect();
    w.write_record(&header)?;
    for r in rows {
        if r.payload.len() != payload_columns.len() {
            return Err(Error::Trace(format!("row has {} payload values for {} columns", r.payload.len(), payload_columns.len())));
        }
        check_finite(&r.payload)?;
        check_finite(&[r.value])?;
        let mut rec = vec![r.run_id.clone(), r.step.to_string(), fmt_f64(r.value)];
        rec.extend(r.payload.iter().map(|v| fmt_f64(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_inner<W: Write>(out: W, payload_columns: &[String], rows: &[InnerRow]) -> Result<()> {
    let mut w = writer(out);
    let header: Vec<&str> = INNER_KEYS.iter().copied().chain(payload_columns.iter().map(String::as_str)).collect();
    w.write_record(&header)?;
    for r in rows {
        if r.payload.len() != payload_columns.len() {
            return Err(Error::Trace(format!("row has {} payload values for {} columns", r.payload.len(), payload_columns.len())));
        }
        check_finite(&r.payload)?;
        let mut rec = vec![
            r.meta_run_id.clone(),
            r.checkpoint_step.to_string(),
            r.episode_id.to_string(),
            r.t.to_string(),
        ];
        rec.extend(r.payload.iter().map(|v| fmt_f64(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_figure<W: Write>(out: W, rows: &[FigureRow]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(FIGURE_COLUMNS)?;
    for r in rows {
        check_finite(&[r.x, r.mean])?;
        let se = match r.stderr {
            Some(v) if v.is_finite() => fmt_f64(v),
            Some(_) => return Err(Error::Trace("non-finite stderr".into())),
            None => String::new(),
        };
        w.write_record([fmt_f64(r.x), r.series_id.clone(), fmt_f64(r.mean), se])?;
    }
    w.flush()?;
    Ok(())
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(input)
}

fn header_payload(headers: &csv::StringRecord, keys: &[&str]) -> Result<Vec<String>> {
    if headers.len() < keys.len() || headers.iter().zip(keys).any(|(h, k)| h != *k) {
        return Err(Error::Trace(format!("header must start with {}", keys.join(","))));
    }
    let payload: Vec<String> = headers.iter().skip(keys.len()).map(str::to_owned).collect();
    let mut seen = std::collections::HashSet::new();
    for p in &payload {
        if p.is_empty() || !seen.insert(p.as_str()) {
            return Err(Error::Trace(format!("bad payload column `{p}`")));
        }
    }
    Ok(payload)
}

fn parse_usize(s: &str, what: &str, line: u64) -> Result<usize> {
    s.parse().map_err(|_| Error::Trace(format!("line {line}: {what} `{s}` is not a count")))
}

fn parse_f64(s: &str, what: &str, line: u64) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| Error::Trace(format!("line {line}: {what} `{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::Trace(format!("line {line}: {what} is not finite")));
    }
    Ok(v)
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

pub fn read_learner<R: Read>(input: R) -> Result<Table<LearnerRow>> {
    let mut rd = reader(input);
    let payload_columns = header_payload(rd.headers()?, &LEARNER_KEYS)?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = line_of(&rec);
        rows.push(LearnerRow {
            run_id: rec[0].to_owned(),
            step: parse_usize(&rec[1], "step", line)?,
            value: parse_f64(&rec[2], "loss_or_reward", line)?,
            payload: rec
                .iter()
                .skip(LEARNER_KEYS.len())
                .map(|v| parse_f64(v, "payload", line))
                .collect::<Result<_>>()?,
        });
    }
    Ok(Table { payload_columns, rows })
}

pub fn read_inner<R: Read>(input: R) -> Result<Table<InnerRow>> {
    let mut rd = reader(input);
    let payload_columns = header_payload(rd.headers()?, &INNER_KEYS)?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = line_of(&rec);
        rows.push(InnerRow {
            meta_run_id: rec[0].to_owned(),
            checkpoint_step: parse_usize(&rec[1], "checkpoint_step", line)?,
            episode_id: parse_usize(&rec[2], "episode_id", line)?,
            t: parse_usize(&rec[3], "t", line)?,
            payload: rec
                .iter()
                .skip(INNER_KEYS.len())
                .map(|v| parse_f64(v, "payload", line))
                .collect::<Result<_>>()?,
        });
    }
    Ok(Table { payload_columns, rows })
}

pub fn read_figure<R: Read>(input: R) -> Result<Vec<FigureRow>> {
    let mut rd = reader(input);
    if rd.headers()?.iter().ne(FIGURE_COLUMNS) {
        return Err(Error::Trace(format!("figure header must be {}", FIGURE_COLUMNS.join(","))));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = line_of(&rec);
        rows.push(FigureRow {
            x: parse_f64(&rec[0], "x", line)?,
            series_id: rec[1].to_owned(),
            mean: parse_f64(&rec[2], "mean", line)?,
            stderr: if rec[3].is_empty() { None } else { Some(parse_f64(&rec[3], "stderr", line)?) },
        });
    }
    Ok(rows)
}

/// Write `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn figure_to_file(path: &Path, rows: &[FigureRow]) -> Result<()> {
    let mut buf = Vec::new();
    write_figure(&mut buf, rows)?;
    write_file(path, &buf)
}
