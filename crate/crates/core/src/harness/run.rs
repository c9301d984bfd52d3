use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::figures::analyze;
use super::pipelines::{execute, execute_probe, load_checkpoint, Ctx};
use super::traces::{TraceEntry, TraceIndex, INDEX_FILE};
use super::{ExperimentId, Study};
use crate::analysis::csvio::write_file;
use crate::analysis::ProjectionKind;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const DEFAULT_OUT: &str = "out";
pub const OUT_ENV: &str = "METADYN_OUT";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    /// Output directory; wins over the config and `METADYN_OUT`.
    pub out: Option<PathBuf>,
    pub workers: usize,
    /// Replaces the config's seed.
    pub seed: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            out: None,
            workers: 1,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeedEntry {
    pub role: String,
    pub seed: u64,
    pub stream: u64,
    /// Inclusive ranges of substream indices drawn.
    pub indices: Vec<[u64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed { stage: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: ExperimentId,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub workers: usize,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub status: RunStatus,
    pub seeds: Vec<SeedEntry>,
    /// Every file under the output directory except this manifest.
    pub files: Vec<FileEntry>,
}

/// SHA-256 of the canonical (sorted-key) JSON of the resolved config.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    hex(&Sha256::digest(cfg.canonical_json().as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// `--out`, then the config's `output_dir`, then `METADYN_OUT`, then `out`.
pub fn resolve_output_dir(cli: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    cli.map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut n = 0u64;
    loop {
        let k = f.read(&mut buf)?;
        if k == 0 {
            break;
        }
        h.update(&buf[..k]);
        n += k as u64;
    }
    Ok((hex(&h.finalize()), n))
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() {
            list_files(root, &p, out)?;
        } else if p != root.join(MANIFEST_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

fn file_entries(root: &Path) -> Result<Vec<FileEntry>> {
    let mut paths = Vec::new();
    list_files(root, root, &mut paths)?;
    let mut entries = paths
        .iter()
        .map(|p| {
            let rel = p.strip_prefix(root).expect("under root");
            let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            let (sha256, bytes) = sha256_file(p)?;
            Ok(FileEntry { path, sha256, bytes })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(entries)
}

fn projection_of(cfg: &ExperimentConfig) -> ProjectionKind {
    match &cfg.settings {
        Study::Outer(s) => s.sweep.projection,
        _ => ProjectionKind::default(),
    }
}

fn write_index(ctx: &Ctx, cfg: &ExperimentConfig, traces: Vec<TraceEntry>) -> Result<()> {
    let index = TraceIndex {
        experiment: cfg.experiment,
        cutoffs: cfg.cutoffs.clone(),
        projection: projection_of(cfg),
        traces,
    };
    write_file(
        &ctx.out.join("traces").join(INDEX_FILE),
        serde_json::to_string_pretty(&index)?.as_bytes(),
    )
}

fn clear(dir: &Path) -> Result<()> {
    match fs::remove_dir_all(dir) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
        _ => Ok(()),
    }
}

fn run_with(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    body: impl FnOnce(&Ctx) -> Result<Vec<TraceEntry>> + Send,
) -> Result<RunManifest> {
    let mut cfg = cfg.clone();
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    let out = resolve_output_dir(opts.out.as_deref(), &cfg);
    fs::create_dir_all(&out)?;
    let started_unix = now();
    let ctx = Ctx::new(&out, cfg.seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start {} workers: {e}", opts.workers)))?;
    let result = pool.install(|| -> Result<()> {
        clear(&out.join("traces"))?;
        clear(&out.join("figures"))?;
        let mut resolved = serde_json::to_string_pretty(&serde_json::to_value(&cfg)?)?;
        resolved.push('\n');
        write_file(&out.join("config.json"), resolved.as_bytes())?;
        let traces = body(&ctx)?;
        ctx.set_stage("traces");
        write_index(&ctx, &cfg, traces)?;
        ctx.set_stage("analyze");
        analyze(&out.join("traces"))?;
        Ok(())
    });
    let status = match result {
        Ok(()) => RunStatus::Completed,
        Err(e) => RunStatus::Failed {
            stage: ctx.stage().to_string(),
            message: e.to_string(),
        },
    };
    let manifest = RunManifest {
        experiment: cfg.experiment,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(&cfg),
        seed: cfg.seed,
        workers: opts.workers.max(1),
        started_unix,
        finished_unix: now(),
        status,
        seeds: ctx.take_seeds(),
        files: file_entries(&out)?,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_file(&out.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}

/// Train, probe, write traces and figures under the output directory.
/// Stage failures are reported in the manifest's status; the outputs
/// written so far stay on disk. Meta-training resumes from trainer
/// snapshots found under `checkpoints/`.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    run_with(cfg, opts, |ctx| execute(cfg, ctx))
}

/// Probe a saved Meta-Learner checkpoint with the probe settings of `cfg`.
pub fn probe(checkpoint: &Path, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    let ck = load_checkpoint(checkpoint)?;
    run_with(cfg, opts, move |ctx| execute_probe(cfg, &ck, ctx))
}
