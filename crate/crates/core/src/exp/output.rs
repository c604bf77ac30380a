use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, ExperimentResult, LearningCurve};
use crate::algo::{write_trajectories_csv, OptimizerConfig};
use crate::{Error, Result};

type CellRows = ((String, String), Vec<(u64, Vec<f64>)>);

pub const CURVES_FILE: &str = "curves.csv";
pub const SMOOTHED_FILE: &str = "smoothed.csv";
pub const STATS_FILE: &str = "stats.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance of a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub command: String,
    pub created: String,
    pub crate_version: String,
    /// SHA-256 of the bytes of `config.json`.
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub parallel_seeds: usize,
    pub wall_clock_seconds: f64,
    /// Files written into the run directory, relative to it.
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: &ExperimentConfig,
        parallel_seeds: usize,
        wall_clock_seconds: f64,
    ) -> Result<Self> {
        Ok(Self {
            name: config.name.clone(),
            command: command.to_string(),
            created: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: config_hash(config)?,
            seeds: config.seeds.clone(),
            parallel_seeds,
            wall_clock_seconds,
            artifacts: Vec::new(),
        })
    }
}

/// The exact text written to `config.json`.
pub fn config_json(config: &ExperimentConfig) -> Result<String> {
    let text = serde_json::to_string_pretty(config).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(text + "\n")
}

pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    Ok(sha256_hex(config_json(config)?.as_bytes()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Creates a fresh `root/name-YYYYmmdd-HHMMSS[-n]` directory; existing ones are never reused.
pub fn create_run_dir(root: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
    let base = format!("{name}-{stamp}");
    for n in 1.. {
        let dir = if n == 1 {
            root.join(&base)
        } else {
            root.join(format!("{base}-{n}"))
        };
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(dir, e)),
        }
    }
    unreachable!()
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::io(path, e.into()))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// `policy,optimizer,seed,episode,total_reward` with 0-based episodes.
pub fn write_curves_csv<W: Write>(mut w: W, curves: &[LearningCurve]) -> std::io::Result<()> {
    writeln!(w, "policy,optimizer,seed,episode,total_reward")?;
    for c in curves {
        for (seed, returns) in c.seeds.iter().zip(&c.returns) {
            for (i, r) in returns.iter().enumerate() {
                writeln!(w, "{},{},{},{},{}", c.policy, c.optimizer, seed, i, r)?;
            }
        }
    }
    w.flush()
}

/// `episode,mean,std` over the smoothed curve; `episode` is the 0-based last episode of each window.
pub fn write_smoothed_csv<W: Write>(mut w: W, curve: &LearningCurve) -> std::io::Result<()> {
    writeln!(w, "episode,mean,std")?;
    for (j, (m, s)) in curve
        .smoothed_mean
        .iter()
        .zip(&curve.smoothed_std)
        .enumerate()
    {
        writeln!(w, "{},{},{}", j + curve.window - 1, m, s)?;
    }
    w.flush()
}

/// Parses a file written by [`write_curves_csv`] into one curve per (policy, optimizer) cell.
pub fn read_curves_csv(path: &Path, window: usize) -> Result<Vec<LearningCurve>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, why: &str| {
        Error::config(format!("{}:{}", path.display(), line + 1), why.to_string())
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "policy,optimizer,seed,episode,total_reward")) => {}
        _ => return Err(bad(0, "missing curves header")),
    }
    // (policy, optimizer) -> [(seed, returns)]
    let mut cells: Vec<CellRows> = Vec::new();
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(n, "expected 5 fields"));
        }
        let seed: u64 = f[2].parse().map_err(|_| bad(n, "bad seed"))?;
        let episode: usize = f[3].parse().map_err(|_| bad(n, "bad episode"))?;
        let reward: f64 = f[4].parse().map_err(|_| bad(n, "bad total_reward"))?;
        let key = (f[0].to_string(), f[1].to_string());
        let runs = match cells.iter().position(|(k, _)| *k == key) {
            Some(i) => &mut cells[i].1,
            None => {
                cells.push((key, Vec::new()));
                &mut cells.last_mut().expect("just pushed").1
            }
        };
        let returns = match runs.iter().position(|(s, _)| *s == seed) {
            Some(i) => &mut runs[i].1,
            None => {
                runs.push((seed, Vec::new()));
                &mut runs.last_mut().expect("just pushed").1
            }
        };
        if episode != returns.len() {
            return Err(bad(n, "episodes must be consecutive from 0"));
        }
        returns.push(reward);
    }
    cells
        .into_iter()
        .map(|((policy, optimizer), runs)| {
            LearningCurve::new(policy, optimizer, window, runs)
                .map_err(|e| Error::config(path.display().to_string(), e.to_string()))
        })
        .collect()
}

#[derive(Serialize)]
struct Summary<'a> {
    cell: super::CellSummary,
    failures: &'a [super::SeedFailure],
    updates: usize,
    thresholds_ordered_fraction: f64,
    accepted_updates: usize,
    max_accepted_kl: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    kl_bound: Option<f64>,
    flagged_updates: usize,
}

/// Writes config, curves, per-update stats, summary, checkpoints and any recorded trajectories
/// into `dir`, then the manifest listing them. Returns the manifest as written.
pub fn write_run_outputs(
    dir: &Path,
    result: &ExperimentResult,
    mut manifest: RunManifest,
) -> Result<RunManifest> {
    let cfg = &result.config;
    let mut artifacts = Vec::new();
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, config_json(cfg)?).map_err(|e| Error::io(&path, e))?;
    artifacts.push(CONFIG_FILE.to_string());

    let curve = result.curve()?;
    let path = dir.join(CURVES_FILE);
    write_curves_csv(create(&path)?, std::slice::from_ref(&curve))
        .map_err(|e| Error::io(&path, e))?;
    artifacts.push(CURVES_FILE.to_string());
    let path = dir.join(SMOOTHED_FILE);
    write_smoothed_csv(create(&path)?, &curve).map_err(|e| Error::io(&path, e))?;
    artifacts.push(SMOOTHED_FILE.to_string());

    let path = dir.join(STATS_FILE);
    let mut w = create(&path)?;
    for u in result.updates() {
        serde_json::to_writer(&mut w, u).map_err(|e| Error::io(&path, e.into()))?;
        writeln!(w).map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    artifacts.push(STATS_FILE.to_string());

    let kl_bound = match &cfg.optimizer {
        OptimizerConfig::Trpo(t) => Some(t.max_kl),
        _ => None,
    };
    let summary = Summary {
        cell: super::CellSummary::from(&curve),
        failures: &result.failures,
        updates: result.updates().count(),
        thresholds_ordered_fraction: result.ordered_fraction(),
        accepted_updates: result.updates().filter(|u| u.stats.accepted).count(),
        max_accepted_kl: result.max_accepted_kl(),
        kl_bound,
        flagged_updates: result
            .updates()
            .filter(|u| !u.stats.flags.is_empty())
            .count(),
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    artifacts.push(SUMMARY_FILE.to_string());

    let ckpt = dir.join("checkpoints");
    fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
    for run in &result.runs {
        let name = checkpoint_name(run.seed);
        let p = ckpt.join(&name);
        fs::write(&p, run.policy.to_blob()).map_err(|e| Error::io(&p, e))?;
        artifacts.push(format!("checkpoints/{name}"));
    }

    if result.runs.iter().any(|r| !r.trajectories.is_empty()) {
        let tdir = dir.join("trajectories");
        fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
        for run in &result.runs {
            let p = tdir.join(format!("seed-{}.csv", run.seed));
            let eps: Vec<(usize, &crate::algo::Trajectory)> =
                run.trajectories.iter().map(|(e, t)| (*e, t)).collect();
            write_trajectories_csv(create(&p)?, &eps)?;
            artifacts.push(format!("trajectories/seed-{}.csv", run.seed));
        }
    }
    artifacts.push(MANIFEST_FILE.to_string());
    manifest.artifacts = artifacts;
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn checkpoint_name(seed: u64) -> String {
    format!("seed-{seed}.ordp")
}
