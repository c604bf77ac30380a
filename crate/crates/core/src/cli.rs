//! Command-line front end: `train`, `eval`, `compare` and `validate`.
//!
//! Exit status is 0 on success, 2 for configuration or usage errors and 3 for runtime failures.
//! Output directories go under `--out`, else `$ORDPOL_OUT`, else `./runs`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use std::time::Instant;

use crate::exp::{
    checkpoint_name, compare_policies, create_run_dir, evaluate, read_curves_csv, run_experiment,
    std_dev, write_run_outputs, CellSummary, Comparison, EnvConfig, ExperimentConfig,
    LearningCurve, RunManifest, RunOptions, CONFIG_FILE, CURVES_FILE,
};
use crate::policy::Policy;
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const OUT_ENV: &str = "ORDPOL_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "ordpol",
    version,
    about = "Train and compare policy parametrizations for ordered actions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every seed of one or more experiment configs; one run directory per config.
    Train {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// Seeds trained concurrently.
        #[arg(long, default_value_t = 1)]
        parallel_seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Roll out frozen policies in greedy and stochastic mode on fresh episodes.
    ///
    /// `source` is a run directory (every seed's checkpoint, env from its config) or a single
    /// checkpoint file together with `--env`.
    Eval {
        source: PathBuf,
        /// Env config JSON, or an experiment config whose `env` section is used.
        #[arg(long)]
        env: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// Offset added to each training seed to seed the evaluation environment.
        #[arg(long, default_value_t = 1_000_000)]
        seed_offset: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare learning curves. Two runs are compared directly (first against second); with more,
    /// each cell is paired with the baseline policy's cell under the same optimizer.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "softmax")]
        baseline: String,
        /// Smoothing window; defaults to the window of the first run.
        #[arg(long)]
        window: Option<usize>,
        /// Return level for episodes-to-threshold; defaults to the midpoint of the final means.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and check a config, printing the resolved form.
    Validate {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Debug, Args)]
pub struct Overrides {
    /// Seed list such as `0,1,2` or `0..10` (end exclusive).
    #[arg(long)]
    pub seeds: Option<String>,
    /// Dotted-key override such as `optimizer.max_kl=0.02`; values parse as JSON, else as strings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_config_error() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            configs,
            overrides,
            parallel_seeds,
            out,
        } => {
            if parallel_seeds == 0 {
                return Err(Error::config("--parallel-seeds", "must be at least 1"));
            }
            let loaded = configs
                .iter()
                .map(|p| load_config(p, &overrides))
                .collect::<Result<Vec<_>>>()?;
            for cfg in &loaded {
                let root = out_root(out.clone(), cfg.output.clone());
                let dir = train(cfg, &root, parallel_seeds)?;
                println!("{}", dir.display());
            }
            Ok(())
        }
        Command::Eval {
            source,
            env,
            episodes,
            seed_offset,
            out,
        } => {
            let dir = eval(
                &source,
                env.as_deref(),
                episodes,
                seed_offset,
                &out_root(out, None),
            )?;
            println!("{}", dir.display());
            Ok(())
        }
        Command::Compare {
            runs,
            baseline,
            window,
            threshold,
            out,
        } => {
            let dir = compare(&runs, &baseline, window, threshold, &out_root(out, None))?;
            println!("{}", dir.display());
            Ok(())
        }
        Command::Validate { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let text =
                serde_json::to_string_pretty(&cfg).map_err(|e| Error::Numerical(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}

fn out_root(flag: Option<PathBuf>, configured: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or(configured)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Reads a config file and applies `--seeds` and `--set` before validation.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    for item in &overrides.set {
        apply_override(&mut value, item)?;
    }
    if let Some(s) = &overrides.seeds {
        let seeds = parse_seeds(s)?;
        set_path(&mut value, "seeds", Value::from(seeds))?;
    }
    ExperimentConfig::from_value(value)
}

/// Parses `a,b,c`, `a..b` (end exclusive) or a mix such as `0..3,7`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::config("--seeds", format!("cannot parse `{s}`"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            if b <= a {
                return Err(bad());
            }
            out.extend(a..b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

/// Applies one `a.b.c=value` override.
pub fn apply_override(root: &mut Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::config("--set", format!("expected KEY=VALUE, got `{item}`")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config("--set", format!("bad key `{key}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    set_path(root, key, value)
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| {
            Error::config(
                key.to_string(),
                format!("`{}` is not an object", parts[..i].join(".")),
            )
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("keys have at least one part")
}

pub fn train(cfg: &ExperimentConfig, root: &Path, parallel_seeds: usize) -> Result<PathBuf> {
    eprintln!(
        "training {} ({} / {} on {}, {} seeds x {} episodes)",
        cfg.name,
        cfg.policy.family.name(),
        cfg.optimizer.name(),
        cfg.env.name(),
        cfg.seeds.len(),
        cfg.episodes
    );
    let start = Instant::now();
    let result = run_experiment(cfg, RunOptions { parallel_seeds })?;
    let dir = create_run_dir(root, &cfg.name)?;
    let manifest = RunManifest::new("train", cfg, parallel_seeds, start.elapsed().as_secs_f64())?;
    write_run_outputs(&dir, &result, manifest)?;
    for f in &result.failures {
        eprintln!("seed {} failed: {}", f.seed, f.error);
    }
    let s = result.summary()?;
    eprintln!(
        "final-quarter return {:.4}, cross-seed std {:.4}, {} seeds",
        s.final_quarter_mean,
        s.final_quarter_std,
        s.seeds.len()
    );
    Ok(dir)
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeStats {
    pub mean: f64,
    pub std: f64,
}

impl ModeStats {
    fn of(returns: &[f64]) -> Self {
        Self {
            mean: returns.iter().sum::<f64>() / returns.len() as f64,
            std: std_dev(returns),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSeed {
    pub seed: u64,
    pub env_seed: u64,
    pub greedy: ModeStats,
    pub stochastic: ModeStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub source: String,
    pub env: String,
    pub episodes: usize,
    pub seeds: Vec<EvalSeed>,
    pub greedy_mean: f64,
    pub stochastic_mean: f64,
}

fn read_config_error(path: &Path, e: std::io::Error) -> Error {
    Error::config(path.display().to_string(), e.to_string())
}

/// Reads an env config, accepting either a bare env section or a whole experiment config.
pub fn load_env_config(path: &Path) -> Result<EnvConfig> {
    let text = fs::read_to_string(path).map_err(|e| read_config_error(path, e))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    let env = match value.get("env") {
        Some(env) => env.clone(),
        None => value,
    };
    let env: EnvConfig = serde_json::from_value(env)
        .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    env.validate()?;
    Ok(env)
}

fn read_checkpoint(path: &Path) -> Result<Policy> {
    let bytes =
        fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    Policy::from_blob(&bytes)
}

/// `(seed, mode, total_reward)` for one evaluation episode.
pub type EvalRow = (u64, &'static str, f64);

/// Evaluates the checkpoints named by `source`; see [`Command::Eval`].
pub fn eval_report(
    source: &Path,
    env: Option<&Path>,
    episodes: usize,
    seed_offset: u64,
) -> Result<(String, EvalReport, Vec<EvalRow>)> {
    if episodes == 0 {
        return Err(Error::config("--episodes", "must be positive"));
    }
    let (name, env_cfg, policies) = if source.is_dir() {
        let cfg_path = source.join(CONFIG_FILE);
        let text = fs::read_to_string(&cfg_path).map_err(|e| read_config_error(&cfg_path, e))?;
        let cfg = ExperimentConfig::from_json(&text)?;
        let env_cfg = match env {
            Some(p) => load_env_config(p)?,
            None => cfg.env.clone(),
        };
        let policies = cfg
            .seeds
            .iter()
            .map(|&s| {
                Ok((
                    s,
                    read_checkpoint(&source.join("checkpoints").join(checkpoint_name(s)))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        (cfg.name, env_cfg, policies)
    } else {
        let env = env.ok_or_else(|| {
            Error::config("--env", "required when evaluating a single checkpoint")
        })?;
        let name = source
            .file_stem()
            .and_then(|s| s.to_str())
            .filter(|s| !s.is_empty())
            .unwrap_or("checkpoint")
            .to_string();
        (
            name,
            load_env_config(env)?,
            vec![(0, read_checkpoint(source)?)],
        )
    };
    let mut rows = Vec::new();
    let mut seeds = Vec::new();
    for (seed, policy) in &policies {
        let env_seed = seed.wrapping_add(seed_offset);
        let greedy = evaluate(&env_cfg, policy, episodes, env_seed, true)?;
        let stochastic = evaluate(&env_cfg, policy, episodes, env_seed, false)?;
        seeds.push(EvalSeed {
            seed: *seed,
            env_seed,
            greedy: ModeStats::of(&greedy),
            stochastic: ModeStats::of(&stochastic),
        });
        rows.extend(greedy.into_iter().map(|r| (*seed, "greedy", r)));
        rows.extend(stochastic.into_iter().map(|r| (*seed, "stochastic", r)));
    }
    let n = seeds.len() as f64;
    let report = EvalReport {
        source: source.display().to_string(),
        env: env_cfg.name().to_string(),
        episodes,
        greedy_mean: seeds.iter().map(|s| s.greedy.mean).sum::<f64>() / n,
        stochastic_mean: seeds.iter().map(|s| s.stochastic.mean).sum::<f64>() / n,
        seeds,
    };
    Ok((name, report, rows))
}

pub fn eval(
    source: &Path,
    env: Option<&Path>,
    episodes: usize,
    seed_offset: u64,
    root: &Path,
) -> Result<PathBuf> {
    let (name, report, rows) = eval_report(source, env, episodes, seed_offset)?;
    let dir = create_run_dir(root, &format!("{name}-eval"))?;
    let p = dir.join("eval.csv");
    let mut w = std::io::BufWriter::new(fs::File::create(&p).map_err(|e| Error::io(&p, e))?);
    (|| {
        writeln!(w, "seed,mode,episode,total_reward")?;
        let mut episode = 0;
        let mut last = None;
        for (s, mode, r) in &rows {
            if last != Some((*s, *mode)) {
                episode = 0;
                last = Some((*s, *mode));
            }
            writeln!(w, "{s},{mode},{episode},{r}")?;
            episode += 1;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(&p, e))?;
    write_json(&dir.join("eval.json"), &report)?;
    eprintln!(
        "mean evaluation return: greedy {:.4}, stochastic {:.4}",
        report.greedy_mean, report.stochastic_mean
    );
    Ok(dir)
}

#[derive(Debug, Serialize)]
pub struct CompareReport {
    pub window: usize,
    pub baseline: Option<String>,
    pub cells: Vec<CellSummary>,
    pub comparisons: Vec<Comparison>,
}

fn read_run_curves(run: &Path, window: usize) -> Result<Vec<LearningCurve>> {
    let path = run.join(CURVES_FILE);
    if !path.is_file() {
        return Err(Error::config(
            run.display().to_string(),
            format!("no {CURVES_FILE} in run directory"),
        ));
    }
    read_curves_csv(&path, window)
}

/// Builds the comparison report; see [`Command::Compare`].
pub fn compare_report(
    runs: &[PathBuf],
    baseline: &str,
    window: Option<usize>,
    threshold: Option<f64>,
) -> Result<CompareReport> {
    let first = runs
        .first()
        .ok_or_else(|| Error::config("runs", "at least one run is required"))?;
    let window = match window {
        Some(w) => w,
        None => {
            let p = first.join(CONFIG_FILE);
            let text = fs::read_to_string(&p).map_err(|e| read_config_error(&p, e))?;
            ExperimentConfig::from_json(&text)?.window
        }
    };
    let per_run = runs
        .iter()
        .map(|r| read_run_curves(r, window))
        .collect::<Result<Vec<_>>>()?;
    if let [a, b] = per_run.as_slice() {
        let single = |cells: &[LearningCurve], run: &Path| -> Result<LearningCurve> {
            match cells {
                [c] => Ok(c.clone()),
                _ => Err(Error::config(
                    run.display().to_string(),
                    "expected exactly one cell per run",
                )),
            }
        };
        let (a, b) = (single(a, &runs[0])?, single(b, &runs[1])?);
        let comparison = compare_policies(&a, &b, threshold)?;
        return Ok(CompareReport {
            window,
            baseline: None,
            cells: vec![CellSummary::from(&a), CellSummary::from(&b)],
            comparisons: vec![comparison],
        });
    }
    let curves: Vec<LearningCurve> = per_run.into_iter().flatten().collect();
    let mut comparisons = Vec::new();
    for a in curves.iter().filter(|c| c.policy != baseline) {
        if let Some(b) = curves
            .iter()
            .find(|c| c.policy == baseline && c.optimizer == a.optimizer)
        {
            comparisons.push(compare_policies(a, b, threshold)?);
        }
    }
    Ok(CompareReport {
        window,
        baseline: Some(baseline.to_string()),
        cells: curves.iter().map(CellSummary::from).collect(),
        comparisons,
    })
}

pub fn compare(
    runs: &[PathBuf],
    baseline: &str,
    window: Option<usize>,
    threshold: Option<f64>,
    root: &Path,
) -> Result<PathBuf> {
    let report = compare_report(runs, baseline, window, threshold)?;
    eprintln!(
        "{:<22} {:<10} {:>5} {:>12} {:>10}",
        "policy", "optimizer", "seeds", "mean", "std"
    );
    for c in &report.cells {
        eprintln!(
            "{:<22} {:<10} {:>5} {:>12.4} {:>10.4}",
            c.policy,
            c.optimizer,
            c.seeds.len(),
            c.final_quarter_mean,
            c.final_quarter_std
        );
    }
    for c in &report.comparisons {
        eprintln!(
            "{}/{} vs {}/{}: better on {}/{} paired seeds, final mean difference {:.4}",
            c.a.policy,
            c.a.optimizer,
            c.b.policy,
            c.b.optimizer,
            c.a_better,
            c.paired_seeds.len(),
            c.final_mean_difference
        );
    }
    let dir = create_run_dir(root, "compare")?;
    write_json(&dir.join("comparison.json"), &report)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
