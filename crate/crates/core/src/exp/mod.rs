//! Experiment configuration, seeded training runs and their outputs.

mod analysis;
mod output;

pub use analysis::{
    compare_policies, moving_average, std_dev, CellSummary, Comparison, LearningCurve,
};
pub use output::{
    checkpoint_name, config_hash, config_json, create_run_dir, read_curves_csv, sha256_hex,
    write_curves_csv, write_run_outputs, write_smoothed_csv, RunManifest, CONFIG_FILE, CURVES_FILE,
    MANIFEST_FILE, SMOOTHED_FILE, STATS_FILE, SUMMARY_FILE,
};

use serde::{Deserialize, Serialize};

use crate::algo::{
    npg_update, reinforce_update, rollout, rollout_with, trpo_update, NpgConfig, OptimizerConfig,
    PpoConfig, PpoLearner, ReinforceConfig, Trajectory, TrpoConfig, UpdateStats,
};
use crate::approx::ScoreKind;
use crate::env::{Discretized, Environment, TintEnv, TintEnvConfig, TrackingConfig, TrackingEnv};
use crate::policy::{Family, Policy, PolicySpec};
use crate::rng::{stream, Stream};
use crate::{Error, Result};

/// Environment section of an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Tint(TintEnvConfig),
    Tracking(TrackingConfig),
}

impl EnvConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Tint(_) => "tint",
            EnvConfig::Tracking(_) => "tracking",
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            EnvConfig::Tint(c) => 1 + usize::from(c.include_time),
            EnvConfig::Tracking(c) => c.dims + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvConfig::Tint(c) => c.validate(),
            EnvConfig::Tracking(c) => c.validate(),
        }
    }

    /// Checks that `family` emits actions this env accepts.
    pub fn check_family(&self, family: &Family) -> Result<()> {
        match self {
            EnvConfig::Tint(c) => match *family {
                Family::Gaussian { .. } => Err(Error::config(
                    "policy.family",
                    "the tint env needs a discrete family",
                )),
                Family::Ordinal { action_dims, .. } if action_dims != 1 => Err(Error::config(
                    "policy.action_dims",
                    "the tint env has one action dimension",
                )),
                f if f.classes() != Some(c.classes) => Err(Error::config(
                    "policy.classes",
                    format!("must equal env.classes = {}", c.classes),
                )),
                _ => Ok(()),
            },
            EnvConfig::Tracking(c) if family.action_dims() != c.dims => Err(Error::config(
                "policy.action_dims",
                format!("must equal env.dims = {}", c.dims),
            )),
            EnvConfig::Tracking(_) => Ok(()),
        }
    }

    /// Checks both the action family and the observation size of a frozen policy.
    pub fn check_policy(&self, spec: &PolicySpec) -> Result<()> {
        if spec.obs_dim != self.obs_dim() {
            return Err(Error::dim(
                "policy observation",
                self.obs_dim(),
                spec.obs_dim,
            ));
        }
        self.check_family(&spec.family)
    }

    /// Builds the environment matching `family`, discretizing box actions when needed.
    pub fn build(&self, family: &Family, seed: u64) -> Result<Box<dyn Environment + Send>> {
        match (self, family.classes()) {
            (EnvConfig::Tint(c), Some(_)) => Ok(Box::new(TintEnv::new(c.clone(), seed)?)),
            (EnvConfig::Tracking(c), None) => Ok(Box::new(TrackingEnv::new(c.clone(), seed)?)),
            (EnvConfig::Tracking(c), Some(k)) => Ok(Box::new(Discretized::new(
                TrackingEnv::new(c.clone(), seed)?,
                k,
            )?)),
            (EnvConfig::Tint(_), None) => Err(Error::config(
                "policy.family",
                "the tint env needs a discrete family",
            )),
        }
    }
}

/// Policy section of an experiment config; the observation size comes from the env.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    #[serde(flatten)]
    pub family: Family,
    #[serde(default = "linear")]
    pub torso: ScoreKind,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

fn linear() -> ScoreKind {
    ScoreKind::Linear
}

fn default_hidden() -> usize {
    crate::approx::DEFAULT_HIDDEN
}

fn one() -> usize {
    1
}

fn default_window() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub optimizer: OptimizerConfig,
    /// Training episodes per seed.
    pub episodes: usize,
    /// Episodes per update for the score-function methods; PPO uses its own setting.
    #[serde(default = "one")]
    pub batch_episodes: usize,
    pub seeds: Vec<u64>,
    /// Moving-average window for smoothed curves.
    #[serde(default = "default_window")]
    pub window: usize,
    /// Record every n-th training episode step by step; zero records none.
    #[serde(default)]
    pub trajectory_every: usize,
    /// Root for run directories when neither `--out` nor `ORDPOL_OUT` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<std::path::PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::config("<root>", e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        let cfg: Self = match serde_path_to_error::deserialize(value.clone()) {
            Ok(cfg) => cfg,
            Err(e) => {
                let path = e.path().to_string();
                let refined = match path.as_str() {
                    "optimizer" => {
                        refine_section(&value, "optimizer", "name", |tag, v| match tag {
                            "reinforce" => field_error::<ReinforceConfig>(v),
                            "npg" => field_error::<NpgConfig>(v),
                            "trpo" => field_error::<TrpoConfig>(v),
                            "ppo" => field_error::<PpoConfig>(v),
                            _ => None,
                        })
                    }
                    "env" => refine_section(&value, "env", "kind", |tag, v| match tag {
                        "tint" => field_error::<TintEnvConfig>(v),
                        "tracking" => field_error::<TrackingConfig>(v),
                        _ => None,
                    }),
                    _ => None,
                };
                return Err(
                    refined.unwrap_or_else(|| Error::config(path, e.into_inner().to_string()))
                );
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn policy_spec(&self) -> PolicySpec {
        PolicySpec {
            family: self.policy.family,
            torso: self.policy.torso,
            hidden: self.policy.hidden,
            obs_dim: self.env.obs_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        {
            return Err(Error::config(
                "name",
                "must be non-empty and use only [A-Za-z0-9._-]",
            ));
        }
        if self.episodes == 0 {
            return Err(Error::config("episodes", "must be positive"));
        }
        if self.batch_episodes == 0 {
            return Err(Error::config("batch_episodes", "must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("seeds", "seeds must be distinct"));
        }
        if self.window == 0 {
            return Err(Error::config("window", "must be positive"));
        }
        if self.window > self.episodes {
            return Err(Error::config("window", "must not exceed episodes"));
        }
        if self.policy.torso == ScoreKind::Mlp2 && self.policy.hidden == 0 {
            return Err(Error::config(
                "policy.hidden",
                "must be positive for an mlp2 torso",
            ));
        }
        self.policy
            .family
            .validate()
            .map_err(|e| Error::config("policy", e.to_string()))?;
        self.optimizer.validate()?;
        self.env.validate()?;
        self.env.check_family(&self.policy.family)?;
        Ok(())
    }
}

/// Internally tagged sections lose the inner field path on error; re-parse the selected
/// variant on its own to recover it.
fn refine_section(
    root: &serde_json::Value,
    section: &str,
    tag_key: &str,
    parse: impl Fn(&str, serde_json::Value) -> Option<(String, String)>,
) -> Option<Error> {
    let mut body = root.get(section)?.as_object()?.clone();
    let tag = body.remove(tag_key)?;
    let (path, msg) = parse(tag.as_str()?, serde_json::Value::Object(body))?;
    Some(Error::config(format!("{section}.{path}"), msg))
}

fn field_error<T: serde::de::DeserializeOwned>(v: serde_json::Value) -> Option<(String, String)> {
    serde_path_to_error::deserialize::<_, T>(v)
        .err()
        .map(|e| (e.path().to_string(), e.into_inner().to_string()))
}

/// One optimizer update as logged to the stats file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub seed: u64,
    pub update: usize,
    /// Number of training episodes completed when the update ran.
    pub episode: usize,
    /// Mean total reward of the episodes in the update batch.
    pub mean_return: f64,
    #[serde(flatten)]
    pub stats: UpdateStats,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    /// Total (undiscounted) reward of every training episode.
    pub returns: Vec<f64>,
    pub updates: Vec<UpdateRecord>,
    pub policy: Policy,
    /// Recorded training episodes as `(episode index, trajectory)`.
    pub trajectories: Vec<(usize, Trajectory)>,
}

/// A seed that aborted with an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    /// Completed seeds, in config order.
    pub runs: Vec<SeedRun>,
    pub failures: Vec<SeedFailure>,
}

impl ExperimentResult {
    pub fn curve(&self) -> Result<LearningCurve> {
        LearningCurve::new(
            self.config.policy.family.name(),
            self.config.optimizer.name(),
            self.config.window,
            self.runs
                .iter()
                .map(|r| (r.seed, r.returns.clone()))
                .collect(),
        )
    }

    pub fn updates(&self) -> impl Iterator<Item = &UpdateRecord> {
        self.runs.iter().flat_map(|r| r.updates.iter())
    }

    /// Fraction of updates after which every threshold vector was strictly ordered.
    pub fn ordered_fraction(&self) -> f64 {
        let n = self.updates().count();
        if n == 0 {
            return 1.0;
        }
        self.updates()
            .filter(|u| u.stats.thresholds_ordered)
            .count() as f64
            / n as f64
    }

    pub fn summary(&self) -> Result<CellSummary> {
        Ok(CellSummary::from(&self.curve()?))
    }

    /// Largest mean KL of any accepted update.
    pub fn max_accepted_kl(&self) -> f64 {
        self.updates()
            .filter(|u| u.stats.accepted)
            .map(|u| u.stats.kl)
            .fold(0.0, f64::max)
    }
}

/// Options that affect scheduling but never the numbers produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Seeds trained concurrently; one runs them in order on the calling thread.
    pub parallel_seeds: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { parallel_seeds: 1 }
    }
}

/// Trains one policy per seed. Results are ordered as `config.seeds` and depend only on the
/// config, not on `opts`. A seed that fails is recorded and the others continue; the call
/// fails only when every seed does.
pub fn run_experiment(config: &ExperimentConfig, opts: RunOptions) -> Result<ExperimentResult> {
    config.validate()?;
    let outcomes: Vec<Result<SeedRun>> = if opts.parallel_seeds <= 1 || config.seeds.len() == 1 {
        config.seeds.iter().map(|&s| run_seed(config, s)).collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.parallel_seeds)
            .build()
            .map_err(|e| Error::Numerical(format!("cannot start worker pool: {e}")))?;
        pool.install(|| {
            config
                .seeds
                .par_iter()
                .map(|&s| run_seed(config, s))
                .collect()
        })
    };
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut last_error = None;
    for (seed, outcome) in config.seeds.iter().zip(outcomes) {
        match outcome {
            Ok(r) => runs.push(r),
            Err(e) => {
                failures.push(SeedFailure {
                    seed: *seed,
                    error: e.to_string(),
                });
                last_error = Some(e);
            }
        }
    }
    if runs.is_empty() {
        return Err(last_error.expect("at least one seed ran"));
    }
    Ok(ExperimentResult {
        config: config.clone(),
        runs,
        failures,
    })
}

/// Trains a single seed.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let spec = config.policy_spec();
    let mut init_rng = stream(seed, Stream::Init);
    let mut policy = Policy::new(spec, &mut init_rng)?;
    let mut env = config.env.build(&spec.family, seed)?;
    let mut act_rng = stream(seed, Stream::Policy);
    let mut shuffle_rng = stream(seed, Stream::Shuffle);
    let mut ppo = match &config.optimizer {
        OptimizerConfig::Ppo(c) => Some(PpoLearner::new(c.clone(), &policy, &mut init_rng)?),
        _ => None,
    };
    let batch_size = match &config.optimizer {
        OptimizerConfig::Ppo(c) => c.episodes_per_update,
        _ => config.batch_episodes,
    };

    let mut run = SeedRun {
        seed,
        returns: Vec::with_capacity(config.episodes),
        updates: Vec::new(),
        policy: policy.clone(),
        trajectories: Vec::new(),
    };
    let mut batch = Vec::with_capacity(batch_size);
    for episode in 0..config.episodes {
        let traj = rollout(&mut env, &policy, &mut act_rng)?;
        run.returns.push(traj.total_reward());
        if config.trajectory_every > 0 && episode % config.trajectory_every == 0 {
            run.trajectories.push((episode, traj.clone()));
        }
        batch.push(traj);
        if batch.len() < batch_size {
            continue;
        }
        let stats = match &config.optimizer {
            OptimizerConfig::Reinforce(c) => reinforce_update(&mut policy, &batch, c)?,
            OptimizerConfig::Npg(c) => npg_update(&mut policy, &batch, c)?,
            OptimizerConfig::Trpo(c) => trpo_update(&mut policy, &batch, c)?,
            OptimizerConfig::Ppo(_) => ppo.as_mut().expect("learner exists for ppo").update(
                &mut policy,
                &batch,
                &mut shuffle_rng,
            )?,
        };
        run.updates.push(UpdateRecord {
            seed,
            update: run.updates.len(),
            episode: episode + 1,
            mean_return: batch.iter().map(Trajectory::total_reward).sum::<f64>()
                / batch.len() as f64,
            stats,
        });
        batch.clear();
    }
    run.policy = policy;
    Ok(run)
}

/// Mean total reward of `episodes` evaluation rollouts on fresh environments.
pub fn evaluate(
    env: &EnvConfig,
    policy: &Policy,
    episodes: usize,
    seed: u64,
    greedy: bool,
) -> Result<Vec<f64>> {
    env.check_policy(policy.spec())?;
    let mut e = env.build(&policy.family(), seed)?;
    let mut rng = stream(seed, Stream::Eval);
    (0..episodes)
        .map(|_| rollout_with(&mut e, policy, &mut rng, greedy).map(|t| t.total_reward()))
        .collect()
}
