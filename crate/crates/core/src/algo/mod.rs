//! Policy-gradient optimizers.
//!
//! REINFORCE, natural policy gradient and TRPO consume whole episodes and a mean-return
//! baseline. PPO carries its own value network and Adam state in a [`PpoLearner`].

mod adam;
mod natural;
mod ppo;
mod reinforce;
mod trajectory;

pub use adam::Adam;
pub use natural::{
    fisher_vector_product, line_search, natural_direction, npg_update, surrogate, trpo_update,
    LineSearchOutcome, NaturalDirection, NpgConfig, TrpoConfig,
};
pub use ppo::{clipped_objective_grad, PpoConfig, PpoLearner};
pub use reinforce::{reinforce_update, score_function_gradient, ReinforceConfig, StepWeighting};
pub use trajectory::{
    advantages, discounted_returns, gae, rollout, rollout_with, write_trajectories_csv, Baseline,
    Trajectory,
};

use serde::{Deserialize, Serialize};

use crate::policy::Policy;
use crate::{Error, Result};

/// Diagnostic conditions raised during an update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    NonFiniteGradient,
    LogProbClamped,
    CgNotConverged,
    LineSearchExhausted,
    NonFiniteLoss,
    ThresholdOrderViolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Mean `KL(π_old ‖ π_new)` over the visited states.
    pub kl: f64,
    /// Mean entropy of the pre-update policy over the visited states.
    pub entropy: f64,
    pub step_norm: f64,
    /// Number of halvings before a TRPO step was accepted.
    pub line_search_depth: Option<usize>,
    /// The parameters changed.
    pub accepted: bool,
    pub thresholds_ordered: bool,
    pub flags: Vec<Flag>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value_loss: Option<f64>,
    /// Largest `|ratio − 1|` in the first PPO minibatch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_ratio_deviation: Option<f64>,
}

impl UpdateStats {
    fn new() -> Self {
        Self {
            kl: 0.0,
            entropy: 0.0,
            step_norm: 0.0,
            line_search_depth: None,
            accepted: false,
            thresholds_ordered: true,
            flags: Vec::new(),
            clip_fraction: None,
            value_loss: None,
            first_ratio_deviation: None,
        }
    }

    fn flag(&mut self, f: Flag) {
        if !self.flags.contains(&f) {
            self.flags.push(f);
        }
    }

    /// Fills KL, step norm and the ordering check from the pre/post parameters.
    fn finish(&mut self, old: &Policy, new: &Policy, states: &[Vec<f64>]) -> Result<()> {
        let (a, b) = (old.params(), new.params());
        self.step_norm = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        self.kl = mean_kl(old, new, states)?;
        self.thresholds_ordered = new.thresholds_ordered();
        if !self.thresholds_ordered {
            self.flag(Flag::ThresholdOrderViolated);
        }
        Ok(())
    }
}

/// The optimizer section of an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Reinforce(ReinforceConfig),
    Npg(NpgConfig),
    Trpo(TrpoConfig),
    Ppo(PpoConfig),
}

impl OptimizerConfig {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerConfig::Reinforce(_) => "reinforce",
            OptimizerConfig::Npg(_) => "npg",
            OptimizerConfig::Trpo(_) => "trpo",
            OptimizerConfig::Ppo(_) => "ppo",
        }
    }

    pub fn discount(&self) -> f64 {
        match self {
            OptimizerConfig::Reinforce(c) => c.discount,
            OptimizerConfig::Npg(c) => c.discount,
            OptimizerConfig::Trpo(c) => c.discount,
            OptimizerConfig::Ppo(c) => c.discount,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let gamma = self.discount();
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::config("optimizer.discount", "must lie in [0, 1)"));
        }
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(
                    format!("optimizer.{field}"),
                    "must be positive",
                ))
            }
        };
        match self {
            OptimizerConfig::Reinforce(c) => positive("lr", c.lr),
            OptimizerConfig::Npg(c) => {
                positive("step_size", c.step_size)?;
                positive("damping", c.damping)?;
                positive("cg_tol", c.cg_tol)?;
                if c.cg_iters == 0 {
                    return Err(Error::config("optimizer.cg_iters", "must be at least 1"));
                }
                Ok(())
            }
            OptimizerConfig::Trpo(c) => {
                positive("max_kl", c.max_kl)?;
                positive("damping", c.damping)?;
                positive("cg_tol", c.cg_tol)?;
                if c.cg_iters == 0 {
                    return Err(Error::config("optimizer.cg_iters", "must be at least 1"));
                }
                if !(c.backtrack_coeff > 0.0 && c.backtrack_coeff < 1.0) {
                    return Err(Error::config(
                        "optimizer.backtrack_coeff",
                        "must lie in (0, 1)",
                    ));
                }
                Ok(())
            }
            OptimizerConfig::Ppo(c) => {
                positive("lr", c.lr)?;
                if !(c.clip >= 0.0) {
                    return Err(Error::config("optimizer.clip", "must be non-negative"));
                }
                if !(0.0..=1.0).contains(&c.gae_lambda) {
                    return Err(Error::config("optimizer.gae_lambda", "must lie in [0, 1]"));
                }
                if c.epochs == 0 || c.minibatch_size == 0 || c.episodes_per_update == 0 {
                    return Err(Error::config(
                        "optimizer.epochs",
                        "epochs, minibatch_size and episodes_per_update must be positive",
                    ));
                }
                Ok(())
            }
        }
    }
}

pub fn mean_kl(old: &Policy, new: &Policy, states: &[Vec<f64>]) -> Result<f64> {
    if states.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in states {
        total += old.distribution(s)?.kl(&new.distribution(s)?)?;
    }
    Ok(total / states.len() as f64)
}

pub fn mean_entropy(policy: &Policy, states: &[Vec<f64>]) -> Result<f64> {
    if states.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in states {
        total += policy.distribution(s)?.entropy();
    }
    Ok(total / states.len() as f64)
}

pub(crate) fn visited_states(trajectories: &[Trajectory]) -> Vec<Vec<f64>> {
    trajectories
        .iter()
        .flat_map(|t| t.observations.iter().cloned())
        .collect()
}

pub(crate) fn require_batch(trajectories: &[Trajectory]) -> Result<()> {
    if trajectories.iter().all(Trajectory::is_empty) {
        return Err(Error::invalid(
            "trajectories",
            "at least one non-empty trajectory is required",
        ));
    }
    Ok(())
}
