use serde::{Deserialize, Serialize};

use super::{
    advantages, mean_entropy, require_batch, visited_states, Baseline, Flag, Trajectory,
    UpdateStats,
};
use crate::linalg::all_finite;
use crate::policy::Policy;
use crate::Result;

/// How each step's score term is weighted inside an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepWeighting {
    /// Every step counts once (the usual practical estimator).
    #[default]
    Uniform,
    /// Step `t` is weighted by `γ^t`, giving an unbiased estimate of `∇J`.
    Discounted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReinforceConfig {
    pub discount: f64,
    pub lr: f64,
    pub baseline: Baseline,
    pub weighting: StepWeighting,
}

impl Default for ReinforceConfig {
    fn default() -> Self {
        Self {
            discount: 0.9,
            lr: 0.003,
            baseline: Baseline::MeanReturn,
            weighting: StepWeighting::Uniform,
        }
    }
}

/// `scale · Σ_episodes Σ_t w_t Â_t ∇ ln π(a_t|s_t)`; the flag reports log-prob clamping.
pub fn score_function_gradient(
    policy: &Policy,
    trajectories: &[Trajectory],
    advantages: &[Vec<f64>],
    weighting: StepWeighting,
    gamma: f64,
    scale: f64,
) -> Result<(Vec<f64>, bool)> {
    let mut grad = vec![0.0; policy.num_params()];
    let mut clamped = false;
    for (traj, adv) in trajectories.iter().zip(advantages) {
        let mut w = 1.0;
        for (t, &a) in adv.iter().enumerate().take(traj.len()) {
            let coef = scale * w * a;
            if coef != 0.0 {
                let eval = policy.accumulate_log_prob_grad(
                    &traj.observations[t],
                    &traj.actions[t],
                    coef,
                    &mut grad,
                )?;
                clamped |= eval.clamped;
            }
            if weighting == StepWeighting::Discounted {
                w *= gamma;
            }
        }
    }
    Ok((grad, clamped))
}

/// `θ ← θ + lr · (1/N) Σ_episodes Σ_t Â_t ∇ ln π(a_t|s_t)` over `N` episodes.
pub fn reinforce_update(
    policy: &mut Policy,
    trajectories: &[Trajectory],
    cfg: &ReinforceConfig,
) -> Result<UpdateStats> {
    require_batch(trajectories)?;
    let mut stats = UpdateStats::new();
    let states = visited_states(trajectories);
    stats.entropy = mean_entropy(policy, &states)?;
    let adv = advantages(trajectories, cfg.discount, cfg.baseline);
    let (grad, clamped) = score_function_gradient(
        policy,
        trajectories,
        &adv,
        cfg.weighting,
        cfg.discount,
        1.0 / trajectories.len() as f64,
    )?;
    if clamped {
        stats.flag(Flag::LogProbClamped);
    }
    if !all_finite(&grad) {
        stats.flag(Flag::NonFiniteGradient);
        return Ok(stats);
    }
    let old = policy.clone();
    let mut theta = policy.params();
    crate::linalg::axpy(cfg.lr, &grad, &mut theta);
    if !all_finite(&theta) {
        stats.flag(Flag::NonFiniteGradient);
        return Ok(stats);
    }
    policy.set_params(&theta)?;
    stats.accepted = grad.iter().any(|g| *g != 0.0);
    stats.finish(&old, policy, &states)?;
    Ok(stats)
}
