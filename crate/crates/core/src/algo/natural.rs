//! Natural policy gradient and trust-region policy optimization.
//!
//! Both precondition the score-function gradient by the Fisher information of the policy,
//! estimated over the visited states with the exact expectation over actions, and solve the
//! damped system `(F + dI) x = g` by conjugate gradients.

use serde::{Deserialize, Serialize};

use super::{
    advantages, mean_entropy, mean_kl, require_batch, score_function_gradient, visited_states,
    Baseline, Flag, StepWeighting, Trajectory, UpdateStats,
};
use crate::linalg::{all_finite, axpy, conjugate_gradient, dot, norm};
use crate::policy::Policy;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NpgConfig {
    pub discount: f64,
    /// `δ` in the normalized step `α = √(2δ / xᵀ(F + dI)x)`.
    pub step_size: f64,
    pub cg_iters: usize,
    pub damping: f64,
    /// CG stops once `‖r‖ ≤ cg_tol · max(1, ‖g‖)`.
    pub cg_tol: f64,
    pub baseline: Baseline,
}

impl Default for NpgConfig {
    fn default() -> Self {
        Self {
            discount: 0.9,
            step_size: 0.01,
            cg_iters: 10,
            damping: 0.1,
            cg_tol: 1e-10,
            baseline: Baseline::MeanReturn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrpoConfig {
    pub discount: f64,
    /// Trust-region radius on the mean KL divergence.
    pub max_kl: f64,
    pub cg_iters: usize,
    pub damping: f64,
    pub cg_tol: f64,
    pub backtrack_coeff: f64,
    /// Number of candidate step lengths tried, the full step included.
    pub backtrack_steps: usize,
    pub baseline: Baseline,
}

impl Default for TrpoConfig {
    fn default() -> Self {
        Self {
            discount: 0.9,
            max_kl: 0.01,
            cg_iters: 10,
            damping: 0.1,
            cg_tol: 1e-10,
            backtrack_coeff: 0.5,
            backtrack_steps: 10,
            baseline: Baseline::MeanReturn,
        }
    }
}

/// `(F + dI) v` with `F = mean_s E_{a~π(·|s)}[∇ln π ∇ln πᵀ]`.
pub fn fisher_vector_product(
    policy: &Policy,
    states: &[Vec<f64>],
    v: &[f64],
    damping: f64,
) -> Result<Vec<f64>> {
    if v.len() != policy.num_params() {
        return Err(Error::dim(
            "fisher_vector_product",
            policy.num_params(),
            v.len(),
        ));
    }
    let mut out = vec![0.0; v.len()];
    for s in states {
        policy.accumulate_fisher_product(s, v, &mut out)?;
    }
    if !states.is_empty() {
        let inv = 1.0 / states.len() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
    }
    axpy(damping, v, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaturalDirection {
    /// CG solution of `(F + dI) x = g`, or `g` itself when CG did not converge.
    pub direction: Vec<f64>,
    /// `xᵀ (F + dI) x`.
    pub quadratic: f64,
    /// `√(2δ / xᵀ(F + dI)x)`, zero for a null direction.
    pub step_scale: f64,
    pub cg_iterations: usize,
    pub converged: bool,
}

impl NaturalDirection {
    pub fn full_step(&self) -> Vec<f64> {
        self.direction.iter().map(|x| x * self.step_scale).collect()
    }
}

pub fn natural_direction<F>(
    grad: &[f64],
    mut fvp: F,
    cg_iters: usize,
    cg_tol: f64,
    radius: f64,
) -> Result<NaturalDirection>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let tol = cg_tol * norm(grad).max(1.0);
    let mut failure = None;
    let sol = conjugate_gradient(
        |p| match fvp(p) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                vec![0.0; p.len()]
            }
        },
        grad,
        cg_iters,
        tol,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let converged = sol.converged && all_finite(&sol.x);
    let direction = if converged { sol.x } else { grad.to_vec() };
    let quadratic = dot(&direction, &fvp(&direction)?);
    let step_scale = if quadratic > 0.0 && quadratic.is_finite() {
        (2.0 * radius / quadratic).sqrt()
    } else {
        0.0
    };
    Ok(NaturalDirection {
        direction,
        quadratic,
        step_scale,
        cg_iterations: sol.iterations,
        converged,
    })
}

/// Flattened batch used by the surrogate and line search.
struct Batch<'a> {
    obs: Vec<&'a [f64]>,
    actions: Vec<&'a crate::policy::Action>,
    old_log_probs: Vec<f64>,
    advantages: Vec<f64>,
}

impl<'a> Batch<'a> {
    fn new(trajectories: &'a [Trajectory], adv: &[Vec<f64>]) -> Self {
        let mut b = Batch {
            obs: Vec::new(),
            actions: Vec::new(),
            old_log_probs: Vec::new(),
            advantages: Vec::new(),
        };
        for (t, a) in trajectories.iter().zip(adv) {
            b.obs.extend(t.observations.iter().map(Vec::as_slice));
            b.actions.extend(t.actions.iter());
            b.old_log_probs.extend_from_slice(&t.log_probs);
            b.advantages.extend_from_slice(a);
        }
        b
    }

    fn len(&self) -> usize {
        self.obs.len()
    }
}

/// Importance-weighted surrogate `mean_t [π(a_t|s_t) / π_old(a_t|s_t) · Â_t]`.
pub fn surrogate(
    policy: &Policy,
    trajectories: &[Trajectory],
    advantages: &[Vec<f64>],
) -> Result<f64> {
    surrogate_batch(policy, &Batch::new(trajectories, advantages))
}

fn surrogate_batch(policy: &Policy, batch: &Batch<'_>) -> Result<f64> {
    if batch.len() == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..batch.len() {
        let lp = policy.log_prob(batch.obs[i], batch.actions[i])?;
        total += (lp - batch.old_log_probs[i]).exp() * batch.advantages[i];
    }
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchOutcome {
    /// Accepted parameters and the number of halvings that preceded them.
    pub accepted: Option<(usize, Vec<f64>)>,
    /// Mean KL of the accepted candidate.
    pub kl: f64,
    pub candidates_tried: usize,
}

/// Tries `θ + c^i Δ` for `i = 0, 1, …` and keeps the first candidate that improves the
/// surrogate while keeping the mean KL from the current policy within `max_kl`.
pub fn line_search(
    policy: &Policy,
    trajectories: &[Trajectory],
    advantages: &[Vec<f64>],
    full_step: &[f64],
    max_kl: f64,
    coeff: f64,
    max_steps: usize,
) -> Result<LineSearchOutcome> {
    let batch = Batch::new(trajectories, advantages);
    let states: Vec<Vec<f64>> = batch.obs.iter().map(|s| s.to_vec()).collect();
    let base = surrogate_batch(policy, &batch)?;
    let theta = policy.params();
    let mut frac = 1.0;
    for i in 0..max_steps {
        let mut cand = theta.clone();
        axpy(frac, full_step, &mut cand);
        frac *= coeff;
        if !all_finite(&cand) {
            continue;
        }
        let trial = Policy::from_params(*policy.spec(), &cand)?;
        let kl = mean_kl(policy, &trial, &states)?;
        let improve = surrogate_batch(&trial, &batch)? - base;
        if kl.is_finite() && kl <= max_kl && improve > 0.0 {
            return Ok(LineSearchOutcome {
                accepted: Some((i, cand)),
                kl,
                candidates_tried: i + 1,
            });
        }
    }
    Ok(LineSearchOutcome {
        accepted: None,
        kl: 0.0,
        candidates_tried: max_steps,
    })
}

struct Prepared {
    states: Vec<Vec<f64>>,
    adv: Vec<Vec<f64>>,
    grad: Vec<f64>,
    stats: UpdateStats,
}

fn prepare(
    policy: &Policy,
    trajectories: &[Trajectory],
    gamma: f64,
    baseline: Baseline,
) -> Result<Prepared> {
    require_batch(trajectories)?;
    let mut stats = UpdateStats::new();
    let states = visited_states(trajectories);
    stats.entropy = mean_entropy(policy, &states)?;
    let adv = advantages(trajectories, gamma, baseline);
    let (grad, clamped) = score_function_gradient(
        policy,
        trajectories,
        &adv,
        StepWeighting::Uniform,
        gamma,
        1.0 / states.len() as f64,
    )?;
    if clamped {
        stats.flag(Flag::LogProbClamped);
    }
    if !all_finite(&grad) {
        stats.flag(Flag::NonFiniteGradient);
    }
    Ok(Prepared {
        states,
        adv,
        grad,
        stats,
    })
}

/// One natural-gradient step `θ ← θ + α x` with `(F + dI) x = g`.
pub fn npg_update(
    policy: &mut Policy,
    trajectories: &[Trajectory],
    cfg: &NpgConfig,
) -> Result<UpdateStats> {
    let Prepared {
        states,
        grad,
        mut stats,
        ..
    } = prepare(policy, trajectories, cfg.discount, cfg.baseline)?;
    if stats.flags.contains(&Flag::NonFiniteGradient) {
        return Ok(stats);
    }
    let nd = natural_direction(
        &grad,
        |v| fisher_vector_product(policy, &states, v, cfg.damping),
        cfg.cg_iters,
        cfg.cg_tol,
        cfg.step_size,
    )?;
    if !nd.converged {
        stats.flag(Flag::CgNotConverged);
    }
    if nd.step_scale == 0.0 {
        return Ok(stats);
    }
    let old = policy.clone();
    let mut theta = policy.params();
    axpy(nd.step_scale, &nd.direction, &mut theta);
    if !all_finite(&theta) {
        stats.flag(Flag::NonFiniteGradient);
        return Ok(stats);
    }
    policy.set_params(&theta)?;
    stats.accepted = true;
    stats.finish(&old, policy, &states)?;
    Ok(stats)
}

/// Natural-gradient direction followed by a KL-constrained backtracking line search.
pub fn trpo_update(
    policy: &mut Policy,
    trajectories: &[Trajectory],
    cfg: &TrpoConfig,
) -> Result<UpdateStats> {
    let Prepared {
        states,
        adv,
        grad,
        mut stats,
    } = prepare(policy, trajectories, cfg.discount, cfg.baseline)?;
    if stats.flags.contains(&Flag::NonFiniteGradient) {
        return Ok(stats);
    }
    let nd = natural_direction(
        &grad,
        |v| fisher_vector_product(policy, &states, v, cfg.damping),
        cfg.cg_iters,
        cfg.cg_tol,
        cfg.max_kl,
    )?;
    if !nd.converged {
        stats.flag(Flag::CgNotConverged);
    }
    if nd.step_scale == 0.0 {
        return Ok(stats);
    }
    let outcome = line_search(
        policy,
        trajectories,
        &adv,
        &nd.full_step(),
        cfg.max_kl,
        cfg.backtrack_coeff,
        cfg.backtrack_steps,
    )?;
    match outcome.accepted {
        Some((depth, theta)) => {
            let old = policy.clone();
            policy.set_params(&theta)?;
            stats.accepted = true;
            stats.line_search_depth = Some(depth);
            stats.finish(&old, policy, &states)?;
        }
        None => {
            stats.flag(Flag::LineSearchExhausted);
            stats.line_search_depth = Some(outcome.candidates_tried);
        }
    }
    Ok(stats)
}
