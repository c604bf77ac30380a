use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, StepInfo};
use crate::policy::{Action, Policy};
use crate::{Error, Result};

/// One episode as collected under the behaviour policy.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    /// `ln π(a_t | s_t)` at collection time.
    pub log_probs: Vec<f64>,
    pub infos: Vec<StepInfo>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn returns(&self, gamma: f64) -> Vec<f64> {
        discounted_returns(&self.rewards, gamma)
    }
}

/// Runs one episode to termination.
pub fn rollout<E, R>(env: &mut E, policy: &Policy, rng: &mut R) -> Result<Trajectory>
where
    E: Environment + ?Sized,
    R: Rng + ?Sized,
{
    rollout_with(env, policy, rng, false)
}

/// Like [`rollout`]; `greedy` replaces sampling by the per-state mode.
pub fn rollout_with<E, R>(
    env: &mut E,
    policy: &Policy,
    rng: &mut R,
    greedy: bool,
) -> Result<Trajectory>
where
    E: Environment + ?Sized,
    R: Rng + ?Sized,
{
    let mut traj = Trajectory::default();
    let mut obs = env.reset()?;
    loop {
        let dist = policy.distribution(&obs)?;
        let action = if greedy {
            dist.greedy()
        } else {
            dist.sample(rng)
        };
        let log_prob = dist.log_prob(&action)?;
        let tr = env.step(&action)?;
        traj.observations
            .push(std::mem::replace(&mut obs, tr.observation));
        traj.actions.push(action);
        traj.rewards.push(tr.reward);
        traj.log_probs.push(log_prob);
        traj.infos.push(tr.info);
        if tr.done {
            return Ok(traj);
        }
    }
}

/// `G_t = r_t + γ G_{t+1}` with `G_T = 0`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Baseline subtracted from returns by the score-function methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Baseline {
    None,
    Constant(f64),
    /// Mean of `G_t` over every step of the batch.
    #[default]
    MeanReturn,
    /// Mean-return baseline followed by division by the batch standard deviation of `G_t`.
    Standardized,
}

/// Per-step advantages `G_t − b` for each trajectory.
pub fn advantages(trajectories: &[Trajectory], gamma: f64, baseline: Baseline) -> Vec<Vec<f64>> {
    let returns: Vec<Vec<f64>> = trajectories.iter().map(|t| t.returns(gamma)).collect();
    let b = match baseline {
        Baseline::None => 0.0,
        Baseline::Constant(c) => c,
        Baseline::MeanReturn | Baseline::Standardized => mean(returns.iter().flatten().copied()),
    };
    let scale = match baseline {
        Baseline::Standardized => {
            let var = mean(returns.iter().flatten().map(|g| (g - b) * (g - b)));
            1.0 / (var.sqrt() + 1e-8)
        }
        _ => 1.0,
    };
    returns
        .into_iter()
        .map(|r| r.into_iter().map(|g| (g - b) * scale).collect())
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Generalized advantage estimation for one terminated episode (`V(s_T) = 0`).
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    debug_assert_eq!(rewards.len(), values.len());
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next_v = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_v - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    adv
}

/// Writes `episode,t,state…,action,reacted,chosen,reward` rows; labels are 1-based.
pub fn write_trajectories_csv<W: Write>(mut w: W, episodes: &[(usize, &Trajectory)]) -> Result<()> {
    let io = |e| Error::io("trajectory csv", e);
    let obs_dim = episodes
        .iter()
        .find_map(|(_, t)| t.observations.first().map(Vec::len))
        .unwrap_or(0);
    let mut header = String::from("episode,t");
    for i in 0..obs_dim {
        header.push_str(&format!(",state{i}"));
    }
    header.push_str(",action,reacted,chosen,reward\n");
    w.write_all(header.as_bytes()).map_err(io)?;
    for (ep, traj) in episodes {
        for t in 0..traj.len() {
            let mut row = format!("{ep},{t}");
            for x in &traj.observations[t] {
                row.push_str(&format!(",{x}"));
            }
            let action = match &traj.actions[t] {
                Action::Discrete(a) => a
                    .iter()
                    .map(|c| (c + 1).to_string())
                    .collect::<Vec<_>>()
                    .join(" "),
                Action::Continuous(a) => a
                    .iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join(" "),
            };
            let info = &traj.infos[t];
            let chosen = info.chosen.map(|c| (c + 1).to_string()).unwrap_or_default();
            row.push_str(&format!(
                ",{action},{},{chosen},{}\n",
                u8::from(info.reacted),
                traj.rewards[t]
            ));
            w.write_all(row.as_bytes()).map_err(io)?;
        }
    }
    Ok(())
}
