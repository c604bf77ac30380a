//! Proximal policy optimization with a clipped surrogate and a learned value baseline.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    gae, mean_entropy, require_batch, visited_states, Adam, Flag, Trajectory, UpdateStats,
};
use crate::approx::{ScoreFunction, ScoreKind, Shape};
use crate::linalg::{all_finite, norm, scale};
use crate::policy::Policy;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub discount: f64,
    pub lr: f64,
    /// Ratio clip range `ε`.
    pub clip: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub gae_lambda: f64,
    pub vf_coef: f64,
    /// Global gradient-norm clip; zero disables it.
    pub max_grad_norm: f64,
    pub value_hidden: usize,
    pub normalize_advantages: bool,
    /// Whole episodes collected per update.
    pub episodes_per_update: usize,
    pub adam_eps: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            discount: 0.99,
            lr: 3e-4,
            clip: 0.2,
            epochs: 4,
            minibatch_size: 64,
            gae_lambda: 0.95,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
            value_hidden: 64,
            normalize_advantages: true,
            episodes_per_update: 4,
            adam_eps: 1e-5,
        }
    }
}

/// Value and derivative with respect to the ratio of `min(r A, clip(r, 1−ε, 1+ε) A)`.
pub fn clipped_objective_grad(ratio: f64, advantage: f64, clip: f64) -> (f64, f64) {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    let unclipped_obj = ratio * advantage;
    let clipped_obj = clipped * advantage;
    let active =
        (advantage >= 0.0 && ratio < 1.0 + clip) || (advantage < 0.0 && ratio > 1.0 - clip);
    (
        unclipped_obj.min(clipped_obj),
        if active { advantage } else { 0.0 },
    )
}

/// Value network and optimizer state carried between PPO updates.
#[derive(Debug, Clone)]
pub struct PpoLearner {
    cfg: PpoConfig,
    value: ScoreFunction,
    adam: Adam,
}

struct Sample<'a> {
    traj: usize,
    t: usize,
    adv: f64,
    ret: f64,
    obs: &'a [f64],
}

impl PpoLearner {
    pub fn new<R: Rng + ?Sized>(cfg: PpoConfig, policy: &Policy, rng: &mut R) -> Result<Self> {
        let shape = Shape::new(policy.obs_dim(), cfg.value_hidden, 1);
        let value = ScoreFunction::init(ScoreKind::Mlp2, shape, 1.0, rng)?;
        let adam = Adam::with_eps(
            policy.num_params() + value.param_count(),
            cfg.lr,
            cfg.adam_eps,
        );
        Ok(Self { cfg, value, adam })
    }

    pub fn config(&self) -> &PpoConfig {
        &self.cfg
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.value.forward(obs)?[0])
    }

    pub fn value_function(&self) -> &ScoreFunction {
        &self.value
    }

    /// Runs `epochs` passes of shuffled minibatch Adam steps over the batch.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        policy: &mut Policy,
        trajectories: &[Trajectory],
        rng: &mut R,
    ) -> Result<UpdateStats> {
        require_batch(trajectories)?;
        let cfg = self.cfg.clone();
        let mut stats = UpdateStats::new();
        let states = visited_states(trajectories);
        stats.entropy = mean_entropy(policy, &states)?;
        let old = policy.clone();

        let mut samples = Vec::with_capacity(states.len());
        for (k, traj) in trajectories.iter().enumerate() {
            let values = traj
                .observations
                .iter()
                .map(|s| self.value(s))
                .collect::<Result<Vec<f64>>>()?;
            let adv = gae(&traj.rewards, &values, cfg.discount, cfg.gae_lambda);
            for t in 0..traj.len() {
                samples.push(Sample {
                    traj: k,
                    t,
                    adv: adv[t],
                    ret: adv[t] + values[t],
                    obs: &traj.observations[t],
                });
            }
        }
        if cfg.normalize_advantages && samples.len() > 1 {
            let n = samples.len() as f64;
            let mean = samples.iter().map(|s| s.adv).sum::<f64>() / n;
            let var = samples.iter().map(|s| (s.adv - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt() + 1e-8;
            samples.iter_mut().for_each(|s| s.adv = (s.adv - mean) / sd);
        }

        let np = policy.num_params();
        let mut params = policy.params();
        params.extend_from_slice(self.value.weights());
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut clipped = 0usize;
        let mut seen = 0usize;
        let mut value_loss = 0.0;
        let mut first = true;
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(cfg.minibatch_size) {
                let inv = 1.0 / chunk.len() as f64;
                let mut grad = vec![0.0; params.len()];
                let (gp, gv) = grad.split_at_mut(np);
                let mut max_dev: f64 = 0.0;
                let mut vl = 0.0;
                for &i in chunk {
                    let s = &samples[i];
                    let traj = &trajectories[s.traj];
                    let action = &traj.actions[s.t];
                    let lp = policy.log_prob(s.obs, action)?;
                    let ratio = (lp - traj.log_probs[s.t]).exp();
                    max_dev = max_dev.max((ratio - 1.0).abs());
                    let (_, d_ratio) = clipped_objective_grad(ratio, s.adv, cfg.clip);
                    if d_ratio == 0.0 {
                        clipped += 1;
                    } else {
                        // descent on −objective: ∂(−r A)/∂θ = −A r ∇ln π
                        policy.accumulate_log_prob_grad(
                            s.obs,
                            action,
                            -d_ratio * ratio * inv,
                            gp,
                        )?;
                    }
                    let acts = self.value.forward_cached(s.obs)?;
                    let err = acts.output[0] - s.ret;
                    vl += 0.5 * err * err * inv;
                    self.value
                        .backward_into(s.obs, &acts, &[cfg.vf_coef * err * inv], gv)?;
                }
                seen += chunk.len();
                value_loss = vl;
                if first {
                    stats.first_ratio_deviation = Some(max_dev);
                    first = false;
                }
                if !all_finite(&grad) || !vl.is_finite() {
                    stats.flag(Flag::NonFiniteLoss);
                    continue;
                }
                let gn = norm(&grad);
                if cfg.max_grad_norm > 0.0 && gn > cfg.max_grad_norm {
                    scale(cfg.max_grad_norm / gn, &mut grad);
                }
                self.adam.step(&mut params, &grad);
                if !all_finite(&params) {
                    stats.flag(Flag::NonFiniteGradient);
                    params = old.params();
                    params.extend_from_slice(self.value.weights());
                    continue;
                }
                policy.set_params(&params[..np])?;
                self.value.set_weights(&params[np..])?;
            }
        }
        stats.clip_fraction = Some(if seen == 0 {
            0.0
        } else {
            clipped as f64 / seen as f64
        });
        stats.value_loss = Some(value_loss);
        stats.accepted = policy.params() != old.params();
        stats.finish(&old, policy, &states)?;
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algo::rollout;
    use crate::env::{Discretized, TrackingConfig, TrackingEnv};
    use crate::policy::{Family, PolicySpec};
    use crate::rng::{stream, Stream};

    #[test]
    fn clip_gate() {
        assert_eq!(clipped_objective_grad(1.1, 2.0, 0.2), (2.2, 2.0));
        assert_eq!(clipped_objective_grad(1.3, 2.0, 0.2).1, 0.0);
        assert!((clipped_objective_grad(1.3, 2.0, 0.2).0 - 2.4).abs() < 1e-12);
        assert_eq!(clipped_objective_grad(0.7, 2.0, 0.2).1, 2.0);
        assert_eq!(clipped_objective_grad(0.7, -1.0, 0.2).1, 0.0);
        assert_eq!(clipped_objective_grad(1.5, -1.0, 0.2).1, -1.0);
        // ε = 0 leaves no gradient once the ratio moves off 1 in the favourable direction
        assert_eq!(clipped_objective_grad(1.0 + 1e-12, 1.0, 0.0).1, 0.0);
        assert_eq!(clipped_objective_grad(1.0 - 1e-12, -1.0, 0.0).1, 0.0);
    }

    fn setup(family: Family) -> (Policy, PpoLearner, Vec<Trajectory>) {
        let cfg = TrackingConfig::default();
        let spec = PolicySpec {
            family,
            torso: ScoreKind::Mlp2,
            hidden: 16,
            obs_dim: cfg.dims + 1,
        };
        let mut init = stream(0, Stream::Init);
        let policy = Policy::new(spec, &mut init).unwrap();
        let learner = PpoLearner::new(
            PpoConfig {
                value_hidden: 16,
                ..Default::default()
            },
            &policy,
            &mut init,
        )
        .unwrap();
        let mut rng = stream(0, Stream::Policy);
        let trajs = match family {
            Family::Gaussian { .. } => {
                let mut env = TrackingEnv::new(cfg, 0).unwrap();
                (0..2)
                    .map(|_| rollout(&mut env, &policy, &mut rng).unwrap())
                    .collect()
            }
            _ => {
                let mut env =
                    Discretized::new(TrackingEnv::new(cfg, 0).unwrap(), family.classes().unwrap())
                        .unwrap();
                (0..2)
                    .map(|_| rollout(&mut env, &policy, &mut rng).unwrap())
                    .collect()
            }
        };
        (policy, learner, trajs)
    }

    #[test]
    fn first_minibatch_is_on_policy() {
        for family in [
            Family::Gaussian {
                action_dims: 2,
                init_log_std: 0.0,
            },
            Family::Ordinal {
                classes: 5,
                action_dims: 2,
            },
        ] {
            let (mut policy, mut learner, trajs) = setup(family);
            let stats = learner
                .update(&mut policy, &trajs, &mut stream(0, Stream::Shuffle))
                .unwrap();
            assert!(stats.first_ratio_deviation.unwrap() < 1e-12);
            assert!(stats.accepted);
            assert!(stats.thresholds_ordered);
            assert!(stats.flags.is_empty(), "{:?}", stats.flags);
        }
    }

    #[test]
    fn value_fit_improves() {
        let (mut policy, mut learner, trajs) = setup(Family::Gaussian {
            action_dims: 2,
            init_log_std: 0.0,
        });
        let mut rng = stream(1, Stream::Shuffle);
        let first = learner
            .update(&mut policy, &trajs, &mut rng)
            .unwrap()
            .value_loss
            .unwrap();
        let mut last = first;
        for _ in 0..30 {
            last = learner
                .update(&mut policy, &trajs, &mut rng)
                .unwrap()
                .value_loss
                .unwrap();
        }
        assert!(last < first, "{last} !< {first}");
    }
}
