//! Simulated electrochromic tint control.
//!
//! The ambient light sensor (ALS) follows a Gaussian process around a diurnal profile. A
//! hidden ordinal user policy `π_U` judges each proposed class; the disagreement score
//! evolves as `Z ← (1 − π_U(a|s))^{γ_r} + γ_d Z`, the wearer overrides the proposal with
//! probability `σ(Z)` by drawing a class from `π_U(·|s)`, and the reward is minus the
//! absolute class difference between proposal and applied class.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ActionSpace, Environment, StepInfo, Transition};
use crate::dist::{ordinal_pmf, sigmoid, Pmf};
use crate::policy::Action;
use crate::rng::{stream, Rng as StreamRng, Stream};
use crate::{Error, Result};

const CHOLESKY_JITTER: f64 = 1e-8;

/// Gaussian-process model of the sensor reading over one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlsConfig {
    /// Reading at dawn and dusk.
    pub base: f64,
    /// Height of the midday bump above `base`.
    pub amplitude: f64,
    /// Marginal standard deviation of the squared-exponential kernel.
    pub kernel_scale: f64,
    /// Length-scale of the kernel, in steps.
    pub length_scale: f64,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self {
            base: 1.0,
            amplitude: 8.0,
            kernel_scale: 1.5,
            length_scale: 6.0,
        }
    }
}

impl AlsConfig {
    /// `base + amplitude · sin(π (t + ½) / n)`
    pub fn mean_profile(&self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|t| {
                self.base
                    + self.amplitude * (std::f64::consts::PI * (t as f64 + 0.5) / n as f64).sin()
            })
            .collect()
    }
}

/// Hidden wearer model: an ordinal policy with a linear score in the sensor reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UserPolicy {
    pub slope: f64,
    pub intercept: f64,
    pub cutpoints: Vec<f64>,
}

impl Default for UserPolicy {
    /// Brighter light pushes toward darker classes; each class is the mode on about a
    /// quarter of the `[0, 10]` reading range.
    fn default() -> Self {
        Self {
            slope: 1.6,
            intercept: 0.0,
            cutpoints: vec![4.0, 8.0, 12.0],
        }
    }
}

impl UserPolicy {
    pub fn pmf(&self, als: f64) -> Result<Pmf> {
        ordinal_pmf(&self.cutpoints, self.slope * als + self.intercept)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TintEnvConfig {
    /// Reaction-shape exponent, `> 0`.
    pub gamma_r: f64,
    /// Disagreement memory in `[0, 1]`.
    pub gamma_d: f64,
    pub episode_len: usize,
    pub classes: usize,
    pub reset_z_on_reaction: bool,
    /// Append normalized time of day to the observation.
    pub include_time: bool,
    pub user: UserPolicy,
    pub als: AlsConfig,
}

impl Default for TintEnvConfig {
    fn default() -> Self {
        Self {
            gamma_r: 0.5,
            gamma_d: 1.0,
            episode_len: 60,
            classes: 4,
            reset_z_on_reaction: true,
            include_time: false,
            user: UserPolicy::default(),
            als: AlsConfig::default(),
        }
    }
}

impl TintEnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_r > 0.0 && self.gamma_r.is_finite()) {
            return Err(Error::config("env.gamma_r", "must be a positive real"));
        }
        if !(0.0..=1.0).contains(&self.gamma_d) {
            return Err(Error::config("env.gamma_d", "must lie in [0, 1]"));
        }
        if self.episode_len == 0 {
            return Err(Error::config("env.episode_len", "must be at least 1"));
        }
        if self.classes < 2 {
            return Err(Error::config("env.classes", "must be at least 2"));
        }
        if self.user.cutpoints.len() + 1 != self.classes {
            return Err(Error::config(
                "env.user.cutpoints",
                format!(
                    "expected {} cut points for {} classes",
                    self.classes - 1,
                    self.classes
                ),
            ));
        }
        if !self.user.cutpoints.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config(
                "env.user.cutpoints",
                "must be strictly increasing",
            ));
        }
        if !(self.user.slope.is_finite() && self.user.intercept.is_finite()) {
            return Err(Error::config("env.user.slope", "must be finite"));
        }
        let als = &self.als;
        if !(als.kernel_scale >= 0.0 && als.length_scale > 0.0) {
            return Err(Error::config(
                "env.als",
                "kernel scale must be >= 0 and length-scale > 0",
            ));
        }
        Ok(())
    }
}

/// Gaussian-process sampler for a fixed grid, with the kernel factorized once.
#[derive(Debug, Clone)]
pub struct AlsSampler {
    mean: Vec<f64>,
    /// Lower Cholesky factor; `None` for a zero-variance kernel.
    chol: Option<DMatrix<f64>>,
}

impl AlsSampler {
    pub fn new(als: &AlsConfig, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "path length must be at least 1"));
        }
        if !(als.kernel_scale >= 0.0 && als.length_scale > 0.0) {
            return Err(Error::invalid(
                "als",
                "kernel scale must be >= 0 and length-scale > 0",
            ));
        }
        let mean = als.mean_profile(n);
        if als.kernel_scale == 0.0 {
            return Ok(Self { mean, chol: None });
        }
        let var = als.kernel_scale * als.kernel_scale;
        let inv_two_l2 = 1.0 / (2.0 * als.length_scale * als.length_scale);
        let kernel = DMatrix::from_fn(n, n, |i, j| {
            let d = i as f64 - j as f64;
            var * (-d * d * inv_two_l2).exp() + if i == j { CHOLESKY_JITTER } else { 0.0 }
        });
        let chol = Cholesky::new(kernel).ok_or_else(|| {
            Error::Numerical("ALS kernel is not positive definite after jitter".into())
        })?;
        Ok(Self {
            mean,
            chol: Some(chol.unpack()),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let Some(l) = &self.chol else {
            return self.mean.iter().map(|m| m.max(0.0)).collect();
        };
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let draw = l * z;
        self.mean
            .iter()
            .zip(draw.iter())
            .map(|(m, e)| (m + e).max(0.0))
            .collect()
    }
}

/// One Gaussian-process draw of the sensor over `n` steps, clipped below at zero.
pub fn als_sample_path<R: Rng + ?Sized>(
    als: &AlsConfig,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(AlsSampler::new(als, n)?.sample(rng))
}

/// `(1 − p_user)^{γ_r} + γ_d · z`
pub fn next_disagreement(z: f64, p_user: f64, gamma_r: f64, gamma_d: f64) -> f64 {
    (1.0 - p_user).max(0.0).powf(gamma_r) + gamma_d * z
}

pub fn reaction_probability(z: f64) -> f64 {
    sigmoid(z)
}

#[derive(Debug, Clone)]
pub struct TintEnv {
    config: TintEnvConfig,
    t: usize,
    z: f64,
    done: bool,
    als_path: Vec<f64>,
    sampler: AlsSampler,
    signal_rng: StreamRng,
    reaction_rng: StreamRng,
}

impl TintEnv {
    pub fn new(config: TintEnvConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            t: 0,
            z: 0.0,
            done: true,
            als_path: Vec::new(),
            sampler: AlsSampler::new(&config.als, config.episode_len)?,
            signal_rng: stream(seed, Stream::EnvSignal),
            reaction_rng: stream(seed, Stream::EnvReaction),
            config,
        })
    }

    pub fn config(&self) -> &TintEnvConfig {
        &self.config
    }

    pub fn disagreement(&self) -> f64 {
        self.z
    }

    pub fn step_index(&self) -> usize {
        self.t
    }

    pub fn als_path(&self) -> &[f64] {
        &self.als_path
    }

    fn observe(&self, t: usize) -> Vec<f64> {
        let t = t.min(self.config.episode_len - 1);
        let mut obs = vec![self.als_path[t]];
        if self.config.include_time {
            let denom = (self.config.episode_len.max(2) - 1) as f64;
            obs.push(t as f64 / denom);
        }
        obs
    }
}

impl Environment for TintEnv {
    fn obs_dim(&self) -> usize {
        1 + usize::from(self.config.include_time)
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete {
            classes: self.config.classes,
            dims: 1,
        }
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        self.als_path = self.sampler.sample(&mut self.signal_rng);
        self.t = 0;
        self.z = 0.0;
        self.done = false;
        Ok(self.observe(0))
    }

    fn step(&mut self, action: &Action) -> Result<Transition> {
        if self.done {
            return Err(Error::Contract(
                "step called on a finished episode; call reset".into(),
            ));
        }
        let proposed = match action.as_discrete() {
            Some([a]) if *a < self.config.classes => *a,
            _ => {
                return Err(Error::invalid(
                    "action",
                    format!("expected one class in 0..{}", self.config.classes),
                ))
            }
        };
        let user = self.config.user.pmf(self.als_path[self.t])?;
        self.z = next_disagreement(
            self.z,
            user.probs()[proposed],
            self.config.gamma_r,
            self.config.gamma_d,
        );
        // both uniforms are drawn every step so the stream stays aligned across policies
        let (u_react, u_class): (f64, f64) =
            (self.reaction_rng.random(), self.reaction_rng.random());
        let reacted = u_react < reaction_probability(self.z);
        let chosen = if reacted {
            let c = user.quantile(u_class);
            if self.config.reset_z_on_reaction {
                self.z = 0.0;
            }
            c
        } else {
            proposed
        };
        let reward = -(proposed.abs_diff(chosen) as f64);
        self.t += 1;
        self.done = self.t >= self.config.episode_len;
        Ok(Transition {
            observation: self.observe(self.t),
            reward,
            done: self.done,
            info: StepInfo {
                reacted,
                chosen: Some(chosen),
                clipped: false,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recurrence_reference_value() {
        let z = next_disagreement(0.0, 0.8, 0.5, 1.0);
        assert!((z - 0.447_213_595_499_957_9).abs() < 1e-15);
        // high-precision value of σ(√0.2)
        assert!((reaction_probability(z) - 0.609_976_537_442_338).abs() < 1e-12);
    }

    #[test]
    fn disagreement_is_monotone_in_user_probability() {
        for &gr in &[0.1, 0.5, 1.0, 3.0] {
            let mut prev = f64::INFINITY;
            for i in 0..=100 {
                let z = next_disagreement(0.7, i as f64 / 100.0, gr, 0.5);
                assert!(z <= prev);
                prev = z;
            }
        }
    }

    #[test]
    fn zero_memory_ignores_history() {
        for hist in [0.0, 0.3, 5.0, 100.0] {
            assert_eq!(next_disagreement(hist, 0.4, 0.5, 0.0), 0.6f64.powf(0.5));
        }
    }

    #[test]
    fn default_episode_has_sixty_steps() {
        let mut env = TintEnv::new(TintEnvConfig::default(), 1).unwrap();
        assert_eq!(env.config().episode_len, 60);
        env.reset().unwrap();
        assert_eq!(env.disagreement(), 0.0);
        let mut steps = 0;
        loop {
            let tr = env.step(&Action::discrete(1)).unwrap();
            steps += 1;
            assert!([-3.0, -2.0, -1.0, 0.0].contains(&tr.reward));
            if !tr.info.reacted {
                assert_eq!(tr.reward, 0.0);
            }
            if tr.done {
                break;
            }
        }
        assert_eq!(steps, 60);
        assert!(matches!(
            env.step(&Action::discrete(1)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn step_before_reset_is_a_contract_error() {
        let mut env = TintEnv::new(TintEnvConfig::default(), 1).unwrap();
        assert!(matches!(
            env.step(&Action::discrete(0)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn reset_is_deterministic_per_seed() {
        let mut a = TintEnv::new(TintEnvConfig::default(), 42).unwrap();
        let mut b = TintEnv::new(TintEnvConfig::default(), 42).unwrap();
        assert_eq!(a.reset().unwrap(), b.reset().unwrap());
        assert_eq!(a.als_path(), b.als_path());
        let mut c = TintEnv::new(TintEnvConfig::default(), 43).unwrap();
        c.reset().unwrap();
        assert_ne!(a.als_path(), c.als_path());
    }

    #[test]
    fn worst_case_reward_is_minus_three() {
        // a wearer who always picks the lightest class
        let config = TintEnvConfig {
            user: UserPolicy {
                slope: 0.0,
                intercept: -60.0,
                cutpoints: vec![4.0, 8.0, 12.0],
            },
            ..TintEnvConfig::default()
        };
        let mut env = TintEnv::new(config, 3).unwrap();
        env.reset().unwrap();
        let mut seen_reaction = false;
        for _ in 0..60 {
            let tr = env.step(&Action::discrete(3)).unwrap();
            if tr.info.reacted {
                seen_reaction = true;
                assert_eq!(tr.info.chosen, Some(0));
                assert_eq!(tr.reward, -3.0);
            }
        }
        assert!(seen_reaction);
    }

    #[test]
    fn degenerate_kernel_returns_mean_profile() {
        let als = AlsConfig {
            kernel_scale: 0.0,
            ..AlsConfig::default()
        };
        let path = als_sample_path(&als, 60, &mut stream(0, Stream::EnvSignal)).unwrap();
        assert_eq!(path, als.mean_profile(60));
    }

    #[test]
    fn gp_marginal_mean_matches_profile() {
        // no clipping: lift the profile well above zero
        let als = AlsConfig {
            base: 2.0,
            ..AlsConfig::default()
        };
        let n = 60;
        let draws = 10_000;
        let idx = 17;
        let mut rng = stream(5, Stream::EnvSignal);
        let sampler = AlsSampler::new(&als, n).unwrap();
        let mut acc = 0.0;
        for _ in 0..draws {
            acc += sampler.sample(&mut rng)[idx];
        }
        let mean = acc / draws as f64;
        let target = als.mean_profile(n)[idx];
        assert!((mean - target).abs() < 4.0 * als.kernel_scale / 100.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            TintEnvConfig {
                gamma_r: 0.0,
                ..Default::default()
            },
            TintEnvConfig {
                gamma_d: 1.5,
                ..Default::default()
            },
            TintEnvConfig {
                episode_len: 0,
                ..Default::default()
            },
            TintEnvConfig {
                user: UserPolicy {
                    cutpoints: vec![1.0, 1.0, 2.0],
                    ..Default::default()
                },
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config { .. })));
        }
    }

    #[test]
    fn identical_seeds_give_identical_trajectories() {
        let run = |seed| {
            let mut env = TintEnv::new(TintEnvConfig::default(), seed).unwrap();
            let mut out = Vec::new();
            for _ in 0..3 {
                env.reset().unwrap();
                for t in 0..60 {
                    let tr = env.step(&Action::discrete(t % 4)).unwrap();
                    out.push((tr.observation, tr.reward.to_bits(), tr.info.chosen));
                }
            }
            out
        };
        assert_eq!(run(8), run(8));
    }
}
