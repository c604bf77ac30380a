//! Continuous target tracking in a box.
//!
//! Each dimension's hidden target follows `A · sin(2π f t / n + φ)` with amplitude, frequency
//! and phase redrawn every episode. The agent observes the target through Gaussian noise
//! plus the normalized time, and is rewarded `−Σ_i (a_i − target_i)²`.

use rand::Rng;
use rand_distr::{Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::{ActionSpace, Environment, StepInfo, Transition};
use crate::policy::Action;
use crate::rng::{stream, Rng as StreamRng, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingConfig {
    pub dims: usize,
    pub episode_len: usize,
    pub low: f64,
    pub high: f64,
    pub amplitude: (f64, f64),
    /// Oscillations per episode.
    pub frequency: (f64, f64),
    pub obs_noise: f64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            dims: 2,
            episode_len: 50,
            low: -1.0,
            high: 1.0,
            amplitude: (0.3, 0.9),
            frequency: (0.5, 1.5),
            obs_noise: 0.05,
        }
    }
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 {
            return Err(Error::config("env.dims", "must be at least 1"));
        }
        if self.episode_len == 0 {
            return Err(Error::config("env.episode_len", "must be at least 1"));
        }
        if !(self.low < self.high) {
            return Err(Error::config("env.low", "low must be below high"));
        }
        if !(self.amplitude.0 <= self.amplitude.1 && self.frequency.0 <= self.frequency.1) {
            return Err(Error::config("env.amplitude", "ranges must be ordered"));
        }
        if !(self.obs_noise >= 0.0) {
            return Err(Error::config("env.obs_noise", "must be non-negative"));
        }
        Ok(())
    }

    /// Expected per-step reward of the constant action 0 (uniform phase):
    /// `−dims · E[A²] / 2` with `A` uniform on the amplitude range.
    pub fn zero_action_mean_reward(&self) -> f64 {
        let (a, b) = self.amplitude;
        let second_moment = if b > a {
            (b.powi(3) - a.powi(3)) / (3.0 * (b - a))
        } else {
            a * a
        };
        -(self.dims as f64) * second_moment / 2.0
    }
}

#[derive(Debug, Clone)]
struct Wave {
    amplitude: f64,
    frequency: f64,
    phase: f64,
}

#[derive(Debug, Clone)]
pub struct TrackingEnv {
    config: TrackingConfig,
    waves: Vec<Wave>,
    t: usize,
    done: bool,
    noisy: Vec<f64>,
    signal_rng: StreamRng,
    noise_rng: StreamRng,
}

impl TrackingEnv {
    pub fn new(config: TrackingConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            waves: Vec::new(),
            t: 0,
            done: true,
            noisy: Vec::new(),
            signal_rng: stream(seed, Stream::EnvSignal),
            noise_rng: stream(seed, Stream::EnvReaction),
            config,
        })
    }

    pub fn config(&self) -> &TrackingConfig {
        &self.config
    }

    /// Hidden target at the current step.
    pub fn target(&self) -> Vec<f64> {
        self.target_at(self.t)
    }

    fn target_at(&self, t: usize) -> Vec<f64> {
        let n = self.config.episode_len as f64;
        self.waves
            .iter()
            .map(|w| {
                w.amplitude
                    * (2.0 * std::f64::consts::PI * w.frequency * t as f64 / n + w.phase).sin()
            })
            .collect()
    }

    fn observe(&mut self) -> Vec<f64> {
        let target = self.target_at(self.t);
        let noise = Normal::new(0.0, self.config.obs_noise).expect("validated noise");
        self.noisy = target
            .iter()
            .map(|x| x + self.noise_rng.sample(noise))
            .collect();
        let mut obs = self.noisy.clone();
        obs.push(self.t as f64 / self.config.episode_len as f64);
        obs
    }
}

impl Environment for TrackingEnv {
    fn obs_dim(&self) -> usize {
        self.config.dims + 1
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Box {
            low: vec![self.config.low; self.config.dims],
            high: vec![self.config.high; self.config.dims],
        }
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        let c = &self.config;
        let amp = Uniform::new_inclusive(c.amplitude.0, c.amplitude.1)
            .map_err(|e| Error::config("env.amplitude", e.to_string()))?;
        let freq = Uniform::new_inclusive(c.frequency.0, c.frequency.1)
            .map_err(|e| Error::config("env.frequency", e.to_string()))?;
        let phase = Uniform::new(0.0, 2.0 * std::f64::consts::PI).expect("valid range");
        self.waves = (0..c.dims)
            .map(|_| Wave {
                amplitude: self.signal_rng.sample(amp),
                frequency: self.signal_rng.sample(freq),
                phase: self.signal_rng.sample(phase),
            })
            .collect();
        self.t = 0;
        self.done = false;
        Ok(self.observe())
    }

    fn step(&mut self, action: &Action) -> Result<Transition> {
        if self.done {
            return Err(Error::Contract(
                "step called on a finished episode; call reset".into(),
            ));
        }
        let a = action
            .as_continuous()
            .ok_or_else(|| Error::invalid("action", "tracking expects a continuous action"))?;
        if a.len() != self.config.dims {
            return Err(Error::dim("tracking action", self.config.dims, a.len()));
        }
        if a.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("action", "NaN action"));
        }
        let target = self.target();
        let mut clipped = false;
        let reward = -a
            .iter()
            .zip(&target)
            .map(|(&x, y)| {
                let c = x.clamp(self.config.low, self.config.high);
                clipped |= c != x;
                (c - y) * (c - y)
            })
            .sum::<f64>();
        self.t += 1;
        self.done = self.t >= self.config.episode_len;
        let observation = self.observe();
        Ok(Transition {
            observation,
            reward,
            done: self.done,
            info: StepInfo {
                reacted: false,
                chosen: None,
                clipped,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_tracking_earns_zero() {
        let mut env = TrackingEnv::new(TrackingConfig::default(), 1).unwrap();
        env.reset().unwrap();
        for _ in 0..50 {
            let tr = env.step(&Action::Continuous(env.target())).unwrap();
            assert_eq!(tr.reward, 0.0);
            assert!(!tr.info.clipped);
        }
    }

    #[test]
    fn zero_action_mean_reward_matches_closed_form() {
        let config = TrackingConfig::default();
        let expected = config.zero_action_mean_reward();
        let mut env = TrackingEnv::new(config, 2).unwrap();
        let (mut sum, mut sum_sq, mut n) = (0.0, 0.0, 0usize);
        for _ in 0..4000 {
            env.reset().unwrap();
            let mut ep = 0.0;
            for _ in 0..50 {
                ep += env
                    .step(&Action::Continuous(vec![0.0, 0.0]))
                    .unwrap()
                    .reward;
            }
            let per_step = ep / 50.0;
            sum += per_step;
            sum_sq += per_step * per_step;
            n += 1;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (mean - expected).abs() < 4.0 * se,
            "{mean} vs {expected} (se {se})"
        );
    }

    #[test]
    fn reward_is_symmetric_under_joint_permutation() {
        let target = [0.2, -0.5, 0.7];
        let action = [0.1, 0.3, -0.2];
        let r = |a: &[f64], t: &[f64]| -> f64 {
            -a.iter().zip(t).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
        };
        let perm = [2, 0, 1];
        let tp: Vec<f64> = perm.iter().map(|&i| target[i]).collect();
        let ap: Vec<f64> = perm.iter().map(|&i| action[i]).collect();
        assert_eq!(r(&action, &target), r(&ap, &tp));
    }

    #[test]
    fn out_of_box_actions_are_clipped_and_flagged() {
        let mut env = TrackingEnv::new(TrackingConfig::default(), 3).unwrap();
        env.reset().unwrap();
        let target = env.target();
        let tr = env.step(&Action::Continuous(vec![5.0, -5.0])).unwrap();
        assert!(tr.info.clipped);
        let expected = -((1.0 - target[0]).powi(2) + (-1.0 - target[1]).powi(2));
        assert!((tr.reward - expected).abs() < 1e-15);
    }

    #[test]
    fn wrong_action_shape_rejected() {
        let mut env = TrackingEnv::new(TrackingConfig::default(), 3).unwrap();
        env.reset().unwrap();
        assert!(env.step(&Action::Continuous(vec![0.0])).is_err());
        assert!(env.step(&Action::discrete(0)).is_err());
    }
}
