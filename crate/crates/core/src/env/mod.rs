//! Environments: the simulated tint-control task, a continuous target-tracking task and a
//! wrapper that discretizes box actions into ordered classes.

mod discretize;
mod tint;
mod tracking;

pub use discretize::{discretize_box, ActionGrid, Discretized};
pub use tint::{
    als_sample_path, next_disagreement, reaction_probability, AlsConfig, AlsSampler, TintEnv,
    TintEnvConfig, UserPolicy,
};
pub use tracking::{TrackingConfig, TrackingEnv};

use crate::policy::Action;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    /// `dims` independent ordered label sets of size `classes`.
    Discrete {
        classes: usize,
        dims: usize,
    },
    Box {
        low: Vec<f64>,
        high: Vec<f64>,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepInfo {
    /// The simulated wearer overrode the proposal.
    pub reacted: bool,
    /// Class actually applied (tint task only).
    pub chosen: Option<usize>,
    /// The continuous action was clipped into the box.
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Episodic environment owning its random streams.
pub trait Environment {
    fn obs_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    /// Starts a new episode and returns the first observation.
    fn reset(&mut self) -> Result<Vec<f64>>;
    fn step(&mut self, action: &Action) -> Result<Transition>;
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn obs_dim(&self) -> usize {
        (**self).obs_dim()
    }

    fn action_space(&self) -> ActionSpace {
        (**self).action_space()
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        (**self).reset()
    }

    fn step(&mut self, action: &Action) -> Result<Transition> {
        (**self).step(action)
    }
}
