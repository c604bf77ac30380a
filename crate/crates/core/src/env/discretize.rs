//! Per-dimension discretization of a box action space.
//!
//! Class `k ∈ {1, …, K}` maps to `m + k (M − m) / K`. The grid therefore ends at the upper
//! bound `M` and never contains the lower bound `m`: its smallest point is `m + (M − m)/K`.

use super::{ActionSpace, Environment, Transition};
use crate::policy::Action;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ActionGrid {
    low: Vec<f64>,
    high: Vec<f64>,
    classes: usize,
}

/// Builds the grid for box `[m, M]` (per dimension) with `K` classes per dimension.
pub fn discretize_box(low: &[f64], high: &[f64], classes: usize) -> Result<ActionGrid> {
    if low.len() != high.len() {
        return Err(Error::dim("discretize_box", low.len(), high.len()));
    }
    if low.is_empty() {
        return Err(Error::invalid("low", "at least one dimension is required"));
    }
    if classes < 2 {
        return Err(Error::invalid("classes", "at least 2 classes are required"));
    }
    if let Some(i) =
        (0..low.len()).find(|&i| !(low[i] < high[i]) || !low[i].is_finite() || !high[i].is_finite())
    {
        return Err(Error::invalid(
            "low",
            format!(
                "dimension {i}: need finite m < M, got [{}, {}]",
                low[i], high[i]
            ),
        ));
    }
    Ok(ActionGrid {
        low: low.to_vec(),
        high: high.to_vec(),
        classes,
    })
}

impl ActionGrid {
    pub fn dims(&self) -> usize {
        self.low.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Continuous value of 0-based class `class` in dimension `dim`.
    pub fn value(&self, dim: usize, class: usize) -> f64 {
        let (m, big_m) = (self.low[dim], self.high[dim]);
        m + (class + 1) as f64 * (big_m - m) / self.classes as f64
    }

    pub fn points(&self, dim: usize) -> Vec<f64> {
        (0..self.classes).map(|k| self.value(dim, k)).collect()
    }

    pub fn to_continuous(&self, labels: &[usize]) -> Result<Vec<f64>> {
        if labels.len() != self.dims() {
            return Err(Error::dim("grid labels", self.dims(), labels.len()));
        }
        labels
            .iter()
            .enumerate()
            .map(|(d, &k)| {
                if k >= self.classes {
                    Err(Error::invalid("action", format!("class {k} out of range")))
                } else {
                    Ok(self.value(d, k))
                }
            })
            .collect()
    }

    /// Size of the joint support, `K^d`.
    pub fn joint_support(&self) -> u128 {
        (self.classes as u128).pow(self.dims() as u32)
    }
}

/// Presents a box-action environment as `d` independent ordered label sets.
#[derive(Debug, Clone)]
pub struct Discretized<E> {
    inner: E,
    grid: ActionGrid,
}

impl<E: Environment> Discretized<E> {
    pub fn new(inner: E, classes: usize) -> Result<Self> {
        let ActionSpace::Box { low, high } = inner.action_space() else {
            return Err(Error::invalid(
                "env",
                "only box action spaces can be discretized",
            ));
        };
        let grid = discretize_box(&low, &high, classes)?;
        Ok(Self { inner, grid })
    }

    pub fn grid(&self) -> &ActionGrid {
        &self.grid
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }
}

impl<E: Environment> Environment for Discretized<E> {
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete {
            classes: self.grid.classes(),
            dims: self.grid.dims(),
        }
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        self.inner.reset()
    }

    fn step(&mut self, action: &Action) -> Result<Transition> {
        let labels = action
            .as_discrete()
            .ok_or_else(|| Error::invalid("action", "discretized env expects class labels"))?;
        let continuous = self.grid.to_continuous(labels)?;
        self.inner.step(&Action::Continuous(continuous))
    }
}
