use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Trailing moving average over full windows only: `out[i] = mean(xs[i .. i + window])`, so
/// the output has `len − window + 1` entries.
pub fn moving_average(xs: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::invalid("window", "must be at least 1"));
    }
    if window > xs.len() {
        return Err(Error::invalid(
            "window",
            format!("window {window} exceeds series length {}", xs.len()),
        ));
    }
    let mut out = Vec::with_capacity(xs.len() + 1 - window);
    let mut sum: f64 = xs[..window].iter().sum();
    out.push(sum / window as f64);
    for i in window..xs.len() {
        sum += xs[i] - xs[i - window];
        out.push(sum / window as f64);
    }
    Ok(out)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation; zero for a single value.
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Per-episode training returns of one (policy, optimizer) cell across seeds, with the
/// cross-seed mean and standard deviation of the per-seed smoothed curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub policy: String,
    pub optimizer: String,
    pub window: usize,
    pub seeds: Vec<u64>,
    /// `returns[i][e]`: total reward of episode `e` under seed `seeds[i]`.
    pub returns: Vec<Vec<f64>>,
    /// Mean over seeds of the smoothed curves; entry `j` covers episodes `j ..= j + window − 1`.
    pub smoothed_mean: Vec<f64>,
    /// Standard deviation over seeds of the smoothed curves.
    pub smoothed_std: Vec<f64>,
}

impl LearningCurve {
    pub fn new(
        policy: impl Into<String>,
        optimizer: impl Into<String>,
        window: usize,
        runs: Vec<(u64, Vec<f64>)>,
    ) -> Result<Self> {
        let Some(first) = runs.first() else {
            return Err(Error::invalid("runs", "at least one seed is required"));
        };
        let episodes = first.1.len();
        if let Some((seed, r)) = runs.iter().find(|(_, r)| r.len() != episodes) {
            return Err(Error::invalid(
                "runs",
                format!("seed {seed} has {} episodes, expected {episodes}", r.len()),
            ));
        }
        let smoothed = runs
            .iter()
            .map(|(_, r)| moving_average(r, window))
            .collect::<Result<Vec<_>>>()?;
        let len = smoothed[0].len();
        let mut smoothed_mean = Vec::with_capacity(len);
        let mut smoothed_std = Vec::with_capacity(len);
        let mut column = vec![0.0; smoothed.len()];
        for j in 0..len {
            for (c, s) in column.iter_mut().zip(&smoothed) {
                *c = s[j];
            }
            smoothed_mean.push(mean(&column));
            smoothed_std.push(std_dev(&column));
        }
        let (seeds, returns) = runs.into_iter().unzip();
        Ok(Self {
            policy: policy.into(),
            optimizer: optimizer.into(),
            window,
            seeds,
            returns,
            smoothed_mean,
            smoothed_std,
        })
    }

    pub fn episodes(&self) -> usize {
        self.returns[0].len()
    }

    /// Number of trailing smoothed points that end in the last quarter of the episodes.
    fn quarter(&self) -> usize {
        (self.episodes() / 4).clamp(1, self.smoothed_mean.len())
    }

    fn tail<'a>(&self, xs: &'a [f64]) -> &'a [f64] {
        &xs[xs.len() - self.quarter()..]
    }

    /// Final-quarter mean of each seed's smoothed curve, aligned with `seeds`.
    pub fn final_quarter_means(&self) -> Vec<f64> {
        self.returns
            .iter()
            .map(|r| mean(self.tail(&moving_average(r, self.window).expect("validated in new"))))
            .collect()
    }

    /// Final-quarter mean of the cross-seed mean curve.
    pub fn final_quarter_mean(&self) -> f64 {
        mean(self.tail(&self.smoothed_mean))
    }

    /// Cross-seed standard deviation averaged over the final quarter.
    pub fn final_quarter_std(&self) -> f64 {
        mean(self.tail(&self.smoothed_std))
    }

    /// 1-based episode at which the smoothed mean first reaches `level`.
    pub fn episodes_to_reach(&self, level: f64) -> Option<usize> {
        self.smoothed_mean
            .iter()
            .position(|v| *v >= level)
            .map(|j| j + self.window)
    }
}

/// Headline numbers of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub policy: String,
    pub optimizer: String,
    pub window: usize,
    pub seeds: Vec<u64>,
    pub final_quarter_means: Vec<f64>,
    pub final_quarter_mean: f64,
    pub final_quarter_std: f64,
}

impl From<&LearningCurve> for CellSummary {
    fn from(c: &LearningCurve) -> Self {
        Self {
            policy: c.policy.clone(),
            optimizer: c.optimizer.clone(),
            window: c.window,
            seeds: c.seeds.clone(),
            final_quarter_means: c.final_quarter_means(),
            final_quarter_mean: c.final_quarter_mean(),
            final_quarter_std: c.final_quarter_std(),
        }
    }
}

/// Comparison of cell `a` against cell `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: CellSummary,
    pub b: CellSummary,
    /// `a − b` on the final-quarter smoothed mean.
    pub final_mean_difference: f64,
    /// Level used for the convergence-speed metric.
    pub threshold: f64,
    pub a_episodes_to_threshold: Option<usize>,
    pub b_episodes_to_threshold: Option<usize>,
    /// Seeds present in both cells.
    pub paired_seeds: Vec<u64>,
    /// Per paired seed, `a − b` on the final-quarter smoothed mean.
    pub paired_differences: Vec<f64>,
    pub a_better: usize,
    pub b_better: usize,
    pub ties: usize,
}

/// Compares two cells. `threshold` defaults to the midpoint of both final-quarter plateaus.
pub fn compare_policies(
    a: &LearningCurve,
    b: &LearningCurve,
    threshold: Option<f64>,
) -> Result<Comparison> {
    if a.episodes() != b.episodes() {
        return Err(Error::invalid(
            "curves",
            format!(
                "episode counts differ: {} vs {}",
                a.episodes(),
                b.episodes()
            ),
        ));
    }
    if a.window != b.window {
        return Err(Error::invalid(
            "curves",
            format!("smoothing windows differ: {} vs {}", a.window, b.window),
        ));
    }
    let (sa, sb) = (CellSummary::from(a), CellSummary::from(b));
    let threshold = threshold.unwrap_or(0.5 * (sa.final_quarter_mean + sb.final_quarter_mean));
    let mut paired_seeds = Vec::new();
    let mut paired_differences = Vec::new();
    for (i, seed) in sa.seeds.iter().enumerate() {
        if let Some(j) = sb.seeds.iter().position(|s| s == seed) {
            paired_seeds.push(*seed);
            paired_differences.push(sa.final_quarter_means[i] - sb.final_quarter_means[j]);
        }
    }
    let count = |f: fn(f64) -> bool| paired_differences.iter().filter(|d| f(**d)).count();
    Ok(Comparison {
        final_mean_difference: sa.final_quarter_mean - sb.final_quarter_mean,
        threshold,
        a_episodes_to_threshold: a.episodes_to_reach(threshold),
        b_episodes_to_threshold: b.episodes_to_reach(threshold),
        a_better: count(|d| d > 0.0),
        b_better: count(|d| d < 0.0),
        ties: count(|d| d == 0.0),
        paired_seeds,
        paired_differences,
        a: sa,
        b: sb,
    })
}
