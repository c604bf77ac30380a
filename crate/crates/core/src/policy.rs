//! Parametric stochastic policies.
//!
//! A [`Policy`] pairs a score-function torso with a distribution head. All learnable
//! quantities are exposed as one flat vector laid out as `[torso weights | head parameters]`:
//!
//! - ordinal: torso outputs one score per action dimension; the head holds `K − 1` raw
//!   threshold parameters per dimension,
//! - softmax: torso outputs `K` logits; no head parameters,
//! - gaussian: torso outputs the mean per action dimension; the head holds one
//!   state-independent log standard deviation per dimension.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{
    decode_blob, encode_blob, Activations, BlobHeader, ScoreFunction, ScoreKind, Shape,
    POLICY_FINAL_GAIN,
};
use crate::dist::{
    ordinal::{backprop_raw, log_prob_grad_tau, materialize, ordinal_pmf_unchecked},
    softmax_pmf, GaussianHead, Pmf, Thresholds,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// Cumulative-logit policy with `classes` ordered actions per dimension.
    Ordinal {
        classes: usize,
        #[serde(default = "one")]
        action_dims: usize,
    },
    Softmax {
        classes: usize,
    },
    Gaussian {
        action_dims: usize,
        #[serde(default)]
        init_log_std: f64,
    },
}

fn one() -> usize {
    1
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Ordinal { action_dims: 1, .. } => "ordinal",
            Family::Ordinal { .. } => "discretized_ordinal",
            Family::Softmax { .. } => "softmax",
            Family::Gaussian { .. } => "gaussian",
        }
    }

    pub fn action_dims(&self) -> usize {
        match *self {
            Family::Ordinal { action_dims, .. } | Family::Gaussian { action_dims, .. } => {
                action_dims
            }
            Family::Softmax { .. } => 1,
        }
    }

    /// Classes per action dimension, `None` for continuous families.
    pub fn classes(&self) -> Option<usize> {
        match *self {
            Family::Ordinal { classes, .. } | Family::Softmax { classes } => Some(classes),
            Family::Gaussian { .. } => None,
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self, Family::Gaussian { .. })
    }

    fn torso_output(&self) -> usize {
        match *self {
            Family::Ordinal { action_dims, .. } | Family::Gaussian { action_dims, .. } => {
                action_dims
            }
            Family::Softmax { classes } => classes,
        }
    }

    fn head_len(&self) -> usize {
        match *self {
            Family::Ordinal {
                classes,
                action_dims,
            } => action_dims * (classes - 1),
            Family::Softmax { .. } => 0,
            Family::Gaussian { action_dims, .. } => action_dims,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Family::Ordinal {
                classes,
                action_dims,
            } => {
                if classes < 2 {
                    return Err(Error::invalid(
                        "classes",
                        "ordinal policies need at least 2 classes",
                    ));
                }
                if action_dims == 0 {
                    return Err(Error::invalid("action_dims", "must be positive"));
                }
            }
            Family::Softmax { classes } => {
                if classes < 2 {
                    return Err(Error::invalid(
                        "classes",
                        "softmax policies need at least 2 classes",
                    ));
                }
            }
            Family::Gaussian {
                action_dims,
                init_log_std,
            } => {
                if action_dims == 0 {
                    return Err(Error::invalid("action_dims", "must be positive"));
                }
                if !init_log_std.is_finite() {
                    return Err(Error::invalid("init_log_std", "must be finite"));
                }
            }
        }
        Ok(())
    }

    fn code(&self) -> u8 {
        match self {
            Family::Ordinal { .. } => 1,
            Family::Softmax { .. } => 2,
            Family::Gaussian { .. } => 3,
        }
    }
}

/// Architecture of a policy: family, torso kind and dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    #[serde(flatten)]
    pub family: Family,
    pub torso: ScoreKind,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    pub obs_dim: usize,
}

fn default_hidden() -> usize {
    crate::approx::DEFAULT_HIDDEN
}

impl PolicySpec {
    fn shape(&self) -> Shape {
        Shape::new(self.obs_dim, self.hidden, self.family.torso_output())
    }
}

/// One action: class indices (0-based, one per dimension) or a real vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(Vec<usize>),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn discrete(class: usize) -> Self {
        Action::Discrete(vec![class])
    }

    pub fn as_discrete(&self) -> Option<&[usize]> {
        match self {
            Action::Discrete(v) => Some(v),
            Action::Continuous(_) => None,
        }
    }

    pub fn as_continuous(&self) -> Option<&[f64]> {
        match self {
            Action::Continuous(v) => Some(v),
            Action::Discrete(_) => None,
        }
    }
}

/// Distribution over actions at one state.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionDist {
    /// One independent categorical per action dimension.
    Categorical(Vec<Pmf>),
    Gaussian(GaussianHead),
}

impl ActionDist {
    pub fn log_prob(&self, action: &Action) -> Result<f64> {
        match (self, action) {
            (ActionDist::Categorical(pmfs), Action::Discrete(a)) => {
                if a.len() != pmfs.len() {
                    return Err(Error::dim("action dimensions", pmfs.len(), a.len()));
                }
                pmfs.iter()
                    .zip(a)
                    .map(|(p, &c)| {
                        p.log_probs().get(c).copied().ok_or_else(|| {
                            Error::invalid("action", format!("class {c} out of range"))
                        })
                    })
                    .sum()
            }
            (ActionDist::Gaussian(h), Action::Continuous(a)) => h.log_prob(a),
            _ => Err(Error::invalid(
                "action",
                "action kind does not match the distribution",
            )),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        match self {
            ActionDist::Categorical(pmfs) => {
                Action::Discrete(pmfs.iter().map(|p| p.sample(rng)).collect())
            }
            ActionDist::Gaussian(h) => Action::Continuous(h.sample(rng)),
        }
    }

    /// Most probable action (per-dimension mode, or the Gaussian mean).
    pub fn greedy(&self) -> Action {
        match self {
            ActionDist::Categorical(pmfs) => Action::Discrete(pmfs.iter().map(Pmf::mode).collect()),
            ActionDist::Gaussian(h) => Action::Continuous(h.mean.clone()),
        }
    }

    pub fn entropy(&self) -> f64 {
        match self {
            ActionDist::Categorical(pmfs) => pmfs.iter().map(Pmf::entropy).sum(),
            ActionDist::Gaussian(h) => h.entropy(),
        }
    }

    /// `KL(self ‖ other)`, summed over independent dimensions.
    pub fn kl(&self, other: &ActionDist) -> Result<f64> {
        match (self, other) {
            (ActionDist::Categorical(p), ActionDist::Categorical(q)) => {
                if p.len() != q.len() {
                    return Err(Error::dim("ActionDist::kl", p.len(), q.len()));
                }
                p.iter().zip(q).map(|(a, b)| a.kl(b)).sum()
            }
            (ActionDist::Gaussian(p), ActionDist::Gaussian(q)) => p.kl(q),
            _ => Err(Error::invalid(
                "dist",
                "cannot compare distributions of different kinds",
            )),
        }
    }
}

/// Outcome of a log-probability gradient evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogProbEval {
    pub log_prob: f64,
    /// Some class probability fell below the log floor.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    spec: PolicySpec,
    torso: ScoreFunction,
    head: Vec<f64>,
}

impl Policy {
    /// Fresh policy. Ordinal thresholds start at the logistic quantiles of a uniform pmf;
    /// Gaussian log standard deviations start at `init_log_std`.
    pub fn new<R: Rng + ?Sized>(spec: PolicySpec, rng: &mut R) -> Result<Self> {
        spec.family.validate()?;
        let torso = ScoreFunction::init(spec.torso, spec.shape(), POLICY_FINAL_GAIN, rng)?;
        let head = match spec.family {
            Family::Ordinal {
                classes,
                action_dims,
            } => {
                let t = Thresholds::uniform(classes)?;
                t.raw().repeat(action_dims)
            }
            Family::Softmax { .. } => Vec::new(),
            Family::Gaussian {
                action_dims,
                init_log_std,
            } => vec![init_log_std; action_dims],
        };
        Ok(Self { spec, torso, head })
    }

    pub fn from_params(spec: PolicySpec, params: &[f64]) -> Result<Self> {
        spec.family.validate()?;
        let mut p = Self {
            spec,
            torso: ScoreFunction::zeros(spec.torso, spec.shape())?,
            head: vec![0.0; spec.family.head_len()],
        };
        p.set_params(params)?;
        Ok(p)
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn obs_dim(&self) -> usize {
        self.spec.obs_dim
    }

    pub fn torso(&self) -> &ScoreFunction {
        &self.torso
    }

    pub fn num_params(&self) -> usize {
        self.torso.param_count() + self.head.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.torso.weights().to_vec();
        p.extend_from_slice(&self.head);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::dim(
                "Policy::set_params",
                self.num_params(),
                params.len(),
            ));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("params", "must be finite"));
        }
        let n = self.torso.param_count();
        self.torso.set_weights(&params[..n])?;
        self.head.copy_from_slice(&params[n..]);
        Ok(())
    }

    /// Cut points of the ordinal head for one action dimension.
    pub fn cutpoints(&self, dim: usize) -> Option<Vec<f64>> {
        match self.spec.family {
            Family::Ordinal {
                classes,
                action_dims,
            } if dim < action_dims => {
                let m = classes - 1;
                Some(materialize(&self.head[dim * m..(dim + 1) * m]))
            }
            _ => None,
        }
    }

    /// True when every ordinal head has strictly increasing cut points (vacuous otherwise).
    pub fn thresholds_ordered(&self) -> bool {
        (0..self.spec.family.action_dims())
            .filter_map(|d| self.cutpoints(d))
            .all(|tau| tau.windows(2).all(|w| w[0] < w[1]) && tau.iter().all(|t| t.is_finite()))
    }

    fn dist_from_output(&self, out: &[f64]) -> Result<ActionDist> {
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite torso output".into()));
        }
        Ok(match self.spec.family {
            Family::Ordinal { classes, .. } => {
                let m = classes - 1;
                ActionDist::Categorical(
                    out.iter()
                        .enumerate()
                        .map(|(d, &g)| {
                            ordinal_pmf_unchecked(&materialize(&self.head[d * m..(d + 1) * m]), g)
                        })
                        .collect(),
                )
            }
            Family::Softmax { .. } => ActionDist::Categorical(vec![softmax_pmf(out)?]),
            Family::Gaussian { .. } => {
                ActionDist::Gaussian(GaussianHead::new(out.to_vec(), self.head.clone())?)
            }
        })
    }

    pub fn distribution(&self, obs: &[f64]) -> Result<ActionDist> {
        let out = self.torso.forward(obs)?;
        self.dist_from_output(&out)
    }

    /// Samples an action and returns it with its log-probability.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(Action, f64)> {
        let dist = self.distribution(obs)?;
        let a = dist.sample(rng);
        let lp = dist.log_prob(&a)?;
        Ok((a, lp))
    }

    pub fn log_prob(&self, obs: &[f64], action: &Action) -> Result<f64> {
        self.distribution(obs)?.log_prob(action)
    }

    /// Accumulates `scale · ∇θ ln π(action | obs)` into `grad`.
    pub fn accumulate_log_prob_grad(
        &self,
        obs: &[f64],
        action: &Action,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<LogProbEval> {
        if grad.len() != self.num_params() {
            return Err(Error::dim(
                "Policy gradient buffer",
                self.num_params(),
                grad.len(),
            ));
        }
        let acts = self.torso.forward_cached(obs)?;
        let n = self.torso.param_count();
        let (g_torso, g_head) = grad.split_at_mut(n);
        let mut upstream = vec![0.0; acts.output.len()];
        let eval = self.head_log_prob_grad(&acts.output, action, scale, &mut upstream, g_head)?;
        self.torso.backward_into(obs, &acts, &upstream, g_torso)?;
        Ok(eval)
    }

    fn head_log_prob_grad(
        &self,
        out: &[f64],
        action: &Action,
        scale: f64,
        upstream: &mut [f64],
        g_head: &mut [f64],
    ) -> Result<LogProbEval> {
        match (self.spec.family, action) {
            (
                Family::Ordinal {
                    classes,
                    action_dims,
                },
                Action::Discrete(a),
            ) => {
                if a.len() != action_dims {
                    return Err(Error::dim("ordinal action", action_dims, a.len()));
                }
                let m = classes - 1;
                let mut log_prob = 0.0;
                let mut clamped = false;
                for (d, &class) in a.iter().enumerate() {
                    if class >= classes {
                        return Err(Error::invalid(
                            "action",
                            format!("class {class} out of range"),
                        ));
                    }
                    let raw = &self.head[d * m..(d + 1) * m];
                    let (lp, d_g, d_tau, c) = log_prob_grad_tau(&materialize(raw), out[d], class);
                    log_prob += lp;
                    clamped |= c;
                    upstream[d] = scale * d_g;
                    for (g, v) in g_head[d * m..(d + 1) * m]
                        .iter_mut()
                        .zip(backprop_raw(raw, &d_tau))
                    {
                        *g += scale * v;
                    }
                }
                Ok(LogProbEval { log_prob, clamped })
            }
            (Family::Softmax { classes }, Action::Discrete(a)) => {
                if a.len() != 1 {
                    return Err(Error::dim("softmax action", 1, a.len()));
                }
                if a[0] >= classes {
                    return Err(Error::invalid(
                        "action",
                        format!("class {} out of range", a[0]),
                    ));
                }
                let pmf = softmax_pmf(out)?;
                for (u, p) in upstream.iter_mut().zip(pmf.probs()) {
                    *u = -scale * p;
                }
                upstream[a[0]] += scale;
                Ok(LogProbEval {
                    log_prob: pmf.log_probs()[a[0]],
                    clamped: false,
                })
            }
            (Family::Gaussian { .. }, Action::Continuous(a)) => {
                let head = GaussianHead::new(out.to_vec(), self.head.clone())?;
                let g = head.log_prob_grad(a)?;
                for (u, v) in upstream.iter_mut().zip(&g.d_mean) {
                    *u = scale * v;
                }
                for (h, v) in g_head.iter_mut().zip(&g.d_log_std) {
                    *h += scale * v;
                }
                Ok(LogProbEval {
                    log_prob: g.log_prob,
                    clamped: false,
                })
            }
            _ => Err(Error::invalid(
                "action",
                "action kind does not match the policy family",
            )),
        }
    }

    /// Accumulates the Fisher-vector product at one state, `E_a[∇ln π ∇ln πᵀ] v`, into `out`.
    ///
    /// The expectation is exact: a sum over classes for discrete heads and the closed form
    /// for the Gaussian head.
    pub fn accumulate_fisher_product(&self, obs: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        let np = self.num_params();
        if v.len() != np {
            return Err(Error::dim("Fisher tangent", np, v.len()));
        }
        if out.len() != np {
            return Err(Error::dim("Fisher output", np, out.len()));
        }
        let n = self.torso.param_count();
        let acts = self.torso.forward_cached(obs)?;
        let w_out = self.torso.jvp(obs, &acts, &v[..n])?;
        let (out_torso, out_head) = out.split_at_mut(n);
        let y_out = self.head_fisher(&acts, &w_out, &v[n..], out_head)?;
        self.torso.backward_into(obs, &acts, &y_out, out_torso)
    }

    /// Fisher of the head distribution in (torso output, head parameter) coordinates
    /// applied to `(w_out, w_head)`; the head part is accumulated into `y_head`.
    fn head_fisher(
        &self,
        acts: &Activations,
        w_out: &[f64],
        w_head: &[f64],
        y_head: &mut [f64],
    ) -> Result<Vec<f64>> {
        let out = &acts.output;
        let mut y_out = vec![0.0; out.len()];
        match self.spec.family {
            Family::Ordinal { classes, .. } => {
                let m = classes - 1;
                for (d, &g) in out.iter().enumerate() {
                    let raw = &self.head[d * m..(d + 1) * m];
                    let tau = materialize(raw);
                    let pmf = ordinal_pmf_unchecked(&tau, g);
                    let wr = &w_head[d * m..(d + 1) * m];
                    for (a, p) in pmf.probs().iter().enumerate() {
                        if *p == 0.0 {
                            continue;
                        }
                        let (_, d_g, d_tau, _) = log_prob_grad_tau(&tau, g, a);
                        let d_raw = backprop_raw(raw, &d_tau);
                        let c =
                            d_g * w_out[d] + d_raw.iter().zip(wr).map(|(x, y)| x * y).sum::<f64>();
                        y_out[d] += p * c * d_g;
                        for (yh, dr) in y_head[d * m..(d + 1) * m].iter_mut().zip(&d_raw) {
                            *yh += p * c * dr;
                        }
                    }
                }
            }
            Family::Softmax { .. } => {
                let pmf = softmax_pmf(out)?;
                let p = pmf.probs();
                let pw: f64 = p.iter().zip(w_out).map(|(a, b)| a * b).sum();
                for (i, y) in y_out.iter_mut().enumerate() {
                    *y = p[i] * (w_out[i] - pw);
                }
            }
            Family::Gaussian { .. } => {
                for (i, y) in y_out.iter_mut().enumerate() {
                    *y = w_out[i] * (-2.0 * self.head[i]).exp();
                }
                for (yh, wh) in y_head.iter_mut().zip(w_head) {
                    *yh += 2.0 * wh;
                }
            }
        }
        Ok(y_out)
    }

    pub fn to_blob(&self) -> Vec<u8> {
        let (classes, dims) = match self.spec.family {
            Family::Ordinal {
                classes,
                action_dims,
            } => (classes, action_dims),
            Family::Softmax { classes } => (classes, 1),
            Family::Gaussian { action_dims, .. } => (0, action_dims),
        };
        let header = BlobHeader {
            family: self.spec.family.code(),
            kind: crate::approx::blob_kind_code(self.spec.torso),
            hidden: self.spec.hidden as u16,
            input: self.spec.obs_dim as u16,
            output: self.spec.family.torso_output() as u16,
            classes: classes as u16,
            action_dims: dims as u16,
        };
        encode_blob(&header, &self.params())
    }

    pub fn from_blob(bytes: &[u8]) -> Result<Self> {
        let (header, params) = decode_blob(bytes)?;
        let (torso, shape) = header.score()?;
        let family = match header.family {
            1 => Family::Ordinal {
                classes: header.classes as usize,
                action_dims: header.action_dims as usize,
            },
            2 => Family::Softmax {
                classes: header.classes as usize,
            },
            3 => Family::Gaussian {
                action_dims: header.action_dims as usize,
                init_log_std: 0.0,
            },
            f => {
                return Err(Error::Checkpoint(format!(
                    "blob family {f} is not a policy"
                )))
            }
        };
        let spec = PolicySpec {
            family,
            torso,
            hidden: shape.hidden,
            obs_dim: shape.input,
        };
        if spec.family.torso_output() != shape.output {
            return Err(Error::Checkpoint(
                "torso output does not match the policy head".into(),
            ));
        }
        Self::from_params(spec, &params)
    }
}
