//! Score functions `S → R^D` with hand-written reverse- and forward-mode derivatives.
//!
//! Two fixed architectures are supported: an affine map and a two-hidden-layer tanh MLP.
//! All weights live in one flat vector so that optimizers can treat them uniformly.

mod blob;

pub use blob::{
    decode_blob, encode_blob, kind_code as blob_kind_code, BlobHeader, BLOB_HEADER_LEN, BLOB_MAGIC,
};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Hidden width used when a config does not specify one.
pub const DEFAULT_HIDDEN: usize = 64;
/// Gain of the output layer at initialization for policy torsos.
pub const POLICY_FINAL_GAIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Linear,
    Mlp2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub input: usize,
    /// Ignored for [`ScoreKind::Linear`].
    pub hidden: usize,
    pub output: usize,
}

impl Shape {
    pub fn new(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
        }
    }

    pub fn param_count(&self, kind: ScoreKind) -> usize {
        let (i, h, o) = (self.input, self.hidden, self.output);
        match kind {
            ScoreKind::Linear => o * i + o,
            ScoreKind::Mlp2 => h * i + h + h * h + h + o * h + o,
        }
    }

    fn validate(&self, kind: ScoreKind) -> Result<()> {
        if self.input == 0 {
            return Err(Error::invalid("shape.input", "must be positive"));
        }
        if self.output == 0 {
            return Err(Error::invalid("shape.output", "must be positive"));
        }
        if kind == ScoreKind::Mlp2 && self.hidden == 0 {
            return Err(Error::invalid("shape.hidden", "must be positive for mlp2"));
        }
        Ok(())
    }
}

/// Intermediate values of one forward pass, needed by [`ScoreFunction::backward_into`]
/// and [`ScoreFunction::jvp`].
#[derive(Debug, Clone, Default)]
pub struct Activations {
    h1: Vec<f64>,
    h2: Vec<f64>,
    pub output: Vec<f64>,
}

/// Accumulated gradient aligned with a parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub grad: Vec<f64>,
    pub loss: f64,
}

impl GradientTape {
    pub fn new(len: usize) -> Self {
        Self {
            grad: vec![0.0; len],
            loss: 0.0,
        }
    }

    pub fn reset(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        self.loss = 0.0;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFunction {
    kind: ScoreKind,
    shape: Shape,
    weights: Vec<f64>,
}

/// Offsets of each block inside the flat weight vector.
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
}

impl Layout {
    fn mlp2(s: &Shape) -> Self {
        let (i, h, o) = (s.input, s.hidden, s.output);
        let w1 = 0;
        let b1 = w1 + h * i;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + o * h;
        debug_assert_eq!(b3 + o, s.param_count(ScoreKind::Mlp2));
        Self {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
        }
    }
}

/// `out = W x + b` for a row-major `W` of shape `(rows, x.len())`.
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>) {
    let n = x.len();
    out.clear();
    out.extend(b.iter().enumerate().map(|(r, bias)| {
        bias + w[r * n..(r + 1) * n]
            .iter()
            .zip(x)
            .map(|(a, b)| a * b)
            .sum::<f64>()
    }));
}

/// `dx = Wᵀ dy`
fn affine_transpose(w: &[f64], dy: &[f64], cols: usize) -> Vec<f64> {
    let mut dx = vec![0.0; cols];
    for (r, d) in dy.iter().enumerate() {
        if *d == 0.0 {
            continue;
        }
        for (c, wx) in w[r * cols..(r + 1) * cols].iter().enumerate() {
            dx[c] += wx * d;
        }
    }
    dx
}

/// Accumulates `dW += dy xᵀ`, `db += dy`.
fn affine_param_grad(dy: &[f64], x: &[f64], dw: &mut [f64], db: &mut [f64]) {
    let n = x.len();
    for (r, d) in dy.iter().enumerate() {
        if *d == 0.0 {
            continue;
        }
        db[r] += d;
        for (g, xi) in dw[r * n..(r + 1) * n].iter_mut().zip(x) {
            *g += d * xi;
        }
    }
}

impl ScoreFunction {
    pub fn from_weights(kind: ScoreKind, shape: Shape, weights: Vec<f64>) -> Result<Self> {
        shape.validate(kind)?;
        let expected = shape.param_count(kind);
        if weights.len() != expected {
            return Err(Error::dim("ScoreFunction weights", expected, weights.len()));
        }
        Ok(Self {
            kind,
            shape,
            weights,
        })
    }

    pub fn zeros(kind: ScoreKind, shape: Shape) -> Result<Self> {
        shape.validate(kind)?;
        Self::from_weights(kind, shape, vec![0.0; shape.param_count(kind)])
    }

    /// Linear functions start at zero. MLP hidden layers get orthogonal weights with gain
    /// √2 and the output layer gets orthogonal weights scaled by `final_gain`; biases are zero.
    pub fn init<R: Rng + ?Sized>(
        kind: ScoreKind,
        shape: Shape,
        final_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut f = Self::zeros(kind, shape)?;
        if kind == ScoreKind::Mlp2 {
            let l = Layout::mlp2(&shape);
            let (i, h, o) = (shape.input, shape.hidden, shape.output);
            let gain = 2f64.sqrt();
            f.weights[l.w1..l.b1].copy_from_slice(&orthogonal(h, i, gain, rng));
            f.weights[l.w2..l.b2].copy_from_slice(&orthogonal(h, h, gain, rng));
            f.weights[l.w3..l.b3].copy_from_slice(&orthogonal(o, h, final_gain, rng));
        }
        Ok(f)
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, w: &[f64]) -> Result<()> {
        if w.len() != self.weights.len() {
            return Err(Error::dim(
                "ScoreFunction::set_weights",
                self.weights.len(),
                w.len(),
            ));
        }
        self.weights.copy_from_slice(w);
        Ok(())
    }

    fn check_input(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.shape.input {
            return Err(Error::dim("ScoreFunction input", self.shape.input, s.len()));
        }
        Ok(())
    }

    pub fn forward(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(s)?.output)
    }

    pub fn forward_cached(&self, s: &[f64]) -> Result<Activations> {
        self.check_input(s)?;
        let sh = &self.shape;
        let w = &self.weights;
        let mut acts = Activations::default();
        match self.kind {
            ScoreKind::Linear => {
                let b = sh.output * sh.input;
                affine(&w[..b], &w[b..], s, &mut acts.output);
            }
            ScoreKind::Mlp2 => {
                let l = Layout::mlp2(sh);
                affine(&w[l.w1..l.b1], &w[l.b1..l.w2], s, &mut acts.h1);
                acts.h1.iter_mut().for_each(|v| *v = v.tanh());
                affine(&w[l.w2..l.b2], &w[l.b2..l.w3], &acts.h1, &mut acts.h2);
                acts.h2.iter_mut().for_each(|v| *v = v.tanh());
                affine(&w[l.w3..l.b3], &w[l.b3..], &acts.h2, &mut acts.output);
            }
        }
        Ok(acts)
    }

    /// Accumulates the vector-Jacobian product `upstreamᵀ ∂out/∂weights` into `grad`.
    pub fn backward_into(
        &self,
        s: &[f64],
        acts: &Activations,
        upstream: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        self.check_input(s)?;
        if upstream.len() != self.shape.output {
            return Err(Error::dim(
                "ScoreFunction upstream",
                self.shape.output,
                upstream.len(),
            ));
        }
        if grad.len() != self.weights.len() {
            return Err(Error::dim(
                "ScoreFunction grad",
                self.weights.len(),
                grad.len(),
            ));
        }
        let sh = &self.shape;
        match self.kind {
            ScoreKind::Linear => {
                let b = sh.output * sh.input;
                let (dw, db) = grad.split_at_mut(b);
                affine_param_grad(upstream, s, dw, db);
            }
            ScoreKind::Mlp2 => {
                let l = Layout::mlp2(sh);
                let w = &self.weights;
                {
                    let (dw3, db3) = grad[l.w3..].split_at_mut(l.b3 - l.w3);
                    affine_param_grad(upstream, &acts.h2, dw3, db3);
                }
                let mut d2 = affine_transpose(&w[l.w3..l.b3], upstream, sh.hidden);
                for (d, h) in d2.iter_mut().zip(&acts.h2) {
                    *d *= 1.0 - h * h;
                }
                {
                    let (dw2, db2) = grad[l.w2..l.w3].split_at_mut(l.b2 - l.w2);
                    affine_param_grad(&d2, &acts.h1, dw2, db2);
                }
                let mut d1 = affine_transpose(&w[l.w2..l.b2], &d2, sh.hidden);
                for (d, h) in d1.iter_mut().zip(&acts.h1) {
                    *d *= 1.0 - h * h;
                }
                let (dw1, db1) = grad[l.w1..l.w2].split_at_mut(l.b1 - l.w1);
                affine_param_grad(&d1, s, dw1, db1);
            }
        }
        Ok(())
    }

    /// Convenience wrapper over [`ScoreFunction::backward_into`] using a tape.
    pub fn backward(
        &self,
        s: &[f64],
        acts: &Activations,
        upstream: &[f64],
        tape: &mut GradientTape,
    ) -> Result<()> {
        self.backward_into(s, acts, upstream, &mut tape.grad)
    }

    /// Jacobian-vector product `∂out/∂weights · v` (forward mode).
    pub fn jvp(&self, s: &[f64], acts: &Activations, v: &[f64]) -> Result<Vec<f64>> {
        self.check_input(s)?;
        if v.len() != self.weights.len() {
            return Err(Error::dim(
                "ScoreFunction tangent",
                self.weights.len(),
                v.len(),
            ));
        }
        let sh = &self.shape;
        let mut out = Vec::new();
        match self.kind {
            ScoreKind::Linear => {
                let b = sh.output * sh.input;
                affine(&v[..b], &v[b..], s, &mut out);
            }
            ScoreKind::Mlp2 => {
                let l = Layout::mlp2(sh);
                let w = &self.weights;
                // t1 = (1 - h1²) ⊙ (dW1 s + db1)
                let mut t1 = Vec::new();
                affine(&v[l.w1..l.b1], &v[l.b1..l.w2], s, &mut t1);
                for (t, h) in t1.iter_mut().zip(&acts.h1) {
                    *t *= 1.0 - h * h;
                }
                // t2 = (1 - h2²) ⊙ (dW2 h1 + db2 + W2 t1)
                let mut t2 = Vec::new();
                affine(&v[l.w2..l.b2], &v[l.b2..l.w3], &acts.h1, &mut t2);
                let mut w2t1 = Vec::new();
                affine(&w[l.w2..l.b2], &vec![0.0; sh.hidden], &t1, &mut w2t1);
                for ((t, a), h) in t2.iter_mut().zip(&w2t1).zip(&acts.h2) {
                    *t = (*t + a) * (1.0 - h * h);
                }
                affine(&v[l.w3..l.b3], &v[l.b3..], &acts.h2, &mut out);
                let mut w3t2 = Vec::new();
                affine(&w[l.w3..l.b3], &vec![0.0; sh.output], &t2, &mut w3t2);
                for (o, a) in out.iter_mut().zip(&w3t2) {
                    *o += a;
                }
            }
        }
        Ok(out)
    }

    pub fn to_blob(&self) -> Vec<u8> {
        encode_blob(&BlobHeader::for_score(self.kind, self.shape), &self.weights)
    }

    pub fn from_blob(bytes: &[u8]) -> Result<Self> {
        let (header, weights) = decode_blob(bytes)?;
        let (kind, shape) = header.score()?;
        Self::from_weights(kind, shape, weights)
    }
}

/// Row-major `rows × cols` matrix with orthonormal rows (or columns, whichever is shorter),
/// scaled by `gain`.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (tall_r, tall_c) = if rows >= cols {
        (rows, cols)
    } else {
        (cols, rows)
    };
    let a = DMatrix::<f64>::from_fn(tall_r, tall_c, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..tall_c {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let v = if rows >= cols { q[(i, j)] } else { q[(j, i)] };
            out[i * cols + j] = gain * v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn linear_forward_examples() {
        let f = ScoreFunction::from_weights(
            ScoreKind::Linear,
            Shape::new(2, 0, 1),
            vec![0.0, 0.0, 0.7],
        )
        .unwrap();
        assert_eq!(f.forward(&[3.0, -9.0]).unwrap(), vec![0.7]);
        let f = ScoreFunction::from_weights(
            ScoreKind::Linear,
            Shape::new(2, 0, 1),
            vec![1.0, -1.0, 0.0],
        )
        .unwrap();
        assert_eq!(f.forward(&[2.0, 0.5]).unwrap(), vec![1.5]);
    }

    #[test]
    fn zero_mlp_outputs_zero() {
        let f = ScoreFunction::zeros(ScoreKind::Mlp2, Shape::new(3, 8, 2)).unwrap();
        assert_eq!(f.forward(&[1.0, -2.0, 0.3]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn linear_gradient_is_input_and_one() {
        let f = ScoreFunction::from_weights(
            ScoreKind::Linear,
            Shape::new(2, 0, 1),
            vec![0.3, 0.2, 0.1],
        )
        .unwrap();
        let s = [2.0, -1.5];
        let acts = f.forward_cached(&s).unwrap();
        let mut tape = GradientTape::new(f.param_count());
        f.backward(&s, &acts, &[1.0], &mut tape).unwrap();
        assert_eq!(tape.grad, vec![2.0, -1.5, 1.0]);
        tape.reset();
        f.backward(&s, &acts, &[0.0], &mut tape).unwrap();
        assert_eq!(tape.grad, vec![0.0; 3]);
    }

    #[test]
    fn dimension_errors() {
        let f = ScoreFunction::zeros(ScoreKind::Mlp2, Shape::new(3, 4, 1)).unwrap();
        assert!(matches!(f.forward(&[1.0]), Err(Error::Dimension { .. })));
        assert!(ScoreFunction::zeros(ScoreKind::Mlp2, Shape::new(3, 0, 1)).is_err());
        assert!(
            ScoreFunction::from_weights(ScoreKind::Linear, Shape::new(2, 0, 1), vec![0.0]).is_err()
        );
    }

    #[test]
    fn linear_init_is_zero_and_mlp_init_reproducible() {
        let mut rng = stream(1, Stream::Init);
        let f =
            ScoreFunction::init(ScoreKind::Linear, Shape::new(3, 0, 2), 0.01, &mut rng).unwrap();
        assert!(f.weights().iter().all(|w| *w == 0.0));
        let a = ScoreFunction::init(
            ScoreKind::Mlp2,
            Shape::new(3, 16, 2),
            0.01,
            &mut stream(5, Stream::Init),
        )
        .unwrap();
        let b = ScoreFunction::init(
            ScoreKind::Mlp2,
            Shape::new(3, 16, 2),
            0.01,
            &mut stream(5, Stream::Init),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = stream(2, Stream::Init);
        for (r, c) in [(4, 7), (7, 4), (5, 5)] {
            let m = orthogonal(r, c, 1.0, &mut rng);
            let short = r.min(c);
            // Gram matrix of the shorter side is identity
            for i in 0..short {
                for j in 0..short {
                    let v: f64 = if r <= c {
                        (0..c).map(|k| m[i * c + k] * m[j * c + k]).sum()
                    } else {
                        (0..r).map(|k| m[k * c + i] * m[k * c + j]).sum()
                    };
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((v - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn jvp_matches_vjp_adjoint() {
        // ⟨u, J v⟩ = ⟨Jᵀ u, v⟩
        let mut rng = stream(3, Stream::Init);
        let f = ScoreFunction::init(ScoreKind::Mlp2, Shape::new(3, 6, 2), 1.0, &mut rng).unwrap();
        let s = [0.4, -1.0, 0.25];
        let acts = f.forward_cached(&s).unwrap();
        let v: Vec<f64> = (0..f.param_count())
            .map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0)
            .collect();
        let u = [0.3, -1.7];
        let jv = f.jvp(&s, &acts, &v).unwrap();
        let mut jtu = vec![0.0; f.param_count()];
        f.backward_into(&s, &acts, &u, &mut jtu).unwrap();
        let lhs: f64 = u.iter().zip(&jv).map(|(a, b)| a * b).sum();
        let rhs: f64 = jtu.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn blob_round_trip() {
        let mut rng = stream(4, Stream::Init);
        let f = ScoreFunction::init(ScoreKind::Mlp2, Shape::new(2, 5, 3), 0.5, &mut rng).unwrap();
        let bytes = f.to_blob();
        assert_eq!(bytes.len(), BLOB_HEADER_LEN + 8 * f.param_count());
        assert_eq!(ScoreFunction::from_blob(&bytes).unwrap(), f);
    }
}
