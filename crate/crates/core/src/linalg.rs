//! Small dense vector helpers and a matrix-free conjugate-gradient solver.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

pub fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
}

/// Solves `A x = b` for symmetric positive-definite `A` given only its action `apply`.
///
/// Stops after `max_iter` iterations or once the residual norm drops below `tol`.
pub fn conjugate_gradient<F>(mut apply: F, b: &[f64], max_iter: usize, tol: f64) -> CgSolution
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rr = dot(&r, &r);
    if rr.sqrt() <= tol {
        return CgSolution {
            x,
            iterations: 0,
            residual_norm: rr.sqrt(),
            converged: true,
        };
    }
    let mut iterations = 0;
    while iterations < max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) || !pap.is_finite() {
            break;
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        iterations += 1;
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= tol {
            rr = rr_new;
            break;
        }
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
    }
    let residual_norm = rr.sqrt();
    CgSolution {
        x,
        iterations,
        residual_norm,
        converged: residual_norm <= tol,
    }
}
