//! Matrix-free Krylov solvers: preconditioned CG and BiCGStab.
//!
//! Both solvers accept an optional preconditioner (an approximate inverse
//! applied as a closure) and an optional projection enforced on the right-hand
//! side and on every residual, used to solve singular-but-consistent systems
//! on a complement of the kernel (torus solves restricted to mean-zero
//! fields). Convergence is declared on the recurrence residual and then
//! confirmed against the true residual; failure reports a sampled residual
//! history.

use crate::error::{Error, Result};
use crate::util::{dot, norm2};

/// A linear operator acting on flat vectors.
pub trait LinOp {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

pub struct KrylovOptions<'a> {
    pub tol: f64,
    pub max_iter: usize,
    pub precond: Option<&'a dyn Fn(&[f64], &mut [f64])>,
    pub project: Option<&'a dyn Fn(&mut [f64])>,
    pub context: String,
}

impl<'a> KrylovOptions<'a> {
    pub fn new(tol: f64, context: &str) -> Self {
        KrylovOptions {
            tol,
            max_iter: 100_000,
            precond: None,
            project: None,
            context: context.to_string(),
        }
    }
}

fn sampled_history(hist: &[f64]) -> Vec<f64> {
    if hist.len() <= 16 {
        return hist.to_vec();
    }
    let stride = hist.len() / 16;
    let mut out: Vec<f64> = hist.iter().step_by(stride).copied().collect();
    if let Some(&last) = hist.last() {
        if out.last() != Some(&last) {
            out.push(last);
        }
    }
    out
}

fn failure(context: &str, iterations: usize, residual: f64, hist: &[f64]) -> Error {
    Error::SolveFailure {
        context: context.to_string(),
        iterations,
        residual,
        history: sampled_history(hist),
    }
}

/// Preconditioned conjugate gradients for symmetric positive (semi)definite
/// operators. Returns the solution and iteration stats.
pub fn pcg(op: &dyn LinOp, b: &[f64], opts: &KrylovOptions) -> Result<(Vec<f64>, SolveStats)> {
    let n = op.dim();
    assert_eq!(b.len(), n);
    let mut bb = b.to_vec();
    if let Some(p) = opts.project {
        p(&mut bb);
    }
    let bnorm = norm2(&bb);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                residual: 0.0,
            },
        ));
    }
    let mut r = bb.clone();
    let mut z = vec![0.0; n];
    let apply_precond = |r: &[f64], z: &mut Vec<f64>, opts: &KrylovOptions| {
        match opts.precond {
            Some(m) => m(r, z),
            None => z.copy_from_slice(r),
        }
        if let Some(p) = opts.project {
            p(z);
        }
    };
    apply_precond(&r, &mut z, opts);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    let mut hist = Vec::new();
    for it in 1..=opts.max_iter {
        op.apply(&p, &mut q);
        let pq = dot(&p, &q);
        if pq <= 0.0 || !pq.is_finite() {
            return Err(failure(
                &format!("{}: CG breakdown (p.Ap = {pq:.3e})", opts.context),
                it,
                norm2(&r) / bnorm,
                &hist,
            ));
        }
        let alpha = rz / pq;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * q[k];
        }
        if let Some(prj) = opts.project {
            prj(&mut r);
        }
        let rel = norm2(&r) / bnorm;
        hist.push(rel);
        if rel <= opts.tol {
            // Confirm with the true residual before accepting.
            op.apply(&x, &mut q);
            let mut tr = vec![0.0; n];
            for k in 0..n {
                tr[k] = bb[k] - q[k];
            }
            if let Some(prj) = opts.project {
                prj(&mut tr);
            }
            let true_rel = norm2(&tr) / bnorm;
            if true_rel <= 10.0 * opts.tol {
                return Ok((
                    x,
                    SolveStats {
                        iterations: it,
                        residual: true_rel,
                    },
                ));
            }
            // Recurrence drifted: restart from the true residual.
            r = tr;
        }
        apply_precond(&r, &mut z, opts);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    let rel = norm2(&r) / bnorm;
    Err(failure(&opts.context, opts.max_iter, rel, &hist))
}

/// Right-preconditioned BiCGStab for general (nonsymmetric) operators.
pub fn bicgstab(op: &dyn LinOp, b: &[f64], opts: &KrylovOptions) -> Result<(Vec<f64>, SolveStats)> {
    let n = op.dim();
    assert_eq!(b.len(), n);
    let mut bb = b.to_vec();
    if let Some(p) = opts.project {
        p(&mut bb);
    }
    let bnorm = norm2(&bb);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                residual: 0.0,
            },
        ));
    }
    let mut r = bb.clone();
    let r_shadow = r.clone();
    let mut rho = 1.0f64;
    let mut alpha = 1.0f64;
    let mut omega = 1.0f64;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut hist = Vec::new();
    let apply_precond = |r: &[f64], z: &mut Vec<f64>, opts: &KrylovOptions| {
        match opts.precond {
            Some(m) => m(r, z),
            None => z.copy_from_slice(r),
        }
        if let Some(prj) = opts.project {
            prj(z);
        }
    };
    for it in 1..=opts.max_iter {
        let rho_new = dot(&r_shadow, &r);
        if rho_new.abs() < 1e-300 {
            return Err(failure(
                &format!("{}: BiCGStab breakdown (rho ~ 0)", opts.context),
                it,
                norm2(&r) / bnorm,
                &hist,
            ));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for k in 0..n {
            p[k] = r[k] + beta * (p[k] - omega * v[k]);
        }
        apply_precond(&p, &mut phat, opts);
        op.apply(&phat, &mut v);
        let rsv = dot(&r_shadow, &v);
        if rsv.abs() < 1e-300 {
            return Err(failure(
                &format!("{}: BiCGStab breakdown (r0.v ~ 0)", opts.context),
                it,
                norm2(&r) / bnorm,
                &hist,
            ));
        }
        alpha = rho / rsv;
        // s = r - alpha v (reuse r).
        for k in 0..n {
            r[k] -= alpha * v[k];
        }
        let snorm = norm2(&r) / bnorm;
        if snorm <= opts.tol {
            for k in 0..n {
                x[k] += alpha * phat[k];
            }
            hist.push(snorm);
            let true_rel = true_residual(op, &x, &bb, opts) / bnorm;
            if true_rel <= 10.0 * opts.tol {
                return Ok((
                    x,
                    SolveStats {
                        iterations: it,
                        residual: true_rel,
                    },
                ));
            }
        }
        apply_precond(&r, &mut shat, opts);
        op.apply(&shat, &mut t);
        let tt = dot(&t, &t);
        if tt < 1e-300 {
            return Err(failure(
                &format!("{}: BiCGStab breakdown (t.t ~ 0)", opts.context),
                it,
                snorm,
                &hist,
            ));
        }
        omega = dot(&t, &r) / tt;
        for k in 0..n {
            x[k] += alpha * phat[k] + omega * shat[k];
            r[k] -= omega * t[k];
        }
        if let Some(prj) = opts.project {
            prj(&mut r);
        }
        let rel = norm2(&r) / bnorm;
        hist.push(rel);
        if rel <= opts.tol {
            let true_rel = true_residual(op, &x, &bb, opts) / bnorm;
            if true_rel <= 10.0 * opts.tol {
                return Ok((
                    x,
                    SolveStats {
                        iterations: it,
                        residual: true_rel,
                    },
                ));
            }
        }
        if omega.abs() < 1e-300 {
            return Err(failure(
                &format!("{}: BiCGStab stagnation (omega ~ 0)", opts.context),
                it,
                rel,
                &hist,
            ));
        }
    }
    let rel = norm2(&r) / bnorm;
    Err(failure(&opts.context, opts.max_iter, rel, &hist))
}

fn true_residual(op: &dyn LinOp, x: &[f64], b: &[f64], opts: &KrylovOptions) -> f64 {
    let mut ax = vec![0.0; x.len()];
    op.apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    if let Some(prj) = opts.project {
        prj(&mut r);
    }
    norm2(&r)
}
