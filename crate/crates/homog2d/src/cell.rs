//! Cell problems on the periodicity torus: correctors chi_k, lower-order
//! correctors theta_k, oscillatory differences b_ik, and flux correctors.
//!
//! Correctors solve -div(A grad chi_k) = div(A grad P_k) (k = 1, 2, with
//! P_k = y_k e_beta columnwise) and -div(A grad chi_0) = div(V), discretized
//! with a conservative edge-flux scheme whose right-hand sides telescope to
//! exact zero mean. The oscillatory differences
//!   b_ik = a_hat_ik - a_ik - a_ij d_j chi_k   (k >= 1)
//!   b_i0 = v_hat_i  - V_i  - a_ij d_j chi_0
//! are mean-zero to rounding because the effective tensors average the same
//! quadrature. Flux correctors solve Delta f_ik = b_ik; only the
//! antisymmetric combination E_12k = d_1 f_2k - d_2 f_1k is stored, with
//! E_21k = -E_12k by definition, so antisymmetry is exact.

use crate::coefficients::GridCoefficients;
use crate::effective::{assemble_homogenized, EffectiveTensors};
use crate::error::{Error, Result};
use crate::krylov::{bicgstab, pcg, KrylovOptions, LinOp};
use crate::torus::{
    cell_mean, diff_centered, laplace5_symbol, solve_poisson, subtract_mean, MatField, TorusGrid,
};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Matrix-free discretization of u -> -div(A(y) grad u) for m-component
/// cell-centered fields, component-major layout [alpha][cell].
pub struct CellOperator<'a> {
    pub g: &'a GridCoefficients,
}

impl<'a> CellOperator<'a> {
    fn grid(&self) -> TorusGrid {
        TorusGrid::new(self.g.n)
    }

    /// Accumulate the scalar block (al, be) applied to x_be into out_al.
    fn accumulate_block(&self, al: usize, be: usize, x: &[f64], out: &mut [f64]) {
        let tg = self.grid();
        let n = tg.n;
        let h = tg.h();
        let a11 = &self.g.a_s(0, 0, al, be).xedge;
        let a12 = &self.g.a_s(0, 1, al, be).xedge;
        let a22 = &self.g.a_s(1, 1, al, be).yedge;
        let a21 = &self.g.a_s(1, 0, al, be).yedge;
        // East flux of cell (i, j).
        let flux_e = |i: usize, j: usize| -> f64 {
            let ip = tg.wrap(i as isize + 1);
            let jp = tg.wrap(j as isize + 1);
            let jm = tg.wrap(j as isize - 1);
            let e = tg.idx(i, j);
            let grad = (x[tg.idx(ip, j)] - x[tg.idx(i, j)]) / h;
            let tang = (x[tg.idx(i, jp)] + x[tg.idx(ip, jp)]
                - x[tg.idx(i, jm)]
                - x[tg.idx(ip, jm)])
                / (4.0 * h);
            a11[e] * grad + a12[e] * tang
        };
        // North flux of cell (i, j).
        let flux_n = |i: usize, j: usize| -> f64 {
            let jp = tg.wrap(j as isize + 1);
            let ip = tg.wrap(i as isize + 1);
            let im = tg.wrap(i as isize - 1);
            let e = tg.idx(i, j);
            let grad = (x[tg.idx(i, jp)] - x[tg.idx(i, j)]) / h;
            let tang = (x[tg.idx(ip, j)] + x[tg.idx(ip, jp)]
                - x[tg.idx(im, j)]
                - x[tg.idx(im, jp)])
                / (4.0 * h);
            a22[e] * grad + a21[e] * tang
        };
        for j in 0..n {
            let jm = tg.wrap(j as isize - 1);
            for i in 0..n {
                let im = tg.wrap(i as isize - 1);
                let div = (flux_e(i, j) - flux_e(im, j)) / h + (flux_n(i, j) - flux_n(i, jm)) / h;
                out[tg.idx(i, j)] -= div;
            }
        }
    }
}

impl<'a> LinOp for CellOperator<'a> {
    fn dim(&self) -> usize {
        self.g.m() * self.g.n * self.g.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let m = self.g.m();
        let nn = self.g.n * self.g.n;
        y.fill(0.0);
        for al in 0..m {
            for be in 0..m {
                let xb = &x[be * nn..(be + 1) * nn];
                let ya = &mut y[al * nn..(al + 1) * nn];
                self.accumulate_block(al, be, xb, ya);
            }
        }
    }
}

/// FFT preconditioner for the cell operator: componentwise inverse of
/// abar_al * (-Delta5) on mean-zero fields (abar is the mean of the diagonal
/// leading coefficients for that component).
fn fft_preconditioner(g: &GridCoefficients) -> impl Fn(&[f64], &mut [f64]) + Sync + '_ {
    let n = g.n;
    let m = g.m();
    let scale: Vec<f64> = (0..m)
        .map(|al| {
            0.5 * (g.set.a_e(0, 0, al, al).mean() + g.set.a_e(1, 1, al, al).mean()).max(1e-12)
        })
        .collect();
    move |r: &[f64], z: &mut [f64]| {
        let nn = n * n;
        for al in 0..m {
            let mut hat: Vec<Complex<f64>> = r[al * nn..(al + 1) * nn]
                .iter()
                .map(|&x| Complex::new(x, 0.0))
                .collect();
            fft2_inplace(&mut hat, n, false);
            for k2 in 0..n {
                for k1 in 0..n {
                    let idx = k2 * n + k1;
                    if k1 == 0 && k2 == 0 {
                        hat[idx] = Complex::new(0.0, 0.0);
                    } else {
                        hat[idx] /= scale[al] * (-laplace5_symbol(n, k1, k2));
                    }
                }
            }
            fft2_inplace(&mut hat, n, true);
            let norm = 1.0 / nn as f64;
            for (zi, hi) in z[al * nn..(al + 1) * nn].iter_mut().zip(&hat) {
                *zi = hi.re * norm;
            }
        }
    }
}

fn fft2_inplace(data: &mut [Complex<f64>], n: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    for row in data.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for i in 0..n {
        for j in 0..n {
            col[j] = data[j * n + i];
        }
        fft.process(&mut col);
        for j in 0..n {
            data[j * n + i] = col[j];
        }
    }
}

fn project_componentwise(m: usize, nn: usize) -> impl Fn(&mut [f64]) + Sync {
    move |v: &mut [f64]| {
        for al in 0..m {
            let s = &mut v[al * nn..(al + 1) * nn];
            let mean = s.iter().sum::<f64>() / nn as f64;
            for x in s.iter_mut() {
                *x -= mean;
            }
        }
    }
}

/// Solve the cell problem for corrector chi_k (k = 0: the V-corrector;
/// k = 1, 2: the linear-drift correctors). Returns the m x m corrector field
/// (rows: solution components, columns: the unit-vector slot) and the
/// relative solver residual per column.
pub fn solve_chi(g: &GridCoefficients, k: usize, tol: f64) -> Result<(MatField, Vec<f64>)> {
    assert!(k < 3);
    let n = g.n;
    let m = g.m();
    let nn = n * n;
    let tg = TorusGrid::new(n);
    let h = tg.h();
    let symmetric = g.set.cell_operator_symmetric();

    let columns: Vec<(usize, Vec<f64>, f64)> = (0..m)
        .into_par_iter()
        .map(|be| -> Result<(usize, Vec<f64>, f64)> {
            // rhs_al = divergence of the edge-sampled column field
            // (a_{1k}^{al,be}, a_{2k}^{al,be}) for k >= 1, or V^{al,be} for k = 0.
            let mut rhs = vec![0.0; m * nn];
            for al in 0..m {
                let (w1, w2) = if k == 0 {
                    (&g.v_s(0, al, be).xedge, &g.v_s(1, al, be).yedge)
                } else {
                    (
                        &g.a_s(0, k - 1, al, be).xedge,
                        &g.a_s(1, k - 1, al, be).yedge,
                    )
                };
                for j in 0..n {
                    let jm = tg.wrap(j as isize - 1);
                    for i in 0..n {
                        let im = tg.wrap(i as isize - 1);
                        rhs[al * nn + tg.idx(i, j)] = (w1[tg.idx(i, j)] - w1[tg.idx(im, j)]) / h
                            + (w2[tg.idx(i, j)] - w2[tg.idx(i, jm)]) / h;
                    }
                }
            }
            let op = CellOperator { g };
            let precond = fft_preconditioner(g);
            let project = project_componentwise(m, nn);
            let mut opts = KrylovOptions::new(tol, &format!("cell corrector k={k} column {be}"));
            opts.precond = Some(&precond);
            opts.project = Some(&project);
            let (mut x, stats) = if symmetric {
                pcg(&op, &rhs, &opts)?
            } else {
                bicgstab(&op, &rhs, &opts)?
            };
            project(&mut x);
            Ok((be, x, stats.residual))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut field = MatField::zeros(n, m, m);
    let mut residuals = vec![0.0; m];
    for (be, x, res) in columns {
        for al in 0..m {
            field
                .comp_mut(al, be)
                .copy_from_slice(&x[al * nn..(al + 1) * nn]);
        }
        residuals[be] = res;
    }
    Ok((field, residuals))
}

/// Centered differences of all three correctors: dchi[k][axis].
pub fn corrector_gradients(chi: &[MatField; 3]) -> Vec<[MatField; 2]> {
    let n = chi[0].n;
    let m = chi[0].rows;
    let tg = TorusGrid::new(n);
    (0..3)
        .map(|k| {
            let mut dx = MatField::zeros(n, m, m);
            let mut dy = MatField::zeros(n, m, m);
            for r in 0..m {
                for c in 0..m {
                    dx.comp_mut(r, c)
                        .copy_from_slice(&diff_centered(tg, chi[k].comp(r, c), 0));
                    dy.comp_mut(r, c)
                        .copy_from_slice(&diff_centered(tg, chi[k].comp(r, c), 1));
                }
            }
            [dx, dy]
        })
        .collect()
}

/// Oscillatory differences b_ik (i in {1,2} spatial, k in {0,1,2} slot),
/// returned indexed i*3 + k. Mean-zero to rounding by construction.
pub fn compute_b(
    g: &GridCoefficients,
    chi: &[MatField; 3],
    eff: &EffectiveTensors,
) -> Result<Vec<MatField>> {
    let n = g.n;
    let m = g.m();
    if chi[0].n != n {
        return Err(Error::GridMismatch {
            expected: n,
            found: chi[0].n,
        });
    }
    let nn = n * n;
    let dchi = corrector_gradients(chi);
    let mut out = Vec::with_capacity(6);
    for i in 0..2 {
        for k in 0..3 {
            let mut f = MatField::zeros(n, m, m);
            for al in 0..m {
                for ga in 0..m {
                    let hat = if k == 0 {
                        eff.v(i, al, ga)
                    } else {
                        eff.a(i, k - 1, al, ga)
                    };
                    let base = if k == 0 {
                        &g.v_s(i, al, ga).center
                    } else {
                        &g.a_s(i, k - 1, al, ga).center
                    };
                    let comp = f.comp_mut(al, ga);
                    for cell in 0..nn {
                        comp[cell] = hat - base[cell];
                    }
                    for j in 0..2 {
                        for be in 0..m {
                            let aij = &g.a_s(i, j, al, be).center;
                            let dc = dchi[k][j].comp(be, ga);
                            for cell in 0..nn {
                                comp[cell] -= aij[cell] * dc[cell];
                            }
                        }
                    }
                }
            }
            out.push(f);
        }
    }
    Ok(out)
}

/// Solve the lower-order cell problems Delta theta_k = rhs_k with
///   rhs_k = b_hat_k - B_k - B_j d_j chi_k   (k >= 1)
///   rhs_0 = c_hat   - c   - B_i d_i chi_0.
/// The right-hand sides are mean-zero to rounding by construction; the FFT
/// solve is direct and its reapplied residual is returned.
pub fn solve_theta(
    g: &GridCoefficients,
    chi: &[MatField; 3],
    eff: &EffectiveTensors,
    k: usize,
    _tol: f64,
) -> Result<(MatField, f64)> {
    assert!(k < 3);
    let n = g.n;
    let m = g.m();
    if chi[0].n != n {
        return Err(Error::GridMismatch {
            expected: n,
            found: chi[0].n,
        });
    }
    let nn = n * n;
    let tg = TorusGrid::new(n);
    let dchi = corrector_gradients(chi);
    let mut theta = MatField::zeros(n, m, m);
    let mut worst = 0.0f64;
    for al in 0..m {
        for ga in 0..m {
            let hat = if k == 0 {
                eff.c(al, ga)
            } else {
                eff.b(k - 1, al, ga)
            };
            let base = if k == 0 {
                &g.c_s(al, ga).center
            } else {
                &g.b_s(k - 1, al, ga).center
            };
            let mut rhs = vec![0.0; nn];
            for cell in 0..nn {
                rhs[cell] = hat - base[cell];
            }
            for j in 0..2 {
                for be in 0..m {
                    let bj = &g.b_s(j, al, be).center;
                    let dc = dchi[k][j].comp(be, ga);
                    for cell in 0..nn {
                        rhs[cell] -= bj[cell] * dc[cell];
                    }
                }
            }
            // A right-hand side at roundoff level relative to the data means
            // the component vanishes; solving would trip the mean-zero check
            // on noise whose mean equals its sup.
            let rhs_sup = rhs.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
            let data_scale = base
                .iter()
                .fold(hat.abs(), |a, &x| a.max(x.abs()))
                .max(1.0);
            if rhs_sup <= 1e-10 * data_scale {
                continue;
            }
            let sol = solve_poisson(tg, &rhs, &format!("theta k={k} component ({al},{ga})"))?;
            // Reapplied residual, relative to the data scale.
            let back = crate::torus::apply_laplace5(tg, &sol);
            let scale = rhs.iter().fold(1e-300f64, |a, &x| a.max(x.abs())).max(1.0);
            let res = back
                .iter()
                .zip(&rhs)
                .map(|(b, r)| (b - r).abs())
                .fold(0.0f64, f64::max)
                / scale;
            worst = worst.max(res);
            theta.comp_mut(al, ga).copy_from_slice(&sol);
        }
    }
    Ok((theta, worst))
}

/// Flux correctors: solve Delta f_ik = b_ik and return E_12k = d1 f_2k - d2 f_1k
/// for k = 0, 1, 2 (E_21k = -E_12k by definition). Errors if any b_ik has
/// mean above 1e-8 of its sup norm.
pub fn solve_flux_corrector(b: &[MatField]) -> Result<[MatField; 3]> {
    assert_eq!(b.len(), 6);
    let n = b[0].n;
    let m = b[0].rows;
    let tg = TorusGrid::new(n);
    let mut out = Vec::with_capacity(3);
    for k in 0..3 {
        let mut e = MatField::zeros(n, m, m);
        for al in 0..m {
            for ga in 0..m {
                let b1 = b[k].comp(al, ga); // i = 1 (index 0*3+k)
                let b2 = b[3 + k].comp(al, ga); // i = 2 (index 1*3+k)
                for (i, comp) in [b1, b2].into_iter().enumerate() {
                    let scale = comp.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
                    let mean = cell_mean(comp);
                    if scale > 0.0 && mean.abs() > 1e-8 * scale {
                        return Err(Error::MeanNotZero {
                            what: format!("oscillatory difference b[{},{k}] ({al},{ga})", i + 1),
                            mean,
                            limit: 1e-8 * scale,
                            scale,
                        });
                    }
                }
                let f1 = solve_poisson(tg, b1, &format!("flux corrector f1k k={k}"))?;
                let f2 = solve_poisson(tg, b2, &format!("flux corrector f2k k={k}"))?;
                let d1f2 = diff_centered(tg, &f2, 0);
                let d2f1 = diff_centered(tg, &f1, 1);
                let comp = e.comp_mut(al, ga);
                for cell in 0..n * n {
                    comp[cell] = d1f2[cell] - d2f1[cell];
                }
            }
        }
        out.push(e);
    }
    let mut it = out.into_iter();
    Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

/// Everything the expansion and rate machinery needs from the cell stage.
#[derive(Debug, Clone)]
pub struct CorrectorBundle {
    pub n: usize,
    pub m: usize,
    pub chi: [MatField; 3],
    pub theta: [MatField; 3],
    /// b[(i,k)] indexed i*3 + k.
    pub b: Vec<MatField>,
    /// E_12k for k = 0, 1, 2; E_21k = -E_12k.
    pub e12: [MatField; 3],
    /// (label, relative residual) per solve, in computation order. Empty for
    /// bundles loaded from cache.
    pub residuals: Vec<(String, f64)>,
}

impl CorrectorBundle {
    /// Signed flux corrector accessor: E_{j i k} with j, i in {1, 2}.
    /// Antisymmetry in (j, i) is exact because only one triangle is stored.
    pub fn e_value(&self, j: usize, i: usize, k: usize, al: usize, ga: usize, cell: usize) -> f64 {
        match (j, i) {
            (1, 2) => self.e12[k].comp(al, ga)[cell],
            (2, 1) => -self.e12[k].comp(al, ga)[cell],
            _ => 0.0,
        }
    }
}

/// Run the full cell stage: correctors, effective tensors, oscillatory
/// differences, lower-order correctors, flux correctors.
pub fn build_bundle(
    g: &GridCoefficients,
    tol: f64,
) -> Result<(CorrectorBundle, EffectiveTensors)> {
    let mut residuals = Vec::new();
    let mut chis = Vec::with_capacity(3);
    for k in 0..3 {
        let (f, res) = solve_chi(g, k, tol)?;
        for (be, r) in res.iter().enumerate() {
            residuals.push((format!("chi{k} column {be}"), *r));
        }
        chis.push(f);
    }
    let mut it = chis.into_iter();
    let chi: [MatField; 3] = [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()];
    let eff = assemble_homogenized(g, &chi)?;
    let b = compute_b(g, &chi, &eff)?;
    let mut thetas = Vec::with_capacity(3);
    for k in 0..3 {
        let (t, res) = solve_theta(g, &chi, &eff, k, tol)?;
        residuals.push((format!("theta{k}"), res));
        thetas.push(t);
    }
    let mut it = thetas.into_iter();
    let theta: [MatField; 3] = [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()];
    let e12 = solve_flux_corrector(&b)?;
    Ok((
        CorrectorBundle {
            n: g.n,
            m: g.m(),
            chi,
            theta,
            b,
            e12,
            residuals,
        },
        eff,
    ))
}

/// Sup-norm mismatch between the centered divergence D_j E_jik and b_ik,
/// maximized over i, k and components, relative to the overall scale of b.
///
/// The identity D_j E_jik = b_ik holds in the continuum because the rows of b
/// are divergence-free; discretely both sides agree to O(h^2) in absolute
/// terms, so the mismatch is normalized by the global sup of b (slots where
/// b is itself O(h^2) would otherwise report spurious O(1) ratios).
pub fn flux_divergence_mismatch(bundle: &CorrectorBundle) -> f64 {
    let tg = TorusGrid::new(bundle.n);
    let m = bundle.m;
    let scale = bundle
        .b
        .iter()
        .map(|f| f.sup())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let mut worst: f64 = 0.0;
    for k in 0..3 {
        for al in 0..m {
            for ga in 0..m {
                let e = bundle.e12[k].comp(al, ga);
                // i = 1: D_j E_j1k = D_2 E_21k = -D_2 E_12k.
                let d2e = diff_centered(tg, e, 1);
                // i = 2: D_j E_j2k = D_1 E_12k.
                let d1e = diff_centered(tg, e, 0);
                let b1 = bundle.b[k].comp(al, ga);
                let b2 = bundle.b[3 + k].comp(al, ga);
                let m1 = d2e
                    .iter()
                    .zip(b1)
                    .map(|(d, b)| (-d - b).abs())
                    .fold(0.0f64, f64::max);
                let m2 = d1e
                    .iter()
                    .zip(b2)
                    .map(|(d, b)| (d - b).abs())
                    .fold(0.0f64, f64::max);
                worst = worst.max(m1.max(m2) / scale);
            }
        }
    }
    worst
}

/// Subtract the per-component mean from every field of a corrector matrix.
pub fn normalize_mean(f: &mut MatField) {
    for r in 0..f.rows {
        for c in 0..f.cols {
            subtract_mean(f.comp_mut(r, c));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{preset, sample_grid};
    use crate::effective::check_effective_ellipticity;
    use crate::torus::apply_laplace5;

    /// Composite Simpson on [0, y] with n (even) panels.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        assert!(n % 2 == 0);
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    /// Closed-form laminate corrector antiderivative:
    /// psi(y) = int_0^y (sqrt(3)/(2 + sin 2 pi s) - 1) ds.
    fn laminate_psi(y: f64) -> f64 {
        let f = |s: f64| 3.0f64.sqrt() / (2.0 + (2.0 * std::f64::consts::PI * s).sin()) - 1.0;
        simpson(f, 0.0, y, 2048)
    }

    #[test]
    fn theta_skips_roundoff_right_hand_sides() {
        // Constant c with V = B = 0: the exact k=0 right-hand side is zero,
        // but the computed c_hat carries quadrature roundoff, leaving a
        // constant RHS whose mean equals its sup. The solve must treat it
        // as zero instead of rejecting it as unsolvable.
        use crate::coefficients::{CoefficientSet, FourierEntry};
        let mut set = CoefficientSet::zeros(1);
        set.set_a(0, 0, 0, 0, FourierEntry::constant(2.0).with_mode(1, 0, 0.4, 0.0));
        set.set_a(1, 1, 0, 0, FourierEntry::constant(2.0).with_mode(1, 1, 0.0, 0.2));
        set.set_c(0, 0, FourierEntry::constant(0.3));
        set.mu = 0.5;
        set.kappa = 0.3;
        let g = sample_grid(&set, 32).unwrap();
        let (bundle, _) = build_bundle(&g, 1e-10).unwrap();
        assert_eq!(bundle.theta[0].sup(), 0.0, "theta0 must stay zero");
    }

    #[test]
    fn identity_correctors_vanish_exactly() {
        let g = sample_grid(&preset("identity").unwrap(), 16).unwrap();
        for k in 0..3 {
            let (chi, res) = solve_chi(&g, k, 1e-12).unwrap();
            assert_eq!(chi.sup(), 0.0, "chi{k} must be identically zero");
            assert_eq!(res[0], 0.0);
        }
    }

    #[test]
    fn cell_operator_is_negative_laplacian_for_identity() {
        let n = 16;
        let g = sample_grid(&preset("identity").unwrap(), n).unwrap();
        let op = CellOperator { g: &g };
        let tg = TorusGrid::new(n);
        let u: Vec<f64> = (0..n * n).map(|i| ((i * 37 % 101) as f64) / 101.0 - 0.5).collect();
        let mut lu = vec![0.0; n * n];
        op.apply(&u, &mut lu);
        let lap = apply_laplace5(tg, &u);
        for (a, b) in lu.iter().zip(&lap) {
            assert!((a + b).abs() < 1e-9, "{a} vs {}", -b);
        }
    }

    #[test]
    fn cell_operator_is_symmetric_for_scalar_diagonal_sets() {
        let n = 16;
        let g = sample_grid(&preset("smooth-checkerboard").unwrap(), n).unwrap();
        let op = CellOperator { g: &g };
        let x: Vec<f64> = (0..n * n).map(|i| ((i * 13 % 97) as f64) / 97.0).collect();
        let y: Vec<f64> = (0..n * n).map(|i| ((i * 29 % 89) as f64) / 89.0 - 0.3).collect();
        let mut ax = vec![0.0; n * n];
        let mut ay = vec![0.0; n * n];
        op.apply(&x, &mut ax);
        op.apply(&y, &mut ay);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = ay.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn laminate_chi1_matches_closed_form() {
        let n = 64;
        let g = sample_grid(&preset("laminate").unwrap(), n).unwrap();
        let (chi1, res) = solve_chi(&g, 1, 1e-11).unwrap();
        assert!(res[0] <= 1e-10);
        // Exact corrector at cell centers, mean-subtracted the same way.
        let h = 1.0 / n as f64;
        let exact_raw: Vec<f64> = (0..n).map(|i| laminate_psi((i as f64 + 0.5) * h)).collect();
        let mean = exact_raw.iter().sum::<f64>() / n as f64;
        let c = chi1.comp(0, 0);
        let mut sup = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                sup = sup.max((c[j * n + i] - (exact_raw[i] - mean)).abs());
            }
        }
        assert!(sup < 5e-3, "sup error {sup}");
        // The transverse and V correctors vanish identically.
        let (chi2, _) = solve_chi(&g, 2, 1e-11).unwrap();
        let (chi0, _) = solve_chi(&g, 0, 1e-11).unwrap();
        assert_eq!(chi2.sup(), 0.0);
        assert_eq!(chi0.sup(), 0.0);
    }

    #[test]
    fn laminate_effective_tensor_matches_harmonic_and_arithmetic_means() {
        let n = 64;
        let g = sample_grid(&preset("laminate").unwrap(), n).unwrap();
        let (bundle, eff) = build_bundle(&g, 1e-11).unwrap();
        let sqrt3 = 3.0f64.sqrt();
        assert!((eff.a(0, 0, 0, 0) - sqrt3).abs() < 2e-3, "a11 {}", eff.a(0, 0, 0, 0));
        assert!((eff.a(1, 1, 0, 0) - 2.0).abs() < 1e-12, "a22 {}", eff.a(1, 1, 0, 0));
        assert!(eff.a(0, 1, 0, 0).abs() < 1e-15);
        assert!(eff.a(1, 0, 0, 0).abs() < 1e-15);
        assert!(check_effective_ellipticity(&eff).unwrap() > 1.0);
        // Voigt-Reuss bracketing: harmonic mean <= a_hat_11 <= arithmetic mean.
        assert!(eff.a(0, 0, 0, 0) > sqrt3 - 2e-3 && eff.a(0, 0, 0, 0) < 2.0);
        // Lower-order tensors vanish for a pure leading-order preset.
        assert!(eff.v_hat.iter().all(|&x| x == 0.0));
        assert!(eff.b_hat.iter().all(|&x| x == 0.0));
        assert!(eff.c_hat.iter().all(|&x| x == 0.0));
        // theta vanishes identically (B = c = 0).
        for k in 0..3 {
            assert_eq!(bundle.theta[k].sup(), 0.0, "theta{k}");
        }
    }

    #[test]
    fn laminate_oscillatory_differences_and_flux_corrector_match_closed_forms() {
        let n = 64;
        let g = sample_grid(&preset("laminate").unwrap(), n).unwrap();
        let (bundle, _eff) = build_bundle(&g, 1e-11).unwrap();
        let h = 1.0 / n as f64;
        let two_pi = 2.0 * std::f64::consts::PI;
        // b_22 = a_hat_22 - a_22 = -sin(2 pi y1) up to quadrature rounding.
        let b22 = bundle.b[3 + 2].comp(0, 0);
        for j in 0..n {
            for i in 0..n {
                let y1 = (i as f64 + 0.5) * h;
                assert!(
                    (b22[j * n + i] + (two_pi * y1).sin()).abs() < 1e-11,
                    "b22 at i={i}"
                );
            }
        }
        // b_11 = a_hat_11 - a_11 (1 + d chi_1) -> 0 at O(h^2).
        let b11 = bundle.b[1].comp(0, 0);
        let sup_b11 = b11.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        assert!(sup_b11 < 5e-3, "sup b11 {sup_b11}");
        // E_122 = cos(2 pi y1) / (2 pi) at O(h^2).
        let e122 = bundle.e12[2].comp(0, 0);
        let mut sup = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                let y1 = (i as f64 + 0.5) * h;
                sup = sup.max((e122[j * n + i] - (two_pi * y1).cos() / two_pi).abs());
            }
        }
        assert!(sup < 3e-3, "E122 error {sup}");
        // Divergence identity D_j E_jik = b_ik at O(h^2).
        let mismatch = flux_divergence_mismatch(&bundle);
        assert!(mismatch < 5e-3, "mismatch {mismatch}");
        // Exact antisymmetry through the accessor.
        let v = bundle.e_value(1, 2, 2, 0, 0, 7);
        let w = bundle.e_value(2, 1, 2, 0, 0, 7);
        assert_eq!(v, -w);
        assert_eq!(bundle.e_value(1, 1, 2, 0, 0, 7), 0.0);
    }

    #[test]
    fn full_lower_order_bundle_satisfies_structural_invariants() {
        let n = 32;
        let g = sample_grid(&preset("full-lower-order").unwrap(), n).unwrap();
        let (bundle, eff) = build_bundle(&g, 1e-10).unwrap();
        // Solver residuals meet the tolerance (relative, with headroom for
        // the true-residual confirmation).
        for (label, r) in &bundle.residuals {
            assert!(*r <= 1e-9, "{label}: residual {r}");
        }
        // Every oscillatory difference is mean-zero to rounding.
        for (idx, f) in bundle.b.iter().enumerate() {
            for al in 0..2 {
                for ga in 0..2 {
                    let comp = f.comp(al, ga);
                    let sup = comp.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
                    let mean = cell_mean(comp);
                    assert!(
                        mean.abs() <= 1e-13 * sup.max(1.0),
                        "b[{idx}] ({al},{ga}): mean {mean:.3e}, sup {sup:.3e}"
                    );
                }
            }
        }
        // Correctors and theta are mean-zero per component.
        for k in 0..3 {
            for al in 0..2 {
                for ga in 0..2 {
                    assert!(cell_mean(bundle.chi[k].comp(al, ga)).abs() < 1e-12);
                    assert!(cell_mean(bundle.theta[k].comp(al, ga)).abs() < 1e-12);
                }
            }
        }
        // The effective leading tensor stays elliptic.
        assert!(check_effective_ellipticity(&eff).unwrap() > 0.1);
        // Flux divergence identity holds at the coarse-grid level.
        assert!(flux_divergence_mismatch(&bundle) < 0.15);
    }
}
