//! Effective (homogenized) tensors from cell correctors.
//!
//! With correctors chi_k solved on the periodicity cell, the constant
//! effective tensors are cell averages of corrected coefficients:
//!   a_hat_ij = <a_ij + a_ik d_k chi_j>,   v_hat_i = <V_i + a_ij d_j chi_0>,
//!   b_hat_i  = <B_i + B_j d_j chi_i>,     c_hat   = <c + B_i d_i chi_0>,
//! where d denotes the centered difference on the torus grid and <.> the
//! cell-center average. Using one quadrature for the averages and for the
//! oscillatory differences b_ik (module cell) makes the mean-zero identities
//! hold to rounding.

use crate::coefficients::{CoefficientSet, FourierEntry, GridCoefficients};
use crate::error::{Error, Result};
use crate::torus::{diff_centered, MatField, TorusGrid};
use crate::util::symmetric_eigenvalues;

/// Constant homogenized tensors. Index layout matches `CoefficientSet`.
#[derive(Debug, Clone)]
pub struct EffectiveTensors {
    pub m: usize,
    /// Grid size of the quadrature that produced the averages.
    pub quadrature_n: usize,
    pub a_hat: Vec<f64>,
    pub v_hat: Vec<f64>,
    pub b_hat: Vec<f64>,
    pub c_hat: Vec<f64>,
    pub lambda: f64,
}

impl EffectiveTensors {
    #[inline]
    pub fn a(&self, i: usize, j: usize, al: usize, be: usize) -> f64 {
        self.a_hat[((i * 2 + j) * self.m + al) * self.m + be]
    }
    #[inline]
    pub fn v(&self, i: usize, al: usize, be: usize) -> f64 {
        self.v_hat[(i * self.m + al) * self.m + be]
    }
    #[inline]
    pub fn b(&self, i: usize, al: usize, be: usize) -> f64 {
        self.b_hat[(i * self.m + al) * self.m + be]
    }
    #[inline]
    pub fn c(&self, al: usize, be: usize) -> f64 {
        self.c_hat[al * self.m + be]
    }

    /// Express the constant tensors as a coefficient set, so the homogenized
    /// operator can be assembled and cached through the same paths as L_eps.
    pub fn to_constant_set(&self) -> CoefficientSet {
        let m = self.m;
        let mut s = CoefficientSet::zeros(m);
        for i in 0..2 {
            for j in 0..2 {
                for al in 0..m {
                    for be in 0..m {
                        s.set_a(i, j, al, be, FourierEntry::constant(self.a(i, j, al, be)));
                    }
                }
            }
        }
        for i in 0..2 {
            for al in 0..m {
                for be in 0..m {
                    s.set_v(i, al, be, FourierEntry::constant(self.v(i, al, be)));
                    s.set_b(i, al, be, FourierEntry::constant(self.b(i, al, be)));
                }
            }
        }
        for al in 0..m {
            for be in 0..m {
                s.set_c(al, be, FourierEntry::constant(self.c(al, be)));
            }
        }
        s.lambda = self.lambda;
        s.mu = 0.0; // filled below from the certified spectrum
        let min_eig = effective_symmetric_extremes(self).0;
        let max_eig = effective_symmetric_extremes(self).1;
        s.mu = if min_eig > 0.0 {
            min_eig.min(1.0 / max_eig.max(1e-300))
        } else {
            1e-9
        };
        s.kappa = self
            .v_hat
            .iter()
            .chain(&self.b_hat)
            .chain(&self.c_hat)
            .fold(0.0f64, |k, &x| k.max(x.abs()));
        s
    }

    /// Rows for effective.csv: (tensor, i, j, alpha, beta, value), 1-based
    /// spatial and component indices, 0 for slots a tensor does not have.
    pub fn csv_rows(&self) -> Vec<(String, usize, usize, usize, usize, f64)> {
        let m = self.m;
        let mut rows = Vec::new();
        for i in 0..2 {
            for j in 0..2 {
                for al in 0..m {
                    for be in 0..m {
                        rows.push((
                            "a_hat".to_string(),
                            i + 1,
                            j + 1,
                            al + 1,
                            be + 1,
                            self.a(i, j, al, be),
                        ));
                    }
                }
            }
        }
        for i in 0..2 {
            for al in 0..m {
                for be in 0..m {
                    rows.push(("v_hat".to_string(), i + 1, 0, al + 1, be + 1, self.v(i, al, be)));
                }
            }
        }
        for i in 0..2 {
            for al in 0..m {
                for be in 0..m {
                    rows.push(("b_hat".to_string(), i + 1, 0, al + 1, be + 1, self.b(i, al, be)));
                }
            }
        }
        for al in 0..m {
            for be in 0..m {
                rows.push(("c_hat".to_string(), 0, 0, al + 1, be + 1, self.c(al, be)));
            }
        }
        rows
    }
}

/// Smallest and largest eigenvalue of the symmetric part of the effective
/// leading form.
fn effective_symmetric_extremes(eff: &EffectiveTensors) -> (f64, f64) {
    let m = eff.m;
    let n = 2 * m;
    let mut q = vec![0.0; n * n];
    for i in 0..2 {
        for j in 0..2 {
            for al in 0..m {
                for be in 0..m {
                    q[(i * m + al) * n + (j * m + be)] = eff.a(i, j, al, be);
                }
            }
        }
    }
    let mut sym = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            sym[r * n + c] = 0.5 * (q[r * n + c] + q[c * n + r]);
        }
    }
    let eig = symmetric_eigenvalues(sym, n);
    (eig[0], eig[n - 1])
}

/// Certify ellipticity of the effective leading tensor; returns the smallest
/// symmetric-part eigenvalue.
pub fn check_effective_ellipticity(eff: &EffectiveTensors) -> Result<f64> {
    let (lo, _) = effective_symmetric_extremes(eff);
    if !(lo > 0.0) {
        return Err(Error::EffectiveNotElliptic { eigenvalue: lo });
    }
    Ok(lo)
}

/// Assemble the effective tensors from grid coefficients and correctors
/// chi = [chi_0, chi_1, chi_2] (cell-centered m x m fields).
pub fn assemble_homogenized(grid: &GridCoefficients, chi: &[MatField; 3]) -> Result<EffectiveTensors> {
    let n = grid.n;
    let m = grid.m();
    for f in chi {
        if f.n != n {
            return Err(Error::GridMismatch {
                expected: n,
                found: f.n,
            });
        }
    }
    let tg = TorusGrid::new(n);
    let nn = n * n;
    let inv = 1.0 / nn as f64;

    // dchi[k][axis] = centered difference of chi_k along axis, per component.
    let mut dchi: Vec<[MatField; 2]> = Vec::with_capacity(3);
    for k in 0..3 {
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
        dchi.push([dx, dy]);
    }
    let d = |k: usize, axis: usize, r: usize, c: usize| dchi[k][axis].comp(r, c);

    let mut eff = EffectiveTensors {
        m,
        quadrature_n: n,
        a_hat: vec![0.0; 4 * m * m],
        v_hat: vec![0.0; 2 * m * m],
        b_hat: vec![0.0; 2 * m * m],
        c_hat: vec![0.0; m * m],
        lambda: grid.set.lambda,
    };

    for i in 0..2 {
        for j in 0..2 {
            for al in 0..m {
                for be in 0..m {
                    let mut acc = 0.0;
                    let base = &grid.a_s(i, j, al, be).center;
                    for cell in 0..nn {
                        acc += base[cell];
                    }
                    for k in 0..2 {
                        for ga in 0..m {
                            let aik = &grid.a_s(i, k, al, ga).center;
                            let dc = d(j + 1, k, ga, be);
                            for cell in 0..nn {
                                acc += aik[cell] * dc[cell];
                            }
                        }
                    }
                    eff.a_hat[((i * 2 + j) * m + al) * m + be] = acc * inv;
                }
            }
        }
    }
    for i in 0..2 {
        for al in 0..m {
            for be in 0..m {
                let mut acc = 0.0;
                let base = &grid.v_s(i, al, be).center;
                for cell in 0..nn {
                    acc += base[cell];
                }
                for k in 0..2 {
                    for ga in 0..m {
                        let aik = &grid.a_s(i, k, al, ga).center;
                        let dc = d(0, k, ga, be);
                        for cell in 0..nn {
                            acc += aik[cell] * dc[cell];
                        }
                    }
                }
                eff.v_hat[(i * m + al) * m + be] = acc * inv;
            }
        }
    }
    for i in 0..2 {
        for al in 0..m {
            for be in 0..m {
                let mut acc = 0.0;
                let base = &grid.b_s(i, al, be).center;
                for cell in 0..nn {
                    acc += base[cell];
                }
                for k in 0..2 {
                    for ga in 0..m {
                        let bk = &grid.b_s(k, al, ga).center;
                        let dc = d(i + 1, k, ga, be);
                        for cell in 0..nn {
                            acc += bk[cell] * dc[cell];
                        }
                    }
                }
                eff.b_hat[(i * m + al) * m + be] = acc * inv;
            }
        }
    }
    for al in 0..m {
        for be in 0..m {
            let mut acc = 0.0;
            let base = &grid.c_s(al, be).center;
            for cell in 0..nn {
                acc += base[cell];
            }
            for k in 0..2 {
                for ga in 0..m {
                    let bk = &grid.b_s(k, al, ga).center;
                    let dc = d(0, k, ga, be);
                    for cell in 0..nn {
                        acc += bk[cell] * dc[cell];
                    }
                }
            }
            eff.c_hat[al * m + be] = acc * inv;
        }
    }
    Ok(eff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{preset, sample_grid, FourierEntry};

    #[test]
    fn constant_coefficients_pass_through_unchanged() {
        // With constant coefficients the correctors vanish and every
        // effective tensor equals its input value exactly.
        let mut s = CoefficientSet::zeros(2);
        let vals = [1.7, 0.3, -0.2, 2.4];
        for i in 0..2 {
            for al in 0..2 {
                for be in 0..2 {
                    s.set_a(
                        i,
                        i,
                        al,
                        be,
                        FourierEntry::constant(if al == be { vals[i * 2 + al] + 2.0 } else { 0.25 }),
                    );
                    s.set_v(i, al, be, FourierEntry::constant(0.1 * (i + al + be) as f64));
                    s.set_b(i, al, be, FourierEntry::constant(0.2 - 0.05 * (al + be) as f64));
                }
            }
        }
        s.set_c(0, 0, FourierEntry::constant(0.9));
        s.set_c(1, 1, FourierEntry::constant(1.1));
        s.set_c(0, 1, FourierEntry::constant(0.2));
        s.mu = 0.2;
        let g = sample_grid(&s, 8).unwrap();
        let chi = [
            MatField::zeros(8, 2, 2),
            MatField::zeros(8, 2, 2),
            MatField::zeros(8, 2, 2),
        ];
        let eff = assemble_homogenized(&g, &chi).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for al in 0..2 {
                    for be in 0..2 {
                        let want = s.a_e(i, j, al, be).constant;
                        assert!((eff.a(i, j, al, be) - want).abs() < 1e-12);
                    }
                }
            }
        }
        for i in 0..2 {
            for al in 0..2 {
                for be in 0..2 {
                    assert!((eff.v(i, al, be) - s.v_e(i, al, be).constant).abs() < 1e-12);
                    assert!((eff.b(i, al, be) - s.b_e(i, al, be).constant).abs() < 1e-12);
                }
            }
        }
        assert!((eff.c(0, 1) - 0.2).abs() < 1e-12);
        // Round trip through a constant coefficient set preserves values.
        let back = eff.to_constant_set();
        assert_eq!(back.a_e(0, 0, 0, 0).constant, eff.a(0, 0, 0, 0));
        assert_eq!(back.c_e(1, 1).constant, eff.c(1, 1));
        assert!(back.mu > 0.0);
    }

    #[test]
    fn effective_ellipticity_check_accepts_identity_and_rejects_negative() {
        let s = preset("identity").unwrap();
        let g = sample_grid(&s, 8).unwrap();
        let chi = [
            MatField::zeros(8, 1, 1),
            MatField::zeros(8, 1, 1),
            MatField::zeros(8, 1, 1),
        ];
        let eff = assemble_homogenized(&g, &chi).unwrap();
        let lo = check_effective_ellipticity(&eff).unwrap();
        assert!((lo - 1.0).abs() < 1e-14);
        let mut bad = eff.clone();
        bad.a_hat[0] = -1.0;
        assert!(matches!(
            check_effective_ellipticity(&bad),
            Err(Error::EffectiveNotElliptic { .. })
        ));
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let s = preset("identity").unwrap();
        let g = sample_grid(&s, 8).unwrap();
        let chi = [
            MatField::zeros(16, 1, 1),
            MatField::zeros(16, 1, 1),
            MatField::zeros(16, 1, 1),
        ];
        assert!(matches!(
            assemble_homogenized(&g, &chi),
            Err(Error::GridMismatch { .. })
        ));
    }
}
