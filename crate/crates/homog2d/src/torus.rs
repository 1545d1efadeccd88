//! Periodic N x N grids: FFT Poisson solves, differences, and spectral
//! resampling of cell-centered data.
//!
//! Cell (i, j) has center ((i+1/2)h, (j+1/2)h) with h = 1/N; arrays are
//! length N^2 indexed (i, j) -> j*N + i. The discrete Laplacian used for
//! torus solves is the compact five-point stencil, whose Fourier symbol
//! -(4/h^2)(sin^2(pi k1/N) + sin^2(pi k2/N)) vanishes only on the zero mode,
//! so solves are well posed on mean-zero data with mean-zero solutions.

use crate::error::{Error, Result};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TorusGrid {
    pub n: usize,
}

impl TorusGrid {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2);
        TorusGrid { n }
    }
    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }
    #[inline]
    pub fn wrap(&self, i: isize) -> usize {
        i.rem_euclid(self.n as isize) as usize
    }
    pub fn cells(&self) -> usize {
        self.n * self.n
    }
}

/// 2D complex FFT, in place, row-column. `inverse` applies the unnormalized
/// conjugate transform (so forward-then-inverse scales by N^2).
fn fft2(data: &mut [Complex<f64>], n: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    // Rows.
    for row in data.chunks_exact_mut(n) {
        fft.process(row);
    }
    // Columns, via transpose buffer.
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

/// Symbol of the compact five-point Laplacian at mode (k1, k2): a negative
/// number, zero only at k = 0.
#[inline]
pub fn laplace5_symbol(n: usize, k1: usize, k2: usize) -> f64 {
    let h = 1.0 / n as f64;
    let s1 = (std::f64::consts::PI * k1 as f64 / n as f64).sin();
    let s2 = (std::f64::consts::PI * k2 as f64 / n as f64).sin();
    -(4.0 / (h * h)) * (s1 * s1 + s2 * s2)
}

/// Apply the five-point Laplacian (periodic).
pub fn apply_laplace5(grid: TorusGrid, u: &[f64]) -> Vec<f64> {
    let n = grid.n;
    let h2 = grid.h() * grid.h();
    let mut out = vec![0.0; n * n];
    for j in 0..n {
        let jm = grid.wrap(j as isize - 1);
        let jp = grid.wrap(j as isize + 1);
        for i in 0..n {
            let im = grid.wrap(i as isize - 1);
            let ip = grid.wrap(i as isize + 1);
            out[grid.idx(i, j)] = (u[grid.idx(ip, j)]
                + u[grid.idx(im, j)]
                + u[grid.idx(i, jp)]
                + u[grid.idx(i, jm)]
                - 4.0 * u[grid.idx(i, j)])
                / h2;
        }
    }
    out
}

/// Solve the periodic Poisson problem (five-point Laplacian) Delta u = f with
/// mean-zero u. Errors if f has a mean exceeding 1e-6 of its sup norm; `what`
/// names the right-hand side in that error.
pub fn solve_poisson(grid: TorusGrid, f: &[f64], what: &str) -> Result<Vec<f64>> {
    let n = grid.n;
    assert_eq!(f.len(), n * n);
    let scale = f.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let mean = f.iter().sum::<f64>() / (n * n) as f64;
    let limit = 1e-6 * scale.max(f64::MIN_POSITIVE);
    if scale > 0.0 && mean.abs() > limit {
        return Err(Error::MeanNotZero {
            what: what.to_string(),
            mean,
            limit,
            scale,
        });
    }
    let mut hat: Vec<Complex<f64>> = f.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft2(&mut hat, n, false);
    for k2 in 0..n {
        for k1 in 0..n {
            let idx = k2 * n + k1;
            if k1 == 0 && k2 == 0 {
                hat[idx] = Complex::new(0.0, 0.0);
            } else {
                hat[idx] /= laplace5_symbol(n, k1, k2);
            }
        }
    }
    fft2(&mut hat, n, true);
    let norm = 1.0 / (n * n) as f64;
    Ok(hat.iter().map(|z| z.re * norm).collect())
}

/// Centered difference along axis (0 = x1, 1 = x2): (u_{+1} - u_{-1}) / 2h.
pub fn diff_centered(grid: TorusGrid, u: &[f64], axis: usize) -> Vec<f64> {
    let n = grid.n;
    let two_h = 2.0 * grid.h();
    let mut out = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            let (pm, pp) = match axis {
                0 => (
                    grid.idx(grid.wrap(i as isize - 1), j),
                    grid.idx(grid.wrap(i as isize + 1), j),
                ),
                1 => (
                    grid.idx(i, grid.wrap(j as isize - 1)),
                    grid.idx(i, grid.wrap(j as isize + 1)),
                ),
                _ => panic!("axis must be 0 or 1"),
            };
            out[grid.idx(i, j)] = (u[pp] - u[pm]) / two_h;
        }
    }
    out
}

/// Mean over cells.
pub fn cell_mean(u: &[f64]) -> f64 {
    u.iter().sum::<f64>() / u.len() as f64
}

/// Subtract the mean in place.
pub fn subtract_mean(u: &mut [f64]) {
    let m = cell_mean(u);
    for x in u.iter_mut() {
        *x -= m;
    }
}

/// Trigonometric resampling of cell-centered torus data onto the corner
/// lattice {(s/t, r/t)} of a T x T grid, optionally differentiating along an
/// axis first.
///
/// The data are identified with their band-limited interpolant
/// f(y) = sum_k g_k e^{2 pi i k.y}, k in [-N/2, N/2)^2, whose coefficients
/// absorb the half-cell phase of the centered samples. Differentiation
/// multiplies by 2 pi i k_axis with the Nyquist line zeroed (it has no
/// conjugate partner). The target spectrum folds source modes mod T, which is
/// exact on the target lattice for any T.
pub fn trig_resample(
    grid: TorusGrid,
    values: &[f64],
    target: usize,
    derivative: Option<usize>,
) -> Vec<f64> {
    let n = grid.n;
    assert_eq!(values.len(), n * n);
    assert!(target >= 1);
    let mut hat: Vec<Complex<f64>> = values.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft2(&mut hat, n, false);
    let nn = 1.0 / (n * n) as f64;
    let t = target;
    let mut th = vec![Complex::new(0.0, 0.0); t * t];
    let signed = |q: usize| -> i64 {
        let q = q as i64;
        if q < n as i64 / 2 {
            q
        } else {
            q - n as i64
        }
    };
    let two_pi = 2.0 * std::f64::consts::PI;
    for q2 in 0..n {
        let k2 = signed(q2);
        for q1 in 0..n {
            let k1 = signed(q1);
            // Coefficient of e^{2 pi i k.y}: remove the half-cell phase.
            let phase = -std::f64::consts::PI * (k1 + k2) as f64 / n as f64;
            let mut g = hat[q2 * n + q1] * Complex::from_polar(nn, phase);
            if let Some(axis) = derivative {
                let k = if axis == 0 { k1 } else { k2 };
                // The Nyquist line of the differentiated axis is zeroed to
                // keep the result real.
                if k == -(n as i64) / 2 {
                    g = Complex::new(0.0, 0.0);
                } else {
                    g *= Complex::new(0.0, two_pi * k as f64);
                }
            }
            let r1 = (k1.rem_euclid(t as i64)) as usize;
            let r2 = (k2.rem_euclid(t as i64)) as usize;
            th[r2 * t + r1] += g;
        }
    }
    fft2(&mut th, t, true);
    th.iter().map(|z| z.re).collect()
}

/// Bilinear interpolation of cell-centered periodic data at (y1, y2).
pub fn bilinear(grid: TorusGrid, values: &[f64], y1: f64, y2: f64) -> f64 {
    let n = grid.n as f64;
    let s1 = y1.rem_euclid(1.0) * n - 0.5;
    let s2 = y2.rem_euclid(1.0) * n - 0.5;
    let i0 = s1.floor();
    let j0 = s2.floor();
    let fx = s1 - i0;
    let fy = s2 - j0;
    let i0w = grid.wrap(i0 as isize);
    let i1w = grid.wrap(i0 as isize + 1);
    let j0w = grid.wrap(j0 as isize);
    let j1w = grid.wrap(j0 as isize + 1);
    let v00 = values[grid.idx(i0w, j0w)];
    let v10 = values[grid.idx(i1w, j0w)];
    let v01 = values[grid.idx(i0w, j1w)];
    let v11 = values[grid.idx(i1w, j1w)];
    v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy
}

/// An m x m matrix of cell-centered torus fields (e.g. a corrector family:
/// rows are solution components, columns the unit-vector slot).
#[derive(Debug, Clone)]
pub struct MatField {
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
}

impl MatField {
    pub fn zeros(n: usize, rows: usize, cols: usize) -> Self {
        MatField {
            n,
            rows,
            cols,
            data: vec![0.0; rows * cols * n * n],
        }
    }
    #[inline]
    pub fn comp(&self, r: usize, c: usize) -> &[f64] {
        let nn = self.n * self.n;
        let k = (r * self.cols + c) * nn;
        &self.data[k..k + nn]
    }
    #[inline]
    pub fn comp_mut(&mut self, r: usize, c: usize) -> &mut [f64] {
        let nn = self.n * self.n;
        let k = (r * self.cols + c) * nn;
        &mut self.data[k..k + nn]
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn sup(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centers(n: usize) -> Vec<(f64, f64)> {
        let h = 1.0 / n as f64;
        let mut pts = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                pts.push(((i as f64 + 0.5) * h, (j as f64 + 0.5) * h));
            }
        }
        pts
    }

    #[test]
    fn poisson_inverts_single_mode_exactly() {
        // Delta5 e^{2 pi i k.y} = symbol * e^{...}; solving recovers 1/symbol.
        let n = 32;
        let grid = TorusGrid::new(n);
        let f: Vec<f64> = centers(n)
            .iter()
            .map(|&(x, y)| (2.0 * std::f64::consts::PI * (x + 2.0 * y)).cos())
            .collect();
        let u = solve_poisson(grid, &f, "test rhs").unwrap();
        let sym = laplace5_symbol(n, 1, 2);
        for (uc, fc) in u.iter().zip(&f) {
            assert!((uc - fc / sym).abs() < 1e-12);
        }
        // Re-applying the Laplacian returns f to machine accuracy.
        let back = apply_laplace5(grid, &u);
        for (b, fc) in back.iter().zip(&f) {
            assert!((b - fc).abs() < 1e-9);
        }
    }

    #[test]
    fn poisson_rejects_nonzero_mean() {
        let grid = TorusGrid::new(8);
        let f = vec![1.0; 64];
        assert!(matches!(
            solve_poisson(grid, &f, "test rhs"),
            Err(Error::MeanNotZero { .. })
        ));
    }

    #[test]
    fn resample_reproduces_trig_polynomial_on_corner_lattice() {
        // Sample cos(2 pi (x - 3y)) at centers of a 32 grid, resample to the
        // corner lattice of an 8 grid, compare to the exact values.
        let n = 32;
        let grid = TorusGrid::new(n);
        let f = |x: f64, y: f64| (2.0 * std::f64::consts::PI * (x - 3.0 * y)).cos() + 0.7;
        let vals: Vec<f64> = centers(n).iter().map(|&(x, y)| f(x, y)).collect();
        let t = 8;
        let out = trig_resample(grid, &vals, t, None);
        for r in 0..t {
            for s in 0..t {
                let exact = f(s as f64 / t as f64, r as f64 / t as f64);
                assert!(
                    (out[r * t + s] - exact).abs() < 1e-11,
                    "({s},{r}): {} vs {exact}",
                    out[r * t + s]
                );
            }
        }
    }

    #[test]
    fn resample_derivative_matches_analytic_gradient() {
        let n = 32;
        let grid = TorusGrid::new(n);
        let two_pi = 2.0 * std::f64::consts::PI;
        let vals: Vec<f64> = centers(n)
            .iter()
            .map(|&(x, y)| (two_pi * (2.0 * x + y)).sin())
            .collect();
        let t = 16;
        let dx = trig_resample(grid, &vals, t, Some(0));
        let dy = trig_resample(grid, &vals, t, Some(1));
        for r in 0..t {
            for s in 0..t {
                let (x, y) = (s as f64 / t as f64, r as f64 / t as f64);
                let gx = 2.0 * two_pi * (two_pi * (2.0 * x + y)).cos();
                let gy = two_pi * (two_pi * (2.0 * x + y)).cos();
                assert!((dx[r * t + s] - gx).abs() < 1e-10);
                assert!((dy[r * t + s] - gy).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn resample_to_larger_grid_zero_pads() {
        let n = 8;
        let grid = TorusGrid::new(n);
        let two_pi = 2.0 * std::f64::consts::PI;
        let vals: Vec<f64> = centers(n).iter().map(|&(x, _)| (two_pi * x).sin()).collect();
        let t = 32;
        let out = trig_resample(grid, &vals, t, None);
        for s in 0..t {
            let exact = (two_pi * s as f64 / t as f64).sin();
            assert!((out[s] - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn centered_difference_is_second_order() {
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut errs = Vec::new();
        for n in [16usize, 32] {
            let grid = TorusGrid::new(n);
            let vals: Vec<f64> = centers(n).iter().map(|&(x, _)| (two_pi * x).sin()).collect();
            let d = diff_centered(grid, &vals, 0);
            let err = centers(n)
                .iter()
                .zip(&d)
                .map(|(&(x, _), &dv)| (dv - two_pi * (two_pi * x).cos()).abs())
                .fold(0.0f64, f64::max);
            errs.push(err);
        }
        assert!(errs[0] / errs[1] > 3.5, "ratio {}", errs[0] / errs[1]);
    }

    #[test]
    fn bilinear_interpolation_is_exact_on_linear_data_and_periodic() {
        let n = 16;
        let grid = TorusGrid::new(n);
        let vals: Vec<f64> = centers(n).iter().map(|&(x, y)| 2.0 * x + y).collect();
        // Away from the wrap seam, bilinear reproduces affine data exactly.
        let v = bilinear(grid, &vals, 0.4, 0.5);
        assert!((v - 1.3).abs() < 1e-12);
        // Periodicity: shifting by a full period changes nothing.
        let a = bilinear(grid, &vals, 0.37, 0.21);
        let b = bilinear(grid, &vals, 1.37, -0.79);
        assert!((a - b).abs() < 1e-12);
    }
}
