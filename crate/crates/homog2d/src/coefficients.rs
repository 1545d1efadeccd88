//! Periodic coefficient fields on the unit torus and their grid sampling.
//!
//! A coefficient entry is a real trigonometric polynomial
//!   e(y) = constant + sum_m [ cos_amp_m cos(2 pi k_m . y) + sin_amp_m sin(2 pi k_m . y) ].
//!
//! All grid sample points used anywhere in the crate are rationals p/q, and
//! entries are evaluated through integer phase arithmetic (`eval_frac`), so
//! sampling commutes bit-identically with period shifts and nothing depends
//! on the size of p. A full coefficient set bundles the matrix A, the
//! lower-order fields V, B, c, the zero-order shift lambda, and the declared
//! two-sided ellipticity constant mu (mu |xi|^2 <= A xi.xi <= mu^-1 |xi|^2).

use crate::error::{Error, Result};
use crate::util::symmetric_eigenvalues;

/// One Fourier mode: amplitude pair for wave vector (k1, k2).
#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub k1: i32,
    pub k2: i32,
    pub cos_amp: f64,
    pub sin_amp: f64,
}

/// A scalar entry of a coefficient tensor: a trigonometric polynomial on the torus.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FourierEntry {
    pub constant: f64,
    pub modes: Vec<Mode>,
}

impl FourierEntry {
    pub fn constant(c: f64) -> Self {
        FourierEntry {
            constant: c,
            modes: Vec::new(),
        }
    }

    pub fn with_mode(mut self, k1: i32, k2: i32, cos_amp: f64, sin_amp: f64) -> Self {
        self.modes.push(Mode {
            k1,
            k2,
            cos_amp,
            sin_amp,
        });
        self
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0
            && self
                .modes
                .iter()
                .all(|m| m.cos_amp == 0.0 && m.sin_amp == 0.0)
    }

    /// Largest |k| component over all modes (0 for a constant entry).
    pub fn max_mode(&self) -> i32 {
        self.modes
            .iter()
            .map(|m| m.k1.abs().max(m.k2.abs()))
            .max()
            .unwrap_or(0)
    }

    /// Mean over the torus: the constant term.
    pub fn mean(&self) -> f64 {
        self.constant
    }

    /// Sup-norm upper bound: |constant| + sum of mode amplitudes.
    pub fn sup_bound(&self) -> f64 {
        self.constant.abs()
            + self
                .modes
                .iter()
                .map(|m| (m.cos_amp * m.cos_amp + m.sin_amp * m.sin_amp).sqrt())
                .sum::<f64>()
    }

    /// Evaluate at the rational point y = (p1/q, p2/q).
    ///
    /// The phase k.y is reduced to [0,1) in exact integer arithmetic, so the
    /// result is bit-identical under p_i -> p_i + n q (period shifts) and
    /// independent of how large p_i is.
    pub fn eval_frac(&self, p1: i64, p2: i64, q: i64) -> f64 {
        debug_assert!(q > 0);
        let mut v = self.constant;
        for m in &self.modes {
            let ph = (m.k1 as i64 * p1 + m.k2 as i64 * p2).rem_euclid(q);
            let angle = 2.0 * std::f64::consts::PI * (ph as f64 / q as f64);
            v += m.cos_amp * angle.cos() + m.sin_amp * angle.sin();
        }
        v
    }

    /// Evaluate at an arbitrary point (used only by probes and plots; grid
    /// sampling goes through `eval_frac`).
    pub fn eval(&self, y1: f64, y2: f64) -> f64 {
        let mut v = self.constant;
        for m in &self.modes {
            let t = (m.k1 as f64 * y1 + m.k2 as f64 * y2).rem_euclid(1.0);
            let angle = 2.0 * std::f64::consts::PI * t;
            v += m.cos_amp * angle.cos() + m.sin_amp * angle.sin();
        }
        v
    }

    /// Modes sorted by wave vector, for canonical comparison and hashing.
    fn canonical_modes(&self) -> Vec<Mode> {
        let mut ms = self.modes.clone();
        ms.sort_by_key(|m| (m.k1, m.k2));
        ms
    }

    pub fn same_entry(&self, other: &FourierEntry) -> bool {
        self.constant == other.constant && self.canonical_modes() == other.canonical_modes()
    }
}

/// Complete coefficient data for the operator
/// L = -div(A grad u + V u) + B grad u + (c + lambda) u.
///
/// Tensor entries are stored flat in index order; all indices are 0-based
/// internally (the config format is 1-based and documented separately).
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub m: usize,
    /// a[(i,j,alpha,beta)], i,j in {0,1}: flat index ((i*2+j)*m+alpha)*m+beta.
    pub a: Vec<FourierEntry>,
    /// v[(i,alpha,beta)]: flat index (i*m+alpha)*m+beta.
    pub v: Vec<FourierEntry>,
    /// b[(i,alpha,beta)]: same layout as v.
    pub b: Vec<FourierEntry>,
    /// c[(alpha,beta)]: flat index alpha*m+beta.
    pub c: Vec<FourierEntry>,
    /// Zero-order shift added as + lambda * u (identity across components).
    pub lambda: f64,
    /// Declared two-sided ellipticity constant for A.
    pub mu: f64,
    /// Declared sup-norm bound for the lower-order fields V, B, c.
    pub kappa: f64,
}

/// Maximum number of modes accepted per entry.
pub const MAX_MODES_PER_ENTRY: usize = 64;

impl CoefficientSet {
    pub fn zeros(m: usize) -> Self {
        CoefficientSet {
            m,
            a: vec![FourierEntry::default(); 4 * m * m],
            v: vec![FourierEntry::default(); 2 * m * m],
            b: vec![FourierEntry::default(); 2 * m * m],
            c: vec![FourierEntry::default(); m * m],
            lambda: 0.0,
            mu: 1.0,
            kappa: 0.0,
        }
    }

    #[inline]
    pub fn a_idx(&self, i: usize, j: usize, al: usize, be: usize) -> usize {
        ((i * 2 + j) * self.m + al) * self.m + be
    }
    #[inline]
    pub fn vb_idx(&self, i: usize, al: usize, be: usize) -> usize {
        (i * self.m + al) * self.m + be
    }
    #[inline]
    pub fn c_idx(&self, al: usize, be: usize) -> usize {
        al * self.m + be
    }

    pub fn a_e(&self, i: usize, j: usize, al: usize, be: usize) -> &FourierEntry {
        &self.a[self.a_idx(i, j, al, be)]
    }
    pub fn v_e(&self, i: usize, al: usize, be: usize) -> &FourierEntry {
        &self.v[self.vb_idx(i, al, be)]
    }
    pub fn b_e(&self, i: usize, al: usize, be: usize) -> &FourierEntry {
        &self.b[self.vb_idx(i, al, be)]
    }
    pub fn c_e(&self, al: usize, be: usize) -> &FourierEntry {
        &self.c[self.c_idx(al, be)]
    }

    pub fn set_a(&mut self, i: usize, j: usize, al: usize, be: usize, e: FourierEntry) {
        let k = self.a_idx(i, j, al, be);
        self.a[k] = e;
    }
    pub fn set_v(&mut self, i: usize, al: usize, be: usize, e: FourierEntry) {
        let k = self.vb_idx(i, al, be);
        self.v[k] = e;
    }
    pub fn set_b(&mut self, i: usize, al: usize, be: usize, e: FourierEntry) {
        let k = self.vb_idx(i, al, be);
        self.b[k] = e;
    }
    pub fn set_c(&mut self, al: usize, be: usize, e: FourierEntry) {
        let k = self.c_idx(al, be);
        self.c[k] = e;
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    /// True when every lower-order field is identically zero.
    pub fn lower_order_is_zero(&self) -> bool {
        self.v.iter().all(|e| e.is_zero())
            && self.b.iter().all(|e| e.is_zero())
            && self.c.iter().all(|e| e.is_zero())
    }

    /// True when the leading block satisfies a_ij^{ab} = a_ji^{ba} entrywise.
    pub fn a_block_symmetric(&self) -> bool {
        for i in 0..2 {
            for j in 0..2 {
                for al in 0..self.m {
                    for be in 0..self.m {
                        if !self.a_e(i, j, al, be).same_entry(self.a_e(j, i, be, al)) {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    /// True when the discretized cell operator -D.(A D u) yields a symmetric
    /// matrix: the diagonal blocks must be component-symmetric and the cross
    /// blocks a_12, a_21 must vanish (tangential edge averaging breaks exact
    /// discrete symmetry for nonzero cross blocks even when the continuum
    /// operator is self-adjoint).
    pub fn cell_operator_symmetric(&self) -> bool {
        for al in 0..self.m {
            for be in 0..self.m {
                if !self.a_e(0, 0, al, be).same_entry(self.a_e(0, 0, be, al)) {
                    return false;
                }
                if !self.a_e(1, 1, al, be).same_entry(self.a_e(1, 1, be, al)) {
                    return false;
                }
                if !self.a_e(0, 1, al, be).is_zero() || !self.a_e(1, 0, al, be).is_zero() {
                    return false;
                }
            }
        }
        true
    }

    /// True when the discretized domain operator is symmetric: symmetric cell
    /// part, no V or B, symmetric c.
    pub fn domain_operator_symmetric(&self) -> bool {
        if !self.cell_operator_symmetric() {
            return false;
        }
        if !self.v.iter().all(|e| e.is_zero()) || !self.b.iter().all(|e| e.is_zero()) {
            return false;
        }
        for al in 0..self.m {
            for be in 0..self.m {
                if !self.c_e(al, be).same_entry(self.c_e(be, al)) {
                    return false;
                }
            }
        }
        true
    }

    /// Formal adjoint coefficient set: a*_ij^{ab} = a_ji^{ba}, V* = B
    /// transposed in (alpha,beta), B* = V transposed, c* = c transposed.
    pub fn adjoint_set(&self) -> CoefficientSet {
        let mut s = CoefficientSet::zeros(self.m);
        s.lambda = self.lambda;
        s.mu = self.mu;
        s.kappa = self.kappa;
        for i in 0..2 {
            for j in 0..2 {
                for al in 0..self.m {
                    for be in 0..self.m {
                        s.set_a(i, j, al, be, self.a_e(j, i, be, al).clone());
                    }
                }
            }
        }
        for i in 0..2 {
            for al in 0..self.m {
                for be in 0..self.m {
                    s.set_v(i, al, be, self.b_e(i, be, al).clone());
                    s.set_b(i, al, be, self.v_e(i, be, al).clone());
                }
            }
        }
        for al in 0..self.m {
            for be in 0..self.m {
                s.set_c(al, be, self.c_e(be, al).clone());
            }
        }
        s
    }

    /// Largest |k| over all entries of all tensors.
    pub fn max_mode(&self) -> i32 {
        self.a
            .iter()
            .chain(&self.v)
            .chain(&self.b)
            .chain(&self.c)
            .map(|e| e.max_mode())
            .max()
            .unwrap_or(0)
    }

    /// Structural validation: shapes, mode budget, positive mu.
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        let mm = self.m * self.m;
        if self.a.len() != 4 * mm
            || self.v.len() != 2 * mm
            || self.b.len() != 2 * mm
            || self.c.len() != mm
        {
            return Err(Error::Config("coefficient tensor shape mismatch".into()));
        }
        for e in self.a.iter().chain(&self.v).chain(&self.b).chain(&self.c) {
            if e.modes.len() > MAX_MODES_PER_ENTRY {
                return Err(Error::Config(format!(
                    "entry has {} modes; at most {} are supported",
                    e.modes.len(),
                    MAX_MODES_PER_ENTRY
                )));
            }
            for md in &e.modes {
                if !md.cos_amp.is_finite() || !md.sin_amp.is_finite() {
                    return Err(Error::Config("non-finite mode amplitude".into()));
                }
            }
            if !e.constant.is_finite() {
                return Err(Error::Config("non-finite constant term".into()));
            }
        }
        if !(self.mu > 0.0) {
            return Err(Error::Config(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Canonical textual form: deterministic, shortest-roundtrip floats,
    /// entries in index order with modes sorted by wave vector. Used for
    /// cache keys and equality in tests.
    pub fn canonical_string(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "m={};lambda={};mu={};kappa={};",
            self.m, self.lambda, self.mu, self.kappa
        ));
        let dump = |out: &mut String, tag: &str, idx: usize, e: &FourierEntry| {
            out.push_str(&format!("{}[{}]={}", tag, idx, e.constant));
            for md in e.canonical_modes() {
                out.push_str(&format!(
                    ",({},{},{},{})",
                    md.k1, md.k2, md.cos_amp, md.sin_amp
                ));
            }
            out.push(';');
        };
        for (k, e) in self.a.iter().enumerate() {
            dump(&mut s, "A", k, e);
        }
        for (k, e) in self.v.iter().enumerate() {
            dump(&mut s, "V", k, e);
        }
        for (k, e) in self.b.iter().enumerate() {
            dump(&mut s, "B", k, e);
        }
        for (k, e) in self.c.iter().enumerate() {
            dump(&mut s, "c", k, e);
        }
        s
    }
}

/// Names accepted by `preset`.
pub const PRESET_NAMES: [&str; 4] = [
    "identity",
    "laminate",
    "smooth-checkerboard",
    "full-lower-order",
];

/// Built-in coefficient sets.
///
/// - `identity`: scalar Laplacian, A = I, no lower-order terms.
/// - `laminate`: scalar a(y) = 2 + sin(2 pi y1) I, a 1D laminate with
///   closed-form homogenization (harmonic mean sqrt(3) across, mean 2 along).
/// - `smooth-checkerboard`: scalar a(y) = 2 + 0.8 sin(2 pi y1) sin(2 pi y2) I,
///   symmetric under coordinate swap.
/// - `full-lower-order`: a 2-component system with nontrivial A (including
///   cross blocks), V, B, and c, exercising every term of the operator.
pub fn preset(name: &str) -> Result<CoefficientSet> {
    let e = FourierEntry::constant;
    let set = match name {
        "identity" => {
            let mut s = CoefficientSet::zeros(1);
            s.set_a(0, 0, 0, 0, e(1.0));
            s.set_a(1, 1, 0, 0, e(1.0));
            s.mu = 1.0;
            s
        }
        "laminate" => {
            let mut s = CoefficientSet::zeros(1);
            let lam = e(2.0).with_mode(1, 0, 0.0, 1.0);
            s.set_a(0, 0, 0, 0, lam.clone());
            s.set_a(1, 1, 0, 0, lam);
            s.mu = 1.0 / 3.0;
            s
        }
        "smooth-checkerboard" => {
            let mut s = CoefficientSet::zeros(1);
            // 0.8 sin(2 pi y1) sin(2 pi y2) = 0.4 cos(2 pi (y1-y2)) - 0.4 cos(2 pi (y1+y2)).
            let cb = e(2.0).with_mode(1, -1, 0.4, 0.0).with_mode(1, 1, -0.4, 0.0);
            s.set_a(0, 0, 0, 0, cb.clone());
            s.set_a(1, 1, 0, 0, cb);
            s.mu = 0.35;
            s
        }
        "full-lower-order" => {
            let mut s = CoefficientSet::zeros(2);
            // Leading block: oscillatory diagonal, symmetric cross terms.
            s.set_a(0, 0, 0, 0, e(2.0).with_mode(1, 0, 0.0, 0.5));
            s.set_a(1, 1, 0, 0, e(2.0).with_mode(0, 1, 0.0, 0.5));
            s.set_a(0, 0, 1, 1, e(2.0).with_mode(1, 0, 0.5, 0.0));
            s.set_a(1, 1, 1, 1, e(2.0).with_mode(0, 1, 0.5, 0.0));
            s.set_a(0, 0, 0, 1, e(0.0).with_mode(0, 1, 0.0, 0.25));
            s.set_a(0, 0, 1, 0, e(0.0).with_mode(0, 1, 0.0, 0.25));
            s.set_a(1, 1, 0, 1, e(0.0).with_mode(1, 0, 0.25, 0.0));
            s.set_a(1, 1, 1, 0, e(0.0).with_mode(1, 0, 0.25, 0.0));
            s.set_a(0, 1, 0, 0, e(0.0).with_mode(1, 1, 0.0, 0.3));
            s.set_a(1, 0, 0, 0, e(0.0).with_mode(1, 1, 0.0, 0.3));
            s.set_a(0, 1, 1, 1, e(0.0).with_mode(1, -1, 0.3, 0.0));
            s.set_a(1, 0, 1, 1, e(0.0).with_mode(1, -1, 0.3, 0.0));
            s.set_a(0, 1, 0, 1, e(0.0).with_mode(1, 1, 0.2, 0.0));
            s.set_a(1, 0, 1, 0, e(0.0).with_mode(1, 1, 0.2, 0.0));
            // Divergence-form drift V.
            s.set_v(0, 0, 0, e(0.0).with_mode(0, 1, 0.0, 0.6));
            s.set_v(1, 0, 0, e(0.0).with_mode(1, 0, 0.6, 0.0));
            s.set_v(0, 0, 1, e(0.0).with_mode(1, 0, 0.4, 0.0));
            s.set_v(1, 1, 0, e(0.0).with_mode(0, 1, 0.0, 0.4));
            s.set_v(0, 1, 1, e(0.0).with_mode(1, 1, 0.5, 0.0));
            s.set_v(1, 1, 1, e(0.0).with_mode(1, -1, 0.0, 0.5));
            // Advective drift B.
            s.set_b(0, 0, 0, e(0.0).with_mode(1, 0, 0.7, 0.0));
            s.set_b(1, 0, 0, e(0.0).with_mode(0, 1, 0.0, 0.3));
            s.set_b(0, 1, 1, e(0.0).with_mode(1, 0, 0.0, 0.4));
            s.set_b(1, 1, 1, e(0.0).with_mode(0, 1, 0.0, 0.7));
            s.set_b(0, 0, 1, e(0.0).with_mode(1, 1, 0.0, 0.3));
            s.set_b(1, 1, 0, e(0.0).with_mode(0, 1, 0.3, 0.0));
            // Zero-order coupling, deliberately nonsymmetric.
            s.set_c(0, 0, e(0.5).with_mode(0, 1, 0.4, 0.0));
            s.set_c(1, 1, e(0.5).with_mode(1, 0, 0.0, 0.4));
            s.set_c(0, 1, e(0.0).with_mode(1, 1, 0.0, 0.2));
            s.set_c(1, 0, e(0.0).with_mode(1, 0, 0.15, 0.0));
            s.mu = 0.25;
            s.kappa = 1.0;
            s
        }
        other => {
            return Err(Error::UnknownPreset {
                name: other.to_string(),
            })
        }
    };
    set.validate()?;
    Ok(set)
}

/// Check two-sided ellipticity of A on a density x density sample of the
/// torus (cell-center points). Returns the smallest symmetric-part eigenvalue
/// found; errors if it is nonpositive or if the largest exceeds 1/mu.
///
/// The quadratic form is A xi.xi over xi in R^{2 x m}, flattened with index
/// (i, alpha) -> i*m + alpha; its symmetric part decides coercivity.
pub fn verify_ellipticity(set: &CoefficientSet, density: usize) -> Result<f64> {
    set.validate()?;
    let m = set.m;
    let n = 2 * m;
    let mut min_eig = f64::INFINITY;
    let mut max_eig = f64::NEG_INFINITY;
    let mut argmin = (0.0, 0.0);
    let mut argmax = (0.0, 0.0);
    let q = 2 * density as i64;
    for sy in 0..density {
        for sx in 0..density {
            let (p1, p2) = (2 * sx as i64 + 1, 2 * sy as i64 + 1);
            let mut qmat = vec![0.0; n * n];
            for i in 0..2 {
                for j in 0..2 {
                    for al in 0..m {
                        for be in 0..m {
                            qmat[(i * m + al) * n + (j * m + be)] =
                                set.a_e(i, j, al, be).eval_frac(p1, p2, q);
                        }
                    }
                }
            }
            // Symmetrize in place.
            let mut sym = vec![0.0; n * n];
            for r in 0..n {
                for cc in 0..n {
                    sym[r * n + cc] = 0.5 * (qmat[r * n + cc] + qmat[cc * n + r]);
                }
            }
            let eig = symmetric_eigenvalues(sym, n);
            let (lo, hi) = (eig[0], eig[n - 1]);
            if lo < min_eig {
                min_eig = lo;
                argmin = (p1 as f64 / q as f64, p2 as f64 / q as f64);
            }
            if hi > max_eig {
                max_eig = hi;
                argmax = (p1 as f64 / q as f64, p2 as f64 / q as f64);
            }
        }
    }
    if !(min_eig > 0.0) {
        return Err(Error::NotElliptic {
            y1: argmin.0,
            y2: argmin.1,
            eigenvalue: min_eig,
        });
    }
    if max_eig > 1.0 / set.mu + 1e-9 {
        return Err(Error::EllipticityUpperBound {
            y1: argmax.0,
            y2: argmax.1,
            eigenvalue: max_eig,
            bound: 1.0 / set.mu,
        });
    }
    Ok(min_eig)
}

/// One coefficient entry sampled at the three staggered point families of an
/// N x N torus grid: cell centers ((i+1/2)h, (j+1/2)h), east edge midpoints
/// ((i+1)h, (j+1/2)h), and north edge midpoints ((i+1/2)h, (j+1)h).
/// All arrays are length N^2, index (i, j) -> j*N + i.
#[derive(Debug, Clone)]
pub struct Sampled3 {
    pub center: Vec<f64>,
    pub xedge: Vec<f64>,
    pub yedge: Vec<f64>,
}

/// A coefficient set sampled onto a torus grid, ready for the cell solvers.
#[derive(Debug, Clone)]
pub struct GridCoefficients {
    pub n: usize,
    pub set: CoefficientSet,
    pub a: Vec<Sampled3>,
    pub v: Vec<Sampled3>,
    pub b: Vec<Sampled3>,
    pub c: Vec<Sampled3>,
}

impl GridCoefficients {
    pub fn m(&self) -> usize {
        self.set.m
    }
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }
    pub fn a_s(&self, i: usize, j: usize, al: usize, be: usize) -> &Sampled3 {
        &self.a[self.set.a_idx(i, j, al, be)]
    }
    pub fn v_s(&self, i: usize, al: usize, be: usize) -> &Sampled3 {
        &self.v[self.set.vb_idx(i, al, be)]
    }
    pub fn b_s(&self, i: usize, al: usize, be: usize) -> &Sampled3 {
        &self.b[self.set.vb_idx(i, al, be)]
    }
    pub fn c_s(&self, al: usize, be: usize) -> &Sampled3 {
        &self.c[self.set.c_idx(al, be)]
    }
}

fn sample_entry(e: &FourierEntry, n: usize) -> Sampled3 {
    let q = 2 * n as i64;
    let mut center = vec![0.0; n * n];
    let mut xedge = vec![0.0; n * n];
    let mut yedge = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            let idx = j * n + i;
            let (ci, cj) = (2 * i as i64 + 1, 2 * j as i64 + 1);
            center[idx] = e.eval_frac(ci, cj, q);
            xedge[idx] = e.eval_frac(ci + 1, cj, q);
            yedge[idx] = e.eval_frac(ci, cj + 1, q);
        }
    }
    Sampled3 {
        center,
        xedge,
        yedge,
    }
}

/// Sample a coefficient set on an N x N torus grid.
///
/// N must be a power of two at least 4 * max|k| (and at least 4), so every
/// mode is resolved with at least four cells per wave and sampling is
/// alias-free.
pub fn sample_grid(set: &CoefficientSet, n: usize) -> Result<GridCoefficients> {
    set.validate()?;
    let required = (4 * set.max_mode().max(1) as usize).max(4);
    if !n.is_power_of_two() || n < required {
        return Err(Error::Aliasing { n, required });
    }
    Ok(GridCoefficients {
        n,
        set: set.clone(),
        a: set.a.iter().map(|e| sample_entry(e, n)).collect(),
        v: set.v.iter().map(|e| sample_entry(e, n)).collect(),
        b: set.b.iter().map(|e| sample_entry(e, n)).collect(),
        c: set.c.iter().map(|e| sample_entry(e, n)).collect(),
    })
}
