//! Dirichlet problems on the unit square: mesh, nodal fields, conservative
//! assembly of L_eps and L_0, preconditioned Krylov solves, norms, and
//! coercivity probes.
//!
//! The mesh has `cells` subintervals per axis (h = 1/cells), nodes at
//! (i h, j h) for 0 <= i, j <= cells. Interior nodes are unknowns; boundary
//! nodes carry Dirichlet data and are eliminated into the right-hand side
//! through an explicit (row, boundary-node, coefficient) list, so one
//! assembled matrix serves arbitrary boundary data. The leading term is
//! discretized with edge-midpoint fluxes (normal gradient plus averaged
//! tangential gradient), V by edge-averaged fluxes, B by centered
//! differences, c + lambda at nodes. Oscillatory coefficients are sampled at
//! x/eps through exact period tables: every sample point is a rational
//! multiple of h, and x/eps mod 1 depends only on the residue of the
//! half-step index mod 2P, where P = cells * eps is the number of mesh
//! subintervals per period.

use crate::coefficients::{CoefficientSet, FourierEntry};
use crate::effective::EffectiveTensors;
use crate::error::{Error, Result};
use crate::krylov::{bicgstab, pcg, KrylovOptions, LinOp, SolveStats};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::{Arc, OnceLock};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DomainMesh {
    /// Number of subintervals per axis; nodes are 0..=cells.
    pub cells: usize,
}

impl DomainMesh {
    pub fn new(cells: usize) -> Self {
        assert!(cells >= 2);
        DomainMesh { cells }
    }
    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / self.cells as f64
    }
    /// Interior nodes per axis.
    #[inline]
    pub fn interior(&self) -> usize {
        self.cells - 1
    }
    /// Nodes per axis.
    #[inline]
    pub fn nodes(&self) -> usize {
        self.cells + 1
    }
    #[inline]
    pub fn node_flat(&self, i: usize, j: usize, m: usize, al: usize) -> usize {
        (j * self.nodes() + i) * m + al
    }
    #[inline]
    pub fn unknown_flat(&self, i: usize, j: usize, m: usize, al: usize) -> usize {
        debug_assert!(i >= 1 && i <= self.interior() && j >= 1 && j <= self.interior());
        ((j - 1) * self.interior() + (i - 1)) * m + al
    }
    /// Distance from (x1, x2) to the boundary of the unit square.
    pub fn boundary_distance(x1: f64, x2: f64) -> f64 {
        x1.min(1.0 - x1).min(x2.min(1.0 - x2)).max(0.0)
    }
}

/// Check that eps is an admissible dyadic scale 1/2, 1/4, ...; returns
/// r = 1/eps as an integer.
pub fn validate_eps(eps: f64) -> Result<usize> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Commensurability {
            eps,
            detail: "eps must lie in (0, 1)".into(),
        });
    }
    let r = 1.0 / eps;
    let rounded = r.round();
    if (r - rounded).abs() > 1e-9 || rounded < 2.0 {
        return Err(Error::Commensurability {
            eps,
            detail: format!("1/eps = {r} is not an integer"),
        });
    }
    let ri = rounded as usize;
    if !ri.is_power_of_two() {
        return Err(Error::Commensurability {
            eps,
            detail: format!(
                "1/eps = {ri} is not a power of two; periods would not align with a dyadic mesh"
            ),
        });
    }
    Ok(ri)
}

/// An m-component nodal field on the closed unit square, stored over all
/// (cells+1)^2 nodes including the boundary ring; the solver treats boundary
/// entries as data, never as unknowns.
#[derive(Debug, Clone)]
pub struct Field {
    pub cells: usize,
    pub m: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(cells: usize, m: usize) -> Self {
        let np = cells + 1;
        Field {
            cells,
            m,
            data: vec![0.0; np * np * m],
        }
    }
    pub fn from_fn(cells: usize, m: usize, f: impl Fn(f64, f64, &mut [f64])) -> Self {
        let mut out = Self::zeros(cells, m);
        let h = 1.0 / cells as f64;
        let np = cells + 1;
        let mut buf = vec![0.0; m];
        for j in 0..np {
            for i in 0..np {
                buf.fill(0.0);
                f(i as f64 * h, j as f64 * h, &mut buf);
                for al in 0..m {
                    out.data[(j * np + i) * m + al] = buf[al];
                }
            }
        }
        out
    }
    #[inline]
    pub fn get(&self, i: usize, j: usize, al: usize) -> f64 {
        self.data[(j * (self.cells + 1) + i) * self.m + al]
    }
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, al: usize, v: f64) {
        self.data[(j * (self.cells + 1) + i) * self.m + al] = v;
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn mesh(&self) -> DomainMesh {
        DomainMesh::new(self.cells)
    }
    /// self - other, which must share shape.
    pub fn sub(&self, other: &Field) -> Field {
        assert_eq!(self.cells, other.cells);
        assert_eq!(self.m, other.m);
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
        out
    }
    pub fn scale(&mut self, s: f64) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }
    pub fn sup(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, &x| a.max(x.abs()))
    }
}

/// An m-component flux field on edge midpoints: `x` holds values on edges
/// (i,j)-(i+1,j) (index (j*cells + i)*m + al, j over all node rows), `y` on
/// edges (i,j)-(i,j+1) (index (j*(cells+1) + i)*m + al).
#[derive(Debug, Clone)]
pub struct EdgeField {
    pub cells: usize,
    pub m: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl EdgeField {
    /// Build from a closure f(axis, x1, x2, out) evaluated at edge midpoints.
    pub fn from_fn(cells: usize, m: usize, f: impl Fn(usize, f64, f64, &mut [f64])) -> Self {
        let h = 1.0 / cells as f64;
        let np = cells + 1;
        let mut x = vec![0.0; cells * np * m];
        let mut y = vec![0.0; np * cells * m];
        let mut buf = vec![0.0; m];
        for j in 0..np {
            for i in 0..cells {
                buf.fill(0.0);
                f(0, (i as f64 + 0.5) * h, j as f64 * h, &mut buf);
                for al in 0..m {
                    x[(j * cells + i) * m + al] = buf[al];
                }
            }
        }
        for j in 0..cells {
            for i in 0..np {
                buf.fill(0.0);
                f(1, i as f64 * h, (j as f64 + 0.5) * h, &mut buf);
                for al in 0..m {
                    y[(j * np + i) * m + al] = buf[al];
                }
            }
        }
        EdgeField { cells, m, x, y }
    }
    #[inline]
    pub fn x_at(&self, i: usize, j: usize, al: usize) -> f64 {
        self.x[(j * self.cells + i) * self.m + al]
    }
    #[inline]
    pub fn y_at(&self, i: usize, j: usize, al: usize) -> f64 {
        self.y[(j * (self.cells + 1) + i) * self.m + al]
    }
}

/// Compressed sparse row matrix with u32 column indices.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<u32>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn from_rows(rows: Vec<Vec<(u32, f64)>>) -> Self {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        indptr.push(0usize);
        let nnz: usize = rows.iter().map(|r| r.len()).sum();
        let mut indices = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        for mut row in rows {
            row.sort_unstable_by_key(|e| e.0);
            let mut merged: Vec<(u32, f64)> = Vec::with_capacity(row.len());
            for (c, v) in row {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            for (c, v) in merged {
                indices.push(c);
                vals.push(v);
            }
            indptr.push(indices.len());
        }
        Csr {
            n,
            indptr,
            indices,
            vals,
        }
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.vals[k] * x[self.indices[k] as usize];
            }
            y[r] = acc;
        }
    }

    /// Exact transpose.
    pub fn transpose(&self) -> Csr {
        let n = self.n;
        let mut counts = vec![0usize; n];
        for &c in &self.indices {
            counts[c as usize] += 1;
        }
        let mut indptr = vec![0usize; n + 1];
        for i in 0..n {
            indptr[i + 1] = indptr[i] + counts[i];
        }
        let mut indices = vec![0u32; self.indices.len()];
        let mut vals = vec![0.0; self.vals.len()];
        let mut cursor = indptr.clone();
        for r in 0..n {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[k] as usize;
                indices[cursor[c]] = r as u32;
                vals[cursor[c]] = self.vals[k];
                cursor[c] += 1;
            }
        }
        Csr {
            n,
            indptr,
            indices,
            vals,
        }
    }
}

/// Per-entry lookup tables for coefficient values on the half-step lattice.
///
/// Sample points have coordinates num/(2 cells); with y = x/eps and
/// eps = P/cells, the fractional part of y depends only on num mod 2P, so a
/// (2P)^2 table per scalar entry reproduces every sample bit-identically.
/// Constant sets use two_p = 1.
struct PeriodTables {
    two_p: usize,
    a: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
}

impl PeriodTables {
    fn build(set: &CoefficientSet, two_p: usize) -> Self {
        let tab = |e: &FourierEntry| -> Vec<f64> {
            let mut t = vec![0.0; two_p * two_p];
            for t2 in 0..two_p {
                for t1 in 0..two_p {
                    t[t2 * two_p + t1] = e.eval_frac(t1 as i64, t2 as i64, two_p as i64);
                }
            }
            t
        };
        PeriodTables {
            two_p,
            a: set.a.iter().map(&tab).collect(),
            v: set.v.iter().map(&tab).collect(),
            b: set.b.iter().map(&tab).collect(),
            c: set.c.iter().map(&tab).collect(),
        }
    }
    #[inline]
    fn look(&self, table: &[f64], n1: usize, n2: usize) -> f64 {
        table[(n2 % self.two_p) * self.two_p + (n1 % self.two_p)]
    }
    #[inline]
    fn a_at(&self, m: usize, i: usize, j: usize, al: usize, be: usize, n1: usize, n2: usize) -> f64 {
        self.look(&self.a[((i * 2 + j) * m + al) * m + be], n1, n2)
    }
    #[inline]
    fn v_at(&self, m: usize, i: usize, al: usize, be: usize, n1: usize, n2: usize) -> f64 {
        self.look(&self.v[(i * m + al) * m + be], n1, n2)
    }
    #[inline]
    fn b_at(&self, m: usize, i: usize, al: usize, be: usize, n1: usize, n2: usize) -> f64 {
        self.look(&self.b[(i * m + al) * m + be], n1, n2)
    }
    #[inline]
    fn c_at(&self, m: usize, al: usize, be: usize, n1: usize, n2: usize) -> f64 {
        self.look(&self.c[al * m + be], n1, n2)
    }
}

/// Assembled Dirichlet operator on a DomainMesh: a CSR matrix over interior
/// unknowns plus the eliminated boundary couplings, with the spectral
/// preconditioner data and a lazily computed coercivity certificate.
pub struct DiscreteOperator {
    pub mesh: DomainMesh,
    pub m: usize,
    pub lambda: f64,
    /// True when the assembled matrix is exactly symmetric (diagonal leading
    /// blocks with component-symmetric entries, no cross blocks, no V or B,
    /// symmetric c); gates the choice of CG over BiCGStab.
    pub symmetric: bool,
    pub label: String,
    csr: Csr,
    /// (interior row, boundary node flat index, coefficient): the couplings
    /// removed by Dirichlet elimination, folded into the right-hand side as
    /// rhs[row] -= coeff * g[bnode].
    boundary: Vec<(u32, u32, f64)>,
    /// Per-component mean leading coefficient for the preconditioner.
    precond_scale: Vec<f64>,
    /// Per-component zeroth-order shift (mean diagonal c plus lambda, floored
    /// at zero) for the preconditioner.
    precond_mass: Vec<f64>,
    coercivity: OnceLock<f64>,
}

impl LinOp for DiscreteOperator {
    fn dim(&self) -> usize {
        self.csr.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.csr.apply(x, y);
    }
}

impl std::fmt::Debug for DiscreteOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscreteOperator")
            .field("label", &self.label)
            .field("cells", &self.mesh.cells)
            .field("m", &self.m)
            .field("lambda", &self.lambda)
            .field("symmetric", &self.symmetric)
            .field("nnz", &self.csr.vals.len())
            .finish()
    }
}

impl DiscreteOperator {
    pub fn csr(&self) -> &Csr {
        &self.csr
    }

    /// The formal adjoint: exact CSR transpose. Boundary couplings are not
    /// transported; use the adjoint only with homogeneous boundary data.
    pub fn adjoint(&self) -> DiscreteOperator {
        DiscreteOperator {
            mesh: self.mesh,
            m: self.m,
            lambda: self.lambda,
            symmetric: self.symmetric,
            label: format!("{} adjoint", self.label),
            csr: self.csr.transpose(),
            boundary: Vec::new(),
            precond_scale: self.precond_scale.clone(),
            precond_mass: self.precond_mass.clone(),
            coercivity: OnceLock::new(),
        }
    }

    /// Apply to a full nodal field, including the boundary couplings; the
    /// output field is zero on the boundary ring.
    pub fn apply_with_boundary(&self, u: &Field) -> Field {
        assert_eq!(u.cells, self.mesh.cells);
        assert_eq!(u.m, self.m);
        let mm = self.mesh.interior();
        let m = self.m;
        let mut x = vec![0.0; mm * mm * m];
        for j in 1..=mm {
            for i in 1..=mm {
                for al in 0..m {
                    x[self.mesh.unknown_flat(i, j, m, al)] = u.get(i, j, al);
                }
            }
        }
        let mut y = vec![0.0; x.len()];
        self.csr.apply(&x, &mut y);
        for &(row, bnode, coeff) in &self.boundary {
            y[row as usize] += coeff * u.data()[bnode as usize];
        }
        let mut out = Field::zeros(self.mesh.cells, m);
        for j in 1..=mm {
            for i in 1..=mm {
                for al in 0..m {
                    out.set(i, j, al, y[self.mesh.unknown_flat(i, j, m, al)]);
                }
            }
        }
        out
    }

    /// Smallest observed Rayleigh quotient <Lu,u> / ||u||_{H^1}^2 over the
    /// probe family; computed once and cached.
    pub fn coercivity(&self) -> f64 {
        *self
            .coercivity
            .get_or_init(|| coercivity_probe(self, 24, 0x5eed))
    }
}

/// Assemble L_eps for an oscillatory coefficient set: eps must be dyadic and
/// the period must align with the mesh (cells * eps a positive integer) so
/// that coefficient samples come from exact period tables.
pub fn assemble_leps(
    set: &CoefficientSet,
    mesh: DomainMesh,
    eps: f64,
    lambda: f64,
) -> Result<DiscreteOperator> {
    let r = validate_eps(eps)?;
    let two_p = if set.max_mode() == 0 {
        1
    } else {
        if mesh.cells % r != 0 {
            return Err(Error::Commensurability {
                eps,
                detail: format!(
                    "mesh has {} subintervals per axis, not a multiple of 1/eps = {r}",
                    mesh.cells
                ),
            });
        }
        2 * mesh.cells / r
    };
    let label = format!("L_eps[eps=1/{r}]");
    assemble_operator(set, mesh, two_p, lambda, true, label)
}

/// Assemble the homogenized operator L_0 from effective tensors.
pub fn assemble_l0(eff: &EffectiveTensors, mesh: DomainMesh, lambda: f64) -> Result<DiscreteOperator> {
    let set = eff.to_constant_set();
    assemble_operator(&set, mesh, 1, lambda, true, "L_0".into())
}

/// Assemble the leading part only (the A-block of L_eps with lambda = 0),
/// used for Dirichlet correctors.
pub fn assemble_leading(set: &CoefficientSet, mesh: DomainMesh, eps: f64) -> Result<DiscreteOperator> {
    let r = validate_eps(eps)?;
    let two_p = if set.max_mode() == 0 {
        1
    } else {
        if mesh.cells % r != 0 {
            return Err(Error::Commensurability {
                eps,
                detail: format!(
                    "mesh has {} subintervals per axis, not a multiple of 1/eps = {r}",
                    mesh.cells
                ),
            });
        }
        2 * mesh.cells / r
    };
    let label = format!("A_eps[eps=1/{r}]");
    assemble_operator(set, mesh, two_p, 0.0, false, label)
}

fn assemble_operator(
    set: &CoefficientSet,
    mesh: DomainMesh,
    two_p: usize,
    lambda: f64,
    include_lower: bool,
    label: String,
) -> Result<DiscreteOperator> {
    set.validate()?;
    let m = set.m;
    let mm = mesh.interior();
    let h = mesh.h();
    let ih2 = 1.0 / (h * h);
    let t = PeriodTables::build(set, two_p);
    let lower = include_lower && !set.lower_order_is_zero();
    let symmetric = if include_lower {
        set.domain_operator_symmetric()
    } else {
        set.cell_operator_symmetric()
    };

    let nrows = mm * mm * m;
    let mut rows: Vec<Vec<(u32, f64)>> = Vec::with_capacity(nrows);
    let mut boundary: Vec<(u32, u32, f64)> = Vec::new();
    // Stencil accumulator: offsets (di, dj) in {-1,0,1}^2 and column
    // component beta, indexed (dj+1)*3 + (di+1).
    let mut sten = vec![0.0; 9 * m];

    for j in 1..=mm {
        for i in 1..=mm {
            // Half-step indices of this node and its four edge midpoints.
            let n1 = 2 * i;
            let n2 = 2 * j;
            for al in 0..m {
                sten.fill(0.0);
                let acc = |sten: &mut [f64], di: i32, dj: i32, be: usize, v: f64| {
                    sten[(((dj + 1) * 3 + (di + 1)) as usize) * m + be] += v;
                };
                for be in 0..m {
                    // East edge flux: a11 du/dx + a12 du/dy (four-point
                    // tangential average), divided by -h.
                    let a11 = t.a_at(m, 0, 0, al, be, n1 + 1, n2);
                    let a12 = t.a_at(m, 0, 1, al, be, n1 + 1, n2);
                    acc(&mut sten, 1, 0, be, -a11 * ih2);
                    acc(&mut sten, 0, 0, be, a11 * ih2);
                    acc(&mut sten, 0, 1, be, -a12 * 0.25 * ih2);
                    acc(&mut sten, 1, 1, be, -a12 * 0.25 * ih2);
                    acc(&mut sten, 0, -1, be, a12 * 0.25 * ih2);
                    acc(&mut sten, 1, -1, be, a12 * 0.25 * ih2);
                    // West edge flux, divided by +h.
                    let a11 = t.a_at(m, 0, 0, al, be, n1 - 1, n2);
                    let a12 = t.a_at(m, 0, 1, al, be, n1 - 1, n2);
                    acc(&mut sten, 0, 0, be, a11 * ih2);
                    acc(&mut sten, -1, 0, be, -a11 * ih2);
                    acc(&mut sten, -1, 1, be, a12 * 0.25 * ih2);
                    acc(&mut sten, 0, 1, be, a12 * 0.25 * ih2);
                    acc(&mut sten, -1, -1, be, -a12 * 0.25 * ih2);
                    acc(&mut sten, 0, -1, be, -a12 * 0.25 * ih2);
                    // North edge flux: a22 du/dy + a21 du/dx.
                    let a22 = t.a_at(m, 1, 1, al, be, n1, n2 + 1);
                    let a21 = t.a_at(m, 1, 0, al, be, n1, n2 + 1);
                    acc(&mut sten, 0, 1, be, -a22 * ih2);
                    acc(&mut sten, 0, 0, be, a22 * ih2);
                    acc(&mut sten, 1, 0, be, -a21 * 0.25 * ih2);
                    acc(&mut sten, 1, 1, be, -a21 * 0.25 * ih2);
                    acc(&mut sten, -1, 0, be, a21 * 0.25 * ih2);
                    acc(&mut sten, -1, 1, be, a21 * 0.25 * ih2);
                    // South edge flux.
                    let a22 = t.a_at(m, 1, 1, al, be, n1, n2 - 1);
                    let a21 = t.a_at(m, 1, 0, al, be, n1, n2 - 1);
                    acc(&mut sten, 0, 0, be, a22 * ih2);
                    acc(&mut sten, 0, -1, be, -a22 * ih2);
                    acc(&mut sten, 1, -1, be, a21 * 0.25 * ih2);
                    acc(&mut sten, 1, 0, be, a21 * 0.25 * ih2);
                    acc(&mut sten, -1, -1, be, -a21 * 0.25 * ih2);
                    acc(&mut sten, -1, 0, be, -a21 * 0.25 * ih2);

                    if lower {
                        // -div(V u): edge fluxes V_i * (edge-average of u).
                        let ih = 1.0 / h;
                        let ve = t.v_at(m, 0, al, be, n1 + 1, n2);
                        acc(&mut sten, 0, 0, be, -0.5 * ve * ih);
                        acc(&mut sten, 1, 0, be, -0.5 * ve * ih);
                        let vw = t.v_at(m, 0, al, be, n1 - 1, n2);
                        acc(&mut sten, -1, 0, be, 0.5 * vw * ih);
                        acc(&mut sten, 0, 0, be, 0.5 * vw * ih);
                        let vn = t.v_at(m, 1, al, be, n1, n2 + 1);
                        acc(&mut sten, 0, 0, be, -0.5 * vn * ih);
                        acc(&mut sten, 0, 1, be, -0.5 * vn * ih);
                        let vs = t.v_at(m, 1, al, be, n1, n2 - 1);
                        acc(&mut sten, 0, -1, be, 0.5 * vs * ih);
                        acc(&mut sten, 0, 0, be, 0.5 * vs * ih);
                        // B grad u: centered differences at the node.
                        let b1 = t.b_at(m, 0, al, be, n1, n2);
                        let b2 = t.b_at(m, 1, al, be, n1, n2);
                        acc(&mut sten, 1, 0, be, 0.5 * b1 * ih);
                        acc(&mut sten, -1, 0, be, -0.5 * b1 * ih);
                        acc(&mut sten, 0, 1, be, 0.5 * b2 * ih);
                        acc(&mut sten, 0, -1, be, -0.5 * b2 * ih);
                        // c u at the node.
                        acc(&mut sten, 0, 0, be, t.c_at(m, al, be, n1, n2));
                    }
                    if al == be {
                        acc(&mut sten, 0, 0, be, lambda);
                    }
                }

                let row = mesh.unknown_flat(i, j, m, al) as u32;
                let mut entries: Vec<(u32, f64)> = Vec::with_capacity(9 * m);
                for dj in -1i32..=1 {
                    for di in -1i32..=1 {
                        let slot = ((dj + 1) * 3 + (di + 1)) as usize;
                        let ti = (i as i32 + di) as usize;
                        let tj = (j as i32 + dj) as usize;
                        for be in 0..m {
                            let v = sten[slot * m + be];
                            if v == 0.0 {
                                continue;
                            }
                            if ti >= 1 && ti <= mm && tj >= 1 && tj <= mm {
                                entries.push((mesh.unknown_flat(ti, tj, m, be) as u32, v));
                            } else {
                                boundary.push((row, mesh.node_flat(ti, tj, m, be) as u32, v));
                            }
                        }
                    }
                }
                rows.push(entries);
            }
        }
    }

    // Preconditioner scales: mean of the diagonal leading entries and of the
    // diagonal zeroth-order entries per component.
    let mut precond_scale = Vec::with_capacity(m);
    let mut precond_mass = Vec::with_capacity(m);
    for al in 0..m {
        let mean = |tab: &[f64]| tab.iter().sum::<f64>() / tab.len() as f64;
        let abar = 0.5 * (mean(&t.a[((0 * 2 + 0) * m + al) * m + al]) + mean(&t.a[((1 * 2 + 1) * m + al) * m + al]));
        precond_scale.push(abar.max(1e-12));
        let cbar = if lower { mean(&t.c[al * m + al]) } else { 0.0 };
        precond_mass.push((cbar + lambda).max(0.0));
    }

    Ok(DiscreteOperator {
        mesh,
        m,
        lambda,
        symmetric,
        label,
        csr: Csr::from_rows(rows),
        boundary,
        precond_scale,
        precond_mass,
        coercivity: OnceLock::new(),
    })
}

/// Discrete sine transform (DST-I) of length cells-1 via a complex FFT of
/// the odd extension of length 2*cells. Self-inverse up to a factor 2/cells.
struct Dst1 {
    cells: usize,
    fft: Arc<dyn Fft<f64>>,
    scratch_len: usize,
}

impl Dst1 {
    fn new(cells: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(2 * cells);
        let scratch_len = fft.get_inplace_scratch_len();
        Dst1 {
            cells,
            fft,
            scratch_len,
        }
    }
    fn transform(&self, x: &mut [f64], buf: &mut [Complex<f64>], scratch: &mut [Complex<f64>]) {
        let n = self.cells;
        debug_assert_eq!(x.len(), n - 1);
        buf.fill(Complex::default());
        for k in 1..n {
            buf[k] = Complex::new(x[k - 1], 0.0);
            buf[2 * n - k] = Complex::new(-x[k - 1], 0.0);
        }
        self.fft.process_with_scratch(buf, scratch);
        for k in 1..n {
            x[k - 1] = -0.5 * buf[k].im;
        }
    }
}

/// Constant-coefficient spectral preconditioner: for each component solves
/// (abar * five-point Dirichlet Laplacian + mass) z = r exactly through
/// DST-I diagonalization.
pub struct DstPrecond {
    cells: usize,
    m: usize,
    dst: Dst1,
    scale: Vec<f64>,
    mass: Vec<f64>,
    eigen: Vec<f64>,
}

impl DstPrecond {
    pub fn new(op: &DiscreteOperator) -> Self {
        let cells = op.mesh.cells;
        let h = op.mesh.h();
        let eigen: Vec<f64> = (1..cells)
            .map(|k| {
                let s = (std::f64::consts::PI * k as f64 / (2.0 * cells as f64)).sin();
                4.0 / (h * h) * s * s
            })
            .collect();
        DstPrecond {
            cells,
            m: op.m,
            dst: Dst1::new(cells),
            scale: op.precond_scale.clone(),
            mass: op.precond_mass.clone(),
            eigen,
        }
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let mm = self.cells - 1;
        let m = self.m;
        let norm = (2.0 / self.cells as f64) * (2.0 / self.cells as f64);
        let mut grid = vec![0.0; mm * mm];
        let mut tgrid = vec![0.0; mm * mm];
        let mut buf = vec![Complex::default(); 2 * self.cells];
        let mut scratch = vec![Complex::default(); self.dst.scratch_len];
        for al in 0..m {
            for q in 0..mm * mm {
                grid[q] = r[q * m + al];
            }
            for row in grid.chunks_mut(mm) {
                self.dst.transform(row, &mut buf, &mut scratch);
            }
            for jj in 0..mm {
                for ii in 0..mm {
                    tgrid[ii * mm + jj] = grid[jj * mm + ii];
                }
            }
            for row in tgrid.chunks_mut(mm) {
                self.dst.transform(row, &mut buf, &mut scratch);
            }
            // tgrid[k1 * mm + k2] now holds the DST coefficient at mode
            // (k1+1, k2+1); divide by the symbol and fold in normalization.
            for k1 in 0..mm {
                for k2 in 0..mm {
                    let denom = self.scale[al] * (self.eigen[k1] + self.eigen[k2]) + self.mass[al];
                    tgrid[k1 * mm + k2] *= norm / denom;
                }
            }
            for row in tgrid.chunks_mut(mm) {
                self.dst.transform(row, &mut buf, &mut scratch);
            }
            for jj in 0..mm {
                for ii in 0..mm {
                    grid[jj * mm + ii] = tgrid[ii * mm + jj];
                }
            }
            for row in grid.chunks_mut(mm) {
                self.dst.transform(row, &mut buf, &mut scratch);
            }
            for q in 0..mm * mm {
                z[q * m + al] = grid[q];
            }
        }
    }
}

/// Right-hand side data for a Dirichlet solve, in the convention
/// L u = F + div f with u = g on the boundary.
pub struct DirichletProblem<'a> {
    pub volume: Option<&'a Field>,
    pub flux: Option<&'a EdgeField>,
    pub boundary: Option<&'a dyn Fn(f64, f64, &mut [f64])>,
}

impl<'a> DirichletProblem<'a> {
    pub fn homogeneous(volume: &'a Field) -> Self {
        DirichletProblem {
            volume: Some(volume),
            flux: None,
            boundary: None,
        }
    }
}

/// Solve op u = F + div f with Dirichlet data g. Refuses to run when the
/// coercivity certificate is non-positive. Returns the full nodal solution
/// (boundary ring holds g) and the Krylov statistics.
pub fn solve_dirichlet(
    op: &DiscreteOperator,
    prob: &DirichletProblem,
    tol: f64,
) -> Result<(Field, SolveStats)> {
    let c0 = op.coercivity();
    if c0 <= 0.0 {
        return Err(Error::NotCoercive {
            lambda: op.lambda,
            probe: c0,
        });
    }
    let mesh = op.mesh;
    let m = op.m;
    let mm = mesh.interior();
    let h = mesh.h();
    let n = mm * mm * m;
    let mut rhs = vec![0.0; n];

    if let Some(vf) = prob.volume {
        assert_eq!(vf.cells, mesh.cells);
        assert_eq!(vf.m, m);
        for j in 1..=mm {
            for i in 1..=mm {
                for al in 0..m {
                    rhs[mesh.unknown_flat(i, j, m, al)] = vf.get(i, j, al);
                }
            }
        }
    }
    if let Some(ef) = prob.flux {
        assert_eq!(ef.cells, mesh.cells);
        assert_eq!(ef.m, m);
        for j in 1..=mm {
            for i in 1..=mm {
                for al in 0..m {
                    let div = (ef.x_at(i, j, al) - ef.x_at(i - 1, j, al)) / h
                        + (ef.y_at(i, j, al) - ef.y_at(i, j - 1, al)) / h;
                    rhs[mesh.unknown_flat(i, j, m, al)] += div;
                }
            }
        }
    }

    // Materialize boundary values on the ring and fold the eliminated
    // couplings into the right-hand side.
    let np = mesh.nodes();
    let mut gvals = vec![0.0; np * np * m];
    if let Some(g) = prob.boundary {
        let mut bufv = vec![0.0; m];
        let ring = |i: usize, j: usize, gvals: &mut Vec<f64>, bufv: &mut Vec<f64>| {
            bufv.fill(0.0);
            g(i as f64 * h, j as f64 * h, bufv);
            for al in 0..m {
                gvals[mesh.node_flat(i, j, m, al)] = bufv[al];
            }
        };
        for i in 0..np {
            ring(i, 0, &mut gvals, &mut bufv);
            ring(i, mesh.cells, &mut gvals, &mut bufv);
        }
        for j in 1..mesh.cells {
            ring(0, j, &mut gvals, &mut bufv);
            ring(mesh.cells, j, &mut gvals, &mut bufv);
        }
        for &(row, bnode, coeff) in &op.boundary {
            rhs[row as usize] -= coeff * gvals[bnode as usize];
        }
    }

    let precond = DstPrecond::new(op);
    let pc = |r: &[f64], z: &mut [f64]| precond.apply(r, z);
    let opts = KrylovOptions {
        tol,
        max_iter: 100_000,
        precond: Some(&pc),
        project: None,
        context: format!("{} dirichlet solve", op.label),
    };
    let (x, stats) = if op.symmetric {
        pcg(op, &rhs, &opts)?
    } else {
        bicgstab(op, &rhs, &opts)?
    };

    let mut out = Field::zeros(mesh.cells, m);
    out.data_mut().copy_from_slice(&gvals);
    for j in 1..=mm {
        for i in 1..=mm {
            for al in 0..m {
                out.set(i, j, al, x[mesh.unknown_flat(i, j, m, al)]);
            }
        }
    }
    Ok((out, stats))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    L1,
    L2,
    Lp(f64),
    Linf,
    H1,
    W1p(f64),
}

/// Nodal gradient of component al at node (i, j): centered in the interior,
/// one-sided on the boundary ring.
pub fn node_gradient(u: &Field, i: usize, j: usize, al: usize) -> (f64, f64) {
    let c = u.cells;
    let h = 1.0 / c as f64;
    let dx = if i == 0 {
        (u.get(1, j, al) - u.get(0, j, al)) / h
    } else if i == c {
        (u.get(c, j, al) - u.get(c - 1, j, al)) / h
    } else {
        (u.get(i + 1, j, al) - u.get(i - 1, j, al)) / (2.0 * h)
    };
    let dy = if j == 0 {
        (u.get(i, 1, al) - u.get(i, 0, al)) / h
    } else if j == c {
        (u.get(i, c, al) - u.get(i, c - 1, al)) / h
    } else {
        (u.get(i, j + 1, al) - u.get(i, j - 1, al)) / (2.0 * h)
    };
    (dx, dy)
}

/// Norm over the window [lo, hi]^2 (snapped outward to nodes), with
/// trapezoid weights along each axis of the window subgrid.
pub fn norm_window(u: &Field, kind: NormKind, lo: f64, hi: f64) -> f64 {
    let c = u.cells;
    let h = 1.0 / c as f64;
    let i0 = ((lo / h) - 1e-9).ceil().max(0.0) as usize;
    let i1 = (((hi / h) + 1e-9).floor() as usize).min(c);
    assert!(i1 > i0, "empty norm window");
    let w1 = |i: usize| if i == i0 || i == i1 { 0.5 } else { 1.0 };
    let m = u.m;

    let mag = |i: usize, j: usize| -> f64 {
        let mut s = 0.0;
        for al in 0..m {
            let v = u.get(i, j, al);
            s += v * v;
        }
        s.sqrt()
    };
    let grad_mag = |i: usize, j: usize| -> f64 {
        let mut s = 0.0;
        for al in 0..m {
            let (dx, dy) = node_gradient(u, i, j, al);
            s += dx * dx + dy * dy;
        }
        s.sqrt()
    };

    match kind {
        NormKind::Linf => {
            let mut sup = 0.0f64;
            for j in i0..=i1 {
                for i in i0..=i1 {
                    sup = sup.max(mag(i, j));
                }
            }
            sup
        }
        NormKind::L1 | NormKind::L2 | NormKind::Lp(_) => {
            let p = match kind {
                NormKind::L1 => 1.0,
                NormKind::L2 => 2.0,
                NormKind::Lp(p) => p,
                _ => unreachable!(),
            };
            let mut s = 0.0;
            for j in i0..=i1 {
                for i in i0..=i1 {
                    s += w1(i) * w1(j) * mag(i, j).powf(p);
                }
            }
            (s * h * h).powf(1.0 / p)
        }
        NormKind::H1 | NormKind::W1p(_) => {
            let p = match kind {
                NormKind::H1 => 2.0,
                NormKind::W1p(p) => p,
                _ => unreachable!(),
            };
            let mut s = 0.0;
            for j in i0..=i1 {
                for i in i0..=i1 {
                    let w = w1(i) * w1(j);
                    s += w * (mag(i, j).powf(p) + grad_mag(i, j).powf(p));
                }
            }
            (s * h * h).powf(1.0 / p)
        }
    }
}

pub fn norm(u: &Field, kind: NormKind) -> f64 {
    norm_window(u, kind, 0.0, 1.0)
}

/// Seminorm sup |u(x) - u(y)| / |x - y|^sigma over all adjacent node pairs
/// plus `extra` seeded random long-range pairs.
pub fn holder_seminorm(u: &Field, sigma: f64, extra: usize, seed: u64) -> f64 {
    let c = u.cells;
    let h = 1.0 / c as f64;
    let m = u.m;
    let diff = |i0: usize, j0: usize, i1: usize, j1: usize| -> f64 {
        let mut s = 0.0;
        for al in 0..m {
            let d = u.get(i0, j0, al) - u.get(i1, j1, al);
            s += d * d;
        }
        s.sqrt()
    };
    let mut sup = 0.0f64;
    let hs = h.powf(sigma);
    for j in 0..=c {
        for i in 0..c {
            sup = sup.max(diff(i, j, i + 1, j) / hs);
        }
    }
    for j in 0..c {
        for i in 0..=c {
            sup = sup.max(diff(i, j, i, j + 1) / hs);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..extra {
        let i0 = rng.gen_range(0..=c);
        let j0 = rng.gen_range(0..=c);
        let i1 = rng.gen_range(0..=c);
        let j1 = rng.gen_range(0..=c);
        if i0 == i1 && j0 == j1 {
            continue;
        }
        let dx = (i0 as f64 - i1 as f64) * h;
        let dy = (j0 as f64 - j1 as f64) * h;
        let dist = (dx * dx + dy * dy).sqrt();
        sup = sup.max(diff(i0, j0, i1, j1) / dist.powf(sigma));
    }
    sup
}

/// Caccioppoli quotient: integral of |grad u|^2 over B_r(center) divided by
/// r^{-2} times the integral of |u|^2 over B_2r(center). Balls are clipped
/// to the closed square.
pub fn caccioppoli_ratio(u: &Field, center: (f64, f64), r: f64) -> f64 {
    let c = u.cells;
    let h = 1.0 / c as f64;
    let m = u.m;
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..=c {
        for i in 0..=c {
            let dx = i as f64 * h - center.0;
            let dy = j as f64 * h - center.1;
            let d2 = dx * dx + dy * dy;
            if d2 <= r * r {
                for al in 0..m {
                    let (gx, gy) = node_gradient(u, i, j, al);
                    num += (gx * gx + gy * gy) * h * h;
                }
            }
            if d2 <= 4.0 * r * r {
                for al in 0..m {
                    let v = u.get(i, j, al);
                    den += v * v * h * h;
                }
            }
        }
    }
    num / (den / (r * r)).max(f64::MIN_POSITIVE)
}

/// Smallest Rayleigh quotient h^2 <L u, u> / ||u||_{H^1}^2 over a fixed probe
/// family: seeded random interior fields, a smooth bump, a checkerboard, and
/// the lowest sine modes, each per component and summed over components.
pub fn coercivity_probe(op: &DiscreteOperator, trials: usize, seed: u64) -> f64 {
    let mesh = op.mesh;
    let m = op.m;
    let mm = mesh.interior();
    let h = mesh.h();
    let n = mm * mm * m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    let mut y = vec![0.0; n];

    let probe = |x: &[f64], y: &mut [f64], best: &mut f64| {
        let nrm2: f64 = x.iter().map(|v| v * v).sum();
        if nrm2 == 0.0 {
            return;
        }
        op.apply(x, y);
        let quad: f64 = x.iter().zip(y.iter()).map(|(a, b)| a * b).sum::<f64>() * h * h;
        // H^1 norm of the zero-extended field.
        let mut field = Field::zeros(mesh.cells, m);
        for j in 1..=mm {
            for i in 1..=mm {
                for al in 0..m {
                    field.set(i, j, al, x[mesh.unknown_flat(i, j, m, al)]);
                }
            }
        }
        let h1 = norm(&field, NormKind::H1);
        *best = best.min(quad / (h1 * h1));
    };

    let mut x = vec![0.0; n];
    for _ in 0..trials {
        for v in x.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        probe(&x, &mut y, &mut best);
    }
    // Structured probes, applied to each component separately.
    for al in 0..m {
        for (k1, k2) in [(1usize, 1usize), (2, 1), (1, 2)] {
            x.fill(0.0);
            for j in 1..=mm {
                for i in 1..=mm {
                    let v = (std::f64::consts::PI * k1 as f64 * i as f64 * h).sin()
                        * (std::f64::consts::PI * k2 as f64 * j as f64 * h).sin();
                    x[mesh.unknown_flat(i, j, m, al)] = v;
                }
            }
            probe(&x, &mut y, &mut best);
        }
        x.fill(0.0);
        for j in 1..=mm {
            for i in 1..=mm {
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                let taper = (std::f64::consts::PI * i as f64 * h).sin()
                    * (std::f64::consts::PI * j as f64 * h).sin();
                x[mesh.unknown_flat(i, j, m, al)] = sign * taper;
            }
        }
        probe(&x, &mut y, &mut best);
    }
    best
}

/// Candidate shifts tried in order when selecting lambda automatically.
pub const LAMBDA_LADDER: [f64; 8] = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];

/// Coercivity threshold a probe must clear for a lambda to be accepted.
pub const LAMBDA_PROBE_THRESHOLD: f64 = 0.05;

/// Pick the smallest lambda from the ladder for which both L_eps (at the
/// given eps, on a mesh with `cells_per_period` subintervals per period) and,
/// when effective tensors are supplied, L_0 clear the probe threshold.
pub fn select_lambda(
    set: &CoefficientSet,
    eff: Option<&EffectiveTensors>,
    eps: f64,
    cells_per_period: usize,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let r = validate_eps(eps)?;
    let mesh = DomainMesh::new(cells_per_period * r);
    let mut probes = Vec::new();
    for &lambda in LAMBDA_LADDER.iter() {
        let op = assemble_leps(set, mesh, eps, lambda)?;
        let mut p = coercivity_probe(&op, trials, seed);
        if let Some(e) = eff {
            let op0 = assemble_l0(e, mesh, lambda)?;
            p = p.min(coercivity_probe(&op0, trials, seed));
        }
        if p >= LAMBDA_PROBE_THRESHOLD {
            return Ok(lambda);
        }
        probes.push((lambda, p));
    }
    Err(Error::LambdaSearchFailed {
        threshold: LAMBDA_PROBE_THRESHOLD,
        probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::preset;
    use std::f64::consts::PI;

    fn sin_field(cells: usize, m: usize, k1: f64, k2: f64) -> Field {
        Field::from_fn(cells, m, |x, y, out| {
            for v in out.iter_mut() {
                *v = (PI * k1 * x).sin() * (PI * k2 * y).sin();
            }
        })
    }

    #[test]
    fn dst_preconditioner_inverts_constant_operator() {
        // Identity coefficients with lambda = 1 assemble to exactly the
        // five-point Laplacian plus identity, which the preconditioner
        // inverts spectrally.
        let set = preset("identity").unwrap();
        let mesh = DomainMesh::new(16);
        let op = assemble_leps(&set, mesh, 0.25, 1.0).unwrap();
        let pc = DstPrecond::new(&op);
        let n = op.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut ax = vec![0.0; n];
        op.apply(&x, &mut ax);
        let mut back = vec![0.0; n];
        pc.apply(&ax, &mut back);
        let err = x
            .iter()
            .zip(&back)
            .fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
        assert!(err < 1e-10, "preconditioner roundtrip error {err}");
    }

    #[test]
    fn manufactured_solution_identity_operator() {
        // (-Laplace + 1) u = (2 pi^2 + 1) sin(pi x) sin(pi y) with u = 0 on
        // the boundary has exact solution sin(pi x) sin(pi y).
        let set = preset("identity").unwrap();
        let mesh = DomainMesh::new(32);
        let op = assemble_leps(&set, mesh, 0.5, 1.0).unwrap();
        let f = {
            let mut f = sin_field(32, 1, 1.0, 1.0);
            f.scale(2.0 * PI * PI + 1.0);
            f
        };
        let (u, stats) = solve_dirichlet(&op, &DirichletProblem::homogeneous(&f), 1e-12).unwrap();
        let err = norm(&u.sub(&sin_field(32, 1, 1.0, 1.0)), NormKind::L2);
        assert!(err < 4e-3, "L2 error {err}");
        assert!(stats.residual <= 1e-10);
    }

    #[test]
    fn boundary_affine_solution_exact() {
        // Affine functions are harmonic and reproduced exactly by the
        // stencil, so the boundary elimination must return them verbatim.
        let set = preset("identity").unwrap();
        let mesh = DomainMesh::new(24);
        let op = assemble_leps(&set, mesh, 0.5, 0.0).unwrap();
        let g = |x: f64, y: f64, out: &mut [f64]| out[0] = 1.0 + 2.0 * x - 3.0 * y;
        let prob = DirichletProblem {
            volume: None,
            flux: None,
            boundary: Some(&g),
        };
        let (u, _) = solve_dirichlet(&op, &prob, 1e-13).unwrap();
        let exact = Field::from_fn(24, 1, |x, y, out| out[0] = 1.0 + 2.0 * x - 3.0 * y);
        assert!(u.sub(&exact).sup() < 1e-9);
    }

    #[test]
    fn constant_reaction_solution() {
        // With u constant the leading and flux terms vanish, so
        // lambda u = F determines u; exercises boundary folding on all sides.
        let set = preset("laminate").unwrap();
        let mesh = DomainMesh::new(20);
        let op = assemble_leps(&set, mesh, 0.25, 3.0).unwrap();
        let f = Field::from_fn(20, 1, |_, _, out| out[0] = 3.0 * 0.7);
        let g = |_x: f64, _y: f64, out: &mut [f64]| out[0] = 0.7;
        let prob = DirichletProblem {
            volume: Some(&f),
            flux: None,
            boundary: Some(&g),
        };
        let (u, _) = solve_dirichlet(&op, &prob, 1e-12).unwrap();
        let exact = Field::from_fn(20, 1, |_, _, out| out[0] = 0.7);
        assert!(u.sub(&exact).sup() < 1e-9);
    }

    #[test]
    fn flux_data_convention_matches_volume_forcing() {
        // Split the manufactured forcing between F and div f with
        // f = -(1/2) grad(sin sin): both routes produce the same solution up
        // to discretization error.
        let set = preset("identity").unwrap();
        let mesh = DomainMesh::new(32);
        let op = assemble_leps(&set, mesh, 0.5, 1.0).unwrap();
        let fvol = {
            let mut f = sin_field(32, 1, 1.0, 1.0);
            f.scale(PI * PI + 1.0);
            f
        };
        let flux = EdgeField::from_fn(32, 1, |axis, x, y, out| {
            out[0] = if axis == 0 {
                -0.5 * PI * (PI * x).cos() * (PI * y).sin()
            } else {
                -0.5 * PI * (PI * x).sin() * (PI * y).cos()
            };
        });
        let prob = DirichletProblem {
            volume: Some(&fvol),
            flux: Some(&flux),
            boundary: None,
        };
        let (u, _) = solve_dirichlet(&op, &prob, 1e-12).unwrap();
        let err = norm(&u.sub(&sin_field(32, 1, 1.0, 1.0)), NormKind::L2);
        assert!(err < 4e-3, "L2 error {err}");
    }

    #[test]
    fn constant_set_eps_assembly_matches_homogenized_assembly() {
        // A constant coefficient set assembled as L_eps must agree with the
        // L_0 assembly of the same constants entry for entry.
        let eff = EffectiveTensors {
            m: 1,
            quadrature_n: 1,
            a_hat: vec![2.0, 0.3, 0.3, 1.5],
            v_hat: vec![0.4, -0.2],
            b_hat: vec![0.1, 0.6],
            c_hat: vec![0.8],
            lambda: 0.0,
        };
        let set = eff.to_constant_set();
        let mesh = DomainMesh::new(16);
        let o1 = assemble_leps(&set, mesh, 0.25, 2.0).unwrap();
        let o2 = assemble_l0(&eff, mesh, 2.0).unwrap();
        let n = o1.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut y1 = vec![0.0; n];
        let mut y2 = vec![0.0; n];
        o1.apply(&x, &mut y1);
        o2.apply(&x, &mut y2);
        let diff = y1
            .iter()
            .zip(&y2)
            .fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
        assert!(diff < 1e-12, "assemblies differ by {diff}");
    }

    #[test]
    fn adjoint_is_exact_transpose() {
        let set = preset("full-lower-order").unwrap();
        let mesh = DomainMesh::new(16);
        let op = assemble_leps(&set, mesh, 0.25, 8.0).unwrap();
        assert!(!op.symmetric);
        let adj = op.adjoint();
        let n = op.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut ax = vec![0.0; n];
        let mut aty = vec![0.0; n];
        op.apply(&x, &mut ax);
        adj.apply(&y, &mut aty);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!(
            (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1.0),
            "pairing mismatch {lhs} vs {rhs}"
        );
    }

    #[test]
    fn transpose_consistent_with_adjoint_coefficients() {
        // The CSR transpose and the assembly of the adjoint coefficient set
        // are different discretizations of the same operator; on a smooth
        // field their difference must shrink at second order.
        let set = preset("full-lower-order").unwrap();
        let smooth = |cells: usize| {
            Field::from_fn(cells, 2, |x, y, out| {
                let b = (PI * x).sin() * (PI * y).sin();
                out[0] = b * (1.0 + 0.5 * x);
                out[1] = b * (x - 0.3 * y);
            })
        };
        let sup_diff = |cells: usize| -> f64 {
            let mesh = DomainMesh::new(cells);
            let op = assemble_leps(&set, mesh, 0.25, 2.0).unwrap();
            let adj_t = op.adjoint();
            let op_star = assemble_leps(&set.adjoint_set(), mesh, 0.25, 2.0).unwrap();
            let u = smooth(cells);
            let a = adj_t.apply_with_boundary(&u);
            let b = op_star.apply_with_boundary(&u);
            a.sub(&b).sup()
        };
        let coarse = sup_diff(16);
        let fine = sup_diff(32);
        assert!(
            coarse / fine > 2.5,
            "transpose/adjoint-set consistency ratio {} (coarse {coarse}, fine {fine})",
            coarse / fine
        );
    }

    #[test]
    fn coercivity_probe_brackets_identity_laplacian() {
        let set = preset("identity").unwrap();
        let mesh = DomainMesh::new(16);
        let op = assemble_leps(&set, mesh, 0.25, 0.0).unwrap();
        let p = coercivity_probe(&op, 8, 42);
        // Rayleigh quotients of -Laplace against the H^1 norm lie in (0, 1).
        assert!(p > 0.3 && p < 1.0, "probe {p}");
        // A shift below -lambda_min(-Laplace_h) ~ -2 pi^2 must be flagged.
        let bad = assemble_leps(&set, mesh, 0.25, -30.0).unwrap();
        let pb = coercivity_probe(&bad, 8, 42);
        assert!(pb < 0.0, "probe {pb} should be negative");
        let f = sin_field(16, 1, 1.0, 1.0);
        let err = solve_dirichlet(&bad, &DirichletProblem::homogeneous(&f), 1e-10).unwrap_err();
        assert!(matches!(err, Error::NotCoercive { .. }));
    }

    #[test]
    fn lambda_selection_identity_needs_no_shift() {
        let set = preset("identity").unwrap();
        let lambda = select_lambda(&set, None, 0.25, 4, 6, 1).unwrap();
        assert_eq!(lambda, 0.0);
    }

    #[test]
    fn norm_oracles() {
        let one = Field::from_fn(64, 1, |_, _, out| out[0] = 1.0);
        assert!((norm(&one, NormKind::L1) - 1.0).abs() < 1e-13);
        assert!((norm(&one, NormKind::L2) - 1.0).abs() < 1e-13);
        assert!((norm(&one, NormKind::Linf) - 1.0).abs() < 1e-13);
        assert!((norm_window(&one, NormKind::L2, 0.25, 0.75) - 0.5).abs() < 1e-13);

        let s = sin_field(64, 1, 1.0, 1.0);
        // Trapezoid quadrature integrates sin^2 exactly on a full period.
        assert!((norm(&s, NormKind::L2) - 0.5).abs() < 1e-12);
        assert!((norm(&s, NormKind::L1) - 4.0 / (PI * PI)).abs() < 1e-3);
        let h1_exact = (0.25 + PI * PI / 2.0).sqrt();
        let h1 = norm(&s, NormKind::H1);
        assert!((h1 - h1_exact).abs() / h1_exact < 0.01, "H1 {h1} vs {h1_exact}");
        let w12 = norm(&s, NormKind::W1p(2.0));
        assert!((w12 - h1).abs() < 1e-13);
    }

    #[test]
    fn holder_seminorm_of_sqrt_profile() {
        // For u = sqrt(x), |u(x) - u(y)| / |x - y|^{1/2} is maximized (value
        // exactly 1) by any pair anchored at x = 0; adjacent pairs include
        // (0, h).
        let u = Field::from_fn(32, 1, |x, _, out| out[0] = x.sqrt());
        let s = holder_seminorm(&u, 0.5, 64, 3);
        assert!((s - 1.0).abs() < 1e-12, "seminorm {s}");
    }

    #[test]
    fn caccioppoli_ratio_of_linear_function() {
        // For u = x, both integrals have closed forms: grad u = e_1, and
        // int_{B_2r} x^2 around (1/2, 1/2) is area/4 + pi (2r)^4 / 4.
        let u = Field::from_fn(64, 1, |x, _, out| out[0] = x);
        let r: f64 = 0.2;
        let ratio = caccioppoli_ratio(&u, (0.5, 0.5), r);
        let rr = 2.0 * r;
        let num = PI * r * r;
        let den = (0.25 * PI * rr * rr + PI * rr.powi(4) / 4.0) / (r * r);
        let exact = num / den;
        assert!(
            (ratio / exact - 1.0).abs() < 0.15,
            "ratio {ratio} vs exact {exact}"
        );
    }

    #[test]
    fn eps_validation() {
        assert_eq!(validate_eps(0.25).unwrap(), 4);
        assert_eq!(validate_eps(1.0 / 32.0).unwrap(), 32);
        assert!(matches!(
            validate_eps(1.0 / 3.0),
            Err(Error::Commensurability { .. })
        ));
        assert!(matches!(
            validate_eps(1.0 / 6.0),
            Err(Error::Commensurability { .. })
        ));
        let set = preset("laminate").unwrap();
        let err = assemble_leps(&set, DomainMesh::new(10), 0.25, 0.0).unwrap_err();
        assert!(matches!(err, Error::Commensurability { .. }));
    }

    #[test]
    fn laminate_dirichlet_solution_against_dense_reference() {
        // Cross-check the full pipeline (assembly, boundary fold, Krylov,
        // preconditioner) against a dense Gaussian elimination of the same
        // matrix on a small mesh.
        let set = preset("laminate").unwrap();
        let mesh = DomainMesh::new(12);
        let op = assemble_leps(&set, mesh, 0.25, 1.0).unwrap();
        let f = Field::from_fn(12, 1, |x, y, out| out[0] = (x + 0.5) * (y * y + 0.1));
        let (u, _) = solve_dirichlet(&op, &DirichletProblem::homogeneous(&f), 1e-13).unwrap();

        let n = op.dim();
        let mut dense = vec![0.0; n * n];
        let csr = op.csr();
        for r in 0..n {
            for k in csr.indptr[r]..csr.indptr[r + 1] {
                dense[r * n + csr.indices[k] as usize] = csr.vals[k];
            }
        }
        let mut rhs = vec![0.0; n];
        for j in 1..=mesh.interior() {
            for i in 1..=mesh.interior() {
                rhs[mesh.unknown_flat(i, j, 1, 0)] = f.get(i, j, 0);
            }
        }
        // Gaussian elimination with partial pivoting.
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&a, &b| {
                    dense[a * n + col]
                        .abs()
                        .partial_cmp(&dense[b * n + col].abs())
                        .unwrap()
                })
                .unwrap();
            if piv != col {
                for k in 0..n {
                    dense.swap(col * n + k, piv * n + k);
                }
                rhs.swap(col, piv);
            }
            let d = dense[col * n + col];
            for r in col + 1..n {
                let factor = dense[r * n + col] / d;
                if factor == 0.0 {
                    continue;
                }
                for k in col..n {
                    dense[r * n + k] -= factor * dense[col * n + k];
                }
                rhs[r] -= factor * rhs[col];
            }
        }
        let mut xref = vec![0.0; n];
        for r in (0..n).rev() {
            let mut s = rhs[r];
            for k in r + 1..n {
                s -= dense[r * n + k] * xref[k];
            }
            xref[r] = s / dense[r * n + r];
        }
        let mut sup = 0.0f64;
        for j in 1..=mesh.interior() {
            for i in 1..=mesh.interior() {
                sup = sup.max((u.get(i, j, 0) - xref[mesh.unknown_flat(i, j, 1, 0)]).abs());
            }
        }
        assert!(sup < 1e-9, "Krylov vs dense reference differ by {sup}");
    }
}
