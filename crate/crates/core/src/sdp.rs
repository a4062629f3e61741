//! Standard-form semidefinite programming.
//!
//! Solves `maximize tr(C X)` subject to linear trace constraints
//! (`>=`, `=`, `<=`), entry pins, and `X` positive semidefinite, with a
//! first-order operator-splitting method: the iterate alternates between a
//! projection onto the affine constraint subspace (through a cached
//! factorization of the constraint Gram matrix) and a projection onto the
//! PSD cone (eigendecomposition). Inequalities are absorbed as nonnegative
//! slack coordinates of a block-diagonal augmented decision variable, so a
//! single cone projection handles everything.
//!
//! A complex Hermitian program is handled by embedding each Hermitian data
//! matrix `H` as the real symmetric `[[Re H, -Im H], [Im H, Re H]]` of twice
//! the dimension; see [`hermitian_to_real`] for the trace bookkeeping.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("matrix is not symmetric within tolerance")]
    NotSymmetric,
    #[error("matrix is not Hermitian within tolerance")]
    NotHermitian,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("eigendecomposition failed")]
    EigenFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sense {
    Ge,
    Eq,
    Le,
}

/// One linear trace constraint `tr(A X) <sense> bound`.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub matrix: DMatrix<f64>,
    pub sense: Sense,
    pub bound: f64,
}

/// Standard-form SDP: maximize `tr(objective X)` over PSD `X`.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub dim: usize,
    pub objective: DMatrix<f64>,
    pub constraints: Vec<Constraint>,
    /// Pins `X[row, col] = value` (symmetric counterpart implied).
    pub fixed_entries: Vec<(usize, usize, f64)>,
}

const SYM_TOL: f64 = 1e-12;

fn check_symmetric(m: &DMatrix<f64>) -> Result<(), SdpError> {
    if !m.is_square() {
        return Err(SdpError::NotSymmetric);
    }
    let scale = 1.0 + m.amax();
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > SYM_TOL * scale {
                return Err(SdpError::NotSymmetric);
            }
        }
    }
    Ok(())
}

impl SdpProblem {
    pub fn new(dim: usize, objective: DMatrix<f64>) -> Self {
        SdpProblem {
            dim,
            objective,
            constraints: Vec::new(),
            fixed_entries: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        if self.objective.nrows() != self.dim || self.objective.ncols() != self.dim {
            return Err(SdpError::DimensionMismatch("objective".into()));
        }
        check_symmetric(&self.objective)?;
        for (k, c) in self.constraints.iter().enumerate() {
            if c.matrix.nrows() != self.dim || c.matrix.ncols() != self.dim {
                return Err(SdpError::DimensionMismatch(format!("constraint {k}")));
            }
            check_symmetric(&c.matrix)?;
            if !c.bound.is_finite() {
                return Err(SdpError::InvalidProblem(format!(
                    "constraint {k} bound not finite"
                )));
            }
        }
        for &(r, c, v) in &self.fixed_entries {
            if r >= self.dim || c >= self.dim || !v.is_finite() {
                return Err(SdpError::InvalidProblem("bad fixed entry".into()));
            }
        }
        Ok(())
    }

    /// Writes the problem in a line-per-nonzero sparse text format for
    /// cross-checking with external solvers:
    /// `C i j v` (objective), `A<k> i j v` / `S<k> <sense> <bound>`
    /// (constraints), `P i j v` (pins). 0-based indices, upper triangle.
    pub fn dump_sparse<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "# sdp-sparse v1 dim={} m={}", self.dim, self.constraints.len())?;
        let dump_mat = |w: &mut W, tag: &str, m: &DMatrix<f64>| -> std::io::Result<()> {
            for i in 0..m.nrows() {
                for j in i..m.ncols() {
                    if m[(i, j)] != 0.0 {
                        writeln!(w, "{tag} {i} {j} {:.17e}", m[(i, j)])?;
                    }
                }
            }
            Ok(())
        };
        dump_mat(w, "C", &self.objective)?;
        for (k, c) in self.constraints.iter().enumerate() {
            dump_mat(w, &format!("A{k}"), &c.matrix)?;
            let s = match c.sense {
                Sense::Ge => ">=",
                Sense::Eq => "=",
                Sense::Le => "<=",
            };
            writeln!(w, "S{k} {s} {:.17e}", c.bound)?;
        }
        for &(r, c, v) in &self.fixed_entries {
            writeln!(w, "P {r} {c} {v:.17e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    /// The PSD iterate (cone-feasible by construction).
    pub matrix: DMatrix<f64>,
    pub objective_value: f64,
    /// Dual bound on the objective (maximization side).
    pub dual_objective: f64,
    pub status: SolveStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub duality_gap: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iters: usize,
    pub rho: f64,
    pub over_relax: f64,
    pub check_every: usize,
    /// Optional initial iterate (warm start); never serialized.
    #[serde(skip)]
    pub initial_x: Option<DMatrix<f64>>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-7,
            max_iters: 50_000,
            rho: 1.0,
            over_relax: 1.6,
            check_every: 25,
            initial_x: None,
        }
    }
}

/// One normalized equality row of the internal standard form:
/// `<mat, X> + coef * s[slack] = b`, with `mat` stored sparsely over the
/// column-major flat index of the d x d variable.
struct Row {
    entries: Vec<(u32, f64)>,
    slack: Option<usize>,
    coef: f64,
    b: f64,
}

impl Row {
    fn dot(&self, x: &DMatrix<f64>, s: &DVector<f64>) -> f64 {
        let xs = x.as_slice();
        let mut acc = 0.0;
        for &(idx, v) in &self.entries {
            acc += v * xs[idx as usize];
        }
        if let Some(j) = self.slack {
            acc += self.coef * s[j];
        }
        acc
    }

    fn scatter(&self, lambda: f64, x: &mut DMatrix<f64>, s: &mut DVector<f64>) {
        let xs = x.as_mut_slice();
        for &(idx, v) in &self.entries {
            xs[idx as usize] += lambda * v;
        }
        if let Some(j) = self.slack {
            s[j] += lambda * self.coef;
        }
    }
}

fn sparse_entries(m: &DMatrix<f64>) -> Vec<(u32, f64)> {
    let mut out = Vec::new();
    for (idx, &v) in m.as_slice().iter().enumerate() {
        if v != 0.0 {
            out.push((idx as u32, v));
        }
    }
    out
}

/// Frobenius-nearest PSD matrix: eigendecompose and clamp negative
/// eigenvalues at zero.
pub fn psd_project(s: &DMatrix<f64>) -> Result<DMatrix<f64>, SdpError> {
    check_symmetric(s)?;
    if s.iter().any(|v| !v.is_finite()) {
        return Err(SdpError::EigenFailure);
    }
    let sym = (s + s.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let mut out = DMatrix::zeros(s.nrows(), s.ncols());
    for k in 0..clamped.len() {
        if clamped[k] > 0.0 {
            let u = eig.eigenvectors.column(k);
            out.syger(clamped[k], &u, &u, 1.0);
        }
    }
    // syger fills the lower triangle; mirror it.
    for i in 0..out.nrows() {
        for j in (i + 1)..out.ncols() {
            out[(i, j)] = out[(j, i)];
        }
    }
    Ok(out)
}

/// Real symmetric embedding `[[Re H, -Im H], [Im H, Re H]]` of a Hermitian
/// matrix. Traces satisfy `tr(embed(A) embed(B)) = 2 Re tr(A B)`, so bounds of
/// embedded constraints must carry a factor 2.
pub fn hermitian_to_real(h: &DMatrix<Complex64>) -> Result<DMatrix<f64>, SdpError> {
    if !h.is_square() {
        return Err(SdpError::NotHermitian);
    }
    let n = h.nrows();
    let scale = 1.0 + h.iter().map(|c| c.norm()).fold(0.0, f64::max);
    for i in 0..n {
        for j in i..n {
            if (h[(i, j)] - h[(j, i)].conj()).norm() > SYM_TOL * scale {
                return Err(SdpError::NotHermitian);
            }
        }
    }
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let re = (h[(i, j)].re + h[(j, i)].re) / 2.0;
            let im = (h[(i, j)].im - h[(j, i)].im) / 2.0;
            out[(i, j)] = re;
            out[(n + i, n + j)] = re;
            out[(i, n + j)] = -im;
            out[(n + i, j)] = im;
        }
    }
    Ok(out)
}

/// Inverse of [`hermitian_to_real`] for a general real symmetric matrix:
/// averages the two real blocks and antisymmetrizes the imaginary part, which
/// preserves every embedded trace constraint value.
pub fn real_to_hermitian(x: &DMatrix<f64>, n: usize) -> Result<DMatrix<Complex64>, SdpError> {
    if x.nrows() != 2 * n || x.ncols() != 2 * n {
        return Err(SdpError::DimensionMismatch("embedding size".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let re = (x[(i, j)] + x[(n + i, n + j)]) / 2.0;
        let im = (x[(n + i, j)] - x[(i, n + j)]) / 2.0;
        Complex64::new(re, im)
    }))
}

/// Solve a standard-form SDP. Deterministic for fixed inputs and settings.
pub fn solve(problem: &SdpProblem, settings: &SolverSettings) -> Result<SdpSolution, SdpError> {
    problem.validate()?;
    if !(settings.tol > 0.0) {
        return Err(SdpError::InvalidProblem("tol must be positive".into()));
    }
    let d = problem.dim;

    // Assemble normalized equality rows; inequalities get slack coordinates.
    let mut rows: Vec<Row> = Vec::new();
    let mut num_slacks = 0usize;
    for c in &problem.constraints {
        let coef = match c.sense {
            Sense::Ge => -1.0,
            Sense::Le => 1.0,
            Sense::Eq => 0.0,
        };
        let slack = if c.sense == Sense::Eq {
            None
        } else {
            num_slacks += 1;
            Some(num_slacks - 1)
        };
        let sym = (&c.matrix + c.matrix.transpose()) * 0.5;
        let norm = (sym.norm_squared() + coef * coef).sqrt();
        if norm == 0.0 {
            return Err(SdpError::InvalidProblem("zero constraint matrix".into()));
        }
        rows.push(Row {
            entries: sparse_entries(&(sym / norm)),
            slack,
            coef: coef / norm,
            b: c.bound / norm,
        });
    }
    for &(r, c, v) in &problem.fixed_entries {
        let mut e = DMatrix::zeros(d, d);
        if r == c {
            e[(r, c)] = 1.0;
        } else {
            e[(r, c)] = 0.5;
            e[(c, r)] = 0.5;
        }
        let norm = e.norm();
        rows.push(Row {
            entries: sparse_entries(&(e / norm)),
            slack: None,
            coef: 0.0,
            b: v / norm,
        });
    }
    let m = rows.len();
    if m == 0 {
        return Err(SdpError::InvalidProblem("problem has no constraints".into()));
    }
    let b_vec = DVector::from_fn(m, |i, _| rows[i].b);
    let b_norm = b_vec.norm();

    // Cached pseudo-inverse of the constraint Gram matrix.
    let mut gram = DMatrix::zeros(m, m);
    {
        let mut dense = vec![0.0f64; d * d];
        for i in 0..m {
            for e in &mut dense {
                *e = 0.0;
            }
            for &(idx, v) in &rows[i].entries {
                dense[idx as usize] = v;
            }
            for j in i..m {
                let mut acc = 0.0;
                for &(idx, v) in &rows[j].entries {
                    acc += v * dense[idx as usize];
                }
                if let (Some(si), Some(sj)) = (rows[i].slack, rows[j].slack) {
                    if si == sj {
                        acc += rows[i].coef * rows[j].coef;
                    }
                }
                gram[(i, j)] = acc;
                gram[(j, i)] = acc;
            }
        }
    }
    let geig = gram.symmetric_eigen();
    let lmax = geig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let ginv = geig.eigenvalues.map(|l| if l > 1e-12 * lmax { 1.0 / l } else { 0.0 });
    let apply_pinv = |r: &DVector<f64>| -> DVector<f64> {
        let t = geig.eigenvectors.tr_mul(r);
        &geig.eigenvectors * t.component_mul(&ginv)
    };

    // Internally minimize <ct, X> with a unit-scale objective.
    let c_scale = problem.objective.norm().max(1e-300);
    let c_scale = if c_scale < 1e-30 { 1.0 } else { c_scale };
    let ct = -(&problem.objective) / c_scale;

    let mut rho = settings.rho;
    let alpha = settings.over_relax;
    let mut z = match &settings.initial_x {
        Some(x0) => {
            if x0.nrows() != d || x0.ncols() != d {
                return Err(SdpError::DimensionMismatch("initial_x".into()));
            }
            x0.clone()
        }
        None => DMatrix::zeros(d, d),
    };
    let mut zs = DVector::zeros(num_slacks);
    let mut u = DMatrix::zeros(d, d);
    let mut us = DVector::zeros(num_slacks);

    let residuals = |zm: &DMatrix<f64>, zsv: &DVector<f64>| -> f64 {
        let mut r2 = 0.0;
        for row in &rows {
            let v = row.dot(zm, zsv) - row.b;
            r2 += v * v;
        }
        r2.sqrt() / (1.0 + b_norm)
    };

    let mut status = SolveStatus::MaxIters;
    let mut iterations = settings.max_iters;
    let (mut pr, mut dr, mut gap_rel) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut dual_obj_scaled = f64::NAN;
    let mut last_ckpt_pr = f64::INFINITY;
    let mut stagnant = 0usize;

    let mut x;
    let mut lam = DVector::zeros(m);
    for k in 0..settings.max_iters {
        let checking = (k + 1) % settings.check_every == 0;
        let z_before = if checking { Some(z.clone()) } else { None };

        // Affine projection of z - u - ct/rho.
        x = &z - &u - &ct / rho;
        let mut xs = &zs - &us;
        let av = DVector::from_fn(m, |i, _| rows[i].dot(&x, &xs) - rows[i].b);
        lam = apply_pinv(&av);
        for (i, row) in rows.iter().enumerate() {
            row.scatter(-lam[i], &mut x, &mut xs);
        }

        // Over-relaxed consensus step, then cone projection.
        let xr = &x * alpha + &z * (1.0 - alpha);
        let xrs = &xs * alpha + &zs * (1.0 - alpha);
        let w = &xr + &u;
        let ws = &xrs + &us;
        z = psd_project(&w)?;
        zs = ws.map(|v| v.max(0.0));
        u += &xr - &z;
        us += &xrs - &zs;

        if checking {
            pr = residuals(&z, &zs).max((&x - &z).norm() / (1.0 + z.norm()));
            dr = rho * (&z - z_before.as_ref().unwrap()).norm() / (1.0 + z.norm());
            let p_obj = ct.dot(&z);
            dual_obj_scaled = -rho * lam.dot(&b_vec);
            gap_rel = (p_obj - dual_obj_scaled).abs()
                / (1.0 + p_obj.abs() + dual_obj_scaled.abs());
            if pr <= settings.tol && dr <= settings.tol && gap_rel <= settings.tol {
                status = SolveStatus::Optimal;
                iterations = k + 1;
                break;
            }
            // Residual balancing keeps the splitting well conditioned.
            if (k + 1) % 200 == 0 {
                if pr > 10.0 * dr && rho < 1e6 {
                    rho *= 2.0;
                    u /= 2.0;
                    us /= 2.0;
                } else if dr > 10.0 * pr && rho > 1e-6 {
                    rho /= 2.0;
                    u *= 2.0;
                    us *= 2.0;
                }
            }
            // Windowed stagnation check: an inconsistent affine system keeps
            // the primal residual bounded away from zero.
            if (k + 1) % 500 == 0 {
                if pr > 0.99 * last_ckpt_pr && pr > 1e3 * settings.tol {
                    stagnant += 1;
                } else {
                    stagnant = 0;
                }
                last_ckpt_pr = pr;
                if stagnant >= 4 {
                    status = SolveStatus::Infeasible;
                    iterations = k + 1;
                    break;
                }
            }
        }
    }

    let _ = lam;
    Ok(SdpSolution {
        objective_value: problem.objective.dot(&z),
        dual_objective: -dual_obj_scaled * c_scale,
        matrix: z,
        status,
        primal_residual: pr,
        dual_residual: dr,
        duality_gap: gap_rel,
        iterations,
    })
}
