//! Small dense convex solver used by the beamforming optimizers.
//!
//! Every problem is posed over a real vector `x` (see [`VarLayout`] for the
//! complex and Hermitian block parameterizations) and solved by a primal
//! log-barrier method with a phase-I feasibility search. The reported dual
//! bound is `objective + nu / t`, where `nu` is the total barrier degree.

mod barrier;
mod embed;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};

pub use embed::{embed_hermitian, unembed_hermitian, ComplexBlock, HermBlock, RealBlock, VarLayout};

/// `coeffs . x <= rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearIneq {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// `coeffs . x == rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Equality {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// Convex quadratic `y^T Q y + lin . x <= rhs` with `y = x[vars]` and `Q`
/// symmetric PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadIneq {
    pub vars: Vec<usize>,
    pub q: DMatrix<f64>,
    pub lin: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// Second-order cone `||A x[vars] + b|| <= c . x + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocCone {
    pub vars: Vec<usize>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: Vec<(usize, f64)>,
    pub d: f64,
}

/// Real symmetric LMI `F0 + sum_i x_i F_i >= 0`. Each `F_i` lists all of its
/// nonzero entries (both triangles). `weight` scales the barrier; Hermitian
/// constraints embedded at doubled dimension use 1/2.
#[derive(Debug, Clone, PartialEq)]
pub struct Lmi {
    pub f0: DMatrix<f64>,
    pub terms: Vec<(usize, Vec<(usize, usize, f64)>)>,
    pub weight: f64,
}

impl Lmi {
    pub fn dim(&self) -> usize {
        self.f0.nrows()
    }

    /// Hermitian LMI `H0 + sum_i x_i H_i >= 0`, embedded as a real symmetric
    /// constraint of doubled size.
    pub fn hermitian(h0: &CMat, terms: &[(usize, Vec<(usize, usize, C64)>)]) -> Self {
        let n = h0.nrows();
        let terms = terms
            .iter()
            .map(|(var, entries)| {
                let mut out = Vec::with_capacity(4 * entries.len());
                for &(r, col, z) in entries {
                    if z.re != 0.0 {
                        out.push((r, col, z.re));
                        out.push((n + r, n + col, z.re));
                    }
                    if z.im != 0.0 {
                        out.push((r, n + col, -z.im));
                        out.push((n + r, col, z.im));
                    }
                }
                (*var, out)
            })
            .collect();
        Self { f0: embed_hermitian(h0), terms, weight: 0.5 }
    }

    /// Barrier degree.
    pub fn degree(&self) -> f64 {
        self.weight * self.dim() as f64
    }
}

/// `ln det(M0 + sum_i x_i M_i) + lin . x >= rhs` (nats), `M_i` Hermitian.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDetIneq {
    pub m0: CMat,
    pub terms: Vec<(usize, CMat)>,
    pub lin: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// `maximize objective . x` subject to the listed constraints.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConicProblem {
    pub n: usize,
    pub objective: Vec<(usize, f64)>,
    pub equalities: Vec<Equality>,
    pub linear: Vec<LinearIneq>,
    pub quadratic: Vec<QuadIneq>,
    pub soc: Vec<SocCone>,
    pub lmi: Vec<Lmi>,
    pub logdet: Vec<LogDetIneq>,
    /// Optional starting point; need not be feasible.
    pub start: Option<DVector<f64>>,
}

impl ConicProblem {
    pub fn new(n: usize) -> Self {
        Self { n, ..Default::default() }
    }

    /// Adds `x_i >= 0` for each index.
    pub fn nonnegative(&mut self, indices: impl IntoIterator<Item = usize>) {
        for i in indices {
            self.linear.push(LinearIneq { coeffs: vec![(i, -1.0)], rhs: 0.0 });
        }
    }

    /// Adds `H(x) >= 0` for a Hermitian block variable.
    pub fn psd(&mut self, block: &HermBlock) {
        let terms = block.basis();
        self.lmi.push(Lmi::hermitian(&CMat::zeros(block.dim, block.dim), &terms));
    }

    pub fn objective_value(&self, x: &DVector<f64>) -> f64 {
        sparse_dot(&self.objective, x)
    }

    pub fn degree(&self) -> f64 {
        self.linear.len() as f64
            + self.quadratic.len() as f64
            + 2.0 * self.soc.len() as f64
            + self.lmi.iter().map(Lmi::degree).sum::<f64>()
            + self.logdet.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        let bad = |what: &str| Err(Error::Dimension(format!("conic problem: {what}")));
        let idx_ok = |v: &[(usize, f64)]| v.iter().all(|&(i, a)| i < n && a.is_finite());
        if !idx_ok(&self.objective) {
            return bad("objective index or value");
        }
        for e in &self.equalities {
            if !idx_ok(&e.coeffs) || !e.rhs.is_finite() {
                return bad("equality");
            }
        }
        for l in &self.linear {
            if !idx_ok(&l.coeffs) || !l.rhs.is_finite() {
                return bad("linear inequality");
            }
        }
        for q in &self.quadratic {
            let k = q.vars.len();
            if q.q.shape() != (k, k) || q.vars.iter().any(|&i| i >= n) || !idx_ok(&q.lin) {
                return bad("quadratic inequality");
            }
            if q.q.iter().any(|v| !v.is_finite()) || !q.rhs.is_finite() {
                return bad("quadratic data");
            }
        }
        for s in &self.soc {
            if s.a.ncols() != s.vars.len() || s.a.nrows() != s.b.len() || !idx_ok(&s.c) {
                return bad("second-order cone");
            }
            if s.vars.iter().any(|&i| i >= n) || s.a.iter().chain(s.b.iter()).any(|v| !v.is_finite()) {
                return bad("second-order cone data");
            }
        }
        for l in &self.lmi {
            let d = l.dim();
            if l.f0.ncols() != d || l.f0.iter().any(|v| !v.is_finite()) {
                return bad("LMI constant");
            }
            for (i, entries) in &l.terms {
                if *i >= n || entries.iter().any(|&(r, c, v)| r >= d || c >= d || !v.is_finite()) {
                    return bad("LMI term");
                }
            }
        }
        for g in &self.logdet {
            let d = g.m0.nrows();
            if g.m0.ncols() != d || !idx_ok(&g.lin) || !g.rhs.is_finite() {
                return bad("log-det constraint");
            }
            if g.terms.iter().any(|(i, m)| *i >= n || m.shape() != (d, d) || m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())) {
                return bad("log-det term");
            }
        }
        if let Some(s) = &self.start {
            if s.len() != n || s.iter().any(|v| !v.is_finite()) {
                return bad("start point");
            }
        }
        Ok(())
    }
}

pub(crate) fn sparse_dot(coeffs: &[(usize, f64)], x: &DVector<f64>) -> f64 {
    coeffs.iter().map(|&(i, a)| a * x[i]).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop once `nu / t <= gap_tol * max(1, |objective|)`.
    pub gap_tol: f64,
    /// Barrier parameter growth factor.
    pub mu: f64,
    /// Initial barrier parameter; `None` picks `nu / max(1, |c . x0|)`.
    pub t0: Option<f64>,
    /// Newton decrement threshold `lambda^2 / 2` for centering.
    pub centering_tol: f64,
    /// Cap on Newton steps across both phases.
    pub max_newton: usize,
    /// Iterates with `|x|` beyond this are reported unbounded.
    pub unbounded_norm: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { gap_tol: 1e-9, mu: 20.0, t0: None, centering_tol: 1e-11, max_newton: 3000, unbounded_norm: 1e12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub objective: f64,
    /// Upper bound on the optimum certified by the barrier duality gap.
    pub dual_bound: f64,
    pub max_violation: f64,
    /// Reduced-gradient norm of the Lagrangian at the last centered point,
    /// relative to `max(1, |c|)`.
    pub kkt_residual: f64,
    /// Newton steps in both phases.
    pub iterations: usize,
    pub phase1_iterations: usize,
}

impl SolveReport {
    pub fn gap(&self) -> f64 {
        self.dual_bound - self.objective
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub x: DVector<f64>,
    pub report: SolveReport,
}

/// General entry point accepting every constraint kind.
pub fn solve(problem: &ConicProblem, opts: &SolverOptions) -> Result<ConicSolution> {
    problem.validate()?;
    barrier::solve(problem, opts)
}

/// Problems built from affine, trace and PSD constraints only.
pub fn solve_sdp(problem: &ConicProblem, opts: &SolverOptions) -> Result<ConicSolution> {
    if !problem.quadratic.is_empty() || !problem.soc.is_empty() || !problem.logdet.is_empty() {
        return Err(Error::Dimension("solve_sdp accepts affine and PSD constraints only".into()));
    }
    solve(problem, opts)
}

/// Problems built from second-order cone, convex quadratic, affine and sign
/// constraints only.
pub fn solve_socp(problem: &ConicProblem, opts: &SolverOptions) -> Result<ConicSolution> {
    if !problem.lmi.is_empty() || !problem.logdet.is_empty() {
        return Err(Error::Dimension("solve_socp accepts cone, quadratic and affine constraints only".into()));
    }
    solve(problem, opts)
}

/// A linear objective over PSD blocks with exactly one log-det lower bound.
pub fn solve_logdet_program(problem: &ConicProblem, opts: &SolverOptions) -> Result<ConicSolution> {
    if problem.logdet.len() != 1 {
        return Err(Error::Dimension(format!(
            "solve_logdet_program expects one log-det constraint, got {}",
            problem.logdet.len()
        )));
    }
    if !problem.soc.is_empty() {
        return Err(Error::Dimension("solve_logdet_program does not accept cone constraints".into()));
    }
    solve(problem, opts)
}
