//! Sensing-only beamformer design: the fully-digital optimum, its exact
//! hybrid realization with two RF chains per stream, and element-wise
//! coordinate ascent for a single RF chain.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;

use crate::array::{steering, SensingMatrices};
use crate::conic::{self, ConicProblem, LinearIneq, Lmi, SolveReport, SolverOptions, VarLayout};
use crate::error::{Error, Result};
use crate::linalg::{c, herm_eig, lambda_max, phasor, trace_product, CMat, CVec, C64};
use crate::metrics::{pcrb_exact, HybridBeamformer};
use crate::prior::GaussianMixturePrior;

/// Denominator data term `tr((A1 + A2) R) - |tr(A3 R)|^2 / tr(A4 R)`.
/// Zero when `tr(A4 R)` vanishes together with `R`.
pub fn sensing_objective(s: &SensingMatrices, r: &CMat) -> f64 {
    let t12 = trace_product(&s.a1, r).re + trace_product(&s.a2, r).re;
    let t3 = trace_product(&s.a3, r);
    let t4 = trace_product(&s.a4, r).re;
    if t4 > 0.0 {
        t12 - t3.norm_sqr() / t4
    } else {
        t12
    }
}

#[derive(Debug, Clone)]
pub struct DigitalOptimum {
    pub r: CMat,
    pub pcrb: f64,
    pub objective: f64,
    /// Whether the rank-one polish replaced the interior-point covariance.
    pub rank_one_polished: bool,
    pub report: SolveReport,
}

/// Maximizes [`sensing_objective`] over `R >= 0`, `tr R <= P` through the
/// epigraph form `[[tr(C R) - t, tr(A3 R)^*], [tr(A3 R), tr(A4 R)]] >= 0`.
pub fn digital_pcrb_optimal(s: &SensingMatrices, power: f64) -> Result<DigitalOptimum> {
    if !(power > 0.0) {
        return Err(Error::Config("power budget must be positive".into()));
    }
    let n = s.n_t();
    let cm = &s.a1 + &s.a2;
    let kappa = lambda_max(&cm).max(1e-300);
    let scaled = |m: &CMat| m.map(|z| z / kappa);
    let (cs, a3, a4) = (scaled(&cm), scaled(&s.a3), scaled(&s.a4));

    let mut layout = VarLayout::new();
    let rb = layout.hermitian(n);
    let t = layout.real();
    let mut p = ConicProblem::new(layout.len());
    p.objective = vec![(t, 1.0)];
    p.linear.push(LinearIneq { coeffs: (0..n).map(|i| (rb.diag(i), 1.0)).collect(), rhs: 1.0 });
    p.psd(&rb);
    let (c_re, _) = rb.trace_functional(&cs);
    let (a3_re, a3_im) = rb.trace_functional(&a3);
    let (a4_re, _) = rb.trace_functional(&a4);
    let mut terms: Vec<(usize, Vec<(usize, usize, C64)>)> = Vec::with_capacity(layout.len());
    for k in 0..c_re.len() {
        let var = c_re[k].0;
        debug_assert!(a3_re[k].0 == var && a4_re[k].0 == var);
        let z3 = c(a3_re[k].1, a3_im[k].1);
        terms.push((
            var,
            vec![(0, 0, c(c_re[k].1, 0.0)), (1, 1, c(a4_re[k].1, 0.0)), (1, 0, z3), (0, 1, z3.conj())],
        ));
    }
    terms.push((t, vec![(0, 0, c(-1.0, 0.0))]));
    p.lmi.push(Lmi::hermitian(&CMat::zeros(2, 2), &terms));

    let r0 = crate::metrics::isotropic(n, 0.5);
    let mut x0 = nalgebra::DVector::zeros(layout.len());
    rb.pack(&r0, &mut x0);
    x0[t] = sensing_objective_raw(&cs, &a3, &a4, &r0) - 1.0;
    p.start = Some(x0);

    let sol = conic::solve_sdp(&p, &SolverOptions::default())?;
    let r_unit = crate::linalg::hermitian_part(&rb.extract(&sol.x));
    let r_ip = r_unit.map(|z| z * power);
    let j_ip = sensing_objective(s, &r_ip);

    let (_, vecs) = herm_eig(&r_unit);
    let u = vecs.column(0).into_owned();
    let r1 = (&u * u.adjoint()).map(|z| z * power);
    let j1 = sensing_objective(s, &r1);
    let polish = j1 >= j_ip - 1e-8 * j_ip.abs().max(1e-300);
    let (r, objective) = if polish { (r1, j1) } else { (r_ip, j_ip) };
    let pcrb = pcrb_exact(s, &r)?;
    Ok(DigitalOptimum { r, pcrb, objective, rank_one_polished: polish, report: sol.report })
}

fn sensing_objective_raw(cm: &CMat, a3: &CMat, a4: &CMat, r: &CMat) -> f64 {
    let t4 = trace_product(a4, r).re;
    let q = if t4 > 0.0 { trace_product(a3, r).norm_sqr() / t4 } else { 0.0 };
    trace_product(cm, r).re - q
}

#[derive(Debug, Clone)]
pub struct RankOneExtraction {
    pub f: CVec,
    /// `lambda_2 / lambda_1`.
    pub ratio: f64,
    pub diagnostic: Option<String>,
}

/// Top eigenpair `f = sqrt(lambda_1) u_1`, rescaled so `||f||^2 = tr R`.
/// A visible second eigenvalue triggers re-evaluation of the sensing
/// objective; a relative drop above 1e-6 is an error.
pub fn rank_one_extract(r: &CMat, s: &SensingMatrices) -> Result<RankOneExtraction> {
    let (vals, vecs) = herm_eig(r);
    let l1 = vals[0];
    if !(l1 > 0.0) {
        return Err(Error::InvalidBeamformer("covariance has no positive eigenvalue".into()));
    }
    let ratio = if vals.len() > 1 { vals[1].max(0.0) / l1 } else { 0.0 };
    let tr = r.trace().re;
    let f = vecs.column(0).map(|z| z * tr.sqrt());
    let mut diagnostic = None;
    if ratio > 1e-6 {
        let full = sensing_objective(s, r);
        let single = sensing_objective(s, &(&f * f.adjoint()));
        let drop = (full - single) / full.abs().max(1e-300);
        if drop > 1e-6 {
            return Err(Error::RankTooHigh { ratio, drop });
        }
        diagnostic = Some(format!("eigenvalue ratio {ratio:.3e}, objective change {:.3e}", -drop));
    }
    Ok(RankOneExtraction { f, ratio, diagnostic })
}

/// Exact factorization `F_RF F_BB = F_D` with unit-modulus `F_RF`, using two
/// RF chains per stream.
pub fn hybrid_from_digital(f_d: &CMat, n_rf: usize) -> Result<HybridBeamformer> {
    let (n_t, n_s) = f_d.shape();
    if n_rf < 2 * n_s {
        return Err(Error::InsufficientRfChains { needed: 2 * n_s, have: n_rf });
    }
    let mut f_rf = CMat::from_element(n_t, n_rf, c(1.0, 0.0));
    let mut f_bb = CMat::zeros(n_rf, n_s);
    for st in 0..n_s {
        let col = f_d.column(st);
        let cmax = col.iter().map(|z| z.norm()).fold(0.0, f64::max) / 2.0;
        if cmax == 0.0 {
            continue;
        }
        for i in 0..n_t {
            let d = col[i];
            let half = (d.norm() / (2.0 * cmax)).clamp(0.0, 1.0).acos();
            let arg = d.arg();
            f_rf[(i, 2 * st)] = phasor(arg + half);
            f_rf[(i, 2 * st + 1)] = phasor(arg - half);
        }
        f_bb[(2 * st, st)] = c(cmax, 0.0);
        f_bb[(2 * st + 1, st)] = c(cmax, 0.0);
    }
    HybridBeamformer::from_factors(f_rf, f_bb)
}

/// Affine model of the four trace terms in one analog coefficient `f`:
/// `g_i(f) = alpha_i f + alpha_i^* f^* + rho_i` for `i = 1, 2, 4` and
/// `g_3(f) = alpha_3 f + beta_3 f^* + rho_3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct P1mCoefficients {
    pub alpha: [C64; 4],
    pub beta3: C64,
    pub rho: [C64; 4],
    pub m: usize,
    /// Value of the coefficient before the update (tie-break target).
    pub current: C64,
}

impl P1mCoefficients {
    /// Validates `min_{|f| <= 1} g_4(f) = rho_4 - 2 |alpha_4| > 0`.
    pub fn new(alpha: [C64; 4], beta3: C64, rho: [C64; 4], m: usize, current: C64) -> Result<Self> {
        let k = Self { alpha, beta3, rho, m, current };
        let min_g4 = k.rho[3].re - 2.0 * k.alpha[3].norm();
        if !(min_g4 > 0.0) {
            return Err(Error::DegenerateDenominator(format!("g4 reaches {min_g4:.3e} on the unit disk")));
        }
        Ok(k)
    }

    /// Coefficients for element `m` of `f`, taking every `|f_n|^2` as 1.
    pub fn assemble(s: &SensingMatrices, f: &CVec, m: usize) -> Result<Self> {
        let mats = [&s.a1, &s.a2, &s.a3, &s.a4];
        let fm = f[m];
        let mut alpha = [C64::default(); 4];
        let mut rho = [C64::default(); 4];
        let mut beta3 = C64::default();
        for (i, a) in mats.iter().enumerate() {
            let col_m = a.column(m);
            let row_m = a.row(m);
            // alpha_i = sum_{n != m} f_n^* A_nm, beta_i = sum_{k != m} A_mk f_k.
            let al = f.dotc(&col_m) - fm.conj() * a[(m, m)];
            let be = (row_m * f)[(0, 0)] - a[(m, m)] * fm;
            let total = unit_diag_form(a, f);
            alpha[i] = al;
            rho[i] = total - al * fm - be * fm.conj();
            if i == 2 {
                beta3 = be;
            }
        }
        for i in [0, 1, 3] {
            rho[i] = c(rho[i].re, 0.0);
        }
        Self::new(alpha, beta3, rho, m, fm)
    }

    fn g(&self, f: C64) -> (f64, C64, f64) {
        let lin = |i: usize| 2.0 * (self.alpha[i] * f).re + self.rho[i].re;
        let g12 = lin(0) + lin(1);
        let g3 = self.alpha[2] * f + self.beta3 * f.conj() + self.rho[2];
        (g12, g3, lin(3))
    }

    /// `g_1 + g_2 - |g_3|^2 / g_4`.
    pub fn objective(&self, f: C64) -> f64 {
        let (g12, g3, g4) = self.g(f);
        g12 - g3.norm_sqr() / g4
    }

    /// Gradient and Hessian in `(Re f, Im f)`.
    pub fn gradient_hessian(&self, f: C64) -> ([f64; 2], [[f64; 2]; 2]) {
        let (_, g3, g4) = self.g(f);
        let a12 = self.alpha[0] + self.alpha[1];
        let lin = [2.0 * a12.re, -2.0 * a12.im];
        let u = self.alpha[2] + self.beta3;
        let w = (self.alpha[2] - self.beta3) * c(0.0, 1.0);
        let dn = [2.0 * (g3.conj() * u).re, 2.0 * (g3.conj() * w).re];
        let hn = [[2.0 * u.norm_sqr(), 2.0 * (u.conj() * w).re], [2.0 * (u.conj() * w).re, 2.0 * w.norm_sqr()]];
        let dd = [2.0 * self.alpha[3].re, -2.0 * self.alpha[3].im];
        let num = g3.norm_sqr();
        let mut grad = [0.0; 2];
        let mut hess = [[0.0; 2]; 2];
        for a in 0..2 {
            grad[a] = lin[a] - (dn[a] / g4 - num * dd[a] / (g4 * g4));
            for b in 0..2 {
                let hq = hn[a][b] / g4 - (dn[a] * dd[b] + dd[a] * dn[b]) / (g4 * g4)
                    + 2.0 * num * dd[a] * dd[b] / (g4 * g4 * g4);
                hess[a][b] = -hq;
            }
        }
        (grad, hess)
    }
}

/// `tr(A) + sum_{n != k} f_n^* A_nk f_k`, which equals `f^H A f` whenever
/// `f` has unit-modulus entries.
pub fn unit_diag_form(a: &CMat, f: &CVec) -> C64 {
    let mut acc = f.dotc(&(a * f));
    for n in 0..f.len() {
        acc += a[(n, n)] * (1.0 - f[n].norm_sqr());
    }
    acc
}

fn project_disk(f: C64) -> C64 {
    let r = f.norm();
    if r > 1.0 {
        f / r
    } else {
        f
    }
}

/// Maximizes the concave [`P1mCoefficients::objective`] over `|f| <= 1`.
///
/// Candidates are a projected Newton ascent from the current value and the
/// best boundary point (64-point scan, golden-section refinement); the
/// current value wins ties.
pub fn solve_p1m_subproblem(k: &P1mCoefficients) -> Result<C64> {
    let h = |f: C64| k.objective(f);
    let start = project_disk(k.current);
    let mut best = start;
    let mut best_val = h(start);
    let scale = best_val.abs().max(1e-300);

    // Boundary scan.
    let samples = 64;
    let step = 2.0 * PI / samples as f64;
    let mut scan: Vec<(f64, f64)> = (0..samples).map(|i| (i as f64 * step, h(phasor(i as f64 * step)))).collect();
    scan.sort_by(|a, b| b.1.total_cmp(&a.1));
    for &(phi0, _) in scan.iter().take(3) {
        let mut phi = golden_max(|p| h(phasor(p)), phi0 - step, phi0 + step);
        // Newton polish along the circle: golden section alone stalls at
        // sqrt(eps) in the angle.
        for _ in 0..4 {
            let (g, he) = k.gradient_hessian(phasor(phi));
            let (sn, cs) = phi.sin_cos();
            let tang = [-sn, cs];
            let d1 = g[0] * tang[0] + g[1] * tang[1];
            let d2 = tang[0] * (he[0][0] * tang[0] + he[0][1] * tang[1])
                + tang[1] * (he[1][0] * tang[0] + he[1][1] * tang[1])
                - (g[0] * cs + g[1] * sn);
            if !(d2 < 0.0) {
                break;
            }
            let next = phi - (d1 / d2).clamp(-step, step);
            if h(phasor(next)) < h(phasor(phi)) - 1e-15 * scale {
                break;
            }
            phi = next;
        }
        let f = phasor(phi);
        let v = h(f);
        if v > best_val + 1e-15 * scale {
            best = f;
            best_val = v;
        }
    }

    // Interior projected Newton ascent.
    let mut x = start;
    let mut hx = h(x);
    for _ in 0..100 {
        let (g, he) = k.gradient_hessian(x);
        // Solve (-H + delta I) d = g.
        let diag = (he[0][0].abs() + he[1][1].abs()).max(1e-300);
        let delta = 1e-12 * diag;
        let m00 = -he[0][0] + delta;
        let m11 = -he[1][1] + delta;
        let m01 = -he[0][1];
        let det = m00 * m11 - m01 * m01;
        let d = if det > 0.0 && det.is_finite() {
            [(m11 * g[0] - m01 * g[1]) / det, (m00 * g[1] - m01 * g[0]) / det]
        } else {
            g
        };
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-12 {
            let cand = project_disk(x + c(t * d[0], t * d[1]));
            let hc = h(cand);
            if hc > hx {
                moved = (cand - x).norm() > 1e-15;
                x = cand;
                hx = hc;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if hx > best_val + 1e-15 * scale {
        best = x;
    }
    Ok(best)
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > 1e-11 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        }
    }
    0.5 * (a + b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateAscentOptions {
    pub max_sweeps: usize,
    /// Relative improvement per sweep below which the ascent stops.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for CoordinateAscentOptions {
    fn default() -> Self {
        Self { max_sweeps: 200, tol: 1e-9, restarts: 4, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct CoordinateAscentResult {
    pub beamformer: HybridBeamformer,
    /// Unit-diagonal objective at `R_X = (P / N_T) f f^H` after every
    /// element update, starting with the initial value.
    pub trace: Vec<f64>,
    pub sweeps: usize,
    pub objective_before_projection: f64,
    pub objective_after_projection: f64,
    pub pcrb: f64,
}

/// Element-wise ascent on the relaxed single-RF problem with `R_BB = P / N_T`.
pub fn single_rf_coordinate_ascent(
    s: &SensingMatrices,
    power: f64,
    init: &CVec,
    opts: &CoordinateAscentOptions,
) -> Result<CoordinateAscentResult> {
    let n = s.n_t();
    if init.len() != n {
        return Err(Error::Dimension(format!("initial vector has {} entries, N_T = {n}", init.len())));
    }
    if init.iter().any(|z| (z.norm() - 1.0).abs() > 1e-9) {
        return Err(Error::InvalidBeamformer("initial analog vector must be unit modulus".into()));
    }
    let scale = power / n as f64;
    let relaxed = |f: &CVec| {
        let t12 = unit_diag_form(&s.a1, f).re + unit_diag_form(&s.a2, f).re;
        let t3 = unit_diag_form(&s.a3, f);
        let t4 = unit_diag_form(&s.a4, f).re;
        scale * (t12 - t3.norm_sqr() / t4)
    };
    let mut f = init.clone();
    let mut last_unit = init.clone();
    let mut trace = vec![relaxed(&f)];
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        let before = *trace.last().unwrap();
        for m in 0..n {
            let k = P1mCoefficients::assemble(s, &f, m)?;
            let fm = solve_p1m_subproblem(&k)?;
            f[m] = fm;
            if fm.norm() > 0.0 {
                last_unit[m] = fm / fm.norm();
            }
            trace.push(relaxed(&f));
        }
        sweeps += 1;
        let after = *trace.last().unwrap();
        if after - before <= opts.tol * after.abs().max(1e-300) {
            break;
        }
    }
    let objective_before_projection = *trace.last().unwrap();
    for m in 0..n {
        let r = f[m].norm();
        f[m] = if r > 1e-300 { f[m] / r } else { last_unit[m] };
    }
    let f_rf = CMat::from_column_slice(n, 1, f.as_slice());
    let beamformer = HybridBeamformer::from_covariance(f_rf, CMat::from_element(1, 1, c(scale, 0.0)))?;
    let r_x = crate::metrics::transmit_covariance(&beamformer);
    let objective_after_projection = sensing_objective(s, &r_x);
    let pcrb = pcrb_exact(s, &r_x)?;
    Ok(CoordinateAscentResult {
        beamformer,
        trace,
        sweeps,
        objective_before_projection,
        objective_after_projection,
        pcrb,
    })
}

/// Phases of the steering vector toward the prior's highest-weight mean.
pub fn default_single_rf_init(prior: &GaussianMixturePrior, n_t: usize) -> CVec {
    steering(prior.highest_weight_mean(), n_t)
}

/// Coordinate ascent from the default start plus `opts.restarts` random
/// unit-modulus starts; the lowest bound wins (ties keep the earlier run).
pub fn single_rf_design(
    s: &SensingMatrices,
    prior: &GaussianMixturePrior,
    power: f64,
    opts: &CoordinateAscentOptions,
) -> Result<CoordinateAscentResult> {
    let n = s.n_t();
    let mut inits = vec![default_single_rf_init(prior, n)];
    let mut g = crate::random::rng(opts.seed);
    for _ in 0..opts.restarts {
        inits.push(CVec::from_fn(n, |_, _| phasor(g.random_range(0.0..2.0 * PI))));
    }
    let runs: Vec<Result<CoordinateAscentResult>> =
        inits.par_iter().map(|init| single_rf_coordinate_ascent(s, power, init, opts)).collect();
    let mut best: Option<CoordinateAscentResult> = None;
    for r in runs {
        let r = r?;
        if best.as_ref().is_none_or(|b| r.pcrb < b.pcrb) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Sensing-only hybrid design: exact realization of the digital optimum
/// when `N_RF >= 2`, coordinate ascent otherwise.
#[derive(Debug, Clone)]
pub struct SensingDesign {
    pub beamformer: HybridBeamformer,
    pub pcrb: f64,
    pub digital: Option<DigitalOptimum>,
    pub extraction: Option<RankOneExtraction>,
    pub ascent: Option<CoordinateAscentResult>,
}

pub fn sensing_only_design(
    s: &SensingMatrices,
    prior: &GaussianMixturePrior,
    power: f64,
    n_rf: usize,
    opts: &CoordinateAscentOptions,
) -> Result<SensingDesign> {
    if n_rf == 0 {
        return Err(Error::Config("at least one RF chain is required".into()));
    }
    if n_rf == 1 {
        let run = single_rf_design(s, prior, power, opts)?;
        return Ok(SensingDesign {
            beamformer: run.beamformer.clone(),
            pcrb: run.pcrb,
            digital: None,
            extraction: None,
            ascent: Some(run),
        });
    }
    let digital = digital_pcrb_optimal(s, power)?;
    let ext = rank_one_extract(&digital.r, s)?;
    let f_d = CMat::from_column_slice(s.n_t(), 1, ext.f.as_slice());
    let beamformer = hybrid_from_digital(&f_d, n_rf)?;
    let pcrb = pcrb_exact(s, &crate::metrics::transmit_covariance(&beamformer))?;
    Ok(SensingDesign { beamformer, pcrb, digital: Some(digital), extraction: Some(ext), ascent: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{sensing_matrices, ArrayConfig, ReflectionModel};
    use crate::metrics::{isotropic, steered, transmit_covariance, Scenario};
    use crate::prior::QuadratureRule;
    use crate::random::{random_cmat, random_psd, rng};

    fn reference() -> SensingMatrices {
        Scenario::reference().sensing().unwrap()
    }

    /// `min_mu lambda_max(C - mu^* A3 - mu A3^H + |mu|^2 A4)`, the dual of the
    /// digital problem at unit power, by nested golden sections in polar form
    /// around a coarse grid optimum.
    fn dual_value(s: &SensingMatrices) -> f64 {
        let cm = &s.a1 + &s.a2;
        let lam = |mu: C64| {
            let m = &cm - s.a3.map(|z| z * mu.conj()) - s.a3.adjoint().map(|z| z * mu) + s.a4.map(|z| z * mu.norm_sqr());
            lambda_max(&m)
        };
        // The minimizing mu is a ratio tr(A3 R) / tr(A4 R): bounded by the
        // derivative scale of the array.
        let bound = 3.0 * s.n_t() as f64;
        let mut best = (c(0.0, 0.0), lam(c(0.0, 0.0)));
        let steps = 60;
        for i in 0..=steps {
            for j in 0..=steps {
                let mu = c(-bound + 2.0 * bound * i as f64 / steps as f64, -bound + 2.0 * bound * j as f64 / steps as f64);
                let v = lam(mu);
                if v < best.1 {
                    best = (mu, v);
                }
            }
        }
        // Cyclic coordinate golden search on the convex function.
        let mut mu = best.0;
        let mut width = 2.0 * bound / steps as f64;
        for _ in 0..40 {
            let x = golden_max(|x| -lam(c(x, mu.im)), mu.re - width, mu.re + width);
            mu = c(x, mu.im);
            let y = golden_max(|y| -lam(c(mu.re, y)), mu.im - width, mu.im + width);
            mu = c(mu.re, y);
            width *= 0.7;
        }
        lam(mu)
    }

    #[test]
    fn digital_optimum_matches_dual_and_is_rank_one() {
        let s = reference();
        let opt = digital_pcrb_optimal(&s, 1.0).unwrap();
        let dual = dual_value(&s);
        assert!(opt.objective <= dual * (1.0 + 1e-9), "{} > {dual}", opt.objective);
        assert!((opt.objective - dual).abs() < 1e-6 * dual, "{} vs {dual}", opt.objective);
        assert!(opt.rank_one_polished);
        assert!((opt.r.trace().re - 1.0).abs() < 1e-9);
        assert!(opt.report.dual_bound >= opt.report.objective);
    }

    #[test]
    fn digital_optimum_dominates_hand_built_covariances() {
        let s = reference();
        let opt = digital_pcrb_optimal(&s, 1.0).unwrap();
        let mut cands = vec![isotropic(12, 1.0)];
        for m in GaussianMixturePrior::reference().means() {
            cands.push(steered(12, 1.0, m));
        }
        let mut g = rng(4);
        for _ in 0..50 {
            cands.push(random_psd(&mut g, 12, 1.0));
        }
        for r in cands {
            assert!(opt.pcrb <= pcrb_exact(&s, &r).unwrap() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_a3_reduces_to_eigenvalue() {
        let mut s = reference();
        s.a3 = CMat::zeros(12, 12);
        let opt = digital_pcrb_optimal(&s, 2.0).unwrap();
        let expect = 2.0 * lambda_max(&(&s.a1 + &s.a2));
        assert!((opt.objective - expect).abs() < 1e-8 * expect);
    }

    #[test]
    fn point_prior_optimum_beats_random_rank_one_grid() {
        let prior = GaussianMixturePrior::single(0.3, 1e-10).unwrap();
        let cfg = ArrayConfig::new(4, 4).unwrap();
        let model = ReflectionModel::from_snr_ratio(1.0, 1.0, 16, 1.0, 1e-3, 40.0).unwrap();
        let quad = QuadratureRule::refined_around(0.3, 1e-4).unwrap();
        let s = sensing_matrices(&prior, &cfg, &model, 16, 1.0, &quad).unwrap();
        let opt = digital_pcrb_optimal(&s, 1.0).unwrap();
        let mut g = rng(12);
        let mut grid_best = f64::NEG_INFINITY;
        for _ in 0..10_000 {
            let v = random_cmat(&mut g, 4, 1);
            let u = v.map(|z| z / v.norm());
            grid_best = grid_best.max(sensing_objective(&s, &(&u * u.adjoint())));
        }
        assert!(opt.objective >= grid_best * (1.0 - 1e-9));
    }

    #[test]
    fn rank_one_extraction_cases() {
        let s = reference();
        let mut g = rng(1);
        let v = random_cmat(&mut g, 12, 1);
        let v = v.map(|z| z / v.norm());
        let r = (&v * v.adjoint()).map(|z| z * 3.0);
        let ext = rank_one_extract(&r, &s).unwrap();
        let phase = ext.f.dotc(&v) / ext.f.dotc(&v).norm();
        assert!((ext.f.map(|z| z * phase) - v.map(|z| z * 3f64.sqrt())).norm() < 1e-10);
        assert!(ext.diagnostic.is_none());

        // diag(2, 1) against an objective that prefers the weaker direction.
        let two = SensingMatrices {
            a1: CMat::from_diagonal(&CVec::from_vec(vec![c(1.0, 0.0), c(2.0, 0.0)])),
            a2: CMat::zeros(2, 2),
            a3: CMat::zeros(2, 2),
            a4: CMat::zeros(2, 2),
            prior_fisher: 1.0,
            noise_scale: 1.0,
        };
        let r = CMat::from_diagonal(&CVec::from_vec(vec![c(2.0, 0.0), c(1.0, 0.0)]));
        assert!(matches!(rank_one_extract(&r, &two), Err(Error::RankTooHigh { .. })));
        // Insensitive objective: accepted with a diagnostic.
        let flat = SensingMatrices { a1: crate::linalg::identity(2), ..two };
        let ext = rank_one_extract(&r, &flat).unwrap();
        assert!(ext.diagnostic.is_some());
    }

    #[test]
    fn hybrid_factorization_examples() {
        let f_d = CMat::from_element(4, 1, c(2.0, 0.0));
        let b = hybrid_from_digital(&f_d, 2).unwrap();
        assert!(b.f_rf.iter().all(|z| (z - c(1.0, 0.0)).norm() < 1e-15));
        assert_eq!(b.f_bb.as_ref().unwrap(), &CMat::from_element(2, 1, c(1.0, 0.0)));

        let f_d = CMat::from_column_slice(3, 1, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, -0.5)]);
        let b = hybrid_from_digital(&f_d, 2).unwrap();
        assert!((b.f_rf[(1, 0)] + b.f_rf[(1, 1)]).norm() < 1e-15);
        assert!((&b.f_rf * b.f_bb.as_ref().unwrap() - &f_d).norm() < 1e-15);

        assert!(matches!(hybrid_from_digital(&f_d, 1), Err(Error::InsufficientRfChains { needed: 2, have: 1 })));
    }

    #[test]
    fn hybrid_factorization_preserves_bound() {
        let s = reference();
        let mut g = rng(8);
        for n_rf in [2, 3, 4] {
            let f_d = random_cmat(&mut g, 12, 1);
            let b = hybrid_from_digital(&f_d, n_rf).unwrap();
            let err = (&b.f_rf * b.f_bb.as_ref().unwrap() - &f_d).norm();
            assert!(err < 1e-12 * f_d.norm());
            let rd = &f_d * f_d.adjoint();
            let rh = transmit_covariance(&b);
            assert!((rh.trace().re - rd.trace().re).abs() < 1e-12 * rd.trace().re);
            let (pd, ph) = (pcrb_exact(&s, &rd).unwrap(), pcrb_exact(&s, &rh).unwrap());
            assert!((pd - ph).abs() < 1e-10 * pd);
        }
    }

    #[test]
    fn hybrid_factorization_matches_digital_optimum() {
        let s = reference();
        for n_rf in [2, 3, 4] {
            let d = sensing_only_design(&s, &GaussianMixturePrior::reference(), 1.0, n_rf, &Default::default()).unwrap();
            let digital = d.digital.as_ref().unwrap().pcrb;
            assert!((d.pcrb - digital).abs() <= 1e-9 * digital, "{} vs {digital}", d.pcrb);
        }
    }

    fn random_coefficients<R: Rng>(g: &mut R) -> P1mCoefficients {
        let mut z = || crate::random::cn01(g);
        let alpha = [z(), z(), z(), z() * 0.3];
        let beta3 = z();
        let rho4 = 2.0 * alpha[3].norm() + 0.2 + z().norm();
        let rho = [c(z().re, 0.0), c(z().re, 0.0), z(), c(rho4, 0.0)];
        let cur = z();
        P1mCoefficients::new(alpha, beta3, rho, 0, project_disk(cur)).unwrap()
    }

    #[test]
    fn p1m_gradient_matches_finite_differences() {
        let mut g = rng(3);
        for _ in 0..20 {
            let k = random_coefficients(&mut g);
            let f = c(0.3, -0.2);
            let (grad, hess) = k.gradient_hessian(f);
            let h = 1e-6;
            let fd = [
                (k.objective(f + c(h, 0.0)) - k.objective(f - c(h, 0.0))) / (2.0 * h),
                (k.objective(f + c(0.0, h)) - k.objective(f - c(0.0, h))) / (2.0 * h),
            ];
            for a in 0..2 {
                assert!((grad[a] - fd[a]).abs() < 1e-6 * (1.0 + grad[a].abs()));
            }
            let (gx, _) = k.gradient_hessian(f + c(h, 0.0));
            let (gy, _) = k.gradient_hessian(f + c(0.0, h));
            let (g0, _) = k.gradient_hessian(f - c(h, 0.0));
            let (g1, _) = k.gradient_hessian(f - c(0.0, h));
            for a in 0..2 {
                assert!((hess[a][0] - (gx[a] - g0[a]) / (2.0 * h)).abs() < 1e-5 * (1.0 + hess[a][0].abs()));
                assert!((hess[a][1] - (gy[a] - g1[a]) / (2.0 * h)).abs() < 1e-5 * (1.0 + hess[a][1].abs()));
            }
            // Concavity.
            assert!(hess[0][0] <= 1e-12 && hess[0][0] * hess[1][1] - hess[0][1] * hess[1][0] >= -1e-9);
        }
    }

    #[test]
    fn p1m_linear_and_flat_cases() {
        let a = c(0.6, -0.8);
        let z = C64::default();
        let k = P1mCoefficients::new([a, z, z, z], z, [c(1.0, 0.0), z, z, c(1.0, 0.0)], 0, c(0.1, 0.0)).unwrap();
        let f = solve_p1m_subproblem(&k).unwrap();
        assert!((f - a.conj() / a.norm()).norm() < 1e-9, "{f} {}", k.objective(f) - k.objective(a.conj() / a.norm()));
        let flat = P1mCoefficients::new([z; 4], z, [c(2.0, 0.0), z, c(0.5, 0.0), c(1.0, 0.0)], 0, c(0.2, 0.3)).unwrap();
        assert_eq!(solve_p1m_subproblem(&flat).unwrap(), c(0.2, 0.3));
        assert!(P1mCoefficients::new([z, z, z, c(1.0, 0.0)], z, [z, z, z, c(1.5, 0.0)], 0, z).is_err());
    }

    #[test]
    fn p1m_matches_grid_on_random_sets() {
        let mut g = rng(77);
        for _ in 0..20 {
            let k = random_coefficients(&mut g);
            let f = solve_p1m_subproblem(&k).unwrap();
            assert!(f.norm() <= 1.0 + 1e-12);
            let v = k.objective(f);
            let mut best = f64::NEG_INFINITY;
            let n = 401;
            for i in 0..n {
                for j in 0..n {
                    let z = c(-1.0 + 2.0 * i as f64 / (n - 1) as f64, -1.0 + 2.0 * j as f64 / (n - 1) as f64);
                    if z.norm() <= 1.0 {
                        best = best.max(k.objective(z));
                    }
                }
            }
            assert!(v >= best - 1e-9, "{v} < grid {best}");
        }
    }

    #[test]
    fn coefficient_assembly_reproduces_traces() {
        let s = reference();
        let mut g = rng(5);
        let f = crate::random::random_unit_modulus(&mut g, 12, 1).column(0).into_owned();
        let ff = &f * f.adjoint();
        for m in [0, 5, 11] {
            let k = P1mCoefficients::assemble(&s, &f, m).unwrap();
            let (g12, g3, g4) = k.g(f[m]);
            let t12 = trace_product(&s.a1, &ff).re + trace_product(&s.a2, &ff).re;
            assert!((g12 - t12).abs() < 1e-10 * t12.abs());
            assert!((g3 - trace_product(&s.a3, &ff)).norm() < 1e-10 * g3.norm());
            assert!((g4 - trace_product(&s.a4, &ff).re).abs() < 1e-10 * g4);
        }
    }

    #[test]
    fn coordinate_ascent_is_monotone_and_projection_never_gains() {
        let s = reference();
        let prior = GaussianMixturePrior::reference();
        let init = default_single_rf_init(&prior, 12);
        let run = single_rf_coordinate_ascent(&s, 1.0, &init, &Default::default()).unwrap();
        for w in run.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
        assert!(run.objective_after_projection <= run.objective_before_projection + 1e-12 * run.objective_before_projection.abs());
        assert!(run.beamformer.f_rf.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn point_prior_matched_init_is_stationary() {
        let prior = GaussianMixturePrior::single(0.2, 1e-10).unwrap();
        let cfg = ArrayConfig::new(6, 6).unwrap();
        let model = ReflectionModel::from_snr_ratio(1.0, 1.0, 16, 1.0, 1e-3, 40.0).unwrap();
        let quad = QuadratureRule::refined_around(0.2, 1e-4).unwrap();
        let s = sensing_matrices(&prior, &cfg, &model, 16, 1.0, &quad).unwrap();
        let init = steering(0.2, 6);
        let run = single_rf_coordinate_ascent(&s, 1.0, &init, &Default::default()).unwrap();
        assert_eq!(run.sweeps, 1);
        let gain = run.trace.last().unwrap() - run.trace[0];
        assert!(gain.abs() <= 1e-9 * run.trace[0].abs(), "gain {gain}");
    }
}
