//! Alternating optimization of the hybrid beamformer for the bound/rate
//! trade-off: maximize `tr(F_RF R_BB F_RF^H A1)` subject to the rate target,
//! the power budget and unit-modulus analog weights.
//!
//! Each outer iteration refreshes the WMMSE auxiliaries, moves the analog
//! precoder with penalized sequential convex programming (FPP-SCA), and
//! re-solves the digital covariance as a log-det program. All rate
//! arithmetic is done in nats and reported in bits.

use std::f64::consts::LN_2;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::array::{steering, SensingMatrices};
use crate::conic::{self, ComplexBlock, ConicProblem, LinearIneq, LogDetIneq, QuadIneq, SolveReport, SolverOptions, VarLayout};
use crate::error::{Error, Result};
use crate::linalg::{
    c, herm_eig, hermitian_part, hpd_inv_sqrt, identity, kron, logdet_hpd, phasor, psd_sqrt, trace_product, unvec, vec_of,
    CMat, CVec, C64,
};
use crate::metrics::{achievable_rate, pcrb_exact_guarded, pcrb_upper_from_objective, rate_of_covariance, HybridBeamformer, Scenario};
use crate::prior::GaussianMixturePrior;
use crate::random::{cn01, random_unit_modulus, rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoOptions {
    /// Slack penalty in the FPP-SCA subproblem.
    pub epsilon: f64,
    pub slack_tol: f64,
    /// Relative objective change that ends the FPP-SCA loop.
    pub obj_tol: f64,
    pub fpp_max_iters: usize,
    pub outer_max: usize,
    /// Relative objective improvement that ends the outer loop.
    pub outer_tol: f64,
    /// Re-initializations after an infeasible random start.
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for AoOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e3,
            slack_tol: 1e-6,
            obj_tol: 1e-6,
            fpp_max_iters: 50,
            outer_max: 30,
            outer_tol: 1e-6,
            max_restarts: 5,
            seed: 0,
        }
    }
}

impl AoOptions {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !(self.epsilon > 1.0 && self.epsilon.is_finite()) {
            return Err(Error::Config("epsilon must exceed 1".into()));
        }
        if !pos(self.slack_tol) || !pos(self.obj_tol) || !pos(self.outer_tol) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.fpp_max_iters == 0 || self.outer_max == 0 {
            return Err(Error::Config("iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

/// A rate target at or below zero leaves the rate unconstrained.
fn rate_active(target_bits: f64) -> bool {
    target_bits > 0.0
}

/// Everything the trade-off optimizer needs, precomputed once.
#[derive(Debug, Clone)]
pub struct TradeoffProblem {
    pub sensing: SensingMatrices,
    pub channel: CMat,
    pub prior: GaussianMixturePrior,
    pub user_angle: f64,
    pub power: f64,
    pub sigma_c2: f64,
    /// Bits/s/Hz.
    pub rate_target: f64,
    pub n_rf: usize,
}

impl TradeoffProblem {
    pub fn from_scenario(sc: &Scenario) -> Result<Self> {
        sc.validate()?;
        Ok(Self {
            sensing: sc.sensing()?,
            channel: sc.channel_matrix()?,
            prior: sc.prior.clone(),
            user_angle: sc.channel.angle,
            power: sc.power,
            sigma_c2: sc.sigma_c2,
            rate_target: sc.rate_target,
            n_rf: sc.n_rf,
        })
    }

    pub fn n_t(&self) -> usize {
        self.sensing.n_t()
    }

    pub fn with_rate_target(&self, rate_target: f64) -> Self {
        Self { rate_target, ..self.clone() }
    }

    /// `tr(F R F^H A1)`.
    pub fn objective(&self, f_rf: &CMat, r_bb: &CMat) -> f64 {
        trace_product(&(f_rf.adjoint() * &self.sensing.a1 * f_rf), r_bb).re
    }
}

/// Water-filling over parallel channels with gains `g_i` and total power
/// `budget`. Returns the allocation and the capacity in nats.
pub fn water_filling(gains: &[f64], budget: f64) -> (Vec<f64>, f64) {
    let mut active: Vec<usize> = (0..gains.len()).filter(|&i| gains[i] > 0.0).collect();
    active.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]));
    let mut alloc = vec![0.0; gains.len()];
    if active.is_empty() || !(budget > 0.0) {
        return (alloc, 0.0);
    }
    // Largest active set whose water level clears every inverse gain.
    let mut k = active.len();
    let mut level;
    loop {
        let inv_sum: f64 = active[..k].iter().map(|&i| 1.0 / gains[i]).sum();
        level = (budget + inv_sum) / k as f64;
        if level > 1.0 / gains[active[k - 1]] || k == 1 {
            break;
        }
        k -= 1;
    }
    let mut cap = 0.0;
    for &i in &active[..k] {
        let p = (level - 1.0 / gains[i]).max(0.0);
        alloc[i] = p;
        cap += (1.0 + gains[i] * p).ln();
    }
    (alloc, cap)
}

/// Capacity (bits) of `H` under covariance `F R F^H` with `tr(F R F^H) <= P`,
/// for `F` of full column rank.
pub fn capacity_with_analog(h: &CMat, f_rf: &CMat, power: f64, sigma2: f64) -> Result<f64> {
    let w = Whitening::new(h, f_rf, power, sigma2)?;
    Ok(water_filling(&w.gains, 1.0).1 / LN_2)
}

/// Change of variables `R = P G^{-1/2} X G^{-1/2}` turning the power budget
/// into `tr X <= 1` and the rate into `ln det(I + Kbar X)`.
struct Whitening {
    g_inv_sqrt: CMat,
    /// Eigen-decomposition of `Kbar = G^{-1/2} K G^{-1/2}`.
    gains: Vec<f64>,
    basis: CMat,
    /// `K = (P / sigma^2) F^H H^H H F`.
    k: CMat,
}

impl Whitening {
    fn new(h: &CMat, f_rf: &CMat, power: f64, sigma2: f64) -> Result<Self> {
        let g = f_rf.adjoint() * f_rf;
        let (gv, _) = herm_eig(&g);
        let n = gv.len();
        if !(gv[n - 1] > 1e-10 * gv[0]) {
            return Err(Error::InvalidBeamformer("analog precoder is rank deficient".into()));
        }
        let g_inv_sqrt = hpd_inv_sqrt(&g);
        let hf = h * f_rf;
        let k = (hf.adjoint() * &hf).map(|z| z * (power / sigma2));
        let kbar = hermitian_part(&(&g_inv_sqrt * &k * &g_inv_sqrt));
        let (gains, basis) = herm_eig(&kbar);
        Ok(Self { g_inv_sqrt, gains, basis, k })
    }

    fn x_from_diag(&self, d: &[f64]) -> CMat {
        let u = &self.basis;
        let scaled = CMat::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)] * d[j]);
        hermitian_part(&(&scaled * u.adjoint()))
    }

    /// Normalized covariance `R / P` from a whitened `X`.
    fn unwhiten(&self, x: &CMat) -> CMat {
        hermitian_part(&(&self.g_inv_sqrt * x * &self.g_inv_sqrt))
    }
}

/// Result of the digital covariance step.
#[derive(Debug, Clone)]
pub struct DigitalCovariance {
    pub r_bb: CMat,
    /// `tr(F R F^H A1)`.
    pub objective: f64,
    /// Newton steps spent in the log-det solve.
    pub newton_steps: usize,
    /// `None` when the solution was available in closed form.
    pub report: Option<SolveReport>,
}

/// Digital covariance for a fixed analog precoder: maximize the sensing
/// objective subject to the rate target (bits) and the power budget.
pub fn solve_digital_covariance_p3(
    f_rf: &CMat,
    a1: &CMat,
    h: &CMat,
    power: f64,
    rate_target: f64,
    sigma_c2: f64,
) -> Result<DigitalCovariance> {
    let n_rf = f_rf.ncols();
    if a1.nrows() != f_rf.nrows() || h.ncols() != f_rf.nrows() {
        return Err(Error::Dimension("covariance step data shapes disagree".into()));
    }
    let wh = Whitening::new(h, f_rf, power, sigma_c2)?;
    let (wf, capacity) = water_filling(&wh.gains, 1.0);
    let target = if rate_active(rate_target) { rate_target * LN_2 } else { f64::NEG_INFINITY };
    if target > capacity * (1.0 + 1e-12) + 1e-12 {
        return Err(Error::InfeasibleRate { target: rate_target, capacity: capacity / LN_2 });
    }
    let ga = hermitian_part(&(f_rf.adjoint() * a1 * f_rf));
    let finish = |rn: CMat, newton_steps: usize, report: Option<SolveReport>| {
        let r_bb = rn.map(|z| z * power);
        let objective = trace_product(&ga, &r_bb).re;
        DigitalCovariance { r_bb, objective, newton_steps, report }
    };
    let x_wf = wh.x_from_diag(&wf);
    if target >= capacity - 1e-9 * capacity.max(1.0) {
        // Only the water-filling covariance reaches capacity.
        return Ok(finish(wh.unwhiten(&x_wf), 0, None));
    }

    // M(R) = I + L R L^H in the smaller of the user and RF dimensions.
    let lift = if h.nrows() < n_rf { (h * f_rf).map(|z| z * (power / sigma_c2).sqrt()) } else { psd_sqrt(&wh.k) };
    let rate_nats = |rn: &CMat| logdet_hpd(&(identity(lift.nrows()) + &lift * rn * lift.adjoint())).unwrap_or(f64::NEG_INFINITY);

    let mut layout = VarLayout::new();
    let rb = layout.hermitian(n_rf);
    let mut p = ConicProblem::new(layout.len());
    let scale = crate::linalg::lambda_max(&ga).abs().max(1e-300);
    p.objective = rb.trace_functional(&ga.map(|z| z / scale)).0;
    let g = f_rf.adjoint() * f_rf;
    p.linear.push(LinearIneq { coeffs: rb.trace_functional(&g).0, rhs: 1.0 });
    p.psd(&rb);

    // Strictly feasible start between water-filling and isotropic.
    let iso = identity(n_rf).map(|z| z / n_rf as f64);
    let start = if target.is_finite() {
        let delta = ((capacity - target) / (4.0 * n_rf as f64)).min(0.05);
        let at = |gamma: f64| (&x_wf * c(1.0 - gamma, 0.0) + &iso * c(gamma, 0.0)) * c(1.0 - delta, 0.0);
        let r0 = rate_nats(&wh.unwhiten(&at(0.0)));
        let goal = target + 0.5 * (r0 - target);
        let mut gamma = 1.0;
        for _ in 0..80 {
            if rate_nats(&wh.unwhiten(&at(gamma))) > goal {
                break;
            }
            gamma *= 0.5;
        }
        wh.unwhiten(&at(gamma))
    } else {
        wh.unwhiten(&iso.map(|z| z * 0.95))
    };
    let mut x0 = DVector::zeros(layout.len());
    rb.pack(&start, &mut x0);
    p.start = Some(x0);

    let sol = if target.is_finite() {
        let terms = rb
            .basis()
            .into_iter()
            .map(|(i, entries)| {
                let mut e = CMat::zeros(n_rf, n_rf);
                for (a, b, z) in entries {
                    e[(a, b)] = z;
                }
                (i, hermitian_part(&(&lift * e * lift.adjoint())))
            })
            .collect();
        p.logdet.push(LogDetIneq { m0: identity(lift.nrows()), terms, lin: vec![], rhs: target });
        conic::solve_logdet_program(&p, &SolverOptions::default())
    } else {
        conic::solve_sdp(&p, &SolverOptions::default())
    };
    let sol = match sol {
        Ok(s) => s,
        Err(Error::Infeasible(_)) => {
            return Err(Error::InfeasibleRate { target: rate_target, capacity: capacity / LN_2 });
        }
        Err(Error::MaxIters { iterations }) => {
            return Err(Error::SolverFailure(format!("log-det program stopped after {iterations} Newton steps")));
        }
        Err(e) => return Err(e),
    };
    let steps = sol.report.iterations;
    Ok(finish(rb.extract(&sol.x), steps, Some(sol.report)))
}

/// Baseband precoder `F_BB` with `F_BB F_BB^H = R_BB` on the numerical rank
/// (eigenvalues above `1e-8 lambda_max`).
pub fn baseband_factor(r_bb: &CMat) -> CMat {
    let (vals, vecs) = herm_eig(r_bb);
    let top = vals[0].max(0.0);
    let rank = vals.iter().take_while(|&&v| v > 1e-8 * top && v > 0.0).count().max(1);
    CMat::from_fn(r_bb.nrows(), rank, |i, j| vecs[(i, j)] * vals[j].max(0.0).sqrt())
}

/// WMMSE auxiliaries for a fixed hybrid precoder. Scalars are in nats.
#[derive(Debug, Clone)]
pub struct WmmseState {
    pub q: CMat,
    pub w: CMat,
    pub e: CMat,
    pub eta: f64,
    pub b1: CMat,
    pub b2: CMat,
    /// `vec(B2^T)`, so `tr(B2 F) = c^T vec(F)`.
    pub c: CVec,
    pub j: CMat,
    pub sigma2: f64,
}

impl WmmseState {
    /// Auxiliaries at an arbitrary decoder `Q` and weight `W` (Hermitian PD).
    pub fn from_parts(h: &CMat, f_rf: &CMat, f_bb: &CMat, q: CMat, w: CMat, sigma2: f64) -> Result<Self> {
        let n_s = f_bb.ncols();
        if q.shape() != (h.nrows(), n_s) || w.shape() != (n_s, n_s) {
            return Err(Error::Dimension("WMMSE decoder or weight shape".into()));
        }
        let heff = h * f_rf * f_bb;
        let j = hermitian_part(&(identity(h.nrows()) * c(sigma2, 0.0) + &heff * heff.adjoint()));
        let d = q.adjoint() * &heff - identity(n_s);
        let e = hermitian_part(&(&d * d.adjoint() + q.adjoint() * &q * c(sigma2, 0.0)));
        let ln_w = logdet_hpd(&w).ok_or_else(|| Error::SolverFailure("WMMSE weight is not positive definite".into()))?;
        let eta = ln_w + n_s as f64 - w.trace().re - sigma2 * trace_product(&w, &(q.adjoint() * &q)).re;
        let b1 = hermitian_part(&(h.adjoint() * &q * &w * q.adjoint() * h));
        let b2 = f_bb * &w * q.adjoint() * h;
        let cvec = vec_of(&b2.transpose());
        Ok(Self { q, w, e, eta, b1, b2, c: cvec, j, sigma2 })
    }

    /// `ln|W| - tr(W E) + N_S` in nats.
    pub fn xi_mse_form(&self) -> f64 {
        let ln_w = logdet_hpd(&self.w).unwrap_or(f64::NEG_INFINITY);
        ln_w - trace_product(&self.w, &self.e).re + self.w.nrows() as f64
    }
}

/// Optimal decoder `Q = J^{-1} H F F_BB` and weight `W = E^{-1}`.
pub fn wmmse_update(h: &CMat, f_rf: &CMat, f_bb: &CMat, sigma2: f64) -> Result<WmmseState> {
    let heff = h * f_rf * f_bb;
    let n_s = f_bb.ncols();
    let j = hermitian_part(&(identity(h.nrows()) * c(sigma2, 0.0) + &heff * heff.adjoint()));
    let j_inv = crate::linalg::hpd_inverse(&j).ok_or(Error::SingularMse { cond: f64::INFINITY })?;
    let q = &j_inv * &heff;
    let d = q.adjoint() * &heff - identity(n_s);
    let e = hermitian_part(&(&d * d.adjoint() + q.adjoint() * &q * c(sigma2, 0.0)));
    let (ev, _) = herm_eig(&e);
    let cond = if ev[n_s - 1] > 0.0 { ev[0] / ev[n_s - 1] } else { f64::INFINITY };
    if !(cond <= 1e12) {
        return Err(Error::SingularMse { cond });
    }
    let w = hermitian_part(&crate::linalg::hpd_inverse(&e).ok_or(Error::SingularMse { cond })?);
    WmmseState::from_parts(h, f_rf, f_bb, q, w, sigma2)
}

/// `xi = eta - tr(F_BB^H F^H B1 F F_BB) + 2 Re tr(B2 F)`, in bits.
pub fn surrogate_rate(state: &WmmseState, f_rf: &CMat, f_bb: &CMat) -> f64 {
    surrogate_rate_nats(state, f_rf, f_bb) / LN_2
}

fn surrogate_rate_nats(state: &WmmseState, f_rf: &CMat, f_bb: &CMat) -> f64 {
    let quad = trace_product(&(f_bb.adjoint() * f_rf.adjoint() * &state.b1 * f_rf), f_bb).re;
    let lin = trace_product(&state.b2, f_rf).re;
    state.eta - quad + 2.0 * lin
}

/// Diagnostics of one FPP-SCA run.
#[derive(Debug, Clone)]
pub struct FppOutcome {
    pub f_rf: CMat,
    pub iterations: usize,
    /// `r + ||p||_1 + ||w||_1` at the last iterate.
    pub slack: f64,
    /// Largest `| |v_m| - 1 |` before renormalization.
    pub modulus_error: f64,
    pub newton_steps: usize,
    /// Sensing objective `v^H (R^T kron A1) v` after each iteration.
    pub objective_trace: Vec<f64>,
    /// Slacks fell below `slack_tol`.
    pub converged: bool,
}

/// FPP-SCA for the analog precoder with `R_BB` and the WMMSE auxiliaries
/// fixed. `state = None` drops the rate constraint.
///
/// The sensing epigraph is rescaled at every linearization point so that the
/// largest per-entry gradient is `epsilon`. Radial modulus violations then
/// never pay off while tangential steps stay as long as the penalty allows,
/// independent of the power level and array size.
pub fn fpp_sca_analog(
    r_bb: &CMat,
    a1: &CMat,
    state: Option<&WmmseState>,
    power: f64,
    rate_target: f64,
    z0: &CMat,
    opts: &AoOptions,
) -> Result<FppOutcome> {
    let out = fpp_sca_iterate(r_bb, a1, state, power, rate_target, z0, opts)?;
    if !out.converged {
        return Err(Error::SlackStall { iterations: out.iterations, slack: out.slack });
    }
    Ok(out)
}

/// FPP-SCA iterations without the convergence verdict: the last iterate is
/// renormalized and returned even when the slacks have not vanished.
pub fn fpp_sca_iterate(
    r_bb: &CMat,
    a1: &CMat,
    state: Option<&WmmseState>,
    power: f64,
    rate_target: f64,
    z0: &CMat,
    opts: &AoOptions,
) -> Result<FppOutcome> {
    let (n_t, n_rf) = z0.shape();
    if r_bb.shape() != (n_rf, n_rf) || a1.shape() != (n_t, n_t) {
        return Err(Error::Dimension("FPP-SCA data shapes disagree".into()));
    }
    if z0.iter().any(|z| (z.norm() - 1.0).abs() > 1e-9) {
        return Err(Error::InvalidBeamformer("FPP-SCA start must be unit modulus".into()));
    }
    let nv = n_t * n_rf;
    let rt = r_bb.transpose();
    let k_a = hermitian_part(&kron(&rt, a1));
    let mut layout = VarLayout::new();
    let v = layout.complex_vector(nv);
    let t = layout.real();
    let r = layout.real();
    let p = layout.reals(nv);
    let w = layout.reals(nv);
    let v_vars: Vec<usize> = (0..nv).map(|i| v.re(i)).chain((0..nv).map(|i| v.im(i))).collect();

    // Constraints independent of the linearization point.
    let mut base = ConicProblem::new(layout.len());
    base.objective = vec![(t, 1.0), (r, -opts.epsilon)];
    base.objective.extend((0..nv).flat_map(|m| [(p.index(m), -opts.epsilon), (w.index(m), -opts.epsilon)]));
    let k_p = ComplexBlock { offset: 0, len: nv }.hermitian_form(&kron(&rt, &identity(n_t)).map(|z| z / power));
    base.quadratic.push(QuadIneq { vars: v_vars.clone(), q: k_p, lin: vec![], rhs: 1.0 });
    if let (Some(st), true) = (state, rate_active(rate_target)) {
        let k_r = ComplexBlock { offset: 0, len: nv }.hermitian_form(&hermitian_part(&kron(&rt, &st.b1)));
        let lin = v.re_linear(&st.c).into_iter().map(|(i, a)| (i, -2.0 * a)).collect();
        base.quadratic.push(QuadIneq { vars: v_vars.clone(), q: k_r, lin, rhs: st.eta - rate_target * LN_2 });
    }
    for m in 0..nv {
        base.quadratic.push(QuadIneq {
            vars: vec![v.re(m), v.im(m)],
            q: nalgebra::DMatrix::identity(2, 2),
            lin: vec![(p.index(m), -1.0)],
            rhs: 1.0,
        });
    }
    base.nonnegative(std::iter::once(r).chain((0..nv).map(|m| p.index(m))).chain((0..nv).map(|m| w.index(m))));

    let sensing_value = |x: &CVec| x.dotc(&(&k_a * x)).re;
    let mut z = vec_of(z0);
    let mut iterations = 0;
    let mut slack = f64::INFINITY;
    let mut newton_steps = 0;
    let mut objective_trace = Vec::new();
    let mut modulus_error = 0.0;
    while iterations < opts.fpp_max_iters {
        iterations += 1;
        let kz = &k_a * &z;
        let s_a = z.dotc(&kz).re;
        if !(s_a > 0.0) {
            return Err(Error::SolverFailure("sensing objective vanishes at the linearization point".into()));
        }
        let mut prob = base.clone();
        // Radial sensing gain per entry stays below 0.9 of the 2 eps cost of a
        // modulus violation, so radial slack never pays off.
        let radial = (0..nv).map(|m| (z[m].conj() * kz[m]).re).fold(0.0, f64::max);
        let full = kz.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let kappa = 0.9 * opts.epsilon / radial.max(0.5 * full);
        let mut sense = vec![(t, 1.0), (r, -1.0)];
        for i in 0..nv {
            sense.push((v.re(i), -2.0 * kappa * kz[i].re));
            sense.push((v.im(i), -2.0 * kappa * kz[i].im));
        }
        prob.linear.push(LinearIneq { coeffs: sense, rhs: -kappa * s_a });
        for m in 0..nv {
            prob.linear.push(LinearIneq {
                coeffs: vec![(v.re(m), -2.0 * z[m].re), (v.im(m), -2.0 * z[m].im), (w.index(m), -1.0)],
                rhs: -1.0 - z[m].norm_sqr(),
            });
        }
        let mut x0 = DVector::zeros(layout.len());
        v.pack(&z, &mut x0);
        x0[r] = 0.1;
        for m in 0..nv {
            x0[p.index(m)] = 0.1;
            x0[w.index(m)] = 0.1;
        }
        prob.start = Some(x0);
        let sol = match conic::solve_socp(&prob, &SolverOptions::default()) {
            Ok(s) => s,
            Err(Error::MaxIters { iterations: it }) => {
                return Err(Error::SolverFailure(format!("FPP-SCA subproblem stopped after {it} Newton steps")));
            }
            Err(e) => return Err(e),
        };
        newton_steps += sol.report.iterations;
        let vn = v.extract(&sol.x);
        slack = sol.x[r].max(0.0) + (0..nv).map(|m| sol.x[p.index(m)].max(0.0) + sol.x[w.index(m)].max(0.0)).sum::<f64>();
        modulus_error = vn.iter().map(|x| (x.norm() - 1.0).abs()).fold(0.0, f64::max);
        let before = s_a;
        let after = sensing_value(&vn);
        objective_trace.push(after);
        z = vn;
        if slack < opts.slack_tol && (after - before).abs() <= opts.obj_tol * after.abs() {
            break;
        }
    }
    let converged = slack < opts.slack_tol;
    let unit = z.map(|x| if x.norm() > 0.0 { x / x.norm() } else { c(1.0, 0.0) });
    Ok(FppOutcome { f_rf: unvec(&unit, n_t, n_rf), iterations, slack, modulus_error, newton_steps, objective_trace, converged })
}

/// Output of the trade-off optimizer or of a benchmark construction.
#[derive(Debug, Clone)]
pub struct TradeoffSolution {
    pub beamformer: HybridBeamformer,
    /// Bits/s/Hz.
    pub rate: f64,
    pub power: f64,
    pub pcrb_upper: f64,
    pub pcrb_exact: f64,
    /// `true` when the exact bound fell back on the upper bound.
    pub pcrb_exact_guarded: bool,
    /// `tr(F R F^H A1)` at the start and after every accepted outer iteration.
    pub objective_trace: Vec<f64>,
    /// `|xi(W*, Q*, F) - rate|` in bits at every outer iteration.
    pub surrogate_gaps: Vec<f64>,
    pub n_out: usize,
    pub n_in: usize,
    pub n_ld: usize,
    /// Meets the rate target (within 1e-6 bits).
    pub rate_feasible: bool,
    pub restarts: usize,
    /// Set when some FPP-SCA run hit its iteration cap with live slacks.
    pub stall: Option<String>,
}

impl TradeoffSolution {
    fn assemble(p: &TradeoffProblem, beamformer: HybridBeamformer, objective_trace: Vec<f64>) -> Self {
        let rx = crate::metrics::transmit_covariance(&beamformer);
        let objective = trace_product(&p.sensing.a1, &rx).re;
        let rate = achievable_rate(&p.channel, &beamformer, p.sigma_c2);
        let (pcrb_exact, guarded) = pcrb_exact_guarded(&p.sensing, &rx);
        let rate_feasible = !rate_active(p.rate_target) || rate >= p.rate_target - 1e-6;
        Self {
            power: rx.trace().re,
            pcrb_upper: pcrb_upper_from_objective(&p.sensing, objective),
            pcrb_exact,
            pcrb_exact_guarded: guarded,
            rate,
            beamformer,
            objective_trace,
            surrogate_gaps: Vec::new(),
            n_out: 0,
            n_in: 0,
            n_ld: 0,
            rate_feasible,
            restarts: 0,
            stall: None,
        }
    }

    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::NAN)
    }
}

/// Alternating bound/rate optimization on a scenario, from a seeded random
/// analog precoder.
pub fn algorithm1(scenario: &Scenario, opts: &AoOptions) -> Result<TradeoffSolution> {
    let p = TradeoffProblem::from_scenario(scenario)?;
    run_algorithm1(&p, None, opts)
}

/// Analog start biased toward the user's dominant transmit directions.
fn matched_phase_start(p: &TradeoffProblem, attempt: usize, seed: u64) -> CMat {
    let n_t = p.n_t();
    let gram = p.channel.adjoint() * &p.channel;
    let (_, vecs) = herm_eig(&gram);
    let rank = p.channel.nrows().min(n_t);
    let mut g = rng(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(attempt as u64 + 1)));
    let spread = 0.5 / attempt as f64;
    CMat::from_fn(n_t, p.n_rf, |i, j| {
        let base = vecs[(i, j % rank)] * (n_t as f64).sqrt();
        let z = base + cn01(&mut g) * spread;
        if z.norm() > 0.0 {
            z / z.norm()
        } else {
            c(1.0, 0.0)
        }
    })
}

/// Alternating optimization with an optional analog start. Without one, a seeded random
/// start is used and infeasible starts are retried with matched-phase bias.
pub fn run_algorithm1(p: &TradeoffProblem, init: Option<&CMat>, opts: &AoOptions) -> Result<TradeoffSolution> {
    opts.validate()?;
    let n_t = p.n_t();
    if p.n_rf == 0 || p.n_rf > n_t {
        return Err(Error::Config(format!("N_RF = {} must be in 1..=N_T", p.n_rf)));
    }
    if rate_active(p.rate_target) {
        let cap = capacity_with_analog(&p.channel, &identity(n_t), p.power, p.sigma_c2)?;
        if p.rate_target > cap * (1.0 + 1e-12) {
            return Err(Error::InfeasibleRate { target: p.rate_target, capacity: cap });
        }
    }
    let p3 = |f: &CMat| solve_digital_covariance_p3(f, &p.sensing.a1, &p.channel, p.power, p.rate_target, p.sigma_c2);

    let mut restarts = 0;
    let (mut f, mut cov) = loop {
        let f0 = match (init, restarts) {
            (Some(f), 0) => f.clone(),
            (None, 0) => random_unit_modulus(&mut rng(opts.seed), n_t, p.n_rf),
            _ => matched_phase_start(p, restarts, opts.seed),
        };
        match p3(&f0) {
            Ok(cv) => break (f0, cv),
            Err(e @ (Error::InfeasibleRate { .. } | Error::InvalidBeamformer(_))) => {
                if restarts >= opts.max_restarts {
                    return Err(e);
                }
                restarts += 1;
            }
            Err(e) => return Err(e),
        }
    };

    let mut trace = vec![cov.objective];
    let mut gaps = Vec::new();
    let (mut n_out, mut n_in, mut n_ld) = (0, 0, cov.newton_steps);
    let mut stalls = 0usize;
    let mut last_stall: Option<f64> = None;
    for _ in 0..opts.outer_max {
        n_out += 1;
        let f_bb = baseband_factor(&cov.r_bb);
        let state = wmmse_update(&p.channel, &f, &f_bb, p.sigma_c2)?;
        let bf = HybridBeamformer { f_rf: f.clone(), r_bb: &f_bb * f_bb.adjoint(), f_bb: Some(f_bb.clone()) };
        let rate = achievable_rate(&p.channel, &bf, p.sigma_c2);
        gaps.push((surrogate_rate(&state, &f, &f_bb) - rate).abs());
        // A stalled inner loop still hands over its renormalized iterate; the
        // regression guard below decides whether it is kept.
        let fpp = fpp_sca_iterate(&cov.r_bb, &p.sensing.a1, Some(&state), p.power, p.rate_target, &f, opts)?;
        n_in += fpp.iterations;
        if !fpp.converged {
            stalls += 1;
            last_stall = Some(fpp.slack);
        }
        let cand = match p3(&fpp.f_rf) {
            Ok(cv) => cv,
            // Renormalization pushed the analog precoder just out of reach.
            Err(Error::InfeasibleRate { .. }) | Err(Error::InvalidBeamformer(_)) => break,
            Err(e) => return Err(e),
        };
        n_ld += cand.newton_steps;
        let prev = *trace.last().unwrap();
        if cand.objective < prev {
            // Regression guard: keep the previous iterate.
            break;
        }
        f = fpp.f_rf;
        cov = cand;
        trace.push(cov.objective);
        if cov.objective - prev <= opts.outer_tol * cov.objective.abs() {
            break;
        }
    }

    let f_bb = baseband_factor(&cov.r_bb);
    let bf = HybridBeamformer::from_factors(f, f_bb)?;
    let mut sol = TradeoffSolution::assemble(p, bf, trace);
    sol.surrogate_gaps = gaps;
    sol.n_out = n_out;
    sol.n_in = n_in;
    sol.n_ld = n_ld;
    sol.restarts = restarts;
    sol.stall = last_stall.map(|sl| format!("{stalls} FPP-SCA runs ended with slack above tolerance (last {sl:.3e})"));
    Ok(sol)
}

/// Benchmark 1 analog precoder: the user direction, then prior means by
/// descending weight.
pub fn heuristic_analog(prior: &GaussianMixturePrior, user_angle: f64, n_t: usize, n_rf: usize) -> Result<CMat> {
    if prior.len() + 1 < n_rf {
        return Err(Error::InsufficientRfChains { needed: n_rf - 1, have: prior.len() });
    }
    let order = prior.weight_order();
    let means = prior.means();
    let mut f = CMat::zeros(n_t, n_rf);
    f.set_column(0, &steering(user_angle, n_t));
    for i in 1..n_rf {
        f.set_column(i, &steering(means[order[i - 1]], n_t));
    }
    Ok(f)
}

/// Benchmark 1: heuristic analog columns, optimal digital covariance.
pub fn benchmark_heuristic(scenario: &Scenario) -> Result<TradeoffSolution> {
    benchmark_heuristic_for(&TradeoffProblem::from_scenario(scenario)?)
}

pub fn benchmark_heuristic_for(p: &TradeoffProblem) -> Result<TradeoffSolution> {
    let f = heuristic_analog(&p.prior, p.user_angle, p.n_t(), p.n_rf)?;
    let cov = solve_digital_covariance_p3(&f, &p.sensing.a1, &p.channel, p.power, p.rate_target, p.sigma_c2)?;
    let bf = HybridBeamformer::from_factors(f, baseband_factor(&cov.r_bb))?;
    let mut sol = TradeoffSolution::assemble(p, bf, vec![cov.objective]);
    sol.n_ld = cov.newton_steps;
    Ok(sol)
}

/// Benchmark 2: every analog column steered at the prior's peak angle with
/// coherent all-ones baseband combining at full power. Ignores the rate
/// target; `rate_feasible` reports whether it happens to meet it.
pub fn benchmark_peak_angle(scenario: &Scenario) -> Result<TradeoffSolution> {
    benchmark_peak_angle_for(&TradeoffProblem::from_scenario(scenario)?)
}

pub fn benchmark_peak_angle_for(p: &TradeoffProblem) -> Result<TradeoffSolution> {
    let (n_t, n_rf) = (p.n_t(), p.n_rf);
    let theta = p.prior.mode_on_grid(100_000);
    let a = steering(theta, n_t);
    let f = CMat::from_fn(n_t, n_rf, |i, _| a[i]);
    let amp = (p.power / (n_t * n_rf * n_rf) as f64).sqrt();
    let f_bb = CMat::from_element(n_rf, 1, c(amp, 0.0));
    let bf = HybridBeamformer::from_factors(f, f_bb)?;
    let objective = p.objective(&bf.f_rf, &bf.r_bb);
    Ok(TradeoffSolution::assemble(p, bf, vec![objective]))
}

/// Fully-digital reference: the covariance step with `F_RF = I`.
#[derive(Debug, Clone)]
pub struct DigitalReference {
    pub covariance: CMat,
    pub rate: f64,
    pub pcrb_upper: f64,
    pub pcrb_exact: f64,
    pub objective: f64,
}

pub fn fully_digital_reference(p: &TradeoffProblem) -> Result<DigitalReference> {
    let n_t = p.n_t();
    let cov = solve_digital_covariance_p3(&identity(n_t), &p.sensing.a1, &p.channel, p.power, p.rate_target, p.sigma_c2)?;
    let rate = rate_of_covariance(&p.channel, &cov.r_bb, p.sigma_c2);
    let (pcrb_exact, _) = pcrb_exact_guarded(&p.sensing, &cov.r_bb);
    Ok(DigitalReference {
        rate,
        pcrb_upper: pcrb_upper_from_objective(&p.sensing, cov.objective),
        pcrb_exact,
        objective: cov.objective,
        covariance: cov.r_bb,
    })
}

/// One rate target of a sweep. `None` entries are infeasible at that target.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub rate_target: f64,
    pub proposed: Option<TradeoffSolution>,
    pub digital: Option<DigitalReference>,
    pub bench1: Option<TradeoffSolution>,
    pub bench2: TradeoffSolution,
}

fn infeasible_as_none<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::InfeasibleRate { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn better(a: Option<TradeoffSolution>, b: Option<TradeoffSolution>) -> Option<TradeoffSolution> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y.objective() > x.objective() { y } else { x }),
        (x, y) => x.or(y),
    }
}

/// Analog start with the phases of the top eigenvectors of the fully-digital
/// covariance.
pub fn digital_phase_analog(p: &TradeoffProblem, digital: &DigitalReference) -> CMat {
    let (_, vecs) = herm_eig(&digital.covariance);
    phases_of(&vecs.columns(0, p.n_rf).into_owned())
}

/// Best of alternating-optimization runs from a seeded random start, the heuristic
/// analog precoder, and the phases of the fully-digital design. `None` when
/// no start reaches the rate target.
pub fn multistart_design(p: &TradeoffProblem, digital: Option<&DigitalReference>, opts: &AoOptions) -> Result<Option<TradeoffSolution>> {
    let mut best = infeasible_as_none(run_algorithm1(p, None, opts))?;
    if let Ok(h) = heuristic_analog(&p.prior, p.user_angle, p.n_t(), p.n_rf) {
        best = better(best, infeasible_as_none(run_algorithm1(p, Some(&h), opts))?);
    }
    if let Some(d) = digital {
        let f0 = digital_phase_analog(p, d);
        best = better(best, infeasible_as_none(run_algorithm1(p, Some(&f0), opts))?);
    }
    Ok(best)
}

/// Sweep over ascending rate targets with [`multistart_design`] at every
/// target. A backward pass then re-solves the digital covariance of the
/// design found at the next higher target: it stays feasible at the lower
/// target, so the reported bound is monotone in the target up to solver
/// tolerance.
pub fn rate_sweep(p: &TradeoffProblem, targets: &[f64], opts: &AoOptions) -> Result<Vec<SweepPoint>> {
    if targets.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("sweep rate targets must be strictly increasing".into()));
    }
    let points: Vec<Result<SweepPoint>> = targets
        .par_iter()
        .map(|&rate_target| {
            let q = p.with_rate_target(rate_target);
            let digital = infeasible_as_none(fully_digital_reference(&q))?;
            Ok(SweepPoint {
                rate_target,
                proposed: multistart_design(&q, digital.as_ref(), opts)?,
                digital,
                bench1: infeasible_as_none(benchmark_heuristic_for(&q))?,
                bench2: benchmark_peak_angle_for(&q)?,
            })
        })
        .collect();
    let mut points = points.into_iter().collect::<Result<Vec<_>>>()?;
    for k in (0..points.len().saturating_sub(1)).rev() {
        let Some(next) = points[k + 1].proposed.clone() else { continue };
        let q = p.with_rate_target(points[k].rate_target);
        let carried = infeasible_as_none(resolve_digital(&q, &next))?;
        points[k].proposed = better(points[k].proposed.take(), carried);
    }
    Ok(points)
}

/// Keeps the analog precoder of `sol` and re-solves the digital covariance
/// for `p`.
pub fn resolve_digital(p: &TradeoffProblem, sol: &TradeoffSolution) -> Result<TradeoffSolution> {
    let f = sol.beamformer.f_rf.clone();
    let cov = solve_digital_covariance_p3(&f, &p.sensing.a1, &p.channel, p.power, p.rate_target, p.sigma_c2)?;
    let bf = HybridBeamformer::from_factors(f, baseband_factor(&cov.r_bb))?;
    let mut out = TradeoffSolution::assemble(p, bf, vec![cov.objective]);
    out.n_out = sol.n_out;
    out.n_in = sol.n_in;
    out.n_ld = sol.n_ld + cov.newton_steps;
    Ok(out)
}

/// `v^H (R^T kron M) v` with `v = vec(F)`.
pub fn kron_quadratic(f_rf: &CMat, r_bb: &CMat, m: &CMat) -> C64 {
    let v = vec_of(f_rf);
    v.dotc(&(kron(&r_bb.transpose(), m) * &v))
}

/// Unit-modulus matrix with the phases of `x`.
pub fn phases_of(x: &CMat) -> CMat {
    x.map(|z| if z.norm() > 0.0 { phasor(z.arg()) } else { c(1.0, 0.0) })
}
