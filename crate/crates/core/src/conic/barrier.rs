//! Log-barrier path following with Newton centering.
//!
//! Phase I appends a slack `s` (index `n`) that relaxes every inequality and
//! maximizes `-s` subject to `s >= -floor`; any centered point with `s < 0`
//! is strictly feasible for the original problem.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{sparse_dot, ConicProblem, ConicSolution, SolveReport, SolveStatus, SolverOptions};
use crate::error::{Error, Result};
use crate::linalg::{c, CMat};

struct Engine<'a> {
    p: &'a ConicProblem,
    /// Phase-I slack index, when relaxing.
    relax: bool,
    /// Phase-I lower bound `s >= -floor`.
    floor: f64,
    dim: usize,
    c: DVector<f64>,
    z: Option<DMatrix<f64>>,
    nu: f64,
}

enum Control {
    Continue,
    Stop,
}

struct Centered {
    t: f64,
    kkt: f64,
}

impl<'a> Engine<'a> {
    fn new(p: &'a ConicProblem, relax: bool, floor: f64, z: Option<&DMatrix<f64>>) -> Self {
        let dim = p.n + relax as usize;
        let mut c = DVector::zeros(dim);
        if relax {
            c[p.n] = -1.0;
        } else {
            for &(i, a) in &p.objective {
                c[i] += a;
            }
        }
        let z = z.map(|z| {
            if relax {
                let mut ext = DMatrix::zeros(dim, z.ncols() + 1);
                ext.view_mut((0, 0), (p.n, z.ncols())).copy_from(z);
                ext[(p.n, z.ncols())] = 1.0;
                ext
            } else {
                z.clone()
            }
        });
        let nu = p.degree() + relax as usize as f64;
        Self { p, relax, floor, dim, c, z, nu }
    }

    fn s(&self, x: &DVector<f64>) -> f64 {
        if self.relax {
            x[self.p.n]
        } else {
            0.0
        }
    }

    /// Barrier value, or `None` outside the open domain.
    fn barrier(&self, x: &DVector<f64>) -> Option<f64> {
        let p = self.p;
        let s = self.s(x);
        let mut v = 0.0;
        let mut push = |sigma: f64| -> Option<()> {
            if sigma > 0.0 && sigma.is_finite() {
                v -= sigma.ln();
                Some(())
            } else {
                None
            }
        };
        if self.relax {
            push(s + self.floor)?;
        }
        for l in &p.linear {
            push(l.rhs - sparse_dot(&l.coeffs, x) + s)?;
        }
        for q in &p.quadratic {
            let y = gather(&q.vars, x);
            push(q.rhs - y.dot(&(&q.q * &y)) - sparse_dot(&q.lin, x) + s)?;
        }
        for k in &p.soc {
            let u = sparse_dot(&k.c, x) + k.d + s;
            let w = &k.a * gather(&k.vars, x) + &k.b;
            if u <= 0.0 {
                return None;
            }
            push(u * u - w.norm_squared())?;
        }
        for g in &p.logdet {
            let m = logdet_arg(g, x);
            let ld = crate::linalg::logdet_hpd(&m)?;
            push(ld + sparse_dot(&g.lin, x) - g.rhs + s)?;
        }
        for l in &p.lmi {
            let f = lmi_value(l, x, s, self.relax);
            let ch = Cholesky::new(f)?;
            let ld: f64 = ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
            if !ld.is_finite() {
                return None;
            }
            v -= l.weight * ld;
        }
        Some(v)
    }

    /// Barrier value with gradient and Hessian accumulated into `g`, `h`.
    fn derivs(&self, x: &DVector<f64>, g: &mut DVector<f64>, h: &mut DMatrix<f64>) -> Option<f64> {
        let p = self.p;
        let n = p.n;
        let s = self.s(x);
        let mut v = 0.0;
        let mut grad_sigma: Vec<(usize, f64)> = Vec::new();
        if self.relax {
            let sigma = s + self.floor;
            if sigma <= 0.0 {
                return None;
            }
            v -= sigma.ln();
            add_scalar(sigma, &[(n, 1.0)], g, h);
        }
        for l in &p.linear {
            let sigma = l.rhs - sparse_dot(&l.coeffs, x) + s;
            if sigma <= 0.0 {
                return None;
            }
            v -= sigma.ln();
            grad_sigma.clear();
            grad_sigma.extend(l.coeffs.iter().map(|&(i, a)| (i, -a)));
            if self.relax {
                grad_sigma.push((n, 1.0));
            }
            add_scalar(sigma, &grad_sigma, g, h);
        }
        for q in &p.quadratic {
            let y = gather(&q.vars, x);
            let qy = &q.q * &y;
            let sigma = q.rhs - y.dot(&qy) - sparse_dot(&q.lin, x) + s;
            if sigma <= 0.0 {
                return None;
            }
            v -= sigma.ln();
            grad_sigma.clear();
            grad_sigma.extend(q.vars.iter().zip(qy.iter()).map(|(&i, &a)| (i, -2.0 * a)));
            grad_sigma.extend(q.lin.iter().map(|&(i, a)| (i, -a)));
            if self.relax {
                grad_sigma.push((n, 1.0));
            }
            add_scalar(sigma, &grad_sigma, g, h);
            for (a, &i) in q.vars.iter().enumerate() {
                for (b, &j) in q.vars.iter().enumerate() {
                    h[(i, j)] += 2.0 * q.q[(a, b)] / sigma;
                }
            }
        }
        for k in &p.soc {
            let u = sparse_dot(&k.c, x) + k.d + s;
            let w = &k.a * gather(&k.vars, x) + &k.b;
            let sigma = u * u - w.norm_squared();
            if u <= 0.0 || sigma <= 0.0 {
                return None;
            }
            v -= sigma.ln();
            let atw = k.a.transpose() * &w;
            grad_sigma.clear();
            grad_sigma.extend(k.c.iter().map(|&(i, a)| (i, 2.0 * u * a)));
            if self.relax {
                grad_sigma.push((n, 2.0 * u));
            }
            grad_sigma.extend(k.vars.iter().zip(atw.iter()).map(|(&i, &a)| (i, -2.0 * a)));
            add_scalar(sigma, &grad_sigma, g, h);
            // -grad^2 sigma / sigma = (2 A^T A - 2 grad u grad u^T) / sigma.
            let ata = k.a.transpose() * &k.a;
            for (a, &i) in k.vars.iter().enumerate() {
                for (b, &j) in k.vars.iter().enumerate() {
                    h[(i, j)] += 2.0 * ata[(a, b)] / sigma;
                }
            }
            let mut du: Vec<(usize, f64)> = k.c.clone();
            if self.relax {
                du.push((n, 1.0));
            }
            for &(i, a) in &du {
                for &(j, b) in &du {
                    h[(i, j)] -= 2.0 * a * b / sigma;
                }
            }
        }
        for gc in &p.logdet {
            let m = logdet_arg(gc, x);
            let ch = crate::linalg::chol_hpd(&m)?;
            let ld: f64 = ch.l_dirty().diagonal().iter().map(|d| d.re.ln()).sum::<f64>() * 2.0;
            let sigma = ld + sparse_dot(&gc.lin, x) - gc.rhs + s;
            if sigma <= 0.0 || !sigma.is_finite() {
                return None;
            }
            v -= sigma.ln();
            let minv = ch.inverse();
            let pm: Vec<CMat> = gc.terms.iter().map(|(_, mi)| &minv * mi).collect();
            grad_sigma.clear();
            grad_sigma.extend(gc.terms.iter().zip(&pm).map(|((i, _), pi)| (*i, pi.trace().re)));
            grad_sigma.extend(gc.lin.iter().copied());
            if self.relax {
                grad_sigma.push((n, 1.0));
            }
            add_scalar(sigma, &grad_sigma, g, h);
            for (a, (i, _)) in gc.terms.iter().enumerate() {
                for (b, (j, _)) in gc.terms.iter().enumerate().skip(a) {
                    let tr = trace_of_product(&pm[a], &pm[b]) / sigma;
                    h[(*i, *j)] += tr;
                    if a != b {
                        h[(*j, *i)] += tr;
                    }
                }
            }
        }
        for l in &p.lmi {
            let f = lmi_value(l, x, s, self.relax);
            let ch = Cholesky::new(f)?;
            let ld: f64 = ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
            v -= l.weight * ld;
            let sinv = ch.inverse();
            let d = l.dim();
            let ident: Vec<(usize, usize, f64)> = (0..d).map(|i| (i, i, 1.0)).collect();
            let mut terms: Vec<(usize, &[(usize, usize, f64)])> =
                l.terms.iter().map(|(i, e)| (*i, e.as_slice())).collect();
            if self.relax {
                terms.push((n, ident.as_slice()));
            }
            let w = l.weight;
            // M_k = S F_k S, contracted against every F_j.
            let mut mk = DMatrix::<f64>::zeros(d, d);
            for (a, &(i, ea)) in terms.iter().enumerate() {
                mk.fill(0.0);
                let mut tr = 0.0;
                for &(r, cc, val) in ea {
                    tr += val * sinv[(cc, r)];
                    for col in 0..d {
                        let scr = val * sinv[(cc, col)];
                        if scr != 0.0 {
                            for row in 0..d {
                                mk[(row, col)] += sinv[(row, r)] * scr;
                            }
                        }
                    }
                }
                g[i] -= w * tr;
                for (b, &(j, eb)) in terms.iter().enumerate().skip(a) {
                    let hij: f64 = eb.iter().map(|&(r, cc, val)| val * mk[(cc, r)]).sum::<f64>() * w;
                    h[(i, j)] += hij;
                    if a != b {
                        h[(j, i)] += hij;
                    }
                }
            }
        }
        Some(v)
    }

    /// Smallest constraint margin; the relaxed problem is strictly feasible
    /// iff `s > -margin`.
    fn margin(&self, x: &DVector<f64>) -> Result<f64> {
        let p = self.p;
        let mut m = f64::INFINITY;
        for l in &p.linear {
            m = m.min(l.rhs - sparse_dot(&l.coeffs, x));
        }
        for q in &p.quadratic {
            let y = gather(&q.vars, x);
            m = m.min(q.rhs - y.dot(&(&q.q * &y)) - sparse_dot(&q.lin, x));
        }
        for k in &p.soc {
            let u = sparse_dot(&k.c, x) + k.d;
            let w = &k.a * gather(&k.vars, x) + &k.b;
            m = m.min(u - w.norm());
        }
        for g in &p.logdet {
            let ld = crate::linalg::logdet_hpd(&logdet_arg(g, x)).ok_or_else(|| {
                Error::SolverFailure("log-det argument is not positive definite at the start point".into())
            })?;
            m = m.min(ld + sparse_dot(&g.lin, x) - g.rhs);
        }
        for l in &p.lmi {
            let f = lmi_value(l, x, 0.0, false);
            let ev = f.symmetric_eigen().eigenvalues;
            m = m.min(ev.iter().copied().fold(f64::INFINITY, f64::min));
        }
        Ok(m)
    }

    fn newton_direction(&self, g: &DVector<f64>, h: &DMatrix<f64>) -> Option<DVector<f64>> {
        let (hr, gr) = match &self.z {
            Some(z) => (z.transpose() * h * z, z.transpose() * g),
            None => (h.clone(), g.clone()),
        };
        let k = gr.len();
        let scale = DVector::from_fn(k, |i, _| {
            let d = hr[(i, i)];
            if d > 0.0 && d.is_finite() {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        });
        let mut hs = hr;
        for i in 0..k {
            for j in 0..k {
                hs[(i, j)] *= scale[i] * scale[j];
            }
        }
        let gs = gr.component_mul(&scale);
        let mut reg = 0.0;
        loop {
            let mut m = hs.clone();
            for i in 0..k {
                m[(i, i)] += reg;
            }
            if let Some(ch) = Cholesky::new(m) {
                let dy = ch.solve(&(-&gs)).component_mul(&scale);
                if dy.iter().all(|v| v.is_finite()) {
                    return Some(match &self.z {
                        Some(z) => z * dy,
                        None => dy,
                    });
                }
            }
            reg = if reg == 0.0 { 1e-14 } else { reg * 100.0 };
            if reg > 1e-2 {
                return None;
            }
        }
    }

    fn run(
        &self,
        x: &mut DVector<f64>,
        opts: &SolverOptions,
        steps: &mut usize,
        mut after_centering: impl FnMut(&DVector<f64>, f64) -> Result<Control>,
    ) -> Result<Centered> {
        let obj0 = self.c.dot(x);
        let mut t = opts.t0.unwrap_or(self.nu / obj0.abs().max(1.0)).max(1e-8);
        let mut g = DVector::zeros(self.dim);
        let mut h = DMatrix::zeros(self.dim, self.dim);
        loop {
            let mut kkt;
            let mut inner = 0usize;
            let mut stagnant = 0usize;
            loop {
                g.copy_from(&(-t * &self.c));
                h.fill(0.0);
                let phi = self
                    .derivs(x, &mut g, &mut h)
                    .ok_or_else(|| Error::SolverFailure("iterate left the barrier domain".into()))?;
                let f = -t * self.c.dot(x) + phi;
                let gr = match &self.z {
                    Some(z) => z.transpose() * &g,
                    None => g.clone(),
                };
                kkt = gr.norm() / t / self.c.norm().max(1.0);
                let dx = self
                    .newton_direction(&g, &h)
                    .ok_or_else(|| Error::SolverFailure("Newton system is singular".into()))?;
                let slope = g.dot(&dx);
                if -slope / 2.0 <= opts.centering_tol || inner >= 200 {
                    break;
                }
                let mut alpha = 1.0;
                let mut accepted = false;
                while alpha > 1e-14 {
                    let xn = &*x + alpha * &dx;
                    if let Some(pn) = self.barrier(&xn) {
                        let fnew = -t * self.c.dot(&xn) + pn;
                        if fnew <= f + 0.25 * alpha * slope + 1e-14 * f.abs().max(1.0) {
                            // Decreases at the rounding level of f mean the
                            // centering has hit the floating-point floor.
                            if f - fnew <= 1e-13 * f.abs().max(1.0) {
                                stagnant += 1;
                            } else {
                                stagnant = 0;
                            }
                            *x = xn;
                            accepted = true;
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                if !accepted || stagnant >= 3 {
                    break;
                }
                inner += 1;
                *steps += 1;
                if *steps > opts.max_newton {
                    return Err(Error::MaxIters { iterations: *steps });
                }
                if self.relax && x[self.p.n] < 0.0 {
                    return Ok(Centered { t, kkt });
                }
                if x.norm() > opts.unbounded_norm {
                    return Err(Error::SolverFailure("objective appears unbounded".into()));
                }
            }
            let gap = self.nu / t;
            if let Control::Stop = after_centering(x, gap)? {
                return Ok(Centered { t, kkt });
            }
            t *= opts.mu;
        }
    }
}

fn gather(vars: &[usize], x: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(vars.len(), vars.iter().map(|&i| x[i]))
}

/// Adds the derivatives of `-ln sigma` for the gradient part only; callers
/// add `-grad^2 sigma / sigma` themselves.
fn add_scalar(sigma: f64, grad_sigma: &[(usize, f64)], g: &mut DVector<f64>, h: &mut DMatrix<f64>) {
    let inv = 1.0 / sigma;
    for &(i, a) in grad_sigma {
        g[i] -= a * inv;
    }
    let inv2 = inv * inv;
    for &(i, a) in grad_sigma {
        for &(j, b) in grad_sigma {
            h[(i, j)] += a * b * inv2;
        }
    }
}

fn trace_of_product(a: &CMat, b: &CMat) -> f64 {
    let n = a.nrows();
    let mut acc = c(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc.re
}

fn logdet_arg(g: &super::LogDetIneq, x: &DVector<f64>) -> CMat {
    let mut m = g.m0.clone();
    for (i, mi) in &g.terms {
        let xi = x[*i];
        if xi != 0.0 {
            m.zip_apply(mi, |a, b| *a += b * xi);
        }
    }
    m
}

fn lmi_value(l: &super::Lmi, x: &DVector<f64>, s: f64, relax: bool) -> DMatrix<f64> {
    let mut f = l.f0.clone();
    for (i, entries) in &l.terms {
        let xi = x[*i];
        for &(r, cc, v) in entries {
            f[(r, cc)] += v * xi;
        }
    }
    if relax {
        for i in 0..f.nrows() {
            f[(i, i)] += s;
        }
    }
    f
}

/// Moves `x` onto the equality set and returns a null-space basis.
fn equality_system(p: &ConicProblem, x: &mut DVector<f64>) -> Result<Option<DMatrix<f64>>> {
    let m = p.equalities.len();
    if m == 0 {
        return Ok(None);
    }
    let n = p.n;
    let mut a = DMatrix::<f64>::zeros(m, n);
    let mut b = DVector::<f64>::zeros(m);
    for (r, e) in p.equalities.iter().enumerate() {
        for &(i, v) in &e.coeffs {
            a[(r, i)] += v;
        }
        b[r] = e.rhs;
    }
    let svd = a.clone().svd(false, false);
    let tol = 1e-12 * svd.singular_values.max().max(1e-300) * n.max(m) as f64;
    let resid = &b - &a * &*x;
    let corr = a
        .clone()
        .svd(true, true)
        .solve(&resid, tol)
        .map_err(|e| Error::SolverFailure(format!("equality system: {e}")))?;
    *x += corr;
    if (&a * &*x - &b).amax() > 1e-9 * (1.0 + b.amax()) {
        return Err(Error::Infeasible("affine equalities are inconsistent".into()));
    }
    let eig = (a.transpose() * &a).symmetric_eigen();
    let cut = tol * svd.singular_values.max();
    let cols: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] <= cut).collect();
    Ok(Some(DMatrix::from_fn(n, cols.len(), |i, k| eig.eigenvectors[(i, cols[k])])))
}

pub(super) fn solve(p: &ConicProblem, opts: &SolverOptions) -> Result<ConicSolution> {
    let n = p.n;
    let mut x = p.start.clone().unwrap_or_else(|| DVector::zeros(n));
    let z = equality_system(p, &mut x)?;
    if let Some(z) = &z {
        if z.ncols() == 0 {
            return finish(p, x, 0.0, 0.0, 0, 0);
        }
    }
    let mut steps = 0usize;
    let base = Engine::new(p, false, 0.0, z.as_ref());
    if base.nu == 0.0 {
        let cr = match &z {
            Some(z) => z.transpose() * &base.c,
            None => base.c.clone(),
        };
        if cr.norm() > 0.0 {
            return Err(Error::SolverFailure("objective appears unbounded".into()));
        }
        return finish(p, x, 0.0, 0.0, 0, 0);
    }
    let margin = base.margin(&x)?;
    let mut phase1 = 0usize;
    if !(margin > 0.0) {
        let v = -margin;
        let floor = v.abs().max(1.0);
        let eng = Engine::new(p, true, floor, z.as_ref());
        let mut xs = DVector::zeros(n + 1);
        xs.rows_mut(0, n).copy_from(&x);
        xs[n] = v + 0.1 * (1.0 + v.abs());
        let mut verdict: Option<Error> = None;
        let res = eng.run(&mut xs, opts, &mut steps, |xc, gap| {
            let s = xc[n];
            if s < 0.0 {
                return Ok(Control::Stop);
            }
            if s - gap > 0.0 || gap <= opts.gap_tol * s.abs().max(1.0) {
                verdict = Some(Error::Infeasible(format!("phase I optimum {s:.3e} with gap {gap:.3e}")));
                return Ok(Control::Stop);
            }
            Ok(Control::Continue)
        });
        phase1 = steps;
        match res {
            Ok(_) => {}
            Err(Error::MaxIters { .. }) => {
                return Err(Error::Infeasible("phase I did not reach a strictly feasible point".into()))
            }
            Err(e) => return Err(e),
        }
        if xs[n] >= 0.0 {
            return Err(verdict.unwrap_or_else(|| Error::Infeasible("no strictly feasible point".into())));
        }
        x.copy_from(&xs.rows(0, n));
    }
    let gap_tol = opts.gap_tol;
    let centered = base.run(&mut x, opts, &mut steps, |xc, gap| {
        let obj = p.objective_value(xc);
        Ok(if gap <= gap_tol * obj.abs().max(1.0) { Control::Stop } else { Control::Continue })
    })?;
    finish(p, x, base.nu / centered.t, centered.kkt, steps, phase1)
}

fn finish(
    p: &ConicProblem,
    x: DVector<f64>,
    gap: f64,
    kkt: f64,
    steps: usize,
    phase1: usize,
) -> Result<ConicSolution> {
    let eng = Engine::new(p, false, 0.0, None);
    let margin = if eng.nu > 0.0 { eng.margin(&x)? } else { f64::INFINITY };
    let eq_resid = p
        .equalities
        .iter()
        .map(|e| (sparse_dot(&e.coeffs, &x) - e.rhs).abs())
        .fold(0.0, f64::max);
    let objective = p.objective_value(&x);
    let report = SolveReport {
        status: SolveStatus::Optimal,
        objective,
        dual_bound: objective + gap,
        max_violation: (-margin).max(0.0).max(eq_resid),
        kkt_residual: kkt,
        iterations: steps,
        phase1_iterations: phase1,
    };
    Ok(ConicSolution { x, report })
}
