//! Independent reference computations shared by the integration tests. Each
//! oracle here is written from the defining formulas, without calling the
//! library routine it checks.

#![allow(dead_code)]

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use isac_hbf::linalg::{c, herm_eig, CMat, CVec, C64};
use isac_hbf::prior::GaussianMixturePrior;
use isac_hbf::sensing::P1mCoefficients;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Writes a line straight to stdout so it survives test output capture.
pub fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// `exp(-j pi (N - 2p + 1) sin(theta) / 2)` for `p = 1..N`, and its derivative.
pub fn ula(theta: f64, n: usize) -> (CVec, CVec) {
    let (s, co) = theta.sin_cos();
    let mut a = CVec::zeros(n);
    let mut d = CVec::zeros(n);
    for p in 1..=n {
        let k = -PI * (n as f64 - 2.0 * p as f64 + 1.0) / 2.0;
        let z = C64::from_polar(1.0, k * s);
        a[p - 1] = z;
        d[p - 1] = z * c(0.0, k * co);
    }
    (a, d)
}

pub fn mixture_pdf(prior: &GaussianMixturePrior, theta: f64) -> f64 {
    prior
        .components()
        .iter()
        .map(|m| m.weight * (-(theta - m.mean).powi(2) / (2.0 * m.variance)).exp() / (2.0 * PI * m.variance).sqrt())
        .sum()
}

/// Prior-averaged `E[||db||^2 a a^H]`, `N_R E[da da^H]`, `N_R E[da a^H]`,
/// `N_R E[a a^H]` by composite Simpson over `[-pi/2, pi/2]` with `intervals`
/// (even) subintervals.
pub fn simpson_a_matrices(prior: &GaussianMixturePrior, n_t: usize, n_r: usize, intervals: usize) -> [CMat; 4] {
    assert!(intervals % 2 == 0);
    let h = PI / intervals as f64;
    let mut out = [CMat::zeros(n_t, n_t), CMat::zeros(n_t, n_t), CMat::zeros(n_t, n_t), CMat::zeros(n_t, n_t)];
    for i in 0..=intervals {
        let theta = -FRAC_PI_2 + h * i as f64;
        let w = if i == 0 || i == intervals {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        } * h
            / 3.0;
        let wp = w * mixture_pdf(prior, theta);
        if wp == 0.0 {
            continue;
        }
        let (a, da) = ula(theta, n_t);
        let (_, db) = ula(theta, n_r);
        let bdot = db.norm_squared();
        let nr = n_r as f64;
        out[0] += (&a * a.adjoint()) * c(wp * bdot, 0.0);
        out[1] += (&da * da.adjoint()) * c(wp * nr, 0.0);
        out[2] += (&da * a.adjoint()) * c(wp * nr, 0.0);
        out[3] += (&a * a.adjoint()) * c(wp * nr, 0.0);
    }
    out
}

/// Random coefficients for the single-element subproblem with `g_4 > 0` on
/// the closed unit disk.
pub fn random_p1m<R: Rng>(g: &mut R) -> P1mCoefficients {
    let mut z = || isac_hbf::random::cn01(g);
    let alpha = [z(), z(), z(), z() * 0.3];
    let beta3 = z();
    let rho4 = 2.0 * alpha[3].norm() + 0.2 + z().norm();
    let rho = [c(z().re, 0.0), c(z().re, 0.0), z(), c(rho4, 0.0)];
    let cur = z();
    let cur = if cur.norm() > 1.0 { cur / cur.norm() } else { cur };
    P1mCoefficients::new(alpha, beta3, rho, 0, cur).unwrap()
}

/// Maximum of `h` over the closed unit disk: a `points x points` grid plus a
/// dense boundary scan, then a shrinking compass search from the best point.
pub fn disk_max_oracle(h: impl Fn(C64) -> f64, points: usize) -> (C64, f64) {
    let mut best = (c(0.0, 0.0), h(c(0.0, 0.0)));
    let step = 2.0 / (points - 1) as f64;
    for i in 0..points {
        let x = -1.0 + step * i as f64;
        for j in 0..points {
            let y = -1.0 + step * j as f64;
            if x * x + y * y <= 1.0 {
                let v = h(c(x, y));
                if v > best.1 {
                    best = (c(x, y), v);
                }
            }
        }
    }
    let ring = 8 * points;
    for k in 0..ring {
        let z = C64::from_polar(1.0, 2.0 * PI * k as f64 / ring as f64);
        let v = h(z);
        if v > best.1 {
            best = (z, v);
        }
    }
    let project = |z: C64| if z.norm() > 1.0 { z / z.norm() } else { z };
    let mut delta = step;
    while delta > 1e-13 {
        let mut moved = false;
        for d in [c(delta, 0.0), c(-delta, 0.0), c(0.0, delta), c(0.0, -delta)] {
            let z = project(best.0 + d);
            let v = h(z);
            if v > best.1 {
                best = (z, v);
                moved = true;
            }
        }
        // Slide along the circle when pinned to the boundary.
        if best.0.norm() > 1.0 - 1e-12 {
            let phi = best.0.arg();
            for s in [delta, -delta] {
                let z = C64::from_polar(1.0, phi + s);
                let v = h(z);
                if v > best.1 {
                    best = (z, v);
                    moved = true;
                }
            }
        }
        if !moved {
            delta *= 0.5;
        }
    }
    best
}

/// `max c.x` s.t. `x^T Q x <= 1`, `A x <= b` by a textbook log-barrier with
/// damped Newton steps, started at the origin (`b > 0` required).
pub fn barrier_qcqp(cv: &DVector<f64>, q: &DMatrix<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    let n = cv.len();
    let m = a.nrows() as f64 + 1.0;
    let mut x = DVector::zeros(n);
    let feasible = |x: &DVector<f64>| (x.dot(&(q * x)) < 1.0) && (b - a * x).iter().all(|&s| s > 0.0);
    let phi = |x: &DVector<f64>, t: f64| -> f64 {
        let s0 = 1.0 - x.dot(&(q * x));
        let s = b - a * x;
        -t * cv.dot(x) - s0.ln() - s.iter().map(|v| v.ln()).sum::<f64>()
    };
    let mut t = 1.0;
    while m / t > 1e-11 {
        for _ in 0..200 {
            let s0 = 1.0 - x.dot(&(q * &x));
            let s = b - a * &x;
            let qx = q * &x;
            let mut grad = -cv * t + &qx * (2.0 / s0);
            let mut hess = q * (2.0 / s0) + (&qx * qx.transpose()) * (4.0 / (s0 * s0));
            for i in 0..a.nrows() {
                let row = a.row(i).transpose();
                grad += &row / s[i];
                hess += (&row * row.transpose()) / (s[i] * s[i]);
            }
            let step = hess.clone().cholesky().expect("barrier Hessian is PD").solve(&(-&grad));
            let dec = -grad.dot(&step);
            if dec / 2.0 < 1e-14 {
                break;
            }
            let f0 = phi(&x, t);
            let mut alpha = 1.0;
            loop {
                let trial = &x + &step * alpha;
                if feasible(&trial) && phi(&trial, t) <= f0 - 0.25 * alpha * dec {
                    x = trial;
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-20 {
                    break;
                }
            }
        }
        t *= 10.0;
    }
    cv.dot(&x)
}

/// Golden-section minimum of a unimodal function on `[lo, hi]`.
pub fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// Value of `max tr(C X)` s.t. `tr X <= 1`, `tr(B X) <= beta`, `X >= 0`
/// through its one-dimensional dual
/// `min_{lambda >= 0} max(lambda_max(C - lambda B), 0) + lambda beta`.
pub fn sdp_dual_oracle(cm: &CMat, bm: &CMat, beta: f64) -> f64 {
    let top = |m: &CMat| herm_eig(m).0[0];
    let dual = |lam: f64| top(&(cm - bm * c(lam, 0.0))).max(0.0) + lam * beta;
    let lmin_b = *herm_eig(bm).0.last().unwrap();
    let hi = top(cm).max(0.0) / lmin_b + 1.0;
    golden_min(dual, 0.0, hi, 1e-12).1
}

/// Minimum power reaching `target` nats over gains `g`: water level by
/// bisection, `p_i = max(0, mu - 1/g_i)`.
pub fn min_power_water_filling(gains: &[f64], target: f64) -> f64 {
    let rate = |mu: f64| gains.iter().map(|g| (1.0 + g * (mu - 1.0 / g).max(0.0)).ln()).sum::<f64>();
    let mut lo = 0.0;
    let mut hi = 1.0;
    while rate(hi) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = 0.5 * (lo + hi);
    gains.iter().map(|g| (mu - 1.0 / g).max(0.0)).sum()
}
