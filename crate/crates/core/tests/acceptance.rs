//! End-to-end acceptance checks on the reference scenario. Each test prints
//! one PASS/FAIL line with the measured quantities, then asserts.

mod common;

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::{
    barrier_qcqp, disk_max_oracle, min_power_water_filling, random_p1m, rel_diff, report, sdp_dual_oracle,
    simpson_a_matrices,
};
use isac_hbf::array::sensing_matrices;
use isac_hbf::conic::{
    solve_logdet_program, solve_sdp, solve_socp, ConicProblem, LinearIneq, LogDetIneq, QuadIneq, SolverOptions,
    VarLayout,
};
use isac_hbf::linalg::{herm_eig, identity, kron, trace_product, vec_of, CMat, CVec};
use isac_hbf::mc::{bound_holds, empirical_mse};
use isac_hbf::metrics::{angle_grid, pcrb_exact, pcrb_exact_guarded, pcrb_upper, power_pattern, transmit_covariance, HybridBeamformer, Scenario};
use isac_hbf::prior::QuadratureRule;
use isac_hbf::random::{random_cmat, random_psd, random_unit_modulus, rng};
use isac_hbf::runner::pattern_peaks;
use isac_hbf::sensing::{sensing_only_design, single_rf_design, solve_p1m_subproblem, CoordinateAscentOptions};
use isac_hbf::tradeoff::{algorithm1, kron_quadratic, rate_sweep, AoOptions, SweepPoint, TradeoffProblem, TradeoffSolution};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn verdict(name: &str, ok: bool, detail: &str) {
    report(&format!("[{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" }));
}

fn scenario_with_rf(n_rf: usize) -> Scenario {
    let mut sc = Scenario::reference();
    sc.n_rf = n_rf;
    sc
}

struct AoRun {
    n_rf: usize,
    solution: TradeoffSolution,
    elapsed: Duration,
}

fn ao_runs() -> &'static Vec<AoRun> {
    static RUNS: OnceLock<Vec<AoRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        [2, 3]
            .into_iter()
            .map(|n_rf| {
                let sc = scenario_with_rf(n_rf);
                let t = Instant::now();
                let solution = algorithm1(&sc, &AoOptions::default()).expect("alternating optimization runs");
                AoRun { n_rf, solution, elapsed: t.elapsed() }
            })
            .collect()
    })
}

fn sweep() -> &'static (Vec<SweepPoint>, Duration) {
    static SWEEP: OnceLock<(Vec<SweepPoint>, Duration)> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let p = TradeoffProblem::from_scenario(&Scenario::reference()).unwrap();
        let targets: Vec<f64> = (1..=8).map(f64::from).collect();
        let t = Instant::now();
        let pts = rate_sweep(&p, &targets, &AoOptions::default()).expect("sweep runs");
        (pts, t.elapsed())
    })
}

#[test]
fn hybrid_realizes_digital_optimum() {
    let mut ok = true;
    let mut detail = Vec::new();
    for n_rf in [2, 3] {
        let t = Instant::now();
        let sc = scenario_with_rf(n_rf);
        let s = sc.sensing().unwrap();
        let d = sensing_only_design(&s, &sc.prior, sc.power, n_rf, &CoordinateAscentOptions::default()).unwrap();
        let digital = d.digital.as_ref().unwrap().pcrb;
        let hybrid = pcrb_exact(&s, &transmit_covariance(&d.beamformer)).unwrap();
        let gap = rel_diff(hybrid, digital);
        let secs = t.elapsed().as_secs_f64();
        ok &= gap <= 1e-9 && secs < 10.0;
        detail.push(format!("N_RF={n_rf} rel gap {gap:.2e} in {secs:.2}s"));
    }
    verdict("hybrid realizes the digital bound optimum", ok, &detail.join("; "));
    assert!(ok);
}

#[test]
fn exact_bound_below_upper_bound() {
    let sc = Scenario::reference();
    let s = sc.sensing().unwrap();
    let only = s.with_only_a1();
    let mut no_cross = s.clone();
    no_cross.a2 = CMat::zeros(12, 12);
    no_cross.a3 = CMat::zeros(12, 12);
    let mut all_dropped = true;
    let mut g = rng(2024);
    let mut worst = 0.0f64;
    let mut worst_eq = 0.0f64;
    for _ in 0..500 {
        let n_rf = g.random_range(1..=4);
        let f = random_unit_modulus(&mut g, 12, n_rf);
        let r = random_psd(&mut g, n_rf, 1.0);
        let p = (&f * &r * f.adjoint()).trace().re;
        let b = HybridBeamformer::from_covariance(f, r.map(|z| z * (sc.power / p))).unwrap();
        let rx = transmit_covariance(&b);
        let exact = pcrb_exact(&s, &rx).unwrap();
        let upper = pcrb_upper(&s, &rx);
        worst = worst.max((exact - upper) / upper);
        // Zeroed A4 leaves 0/0 in the cross term; the guarded form drops it.
        let (guarded, dropped) = pcrb_exact_guarded(&only, &rx);
        worst_eq = worst_eq.max(rel_diff(guarded, pcrb_upper(&only, &rx)));
        worst_eq = worst_eq.max(rel_diff(pcrb_exact(&no_cross, &rx).unwrap(), pcrb_upper(&no_cross, &rx)));
        all_dropped &= dropped;
    }
    let ok = worst <= 1e-12 && worst_eq <= 1e-12 && all_dropped;
    verdict(
        "exact bound never exceeds the upper bound",
        ok,
        &format!("max relative violation {worst:.2e}; A1-only equality gap {worst_eq:.2e} over 500 beamformers"),
    );
    assert!(ok);
}

#[test]
fn alternating_optimization_converges_monotonically() {
    let mut ok = true;
    let mut detail = Vec::new();
    for run in ao_runs() {
        let tr = &run.solution.objective_trace;
        let worst_drop = tr.windows(2).map(|w| (w[0] - w[1]) / w[0].abs()).fold(0.0f64, f64::max);
        let changes: Vec<f64> = tr.windows(2).map(|w| (w[1] - w[0]).abs() / w[1].abs()).collect();
        let hit = changes.iter().position(|&d| d < 1e-6).map(|k| k + 1);
        let converged = matches!(hit, Some(k) if k <= 30);
        let secs = run.elapsed.as_secs_f64();
        ok &= worst_drop <= 1e-8 && converged && secs < 300.0;
        detail.push(format!(
            "N_RF={} outer={} last rel change {:.2e} max drop {:.1e} first<1e-6 at {:?} {:.0}s",
            run.n_rf,
            run.solution.n_out,
            changes.last().copied().unwrap_or(0.0),
            worst_drop.max(0.0),
            hit,
            secs
        ));
    }
    verdict("alternating optimization is monotone and converges within 30 iterations", ok, &detail.join("; "));
    assert!(ok);
}

fn nondecreasing(vals: &[(f64, f64)]) -> bool {
    vals.windows(2).all(|w| w[1].1 >= w[0].1 * (1.0 - 1e-9))
}

#[test]
fn tradeoff_is_monotone_in_rate_target() {
    let (pts, elapsed) = sweep();
    let prop: Vec<(f64, f64)> =
        pts.iter().filter_map(|p| p.proposed.as_ref().map(|s| (p.rate_target, s.pcrb_upper))).collect();
    let dig: Vec<(f64, f64)> =
        pts.iter().filter_map(|p| p.digital.as_ref().map(|d| (p.rate_target, d.pcrb_upper))).collect();
    let ok = nondecreasing(&prop) && nondecreasing(&dig) && !prop.is_empty();
    let fmt = |v: &[(f64, f64)]| v.iter().map(|(r, x)| format!("{r}:{x:.4e}")).collect::<Vec<_>>().join(" ");
    verdict(
        "bound is non-decreasing in the rate target",
        ok,
        &format!("proposed [{}] digital [{}] ({:.0}s)", fmt(&prop), fmt(&dig), elapsed.as_secs_f64()),
    );
    assert!(ok);
}

#[test]
fn proposed_dominates_benchmarks_and_tracks_digital() {
    let (pts, _) = sweep();
    let mut ok = true;
    let mut detail = Vec::new();
    for p in pts {
        let Some(s) = &p.proposed else {
            detail.push(format!("R={} infeasible", p.rate_target));
            continue;
        };
        let b1 = p.bench1.as_ref().map(|b| b.pcrb_upper);
        let b2 = p.bench2.rate_feasible.then_some(p.bench2.pcrb_upper);
        let ratio = p.digital.as_ref().map(|d| s.pcrb_upper / d.pcrb_upper);
        let beats = b1.is_none_or(|v| s.pcrb_upper <= v) && b2.is_none_or(|v| s.pcrb_upper <= v);
        let close = ratio.is_some_and(|r| r <= 1.10);
        ok &= beats && close;
        detail.push(format!(
            "R={} ratio {:.4} b1 {} b2 {}",
            p.rate_target,
            ratio.unwrap_or(f64::NAN),
            b1.map_or("n/a".into(), |v| format!("{:.3}", v / s.pcrb_upper)),
            b2.map_or("n/a".into(), |v| format!("{:.3}", v / s.pcrb_upper)),
        ));
    }
    verdict(
        "proposed beats both benchmarks and stays within 1.10x of fully digital",
        ok,
        &detail.join("; "),
    );
    assert!(ok);
}

#[test]
fn radiated_pattern_concentrates_on_candidate_angles() {
    let sc = Scenario::reference();
    let run = ao_runs().iter().find(|r| r.n_rf == 3).unwrap();
    let angles = angle_grid(2048);
    let watts = power_pattern(&transmit_covariance(&run.solution.beamformer), &angles, sc.reflection.path_gain());
    let peaks = pattern_peaks(&angles, &watts, 0.5);
    let mut targets = sc.prior.means();
    targets.push(sc.channel.angle);
    let dist: Vec<f64> =
        peaks.iter().map(|(t, _)| targets.iter().map(|m| (t - m).abs()).fold(f64::INFINITY, f64::min)).collect();
    let ok = !peaks.is_empty() && dist.iter().all(|&d| d <= 0.05);
    verdict(
        "pattern peaks sit on prior modes or the user",
        ok,
        &format!(
            "peaks {:?} distances {:?}",
            peaks.iter().map(|p| (p.0 * 1e4).round() / 1e4).collect::<Vec<_>>(),
            dist.iter().map(|d| (d * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    );
    assert!(ok);
}

#[test]
fn surrogate_equals_rate_at_every_iteration() {
    let mut ok = true;
    let mut detail = Vec::new();
    for run in ao_runs() {
        let worst = run.solution.surrogate_gaps.iter().cloned().fold(0.0f64, f64::max);
        ok &= worst <= 1e-8 && !run.solution.surrogate_gaps.is_empty();
        detail.push(format!("N_RF={} max gap {worst:.2e} bits over {} iterations", run.n_rf, run.solution.surrogate_gaps.len()));
    }
    verdict("WMMSE surrogate equals the rate at its optimal auxiliaries", ok, &detail.join("; "));
    assert!(ok);
}

fn oracle_a_matrices() -> (bool, String) {
    let sc = Scenario::reference();
    let base = sc.sensing().unwrap();
    let fine = sensing_matrices(
        &sc.prior,
        &sc.array,
        &sc.reflection,
        sc.symbols,
        sc.sigma_s2,
        &QuadratureRule::over_angle_domain(128, 24).unwrap(),
    )
    .unwrap();
    let simpson = simpson_a_matrices(&sc.prior, sc.array.n_t, sc.array.n_r, 40_000);
    let mats = [&base.a1, &base.a2, &base.a3, &base.a4];
    let fines = [&fine.a1, &fine.a2, &fine.a3, &fine.a4];
    let mut worst_res = 0.0f64;
    let mut worst_simpson = 0.0f64;
    for k in 0..4 {
        worst_res = worst_res.max((mats[k] - fines[k]).norm() / mats[k].norm());
        worst_simpson = worst_simpson.max((mats[k] - &simpson[k]).norm() / mats[k].norm());
    }
    (
        worst_res <= 1e-8 && worst_simpson <= 1e-8,
        format!("two resolutions {worst_res:.1e}, Simpson {worst_simpson:.1e}"),
    )
}

fn oracle_kronecker() -> (bool, String) {
    let mut g = rng(8);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n_t = g.random_range(2..=8);
        let n_rf = g.random_range(1..=4);
        let f = random_unit_modulus(&mut g, n_t, n_rf);
        let r = random_psd(&mut g, n_rf, 1.0);
        let a1 = random_psd(&mut g, n_t, n_t as f64);
        let b1 = random_psd(&mut g, n_t, 2.0);
        let b2 = random_cmat(&mut g, n_rf, n_t);
        let frf = &f * &r * f.adjoint();
        let v = vec_of(&f);
        for m in [&a1, &identity(n_t), &b1] {
            let direct = trace_product(&frf, m);
            let explicit = v.dotc(&(kron(&r.transpose(), m) * &v));
            let lib = kron_quadratic(&f, &r, m);
            worst = worst.max((explicit - direct).norm() / direct.norm()).max((lib - direct).norm() / direct.norm());
        }
        let cvec = vec_of(&b2.transpose());
        let lin = cvec.transpose() * &v;
        let direct = (&b2 * &f).trace();
        worst = worst.max((lin[(0, 0)] - direct).norm() / direct.norm().max(1e-300));
        // tr(ABCD) = vec(D^T)^T (C^T kron A) vec(B) on rectangular factors.
        let (p, q, s, u) = (g.random_range(1..5), g.random_range(1..5), g.random_range(1..5), g.random_range(1..5));
        let (a, b, cm, d) =
            (random_cmat(&mut g, p, q), random_cmat(&mut g, q, s), random_cmat(&mut g, s, u), random_cmat(&mut g, u, p));
        let lhs = (&a * &b * &cm * &d).trace();
        let rhs = (vec_of(&d.transpose()).transpose() * kron(&cm.transpose(), &a) * vec_of(&b))[(0, 0)];
        worst = worst.max((lhs - rhs).norm() / lhs.norm().max(1e-300));
    }
    (worst <= 1e-10, format!("Kronecker forms {worst:.1e}"))
}

fn oracle_p1m() -> (bool, String) {
    let mut g = rng(31);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = random_p1m(&mut g);
        let f = solve_p1m_subproblem(&k).unwrap();
        let (_, best) = disk_max_oracle(|z| k.objective(z), 2001);
        let err = if f.norm() <= 1.0 + 1e-12 { (k.objective(f) - best).abs() / best.abs().max(1.0) } else { f64::INFINITY };
        worst = worst.max(err);
    }
    (worst <= 1e-6, format!("element subproblem vs disk grid {worst:.1e}"))
}

fn oracle_conic() -> (bool, String) {
    let opts = SolverOptions::default();
    let mut g = rng(55);
    let (mut w_sdp, mut w_qp, mut w_ld) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        // Trace-bounded SDP with one extra trace constraint.
        let n = g.random_range(2..=5);
        let cm = random_psd(&mut g, n, n as f64) - identity(n).map(|z| z * 0.3);
        let bm = random_psd(&mut g, n, 1.0) + identity(n).map(|z| z * 0.1);
        let (_, vecs) = herm_eig(&cm);
        let top: CVec = vecs.column(0).into_owned();
        let beta = 0.5 * top.dotc(&(&bm * &top)).re;
        let mut layout = VarLayout::new();
        let x = layout.hermitian(n);
        let mut p = ConicProblem::new(layout.len());
        p.objective = x.trace_functional(&cm).0;
        p.linear.push(LinearIneq { coeffs: x.trace_functional(&identity(n)).0, rhs: 1.0 });
        p.linear.push(LinearIneq { coeffs: x.trace_functional(&bm).0, rhs: beta });
        p.psd(&x);
        let got = solve_sdp(&p, &opts).unwrap().report.objective;
        w_sdp = w_sdp.max(rel_diff(got, sdp_dual_oracle(&cm, &bm, beta)));

        // Linear objective over an ellipsoid cut by half-spaces.
        let m = g.random_range(2..=5);
        let k = g.random_range(1..=4);
        let lq = DMatrix::from_fn(m, m, |_, _| g.random_range(-1.0..1.0));
        let q = &lq * lq.transpose() + DMatrix::identity(m, m) * 0.2;
        let cv = DVector::from_fn(m, |_, _| g.random_range(-1.0..1.0));
        let a = DMatrix::from_fn(k, m, |_, _| g.random_range(-1.0..1.0));
        let b = DVector::from_fn(k, |_, _| g.random_range(0.1..0.6));
        let mut p = ConicProblem::new(m);
        p.objective = (0..m).map(|i| (i, cv[i])).collect();
        p.quadratic.push(QuadIneq { vars: (0..m).collect(), q: q.clone(), lin: vec![], rhs: 1.0 });
        for i in 0..k {
            p.linear.push(LinearIneq { coeffs: (0..m).map(|j| (j, a[(i, j)])).collect(), rhs: b[i] });
        }
        let got = solve_socp(&p, &opts).unwrap().report.objective;
        let want = barrier_qcqp(&cv, &q, &a, &b);
        w_qp = w_qp.max((got - want).abs() / want.abs().max(1.0));

        // Minimum power reaching a log-det rate target.
        let n_u = g.random_range(1..=4);
        let n = g.random_range(2..=4);
        let h = random_cmat(&mut g, n_u, n);
        let target = g.random_range(0.5..3.0);
        let mut layout = VarLayout::new();
        let r = layout.hermitian(n);
        let mut p = ConicProblem::new(layout.len());
        p.objective = r.trace_functional(&identity(n).map(|z| -z)).0;
        p.linear.push(LinearIneq { coeffs: r.trace_functional(&identity(n)).0, rhs: 1e3 });
        p.psd(&r);
        let terms = r
            .basis()
            .into_iter()
            .map(|(i, entries)| {
                let mut e = CMat::zeros(n, n);
                for (a, b, z) in entries {
                    e[(a, b)] = z;
                }
                (i, &h * e * h.adjoint())
            })
            .collect();
        p.logdet.push(LogDetIneq { m0: identity(n_u), terms, lin: vec![], rhs: target });
        let got = -solve_logdet_program(&p, &opts).unwrap().report.objective;
        let gains: Vec<f64> = herm_eig(&(h.adjoint() * &h)).0.into_iter().filter(|&v| v > 1e-12).collect();
        w_ld = w_ld.max(rel_diff(got, min_power_water_filling(&gains, target)));
    }
    (
        w_sdp <= 1e-5 && w_qp <= 1e-5 && w_ld <= 1e-5,
        format!("conic vs dual bisection {w_sdp:.1e}, vs barrier {w_qp:.1e}, vs water-filling {w_ld:.1e}"),
    )
}

#[test]
fn oracle_equivalences() {
    let checks = [oracle_a_matrices(), oracle_kronecker(), oracle_p1m(), oracle_conic()];
    let ok = checks.iter().all(|c| c.0);
    let detail: Vec<String> = checks.iter().map(|c| format!("{}{}", if c.0 { "" } else { "FAILED " }, c.1)).collect();
    verdict("independent oracles agree", ok, &detail.join("; "));
    assert!(ok);
}

#[test]
fn monte_carlo_mse_respects_bound() {
    let sc = Scenario::reference();
    let t = Instant::now();
    let s = sc.sensing().unwrap();
    let d = sensing_only_design(&s, &sc.prior, sc.power, sc.n_rf, &CoordinateAscentOptions::default()).unwrap();
    let m = empirical_mse(&sc, &d.beamformer, 2000, 7).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let ok = bound_holds(&m) && secs < 120.0;
    verdict(
        "Monte-Carlo MSE stays above the exact bound",
        ok,
        &format!("mse {:.4e} vs pcrb {:.4e} (floor {:.4e}) in {secs:.1}s", m.mse, m.pcrb_exact, m.pcrb_exact * (1.0 - 3.0 / 2000f64.sqrt())),
    );
    assert!(ok);
}

#[test]
fn single_rf_ascent_beats_random_search() {
    let sc = Scenario::reference();
    let s = sc.sensing().unwrap();
    let run = single_rf_design(&s, &sc.prior, sc.power, &CoordinateAscentOptions::default()).unwrap();
    let mut g = rng(99);
    let mut best_random = f64::INFINITY;
    for _ in 0..10_000 {
        let f = random_unit_modulus(&mut g, 12, 1);
        let rx = (&f * f.adjoint()).map(|z| z * (sc.power / 12.0));
        best_random = best_random.min(pcrb_exact(&s, &rx).unwrap());
    }
    let monotone = run.trace.windows(2).all(|w| w[1] >= w[0] - 1e-12 * w[0].abs());
    let ok = run.pcrb <= best_random && monotone;
    verdict(
        "single-RF coordinate ascent beats 10^4 random phase vectors",
        ok,
        &format!("ascent {:.4e} vs best random {best_random:.4e}; monotone trace {monotone}", run.pcrb),
    );
    assert!(ok);
}
