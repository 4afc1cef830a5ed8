//! Run configuration, experiment dispatch and file export.
//!
//! A run reads one JSON config, resolves it into a [`Scenario`] (every dB
//! quantity converted to linear once, here), executes one mode, and writes
//! its files atomically. Nothing is written when the config is rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::array::{ArrayConfig, ReflectionModel};
use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::mc::{bound_holds, empirical_mse_with_grid};
use crate::metrics::{angle_grid, power_pattern, transmit_covariance, HybridBeamformer, Scenario};
use crate::prior::{GaussianMixturePrior, MixtureComponent, QuadratureRule};
use crate::sensing::{digital_pcrb_optimal, sensing_only_design, CoordinateAscentOptions};
use crate::tradeoff::{fully_digital_reference, rate_sweep, run_algorithm1, AoOptions, TradeoffProblem, TradeoffSolution};

pub const RESULT_SCHEMA: &str = "isac-hbf.result.v1";
pub const SWEEP_SCHEMA: &str = "isac-hbf.sweep.v1";
pub const PATTERN_SCHEMA: &str = "isac-hbf.pattern.v1";
pub const MC_SCHEMA: &str = "isac-hbf.mc.v1";

pub const EXIT_OK: i32 = 0;
pub const EXIT_SOLVER: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_CONFIG: i32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    PcrbMin,
    Tradeoff,
    Pattern,
    Sweep,
    ValidateMc,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::PcrbMin => "pcrb-min",
            Mode::Tradeoff => "tradeoff",
            Mode::Pattern => "pattern",
            Mode::Sweep => "sweep",
            Mode::ValidateMc => "validate-mc",
        }
    }
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArraySection {
    pub n_t: usize,
    pub n_r: usize,
}

impl Default for ArraySection {
    fn default() -> Self {
        Self { n_t: 12, n_r: 14 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub n_u: usize,
    pub range_m: f64,
    pub beta0_db: f64,
    pub rician_k_db: f64,
    pub angle_rad: f64,
    pub seed: u64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self { n_u: 8, range_m: 400.0, beta0_db: -30.0, rician_k_db: -8.0, angle_rad: 0.36, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorComponent {
    pub weight: f64,
    pub mean_rad: f64,
    pub variance_rad2: f64,
}

fn default_prior() -> Vec<PriorComponent> {
    GaussianMixturePrior::reference()
        .components()
        .iter()
        .map(|c| PriorComponent { weight: c.weight, mean_rad: c.mean, variance_rad2: c.variance })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetSection {
    /// `P |alpha|^2 L / sigma_s^2`.
    pub snr_ratio_db: f64,
    pub beta0_db: f64,
    pub range_m: f64,
    pub symbols: usize,
}

impl Default for TargetSection {
    fn default() -> Self {
        Self { snr_ratio_db: -5.0, beta0_db: -30.0, range_m: 40.0, symbols: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureSection {
    pub panels: usize,
    pub order: usize,
}

impl Default for QuadratureSection {
    fn default() -> Self {
        Self { panels: QuadratureRule::DEFAULT_PANELS, order: QuadratureRule::DEFAULT_ORDER }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub epsilon: f64,
    pub slack_tol: f64,
    pub fpp_obj_tol: f64,
    pub fpp_max_iters: usize,
    pub outer_max: usize,
    pub outer_tol: f64,
    pub max_restarts: usize,
    pub ascent_max_sweeps: usize,
    pub ascent_tol: f64,
    pub ascent_restarts: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let ao = AoOptions::default();
        let ca = CoordinateAscentOptions::default();
        Self {
            epsilon: ao.epsilon,
            slack_tol: ao.slack_tol,
            fpp_obj_tol: ao.obj_tol,
            fpp_max_iters: ao.fpp_max_iters,
            outer_max: ao.outer_max,
            outer_tol: ao.outer_tol,
            max_restarts: ao.max_restarts,
            ascent_max_sweeps: ca.max_sweeps,
            ascent_tol: ca.tol,
            ascent_restarts: ca.restarts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub rate_targets_bps_hz: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { rate_targets_bps_hz: (1..=8).map(f64::from).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatternSection {
    pub points: usize,
}

impl Default for PatternSection {
    fn default() -> Self {
        Self { points: 2048 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub trials: usize,
    pub grid: usize,
    /// Extra SNR ratios to evaluate; empty means the scenario's own.
    pub snr_ratios_db: Vec<f64>,
}

impl Default for McSection {
    fn default() -> Self {
        Self { trials: 2000, grid: crate::mc::DEFAULT_GRID, snr_ratios_db: Vec::new() }
    }
}

/// One run: scenario parameters plus run controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// When present it must agree with the mode given on the command line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    pub array: ArraySection,
    pub channel: ChannelSection,
    pub prior: Vec<PriorComponent>,
    pub target: TargetSection,
    pub power_dbm: f64,
    pub sigma_c2_dbm: f64,
    pub sigma_s2_dbm: f64,
    pub rate_target_bps_hz: f64,
    pub n_rf: usize,
    pub quadrature: QuadratureSection,
    pub solver: SolverSection,
    pub sweep: SweepSection,
    pub pattern: PatternSection,
    pub mc: McSection,
    pub seed: u64,
    /// Also write an SVG chart next to every CSV.
    pub svg: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            mode: None,
            array: ArraySection::default(),
            channel: ChannelSection::default(),
            prior: default_prior(),
            target: TargetSection::default(),
            power_dbm: 30.0,
            sigma_c2_dbm: -90.0,
            sigma_s2_dbm: -90.0,
            rate_target_bps_hz: 5.0,
            n_rf: 3,
            quadrature: QuadratureSection::default(),
            solver: SolverSection::default(),
            sweep: SweepSection::default(),
            pattern: PatternSection::default(),
            mc: McSection::default(),
            seed: 0,
            svg: false,
        }
    }
}

fn config_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Config(e.to_string())
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(config_err)
    }

    pub fn ao_options(&self) -> AoOptions {
        let s = &self.solver;
        AoOptions {
            epsilon: s.epsilon,
            slack_tol: s.slack_tol,
            obj_tol: s.fpp_obj_tol,
            fpp_max_iters: s.fpp_max_iters,
            outer_max: s.outer_max,
            outer_tol: s.outer_tol,
            max_restarts: s.max_restarts,
            seed: self.seed,
        }
    }

    pub fn ascent_options(&self) -> CoordinateAscentOptions {
        CoordinateAscentOptions {
            max_sweeps: self.solver.ascent_max_sweeps,
            tol: self.solver.ascent_tol,
            restarts: self.solver.ascent_restarts,
            seed: self.seed,
        }
    }

    /// Linear-scale scenario; every failure is a config error.
    pub fn scenario(&self) -> Result<Scenario> {
        let array = ArrayConfig::new(self.array.n_t, self.array.n_r).map_err(config_err)?;
        let prior = GaussianMixturePrior::new(
            self.prior
                .iter()
                .map(|c| MixtureComponent { weight: c.weight, mean: c.mean_rad, variance: c.variance_rad2 })
                .collect(),
        )
        .map_err(config_err)?;
        let quadrature =
            QuadratureRule::over_angle_domain(self.quadrature.panels, self.quadrature.order).map_err(config_err)?;
        let power = dbm_to_watts(self.power_dbm);
        let sigma_s2 = dbm_to_watts(self.sigma_s2_dbm);
        let t = &self.target;
        if !(t.range_m > 0.0) {
            return Err(Error::Config("target range must be positive".into()));
        }
        let reflection = ReflectionModel::from_snr_ratio(
            db_to_linear(t.snr_ratio_db),
            power,
            t.symbols,
            sigma_s2,
            db_to_linear(t.beta0_db),
            t.range_m,
        )
        .map_err(config_err)?;
        let ch = &self.channel;
        let sc = Scenario {
            array,
            channel: ChannelParams {
                n_u: ch.n_u,
                range: ch.range_m,
                beta0: db_to_linear(ch.beta0_db),
                rician_k: db_to_linear(ch.rician_k_db),
                angle: ch.angle_rad,
                seed: ch.seed,
            },
            prior,
            reflection,
            power,
            sigma_c2: dbm_to_watts(self.sigma_c2_dbm),
            sigma_s2,
            symbols: t.symbols,
            rate_target: self.rate_target_bps_hz,
            n_rf: self.n_rf,
            quadrature,
            options: self.ao_options(),
        };
        sc.validate().map_err(config_err)?;
        sc.options.validate().map_err(config_err)?;
        Ok(sc)
    }

    /// Checks everything a mode will need before any work starts.
    pub fn validate_for(&self, mode: Mode) -> Result<Scenario> {
        if let Some(m) = self.mode {
            if m != mode {
                return Err(Error::Config(format!("config is for mode {}, not {}", m.name(), mode.name())));
            }
        }
        let sc = self.scenario()?;
        let ca = &self.solver;
        if ca.ascent_max_sweeps == 0 || !(ca.ascent_tol > 0.0) {
            return Err(Error::Config("ascent sweeps and tolerance must be positive".into()));
        }
        match mode {
            Mode::Sweep => {
                let r = &self.sweep.rate_targets_bps_hz;
                if r.is_empty() {
                    return Err(Error::Config("sweep needs at least one rate target".into()));
                }
                if r.iter().any(|v| !v.is_finite() || *v < 0.0) || r.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::Config("sweep rate targets must be nonnegative and strictly increasing".into()));
                }
            }
            Mode::Pattern if self.pattern.points < 3 => {
                return Err(Error::Config("pattern needs at least 3 points".into()));
            }
            Mode::ValidateMc => {
                if self.mc.trials < 100 {
                    return Err(Error::Config("validate-mc needs at least 100 trials".into()));
                }
                if self.mc.grid < 3 {
                    return Err(Error::Config("estimator grid needs at least 3 points".into()));
                }
                if self.mc.snr_ratios_db.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config("SNR ratios must be finite".into()));
                }
            }
            _ => {}
        }
        Ok(sc)
    }
}

/// `sha256("blob <len>\0" || bytes)`, the git object hash over SHA-256.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// A file produced by a run, held in memory until the run ends.
#[derive(Debug, Clone)]
pub struct OutputFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub files: Vec<OutputFile>,
    pub message: String,
}

pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::InfeasibleRate { .. } | Error::Infeasible(_) => EXIT_INFEASIBLE,
        _ => EXIT_SOLVER,
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
struct Counters {
    n_out: usize,
    n_in: usize,
    n_ld: usize,
}

impl Counters {
    fn add(&mut self, s: &TradeoffSolution) {
        self.n_out += s.n_out;
        self.n_in += s.n_in;
        self.n_ld += s.n_ld;
    }
}

/// Header lines shared by every CSV: schema, input hash, resolved config.
fn csv_preamble(schema: &str, hash: &str, config_json: &str) -> String {
    format!("# schema={schema}\n# config_sha256={hash}\n# config={config_json}\n")
}

fn fmt_f(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.12e}")
    } else {
        "NaN".to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), fmt_f)
}

fn beamformer_json(b: &HybridBeamformer) -> Value {
    let phases: Vec<Vec<f64>> =
        (0..b.f_rf.nrows()).map(|i| (0..b.f_rf.ncols()).map(|j| b.f_rf[(i, j)].arg()).collect()).collect();
    let part = |m: &CMat, f: fn(&nalgebra::Complex<f64>) -> f64| -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| f(&m[(i, j)])).collect()).collect()
    };
    json!({
        "f_rf_phase_rad": phases,
        "r_bb_re": part(&b.r_bb, |z| z.re),
        "r_bb_im": part(&b.r_bb, |z| z.im),
    })
}

fn solution_json(s: &TradeoffSolution) -> Value {
    let max_gap = s.surrogate_gaps.iter().cloned().fold(0.0, f64::max);
    json!({
        "pcrb_upper": s.pcrb_upper,
        "pcrb_exact": s.pcrb_exact,
        "pcrb_exact_guarded": s.pcrb_exact_guarded,
        "rate_bps_hz": s.rate,
        "power_w": s.power,
        "rate_feasible": s.rate_feasible,
        "objective_trace": s.objective_trace,
        "max_surrogate_gap_bits": max_gap,
        "restarts": s.restarts,
        "fpp_stall": s.stall,
        "beamformer": beamformer_json(&s.beamformer),
    })
}

/// Local maxima of `values` above `frac` of the global maximum.
pub fn pattern_peaks(angles: &[f64], values: &[f64], frac: f64) -> Vec<(f64, f64)> {
    let top = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n = values.len();
    (0..n)
        .filter(|&i| {
            let left = if i == 0 { f64::NEG_INFINITY } else { values[i - 1] };
            let right = if i + 1 == n { f64::NEG_INFINITY } else { values[i + 1] };
            values[i] >= left && values[i] > right && values[i] >= frac * top
        })
        .map(|i| (angles[i], values[i]))
        .collect()
}

fn pattern_csv(preamble: &str, angles: &[f64], watts: &[f64], prior: &GaussianMixturePrior) -> String {
    let mut out = String::from(preamble);
    out.push_str("theta_rad,radiated_watts,prior_pdf\n");
    for (t, w) in angles.iter().zip(watts) {
        let _ = writeln!(out, "{},{},{}", fmt_f(*t), fmt_f(*w), fmt_f(prior.pdf(*t)));
    }
    out
}

/// Everything a mode needs besides the scenario.
struct Ctx<'a> {
    cfg: &'a ScenarioConfig,
    mode: Mode,
    hash: String,
    config_json: String,
}

struct ModeOutput {
    summary: Value,
    counters: Counters,
    files: Vec<OutputFile>,
}

fn run_pcrb_min(ctx: &Ctx, sc: &Scenario) -> Result<ModeOutput> {
    let s = sc.sensing()?;
    let design = sensing_only_design(&s, &sc.prior, sc.power, sc.n_rf, &ctx.cfg.ascent_options())?;
    let digital = match design.digital.clone() {
        Some(d) => d,
        None => digital_pcrb_optimal(&s, sc.power)?,
    };
    let rx = transmit_covariance(&design.beamformer);
    let rel_gap = (design.pcrb - digital.pcrb) / digital.pcrb;
    let counters = Counters {
        n_out: design.ascent.as_ref().map_or(0, |a| a.sweeps),
        n_in: 0,
        n_ld: digital.report.iterations,
    };
    let summary = json!({
        "pcrb_hybrid": design.pcrb,
        "pcrb_digital": digital.pcrb,
        "relative_gap": rel_gap,
        "pcrb_upper_hybrid": crate::metrics::pcrb_upper(&s, &rx),
        "power_w": rx.trace().re,
        "rank_one_polished": digital.rank_one_polished,
        "beamformer": beamformer_json(&design.beamformer),
    });
    Ok(ModeOutput { summary, counters, files: Vec::new() })
}

fn solve_tradeoff(ctx: &Ctx, sc: &Scenario) -> Result<(TradeoffProblem, TradeoffSolution)> {
    let p = TradeoffProblem::from_scenario(sc)?;
    let sol = run_algorithm1(&p, None, &ctx.cfg.ao_options())?;
    Ok((p, sol))
}

fn digital_or_none(p: &TradeoffProblem) -> Result<Option<crate::tradeoff::DigitalReference>> {
    match fully_digital_reference(p) {
        Ok(d) => Ok(Some(d)),
        Err(Error::InfeasibleRate { .. }) | Err(Error::Infeasible(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn run_tradeoff(ctx: &Ctx, sc: &Scenario) -> Result<ModeOutput> {
    let (p, sol) = solve_tradeoff(ctx, sc)?;
    let digital = digital_or_none(&p)?;
    let mut counters = Counters::default();
    counters.add(&sol);
    let summary = json!({
        "proposed": solution_json(&sol),
        "digital_pcrb_upper": digital.as_ref().map(|d| d.pcrb_upper),
        "digital_rate_bps_hz": digital.as_ref().map(|d| d.rate),
        "ratio_to_digital": digital.as_ref().map(|d| sol.pcrb_upper / d.pcrb_upper),
    });
    Ok(ModeOutput { summary, counters, files: Vec::new() })
}

fn run_pattern(ctx: &Ctx, sc: &Scenario) -> Result<ModeOutput> {
    let (p, sol) = solve_tradeoff(ctx, sc)?;
    let digital = digital_or_none(&p)?;
    let angles = angle_grid(ctx.cfg.pattern.points);
    let gain = sc.reflection.path_gain();
    let watts = power_pattern(&transmit_covariance(&sol.beamformer), &angles, gain);
    let mut files = vec![OutputFile {
        name: "pattern.csv".into(),
        bytes: pattern_csv(&ctx.preamble_for(PATTERN_SCHEMA), &angles, &watts, &sc.prior).into_bytes(),
    }];
    let mut digital_peaks = Vec::new();
    if let Some(d) = &digital {
        let dw = power_pattern(&d.covariance, &angles, gain);
        digital_peaks = pattern_peaks(&angles, &dw, 0.5);
        files.push(OutputFile {
            name: "pattern_digital.csv".into(),
            bytes: pattern_csv(&ctx.preamble_for(PATTERN_SCHEMA), &angles, &dw, &sc.prior).into_bytes(),
        });
    }
    let mut counters = Counters::default();
    counters.add(&sol);
    let peaks = pattern_peaks(&angles, &watts, 0.5);
    let summary = json!({
        "proposed": solution_json(&sol),
        "peaks_rad": peaks.iter().map(|p| p.0).collect::<Vec<_>>(),
        "digital_peaks_rad": digital_peaks.iter().map(|p| p.0).collect::<Vec<_>>(),
        "candidate_angles_rad": sc.prior.means().into_iter().chain([sc.channel.angle]).collect::<Vec<_>>(),
    });
    Ok(ModeOutput { summary, counters, files })
}

fn run_sweep(ctx: &Ctx, sc: &Scenario) -> Result<ModeOutput> {
    let p = TradeoffProblem::from_scenario(sc)?;
    let targets = &ctx.cfg.sweep.rate_targets_bps_hz;
    let points = rate_sweep(&p, targets, &ctx.cfg.ao_options())?;
    let mut csv = ctx.preamble_for(SWEEP_SCHEMA);
    csv.push_str(
        "rate_target,pcrb_upper_proposed,pcrb_exact_proposed,pcrb_digital,pcrb_bench1,pcrb_bench2,bench2_feasible,achieved_rate,outer_iters\n",
    );
    let mut counters = Counters::default();
    let mut rows = Vec::new();
    for pt in &points {
        let prop = pt.proposed.as_ref();
        if let Some(s) = prop {
            counters.add(s);
        }
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            fmt_f(pt.rate_target),
            fmt_opt(prop.map(|s| s.pcrb_upper)),
            fmt_opt(prop.map(|s| s.pcrb_exact)),
            fmt_opt(pt.digital.as_ref().map(|d| d.pcrb_upper)),
            fmt_opt(pt.bench1.as_ref().map(|s| s.pcrb_upper)),
            fmt_f(pt.bench2.pcrb_upper),
            pt.bench2.rate_feasible,
            fmt_opt(prop.map(|s| s.rate)),
            prop.map_or(0, |s| s.n_out),
        );
        rows.push(json!({
            "rate_target": pt.rate_target,
            "proposed_feasible": prop.is_some(),
            "digital_feasible": pt.digital.is_some(),
            "bench1_feasible": pt.bench1.is_some(),
            "bench2_feasible": pt.bench2.rate_feasible,
            "fpp_stall": prop.and_then(|s| s.stall.clone()),
        }));
    }
    let summary = json!({ "points": rows });
    Ok(ModeOutput {
        summary,
        counters,
        files: vec![OutputFile { name: "sweep.csv".into(), bytes: csv.into_bytes() }],
    })
}

fn run_validate_mc(ctx: &Ctx, sc: &Scenario) -> Result<ModeOutput> {
    let ratios: Vec<f64> = if ctx.cfg.mc.snr_ratios_db.is_empty() {
        vec![ctx.cfg.target.snr_ratio_db]
    } else {
        ctx.cfg.mc.snr_ratios_db.clone()
    };
    let mut csv = ctx.preamble_for(MC_SCHEMA);
    csv.push_str("snr_ratio_db,trials,mse_rad2,pcrb_exact_rad2,mse_std_err,bias_rad,bound_holds\n");
    let mut rows = Vec::new();
    let mut all_hold = true;
    for db in ratios {
        let scn = sc.with_snr_ratio(db_to_linear(db))?;
        let s = scn.sensing()?;
        let design = sensing_only_design(&s, &scn.prior, scn.power, scn.n_rf, &ctx.cfg.ascent_options())?;
        let m = empirical_mse_with_grid(&scn, &design.beamformer, ctx.cfg.mc.trials, ctx.cfg.seed, ctx.cfg.mc.grid)?;
        let holds = bound_holds(&m);
        all_hold &= holds;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            fmt_f(db),
            m.trials,
            fmt_f(m.mse),
            fmt_f(m.pcrb_exact),
            fmt_f(m.std_err),
            fmt_f(m.bias),
            holds
        );
        rows.push(json!({
            "snr_ratio_db": db, "mse": m.mse, "pcrb_exact": m.pcrb_exact,
            "std_err": m.std_err, "bias": m.bias, "bias_std_err": m.bias_std_err, "bound_holds": holds,
        }));
    }
    let summary = json!({ "rows": rows, "bound_holds_everywhere": all_hold });
    Ok(ModeOutput {
        summary,
        counters: Counters::default(),
        files: vec![OutputFile { name: "mc.csv".into(), bytes: csv.into_bytes() }],
    })
}

impl Ctx<'_> {
    fn preamble_for(&self, schema: &str) -> String {
        csv_preamble(schema, &self.hash, &self.config_json)
    }
}

/// Executes one run from raw config text. Returns the files to write and the
/// exit code; a rejected config yields no files.
pub fn run_from_text(mode: Mode, text: &str, seed: Option<u64>, workers: Option<usize>) -> RunOutcome {
    let started = Instant::now();
    let hash = content_hash(text.as_bytes());
    let parsed = ScenarioConfig::from_json(text).and_then(|mut cfg| {
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let sc = cfg.validate_for(mode)?;
        Ok((cfg, sc))
    });
    let (cfg, sc) = match parsed {
        Ok(v) => v,
        Err(e) => return RunOutcome { exit_code: EXIT_CONFIG, files: Vec::new(), message: e.to_string() },
    };
    if workers == Some(0) {
        return RunOutcome { exit_code: EXIT_CONFIG, files: Vec::new(), message: "workers must be at least 1".into() };
    }
    let config_json = serde_json::to_string(&cfg).expect("config serializes");
    let ctx = Ctx { cfg: &cfg, mode, hash: hash.clone(), config_json };
    let work = || match mode {
        Mode::PcrbMin => run_pcrb_min(&ctx, &sc),
        Mode::Tradeoff => run_tradeoff(&ctx, &sc),
        Mode::Pattern => run_pattern(&ctx, &sc),
        Mode::Sweep => run_sweep(&ctx, &sc),
        Mode::ValidateMc => run_validate_mc(&ctx, &sc),
    };
    let result = match workers {
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(work),
            Err(e) => Err(Error::SolverFailure(format!("thread pool: {e}"))),
        },
        None => work(),
    };
    let (status, exit_code, message, out) = match result {
        Ok(out) => ("ok", EXIT_OK, "ok".to_string(), Some(out)),
        Err(e) => {
            let code = exit_code_for(&e);
            (if code == EXIT_INFEASIBLE { "infeasible" } else { "solver-failure" }, code, e.to_string(), None)
        }
    };
    let (summary, counters, mut files) = match out {
        Some(o) => (o.summary, o.counters, o.files),
        None => (Value::Null, Counters::default(), Vec::new()),
    };
    let result_json = json!({
        "schema": RESULT_SCHEMA,
        "mode": ctx.mode.name(),
        "status": status,
        "message": message,
        "config_sha256": hash,
        "config": cfg,
        "seed": cfg.seed,
        "counters": counters,
        "wall_time_s": started.elapsed().as_secs_f64(),
        "summary": summary,
    });
    if cfg.svg {
        let svgs: Vec<OutputFile> = files
            .iter()
            .filter_map(|f| {
                let text = std::str::from_utf8(&f.bytes).ok()?;
                let svg = csv_to_svg(text).ok()?;
                Some(OutputFile { name: f.name.replace(".csv", ".svg"), bytes: svg.into_bytes() })
            })
            .collect();
        files.extend(svgs);
    }
    files.push(OutputFile {
        name: "result.json".into(),
        bytes: serde_json::to_vec_pretty(&result_json).expect("result serializes"),
    });
    RunOutcome { exit_code, files, message }
}

/// Writes `bytes` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

/// Reads the config, runs, writes outputs into `out`. Returns the exit code.
pub fn run_scenario(mode: Mode, config: &Path, out: &Path, seed: Option<u64>, workers: Option<usize>) -> (i32, String) {
    let text = match fs::read_to_string(config) {
        Ok(t) => t,
        Err(e) => return (EXIT_CONFIG, format!("configuration error: cannot read {}: {e}", config.display())),
    };
    let outcome = run_from_text(mode, &text, seed, workers);
    for f in &outcome.files {
        if let Err(e) = write_atomic(out, &f.name, &f.bytes) {
            return (EXIT_SOLVER, e.to_string());
        }
    }
    (outcome.exit_code, outcome.message)
}

/// Minimal SVG line chart of every numeric column against the first.
/// Columns are min-max normalized independently; `NaN` cells break lines.
pub fn csv_to_svg(text: &str) -> Result<String> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::Config("empty CSV".into()))?.split(',').collect();
    let rows: Vec<Vec<f64>> =
        lines.map(|l| l.split(',').map(|v| v.trim().parse::<f64>().unwrap_or(f64::NAN)).collect()).collect();
    if header.len() < 2 || rows.is_empty() {
        return Err(Error::Config("CSV needs a header, two columns and one row".into()));
    }
    let (w, h, pad) = (640.0, 400.0, 40.0);
    let range = |col: usize| {
        let vals = rows.iter().filter_map(|r| r.get(col)).filter(|v| v.is_finite());
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, lo + 0.5)
        }
    };
    let (x0, x1) = range(0);
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"];
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect x=\"{pad}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    for col in 1..header.len() {
        if !rows.iter().any(|r| r.get(col).is_some_and(|v| v.is_finite())) {
            continue;
        }
        let (y0, y1) = range(col);
        let color = palette[(col - 1) % palette.len()];
        let mut segment = Vec::new();
        let flush = |seg: &mut Vec<String>, svg: &mut String| {
            if seg.len() > 1 {
                let _ = writeln!(svg, "<polyline fill=\"none\" stroke=\"{color}\" points=\"{}\"/>", seg.join(" "));
            }
            seg.clear();
        };
        for r in &rows {
            match (r.first(), r.get(col)) {
                (Some(x), Some(y)) if x.is_finite() && y.is_finite() => {
                    let px = pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
                    let py = h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
                    segment.push(format!("{px:.2},{py:.2}"));
                }
                _ => flush(&mut segment, &mut svg),
            }
        }
        flush(&mut segment, &mut svg);
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{}</text>",
            pad + 4.0,
            pad + 12.0 * col as f64,
            header[col]
        );
    }
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" font-size=\"11\">{}</text>", w / 2.0, h - 8.0, header[0]);
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Default config with every field spelled out.
pub fn default_config_json() -> String {
    serde_json::to_string_pretty(&ScenarioConfig::default()).expect("config serializes")
}
