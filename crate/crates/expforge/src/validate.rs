//! The bundled acceptance checks.
//!
//! Each `measure_*` function returns raw numbers; [`judge`] turns them into
//! pass/fail with [`Tolerances`]. Keeping the two apart lets other harnesses
//! re-judge the same measurements with their own limits.

use crate::analytic::{
    exp_active_as, exp_no_feedback, exp_passive_as, max_messages, maximize_on, region_exp, sweep_pareto,
    MessageScheme, OneWaySpec, RegionPoint, RegionScheme, TwoWaySpec, DEFAULT_GRID,
};
use crate::engine::{self, batch_rng, exponent_regression, ErrorEvent, ErrorStats, McConfig, RatePoint, Scheme};
use crate::geometry::{
    ack_region, build_simplex, min_distance_decode, pairwise_distance, protection_region, AckDecision,
    NackGeometry, ProtectionGeometry,
};
use crate::oracle::{analytic_event_bounds, exact_pe_simplex, q_function, BoundRequest, QuadratureSpec};
use crate::schemes::{
    ActiveAs, ChannelSpec, ExpBuildingBlock, ExpScheme, ExpSchemeConfig, PhaseSplit, PowerConstraint,
    SimplexNoFeedback, TwoWayActiveAs, TwoWayExp,
};
use crate::Result;
use rand::Rng;
use serde::Serialize;
use std::time::Instant;

pub const CRITERIA: [(u8, &str); 9] = [
    (1, "analytic"),
    (2, "region"),
    (3, "exp-sum"),
    (4, "oracle"),
    (5, "slope"),
    (6, "bounds"),
    (7, "power"),
    (8, "table"),
    (9, "geometry"),
];

/// Resolves a criterion by number or name.
pub fn criterion_id(key: &str) -> Option<u8> {
    let key = key.trim();
    CRITERIA
        .iter()
        .find(|(id, name)| *name == key || id.to_string() == key)
        .map(|(id, _)| *id)
}

/// Limits used by [`judge`]. `scale` multiplies every tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub scale: f64,
    pub exponent_abs: f64,
    pub passive_abs: f64,
    pub passive_s_abs: f64,
    pub corner_abs: f64,
    pub sum_abs: f64,
    pub oracle_se: f64,
    pub slope_simplex_rel: f64,
    pub slope_active_rel: f64,
    pub bound_ci_widths: f64,
    pub audit_se: f64,
    pub geometry_abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            scale: 1.0,
            exponent_abs: 1e-6,
            passive_abs: 1e-5,
            passive_s_abs: 1e-6,
            corner_abs: 1e-3,
            sum_abs: 1e-12,
            oracle_se: 3.0,
            slope_simplex_rel: 0.25,
            slope_active_rel: 0.30,
            bound_ci_widths: 3.0,
            audit_se: 3.0,
            geometry_abs: 1e-12,
        }
    }
}

impl Tolerances {
    pub fn scaled(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(crate::error::invalid("tol_scale", format!("must be finite and > 0, got {scale}")));
        }
        Ok(Self { scale, ..Self::default() })
    }

    fn get(&self, v: f64) -> f64 {
        v * self.scale
    }
}

// ---------------------------------------------------------------------------
// 1. one-way exponents at (m = 3, snr 2, snr_fb 16)

#[derive(Debug, Clone, Serialize)]
pub struct ExponentCheck {
    pub active_max: f64,
    pub active_at_s: f64,
    pub passive_max: f64,
    pub passive_at_s: f64,
    pub no_feedback: f64,
}

pub fn measure_exponents() -> Result<ExponentCheck> {
    let spec = OneWaySpec::new(3, 2.0, 16.0)?;
    let (active_at_s, active_max) = maximize_on(|s| exp_active_as(&spec, s).unwrap_or(0.0), 0.0, 1.0);
    let (passive_at_s, passive_max) = maximize_on(|s| exp_passive_as(&spec, s), 0.0, 1.0);
    Ok(ExponentCheck {
        active_max,
        active_at_s,
        passive_max,
        passive_at_s,
        no_feedback: exp_no_feedback(3, 2.0),
    })
}

pub fn passive_optimum_s() -> f64 {
    (21f64.sqrt() - 1.0) / 5.0
}

// ---------------------------------------------------------------------------
// 2. region corner points at (m = 3, snr12 2, snr21 16)

#[derive(Debug, Clone, Serialize)]
pub struct CornerCheck {
    /// Sup-norm distance from the frontier to each target.
    pub passive_corner: f64,
    pub active_knee: f64,
    pub active_endpoint: f64,
}

fn distance_to(front: &[RegionPoint], e12: f64, e21: f64) -> f64 {
    front
        .iter()
        .map(|p| (p.e12 - e12).abs().max((p.e21 - e21).abs()))
        .fold(f64::INFINITY, f64::min)
}

pub fn measure_corners() -> Result<CornerCheck> {
    let spec = TwoWaySpec::new(3, 2.0, 16.0)?;
    let passive = sweep_pareto(RegionScheme::PassiveAs, &spec, DEFAULT_GRID)?;
    let active = sweep_pareto(RegionScheme::ActiveAs, &spec, DEFAULT_GRID)?;
    Ok(CornerCheck {
        passive_corner: distance_to(&passive, 0.75, 3.0),
        active_knee: distance_to(&active, 0.8, 5.2),
        active_endpoint: distance_to(&active, 0.0, 6.0),
    })
}

// ---------------------------------------------------------------------------
// 3. EXP sum law

#[derive(Debug, Clone, Serialize)]
pub struct SumCheck {
    pub samples: usize,
    pub max_abs_error: f64,
}

pub fn measure_exp_sum(seed: u64) -> Result<SumCheck> {
    let mut rng = batch_rng(seed, 0);
    let mut worst: f64 = 0.0;
    let mut samples = 0;
    for m in [2usize, 3, 10] {
        for _ in 0..1000 {
            let snr12 = rng.random_range(0.1..20.0);
            let snr21 = rng.random_range(0.1..20.0);
            let spec = TwoWaySpec::new(m, snr12, snr21)?;
            let lambda: f64 = rng.random_range(0.01..0.99);
            let k1 = rng.random_range(0.0..1.0) / lambda;
            let k2 = rng.random_range(0.0..1.0) / lambda;
            let j1 = ((1.0 - lambda * k1) / (1.0 - lambda)).max(0.0);
            let j2 = ((1.0 - lambda * k2) / (1.0 - lambda)).max(0.0);
            let p = region_exp(&spec, lambda, k1, k2, j1, j2)?;
            let want = m as f64 / (m as f64 - 1.0) * (snr12 + snr21);
            worst = worst.max((p.e12 + p.e21 - want).abs());
            samples += 1;
        }
    }
    Ok(SumCheck { samples, max_abs_error: worst })
}

// ---------------------------------------------------------------------------
// 4. simplex simulation against exact probabilities

#[derive(Debug, Clone, Serialize)]
pub struct OracleCase {
    pub m: usize,
    pub es: f64,
    pub exact: f64,
    pub p_hat: f64,
    /// `|p_hat - exact|` in binomial standard errors of the exact value.
    pub z: f64,
}

pub fn measure_oracle(seed: u64) -> Result<Vec<OracleCase>> {
    let quad = QuadratureSpec::default();
    let mut out = Vec::new();
    for (m, n) in [(2usize, 9usize), (3, 9), (3, 16)] {
        let ch = ChannelSpec::unit_noise(n, 1.0, 1.0, PowerConstraint::As)?;
        let stats = engine::run(&SimplexNoFeedback::new(m, &ch)?, &McConfig::new(1_000_000, seed)?)?;
        let es = n as f64;
        let exact = exact_pe_simplex(m, es, 1.0, &quad)?;
        let se = (exact * (1.0 - exact) / stats.trials as f64).sqrt();
        out.push(OracleCase { m, es, exact, p_hat: stats.p_hat, z: (stats.p_hat - exact).abs() / se });
    }
    debug_assert!((out[0].exact - q_function(3.0)).abs() < 1e-15);
    Ok(out)
}

// ---------------------------------------------------------------------------
// 5. finite-n slopes

pub const SLOPE_GRID: [usize; 5] = [8, 12, 16, 20, 24];
pub const SLOPE_TRIALS: u64 = 10_000_000;

#[derive(Debug, Clone, Serialize)]
pub struct SlopeCheck {
    pub simplex_points: Vec<RatePoint>,
    pub simplex_slope: f64,
    pub simplex_slope_se: f64,
    /// The same regression on exact error probabilities.
    pub oracle_slope: f64,
    pub active_points: Vec<RatePoint>,
    pub active_slope: f64,
    pub active_slope_se: f64,
    pub active_target: f64,
}

pub fn measure_slopes(seed: u64, trials: u64) -> Result<SlopeCheck> {
    let mc = McConfig::new(trials, seed)?;
    let quad = QuadratureSpec::default();
    let mut simplex_points = Vec::new();
    let mut oracle_points = Vec::new();
    let mut active_points = Vec::new();
    for &n in &SLOPE_GRID {
        let ch = ChannelSpec::unit_noise(n, 2.0, 16.0, PowerConstraint::As)?;
        let s = engine::run(&SimplexNoFeedback::new(3, &ch)?, &mc)?;
        simplex_points.push(RatePoint::from(&s));
        let pe = exact_pe_simplex(3, 2.0 * n as f64, 1.0, &quad)?;
        oracle_points.push(RatePoint { n, p_hat: pe, ci_low: pe * 0.9, ci_high: pe / 0.9 });
        let a = engine::run(&ActiveAs::new(3, &ch, 0.8)?, &mc)?;
        active_points.push(RatePoint::from(&a));
    }
    let simplex = exponent_regression(&simplex_points)?;
    let oracle = exponent_regression(&oracle_points)?;
    let active = exponent_regression(&active_points)?;
    Ok(SlopeCheck {
        simplex_points,
        simplex_slope: simplex.slope,
        simplex_slope_se: simplex.slope_se,
        oracle_slope: oracle.slope,
        active_points,
        active_slope: active.slope,
        active_slope_se: active.slope_se,
        active_target: exp_active_as(&OneWaySpec::new(3, 2.0, 16.0)?, 0.8)?,
    })
}

// ---------------------------------------------------------------------------
// 6. bound dominance

#[derive(Debug, Clone, Serialize)]
pub struct BoundCase {
    pub scheme: &'static str,
    pub point: String,
    pub event: &'static str,
    pub bound: f64,
    pub freq: f64,
    pub ci_high: f64,
}

impl BoundCase {
    /// How far the bound sits above `freq - k * (ci_high - freq)`.
    pub fn slack(&self, k: f64) -> f64 {
        self.bound - (self.freq - k * (self.ci_high - self.freq))
    }
}

fn bound_cases(scheme: &'static str, point: String, req: &BoundRequest, stats: &ErrorStats, out: &mut Vec<BoundCase>) {
    let b = analytic_event_bounds(req);
    let events = [
        (b.stage1, ErrorEvent::Stage1),
        (b.feedback_miscoord, ErrorEvent::FeedbackMiscoord),
        (b.retransmission, ErrorEvent::Retransmission),
        (b.ack_path, ErrorEvent::AckPath),
        (b.nack_path, ErrorEvent::NackPath),
    ];
    for (bound, ev) in events {
        if let Some(bound) = bound {
            let (freq, _, hi) = stats.event_rate(ev);
            out.push(BoundCase { scheme, point: point.clone(), event: ev.tag(), bound, freq, ci_high: hi });
        }
    }
    if let Some(bound) = b.nack {
        let (freq, _, hi) = engine::wilson(stats.nack_trials, stats.trials, stats.confidence);
        out.push(BoundCase { scheme, point, event: "nack", bound, freq, ci_high: hi });
    }
}

pub const BOUND_TRIALS: u64 = 100_000;

pub fn measure_bounds(seed: u64) -> Result<Vec<BoundCase>> {
    let mc = McConfig::new(BOUND_TRIALS, seed)?;
    let mut out = Vec::new();

    for m in [2usize, 3, 5] {
        for (n, snr) in [(5usize, 0.5), (8, 0.5), (8, 1.0), (12, 1.0)] {
            let ch = ChannelSpec::unit_noise(n, snr, 1.0, PowerConstraint::As)?;
            let sch = SimplexNoFeedback::new(m, &ch)?;
            let st = engine::run(&sch, &mc)?;
            bound_cases("no-feedback", format!("m={m} n={n} snr={snr}"), &sch.bound_request(), &st, &mut out);
        }
    }
    for (m, n) in [(3usize, 5usize), (3, 8), (4, 9), (4, 12)] {
        for s in [0.2, 0.5, 0.8] {
            let ch = ChannelSpec::unit_noise(n, 1.0, 1.0, PowerConstraint::As)?;
            let sch = ActiveAs::new(m, &ch, s)?;
            let st = engine::run(&sch, &mc)?;
            bound_cases("active-as", format!("m={m} n={n} s={s}"), &sch.bound_request(), &st, &mut out);
        }
    }
    for n in [8usize, 12, 16, 20] {
        for t in [0.2, 0.5, 0.8] {
            let ch = ChannelSpec::unit_noise(n, 1.0, 1.0, PowerConstraint::Exp)?;
            let cfg = ExpSchemeConfig { t, eta: 0.5, lambda: 0.5, threshold: None };
            let sch = ExpBuildingBlock::new(3, &ch, &cfg)?;
            let st = engine::run(&sch, &mc)?;
            bound_cases("exp-bb", format!("n={n} t={t}"), &sch.bound_request(), &st, &mut out);
        }
    }
    for n in [18usize, 21, 24, 30] {
        for lambda in [0.45, 0.5, 0.55] {
            let ch = ChannelSpec::unit_noise(n, 1.0, 1.0, PowerConstraint::Exp)?;
            let cfg = ExpSchemeConfig { t: 0.5, eta: 0.1, lambda, threshold: None };
            let sch = ExpScheme::new(3, &ch, &cfg)?;
            let st = engine::run(&sch, &mc)?;
            bound_cases("exp", format!("n={n} lambda={lambda}"), &sch.bound_request(), &st, &mut out);
        }
    }
    let spec = TwoWaySpec::new(3, 1.0, 4.0)?;
    for n in [5usize, 8] {
        for lambda in [0.3, 0.6] {
            for s in [0.2, 0.5, 0.8] {
                let sch = TwoWayActiveAs::new(&spec, n, lambda, s)?;
                let st = engine::run_streams(&sch, &mc)?;
                let reqs = sch.bound_requests();
                let point = format!("n={n} lambda={lambda} s={s}");
                bound_cases("twoway-as/w1", point.clone(), &reqs[0], &st[0], &mut out);
                bound_cases("twoway-as/w2", point, &reqs[1], &st[1], &mut out);
            }
        }
    }
    let spec = TwoWaySpec::new(3, 1.0, 1.0)?;
    for n in [18usize, 24] {
        for lambda in [0.45, 0.5, 0.55] {
            for k1 in [1.0, 1.2] {
                let j1 = (1.0 - lambda * k1) / (1.0 - lambda);
                let split = PhaseSplit { lambda, k1, k2: 1.0, j1, j2: 1.0 };
                let cfg = ExpSchemeConfig { t: 0.5, eta: 0.1, lambda, threshold: None };
                let sch = TwoWayExp::new(&spec, n, &split, &cfg)?;
                let st = engine::run_streams(&sch, &mc)?;
                let reqs = sch.bound_requests();
                let point = format!("n={n} lambda={lambda} k1={k1}");
                bound_cases("twoway-exp/w1", point.clone(), &reqs[0], &st[0], &mut out);
                bound_cases("twoway-exp/w2", point, &reqs[1], &st[1], &mut out);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// 7. power audits

#[derive(Debug, Clone, Serialize)]
pub struct AuditCase {
    pub scheme: &'static str,
    pub constraint: PowerConstraint,
    /// `nP` of the audited terminal.
    pub budget: f64,
    pub max_energy: f64,
    pub mean_energy: f64,
    pub mean_se: f64,
    pub nack_trials: u64,
    pub max_nack_energy: f64,
}

pub const AUDIT_TRIALS: u64 = 1_000_000;

fn audit<S: Scheme>(
    scheme: &'static str,
    sch: &S,
    budgets: &[f64],
    constraint: PowerConstraint,
    mc: &McConfig,
    out: &mut Vec<AuditCase>,
) -> Result<()> {
    let stats = engine::run_streams(sch, mc)?;
    for (st, &budget) in stats.iter().zip(budgets) {
        let a = &st.energy_audit;
        out.push(AuditCase {
            scheme,
            constraint,
            budget,
            max_energy: a.max_fwd,
            mean_energy: a.mean_fwd,
            mean_se: a.se_fwd,
            nack_trials: st.nack_trials,
            max_nack_energy: a.max_fwd_nack,
        });
    }
    Ok(())
}

pub fn measure_power(seed: u64) -> Result<Vec<AuditCase>> {
    use PowerConstraint::{As, Exp};
    let mc = McConfig::new(AUDIT_TRIALS, seed)?;
    let mut out = Vec::new();
    let ch = ChannelSpec::unit_noise(12, 2.0, 16.0, As)?;
    audit("no-feedback", &SimplexNoFeedback::new(3, &ch)?, &[24.0], As, &mc, &mut out)?;
    audit("active-as", &ActiveAs::new(3, &ch, 0.8)?, &[24.0], As, &mc, &mut out)?;
    let spec = TwoWaySpec::new(3, 2.0, 16.0)?;
    audit("twoway-as", &TwoWayActiveAs::new(&spec, 12, 0.5, 0.5)?, &[24.0, 192.0], As, &mc, &mut out)?;

    // p_hat ~ 1e-3 at t = 0.3, so NACK retransmissions carry ~2P/1e-3
    let ch = ChannelSpec::unit_noise(20, 2.0, 2.0, Exp)?;
    let cfg = ExpSchemeConfig { t: 0.3, eta: 0.5, lambda: 0.5, threshold: None };
    audit("exp-bb", &ExpBuildingBlock::new(3, &ch, &cfg)?, &[40.0], Exp, &mc, &mut out)?;
    let ch = ChannelSpec::unit_noise(24, 2.0, 2.0, Exp)?;
    let cfg = ExpSchemeConfig { t: 0.3, eta: 0.1, lambda: 0.5, threshold: None };
    audit("exp", &ExpScheme::new(3, &ch, &cfg)?, &[48.0], Exp, &mc, &mut out)?;
    let spec = TwoWaySpec::new(3, 2.0, 2.0)?;
    let split = PhaseSplit { lambda: 0.5, k1: 1.0, k2: 1.0, j1: 1.0, j2: 1.0 };
    audit("twoway-exp", &TwoWayExp::new(&spec, 24, &split, &cfg)?, &[48.0, 48.0], Exp, &mc, &mut out)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// 8. message counts

#[derive(Debug, Clone, Serialize)]
pub struct TableCase {
    pub n: usize,
    pub scheme: MessageScheme,
    pub got: usize,
    pub want: usize,
}

pub fn measure_table() -> Result<Vec<TableCase>> {
    let rows = [
        (5, MessageScheme::AsActive, 3),
        (9, MessageScheme::Exp, 3),
        (99, MessageScheme::AsPassiveTwoway, 50),
        (100, MessageScheme::AsPassiveOneway, 100),
    ];
    rows.iter()
        .map(|&(n, scheme, want)| Ok(TableCase { n, scheme, got: max_messages(n, scheme)?, want }))
        .collect()
}

// ---------------------------------------------------------------------------
// 9. geometry

#[derive(Debug, Clone, Default, Serialize)]
pub struct GeometryCheck {
    pub codes: usize,
    /// Largest relative deviation of any norm, distance or centroid
    /// coordinate (centroid against the codeword norm).
    pub max_code_error: f64,
    pub points: usize,
    /// Protection-region points outside their Voronoi cell.
    pub nesting_violations: usize,
    /// Protection regions that shrank when `s` grew.
    pub s_monotone_violations: usize,
    /// ACK regions that grew when `t` grew.
    pub t_monotone_violations: usize,
}

pub fn measure_geometry(seed: u64) -> Result<GeometryCheck> {
    let mut rng = batch_rng(seed, 0);
    let mut out = GeometryCheck::default();
    let s_grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let t_grid = [0.0, 0.2, 0.5, 0.8, 0.95];
    for m in 2..=12usize {
        for energy in [0.5, 1.0, 4.0] {
            let code = build_simplex(m, energy, m - 1)?;
            out.codes += 1;
            let d = pairwise_distance(&code);
            let mut centroid = vec![0.0; m - 1];
            for i in 0..m {
                out.max_code_error = out.max_code_error.max((code.codeword_energy(i) - energy).abs() / energy);
                for (c, v) in centroid.iter_mut().zip(code.codeword(i)) {
                    *c += v / m as f64;
                }
                for j in i + 1..m {
                    let dij: f64 =
                        code.codeword(i).iter().zip(code.codeword(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    out.max_code_error = out.max_code_error.max((dij - d).abs() / d);
                }
            }
            for c in centroid {
                out.max_code_error = out.max_code_error.max(c.abs() / energy.sqrt());
            }

            let prot: Vec<ProtectionGeometry> =
                s_grid.iter().map(|&s| ProtectionGeometry::new(&code, s)).collect::<Result<_>>()?;
            let acks: Vec<NackGeometry> =
                t_grid.iter().map(|&t| NackGeometry::new(&code, t)).collect::<Result<_>>()?;
            let mut y = vec![0.0; m - 1];
            for _ in 0..200 {
                let w = rng.random_range(0..m);
                let spread = rng.random_range(0.1..1.5) * energy.sqrt();
                for (yi, xi) in y.iter_mut().zip(code.codeword(w)) {
                    *yi = xi + spread * rng.sample::<f64, _>(rand_distr::StandardNormal);
                }
                out.points += 1;
                let nearest = min_distance_decode(&code, &y);
                let mut prev_in = false;
                for g in &prot {
                    let hit = protection_region(&code, &y, g);
                    if let Some(i) = hit {
                        if i != nearest {
                            out.nesting_violations += 1;
                        }
                    }
                    if prev_in && hit.is_none() {
                        out.s_monotone_violations += 1;
                    }
                    prev_in = hit.is_some();
                }
                let mut prev_ack = true;
                for a in &acks {
                    let hit = ack_region(&code, &y, a);
                    if let AckDecision::Ack(i) = hit {
                        if i != nearest {
                            out.nesting_violations += 1;
                        }
                        if !prev_ack {
                            out.t_monotone_violations += 1;
                        }
                    }
                    prev_ack = matches!(hit, AckDecision::Ack(_));
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// judging

#[derive(Debug, Clone, Serialize)]
pub struct CriterionReport {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidateOptions {
    pub seed: u64,
    pub slope_trials: u64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self { seed: 20240601, slope_trials: SLOPE_TRIALS }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

/// Runs criterion `id` and judges it.
pub fn judge(id: u8, opts: &ValidateOptions, tol: &Tolerances) -> Result<CriterionReport> {
    let start = Instant::now();
    let name = CRITERIA
        .iter()
        .find(|c| c.0 == id)
        .map(|c| c.1)
        .ok_or_else(|| crate::error::invalid("criterion", format!("no criterion {id}")))?;
    let (passed, detail) = match id {
        1 => {
            let r = measure_exponents()?;
            let ok = (r.active_max - 0.8).abs() <= tol.get(tol.exponent_abs)
                && (r.passive_max - 0.754924).abs() <= tol.get(tol.passive_abs)
                && (r.passive_at_s - passive_optimum_s()).abs() <= tol.get(tol.passive_s_abs)
                && r.no_feedback == 0.75;
            (
                ok,
                format!(
                    "active {:.9} at s={:.3e}, passive {:.9} at s={:.9}, no-feedback {}",
                    r.active_max, r.active_at_s, r.passive_max, r.passive_at_s, r.no_feedback
                ),
            )
        }
        2 => {
            let r = measure_corners()?;
            let t = tol.get(tol.corner_abs);
            let ok = r.passive_corner <= t && r.active_knee <= t && r.active_endpoint <= t;
            (
                ok,
                format!(
                    "distances: passive (0.75,3) {:.2e}, active (0.8,5.2) {:.2e}, active (0,6) {:.2e}",
                    r.passive_corner, r.active_knee, r.active_endpoint
                ),
            )
        }
        3 => {
            let r = measure_exp_sum(opts.seed)?;
            (r.max_abs_error <= tol.get(tol.sum_abs), format!("{} samples, max |error| {:.2e}", r.samples, r.max_abs_error))
        }
        4 => {
            let r = measure_oracle(opts.seed)?;
            let ok = r.iter().all(|c| c.z <= tol.get(tol.oracle_se));
            let d: Vec<String> = r
                .iter()
                .map(|c| format!("m={} es={}: {:.4e} vs {:.4e} ({:.2} SE)", c.m, c.es, c.p_hat, c.exact, c.z))
                .collect();
            (ok, d.join("; "))
        }
        5 => {
            let r = measure_slopes(opts.seed, opts.slope_trials)?;
            let ok = rel(r.simplex_slope, 0.75) <= tol.get(tol.slope_simplex_rel)
                && rel(r.simplex_slope, r.oracle_slope) <= tol.get(tol.slope_simplex_rel)
                && rel(r.active_slope, r.active_target) <= tol.get(tol.slope_active_rel);
            (
                ok,
                format!(
                    "simplex {:.4} +- {:.4} (oracle {:.4}, target 0.75); active {:.4} +- {:.4} (target {:.4})",
                    r.simplex_slope, r.simplex_slope_se, r.oracle_slope, r.active_slope, r.active_slope_se, r.active_target
                ),
            )
        }
        6 => {
            let r = measure_bounds(opts.seed)?;
            let k = tol.get(tol.bound_ci_widths);
            let bad: Vec<&BoundCase> = r.iter().filter(|c| c.slack(k) < 0.0).collect();
            let detail = match bad.first() {
                None => format!("{} (point, event) pairs dominated", r.len()),
                Some(c) => format!(
                    "{} of {} violated, e.g. {} {} {}: bound {:.3e} < freq {:.3e}",
                    bad.len(),
                    r.len(),
                    c.scheme,
                    c.point,
                    c.event,
                    c.bound,
                    c.freq
                ),
            };
            (bad.is_empty(), detail)
        }
        7 => {
            let r = measure_power(opts.seed)?;
            let k = tol.get(tol.audit_se);
            let mut ok = true;
            let mut parts = Vec::new();
            let mut big_nack = false;
            for c in &r {
                let fine = match c.constraint {
                    PowerConstraint::As => c.max_energy <= c.budget,
                    PowerConstraint::Exp => c.mean_energy <= c.budget + k * c.mean_se,
                };
                ok &= fine;
                if c.constraint == PowerConstraint::Exp && c.max_nack_energy > 10.0 * c.budget {
                    big_nack = true;
                }
                parts.push(match c.constraint {
                    PowerConstraint::As => format!("{} max {:.6}/{}", c.scheme, c.max_energy, c.budget),
                    PowerConstraint::Exp => format!(
                        "{} mean {:.3}/{} nack-max {:.1}",
                        c.scheme, c.mean_energy, c.budget, c.max_nack_energy
                    ),
                });
            }
            (ok && big_nack, parts.join("; "))
        }
        8 => {
            let r = measure_table()?;
            let ok = r.iter().all(|c| c.got == c.want);
            let d: Vec<String> = r.iter().map(|c| format!("n={} {:?}: {}", c.n, c.scheme, c.got)).collect();
            (ok, d.join(", "))
        }
        9 => {
            let r = measure_geometry(opts.seed)?;
            let ok = r.max_code_error <= tol.get(tol.geometry_abs)
                && r.nesting_violations == 0
                && r.s_monotone_violations == 0
                && r.t_monotone_violations == 0;
            (
                ok,
                format!(
                    "{} codes (max error {:.1e}), {} points, violations: nesting {}, s {}, t {}",
                    r.codes, r.max_code_error, r.points, r.nesting_violations, r.s_monotone_violations, r.t_monotone_violations
                ),
            )
        }
        _ => unreachable!(),
    };
    Ok(CriterionReport { id, name, passed, detail, seconds: start.elapsed().as_secs_f64() })
}

impl std::fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] {} {}: {} ({:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}
