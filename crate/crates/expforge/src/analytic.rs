//! Closed-form exponents, two-way achievable regions, and Pareto sweeps.
//!
//! SNRs are dimensionless (`P / sigma^2`). `g(s) = s^2 - 2s + 4` shows up in
//! every AS formula; `C = m(m-1)/2` is the number of unordered message pairs.

use crate::error::{invalid, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneWaySpec {
    pub m: usize,
    pub snr_fwd: f64,
    pub snr_fb: f64,
}

impl OneWaySpec {
    pub fn new(m: usize, snr_fwd: f64, snr_fb: f64) -> Result<Self> {
        if m < 2 {
            return Err(invalid("m", "need at least 2 messages"));
        }
        if !(snr_fwd > 0.0) {
            return Err(invalid("snr_fwd", format!("must be positive, got {snr_fwd}")));
        }
        if !(snr_fb >= 0.0) {
            return Err(invalid("snr_fb", format!("must be >= 0, got {snr_fb}")));
        }
        Ok(Self { m, snr_fwd, snr_fb })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoWaySpec {
    pub m: usize,
    pub snr12: f64,
    pub snr21: f64,
}

impl TwoWaySpec {
    pub fn new(m: usize, snr12: f64, snr21: f64) -> Result<Self> {
        if m < 2 {
            return Err(invalid("m", "need at least 2 messages"));
        }
        if !(snr12 > 0.0) {
            return Err(invalid("snr12", format!("must be positive, got {snr12}")));
        }
        if !(snr21 > 0.0) {
            return Err(invalid("snr21", format!("must be positive, got {snr21}")));
        }
        Ok(Self { m, snr12, snr21 })
    }
}

/// Parameters that produced a region point. Unused entries are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionParams {
    pub lambda: Option<f64>,
    pub s: Option<f64>,
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub j1: Option<f64>,
    pub j2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionPoint {
    pub e12: f64,
    pub e21: f64,
    pub params: RegionParams,
}

fn g(s: f64) -> f64 {
    s * s - 2.0 * s + 4.0
}

fn pairs(m: usize) -> f64 {
    let m = m as f64;
    m * (m - 1.0) / 2.0
}

fn ratio(m: usize) -> f64 {
    m as f64 / (m as f64 - 1.0)
}

/// `snr m / (4(m-1))`: the simplex code without feedback.
pub fn exp_no_feedback(m: usize, snr: f64) -> f64 {
    snr * ratio(m) / 4.0
}

/// `snr / 2`: the perfect-feedback reference line.
pub fn exp_perfect_feedback(snr: f64) -> f64 {
    snr / 2.0
}

/// The stage-one term shared by both AS feedback exponents:
/// `m (snr/2) g / (m g + 3(m-2))`.
pub fn as_transmission_term(m: usize, snr: f64, s: f64) -> f64 {
    let mf = m as f64;
    mf * (snr / 2.0) * g(s) / (mf * g(s) + 3.0 * (mf - 2.0))
}

fn passive_feedback_term(m: usize, snr_fb: f64, s: f64) -> f64 {
    let mf = m as f64;
    snr_fb * (3.0 * mf * s * s / 8.0) / (mf * g(s) + 3.0 * (mf - 2.0))
}

fn active_feedback_term(m: usize, snr_fb: f64) -> f64 {
    let c = pairs(m);
    snr_fb * c / (4.0 * (c - 1.0))
}

/// Passive (uncoded) feedback under the AS constraint.
pub fn exp_passive_as(spec: &OneWaySpec, s: f64) -> f64 {
    as_transmission_term(spec.m, spec.snr_fwd, s).min(passive_feedback_term(spec.m, spec.snr_fb, s))
}

/// Feedback SNR needed before passive feedback beats no feedback:
/// `snr_fwd (s^2 - 2s + 5) / s^2`.
pub fn min_fb_snr_passive(snr_fwd: f64, s: f64) -> f64 {
    snr_fwd * (s * s - 2.0 * s + 5.0) / (s * s)
}

/// Active (pair-coded) feedback under the AS constraint.
pub fn exp_active_as(spec: &OneWaySpec, s: f64) -> Result<f64> {
    if spec.m < 3 {
        return Err(invalid("m", "active feedback needs at least 3 messages"));
    }
    Ok(as_transmission_term(spec.m, spec.snr_fwd, s).min(active_feedback_term(spec.m, spec.snr_fb)))
}

/// Stage-one energy fraction that balances the transmission and
/// retransmission exponents: `6(m-1) / (m g + 3(m-2))`.
pub fn optimal_lambda1(m: usize, s: f64) -> f64 {
    let mf = m as f64;
    6.0 * (mf - 1.0) / (mf * g(s) + 3.0 * (mf - 2.0))
}

/// Expected-power constraint with active feedback:
/// `(m/(m-1)) (snr_fwd + snr_fb)`.
pub fn exp_exp_active(spec: &OneWaySpec) -> f64 {
    ratio(spec.m) * (spec.snr_fwd + spec.snr_fb)
}

/// Golden-section search for the maximum of a unimodal function on `[a, b]`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Maximizes `f` on `[a, b]`: a coarse grid locates the peak, golden-section
/// refines it, and the endpoints are checked too.
pub fn maximize_on(f: impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let k = 200;
    let mut best = (a, f(a));
    for i in 1..=k {
        let x = a + (b - a) * i as f64 / k as f64;
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    let h = (b - a) / k as f64;
    let (x, v) = golden_max(&f, (best.0 - h).max(a), (best.0 + h).min(b), 1e-12);
    if v > best.1 {
        (x, v)
    } else {
        best
    }
}

/// Both directions ignore each other.
pub fn region_noninteractive(spec: &TwoWaySpec) -> RegionPoint {
    RegionPoint {
        e12: exp_no_feedback(spec.m, spec.snr12),
        e21: exp_no_feedback(spec.m, spec.snr21),
        params: RegionParams::default(),
    }
}

fn require_asymmetric(spec: &TwoWaySpec) -> Result<()> {
    if spec.snr12 >= spec.snr21 {
        return Err(invalid(
            "snr12",
            format!("interactive AS regions need snr12 < snr21, got {} >= {}", spec.snr12, spec.snr21),
        ));
    }
    Ok(())
}

fn check_unit(name: &'static str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(invalid(name, format!("must lie in [0, 1], got {v}")));
    }
    Ok(())
}

fn passive_e12(spec: &TwoWaySpec, lambda: f64, s: f64) -> f64 {
    as_transmission_term(spec.m, spec.snr12, s)
        .min(passive_feedback_term(spec.m, spec.snr21 * (1.0 - lambda), s))
}

/// Terminal 2 spends a fraction `lambda` of its power on its own message and
/// the rest on passive feedback for terminal 1.
pub fn region_passive_as(spec: &TwoWaySpec, lambda: f64, s: f64) -> Result<RegionPoint> {
    require_asymmetric(spec)?;
    check_unit("lambda", lambda)?;
    check_unit("s", s)?;
    Ok(RegionPoint {
        e12: passive_e12(spec, lambda, s),
        e21: lambda * exp_no_feedback(spec.m, spec.snr21),
        params: RegionParams {
            lambda: Some(lambda),
            s: Some(s),
            ..Default::default()
        },
    })
}

/// Best `s` for the passive region at a given `lambda`.
///
/// For three messages the two terms of `E12` cross at
/// `s = (a - sqrt(3ab(1-lambda) - 3a^2)) / (a - (3/4) b (1-lambda))` with
/// `a = snr12`, `b = snr21`. When that root is not real or not inside `(0, 1]`
/// (or `m != 3`), `E12` is maximized numerically instead.
pub fn passive_best_s(spec: &TwoWaySpec, lambda: f64) -> f64 {
    if spec.m == 3 {
        let a = spec.snr12;
        let b = spec.snr21 * (1.0 - lambda);
        let disc = 3.0 * a * b - 3.0 * a * a;
        let den = a - 0.75 * b;
        if disc >= 0.0 && den != 0.0 {
            let s = (a - disc.sqrt()) / den;
            if s > 0.0 && s <= 1.0 {
                return s;
            }
        }
    }
    let (s, _) = golden_max(|s| passive_e12(spec, lambda, s), 1e-9, 1.0, 1e-9);
    s
}

/// Terminal 2 spends `lambda` of its power on its own message and the rest on
/// pair-coded feedback for terminal 1.
pub fn region_active_as(spec: &TwoWaySpec, lambda: f64, s: f64) -> Result<RegionPoint> {
    require_asymmetric(spec)?;
    if spec.m < 3 {
        return Err(invalid("m", "active feedback needs at least 3 messages"));
    }
    check_unit("lambda", lambda)?;
    check_unit("s", s)?;
    let e12 = as_transmission_term(spec.m, spec.snr12, s)
        .min(active_feedback_term(spec.m, spec.snr21 * (1.0 - lambda)));
    Ok(RegionPoint {
        e12,
        e21: lambda * exp_no_feedback(spec.m, spec.snr21),
        params: RegionParams {
            lambda: Some(lambda),
            s: Some(s),
            ..Default::default()
        },
    })
}

/// The straight part of the active region's boundary:
/// `E21 = snr21 m/(4(m-1)) - (m/(m-1)) ((C-1)/C) E12`, valid for
/// `E12 <= snr12 2m/(7m-6)`.
pub fn active_as_boundary_line(spec: &TwoWaySpec, e12: f64) -> f64 {
    let c = pairs(spec.m);
    exp_no_feedback(spec.m, spec.snr21) - ratio(spec.m) * ((c - 1.0) / c) * e12
}

/// Largest `E12` covered by [`active_as_boundary_line`].
pub fn active_as_line_end(spec: &TwoWaySpec) -> f64 {
    let mf = spec.m as f64;
    spec.snr12 * 2.0 * mf / (7.0 * mf - 6.0)
}

/// Expected-power region with phase powers `k_i P_i` (transmission) and
/// `j_i P_i` (feedback).
pub fn region_exp(spec: &TwoWaySpec, lambda: f64, k1: f64, k2: f64, j1: f64, j2: f64) -> Result<RegionPoint> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(invalid("lambda", format!("must lie in (0, 1), got {lambda}")));
    }
    for (name, v) in [("k1", k1), ("k2", k2), ("j1", j1), ("j2", j2)] {
        if !(v >= 0.0) {
            return Err(invalid(name, format!("must be >= 0, got {v}")));
        }
    }
    const SLACK: f64 = 1e-12;
    if lambda * k1 + (1.0 - lambda) * j1 > 1.0 + SLACK {
        return Err(invalid("k1", "power budget lambda k1 + (1 - lambda) j1 exceeds 1"));
    }
    if lambda * k2 + (1.0 - lambda) * j2 > 1.0 + SLACK {
        return Err(invalid("k2", "power budget lambda k2 + (1 - lambda) j2 exceeds 1"));
    }
    let r = ratio(spec.m);
    Ok(RegionPoint {
        e12: r * (lambda * k1 * spec.snr12 + (1.0 - lambda) * j2 * spec.snr21),
        e21: r * (lambda * k2 * spec.snr21 + (1.0 - lambda) * j1 * spec.snr12),
        params: RegionParams {
            lambda: Some(lambda),
            s: None,
            k1: Some(k1),
            k2: Some(k2),
            j1: Some(j1),
            j2: Some(j2),
        },
    })
}

/// Largest `M` each scheme can host in `n` channel uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageScheme {
    AsPassiveOneway,
    AsActive,
    AsPassiveTwoway,
    Exp,
}

impl std::str::FromStr for MessageScheme {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as-passive-oneway" => Ok(Self::AsPassiveOneway),
            "as-active" => Ok(Self::AsActive),
            "as-passive-twoway" => Ok(Self::AsPassiveTwoway),
            "exp" => Ok(Self::Exp),
            other => Err(invalid("scheme", format!("unknown scheme `{other}`"))),
        }
    }
}

pub fn max_messages(n: usize, scheme: MessageScheme) -> Result<usize> {
    if n < 5 {
        return Err(invalid("n", format!("need at least 5 channel uses, got {n}")));
    }
    Ok(match scheme {
        // (M - 1) + (C(M,2) - 1) + 1 <= n, i.e. M^2 + M <= 2n + 2
        MessageScheme::AsActive => {
            let mut m = 2;
            while (m + 1) * (m + 2) <= 2 * n + 2 {
                m += 1;
            }
            m
        }
        MessageScheme::AsPassiveOneway => n,
        MessageScheme::AsPassiveTwoway => (n + 1) / 2,
        // (M - 1) + (M - 1) + M <= n
        MessageScheme::Exp => (n + 2) / 3,
    })
}

/// Region families that [`sweep_pareto`] knows how to enumerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionScheme {
    NonInteractive,
    PassiveAs,
    ActiveAs,
    Exp,
}

impl RegionScheme {
    pub fn name(self) -> &'static str {
        match self {
            Self::NonInteractive => "non-interactive",
            Self::PassiveAs => "passive-as",
            Self::ActiveAs => "active-as",
            Self::Exp => "exp",
        }
    }
}

impl std::str::FromStr for RegionScheme {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "non-interactive" => Ok(Self::NonInteractive),
            "passive-as" => Ok(Self::PassiveAs),
            "active-as" => Ok(Self::ActiveAs),
            "exp" => Ok(Self::Exp),
            other => Err(invalid("scheme", format!("unknown region scheme `{other}`"))),
        }
    }
}

pub const DEFAULT_GRID: usize = 201;

/// Enumerates a region over a parameter grid and keeps its Pareto frontier,
/// sorted by ascending `e12`.
///
/// - AS families sweep `lambda` over `grid` points of `[0, 1]`, plus the
///   `lambda` where the feedback term stops binding, and use the best `s` at
///   each `lambda`. When `snr12 >= snr21` they reduce to the non-interactive
///   point.
/// - The EXP family saturates both power budgets and sweeps `lambda` and the
///   share `theta` of the transmission power given to terminal 1
///   (`k1 = theta/lambda`, `k2 = (1-theta)/lambda`).
pub fn sweep_pareto(scheme: RegionScheme, spec: &TwoWaySpec, grid: usize) -> Result<Vec<RegionPoint>> {
    if grid < 2 {
        return Err(invalid("grid", format!("need at least 2 points, got {grid}")));
    }
    let interactive_as = matches!(scheme, RegionScheme::PassiveAs | RegionScheme::ActiveAs);
    if scheme == RegionScheme::NonInteractive || (interactive_as && spec.snr12 >= spec.snr21) {
        return Ok(vec![region_noninteractive(spec)]);
    }
    let unit = |i: usize| i as f64 / (grid - 1) as f64;
    let mut pts = Vec::new();
    match scheme {
        RegionScheme::PassiveAs => {
            let mut lambdas: Vec<f64> = (0..grid).map(unit).collect();
            // the corner where the feedback term meets the feedback-free value
            let corner = 1.0 - 4.0 * spec.snr12 / spec.snr21;
            if spec.m == 3 && corner > 0.0 && corner < 1.0 {
                lambdas.push(corner);
            }
            for lambda in lambdas {
                let s = passive_best_s(spec, lambda);
                pts.push(region_passive_as(spec, lambda, s)?);
            }
        }
        RegionScheme::ActiveAs => {
            let mut lambdas: Vec<f64> = (0..grid).map(unit).collect();
            let top = as_transmission_term(spec.m, spec.snr12, 0.0);
            let knee = 1.0 - top / active_feedback_term(spec.m, spec.snr21);
            if knee > 0.0 && knee < 1.0 {
                lambdas.push(knee);
            }
            for lambda in lambdas {
                // the feedback term does not depend on s, so the transmission
                // term decides: it is largest at s = 0
                pts.push(region_active_as(spec, lambda, 0.0)?);
            }
        }
        RegionScheme::Exp => {
            for i in 1..grid {
                let lambda = i as f64 / grid as f64;
                for k in 0..grid {
                    let theta = unit(k);
                    let k1 = theta / lambda;
                    let k2 = (1.0 - theta) / lambda;
                    let j1 = (1.0 - lambda * k1) / (1.0 - lambda);
                    let j2 = (1.0 - lambda * k2) / (1.0 - lambda);
                    pts.push(region_exp(spec, lambda, k1, k2, j1.max(0.0), j2.max(0.0))?);
                }
            }
        }
        RegionScheme::NonInteractive => unreachable!(),
    }
    Ok(pareto_frontier(pts))
}

/// Strict-dominance frontier with a `1e-12` tolerance; near-duplicates keep
/// the first occurrence. Output is sorted by `e12` ascending, so `e21` is
/// non-increasing along it.
pub fn pareto_frontier(mut pts: Vec<RegionPoint>) -> Vec<RegionPoint> {
    const TOL: f64 = 1e-12;
    // stable sort: e21 descending within ties of e12 keeps the best first
    pts.sort_by(|a, b| {
        b.e12
            .partial_cmp(&a.e12)
            .unwrap()
            .then(b.e21.partial_cmp(&a.e21).unwrap())
    });
    let mut front: Vec<RegionPoint> = Vec::new();
    let mut best_e21 = f64::NEG_INFINITY;
    for p in pts {
        // walking e12 downwards, a point survives only if it beats every
        // point with larger e12 on e21
        if p.e21 > best_e21 + TOL {
            if let Some(last) = front.last() {
                if (last.e12 - p.e12).abs() <= TOL && (last.e21 - p.e21).abs() <= TOL {
                    continue;
                }
            }
            best_e21 = p.e21;
            front.push(p);
        }
    }
    front.reverse();
    front
}
