//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Measurements come from `expforge::validate`; every limit below is pinned
//! here so a change to the library defaults cannot quietly loosen them.

use expforge::validate::{self, passive_optimum_s, ValidateOptions};
use std::process::ExitCode;
use std::time::Instant;

const SEED: u64 = 20240601;

// 1
const EXPONENT_ABS: f64 = 1e-6;
const PASSIVE_ABS: f64 = 1e-5;
const PASSIVE_S_ABS: f64 = 1e-6;
// 2
const CORNER_ABS: f64 = 1e-3;
// 3
const SUM_ABS: f64 = 1e-12;
// 4
const ORACLE_SE: f64 = 3.0;
// 5
const SLOPE_TRIALS: u64 = 10_000_000;
const SLOPE_SIMPLEX_REL: f64 = 0.25;
const SLOPE_ACTIVE_REL: f64 = 0.30;
// 6
const BOUND_CI_WIDTHS: f64 = 3.0;
// 7
const AUDIT_SE: f64 = 3.0;
const NACK_ENERGY_FACTOR: f64 = 10.0;
// 9
const GEOMETRY_REL: f64 = 1e-12;

type Outcome = Result<(bool, String), expforge::Error>;

fn c1() -> Outcome {
    let r = validate::measure_exponents()?;
    let ok = (r.active_max - 0.8).abs() <= EXPONENT_ABS
        && (r.passive_max - 0.754924).abs() <= PASSIVE_ABS
        && (r.passive_at_s - passive_optimum_s()).abs() <= PASSIVE_S_ABS
        && r.no_feedback == 0.75;
    Ok((
        ok,
        format!(
            "active max {:.9} at s={:.2e}; passive max {:.9} at s={:.9}; no feedback {}",
            r.active_max, r.active_at_s, r.passive_max, r.passive_at_s, r.no_feedback
        ),
    ))
}

fn c2() -> Outcome {
    let r = validate::measure_corners()?;
    let ok = r.passive_corner <= CORNER_ABS && r.active_knee <= CORNER_ABS && r.active_endpoint <= CORNER_ABS;
    Ok((
        ok,
        format!(
            "passive (0.75,3.0) off by {:.1e}; active (0.8,5.2) off by {:.1e}; active (0,6) off by {:.1e}",
            r.passive_corner, r.active_knee, r.active_endpoint
        ),
    ))
}

fn c3() -> Outcome {
    let r = validate::measure_exp_sum(SEED)?;
    Ok((r.max_abs_error <= SUM_ABS, format!("{} saturated splits, max |error| {:.1e}", r.samples, r.max_abs_error)))
}

fn c4() -> Outcome {
    let r = validate::measure_oracle(SEED)?;
    let ok = r.iter().all(|c| c.z <= ORACLE_SE);
    let parts: Vec<String> = r
        .iter()
        .map(|c| format!("m={} E/s2={}: {:.4e} vs {:.4e} ({:.2} SE)", c.m, c.es, c.p_hat, c.exact, c.z))
        .collect();
    Ok((ok, parts.join("; ")))
}

fn c5() -> Outcome {
    let r = validate::measure_slopes(SEED, SLOPE_TRIALS)?;
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    let ok = rel(r.simplex_slope, 0.75) <= SLOPE_SIMPLEX_REL
        && rel(r.simplex_slope, r.oracle_slope) <= SLOPE_SIMPLEX_REL
        && rel(r.active_slope, r.active_target) <= SLOPE_ACTIVE_REL;
    let used = |pts: &[expforge::engine::RatePoint]| pts.iter().filter(|p| p.ci_low > 0.0).count();
    Ok((
        ok,
        format!(
            "simplex slope {:.4} ({} pts, oracle {:.4}, target 0.75); active-as slope {:.4} ({} pts, target {:.4})",
            r.simplex_slope,
            used(&r.simplex_points),
            r.oracle_slope,
            r.active_slope,
            used(&r.active_points),
            r.active_target
        ),
    ))
}

fn c6() -> Outcome {
    let r = validate::measure_bounds(SEED)?;
    let bad: Vec<_> = r.iter().filter(|c| c.slack(BOUND_CI_WIDTHS) < 0.0).collect();
    let tightest = r
        .iter()
        .filter(|c| c.freq > 0.0)
        .map(|c| c.freq / c.bound)
        .fold(0.0, f64::max);
    let detail = match bad.first() {
        None => format!("{} (point, event) pairs dominated; largest freq/bound {:.3}", r.len(), tightest),
        Some(c) => format!(
            "{}/{} violated, first {} [{}] {}: bound {:.3e} freq {:.3e}",
            bad.len(),
            r.len(),
            c.scheme,
            c.point,
            c.event,
            c.bound,
            c.freq
        ),
    };
    Ok((bad.is_empty(), detail))
}

fn c7() -> Outcome {
    use expforge::schemes::PowerConstraint;
    let r = validate::measure_power(SEED)?;
    let mut ok = true;
    let mut big = false;
    let mut parts = Vec::new();
    for c in &r {
        match c.constraint {
            PowerConstraint::As => {
                ok &= c.max_energy <= c.budget;
                parts.push(format!("{} max {}/{}", c.scheme, c.max_energy, c.budget));
            }
            PowerConstraint::Exp => {
                ok &= c.mean_energy <= c.budget + AUDIT_SE * c.mean_se;
                big |= c.max_nack_energy > NACK_ENERGY_FACTOR * c.budget;
                parts.push(format!(
                    "{} mean {:.3}/{} ({} NACKs, peak {:.0})",
                    c.scheme, c.mean_energy, c.budget, c.nack_trials, c.max_nack_energy
                ));
            }
        }
    }
    Ok((ok && big, parts.join("; ")))
}

fn c8() -> Outcome {
    let r = validate::measure_table()?;
    let parts: Vec<String> = r.iter().map(|c| format!("n={} {:?} -> {}", c.n, c.scheme, c.got)).collect();
    Ok((r.iter().all(|c| c.got == c.want), parts.join(", ")))
}

fn c9() -> Outcome {
    let r = validate::measure_geometry(SEED)?;
    let ok = r.max_code_error <= GEOMETRY_REL
        && r.nesting_violations == 0
        && r.s_monotone_violations == 0
        && r.t_monotone_violations == 0;
    Ok((
        ok,
        format!(
            "{} codes, max rel error {:.1e}; {} points, nesting/s/t violations {}/{}/{}",
            r.codes, r.max_code_error, r.points, r.nesting_violations, r.s_monotone_violations, r.t_monotone_violations
        ),
    ))
}

fn main() -> ExitCode {
    // the default options must agree with what this harness pins
    assert_eq!(ValidateOptions::default().slope_trials, SLOPE_TRIALS);
    let checks: [(&str, fn() -> Outcome); 9] = [
        ("analytic exponents", c1),
        ("region corner points", c2),
        ("EXP sum law", c3),
        ("simulation vs exact oracle", c4),
        ("finite-n exponent slopes", c5),
        ("bound dominance", c6),
        ("power audits", c7),
        ("message-count table", c8),
        ("geometry properties", c9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in checks.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = match f() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += !ok as usize;
        println!(
            "criterion {} {}: {} | {} [{:.1}s]",
            i + 1,
            name,
            if ok { "PASS" } else { "FAIL" },
            detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        println!("acceptance: all 9 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
