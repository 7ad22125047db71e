use crate::manifest::{Format, Manifest};
use anyhow::{bail, Context, Result};
use expforge::analytic::{self, OneWaySpec, RegionScheme, TwoWaySpec};
use expforge::engine::{self, exponent_regression, ErrorStats, McConfig, RatePoint, SlopeFit};
use expforge::oracle::{analytic_event_bounds, BoundRequest, EventBounds};
use expforge::schemes::*;
use expforge::validate::{self, CriterionReport, Tolerances, ValidateOptions};
use serde::Serialize;
use serde_json::{json, Value};

pub const SCHEMA_VERSION: &str = "1";

/// A finished command: the JSON payload, and CSV rows when the command has a
/// tabular form.
pub struct Output {
    pub json: Value,
    pub csv: Option<Vec<u8>>,
    pub default_format: Format,
}

fn csv_of<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner()?)
}

fn envelope(command: &str) -> serde_json::Map<String, Value> {
    let ts = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut m = serde_json::Map::new();
    m.insert("schema_version".into(), json!(SCHEMA_VERSION));
    // the only field allowed to differ between identical runs
    m.insert("timestamp".into(), json!(ts));
    m.insert("command".into(), json!(command));
    m
}

// exponent

#[derive(Debug, Serialize)]
struct ExponentRow {
    scheme: String,
    m: usize,
    snr_fwd: f64,
    snr_fb: f64,
    s: Option<f64>,
    exponent: f64,
}

pub const EXPONENT_SCHEMES: [&str; 5] = ["no-feedback", "perfect-feedback", "passive-as", "active-as", "exp"];

pub fn exponent(man: &Manifest) -> Result<Output> {
    let scheme = man.require_one_of(&EXPONENT_SCHEMES)?;
    let (fwd, fb) = man.one_way_snrs()?;
    let spec = OneWaySpec::new(man.m()?, fwd, fb)?;
    // a given s is evaluated as is; otherwise s is optimized over [0, 1]
    let over_s = |f: &dyn Fn(f64) -> f64| -> Result<(Option<f64>, f64)> {
        match man.params.s {
            Some(s) => {
                if !(0.0..=1.0).contains(&s) {
                    bail!("invalid parameter `s`: must lie in [0, 1], got {s}");
                }
                Ok((Some(s), f(s)))
            }
            None => {
                let (s, v) = analytic::maximize_on(f, 0.0, 1.0);
                Ok((Some(s), v))
            }
        }
    };
    let (s, e) = match scheme.as_str() {
        "no-feedback" => (None, analytic::exp_no_feedback(spec.m, spec.snr_fwd)),
        "perfect-feedback" => (None, analytic::exp_perfect_feedback(spec.snr_fwd)),
        "passive-as" => over_s(&|s| analytic::exp_passive_as(&spec, s))?,
        "active-as" => {
            analytic::exp_active_as(&spec, 0.0)?;
            over_s(&|s| analytic::exp_active_as(&spec, s).unwrap_or(0.0))?
        }
        _ => (None, analytic::exp_exp_active(&spec)),
    };
    let row = ExponentRow { scheme, m: spec.m, snr_fwd: fwd, snr_fb: fb, s, exponent: e };
    let mut j = envelope("exponent");
    j.insert("result".into(), serde_json::to_value(&row)?);
    Ok(Output { csv: Some(csv_of(&[&row])?), json: j.into(), default_format: Format::Json })
}

// region

/// One frontier point; the column order is the CSV contract.
#[derive(Debug, Serialize)]
pub struct RegionRow {
    scheme: &'static str,
    m: usize,
    snr12: f64,
    snr21: f64,
    lambda: Option<f64>,
    s: Option<f64>,
    k1: Option<f64>,
    k2: Option<f64>,
    j1: Option<f64>,
    j2: Option<f64>,
    e12: f64,
    e21: f64,
}

pub fn region(man: &Manifest) -> Result<Output> {
    let scheme: RegionScheme = man.scheme()?.parse()?;
    let (a, b) = man.two_way_snrs()?;
    let spec = TwoWaySpec::new(man.m()?, a, b)?;
    let grid = man.params.grid.unwrap_or(analytic::DEFAULT_GRID);
    let rows: Vec<RegionRow> = analytic::sweep_pareto(scheme, &spec, grid)?
        .into_iter()
        .map(|p| RegionRow {
            scheme: scheme.name(),
            m: spec.m,
            snr12: a,
            snr21: b,
            lambda: p.params.lambda,
            s: p.params.s,
            k1: p.params.k1,
            k2: p.params.k2,
            j1: p.params.j1,
            j2: p.params.j2,
            e12: p.e12,
            e21: p.e21,
        })
        .collect();
    let mut j = envelope("region");
    j.insert("scheme".into(), json!(scheme.name()));
    j.insert("grid".into(), json!(grid));
    j.insert("frontier".into(), serde_json::to_value(&rows)?);
    Ok(Output { csv: Some(csv_of(&rows)?), json: j.into(), default_format: Format::Csv })
}

// simulate / sweep

pub const SIM_SCHEMES: [&str; 6] = ["no-feedback", "active-as", "exp-bb", "exp", "twoway-active-as", "twoway-exp"];

const DEFAULT_S: f64 = 0.5;
const DEFAULT_T: f64 = 0.5;
const DEFAULT_ETA: f64 = 0.1;
const DEFAULT_LAMBDA: f64 = 0.5;

#[derive(Debug, Serialize)]
struct StreamReport {
    stream: &'static str,
    analytic_exponent: Option<f64>,
    bounds: EventBounds,
    stats: ErrorStats,
}

#[derive(Debug, Serialize)]
struct SimRow<'a> {
    scheme: &'a str,
    stream: &'static str,
    m: usize,
    n: usize,
    trials: u64,
    errors: u64,
    p_hat: f64,
    ci_low: f64,
    ci_high: f64,
    emp_exponent: Option<f64>,
    analytic_exponent: Option<f64>,
}

impl StreamReport {
    fn row<'a>(&self, scheme: &'a str, m: usize) -> SimRow<'a> {
        let s = &self.stats;
        SimRow {
            scheme,
            stream: self.stream,
            m,
            n: s.n,
            trials: s.trials,
            errors: s.errors,
            p_hat: s.p_hat,
            ci_low: s.ci_low,
            ci_high: s.ci_high,
            emp_exponent: s.emp_exponent,
            analytic_exponent: self.analytic_exponent,
        }
    }
}

fn one(stream: &'static str, stats: ErrorStats, req: &BoundRequest, e: Option<f64>) -> StreamReport {
    StreamReport { stream, analytic_exponent: e, bounds: analytic_event_bounds(req), stats }
}

fn exp_config(man: &Manifest) -> ExpSchemeConfig {
    let p = &man.params;
    ExpSchemeConfig {
        t: p.t.unwrap_or(DEFAULT_T),
        eta: p.eta.unwrap_or(DEFAULT_ETA),
        lambda: p.lambda.unwrap_or(DEFAULT_LAMBDA),
        threshold: p.threshold,
    }
}

/// Runs `scheme` at block length `n`; the parameters it used are echoed back.
fn simulate_at(man: &Manifest, scheme: &str, n: usize, mc: &McConfig) -> Result<(Value, Vec<StreamReport>)> {
    let m = man.m()?;
    let p = &man.params;
    let s = p.s.unwrap_or(DEFAULT_S);
    match scheme {
        "no-feedback" | "active-as" | "exp-bb" | "exp" => {
            let (fwd, fb) = man.one_way_snrs()?;
            let spec = OneWaySpec::new(m, fwd, fb)?;
            let as_ch = || ChannelSpec::unit_noise(n, fwd, fb, PowerConstraint::As);
            let exp_ch = || ChannelSpec::unit_noise(n, fwd, fb, PowerConstraint::Exp);
            let cfg = exp_config(man);
            Ok(match scheme {
                "no-feedback" => {
                    let sch = SimplexNoFeedback::new(m, &as_ch()?)?;
                    let e = analytic::exp_no_feedback(m, fwd);
                    (json!({}), vec![one("W", engine::run(&sch, mc)?, &sch.bound_request(), Some(e))])
                }
                "active-as" => {
                    let sch = ActiveAs::new(m, &as_ch()?, s)?;
                    let e = analytic::exp_active_as(&spec, s)?;
                    let echo = json!({ "s": s, "lambda1": sch.lambda1() });
                    (echo, vec![one("W", engine::run(&sch, mc)?, &sch.bound_request(), Some(e))])
                }
                "exp-bb" => {
                    let sch = ExpBuildingBlock::new(m, &exp_ch()?, &cfg)?;
                    (json!(cfg), vec![one("W", engine::run(&sch, mc)?, &sch.bound_request(), None)])
                }
                _ => {
                    let sch = ExpScheme::new(m, &exp_ch()?, &cfg)?;
                    let e = analytic::exp_exp_active(&spec);
                    (json!(cfg), vec![one("W", engine::run(&sch, mc)?, &sch.bound_request(), Some(e))])
                }
            })
        }
        "twoway-active-as" | "twoway-exp" => {
            let (a, b) = man.two_way_snrs()?;
            let spec = TwoWaySpec::new(m, a, b)?;
            let lambda = p.lambda.unwrap_or(DEFAULT_LAMBDA);
            let (echo, stats, reqs, point) = if scheme == "twoway-active-as" {
                let sch = TwoWayActiveAs::new(&spec, n, lambda, s)?;
                let stats = engine::run_streams(&sch, mc)?;
                let point = analytic::region_active_as(&spec, lambda, s).ok();
                (json!({ "lambda": lambda, "s": s }), stats, sch.bound_requests(), point)
            } else {
                // default split: both terminals spend P_i in each phase
                let split = PhaseSplit {
                    lambda,
                    k1: p.k1.unwrap_or(1.0),
                    k2: p.k2.unwrap_or(1.0),
                    j1: p.j1.unwrap_or(1.0),
                    j2: p.j2.unwrap_or(1.0),
                };
                let cfg = ExpSchemeConfig { lambda, ..exp_config(man) };
                let sch = TwoWayExp::new(&spec, n, &split, &cfg)?;
                let stats = engine::run_streams(&sch, mc)?;
                let point = analytic::region_exp(&spec, lambda, split.k1, split.k2, split.j1, split.j2).ok();
                (json!({ "split": split, "config": cfg }), stats, sch.bound_requests(), point)
            };
            let mut it = stats.into_iter();
            let (w1, w2) = (it.next().context("missing W1 stream")?, it.next().context("missing W2 stream")?);
            Ok((
                echo,
                vec![
                    one("W1", w1, &reqs[0], point.map(|p| p.e12)),
                    one("W2", w2, &reqs[1], point.map(|p| p.e21)),
                ],
            ))
        }
        "passive-as" => bail!("scheme `passive-as` is analytic only; use `exponent` or `region`"),
        other => bail!("unknown scheme `{other}`; expected one of: {}", SIM_SCHEMES.join(", ")),
    }
}

fn spec_echo(man: &Manifest) -> Value {
    let sp = &man.spec;
    json!({ "m": sp.m, "snr_fwd": sp.snr_fwd, "snr_fb": sp.snr_fb, "snr12": sp.snr12, "snr21": sp.snr21 })
}

pub fn simulate(man: &Manifest, seed: Option<u64>) -> Result<Output> {
    let scheme = man.scheme()?.to_string();
    let mc = man.mc(seed)?;
    let n = man.n()?;
    let (echo, streams) = simulate_at(man, &scheme, n, &mc)?;
    let m = man.m()?;
    let rows: Vec<SimRow> = streams.iter().map(|s| s.row(&scheme, m)).collect();
    let mut j = envelope("simulate");
    j.insert("scheme".into(), json!(scheme));
    j.insert("spec".into(), spec_echo(man));
    j.insert("n".into(), json!(n));
    j.insert("params".into(), echo);
    j.insert("mc".into(), serde_json::to_value(mc)?);
    j.insert("streams".into(), serde_json::to_value(&streams)?);
    Ok(Output { csv: Some(csv_of(&rows)?), json: j.into(), default_format: Format::Json })
}

#[derive(Debug, Serialize)]
struct FitReport {
    stream: &'static str,
    fit: Option<SlopeFit>,
    error: Option<String>,
}

pub fn sweep(man: &Manifest, seed: Option<u64>) -> Result<Output> {
    let scheme = man.scheme()?.to_string();
    let ns = man.params.ns.clone().context("no block lengths given (use --ns 8,12,16)")?;
    if ns.is_empty() {
        bail!("invalid parameter `ns`: empty list");
    }
    let mc = man.mc(seed)?;
    let m = man.m()?;
    let mut all: Vec<StreamReport> = Vec::new();
    let mut echo = Value::Null;
    for &n in &ns {
        let (e, reports) = simulate_at(man, &scheme, n, &mc)?;
        echo = e;
        all.extend(reports);
    }
    // every n yields the same streams in the same order
    let labels: Vec<&'static str> = all[..all.len() / ns.len()].iter().map(|r| r.stream).collect();
    let fits: Vec<FitReport> = labels
        .iter()
        .map(|&label| {
            let pts: Vec<RatePoint> = all.iter().filter(|r| r.stream == label).map(|r| RatePoint::from(&r.stats)).collect();
            match exponent_regression(&pts) {
                Ok(f) => FitReport { stream: label, fit: Some(f), error: None },
                Err(e) => FitReport { stream: label, fit: None, error: Some(e.to_string()) },
            }
        })
        .collect();
    let rows: Vec<SimRow> = all.iter().map(|s| s.row(&scheme, m)).collect();
    let mut j = envelope("sweep");
    j.insert("scheme".into(), json!(scheme));
    j.insert("spec".into(), spec_echo(man));
    j.insert("ns".into(), json!(ns));
    j.insert("params".into(), echo);
    j.insert("mc".into(), serde_json::to_value(mc)?);
    j.insert("points".into(), serde_json::to_value(&rows)?);
    j.insert("fits".into(), serde_json::to_value(&fits)?);
    Ok(Output { csv: Some(csv_of(&rows)?), json: j.into(), default_format: Format::Json })
}

// validate

/// `EXPFORGE_TOL_SCALE` multiplies every tolerance. A value that cannot be
/// used is itself a validation failure.
pub fn tolerances() -> std::result::Result<Tolerances, String> {
    match std::env::var("EXPFORGE_TOL_SCALE") {
        Err(_) => Ok(Tolerances::default()),
        Ok(v) => {
            let scale: f64 = v.trim().parse().map_err(|_| format!("EXPFORGE_TOL_SCALE is not a number: `{v}`"))?;
            Tolerances::scaled(scale).map_err(|e| format!("EXPFORGE_TOL_SCALE: {e}"))
        }
    }
}

pub fn criteria(man: &Manifest) -> Result<Vec<u8>> {
    match &man.params.only {
        None => Ok(validate::CRITERIA.iter().map(|c| c.0).collect()),
        Some(keys) => keys
            .iter()
            .map(|k| {
                validate::criterion_id(k).with_context(|| {
                    let names: Vec<&str> = validate::CRITERIA.iter().map(|c| c.1).collect();
                    format!("unknown criterion `{k}`; expected 1-9 or one of: {}", names.join(", "))
                })
            })
            .collect(),
    }
}

pub fn validate_opts(man: &Manifest, seed: Option<u64>) -> Result<ValidateOptions> {
    let mut opts = ValidateOptions::default();
    if let Some(s) = man.seed_opt(seed)? {
        opts.seed = s;
    }
    if let Some(t) = man.mc.as_ref().and_then(|m| m.trials) {
        if t == 0 {
            bail!("invalid parameter `trials`: must be positive");
        }
        opts.slope_trials = t;
    }
    Ok(opts)
}

#[derive(Debug, Serialize)]
struct CriterionRow<'a> {
    id: u8,
    name: &'a str,
    passed: bool,
    detail: &'a str,
    seconds: f64,
}

pub fn validate_output(reports: &[CriterionReport], tol: &Tolerances, opts: &ValidateOptions) -> Result<Output> {
    let rows: Vec<CriterionRow> = reports
        .iter()
        .map(|r| CriterionRow { id: r.id, name: r.name, passed: r.passed, detail: &r.detail, seconds: r.seconds })
        .collect();
    let mut j = envelope("validate");
    j.insert("passed".into(), json!(reports.iter().all(|r| r.passed)));
    j.insert("options".into(), serde_json::to_value(opts)?);
    j.insert("tolerances".into(), serde_json::to_value(tol)?);
    j.insert("criteria".into(), serde_json::to_value(&rows)?);
    Ok(Output { csv: Some(csv_of(&rows)?), json: j.into(), default_format: Format::Json })
}
