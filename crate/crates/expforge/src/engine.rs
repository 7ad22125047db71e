//! Batched Monte Carlo with reproducible seeding and Wilson intervals.
//!
//! Batch `k` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `k`, so
//! its randomness depends only on `(seed, k)`. Batch tallies are gathered in
//! batch order and folded sequentially, which keeps every floating-point sum
//! identical no matter how many workers ran the batches.

use crate::error::{invalid, Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::BTreeMap;

pub const DEFAULT_BATCH: u64 = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub trials: u64,
    pub seed: u64,
    pub batch_size: u64,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    /// Worker threads; 0 uses the global pool, 1 runs inline.
    #[serde(default)]
    pub workers: usize,
}

fn default_confidence() -> f64 {
    0.99
}

impl McConfig {
    /// `batch_size` defaults to `min(trials, DEFAULT_BATCH)`.
    pub fn new(trials: u64, seed: u64) -> Result<Self> {
        let cfg = Self {
            trials,
            seed,
            batch_size: trials.clamp(1, DEFAULT_BATCH),
            confidence: default_confidence(),
            workers: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_batch_size(mut self, batch_size: u64) -> Result<Self> {
        self.batch_size = batch_size;
        self.validate()?;
        Ok(self)
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_confidence(mut self, confidence: f64) -> Result<Self> {
        self.confidence = confidence;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials", "must be positive"));
        }
        if self.batch_size == 0 || self.batch_size > self.trials {
            return Err(invalid(
                "batch_size",
                format!("must lie in [1, trials = {}], got {}", self.trials, self.batch_size),
            ));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(invalid("confidence", format!("must lie in (0, 1), got {}", self.confidence)));
        }
        Ok(())
    }

    fn batches(&self) -> u64 {
        self.trials.div_ceil(self.batch_size)
    }
}

/// The RNG a batch draws from.
pub fn batch_rng(seed: u64, batch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorEvent {
    None,
    Stage1,
    FeedbackMiscoord,
    Retransmission,
    AckPath,
    NackPath,
}

impl ErrorEvent {
    pub const ALL: [ErrorEvent; 6] = [
        ErrorEvent::None,
        ErrorEvent::Stage1,
        ErrorEvent::FeedbackMiscoord,
        ErrorEvent::Retransmission,
        ErrorEvent::AckPath,
        ErrorEvent::NackPath,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ErrorEvent::None => "none",
            ErrorEvent::Stage1 => "stage1",
            ErrorEvent::FeedbackMiscoord => "feedback-miscoord",
            ErrorEvent::Retransmission => "retransmission",
            ErrorEvent::AckPath => "ack-path",
            ErrorEvent::NackPath => "nack-path",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// One protocol run as seen by one decoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub true_msg: usize,
    pub decoded_msg: usize,
    pub error_event: ErrorEvent,
    /// Energy spent by the terminal that owns the message.
    pub energy_fwd: f64,
    /// Energy spent by the other terminal.
    pub energy_fb: f64,
    /// The receiver committed without waiting for feedback.
    pub immediate: bool,
    /// A NACK was raised somewhere in the protocol.
    pub nack: bool,
}

impl Default for TrialOutcome {
    fn default() -> Self {
        Self {
            true_msg: 0,
            decoded_msg: 0,
            error_event: ErrorEvent::None,
            energy_fwd: 0.0,
            energy_fb: 0.0,
            immediate: false,
            nack: false,
        }
    }
}

/// A simulatable protocol. `STREAMS` is the number of messages decoded per
/// trial (two for the two-way schemes).
pub trait Scheme: Sync {
    type Scratch: Send;
    const STREAMS: usize;

    /// Channel uses per trial.
    fn block_length(&self) -> usize;
    fn scratch(&self) -> Self::Scratch;
    /// Runs one trial and writes one outcome per stream.
    fn trial(&self, rng: &mut ChaCha8Rng, scratch: &mut Self::Scratch, out: &mut [TrialOutcome]);
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Tally {
    trials: u64,
    errors: u64,
    events: [u64; 6],
    immediate: u64,
    nack: u64,
    sum_fwd: f64,
    sumsq_fwd: f64,
    max_fwd: f64,
    sum_fb: f64,
    sumsq_fb: f64,
    max_fb: f64,
    max_fwd_nack: f64,
}

impl Tally {
    fn add(&mut self, o: &TrialOutcome) {
        self.trials += 1;
        if o.decoded_msg != o.true_msg {
            self.errors += 1;
            debug_assert!(o.error_event != ErrorEvent::None);
            self.events[o.error_event.slot()] += 1;
        }
        self.immediate += o.immediate as u64;
        self.nack += o.nack as u64;
        self.sum_fwd += o.energy_fwd;
        self.sumsq_fwd += o.energy_fwd * o.energy_fwd;
        self.max_fwd = self.max_fwd.max(o.energy_fwd);
        self.sum_fb += o.energy_fb;
        self.sumsq_fb += o.energy_fb * o.energy_fb;
        self.max_fb = self.max_fb.max(o.energy_fb);
        if o.nack {
            self.max_fwd_nack = self.max_fwd_nack.max(o.energy_fwd);
        }
    }

    fn merge(&mut self, b: &Tally) {
        self.trials += b.trials;
        self.errors += b.errors;
        for (a, b) in self.events.iter_mut().zip(b.events) {
            *a += b;
        }
        self.immediate += b.immediate;
        self.nack += b.nack;
        self.sum_fwd += b.sum_fwd;
        self.sumsq_fwd += b.sumsq_fwd;
        self.max_fwd = self.max_fwd.max(b.max_fwd);
        self.sum_fb += b.sum_fb;
        self.sumsq_fb += b.sumsq_fb;
        self.max_fb = self.max_fb.max(b.max_fb);
        self.max_fwd_nack = self.max_fwd_nack.max(b.max_fwd_nack);
    }
}

/// Realized energies of the two terminals involved in a stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyAudit {
    pub max_fwd: f64,
    pub mean_fwd: f64,
    /// Standard error of `mean_fwd`.
    pub se_fwd: f64,
    pub max_fb: f64,
    pub mean_fb: f64,
    pub se_fb: f64,
    /// Largest forward energy among trials that raised a NACK (0 if none).
    pub max_fwd_nack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub trials: u64,
    pub errors: u64,
    pub event_counts: BTreeMap<ErrorEvent, u64>,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence: f64,
    pub n: usize,
    /// `-ln(p_hat)/n`; absent when no error was seen.
    pub emp_exponent: Option<f64>,
    pub energy_audit: EnergyAudit,
    pub immediate_decodes: u64,
    pub nack_trials: u64,
}

impl ErrorStats {
    fn from_tally(t: &Tally, n: usize, confidence: f64) -> Self {
        let mut event_counts = BTreeMap::new();
        for ev in ErrorEvent::ALL {
            let c = t.events[ev.slot()];
            if c > 0 {
                event_counts.insert(ev, c);
            }
        }
        let (p_hat, ci_low, ci_high) = wilson(t.errors, t.trials, confidence);
        let emp_exponent = (t.errors > 0).then(|| if p_hat >= 1.0 { 0.0 } else { -p_hat.ln() / n as f64 });
        let nt = t.trials as f64;
        let se = |sum: f64, sumsq: f64| {
            let mean = sum / nt;
            let var = (sumsq / nt - mean * mean).max(0.0) * nt / (nt - 1.0).max(1.0);
            (mean, (var / nt).sqrt())
        };
        let (mean_fwd, se_fwd) = se(t.sum_fwd, t.sumsq_fwd);
        let (mean_fb, se_fb) = se(t.sum_fb, t.sumsq_fb);
        Self {
            trials: t.trials,
            errors: t.errors,
            event_counts,
            p_hat,
            ci_low,
            ci_high,
            confidence,
            n,
            emp_exponent,
            energy_audit: EnergyAudit {
                max_fwd: t.max_fwd,
                mean_fwd,
                se_fwd,
                max_fb: t.max_fb,
                mean_fb,
                se_fb,
                max_fwd_nack: t.max_fwd_nack,
            },
            immediate_decodes: t.immediate,
            nack_trials: t.nack,
        }
    }

    pub fn event_count(&self, ev: ErrorEvent) -> u64 {
        self.event_counts.get(&ev).copied().unwrap_or(0)
    }

    /// Fraction of trials that ended in `ev`, with its Wilson interval.
    pub fn event_rate(&self, ev: ErrorEvent) -> (f64, f64, f64) {
        wilson(self.event_count(ev), self.trials, self.confidence)
    }

    pub fn immediate_fraction(&self) -> f64 {
        self.immediate_decodes as f64 / self.trials as f64
    }

    pub fn nack_fraction(&self) -> f64 {
        self.nack_trials as f64 / self.trials as f64
    }
}

/// Two-sided normal quantile for a central interval of mass `confidence`.
pub fn z_value(confidence: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + confidence / 2.0)
}

/// Returns `(p_hat, low, high)`. With no successes the lower end is 0.
pub fn wilson(successes: u64, trials: u64, confidence: f64) -> (f64, f64, f64) {
    if trials == 0 {
        return (0.0, 0.0, 1.0);
    }
    let nt = trials as f64;
    let p = successes as f64 / nt;
    let z = z_value(confidence);
    let z2 = z * z;
    let denom = 1.0 + z2 / nt;
    let centre = (p + z2 / (2.0 * nt)) / denom;
    let half = z / denom * (p * (1.0 - p) / nt + z2 / (4.0 * nt * nt)).sqrt();
    let low = if successes == 0 { 0.0 } else { (centre - half).clamp(0.0, p) };
    let high = if successes == trials { 1.0 } else { (centre + half).clamp(p, 1.0) };
    (p, low, high)
}

/// Runs a single-stream scheme.
pub fn run<S: Scheme>(scheme: &S, mc: &McConfig) -> Result<ErrorStats> {
    Ok(run_streams(scheme, mc)?.swap_remove(0))
}

/// Runs a scheme and returns one [`ErrorStats`] per stream.
pub fn run_streams<S: Scheme>(scheme: &S, mc: &McConfig) -> Result<Vec<ErrorStats>> {
    mc.validate()?;
    let batch = |k: u64| -> Vec<Tally> {
        let mut rng = batch_rng(mc.seed, k);
        let mut scratch = scheme.scratch();
        let mut out = vec![TrialOutcome::default(); S::STREAMS];
        let mut tallies = vec![Tally::default(); S::STREAMS];
        let count = mc.batch_size.min(mc.trials - k * mc.batch_size);
        for _ in 0..count {
            scheme.trial(&mut rng, &mut scratch, &mut out);
            for (t, o) in tallies.iter_mut().zip(&out) {
                t.add(o);
            }
        }
        tallies
    };
    let per_batch: Vec<Vec<Tally>> = match mc.workers {
        1 => (0..mc.batches()).map(batch).collect(),
        0 => (0..mc.batches()).into_par_iter().map(batch).collect(),
        w => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| invalid("workers", e.to_string()))?
            .install(|| (0..mc.batches()).into_par_iter().map(batch).collect()),
    };
    let mut total = vec![Tally::default(); S::STREAMS];
    for b in &per_batch {
        for (t, x) in total.iter_mut().zip(b) {
            t.merge(x);
        }
    }
    Ok(total
        .iter()
        .map(|t| ErrorStats::from_tally(t, scheme.block_length(), mc.confidence))
        .collect())
}

/// One measured point for [`exponent_regression`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl From<&ErrorStats> for RatePoint {
    fn from(s: &ErrorStats) -> Self {
        Self {
            n: s.n,
            p_hat: s.p_hat,
            ci_low: s.ci_low,
            ci_high: s.ci_high,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
    pub points_used: usize,
}

/// Weighted least squares of `-ln p_hat` on `n`, with an intercept.
///
/// Points with `p_hat = 0` or `ci_low = 0` are skipped. Each point is
/// weighted by `1 / ln(ci_high/ci_low)^2`, the inverse squared width of its
/// interval on the log scale. The standard error is scaled by the weighted
/// residual variance.
pub fn exponent_regression(points: &[RatePoint]) -> Result<SlopeFit> {
    let usable: Vec<(f64, f64, f64)> = points
        .iter()
        .filter(|p| p.p_hat > 0.0 && p.ci_low > 0.0)
        .map(|p| {
            let width = (p.ci_high / p.ci_low).ln().max(1e-12);
            (p.n as f64, -p.p_hat.ln(), 1.0 / (width * width))
        })
        .collect();
    if usable.len() < 3 {
        return Err(Error::TooFewPoints(usable.len()));
    }
    let sw: f64 = usable.iter().map(|p| p.2).sum();
    let xbar = usable.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let ybar = usable.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = usable.iter().map(|p| p.2 * (p.0 - xbar).powi(2)).sum();
    let sxy: f64 = usable.iter().map(|p| p.2 * (p.0 - xbar) * (p.1 - ybar)).sum();
    if sxx <= 0.0 {
        return Err(invalid("points", "all usable points share the same n"));
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let rss: f64 = usable
        .iter()
        .map(|p| p.2 * (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let s2 = rss / (usable.len() - 2) as f64;
    Ok(SlopeFit {
        slope,
        slope_se: (s2 / sxx).sqrt(),
        intercept,
        points_used: usable.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    struct Coin(f64);

    impl Scheme for Coin {
        type Scratch = ();
        const STREAMS: usize = 1;
        fn block_length(&self) -> usize {
            10
        }
        fn scratch(&self) {}
        fn trial(&self, rng: &mut ChaCha8Rng, _: &mut (), out: &mut [TrialOutcome]) {
            let err = rng.random::<f64>() < self.0;
            out[0] = TrialOutcome {
                decoded_msg: err as usize,
                error_event: if err { ErrorEvent::Stage1 } else { ErrorEvent::None },
                energy_fwd: rng.random::<f64>(),
                ..Default::default()
            };
        }
    }

    #[test]
    fn always_wrong_has_zero_exponent() {
        let s = run(&Coin(2.0), &McConfig::new(1000, 3).unwrap()).unwrap();
        assert_eq!(s.errors, 1000);
        assert_eq!(s.p_hat, 1.0);
        assert_eq!(s.emp_exponent, Some(0.0));
        assert_eq!(s.ci_high, 1.0);
    }

    #[test]
    fn never_wrong_reports_upper_bound_only() {
        let s = run(&Coin(0.0), &McConfig::new(10_000, 3).unwrap()).unwrap();
        assert_eq!(s.errors, 0);
        assert_eq!(s.emp_exponent, None);
        assert_eq!(s.ci_low, 0.0);
        // z^2 / (N + z^2) with z = 2.5758
        assert!((s.ci_high - 6.63e-4).abs() < 5e-6, "{}", s.ci_high);
        assert!(s.event_counts.is_empty());
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let base = McConfig::new(50_000, 11).unwrap().with_batch_size(1000).unwrap();
        let a = run(&Coin(0.3), &base.with_workers(1)).unwrap();
        let b = run(&Coin(0.3), &base.with_workers(3)).unwrap();
        let c = run(&Coin(0.3), &base.with_workers(0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a.energy_audit.mean_fwd.to_bits(), b.energy_audit.mean_fwd.to_bits());
    }

    #[test]
    fn batch_streams_are_pure_functions_of_seed_and_index() {
        let x: u64 = batch_rng(5, 7).random();
        let _: u64 = batch_rng(5, 6).random();
        assert_eq!(x, batch_rng(5, 7).random::<u64>());
        assert_ne!(x, batch_rng(5, 8).random::<u64>());
    }

    #[test]
    fn merge_order_does_not_matter_for_counts() {
        let mut rng = batch_rng(1, 0);
        let parts: Vec<Tally> = (0..5)
            .map(|_| {
                let mut t = Tally::default();
                for _ in 0..100 {
                    let e = rng.random::<f64>() < 0.2;
                    t.add(&TrialOutcome {
                        decoded_msg: e as usize,
                        error_event: if e { ErrorEvent::Retransmission } else { ErrorEvent::None },
                        energy_fwd: 1.0,
                        ..Default::default()
                    });
                }
                t
            })
            .collect();
        let mut fwd = Tally::default();
        parts.iter().for_each(|p| fwd.merge(p));
        let mut rev = Tally::default();
        parts.iter().rev().for_each(|p| rev.merge(p));
        assert_eq!(fwd, rev);
    }

    #[test]
    fn wilson_covers_truth() {
        let mut rng = batch_rng(2024, 0);
        for &p in &[0.01, 0.2, 0.5] {
            let mut covered = 0;
            for _ in 0..1000 {
                let k = (0..500).filter(|_| rng.random::<f64>() < p).count() as u64;
                let (_, lo, hi) = wilson(k, 500, 0.99);
                covered += (lo <= p && p <= hi) as usize;
            }
            // nominal 990; binomial slack
            assert!(covered >= 975, "p = {p}: {covered}");
        }
    }

    #[test]
    fn regression_recovers_exact_slopes() {
        let pts = |c: f64| -> Vec<RatePoint> {
            (0..6)
                .map(|k| {
                    let n = 8 + 4 * k;
                    let p = c * (-0.75 * n as f64).exp();
                    RatePoint { n, p_hat: p, ci_low: p * 0.8, ci_high: p * 1.25 }
                })
                .collect()
        };
        let fit = exponent_regression(&pts(1.0)).unwrap();
        assert!((fit.slope - 0.75).abs() < 1e-9);
        let fit = exponent_regression(&pts(5.0)).unwrap();
        assert!((fit.slope - 0.75).abs() < 1e-9);
        assert!((fit.intercept + 5f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn regression_on_binary_simplex_tail() {
        // antipodal pair at snr 1: exponent snr m / (4(m-1)) = 0.5
        let pts: Vec<RatePoint> = (8..=28)
            .step_by(4)
            .map(|n| {
                let p = crate::oracle::q_function((n as f64).sqrt());
                RatePoint { n, p_hat: p, ci_low: p * 0.9, ci_high: p * 1.1 }
            })
            .collect();
        let fit = exponent_regression(&pts).unwrap();
        assert!((fit.slope - 0.5).abs() < 0.05, "{}", fit.slope);
    }

    #[test]
    fn regression_needs_three_usable_points() {
        let p = |n, p_hat: f64| RatePoint { n, p_hat, ci_low: p_hat / 2.0, ci_high: p_hat * 2.0 };
        let pts = [p(8, 1e-2), p(12, 1e-3), p(16, 0.0)];
        assert_eq!(exponent_regression(&pts), Err(Error::TooFewPoints(2)));
    }

    #[test]
    fn config_validation() {
        assert!(McConfig::new(0, 1).is_err());
        assert!(McConfig::new(10, 1).unwrap().with_batch_size(11).is_err());
        assert!(McConfig::new(10, 1).unwrap().with_confidence(1.0).is_err());
        assert_eq!(McConfig::new(10, 1).unwrap().batch_size, 10);
    }
}
