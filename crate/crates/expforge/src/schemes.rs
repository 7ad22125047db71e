//! Encoder/decoder state machines. One trial runs a whole block.
//!
//! Trials are simulated on sufficient statistics: a simplex stage of `m`
//! codewords only ever excites `m - 1` dimensions, so the remaining uses of
//! that stage carry pure noise orthogonal to every codeword and are never
//! sampled. Channel-use accounting still charges the full stage length.

use crate::analytic::{optimal_lambda1, TwoWaySpec};
use crate::engine::{self, ErrorEvent, ErrorStats, McConfig, Scheme, TrialOutcome};
use crate::error::{invalid, Error, Result};
use crate::geometry::{
    ack_from_correlations, argmax, build_simplex, pair_from_index, pair_index, protection_from_correlations,
    top_two, AckDecision, NackGeometry, ProtectionGeometry, SimplexCode,
};
use crate::oracle::{block_error_bound, nack_bound, BlockParams, BoundRequest};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerConstraint {
    /// Every realized codeword fits `nP`.
    As,
    /// Only the expected energy has to fit `nP`.
    Exp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub n: usize,
    pub p_fwd: f64,
    pub p_fb: f64,
    pub sigma_fwd: f64,
    pub sigma_fb: f64,
    pub constraint: PowerConstraint,
}

impl ChannelSpec {
    pub fn new(n: usize, p_fwd: f64, p_fb: f64, sigma_fwd: f64, sigma_fb: f64, constraint: PowerConstraint) -> Result<Self> {
        let c = Self { n, p_fwd, p_fb, sigma_fwd, sigma_fb, constraint };
        c.validate()?;
        Ok(c)
    }

    /// Unit noise on both links, so powers are SNRs.
    pub fn unit_noise(n: usize, snr_fwd: f64, snr_fb: f64, constraint: PowerConstraint) -> Result<Self> {
        Self::new(n, snr_fwd, snr_fb, 1.0, 1.0, constraint)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 5 {
            return Err(invalid("n", format!("need at least 5 channel uses, got {}", self.n)));
        }
        for (name, v) in [("p_fwd", self.p_fwd), ("p_fb", self.p_fb)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [("sigma_fwd", self.sigma_fwd), ("sigma_fb", self.sigma_fb)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn snr_fwd(&self) -> f64 {
        self.p_fwd / (self.sigma_fwd * self.sigma_fwd)
    }

    pub fn snr_fb(&self) -> f64 {
        self.p_fb / (self.sigma_fb * self.sigma_fb)
    }

    fn require(&self, constraint: PowerConstraint) -> Result<()> {
        if self.constraint != constraint {
            return Err(invalid(
                "constraint",
                format!("this scheme runs under {constraint:?}, channel says {:?}", self.constraint),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpSchemeConfig {
    /// NACK-band parameter.
    pub t: f64,
    /// Power each receiver keeps for NACK signalling.
    pub eta: f64,
    /// Share of the `n - m` shared uses given to the forward stage.
    pub lambda: f64,
    /// Detection threshold; defaults to `n`.
    pub threshold: Option<f64>,
}

impl ExpSchemeConfig {
    fn threshold(&self, n: usize) -> Result<f64> {
        let v = self.threshold.unwrap_or(n as f64);
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid("threshold", format!("must be positive, got {v}")));
        }
        Ok(v)
    }

    fn check_t(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t < 1.0) {
            return Err(invalid("t", format!("must lie in (0, 1), got {}", self.t)));
        }
        Ok(())
    }

    fn check_eta(&self, limit: f64) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < limit) {
            return Err(invalid("eta", format!("must lie in (0, {limit}), got {}", self.eta)));
        }
        Ok(())
    }

    fn check_lambda(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(invalid("lambda", format!("must lie in (0, 1), got {}", self.lambda)));
        }
        Ok(())
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn transmit(x: &[f64], sigma: f64, rng: &mut ChaCha8Rng, y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = xi + sigma * gauss(rng);
    }
}

fn simplex_in(m: usize, energy: f64) -> Result<SimplexCode> {
    Ok(build_simplex(m, energy, m - 1)?.clamp_to_budget())
}

fn max_energy(code: &SimplexCode) -> f64 {
    (0..code.m()).map(|i| code.codeword_energy(i)).fold(0.0, f64::max)
}

/// Index-location slot decision: the unique slot above `threshold`, if any.
fn unique_slot(
    m: usize,
    hot: Option<(usize, f64)>,
    threshold: f64,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Option<usize> {
    let mut found = None;
    let mut count = 0;
    for k in 0..m {
        let mut r = sigma * gauss(rng);
        if let Some((w, a)) = hot {
            if k == w {
                r += a;
            }
        }
        if r > threshold {
            count += 1;
            found = Some(k);
        }
    }
    if count == 1 {
        found
    } else {
        None
    }
}

#[derive(Debug, Clone)]
pub struct Buffers {
    y: Vec<f64>,
    g: Vec<f64>,
    yf: Vec<f64>,
    gf: Vec<f64>,
}

impl Buffers {
    fn new(dim: usize, fb_dim: usize) -> Self {
        Self {
            y: vec![0.0; dim],
            g: vec![0.0; dim + 1],
            yf: vec![0.0; fb_dim],
            gf: vec![0.0; fb_dim + 1],
        }
    }
}

// ---------------------------------------------------------------------------
// No feedback

/// Simplex code of energy `nP` and nearest-codeword decoding.
#[derive(Debug, Clone)]
pub struct SimplexNoFeedback {
    m: usize,
    n: usize,
    code: SimplexCode,
    sigma: f64,
}

impl SimplexNoFeedback {
    pub fn new(m: usize, channel: &ChannelSpec) -> Result<Self> {
        channel.validate()?;
        channel.require(PowerConstraint::As)?;
        if m < 2 {
            return Err(invalid("m", "need at least 2 messages"));
        }
        if m > channel.n + 1 {
            return Err(Error::DoesNotFit(format!("{m} messages need m <= n + 1 = {}", channel.n + 1)));
        }
        Ok(Self {
            m,
            n: channel.n,
            code: simplex_in(m, channel.n as f64 * channel.p_fwd)?,
            sigma: channel.sigma_fwd,
        })
    }

    pub fn bound_request(&self) -> BoundRequest {
        BoundRequest::Simplex {
            m: self.m,
            n: self.n,
            snr: self.code.energy() / (self.n as f64 * self.sigma * self.sigma),
        }
    }
}

impl Scheme for SimplexNoFeedback {
    type Scratch = Buffers;
    const STREAMS: usize = 1;

    fn block_length(&self) -> usize {
        self.n
    }

    fn scratch(&self) -> Buffers {
        Buffers::new(self.m - 1, 0)
    }

    fn trial(&self, rng: &mut ChaCha8Rng, b: &mut Buffers, out: &mut [TrialOutcome]) {
        let w = rng.random_range(0..self.m);
        transmit(self.code.codeword(w), self.sigma, rng, &mut b.y);
        self.code.correlate(&b.y, &mut b.g[..self.m]);
        let d = argmax(&b.g[..self.m]);
        out[0] = TrialOutcome {
            true_msg: w,
            decoded_msg: d,
            error_event: if d == w { ErrorEvent::None } else { ErrorEvent::Stage1 },
            energy_fwd: self.code.codeword_energy(w),
            ..Default::default()
        };
    }
}

pub fn sim_simplex_nofb(m: usize, channel: &ChannelSpec, mc: &McConfig) -> Result<ErrorStats> {
    engine::run(&SimplexNoFeedback::new(m, channel)?, mc)
}

// ---------------------------------------------------------------------------
// Active feedback under the almost-sure constraint

/// Transmission, pair feedback and antipodal retransmission.
///
/// Stage one sends a simplex of energy `lambda1 nP`. The receiver commits at
/// once inside a protection region and otherwise feeds back its two most
/// likely messages as a `C(m,2)`-point simplex. The transmitter spends
/// whatever is left of `nP` on one antipodal symbol: `+` if its message is
/// the smaller of the decoded pair, `-` if it is the larger, silence if it is
/// not in the pair.
#[derive(Debug, Clone)]
pub struct ActiveAs {
    m: usize,
    n: usize,
    s: f64,
    lambda1: f64,
    code: SimplexCode,
    spread: f64,
    pairs: SimplexCode,
    retx: Vec<f64>,
    sigma: f64,
    sigma_fb: f64,
    p_fwd: f64,
    fb_energy: f64,
}

/// Channel uses for stage one, the pair feedback and the retransmission.
pub fn active_as_uses(m: usize) -> usize {
    let c = m * (m - 1) / 2;
    (m - 1) + (c - 1) + 1
}

impl ActiveAs {
    fn build(m: usize, n: usize, p_fwd: f64, fb_energy: f64, sigma: f64, sigma_fb: f64, s: f64) -> Result<Self> {
        if m < 3 {
            return Err(invalid("m", "active feedback needs at least 3 messages"));
        }
        if active_as_uses(m) > n {
            return Err(Error::DoesNotFit(format!(
                "{m} messages need {} channel uses, have {n}",
                active_as_uses(m)
            )));
        }
        let lambda1 = optimal_lambda1(m, s);
        let budget = n as f64 * p_fwd;
        let code = simplex_in(m, lambda1 * budget)?;
        let geom = ProtectionGeometry::new(&code, s)?;
        let retx = (0..m)
            .map(|i| {
                let e1 = code.codeword_energy(i);
                let mut a = (budget - e1).max(0.0).sqrt();
                while e1 + a * a > budget {
                    a = a.next_down();
                }
                a
            })
            .collect();
        let c = m * (m - 1) / 2;
        Ok(Self {
            m,
            n,
            s,
            lambda1,
            spread: geom.correlation_spread(),
            code,
            pairs: simplex_in(c, fb_energy)?,
            retx,
            sigma,
            sigma_fb,
            p_fwd,
            fb_energy,
        })
    }

    pub fn new(m: usize, channel: &ChannelSpec, s: f64) -> Result<Self> {
        channel.validate()?;
        channel.require(PowerConstraint::As)?;
        Self::build(
            m,
            channel.n,
            channel.p_fwd,
            channel.n as f64 * channel.p_fb,
            channel.sigma_fwd,
            channel.sigma_fb,
            s,
        )
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn bound_request(&self) -> BoundRequest {
        let nf = self.n as f64;
        BoundRequest::ActiveAs {
            m: self.m,
            n: self.n,
            snr_fwd: self.p_fwd / (self.sigma * self.sigma),
            snr_fb: self.fb_energy / (nf * self.sigma_fb * self.sigma_fb),
            s: self.s,
        }
    }

    /// Runs the protocol for message `w` and returns
    /// `(decoded, event, energy_fwd, energy_fb, immediate)`.
    fn run(&self, w: usize, rng: &mut ChaCha8Rng, b: &mut Buffers) -> (usize, ErrorEvent, f64, f64, bool) {
        let m = self.m;
        transmit(self.code.codeword(w), self.sigma, rng, &mut b.y);
        let g = &mut b.g[..m];
        self.code.correlate(&b.y, g);
        let immediate = protection_from_correlations(g, self.spread);
        let (qa, qb) = top_two(g);
        let (ga, gb) = (g[qa], g[qb]);

        // feedback: the pair label, or silence after an immediate decision
        let c = self.pairs.m();
        let (fb_energy, pair_sent) = match immediate {
            Some(_) => {
                for v in b.yf.iter_mut() {
                    *v = self.sigma_fb * gauss(rng);
                }
                (0.0, None)
            }
            None => {
                let k = pair_index(qa, qb, m);
                transmit(self.pairs.codeword(k), self.sigma_fb, rng, &mut b.yf);
                (self.pairs.codeword_energy(k), Some(k))
            }
        };
        let gf = &mut b.gf[..c];
        self.pairs.correlate(&b.yf, gf);
        let (ha, hb) = pair_from_index(argmax(gf), m);

        let sign = if w == ha {
            1.0
        } else if w == hb {
            -1.0
        } else {
            0.0
        };
        let amp = self.retx[w];
        let r = sign * amp + self.sigma * gauss(rng);
        let energy_fwd = self.code.codeword_energy(w) + if sign != 0.0 { amp * amp } else { 0.0 };

        let decoded = match immediate {
            Some(d) => d,
            None => {
                // ML between the two candidates given the stage-one
                // correlations and the retransmitted symbol
                let (ca, cb) = (self.retx[qa], -self.retx[qb]);
                let ma = 2.0 * ga + 2.0 * r * ca - ca * ca;
                let mb = 2.0 * gb + 2.0 * r * cb - cb * cb;
                if mb > ma {
                    qb
                } else {
                    qa
                }
            }
        };
        let event = if decoded == w {
            ErrorEvent::None
        } else if immediate.is_some() || (w != qa && w != qb) {
            ErrorEvent::Stage1
        } else if pair_sent != Some(pair_index(ha, hb, m)) {
            ErrorEvent::FeedbackMiscoord
        } else {
            ErrorEvent::Retransmission
        };
        (decoded, event, energy_fwd, fb_energy, immediate.is_some())
    }
}

impl Scheme for ActiveAs {
    type Scratch = Buffers;
    const STREAMS: usize = 1;

    fn block_length(&self) -> usize {
        self.n
    }

    fn scratch(&self) -> Buffers {
        Buffers::new(self.m - 1, self.pairs.m() - 1)
    }

    fn trial(&self, rng: &mut ChaCha8Rng, b: &mut Buffers, out: &mut [TrialOutcome]) {
        let w = rng.random_range(0..self.m);
        let (d, ev, ef, eb, imm) = self.run(w, rng, b);
        out[0] = TrialOutcome {
            true_msg: w,
            decoded_msg: d,
            error_event: ev,
            energy_fwd: ef,
            energy_fb: eb,
            immediate: imm,
            nack: false,
        };
    }
}

pub fn sim_oneway_as_active(m: usize, channel: &ChannelSpec, s: f64, mc: &McConfig) -> Result<ErrorStats> {
    engine::run(&ActiveAs::new(m, channel, s)?, mc)
}

/// Terminal 2 sends its own message with energy `lambda n P2` during stage
/// one of terminal 1 and spends the rest of `n P2` on pair feedback. Unit
/// noise on both links.
#[derive(Debug, Clone)]
pub struct TwoWayActiveAs {
    one: ActiveAs,
    own: SimplexCode,
}

impl TwoWayActiveAs {
    pub fn new(spec: &TwoWaySpec, n: usize, lambda: f64, s: f64) -> Result<Self> {
        if spec.snr12 >= spec.snr21 {
            return Err(invalid(
                "snr12",
                format!("needs snr12 < snr21, got {} >= {}", spec.snr12, spec.snr21),
            ));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(invalid("lambda", format!("must lie in [0, 1], got {lambda}")));
        }
        ChannelSpec::unit_noise(n, spec.snr12, spec.snr21, PowerConstraint::As)?;
        let budget2 = n as f64 * spec.snr21;
        let own = simplex_in(spec.m, lambda * budget2)?;
        let mut rest = budget2 - max_energy(&own);
        let one = loop {
            let one = ActiveAs::build(spec.m, n, spec.snr12, rest.max(0.0), 1.0, 1.0, s)?;
            if max_energy(&own) + max_energy(&one.pairs) <= budget2 {
                break one;
            }
            rest = rest.next_down();
        };
        Ok(Self { one, own })
    }

    /// Bounds for W1 (the aided direction) and W2 (plain simplex).
    pub fn bound_requests(&self) -> [BoundRequest; 2] {
        let n = self.one.n;
        [
            self.one.bound_request(),
            BoundRequest::Simplex { m: self.one.m, n, snr: self.own.energy() / n as f64 },
        ]
    }
}

impl Scheme for TwoWayActiveAs {
    type Scratch = Buffers;
    const STREAMS: usize = 2;

    fn block_length(&self) -> usize {
        self.one.n
    }

    fn scratch(&self) -> Buffers {
        Buffers::new(self.one.m - 1, self.one.pairs.m() - 1)
    }

    fn trial(&self, rng: &mut ChaCha8Rng, b: &mut Buffers, out: &mut [TrialOutcome]) {
        let m = self.one.m;
        let w1 = rng.random_range(0..m);
        let w2 = rng.random_range(0..m);
        let (d1, ev, e1, fb, imm) = self.one.run(w1, rng, b);

        transmit(self.own.codeword(w2), 1.0, rng, &mut b.y);
        self.own.correlate(&b.y, &mut b.g[..m]);
        let d2 = argmax(&b.g[..m]);
        let e2 = self.own.codeword_energy(w2) + fb;

        out[0] = TrialOutcome {
            true_msg: w1,
            decoded_msg: d1,
            error_event: ev,
            energy_fwd: e1,
            energy_fb: e2,
            immediate: imm,
            nack: false,
        };
        out[1] = TrialOutcome {
            true_msg: w2,
            decoded_msg: d2,
            error_event: if d2 == w2 { ErrorEvent::None } else { ErrorEvent::Stage1 },
            energy_fwd: e2,
            energy_fb: e1,
            immediate: false,
            nack: false,
        };
    }
}

pub fn sim_twoway_as_active(
    spec: &TwoWaySpec,
    n: usize,
    lambda: f64,
    s: f64,
    mc: &McConfig,
) -> Result<(ErrorStats, ErrorStats)> {
    let mut v = engine::run_streams(&TwoWayActiveAs::new(spec, n, lambda, s)?, mc)?;
    let b = v.pop().expect("two streams");
    let a = v.pop().expect("two streams");
    Ok((a, b))
}

// ---------------------------------------------------------------------------
// Expected-power building block

/// One ACK/NACK building block of length `len`.
///
/// - `len - m - 1` uses carry a simplex of energy `(len - 1) * power`; the
///   last `power` is left for the expected retransmission.
/// - One use on the reverse link carries the NACK symbol of amplitude
///   `sqrt(eta len / p)`, where `p` is the analytic NACK bound.
/// - `m` uses carry the index-location retransmission of amplitude
///   `sqrt(power / p)` when the transmitter hears a NACK.
#[derive(Debug, Clone)]
pub struct Block {
    m: usize,
    len: usize,
    t: f64,
    code: SimplexCode,
    margin: f64,
    p_hat: f64,
    power: f64,
    fb_amp: f64,
    retx_amp: f64,
    threshold: f64,
    sigma_data: f64,
    sigma_back: f64,
}

/// What happened inside one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockRun {
    pub decoded: usize,
    pub rx_nack: bool,
    pub tx_nack: bool,
    pub energy_tx: f64,
    pub energy_rx: f64,
}

impl Block {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        m: usize,
        len: usize,
        power: f64,
        eta: f64,
        t: f64,
        threshold: f64,
        sigma_data: f64,
        sigma_back: f64,
    ) -> Result<Self> {
        if m < 2 {
            return Err(invalid("m", "need at least 2 messages"));
        }
        if len < 2 * m {
            return Err(Error::DoesNotFit(format!(
                "a block for {m} messages needs {} uses, got {len}",
                2 * m
            )));
        }
        if !(power >= 0.0) {
            return Err(invalid("power", format!("must be >= 0, got {power}")));
        }
        let e1 = (len - 1) as f64 * power;
        let code = simplex_in(m, e1)?;
        let nack = NackGeometry::new(&code, t)?;
        let p_hat = nack_bound(m, e1 / (sigma_data * sigma_data), t).clamp(1e-300, 1.0);
        Ok(Self {
            m,
            len,
            t,
            margin: nack.correlation_margin(),
            code,
            p_hat,
            power,
            fb_amp: (eta * len as f64 / p_hat).sqrt(),
            retx_amp: (power / p_hat).sqrt(),
            threshold,
            sigma_data,
            sigma_back,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    /// The analytic NACK probability the amplitudes are tuned to.
    pub fn nack_probability(&self) -> f64 {
        self.p_hat
    }

    pub fn params(&self) -> BlockParams {
        BlockParams {
            m: self.m,
            es: self.code.energy() / (self.sigma_data * self.sigma_data),
            t: self.t,
            sigma_fwd: self.sigma_data,
            sigma_fb: self.sigma_back,
            fb_amplitude: self.fb_amp,
            retx_amplitude: self.retx_amp,
            threshold: self.threshold,
        }
    }

    pub fn error_bound(&self) -> f64 {
        block_error_bound(&self.params())
    }

    pub fn run(&self, w: usize, rng: &mut ChaCha8Rng, b: &mut Buffers) -> BlockRun {
        let m = self.m;
        transmit(self.code.codeword(w), self.sigma_data, rng, &mut b.y[..m - 1]);
        let g = &mut b.g[..m];
        self.code.correlate(&b.y[..m - 1], g);
        let tilde = argmax(g);
        let rx_nack = ack_from_correlations(g, self.margin) == AckDecision::Nack;

        let fb = if rx_nack { self.fb_amp } else { 0.0 };
        let tx_nack = fb + self.sigma_back * gauss(rng) > self.threshold;
        let decoded = if rx_nack {
            let hot = tx_nack.then_some((w, self.retx_amp));
            unique_slot(m, hot, self.threshold, self.sigma_data, rng).unwrap_or(tilde)
        } else {
            tilde
        };
        let retx_energy = if tx_nack { self.power / self.p_hat } else { 0.0 };
        BlockRun {
            decoded,
            rx_nack,
            tx_nack,
            energy_tx: self.code.codeword_energy(w) + retx_energy,
            energy_rx: fb * fb,
        }
    }
}

/// A single building block spanning the whole channel.
#[derive(Debug, Clone)]
pub struct ExpBuildingBlock {
    n: usize,
    block: Block,
}

impl ExpBuildingBlock {
    pub fn new(m: usize, channel: &ChannelSpec, cfg: &ExpSchemeConfig) -> Result<Self> {
        channel.validate()?;
        channel.require(PowerConstraint::Exp)?;
        cfg.check_t()?;
        cfg.check_eta(channel.p_fwd.min(channel.p_fb))?;
        let block = Block::new(
            m,
            channel.n,
            channel.p_fwd,
            cfg.eta,
            cfg.t,
            cfg.threshold(channel.n)?,
            channel.sigma_fwd,
            channel.sigma_fb,
        )?;
        Ok(Self { n: channel.n, block })
    }

    pub fn block(&self) -> &Block {
        &self.block
    }

    pub fn bound_request(&self) -> BoundRequest {
        BoundRequest::BuildingBlock(self.block.params())
    }
}

impl Scheme for ExpBuildingBlock {
    type Scratch = Buffers;
    const STREAMS: usize = 1;

    fn block_length(&self) -> usize {
        self.n
    }

    fn scratch(&self) -> Buffers {
        Buffers::new(self.block.m - 1, 0)
    }

    fn trial(&self, rng: &mut ChaCha8Rng, b: &mut Buffers, out: &mut [TrialOutcome]) {
        let w = rng.random_range(0..self.block.m);
        let r = self.block.run(w, rng, b);
        out[0] = TrialOutcome {
            true_msg: w,
            decoded_msg: r.decoded,
            error_event: match (r.decoded == w, r.rx_nack) {
                (true, _) => ErrorEvent::None,
                (false, false) => ErrorEvent::AckPath,
                (false, true) => ErrorEvent::NackPath,
            },
            energy_fwd: r.energy_tx,
            energy_fb: r.energy_rx,
            immediate: false,
            nack: r.rx_nack,
        };
    }
}

pub fn sim_oneway_exp_bb(m: usize, channel: &ChannelSpec, cfg: &ExpSchemeConfig, mc: &McConfig) -> Result<ErrorStats> {
    engine::run(&ExpBuildingBlock::new(m, channel, cfg)?, mc)
}

/// `(L_A, L_B)` for the forward and feedback stages.
fn stage_lengths(m: usize, n: usize, lambda: f64) -> Result<(usize, usize)> {
    if 3 * m > n + 2 {
        return Err(Error::DoesNotFit(format!("{m} messages need 3m - 2 <= n, got n = {n}")));
    }
    let shared = n - m;
    let la = (lambda * shared as f64).floor() as usize;
    let lb = shared - la;
    if la < 2 * m || lb < 2 * m {
        return Err(Error::DoesNotFit(format!(
            "stage lengths ({la}, {lb}) must each reach {} uses",
            2 * m
        )));
    }
    Ok((la, lb))
}

/// Final index-location correction: amplitude `sqrt(P / p)` with `p` bounding
/// the chance that the transmitter sees a wrong `W''`.
#[derive(Debug, Clone, Copy)]
struct Correction {
    amp: f64,
    energy: f64,
}

impl Correction {
    fn new(power: f64, a: &Block, b: &Block) -> Self {
        let p = (a.error_bound() + b.error_bound()).clamp(1e-300, 1.0);
        Self {
            amp: (power / p).sqrt(),
            energy: power / p,
        }
    }
}

/// Forward block, feedback block, index-location correction.
#[derive(Debug, Clone)]
pub struct ExpScheme {
    m: usize,
    n: usize,
    a: Block,
    b: Block,
    corr: Correction,
    threshold: f64,
    sigma: f64,
}

impl ExpScheme {
    pub fn new(m: usize, channel: &ChannelSpec, cfg: &ExpSchemeConfig) -> Result<Self> {
        channel.validate()?;
        channel.require(PowerConstraint::Exp)?;
        cfg.check_t()?;
        cfg.check_lambda()?;
        cfg.check_eta(channel.p_fwd.min(channel.p_fb))?;
        let n = channel.n;
        let (la, lb) = stage_lengths(m, n, cfg.lambda)?;
        let thr = cfg.threshold(n)?;
        let pa = channel.p_fwd / cfg.lambda - cfg.eta;
        let pb = channel.p_fb / (1.0 - cfg.lambda) - cfg.eta;
        let a = Block::new(m, la, pa, cfg.eta, cfg.t, thr, channel.sigma_fwd, channel.sigma_fb)?;
        let b = Block::new(m, lb, pb, cfg.eta, cfg.t, thr, channel.sigma_fb, channel.sigma_fwd)?;
        let nf = n as f64;
        let fwd = la as f64 * pa + cfg.eta * lb as f64 + channel.p_fwd;
        let back = lb as f64 * pb + cfg.eta * la as f64;
        if fwd > nf * channel.p_fwd * (1.0 + 1e-12) {
            return Err(invalid("lambda", format!("forward expected energy {fwd} exceeds nP = {}", nf * channel.p_fwd)));
        }
        if back > nf * channel.p_fb * (1.0 + 1e-12) {
            return Err(invalid("lambda", format!("feedback expected energy {back} exceeds nP_fb = {}", nf * channel.p_fb)));
        }
        let corr = Correction::new(channel.p_fwd, &a, &b);
        Ok(Self { m, n, a, b, corr, threshold: thr, sigma: channel.sigma_fwd })
    }

    pub fn bound_request(&self) -> BoundRequest {
        BoundRequest::ExpScheme {
            a: self.a.params(),
            b: self.b.params(),
            correction_amplitude: self.corr.amp,
            threshold: self.threshold,
            sigma_fwd: self.sigma,
        }
    }
}

impl Scheme for ExpScheme {
    type Scratch = Buffers;
    const STREAMS: usize = 1;

    fn block_length(&self) -> usize {
        self.n
    }

    fn scratch(&self) -> Buffers {
        Buffers::new(self.m - 1, 0)
    }

    fn trial(&self, rng: &mut ChaCha8Rng, buf: &mut Buffers, out: &mut [TrialOutcome]) {
        let w = rng.random_range(0..self.m);
        let ra = self.a.run(w, rng, buf);
        let rb = self.b.run(ra.decoded, rng, buf);
        let correct = rb.decoded != w;
        let hot = correct.then_some((w, self.corr.amp));
        let decoded = unique_slot(self.m, hot, self.threshold, self.sigma, rng).unwrap_or(ra.decoded);
        out[0] = TrialOutcome {
            true_msg: w,
            decoded_msg: decoded,
            error_event: if decoded == w {
                ErrorEvent::None
            } else if !correct {
                ErrorEvent::FeedbackMiscoord
            } else {
                ErrorEvent::Retransmission
            },
            energy_fwd: ra.energy_tx + rb.energy_rx + if correct { self.corr.energy } else { 0.0 },
            energy_fb: ra.energy_rx + rb.energy_tx,
            immediate: false,
            nack: ra.rx_nack || rb.rx_nack,
        };
    }
}

pub fn sim_oneway_exp_scheme(m: usize, channel: &ChannelSpec, cfg: &ExpSchemeConfig, mc: &McConfig) -> Result<ErrorStats> {
    engine::run(&ExpScheme::new(m, channel, cfg)?, mc)
}

/// Phase powers of the two-way EXP scheme as multiples of `P_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSplit {
    pub lambda: f64,
    pub k1: f64,
    pub k2: f64,
    pub j1: f64,
    pub j2: f64,
}

/// Both terminals run the forward/feedback/correction scheme at once, each
/// acting as the feedback terminal for the other. Unit noise on both links.
#[derive(Debug, Clone)]
pub struct TwoWayExp {
    m: usize,
    n: usize,
    /// Phase one: `a1` carries W1 over 1->2, `a2` carries W2 over 2->1.
    a1: Block,
    a2: Block,
    /// Phase two: `b2` returns W1' over 2->1, `b1` returns W2' over 1->2.
    b1: Block,
    b2: Block,
    c1: Correction,
    c2: Correction,
    threshold: f64,
}

impl TwoWayExp {
    pub fn new(spec: &TwoWaySpec, n: usize, split: &PhaseSplit, cfg: &ExpSchemeConfig) -> Result<Self> {
        let PhaseSplit { lambda, k1, k2, j1, j2 } = *split;
        cfg.check_t()?;
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(invalid("lambda", format!("must lie in (0, 1), got {lambda}")));
        }
        let (p1, p2) = (spec.snr12, spec.snr21);
        cfg.check_eta(p1.min(p2))?;
        for (name, v) in [("k1", k1), ("k2", k2), ("j1", j1), ("j2", j2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if lambda * k1 + (1.0 - lambda) * j1 > 1.0 + 1e-12 {
            return Err(invalid("k1", "power budget lambda k1 + (1 - lambda) j1 exceeds 1"));
        }
        if lambda * k2 + (1.0 - lambda) * j2 > 1.0 + 1e-12 {
            return Err(invalid("k2", "power budget lambda k2 + (1 - lambda) j2 exceeds 1"));
        }
        let (la, lb) = stage_lengths(spec.m, n, lambda)?;
        let thr = cfg.threshold(n)?;
        let eta = cfg.eta;
        let phase = |name: &'static str, mult: f64, p: f64| -> Result<f64> {
            if mult == 0.0 {
                return Ok(0.0);
            }
            let v = mult * p - eta;
            if v <= 0.0 {
                return Err(invalid(name, format!("phase power {mult} P - eta must be positive")));
            }
            Ok(v)
        };
        let (pa1, pa2) = (phase("k1", k1, p1)?, phase("k2", k2, p2)?);
        let (pb1, pb2) = (phase("j1", j1, p1)?, phase("j2", j2, p2)?);
        let mk = |len, power| Block::new(spec.m, len, power, eta, cfg.t, thr, 1.0, 1.0);
        let (a1, a2, b1, b2) = (mk(la, pa1)?, mk(la, pa2)?, mk(lb, pb1)?, mk(lb, pb2)?);

        let nf = n as f64;
        let (laf, lbf) = (la as f64, lb as f64);
        let e1 = laf * pa1 + eta * laf + lbf * pb1 + eta * lbf + p1;
        let e2 = laf * pa2 + eta * laf + lbf * pb2 + eta * lbf + p2;
        if e1 > nf * p1 * (1.0 + 1e-12) {
            return Err(invalid("k1", format!("terminal 1 expected energy {e1} exceeds nP1 = {}", nf * p1)));
        }
        if e2 > nf * p2 * (1.0 + 1e-12) {
            return Err(invalid("k2", format!("terminal 2 expected energy {e2} exceeds nP2 = {}", nf * p2)));
        }
        let c1 = Correction::new(p1, &a1, &b2);
        let c2 = Correction::new(p2, &a2, &b1);
        Ok(Self { m: spec.m, n, a1, a2, b1, b2, c1, c2, threshold: thr })
    }

    pub fn bound_requests(&self) -> [BoundRequest; 2] {
        let req = |a: &Block, b: &Block, c: &Correction| BoundRequest::ExpScheme {
            a: a.params(),
            b: b.params(),
            correction_amplitude: c.amp,
            threshold: self.threshold,
            sigma_fwd: 1.0,
        };
        [req(&self.a1, &self.b2, &self.c1), req(&self.a2, &self.b1, &self.c2)]
    }
}

impl Scheme for TwoWayExp {
    type Scratch = Buffers;
    const STREAMS: usize = 2;

    fn block_length(&self) -> usize {
        self.n
    }

    fn scratch(&self) -> Buffers {
        Buffers::new(self.m - 1, 0)
    }

    fn trial(&self, rng: &mut ChaCha8Rng, buf: &mut Buffers, out: &mut [TrialOutcome]) {
        let m = self.m;
        let w1 = rng.random_range(0..m);
        let w2 = rng.random_range(0..m);
        let ra1 = self.a1.run(w1, rng, buf);
        let ra2 = self.a2.run(w2, rng, buf);
        let rb2 = self.b2.run(ra1.decoded, rng, buf);
        let rb1 = self.b1.run(ra2.decoded, rng, buf);

        let fix1 = rb2.decoded != w1;
        let d1 = unique_slot(m, fix1.then_some((w1, self.c1.amp)), self.threshold, 1.0, rng).unwrap_or(ra1.decoded);
        let fix2 = rb1.decoded != w2;
        let d2 = unique_slot(m, fix2.then_some((w2, self.c2.amp)), self.threshold, 1.0, rng).unwrap_or(ra2.decoded);

        let t1 = ra1.energy_tx + ra2.energy_rx + rb1.energy_tx + rb2.energy_rx + if fix1 { self.c1.energy } else { 0.0 };
        let t2 = ra2.energy_tx + ra1.energy_rx + rb2.energy_tx + rb1.energy_rx + if fix2 { self.c2.energy } else { 0.0 };
        let event = |d: usize, w: usize, fix: bool| {
            if d == w {
                ErrorEvent::None
            } else if fix {
                ErrorEvent::Retransmission
            } else {
                ErrorEvent::FeedbackMiscoord
            }
        };
        out[0] = TrialOutcome {
            true_msg: w1,
            decoded_msg: d1,
            error_event: event(d1, w1, fix1),
            energy_fwd: t1,
            energy_fb: t2,
            immediate: false,
            nack: ra1.rx_nack || rb2.rx_nack,
        };
        out[1] = TrialOutcome {
            true_msg: w2,
            decoded_msg: d2,
            error_event: event(d2, w2, fix2),
            energy_fwd: t2,
            energy_fb: t1,
            immediate: false,
            nack: ra2.rx_nack || rb1.rx_nack,
        };
    }
}

pub fn sim_twoway_exp(
    spec: &TwoWaySpec,
    n: usize,
    split: &PhaseSplit,
    cfg: &ExpSchemeConfig,
    mc: &McConfig,
) -> Result<(ErrorStats, ErrorStats)> {
    let mut v = engine::run_streams(&TwoWayExp::new(spec, n, split, cfg)?, mc)?;
    let b = v.pop().expect("two streams");
    let a = v.pop().expect("two streams");
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{exact_pe_simplex, q_function, QuadratureSpec};

    fn mc(trials: u64, seed: u64) -> McConfig {
        McConfig::new(trials, seed).unwrap()
    }

    fn as_channel(n: usize, snr: f64, snr_fb: f64) -> ChannelSpec {
        ChannelSpec::unit_noise(n, snr, snr_fb, PowerConstraint::As).unwrap()
    }

    fn within_se(p_hat: f64, p: f64, trials: u64, k: f64) -> bool {
        (p_hat - p).abs() <= k * (p * (1.0 - p) / trials as f64).sqrt()
    }

    #[test]
    fn antipodal_matches_q() {
        // n P / sigma^2 = 9
        let ch = as_channel(9, 1.0, 0.0);
        let s = sim_simplex_nofb(2, &ch, &mc(200_000, 1)).unwrap();
        assert!(within_se(s.p_hat, q_function(3.0), s.trials, 3.0), "{}", s.p_hat);
        assert!(s.energy_audit.max_fwd <= 9.0);
    }

    #[test]
    fn three_point_matches_oracle() {
        let ch = as_channel(8, 1.0, 0.0);
        let s = sim_simplex_nofb(3, &ch, &mc(200_000, 2)).unwrap();
        let p = exact_pe_simplex(3, 8.0, 1.0, &QuadratureSpec::default()).unwrap();
        assert!(within_se(s.p_hat, p, s.trials, 3.0), "{} vs {p}", s.p_hat);
    }

    #[test]
    fn noiseless_simplex_never_errs() {
        let ch = ChannelSpec::new(8, 1.0, 1.0, 1e-9, 1e-9, PowerConstraint::As).unwrap();
        assert_eq!(sim_simplex_nofb(5, &ch, &mc(10_000, 3)).unwrap().errors, 0);
    }

    #[test]
    fn rejections() {
        let ch = as_channel(5, 1.0, 1.0);
        assert!(sim_simplex_nofb(7, &ch, &mc(10, 1)).is_err());
        assert!(ActiveAs::new(2, &ch, 0.5).is_err());
        // m = 4 needs 3 + 5 + 1 = 9 uses
        assert!(ActiveAs::new(4, &as_channel(8, 1.0, 1.0), 0.5).is_err());
        assert!(ActiveAs::new(4, &as_channel(9, 1.0, 1.0), 0.5).is_ok());
        let exp = ChannelSpec::unit_noise(20, 1.0, 1.0, PowerConstraint::Exp).unwrap();
        assert!(ActiveAs::new(3, &exp, 0.5).is_err());
        let cfg = ExpSchemeConfig { t: 0.5, eta: 0.0, lambda: 0.5, threshold: None };
        assert!(ExpScheme::new(3, &exp, &cfg).is_err());
        let cfg = ExpSchemeConfig { t: 1.0, eta: 0.1, lambda: 0.5, threshold: None };
        assert!(ExpBuildingBlock::new(3, &exp, &cfg).is_err());
        assert!(ChannelSpec::unit_noise(4, 1.0, 1.0, PowerConstraint::As).is_err());
    }

    #[test]
    fn active_as_energy_never_exceeds_budget() {
        let ch = as_channel(12, 2.0, 16.0);
        let s = sim_oneway_as_active(3, &ch, 0.8, &mc(100_000, 4)).unwrap();
        assert!(s.energy_audit.max_fwd <= 24.0);
        assert!(s.energy_audit.max_fb <= 12.0 * 16.0);
        let total: u64 = s.event_counts.values().sum();
        assert_eq!(total, s.errors);
    }

    #[test]
    fn clean_feedback_has_no_miscoordination() {
        let ch = ChannelSpec::new(6, 2.0, 16.0, 1.0, 1e-6, PowerConstraint::As).unwrap();
        let s = sim_oneway_as_active(3, &ch, 0.5, &mc(100_000, 5)).unwrap();
        assert_eq!(s.event_count(ErrorEvent::FeedbackMiscoord), 0);
        assert!(s.errors > 0);
    }

    #[test]
    fn immediate_decisions_grow_with_s() {
        let ch = as_channel(8, 2.0, 16.0);
        let frac: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&s| sim_oneway_as_active(3, &ch, s, &mc(20_000, 6)).unwrap().immediate_fraction())
            .collect();
        assert_eq!(frac[0], 0.0);
        for w in frac.windows(2) {
            assert!(w[0] <= w[1], "{frac:?}");
        }
        assert!(frac[4] > 0.5);
    }

    #[test]
    fn building_block_energy_and_paths() {
        // p_hat ~ 1.5e-4, so retransmissions sit ~40 sigma above the threshold
        let ch = ChannelSpec::unit_noise(30, 1.0, 1.0, PowerConstraint::Exp).unwrap();
        let cfg = ExpSchemeConfig { t: 0.1, eta: 0.5, lambda: 0.5, threshold: None };
        let bb = ExpBuildingBlock::new(3, &ch, &cfg).unwrap();
        assert!(bb.block().retx_amp > 2.0 * 30.0);
        let s = engine::run(&bb, &mc(1_000_000, 7)).unwrap();
        let a = &s.energy_audit;
        assert!(a.mean_fwd <= 30.0 + 3.0 * a.se_fwd, "{a:?}");
        assert!(a.mean_fb <= 30.0 + 3.0 * a.se_fb, "{a:?}");
        assert!(s.nack_trials > 0);
        assert!(a.max_fwd_nack > 10.0 * 30.0);
        assert_eq!(s.event_count(ErrorEvent::NackPath), 0);
    }

    #[test]
    fn short_block_loses_nacks_under_the_threshold() {
        // at n = 20 the NACK symbol cannot clear a threshold of 20
        let ch = ChannelSpec::unit_noise(20, 1.0, 1.0, PowerConstraint::Exp).unwrap();
        let cfg = ExpSchemeConfig { t: 0.5, eta: 0.5, lambda: 0.5, threshold: None };
        let bb = ExpBuildingBlock::new(3, &ch, &cfg).unwrap();
        assert!(bb.block().fb_amp < 20.0);
        let s = engine::run(&bb, &mc(200_000, 7)).unwrap();
        assert!(s.event_count(ErrorEvent::NackPath) > 0);
    }

    #[test]
    fn exp_scheme_noiseless_is_exact() {
        let ch = ChannelSpec::new(18, 2.0, 2.0, 1e-6, 1e-6, PowerConstraint::Exp).unwrap();
        let cfg = ExpSchemeConfig { t: 0.5, eta: 0.1, lambda: 0.5, threshold: None };
        assert_eq!(sim_oneway_exp_scheme(3, &ch, &cfg, &mc(10_000, 8)).unwrap().errors, 0);
    }

    #[test]
    fn exp_scheme_layout() {
        let ch = ChannelSpec::unit_noise(14, 2.0, 2.0, PowerConstraint::Exp).unwrap();
        let cfg = ExpSchemeConfig { t: 0.5, eta: 0.1, lambda: 0.5, threshold: None };
        // 14 - 3 = 11 shared uses cannot give both stages 6
        assert!(ExpScheme::new(3, &ch, &cfg).is_err());
        let ch = ChannelSpec::unit_noise(15, 2.0, 2.0, PowerConstraint::Exp).unwrap();
        assert!(ExpScheme::new(3, &ch, &cfg).is_ok());
    }

    #[test]
    fn twoway_as_splits() {
        let spec = TwoWaySpec::new(3, 2.0, 16.0).unwrap();
        let (w1, w2) = sim_twoway_as_active(&spec, 8, 0.0, 0.5, &mc(30_000, 9)).unwrap();
        // terminal 2 sends nothing of its own
        assert!((w2.p_hat - 2.0 / 3.0).abs() < 0.02, "{}", w2.p_hat);
        assert!(w1.energy_audit.max_fwd <= 16.0);
        assert!(w2.energy_audit.max_fwd <= 8.0 * 16.0);
        assert!(sim_twoway_as_active(&TwoWaySpec::new(3, 16.0, 2.0).unwrap(), 8, 0.5, 0.5, &mc(10, 1)).is_err());
    }

    #[test]
    fn twoway_exp_symmetry_and_budget() {
        let spec = TwoWaySpec::new(3, 1.0, 1.0).unwrap();
        let split = PhaseSplit { lambda: 0.5, k1: 1.0, k2: 1.0, j1: 1.0, j2: 1.0 };
        let cfg = ExpSchemeConfig { t: 0.5, eta: 0.1, lambda: 0.5, threshold: None };
        let (a, b) = sim_twoway_exp(&spec, 18, &split, &cfg, &mc(100_000, 10)).unwrap();
        assert!(a.ci_low <= b.ci_high && b.ci_low <= a.ci_high, "{} {}", a.p_hat, b.p_hat);
        for s in [&a, &b] {
            let e = &s.energy_audit;
            assert!(e.mean_fwd <= 18.0 + 3.0 * e.se_fwd);
        }
        let bad = PhaseSplit { k1: 1.5, ..split };
        assert!(TwoWayExp::new(&spec, 18, &bad, &cfg).is_err());
    }

    #[test]
    fn same_seed_same_stats() {
        let ch = as_channel(10, 2.0, 16.0);
        let base = mc(20_000, 42).with_batch_size(1000).unwrap();
        let a = sim_oneway_as_active(3, &ch, 0.6, &base.with_workers(1)).unwrap();
        let b = sim_oneway_as_active(3, &ch, 0.6, &base.with_workers(4)).unwrap();
        assert_eq!(a, b);
    }
}
