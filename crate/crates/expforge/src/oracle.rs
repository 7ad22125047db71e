//! Reference values that do not depend on the simulators: the Gaussian tail,
//! exact error probabilities of small simplex codes, and the per-event
//! probability bounds behind each scheme's exponent.

use crate::error::{invalid, Result};
use crate::geometry::map_distance_3_to_m;
use std::f64::consts::PI;

/// Gaussian tail `Q(x) = P(N(0,1) > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    /// Relative tolerance; lets vanishing integrals keep their leading digits.
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_subdivisions: 2000,
        }
    }
}

// 15-point Kronrod extension of the 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let pair = f(c - dx) + f(c + dx);
        kron += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Globally adaptive Gauss-Kronrod over the pieces `breaks[i]..breaks[i+1]`:
/// bisect the piece with the largest error estimate until the total error is
/// within tolerance or the subdivision budget is spent.
pub fn integrate(f: impl Fn(f64) -> f64, breaks: &[f64], quad: &QuadratureSpec) -> f64 {
    let mut pieces: Vec<(f64, f64, f64, f64)> = breaks
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let (v, e) = gk15(&f, w[0], w[1]);
            (w[0], w[1], v, e)
        })
        .collect();
    for _ in 0..quad.max_subdivisions {
        let total: f64 = pieces.iter().map(|p| p.2).sum();
        let err: f64 = pieces.iter().map(|p| p.3).sum();
        if err <= quad.abs_tol.min(quad.rel_tol * total.abs()).max(f64::MIN_POSITIVE) {
            break;
        }
        let (worst, _) = pieces
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc });
        let (a, b, _, _) = pieces[worst];
        let mid = 0.5 * (a + b);
        let (v1, e1) = gk15(&f, a, mid);
        let (v2, e2) = gk15(&f, mid, b);
        pieces[worst] = (a, mid, v1, e1);
        pieces.push((mid, b, v2, e2));
    }
    pieces.iter().map(|p| p.2).sum()
}

/// Exact symbol error probability of the `m`-point simplex with codeword
/// energy `energy` in white Gaussian noise of standard deviation `sigma`.
/// Supports `m = 2` (closed form) and `m = 3` (quadrature).
pub fn exact_pe_simplex(m: usize, energy: f64, sigma: f64, quad: &QuadratureSpec) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid("sigma", "must be positive"));
    }
    match m {
        2 => Ok(q_function(energy.sqrt() / sigma)),
        3 => {
            let r = energy.sqrt();
            let pts = [
                [0.0, r],
                [-0.75f64.sqrt() * r, -0.5 * r],
                [0.75f64.sqrt() * r, -0.5 * r],
            ];
            Ok(exact_pe_planar(&pts, sigma, quad))
        }
        _ => Err(invalid("m", format!("exact probabilities cover m = 2 or 3, got {m}"))),
    }
}

/// Error probability of minimum-distance decoding for three equiprobable
/// points in the plane.
///
/// Seen from the sent point `x`, the decision cell is bounded by the
/// bisectors towards the other two points. In polar coordinates around `x`
/// the radial Gaussian integral is closed-form, so
/// `P(error | x) = (1/2pi) * int exp(-r(theta)^2 / 2 sigma^2) dtheta`, where
/// `r(theta)` is the distance to the cell boundary along `theta` (infinite
/// where the ray never leaves the cell). Integrating the escape mass directly
/// keeps full relative accuracy for tiny error probabilities.
pub fn exact_pe_planar(points: &[[f64; 2]; 3], sigma: f64, quad: &QuadratureSpec) -> f64 {
    let mut total = 0.0;
    for i in 0..3 {
        let x = points[i];
        // (half-distance, direction angle) towards each other point
        let walls: Vec<(f64, f64)> = (0..3)
            .filter(|&j| j != i)
            .map(|j| {
                let dx = points[j][0] - x[0];
                let dy = points[j][1] - x[1];
                (0.5 * dx.hypot(dy), dy.atan2(dx))
            })
            .collect();
        let escape = |theta: f64| {
            let mut r = f64::INFINITY;
            for &(h, phi) in &walls {
                let c = (theta - phi).cos();
                if c > 0.0 {
                    r = r.min(h / c);
                }
            }
            if r.is_finite() {
                (-r * r / (2.0 * sigma * sigma)).exp()
            } else {
                0.0
            }
        };
        let mut breaks = vec![-PI, PI];
        for &(_, phi) in &walls {
            for off in [-0.5 * PI, 0.0, 0.5 * PI] {
                let mut b = phi + off;
                while b > PI {
                    b -= 2.0 * PI;
                }
                while b < -PI {
                    b += 2.0 * PI;
                }
                breaks.push(b);
            }
        }
        let mid = 0.5 * (walls[0].1 + walls[1].1);
        breaks.push(mid);
        breaks.push(if mid > 0.0 { mid - PI } else { mid + PI });
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breaks.dedup();
        total += integrate(escape, &breaks, quad) / (2.0 * PI);
    }
    total / 3.0
}

/// Union bound for the feedback-free simplex: `(m-1) Q(d'/(2 sigma))` with
/// `es = E/sigma^2`.
pub fn simplex_union_bound(m: usize, es: f64) -> f64 {
    let mf = m as f64;
    let half = (2.0 * mf * es / (mf - 1.0)).sqrt() / 2.0;
    ((mf - 1.0) * q_function(half)).min(1.0)
}

/// Wrong immediate decision or true message outside the fed-back pair:
/// `m^2 Q(d5/sigma)` with `d5` taken from the 3-point geometry at stage
/// energy `lambda1 n P` and mapped to `m` points.
pub fn transmission_bound(m: usize, n: usize, snr: f64, lambda1: f64, s: f64) -> f64 {
    let es = lambda1 * n as f64 * snr;
    let d5_3 = 0.5 * es.sqrt() * (s * s - 2.0 * s + 4.0).sqrt();
    let mf = m as f64;
    (mf * mf * q_function(map_distance_3_to_m(d5_3, m))).min(1.0)
}

/// Chernoff form of [`transmission_bound`].
pub fn transmission_bound_chernoff(m: usize, n: usize, snr: f64, lambda1: f64, s: f64) -> f64 {
    let mf = m as f64;
    let g = s * s - 2.0 * s + 4.0;
    0.5 * mf * mf * (-(n as f64) * mf * lambda1 / (12.0 * (mf - 1.0)) * snr * g).exp()
}

/// Pair-feedback miscoordination: the union bound
/// `(C-1) Q(sqrt(n snr_fb C / (2(C-1))))` of a `C`-point simplex with
/// `C = m(m-1)/2`.
pub fn pair_feedback_bound(m: usize, n: usize, snr_fb: f64) -> f64 {
    let mf = m as f64;
    let c = mf * (mf - 1.0) / 2.0;
    ((c - 1.0) * q_function((n as f64 * snr_fb * c / (2.0 * (c - 1.0))).sqrt())).min(1.0)
}

/// Antipodal retransmission between the two fed-back candidates:
/// `(1/2) exp(-n snr/2 (1 - lambda1 (m-2)/(2(m-1))))`.
pub fn retransmission_bound(m: usize, n: usize, snr: f64, lambda1: f64) -> f64 {
    let mf = m as f64;
    0.5 * (-(n as f64) * snr / 2.0 * (1.0 - lambda1 * (mf - 2.0) / (2.0 * (mf - 1.0)))).exp()
}

/// Receiver NACK probability of the building block,
/// `(m-1)/2 exp(-es (1-t)^2 m / (4(m-1)))`, where `es` is the stage-one
/// codeword energy over the noise variance (`n P / sigma^2` for a block that
/// spends `nP` there).
pub fn nack_bound(m: usize, es: f64, t: f64) -> f64 {
    let mf = m as f64;
    0.5 * (mf - 1.0) * (-es * (1.0 - t).powi(2) * mf / (4.0 * (mf - 1.0))).exp()
}

/// Wrong decision on the ACK path, `(m-1)/2 exp(-es (1+t)^2 m / (4(m-1)))`.
pub fn ack_error_bound(m: usize, es: f64, t: f64) -> f64 {
    let mf = m as f64;
    0.5 * (mf - 1.0) * (-es * (1.0 + t).powi(2) * mf / (4.0 * (mf - 1.0))).exp()
}

/// Operating point of one building-block invocation, enough to bound every
/// way it can fail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockParams {
    pub m: usize,
    /// Stage-one energy over forward noise variance.
    pub es: f64,
    pub t: f64,
    pub sigma_fwd: f64,
    pub sigma_fb: f64,
    /// Amplitude of the NACK feedback symbol.
    pub fb_amplitude: f64,
    /// Amplitude of the index-location retransmission symbol.
    pub retx_amplitude: f64,
    pub threshold: f64,
}

/// Total error bound of a building block: ACK-path errors plus, on a NACK,
/// the feedback symbol falling under the threshold, the retransmission slot
/// falling under it, or a silent slot rising above it. A transmitter false
/// alarm on ACK is harmless because the receiver ignores the slots.
pub fn block_error_bound(p: &BlockParams) -> f64 {
    let nack = nack_bound(p.m, p.es, p.t).min(1.0);
    let lost = q_function((p.fb_amplitude - p.threshold) / p.sigma_fb)
        + q_function((p.retx_amplitude - p.threshold) / p.sigma_fwd)
        + (p.m as f64 - 1.0) * q_function(p.threshold / p.sigma_fwd);
    (ack_error_bound(p.m, p.es, p.t) + nack * lost.min(1.0)).min(1.0)
}

/// Bound on a failed index-location correction that was triggered with
/// probability at most `p_trigger`.
pub fn correction_failure_bound(m: usize, p_trigger: f64, amplitude: f64, threshold: f64, sigma: f64) -> f64 {
    let miss = q_function((amplitude - threshold) / sigma);
    let false_slot = m as f64 * q_function(threshold / sigma);
    (p_trigger.min(1.0) * miss + false_slot).min(1.0)
}

/// Which scheme a bound request refers to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundRequest {
    Simplex { m: usize, n: usize, snr: f64 },
    ActiveAs { m: usize, n: usize, snr_fwd: f64, snr_fb: f64, s: f64 },
    BuildingBlock(BlockParams),
    /// Forward block `a`, feedback block `b`, then an index-location
    /// correction on the forward channel.
    ExpScheme {
        a: BlockParams,
        b: BlockParams,
        correction_amplitude: f64,
        threshold: f64,
        sigma_fwd: f64,
    },
}

/// Per-event bounds; events a scheme does not have are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct EventBounds {
    pub stage1: Option<f64>,
    pub feedback_miscoord: Option<f64>,
    pub retransmission: Option<f64>,
    pub nack: Option<f64>,
    pub ack_path: Option<f64>,
    pub nack_path: Option<f64>,
}

pub fn analytic_event_bounds(req: &BoundRequest) -> EventBounds {
    match *req {
        BoundRequest::Simplex { m, n, snr } => EventBounds {
            stage1: Some(simplex_union_bound(m, n as f64 * snr)),
            ..Default::default()
        },
        BoundRequest::ActiveAs { m, n, snr_fwd, snr_fb, s } => {
            let l1 = crate::analytic::optimal_lambda1(m, s);
            EventBounds {
                stage1: Some(transmission_bound(m, n, snr_fwd, l1, s)),
                feedback_miscoord: Some(pair_feedback_bound(m, n, snr_fb)),
                retransmission: Some(retransmission_bound(m, n, snr_fwd, l1)),
                ..Default::default()
            }
        }
        BoundRequest::BuildingBlock(p) => {
            let nack = nack_bound(p.m, p.es, p.t).min(1.0);
            EventBounds {
                nack: Some(nack),
                ack_path: Some(ack_error_bound(p.m, p.es, p.t).min(1.0)),
                // a NACK-path error needs a NACK first
                nack_path: Some(nack),
                ..Default::default()
            }
        }
        BoundRequest::ExpScheme { a, b, correction_amplitude, threshold, sigma_fwd } => EventBounds {
            // the transmitter must misread a wrong W' as correct
            feedback_miscoord: Some(block_error_bound(&b)),
            retransmission: Some(correction_failure_bound(
                a.m,
                block_error_bound(&a),
                correction_amplitude,
                threshold,
                sigma_fwd,
            )),
            ..Default::default()
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // reference values computed independently at 50 significant digits
    const Q_REF: [(f64, f64); 8] = [
        (0.0, 0.5),
        (1.0, 0.15865525393145705),
        (-2.0, 0.97724986805182079),
        (3.0, 0.0013498980316300945),
        (6.0, 9.8658764503769814e-10),
        (10.0, 7.6198530241605261e-24),
        (20.0, 2.7536241186062337e-89),
        (37.0, 5.7255712225245768e-300),
    ];

    #[test]
    fn q_function_matches_reference() {
        for (x, want) in Q_REF {
            let got = q_function(x);
            assert!(((got - want) / want).abs() <= 1e-12, "Q({x}) = {got:e}, want {want:e}");
        }
    }

    #[test]
    fn q_function_below_chernoff() {
        for k in 1..400 {
            let x = k as f64 * 0.05;
            assert!(q_function(x) <= 0.5 * (-x * x / 2.0).exp());
        }
    }

    // m = 3 simplex error probabilities at 120 digits from the
    // orthogonal-signalling identity
    // P_e = int phi(y - a) Q(y) (2 - Q(y)) dy with a^2 = 3E/(2 sigma^2),
    // integrated as an error mass so the tiny values keep their digits
    const PE3_REF: [(f64, f64); 6] = [
        (1.0, 0.30353199224155652),
        (9.0, 0.0089207710261507908),
        (16.0, 0.00052314628071688576),
        (48.0, 1.9727859312687003e-9),
        (100.0, 4.7071395840884852e-18),
        (400.0, 3.2943623833140411541e-67),
    ];

    #[test]
    fn exact_three_point_matches_reference() {
        let quad = QuadratureSpec::default();
        for (es, want) in PE3_REF {
            let got = exact_pe_simplex(3, es, 1.0, &quad).unwrap();
            assert!(((got - want) / want).abs() < 1e-8, "es={es}: {got:e} vs {want:e}");
        }
    }

    #[test]
    fn exact_binary_is_q() {
        let quad = QuadratureSpec::default();
        let got = exact_pe_simplex(2, 9.0, 1.0, &quad).unwrap();
        assert!((got - 0.0013498980316300945).abs() < 1e-15);
        assert!(exact_pe_simplex(4, 1.0, 1.0, &quad).is_err());
        assert!(exact_pe_simplex(3, 1.0, 1e-3, &quad).unwrap() < 1e-100);
    }

    #[test]
    fn exact_three_point_is_bracketed() {
        let quad = QuadratureSpec::default();
        for es in [0.5, 2.0, 9.0, 30.0] {
            let pe = exact_pe_simplex(3, es, 1.0, &quad).unwrap();
            let half = (3.0 * es).sqrt() / 2.0;
            assert!(pe >= q_function(half));
            assert!(pe <= 2.0 * q_function(half));
        }
    }

    #[test]
    fn rotated_triangles_agree() {
        let quad = QuadratureSpec::default();
        let base = exact_pe_simplex(3, 6.0, 1.0, &quad).unwrap();
        for angle in [0.37, 2.9, -1.234] {
            let (c, s) = (f64::cos(angle), f64::sin(angle));
            let r = 6f64.sqrt();
            let raw = [[0.0, r], [-0.75f64.sqrt() * r, -0.5 * r], [0.75f64.sqrt() * r, -0.5 * r]];
            let rot = raw.map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]);
            let got = exact_pe_planar(&rot, 1.0, &quad);
            assert!((got - base).abs() < 1e-8 * base.max(1e-300) + 1e-15);
        }
    }

    #[test]
    fn finite_n_exponent_approaches_feedback_free_value() {
        let quad = QuadratureSpec::default();
        let mut prev = 0.0;
        for n in [10usize, 25, 50, 100, 200] {
            let pe = exact_pe_simplex(3, 2.0 * n as f64, 1.0, &quad).unwrap();
            let neg_log = -pe.ln();
            assert!(neg_log > prev);
            prev = neg_log;
        }
        let at200 = prev / 200.0;
        assert!((at200 - 0.75).abs() / 0.75 < 0.08);
        assert!((at200 - 0.765404942958736).abs() < 1e-8);
    }

    #[test]
    fn bound_examples() {
        // es * 3/8 = 10 at t = 0 and m = 3
        let v = nack_bound(3, 80.0 / 3.0, 0.0);
        assert!((v - (-10f64).exp()).abs() < 1e-18);
        assert!((v - 4.539992976248485e-5).abs() < 1e-15);
        let r = retransmission_bound(3, 10, 1.5, 0.0);
        assert!((r - 0.5 * (-7.5f64).exp()).abs() < 1e-18);
        // Chernoff form dominates the Q form
        for s in [0.0, 0.3, 0.8, 1.0] {
            let l1 = crate::analytic::optimal_lambda1(4, s);
            assert!(transmission_bound(4, 20, 2.0, l1, s) <= transmission_bound_chernoff(4, 20, 2.0, l1, s));
        }
    }
}
