//! Simplex codebooks and the decision regions used by the schemes.
//!
//! A simplex code places `m` equal-energy, equidistant points around the
//! origin. Codeword `i` is built in `R^m` as `a (e_i - 1/m)` and expressed in
//! the Helmert basis of the centred subspace, so coordinate `k` of codeword
//! `i` is `a / sqrt((k+1)(k+2))` for `i <= k`, `-(k+1) a / sqrt((k+1)(k+2))`
//! for `i == k+1`, and zero otherwise.
//!
//! Because every codeword has the same norm, nearest-codeword questions reduce
//! to comparing correlations `g_i = <y, x_i>`; all region tests below use that.

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexCode {
    m: usize,
    energy: f64,
    dim: usize,
    /// Row-major `m x dim`.
    codewords: Vec<f64>,
}

impl SimplexCode {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn codeword(&self, i: usize) -> &[f64] {
        &self.codewords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn codewords(&self) -> impl Iterator<Item = &[f64]> {
        self.codewords.chunks_exact(self.dim.max(1)).take(self.m)
    }

    /// Nominal distance between any two codewords.
    pub fn pairwise_distance(&self) -> f64 {
        pairwise_distance(self)
    }

    /// Writes `<y, x_i>` into `g[i]`. Only the first `m - 1` coordinates can
    /// be non-zero, so padding dimensions are skipped.
    pub fn correlate(&self, y: &[f64], g: &mut [f64]) {
        let active = (self.m - 1).min(self.dim);
        for (i, gi) in g.iter_mut().enumerate().take(self.m) {
            let x = &self.codewords[i * self.dim..i * self.dim + active];
            *gi = x.iter().zip(y).map(|(a, b)| a * b).sum();
        }
    }

    /// Squared Euclidean norm of codeword `i` as stored.
    pub fn codeword_energy(&self, i: usize) -> f64 {
        self.codeword(i).iter().map(|v| v * v).sum()
    }

    /// Shrinks codewords by whole ulps until each stored squared norm is at
    /// most `energy`. Used where a power budget must hold exactly in floating
    /// point.
    pub fn clamp_to_budget(mut self) -> Self {
        let budget = self.energy;
        for i in 0..self.m {
            let row = &mut self.codewords[i * self.dim..(i + 1) * self.dim];
            while row.iter().map(|v| v * v).sum::<f64>() > budget {
                for v in row.iter_mut() {
                    *v *= 1.0 - f64::EPSILON;
                }
            }
        }
        self
    }
}

/// Builds the centred simplex with `m` codewords of squared norm `energy` in
/// `dim >= m - 1` dimensions. Extra dimensions are zero.
pub fn build_simplex(m: usize, energy: f64, dim: usize) -> Result<SimplexCode> {
    if m < 2 {
        return Err(invalid("m", format!("need at least 2 codewords, got {m}")));
    }
    if !(energy >= 0.0) || !energy.is_finite() {
        return Err(invalid("energy", format!("must be finite and >= 0, got {energy}")));
    }
    if dim < m - 1 {
        return Err(Error::DoesNotFit(format!(
            "a {m}-point simplex needs {} dimensions, got {dim}",
            m - 1
        )));
    }
    let a = (energy * m as f64 / (m as f64 - 1.0)).sqrt();
    let mut codewords = vec![0.0; m * dim];
    for k in 0..m - 1 {
        let kk = (k + 1) as f64;
        let h = a / (kk * (kk + 1.0)).sqrt();
        for i in 0..=k {
            codewords[i * dim + k] = h;
        }
        codewords[(k + 1) * dim + k] = -kk * h;
    }
    Ok(SimplexCode {
        m,
        energy,
        dim,
        codewords,
    })
}

/// `sqrt(2 m E / (m - 1))`.
pub fn pairwise_distance(code: &SimplexCode) -> f64 {
    let m = code.m as f64;
    (2.0 * m * code.energy / (m - 1.0)).sqrt()
}

/// Rescales a distance measured on a 3-point simplex to the `m`-point simplex
/// of the same codeword energy.
pub fn map_distance_3_to_m(d3: f64, m: usize) -> f64 {
    let m = m as f64;
    d3 * (2.0 * m / (3.0 * (m - 1.0))).sqrt()
}

/// Index of the largest correlation; lowest index wins ties.
pub(crate) fn argmax(g: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..g.len() {
        if g[i] > g[best] {
            best = i;
        }
    }
    best
}

/// Indices of the two largest correlations as `(smaller, larger)`. Ties go
/// to the lower index.
pub(crate) fn top_two(g: &[f64]) -> (usize, usize) {
    let first = argmax(g);
    let mut second = usize::MAX;
    for (i, &gi) in g.iter().enumerate() {
        if i == first {
            continue;
        }
        if second == usize::MAX || gi > g[second] {
            second = i;
        }
    }
    (first.min(second), first.max(second))
}

/// Nearest codeword, lowest index on ties.
pub fn min_distance_decode(code: &SimplexCode, y: &[f64]) -> usize {
    let mut g = vec![0.0; code.m];
    code.correlate(y, &mut g);
    argmax(&g)
}

/// The two nearest codewords as `(smaller, larger)`.
pub fn two_closest(code: &SimplexCode, y: &[f64]) -> Result<(usize, usize)> {
    if code.m < 3 {
        return Err(invalid("m", "two_closest needs at least 3 codewords"));
    }
    let mut g = vec![0.0; code.m];
    code.correlate(y, &mut g);
    Ok(top_two(&g))
}

/// Lexicographic label of the unordered pair `a < b` among `m` messages.
pub fn pair_index(a: usize, b: usize, m: usize) -> usize {
    debug_assert!(a < b && b < m);
    a * (2 * m - a - 1) / 2 + (b - a - 1)
}

/// Inverse of [`pair_index`].
pub fn pair_from_index(k: usize, m: usize) -> (usize, usize) {
    let mut a = 0;
    let mut start = 0;
    loop {
        let row = m - a - 1;
        if k < start + row {
            return (a, a + 1 + (k - start));
        }
        start += row;
        a += 1;
    }
}

/// Geometry of the immediate-decision regions `B_w`.
///
/// `B_w` is the part of the Voronoi cell of `w` that lies within a slab of
/// half-width `s d'/4` around every bisector between two *other* codewords,
/// i.e. a tube around the axis through `x_w`. For `m = 3` the tube meets each
/// facet of the cell out to distance `d4 = (s/2) d1` from the centroid, so the
/// nearest point of a wrong `B` is `d5` away from the sent codeword. Larger
/// `s` widens the tube; `s = 0` leaves only the axis itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtectionGeometry {
    pub s: f64,
    /// Codeword norm.
    pub d1: f64,
    pub d4: f64,
    pub d5: f64,
    pub dprime: f64,
}

impl ProtectionGeometry {
    pub fn new(code: &SimplexCode, s: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&s) {
            return Err(invalid("s", format!("must lie in [0, 1], got {s}")));
        }
        let d1 = code.energy.sqrt();
        Ok(Self {
            s,
            d1,
            d4: 0.5 * s * d1,
            d5: 0.5 * d1 * (s * s - 2.0 * s + 4.0).sqrt(),
            dprime: pairwise_distance(code),
        })
    }

    /// Half-width of the slab around each bisector.
    pub fn tube_half_width(&self) -> f64 {
        self.s * self.dprime / 4.0
    }

    /// Bound on `max g - min g` over the other codewords, in correlation
    /// units. The small slack keeps points that sit exactly on the axis (for
    /// example the codeword itself at `s = 0`) inside despite rounding.
    pub(crate) fn correlation_spread(&self) -> f64 {
        self.tube_half_width() * self.dprime + 1e-12 * self.dprime * self.dprime
    }
}

/// Decision from already-computed correlations.
pub(crate) fn protection_from_correlations(g: &[f64], spread: f64) -> Option<usize> {
    let w = argmax(g);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, &gi) in g.iter().enumerate() {
        if i == w {
            continue;
        }
        // strictly inside the cell: a tie on a facet is ambiguous
        if gi >= g[w] {
            return None;
        }
        lo = lo.min(gi);
        hi = hi.max(gi);
    }
    if hi - lo <= spread {
        Some(w)
    } else {
        None
    }
}

/// `Some(w)` if `y` falls in `B_w`, `None` if the receiver needs feedback.
pub fn protection_region(code: &SimplexCode, y: &[f64], geom: &ProtectionGeometry) -> Option<usize> {
    let mut g = vec![0.0; code.m];
    code.correlate(y, &mut g);
    protection_from_correlations(&g, geom.correlation_spread())
}

/// Widths of the NACK bands around each pairwise decision boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NackGeometry {
    pub t: f64,
    pub d_a: f64,
    pub d_b: f64,
    pub dprime: f64,
}

impl NackGeometry {
    pub fn new(code: &SimplexCode, t: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&t) {
            return Err(invalid("t", format!("must lie in [0, 1), got {t}")));
        }
        let dprime = pairwise_distance(code);
        Ok(Self {
            t,
            d_a: 0.5 * (1.0 - t) * dprime,
            d_b: 0.5 * (1.0 + t) * dprime,
            dprime,
        })
    }

    /// Required margin `g_i - g_j` for `y` to sit in `A_i`.
    pub(crate) fn correlation_margin(&self) -> f64 {
        // <y - x_i, x_j - x_i> = g_j - g_i + d'^2/2 must stay <= d_A d'
        0.5 * self.dprime * self.dprime - self.d_a * self.dprime
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckDecision {
    Ack(usize),
    Nack,
}

pub(crate) fn ack_from_correlations(g: &[f64], margin: f64) -> AckDecision {
    let i = argmax(g);
    for (j, &gj) in g.iter().enumerate() {
        if j != i && g[i] - gj < margin {
            return AckDecision::Nack;
        }
    }
    AckDecision::Ack(i)
}

/// `Ack(i)` iff, for every `j != i`, `y` has not crossed the hyperplane at
/// distance `d_A` from `x_i` towards `x_j`.
pub fn ack_region(code: &SimplexCode, y: &[f64], nack: &NackGeometry) -> AckDecision {
    let mut g = vec![0.0; code.m];
    code.correlate(y, &mut g);
    ack_from_correlations(&g, nack.correlation_margin())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn three_point_code_matches_reference_triangle() {
        let code = build_simplex(3, 1.0, 2).unwrap();
        assert!(close(code.pairwise_distance(), 3f64.sqrt(), 1e-12));
        // the reference triangle (0,1), (-sqrt3/2,-1/2), (sqrt3/2,-1/2) has the
        // same Gram matrix, so it is the same code up to an orthogonal map
        let reference = [[0.0, 1.0], [-0.75f64.sqrt(), -0.5], [0.75f64.sqrt(), -0.5]];
        for i in 0..3 {
            for j in 0..3 {
                let ours: f64 = code.codeword(i).iter().zip(code.codeword(j)).map(|(a, b)| a * b).sum();
                let theirs = reference[i][0] * reference[j][0] + reference[i][1] * reference[j][1];
                assert!(close(ours, theirs, 1e-12), "gram[{i}][{j}]");
            }
        }
    }

    #[test]
    fn binary_code_is_antipodal() {
        let code = build_simplex(2, 2.5, 1).unwrap();
        assert!(close(code.codeword(0)[0], 2.5f64.sqrt(), 1e-14));
        assert!(close(code.codeword(1)[0], -(2.5f64.sqrt()), 1e-14));
        assert!(close(code.pairwise_distance(), 2.0 * 2.5f64.sqrt(), 1e-14));
    }

    #[test]
    fn four_point_distance() {
        let code = build_simplex(4, 1.0, 3).unwrap();
        assert!(close(code.pairwise_distance(), (8.0f64 / 3.0).sqrt(), 1e-12));
        let measured: f64 = code
            .codeword(0)
            .iter()
            .zip(code.codeword(1))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(close(measured, 1.632993161855452, 1e-12));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(build_simplex(1, 1.0, 3).is_err());
        assert!(matches!(build_simplex(4, 1.0, 2), Err(Error::DoesNotFit(_))));
        assert!(build_simplex(3, -1.0, 2).is_err());
    }

    #[test]
    fn padding_is_zero() {
        let code = build_simplex(3, 2.0, 5).unwrap();
        for w in code.codewords() {
            assert_eq!(&w[2..], &[0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn distance_mapping() {
        assert!(close(map_distance_3_to_m(3f64.sqrt(), 3), 3f64.sqrt(), 1e-15));
        assert!(close(map_distance_3_to_m(3f64.sqrt(), 4), (8.0f64 / 3.0).sqrt(), 1e-14));
        assert!(close(map_distance_3_to_m(1.0, 2), (4.0f64 / 3.0).sqrt(), 1e-15));
    }

    #[test]
    fn decoding_examples() {
        let bin = build_simplex(2, 1.0, 1).unwrap();
        assert_eq!(min_distance_decode(&bin, &[-0.1]), 1);
        let code = build_simplex(3, 1.0, 2).unwrap();
        let mid: Vec<f64> = code.codeword(0).iter().zip(code.codeword(1)).map(|(a, b)| 0.5 * (a + b)).collect();
        assert_eq!(min_distance_decode(&code, &mid), 0);
        assert_eq!(two_closest(&code, &[0.0, 0.0]).unwrap(), (0, 1));
        let nudged: Vec<f64> = code.codeword(1).iter().zip(code.codeword(2)).map(|(a, b)| 0.9 * a + 0.1 * b).collect();
        assert_eq!(two_closest(&code, &nudged).unwrap(), (1, 2));
        // far out along the 0-1 bisector, away from codeword 2
        let far: Vec<f64> = code.codeword(2).iter().map(|v| -5.0 * v).collect();
        assert_eq!(two_closest(&code, &far).unwrap(), (0, 1));
        assert!(two_closest(&bin, &[0.3]).is_err());
    }

    #[test]
    fn pair_labels_roundtrip() {
        for m in 3..10 {
            let mut k = 0;
            for a in 0..m {
                for b in a + 1..m {
                    assert_eq!(pair_index(a, b, m), k);
                    assert_eq!(pair_from_index(k, m), (a, b));
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn protection_examples() {
        let code = build_simplex(3, 1.0, 2).unwrap();
        for s in [0.0, 0.4, 0.99] {
            let geom = ProtectionGeometry::new(&code, s).unwrap();
            assert_eq!(protection_region(&code, code.codeword(0), &geom), Some(0));
            assert_eq!(protection_region(&code, &[0.0, 0.0], &geom), None);
        }
        let geom = ProtectionGeometry::new(&code, 0.5).unwrap();
        assert!(close(geom.d4, 0.25, 1e-15));
        assert!(close(geom.d5 * geom.d5, 0.25 * (0.25 - 1.0 + 4.0), 1e-15));
        assert!(close(geom.tube_half_width(), 0.75f64.sqrt() * geom.d4, 1e-14));
    }

    #[test]
    fn protection_tube_meets_facet_at_d4() {
        // Walk along the facet between codewords 0 and 1, starting at the
        // centroid. Points on the facet are ties, so step slightly into cell 1.
        let code = build_simplex(3, 1.0, 2).unwrap();
        let s = 0.6;
        let geom = ProtectionGeometry::new(&code, s).unwrap();
        let x0 = code.codeword(0);
        let x1 = code.codeword(1);
        let x2 = code.codeword(2);
        let norm2 = (x2[0] * x2[0] + x2[1] * x2[1]).sqrt();
        let dir = [-x2[0] / norm2, -x2[1] / norm2];
        let into1 = [x1[0] - x0[0], x1[1] - x0[1]];
        let inside = |r: f64| {
            let y = [r * dir[0] + 1e-9 * into1[0], r * dir[1] + 1e-9 * into1[1]];
            protection_region(&code, &y, &geom) == Some(1)
        };
        assert!(inside(geom.d4 * 0.999));
        assert!(!inside(geom.d4 * 1.001));
        // and that facet point is d5 away from codeword 0
        let p = [geom.d4 * dir[0], geom.d4 * dir[1]];
        let d = ((p[0] - x0[0]).powi(2) + (p[1] - x0[1]).powi(2)).sqrt();
        assert!(close(d, geom.d5, 1e-12));
    }

    #[test]
    fn ack_examples() {
        let code = build_simplex(3, 1.0, 2).unwrap();
        let nack = NackGeometry::new(&code, 0.3).unwrap();
        for i in 0..3 {
            assert_eq!(ack_region(&code, code.codeword(i), &nack), AckDecision::Ack(i));
        }
        let mid: Vec<f64> = code.codeword(0).iter().zip(code.codeword(1)).map(|(a, b)| 0.5 * (a + b)).collect();
        assert_eq!(ack_region(&code, &mid, &nack), AckDecision::Nack);

        let nack = NackGeometry::new(&code, 0.95).unwrap();
        let dp = nack.dprime;
        let x0 = code.codeword(0);
        let x1 = code.codeword(1);
        let u: Vec<f64> = x0.iter().zip(x1).map(|(a, b)| (b - a) / dp).collect();
        let past: Vec<f64> = x0.iter().zip(&u).map(|(a, b)| a + 1.01 * nack.d_a * b).collect();
        let before: Vec<f64> = x0.iter().zip(&u).map(|(a, b)| a + 0.99 * nack.d_a * b).collect();
        assert_eq!(ack_region(&code, &past, &nack), AckDecision::Nack);
        assert_eq!(ack_region(&code, &before, &nack), AckDecision::Ack(0));
        assert!(NackGeometry::new(&code, 1.0).is_err());
    }

    #[test]
    fn clamp_keeps_norms_within_budget() {
        for m in 2..20 {
            let code = build_simplex(m, 7.3, m - 1).unwrap().clamp_to_budget();
            for i in 0..m {
                assert!(code.codeword_energy(i) <= 7.3);
            }
        }
    }
}
