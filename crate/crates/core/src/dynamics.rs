//! Minimal base systems at desk scale: irrational circle rotations and torus
//! translations, orbit grids standing in for the sup over the whole space,
//! Rokhlin castles for circle rotations, and visit-frequency counting.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// A point of the circle [0,1) or the torus [0,1)^m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point(pub SmallVec<[f64; 4]>);

impl Point {
    pub fn circle(x: f64) -> Self {
        Point(SmallVec::from_slice(&[frac(x)]))
    }

    pub fn torus(coords: &[f64]) -> Self {
        Point(coords.iter().map(|&c| frac(c)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// First coordinate; the whole point in the circle case.
    pub fn scalar(&self) -> f64 {
        self.0[0]
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

#[inline]
pub fn frac(x: f64) -> f64 {
    let f = x.rem_euclid(1.0);
    // rem_euclid can return exactly 1.0 for tiny negative inputs
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

/// Wraparound distance on the circle.
#[inline]
pub fn circle_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Largest denominator checked when rejecting nearly-rational parameters.
const RATIONALITY_DENOM_MAX: u64 = 10_000;
/// A parameter within this distance of p/q with q ≤ RATIONALITY_DENOM_MAX is
/// rejected as rational.
const RATIONALITY_TOL: f64 = 1e-12;

/// Base dynamical system: an invertible isometry of the circle or torus with
/// dense orbits (minimality enforced as a desk-scale surrogate at
/// construction time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaseSystem {
    Rotation { alpha: f64 },
    Torus { alpha: Vec<f64> },
}

impl BaseSystem {
    /// Circle rotation by an irrational α ∈ (0,1).
    pub fn circle(alpha: f64) -> Result<Self> {
        if !(0.0 < alpha && alpha < 1.0) || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "rotation number must lie in (0,1), got {alpha}"
            )));
        }
        check_irrational(alpha)?;
        Ok(BaseSystem::Rotation { alpha })
    }

    /// Torus translation by a rationally independent vector.
    pub fn torus(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::InvalidArgument("empty translation vector".into()));
        }
        for &a in &alpha {
            if !(0.0 < a && a < 1.0) || !a.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "translation components must lie in (0,1), got {a}"
                )));
            }
            check_irrational(a)?;
        }
        check_rational_independence(&alpha)?;
        Ok(BaseSystem::Torus { alpha })
    }

    pub fn space_dim(&self) -> usize {
        match self {
            BaseSystem::Rotation { .. } => 1,
            BaseSystem::Torus { alpha } => alpha.len(),
        }
    }

    pub fn is_circle(&self) -> bool {
        matches!(self, BaseSystem::Rotation { .. })
    }

    pub fn translation(&self) -> &[f64] {
        match self {
            BaseSystem::Rotation { alpha } => std::slice::from_ref(alpha),
            BaseSystem::Torus { alpha } => alpha,
        }
    }

    pub fn origin(&self) -> Point {
        Point(self.translation().iter().map(|_| 0.0).collect())
    }

    /// T^n(x), computed in closed form as frac(x + n·α) componentwise.
    /// Total for every integer n (negative n iterates the inverse).
    pub fn step(&self, x: &Point, n: i64) -> Point {
        let alpha = self.translation();
        Point(
            x.coords()
                .iter()
                .zip(alpha)
                .map(|(&c, &a)| frac(c + n as f64 * a))
                .collect(),
        )
    }

    /// One forward step in place.
    pub fn advance(&self, x: &mut Point) {
        for (c, &a) in x.0.iter_mut().zip(self.translation()) {
            *c = frac(*c + a);
        }
    }

    /// The orbit {T^j(0)} of the origin, j = 0..count−1; by minimality it is
    /// asymptotically dense and serves as the sampling grid for all
    /// sup-over-X surrogates.
    pub fn sample_grid(&self, count: usize) -> Vec<Point> {
        let mut out = Vec::with_capacity(count);
        let mut p = self.origin();
        for _ in 0..count {
            out.push(p.clone());
            self.advance(&mut p);
        }
        out
    }

    /// Worst-case distance from the orbit grid {T^j(0)}, j < horizon, to the
    /// space: the minimality surrogate measured at configuration time.
    pub fn fill_distance(&self, horizon: usize) -> f64 {
        match self {
            BaseSystem::Rotation { .. } => {
                let mut xs: Vec<f64> =
                    self.sample_grid(horizon).iter().map(|p| p.scalar()).collect();
                xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mut max_gap: f64 = 1.0 - xs[xs.len() - 1] + xs[0];
                for w in xs.windows(2) {
                    max_gap = max_gap.max(w[1] - w[0]);
                }
                max_gap / 2.0
            }
            BaseSystem::Torus { alpha } => {
                // probe a uniform lattice against the orbit
                let m = alpha.len();
                let per_axis = (4096.0_f64.powf(1.0 / m as f64)).ceil() as usize;
                let orbit = self.sample_grid(horizon);
                let mut worst: f64 = 0.0;
                let mut probe = vec![0usize; m];
                loop {
                    let q: Vec<f64> =
                        probe.iter().map(|&i| i as f64 / per_axis as f64).collect();
                    let mut best = f64::INFINITY;
                    for p in &orbit {
                        let d = p
                            .coords()
                            .iter()
                            .zip(&q)
                            .map(|(&a, &b)| circle_dist(a, b).powi(2))
                            .sum::<f64>()
                            .sqrt();
                        if d < best {
                            best = d;
                        }
                    }
                    worst = worst.max(best);
                    // advance the mixed-radix probe counter
                    let mut axis = 0;
                    loop {
                        if axis == m {
                            return worst;
                        }
                        probe[axis] += 1;
                        if probe[axis] < per_axis {
                            break;
                        }
                        probe[axis] = 0;
                        axis += 1;
                    }
                }
            }
        }
    }

    /// Check the ε-fill surrogate for minimality at a given horizon.
    pub fn check_minimality(&self, horizon: usize, eps: f64) -> Result<()> {
        let fill = self.fill_distance(horizon);
        if fill <= eps {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "orbit of 0 does not {eps}-fill the space within {horizon} steps (fill distance {fill:.3e})"
            )))
        }
    }
}

fn check_irrational(alpha: f64) -> Result<()> {
    for q in 1..=RATIONALITY_DENOM_MAX {
        let qa = alpha * q as f64;
        if (qa - qa.round()).abs() < RATIONALITY_TOL * q as f64 {
            return Err(Error::InvalidArgument(format!(
                "{alpha} is within {RATIONALITY_TOL:e} of {}/{q}; pick an irrational parameter",
                qa.round() as i64
            )));
        }
    }
    Ok(())
}

/// Desk-scale rational-independence check: no small integer combination
/// k·α may come close to an integer.
fn check_rational_independence(alpha: &[f64]) -> Result<()> {
    const COEFF_MAX: i64 = 12;
    const TOL: f64 = 1e-9;
    let m = alpha.len();
    if m == 1 {
        return Ok(());
    }
    let mut k = vec![-COEFF_MAX; m];
    loop {
        if k.iter().any(|&c| c != 0) {
            let s: f64 = k.iter().zip(alpha).map(|(&c, &a)| c as f64 * a).sum();
            if (s - s.round()).abs() < TOL {
                return Err(Error::InvalidArgument(format!(
                    "translation vector is rationally dependent: {k:?}·α ≈ {}",
                    s.round()
                )));
            }
        }
        let mut axis = 0;
        loop {
            if axis == m {
                return Ok(());
            }
            k[axis] += 1;
            if k[axis] <= COEFF_MAX {
                break;
            }
            k[axis] = -COEFF_MAX;
            axis += 1;
        }
    }
}

/// A finite union of half-open arcs [start, start+len) on the circle, with
/// wraparound.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CircleSet {
    pub arcs: Vec<(f64, f64)>,
}

impl CircleSet {
    pub fn empty() -> Self {
        CircleSet { arcs: Vec::new() }
    }

    pub fn full() -> Self {
        CircleSet {
            arcs: vec![(0.0, 1.0)],
        }
    }

    /// Single arc [a, b) with a, b taken mod 1; b − a mod 1 gives the length
    /// (a == b yields the empty arc).
    pub fn arc(a: f64, b: f64) -> Self {
        let start = frac(a);
        let len = frac(b - a);
        if len == 0.0 {
            Self::empty()
        } else {
            CircleSet {
                arcs: vec![(start, len)],
            }
        }
    }

    pub fn push_arc(&mut self, start: f64, len: f64) {
        if len > 0.0 {
            self.arcs.push((frac(start), len.min(1.0)));
        }
    }

    pub fn union(mut self, other: &CircleSet) -> Self {
        self.arcs.extend_from_slice(&other.arcs);
        self
    }

    pub fn contains(&self, x: f64) -> bool {
        let x = frac(x);
        self.arcs.iter().any(|&(start, len)| {
            if len >= 1.0 {
                return true;
            }
            let offset = frac(x - start);
            offset < len
        })
    }

    /// Total length, counting overlaps once is NOT attempted; arcs are
    /// assumed disjoint by construction where this matters.
    pub fn total_length(&self) -> f64 {
        self.arcs.iter().map(|&(_, l)| l.min(1.0)).sum()
    }
}

/// Number of indices 0 ≤ j < n with the first coordinate of T^j(x) in V.
pub fn visit_count(base: &BaseSystem, v: &CircleSet, x: &Point, n: usize) -> usize {
    let mut p = x.clone();
    let mut count = 0;
    for _ in 0..n {
        if v.contains(p.scalar()) {
            count += 1;
        }
        base.advance(&mut p);
    }
    count
}

/// One castle base cell: an arc with the (constant) first-return time of its
/// points to the whole base set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CastleCell {
    pub start: f64,
    pub len: f64,
    pub height: usize,
}

impl CastleCell {
    pub fn contains(&self, x: f64) -> bool {
        frac(x - self.start) < self.len
    }
}

/// Rokhlin castle of a circle rotation: a base set (union of the cells)
/// whose towers T^j(cell), 0 ≤ j < height, tile the circle up to the finite
/// set of cell endpoints. Heights take at most two values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Castle {
    pub alpha: f64,
    pub cells: Vec<CastleCell>,
    /// Offset applied to the whole construction so that cell endpoints
    /// avoid a long prefix of the sampling orbit.
    pub offset: f64,
}

impl Castle {
    /// Index of the base cell containing x, if any.
    pub fn base_cell(&self, x: f64) -> Option<usize> {
        self.cells.iter().position(|c| c.contains(x))
    }

    pub fn in_base(&self, x: f64) -> bool {
        self.base_cell(x).is_some()
    }

    pub fn min_height(&self) -> usize {
        self.cells.iter().map(|c| c.height).min().unwrap_or(0)
    }

    pub fn max_height(&self) -> usize {
        self.cells.iter().map(|c| c.height).max().unwrap_or(0)
    }

    /// All floors (cell index, level, arc start, arc len).
    pub fn floors(&self) -> Vec<(usize, usize, f64, f64)> {
        let mut out = Vec::new();
        for (ci, cell) in self.cells.iter().enumerate() {
            for j in 0..cell.height {
                out.push((ci, j, frac(cell.start + j as f64 * self.alpha), cell.len));
            }
        }
        out
    }

    pub fn total_floor_length(&self) -> f64 {
        self.cells
            .iter()
            .map(|c| c.len * c.height as f64)
            .sum()
    }

    /// Brute-force first-return time of x to the base set (None if it does
    /// not return within max_steps). The oracle used by the tests.
    pub fn brute_force_return_time(&self, x: f64, max_steps: usize) -> Option<usize> {
        let mut p = frac(x);
        for j in 1..=max_steps {
            p = frac(p + self.alpha);
            if self.in_base(p) {
                return Some(j);
            }
        }
        None
    }
}

/// Signed continued-fraction data of α: convergents p_k/q_k and the signed
/// errors β_k = q_k·α − p_k (alternating in sign, shrinking in magnitude).
pub(crate) fn convergents(alpha: f64, q_cap: u64) -> Vec<(u64, i64, f64)> {
    // returns (q_k, p_k, beta_k) starting at k = 0: q_0 = 1, p_0 = floor(alpha) = 0
    let mut out = Vec::new();
    let mut p_prev: i64 = 1; // p_{-1}
    let mut q_prev: u64 = 0; // q_{-1}
    let mut p: i64 = 0; // p_0 for alpha in (0,1)
    let mut q: u64 = 1; // q_0
    out.push((q, p, alpha * q as f64 - p as f64));
    let mut x = alpha;
    loop {
        if x.abs() < 1e-15 {
            break;
        }
        let inv = 1.0 / x;
        let a = inv.floor();
        x = inv - a;
        let a = a as i64;
        let q_next = q
            .checked_mul(a as u64)
            .and_then(|v| v.checked_add(q_prev));
        let q_next = match q_next {
            Some(v) => v,
            None => break,
        };
        let p_next = p * a + p_prev;
        p_prev = p;
        q_prev = q;
        p = p_next;
        q = q_next;
        out.push((q, p, alpha * q as f64 - p as f64));
        if q > q_cap {
            break;
        }
    }
    out
}

/// Seed offset for castle placement; nudged deterministically if an endpoint
/// lands on the sampled orbit prefix.
const CASTLE_OFFSET_SEED: f64 = 0.318_309_886_183_790_7; // 1/π
const CASTLE_ORBIT_AVOIDANCE: usize = 1_000_000;
const CASTLE_ENDPOINT_CLEARANCE: f64 = 1e-9;

/// Build a two-height Rokhlin castle for a circle rotation with every tower
/// height ≥ n_min.
///
/// Construction: with p_k/q_k the continued-fraction convergents of α and
/// β_k = q_k·α − p_k, the circle is tiled by the towers over
/// J_{k−1} (the arc between 0 and β_{k−1}, height q_k) and
/// J_k (the arc between 0 and β_k, height q_{k−1}).
/// Choosing the smallest k with q_{k−1} ≥ n_min gives two heights
/// {q_{k−1}, q_k}, both ≥ n_min. The whole picture is translated by an
/// offset chosen so the three cell endpoints stay clear of the first 10^6
/// points of the sampling orbit of 0.
pub fn build_castle(base: &BaseSystem, n_min: usize) -> Result<Castle> {
    let alpha = match base {
        BaseSystem::Rotation { alpha } => *alpha,
        BaseSystem::Torus { .. } => {
            return Err(Error::Unsupported(
                "castle construction is implemented for circle rotations only".into(),
            ))
        }
    };
    if n_min == 0 {
        return Err(Error::InvalidArgument("castle requires N >= 1".into()));
    }
    let convs = convergents(alpha, (n_min as u64).saturating_mul(64).max(1 << 20));
    // smallest k >= 1 with q_{k-1} >= n_min
    let k = (1..convs.len())
        .find(|&k| convs[k - 1].0 >= n_min as u64)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "no convergent denominator reaches N = {n_min} for alpha = {alpha}"
            ))
        })?;
    let (q_lo, _, beta_lo) = convs[k - 1];
    let (q_hi, _, beta_hi) = convs[k];

    let offset = choose_castle_offset(alpha, &[0.0, beta_lo, beta_hi])?;

    // J_{k-1}: arc between 0 and beta_{k-1}, tower of height q_k
    // J_k:     arc between 0 and beta_k, tower of height q_{k-1}
    let cell = |beta: f64, height: u64| -> CastleCell {
        let len = beta.abs();
        let start = if beta >= 0.0 { offset } else { frac(offset + beta) };
        CastleCell {
            start,
            len,
            height: height as usize,
        }
    };
    let cells = vec![cell(beta_lo, q_hi), cell(beta_hi, q_lo)];
    Ok(Castle {
        alpha,
        cells,
        offset,
    })
}

fn choose_castle_offset(alpha: f64, endpoint_shifts: &[f64]) -> Result<f64> {
    let mut offset = CASTLE_OFFSET_SEED;
    'retry: for _ in 0..64 {
        // endpoints are offset + shift; orbit points are frac(j·alpha).
        // Walk the orbit once and check all endpoints.
        let mut orbit = 0.0;
        for _ in 0..CASTLE_ORBIT_AVOIDANCE {
            for &s in endpoint_shifts {
                if circle_dist(orbit, frac(offset + s)) < CASTLE_ENDPOINT_CLEARANCE {
                    offset = frac(offset + 1.234_567e-5 * std::f64::consts::SQRT_2);
                    continue 'retry;
                }
            }
            orbit = frac(orbit + alpha);
        }
        return Ok(offset);
    }
    Err(Error::Numerical(
        "could not place castle endpoints off the sampling orbit".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub const GOLDEN: f64 = 0.618_033_988_749_894_9;
    pub const SQRT2M1: f64 = 0.414_213_562_373_095_1;

    #[test]
    fn step_examples() {
        let base = BaseSystem::circle(GOLDEN).unwrap();
        let x0 = base.origin();
        assert_abs_diff_eq!(base.step(&x0, 1).scalar(), GOLDEN, epsilon = 1e-15);
        assert_eq!(base.step(&x0, 0), x0);
        assert_abs_diff_eq!(
            base.step(&x0, 2).scalar(),
            frac(2.0 * GOLDEN),
            epsilon = 1e-15
        );
        // inverse steps compose to the identity
        let p = base.step(&Point::circle(0.3), 5);
        assert_abs_diff_eq!(base.step(&p, -5).scalar(), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn grid_examples() {
        let base = BaseSystem::circle(GOLDEN).unwrap();
        let g = base.sample_grid(3);
        assert_eq!(g[0].scalar(), 0.0);
        assert_abs_diff_eq!(g[1].scalar(), GOLDEN, epsilon = 1e-15);
        assert_abs_diff_eq!(g[2].scalar(), frac(2.0 * GOLDEN), epsilon = 1e-14);

        let t = BaseSystem::torus(vec![GOLDEN, SQRT2M1]).unwrap();
        let g = t.sample_grid(2);
        assert_eq!(g[0].coords(), &[0.0, 0.0]);
        assert_abs_diff_eq!(g[1].coords()[0], GOLDEN, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1].coords()[1], SQRT2M1, epsilon = 1e-15);
    }

    #[test]
    fn rational_parameters_rejected() {
        assert!(BaseSystem::circle(0.5).is_err());
        assert!(BaseSystem::circle(3.0 / 7.0).is_err());
        assert!(BaseSystem::circle(GOLDEN).is_ok());
        assert!(BaseSystem::torus(vec![GOLDEN, GOLDEN]).is_err()); // dependent
        assert!(BaseSystem::torus(vec![GOLDEN, SQRT2M1]).is_ok());
    }

    #[test]
    fn orbit_fills_circle() {
        let base = BaseSystem::circle(GOLDEN).unwrap();
        base.check_minimality(4096, 16.0 / 4096.0).unwrap();
    }

    #[test]
    fn visit_count_edge_cases() {
        let base = BaseSystem::circle(GOLDEN).unwrap();
        let x = base.origin();
        assert_eq!(visit_count(&base, &CircleSet::full(), &x, 100), 100);
        assert_eq!(visit_count(&base, &CircleSet::empty(), &x, 100), 0);
        let v = CircleSet::arc(0.0, 0.1);
        let c = visit_count(&base, &v, &x, 1000) as f64 / 1000.0;
        assert!((0.08..=0.12).contains(&c), "frequency {c}");
    }

    #[test]
    fn equidistribution_at_long_horizon() {
        let base = BaseSystem::circle(GOLDEN).unwrap();
        let v = CircleSet::arc(0.2, 0.2 + 0.37);
        let n = 100_000;
        let c = visit_count(&base, &v, &base.origin(), n) as f64 / n as f64;
        assert!((c - 0.37).abs() < 5e-3, "frequency {c}");
    }

    #[test]
    fn castle_n1_covers_circle() {
        let base = BaseSystem::circle(GOLDEN).unwrap();
        let castle = build_castle(&base, 1).unwrap();
        assert!(castle.min_height() >= 1);
        assert!(castle.cells.len() <= 2);
        assert_abs_diff_eq!(castle.total_floor_length(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn golden_castle_heights() {
        let base = BaseSystem::circle(GOLDEN).unwrap();
        let castle = build_castle(&base, 5).unwrap();
        let mut heights: Vec<usize> = castle.cells.iter().map(|c| c.height).collect();
        heights.sort();
        assert_eq!(heights, vec![5, 8]);
        assert_abs_diff_eq!(castle.total_floor_length(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn sqrt2_castle_heights_at_least_n() {
        let base = BaseSystem::circle(SQRT2M1).unwrap();
        let castle = build_castle(&base, 3).unwrap();
        assert!(castle.min_height() >= 3);
        let heights: Vec<usize> = castle.cells.iter().map(|c| c.height).collect();
        assert!(heights.len() <= 2);
        assert_abs_diff_eq!(castle.total_floor_length(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn castle_return_times_match_heights() {
        let base = BaseSystem::circle(GOLDEN).unwrap();
        for n in [2usize, 5, 13] {
            let castle = build_castle(&base, n).unwrap();
            for cell in &castle.cells {
                for t in 0..50 {
                    let x = frac(cell.start + cell.len * (t as f64 + 0.5) / 50.0);
                    let rt = castle
                        .brute_force_return_time(x, castle.max_height() + 2)
                        .unwrap();
                    assert_eq!(rt, cell.height, "x={x} n={n}");
                }
            }
        }
    }

    #[test]
    fn castle_floors_tile_circle() {
        let base = BaseSystem::circle(GOLDEN).unwrap();
        let castle = build_castle(&base, 5).unwrap();
        let floors = castle.floors();
        // pairwise disjoint (up to endpoint coincidence) and total length 1
        let mut starts: Vec<(f64, f64)> = floors.iter().map(|&(_, _, s, l)| (s, l)).collect();
        starts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in starts.windows(2) {
            assert!(w[0].0 + w[0].1 <= w[1].0 + 1e-9, "floors overlap: {w:?}");
        }
        let total: f64 = starts.iter().map(|&(_, l)| l).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn castle_rejects_torus() {
        let t = BaseSystem::torus(vec![GOLDEN, SQRT2M1]).unwrap();
        assert!(matches!(build_castle(&t, 3), Err(Error::Unsupported(_))));
    }

    #[test]
    fn circle_set_wraparound() {
        let s = CircleSet::arc(0.9, 0.1);
        assert!(s.contains(0.95));
        assert!(s.contains(0.05));
        assert!(!s.contains(0.5));
        assert_abs_diff_eq!(s.total_length(), 0.2, epsilon = 1e-12);
    }
}
