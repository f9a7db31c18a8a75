//! Convex-duality engine on piecewise-linear hulls.
//!
//! The conjugate `V(y) = sup_{x>0} {U(x) - xy}` of a utility coincides with
//! the conjugate of its concave envelope, and for a piecewise-linear envelope
//! it is piecewise linear in `y`: its knots are the hull slopes and on the
//! region between two knots it has slope `-x_i` for the hull vertex `x_i`
//! that attains the supremum there. All transforms here are that vertex
//! algebra; nothing is a numerical supremum except [`grid_sup_conjugate`],
//! which exists as an independent cross-check.

use serde::Serialize;
use thiserror::Error;

use crate::config::Tolerances;
use crate::hull;
use crate::utility::{ConcaveEnvelope, PiecewiseUtility};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("y = {y} is outside the conjugate's domain [{start}, inf)")]
    OutsideDomain { y: f64, start: f64 },
    #[error("shift utility: EAE undefined here (V({y}) = {value} <= 0)")]
    NonPositiveConjugate { y: f64, value: f64 },
    #[error("invalid EAE grid: {0}")]
    BadGrid(String),
    #[error("U(x0) must be positive, got U({x0}) = {value}")]
    NonPositiveUtility { x0: f64, value: f64 },
}

/// Closed interval `[lo, hi]` of supporting slopes; endpoints may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubdifferentialInterval {
    #[serde(with = "crate::serde_ext")]
    pub lo: f64,
    #[serde(with = "crate::serde_ext")]
    pub hi: f64,
}

impl SubdifferentialInterval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "[{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    /// Distance from `v` to the interval (0 inside).
    pub fn distance(&self, v: f64) -> f64 {
        if v < self.lo {
            self.lo - v
        } else if v > self.hi {
            v - self.hi
        } else {
            0.0
        }
    }

    pub fn contains(&self, v: f64, slack: f64) -> bool {
        self.distance(v) <= slack
    }

    /// `{-q : q ∈ self}`.
    pub fn negated(&self) -> Self {
        Self { lo: neg(self.hi), hi: neg(self.lo) }
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }
}

// -x without producing -0.0
fn neg(x: f64) -> f64 {
    0.0 - x
}

/// A proper convex function on (part of) `(0, ∞)` with computable
/// subdifferentials. Implemented by [`ConvexConjugate`] and by closed-form
/// test oracles.
pub trait ConvexFunction {
    fn value(&self, y: f64) -> Result<f64, TransformError>;
    fn subdifferential(&self, y: f64) -> Result<SubdifferentialInterval, TransformError>;
}

/// Behaviour of `V` as `y ↓ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LeftTail {
    /// `V(0+) = U_c(∞)`, finite.
    Finite { limit: f64 },
    /// The envelope keeps a positive tail slope, so `V = +∞` below it.
    Infinite { domain_start: f64 },
}

/// Piecewise-linear convex conjugate of a concave envelope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexConjugate {
    /// Ascending kink locations (the hull slopes).
    knots: Vec<f64>,
    values: Vec<f64>,
    /// `maximizers[j]` attains the supremum on `(knots[j], knots[j+1])`,
    /// with the last entry valid to `+∞`.
    maximizers: Vec<f64>,
    left_tail: LeftTail,
    right_tail_slope: f64,
    kink_rel: f64,
    provenance: String,
}

/// Conjugate of `env` by vertex algebra.
pub fn conjugate(env: &ConcaveEnvelope, tol: &Tolerances) -> ConvexConjugate {
    let (vx, vu, s) = (env.vertex_x(), env.vertex_u(), env.slopes());
    let m = s.len();
    let mut knots = Vec::with_capacity(m);
    let mut values = Vec::with_capacity(m);
    let mut maximizers = Vec::with_capacity(m);
    for i in (0..m).rev() {
        knots.push(s[i]);
        values.push(vu[i] - vx[i] * s[i]);
        maximizers.push(vx[i]);
    }
    let left_tail = if knots[0] > 0.0 {
        LeftTail::Infinite { domain_start: knots[0] }
    } else {
        LeftTail::Finite { limit: values[0] }
    };
    let right_tail_slope = neg(vx[0]);
    ConvexConjugate {
        knots,
        values,
        maximizers,
        left_tail,
        right_tail_slope,
        kink_rel: tol.kink_rel,
        provenance: format!(
            "hull of {} vertices on [{}, {}] ({} grid points)",
            vx.len(),
            env.grid().x_min,
            env.grid().x_max,
            env.grid().points
        ),
    }
}

impl ConvexConjugate {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn maximizers(&self) -> &[f64] {
        &self.maximizers
    }

    /// `(y_j, V(y_j))` at the knots.
    pub fn vertices(&self) -> Vec<(f64, f64)> {
        self.knots.iter().copied().zip(self.values.iter().copied()).collect()
    }

    /// Smallest `y` at which `V` is finite (`0` when `U_c` flattens out).
    pub fn domain_start(&self) -> f64 {
        self.knots[0]
    }

    pub fn left_tail(&self) -> LeftTail {
        self.left_tail
    }

    /// Slope of `V` beyond the largest knot, `-x_0`.
    pub fn right_tail_slope(&self) -> f64 {
        self.right_tail_slope
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Level `x` at which `U_c` stops increasing, when it does.
    pub fn satiation_level(&self) -> Option<f64> {
        match self.left_tail {
            LeftTail::Finite { .. } => Some(self.maximizers[0]),
            LeftTail::Infinite { .. } => None,
        }
    }

    /// Knot within the kink tolerance of `y`.
    pub fn knot_near(&self, y: f64) -> Option<usize> {
        let j = self.knots.partition_point(|k| *k < y);
        [j.checked_sub(1), Some(j)]
            .into_iter()
            .flatten()
            .filter(|&k| k < self.knots.len())
            .find(|&k| (self.knots[k] - y).abs() <= self.kink_rel * y.abs().max(self.knots[k].abs()))
    }

    fn region(&self, y: f64) -> Result<usize, TransformError> {
        if y.is_nan() || y < 0.0 {
            return Err(TransformError::OutsideDomain { y, start: self.domain_start() });
        }
        if let Some(j) = self.knot_near(y) {
            return Ok(j);
        }
        let j = self.knots.partition_point(|k| *k <= y);
        if j == 0 {
            return Err(TransformError::OutsideDomain { y, start: self.domain_start() });
        }
        Ok(j - 1)
    }

    /// Maximizer set of `x ↦ U_c(x) - xy`, i.e. `-∂V(y)`.
    pub fn argmax_interval(&self, y: f64) -> Result<SubdifferentialInterval, TransformError> {
        Ok(self.subdifferential(y)?.negated())
    }
}

impl ConvexFunction for ConvexConjugate {
    fn value(&self, y: f64) -> Result<f64, TransformError> {
        let j = self.region(y)?;
        Ok(self.values[j] - self.maximizers[j] * (y - self.knots[j]))
    }

    fn subdifferential(&self, y: f64) -> Result<SubdifferentialInterval, TransformError> {
        let j = self.region(y)?;
        let hi = neg(self.maximizers[j]);
        if self.knot_near(y).is_some() {
            let lo = if j == 0 { f64::NEG_INFINITY } else { neg(self.maximizers[j - 1]) };
            Ok(SubdifferentialInterval::new(lo, hi))
        } else {
            Ok(SubdifferentialInterval::point(hi))
        }
    }
}

/// `max_i {u_i - x_i y}` over raw samples; an independent check on
/// [`conjugate`].
pub fn grid_sup_conjugate(xs: &[f64], us: &[f64], y: f64) -> f64 {
    xs.iter()
        .zip(us)
        .filter(|(_, u)| u.is_finite())
        .map(|(x, u)| u - x * y)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `∂U_c(x)` reported as `[U_c'₊(x), U_c'₋(x)]`. At the first vertex the
/// upper end is `+∞`, since `U_c = -∞` to its left.
pub fn subdifferential_uc(env: &ConcaveEnvelope, x: f64, tol: &Tolerances) -> SubdifferentialInterval {
    let (vx, s) = (env.vertex_x(), env.slopes());
    let last = vx.len() - 1;
    if let Some(k) = env.vertex_near(x, tol.kink_rel) {
        let left = if k == 0 { f64::INFINITY } else { s[k - 1] };
        let right = if k == last { env.tail_slope() } else { s[k] };
        return SubdifferentialInterval::new(right, left);
    }
    let j = vx.partition_point(|v| *v <= x);
    let slope = if j == 0 {
        s[0]
    } else if j > last {
        env.tail_slope()
    } else {
        s[j - 1]
    };
    SubdifferentialInterval::point(slope)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FenchelYoungReport {
    /// `V(y) - (U_c(x) - xy)`, nonnegative up to rounding.
    pub gap: f64,
    pub equality_flag: bool,
    pub x_in_minus_dv: bool,
    pub y_in_duc: bool,
}

impl FenchelYoungReport {
    /// The three characterisations of a subgradient pair agree.
    pub fn consistent(&self) -> bool {
        self.equality_flag == self.x_in_minus_dv && self.x_in_minus_dv == self.y_in_duc
    }
}

pub fn fenchel_young_check(
    env: &ConcaveEnvelope,
    v: &ConvexConjugate,
    x: f64,
    y: f64,
    tol: &Tolerances,
) -> Result<FenchelYoungReport, TransformError> {
    let gap = v.value(y)? - (env.value(x) - x * y);
    let x_in_minus_dv = v.argmax_interval(y)?.contains(x, tol.membership);
    let y_in_duc = subdifferential_uc(env, x, tol).contains(y, tol.membership);
    Ok(FenchelYoungReport { gap, equality_flag: gap <= tol.value, x_in_minus_dv, y_in_duc })
}

/// Piecewise-linear concave function on `[x_0, ∞)`, `-∞` to the left of `x_0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseLinearConcave {
    pub vertex_x: Vec<f64>,
    pub vertex_u: Vec<f64>,
    pub tail_slope: f64,
}

impl PiecewiseLinearConcave {
    pub fn value(&self, x: f64) -> f64 {
        let last = self.vertex_x.len() - 1;
        if x < self.vertex_x[0] {
            f64::NEG_INFINITY
        } else if x >= self.vertex_x[last] {
            self.vertex_u[last] + self.tail_slope * (x - self.vertex_x[last])
        } else {
            hull::interpolate(&self.vertex_x, &self.vertex_u, x)
        }
    }
}

/// `x ↦ inf_y {V(y) + xy}` by vertex algebra on the knots of `V`.
pub fn biconjugate(v: &ConvexConjugate) -> PiecewiseLinearConcave {
    let m = v.knots.len();
    let mut vertex_x = Vec::with_capacity(m);
    let mut vertex_u = Vec::with_capacity(m);
    for j in (0..m).rev() {
        let x = v.maximizers[j];
        vertex_x.push(x);
        vertex_u.push(v.values[j] + x * v.knots[j]);
    }
    PiecewiseLinearConcave { vertex_x, vertex_u, tail_slope: v.knots[0] }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecadeMax {
    /// `floor(log10 y)` for the points in this group.
    pub decade: i32,
    pub max_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EaeEstimate {
    /// Largest `sup_{q∈∂V(y)} |q| y / V(y)` over the smallest decade of `y`.
    pub estimate: f64,
    /// Per-decade maxima, smallest decade first.
    pub per_decade: Vec<DecadeMax>,
    /// False when the two smallest decades differ by more than the
    /// configured relative variation.
    pub converged: bool,
}

/// Numerical limsup estimate of `EAE(V) = limsup_{y→0} sup_{q∈∂V(y)} |q|y/V(y)`.
pub fn estimate_eae<F: ConvexFunction + ?Sized>(
    v: &F,
    y_grid: &[f64],
    tol: &Tolerances,
) -> Result<EaeEstimate, TransformError> {
    if y_grid.len() < 10 {
        return Err(TransformError::BadGrid(format!("need at least 10 points, got {}", y_grid.len())));
    }
    if y_grid.iter().any(|y| !(y.is_finite() && *y > 0.0)) {
        return Err(TransformError::BadGrid("points must be positive and finite".into()));
    }
    let lo = y_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y_grid.iter().copied().fold(0.0, f64::max);
    if hi / lo < 1e4 * (1.0 - 1e-9) {
        return Err(TransformError::BadGrid(format!("grid spans {:.3} decades, need 4", (hi / lo).log10())));
    }
    let mut per_decade: Vec<DecadeMax> = Vec::new();
    let mut ys = y_grid.to_vec();
    ys.sort_by(f64::total_cmp);
    for y in ys {
        let value = v.value(y)?;
        if value <= 0.0 {
            return Err(TransformError::NonPositiveConjugate { y, value });
        }
        let d = v.subdifferential(y)?;
        let ratio = d.lo.abs().max(d.hi.abs()) * y / value;
        let decade = y.log10().floor() as i32;
        match per_decade.last_mut() {
            Some(last) if last.decade == decade => last.max_ratio = last.max_ratio.max(ratio),
            _ => per_decade.push(DecadeMax { decade, max_ratio: ratio }),
        }
    }
    let estimate = per_decade[0].max_ratio;
    let converged = match per_decade.get(1) {
        Some(next) => {
            let scale = estimate.abs().max(next.max_ratio.abs()).max(1.0);
            (estimate - next.max_ratio).abs() <= tol.eae_variation * scale
        }
        None => false,
    };
    Ok(EaeEstimate { estimate, per_decade, converged })
}

/// `V(μy) ≤ μ^{-γ} V(y)` for all `μ ∈ mu_grid`, `y ∈ y_grid ∩ (0, y0]`.
///
/// Pairs where `μy` falls outside the domain of `V` are skipped; a
/// nonpositive `V(y)` makes the check fail.
pub fn check_eae_inequality<F: ConvexFunction + ?Sized>(
    v: &F,
    gamma: f64,
    y0: f64,
    mu_grid: &[f64],
    y_grid: &[f64],
    tol: &Tolerances,
) -> bool {
    for &y in y_grid.iter().filter(|y| **y > 0.0 && **y <= y0) {
        let Ok(vy) = v.value(y) else { continue };
        if vy <= 0.0 {
            return false;
        }
        for &mu in mu_grid.iter().filter(|m| **m > 0.0 && **m <= 1.0) {
            let Ok(lhs) = v.value(mu * y) else { continue };
            let rhs = mu.powf(-gamma) * vy;
            if lhs > rhs + tol.eae_inequality_rel * rhs.abs() {
                return false;
            }
        }
    }
    true
}

/// Smallest candidate `γ` for which [`check_eae_inequality`] holds.
pub fn smallest_eae_gamma<F: ConvexFunction + ?Sized>(
    v: &F,
    y0: f64,
    candidates: &[f64],
    mu_grid: &[f64],
    y_grid: &[f64],
    tol: &Tolerances,
) -> Option<f64> {
    let mut c = candidates.to_vec();
    c.sort_by(f64::total_cmp);
    c.into_iter().find(|&g| check_eae_inequality(v, g, y0, mu_grid, y_grid, tol))
}

/// `μ` values `1, 0.9, …, 0.1, 0.05, 0.01`.
pub fn default_mu_grid() -> Vec<f64> {
    let mut m: Vec<f64> = (1..=10).rev().map(|k| k as f64 / 10.0).collect();
    m.extend([0.05, 0.01]);
    m
}

/// `0 ≤ U_c ≤ k U` at every sample point beyond `x0`.
pub fn check_envelope_domination(
    u: &PiecewiseUtility,
    env: &ConcaveEnvelope,
    x0: f64,
    k: f64,
    tol: &Tolerances,
) -> Result<bool, TransformError> {
    let u0 = u.value(x0);
    if !(u0 > 0.0) {
        return Err(TransformError::NonPositiveUtility { x0, value: u0 });
    }
    let (xs, _) = env.samples();
    Ok(xs.iter().filter(|x| **x > x0).all(|&x| {
        let uc = env.value(x);
        uc >= -tol.value && uc <= k * u.value(x) + tol.value
    }))
}
