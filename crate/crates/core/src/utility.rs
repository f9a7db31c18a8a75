//! Piecewise utilities and their concave envelopes.
//!
//! A [`PiecewiseUtility`] is a nondecreasing, upper-semicontinuous function on
//! `(0, ∞)` given as finitely many analytic pieces. Its concave envelope is
//! built on a sampling grid (with every breakpoint inserted) by an upper-hull
//! sweep, and extended affinely past the grid with the last hull slope.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Tolerances;
use crate::grid::{GridError, GridSpec};
use crate::hull;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UtilityError {
    #[error("utility has no pieces")]
    Empty,
    #[error("piece {index}: {reason}")]
    InvalidPiece { index: usize, reason: String },
    #[error("first piece must start at 0, starts at {0}")]
    NotStartingAtZero(f64),
    #[error("last piece must extend to infinity, ends at {0}")]
    NotCoveringInfinity(f64),
    #[error("piece {index} [{lo}, {hi}) overlaps piece {prev} [{prev_lo}, {prev_hi})")]
    Overlap { index: usize, lo: f64, hi: f64, prev: usize, prev_lo: f64, prev_hi: f64 },
    #[error("gap between piece {prev} ending at {prev_hi} and piece {index} starting at {lo}")]
    Gap { index: usize, lo: f64, prev: usize, prev_hi: f64 },
    #[error("utility decreases at breakpoint {at}: left limit {left} > right value {right}")]
    NotMonotone { at: f64, left: f64, right: f64 },
    #[error("utility is constant")]
    Constant,
    #[error("U(infinity) must be positive, got {0}")]
    NonPositiveAtInfinity(f64),
    #[error("x = {0} is below the domain (U = -inf on (-inf, 0])")]
    BelowDomain(f64),
    #[error("growth condition fails: U(x)/x = {ratio} at x = {at} (asymptotic ratio {limit})")]
    GrowthViolated { ratio: f64, at: f64, limit: f64 },
    #[error("envelope grid must extend beyond the last breakpoint {breakpoint} (x_max = {x_max})")]
    GridTooShort { breakpoint: f64, x_max: f64 },
    #[error("component of {{U < U_c}} starting at {start} is not closed before x_max = {x_max}")]
    UnboundedComponent { start: f64, x_max: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Analytic form of one piece. All forms are concave and nondecreasing on
/// their interval when their parameters are valid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PieceForm {
    /// `scale · x^exponent`
    Power { exponent: f64, scale: f64 },
    /// `scale · ln x`
    Logarithmic { scale: f64 },
    /// `slope · x + intercept`
    Linear { slope: f64, intercept: f64 },
    Constant { level: f64 },
    /// `scale · (x - shift)^exponent`, defined for `x ≥ shift`
    ShiftedPower { exponent: f64, scale: f64, shift: f64 },
}

impl PieceForm {
    /// Value of the analytic expression (continuous extension to the closed
    /// interval; `-∞` for a logarithm at 0).
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            PieceForm::Power { exponent, scale } => scale * x.powf(exponent),
            PieceForm::Logarithmic { scale } => {
                if x == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    scale * x.ln()
                }
            }
            PieceForm::Linear { slope, intercept } => slope * x + intercept,
            PieceForm::Constant { level } => level,
            PieceForm::ShiftedPower { exponent, scale, shift } => scale * (x - shift).max(0.0).powf(exponent),
        }
    }

    /// Right derivative; `+∞` at a singular left end.
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            PieceForm::Power { exponent, scale } => scale * exponent * x.powf(exponent - 1.0),
            PieceForm::Logarithmic { scale } => scale / x,
            PieceForm::Linear { slope, .. } => slope,
            PieceForm::Constant { .. } => 0.0,
            PieceForm::ShiftedPower { exponent, scale, shift } => {
                scale * exponent * (x - shift).powf(exponent - 1.0)
            }
        }
    }

    /// `lim_{x→∞} value(x) / x`.
    pub fn asymptotic_ratio(&self) -> f64 {
        match *self {
            PieceForm::Linear { slope, .. } => slope,
            _ => 0.0,
        }
    }

    pub fn limit_at_infinity(&self) -> f64 {
        match *self {
            PieceForm::Power { .. } | PieceForm::Logarithmic { .. } | PieceForm::ShiftedPower { .. } => {
                f64::INFINITY
            }
            PieceForm::Linear { slope, intercept } => {
                if slope > 0.0 {
                    f64::INFINITY
                } else {
                    intercept
                }
            }
            PieceForm::Constant { level } => level,
        }
    }

    fn is_flat(&self) -> bool {
        match *self {
            PieceForm::Constant { .. } => true,
            PieceForm::Linear { slope, .. } => slope == 0.0,
            _ => false,
        }
    }

    fn check(&self, lo: f64) -> Result<(), String> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(format!("{name} must be finite"))
            }
        };
        let exponent_ok = |a: f64| {
            if a > 0.0 && a < 1.0 {
                Ok(())
            } else {
                Err(format!("exponent must lie in (0, 1), got {a}"))
            }
        };
        let scale_ok = |s: f64| {
            if s > 0.0 && s.is_finite() {
                Ok(())
            } else {
                Err(format!("scale must be positive, got {s}"))
            }
        };
        match *self {
            PieceForm::Power { exponent, scale } => {
                exponent_ok(exponent)?;
                scale_ok(scale)
            }
            PieceForm::Logarithmic { scale } => scale_ok(scale),
            PieceForm::Linear { slope, intercept } => {
                finite("slope", slope)?;
                finite("intercept", intercept)?;
                if slope < 0.0 {
                    return Err(format!("slope must be nonnegative, got {slope}"));
                }
                Ok(())
            }
            PieceForm::Constant { level } => finite("level", level),
            PieceForm::ShiftedPower { exponent, scale, shift } => {
                exponent_ok(exponent)?;
                scale_ok(scale)?;
                finite("shift", shift)?;
                if shift > lo {
                    return Err(format!("shift {shift} exceeds the piece start {lo}"));
                }
                Ok(())
            }
        }
    }
}

/// One analytic piece on `[lo, hi)`; `hi = ∞` is written as `null` in JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityPiece {
    pub lo: f64,
    #[serde(with = "crate::serde_ext")]
    pub hi: f64,
    pub form: PieceForm,
}

impl UtilityPiece {
    pub fn new(lo: f64, hi: f64, form: PieceForm) -> Self {
        Self { lo, hi, form }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtilitySpec {
    pieces: Vec<UtilityPiece>,
}

/// A validated piecewise utility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "UtilitySpec", into = "UtilitySpec")]
pub struct PiecewiseUtility {
    pieces: Vec<UtilityPiece>,
    value_at_zero: f64,
    value_at_infinity: f64,
}

impl TryFrom<UtilitySpec> for PiecewiseUtility {
    type Error = UtilityError;
    fn try_from(spec: UtilitySpec) -> Result<Self, Self::Error> {
        Self::new(spec.pieces)
    }
}

impl From<PiecewiseUtility> for UtilitySpec {
    fn from(u: PiecewiseUtility) -> Self {
        UtilitySpec { pieces: u.pieces }
    }
}

/// Result of the numerical growth check `U(x)/x → 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    pub probes: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Ratios nonincreasing over the second half of the probes and strictly
    /// decreasing at the last step.
    pub monotone_decay_flag: bool,
    pub threshold: f64,
    /// `lim U(x)/x` read off the last analytic piece.
    pub asymptotic_ratio: f64,
    /// False when the probes are empty, unordered, or stop below `10^6`.
    pub probes_valid: bool,
    pub pass: bool,
}

/// Default growth probes `10^1, …, 10^8`.
pub fn default_growth_probes() -> Vec<f64> {
    (1..=8).map(|k| 10f64.powi(k)).collect()
}

impl PiecewiseUtility {
    pub fn new(pieces: Vec<UtilityPiece>) -> Result<Self, UtilityError> {
        let first = pieces.first().ok_or(UtilityError::Empty)?;
        if first.lo != 0.0 {
            return Err(UtilityError::NotStartingAtZero(first.lo));
        }
        for (i, p) in pieces.iter().enumerate() {
            if !(p.lo >= 0.0 && p.lo.is_finite()) || p.hi.is_nan() || p.hi <= p.lo {
                return Err(UtilityError::InvalidPiece {
                    index: i,
                    reason: format!("interval [{}, {}) is empty or malformed", p.lo, p.hi),
                });
            }
            p.form.check(p.lo).map_err(|reason| UtilityError::InvalidPiece { index: i, reason })?;
            if i > 0 {
                let prev = &pieces[i - 1];
                if p.lo < prev.hi {
                    return Err(UtilityError::Overlap {
                        index: i,
                        lo: p.lo,
                        hi: p.hi,
                        prev: i - 1,
                        prev_lo: prev.lo,
                        prev_hi: prev.hi,
                    });
                }
                if p.lo > prev.hi {
                    return Err(UtilityError::Gap { index: i, lo: p.lo, prev: i - 1, prev_hi: prev.hi });
                }
                let left = prev.form.value(p.lo);
                let right = p.form.value(p.lo);
                if left > right + 1e-12 * left.abs().max(1.0) {
                    return Err(UtilityError::NotMonotone { at: p.lo, left, right });
                }
            }
        }
        let last = pieces.last().unwrap();
        if last.hi != f64::INFINITY {
            return Err(UtilityError::NotCoveringInfinity(last.hi));
        }
        let value_at_zero = first.form.value(0.0);
        let value_at_infinity = last.form.limit_at_infinity();
        let constant = pieces.iter().all(|p| p.form.is_flat())
            && pieces.windows(2).all(|w| w[0].form.value(w[1].lo) == w[1].form.value(w[1].lo))
            && pieces.iter().all(|p| p.form.value(p.lo) == value_at_zero);
        if constant {
            return Err(UtilityError::Constant);
        }
        if value_at_infinity.is_nan() || value_at_infinity <= 0.0 {
            return Err(UtilityError::NonPositiveAtInfinity(value_at_infinity));
        }
        Ok(Self { pieces, value_at_zero, value_at_infinity })
    }

    /// `1` on `[1, ∞)`, `0` on `(0, 1)`.
    pub fn step() -> Self {
        Self::new(vec![
            UtilityPiece::new(0.0, 1.0, PieceForm::Constant { level: 0.0 }),
            UtilityPiece::new(1.0, f64::INFINITY, PieceForm::Constant { level: 1.0 }),
        ])
        .expect("step utility is valid")
    }

    /// `min(x, 1) + max(0, min(x - 2, 1))`.
    pub fn two_bump() -> Self {
        Self::new(vec![
            UtilityPiece::new(0.0, 1.0, PieceForm::Linear { slope: 1.0, intercept: 0.0 }),
            UtilityPiece::new(1.0, 2.0, PieceForm::Constant { level: 1.0 }),
            UtilityPiece::new(2.0, 3.0, PieceForm::Linear { slope: 1.0, intercept: -1.0 }),
            UtilityPiece::new(3.0, f64::INFINITY, PieceForm::Constant { level: 2.0 }),
        ])
        .expect("two-bump utility is valid")
    }

    /// `scale · x^exponent` on the whole half-line.
    pub fn power(exponent: f64, scale: f64) -> Result<Self, UtilityError> {
        Self::new(vec![UtilityPiece::new(0.0, f64::INFINITY, PieceForm::Power { exponent, scale })])
    }

    /// `scale · ln x` on the whole half-line.
    pub fn log(scale: f64) -> Result<Self, UtilityError> {
        Self::new(vec![UtilityPiece::new(0.0, f64::INFINITY, PieceForm::Logarithmic { scale })])
    }

    pub fn pieces(&self) -> &[UtilityPiece] {
        &self.pieces
    }

    /// `U(0) := lim_{x↓0} U(x)`; may be `-∞`.
    pub fn value_at_zero(&self) -> f64 {
        self.value_at_zero
    }

    /// `U(∞) := lim_{x→∞} U(x)`; may be `+∞`.
    pub fn value_at_infinity(&self) -> f64 {
        self.value_at_infinity
    }

    /// Interior breakpoints (piece boundaries other than 0 and ∞).
    pub fn breakpoints(&self) -> Vec<f64> {
        self.pieces.iter().skip(1).map(|p| p.lo).collect()
    }

    fn piece_index(&self, x: f64) -> usize {
        self.pieces.partition_point(|p| p.lo <= x).saturating_sub(1)
    }

    /// Evaluates `U(x)` for `x > 0` (upper-semicontinuous at breakpoints).
    pub fn eval(&self, x: f64) -> Result<f64, UtilityError> {
        if x.is_nan() || x <= 0.0 {
            return Err(UtilityError::BelowDomain(x));
        }
        Ok(self.value(x))
    }

    /// `U` on `[0, ∞)`, with `U(0)` the right limit. Negative input is `-∞`.
    pub fn value(&self, x: f64) -> f64 {
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        if x == 0.0 {
            return self.value_at_zero;
        }
        if x == f64::INFINITY {
            return self.value_at_infinity;
        }
        let k = self.piece_index(x);
        let piece = &self.pieces[k];
        let v = piece.form.value(x);
        if k > 0 && x == piece.lo {
            v.max(self.pieces[k - 1].form.value(x))
        } else {
            v
        }
    }

    /// Largest right derivative of `U` over `[lo, hi]`, ignoring jumps at
    /// breakpoints. Pieces are concave, so each piece attains its bound at
    /// its left end inside the window.
    pub fn lipschitz_bound(&self, lo: f64, hi: f64) -> f64 {
        self.pieces
            .iter()
            .filter(|p| p.lo <= hi && p.hi >= lo)
            .map(|p| p.form.derivative(p.lo.max(lo)))
            .fold(0.0, f64::max)
    }

    /// True when `U` is concave and continuously differentiable on `(0, ∞)`.
    pub fn is_smooth_concave(&self) -> bool {
        self.pieces.windows(2).all(|w| {
            let b = w[1].lo;
            let (l, r) = (w[0].form.value(b), w[1].form.value(b));
            let (dl, dr) = (w[0].form.derivative(b), w[1].form.derivative(b));
            (l - r).abs() <= 1e-12 * l.abs().max(1.0) && (dl - dr).abs() <= 1e-12 * dl.abs().max(1.0)
        })
    }

    /// Numerical check of `lim U(x)/x = 0`.
    pub fn check_growth(&self, probes: &[f64], threshold: f64) -> GrowthReport {
        let probes_valid = !probes.is_empty()
            && probes.iter().all(|p| *p > 0.0)
            && probes.windows(2).all(|w| w[0] < w[1])
            && probes.last().is_some_and(|p| *p >= 1e6);
        let ratios: Vec<f64> = probes.iter().map(|&x| self.value(x) / x).collect();
        let n = ratios.len();
        let monotone_decay_flag = n >= 2 && {
            let tail = &ratios[n / 2..];
            tail.windows(2).all(|w| w[1] <= w[0]) && ratios[n - 1] < ratios[n - 2]
        };
        let asymptotic_ratio = self.pieces.last().unwrap().form.asymptotic_ratio();
        let last_ok = ratios.last().is_some_and(|r| *r < threshold);
        GrowthReport {
            probes: probes.to_vec(),
            ratios,
            monotone_decay_flag,
            threshold,
            asymptotic_ratio,
            probes_valid,
            pass: probes_valid && last_ok && monotone_decay_flag,
        }
    }

    /// Builds the concave envelope on `grid`.
    ///
    /// The sample set is the grid nodes, every breakpoint inside the grid and,
    /// when `U(0)` is finite, the point `(0, U(0))`.
    pub fn compute_envelope(&self, grid: &GridSpec, tol: &Tolerances) -> Result<ConcaveEnvelope, UtilityError> {
        grid.validate()?;
        let growth = self.check_growth(&default_growth_probes(), tol.growth_threshold);
        if !growth.pass || growth.asymptotic_ratio > 0.0 {
            let (at, ratio) = (*growth.probes.last().unwrap(), *growth.ratios.last().unwrap());
            return Err(UtilityError::GrowthViolated { ratio, at, limit: growth.asymptotic_ratio });
        }
        if let Some(&b) = self.breakpoints().last() {
            if b >= grid.x_max {
                return Err(UtilityError::GridTooShort { breakpoint: b, x_max: grid.x_max });
            }
        }
        let mut xs = grid.nodes();
        xs.extend(self.breakpoints().into_iter().filter(|b| *b >= grid.x_min));
        if self.value_at_zero.is_finite() {
            xs.push(0.0);
        }
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let ys: Vec<f64> = xs.iter().map(|&x| self.value(x)).collect();
        ConcaveEnvelope::from_samples(xs, ys, *grid, tol)
    }
}

/// Upper concave hull of a sampled utility, with the open components of
/// `{U < U_c}` it detected.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcaveEnvelope {
    vertex_x: Vec<f64>,
    vertex_u: Vec<f64>,
    /// `slopes[i]` is the slope on `[vertex_x[i], vertex_x[i+1]]`.
    slopes: Vec<f64>,
    tail_slope: f64,
    components: Vec<(f64, f64)>,
    grid: GridSpec,
    #[serde(skip)]
    sample_x: Vec<f64>,
    #[serde(skip)]
    sample_u: Vec<f64>,
}

impl ConcaveEnvelope {
    /// Hull of arbitrary samples `(xs, ys)`; `xs` strictly increasing.
    pub fn from_samples(xs: Vec<f64>, ys: Vec<f64>, grid: GridSpec, tol: &Tolerances) -> Result<Self, UtilityError> {
        let idx = hull::upper_hull(&xs, &ys, tol.hull_collinear_rel);
        if idx.len() < 2 {
            return Err(UtilityError::Grid(GridError::TooFewPoints(idx.len())));
        }
        let vertex_x: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
        let vertex_u: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
        let slopes: Vec<f64> = vertex_x
            .windows(2)
            .zip(vertex_u.windows(2))
            .map(|(x, u)| (u[1] - u[0]) / (x[1] - x[0]))
            .collect();
        let tail_slope = *slopes.last().unwrap();
        let mut env = Self {
            vertex_x,
            vertex_u,
            slopes,
            tail_slope,
            components: Vec::new(),
            grid,
            sample_x: xs,
            sample_u: ys,
        };
        env.components = env.detect_components(tol.component)?;
        Ok(env)
    }

    fn detect_components(&self, threshold: f64) -> Result<Vec<(f64, f64)>, UtilityError> {
        let xs = &self.sample_x;
        let n = xs.len();
        let mut out = Vec::new();
        let mut i = 0;
        while i < n {
            let above = |k: usize| self.value(xs[k]) - self.sample_u[k] > threshold;
            if !above(i) {
                i += 1;
                continue;
            }
            let start = i;
            while i < n && above(i) {
                i += 1;
            }
            if start == 0 || i == n {
                return Err(UtilityError::UnboundedComponent { start: xs[start], x_max: xs[n - 1] });
            }
            out.push((xs[start - 1], xs[i]));
        }
        Ok(out)
    }

    /// Hull vertices `(x_i, U_c(x_i))`.
    pub fn vertices(&self) -> Vec<(f64, f64)> {
        self.vertex_x.iter().copied().zip(self.vertex_u.iter().copied()).collect()
    }

    pub fn vertex_x(&self) -> &[f64] {
        &self.vertex_x
    }

    pub fn vertex_u(&self) -> &[f64] {
        &self.vertex_u
    }

    /// Slopes between consecutive vertices (nonincreasing).
    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// Slope used beyond the last vertex.
    pub fn tail_slope(&self) -> f64 {
        self.tail_slope
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// The sampled graph the hull was built from.
    pub fn samples(&self) -> (&[f64], &[f64]) {
        (&self.sample_x, &self.sample_u)
    }

    /// Sorted, disjoint, bounded open intervals making up `{U < U_c}` on the grid.
    pub fn components(&self) -> &[(f64, f64)] {
        &self.components
    }

    /// `U_c(x)`, affine outside the vertex range.
    pub fn value(&self, x: f64) -> f64 {
        hull::interpolate(&self.vertex_x, &self.vertex_u, x)
    }

    /// Index of the vertex within `rel` of `x`, if any.
    pub fn vertex_near(&self, x: f64, rel: f64) -> Option<usize> {
        let j = self.vertex_x.partition_point(|v| *v < x);
        [j.checked_sub(1), Some(j)]
            .into_iter()
            .flatten()
            .filter(|&k| k < self.vertex_x.len())
            .find(|&k| (self.vertex_x[k] - x).abs() <= rel * x.abs().max(self.vertex_x[k].abs()))
    }

    /// `x ↦ U_c(x) + c`.
    pub fn shifted(&self, c: f64) -> Self {
        let mut e = self.clone();
        e.vertex_u.iter_mut().for_each(|u| *u += c);
        e.sample_u.iter_mut().for_each(|u| *u += c);
        e
    }

    /// `x ↦ U_c(βx)`: vertices move to `x_i / β`, slopes scale by `β`.
    pub fn rescaled(&self, beta: f64) -> Self {
        assert!(beta > 0.0);
        let mut e = self.clone();
        e.vertex_x.iter_mut().for_each(|x| *x /= beta);
        e.sample_x.iter_mut().for_each(|x| *x /= beta);
        e.slopes.iter_mut().for_each(|s| *s *= beta);
        e.tail_slope *= beta;
        e.components.iter_mut().for_each(|(a, b)| {
            *a /= beta;
            *b /= beta;
        });
        e.grid.x_min /= beta;
        e.grid.x_max /= beta;
        e
    }
}

/// The components of `{U < U_c}`, sorted by left endpoint.
pub fn envelope_components(env: &ConcaveEnvelope) -> Vec<(f64, f64)> {
    let mut c = env.components().to_vec();
    c.sort_by(|a, b| a.0.total_cmp(&b.0));
    c
}
