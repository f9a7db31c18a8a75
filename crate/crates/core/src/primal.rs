//! Exact search for the best payoff under the original utility on small markets.
//!
//! Any payoff puts each state on one piece of `U`. Once that assignment is
//! fixed the problem is concave (each piece is concave on its closed
//! interval), so a multiplier search with clamped inverse derivatives solves
//! it. Enumerating all assignments gives the optimum; it is only attempted
//! when the number of assignments is small.

use crate::numeric::pairwise_dot;
use crate::utility::{PieceForm, PiecewiseUtility};

/// Largest number of piece assignments enumerated per solve.
pub const MAX_PIECE_ASSIGNMENTS: usize = 4096;

const BISECTION_STEPS: usize = 200;

/// Smallest and largest maximizer of `g(f) - t f` on `[lo, hi]` for a concave piece `g`.
fn restricted_argmax(form: &PieceForm, lo: f64, hi: f64, t: f64) -> (f64, f64) {
    let clamp = |f: f64| (f.max(lo).min(hi), f.max(lo).min(hi));
    match *form {
        PieceForm::Power { exponent, scale } => clamp((t / (scale * exponent)).powf(1.0 / (exponent - 1.0))),
        PieceForm::ShiftedPower { exponent, scale, shift } => {
            clamp(shift + (t / (scale * exponent)).powf(1.0 / (exponent - 1.0)))
        }
        PieceForm::Logarithmic { scale } => clamp(scale / t),
        PieceForm::Linear { slope, .. } => {
            if slope > t {
                (hi, hi)
            } else if slope < t {
                (lo, lo)
            } else {
                (lo, hi)
            }
        }
        PieceForm::Constant { .. } => {
            if t > 0.0 {
                (lo, lo)
            } else {
                (lo, hi)
            }
        }
    }
}

struct Assignment<'a> {
    forms: Vec<&'a PieceForm>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Assignment<'_> {
    /// Smallest and largest maximizers at multiplier `y`.
    fn select(&self, y: f64, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (0..z.len()).map(|k| restricted_argmax(self.forms[k], self.lo[k], self.hi[k], y * z[k])).unzip()
    }

    /// Budget-exact maximizer of the restricted concave problem, if affordable,
    /// with its multiplier when one exists.
    fn solve(&self, z: &[f64], c: &[f64], budget: f64, slack: f64) -> Option<(Vec<f64>, Option<f64>)> {
        if pairwise_dot(c, &self.lo) > budget + slack {
            return None;
        }
        let cost = |f: &[f64]| pairwise_dot(c, f);
        let (mut y_lo, mut y_hi) = (1e-300, 1.0);
        // `y_hi` must price the cheapest selection within budget.
        while cost(&self.select(y_hi, z).0) > budget {
            y_hi *= 2.0;
            if y_hi > 1e300 {
                return Some((self.lo.clone(), None));
            }
        }
        let (low_y_min, _) = self.select(y_lo, z);
        if cost(&low_y_min) <= budget {
            // Even the smallest multiplier leaves budget unspent.
            return Some((low_y_min, None));
        }
        for _ in 0..BISECTION_STEPS {
            let mid = (y_lo * y_hi).sqrt();
            if !(mid > y_lo && mid < y_hi) {
                break;
            }
            if cost(&self.select(mid, z).0) > budget {
                y_lo = mid;
            } else {
                y_hi = mid;
            }
        }
        // Cheapest selection at `y_hi`, raised toward the selection at `y_lo`
        // where a tie (or the last bisection step) leaves room.
        let (mut f, f_top) = self.select(y_hi, z);
        let (upper, _) = self.select(y_lo, z);
        let mut residual = budget - cost(&f);
        for k in 0..f.len() {
            if residual <= 0.0 {
                break;
            }
            let top = upper[k].max(f_top[k]).min(self.hi[k]);
            if top > f[k] {
                let add = (residual / c[k]).min(top - f[k]);
                f[k] += add;
                residual -= add * c[k];
            }
        }
        Some((f, Some(y_hi)))
    }
}

/// Winning payoff of the enumeration.
pub(crate) struct Exact {
    pub payoff: Vec<f64>,
    /// Multiplier of the winning assignment; `None` when its budget does not bind.
    pub multiplier: Option<f64>,
}

/// Best payoff found by enumerating piece assignments, or `None` when there
/// are too many assignments or none is affordable. The payoff may leave
/// budget unspent; the caller decides where it goes.
pub(crate) fn exhaustive(
    utility: &PiecewiseUtility,
    p: &[f64],
    z: &[f64],
    c: &[f64],
    budget: f64,
    slack: f64,
) -> Option<Exact> {
    let pieces = utility.pieces();
    let n = z.len();
    let total = pieces.len().checked_pow(u32::try_from(n).ok()?)?;
    if total > MAX_PIECE_ASSIGNMENTS || n == 0 {
        return None;
    }
    let mut best: Option<(f64, Exact)> = None;
    let mut choice = vec![0usize; n];
    loop {
        let a = Assignment {
            forms: choice.iter().map(|&j| &pieces[j].form).collect(),
            lo: choice.iter().map(|&j| pieces[j].lo).collect(),
            hi: choice.iter().map(|&j| pieces[j].hi).collect(),
        };
        if let Some((payoff, multiplier)) = a.solve(z, c, budget, slack) {
            let values: Vec<f64> = payoff.iter().map(|&x| utility.value(x)).collect();
            let value = pairwise_dot(p, &values);
            if best.as_ref().is_none_or(|(bv, _)| value > *bv) {
                best = Some((value, Exact { payoff, multiplier }));
            }
        }
        let mut d = 0;
        while d < n {
            choice[d] += 1;
            if choice[d] < pieces.len() {
                break;
            }
            choice[d] = 0;
            d += 1;
        }
        if d == n {
            break;
        }
    }
    best.map(|(_, f)| f)
}
