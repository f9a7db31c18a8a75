//! Seeded generators for randomized checks and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::market::{EventTree, FiniteMarket, NodeHoldings, TradingStrategy};
use crate::utility::{PieceForm, PiecewiseUtility, UtilityPiece};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Largest breakpoint a random utility can have; envelope grids must reach past it.
pub const MAX_BREAKPOINT: f64 = 8.0;

/// Random nondecreasing utility with at most `max_pieces` concave pieces,
/// glued with nonnegative jumps so that the whole is typically non-concave.
/// Every piece starts at 0 value at `x = 0`, so `U(0) = 0`.
pub fn piecewise_utility<R: Rng>(rng: &mut R, max_pieces: usize) -> PiecewiseUtility {
    loop {
        if let Some(u) = try_utility(rng, max_pieces.max(1), true) {
            return u;
        }
    }
}

/// Like [`piecewise_utility`] but with constant and linear pieces only, the
/// last one constant. Its sampled envelope is exact, not an approximation.
pub fn piecewise_linear_utility<R: Rng>(rng: &mut R, max_pieces: usize) -> PiecewiseUtility {
    loop {
        if let Some(u) = try_utility(rng, max_pieces.max(2), false) {
            return u;
        }
    }
}

fn try_utility<R: Rng>(rng: &mut R, max_pieces: usize, curved: bool) -> Option<PiecewiseUtility> {
    let n = rng.gen_range(1..=max_pieces);
    let mut cuts: Vec<f64> = (1..n).map(|_| rng.gen_range(0.2..MAX_BREAKPOINT)).collect();
    cuts.sort_by(f64::total_cmp);
    if cuts.windows(2).any(|w| w[1] - w[0] < 0.05) {
        return None;
    }
    let mut bounds = vec![0.0];
    bounds.extend(cuts);
    bounds.push(f64::INFINITY);

    let mut pieces = Vec::with_capacity(n);
    let mut level: f64 = 0.0;
    for k in 0..n {
        let (lo, hi) = (bounds[k], bounds[k + 1]);
        let last = k + 1 == n;
        let jump = if k == 0 || rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.05..1.0) };
        let start = level + jump;
        let form = match (last, rng.gen_range(0..3)) {
            (true, _) if !curved => PieceForm::Constant { level: start.max(level + 0.1) },
            (false, 2) if !curved => PieceForm::Constant { level: start },
            (false, 0) => PieceForm::Constant { level: start },
            (false, 1) => {
                let slope = rng.gen_range(0.05..2.0);
                PieceForm::Linear { slope, intercept: start - slope * lo }
            }
            (true, 0) if start > 0.0 => PieceForm::Constant { level: start },
            (true, 1) if lo > 1.5 && start > 0.0 => PieceForm::Logarithmic { scale: start / lo.ln() },
            _ => {
                let exponent = rng.gen_range(0.2..0.9);
                let scale = rng.gen_range(0.2..2.0);
                let shift = lo - (start / scale).powf(1.0 / exponent);
                PieceForm::ShiftedPower { exponent, scale, shift }
            }
        };
        level = if last { level } else { form.value(hi) };
        pieces.push(UtilityPiece::new(lo, hi, form));
    }
    PiecewiseUtility::new(pieces).ok()
}

/// Random market on `n` states with `z` normalized to `E[z] = 1`.
pub fn finite_market<R: Rng>(rng: &mut R, n: usize) -> FiniteMarket {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = w.iter().sum();
    let p: Vec<f64> = w.iter().map(|v| v / total).collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..2.0)).collect();
    let mean: f64 = p.iter().zip(&raw).map(|(a, b)| a * b).sum();
    let z: Vec<f64> = raw.iter().map(|v| v / mean).collect();
    FiniteMarket::new(p, z).expect("normalized random market is valid")
}

/// Random strategy that is self-financing for `lambda`: each node trades a
/// random amount and may also consume cash.
pub fn strategy<R: Rng>(rng: &mut R, tree: &EventTree, x: f64, lambda: f64) -> TradingStrategy {
    let mut holdings: Vec<NodeHoldings> = Vec::with_capacity(tree.len());
    for (n, node) in tree.nodes().iter().enumerate() {
        let (cash0, stock0) = match node.parent {
            Some(p) => (holdings[p].cash, holdings[p].stock),
            None => (x, 0.0),
        };
        let (buy, sell) = if rng.gen_bool(0.5) { (rng.gen_range(0.0..2.0), 0.0) } else { (0.0, rng.gen_range(0.0..2.0)) };
        let consumed = if rng.gen_bool(0.3) { rng.gen_range(0.0..0.1) } else { 0.0 };
        let cash = cash0 - node.price * buy + (1.0 - lambda) * node.price * sell - consumed;
        debug_assert_eq!(n, holdings.len());
        holdings.push(NodeHoldings { cash, stock: stock0 + buy - sell, buy, sell });
    }
    TradingStrategy { initial_cash: x, holdings }
}
