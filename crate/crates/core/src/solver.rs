//! Budget-constrained maximization of `Σ p_i U(f_i)` by concavification.
//!
//! The concavified problem is solved exactly: for a multiplier `y` every
//! state picks from the maximizer interval `-∂V(y z_i)`, and the budget
//! function `y ↦ Σ p_i z_i f_i(y)` is a monotone step map whose jumps sit at
//! `y = knot / z_i`. The multiplier search bisects over those candidates, so
//! it terminates exactly at a kink instead of approaching it.
//!
//! The value under the original `U` is searched separately: exactly, by
//! enumerating which piece of `U` each state sits on, when that is cheap;
//! otherwise by moving kink states onto points where `U = U_c` and
//! re-solving the remaining states.

use serde::Serialize;
use thiserror::Error;

use crate::config::Tolerances;
use crate::grid::GridSpec;
use crate::hull;
use crate::market::{FiniteMarket, MarketError};
use crate::numeric::{pairwise_dot, pairwise_sum};
use crate::par::{self, Execution};
use crate::primal;
use crate::transform::{self, ConvexConjugate, ConvexFunction, SubdifferentialInterval, TransformError};
use crate::utility::{ConcaveEnvelope, PiecewiseUtility, UtilityError};

/// Largest market accepted by [`Solver::brute_force`].
pub const BRUTE_FORCE_MAX_STATES: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Utility(#[from] UtilityError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error("initial wealth must be positive and finite, got {0}")]
    BadWealth(f64),
    #[error("wealth {x} is below the cheapest payoff {min} representable on the envelope grid")]
    BudgetBelowGrid { x: f64, min: f64 },
    #[error(
        "multiplier search did not bracket x = {x} after {iterations} iterations: \
         y in [{y_lo}, {y_hi}], budget in [{b_min}, {b_max}]"
    )]
    NonConvergence { x: f64, iterations: usize, y_lo: f64, y_hi: f64, b_min: f64, b_max: f64 },
    #[error("brute force is limited to {max} states, market has {n}")]
    TooManyStates { n: usize, max: usize },
    #[error("grid must be positive and increasing")]
    BadGrid,
    #[error("payoff has {0} entries, market has {1}")]
    LengthMismatch(usize, usize),
}

/// Where a state's payoff sits inside its maximizer interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Selection {
    pub lo: f64,
    /// `None` for an unbounded interval.
    pub hi: Option<f64>,
    pub chosen: f64,
    pub kink: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverResult {
    pub wealth: f64,
    /// Concavified optimizer `f̂`; budget-exact.
    pub payoff: Vec<f64>,
    /// Best payoff found for the original utility.
    pub primal_payoff: Vec<f64>,
    /// `y*`; zero when the budget does not bind.
    pub multiplier: f64,
    /// For smooth concave `U`: the multiplier at which the primal payoff
    /// solves `U'(g_i) = y z_i`, found without the sampled envelope.
    pub primal_multiplier: Option<f64>,
    pub primal_value_u: f64,
    pub concavified_value: f64,
    /// `v(y*) + x y*`.
    pub dual_value: f64,
    /// `concavified_value - primal_value_u`.
    pub duality_gap: f64,
    /// `Σ p_i max(0, U(g_i) - U_c(g_i))` at the primal payoff `g`: how far the
    /// sampled envelope undershoots `U` there. Zero for piecewise
    /// constant or linear utilities; a lower bound on the gap is `-slack`.
    pub discretization_slack: f64,
    pub kink_states: Vec<usize>,
    pub selection_record: Vec<Selection>,
    pub budget_slack: bool,
    pub warnings: Vec<String>,
    pub iterations: usize,
}

impl SolverResult {
    pub fn budget_used(&self, m: &FiniteMarket) -> f64 {
        pairwise_dot(&m.state_prices(), &self.payoff)
    }
}

/// `B_min(y)` and `B_max(y)`: cheapest and dearest cost of a maximizer
/// selection at `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BudgetEnvelope {
    pub y: f64,
    pub b_min: f64,
    pub b_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueCurve {
    pub x: Vec<f64>,
    pub u_u: Vec<f64>,
    pub u_uc: Vec<f64>,
    pub hull_u_u: Vec<f64>,
    pub multipliers: Vec<f64>,
    /// Grid points where brute force improved the primal value.
    pub refined: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityReport {
    pub max_dev_fenchel: f64,
    pub hull_coincidence_dev: f64,
    pub x_resolution: f64,
    pub y_resolution: f64,
    pub x_points: usize,
    pub y_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BruteForceResult {
    pub value: f64,
    pub payoff: Vec<f64>,
    /// Largest uniform spacing among the per-state grids.
    pub spacing: f64,
    /// Right-derivative bound of `U` on the affordable box.
    pub lipschitz: f64,
    pub evaluations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VFiniteReport {
    pub finite_for_all_probes: bool,
    pub probes: Vec<f64>,
    /// `v(y)`, `None` when some `y z_i` leaves the domain of `V`.
    pub values: Vec<Option<f64>>,
    /// `(probe, state)` pairs outside the domain.
    pub violations: Vec<(f64, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FocForm {
    /// `U` is smooth and concave, so `∂U_c` is a derivative up to grid error.
    Derivative,
    /// Membership of `y z_i` in the superdifferential of `U_c`.
    Subgradient,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FocReport {
    pub max_foc_residual: f64,
    pub checked_states: Vec<usize>,
    pub residuals: Vec<f64>,
    pub form: FocForm,
    /// `max |U'(g_i) - y z_i|` over positive states using the analytic
    /// derivative at the exact primal payoff and its multiplier; smooth case only.
    pub analytic_residual: Option<f64>,
    pub pass: bool,
}

struct SubSolution {
    y: f64,
    intervals: Vec<SubdifferentialInterval>,
    payoff: Vec<f64>,
    slack: bool,
    iterations: usize,
}

#[derive(Clone)]
struct Candidate {
    value: f64,
    payoff: Vec<f64>,
}

/// Market, utility and the precomputed envelope and conjugate.
#[derive(Debug, Clone)]
pub struct Solver {
    market: FiniteMarket,
    utility: PiecewiseUtility,
    envelope: ConcaveEnvelope,
    conjugate: ConvexConjugate,
    tol: Tolerances,
    prices: Vec<f64>,
    /// Points where `U = U_c` that a kink state may jump to.
    anchors: Vec<f64>,
}

impl Solver {
    pub fn new(market: FiniteMarket, utility: PiecewiseUtility, grid: &GridSpec, tol: Tolerances) -> Result<Self, SolverError> {
        let envelope = utility.compute_envelope(grid, &tol)?;
        Ok(Self::from_envelope(market, utility, envelope, tol))
    }

    pub fn from_envelope(market: FiniteMarket, utility: PiecewiseUtility, envelope: ConcaveEnvelope, tol: Tolerances) -> Self {
        let conjugate = transform::conjugate(&envelope, &tol);
        let prices = market.state_prices();
        let mut anchors = vec![envelope.vertex_x()[0]];
        for &(a, b) in envelope.components() {
            anchors.push(a);
            anchors.push(b);
        }
        anchors.sort_by(f64::total_cmp);
        anchors.dedup();
        Self { market, utility, envelope, conjugate, tol, prices, anchors }
    }

    pub fn market(&self) -> &FiniteMarket {
        &self.market
    }

    pub fn utility(&self) -> &PiecewiseUtility {
        &self.utility
    }

    pub fn envelope(&self) -> &ConcaveEnvelope {
        &self.envelope
    }

    pub fn conjugate(&self) -> &ConvexConjugate {
        &self.conjugate
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    /// `-∂V(y z)`.
    pub fn pointwise_argmax(&self, y: f64, z: f64) -> Result<SubdifferentialInterval, SolverError> {
        Ok(pointwise_argmax(&self.conjugate, y, z)?)
    }

    pub fn budget_envelope(&self, y: f64) -> Result<BudgetEnvelope, SolverError> {
        let states: Vec<usize> = (0..self.market.len()).collect();
        let (b_min, b_max) = self.budget_bounds(&states, y)?;
        Ok(BudgetEnvelope { y, b_min, b_max })
    }

    fn budget_bounds(&self, states: &[usize], y: f64) -> Result<(f64, f64), SolverError> {
        let z = self.market.density();
        let (mut lo, mut hi) = (Vec::with_capacity(states.len()), Vec::with_capacity(states.len()));
        let mut c = Vec::with_capacity(states.len());
        for &i in states {
            let iv = pointwise_argmax(&self.conjugate, y, z[i])?;
            lo.push(iv.lo);
            hi.push(iv.hi);
            c.push(self.prices[i]);
        }
        Ok((pairwise_dot(&c, &lo), pairwise_dot(&c, &hi)))
    }

    /// Exact concavified solve restricted to `states` with budget `budget`.
    fn subsolve(&self, states: &[usize], budget: f64) -> Result<SubSolution, SolverError> {
        let z = self.market.density();
        let c: Vec<f64> = states.iter().map(|&i| self.prices[i]).collect();
        let x0 = self.conjugate.maximizers().last().copied().unwrap_or(0.0);
        let floor = pairwise_sum(&c) * x0;
        if budget < floor - self.tol.budget {
            return Err(SolverError::BudgetBelowGrid { x: budget, min: floor });
        }
        if let Some(sat) = self.conjugate.satiation_level() {
            if budget > pairwise_sum(&c) * sat + self.tol.budget {
                let intervals = states.iter().map(|_| SubdifferentialInterval::new(sat, f64::INFINITY)).collect();
                return Ok(SubSolution { y: 0.0, intervals, payoff: vec![sat; states.len()], slack: true, iterations: 0 });
            }
        }

        let knots = self.conjugate.knots();
        let z_min = states.iter().map(|&i| z[i]).fold(f64::INFINITY, f64::min);
        let y_min = knots[0] / z_min;
        let mut cands: Vec<f64> = states
            .iter()
            .flat_map(|&i| knots.iter().filter(|k| **k > 0.0).map(move |k| k / z[i]))
            .filter(|y| *y >= y_min)
            .collect();
        if y_min > 0.0 {
            cands.push(y_min);
        }
        cands.sort_by(f64::total_cmp);
        let rel = self.tol.kink_rel;
        cands.dedup_by(|b, a| (*b - *a).abs() <= rel * a.abs().max(b.abs()));

        // First candidate with B_min <= budget; B_min is nonincreasing along `cands`.
        let (mut lo, mut hi) = (0usize, cands.len());
        let mut iterations = 0;
        while lo < hi {
            iterations += 1;
            if iterations > self.tol.max_bisection_iter {
                break;
            }
            let mid = lo + (hi - lo) / 2;
            let (b_min, _) = self.budget_bounds(states, cands[mid])?;
            if b_min <= budget {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let nonconvergence = |k: usize, b_min: f64, b_max: f64| SolverError::NonConvergence {
            x: budget,
            iterations,
            y_lo: cands.get(k.saturating_sub(1)).copied().unwrap_or(0.0),
            y_hi: cands.get(k).copied().unwrap_or(f64::INFINITY),
            b_min,
            b_max,
        };
        if lo == cands.len() || lo < hi {
            return Err(nonconvergence(lo, f64::NAN, f64::NAN));
        }
        let y = cands[lo];
        let (b_min, b_max) = self.budget_bounds(states, y)?;
        if b_min > budget + self.tol.budget || b_max < budget - self.tol.budget {
            return Err(nonconvergence(lo, b_min, b_max));
        }

        let intervals: Vec<SubdifferentialInterval> =
            states.iter().map(|&i| pointwise_argmax(&self.conjugate, y, z[i])).collect::<Result<_, _>>()?;
        let mut payoff: Vec<f64> = intervals.iter().map(|iv| iv.lo).collect();
        // Raise kink states in ascending z until the budget binds.
        let mut order: Vec<usize> = (0..states.len()).filter(|&k| !intervals[k].is_degenerate()).collect();
        order.sort_by(|&a, &b| z[states[a]].total_cmp(&z[states[b]]).then(a.cmp(&b)));
        let mut residual = budget - pairwise_dot(&c, &payoff);
        for k in order {
            if residual <= 0.0 {
                break;
            }
            let room = intervals[k].hi - intervals[k].lo;
            let add = (residual / c[k]).min(room);
            payoff[k] += add;
            residual = budget - pairwise_dot(&c, &payoff);
            if add == room {
                payoff[k] = intervals[k].hi;
            }
        }
        Ok(SubSolution { y, intervals, payoff, slack: false, iterations })
    }

    fn primal_value(&self, states: &[usize], payoff: &[f64]) -> f64 {
        let p = self.market.probabilities();
        let probs: Vec<f64> = states.iter().map(|&i| p[i]).collect();
        let us: Vec<f64> = payoff.iter().map(|&f| self.utility.value(f)).collect();
        pairwise_dot(&probs, &us)
    }

    /// Puts unspent budget into whichever single state gains most.
    fn absorb_leftover(&self, states: &[usize], budget: f64, mut payoff: Vec<f64>) -> Candidate {
        let c: Vec<f64> = states.iter().map(|&i| self.prices[i]).collect();
        let leftover = budget - pairwise_dot(&c, &payoff);
        if leftover > 0.0 && !states.is_empty() {
            let mut best: Option<(f64, usize)> = None;
            for k in 0..states.len() {
                let mut trial = payoff.clone();
                trial[k] += leftover / c[k];
                let v = self.primal_value(states, &trial);
                if best.is_none_or(|(bv, _)| v > bv) {
                    best = Some((v, k));
                }
            }
            let (_, k) = best.unwrap();
            payoff[k] += leftover / c[k];
        }
        Candidate { value: self.primal_value(states, &payoff), payoff }
    }

    /// Best payoff under `U` reachable by fixing kink states to anchor
    /// points and re-solving the rest. `None` when the budget is infeasible.
    fn primal_search(&self, states: &[usize], budget: f64, branched: usize, greedy: &mut bool) -> Option<Candidate> {
        if states.is_empty() {
            return Some(Candidate { value: 0.0, payoff: Vec::new() });
        }
        let sub = self.subsolve(states, budget).ok()?;
        let mut best = self.absorb_leftover(states, budget, sub.payoff.clone());
        let kinks: Vec<usize> = (0..states.len()).filter(|&k| !sub.intervals[k].is_degenerate()).collect();
        if sub.slack || kinks.is_empty() {
            return Some(best);
        }
        if branched + kinks.len() > self.tol.max_exhaustive_kinks {
            *greedy = true;
            let rounded: Vec<f64> = sub.intervals.iter().map(|iv| iv.lo).collect();
            let cand = self.absorb_leftover(states, budget, rounded);
            if cand.value > best.value {
                best = cand;
            }
            return Some(best);
        }

        let options: Vec<Vec<f64>> = kinks
            .iter()
            .map(|&k| {
                let iv = sub.intervals[k];
                let mut o: Vec<f64> = self.anchors.iter().copied().filter(|a| *a <= iv.hi).collect();
                o.push(iv.lo);
                if iv.hi.is_finite() {
                    o.push(iv.hi);
                }
                o.sort_by(f64::total_cmp);
                o.dedup();
                o
            })
            .collect();
        let rest: Vec<usize> = (0..states.len()).filter(|k| !kinks.contains(k)).collect();
        let rest_states: Vec<usize> = rest.iter().map(|&k| states[k]).collect();
        let mut choice = vec![0usize; kinks.len()];
        loop {
            let cost: f64 =
                kinks.iter().enumerate().map(|(idx, &k)| self.prices[states[k]] * options[idx][choice[idx]]).sum();
            let remaining = budget - cost;
            if remaining >= -self.tol.budget {
                if let Some(sub_best) = self.primal_search(&rest_states, remaining.max(0.0), branched + kinks.len(), greedy) {
                    let mut payoff = vec![0.0; states.len()];
                    for (idx, &k) in kinks.iter().enumerate() {
                        payoff[k] = options[idx][choice[idx]];
                    }
                    for (idx, &k) in rest.iter().enumerate() {
                        payoff[k] = sub_best.payoff[idx];
                    }
                    let cand = self.absorb_leftover(states, budget, payoff);
                    if cand.value > best.value {
                        best = cand;
                    }
                }
            }
            // Odometer over the option lists.
            let mut d = 0;
            while d < choice.len() {
                choice[d] += 1;
                if choice[d] < options[d].len() {
                    break;
                }
                choice[d] = 0;
                d += 1;
            }
            if d == choice.len() {
                break;
            }
        }
        Some(best)
    }

    /// Solves the concavified problem at wealth `x` and searches the
    /// original one.
    pub fn solve(&self, x: f64) -> Result<SolverResult, SolverError> {
        if !(x > 0.0 && x.is_finite()) {
            return Err(SolverError::BadWealth(x));
        }
        let n = self.market.len();
        let states: Vec<usize> = (0..n).collect();
        let p = self.market.probabilities();
        let z = self.market.density();
        let sub = self.subsolve(&states, x)?;
        let mut warnings = Vec::new();

        let uc: Vec<f64> = sub.payoff.iter().map(|&f| self.envelope.value(f)).collect();
        let concavified_value = pairwise_dot(p, &uc);
        let v_terms: Vec<f64> = z.iter().map(|&zi| self.conjugate.value(sub.y * zi)).collect::<Result<_, _>>()?;
        let dual_value = pairwise_dot(p, &v_terms) + x * sub.y;

        let kink_states: Vec<usize> = (0..n).filter(|&i| !sub.intervals[i].is_degenerate() && !sub.slack).collect();
        let selection_record = sub
            .intervals
            .iter()
            .zip(&sub.payoff)
            .map(|(iv, &f)| Selection {
                lo: iv.lo,
                hi: iv.hi.is_finite().then_some(iv.hi),
                chosen: f,
                kink: !iv.is_degenerate(),
            })
            .collect();

        let mut primal_multiplier = None;
        let exact = || primal::exhaustive(&self.utility, p, z, &self.prices, x, self.tol.budget);
        let primal = if self.utility.is_smooth_concave() {
            // `U_c = U`; solve the original problem directly rather than on the grid.
            match exact() {
                Some(e) => {
                    primal_multiplier = e.multiplier;
                    Candidate { value: self.primal_value(&states, &e.payoff), payoff: e.payoff }
                }
                None => Candidate { value: self.primal_value(&states, &sub.payoff), payoff: sub.payoff.clone() },
            }
        } else if self.envelope.components().is_empty() {
            Candidate { value: self.primal_value(&states, &sub.payoff), payoff: sub.payoff.clone() }
        } else {
            let mut greedy = false;
            let found = self.primal_search(&states, x, 0, &mut greedy);
            if greedy {
                warnings.push(format!(
                    "more than {} kink states: primal value uses greedy rounding and may be suboptimal",
                    self.tol.max_exhaustive_kinks
                ));
            }
            let mut best = found.unwrap_or_else(|| self.absorb_leftover(&states, x, sub.payoff.clone()));
            if let Some(e) = exact() {
                let cand = self.absorb_leftover(&states, x, e.payoff);
                if cand.value > best.value {
                    best = cand;
                }
            }
            best
        };
        let over: Vec<f64> = primal
            .payoff
            .iter()
            .map(|&g| (self.utility.value(g) - self.envelope.value(g)).max(0.0))
            .collect();
        let discretization_slack = pairwise_dot(p, &over);
        if sub.slack {
            warnings.push("budget slack: utility saturates below the available wealth".to_string());
        }

        Ok(SolverResult {
            wealth: x,
            payoff: sub.payoff,
            primal_payoff: primal.payoff,
            multiplier: sub.y,
            primal_multiplier,
            primal_value_u: primal.value,
            concavified_value,
            dual_value,
            duality_gap: concavified_value - primal.value,
            discretization_slack,
            kink_states,
            selection_record,
            budget_slack: sub.slack,
            warnings,
            iterations: sub.iterations,
        })
    }

    /// `v(y) = Σ p_i V(y z_i)`.
    pub fn dual_value(&self, y: f64) -> Result<f64, SolverError> {
        let terms: Vec<f64> =
            self.market.density().iter().map(|&z| self.conjugate.value(y * z)).collect::<Result<_, _>>()?;
        Ok(pairwise_dot(self.market.probabilities(), &terms))
    }

    pub fn dual_function(&self, y_grid: &[f64]) -> Result<Vec<f64>, SolverError> {
        check_grid(y_grid)?;
        y_grid.iter().map(|&y| self.dual_value(y)).collect()
    }

    /// Primal and concavified value on `x_grid`, with brute-force refinement
    /// of the primal value on small markets.
    pub fn value_function(&self, x_grid: &[f64], mode: Execution) -> Result<ValueCurve, SolverError> {
        check_grid(x_grid)?;
        let n = self.market.len();
        let refine_points = match n {
            1 | 2 => Some(2000),
            3 => Some(200),
            4 => Some(40),
            _ => None,
        };
        let rows = par::map(x_grid, mode, |&x| -> Result<(f64, f64, f64, bool), SolverError> {
            let r = self.solve(x)?;
            let mut u = r.primal_value_u;
            let mut refined = false;
            if let Some(points) = refine_points {
                if r.duality_gap > self.tol.value {
                    let bf = self.brute_force(x, points, Execution::Sequential)?;
                    if bf.value > u {
                        u = bf.value;
                        refined = true;
                    }
                }
            }
            Ok((u, r.concavified_value, r.multiplier, refined))
        });
        let rows: Vec<_> = rows.into_iter().collect::<Result<_, _>>()?;
        let mut u_u: Vec<f64> = rows.iter().map(|r| r.0).collect();
        for k in 1..u_u.len() {
            u_u[k] = u_u[k].max(u_u[k - 1]);
        }
        let mut u_uc: Vec<f64> = rows.iter().map(|r| r.1).collect();
        for k in 1..u_uc.len() {
            u_uc[k] = u_uc[k].max(u_uc[k - 1]);
        }
        let idx = hull::upper_hull(x_grid, &u_u, self.tol.hull_collinear_rel);
        let hx: Vec<f64> = idx.iter().map(|&i| x_grid[i]).collect();
        let hu: Vec<f64> = idx.iter().map(|&i| u_u[i]).collect();
        let hull_u_u = x_grid.iter().map(|&x| hull::interpolate(&hx, &hu, x)).collect();
        Ok(ValueCurve {
            x: x_grid.to_vec(),
            u_u,
            u_uc,
            hull_u_u,
            multipliers: rows.iter().map(|r| r.2).collect(),
            refined: rows.iter().enumerate().filter(|(_, r)| r.3).map(|(i, _)| i).collect(),
        })
    }

    /// Grid restatement of `v(y) = sup_x {u(x, U) - xy}` and of
    /// `u(·, U_c) = hull of u(·, U)`.
    pub fn duality_check(&self, x_grid: &[f64], y_grid: &[f64], mode: Execution) -> Result<DualityReport, SolverError> {
        let curve = self.value_function(x_grid, mode)?;
        let v = self.dual_function(y_grid)?;
        let max_dev_fenchel = y_grid
            .iter()
            .zip(&v)
            .map(|(&y, &vy)| {
                let best = x_grid.iter().zip(&curve.u_u).map(|(&x, &u)| u - x * y).fold(f64::NEG_INFINITY, f64::max);
                (vy - best).abs()
            })
            .fold(0.0, f64::max);
        let hull_coincidence_dev =
            curve.u_uc.iter().zip(&curve.hull_u_u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        Ok(DualityReport {
            max_dev_fenchel,
            hull_coincidence_dev,
            x_resolution: max_step(x_grid),
            y_resolution: max_step(y_grid),
            x_points: x_grid.len(),
            y_points: y_grid.len(),
        })
    }

    /// Exhaustive search over a product grid with one coordinate solved from
    /// the budget. Each state's grid holds `points` uniform nodes on
    /// `[0, x / (p_i z_i)]` plus every breakpoint of `U` below that cap.
    pub fn brute_force(&self, x: f64, points: usize, mode: Execution) -> Result<BruteForceResult, SolverError> {
        let n = self.market.len();
        if n > BRUTE_FORCE_MAX_STATES {
            return Err(SolverError::TooManyStates { n, max: BRUTE_FORCE_MAX_STATES });
        }
        if !(x > 0.0 && x.is_finite()) {
            return Err(SolverError::BadWealth(x));
        }
        let points = points.max(2);
        let c = &self.prices;
        let p = self.market.probabilities();
        let breaks = self.utility.breakpoints();
        let caps: Vec<f64> = c.iter().map(|ci| x / ci).collect();
        let grids: Vec<Vec<f64>> = caps
            .iter()
            .map(|&cap| {
                let mut g: Vec<f64> = (0..points).map(|k| cap * k as f64 / (points - 1) as f64).collect();
                g.extend(breaks.iter().copied().filter(|b| *b < cap));
                g.sort_by(f64::total_cmp);
                g.dedup();
                g
            })
            .collect();
        let spacing = caps.iter().map(|cap| cap / (points - 1) as f64).fold(0.0, f64::max);
        let max_cap = caps.iter().copied().fold(0.0, f64::max);
        let lipschitz = self.utility.lipschitz_bound(0.0, max_cap);

        let snap = |f: f64| -> f64 {
            for &b in &breaks {
                if f < b && b - f <= 1e-12 * b.max(1.0) {
                    return b;
                }
            }
            f
        };

        let mut best = Candidate { value: f64::NEG_INFINITY, payoff: vec![0.0; n] };
        let mut evaluations = 0u64;
        for free in 0..n {
            let others: Vec<usize> = (0..n).filter(|&i| i != free).collect();
            let evaluate = |fixed: &[usize]| -> Option<Candidate> {
                let mut f = vec![0.0; n];
                let mut spent = 0.0;
                for (&i, &k) in others.iter().zip(fixed) {
                    f[i] = grids[i][k];
                    spent += c[i] * f[i];
                }
                let rest = x - spent;
                if rest < 0.0 {
                    return None;
                }
                f[free] = snap(rest / c[free]);
                let us: Vec<f64> = f.iter().map(|&v| self.utility.value(v)).collect();
                Some(Candidate { value: pairwise_dot(p, &us), payoff: f })
            };
            let outer = others.first().map_or(1, |&i| grids[i].len());
            let chunks = par::map_range(outer, mode, |o| {
                let mut local: Option<Candidate> = None;
                let mut count = 0u64;
                let mut idx = vec![0usize; others.len()];
                if let Some(first) = idx.first_mut() {
                    *first = o;
                }
                loop {
                    count += 1;
                    if let Some(cand) = evaluate(&idx) {
                        if local.as_ref().is_none_or(|l| cand.value > l.value) {
                            local = Some(cand);
                        }
                    }
                    let mut d = 1;
                    while d < idx.len() {
                        idx[d] += 1;
                        if idx[d] < grids[others[d]].len() {
                            break;
                        }
                        idx[d] = 0;
                        d += 1;
                    }
                    if d >= idx.len() {
                        break;
                    }
                }
                (local, count)
            });
            for (local, count) in chunks {
                evaluations += count;
                if let Some(cand) = local {
                    if cand.value > best.value {
                        best = cand;
                    }
                }
            }
        }
        Ok(BruteForceResult { value: best.value, payoff: best.payoff, spacing, lipschitz, evaluations })
    }

    /// On a finite market `v(y) < ∞` exactly when every `y z_i` lies in the
    /// domain of `V`.
    pub fn check_assumption_vfinite(&self, probes: &[f64]) -> VFiniteReport {
        let mut values = Vec::with_capacity(probes.len());
        let mut violations = Vec::new();
        for &y in probes {
            let bad: Vec<usize> = self
                .market
                .density()
                .iter()
                .enumerate()
                .filter(|(_, &z)| !(y > 0.0) || self.conjugate.value(y * z).is_err())
                .map(|(i, _)| i)
                .collect();
            if bad.is_empty() {
                values.push(self.dual_value(y).ok());
            } else {
                values.push(None);
                violations.extend(bad.into_iter().map(|i| (y, i)));
            }
        }
        VFiniteReport { finite_for_all_probes: violations.is_empty(), probes: probes.to_vec(), values, violations }
    }

    fn derivative_residual(&self, payoff: &[f64], y: f64) -> f64 {
        let pieces = self.utility.pieces();
        let z = self.market.density();
        payoff
            .iter()
            .zip(z)
            .filter(|(f, _)| **f > 0.0)
            .map(|(&f, &zi)| {
                let k = pieces.partition_point(|p| p.lo <= f).saturating_sub(1);
                (pieces[k].form.derivative(f) - y * zi).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Checks `y* z_i ∈ ∂U_c(f̂_i)` on every state with `f̂_i > 0`.
    pub fn foc_check(&self, result: &SolverResult) -> FocReport {
        let z = self.market.density();
        let smooth = self.utility.is_smooth_concave();
        let mut checked = Vec::new();
        let mut residuals = Vec::new();
        for (i, &f) in result.payoff.iter().enumerate() {
            if !(f > 0.0) {
                continue;
            }
            let target = result.multiplier * z[i];
            let iv = transform::subdifferential_uc(&self.envelope, f, &self.tol);
            checked.push(i);
            residuals.push(iv.distance(target));
        }
        let max_foc_residual = residuals.iter().copied().fold(0.0, f64::max);
        let analytic = smooth.then(|| match result.primal_multiplier {
            Some(y) => self.derivative_residual(&result.primal_payoff, y),
            None => self.derivative_residual(&result.payoff, result.multiplier),
        });
        FocReport {
            max_foc_residual,
            checked_states: checked,
            residuals,
            form: if smooth { FocForm::Derivative } else { FocForm::Subgradient },
            analytic_residual: analytic,
            pass: max_foc_residual <= self.tol.membership,
        }
    }
}

/// Maximizer interval of `x ↦ U_c(x) - y z x`.
pub fn pointwise_argmax(v: &ConvexConjugate, y: f64, z: f64) -> Result<SubdifferentialInterval, TransformError> {
    v.argmax_interval(y * z)
}

fn check_grid(g: &[f64]) -> Result<(), SolverError> {
    if g.is_empty() || g.iter().any(|v| !(*v > 0.0 && v.is_finite())) || g.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SolverError::BadGrid);
    }
    Ok(())
}

fn max_step(g: &[f64]) -> f64 {
    g.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}
