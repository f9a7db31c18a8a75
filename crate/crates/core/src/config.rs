//! Centralized numerical tolerances.

use serde::{Deserialize, Serialize};

/// Every tolerance the library uses, in one place.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Absolute tolerance on utility/conjugate values.
    pub value: f64,
    /// Threshold on `U_c - U` above which a grid point belongs to `{U < U_c}`.
    pub component: f64,
    /// Absolute tolerance on budget identities.
    pub budget: f64,
    /// Relative distance at which a point counts as sitting on a kink.
    pub kink_rel: f64,
    /// Slack for interval membership tests (subgradients, argmax sets).
    pub membership: f64,
    /// Liquidation values above `-admissibility` count as nonnegative.
    pub admissibility: f64,
    /// Tolerance for self-financing and budget-set inequalities.
    pub inequality: f64,
    /// Tolerance for martingale identities on event trees.
    pub martingale: f64,
    /// Tolerance on `Σ p_i = 1`.
    pub probability_sum: f64,
    /// Relative tolerance in the EAE inequality check.
    pub eae_inequality_rel: f64,
    /// Relative per-decade variation above which the EAE estimate is flagged.
    pub eae_variation: f64,
    /// Largest acceptable `U(x)/x` at the largest growth probe.
    pub growth_threshold: f64,
    /// Hull vertices closer to collinear than this (relative) are merged.
    pub hull_collinear_rel: f64,
    pub max_bisection_iter: usize,
    /// Kink states branched exhaustively (both component endpoints) before
    /// the primal search falls back to a greedy assignment.
    pub max_exhaustive_kinks: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            value: 1e-9,
            component: 1e-8,
            budget: 1e-9,
            kink_rel: 1e-12,
            membership: 1e-9,
            admissibility: 1e-12,
            inequality: 1e-12,
            martingale: 1e-9,
            probability_sum: 1e-12,
            eae_inequality_rel: 1e-9,
            eae_variation: 0.05,
            growth_threshold: 0.5,
            hull_collinear_rel: 1e-13,
            max_bisection_iter: 200,
            max_exhaustive_kinks: 12,
        }
    }
}

impl Tolerances {
    /// Named profiles: `default`, `strict` (10x tighter) and `loose` (100x looser).
    pub fn profile(name: &str) -> Option<Self> {
        let d = Self::default();
        match name {
            "default" => Some(d),
            "strict" => Some(d.scaled(0.1)),
            "loose" => Some(d.scaled(100.0)),
            _ => None,
        }
    }

    pub const PROFILES: [&'static str; 3] = ["default", "strict", "loose"];

    fn scaled(self, f: f64) -> Self {
        Self {
            value: self.value * f,
            component: self.component * f,
            budget: self.budget * f,
            membership: self.membership * f,
            admissibility: self.admissibility * f,
            inequality: self.inequality * f,
            martingale: self.martingale * f,
            eae_inequality_rel: self.eae_inequality_rel * f,
            ..self
        }
    }
}
