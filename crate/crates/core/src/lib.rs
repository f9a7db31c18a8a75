//! Non-concave expected-utility maximization on finite-state markets.
//!
//! The pipeline is: a piecewise utility `U` on `(0, ∞)` is replaced by its
//! concave envelope `U_c` ([`utility`]), whose convex conjugate `V` is formed
//! by exact vertex algebra ([`transform`]). A fixed pricing density on a
//! finite market ([`market`]) then turns the budget-constrained problem into a
//! one-dimensional multiplier search with an explicit subgradient selection
//! at kinks ([`solver`]). The gap between the concavified optimum and the best
//! payoff under the original `U` is reported rather than hidden.

// `!(a > b)` is used on purpose so that NaN inputs fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod grid;
pub mod hull;
pub mod market;
pub mod numeric;
pub mod par;
mod primal;
pub mod random;
pub mod solver;
pub mod transform;
pub mod utility;

mod serde_ext;

pub use config::Tolerances;
pub use grid::{GridSpec, Spacing};
pub use market::{FiniteMarket, MarketError};
pub use par::Execution;
pub use solver::{Solver, SolverError, SolverResult};
pub use transform::{ConvexConjugate, ConvexFunction, SubdifferentialInterval, TransformError};
pub use utility::{ConcaveEnvelope, PieceForm, PiecewiseUtility, UtilityError, UtilityPiece};
