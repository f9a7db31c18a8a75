//! Problem configuration: one JSON document per run.

use std::path::Path;

use concavify::market::{CpsCandidate, EventTree, TradingStrategy};
use concavify::{grid, Execution, FiniteMarket, GridSpec, PiecewiseUtility, Tolerances};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// A grid given either as `(x_min, x_max, points, spacing)` or as explicit points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
// `Points` goes first: a derived struct also accepts a JSON array, so a
// three-element list would otherwise parse as `(x_min, x_max, points)`.
#[serde(untagged)]
pub enum GridInput {
    Points(Vec<f64>),
    Spec(GridSpec),
}

impl GridInput {
    pub fn nodes(&self, field: &str) -> Result<Vec<f64>, CliError> {
        let nodes = match self {
            GridInput::Spec(g) => {
                g.validate().map_err(|e| CliError::config(format!("{field}: {e}")))?;
                g.nodes()
            }
            GridInput::Points(p) => {
                grid::validate_increasing(p).map_err(|e| CliError::config(format!("{field}: {e}")))?;
                p.clone()
            }
        };
        Ok(nodes)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grids {
    /// Sampling grid for the concave envelope.
    pub envelope: Option<GridSpec>,
    /// Wealth grid for value curves.
    pub x: Option<GridInput>,
    /// Multiplier grid for the dual function and conjugate tables.
    pub y: Option<GridInput>,
    /// Extra wealth levels solved by `solve`.
    pub wealth: Option<GridInput>,
}

/// Exactly one of `finite` or `tree` must be present; `cps` goes with `tree`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub finite: Option<FiniteMarket>,
    pub tree: Option<EventTree>,
    pub cps: Option<CpsCandidate>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionMode {
    Sequential,
    #[default]
    Parallel,
}

impl From<ExecutionMode> for Execution {
    fn from(m: ExecutionMode) -> Self {
        match m {
            ExecutionMode::Sequential => Execution::Sequential,
            ExecutionMode::Parallel => Execution::Parallel,
        }
    }
}

/// Optional extras computed by `solve`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    Foc,
    Duality,
    BruteForce,
    Vfinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EaeConfig {
    /// Log grid of `y` values spanning at least four decades.
    pub y: GridInput,
    /// Check `V(μy) ≤ μ^{-γ} V(y)` for this `γ`.
    pub gamma: Option<f64>,
    /// Report the smallest candidate `γ` passing the inequality check.
    pub gamma_candidates: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub y0: f64,
    pub mu: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeCheckConfig {
    pub x0: f64,
    #[serde(default = "one")]
    pub k: f64,
    pub growth_probes: Option<Vec<f64>>,
}

/// A static position to liquidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Position {
    pub cash: f64,
    pub stock: f64,
    pub price: f64,
}

fn one() -> f64 {
    1.0
}

fn default_outputs() -> Vec<Output> {
    vec![Output::Foc]
}

fn default_brute_force_points() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub utility: Option<PiecewiseUtility>,
    pub market: Option<MarketConfig>,
    /// Proportional transaction cost; defaults to the candidate's own `lambda`.
    pub lambda: Option<f64>,
    /// Initial wealth for `solve`.
    pub wealth: Option<f64>,
    #[serde(default)]
    pub grids: Grids,
    pub tolerances: Option<Tolerances>,
    #[serde(default = "default_outputs")]
    pub outputs: Vec<Output>,
    #[serde(default)]
    pub execution: ExecutionMode,
    #[serde(default = "default_brute_force_points")]
    pub brute_force_points: usize,
    pub eae: Option<EaeConfig>,
    pub envelope_check: Option<EnvelopeCheckConfig>,
    pub strategy: Option<TradingStrategy>,
    pub positions: Option<Vec<Position>>,
}

impl ProblemConfig {
    /// Parses a config document, reporting the failing field path with line and column.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            // serde_json appends "at line L column C" itself.
            CliError::config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        de.end().map_err(|e| CliError::config(format!("trailing content: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| CliError::config(format!("{} is not UTF-8: {e}", path.display())))?;
        Ok((Self::from_json(text)?, bytes))
    }

    fn validate(&self) -> Result<(), CliError> {
        if let Some(m) = &self.market {
            match (&m.finite, &m.tree) {
                (Some(_), Some(_)) => return Err(CliError::config("market: give either `finite` or `tree`, not both")),
                (None, None) => return Err(CliError::config("market: one of `finite` or `tree` is required")),
                (Some(_), None) if m.cps.is_some() => return Err(CliError::config("market: `cps` requires `tree`")),
                _ => {}
            }
            if let (Some(l), Some(c)) = (self.lambda, &m.cps) {
                if l != c.lambda {
                    return Err(CliError::config(format!("lambda {l} differs from market.cps.lambda {}", c.lambda)));
                }
            }
        }
        if let Some(w) = self.wealth {
            if !(w > 0.0 && w.is_finite()) {
                return Err(CliError::config(format!("wealth must be positive and finite, got {w}")));
            }
        }
        if let Some(g) = &self.grids.envelope {
            g.validate().map_err(|e| CliError::config(format!("grids.envelope: {e}")))?;
        }
        for (name, g) in [("grids.x", &self.grids.x), ("grids.y", &self.grids.y), ("grids.wealth", &self.grids.wealth)] {
            if let Some(g) = g {
                g.nodes(name)?;
            }
        }
        if self.brute_force_points < 2 {
            return Err(CliError::config("brute_force_points must be at least 2"));
        }
        Ok(())
    }

    /// `lambda` from the top level, else from the CPS candidate.
    pub fn lambda(&self) -> Option<f64> {
        self.lambda.or_else(|| self.market.as_ref().and_then(|m| m.cps.as_ref()).map(|c| c.lambda))
    }
}
