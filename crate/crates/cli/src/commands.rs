//! One function per subcommand.

use std::path::PathBuf;
use std::time::Instant;

use concavify::market::{self, CpsReport, CpsViolationKind};
use concavify::solver::Selection;
use concavify::transform::{self, ConvexConjugate};
use concavify::utility::{default_growth_probes, envelope_components};
use concavify::{random, ConcaveEnvelope, ConvexFunction, Execution, FiniteMarket, GridSpec, PiecewiseUtility, Solver, Tolerances, UtilityError};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{Output, ProblemConfig};
use crate::output::{fmt_f64, row, OutDir, SCHEMA};
use crate::{CliError, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Envelope,
    Conjugate,
    Eae,
    EnvelopeCheck,
    Solve,
    Curves,
    CpsCheck,
    Liquidate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Envelope => "envelope",
            Command::Conjugate => "conjugate",
            Command::Eae => "eae",
            Command::EnvelopeCheck => "envelope-check",
            Command::Solve => "solve",
            Command::Curves => "curves",
            Command::CpsCheck => "cps-check",
            Command::Liquidate => "liquidate",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    /// Overrides any `tolerances` block in the config.
    pub tolerance_profile: Option<String>,
    /// Fills in a random utility and/or market when the config omits them.
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct RunReport<'a> {
    schema: &'static str,
    command: &'static str,
    config_sha256: &'a str,
    tolerance_profile: &'a str,
    tolerances: &'a Tolerances,
    seed: Option<u64>,
    result: Value,
}

struct Ctx {
    cfg: ProblemConfig,
    digest: String,
    tol: Tolerances,
    profile: String,
    seed: Option<u64>,
    command: Command,
    out: OutDir,
}

impl Ctx {
    fn utility(&self) -> Result<PiecewiseUtility, CliError> {
        match (&self.cfg.utility, self.seed) {
            (Some(u), _) => Ok(u.clone()),
            (None, Some(s)) => Ok(random::piecewise_utility(&mut random::rng(s), 6)),
            (None, None) => Err(CliError::config("`utility` is required (or pass --seed for a random one)")),
        }
    }

    fn envelope_grid(&self) -> Result<GridSpec, CliError> {
        self.cfg.grids.envelope.ok_or_else(|| CliError::config("`grids.envelope` is required"))
    }

    fn envelope(&self) -> Result<(PiecewiseUtility, ConcaveEnvelope), CliError> {
        let u = self.utility()?;
        let env = u.compute_envelope(&self.envelope_grid()?, &self.tol)?;
        Ok((u, env))
    }

    fn exec(&self) -> Execution {
        self.cfg.execution.into()
    }

    /// The finite market, read off the tree when one is given.
    fn market(&self) -> Result<FiniteMarket, CliError> {
        let Some(m) = &self.cfg.market else {
            return match self.seed {
                Some(s) => Ok(random::finite_market(&mut random::rng(s.wrapping_add(1)), 3)),
                None => Err(CliError::config("`market` is required (or pass --seed for a random one)")),
            };
        };
        if let Some(f) = &m.finite {
            return Ok(f.clone());
        }
        let tree = m.tree.as_ref().expect("validated: tree present when finite is absent");
        let cand = m.cps.as_ref().ok_or_else(|| CliError::config("market.tree needs `market.cps` to define a density"))?;
        let report = market::check_cps(tree, cand, &self.tol)?;
        if !report.pass() {
            return Err(CliError::Cps(describe_cps(&report)));
        }
        Ok(market::terminal_density(tree, cand, &self.tol)?)
    }

    fn solver(&self) -> Result<Solver, CliError> {
        Ok(Solver::new(self.market()?, self.utility()?, &self.envelope_grid()?, self.tol)?)
    }

    fn grid(&self, name: &str) -> Result<Vec<f64>, CliError> {
        let g = match name {
            "x" => &self.cfg.grids.x,
            "y" => &self.cfg.grids.y,
            _ => &self.cfg.grids.wealth,
        };
        g.as_ref().ok_or_else(|| CliError::config(format!("`grids.{name}` is required")))?.nodes(&format!("grids.{name}"))
    }

    fn report(&mut self, result: Value) -> Result<(), CliError> {
        let r = RunReport {
            schema: SCHEMA,
            command: self.command.name(),
            config_sha256: &self.digest,
            tolerance_profile: &self.profile,
            tolerances: &self.tol,
            seed: self.seed,
            result,
        };
        self.out.json("report.json", &r)
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Internal(e.to_string()))
}

fn kind_name(k: CpsViolationKind) -> &'static str {
    match k {
        CpsViolationKind::RootNormalization => "root normalization",
        CpsViolationKind::MartingaleZ0 => "Z0 martingale",
        CpsViolationKind::MartingaleZ1 => "Z1 martingale",
        CpsViolationKind::Band => "bid-ask band",
    }
}

fn describe_cps(r: &CpsReport) -> String {
    r.per_node_violations
        .iter()
        .map(|v| format!("  node {}: {} residual {}", v.node, kind_name(v.kind), fmt_f64(v.residual)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Loads the config, runs `command` and writes its outputs under `opts.out`.
///
/// The wall-clock time goes to `timing.json`, never into `report.json`, so
/// that reports stay byte-identical across runs.
pub fn run(command: Command, opts: &RunOptions) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let (cfg, bytes) = ProblemConfig::load(&opts.config)?;
    let (tol, profile) = match (&opts.tolerance_profile, &cfg.tolerances) {
        (Some(name), _) => {
            let t = Tolerances::profile(name).ok_or_else(|| {
                CliError::config(format!("unknown tolerance profile {name:?}; expected one of {:?}", Tolerances::PROFILES))
            })?;
            (t, name.clone())
        }
        (None, Some(t)) => (*t, "config".to_string()),
        (None, None) => (Tolerances::default(), "default".to_string()),
    };
    let mut ctx = Ctx {
        cfg,
        digest: hex::encode(Sha256::digest(&bytes)),
        tol,
        profile,
        seed: opts.seed,
        command,
        out: OutDir::create(&opts.out)?,
    };
    let summary = match command {
        Command::Envelope => envelope(&mut ctx)?,
        Command::Conjugate => conjugate(&mut ctx)?,
        Command::Eae => eae(&mut ctx)?,
        Command::EnvelopeCheck => envelope_check(&mut ctx)?,
        Command::Solve => solve(&mut ctx)?,
        Command::Curves => curves(&mut ctx)?,
        Command::CpsCheck => cps_check(&mut ctx)?,
        Command::Liquidate => liquidate(&mut ctx)?,
    };
    let elapsed = start.elapsed().as_secs_f64();
    ctx.out.json("timing.json", &json!({ "command": command.name(), "wall_clock_seconds": elapsed }))?;
    Ok(Outcome { files: ctx.out.into_files(), summary })
}

fn envelope(ctx: &mut Ctx) -> Result<String, CliError> {
    let (u, env) = ctx.envelope()?;
    let comps = envelope_components(&env);
    let vertices = env.vertices();
    ctx.out.csv("envelope_vertices.csv", &["x", "u_c"], vertices.iter().map(|(x, v)| row(&[*x, *v])))?;
    ctx.out.csv("envelope_components.csv", &["start", "end"], comps.iter().map(|(a, b)| row(&[*a, *b])))?;
    let (xs, us) = env.samples();
    ctx.out.csv(
        "envelope_samples.csv",
        &["x", "u", "u_c"],
        xs.iter().zip(us).map(|(&x, &v)| row(&[x, v, env.value(x)])),
    )?;
    ctx.report(json!({
        "vertices": vertices,
        "components": comps,
        "tail_slope": env.tail_slope(),
        "samples": xs.len(),
        "breakpoints": u.breakpoints(),
    }))?;
    Ok(format!("{} hull vertices, {} component(s) of {{U < U_c}}", vertices.len(), comps.len()))
}

fn conjugate_table(conj: &ConvexConjugate) -> impl Iterator<Item = Vec<String>> + '_ {
    conj.knots().iter().zip(conj.values()).zip(conj.maximizers()).map(|((y, v), x)| row(&[*y, *v, *x]))
}

fn conjugate(ctx: &mut Ctx) -> Result<String, CliError> {
    let (_, env) = ctx.envelope()?;
    let conj = transform::conjugate(&env, &ctx.tol);
    ctx.out.csv("conjugate_vertices.csv", &["y", "v", "maximizer"], conjugate_table(&conj))?;
    let mut evaluated = 0;
    if ctx.cfg.grids.y.is_some() {
        let ys = ctx.grid("y")?;
        let rows: Vec<Vec<String>> = ys
            .iter()
            .map(|&y| {
                let v = conj.value(y).unwrap_or(f64::INFINITY);
                let (lo, hi) = conj.subdifferential(y).map(|d| (d.lo, d.hi)).unwrap_or((f64::NAN, f64::NAN));
                row(&[y, v, lo, hi])
            })
            .collect();
        evaluated = rows.len();
        ctx.out.csv("conjugate_eval.csv", &["y", "v", "dv_lo", "dv_hi"], rows)?;
    }
    ctx.report(json!({
        "conjugate": to_value(&conj)?,
        "domain_start": conj.domain_start(),
        "satiation_level": conj.satiation_level(),
        "evaluated_points": evaluated,
    }))?;
    Ok(format!("{} conjugate knots", conj.knots().len()))
}

fn eae(ctx: &mut Ctx) -> Result<String, CliError> {
    let ecfg = ctx.cfg.eae.clone().ok_or_else(|| CliError::config("`eae` is required"))?;
    let (_, env) = ctx.envelope()?;
    let conj = transform::conjugate(&env, &ctx.tol);
    let ys = ecfg.y.nodes("eae.y")?;
    let est = transform::estimate_eae(&conj, &ys, &ctx.tol)?;
    let mu = ecfg.mu.clone().unwrap_or_else(transform::default_mu_grid);
    let holds = ecfg.gamma.map(|g| transform::check_eae_inequality(&conj, g, ecfg.y0, &mu, &ys, &ctx.tol));
    let smallest = ecfg
        .gamma_candidates
        .as_ref()
        .map(|c| transform::smallest_eae_gamma(&conj, ecfg.y0, c, &mu, &ys, &ctx.tol));
    ctx.out.csv(
        "eae_decades.csv",
        &["decade", "max_ratio"],
        est.per_decade.iter().map(|d| vec![d.decade.to_string(), fmt_f64(d.max_ratio)]),
    )?;
    ctx.report(json!({
        "estimate": to_value(&est)?,
        "gamma": ecfg.gamma,
        "inequality_holds": holds,
        "smallest_gamma": smallest.flatten(),
        "y0": ecfg.y0,
    }))?;
    Ok(format!("EAE estimate {} (converged: {})", fmt_f64(est.estimate), est.converged))
}

fn envelope_check(ctx: &mut Ctx) -> Result<String, CliError> {
    let ec = ctx.cfg.envelope_check.clone().ok_or_else(|| CliError::config("`envelope_check` is required"))?;
    let u = ctx.utility()?;
    let probes = ec.growth_probes.clone().unwrap_or_else(default_growth_probes);
    let growth = u.check_growth(&probes, ctx.tol.growth_threshold);
    let domination = match u.compute_envelope(&ctx.envelope_grid()?, &ctx.tol) {
        Ok(env) => Some(transform::check_envelope_domination(&u, &env, ec.x0, ec.k, &ctx.tol)?),
        Err(UtilityError::GrowthViolated { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    ctx.report(json!({
        "growth": to_value(&growth)?,
        "domination": { "x0": ec.x0, "k": ec.k, "holds": domination },
    }))?;
    Ok(format!("growth ok: {}, domination holds: {:?}", growth.pass, domination))
}

fn selection_row(i: usize, m: &FiniteMarket, c: f64, f: f64, g: f64, s: &Selection) -> Vec<String> {
    let mut r = vec![i.to_string()];
    r.extend(row(&[m.probabilities()[i], m.density()[i], c, f, g, s.lo, s.hi.unwrap_or(f64::INFINITY)]));
    r.push(u8::from(s.kink).to_string());
    r
}

fn solve(ctx: &mut Ctx) -> Result<String, CliError> {
    let x = ctx.cfg.wealth.ok_or_else(|| CliError::config("`wealth` is required"))?;
    let solver = ctx.solver()?;
    let r = solver.solve(x)?;
    let m = solver.market();
    let prices = m.state_prices();
    ctx.out.csv(
        "payoff.csv",
        &["state", "probability", "density", "state_price", "payoff", "primal_payoff", "select_lo", "select_hi", "kink"],
        (0..m.len()).map(|i| selection_row(i, m, prices[i], r.payoff[i], r.primal_payoff[i], &r.selection_record[i])),
    )?;

    let mut extras = serde_json::Map::new();
    for out in &ctx.cfg.outputs {
        let (key, value) = match out {
            Output::Foc => ("foc", to_value(&solver.foc_check(&r))?),
            Output::Duality => ("duality", to_value(&solver.duality_check(&ctx.grid("x")?, &ctx.grid("y")?, ctx.exec())?)?),
            Output::BruteForce => ("brute_force", to_value(&solver.brute_force(x, ctx.cfg.brute_force_points, ctx.exec())?)?),
            Output::Vfinite => {
                let probes = if ctx.cfg.grids.y.is_some() { ctx.grid("y")? } else { GridSpec::log(1e-3, 1e3, 13).nodes() };
                ("vfinite", to_value(&solver.check_assumption_vfinite(&probes))?)
            }
        };
        extras.insert(key.into(), value);
    }

    if ctx.cfg.grids.wealth.is_some() {
        let ws = ctx.grid("wealth")?;
        let mut rows = Vec::with_capacity(ws.len());
        for &w in &ws {
            let s = solver.solve(w)?;
            let mut rr = row(&[w, s.multiplier, s.concavified_value, s.primal_value_u, s.dual_value, s.duality_gap]);
            rr.push(u8::from(s.budget_slack).to_string());
            rows.push(rr);
        }
        ctx.out.csv(
            "solve_sweep.csv",
            &["wealth", "multiplier", "concavified_value", "primal_value_u", "dual_value", "duality_gap", "budget_slack"],
            rows,
        )?;
    }

    for w in &r.warnings {
        log::warn!("{w}");
    }
    let summary = format!(
        "y* = {}, concavified {}, primal {}, gap {}{}",
        fmt_f64(r.multiplier),
        fmt_f64(r.concavified_value),
        fmt_f64(r.primal_value_u),
        fmt_f64(r.duality_gap),
        if r.budget_slack { " (budget slack)" } else { "" }
    );
    ctx.report(json!({
        "market": to_value(m)?,
        "solution": to_value(&r)?,
        "gap": {
            "duality_gap": r.duality_gap,
            "discretization_slack": r.discretization_slack,
            "kink_states": r.kink_states,
            "budget_slack": r.budget_slack,
        },
        "checks": Value::Object(extras),
    }))?;
    Ok(summary)
}

fn curves(ctx: &mut Ctx) -> Result<String, CliError> {
    let solver = ctx.solver()?;
    let xs = ctx.grid("x")?;
    let ys = ctx.grid("y")?;
    let curve = solver.value_function(&xs, ctx.exec())?;
    let v = solver.dual_function(&ys)?;
    let dual = solver.duality_check(&xs, &ys, ctx.exec())?;
    ctx.out.csv(
        "curves.csv",
        &["x", "u_U", "u_Uc", "hull_u_U"],
        (0..xs.len()).map(|k| row(&[curve.x[k], curve.u_u[k], curve.u_uc[k], curve.hull_u_u[k]])),
    )?;
    ctx.out.csv("dual.csv", &["y", "v"], ys.iter().zip(&v).map(|(y, v)| row(&[*y, *v])))?;
    let summary = format!(
        "max Fenchel deviation {}, hull coincidence deviation {}",
        fmt_f64(dual.max_dev_fenchel),
        fmt_f64(dual.hull_coincidence_dev)
    );
    ctx.report(json!({ "duality": to_value(&dual)?, "refined_points": curve.refined }))?;
    Ok(summary)
}

fn cps_check(ctx: &mut Ctx) -> Result<String, CliError> {
    let m = ctx.cfg.market.clone().unwrap_or_default();
    let (Some(tree), Some(cand)) = (m.tree, m.cps) else {
        return Err(CliError::config("cps-check needs `market.tree` and `market.cps`"));
    };
    let report = market::check_cps(&tree, &cand, &ctx.tol)?;
    let induced = if report.pass() { Some(market::terminal_density(&tree, &cand, &ctx.tol)?) } else { None };
    if let Some(fm) = &induced {
        ctx.out.json("market.json", fm)?;
        let leaves = tree.leaves();
        ctx.out.csv(
            "market.csv",
            &["leaf", "probability", "density"],
            leaves.iter().enumerate().map(|(i, l)| {
                let mut r = vec![l.to_string()];
                r.extend(row(&[fm.probabilities()[i], fm.density()[i]]));
                r
            }),
        )?;
    }
    ctx.report(json!({ "pass": report.pass(), "cps": to_value(&report)?, "market": to_value(&induced)? }))?;
    if report.pass() {
        Ok(format!("CPS passes on {} nodes; induced market has {} states", tree.len(), tree.leaves().len()))
    } else {
        Err(CliError::Cps(describe_cps(&report)))
    }
}

fn liquidate(ctx: &mut Ctx) -> Result<String, CliError> {
    let lambda = ctx.cfg.lambda().ok_or_else(|| CliError::config("`lambda` is required"))?;
    market::validate_lambda(lambda)?;
    if ctx.cfg.positions.is_none() && ctx.cfg.strategy.is_none() {
        return Err(CliError::config("liquidate needs `positions` or `strategy`"));
    }
    let mut result = serde_json::Map::new();
    result.insert("lambda".into(), json!(lambda));
    let mut summary = Vec::new();
    if let Some(ps) = ctx.cfg.positions.clone() {
        let mut values = Vec::with_capacity(ps.len());
        for p in &ps {
            if !(p.price > 0.0 && p.price.is_finite()) {
                return Err(CliError::config(format!("positions: price must be positive, got {}", p.price)));
            }
            values.push(market::liquidation_value(p.cash, p.stock, p.price, lambda));
        }
        ctx.out.csv(
            "liquidation.csv",
            &["cash", "stock", "price", "liquidation_value"],
            ps.iter().zip(&values).map(|(p, v)| row(&[p.cash, p.stock, p.price, *v])),
        )?;
        result.insert("positions".into(), json!(values));
        summary.push(format!("{} position(s) liquidated", ps.len()));
    }
    if let Some(s) = ctx.cfg.strategy.clone() {
        let tree = ctx
            .cfg
            .market
            .as_ref()
            .and_then(|m| m.tree.clone())
            .ok_or_else(|| CliError::config("`strategy` needs `market.tree`"))?;
        let sf = market::check_self_financing(&tree, &s, lambda, &ctx.tol)?;
        let adm = market::check_admissible(&tree, &s, lambda, &ctx.tol)?;
        ctx.out.csv(
            "strategy_liquidation.csv",
            &["node", "time", "price", "cash", "stock", "liquidation_value"],
            tree.nodes().iter().enumerate().map(|(n, node)| {
                let h = s.holdings[n];
                let mut r = vec![n.to_string(), node.time.to_string()];
                r.extend(row(&[node.price, h.cash, h.stock, adm.liquidation_values[n]]));
                r
            }),
        )?;
        summary.push(format!("self-financing: {}, admissible: {}", sf.ok, adm.admissible));
        result.insert("self_financing".into(), to_value(&sf)?);
        result.insert("admissibility".into(), to_value(&adm)?);
    }
    ctx.report(Value::Object(result))?;
    Ok(summary.join("; "))
}
