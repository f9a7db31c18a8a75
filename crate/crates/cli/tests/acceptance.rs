//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use concavify::market::{
    check_cps, check_self_financing, liquidation_value, CpsCandidate, CpsViolationKind, EventTree,
};
use concavify::solver::FocForm;
use concavify::transform::{biconjugate, conjugate, estimate_eae, fenchel_young_check, grid_sup_conjugate, subdifferential_uc};
use concavify::{
    random, ConcaveEnvelope, ConvexFunction, Execution, FiniteMarket, GridSpec, PiecewiseUtility, Solver,
    SubdifferentialInterval, Tolerances, TransformError,
};
use concavify_cli::{run, Command, RunOptions};
use rand::Rng;

type Outcome = Result<String, String>;

fn tol() -> Tolerances {
    Tolerances::default()
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64, what: &str) -> Result<(), String> {
    check(elapsed.as_secs_f64() < limit_s, || format!("{what} took {elapsed:.2?}, limit {limit_s} s"))
}

fn random_env(seed: u64) -> (PiecewiseUtility, ConcaveEnvelope) {
    let u = random::piecewise_utility(&mut random::rng(seed), 6);
    let env = u.compute_envelope(&GridSpec::linear(0.01, 40.0, 400), &tol()).expect("random envelope");
    (u, env)
}

fn log_grid(lo_exp: f64, hi_exp: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| 10f64.powf(lo_exp + (hi_exp - lo_exp) * k as f64 / (n - 1) as f64)).collect()
}

fn step_two_state() -> Solver {
    let m = FiniteMarket::new(vec![0.5, 0.5], vec![0.5, 1.5]).unwrap();
    Solver::new(m, PiecewiseUtility::step(), &GridSpec::linear(0.001, 10.0, 2000), tol()).unwrap()
}

/// Same conjugate from raw samples (grid sup) and from hull vertex algebra.
fn c1_conjugate_identity() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for seed in 0..100 {
        let (_, env) = random_env(seed);
        let v = conjugate(&env, &tol());
        let (xs, us) = env.samples();
        for &y in v.knots() {
            let raw = grid_sup_conjugate(xs, us, y);
            let dev = (raw - v.value(y).map_err(|e| e.to_string())?).abs();
            worst = worst.max(dev / raw.abs().max(1.0));
            points += 1;
        }
    }
    check(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    within(start.elapsed(), 10.0, "100 utilities")?;
    Ok(format!("{points} hull vertices, max deviation {worst:e}, {:.2?}", start.elapsed()))
}

/// Gap sign and the gap/membership equivalence on random and subgradient pairs.
fn c2_fenchel_young() -> Outcome {
    let start = Instant::now();
    let mut rng = random::rng(2);
    let (mut pairs, mut tight, mut min_gap) = (0, 0, f64::INFINITY);
    for seed in 0..20 {
        let (_, env) = random_env(1000 + seed);
        let v = conjugate(&env, &tol());
        for k in 0..500 {
            let x = rng.gen_range(0.0..30.0);
            // Every other pair is a subgradient pair by construction.
            let y = if k % 2 == 0 {
                let d = subdifferential_uc(&env, x, &tol());
                let hi = if d.hi.is_finite() { d.hi } else { d.lo + 1.0 };
                rng.gen_range(d.lo..=hi).max(v.domain_start())
            } else {
                rng.gen_range(v.domain_start().max(1e-3)..3.0)
            };
            let r = fenchel_young_check(&env, &v, x, y, &tol()).map_err(|e| e.to_string())?;
            min_gap = min_gap.min(r.gap);
            check(r.gap >= -1e-9, || format!("gap {} at ({x}, {y})", r.gap))?;
            let small = r.gap <= 1e-9;
            check(small == r.x_in_minus_dv && small == r.y_in_duc, || format!("flags disagree at ({x}, {y}): {r:?}"))?;
            tight += usize::from(small);
            pairs += 1;
        }
    }
    within(start.elapsed(), 5.0, "10^4 pairs")?;
    Ok(format!("{pairs} pairs ({tight} tight), min gap {min_gap:e}, {:.2?}", start.elapsed()))
}

fn c3_biconjugate() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (_, env) = random_env(1000 + seed);
        let b = biconjugate(&conjugate(&env, &tol()));
        for (x, u) in env.vertices() {
            worst = worst.max((b.value(x) - u).abs() / u.abs().max(1.0));
        }
    }
    check(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    Ok(format!("20 utilities, max vertex deviation {worst:e}"))
}

/// `V(y) = -ln y - 1`.
struct LogConjugate;

impl ConvexFunction for LogConjugate {
    fn value(&self, y: f64) -> Result<f64, TransformError> {
        Ok(-y.ln() - 1.0)
    }
    fn subdifferential(&self, y: f64) -> Result<SubdifferentialInterval, TransformError> {
        Ok(SubdifferentialInterval::point(-1.0 / y))
    }
}

fn c4_eae() -> Outcome {
    let t = tol();
    let sqrt = PiecewiseUtility::power(0.5, 2.0).unwrap().compute_envelope(&GridSpec::log(1e-6, 1e6, 4000), &t).unwrap();
    let e_sqrt = estimate_eae(&conjugate(&sqrt, &t), &log_grid(-2.5, 1.5, 41), &t).map_err(|e| e.to_string())?.estimate;
    let step = PiecewiseUtility::step().compute_envelope(&GridSpec::linear(0.001, 10.0, 1000), &t).unwrap();
    let e_step = estimate_eae(&conjugate(&step, &t), &log_grid(-5.0, -1.0, 41), &t).map_err(|e| e.to_string())?.estimate;
    // The log ratio 1/(-ln y - 1) only falls under 0.01 once y < 1e-44.
    let e_log = estimate_eae(&LogConjugate, &log_grid(-48.0, -44.0, 41), &t).map_err(|e| e.to_string())?.estimate;
    check((e_sqrt - 1.0).abs() <= 0.01, || format!("2√x: {e_sqrt}"))?;
    check((0.0..=0.01).contains(&e_step), || format!("step: {e_step}"))?;
    check((0.0..=0.01).contains(&e_log), || format!("log: {e_log}"))?;
    Ok(format!("2√x {e_sqrt:.5}, step {e_step:.2e}, log {e_log:.5}"))
}

fn c5_solver_vs_brute_force() -> Outcome {
    let start = Instant::now();
    let mut rng = random::rng(5);
    let (mut runs, mut worst_excess, mut worst_budget) = (0, f64::NEG_INFINITY, 0.0f64);
    for k in 0..50 {
        let n = 2 + k % 2;
        let m = random::finite_market(&mut rng, n);
        for (u, sat) in [(PiecewiseUtility::step(), 1.0), (PiecewiseUtility::two_bump(), 3.0)] {
            let s = Solver::new(m.clone(), u, &GridSpec::linear(0.001, 10.0, 2000), tol()).map_err(|e| e.to_string())?;
            let x = rng.gen_range(0.05..0.95 * sat);
            let r = s.solve(x).map_err(|e| e.to_string())?;
            let bf = s.brute_force(x, 1000, Execution::Parallel).map_err(|e| e.to_string())?;
            let bound = bf.lipschitz * bf.spacing + 1e-9;
            let dev = (r.primal_value_u - bf.value).abs();
            worst_excess = worst_excess.max(dev - bound);
            check(dev <= bound, || format!("market {k}, x {x}: solve {} vs brute force {}", r.primal_value_u, bf.value))?;
            let budget = (r.budget_used(s.market()) - x).abs();
            worst_budget = worst_budget.max(budget);
            check(!r.budget_slack && budget <= 1e-9, || format!("market {k}, x {x}: budget residual {budget:e}"))?;
            runs += 1;
        }
    }
    within(start.elapsed(), 60.0, "50 markets")?;
    Ok(format!(
        "{runs} solves, max |Δ| - L·h = {worst_excess:e}, max budget residual {worst_budget:e}, {:.2?}",
        start.elapsed()
    ))
}

/// Wealth grid `k·1.5/n`, `k = 1..n`, and a 200-point `y` grid up to 3.
fn curve_grids(n: usize) -> (Vec<f64>, Vec<f64>) {
    ((1..=n).map(|k| k as f64 * 1.5 / n as f64).collect(), (1..=200).map(|k| k as f64 * 3.0 / 200.0).collect())
}

fn duality_devs() -> Result<[(f64, f64); 2], String> {
    let s = step_two_state();
    let mut out = [(0.0, 0.0); 2];
    for (slot, n) in out.iter_mut().zip([1000, 2000]) {
        let (xs, ys) = curve_grids(n);
        let d = s.duality_check(&xs, &ys, Execution::Parallel).map_err(|e| e.to_string())?;
        *slot = (d.max_dev_fenchel, d.hull_coincidence_dev);
    }
    Ok(out)
}

fn c6_duality_curve(devs: &[(f64, f64); 2]) -> Outcome {
    let (d1, d2) = (devs[0].0, devs[1].0);
    check(d1 <= 5e-3, || format!("deviation {d1:e} at 10^3 points"))?;
    check(d2 <= 0.5 * d1 + 1e-12, || format!("deviation {d2:e} at 2·10^3 points vs {d1:e}"))?;
    Ok(format!("deviation {d1:e} (10^3 points) -> {d2:e} (2·10^3 points)"))
}

fn c7_hull_coincidence(devs: &[(f64, f64); 2]) -> Outcome {
    let (d1, d2) = (devs[0].1, devs[1].1);
    check(d1 <= 5e-3, || format!("deviation {d1:e} at 10^3 points"))?;
    check(d2 <= 0.5 * d1 + 1e-12, || format!("deviation {d2:e} at 2·10^3 points vs {d1:e}"))?;
    Ok(format!("deviation {d1:e} (10^3 points) -> {d2:e} (2·10^3 points)"))
}

fn c8_gap_witness() -> Outcome {
    let s = step_two_state();
    let r = s.solve(0.5).map_err(|e| e.to_string())?;
    let bf = s.brute_force(0.5, 1000, Execution::Sequential).map_err(|e| e.to_string())?;
    // U_c(1/3) = 1/3 in the expensive state, 1 in the cheap one.
    let concavified = 0.5 * 1.0 + 0.5 * (1.0 / 3.0);
    let oracle_gap = concavified - bf.value;
    check((oracle_gap - 1.0 / 6.0).abs() <= 1e-6, || format!("oracle gap {oracle_gap}"))?;
    check((r.duality_gap - 1.0 / 6.0).abs() <= 1e-6, || format!("reported gap {}", r.duality_gap))?;
    Ok(format!("gap {} (brute-force oracle {oracle_gap})", r.duality_gap))
}

fn c9_cps_and_liquidation() -> Outcome {
    let t = tol();
    let flat = EventTree::constant(3);
    let lambda = 0.2;
    let n = flat.len();
    let cand = CpsCandidate::new(vec![1.0; n], vec![0.9; n], lambda).map_err(|e| e.to_string())?;
    let r = check_cps(&flat, &cand, &t).map_err(|e| e.to_string())?;
    check(r.pass(), || format!("constant tree: {r:?}"))?;

    let tree = EventTree::binomial(1.0, 1.2, 0.9, 0.5, 1).map_err(|e| e.to_string())?;
    let z0 = vec![1.0, 2.0 / 3.0, 4.0 / 3.0];
    let z1 = vec![0.95, z0[1] * 1.21, z0[2] * 0.82];
    let r = check_cps(&tree, &CpsCandidate::new(z0, z1, 0.1).unwrap(), &t).map_err(|e| e.to_string())?;
    let nodes: Vec<_> = r.per_node_violations.iter().map(|v| (v.node, v.kind)).collect();
    check(nodes == [(1, CpsViolationKind::Band)], || format!("perturbed band violations {nodes:?}"))?;

    let mut rng = random::rng(9);
    for _ in 0..1000 {
        let phi0 = rng.gen_range(-10.0..10.0);
        let v = liquidation_value(phi0, 0.0, rng.gen_range(0.1..10.0), rng.gen_range(0.0..0.99));
        check(v == phi0, || format!("liquidation_value({phi0}, 0) = {v}"))?;
    }

    let tree = EventTree::binomial(1.0, 1.3, 0.8, 0.4, 3).unwrap();
    for _ in 0..20 {
        let lambda = rng.gen_range(0.05..0.5);
        let s = random::strategy(&mut rng, &tree, 1.0, lambda);
        for smaller in [0.25 * lambda, 0.5 * lambda, lambda] {
            let ok = check_self_financing(&tree, &s, smaller, &t).map_err(|e| e.to_string())?.ok;
            check(ok, || format!("strategy for λ = {lambda} not self-financing at λ = {smaller}"))?;
        }
    }
    Ok("constant tree passes, band violation at node 1, φ⁰ exact, 20 strategies monotone".into())
}

fn c10_foc() -> Outcome {
    let mut rng = random::rng(10);
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let m = random::finite_market(&mut rng, 2 + k % 5);
        let s = Solver::new(m, PiecewiseUtility::power(0.5, 2.0).unwrap(), &GridSpec::log(1e-6, 1e6, 4000), tol())
            .map_err(|e| e.to_string())?;
        let r = s.solve(rng.gen_range(0.1..5.0)).map_err(|e| e.to_string())?;
        let f = s.foc_check(&r);
        check(f.form == FocForm::Derivative, || "2√x reported as non-smooth".into())?;
        check(f.max_foc_residual <= 1e-9, || format!("2√x payoff outside the envelope superdifferential: {f:?}"))?;
        worst = worst.max(f.analytic_residual.unwrap_or(f64::INFINITY));
    }
    check(worst <= 1e-9, || format!("2√x |U'(f) - y z| {worst:e}"))?;

    let mut kinks = 0;
    for k in 0..20 {
        let m = random::finite_market(&mut rng, 2 + k % 5);
        let (u, sat) = if k % 2 == 0 { (PiecewiseUtility::step(), 1.0) } else { (PiecewiseUtility::two_bump(), 3.0) };
        let s = Solver::new(m, u, &GridSpec::linear(0.001, 10.0, 2000), tol()).map_err(|e| e.to_string())?;
        let r = s.solve(rng.gen_range(0.05..0.95 * sat)).map_err(|e| e.to_string())?;
        let f = s.foc_check(&r);
        let positive: Vec<usize> = (0..r.payoff.len()).filter(|&i| r.payoff[i] > 0.0).collect();
        check(f.form == FocForm::Subgradient && f.pass && f.checked_states == positive, || format!("kink utility {k}: {f:?}"))?;
        kinks += r.kink_states.len();
    }
    Ok(format!("2√x max |U'(f) - y z| {worst:e}; kink utilities pass ({kinks} kink states)"))
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timing.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn c11_determinism() -> Outcome {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/step_two_state.json");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run_id in ["a", "b"] {
        let opts = RunOptions { config: config.clone(), out: tmp.path().join(run_id), tolerance_profile: None, seed: None };
        run(Command::Solve, &opts).map_err(|e| e.to_string())?;
        outputs.push(files(&opts.out));
    }
    check(outputs[0].len() >= 2, || "solve wrote no files".into())?;
    check(outputs[0] == outputs[1], || "outputs differ between runs".into())?;
    let names: Vec<&str> = outputs[0].iter().map(|(n, _)| n.as_str()).collect();
    Ok(format!("byte-identical: {}", names.join(", ")))
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn main() {
    let (devs, devs_err) = match catch_unwind(duality_devs) {
        Ok(Ok(d)) => (Some(d), String::new()),
        Ok(Err(e)) => (None, e),
        Err(_) => (None, "panicked".into()),
    };
    let curves = |f: fn(&[(f64, f64); 2]) -> Outcome| -> Outcome {
        match &devs {
            Some(d) => f(d),
            None => Err(devs_err.clone()),
        }
    };
    let criteria: Vec<Criterion<'_>> = vec![
        ("conjugate identity", Box::new(c1_conjugate_identity)),
        ("Fenchel-Young equivalence", Box::new(c2_fenchel_young)),
        ("biconjugate fixed point", Box::new(c3_biconjugate)),
        ("EAE closed forms", Box::new(c4_eae)),
        ("solver vs brute force", Box::new(c5_solver_vs_brute_force)),
        ("duality curve", Box::new(move || curves(c6_duality_curve))),
        ("hull coincidence", Box::new(move || curves(c7_hull_coincidence))),
        ("gap witness", Box::new(c8_gap_witness)),
        ("CPS and liquidation", Box::new(c9_cps_and_liquidation)),
        ("FOC residuals", Box::new(c10_foc)),
        ("determinism", Box::new(c11_determinism)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
