use concavify::solver::{FocForm, SolverError};
use concavify::{random, Execution, FiniteMarket, GridSpec, PieceForm, PiecewiseUtility, Solver, Tolerances, UtilityPiece};
use proptest::prelude::*;

fn tol() -> Tolerances {
    Tolerances::default()
}

fn two_state() -> FiniteMarket {
    FiniteMarket::new(vec![0.5, 0.5], vec![0.5, 1.5]).unwrap()
}

fn step_solver(m: FiniteMarket) -> Solver {
    Solver::new(m, PiecewiseUtility::step(), &GridSpec::linear(0.001, 10.0, 2000), tol()).unwrap()
}

fn sqrt_solver(m: FiniteMarket) -> Solver {
    let u = PiecewiseUtility::power(0.5, 2.0).unwrap();
    Solver::new(m, u, &GridSpec::log(1e-6, 1e6, 4000), tol()).unwrap()
}

/// `min(x, 1)`: concave, and exactly representable by the hull.
fn kinked_concave() -> PiecewiseUtility {
    PiecewiseUtility::new(vec![
        UtilityPiece::new(0.0, 1.0, PieceForm::Linear { slope: 1.0, intercept: 0.0 }),
        UtilityPiece::new(1.0, f64::INFINITY, PieceForm::Constant { level: 1.0 }),
    ])
    .unwrap()
}

fn linear_grid() -> GridSpec {
    GridSpec::linear(0.01, 40.0, 400)
}

#[test]
fn argmax_examples() {
    let s = step_solver(two_state());
    assert_eq!(s.pointwise_argmax(0.5, 1.0).unwrap().lo, 1.0);
    let k = s.pointwise_argmax(1.0, 1.0).unwrap();
    assert_eq!((k.lo, k.hi), (0.0, 1.0));
    let q = sqrt_solver(two_state()).pointwise_argmax(2.0, 2.0).unwrap();
    // Maximizers are grid vertices, so they are exact only up to one log step.
    let step = 10f64.powf(12.0 / 3999.0) - 1.0;
    assert!((q.lo - 1.0 / 16.0).abs() <= step / 16.0 && (q.hi - 1.0 / 16.0).abs() <= step / 16.0);
}

#[test]
fn step_examples_agree_with_brute_force() {
    let s = step_solver(two_state());
    for (x, concavified, gap) in [(1.0, 1.0, 0.0), (0.5, 2.0 / 3.0, 1.0 / 6.0)] {
        let r = s.solve(x).unwrap();
        let bf = s.brute_force(x, 1000, Execution::Parallel).unwrap();
        assert_eq!(r.primal_value_u, bf.value);
        assert!((r.concavified_value - concavified).abs() <= 1e-12);
        assert!((r.duality_gap - gap).abs() <= 1e-12);
        assert!((r.budget_used(s.market()) - x).abs() <= 1e-12);
    }
    assert_eq!(s.solve(1.0).unwrap().payoff, vec![1.0, 1.0]);
}

#[test]
fn sqrt_matches_closed_form() {
    let s = sqrt_solver(two_state());
    let r = s.solve(1.0).unwrap();
    // Σ p_i z_i / (y z_i)² = 1 gives y² = Σ p_i / z_i = 4/3.
    let y = (4.0f64 / 3.0).sqrt();
    assert!((r.multiplier - y).abs() <= 1e-4 * y);
    for (f, z) in r.payoff.iter().zip([0.5, 1.5]) {
        let want = 1.0 / (y * z).powi(2);
        assert!((f - want).abs() <= 1e-2 * want, "{f} vs {want}");
    }
    let value = 3f64.sqrt() + 1.0 / 3f64.sqrt();
    assert!((r.concavified_value - value).abs() <= 1e-5);
    // The primal side is solved off the grid, so it hits the closed form.
    assert!((r.primal_value_u - value).abs() <= 1e-12);
    assert!((r.primal_multiplier.unwrap() - y).abs() <= 1e-12);
    for (g, z) in r.primal_payoff.iter().zip([0.5, 1.5]) {
        let want = 1.0 / (y * z).powi(2);
        assert!((g - want).abs() <= 1e-12 * want, "{g} vs {want}");
    }
    assert!(r.duality_gap >= -r.discretization_slack - 1e-12);
    assert!((r.budget_used(s.market()) - 1.0).abs() <= 1e-9);
    let foc = s.foc_check(&r);
    assert_eq!(foc.form, FocForm::Derivative);
    assert!(foc.max_foc_residual <= 1e-9);
    assert!(foc.analytic_residual.unwrap() <= 1e-12);
}

#[test]
fn satiation_is_flagged() {
    let r = step_solver(two_state()).solve(10.0).unwrap();
    assert!(r.budget_slack && r.multiplier == 0.0);
    assert_eq!(r.primal_value_u, 1.0);
}

#[test]
fn dual_function_examples() {
    let s = step_solver(two_state());
    let v = s.dual_function(&[0.5, 1.0, 3.0, 10.0]).unwrap();
    assert!((v[0] - 0.5).abs() <= 1e-15);
    assert!((v[1] - 0.25).abs() <= 1e-15);
    assert_eq!(&v[2..], &[0.0, 0.0]);
    let single = step_solver(FiniteMarket::single());
    for y in [0.1, 0.7, 1.0, 2.0] {
        assert_eq!(single.dual_value(y).unwrap(), single.conjugate().values()[0].min(1.0 - y).max(0.0));
    }
}

#[test]
fn vfinite_examples() {
    let probes = [0.01, 1.0, 100.0];
    let r = step_solver(two_state()).check_assumption_vfinite(&probes);
    assert!(r.finite_for_all_probes);
    assert!(r.values.iter().all(|v| v.unwrap() <= 1.0));

    let r = sqrt_solver(two_state()).check_assumption_vfinite(&[1.0]);
    assert!((r.values[0].unwrap() - 4.0 / 3.0).abs() <= 1e-4);

    let log = PiecewiseUtility::log(1.0).unwrap();
    let s = Solver::new(two_state(), log, &GridSpec::log(1e-6, 1e6, 4000), tol()).unwrap();
    let r = s.check_assumption_vfinite(&[1.0]);
    let want = 0.5 * (-(0.5f64).ln() - 1.0) + 0.5 * (-(1.5f64).ln() - 1.0);
    assert!((r.values[0].unwrap() - want).abs() <= 1e-4);
    // The grid stops at 1e6, so V is only finite above its last slope.
    let r = s.check_assumption_vfinite(&[1e-9]);
    assert!(!r.finite_for_all_probes && r.violations.len() == 2);
}

#[test]
fn value_curve_examples() {
    let s = step_solver(two_state());
    let c = s.value_function(&[0.25, 0.5, 1.0], Execution::Sequential).unwrap();
    let oracle: Vec<f64> = [0.25, 0.5, 1.0].iter().map(|&x| s.brute_force(x, 2000, Execution::Sequential).unwrap().value).collect();
    assert_eq!(c.u_u, oracle);
    assert_eq!(c.u_u, vec![0.5, 0.5, 1.0]);
    for (got, want) in c.u_uc.iter().zip([0.5, 2.0 / 3.0, 1.0]) {
        assert!((got - want).abs() <= 1e-12);
    }

    let concave = Solver::new(two_state(), kinked_concave(), &linear_grid(), tol()).unwrap();
    let grid: Vec<f64> = (1..=50).map(|k| k as f64 * 0.05).collect();
    let c = concave.value_function(&grid, Execution::Parallel).unwrap();
    for (a, b) in c.u_u.iter().zip(&c.u_uc) {
        assert!((a - b).abs() <= 1e-9);
    }
    let d = concave.duality_check(&grid, &[0.1, 0.5, 1.0], Execution::Parallel).unwrap();
    assert!(d.hull_coincidence_dev <= 1e-9);

    let single = step_solver(FiniteMarket::single());
    let c = single.value_function(&[0.3, 0.999, 1.0, 4.0], Execution::Sequential).unwrap();
    assert_eq!(c.u_u, vec![0.0, 0.0, 1.0, 1.0]);
    for (x, uc) in c.x.iter().zip(&c.u_uc) {
        assert!((uc - x.min(1.0)).abs() <= 1e-12);
    }
}

#[test]
fn parallel_and_sequential_curves_agree() {
    let s = Solver::new(random::finite_market(&mut random::rng(3), 6), PiecewiseUtility::two_bump(), &linear_grid(), tol())
        .unwrap();
    let grid: Vec<f64> = (1..=120).map(|k| k as f64 * 0.04).collect();
    let a = s.value_function(&grid, Execution::Sequential).unwrap();
    let b = s.value_function(&grid, Execution::Parallel).unwrap();
    assert_eq!(a, b);
    let s3 = step_solver(random::finite_market(&mut random::rng(4), 3));
    assert_eq!(
        s3.brute_force(0.8, 300, Execution::Sequential).unwrap(),
        s3.brute_force(0.8, 300, Execution::Parallel).unwrap()
    );
}

#[test]
fn brute_force_small_wealth_is_worthless_for_step() {
    let s = step_solver(two_state());
    assert_eq!(s.brute_force(1e-3, 200, Execution::Sequential).unwrap().value, 0.0);
}

#[test]
fn concave_brute_force_tracks_solve() {
    let s = Solver::new(two_state(), PiecewiseUtility::power(0.5, 2.0).unwrap(), &GridSpec::log(1e-6, 1e6, 4000), tol())
        .unwrap();
    let r = s.solve(1.0).unwrap();
    let bf = s.brute_force(1.0, 1000, Execution::Parallel).unwrap();
    assert!((bf.value - r.concavified_value).abs() <= 1e-4);
}

#[test]
fn kink_foc_uses_subgradients() {
    let s = step_solver(two_state());
    let r = s.solve(0.5).unwrap();
    let foc = s.foc_check(&r);
    assert_eq!(foc.form, FocForm::Subgradient);
    assert_eq!(foc.checked_states, vec![0, 1]);
    assert_eq!(foc.max_foc_residual, 0.0);
    let r = s.solve(0.25).unwrap();
    assert_eq!(s.foc_check(&r).checked_states, vec![0]);
}

#[test]
fn bad_inputs_are_errors() {
    let s = step_solver(two_state());
    assert!(matches!(s.solve(0.0), Err(SolverError::BadWealth(_))));
    assert!(matches!(s.solve(f64::NAN), Err(SolverError::BadWealth(_))));
    assert!(matches!(s.dual_function(&[1.0, 0.5]), Err(SolverError::BadGrid)));
    let log = PiecewiseUtility::log(1.0).unwrap();
    let s = Solver::new(two_state(), log, &GridSpec::log(1e-3, 1e3, 200), tol()).unwrap();
    assert!(matches!(s.solve(1e-4), Err(SolverError::BudgetBelowGrid { .. })));
}

fn random_solver(seed: u64, n: usize, linear: bool) -> Solver {
    let mut r = random::rng(seed);
    let u = if linear { random::piecewise_linear_utility(&mut r, 6) } else { random::piecewise_utility(&mut r, 6) };
    let m = random::finite_market(&mut r, n);
    Solver::new(m, u, &linear_grid(), tol()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn solve_result_invariants(seed in any::<u64>(), n in 1usize..7, x in 0.05f64..6.0, linear in any::<bool>()) {
        let s = random_solver(seed, n, linear);
        let r = s.solve(x).unwrap();
        let z = s.market().density();
        if !r.budget_slack {
            prop_assert!((r.budget_used(s.market()) - x).abs() <= 1e-9);
            prop_assert!((r.concavified_value - r.dual_value).abs() <= 1e-9 * r.dual_value.abs().max(1.0));
        }
        prop_assert!(r.concavified_value <= r.dual_value + 1e-9 * r.dual_value.abs().max(1.0));
        for (i, f) in r.payoff.iter().enumerate() {
            prop_assert!(s.pointwise_argmax(r.multiplier, z[i]).unwrap().contains(*f, 1e-9));
        }
        let primal_cost: f64 = s.market().state_prices().iter().zip(&r.primal_payoff).map(|(c, f)| c * f).sum();
        prop_assert!(primal_cost <= x + 1e-9);
        prop_assert!(r.duality_gap >= -r.discretization_slack - 1e-9);
        if linear {
            prop_assert!(r.discretization_slack <= 1e-12);
            let endpoint = r.kink_states.len() == 1 && {
                let sel = r.selection_record[r.kink_states[0]];
                sel.chosen == sel.lo || Some(sel.chosen) == sel.hi
            };
            if r.kink_states.is_empty() || endpoint {
                prop_assert!(r.duality_gap.abs() <= 1e-9, "gap {}", r.duality_gap);
            }
        }
        prop_assert!(s.foc_check(&r).pass);
    }

    #[test]
    fn multiplier_and_budget_envelope_are_monotone(seed in any::<u64>(), n in 1usize..6) {
        let s = random_solver(seed, n, false);
        let xs: Vec<f64> = (1..=40).map(|k| k as f64 * 0.15).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| s.solve(x).unwrap().multiplier).collect();
        prop_assert!(ys.windows(2).all(|w| w[1] <= w[0]));
        let start = s.conjugate().domain_start() / s.market().density().iter().copied().fold(f64::INFINITY, f64::min);
        let grid: Vec<f64> = (0..60).map(|k| start.max(1e-3) * 1.1f64.powi(k)).collect();
        let env: Vec<_> = grid.iter().map(|&y| s.budget_envelope(y).unwrap()).collect();
        for w in env.windows(2) {
            prop_assert!(w[0].b_min <= w[0].b_max + 1e-12);
            prop_assert!(w[1].b_min <= w[0].b_min + 1e-12 && w[1].b_max <= w[0].b_max + 1e-12);
        }
    }

    #[test]
    fn weak_duality_on_grids(seed in any::<u64>(), n in 1usize..4) {
        let s = random_solver(seed, n, true);
        let xs: Vec<f64> = (1..=30).map(|k| k as f64 * 0.2).collect();
        let curve = s.value_function(&xs, Execution::Parallel).unwrap();
        let ys: Vec<f64> = (1..=30).map(|k| k as f64 * 0.1).collect();
        let v = s.dual_function(&ys).unwrap();
        for (x, u) in xs.iter().zip(&curve.u_u) {
            for (y, vy) in ys.iter().zip(&v) {
                prop_assert!(*u <= vy + x * y + 1e-9);
            }
        }
        for k in 0..xs.len() {
            prop_assert!(curve.u_u[k] <= curve.u_uc[k] + 1e-9);
            prop_assert!(curve.u_uc[k] <= curve.hull_u_u[k] + 1e-9 || curve.hull_u_u[k] <= curve.u_uc[k] + 1e-9);
        }
        prop_assert!(curve.u_u.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(curve.u_uc.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(curve.hull_u_u.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn primal_matches_brute_force_within_grid_error(seed in any::<u64>(), n in 2usize..4, x in 0.1f64..4.0) {
        let s = random_solver(seed, n, true);
        let r = s.solve(x).unwrap();
        let bf = s.brute_force(x, 300, Execution::Parallel).unwrap();
        prop_assert!(r.primal_value_u <= bf.value + bf.lipschitz * bf.spacing + 1e-9);
        prop_assert!(bf.value <= r.concavified_value + 1e-9);
        // Brute force is feasible, so it can never beat an exact primal search.
        prop_assert!(bf.value <= r.primal_value_u + 1e-9, "brute force {} vs solve {}", bf.value, r.primal_value_u);
    }

    #[test]
    fn argmax_is_scale_invariant(seed in any::<u64>(), y in 0.05f64..3.0, z in 0.2f64..3.0, k in 0u32..6) {
        let s = random_solver(seed, 2, false);
        let c = 2f64.powi(k as i32 - 3);
        prop_assume!(y * z >= s.conjugate().domain_start());
        prop_assert_eq!(s.pointwise_argmax(y, z).unwrap(), s.pointwise_argmax(c * y, z / c).unwrap());
    }
}
