//! Small numeric helpers shared by the solver and the checks.

const PAIRWISE_BLOCK: usize = 8;

/// Pairwise (cascade) summation with a fixed split order.
///
/// The reduction tree depends only on the slice length, so the result is
/// reproducible regardless of how the terms were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        return values.iter().fold(0.0, |acc, v| acc + v);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// `Σ a_i b_i` with pairwise reduction.
pub fn pairwise_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let terms: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    pairwise_sum(&terms)
}

/// True when `a` and `b` agree to within `rel` relative to their magnitude
/// (absolute `rel` near zero).
pub fn close_rel(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}
