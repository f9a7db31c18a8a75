//! Upper concave hull of a sampled graph (monotone chain).

/// Indices of the upper hull of `(xs[i], ys[i])`, left to right.
///
/// `xs` must be strictly increasing. Points with `ys = -∞` are skipped.
/// A middle vertex is dropped when it lies on or below the chord of its
/// neighbours, up to a relative cross-product tolerance `collinear_rel`.
pub fn upper_hull(xs: &[f64], ys: &[f64], collinear_rel: f64) -> Vec<usize> {
    assert_eq!(xs.len(), ys.len());
    let mut hull: Vec<usize> = Vec::with_capacity(xs.len().min(1024));
    for i in 0..xs.len() {
        if ys[i] == f64::NEG_INFINITY {
            continue;
        }
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let (dx1, dy1) = (xs[b] - xs[a], ys[b] - ys[a]);
            let (dx2, dy2) = (xs[i] - xs[a], ys[i] - ys[a]);
            let lhs = dx1 * dy2;
            let rhs = dy1 * dx2;
            // b sits on or below the chord a -> i
            if lhs - rhs >= -collinear_rel * (lhs.abs() + rhs.abs()) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    hull
}

/// Evaluates the piecewise-linear interpolant through `(vx, vy)` at `x`,
/// extending affinely with the first and last slopes.
pub fn interpolate(vx: &[f64], vy: &[f64], x: f64) -> f64 {
    let n = vx.len();
    if n == 1 {
        return vy[0];
    }
    let j = vx.partition_point(|v| *v <= x);
    let k = j.clamp(1, n - 1);
    let slope = (vy[k] - vy[k - 1]) / (vx[k] - vx[k - 1]);
    if j == 0 {
        vy[0] + slope * (x - vx[0])
    } else {
        vy[k - 1] + slope * (x - vx[k - 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_graph_hull() {
        let xs = [0.0, 0.5, 0.999, 1.0, 5.0, 10.0];
        let ys = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        assert_eq!(upper_hull(&xs, &ys, 1e-13), vec![0, 3, 5]);
    }

    #[test]
    fn concave_points_are_all_kept() {
        let xs: Vec<f64> = (1..50).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sqrt()).collect();
        assert_eq!(upper_hull(&xs, &ys, 1e-13).len(), xs.len());
    }

    #[test]
    fn collinear_points_collapse() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(upper_hull(&xs, &ys, 1e-13), vec![0, 3]);
    }

    #[test]
    fn skips_negative_infinity() {
        let xs = [0.0, 1.0, 2.0];
        let ys = [f64::NEG_INFINITY, 0.0, 1.0];
        assert_eq!(upper_hull(&xs, &ys, 1e-13), vec![1, 2]);
    }

    #[test]
    fn interpolation_extends_affinely() {
        let vx = [1.0, 2.0, 4.0];
        let vy = [1.0, 2.0, 3.0];
        assert_eq!(interpolate(&vx, &vy, 1.5), 1.5);
        assert_eq!(interpolate(&vx, &vy, 3.0), 2.5);
        assert_eq!(interpolate(&vx, &vy, 6.0), 4.0);
        assert_eq!(interpolate(&vx, &vy, 0.0), 0.0);
    }
}
