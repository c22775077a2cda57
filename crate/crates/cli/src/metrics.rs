//! Point-prediction errors and interval helpers over predictive draws.

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Midpoint median of an unsorted sample.
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointErrors {
    /// Squared error of the predictive mean.
    pub mse: f64,
    /// Absolute error of the predictive median.
    pub mae: f64,
}

/// Predictive mean and median of one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub mean: f64,
    pub median: f64,
}

pub fn point_from_draws(draws: &[f64]) -> Point {
    Point {
        mean: mean(draws),
        median: median(draws),
    }
}

/// Mean and median of a density tabulated on an ascending grid, with the
/// trapezoid rule and the mass renormalized to one.
pub fn point_from_grid(grid: &[f64], density: &[f64]) -> Point {
    let mut cum = vec![0.0; grid.len()];
    let mut first = 0.0;
    for k in 1..grid.len() {
        let h = grid[k] - grid[k - 1];
        cum[k] = cum[k - 1] + 0.5 * h * (density[k] + density[k - 1]);
        first += 0.5 * h * (grid[k] * density[k] + grid[k - 1] * density[k - 1]);
    }
    let mass = cum[grid.len() - 1];
    let half = 0.5 * mass;
    let k = cum.partition_point(|&c| c < half).clamp(1, grid.len() - 1);
    // Linear in the cumulative mass within the bracketing cell.
    let span = cum[k] - cum[k - 1];
    let t = if span > 0.0 { (half - cum[k - 1]) / span } else { 0.5 };
    Point {
        mean: first / mass,
        median: grid[k - 1] + t * (grid[k] - grid[k - 1]),
    }
}

pub fn point_errors(points: &[Point], y: &[f64]) -> PointErrors {
    let n = y.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, &yi) in points.iter().zip(y) {
        se += (p.mean - yi).powi(2);
        ae += (p.median - yi).abs();
    }
    PointErrors { mse: se / n, mae: ae / n }
}

/// Shortest interval holding `ceil(level · m)` of the draws.
pub fn shortest_interval(draws: &[f64], level: f64) -> (f64, f64) {
    let mut s = draws.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len();
    let k = ((level * m as f64).ceil() as usize).clamp(1, m);
    let mut best = (s[0], s[k - 1]);
    for i in 1..=m - k {
        if s[i + k - 1] - s[i] < best.1 - best.0 {
            best = (s[i], s[i + k - 1]);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_rows_by_hand() {
        let draws = vec![
            vec![1.0, 2.0, 3.0],
            vec![0.0, 0.0, 6.0],
            vec![-1.0, 1.0],
            vec![4.0],
            vec![2.0, 2.0, 2.0, 10.0],
        ];
        let y = [2.0, 1.0, 0.5, 5.0, 3.0];
        // means 2, 2, 0, 4, 4; medians 2, 0, 0, 4, 2
        let points: Vec<Point> = draws.iter().map(|d| point_from_draws(d)).collect();
        let e = point_errors(&points, &y);
        assert!((e.mse - (0.0 + 1.0 + 0.25 + 1.0 + 1.0) / 5.0).abs() < 1e-15);
        assert!((e.mae - (0.0 + 1.0 + 0.5 + 1.0 + 1.0) / 5.0).abs() < 1e-15);
    }

    #[test]
    fn grid_summary_of_a_uniform_and_a_triangle() {
        let grid: Vec<f64> = (0..=1000).map(|k| 2.0 + k as f64 / 1000.0).collect();
        let flat = vec![3.0; grid.len()];
        let p = point_from_grid(&grid, &flat);
        assert!((p.mean - 2.5).abs() < 1e-12 && (p.median - 2.5).abs() < 1e-12);
        // f(y) = 2(y - 2) on [2, 3]: mean 2 + 2/3, median 2 + 1/√2.
        let tri: Vec<f64> = grid.iter().map(|y| 2.0 * (y - 2.0)).collect();
        let p = point_from_grid(&grid, &tri);
        assert!((p.mean - (2.0 + 2.0 / 3.0)).abs() < 1e-6, "{p:?}");
        assert!((p.median - (2.0 + 0.5f64.sqrt())).abs() < 1e-3, "{p:?}");
    }

    #[test]
    fn shortest_interval_finds_the_dense_part() {
        let draws = [0.0, 10.0, 10.1, 10.2, 10.3, 30.0];
        assert_eq!(shortest_interval(&draws, 0.6), (10.0, 10.3));
        assert_eq!(shortest_interval(&[5.0], 0.8), (5.0, 5.0));
    }
}
