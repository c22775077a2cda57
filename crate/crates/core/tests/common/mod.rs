//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

use ndarray::Array2;
use plcopula::data::{OrderIndex, RegressionDataset};

/// Adaptive Simpson quadrature.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Every permutation of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = vec![a.clone()];
    let mut c = vec![0; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

/// Direct product of `λ_i / Σ_{j ≥ i} λ_j` with plain rates, `O(n²)`.
pub fn naive_pl_log_likelihood(x: &Array2<f64>, nu: &[usize], beta: &[f64], sign: f64) -> f64 {
    let rate = |i: usize| -> f64 {
        let eta: f64 = x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum();
        (sign * eta).exp()
    };
    let mut ll = 0.0;
    for i in 0..nu.len() {
        let denom: f64 = nu[i..].iter().map(|&j| rate(j)).sum();
        ll += (rate(nu[i]) / denom).ln();
    }
    ll
}

pub fn dataset(x: Array2<f64>) -> RegressionDataset {
    let n = x.nrows();
    let p = x.ncols();
    RegressionDataset::new(x, (0..n).map(|i| i as f64).collect(), (0..p).map(|j| format!("x{j}")).collect()).unwrap()
}

pub fn order_of(nu: Vec<usize>) -> OrderIndex {
    OrderIndex::from_permutation(nu).unwrap()
}

/// `∫ |f - g|` by the trapezoid rule on a uniform grid.
pub fn l1_distance(grid: &[f64], f: &[f64], g: &[f64]) -> f64 {
    let d: Vec<f64> = f.iter().zip(g).map(|(a, b)| (a - b).abs()).collect();
    grid.windows(2).zip(d.windows(2)).map(|(x, v)| 0.5 * (x[1] - x[0]) * (v[0] + v[1])).sum()
}
