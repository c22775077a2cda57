mod common;

use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use plcopula::data::{build_order, RegressionDataset};
use plcopula::math::{seeded_rng, std_normal_cdf};
use plcopula::pl::{
    fit_map, mh_refine, pl_grad_hess, pl_log_likelihood, rank_covariates, sign_probability, GaussianPrior, MhConfig,
    NewtonConfig, RateFunction, RateSign,
};

use common::{dataset, naive_pl_log_likelihood, order_of, permutations};

fn gaussian_x(seed: u64, n: usize, p: usize) -> Array2<f64> {
    let mut rng = seeded_rng(seed);
    Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal))
}

/// Responses drawn from the model itself: `Y = Z ~ Exp(exp(s βᵀx))`.
fn pl_sample(x: &Array2<f64>, beta: &[f64], sign: f64, seed: u64) -> RegressionDataset {
    let mut rng = seeded_rng(seed);
    let y: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|r| {
            let eta: f64 = r.iter().zip(beta).map(|(a, b)| a * b).sum();
            Exp::new((sign * eta).exp()).unwrap().sample(&mut rng)
        })
        .collect();
    let names = (0..x.ncols()).map(|j| format!("x{j}")).collect();
    RegressionDataset::new(x.clone(), y, names).unwrap()
}

#[test]
fn orderings_sum_to_one_under_both_signs() {
    for sign in [RateSign::Positive, RateSign::Negative] {
        let data = dataset(gaussian_x(3, 6, 2));
        let rate = RateFunction::with_sign(vec![0.7, -1.3], sign);
        let total: f64 = permutations(6)
            .into_iter()
            .map(|nu| pl_log_likelihood(&data, &order_of(nu), &rate).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-12, "{total}");
    }
}

#[test]
fn negative_sign_matches_naive_product() {
    let x = gaussian_x(5, 50, 3);
    let data = dataset(x.clone());
    let mut nu: Vec<usize> = (0..50).collect();
    nu.shuffle(&mut seeded_rng(6));
    let beta = vec![0.3, -0.2, 1.1];
    let fast = pl_log_likelihood(&data, &order_of(nu.clone()), &RateFunction::with_sign(beta.clone(), RateSign::Negative)).unwrap();
    let slow = naive_pl_log_likelihood(&x, &nu, &beta, -1.0);
    assert!((fast - slow).abs() < 1e-10 * slow.abs());
}

#[test]
fn hessian_is_negative_semidefinite() {
    let data = dataset(gaussian_x(8, 120, 4));
    let mut nu: Vec<usize> = (0..120).collect();
    let mut rng = seeded_rng(9);
    nu.shuffle(&mut rng);
    let order = order_of(nu);
    for _ in 0..20 {
        let beta: Vec<f64> = (0..4).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let h = pl_grad_hess(&data, &order, &RateFunction::new(beta)).unwrap().hessian;
        for _ in 0..10 {
            let v: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
            let q: f64 = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).map(|(i, j)| v[i] * h[[i, j]] * v[j]).sum();
            assert!(q <= 1e-9, "v'Hv = {q}");
        }
    }
}

#[test]
fn likelihood_is_invariant_to_row_relabelling() {
    let x = gaussian_x(10, 80, 2);
    let data = pl_sample(&x, &[0.5, -0.5], 1.0, 11);
    let mut perm: Vec<usize> = (0..80).collect();
    perm.shuffle(&mut seeded_rng(12));
    let shuffled = data.permute_rows(&perm).unwrap();
    let rate = RateFunction::new(vec![0.4, 0.1]);
    let a = pl_log_likelihood(&data, &build_order(data.y(), 0).unwrap(), &rate).unwrap();
    let b = pl_log_likelihood(&shuffled, &build_order(shuffled.y(), 0).unwrap(), &rate).unwrap();
    assert!((a - b).abs() < 1e-10 * a.abs());
}

#[test]
fn tied_responses_are_broken_reproducibly() {
    let y = vec![1.0, 2.0, 1.0, 3.0, 2.0, 1.0];
    let a = build_order(&y, 4).unwrap();
    let b = build_order(&y, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.tie_groups(), &[0..3, 3..5]);
    let mut first: Vec<usize> = a.nu()[0..3].to_vec();
    first.sort();
    assert_eq!(first, vec![0, 2, 5]);
    assert_eq!(a.nu()[5], 3);
}

#[test]
fn map_recovers_planted_coefficients() {
    let beta = [0.8, -0.5, 0.0];
    let x = gaussian_x(20, 4000, 3);
    let data = pl_sample(&x, &beta, 1.0, 21);
    let order = build_order(data.y(), 0).unwrap();
    let post = fit_map(&data, &order, &GaussianPrior::isotropic(3, 0.0, 10.0), &NewtonConfig::default()).unwrap();
    assert!(post.grad_norm < 1e-8);
    for j in 0..3 {
        let z = (post.beta_map[j] - beta[j]) / post.sd(j);
        assert!(z.abs() < 4.0, "coef {j}: {} sd {}", post.beta_map[j], post.sd(j));
    }
}

#[test]
fn negative_sign_flips_the_estimate() {
    let x = gaussian_x(22, 600, 2);
    let data = pl_sample(&x, &[0.6, -0.3], 1.0, 23);
    let order = build_order(data.y(), 0).unwrap();
    let prior = GaussianPrior::isotropic(2, 0.0, 4.0);
    let pos = plcopula::pl::fit_map_with_sign(&data, &order, &prior, RateSign::Positive, &NewtonConfig::default()).unwrap();
    let neg = plcopula::pl::fit_map_with_sign(&data, &order, &prior, RateSign::Negative, &NewtonConfig::default()).unwrap();
    for j in 0..2 {
        assert!((pos.beta_map[j] + neg.beta_map[j]).abs() < 1e-9);
    }
}

#[test]
fn laplace_covariance_matches_one_dimensional_curvature() {
    // Against a finite-difference second derivative of the log posterior.
    let x = gaussian_x(30, 300, 1);
    let data = pl_sample(&x, &[0.4], 1.0, 31);
    let order = build_order(data.y(), 0).unwrap();
    let prior = GaussianPrior::isotropic(1, 0.0, 2.0);
    let post = fit_map(&data, &order, &prior, &NewtonConfig::default()).unwrap();
    let lp = |b: f64| pl_log_likelihood(&data, &order, &RateFunction::new(vec![b])).unwrap() + prior.log_density(&[b]);
    let (b, h) = (post.beta_map[0], 1e-4);
    let curv = (lp(b + h) - 2.0 * lp(b) + lp(b - h)) / (h * h);
    assert!((post.laplace_cov[[0, 0]] * -curv - 1.0).abs() < 1e-4);
}

#[test]
fn sign_probability_is_the_normal_tail() {
    let x = gaussian_x(40, 200, 2);
    let data = pl_sample(&x, &[0.5, 0.02], 1.0, 41);
    let order = build_order(data.y(), 0).unwrap();
    let post = fit_map(&data, &order, &GaussianPrior::isotropic(2, 0.0, 1.0), &NewtonConfig::default()).unwrap();
    for j in 0..2 {
        let sp = sign_probability(&post, j).unwrap();
        let tail = std_normal_cdf(-post.beta_map[j].abs() / post.sd(j));
        assert!((sp.log_prob_diff_sign.exp() - tail).abs() < 1e-12);
    }
    let ranks = rank_covariates(&post, data.feature_names()).unwrap();
    assert_eq!(ranks[0].name, "x0");
}

#[test]
fn metropolis_agrees_with_laplace_in_the_bulk() {
    let x = gaussian_x(50, 400, 2);
    let data = pl_sample(&x, &[0.5, -0.25], 1.0, 51);
    let order = build_order(data.y(), 0).unwrap();
    let post = fit_map(&data, &order, &GaussianPrior::isotropic(2, 0.0, 1.0), &NewtonConfig::default()).unwrap();
    let config = MhConfig {
        n_samples: 4000,
        burn_in: 500,
        thin: 2,
        seed: 52,
    };
    let refined = mh_refine(&post, &data, &order, &config).unwrap();
    let samples = refined.mh_samples.as_ref().unwrap();
    assert_eq!(samples.len(), 4000);
    let acc = refined.mh_acceptance.unwrap();
    assert!((0.1..0.9).contains(&acc), "acceptance {acc}");
    for j in 0..2 {
        let mean = samples.iter().map(|s| s[j]).sum::<f64>() / samples.len() as f64;
        assert!((mean - post.beta_map[j]).abs() < 0.25 * post.sd(j), "coef {j}: {mean}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fast_likelihood_matches_naive(seed in 0u64..10_000, n in 2usize..60, p in 1usize..4) {
        let x = gaussian_x(seed, n, p);
        let data = dataset(x.clone());
        let mut rng = seeded_rng(seed ^ 0xabc);
        let mut nu: Vec<usize> = (0..n).collect();
        nu.shuffle(&mut rng);
        let beta: Vec<f64> = (0..p).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let fast = pl_log_likelihood(&data, &order_of(nu.clone()), &RateFunction::new(beta.clone())).unwrap();
        let slow = naive_pl_log_likelihood(&x, &nu, &beta, 1.0);
        prop_assert!((fast - slow).abs() <= 1e-9 * slow.abs().max(1.0));
    }

    #[test]
    fn gradient_from_derivatives_matches_likelihood(seed in 0u64..10_000, n in 2usize..80) {
        let data = dataset(gaussian_x(seed, n, 2));
        let mut nu: Vec<usize> = (0..n).collect();
        nu.shuffle(&mut seeded_rng(seed));
        let order = order_of(nu);
        let beta = vec![0.3, -0.6];
        let d = pl_grad_hess(&data, &order, &RateFunction::new(beta.clone())).unwrap();
        let ll = pl_log_likelihood(&data, &order, &RateFunction::new(beta)).unwrap();
        prop_assert!((d.log_likelihood - ll).abs() <= 1e-12 * ll.abs().max(1.0));
    }
}
