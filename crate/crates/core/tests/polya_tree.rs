mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use plcopula::math::{seeded_rng, std_normal_pdf};
use plcopula::polya_tree::{pt_update, AlphaSchedule, BaseDistribution, PolyaTreePosterior, PolyaTreeSpec};

use common::simpson;

fn gaussian_spec() -> PolyaTreeSpec {
    PolyaTreeSpec::new(BaseDistribution::Gaussian { mean: 0.0, sd: 2.0 })
}

fn normal_sample(n: usize, mean: f64, sd: f64, seed: u64) -> Vec<f64> {
    let mut rng = seeded_rng(seed);
    (0..n).map(|_| mean + sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

#[test]
fn prior_mean_is_the_base_measure() {
    for base in [
        BaseDistribution::Gaussian { mean: 1.0, sd: 3.0 },
        BaseDistribution::Laplace { loc: -2.0, scale: 0.5 },
    ] {
        let prior = PolyaTreePosterior::prior(&PolyaTreeSpec::new(base)).unwrap();
        for y in [-5.0, -1.0, 0.3, 2.0, 7.5] {
            assert!((prior.mean_density(y) - base.pdf(y)).abs() < 1e-12 * base.pdf(y).max(1e-300));
            assert!((prior.mean_cdf(y) - base.cdf(y)).abs() < 1e-12);
        }
    }
}

#[test]
fn posterior_density_integrates_to_one() {
    let y = normal_sample(800, 1.0, 0.7, 1);
    for base in [
        BaseDistribution::Gaussian { mean: 0.0, sd: 2.0 },
        BaseDistribution::Laplace { loc: 0.0, scale: 1.5 },
    ] {
        let post = pt_update(&PolyaTreeSpec::new(base), &y).unwrap();
        let (lo, hi) = (base.quantile(1e-9), base.quantile(1.0 - 1e-9));
        // Integrate leaf by leaf: the density is smooth inside each cell.
        let cells = 1u32 << post.depth();
        let mut mass = 0.0;
        for k in 0..cells {
            let a = base.quantile(k as f64 / cells as f64).max(lo);
            let b = base.quantile((k + 1) as f64 / cells as f64).min(hi);
            if b > a {
                // Nudge inside the cell so the endpoints take this leaf's factor.
                let h = 1e-12 * (b - a);
                mass += simpson(&|v| post.mean_density(v), a + h, b - h, 1e-13);
            }
        }
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
    }
}

#[test]
fn cdf_is_the_integral_of_the_density() {
    let y = normal_sample(300, -0.5, 1.2, 2);
    let post = pt_update(&gaussian_spec().with_depth(6), &y).unwrap();
    let lo = -14.0;
    for &t in &[-2.0, -0.5, 0.0, 1.3, 3.0] {
        let integral = simpson(&|v| post.mean_density(v), lo, t, 1e-10);
        assert!((integral - post.mean_cdf(t)).abs() < 1e-6, "at {t}: {integral} vs {}", post.mean_cdf(t));
    }
}

#[test]
fn inverse_cdf_inverts_the_cdf() {
    let y = normal_sample(500, 0.0, 1.0, 3);
    let post = pt_update(&gaussian_spec(), &y).unwrap();
    for i in 1..100 {
        let u = i as f64 / 100.0;
        let q = post.mean_inverse_cdf(u).unwrap();
        assert!((post.mean_cdf(q) - u).abs() < 1e-9);
    }
}

#[test]
fn split_draws_have_beta_moments() {
    let y = normal_sample(200, 0.5, 1.0, 4);
    let post = pt_update(&gaussian_spec(), &y).unwrap();
    for (level, k) in [(0u32, 0u32), (2, 1), (4, 9)] {
        let (a, b) = post.split_params(level, k);
        let draws: Vec<f64> = (0..20_000u64).map(|s| post.draw(s).theta(level, k)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let true_mean = a / (a + b);
        let true_var = a * b / ((a + b).powi(2) * (a + b + 1.0));
        assert!((mean - true_mean).abs() < 5.0 * (true_var / 20_000.0).sqrt());
        assert!((var / true_var - 1.0).abs() < 0.05, "level {level}: {var} vs {true_var}");
    }
}

#[test]
fn leaf_masses_form_a_distribution_centred_on_the_mean() {
    let y = normal_sample(100, 0.0, 1.0, 5);
    let spec = gaussian_spec().with_depth(5);
    let post = pt_update(&spec, &y).unwrap();
    let cells = 32;
    let mut avg = vec![0.0; cells];
    let draws = 4000;
    for s in 0..draws as u64 {
        let masses = post.draw(s).leaf_masses();
        assert!((masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, m) in avg.iter_mut().zip(&masses) {
            *a += m / draws as f64;
        }
    }
    for (k, a) in avg.iter().enumerate() {
        let lo = spec.base.quantile(k as f64 / cells as f64);
        let hi = spec.base.quantile((k + 1) as f64 / cells as f64);
        let expected = post.mean_cdf(hi) - post.mean_cdf(lo);
        assert!((a - expected).abs() < 0.1 * expected + 1e-3, "leaf {k}: {a} vs {expected}");
    }
}

#[test]
fn posterior_concentrates_on_the_truth() {
    let truth = |v: f64| std_normal_pdf((v - 1.0) / 0.5) / 0.5;
    let l1 = |n: usize| {
        let post = pt_update(&gaussian_spec(), &normal_sample(n, 1.0, 0.5, 6)).unwrap();
        simpson(&|v| (post.mean_density(v) - truth(v)).abs(), -3.0, 5.0, 1e-6)
    };
    let (small, large) = (l1(500), l1(50_000));
    assert!(large < 0.1, "{large}");
    assert!(large < 0.5 * small, "{small} -> {large}");
}

#[test]
fn constant_alpha_is_accepted_and_normalized() {
    let spec = gaussian_spec().with_alpha(AlphaSchedule::Constant(2.0)).with_depth(8);
    let post = pt_update(&spec, &normal_sample(100, 0.0, 1.0, 7)).unwrap();
    assert!((post.mean_cdf(40.0) - 1.0).abs() < 1e-12);
    post.check_consistency().unwrap();
}

#[test]
fn text_form_round_trips() {
    let post = pt_update(&gaussian_spec(), &normal_sample(300, 0.2, 1.0, 8)).unwrap();
    let back: PolyaTreePosterior = post.to_text().parse().unwrap();
    assert_eq!(back, post);
    assert_eq!(back.mean_density(0.123), post.mean_density(0.123));
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(pt_update(&gaussian_spec().with_depth(0), &[1.0]).is_err());
    assert!(pt_update(&gaussian_spec().with_depth(31), &[1.0]).is_err());
    assert!(pt_update(&PolyaTreeSpec::new(BaseDistribution::Gaussian { mean: 0.0, sd: -1.0 }), &[1.0]).is_err());
    assert!(pt_update(&gaussian_spec(), &[f64::NAN]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn update_order_does_not_matter(seed in 0u64..5000, n in 1usize..300, split in 0usize..300) {
        let y = normal_sample(n, 0.0, 3.0, seed);
        let batch = pt_update(&gaussian_spec(), &y).unwrap();
        let mut shuffled = y.clone();
        shuffled.shuffle(&mut seeded_rng(seed + 1));
        let k = split.min(n);
        let mut inc = pt_update(&gaussian_spec(), &shuffled[..k]).unwrap();
        for &v in &shuffled[k..] {
            inc.insert(v).unwrap();
        }
        prop_assert_eq!(&inc, &batch);
        prop_assert_eq!(inc.n(), n as u64);
    }

    #[test]
    fn random_measure_inverse_is_monotone(seed in 0u64..5000, u1 in 0.001f64..0.999, u2 in 0.001f64..0.999) {
        let post = pt_update(&gaussian_spec(), &normal_sample(50, 0.0, 1.0, 9)).unwrap();
        let d = post.draw(seed);
        let (lo, hi) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
        prop_assert!(d.inverse_cdf(lo).unwrap() <= d.inverse_cdf(hi).unwrap());
    }
}
