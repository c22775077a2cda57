mod common;

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

use plcopula::dpm::{dpm_gibbs_fit, ClusterStats, DpmInit, DpmPosterior, DpmSpec, DpmState, GibbsConfig};
use plcopula::math::{ks_statistic, seeded_rng};

use common::simpson;

/// Closed-form log evidence of `y` under a single normal-inverse-gamma cluster.
fn ln_evidence(spec: &DpmSpec, y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let ss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let (a0, b0) = (spec.nu1 / 2.0, spec.psi1 / 2.0);
    let kn = spec.kappa1 + n;
    let an = a0 + n / 2.0;
    let bn = b0 + 0.5 * ss + spec.kappa1 * n * (mean - spec.mu1).powi(2) / (2.0 * kn);
    ln_gamma(an) - ln_gamma(a0) + a0 * b0.ln() - an * bn.ln() + 0.5 * (spec.kappa1 / kn).ln()
        - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

fn stats(y: &[f64]) -> ClusterStats {
    ClusterStats {
        count: y.len() as u64,
        sum: y.iter().sum(),
        sumsq: y.iter().map(|v| v * v).sum(),
    }
}

fn spec() -> DpmSpec {
    DpmSpec {
        concentration: 1.3,
        mu1: 0.5,
        kappa1: 0.4,
        nu1: 5.0,
        psi1: 2.0,
    }
}

#[test]
fn predictive_is_a_ratio_of_evidences() {
    let s = spec();
    let data = [0.2, -1.1, 2.4, 0.9];
    for k in 0..data.len() {
        let seen = &data[..k];
        for y in [-3.0, 0.0, 1.7] {
            let mut with = seen.to_vec();
            with.push(y);
            let oracle = ln_evidence(&s, &with) - if k == 0 { 0.0 } else { ln_evidence(&s, seen) };
            let got = s.predictive(&stats(seen)).ln_pdf(y);
            assert!((got - oracle).abs() < 1e-10, "k = {k}, y = {y}: {got} vs {oracle}");
        }
    }
}

#[test]
fn two_point_gibbs_matches_the_exact_join_probability() {
    let s = spec();
    let (y1, y2) = (0.3, 1.4);
    let t_post = s.predictive(&stats(&[y1])).pdf(y2);
    let t_base = s.predictive(&ClusterStats::default()).pdf(y2);
    let q = t_post / (t_post + s.concentration * t_base);

    let config = GibbsConfig {
        n_iter: 40_100,
        burn_in: 100,
        thin: 1,
        seed: 17,
        init: DpmInit::Singletons,
    };
    let post = dpm_gibbs_fit(&s, &[y1, y2], &config).unwrap();
    let together = post.states().iter().filter(|st| st.n_clusters() == 1).count() as f64;
    let freq = together / post.states().len() as f64;
    assert!((freq - q).abs() < 0.015, "{freq} vs {q}");
}

#[test]
fn predictive_density_integrates_to_one_and_matches_cdf() {
    let mut rng = seeded_rng(3);
    let y: Vec<f64> = (0..200).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0 + 1.0).collect();
    let config = GibbsConfig {
        n_iter: 300,
        burn_in: 100,
        thin: 5,
        ..GibbsConfig::default()
    };
    let post = dpm_gibbs_fit(&DpmSpec::scaled_to(&y), &y, &config).unwrap();
    let mass = simpson(&|v| post.predictive_density(v), -60.0, 60.0, 1e-10);
    assert!((mass - 1.0).abs() < 1e-4, "{mass}");
    for t in [-2.0, 0.5, 3.0] {
        let c = simpson(&|v| post.predictive_density(v), -200.0, t, 1e-11);
        assert!((c - post.predictive_cdf(t)).abs() < 1e-4);
        let q = post.predictive_quantile(post.predictive_cdf(t)).unwrap();
        assert!((q - t).abs() < 1e-6);
    }
}

#[test]
fn state_draws_follow_the_state_predictive() {
    let s = spec();
    let state = DpmState {
        assignments: Vec::new(),
        clusters: vec![stats(&[-2.0, -2.2, -1.9, -2.1]), stats(&[3.0, 3.4, 2.8])],
        iteration: 1,
    };
    let post = DpmPosterior::from_states(s, vec![state]);
    let draws = post.draw_marginal_sample(0, 40_000, 5).unwrap();
    assert!(draws.windows(2).all(|w| w[0] <= w[1]));
    let ks = ks_statistic(&draws, |v| post.predictive_cdf(v));
    assert!(ks < 1.63 / (40_000f64).sqrt(), "{ks}");
}

#[test]
fn bimodal_sample_is_split_into_two_modes() {
    let mut rng = seeded_rng(6);
    let y: Vec<f64> = (0..400)
        .map(|i| {
            let centre = if i % 2 == 0 { -4.0 } else { 4.0 };
            centre + rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let config = GibbsConfig {
        n_iter: 600,
        burn_in: 200,
        thin: 4,
        seed: 7,
        ..GibbsConfig::default()
    };
    let post = dpm_gibbs_fit(&DpmSpec::scaled_to(&y), &y, &config).unwrap();
    let modal_clusters = {
        let mut counts: Vec<usize> = post.states().iter().map(|s| s.n_clusters()).collect();
        counts.sort();
        counts[counts.len() / 2]
    };
    assert!((2..=4).contains(&modal_clusters), "{modal_clusters}");
    let (left, mid, right) = (post.predictive_density(-4.0), post.predictive_density(0.0), post.predictive_density(4.0));
    assert!(left > 10.0 * mid && right > 10.0 * mid);
    for st in post.states() {
        assert_eq!(st.n(), 400);
        assert_eq!(st.recompute_stats(&y).iter().map(|c| c.count).collect::<Vec<_>>(), st.clusters.iter().map(|c| c.count).collect::<Vec<_>>());
    }
}

#[test]
fn fits_are_reproducible_and_text_round_trips() {
    let y: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
    let config = GibbsConfig {
        n_iter: 100,
        burn_in: 20,
        thin: 10,
        seed: 8,
        ..GibbsConfig::default()
    };
    let a = dpm_gibbs_fit(&spec(), &y, &config).unwrap();
    let b = dpm_gibbs_fit(&spec(), &y, &config).unwrap();
    assert_eq!(a, b);
    let back = DpmPosterior::from_text(&a.to_text()).unwrap();
    for v in [-4.0, -0.3, 0.0, 2.2] {
        assert_eq!(back.predictive_density(v), a.predictive_density(v));
    }
}

#[test]
fn invalid_configurations_are_rejected() {
    let bad = DpmSpec { psi1: 0.0, ..spec() };
    assert!(dpm_gibbs_fit(&bad, &[1.0], &GibbsConfig::default()).is_err());
    let short = GibbsConfig {
        n_iter: 10,
        burn_in: 10,
        ..GibbsConfig::default()
    };
    assert!(dpm_gibbs_fit(&spec(), &[1.0], &short).is_err());
    assert!(dpm_gibbs_fit(&spec(), &[f64::INFINITY], &GibbsConfig::default()).is_err());
}
