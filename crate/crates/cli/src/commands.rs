use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use plcopula::conditional::{fit_composite, CompositeConfig, MarginalSpec};
use plcopula::dpm::{DpmSpec, GibbsConfig};
use plcopula::math::{ks_uniform, mix_seed, std_normal_cdf};
use plcopula::model_io::{read_model, write_model, StoredModel};
use plcopula::pl::{rank_covariates, GaussianPrior, MhConfig, RateSign};
use plcopula::polya_tree::{AlphaSchedule, BaseDistribution, PolyaTreeSpec};
use plcopula::predictive::{predict_draws, DensityConfig, PredictiveConfig, PredictiveDensity};
use plcopula::simgen::{gen_census_like, gen_linear_gaussian, gen_mixture3, Experiment};
use plcopula::{build_order, pit_values, RegressionDataset, Scheme};
use rayon::prelude::*;

use crate::error::CliError;
use crate::input::{load_rows, load_training};
use crate::metrics::{point_errors, point_from_draws, point_from_grid, shortest_interval, Point};
use crate::options::{MarginalKind, Options, PtBase, SignArg};
use crate::output::{num, Outputs};

const DEFAULT_DRAWS: usize = 2000;
const DEFAULT_LEVEL: f64 = 0.8;
const DEFAULT_BETA_DRAWS: usize = 64;

fn sample_mean_sd(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn marginal_spec(opts: &Options, y: &[f64]) -> Result<MarginalSpec, CliError> {
    let seed = opts.seed();
    Ok(match opts.marginal.unwrap_or(MarginalKind::PolyaTree) {
        MarginalKind::Ecdf => MarginalSpec::Ecdf,
        MarginalKind::Bootstrap => MarginalSpec::Bootstrap,
        MarginalKind::PolyaTree => {
            let (m, s) = sample_mean_sd(y);
            let mean = opts.pt_mean.unwrap_or(m);
            let sd = opts.pt_sd.unwrap_or(s);
            if !(sd > 0.0 && sd.is_finite()) {
                return Err(CliError::Data("response has no spread; pass --pt-sd".into()));
            }
            let base = match opts.pt_base.unwrap_or(PtBase::Gaussian) {
                PtBase::Gaussian => BaseDistribution::Gaussian { mean, sd },
                // Laplace scale b has standard deviation b·√2.
                PtBase::Laplace => BaseDistribution::Laplace {
                    loc: mean,
                    scale: sd / std::f64::consts::SQRT_2,
                },
            };
            let mut spec = PolyaTreeSpec::new(base).with_alpha(AlphaSchedule::Quadratic(opts.pt_alpha.unwrap_or(1.0)));
            if let Some(d) = opts.pt_depth {
                spec = spec.with_depth(d);
            }
            spec.validate()?;
            MarginalSpec::PolyaTree(spec)
        }
        MarginalKind::Dpm => {
            let scaled = DpmSpec::scaled_to(y);
            let spec = DpmSpec {
                concentration: opts.dpm_alpha.unwrap_or(scaled.concentration),
                mu1: opts.dpm_mu.unwrap_or(scaled.mu1),
                kappa1: opts.dpm_kappa.unwrap_or(scaled.kappa1),
                nu1: opts.dpm_nu.unwrap_or(scaled.nu1),
                psi1: opts.dpm_psi.unwrap_or(scaled.psi1),
            };
            spec.validate()?;
            let d = GibbsConfig::default();
            let gibbs = GibbsConfig {
                n_iter: opts.dpm_iter.unwrap_or(d.n_iter),
                burn_in: opts.dpm_burn.unwrap_or(d.burn_in),
                thin: opts.dpm_thin.unwrap_or(d.thin),
                seed: mix_seed(seed, 1),
                ..d
            };
            MarginalSpec::Dpm { spec, gibbs }
        }
    })
}

fn composite_config(opts: &Options) -> CompositeConfig {
    let seed = opts.seed();
    let d = CompositeConfig::default();
    let mh = opts.mh_samples.filter(|&n| n > 0).map(|n| MhConfig {
        n_samples: n,
        burn_in: n / 5,
        seed: mix_seed(seed, 2),
        ..MhConfig::default()
    });
    CompositeConfig {
        sign: match opts.sign.unwrap_or(SignArg::Positive) {
            SignArg::Positive => RateSign::Positive,
            SignArg::Negative => RateSign::Negative,
        },
        mh,
        fx_max_rows: opts.fx_rows.unwrap_or(d.fx_max_rows),
        seed: mix_seed(seed, 3),
        ..d
    }
}

fn load_model(opts: &Options) -> Result<StoredModel, CliError> {
    let path = Options::require(&opts.model, "model")?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read model {}: {e}", path.display())))?;
    Ok(read_model(&text)?)
}

pub fn fit(opts: &Options) -> Result<(), CliError> {
    let out = opts.out_dir()?;
    let data = Options::require(&opts.data, "data")?;
    let response = opts.response.as_deref().unwrap_or("y");
    let training = load_training(data, opts.schema.as_deref(), response, opts.standardize.unwrap_or(false))?;
    let ds = &training.dataset;
    let spec = marginal_spec(opts, ds.y())?;
    let prior = GaussianPrior::isotropic(ds.p(), opts.prior_mean.unwrap_or(0.0), opts.prior_var.unwrap_or(1.0));
    let config = composite_config(opts);
    let order = build_order(ds.y(), mix_seed(opts.seed(), 4))?;

    log::info!("fitting n = {}, p = {}", ds.n(), ds.p());
    let start = Instant::now();
    let model = fit_composite(ds, &order, &spec, &prior, &config)?;
    let elapsed = start.elapsed().as_secs_f64();
    log::info!("fit finished in {elapsed:.2}s");

    let stored = StoredModel {
        model,
        feature_names: ds.feature_names().to_vec(),
        schema: Some(training.encoder.schema().clone()),
    };
    let ranks = {
        let mut r = rank_covariates(stored.model.pl(), &stored.feature_names)?;
        r.sort_by_key(|c| c.index);
        r
    };

    let mut outputs = Outputs::default();
    outputs.add("model.txt", write_model(&stored).into_bytes());
    outputs.add_csv(
        "coefficients.csv",
        &["name", "mean", "sd", "log_sign_prob", "lo95", "hi95"],
        ranks.iter().map(|c| {
            [
                c.name.clone(),
                num(c.posterior_mean),
                num(c.posterior_sd),
                num(c.log_prob_diff_sign),
                num(c.posterior_mean - 1.96 * c.posterior_sd),
                num(c.posterior_mean + 1.96 * c.posterior_sd),
            ]
        }),
    )?;
    outputs.add("fit_report.txt", fit_report(&stored, ds, &ranks, elapsed).into_bytes());
    outputs.commit(out)
}

fn fit_report(stored: &StoredModel, ds: &RegressionDataset, ranks: &[plcopula::pl::CovariateRank], secs: f64) -> String {
    let pl = stored.model.pl();
    let marginal = stored.model.marginal();
    let mut s = String::new();
    let _ = writeln!(s, "rows: {}", ds.n());
    let _ = writeln!(s, "features: {}", ds.p());
    let _ = writeln!(s, "rate sign: {}", pl.sign.symbol());
    let _ = writeln!(s, "newton iterations: {}", pl.iterations);
    let _ = writeln!(s, "gradient norm at MAP: {:.3e}", pl.grad_norm);
    if let Some(a) = pl.mh_acceptance {
        let _ = writeln!(s, "metropolis acceptance: {a:.3}");
    }
    let _ = writeln!(s, "fit seconds: {secs:.3}");
    let _ = writeln!(s, "\nmarginal: {}", marginal.name());
    for u in [0.05, 0.25, 0.5, 0.75, 0.95] {
        if let Ok(q) = marginal.quantile(u) {
            let _ = writeln!(s, "  quantile {u:.2}: {q:.6}");
        }
    }
    let width = ranks.iter().map(|c| c.name.len()).max().unwrap_or(4).max(4);
    let _ = writeln!(s, "\n{:<width$}  {:>12}  {:>12}  {:>14}", "name", "mean", "sd", "log P(sign)");
    for c in ranks {
        let _ = writeln!(
            s,
            "{:<width$}  {:>12.6}  {:>12.6}  {:>14.4}",
            c.name, c.posterior_mean, c.posterior_sd, c.log_prob_diff_sign
        );
    }
    s
}

fn predictive_config(opts: &Options) -> PredictiveConfig {
    PredictiveConfig {
        m: opts.draws.unwrap_or(DEFAULT_DRAWS),
        seed: opts.seed(),
        ..PredictiveConfig::default()
    }
}

fn row_vecs(x: &Array2<f64>) -> Vec<Vec<f64>> {
    x.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn predictive_density(stored: &StoredModel, opts: &Options) -> Result<PredictiveDensity, CliError> {
    let d = DensityConfig::default();
    Ok(PredictiveDensity::new(
        &stored.model,
        &DensityConfig {
            grid_size: opts.grid_size.unwrap_or(d.grid_size),
            n_beta: opts.beta_draws.unwrap_or(DEFAULT_BETA_DRAWS),
            seed: opts.seed(),
            ..d
        },
    )?)
}

/// Draws for every row, each row with the same seed.
fn draws_for_rows(stored: &StoredModel, x: &Array2<f64>, opts: &Options) -> Result<Vec<Vec<f64>>, CliError> {
    let model = &stored.model;
    let scheme = Scheme::for_marginal(model.marginal());
    let config = predictive_config(opts);
    row_vecs(x)
        .par_iter()
        .map(|row| predict_draws(model, row, scheme, &config).map(|d| d.samples))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::from)
}

pub fn predict(opts: &Options) -> Result<(), CliError> {
    let out = opts.out_dir()?;
    let stored = load_model(opts)?;
    let (x, _) = load_rows(Options::require(&opts.rows, "rows")?, &stored)?;
    let level = opts.level.unwrap_or(DEFAULT_LEVEL);
    let draws = draws_for_rows(&stored, &x, opts)?;

    let mut hpd_rows: Vec<[String; 4]> = Vec::new();
    let mut outputs = Outputs::default();
    if stored.model.marginal().has_density() {
        let density = predictive_density(&stored, opts)?;
        let rows = row_vecs(&x);
        let per_row = rows
            .par_iter()
            .map(|row| Ok((density.density(row), density.hpd(row, level)?)))
            .collect::<Result<Vec<_>, plcopula::Error>>()?;
        let mut grid_rows = Vec::new();
        for (i, (dens, hpd)) in per_row.iter().enumerate() {
            for (y, f) in density.grid().iter().zip(dens) {
                grid_rows.push([i.to_string(), num(*y), num(*f)]);
            }
            for &(lo, hi) in &hpd.intervals {
                hpd_rows.push([i.to_string(), num(lo), num(hi), num(level)]);
            }
        }
        outputs.add_csv("density.csv", &["row", "y", "density"], grid_rows)?;
    } else {
        for (i, d) in draws.iter().enumerate() {
            let (lo, hi) = shortest_interval(d, level);
            hpd_rows.push([i.to_string(), num(lo), num(hi), num(level)]);
        }
    }
    outputs.add_csv("hpd.csv", &["row", "lo", "hi", "level"], hpd_rows)?;
    outputs.add_csv(
        "draws.csv",
        &["row", "j", "y"],
        draws
            .iter()
            .enumerate()
            .flat_map(|(i, d)| d.iter().enumerate().map(move |(j, y)| [i.to_string(), j.to_string(), num(*y)])),
    )?;
    outputs.commit(out)
}

#[derive(Debug, Clone, Copy)]
struct Scores {
    ks: f64,
    mse: f64,
    mae: f64,
}

/// Ordinary least squares with intercept, scored by Gaussian PIT.
fn least_squares_scores(train: &RegressionDataset, x: &Array2<f64>, y: &[f64]) -> Result<Scores, CliError> {
    let (n, p) = (train.n(), train.p());
    if n <= p + 1 {
        return Err(CliError::Data(format!("baseline needs more than {} training rows", p + 1)));
    }
    let design = |m: &Array2<f64>| DMatrix::from_fn(m.nrows(), p + 1, |i, j| if j == 0 { 1.0 } else { m[[i, j - 1]] });
    let a = design(train.x());
    let b = DVector::from_column_slice(train.y());
    let coef = a
        .clone()
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| CliError::Numeric(format!("least squares: {e}")))?;
    let resid = &b - &a * &coef;
    let sigma = (resid.norm_squared() / (n - p - 1) as f64).sqrt();
    if !(sigma > 0.0) {
        return Err(CliError::Numeric("least squares fit has zero residual variance".into()));
    }
    let pred = design(x) * &coef;
    let pit: Vec<f64> = y.iter().zip(pred.iter()).map(|(&yi, &mu)| std_normal_cdf((yi - mu) / sigma)).collect();
    let m = y.len() as f64;
    Ok(Scores {
        ks: ks_uniform(&pit),
        mse: y.iter().zip(pred.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / m,
        mae: y.iter().zip(pred.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / m,
    })
}

pub fn diagnose(opts: &Options) -> Result<(), CliError> {
    let out = opts.out_dir()?;
    let stored = load_model(opts)?;
    let heldout = Options::require(&opts.heldout, "heldout")?;
    let (x, y) = load_rows(heldout, &stored)?;
    let y = y.ok_or_else(|| CliError::Data(format!("{}: no response column", heldout.display())))?;

    let pit = pit_values(&stored.model, &x, &y, opts.beta_draws.unwrap_or(32), opts.seed())?;
    // Point predictions come from the density grid when there is one, which
    // avoids the inner Monte Carlo of the mixture scheme on every row.
    let points: Vec<Point> = if stored.model.marginal().has_density() {
        let density = predictive_density(&stored, opts)?;
        row_vecs(&x)
            .par_iter()
            .map(|row| point_from_grid(density.grid(), &density.density(row)))
            .collect()
    } else {
        draws_for_rows(&stored, &x, opts)?.iter().map(|d| point_from_draws(d)).collect()
    };
    let errors = point_errors(&points, &y);

    let baseline = if opts.baseline.unwrap_or(false) {
        let data = Options::require(&opts.data, "data")?;
        let train = load_rows(data, &stored)?;
        let y_train = train.1.ok_or_else(|| CliError::Data(format!("{}: no response column", data.display())))?;
        let ds = RegressionDataset::new(train.0, y_train, stored.feature_names.clone())?;
        Some(least_squares_scores(&ds, &x, &y)?)
    } else {
        None
    };

    let mut summary = String::new();
    let _ = writeln!(summary, "rows={}", y.len());
    let _ = writeln!(summary, "model_pit_ks={}", num(pit.ks));
    let _ = writeln!(summary, "model_mse={}", num(errors.mse));
    let _ = writeln!(summary, "model_mae={}", num(errors.mae));
    if let Some(b) = baseline {
        let _ = writeln!(summary, "baseline_pit_ks={}", num(b.ks));
        let _ = writeln!(summary, "baseline_mse={}", num(b.mse));
        let _ = writeln!(summary, "baseline_mae={}", num(b.mae));
    }
    print!("{summary}");

    let mut outputs = Outputs::default();
    outputs.add_csv(
        "pit.csv",
        &["uniform_q", "pit"],
        pit.uniform_q.iter().zip(&pit.pit).map(|(q, p)| [num(*q), num(*p)]),
    )?;
    outputs.add("summary.txt", summary.into_bytes());
    outputs.commit(out)
}

pub fn simulate(opts: &Options) -> Result<(), CliError> {
    let out = opts.out_dir()?;
    let name = Options::require(&opts.experiment, "experiment")?;
    let experiment: Experiment = name.parse()?;
    let n = opts.n.unwrap_or(500);
    let seed = opts.seed();
    let mut outputs = Outputs::default();
    let scalar = |ds: RegressionDataset, outputs: &mut Outputs| -> Result<(), CliError> {
        let x = ds.x().column(0).to_vec();
        outputs.add_csv("data.csv", &["x", "y"], x.iter().zip(ds.y()).map(|(a, b)| [num(*a), num(*b)]))?;
        outputs.add("schema.txt", plcopula::Schema::new("y").numeric("x").to_string().into_bytes());
        Ok(())
    };
    match experiment {
        Experiment::Mixture3 => scalar(gen_mixture3(n, 0.25, seed)?, &mut outputs)?,
        Experiment::LinearGaussian => scalar(gen_linear_gaussian(n, seed)?, &mut outputs)?,
        Experiment::CensusLike => {
            let sim = gen_census_like(n, seed, mix_seed(seed, 1))?;
            let mut bytes = Vec::new();
            sim.raw.write_csv(&mut bytes)?;
            outputs.add("data.csv", bytes);
            outputs.add("schema.txt", sim.schema.to_string().into_bytes());
        }
    }
    outputs.commit(out)
}

pub fn rank(opts: &Options) -> Result<(), CliError> {
    let out = opts.out_dir()?;
    let stored = load_model(opts)?;
    let ranks = rank_covariates(stored.model.pl(), &stored.feature_names)?;
    for (i, c) in ranks.iter().take(10).enumerate() {
        println!("{:>3}  {:<32} log P(sign) {:>12.4}  mean {:>10.4}", i + 1, c.name, c.log_prob_diff_sign, c.posterior_mean);
    }
    let mut outputs = Outputs::default();
    outputs.add_csv(
        "ranking.csv",
        &["rank", "name", "log_sign_prob", "mean", "sd"],
        ranks.iter().enumerate().map(|(i, c)| {
            [
                (i + 1).to_string(),
                c.name.clone(),
                num(c.log_prob_diff_sign),
                num(c.posterior_mean),
                num(c.posterior_sd),
            ]
        }),
    )?;
    outputs.commit(out)
}
