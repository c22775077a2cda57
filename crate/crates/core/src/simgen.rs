//! Synthetic data generators with known ground truth.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::conditional::LatentMixtureCdf;
use crate::data::{encode_design, RawColumn, RawTable, RegressionDataset, Schema};
use crate::error::{Error, Result};
use crate::math::{mix_seed, seeded_rng, std_normal_cdf, std_normal_pdf, bisect_increasing};

/// Finite mixture of Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl GaussianMixture {
    /// Means 3, 9, 15; sds 2, 0.5, 1; weights 0.5, 0.2, 0.3.
    pub fn three_component() -> Self {
        Self {
            weights: vec![0.5, 0.2, 0.3],
            means: vec![3.0, 9.0, 15.0],
            sds: vec![2.0, 0.5, 1.0],
        }
    }

    fn parts(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.sds)
            .map(|((&w, &m), &s)| (w, m, s))
    }

    pub fn cdf(&self, y: f64) -> f64 {
        self.parts().map(|(w, m, s)| w * std_normal_cdf((y - m) / s)).sum()
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.parts().map(|(w, m, s)| w * std_normal_pdf((y - m) / s) / s).sum()
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let lo = self.parts().map(|(_, m, s)| m - 40.0 * s).fold(f64::INFINITY, f64::min);
        let hi = self.parts().map(|(_, m, s)| m + 40.0 * s).fold(f64::NEG_INFINITY, f64::max);
        bisect_increasing(|y| self.cdf(y), u, lo, hi)
    }
}

/// True copula regression model with a Gaussian-mixture marginal and a
/// scalar log-linear rate, with `F_Z` taken over reference covariates.
#[derive(Debug, Clone)]
pub struct SimModel {
    pub mixture: GaussianMixture,
    pub beta: f64,
    latent: LatentMixtureCdf,
}

impl SimModel {
    pub fn new(mixture: GaussianMixture, beta: f64, x_ref: &[f64]) -> Result<Self> {
        let latent = LatentMixtureCdf::from_log_rates(x_ref.iter().map(|x| beta * x).collect())?;
        Ok(Self { mixture, beta, latent })
    }

    pub fn latent(&self) -> &LatentMixtureCdf {
        &self.latent
    }

    pub fn conditional_cdf(&self, x: f64, y: f64) -> Result<f64> {
        let u = self.mixture.cdf(y);
        if u <= 0.0 {
            return Ok(0.0);
        }
        if u >= 1.0 {
            return Ok(1.0);
        }
        let z = self.latent.fz_inverse(u)?;
        Ok(-(-(self.beta * x).exp() * z).exp_m1())
    }

    pub fn conditional_density(&self, x: f64, y: f64) -> Result<f64> {
        let u = self.mixture.cdf(y).min(1.0 - f64::EPSILON / 2.0);
        let z = self.latent.fz_inverse(u)?;
        let eta = self.beta * x;
        Ok((self.mixture.pdf(y).ln() + eta - eta.exp() * z - self.latent.ln_density(z)).exp())
    }

    /// One response at covariate `x` from the forward process.
    pub fn sample<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        let z: f64 = Exp::new((self.beta * x).exp()).expect("positive rate").sample(rng);
        let u = self.latent.fz(z).expect("nonnegative z");
        self.mixture.quantile(u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
    }
}

fn scalar_dataset(x: Vec<f64>, y: Vec<f64>) -> Result<RegressionDataset> {
    let n = x.len();
    let x = Array2::from_shape_vec((n, 1), x).map_err(|e| Error::Dimension(e.to_string()))?;
    RegressionDataset::new(x, y, vec!["x".to_string()])
}

fn check_n(n: usize, min: usize) -> Result<()> {
    if n < min {
        return Err(Error::InvalidInput(format!("need n >= {min}, got {n}")));
    }
    Ok(())
}

/// `X ~ U(0, 20)`, `Z ~ Exp(exp(βx))`, `Y = F_Y⁻¹(F_Z(Z))` with the
/// three-component mixture for `F_Y` and `F_Z` over the realised `X`.
pub fn gen_mixture3(n: usize, beta: f64, seed: u64) -> Result<RegressionDataset> {
    check_n(n, 2)?;
    let mut rng = seeded_rng(seed);
    let x: Vec<f64> = (0..n).map(|_| 20.0 * rng.random::<f64>()).collect();
    let model = SimModel::new(GaussianMixture::three_component(), beta, &x)?;
    let y = x.iter().map(|&xi| model.sample(xi, &mut rng)).collect();
    scalar_dataset(x, y)
}

/// `X ~ U(0, 10)`, `Y ~ N(3 + 2x, sd = 2)`.
pub fn gen_linear_gaussian(n: usize, seed: u64) -> Result<RegressionDataset> {
    check_n(n, 2)?;
    let mut rng = seeded_rng(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = 10.0 * rng.random::<f64>();
        let e: f64 = rng.sample(StandardNormal);
        x.push(xi);
        y.push(3.0 + 2.0 * xi + 2.0 * e);
    }
    scalar_dataset(x, y)
}

/// Heavy-tailed income-like marginal: a lognormal body plus atoms at round values.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikedLognormal {
    pub median: f64,
    pub sigma: f64,
    /// `(value, probability)`, ascending in value.
    pub atoms: Vec<(f64, f64)>,
}

impl Default for SpikedLognormal {
    fn default() -> Self {
        Self {
            median: 35_000.0,
            sigma: 0.8,
            atoms: vec![(20_000.0, 0.04), (30_000.0, 0.05), (40_000.0, 0.04), (50_000.0, 0.05)],
        }
    }
}

impl SpikedLognormal {
    fn body_weight(&self) -> f64 {
        1.0 - self.atoms.iter().map(|a| a.1).sum::<f64>()
    }

    fn body_cdf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            0.0
        } else {
            std_normal_cdf((y / self.median).ln() / self.sigma)
        }
    }

    pub fn cdf(&self, y: f64) -> f64 {
        self.body_weight() * self.body_cdf(y) + self.atoms.iter().filter(|a| a.0 <= y).map(|a| a.1).sum::<f64>()
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let bw = self.body_weight();
        let mut below = 0.0;
        for &(a, p) in &self.atoms {
            let left = bw * self.body_cdf(a) + below;
            if u > left && u <= left + p {
                return a;
            }
            below += p;
        }
        bisect_increasing(|y| self.cdf(y), u, 0.0, self.median * (60.0 * self.sigma).exp())
    }
}

struct CategoricalVar {
    name: &'static str,
    levels: Vec<String>,
    /// Planted coefficient per level; baseline first and always zero.
    effects: Vec<f64>,
    strong: Vec<bool>,
}

fn categorical(name: &'static str, n_levels: usize, named: &[(&str, f64, bool)]) -> CategoricalVar {
    let mut levels: Vec<String> = named.iter().map(|t| t.0.to_string()).collect();
    let mut effects: Vec<f64> = named.iter().map(|t| t.1).collect();
    let mut strong: Vec<bool> = named.iter().map(|t| t.2).collect();
    for k in named.len()..n_levels {
        levels.push(format!("{name}_{k:02}"));
        effects.push(0.0);
        strong.push(false);
    }
    CategoricalVar {
        name,
        levels,
        effects,
        strong,
    }
}

fn census_variables() -> Vec<CategoricalVar> {
    let mut state = categorical("state", 43, &[("TX", 0.0, false)]);
    state.levels[1..].iter_mut().enumerate().for_each(|(k, l)| *l = format!("ST{:02}", k + 1));
    vec![
        state,
        categorical("class", 8, &[("private", 0.0, false), ("self-employed-inc", -0.30, true)]),
        categorical("transport", 10, &[("car", 0.0, false), ("walks", 0.36, true), ("home", 0.0, false)]),
        categorical("language", 2, &[("english", 0.0, false), ("other", 0.0, false)]),
        categorical("marital", 5, &[("married", 0.0, false), ("never-married", 0.37, true)]),
        categorical(
            "education",
            20,
            &[
                ("high-school", 0.0, false),
                ("bachelor", -0.80, true),
                ("master", -1.0, true),
                ("professional", -1.4, true),
                ("doctorate", -1.2, true),
                ("associate", -0.39, true),
                ("some-college", -0.18, true),
                ("grade-11", 0.38, true),
            ],
        ),
        categorical("gender", 2, &[("male", 0.0, false), ("female", 0.35, true)]),
        categorical("disability", 2, &[("no", 0.0, false), ("yes", 0.19, true)]),
        categorical("quarter", 4, &[("Q1", 0.0, false)]),
        categorical("world_area", 9, &[("usa", 0.0, false)]),
    ]
}

/// Census-like table with its ground truth.
#[derive(Debug, Clone)]
pub struct CensusSim {
    pub raw: RawTable,
    pub schema: Schema,
    pub dataset: RegressionDataset,
    /// Planted coefficient per encoded feature.
    pub beta_true: Vec<f64>,
    /// Encoded feature names of the planted strong effects.
    pub strong_effects: Vec<String>,
}

/// Five numeric and ten categorical raw variables (`p = 100` encoded), with
/// planted effects on hours, weeks, age, travel time and several levels.
///
/// `schema_seed` fixes level frequencies and the small state effects;
/// `seed` draws the rows. The response order follows the Plackett-Luce
/// model exactly; `Y` is the spiked-lognormal quantile at `rank(Z)/(n+1)`.
pub fn gen_census_like(n: usize, schema_seed: u64, seed: u64) -> Result<CensusSim> {
    check_n(n, 100)?;
    let mut vars = census_variables();
    let mut srng = seeded_rng(schema_seed);
    for effect in vars[0].effects[1..].iter_mut() {
        *effect = 0.05 * srng.sample::<f64, _>(StandardNormal);
    }
    // Level frequencies: baselines and planted levels get a fixed share,
    // the rest split the remainder with random weights.
    let probs: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| {
            let k = v.levels.len();
            let raw: Vec<f64> = (0..k)
                .map(|j| {
                    let jitter = 0.5 + srng.random::<f64>();
                    if j == 0 {
                        3.0 * k as f64 / 10.0 + jitter
                    } else if v.effects[j] != 0.0 {
                        k as f64 / 10.0 + jitter
                    } else {
                        jitter
                    }
                })
                .collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|r| r / total).collect()
        })
        .collect();

    let numeric_beta = [
        ("weight", 0.0, false),
        ("age", -0.018, true),
        ("travel", -0.0035, true),
        ("hours", -0.044, true),
        ("weeks", -0.045, true),
    ];
    let mut rng = seeded_rng(mix_seed(seed, 0x00CE_5005));
    let mut numeric: Vec<Vec<f64>> = vec![Vec::with_capacity(n); 5];
    let mut codes: Vec<Vec<u32>> = vec![Vec::with_capacity(n); vars.len()];
    let mut eta = Vec::with_capacity(n);
    let exp_travel = Exp::new(1.0 / 25.0).expect("positive rate");
    for _ in 0..n {
        let normal = |rng: &mut rand_chacha::ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);
        let weight = (160.0 + 35.0 * normal(&mut rng)).clamp(90.0, 400.0).round();
        let age = (18.0 + 62.0 * rng.random::<f64>()).floor();
        let travel: f64 = exp_travel.sample(&mut rng);
        let travel = travel.min(200.0).round();
        let hours = (40.0 + 10.0 * normal(&mut rng)).clamp(1.0, 99.0).round();
        let weeks = if rng.random::<f64>() < 0.7 {
            52.0
        } else {
            (1.0 + 51.0 * rng.random::<f64>()).floor()
        };
        let values = [weight, age, travel, hours, weeks];
        let mut e = 0.0;
        for (c, (&v, b)) in values.iter().zip(&numeric_beta).enumerate() {
            numeric[c].push(v);
            e += b.1 * v;
        }
        for (c, (var, p)) in vars.iter().zip(&probs).enumerate() {
            let mut t = rng.random::<f64>();
            let mut level = p.len() - 1;
            for (j, pj) in p.iter().enumerate() {
                if t < *pj {
                    level = j;
                    break;
                }
                t -= pj;
            }
            codes[c].push(level as u32);
            e += var.effects[level];
        }
        eta.push(e);
    }

    // Latent arrival times and the rank-based response.
    let z: Vec<f64> = eta
        .iter()
        .map(|&e| Exp::new(e.exp()).expect("positive rate").sample(&mut rng))
        .collect();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| z[a].total_cmp(&z[b]));
    let marginal = SpikedLognormal::default();
    let mut income = vec![0.0; n];
    for (rank, &i) in idx.iter().enumerate() {
        income[i] = marginal.quantile((rank + 1) as f64 / (n + 1) as f64);
    }

    let mut raw = RawTable::new();
    let mut schema = Schema::new("income");
    raw.push("income", RawColumn::Numeric(income))?;
    for (c, col) in numeric.into_iter().enumerate() {
        raw.push(numeric_beta[c].0, RawColumn::Numeric(col))?;
        schema = schema.numeric(numeric_beta[c].0);
    }
    for (var, code) in vars.iter_mut().zip(codes) {
        raw.push(
            var.name,
            RawColumn::Categorical {
                labels: var.levels.clone(),
                codes: code,
            },
        )?;
        schema = schema.categorical_with_levels(var.name, var.levels[0].clone(), var.levels.clone());
    }
    let (dataset, encoder) = encode_design(&raw, &schema)?;

    let mut truth = std::collections::BTreeMap::new();
    let mut strong = Vec::new();
    for (name, b, s) in numeric_beta {
        truth.insert(name.to_string(), b);
        if s {
            strong.push(name.to_string());
        }
    }
    for var in &vars {
        for (j, level) in var.levels.iter().enumerate().skip(1) {
            let feature = format!("{}={}", var.name, level);
            truth.insert(feature.clone(), var.effects[j]);
            if var.strong[j] {
                strong.push(feature);
            }
        }
    }
    let beta_true = encoder
        .feature_names()
        .iter()
        .map(|f| truth.get(f).copied().unwrap_or(0.0))
        .collect();
    Ok(CensusSim {
        raw,
        schema: encoder.schema().clone(),
        dataset,
        beta_true,
        strong_effects: strong,
    })
}

/// Experiment selector for the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Mixture3,
    LinearGaussian,
    CensusLike,
}

impl std::str::FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixture3" => Ok(Experiment::Mixture3),
            "linear-gaussian" | "linear_gaussian" => Ok(Experiment::LinearGaussian),
            "census-like" | "census_like" => Ok(Experiment::CensusLike),
            other => Err(Error::Config(format!("unknown experiment {other:?}"))),
        }
    }
}
