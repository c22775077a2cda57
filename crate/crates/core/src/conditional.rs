//! Composition of the marginal, the coefficient posterior and `F_X`.
//!
//! With `Z | x ~ Exp(λ(x))` and `F_Z(z) = ∫ (1 - e^{-λ(x) z}) dF_X(x)`, the
//! response is `Y = F_Y⁻¹(F_Z(Z))`, so
//!
//! ```text
//! F(y | x) = 1 - exp(-λ(x) F_Z⁻¹(F_Y(y)))
//! ```

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::data::{OrderIndex, RegressionDataset};
use crate::dpm::{dpm_gibbs_fit, DpmPosterior, DpmSpec, GibbsConfig};
use crate::empirical::EmpiricalMarginal;
use crate::error::{Error, Result};
use crate::math::{gauss_legendre_on, logsumexp, seeded_rng, sigmoid};
use crate::pl::{fit_map_with_sign, mh_refine, GaussianPrior, MhConfig, NewtonConfig, PLPosterior, RateFunction, RateSign};
use crate::polya_tree::{pt_update, PolyaTreePosterior, PolyaTreeSpec};

/// Mixture-of-exponentials CDF of the latent arrival time.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMixtureCdf {
    rates: Vec<f64>,
    ln_rates: Vec<f64>,
    weights: Vec<f64>,
    ln_weights: Vec<f64>,
    min_rate: f64,
    tolerance: f64,
}

impl LatentMixtureCdf {
    /// Equal-weight mixture over the rates `exp(ln_rates)`.
    pub fn from_log_rates(ln_rates: Vec<f64>) -> Result<Self> {
        let n = ln_rates.len();
        Self::weighted_log(ln_rates, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn from_rates(rates: &[f64]) -> Result<Self> {
        Self::from_log_rates(rates.iter().map(|r| r.ln()).collect())
    }

    /// Mixture with explicit weights, e.g. quadrature weights of `F_X`.
    pub fn weighted_log(ln_rates: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if ln_rates.is_empty() {
            return Err(Error::InvalidInput("latent mixture needs at least one rate".into()));
        }
        if ln_rates.len() != weights.len() {
            return Err(Error::Dimension(format!(
                "{} rates and {} weights",
                ln_rates.len(),
                weights.len()
            )));
        }
        let rates: Vec<f64> = ln_rates.iter().map(|l| l.exp()).collect();
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Numeric("rates must be finite and positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || !(total > 0.0) {
            return Err(Error::InvalidInput("mixture weights must be nonnegative".into()));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let min_rate = rates.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self {
            ln_weights: weights.iter().map(|w| w.ln()).collect(),
            rates,
            ln_rates,
            weights,
            min_rate,
            tolerance: 1e-10,
        })
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn ln_rates(&self) -> &[f64] {
        &self.ln_rates
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    fn cdf_unchecked(&self, z: f64) -> f64 {
        self.rates
            .iter()
            .zip(&self.weights)
            .map(|(r, w)| -w * (-r * z).exp_m1())
            .sum::<f64>()
            .min(1.0)
    }

    /// `F_Z(z)`.
    pub fn fz(&self, z: f64) -> Result<f64> {
        if !(z >= 0.0) {
            return Err(Error::Domain { value: z, domain: "[0, inf)" });
        }
        Ok(self.cdf_unchecked(z))
    }

    /// `F_Z'(z) = Σ w λ e^{-λz}`.
    pub fn density(&self, z: f64) -> f64 {
        self.rates
            .iter()
            .zip(&self.weights)
            .map(|(r, w)| w * r * (-r * z).exp())
            .sum()
    }

    pub fn ln_density(&self, z: f64) -> f64 {
        let terms: Vec<f64> = self
            .ln_rates
            .iter()
            .zip(&self.ln_weights)
            .zip(&self.rates)
            .map(|((lr, lw), r)| lw + lr - r * z)
            .collect();
        logsumexp(&terms)
    }

    /// `F_Z(z)` and `F_Z'(z)` from one exponential per rate.
    fn cdf_and_density(&self, z: f64) -> (f64, f64) {
        let (mut cdf, mut dens) = (0.0, 0.0);
        for (r, w) in self.rates.iter().zip(&self.weights) {
            let em1 = (-r * z).exp_m1();
            cdf -= w * em1;
            dens += w * r * (1.0 + em1);
        }
        (cdf.min(1.0), dens)
    }

    /// `F_Z⁻¹(u)` to `|F_Z(z) - u| < tolerance`.
    ///
    /// The root is bracketed by doubling from `1/λ_min`, then refined with
    /// Newton steps that fall back to bisection whenever a step leaves the
    /// bracket or fails to halve the residual.
    pub fn fz_inverse(&self, u: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&u) {
            return Err(Error::Domain { value: u, domain: "[0, 1)" });
        }
        if u == 0.0 {
            return Ok(0.0);
        }
        // Exponential start: exact for a single rate.
        self.solve(u, 0.0, -(-u).ln_1p() / self.min_rate)
    }

    /// `F_Z⁻¹` over ascending `u`, each solve starting from the previous root.
    pub fn fz_inverse_ascending(&self, us: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(us.len());
        let (mut prev_u, mut prev_z) = (0.0, 0.0);
        for &u in us {
            if !(0.0..1.0).contains(&u) {
                return Err(Error::Domain { value: u, domain: "[0, 1)" });
            }
            if u < prev_u {
                return Err(Error::InvalidInput("fz_inverse_ascending needs ascending input".into()));
            }
            let z = if u == 0.0 {
                0.0
            } else if prev_z == 0.0 {
                self.solve(u, 0.0, -(-u).ln_1p() / self.min_rate)?
            } else {
                // F_Z(prev_z) ≤ u up to the tolerance, so prev_z is a lower
                // bracket; a Newton step from it is the starting point.
                let (f, d) = self.cdf_and_density(prev_z);
                let lo = if f <= u { prev_z } else { 0.0 };
                let start = if d > 0.0 { prev_z + (u - f) / d } else { prev_z };
                self.solve(u, lo, start)?
            };
            out.push(z);
            prev_u = u;
            prev_z = z;
        }
        Ok(out)
    }

    /// Root of `F_Z(z) = u` given `F_Z(lo) ≤ u`, starting from `start`.
    fn solve(&self, u: f64, mut lo: f64, start: f64) -> Result<f64> {
        let mut hi = (1.0 / self.min_rate).max(2.0 * lo);
        let mut f_hi = self.cdf_unchecked(hi);
        while f_hi < u {
            lo = hi;
            hi *= 2.0;
            f_hi = self.cdf_unchecked(hi);
            if !hi.is_finite() {
                return Err(Error::Numeric(format!("cannot bracket F_Z inverse at {u}")));
            }
        }
        let mut z = if start.is_finite() { start.clamp(lo, hi) } else { 0.5 * (lo + hi) };
        let (f, mut d) = self.cdf_and_density(z);
        let mut resid = f - u;
        for _ in 0..200 {
            if resid.abs() < self.tolerance {
                break;
            }
            if resid > 0.0 {
                hi = z;
            } else {
                lo = z;
            }
            let newton = if d > 0.0 { z - resid / d } else { f64::NAN };
            let candidate = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            let (f_c, d_c) = self.cdf_and_density(candidate);
            let (candidate, next_resid, next_d) = if (f_c - u).abs() > 0.5 * resid.abs() && candidate == newton {
                let mid = 0.5 * (lo + hi);
                let (f_m, d_m) = self.cdf_and_density(mid);
                (mid, f_m - u, d_m)
            } else {
                (candidate, f_c - u, d_c)
            };
            if candidate == z {
                break;
            }
            z = candidate;
            resid = next_resid;
            d = next_d;
            if hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
        Ok(z)
    }
}

/// Which marginal to fit for `F_Y`.
#[derive(Debug, Clone, PartialEq)]
pub enum MarginalSpec {
    Ecdf,
    Bootstrap,
    PolyaTree(PolyaTreeSpec),
    Dpm { spec: DpmSpec, gibbs: GibbsConfig },
}

/// Fitted marginal posterior for `F_Y`.
#[derive(Debug, Clone, PartialEq)]
pub enum MarginalPosterior {
    Ecdf(EmpiricalMarginal),
    Bootstrap(EmpiricalMarginal),
    PolyaTree(PolyaTreePosterior),
    Dpm(DpmPosterior),
}

impl MarginalSpec {
    pub fn fit(&self, y: &[f64]) -> Result<MarginalPosterior> {
        Ok(match self {
            MarginalSpec::Ecdf => MarginalPosterior::Ecdf(EmpiricalMarginal::new(y)?),
            MarginalSpec::Bootstrap => MarginalPosterior::Bootstrap(EmpiricalMarginal::new(y)?),
            MarginalSpec::PolyaTree(spec) => MarginalPosterior::PolyaTree(pt_update(spec, y)?),
            MarginalSpec::Dpm { spec, gibbs } => MarginalPosterior::Dpm(dpm_gibbs_fit(spec, y, gibbs)?),
        })
    }
}

impl MarginalPosterior {
    pub fn name(&self) -> &'static str {
        match self {
            MarginalPosterior::Ecdf(_) => "ecdf",
            MarginalPosterior::Bootstrap(_) => "bootstrap",
            MarginalPosterior::PolyaTree(_) => "polya-tree",
            MarginalPosterior::Dpm(_) => "dpm",
        }
    }

    /// Posterior-mean CDF.
    pub fn cdf(&self, y: f64) -> f64 {
        match self {
            MarginalPosterior::Ecdf(m) | MarginalPosterior::Bootstrap(m) => m.cdf(y),
            MarginalPosterior::PolyaTree(p) => p.mean_cdf(y),
            MarginalPosterior::Dpm(d) => d.predictive_cdf(y),
        }
    }

    pub fn has_density(&self) -> bool {
        matches!(self, MarginalPosterior::PolyaTree(_) | MarginalPosterior::Dpm(_))
    }

    pub fn ln_density(&self, y: f64) -> Result<f64> {
        match self {
            MarginalPosterior::Ecdf(_) | MarginalPosterior::Bootstrap(_) => {
                Err(Error::UnsupportedDensity(self.name()))
            }
            MarginalPosterior::PolyaTree(p) => Ok(p.mean_ln_density(y)),
            MarginalPosterior::Dpm(d) => Ok(d.predictive_density(y).ln()),
        }
    }

    pub fn density(&self, y: f64) -> Result<f64> {
        self.ln_density(y).map(f64::exp)
    }

    /// Posterior-mean quantile.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        match self {
            MarginalPosterior::Ecdf(m) | MarginalPosterior::Bootstrap(m) => m.inverse(u),
            MarginalPosterior::PolyaTree(p) => p.mean_inverse_cdf(u),
            MarginalPosterior::Dpm(d) => d.predictive_quantile(u),
        }
    }
}

/// Settings for the three independent component fits.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeConfig {
    pub newton: NewtonConfig,
    pub sign: RateSign,
    pub mh: Option<MhConfig>,
    /// Cap on the covariate rows kept as the empirical `F_X`.
    pub fx_max_rows: usize,
    pub seed: u64,
}

impl Default for CompositeConfig {
    fn default() -> Self {
        Self {
            newton: NewtonConfig::default(),
            sign: RateSign::Positive,
            mh: None,
            fx_max_rows: 20_000,
            seed: 0,
        }
    }
}

/// Regression model `F(y | x)` assembled from its components.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalModel {
    marginal: MarginalPosterior,
    pl: PLPosterior,
    fx: Array2<f64>,
    latent: LatentMixtureCdf,
}

impl ConditionalModel {
    /// `fx` holds the covariate rows of the empirical `F_X`.
    pub fn new(marginal: MarginalPosterior, pl: PLPosterior, fx: Array2<f64>) -> Result<Self> {
        if fx.ncols() != pl.p() {
            return Err(Error::Dimension(format!(
                "F_X rows have {} columns, coefficients have {}",
                fx.ncols(),
                pl.p()
            )));
        }
        let latent = latent_for(&fx, &pl.rate_at_map())?;
        Ok(Self {
            marginal,
            pl,
            fx,
            latent,
        })
    }

    pub fn marginal(&self) -> &MarginalPosterior {
        &self.marginal
    }

    pub fn pl(&self) -> &PLPosterior {
        &self.pl
    }

    pub fn fx(&self) -> &Array2<f64> {
        &self.fx
    }

    pub fn latent(&self) -> &LatentMixtureCdf {
        &self.latent
    }

    pub fn p(&self) -> usize {
        self.pl.p()
    }

    pub fn rate(&self) -> RateFunction {
        self.pl.rate_at_map()
    }

    /// `F_Z` under another coefficient vector.
    pub fn latent_at(&self, beta: &[f64]) -> Result<LatentMixtureCdf> {
        latent_for(&self.fx, &RateFunction::with_sign(beta.to_vec(), self.pl.sign))
    }

    fn check_row(&self, x_new: &[f64]) -> Result<()> {
        if x_new.len() != self.p() {
            return Err(Error::Dimension(format!(
                "covariate row has {} entries, model expects {}",
                x_new.len(),
                self.p()
            )));
        }
        Ok(())
    }

    /// Plug-in `F(y | x)` at the MAP and the posterior-mean marginal.
    pub fn conditional_cdf(&self, x_new: &[f64], y: f64) -> Result<f64> {
        self.check_row(x_new)?;
        conditional_cdf_with(&self.marginal, &self.latent, self.rate().eta(x_new), y)
    }

    pub fn conditional_ln_density(&self, x_new: &[f64], y: f64) -> Result<f64> {
        self.check_row(x_new)?;
        conditional_ln_density_with(&self.marginal, &self.latent, self.rate().eta(x_new), y)
    }

    /// Plug-in `f(y | x)`; needs a marginal with a density.
    pub fn conditional_density(&self, x_new: &[f64], y: f64) -> Result<f64> {
        self.conditional_ln_density(x_new, y).map(f64::exp)
    }

    /// Full-likelihood diagnostic `Σ ln f(y_i | x_i)` at the plug-in fit.
    pub fn joint_log_density(&self, data: &RegressionDataset) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..data.n() {
            let row = data.row(i);
            total += self.conditional_ln_density(row.as_slice().expect("contiguous"), data.y()[i])?;
        }
        Ok(total)
    }

    /// Forward simulation of `(Y | x)` at the plug-in fit.
    pub fn simulate<R: Rng + ?Sized>(&self, x_new: &[f64], rng: &mut R) -> Result<f64> {
        self.check_row(x_new)?;
        let rate = self.rate().rate(x_new);
        let z = Exp::new(rate)
            .map_err(|e| Error::Numeric(format!("bad rate {rate}: {e}")))?
            .sample(rng);
        let u = self.latent.fz(z)?;
        self.marginal.quantile(u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
    }
}

fn latent_for(fx: &Array2<f64>, rate: &RateFunction) -> Result<LatentMixtureCdf> {
    LatentMixtureCdf::from_log_rates(rate.etas(fx))
}

/// Largest `u` below one that the inversion accepts.
const U_TOP: f64 = 1.0 - f64::EPSILON / 2.0;

pub(crate) fn conditional_cdf_with(
    marginal: &MarginalPosterior,
    latent: &LatentMixtureCdf,
    eta: f64,
    y: f64,
) -> Result<f64> {
    let u = marginal.cdf(y);
    if u <= 0.0 {
        return Ok(0.0);
    }
    if u >= 1.0 {
        return Ok(1.0);
    }
    let z = latent.fz_inverse(u)?;
    Ok(-(-eta.exp() * z).exp_m1())
}

pub(crate) fn conditional_ln_density_with(
    marginal: &MarginalPosterior,
    latent: &LatentMixtureCdf,
    eta: f64,
    y: f64,
) -> Result<f64> {
    let ln_fy = marginal.ln_density(y)?;
    let u = marginal.cdf(y).clamp(0.0, U_TOP);
    let z = latent.fz_inverse(u)?;
    Ok(ln_fy + eta - eta.exp() * z - latent.ln_density(z))
}

/// `P(Y_i ≤ Y_j) = λ_i / (λ_i + λ_j)`.
pub fn pairwise_prob(rate: &RateFunction, x_i: &[f64], x_j: &[f64]) -> f64 {
    sigmoid(rate.eta(x_i) - rate.eta(x_j))
}

fn uniform_latent<F: Fn(f64) -> f64>(lambda: &F, n_quad: usize) -> Result<LatentMixtureCdf> {
    let (nodes, weights) = gauss_legendre_on(n_quad.max(1), 0.0, 1.0);
    LatentMixtureCdf::weighted_log(nodes.iter().map(|&w| lambda(w).ln()).collect(), weights)
}

/// Copula `C(u1, u2) = u1 - ∫_0^{u1} exp(-λ(ω) F_Z⁻¹(u2)) dω` for `X`
/// uniform on `[0, 1]`, with `n_quad`-point Gauss-Legendre rules.
pub fn copula_eval<F: Fn(f64) -> f64>(lambda: F, u1: f64, u2: f64, n_quad: usize) -> Result<f64> {
    for u in [u1, u2] {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Domain { value: u, domain: "[0, 1]" });
        }
    }
    if u1 == 0.0 || u2 == 0.0 {
        return Ok(0.0);
    }
    if u2 >= 1.0 {
        return Ok(u1);
    }
    let latent = uniform_latent(&lambda, n_quad)?;
    let z = latent.fz_inverse(u2)?;
    let (nodes, weights) = gauss_legendre_on(n_quad.max(1), 0.0, u1);
    let integral: f64 = nodes
        .iter()
        .zip(&weights)
        .map(|(&w, q)| q * (-lambda(w) * z).exp())
        .sum();
    Ok((u1 - integral).clamp(0.0, 1.0))
}

/// `n` draws of `(U_x, U_y)` from the copula with uniform `X`.
pub fn copula_sample<F: Fn(f64) -> f64>(lambda: F, n: usize, n_quad: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    let latent = uniform_latent(&lambda, n_quad)?;
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|_| {
            let ux: f64 = rng.random();
            let rate = lambda(ux);
            let z = Exp::new(rate)
                .map_err(|e| Error::Numeric(format!("bad rate {rate}: {e}")))?
                .sample(&mut rng);
            Ok((ux, latent.fz(z)?))
        })
        .collect()
}

/// Covariate rows kept for `F_X`: all of them, or a seeded subsample.
pub fn fx_rows(data: &RegressionDataset, max_rows: usize, seed: u64) -> Array2<f64> {
    let n = data.n();
    if n <= max_rows.max(1) {
        return data.x().clone();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded_rng(seed));
    idx.truncate(max_rows.max(1));
    idx.sort_unstable();
    data.x().select(ndarray::Axis(0), &idx)
}

/// Fits the marginal on `y`, the coefficients on `(ν, x)` and `F_X` on `x`
/// independently, then composes them.
pub fn fit_composite(
    data: &RegressionDataset,
    order: &OrderIndex,
    marginal_spec: &MarginalSpec,
    prior: &GaussianPrior,
    config: &CompositeConfig,
) -> Result<ConditionalModel> {
    let (marginal, pl) = std::thread::scope(|s| {
        let marginal = s.spawn(|| marginal_spec.fit(data.y()));
        let pl = fit_map_with_sign(data, order, prior, config.sign, &config.newton).and_then(|post| match &config.mh {
            Some(mh) => mh_refine(&post, data, order, mh),
            None => Ok(post),
        });
        let marginal = marginal.join().unwrap_or_else(|_| {
            Err(Error::Numeric("marginal fit panicked".into()))
        });
        (marginal, pl)
    });
    let marginal = marginal.map_err(|e| e.in_component("marginal"))?;
    let pl = pl.map_err(|e| e.in_component("plackett-luce"))?;
    let fx = fx_rows(data, config.fx_max_rows, config.seed);
    ConditionalModel::new(marginal, pl, fx)
}
