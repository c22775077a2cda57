//! Posterior predictive draws, HPD regions and PIT calibration.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::conditional::{conditional_cdf_with, ConditionalModel, LatentMixtureCdf, MarginalPosterior};
use crate::empirical::draw_bootstrap_weights;
use crate::error::{Error, Result};
use crate::math::{ks_uniform, mix_seed, seeded_rng};
use crate::pl::{dot, RateFunction};

/// Inverse-CDF scheme for the marginal of one predictive draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Ecdf,
    Bootstrap,
    PolyaTree,
    Dpm,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Ecdf => "ecdf",
            Scheme::Bootstrap => "bootstrap",
            Scheme::PolyaTree => "polya-tree",
            Scheme::Dpm => "dpm",
        }
    }

    /// The scheme that matches a fitted marginal.
    pub fn for_marginal(marginal: &MarginalPosterior) -> Self {
        match marginal {
            MarginalPosterior::Ecdf(_) => Scheme::Ecdf,
            MarginalPosterior::Bootstrap(_) => Scheme::Bootstrap,
            MarginalPosterior::PolyaTree(_) => Scheme::PolyaTree,
            MarginalPosterior::Dpm(_) => Scheme::Dpm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveConfig {
    pub m: usize,
    /// Inner Monte Carlo size for the DPM scheme.
    pub dpm_inner: usize,
    pub seed: u64,
}

impl Default for PredictiveConfig {
    fn default() -> Self {
        Self {
            m: 2000,
            dpm_inner: 4096,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDraws {
    pub x_new: Vec<f64>,
    pub samples: Vec<f64>,
    pub scheme: Scheme,
    pub seed: u64,
}

/// Coefficient draws: the Metropolis sample when present, else Laplace.
pub fn beta_draws(model: &ConditionalModel, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let pl = model.pl();
    match &pl.mh_samples {
        Some(samples) if !samples.is_empty() => (0..count)
            .map(|j| samples[(j * samples.len()) / count.max(1)].clone())
            .collect(),
        _ => {
            let factor = pl.laplace_factor();
            (0..count)
                .map(|j| pl.draw_laplace(&factor, &mut seeded_rng(mix_seed(seed, j as u64))))
                .collect()
        }
    }
}

fn draw_beta<R: Rng + ?Sized>(model: &ConditionalModel, factor: &Array2<f64>, rng: &mut R) -> Vec<f64> {
    match &model.pl().mh_samples {
        Some(samples) if !samples.is_empty() => samples[rng.random_range(0..samples.len())].clone(),
        _ => model.pl().draw_laplace(factor, rng),
    }
}

/// `m` draws from the posterior predictive of `Y | x_new`.
///
/// Draw `j` takes `β⁽ʲ⁾`, `Z' ~ Exp(λ_β(x_new))`, maps it through the
/// empirical-`F_X` latent CDF to `u⁽ʲ⁾` and inverts one realisation of the
/// marginal at `u⁽ʲ⁾`.
pub fn predict_draws(
    model: &ConditionalModel,
    x_new: &[f64],
    scheme: Scheme,
    config: &PredictiveConfig,
) -> Result<PredictiveDraws> {
    if x_new.len() != model.p() {
        return Err(Error::Dimension(format!(
            "covariate row has {} entries, model expects {}",
            x_new.len(),
            model.p()
        )));
    }
    if config.m < 1 {
        return Err(Error::Config("need at least one predictive draw".into()));
    }
    let marginal = model.marginal();
    let compatible = matches!(
        (scheme, marginal),
        (Scheme::Ecdf | Scheme::Bootstrap, MarginalPosterior::Ecdf(_) | MarginalPosterior::Bootstrap(_))
            | (Scheme::PolyaTree, MarginalPosterior::PolyaTree(_))
            | (Scheme::Dpm, MarginalPosterior::Dpm(_))
    );
    if !compatible {
        return Err(Error::Config(format!(
            "scheme {} cannot sample a {} marginal",
            scheme.name(),
            marginal.name()
        )));
    }
    let factor = model.pl().laplace_factor();
    let sign = model.pl().sign;
    let fx = model.fx();

    let samples = (0..config.m)
        .into_par_iter()
        .map(|j| {
            let seed_j = mix_seed(config.seed, j as u64);
            let mut rng = seeded_rng(seed_j);
            let beta = draw_beta(model, &factor, &mut rng);
            let rate = RateFunction::with_sign(beta, sign);
            let lambda = rate.rate(x_new);
            let z: f64 = Exp::new(lambda)
                .map_err(|e| Error::Numeric(format!("bad rate {lambda}: {e}")))?
                .sample(&mut rng);
            let survival = fx
                .rows()
                .into_iter()
                .map(|row| (-z * rate.rate(row.as_slice().expect("contiguous"))).exp())
                .sum::<f64>()
                / fx.nrows() as f64;
            let u = (1.0 - survival).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
            match (scheme, marginal) {
                (Scheme::Ecdf, MarginalPosterior::Ecdf(m) | MarginalPosterior::Bootstrap(m)) => m.inverse(u),
                (Scheme::Bootstrap, MarginalPosterior::Ecdf(m) | MarginalPosterior::Bootstrap(m)) => {
                    let w = draw_bootstrap_weights(m.len(), mix_seed(seed_j, 1));
                    m.with_weights(w)?.inverse(u)
                }
                (Scheme::PolyaTree, MarginalPosterior::PolyaTree(p)) => p.draw(mix_seed(seed_j, 2)).inverse_cdf(u),
                (Scheme::Dpm, MarginalPosterior::Dpm(d)) => {
                    let state = rng.random_range(0..d.states().len().max(1));
                    let inner = d.draw_marginal_sample(state, config.dpm_inner, mix_seed(seed_j, 3))?;
                    let k = ((inner.len() as f64 * u).ceil() as usize).clamp(1, inner.len());
                    Ok(inner[k - 1])
                }
                _ => unreachable!("compatibility checked above"),
            }
        })
        .collect::<Result<Vec<f64>>>()?;

    Ok(PredictiveDraws {
        x_new: x_new.to_vec(),
        samples,
        scheme,
        seed: config.seed,
    })
}

/// Union of disjoint intervals holding `level` of the predictive mass.
#[derive(Debug, Clone, PartialEq)]
pub struct HpdRegion {
    pub level: f64,
    pub intervals: Vec<(f64, f64)>,
    pub threshold: f64,
    pub mass: f64,
}

impl HpdRegion {
    pub fn contains(&self, y: f64) -> bool {
        self.intervals.iter().any(|&(lo, hi)| lo <= y && y <= hi)
    }
}

#[derive(Debug, Clone)]
struct DrawCache {
    beta: Vec<f64>,
    /// `z_k = F_Z⁻¹(F_Y(y_k))` under this draw.
    z: Vec<f64>,
    /// `ln F_Z'(z_k)`.
    ln_denom: Vec<f64>,
}

/// Posterior-averaged conditional density on a fixed response grid.
///
/// Everything that does not depend on the covariate row is cached per
/// coefficient draw, so densities at new rows cost `O(draws × grid)`.
#[derive(Debug, Clone)]
pub struct PredictiveDensity {
    grid: Vec<f64>,
    ln_fy: Vec<f64>,
    draws: Vec<DrawCache>,
    sign: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityConfig {
    pub grid_size: usize,
    pub n_beta: usize,
    /// Grid spans the marginal quantiles `tail` and `1 - tail`.
    pub tail: f64,
    pub seed: u64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            grid_size: 2048,
            n_beta: 64,
            tail: 1e-4,
            seed: 0,
        }
    }
}

impl PredictiveDensity {
    pub fn new(model: &ConditionalModel, config: &DensityConfig) -> Result<Self> {
        let marginal = model.marginal();
        if !marginal.has_density() {
            return Err(Error::UnsupportedDensity(marginal.name()));
        }
        if config.grid_size < 2 || config.n_beta < 1 {
            return Err(Error::Config("density grid needs >= 2 points and >= 1 draw".into()));
        }
        let lo = marginal.quantile(config.tail)?;
        let hi = marginal.quantile(1.0 - config.tail)?;
        let g = config.grid_size;
        let grid: Vec<f64> = (0..g)
            .map(|k| lo + (hi - lo) * k as f64 / (g - 1) as f64)
            .collect();
        Self::on_grid(model, grid, config.n_beta, config.seed)
    }

    /// Same cache on a caller-supplied ascending grid.
    pub fn on_grid(model: &ConditionalModel, grid: Vec<f64>, n_beta: usize, seed: u64) -> Result<Self> {
        let marginal = model.marginal();
        if !marginal.has_density() {
            return Err(Error::UnsupportedDensity(marginal.name()));
        }
        if grid.len() < 2 || n_beta < 1 {
            return Err(Error::Config("density grid needs >= 2 points and >= 1 draw".into()));
        }
        let ln_fy = grid
            .iter()
            .map(|&y| marginal.ln_density(y))
            .collect::<Result<Vec<_>>>()?;
        let u: Vec<f64> = grid
            .iter()
            .map(|&y| marginal.cdf(y).clamp(0.0, 1.0 - f64::EPSILON / 2.0))
            .collect();
        let draws = beta_draws(model, n_beta, seed)
            .into_par_iter()
            .map(|beta| {
                let latent = model.latent_at(&beta)?;
                let z = latent.fz_inverse_ascending(&u)?;
                let ln_denom = z.iter().map(|&z| latent.ln_density(z)).collect();
                Ok(DrawCache { beta, z, ln_denom })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            ln_fy,
            draws,
            sign: model.pl().sign.factor(),
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Density values on the grid at covariate row `x_new`.
    pub fn density(&self, x_new: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        let scale = 1.0 / self.draws.len() as f64;
        for d in &self.draws {
            let eta = self.sign * dot(&d.beta, x_new);
            let lambda = eta.exp();
            for (k, o) in out.iter_mut().enumerate() {
                *o += scale * (self.ln_fy[k] + eta - lambda * d.z[k] - d.ln_denom[k]).exp();
            }
        }
        out
    }

    pub fn hpd(&self, x_new: &[f64], level: f64) -> Result<HpdRegion> {
        hpd_from_grid(&self.grid, &self.density(x_new), level)
    }
}

/// Integral of the linear interpolant of `d` over the set where it is `≥ t`.
fn mass_above(y: &[f64], d: &[f64], t: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..y.len() - 1 {
        let (a, b, h) = (d[k], d[k + 1], y[k + 1] - y[k]);
        total += if a >= t && b >= t {
            0.5 * h * (a + b)
        } else if a < t && b < t {
            0.0
        } else {
            let s = (t - a) / (b - a);
            if a >= t {
                0.5 * h * s * (a + t)
            } else {
                0.5 * h * (1.0 - s) * (t + b)
            }
        };
    }
    total
}

/// HPD region of a density tabulated on an ascending grid.
pub fn hpd_from_grid(y: &[f64], density: &[f64], level: f64) -> Result<HpdRegion> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain { value: level, domain: "(0, 1)" });
    }
    if y.len() != density.len() || y.len() < 2 {
        return Err(Error::Dimension("density grid needs matching y and density".into()));
    }
    let total = mass_above(y, density, 0.0);
    if !(total >= level) {
        return Err(Error::Numeric(format!(
            "grid holds mass {total:.4}, below the requested level {level}"
        )));
    }
    let (mut lo, mut hi) = (0.0, density.iter().copied().fold(0.0, f64::max));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass_above(y, density, mid) >= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = lo;
    let mut intervals = Vec::new();
    let mut start = if density[0] >= t { Some(y[0]) } else { None };
    for k in 0..y.len() - 1 {
        let (a, b) = (density[k], density[k + 1]);
        let cross = |a: f64, b: f64| y[k] + (y[k + 1] - y[k]) * (t - a) / (b - a);
        match start {
            Some(s) if b < t => {
                intervals.push((s, cross(a, b)));
                start = None;
            }
            None if b >= t => start = Some(if a < t { cross(a, b) } else { y[k] }),
            _ => {}
        }
    }
    if let Some(s) = start {
        intervals.push((s, y[y.len() - 1]));
    }
    Ok(HpdRegion {
        level,
        intervals,
        threshold: t,
        mass: mass_above(y, density, t),
    })
}

/// HPD region of the posterior predictive at `x_new` with default grid settings.
pub fn hpd_region(model: &ConditionalModel, x_new: &[f64], level: f64) -> Result<HpdRegion> {
    PredictiveDensity::new(model, &DensityConfig::default())?.hpd(x_new, level)
}

/// Sorted PIT values with their uniform reference quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct PitSummary {
    pub pit: Vec<f64>,
    pub uniform_q: Vec<f64>,
    pub ks: f64,
}

/// `F(y | x)` at each held-out pair, averaged over `n_beta` coefficient
/// draws with the posterior-mean marginal.
pub fn pit_values(model: &ConditionalModel, x: &Array2<f64>, y: &[f64], n_beta: usize, seed: u64) -> Result<PitSummary> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!("{} rows but {} responses", x.nrows(), y.len())));
    }
    if x.ncols() != model.p() {
        return Err(Error::Dimension(format!(
            "held-out rows have {} columns, model expects {}",
            x.ncols(),
            model.p()
        )));
    }
    if y.is_empty() {
        return Err(Error::InvalidInput("no held-out points".into()));
    }
    let sign = model.pl().sign.factor();
    let draws: Vec<(Vec<f64>, LatentMixtureCdf)> = beta_draws(model, n_beta.max(1), seed)
        .into_iter()
        .map(|b| {
            let latent = model.latent_at(&b)?;
            Ok((b, latent))
        })
        .collect::<Result<_>>()?;
    let mut pit = (0..y.len())
        .into_par_iter()
        .map(|i| {
            let row = x.row(i);
            let row = row.as_slice().expect("contiguous");
            let mut acc = 0.0;
            for (beta, latent) in &draws {
                acc += conditional_cdf_with(model.marginal(), latent, sign * dot(beta, row), y[i])?;
            }
            Ok(acc / draws.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    pit.sort_by(f64::total_cmp);
    let m = pit.len() as f64;
    let uniform_q = (1..=pit.len()).map(|i| (i as f64 - 0.5) / m).collect();
    let ks = ks_uniform(&pit);
    Ok(PitSummary { pit, uniform_q, ks })
}
