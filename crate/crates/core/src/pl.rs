//! Plackett-Luce partial likelihood for the response ordering.
//!
//! The probability of the observed ordering `ν` (lowest response first) is
//!
//! ```text
//! P(ν | β) = Π_i λ(x_{ν_i}) / Σ_{j ≥ i} λ(x_{ν_j}),    λ(x) = exp(±βᵀx)
//! ```
//!
//! which is the Cox partial likelihood with distinct event times. All sums
//! over the suffix `{ν_j : j ≥ i}` are kept in log space, accumulated from
//! the tail of the ordering.

use nalgebra::{DMatrix, DVector};
use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{OrderIndex, RegressionDataset};
use crate::error::{Error, Result};
use crate::math::{logaddexp, seeded_rng, std_normal_log_cdf, LN_2PI};

/// Sign in the exponent of the rate function.
///
/// With `Positive`, `λ(x) = exp(βᵀx)`: a larger linear predictor makes the
/// latent arrival time earlier and so pushes the response *down*. A negative
/// coefficient therefore raises the response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RateSign {
    #[default]
    Positive,
    Negative,
}

impl RateSign {
    pub fn factor(self) -> f64 {
        match self {
            RateSign::Positive => 1.0,
            RateSign::Negative => -1.0,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            RateSign::Positive => '+',
            RateSign::Negative => '-',
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        match s.trim() {
            "+" => Some(RateSign::Positive),
            "-" => Some(RateSign::Negative),
            _ => None,
        }
    }
}

/// Log-linear regression function `λ_β(x) = exp(sign · βᵀx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFunction {
    pub beta: Vec<f64>,
    pub sign: RateSign,
}

impl RateFunction {
    pub fn new(beta: Vec<f64>) -> Self {
        Self {
            beta,
            sign: RateSign::Positive,
        }
    }

    pub fn with_sign(beta: Vec<f64>, sign: RateSign) -> Self {
        Self { beta, sign }
    }

    /// Linear predictor `sign · βᵀx`, i.e. `ln λ(x)`.
    pub fn eta(&self, x: &[f64]) -> f64 {
        self.sign.factor() * dot(&self.beta, x)
    }

    pub fn rate(&self, x: &[f64]) -> f64 {
        self.eta(x).exp()
    }

    /// Linear predictors for every row of `x`.
    pub fn etas(&self, x: &Array2<f64>) -> Vec<f64> {
        let beta = Array1::from_vec(self.beta.clone());
        let s = self.sign.factor();
        x.dot(&beta).into_iter().map(|v| s * v).collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.comp
    }
}

fn check_dims(data: &RegressionDataset, order: &OrderIndex, rate: &RateFunction) -> Result<()> {
    if rate.beta.len() != data.p() {
        return Err(Error::Dimension(format!(
            "beta has {} coefficients, data has {} covariates",
            rate.beta.len(),
            data.p()
        )));
    }
    if order.len() != data.n() {
        return Err(Error::Dimension(format!(
            "order has {} entries, data has {} rows",
            order.len(),
            data.n()
        )));
    }
    if rate.beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidInput("non-finite coefficient".into()));
    }
    Ok(())
}

/// `L_i = ln Σ_{j ≥ i} exp(η_j)` over the sorted predictors.
fn log_suffix_sums(eta_sorted: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; eta_sorted.len()];
    let mut acc = f64::NEG_INFINITY;
    for (o, &e) in out.iter_mut().zip(eta_sorted).rev() {
        acc = logaddexp(e, acc);
        *o = acc;
    }
    out
}

fn sorted_etas(x: &Array2<f64>, nu: &[usize], rate: &RateFunction) -> Vec<f64> {
    let eta = rate.etas(x);
    nu.iter().map(|&i| eta[i]).collect()
}

fn log_likelihood_sorted(eta_sorted: &[f64]) -> f64 {
    let lse = log_suffix_sums(eta_sorted);
    let mut acc = CompensatedSum::default();
    for (e, l) in eta_sorted.iter().zip(&lse) {
        acc.add(e - l);
    }
    acc.value()
}

/// Log-probability of the observed ordering under `rate`.
pub fn pl_log_likelihood(
    data: &RegressionDataset,
    order: &OrderIndex,
    rate: &RateFunction,
) -> Result<f64> {
    check_dims(data, order, rate)?;
    Ok(log_likelihood_sorted(&sorted_etas(data.x(), order.nu(), rate)))
}

/// Log-likelihood with its gradient and Hessian in `β`.
#[derive(Debug, Clone)]
pub struct PlDerivatives {
    pub log_likelihood: f64,
    pub gradient: Array1<f64>,
    pub hessian: Array2<f64>,
}

const BLOCK_ROWS: usize = 512;

/// Gradient and Hessian of the partial log-likelihood.
///
/// Writing `p_ij = exp(η_j - L_i)` for the suffix weights, the gradient is
/// `sign · Σ_i (x_i - x̄_i)` with `x̄_i = Σ_j p_ij x_j`, and the Hessian is
/// `-Σ_i Cov_i(x)`. The suffix means obey `x̄_i = r_i x_i + (1 - r_i) x̄_{i+1}`
/// with `r_i = p_ii`. The second-moment part is folded into one weighted Gram
/// matrix `Σ_j c_j x_j x_jᵀ` with `c_j = Σ_{i ≤ j} p_ij ≤ j`, so the Hessian
/// costs two blocked matrix products instead of `n` rank-one updates.
pub fn pl_grad_hess(
    data: &RegressionDataset,
    order: &OrderIndex,
    rate: &RateFunction,
) -> Result<PlDerivatives> {
    check_dims(data, order, rate)?;
    let x = data.x();
    let nu = order.nu();
    let (n, p) = (data.n(), data.p());

    let eta = sorted_etas(x, nu, rate);
    let lse = log_suffix_sums(&eta);
    let mut ll = CompensatedSum::default();
    for (e, l) in eta.iter().zip(&lse) {
        ll.add(e - l);
    }

    // Gram weights c_j = exp(η_j + ln Σ_{i ≤ j} exp(-L_i)).
    let mut sqrt_coef = vec![0.0; n];
    let mut log_prefix = f64::NEG_INFINITY;
    for j in 0..n {
        log_prefix = logaddexp(log_prefix, -lse[j]);
        sqrt_coef[j] = (0.5 * (eta[j] + log_prefix)).exp();
    }

    // Both the gradient and the Hessian are invariant to shifting x by a
    // constant vector; centering keeps the Gram difference well conditioned.
    let center = x.mean_axis(Axis(0)).expect("n >= 2");

    let mut grad = vec![CompensatedSum::default(); p];
    let mut gram = Array2::<f64>::zeros((p, p));
    let mut mean_gram = Array2::<f64>::zeros((p, p));
    let mut xb = Array2::<f64>::zeros((BLOCK_ROWS, p));
    let mut ab = Array2::<f64>::zeros((BLOCK_ROWS, p));
    let mut suffix_mean = vec![0.0; p];

    let n_blocks = n.div_ceil(BLOCK_ROWS);
    for b in (0..n_blocks).rev() {
        let start = b * BLOCK_ROWS;
        let end = (start + BLOCK_ROWS).min(n);
        let len = end - start;
        for (k, &row) in nu[start..end].iter().enumerate() {
            let src = x.row(row);
            let mut dst = xb.row_mut(k);
            for ((d, s), c) in dst.iter_mut().zip(src.iter()).zip(center.iter()) {
                *d = s - c;
            }
        }
        for k in (0..len).rev() {
            let i = start + k;
            let r = (eta[i] - lse[i]).exp();
            let q = if i + 1 < n { (lse[i + 1] - lse[i]).exp() } else { 0.0 };
            let xi = xb.row(k);
            let mut ai = ab.row_mut(k);
            for c in 0..p {
                let a = r * xi[c] + q * suffix_mean[c];
                suffix_mean[c] = a;
                ai[c] = a;
                grad[c].add(xi[c] - a);
            }
        }
        for k in 0..len {
            let w = sqrt_coef[start + k];
            xb.row_mut(k).mapv_inplace(|v| v * w);
        }
        let xw = xb.slice(ndarray::s![..len, ..]);
        let am = ab.slice(ndarray::s![..len, ..]);
        general_mat_mul(1.0, &xw.t(), &xw, 1.0, &mut gram);
        general_mat_mul(1.0, &am.t(), &am, 1.0, &mut mean_gram);
    }

    let s = rate.sign.factor();
    let gradient = Array1::from_iter(grad.into_iter().map(|g| s * g.value()));
    let mut hessian = mean_gram - gram;
    symmetrize(&mut hessian);
    Ok(PlDerivatives {
        log_likelihood: ll.value(),
        gradient,
        hessian,
    })
}

fn symmetrize(m: &mut Array2<f64>) {
    let p = m.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
}

/// Independent Gaussian prior on each coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl GaussianPrior {
    pub fn isotropic(p: usize, mean: f64, variance: f64) -> Self {
        Self {
            mean: vec![mean; p],
            variance: vec![variance; p],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, beta: &[f64]) -> f64 {
        beta.iter()
            .zip(&self.mean)
            .zip(&self.variance)
            .map(|((b, m), v)| -0.5 * ((b - m) * (b - m) / v + v.ln() + LN_2PI))
            .sum()
    }

    fn validate(&self, p: usize) -> Result<()> {
        if self.mean.len() != p || self.variance.len() != p {
            return Err(Error::Dimension(format!(
                "prior has dimension {}, data has {p} covariates",
                self.mean.len()
            )));
        }
        if self.variance.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput("prior variances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub grad_tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iter: 100,
            max_halvings: 30,
        }
    }
}

/// Pseudo-posterior for the coefficients: MAP, Laplace covariance and
/// optionally a Metropolis sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PLPosterior {
    pub beta_map: Vec<f64>,
    pub laplace_cov: Array2<f64>,
    pub log_post_at_map: f64,
    pub prior: GaussianPrior,
    pub sign: RateSign,
    pub iterations: usize,
    pub grad_norm: f64,
    pub mh_samples: Option<Vec<Vec<f64>>>,
    pub mh_acceptance: Option<f64>,
}

impl PLPosterior {
    pub fn p(&self) -> usize {
        self.beta_map.len()
    }

    pub fn rate_at_map(&self) -> RateFunction {
        RateFunction::with_sign(self.beta_map.clone(), self.sign)
    }

    pub fn sd(&self, j: usize) -> f64 {
        self.laplace_cov[[j, j]].sqrt()
    }

    /// Lower-triangular `L` with `L Lᵀ` equal to the Laplace covariance.
    ///
    /// Falls back to a symmetric square root for singular (e.g. zero)
    /// covariances so that degenerate posteriors still sample.
    pub fn laplace_factor(&self) -> Array2<f64> {
        psd_factor(&self.laplace_cov)
    }

    /// One draw from the Laplace approximation.
    pub fn draw_laplace<R: Rng + ?Sized>(&self, factor: &Array2<f64>, rng: &mut R) -> Vec<f64> {
        let p = self.p();
        let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        (0..p)
            .map(|i| self.beta_map[i] + dot(factor.row(i).as_slice().expect("contiguous"), &z))
            .collect()
    }
}

pub(crate) fn to_nalgebra(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

pub(crate) fn from_nalgebra(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

pub(crate) fn psd_factor(cov: &Array2<f64>) -> Array2<f64> {
    let m = to_nalgebra(cov);
    if let Some(chol) = m.clone().cholesky() {
        return from_nalgebra(&chol.l());
    }
    let eig = m.symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals);
    from_nalgebra(&root)
}

fn log_posterior(
    data: &RegressionDataset,
    order: &OrderIndex,
    prior: &GaussianPrior,
    sign: RateSign,
    beta: &[f64],
) -> f64 {
    let rate = RateFunction::with_sign(beta.to_vec(), sign);
    log_likelihood_sorted(&sorted_etas(data.x(), order.nu(), &rate)) + prior.log_density(beta)
}

/// Newton MAP of the pseudo-posterior `π(β) · P(ν | β)` with a Laplace
/// covariance at the mode.
pub fn fit_map(
    data: &RegressionDataset,
    order: &OrderIndex,
    prior: &GaussianPrior,
    config: &NewtonConfig,
) -> Result<PLPosterior> {
    fit_map_with_sign(data, order, prior, RateSign::Positive, config)
}

pub fn fit_map_with_sign(
    data: &RegressionDataset,
    order: &OrderIndex,
    prior: &GaussianPrior,
    sign: RateSign,
    config: &NewtonConfig,
) -> Result<PLPosterior> {
    let p = data.p();
    prior.validate(p)?;
    let mut beta = prior.mean.clone();
    check_dims(data, order, &RateFunction::with_sign(beta.clone(), sign))?;

    let precision_prior: Vec<f64> = prior.variance.iter().map(|v| 1.0 / v).collect();
    let mut grad_norm = f64::INFINITY;
    let mut floor_grad: Option<f64> = None;
    for iteration in 0..=config.max_iter {
        let rate = RateFunction::with_sign(beta.clone(), sign);
        let d = pl_grad_hess(data, order, &rate)?;
        let mut grad = d.gradient;
        let mut precision = -d.hessian;
        for j in 0..p {
            grad[j] -= (beta[j] - prior.mean[j]) * precision_prior[j];
            precision[[j, j]] += precision_prior[j];
        }
        grad_norm = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        let objective = d.log_likelihood + prior.log_density(&beta);
        if !objective.is_finite() || !grad_norm.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite log posterior at iteration {iteration}"
            )));
        }

        let chol = to_nalgebra(&precision).cholesky().ok_or_else(|| {
            Error::Numeric("posterior precision is not positive definite".into())
        })?;
        let converged = |beta: Vec<f64>, grad_norm: f64| {
            let cov = from_nalgebra(&chol.inverse());
            let mut cov = cov;
            symmetrize(&mut cov);
            Ok(PLPosterior {
                beta_map: beta,
                laplace_cov: cov,
                log_post_at_map: objective,
                prior: prior.clone(),
                sign,
                iterations: iteration,
                grad_norm,
                mh_samples: None,
                mh_acceptance: None,
            })
        };
        if grad_norm < config.grad_tol {
            return converged(beta, grad_norm);
        }
        if iteration == config.max_iter {
            break;
        }

        let g = DVector::from_iterator(p, grad.iter().copied());
        let step = chol.solve(&g);
        let decrement = g.dot(&step);
        // Near the optimum the predicted gain drops below the rounding noise
        // of the objective, so comparing values says nothing; trust the
        // quadratic model and take the full step. If that stops shrinking the
        // gradient, we are sitting on the floating point floor.
        if decrement <= 1e-11 * objective.abs().max(1.0) {
            if floor_grad.is_some_and(|prev| grad_norm >= prev) {
                return converged(beta, grad_norm);
            }
            floor_grad = Some(grad_norm);
            for (b, s) in beta.iter_mut().zip(step.iter()) {
                *b += s;
            }
            continue;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let candidate: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let value = log_posterior(data, order, prior, sign, &candidate);
            if value >= objective {
                accepted = Some(candidate);
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some(next) => beta = next,
            None => {
                return Err(Error::NonConvergence {
                    iterations: iteration + 1,
                    grad_norm,
                    last_beta: beta,
                })
            }
        }
    }
    Err(Error::NonConvergence {
        iterations: config.max_iter,
        grad_norm,
        last_beta: beta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhConfig {
    pub n_samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for MhConfig {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            burn_in: 200,
            thin: 5,
            seed: 0,
        }
    }
}

/// Random-walk Metropolis started at the MAP, proposing from
/// `N(0, (2.38² / p) · laplace_cov)`.
pub fn mh_refine(
    posterior: &PLPosterior,
    data: &RegressionDataset,
    order: &OrderIndex,
    config: &MhConfig,
) -> Result<PLPosterior> {
    let p = posterior.p();
    check_dims(
        data,
        order,
        &RateFunction::with_sign(posterior.beta_map.clone(), posterior.sign),
    )?;
    let thin = config.thin.max(1);
    let scale = (2.38 * 2.38 / p as f64).sqrt();
    let factor = posterior.laplace_factor().mapv(|v| v * scale);
    let mut rng = seeded_rng(config.seed);

    let target = |b: &[f64]| log_posterior(data, order, &posterior.prior, posterior.sign, b);
    let mut current = posterior.beta_map.clone();
    let mut current_lp = target(&current);
    let total = config.burn_in + config.n_samples * thin;
    let mut accepted = 0usize;
    let mut samples = Vec::with_capacity(config.n_samples);
    for step in 0..total {
        let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let proposal: Vec<f64> = (0..p)
            .map(|i| current[i] + dot(factor.row(i).as_slice().expect("contiguous"), &z))
            .collect();
        let lp = target(&proposal);
        let log_u: f64 = rng.random::<f64>().ln();
        if lp.is_finite() && log_u < lp - current_lp {
            current = proposal;
            current_lp = lp;
            accepted += 1;
        }
        if step >= config.burn_in && (step - config.burn_in + 1) % thin == 0 {
            samples.push(current.clone());
        }
    }
    let mut out = posterior.clone();
    out.mh_acceptance = Some(accepted as f64 / total.max(1) as f64);
    out.mh_samples = Some(samples);
    Ok(out)
}

/// Posterior mass on the sign opposite to the posterior mean, on the log scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignProbability {
    pub log_prob_diff_sign: f64,
    pub posterior_mean: f64,
}

/// `ln Φ(-|μ_j| / σ_j)` under the Laplace marginal of coefficient `j`.
pub fn sign_probability(posterior: &PLPosterior, j: usize) -> Result<SignProbability> {
    if j >= posterior.p() {
        return Err(Error::Dimension(format!(
            "coefficient {j} out of range for p = {}",
            posterior.p()
        )));
    }
    let mean = posterior.beta_map[j];
    let sd = posterior.sd(j);
    if !(sd > 0.0) {
        return Err(Error::DegeneratePosterior(j));
    }
    Ok(SignProbability {
        log_prob_diff_sign: std_normal_log_cdf(-mean.abs() / sd),
        posterior_mean: mean,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateRank {
    pub index: usize,
    pub name: String,
    pub log_prob_diff_sign: f64,
    pub posterior_mean: f64,
    pub posterior_sd: f64,
}

/// Covariates ordered from strongest to weakest sign evidence.
pub fn rank_covariates(posterior: &PLPosterior, names: &[String]) -> Result<Vec<CovariateRank>> {
    let mut ranks = (0..posterior.p())
        .map(|j| {
            let sp = sign_probability(posterior, j)?;
            Ok(CovariateRank {
                index: j,
                name: names.get(j).cloned().unwrap_or_else(|| format!("beta{j}")),
                log_prob_diff_sign: sp.log_prob_diff_sign,
                posterior_mean: sp.posterior_mean,
                posterior_sd: posterior.sd(j),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranks.sort_by(|a, b| a.log_prob_diff_sign.total_cmp(&b.log_prob_diff_sign));
    Ok(ranks)
}
