//! Regression through a Plackett-Luce copula.
//!
//! The response marginal `F_Y`, the covariate distribution `F_X` and the
//! coefficients `β` of a log-linear rate function are fitted separately
//! (composite likelihood) and recombined into conditional distributions
//! `F(y | x) = 1 - exp(-λ_β(x) F_Z⁻¹(F_Y(y)))`.

pub mod conditional;
pub mod data;
pub mod dpm;
pub mod empirical;
pub mod error;
pub mod math;
pub mod model_io;
pub mod pl;
pub mod polya_tree;
pub mod predictive;
pub mod simgen;

pub use conditional::{
    copula_eval, copula_sample, fit_composite, pairwise_prob, CompositeConfig, ConditionalModel,
    LatentMixtureCdf, MarginalPosterior, MarginalSpec,
};
pub use data::{build_order, encode_design, OrderIndex, RawTable, RegressionDataset, Schema};
pub use error::{Error, Result};
pub use pl::{
    fit_map, mh_refine, pl_grad_hess, pl_log_likelihood, sign_probability, GaussianPrior,
    NewtonConfig, PLPosterior, RateFunction, RateSign,
};
pub use predictive::{hpd_region, pit_values, predict_draws, HpdRegion, PredictiveDraws, Scheme};
