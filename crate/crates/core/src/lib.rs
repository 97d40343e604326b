//! Debiased Bayesian inference for average treatment effects.
//!
//! A Gaussian-process prior on the response surface `m(x, r)` is augmented with a
//! rank-one term built from an estimated propensity score, which first-order
//! debiases the induced marginal posterior of the ATE. Feature-distribution
//! uncertainty is propagated with the Bayesian bootstrap.
//!
//! The typical flow is [`estimator::fit_propensity`] → [`estimator::GpFit::fit`]
//! → [`estimator::GpFit::moments`] → [`effect::sample_effect_posterior`]. The
//! [`harness`] module wraps this into replication studies on the synthetic and
//! semi-synthetic benchmark generators in [`simgen`].

pub mod data;
pub mod effect;
pub mod error;
pub mod estimator;
pub mod gp;
pub mod harness;
pub mod kernels;
pub mod linalg;
pub mod optim;
pub mod propensity;
pub mod simgen;

pub use data::{load_dataset, stack_design, ObservationalDataset, Schema, StackedDesign};
pub use effect::{
    dirichlet_weights, ipw_ate, ols_ate, posterior_mean_ate, sample_effect_posterior, BaselineEstimate,
    EffectPosterior, SamplerConfig,
};
pub use error::{Error, Result};
pub use estimator::{fit_propensity, GpFit, GpSettings, PropensityFit};
pub use gp::{
    log_marginal_likelihood, optimize_hyperparams, posterior_moments, FitReport, OptimizerConfig, PosteriorMoments,
};
pub use harness::{
    fit_dataset_with, fit_single, run_replications, write_single, BenchConfig, BenchGenerator, BenchmarkReport,
    FitConfig, Method, MethodSummary, SingleFit, Target,
};
pub use kernels::{calibrate_nu, corrected_gram, se_ard, GPHyperParams};
pub use propensity::{fit_logistic, predict_ps, riesz_weights, LogisticConfig, PropensityModel, RieszWeights};
pub use simgen::{g_funcs, gen_ihdp_outcomes, gen_synthetic, Generator, SimOptions, SimulatedInstance};
