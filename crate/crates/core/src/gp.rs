//! Exact GP regression: log marginal likelihood with analytic gradients,
//! multi-start hyperparameter fitting, and posterior moments at the stacked
//! factual/counterfactual design.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::StackedDesign;
use crate::error::{Error, Result};
use crate::kernels::{add_rank_one, base_gram, base_gram_sym, scale_inputs, GPHyperParams};
use crate::linalg::{cholesky_with_jitter, col_vec, log_det, symmetrize};
use crate::optim::{minimize, LbfgsConfig, Minimum};
use crate::propensity::RieszWeights;

/// Relative objective gain a later restart needs to replace an earlier one.
const RESTART_TOL: f64 = 1e-8;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Posterior mean and covariance of `m` at the rows of `Z*`.
#[derive(Debug, Clone)]
pub struct PosteriorMoments {
    /// Length `2n`: factual rows first, then counterfactual rows.
    pub mu: Vec<f64>,
    /// `2n × 2n`, symmetrized.
    pub sigma: Mat<f64>,
}

impl PosteriorMoments {
    pub fn n(&self) -> usize {
        self.mu.len() / 2
    }
}

/// Outcome of [`optimize_hyperparams`].
#[derive(Debug, Clone)]
pub struct FitReport {
    /// Fitted kernel parameters with `nu = 0`.
    pub params: GPHyperParams,
    pub log_ml: f64,
    /// Log marginal likelihood at the unperturbed initialization.
    pub initial_log_ml: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restarts_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    /// Total number of optimizer runs; the first starts from the data-scaled
    /// initialization, later ones from log-uniform perturbations of it.
    pub restarts: usize,
    pub lbfgs: LbfgsConfig,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            restarts: 3,
            lbfgs: LbfgsConfig::default(),
            seed: 0,
        }
    }
}

/// Training covariance `K(Z,Z) + ν² w wᵀ + σ² I`, together with the base part.
fn training_covariance(params: &GPHyperParams, z: &Mat<f64>, w_f: Option<&[f64]>) -> Result<(Mat<f64>, Mat<f64>)> {
    let base = base_gram_sym(params, z)?;
    let mut ky = base.clone();
    if let Some(w) = w_f {
        if w.len() != z.nrows() {
            return Err(Error::Gp(format!("{} weights for {} rows", w.len(), z.nrows())));
        }
        add_rank_one(&mut ky, params.nu * params.nu, w, w);
    }
    for i in 0..ky.nrows() {
        ky[(i, i)] += params.noise_var;
    }
    Ok((base, ky))
}

/// Log marginal likelihood `−½ yᵀK⁻¹y − ½ log|K| − (n/2) log 2π` and its gradient
/// with respect to `[log ℓ₁ … log ℓ_{d+1}, log ρ², log σ²]`.
///
/// When `w_f` is given the correction `ν² w wᵀ` is included in `K` (with `ν`
/// held fixed, so it contributes no gradient term).
pub fn log_marginal_likelihood(
    params: &GPHyperParams,
    z: &Mat<f64>,
    y: &[f64],
    w_f: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    let n = z.nrows();
    if y.len() != n {
        return Err(Error::Gp(format!("{} outcomes for {n} inputs", y.len())));
    }
    let (base, ky) = training_covariance(params, z, w_f)?;
    let fact = cholesky_with_jitter(ky.as_ref(), "training covariance").map_err(|e| match e {
        Error::NotPositiveDefinite { jitter, context } => Error::NotPositiveDefinite {
            jitter,
            context: format!("{context} at {params:?}"),
        },
        other => other,
    })?;
    let alpha = fact.llt.solve(col_vec(y));
    let fit: f64 = (0..n).map(|i| y[i] * alpha[(i, 0)]).sum();
    let value = -0.5 * fit - 0.5 * log_det(&fact.llt) - 0.5 * n as f64 * LN_2PI;

    // W = ααᵀ − K⁻¹, M = W ∘ K_base
    let mut w = fact.llt.inverse();
    let mut trace_w = 0.0;
    for j in 0..n {
        for i in 0..n {
            w[(i, j)] = alpha[(i, 0)] * alpha[(j, 0)] - w[(i, j)];
        }
        trace_w += w[(j, j)];
    }
    let mut m = w;
    let mut sum_m = 0.0;
    for j in 0..n {
        for i in 0..n {
            m[(i, j)] *= base[(i, j)];
            sum_m += m[(i, j)];
        }
    }
    let u = scale_inputs(params, z);
    let mu = &m * &u;
    // M is symmetric: row sums equal column sums
    let row_sums: Vec<f64> = (0..n).map(|j| (0..n).map(|i| m[(i, j)]).sum()).collect();
    let mut grad = Vec::with_capacity(u.ncols() + 2);
    for k in 0..u.ncols() {
        let g: f64 = (0..n)
            .map(|i| u[(i, k)] * u[(i, k)] * row_sums[i] - u[(i, k)] * mu[(i, k)])
            .sum();
        grad.push(g);
    }
    grad.push(0.5 * sum_m);
    grad.push(0.5 * params.noise_var * trace_w);
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Gp(format!("non-finite marginal likelihood at {params:?}")));
    }
    Ok((value, grad))
}

fn column_sd(z: &Mat<f64>, j: usize) -> f64 {
    let n = z.nrows() as f64;
    let m = (0..z.nrows()).map(|i| z[(i, j)]).sum::<f64>() / n;
    ((0..z.nrows()).map(|i| (z[(i, j)] - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// Data-scaled starting point: `ℓᵢ = sd(column i)` (treatment column `ℓ = 1`),
/// `ρ² = σ² = var(Y)`.
pub fn initial_params(z: &Mat<f64>, y: &[f64]) -> GPHyperParams {
    let d1 = z.ncols();
    let length_scales = (0..d1)
        .map(|j| {
            let sd = column_sd(z, j);
            if j + 1 == d1 || sd.is_nan() || sd <= 1e-12 {
                1.0
            } else {
                sd
            }
        })
        .collect();
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let var = if var > 1e-12 { var } else { 1.0 };
    GPHyperParams {
        length_scales,
        signal_var: var,
        noise_var: var,
        nu: 0.0,
    }
}

/// Maximizes the log marginal likelihood of the uncorrected kernel (`ν = 0`)
/// by L-BFGS in log space, keeping the best of `config.restarts` runs.
pub fn optimize_hyperparams(z: &Mat<f64>, y: &[f64], config: &OptimizerConfig) -> Result<FitReport> {
    if z.nrows() < 2 || y.len() != z.nrows() {
        return Err(Error::Gp(format!(
            "need at least 2 observations with matching outcomes, got {} inputs and {} outcomes",
            z.nrows(),
            y.len()
        )));
    }
    let init = initial_params(z, y);
    let theta0 = init.to_log();
    let p = theta0.len();
    let (lower, upper): (Vec<f64>, Vec<f64>) = theta0
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let width = if k + 2 < p { 10.0 } else { 14.0 };
            (t - width, t + width)
        })
        .unzip();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let starts: Vec<Vec<f64>> = (0..config.restarts.max(1))
        .map(|r| {
            if r == 0 {
                theta0.clone()
            } else {
                theta0.iter().map(|t| t + rng.random_range(-1.0..=1.0)).collect()
            }
        })
        .collect();

    let objective = |theta: &[f64]| {
        let params = GPHyperParams::from_log(theta, 0.0);
        log_marginal_likelihood(&params, z, y, None)
            .ok()
            .map(|(v, g)| (-v, g.into_iter().map(|c| -c).collect::<Vec<_>>()))
    };
    let initial_log_ml = objective(&theta0).map(|(f, _)| -f).unwrap_or(f64::NEG_INFINITY);

    let runs: Vec<_> = starts
        .par_iter()
        .map(|start| minimize(objective, start, &lower, &upper, &config.lbfgs))
        .collect();
    let restarts_used = runs.len();
    // Later restarts replace earlier ones only on a real improvement; gaps at
    // the optimizer's precision would make the choice arbitrary on flat optima.
    let mut best: Option<Minimum> = None;
    for m in runs.into_iter().flatten().filter(|m| m.f.is_finite()) {
        let better = match &best {
            None => true,
            Some(b) => m.f < b.f - RESTART_TOL * b.f.abs().max(1.0),
        };
        if better {
            best = Some(m);
        }
    }
    let best =
        best.ok_or_else(|| Error::Gp("every optimizer restart failed to evaluate the marginal likelihood".into()))?;

    Ok(FitReport {
        params: GPHyperParams::from_log(&best.x, 0.0),
        log_ml: -best.f,
        initial_log_ml,
        iterations: best.iterations,
        converged: best.converged,
        restarts_used,
    })
}

/// Posterior mean and covariance of `m` at `Z*` under the corrected kernel.
///
/// With `K̄ = K(Z*,Z) + ν² w* w_fᵀ` and `K_y = K(Z,Z) + ν² w_f w_fᵀ + σ² I`:
/// `μ = K̄ K_y⁻¹ Y` and `Σ = K(Z*,Z*) + ν² w* w*ᵀ − K̄ K_y⁻¹ K̄ᵀ`, both through
/// the Cholesky factor of `K_y`. `weights` may be `None` only when `ν = 0`.
pub fn posterior_moments(
    params: &GPHyperParams,
    design: &StackedDesign,
    y: &[f64],
    weights: Option<&RieszWeights>,
) -> Result<PosteriorMoments> {
    params.validate()?;
    let n = design.n();
    if y.len() != n || design.z_star.nrows() != 2 * n {
        return Err(Error::Gp("design and outcome sizes disagree".into()));
    }
    let nu2 = params.nu * params.nu;
    let (w_f, w_star) = match weights {
        Some(w) => {
            if w.w_f.len() != n || w.w_c.len() != n {
                return Err(Error::Gp(format!("weights have length {} for n = {n}", w.w_f.len())));
            }
            (w.w_f.clone(), w.stacked())
        }
        None if nu2 == 0.0 => (vec![0.0; n], vec![0.0; 2 * n]),
        None => return Err(Error::Gp("nu > 0 requires Riesz weights".into())),
    };

    let (_, ky) = training_covariance(params, &design.z, Some(&w_f))?;
    let fact = cholesky_with_jitter(ky.as_ref(), "posterior training covariance")?;

    let mut kbar = base_gram(params, &design.z_star, &design.z)?;
    add_rank_one(&mut kbar, nu2, &w_star, &w_f);

    let alpha = fact.llt.solve(col_vec(y));
    let mean = &kbar * &alpha;
    let mu: Vec<f64> = (0..2 * n).map(|i| mean[(i, 0)]).collect();

    let mut v = kbar.transpose().to_owned();
    fact.llt.L().solve_lower_triangular_in_place(v.as_mut());
    let mut sigma = base_gram_sym(params, &design.z_star)?;
    add_rank_one(&mut sigma, nu2, &w_star, &w_star);
    sigma -= v.transpose() * &v;
    symmetrize(&mut sigma);
    Ok(PosteriorMoments { mu, sigma })
}
