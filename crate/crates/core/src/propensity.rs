//! Propensity score estimation by penalized logistic regression, truncation,
//! and the factual/counterfactual Riesz weights that enter the corrected kernel.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use crate::data::ObservationalDataset;
use crate::error::{Error, Result};

pub const DEFAULT_LOWER: f64 = 0.1;
pub const DEFAULT_UPPER: f64 = 0.9;

/// Fitting options for [`fit_logistic`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticConfig {
    /// L2 penalty on the standardized slopes, on the per-observation scale.
    /// `None` selects `1 / n`, a unit penalty `½‖b‖²` on the summed log-likelihood.
    pub ridge: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            ridge: None,
            max_iter: 100,
            tol: 1e-8,
            lower: DEFAULT_LOWER,
            upper: DEFAULT_UPPER,
        }
    }
}

impl LogisticConfig {
    pub fn ridge_for(&self, n: usize) -> f64 {
        self.ridge.unwrap_or(1.0 / n as f64)
    }
}

/// Fitted logistic propensity model with truncation bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    /// Intercept followed by one coefficient per raw (unstandardized) feature.
    pub beta: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
    pub ridge: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `‖∇J‖_∞` of the penalized mean log-likelihood at `beta`, in standardized coordinates.
    pub grad_norm: f64,
}

impl PropensityModel {
    /// Unfitted model with given coefficients, e.g. a known true propensity.
    pub fn from_coefficients(beta: Vec<f64>, lower: f64, upper: f64) -> Result<Self> {
        check_bounds(lower, upper)?;
        if beta.is_empty() || beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Propensity(
                "coefficients must be finite and include an intercept".into(),
            ));
        }
        Ok(Self {
            beta,
            lower,
            upper,
            ridge: 0.0,
            converged: true,
            iterations: 0,
            grad_norm: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn linear_predictor(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Propensity(format!(
                "dimension mismatch: model has {} features, point has {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(self.beta[0] + self.beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>())
    }

    /// Truncated propensity `clamp(sigmoid(β·[1;x]), lower, upper)`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.linear_predictor(x)?).clamp(self.lower, self.upper))
    }

    /// Truncated propensities for every row of `x`.
    pub fn predict_rows(&self, x: &Mat<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::Propensity(format!(
                "dimension mismatch: model has {} features, matrix has {}",
                self.dim(),
                x.ncols()
            )));
        }
        Ok((0..x.nrows())
            .map(|i| {
                let eta = self.beta[0] + (0..x.ncols()).map(|j| self.beta[j + 1] * x[(i, j)]).sum::<f64>();
                sigmoid(eta).clamp(self.lower, self.upper)
            })
            .collect())
    }
}

/// Free-function form of [`PropensityModel::predict`].
pub fn predict_ps(model: &PropensityModel, x: &[f64]) -> Result<f64> {
    model.predict(x)
}

fn check_bounds(lower: f64, upper: f64) -> Result<()> {
    if !(lower > 0.0 && lower < 0.5 && upper > 0.5 && upper < 1.0) {
        return Err(Error::Propensity(format!(
            "truncation bounds must satisfy 0 < lower < 0.5 < upper < 1, got [{lower}, {upper}]"
        )));
    }
    Ok(())
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Penalized mean log-likelihood `(1/n) Σ [r η − log(1+e^η)] − (ridge/2)‖b‖²`
/// over the design `[1 | Xs]`, with the intercept unpenalized.
fn objective(xs: &Mat<f64>, r: &[f64], theta: &[f64], ridge: f64) -> f64 {
    let n = xs.nrows();
    let ll: f64 = (0..n)
        .map(|i| {
            let eta = theta[0] + (0..xs.ncols()).map(|j| theta[j + 1] * xs[(i, j)]).sum::<f64>();
            r[i] * eta - softplus(eta)
        })
        .sum();
    ll / n as f64 - 0.5 * ridge * theta[1..].iter().map(|b| b * b).sum::<f64>()
}

/// Fits `P(R=1|X=x) = sigmoid(β₀ + βᵀx)` by damped Newton iterations on the
/// penalized mean log-likelihood.
///
/// Features are standardized internally (constant columns get a zero slope) and the
/// returned coefficients are mapped back to the raw feature scale.
pub fn fit_logistic(x: &Mat<f64>, treatment: &[bool], config: &LogisticConfig) -> Result<PropensityModel> {
    check_bounds(config.lower, config.upper)?;
    let (n, d) = (x.nrows(), x.ncols());
    if treatment.len() != n {
        return Err(Error::Propensity("treatment length does not match X".into()));
    }
    let treated = treatment.iter().filter(|&&t| t).count();
    if treated == 0 || treated == n {
        return Err(Error::Propensity("both treatment labels must be present".into()));
    }
    let ridge = config.ridge_for(n);
    if !ridge.is_finite() || ridge < 0.0 {
        return Err(Error::Propensity(format!("ridge must be non-negative, got {ridge}")));
    }
    let r: Vec<f64> = treatment.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();

    let mut means = vec![0.0; d];
    let mut sds = vec![0.0; d];
    for j in 0..d {
        let m = (0..n).map(|i| x[(i, j)]).sum::<f64>() / n as f64;
        let v = (0..n).map(|i| (x[(i, j)] - m).powi(2)).sum::<f64>() / n as f64;
        means[j] = m;
        sds[j] = v.sqrt();
    }
    let active: Vec<usize> = (0..d).filter(|&j| sds[j] > 1e-12 * (1.0 + means[j].abs())).collect();
    let p = active.len();
    let xs = Mat::from_fn(n, p, |i, k| {
        let j = active[k];
        (x[(i, j)] - means[j]) / sds[j]
    });

    let frac = treated as f64 / n as f64;
    let mut theta = vec![0.0; p + 1];
    theta[0] = (frac / (1.0 - frac)).ln();
    let mut value = objective(&xs, &r, &theta, ridge);
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;

    for iter in 0..=config.max_iter {
        // gradient and negative Hessian of the mean objective
        let mut grad = vec![0.0; p + 1];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            let eta = theta[0] + (0..p).map(|k| theta[k + 1] * xs[(i, k)]).sum::<f64>();
            let mu = sigmoid(eta);
            let resid = r[i] - mu;
            grad[0] += resid;
            for k in 0..p {
                grad[k + 1] += resid * xs[(i, k)];
            }
            weights[i] = mu * (1.0 - mu);
        }
        for g in grad.iter_mut() {
            *g /= n as f64;
        }
        for k in 0..p {
            grad[k + 1] -= ridge * theta[k + 1];
        }
        grad_norm = grad.iter().fold(0.0_f64, |a, g| a.max(g.abs()));
        iterations = iter;
        if !grad_norm.is_finite() {
            return Err(Error::Propensity("non-finite gradient during fitting".into()));
        }
        if grad_norm <= config.tol {
            converged = true;
            break;
        }
        if iter == config.max_iter {
            break;
        }

        let design = |i: usize, k: usize| if k == 0 { 1.0 } else { xs[(i, k - 1)] };
        let mut info = Mat::<f64>::zeros(p + 1, p + 1);
        for a in 0..=p {
            for b in 0..=a {
                let s = (0..n).map(|i| weights[i] * design(i, a) * design(i, b)).sum::<f64>() / n as f64;
                info[(a, b)] = s;
                info[(b, a)] = s;
            }
        }
        for k in 1..=p {
            info[(k, k)] += ridge;
        }
        let llt = info.llt(Side::Lower).map_err(|_| {
            Error::Propensity("singular Hessian in logistic fit; increase the ridge penalty (e.g. --ridge 1e-4)".into())
        })?;
        let step = llt.solve(Mat::from_fn(p + 1, 1, |i, _| grad[i]));

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = theta
                .iter()
                .enumerate()
                .map(|(k, t)| t + scale * step[(k, 0)])
                .collect();
            let v = objective(&xs, &r, &trial, ridge);
            if v.is_finite() && v >= value {
                theta = trial;
                value = v;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !value.is_finite() {
            return Err(Error::Propensity("non-finite likelihood".into()));
        }
        if !accepted {
            // no ascent possible at working precision
            converged = grad_norm <= config.tol.max(1e-6);
            break;
        }
    }

    let mut beta = vec![0.0; d + 1];
    beta[0] = theta[0];
    for (k, &j) in active.iter().enumerate() {
        beta[j + 1] = theta[k + 1] / sds[j];
        beta[0] -= theta[k + 1] * means[j] / sds[j];
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Propensity("fit produced non-finite coefficients".into()));
    }
    Ok(PropensityModel {
        beta,
        lower: config.lower,
        upper: config.upper,
        ridge,
        converged,
        iterations,
        grad_norm,
    })
}

/// Fits the propensity model on a dataset and returns it with the truncated
/// in-sample scores.
pub fn fit_dataset(data: &ObservationalDataset, config: &LogisticConfig) -> Result<(PropensityModel, Vec<f64>)> {
    let model = fit_logistic(data.x(), data.treatment(), config)?;
    let ps = model.predict_rows(data.x())?;
    Ok((model, ps))
}

/// Factual and counterfactual Riesz weights plus their scale `M_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct RieszWeights {
    pub w_f: Vec<f64>,
    pub w_c: Vec<f64>,
    /// Mean absolute factual weight.
    pub m_n: f64,
}

impl RieszWeights {
    /// Weights attached to the rows of the stacked design: factual then counterfactual.
    pub fn stacked(&self) -> Vec<f64> {
        let mut v = self.w_f.clone();
        v.extend_from_slice(&self.w_c);
        v
    }
}

/// `w_f = R/π̂ − (1−R)/(1−π̂)`, `w_c = (1−R)/π̂ − R/(1−π̂)`, and
/// `M_n = (1/n) Σ [R/π̂ + (1−R)/(1−π̂)]`.
pub fn riesz_weights(treatment: &[bool], ps: &[f64]) -> Result<RieszWeights> {
    if treatment.len() != ps.len() {
        return Err(Error::Propensity("treatment and propensity lengths differ".into()));
    }
    if treatment.is_empty() {
        return Err(Error::Propensity("empty treatment vector".into()));
    }
    if let Some(i) = ps.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Propensity(format!(
            "propensity {} at unit {} lies outside (0, 1); truncate before weighting",
            ps[i],
            i + 1
        )));
    }
    let n = ps.len();
    let mut w_f = Vec::with_capacity(n);
    let mut w_c = Vec::with_capacity(n);
    let mut abs_sum = 0.0;
    for (&t, &p) in treatment.iter().zip(ps) {
        let r = if t { 1.0 } else { 0.0 };
        w_f.push(r / p - (1.0 - r) / (1.0 - p));
        w_c.push((1.0 - r) / p - r / (1.0 - p));
        abs_sum += r / p + (1.0 - r) / (1.0 - p);
    }
    Ok(RieszWeights {
        w_f,
        w_c,
        m_n: abs_sum / n as f64,
    })
}
