//! From posterior moments of the response surface to the marginal posterior of
//! the (conditional) average treatment effect, plus two frequentist baselines.
//!
//! A draw of the effect is `ψ = Σᵢ Vᵢ (m(Xᵢ,1) − m(Xᵢ,0))` where `m` is drawn
//! from the GP posterior at the factual and counterfactual points and `V` is a
//! flat Dirichlet vector (Bayesian bootstrap) or the constant `1/n` (plug-in).

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::ObservationalDataset;
use crate::error::{Error, Result};
use crate::gp::PosteriorMoments;
use crate::linalg::psd_sqrt;

pub const DEFAULT_DRAWS: usize = 2000;
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Flat Dirichlet weights `Vᵢ = Uᵢ / Σ Uⱼ` with `Uᵢ ~ Exp(1)`.
pub fn dirichlet_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut u: Vec<f64> = (0..n).map(|_| rng.sample(Exp1)).collect();
    let total: f64 = u.iter().sum();
    for v in u.iter_mut() {
        *v /= total;
    }
    u
}

fn sign(treated: bool) -> f64 {
    if treated {
        1.0
    } else {
        -1.0
    }
}

/// Per-unit `m(Xᵢ,1) − m(Xᵢ,0)` from a vector laid out like `Z*`.
pub fn unit_contrasts(values: &[f64], treatment: &[bool]) -> Result<Vec<f64>> {
    if values.len() % 2 != 0 {
        return Err(Error::Effect(format!("stacked vector has odd length {}", values.len())));
    }
    let n = values.len() / 2;
    if treatment.len() != n {
        return Err(Error::Effect(format!(
            "{} treatment labels for {n} units",
            treatment.len()
        )));
    }
    Ok((0..n)
        .map(|i| sign(treatment[i]) * (values[i] - values[n + i]))
        .collect())
}

fn plug_in_mean(contrasts: &[f64]) -> f64 {
    contrasts.iter().sum::<f64>() / contrasts.len() as f64
}

/// `(1/n) Σᵢ E[m(Xᵢ,1) − m(Xᵢ,0) | D]` from the posterior mean vector.
pub fn posterior_mean_ate(mu: &[f64], treatment: &[bool]) -> Result<f64> {
    Ok(plug_in_mean(&unit_contrasts(mu, treatment)?))
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-tail interval from the empirical `α/2` and `1 − α/2` quantiles.
pub fn credible_interval(draws: &[f64], alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Effect(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if (draws.len() as f64) * alpha / 2.0 < 1.0 {
        return Err(Error::Effect(format!(
            "{} draws are too few for a {:.1}% interval (need P·α/2 ≥ 1)",
            draws.len(),
            100.0 * (1.0 - alpha)
        )));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((
        quantile_sorted(&sorted, alpha / 2.0),
        quantile_sorted(&sorted, 1.0 - alpha / 2.0),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub draws: usize,
    pub alpha: f64,
    /// Bayesian-bootstrap weights when true, `1/n` when false.
    pub randomized: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            draws: DEFAULT_DRAWS,
            alpha: DEFAULT_ALPHA,
            randomized: true,
            seed: 0,
        }
    }
}

/// Marginal posterior of the treatment effect.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectPosterior {
    pub draws: Vec<f64>,
    /// Analytic posterior mean, computed from `μ` rather than the draws.
    pub post_mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub randomized: bool,
    pub alpha: f64,
}

impl EffectPosterior {
    pub fn ci_size(&self) -> f64 {
        self.ci_high - self.ci_low
    }

    pub fn contains(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// Draws `P` samples of the effect from the GP posterior.
///
/// `Σ` is factorized once; the per-draw random streams are derived from
/// `config.seed` and the draw index, so the output does not depend on how the
/// draws are scheduled across threads.
pub fn sample_effect_posterior(
    moments: &PosteriorMoments,
    treatment: &[bool],
    config: &SamplerConfig,
) -> Result<EffectPosterior> {
    let n = moments.n();
    if moments.sigma.nrows() != 2 * n || moments.sigma.ncols() != 2 * n {
        return Err(Error::Effect("posterior covariance does not match the mean".into()));
    }
    if config.draws < 2 {
        return Err(Error::Effect(format!("need at least 2 draws, got {}", config.draws)));
    }
    let mean_contrasts = unit_contrasts(&moments.mu, treatment)?;
    let post_mean = plug_in_mean(&mean_contrasts);

    let root = psd_sqrt(moments.sigma.as_ref())?;
    // rows of the contrast map applied to the square-root factor
    let contrast_root = Mat::from_fn(n, 2 * n, |i, j| sign(treatment[i]) * (root[(i, j)] - root[(n + i, j)]));

    let streams: Vec<(Vec<f64>, Option<Vec<f64>>)> = (0..config.draws)
        .into_par_iter()
        .map(|l| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(l as u64);
            let z: Vec<f64> = (0..2 * n).map(|_| rng.sample(StandardNormal)).collect();
            let v = config.randomized.then(|| dirichlet_weights(n, &mut rng));
            (z, v)
        })
        .collect();
    let noise = Mat::from_fn(2 * n, config.draws, |i, l| streams[l].0[i]);
    let centred = &contrast_root * &noise;

    let draws: Vec<f64> = (0..config.draws)
        .map(|l| {
            let contrasts: Vec<f64> = (0..n).map(|i| mean_contrasts[i] + centred[(i, l)]).collect();
            match &streams[l].1 {
                Some(v) => v.iter().zip(&contrasts).map(|(w, c)| w * c).sum(),
                None => plug_in_mean(&contrasts),
            }
        })
        .collect();
    let (ci_low, ci_high) = credible_interval(&draws, config.alpha)?;
    Ok(EffectPosterior {
        draws,
        post_mean,
        ci_low,
        ci_high,
        randomized: config.randomized,
        alpha: config.alpha,
    })
}

/// Point estimate with a normal-approximation interval.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineEstimate {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub method: String,
}

impl BaselineEstimate {
    fn normal(estimate: f64, se: f64, alpha: f64, method: &str) -> Result<Self> {
        let z = normal_quantile(1.0 - alpha / 2.0)?;
        Ok(Self {
            estimate,
            ci_low: estimate - z * se,
            ci_high: estimate + z * se,
            method: method.to_string(),
        })
    }

    pub fn ci_size(&self) -> f64 {
        self.ci_high - self.ci_low
    }

    pub fn contains(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.5 && p < 1.0) {
        return Err(Error::Effect(format!(
            "alpha must lie in (0, 1), got {}",
            2.0 * (1.0 - p)
        )));
    }
    Ok(Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p))
}

struct GroupFit {
    coef: Vec<f64>,
    /// `(X̃ᵀX̃)⁻¹` for the group design with intercept.
    cov_unscaled: Mat<f64>,
    resid_var: f64,
}

fn fit_group(data: &ObservationalDataset, treated: bool) -> Result<GroupFit> {
    let rows: Vec<usize> = (0..data.n()).filter(|&i| data.treatment()[i] == treated).collect();
    let p = data.d() + 1;
    let label = if treated { "treated" } else { "control" };
    if rows.len() <= p {
        return Err(Error::Effect(format!(
            "OLS needs more than {p} {label} units, found {}",
            rows.len()
        )));
    }
    let design = Mat::from_fn(
        rows.len(),
        p,
        |k, j| if j == 0 { 1.0 } else { data.x()[(rows[k], j - 1)] },
    );
    let y = Mat::from_fn(rows.len(), 1, |k, _| data.outcome()[rows[k]]);
    let mut gram = design.transpose() * &design;
    let llt = match gram.llt(Side::Lower) {
        Ok(llt) => llt,
        Err(_) => {
            let scale = (0..p).map(|j| gram[(j, j)]).sum::<f64>() / p as f64;
            for j in 0..p {
                gram[(j, j)] += 1e-6 * scale.max(1.0);
            }
            gram.llt(Side::Lower).map_err(|_| {
                Error::Effect(format!(
                    "rank-deficient {label} design even with ridge 1e-6; drop collinear features"
                ))
            })?
        }
    };
    let coef_m = llt.solve(design.transpose() * &y);
    let coef: Vec<f64> = (0..p).map(|j| coef_m[(j, 0)]).collect();
    let fitted = &design * &coef_m;
    let rss: f64 = (0..rows.len()).map(|k| (y[(k, 0)] - fitted[(k, 0)]).powi(2)).sum();
    Ok(GroupFit {
        coef,
        cov_unscaled: llt.inverse(),
        resid_var: rss / (rows.len() - p) as f64,
    })
}

/// Difference of per-group least-squares predictions averaged over all units.
///
/// The interval treats the feature mean as fixed and uses the classical
/// homoskedastic variance in each group.
pub fn ols_ate(data: &ObservationalDataset, alpha: f64) -> Result<BaselineEstimate> {
    let treated = fit_group(data, true)?;
    let control = fit_group(data, false)?;
    let p = data.d() + 1;
    let xbar: Vec<f64> = std::iter::once(1.0)
        .chain((0..data.d()).map(|j| (0..data.n()).map(|i| data.x()[(i, j)]).sum::<f64>() / data.n() as f64))
        .collect();
    let predict = |g: &GroupFit| g.coef.iter().zip(&xbar).map(|(b, x)| b * x).sum::<f64>();
    let estimate = predict(&treated) - predict(&control);
    let quad = |g: &GroupFit| {
        let mut s = 0.0;
        for a in 0..p {
            for b in 0..p {
                s += xbar[a] * g.cov_unscaled[(a, b)] * xbar[b];
            }
        }
        g.resid_var * s.max(0.0)
    };
    let se = (quad(&treated) + quad(&control)).sqrt();
    BaselineEstimate::normal(estimate, se, alpha, "ols")
}

/// Horvitz–Thompson estimate `(1/n) Σ [RᵢYᵢ/πᵢ − (1−Rᵢ)Yᵢ/(1−πᵢ)]`.
pub fn ipw_ate(data: &ObservationalDataset, ps: &[f64], alpha: f64) -> Result<BaselineEstimate> {
    if ps.len() != data.n() {
        return Err(Error::Effect(format!(
            "{} propensities for {} units",
            ps.len(),
            data.n()
        )));
    }
    if let Some(i) = ps.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Effect(format!(
            "propensity {} at unit {} outside (0, 1)",
            ps[i],
            i + 1
        )));
    }
    let n = data.n() as f64;
    let terms: Vec<f64> = (0..data.n())
        .map(|i| {
            let y = data.outcome()[i];
            if data.treatment()[i] {
                y / ps[i]
            } else {
                -y / (1.0 - ps[i])
            }
        })
        .collect();
    let estimate = terms.iter().sum::<f64>() / n;
    let var = terms.iter().map(|t| (t - estimate).powi(2)).sum::<f64>() / (n - 1.0);
    BaselineEstimate::normal(estimate, (var / n).sqrt(), alpha, "ipw")
}
