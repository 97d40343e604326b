//! ARD squared-exponential kernel and its propensity-corrected variant.
//!
//! Inputs are rows of `[x | r]`: the treatment indicator is the last ARD
//! coordinate with its own length scale. The correction adds the rank-one term
//! `ν² w(z) w(z')` built from the Riesz weights attached to each row.

use faer::Mat;

use crate::error::{Error, Result};

/// Kernel hyperparameters. `nu = 0` disables the correction.
#[derive(Debug, Clone, PartialEq)]
pub struct GPHyperParams {
    /// One length scale per input column, treatment last.
    pub length_scales: Vec<f64>,
    /// Kernel variance `ρ²`.
    pub signal_var: f64,
    /// Observation noise variance `σ²`.
    pub noise_var: f64,
    /// Correction scale `ν`.
    pub nu: f64,
}

impl GPHyperParams {
    pub fn new(length_scales: Vec<f64>, signal_var: f64, noise_var: f64, nu: f64) -> Result<Self> {
        let p = Self {
            length_scales,
            signal_var,
            noise_var,
            nu,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.length_scales.is_empty() || !self.length_scales.iter().all(|&l| positive(l)) {
            return Err(Error::Kernel(format!(
                "length scales must be positive and finite: {:?}",
                self.length_scales
            )));
        }
        if !positive(self.signal_var) || !positive(self.noise_var) {
            return Err(Error::Kernel(format!(
                "variances must be positive: signal {}, noise {}",
                self.signal_var, self.noise_var
            )));
        }
        if !(self.nu.is_finite() && self.nu >= 0.0) {
            return Err(Error::Kernel(format!("nu must be non-negative, got {}", self.nu)));
        }
        Ok(())
    }

    /// Number of input columns (features plus treatment).
    pub fn input_dim(&self) -> usize {
        self.length_scales.len()
    }

    /// Optimizer coordinates `[log ℓ₁ … log ℓ_{d+1}, log ρ², log σ²]`.
    pub fn to_log(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.length_scales.iter().map(|l| l.ln()).collect();
        v.push(self.signal_var.ln());
        v.push(self.noise_var.ln());
        v
    }

    pub fn from_log(theta: &[f64], nu: f64) -> Self {
        let k = theta.len() - 2;
        Self {
            length_scales: theta[..k].iter().map(|t| t.exp()).collect(),
            signal_var: theta[k].exp(),
            noise_var: theta[k + 1].exp(),
            nu,
        }
    }

    pub fn with_nu(&self, nu: f64) -> Self {
        Self { nu, ..self.clone() }
    }
}

/// `ρ² exp(−½ Σ (zᵢ − z'ᵢ)² / ℓᵢ²)`.
pub fn se_ard(params: &GPHyperParams, z: &[f64], z2: &[f64]) -> f64 {
    debug_assert_eq!(z.len(), params.input_dim());
    debug_assert_eq!(z2.len(), params.input_dim());
    let q: f64 = z
        .iter()
        .zip(z2)
        .zip(&params.length_scales)
        .map(|((a, b), l)| ((a - b) / l).powi(2))
        .sum();
    params.signal_var * (-0.5 * q).exp()
}

/// Inputs divided column-wise by the length scales.
pub(crate) fn scale_inputs(params: &GPHyperParams, a: &Mat<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] / params.length_scales[j])
}

fn row_sq_norms(u: &Mat<f64>) -> Vec<f64> {
    let mut s = vec![0.0; u.nrows()];
    for j in 0..u.ncols() {
        for (i, acc) in s.iter_mut().enumerate() {
            *acc += u[(i, j)] * u[(i, j)];
        }
    }
    s
}

/// Base Gram matrix `K(A, B)` for the ARD squared-exponential kernel.
///
/// Squared distances are formed as `|a|² + |b|² − 2 a·b` through one matrix
/// product; entries are clamped at zero.
pub fn base_gram(params: &GPHyperParams, a: &Mat<f64>, b: &Mat<f64>) -> Result<Mat<f64>> {
    let d = params.input_dim();
    if a.ncols() != d || b.ncols() != d {
        return Err(Error::Kernel(format!(
            "input dimension mismatch: kernel expects {d} columns, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let ua = scale_inputs(params, a);
    let ub = scale_inputs(params, b);
    let na = row_sq_norms(&ua);
    let nb = row_sq_norms(&ub);
    let mut k = &ua * ub.transpose();
    let rho2 = params.signal_var;
    for j in 0..k.ncols() {
        for i in 0..k.nrows() {
            let d2 = (na[i] + nb[j] - 2.0 * k[(i, j)]).max(0.0);
            k[(i, j)] = rho2 * (-0.5 * d2).exp();
        }
    }
    Ok(k)
}

/// Symmetric Gram matrix `K(A, A)` with an exact diagonal of `ρ²`.
pub fn base_gram_sym(params: &GPHyperParams, a: &Mat<f64>) -> Result<Mat<f64>> {
    let mut k = base_gram(params, a, a)?;
    for i in 0..k.nrows() {
        k[(i, i)] = params.signal_var;
        for j in 0..i {
            let v = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// `K(A, B) + ν² w_A w_Bᵀ`, the propensity-corrected covariance.
pub fn corrected_gram(
    params: &GPHyperParams,
    a: &Mat<f64>,
    b: &Mat<f64>,
    w_a: &[f64],
    w_b: &[f64],
) -> Result<Mat<f64>> {
    if w_a.len() != a.nrows() || w_b.len() != b.nrows() {
        return Err(Error::Kernel(format!(
            "weight length mismatch: {}x{} rows vs weights {} and {}",
            a.nrows(),
            b.nrows(),
            w_a.len(),
            w_b.len()
        )));
    }
    let mut k = base_gram(params, a, b)?;
    add_rank_one(&mut k, params.nu * params.nu, w_a, w_b);
    Ok(k)
}

pub(crate) fn add_rank_one(k: &mut Mat<f64>, scale: f64, u: &[f64], v: &[f64]) {
    if scale == 0.0 {
        return;
    }
    for j in 0..k.ncols() {
        for i in 0..k.nrows() {
            k[(i, j)] += scale * u[i] * v[j];
        }
    }
}

/// `ν = 0.2 ρ / (√n M_n)`.
pub fn calibrate_nu(signal_var: f64, n: usize, m_n: f64) -> f64 {
    0.2 * signal_var.sqrt() / ((n as f64).sqrt() * m_n)
}
