//! Benchmark data generators: the synthetic HOM/HET designs and the
//! semi-synthetic IHDP "response surface B" variant on user-supplied covariates.
//!
//! Every random quantity of the synthetic designs comes from a substream keyed
//! by `(seed, unit, slot)`, where the slot is the feature index or the noise
//! term. A feature value therefore depends only on its own key, which makes the
//! noise features provably irrelevant to `(R, Y)`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{read_table, ObservationalDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Generator {
    Hom,
    Het,
    IhdpB,
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Generator::Hom => "HOM",
            Generator::Het => "HET",
            Generator::IhdpB => "IHDP-B",
        })
    }
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hom" => Ok(Generator::Hom),
            "het" => Ok(Generator::Het),
            "ihdp-b" | "ihdp" | "ihdpb" => Ok(Generator::IhdpB),
            other => Err(Error::Simulation(format!("unknown generator `{other}`"))),
        }
    }
}

/// Options shared by the generators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Draw the unit-variance outcome noise. Turning it off exposes the exact
    /// response surfaces, which is only useful in tests.
    pub noise: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { noise: true }
    }
}

/// A generated dataset with its ground truth.
#[derive(Debug, Clone)]
pub struct SimulatedInstance {
    pub data: ObservationalDataset,
    /// Population ATE; `NaN` when it is not defined by the design (IHDP-B).
    pub true_ate: f64,
    /// Sample-averaged effect over the generated units.
    pub true_cate: f64,
    pub generator: Generator,
    pub seed: u64,
    /// Noise-free control surface `E[Y⁽⁰⁾ | Xᵢ]`.
    pub mu0: Vec<f64>,
    /// Noise-free treated surface `E[Y⁽¹⁾ | Xᵢ]`.
    pub mu1: Vec<f64>,
}

/// The ten basis functions of the synthetic design, `k ∈ 1..=10`.
pub fn g_funcs(k: usize, x: f64) -> Result<f64> {
    let e = std::f64::consts::E;
    Ok(match k {
        1 => x - 0.5,
        2 => (x - 0.5).powi(2) + 2.0,
        3 => x * x - 1.0 / 3.0,
        4 => -2.0 * (2.0 * x).sin(),
        5 => (-x).exp() - 1.0 / e - 1.0,
        6 => (-x).exp(),
        7 => x * x,
        8 => x,
        9 => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        10 => x.cos(),
        _ => return Err(Error::Simulation(format!("basis function index {k} outside 1..=10"))),
    })
}

fn g(k: usize, x: f64) -> f64 {
    g_funcs(k, x).expect("index in range")
}

/// Treatment rule `Σ_{k=1}^{5} g_k(x_k) > 0` on the first five features.
pub fn synthetic_assignment(x: &[f64]) -> bool {
    (1..=5).map(|k| g(k, x[k - 1])).sum::<f64>() > 0.0
}

/// Control surface `Σ_{k=1}^{5} g_{k+5}(x_k)`.
pub fn synthetic_baseline(x: &[f64]) -> f64 {
    (1..=5).map(|k| g(k + 5, x[k - 1])).sum()
}

/// Unit-level treatment effect `τ(x)`.
pub fn synthetic_effect(mode: Generator, x: &[f64]) -> f64 {
    match mode {
        Generator::Het => 1.0 + 2.0 * x[1] * x[4],
        _ => 1.0,
    }
}

/// Independent substream for one `(unit, slot)` cell.
fn cell_rng(seed: u64, unit: usize, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((unit as u64) << 32) | slot);
    rng
}

const NOISE_SLOT: u64 = 0;

fn feature_slot(j: usize) -> u64 {
    j as u64 + 1
}

/// Standard-normal feature `x_{ij}`; a pure function of `(seed, i, j)`.
pub fn synthetic_feature(seed: u64, unit: usize, feature: usize) -> f64 {
    cell_rng(seed, unit, feature_slot(feature)).sample(StandardNormal)
}

/// Synthetic HOM or HET instance with `n` units and `d ≥ 5` iid N(0,1) features.
pub fn gen_synthetic(n: usize, d: usize, mode: Generator, seed: u64, options: SimOptions) -> Result<SimulatedInstance> {
    if d < 5 {
        return Err(Error::Simulation(format!("synthetic design needs d ≥ 5, got {d}")));
    }
    if mode == Generator::IhdpB {
        return Err(Error::Simulation("IHDP-B outcomes need a covariate file".into()));
    }
    let x = Mat::from_fn(n, d, |i, j| synthetic_feature(seed, i, j));
    let mut treatment = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    let mut mu0 = Vec::with_capacity(n);
    let mut mu1 = Vec::with_capacity(n);
    let mut effect_sum = 0.0;
    for i in 0..n {
        let row: Vec<f64> = (0..5).map(|j| x[(i, j)]).collect();
        let r = synthetic_assignment(&row);
        let base = synthetic_baseline(&row);
        let tau = synthetic_effect(mode, &row);
        effect_sum += tau;
        let eps: f64 = if options.noise {
            cell_rng(seed, i, NOISE_SLOT).sample(StandardNormal)
        } else {
            0.0
        };
        mu0.push(base);
        mu1.push(base + tau);
        treatment.push(r);
        outcome.push(base + if r { tau } else { 0.0 } + eps);
    }
    let true_cate = match mode {
        Generator::Hom => 1.0,
        _ => effect_sum / n as f64,
    };
    Ok(SimulatedInstance {
        data: ObservationalDataset::new(x, treatment, outcome)?,
        true_ate: 1.0,
        true_cate,
        generator: mode,
        seed,
        mu0,
        mu1,
    })
}

const IHDP_BETA_VALUES: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.4];
const IHDP_BETA_PROBS: [f64; 5] = [0.6, 0.1, 0.1, 0.1, 0.1];
const IHDP_OFFSET: f64 = 0.5;
const IHDP_TARGET_CATE: f64 = 4.0;

/// Draws one coefficient from `{0, .1, .2, .3, .4}` with probabilities `(.6, .1, .1, .1, .1)`.
fn draw_beta<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (v, p) in IHDP_BETA_VALUES.iter().zip(IHDP_BETA_PROBS) {
        acc += p;
        if u < acc {
            return *v;
        }
    }
    IHDP_BETA_VALUES[4]
}

/// Response surfaces `Y⁽⁰⁾ ~ N(exp((x+w)ᵀβ), 1)` and `Y⁽¹⁾ ~ N(xᵀβ − ω_β, 1)`
/// for the given coefficient vector, with `ω_β` chosen so that the sample
/// average effect is exactly 4.
pub fn ihdp_surfaces(features: &Mat<f64>, beta: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let (n, d) = (features.nrows(), features.ncols());
    if n == 0 || d == 0 {
        return Err(Error::Simulation("empty covariate matrix".into()));
    }
    if beta.len() != d {
        return Err(Error::Simulation(format!(
            "{} coefficients for {d} covariates",
            beta.len()
        )));
    }
    let offset: f64 = IHDP_OFFSET * beta.iter().sum::<f64>();
    let linear: Vec<f64> = (0..n)
        .map(|i| (0..d).map(|j| features[(i, j)] * beta[j]).sum::<f64>())
        .collect();
    let mu0: Vec<f64> = linear.iter().map(|a| (a + offset).exp()).collect();
    if let Some(i) = mu0.iter().position(|v| !v.is_finite()) {
        return Err(Error::Simulation(format!(
            "control surface overflows at unit {}; standardize the covariates",
            i + 1
        )));
    }
    let omega = linear.iter().zip(&mu0).map(|(a, b)| a - b).sum::<f64>() / n as f64 - IHDP_TARGET_CATE;
    let mu1: Vec<f64> = linear.iter().map(|a| a - omega).collect();
    Ok((mu0, mu1, omega))
}

/// Semi-synthetic outcomes on real covariates and treatment assignments.
/// `β` is redrawn on every call.
pub fn gen_ihdp_outcomes(
    features: &Mat<f64>,
    treatment: &[bool],
    seed: u64,
    options: SimOptions,
) -> Result<SimulatedInstance> {
    let (n, d) = (features.nrows(), features.ncols());
    if n == 0 || d == 0 {
        return Err(Error::Simulation("empty covariate matrix".into()));
    }
    if treatment.len() != n {
        return Err(Error::Simulation(format!(
            "{} treatment labels for {n} units",
            treatment.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..d).map(|_| draw_beta(&mut rng)).collect();
    let (mu0, mu1, _) = ihdp_surfaces(features, &beta)?;
    let outcome: Vec<f64> = (0..n)
        .map(|i| {
            let eps: f64 = if options.noise {
                cell_rng(seed, i, NOISE_SLOT).sample(StandardNormal)
            } else {
                0.0
            };
            (if treatment[i] { mu1[i] } else { mu0[i] }) + eps
        })
        .collect();
    Ok(SimulatedInstance {
        data: ObservationalDataset::new(features.clone(), treatment.to_vec(), outcome)?,
        true_ate: f64::NAN,
        true_cate: IHDP_TARGET_CATE,
        generator: Generator::IhdpB,
        seed,
        mu0,
        mu1,
    })
}

/// Covariates for the semi-synthetic design: a CSV with a `treatment` column
/// and numeric feature columns. Columns named `outcome`, `y`, `mu0` or `mu1`
/// are ignored if present.
#[derive(Debug, Clone)]
pub struct Covariates {
    pub x: Mat<f64>,
    pub treatment: Vec<bool>,
    pub names: Vec<String>,
}

pub fn load_covariates(path: &Path) -> Result<Covariates> {
    let table = read_table(path)?;
    if table.rows.is_empty() {
        return Err(Error::Simulation("covariate file has no rows".into()));
    }
    let t_col = table.column_index("treatment")?;
    let skip = ["outcome", "y", "mu0", "mu1"];
    let cols: Vec<usize> = (0..table.header.len())
        .filter(|&c| c != t_col && !skip.contains(&table.header[c].to_ascii_lowercase().as_str()))
        .collect();
    if cols.is_empty() {
        return Err(Error::Simulation("covariate file has no feature columns".into()));
    }
    let x = table.matrix(&cols)?;
    let treatment = (0..table.rows.len())
        .map(|i| table.binary(i, t_col))
        .collect::<Result<Vec<_>>>()?;
    Ok(Covariates {
        x,
        treatment,
        names: cols.iter().map(|&c| table.header[c].clone()).collect(),
    })
}
