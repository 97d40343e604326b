//! Replication studies and single-dataset fits.
//!
//! A replication generates one dataset, fits every requested method on it and
//! records the point estimate and interval. Summaries report the mean and sd of
//! the absolute error and interval length, the coverage of the truth, and the
//! Type II error (fraction of intervals containing 0).

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::{format_float, load_dataset, ObservationalDataset, Schema};
use crate::effect::{ipw_ate, ols_ate, sample_effect_posterior, BaselineEstimate, EffectPosterior, SamplerConfig};
use crate::error::{Error, Result};
use crate::estimator::{fit_propensity, GpFit, GpSettings, PropensityFit};
use crate::gp::{FitReport, OptimizerConfig, PosteriorMoments};
use crate::propensity::{LogisticConfig, DEFAULT_LOWER, DEFAULT_UPPER};
use crate::simgen::{gen_ihdp_outcomes, gen_synthetic, load_covariates, Covariates, Generator, SimOptions};

/// Estimation methods available to the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Gp,
    GpNoRand,
    GpPs,
    GpPsNoRand,
    Ols,
    Ipw,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Gp,
        Method::GpNoRand,
        Method::GpPs,
        Method::GpPsNoRand,
        Method::Ols,
        Method::Ipw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gp => "gp",
            Method::GpNoRand => "gp-norand",
            Method::GpPs => "gp-ps",
            Method::GpPsNoRand => "gp-ps-norand",
            Method::Ols => "ols",
            Method::Ipw => "ipw",
        }
    }

    /// Row label used in the text report.
    pub fn label(self) -> &'static str {
        match self {
            Method::Gp => "GP",
            Method::GpNoRand => "GP (noRand)",
            Method::GpPs => "GP PS",
            Method::GpPsNoRand => "GP PS (noRand)",
            Method::Ols => "OLS",
            Method::Ipw => "IPW",
        }
    }

    pub fn is_gp(self) -> bool {
        matches!(self, Method::Gp | Method::GpNoRand | Method::GpPs | Method::GpPsNoRand)
    }

    /// Uses the propensity-corrected kernel.
    pub fn corrected(self) -> bool {
        matches!(self, Method::GpPs | Method::GpPsNoRand)
    }

    /// Bayesian-bootstrap feature weights rather than `1/n`.
    pub fn randomized(self) -> bool {
        matches!(self, Method::Gp | Method::GpPs)
    }

    pub fn needs_propensity(self) -> bool {
        self.corrected() || self == Method::Ipw
    }

    /// The plug-in counterpart of a randomized GP method.
    pub fn without_randomization(self) -> Method {
        match self {
            Method::Gp => Method::GpNoRand,
            Method::GpPs => Method::GpPsNoRand,
            other => other,
        }
    }

    fn index(self) -> u64 {
        Method::ALL.iter().position(|&m| m == self).unwrap() as u64
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Method::ALL.into_iter().find(|m| m.name() == key).ok_or_else(|| {
            Error::Config(format!(
                "unknown method `{s}` (expected one of gp, gp-ps, gp-norand, gp-ps-norand, ols, ipw)"
            ))
        })
    }
}

/// Parses a comma-separated method list, dropping duplicates.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for part in list.split(',').filter(|p| !p.trim().is_empty()) {
        let m: Method = part.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no methods given".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Ate,
    Cate,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Ate => "ATE",
            Target::Cate => "CATE",
        })
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ate" => Ok(Target::Ate),
            "cate" => Ok(Target::Cate),
            other => Err(Error::Config(format!(
                "unknown target `{other}` (expected ate or cate)"
            ))),
        }
    }
}

/// Data source of a replication study.
#[derive(Debug, Clone, PartialEq)]
pub enum BenchGenerator {
    Synthetic(Generator),
    /// Semi-synthetic outcomes on a covariate CSV.
    Ihdp {
        covariates: PathBuf,
    },
    /// A fixed dataset with a known effect; replications only vary the seeds
    /// of the optimizer restarts and the posterior draws.
    File {
        path: PathBuf,
        schema: Schema,
        truth: f64,
    },
}

impl fmt::Display for BenchGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchGenerator::Synthetic(g) => write!(f, "{g}"),
            BenchGenerator::Ihdp { covariates } => write!(f, "IHDP-B({})", covariates.display()),
            BenchGenerator::File { path, truth, .. } => write!(f, "file({}, truth={truth})", path.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub generator: BenchGenerator,
    pub n: usize,
    pub d: usize,
    pub replications: usize,
    pub methods: Vec<Method>,
    pub target: Target,
    pub draws: usize,
    pub alpha: f64,
    pub seed: u64,
    pub nu_override: Option<f64>,
    pub trunc_lo: f64,
    pub trunc_hi: f64,
    pub restarts: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            generator: BenchGenerator::Synthetic(Generator::Het),
            n: 500,
            d: 100,
            replications: 50,
            methods: vec![Method::Gp, Method::GpNoRand, Method::GpPs, Method::GpPsNoRand],
            target: Target::Ate,
            draws: 2000,
            alpha: 0.05,
            seed: 0,
            nu_override: None,
            trunc_lo: DEFAULT_LOWER,
            trunc_hi: DEFAULT_UPPER,
            restarts: 3,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods given".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if (self.draws as f64) * self.alpha / 2.0 < 1.0 {
            return Err(Error::Config(format!(
                "{} draws are too few for alpha = {}",
                self.draws, self.alpha
            )));
        }
        if !(self.trunc_lo > 0.0 && self.trunc_lo < 0.5 && self.trunc_hi > 0.5 && self.trunc_hi < 1.0) {
            return Err(Error::Config(format!(
                "truncation bounds must satisfy 0 < lo < 0.5 < hi < 1, got [{}, {}]",
                self.trunc_lo, self.trunc_hi
            )));
        }
        if let Some(nu) = self.nu_override {
            if !(nu.is_finite() && nu >= 0.0) {
                return Err(Error::Config(format!("nu must be non-negative, got {nu}")));
            }
        }
        match &self.generator {
            BenchGenerator::Synthetic(Generator::IhdpB) => {
                return Err(Error::Config(
                    "IHDP-B needs a covariate file (--ihdp-covariates)".into(),
                ))
            }
            BenchGenerator::Synthetic(_) => {
                if self.n < 2 || self.d < 5 {
                    return Err(Error::Config(format!(
                        "synthetic design needs n ≥ 2 and d ≥ 5, got n={} d={}",
                        self.n, self.d
                    )));
                }
            }
            BenchGenerator::Ihdp { .. } => {
                if self.target == Target::Ate {
                    return Err(Error::Config(
                        "the population ATE is undefined for IHDP-B outcomes; use --target cate".into(),
                    ));
                }
            }
            BenchGenerator::File { truth, .. } => {
                if !truth.is_finite() {
                    return Err(Error::Config("file generator needs a finite --truth".into()));
                }
            }
        }
        Ok(())
    }

    fn settings(&self, seed: u64) -> GpSettings {
        GpSettings {
            logistic: LogisticConfig {
                lower: self.trunc_lo,
                upper: self.trunc_hi,
                ..LogisticConfig::default()
            },
            optimizer: OptimizerConfig {
                restarts: self.restarts,
                seed,
                ..OptimizerConfig::default()
            },
            nu_override: self.nu_override,
        }
    }

    /// Human-readable echo of the configuration, one `key = value` per line.
    pub fn echo(&self) -> String {
        let methods: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        let mut s = String::new();
        let _ = writeln!(s, "generator = {}", self.generator);
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "d = {}", self.d);
        let _ = writeln!(s, "replications = {}", self.replications);
        let _ = writeln!(s, "methods = {}", methods.join(","));
        let _ = writeln!(s, "target = {}", self.target);
        let _ = writeln!(s, "draws = {}", self.draws);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(
            s,
            "nu = {}",
            self.nu_override
                .map_or_else(|| "calibrated".to_string(), |v| v.to_string())
        );
        let _ = writeln!(s, "truncation = [{}, {}]", self.trunc_lo, self.trunc_hi);
        let _ = writeln!(s, "restarts = {}", self.restarts);
        s
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed; independent of scheduling.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Point estimate and interval of one method on one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.ci_low <= v && v <= self.ci_high
    }

    pub fn size(&self) -> f64 {
        self.ci_high - self.ci_low
    }
}

impl From<&EffectPosterior> for Interval {
    fn from(p: &EffectPosterior) -> Self {
        Self {
            estimate: p.post_mean,
            ci_low: p.ci_low,
            ci_high: p.ci_high,
        }
    }
}

impl From<&BaselineEstimate> for Interval {
    fn from(b: &BaselineEstimate) -> Self {
        Self {
            estimate: b.estimate,
            ci_low: b.ci_low,
            ci_high: b.ci_high,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub index: usize,
    pub seed: u64,
    pub truth: f64,
    /// One entry per configured method, in configuration order.
    pub outcomes: Vec<(Method, std::result::Result<Interval, String>)>,
}

impl ReplicationRecord {
    pub fn outcome(&self, method: Method) -> Option<&std::result::Result<Interval, String>> {
        self.outcomes.iter().find(|(m, _)| *m == method).map(|(_, r)| r)
    }
}

/// Aggregated metrics of one method over all replications.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub abs_error_mean: f64,
    pub abs_error_sd: f64,
    pub ci_size_mean: f64,
    pub ci_size_sd: f64,
    pub coverage: f64,
    pub type2_error: f64,
    pub succeeded: usize,
    pub failed: usize,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl MethodSummary {
    /// Summary over `(truth, interval)` pairs of the successful replications.
    pub fn from_results(method: Method, results: &[(f64, Interval)], failed: usize) -> Self {
        let errors: Vec<f64> = results.iter().map(|(t, iv)| (iv.estimate - t).abs()).collect();
        let sizes: Vec<f64> = results.iter().map(|(_, iv)| iv.size()).collect();
        let (abs_error_mean, abs_error_sd) = mean_sd(&errors);
        let (ci_size_mean, ci_size_sd) = mean_sd(&sizes);
        let k = results.len() as f64;
        let frac = |f: &dyn Fn(&(f64, Interval)) -> bool| {
            if results.is_empty() {
                f64::NAN
            } else {
                results.iter().filter(|r| f(r)).count() as f64 / k
            }
        };
        Self {
            method,
            abs_error_mean,
            abs_error_sd,
            ci_size_mean,
            ci_size_sd,
            coverage: frac(&|(t, iv)| iv.contains(*t)),
            type2_error: frac(&|(_, iv)| iv.contains(0.0)),
            succeeded: results.len(),
            failed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub config_echo: String,
    pub summaries: Vec<MethodSummary>,
    pub records: Vec<ReplicationRecord>,
    /// Elapsed time of the run; not part of any written file.
    pub wall_clock_secs: f64,
}

impl BenchmarkReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// Machine-readable summary, one row per method.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "method,abs_error_mean,abs_error_sd,ci_size_mean,ci_size_sd,coverage,type2_error,succeeded,failed\n",
        );
        for m in &self.summaries {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                m.method.name(),
                format_float(m.abs_error_mean),
                format_float(m.abs_error_sd),
                format_float(m.ci_size_mean),
                format_float(m.ci_size_sd),
                format_float(m.coverage),
                format_float(m.type2_error),
                m.succeeded,
                m.failed
            );
        }
        s
    }

    /// Aligned table with the columns Abs. error ± sd, Size CI ± sd, Coverage, Type II error.
    pub fn to_table(&self) -> String {
        let header = [
            "Method",
            "Abs. error ± sd",
            "Size CI ± sd",
            "Coverage",
            "Type II error",
            "Failed",
        ];
        let rows: Vec<[String; 6]> = self
            .summaries
            .iter()
            .map(|m| {
                [
                    m.method.label().to_string(),
                    format!("{:.3} ± {:.3}", m.abs_error_mean, m.abs_error_sd),
                    format!("{:.3} ± {:.3}", m.ci_size_mean, m.ci_size_sd),
                    format!("{:.2}", m.coverage),
                    format!("{:.2}", m.type2_error),
                    m.failed.to_string(),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: Vec<&str>| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            format!("| {} |\n", padded.join(" | "))
        };
        let rule = format!(
            "|{}|\n",
            widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|")
        );
        let mut out = String::new();
        out.push_str(&line(header.to_vec()));
        out.push_str(&rule);
        for row in &rows {
            out.push_str(&line(row.iter().map(String::as_str).collect()));
        }
        out
    }

    /// Per-replication estimates and intervals.
    pub fn replications_csv(&self) -> String {
        let mut s = String::from("replication,seed,method,truth,estimate,ci_low,ci_high,error\n");
        for rec in &self.records {
            for (m, res) in &rec.outcomes {
                match res {
                    Ok(iv) => {
                        let _ = writeln!(
                            s,
                            "{},{},{},{},{},{},{},",
                            rec.index,
                            rec.seed,
                            m.name(),
                            format_float(rec.truth),
                            format_float(iv.estimate),
                            format_float(iv.ci_low),
                            format_float(iv.ci_high)
                        );
                    }
                    Err(e) => {
                        let _ = writeln!(
                            s,
                            "{},{},{},{},,,,\"{}\"",
                            rec.index,
                            rec.seed,
                            m.name(),
                            format_float(rec.truth),
                            e.replace('"', "'")
                        );
                    }
                }
            }
        }
        s
    }

    /// Writes `summary.csv`, `report.txt`, `replications.csv` and `config.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let io = |source| Error::Io {
            path: dir.to_path_buf(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join("summary.csv"), self.to_csv()).map_err(io)?;
        std::fs::write(dir.join("report.txt"), self.to_table()).map_err(io)?;
        std::fs::write(dir.join("replications.csv"), self.replications_csv()).map_err(io)?;
        std::fs::write(dir.join("config.txt"), &self.config_echo).map_err(io)?;
        Ok(())
    }

    fn check_failures(&self) -> Result<()> {
        for m in &self.summaries {
            let total = m.succeeded + m.failed;
            if m.failed * 5 > total {
                return Err(Error::TooManyFailures {
                    method: m.method.name().to_string(),
                    failed: m.failed,
                    total,
                });
            }
        }
        Ok(())
    }
}

/// Inputs loaded once and shared by all replications.
enum Source {
    Synthetic(Generator),
    Ihdp(Covariates),
    File(ObservationalDataset, f64),
}

struct Generated {
    data: ObservationalDataset,
    true_ate: f64,
    true_cate: f64,
}

impl Source {
    fn load(config: &BenchConfig) -> Result<Self> {
        Ok(match &config.generator {
            BenchGenerator::Synthetic(g) => Source::Synthetic(*g),
            BenchGenerator::Ihdp { covariates } => Source::Ihdp(load_covariates(covariates)?),
            BenchGenerator::File { path, schema, truth } => Source::File(load_dataset(path, schema)?, *truth),
        })
    }

    fn generate(&self, config: &BenchConfig, seed: u64) -> Result<Generated> {
        match self {
            Source::Synthetic(g) => {
                let inst = gen_synthetic(config.n, config.d, *g, seed, SimOptions::default())?;
                Ok(Generated {
                    data: inst.data,
                    true_ate: inst.true_ate,
                    true_cate: inst.true_cate,
                })
            }
            Source::Ihdp(cov) => {
                let inst = gen_ihdp_outcomes(&cov.x, &cov.treatment, seed, SimOptions::default())?;
                Ok(Generated {
                    data: inst.data,
                    true_ate: inst.true_ate,
                    true_cate: inst.true_cate,
                })
            }
            Source::File(data, truth) => Ok(Generated {
                data: data.clone(),
                true_ate: *truth,
                true_cate: *truth,
            }),
        }
    }
}

/// Runs one method given the shared fits of a replication.
struct ReplicationFits<'a> {
    data: &'a ObservationalDataset,
    propensity: Option<std::result::Result<PropensityFit, String>>,
    gp: Option<std::result::Result<GpFit, String>>,
    plain: Option<std::result::Result<PosteriorMoments, String>>,
    corrected: Option<std::result::Result<PosteriorMoments, String>>,
}

impl ReplicationFits<'_> {
    fn moments(&mut self, corrected: bool) -> std::result::Result<&PosteriorMoments, String> {
        let gp = match self.gp.as_ref() {
            Some(Ok(gp)) => gp,
            Some(Err(e)) => return Err(e.clone()),
            None => return Err("GP was not fitted".into()),
        };
        let slot = if corrected {
            &mut self.corrected
        } else {
            &mut self.plain
        };
        if slot.is_none() {
            *slot = Some(gp.moments(self.data.outcome(), corrected).map_err(|e| e.to_string()));
        }
        slot.as_ref().unwrap().as_ref().map_err(Clone::clone)
    }
}

fn run_method(
    method: Method,
    fits: &mut ReplicationFits<'_>,
    config: &BenchConfig,
    seed: u64,
) -> std::result::Result<Interval, String> {
    match method {
        Method::Ols => ols_ate(fits.data, config.alpha)
            .map(|b| Interval::from(&b))
            .map_err(|e| e.to_string()),
        Method::Ipw => match &fits.propensity {
            Some(Ok(p)) => ipw_ate(fits.data, &p.scores, config.alpha)
                .map(|b| Interval::from(&b))
                .map_err(|e| e.to_string()),
            Some(Err(e)) => Err(e.clone()),
            None => Err("propensity was not fitted".into()),
        },
        _ => {
            let treatment = fits.data.treatment().to_vec();
            let moments = fits.moments(method.corrected())?;
            let sampler = SamplerConfig {
                draws: config.draws,
                alpha: config.alpha,
                randomized: method.randomized(),
                seed: derive_seed(seed, 100 + method.index()),
            };
            sample_effect_posterior(moments, &treatment, &sampler)
                .map(|p| Interval::from(&p))
                .map_err(|e| e.to_string())
        }
    }
}

fn run_replication(config: &BenchConfig, source: &Source, index: usize) -> ReplicationRecord {
    let seed = derive_seed(config.seed, index as u64);
    let fail_all = |truth: f64, msg: String| ReplicationRecord {
        index,
        seed,
        truth,
        outcomes: config.methods.iter().map(|&m| (m, Err(msg.clone()))).collect(),
    };
    let generated = match source.generate(config, derive_seed(seed, 1)) {
        Ok(g) => g,
        Err(e) => return fail_all(f64::NAN, e.to_string()),
    };
    let truth = match config.target {
        Target::Ate => generated.true_ate,
        Target::Cate => generated.true_cate,
    };
    let data = &generated.data;
    let settings = config.settings(derive_seed(seed, 2));

    let propensity = config
        .methods
        .iter()
        .any(|m| m.needs_propensity())
        .then(|| fit_propensity(data, &settings.logistic).map_err(|e| e.to_string()));
    let gp = config.methods.iter().any(|m| m.is_gp()).then(|| {
        let ps = match &propensity {
            Some(Ok(p)) if config.methods.iter().any(|m| m.corrected()) => Some(p.clone()),
            _ => None,
        };
        GpFit::fit(data, ps, &settings).map_err(|e| e.to_string())
    });
    let mut fits = ReplicationFits {
        data,
        propensity,
        gp,
        plain: None,
        corrected: None,
    };
    if let (Some(Err(e)), Some(Ok(_))) = (&fits.propensity, &fits.gp) {
        // corrected methods cannot run without the propensity fit
        let e = e.clone();
        fits.corrected = Some(Err(e));
    }
    let outcomes = config
        .methods
        .iter()
        .map(|&m| (m, run_method(m, &mut fits, config, seed)))
        .collect();
    ReplicationRecord {
        index,
        seed,
        truth,
        outcomes,
    }
}

/// Summarizes replication records per method.
pub fn summarize(methods: &[Method], records: &[ReplicationRecord]) -> Vec<MethodSummary> {
    methods
        .iter()
        .map(|&m| {
            let mut ok = Vec::new();
            let mut failed = 0;
            for rec in records {
                match rec.outcome(m) {
                    Some(Ok(iv)) => ok.push((rec.truth, *iv)),
                    _ => failed += 1,
                }
            }
            MethodSummary::from_results(m, &ok, failed)
        })
        .collect()
}

/// Runs `config.replications` independent replications in parallel and
/// aggregates them. Fails if any method errors on more than 20% of them.
pub fn run_replications(config: &BenchConfig) -> Result<BenchmarkReport> {
    config.validate()?;
    let start = std::time::Instant::now();
    let source = Source::load(config)?;
    let records: Vec<ReplicationRecord> = (0..config.replications)
        .into_par_iter()
        .map(|r| run_replication(config, &source, r))
        .collect();
    let report = BenchmarkReport {
        config_echo: config.echo(),
        summaries: summarize(&config.methods, &records),
        records,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    report.check_failures()?;
    Ok(report)
}

/// Settings of a single-dataset fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub method: Method,
    pub draws: usize,
    pub alpha: f64,
    pub seed: u64,
    pub nu_override: Option<f64>,
    pub trunc_lo: f64,
    pub trunc_hi: f64,
    pub restarts: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            method: Method::GpPs,
            draws: 2000,
            alpha: 0.05,
            seed: 0,
            nu_override: None,
            trunc_lo: DEFAULT_LOWER,
            trunc_hi: DEFAULT_UPPER,
            restarts: 3,
        }
    }
}

/// Result of [`fit_single`].
#[derive(Debug, Clone)]
pub enum SingleFit {
    Posterior {
        method: Method,
        posterior: EffectPosterior,
        hyper: FitReport,
        nu: f64,
    },
    Baseline(BaselineEstimate),
}

impl SingleFit {
    pub fn interval(&self) -> Interval {
        match self {
            SingleFit::Posterior { posterior, .. } => Interval::from(posterior),
            SingleFit::Baseline(b) => Interval::from(b),
        }
    }

    /// One-line human summary.
    pub fn summary_line(&self) -> String {
        let iv = self.interval();
        match self {
            SingleFit::Posterior {
                method, posterior, nu, ..
            } => format!(
                "{}: posterior mean {:.6}, {:.0}% CI [{:.6}, {:.6}], draws {}, nu {:.6}",
                method.name(),
                iv.estimate,
                100.0 * (1.0 - posterior.alpha),
                iv.ci_low,
                iv.ci_high,
                posterior.draws.len(),
                nu
            ),
            SingleFit::Baseline(b) => format!(
                "{}: estimate {:.6}, CI [{:.6}, {:.6}]",
                b.method, iv.estimate, iv.ci_low, iv.ci_high
            ),
        }
    }
}

/// Runs one method on an in-memory dataset.
pub fn fit_dataset_with(data: &ObservationalDataset, config: &FitConfig) -> Result<SingleFit> {
    let settings = GpSettings {
        logistic: LogisticConfig {
            lower: config.trunc_lo,
            upper: config.trunc_hi,
            ..LogisticConfig::default()
        },
        optimizer: OptimizerConfig {
            restarts: config.restarts,
            seed: derive_seed(config.seed, 2),
            ..OptimizerConfig::default()
        },
        nu_override: config.nu_override,
    };
    match config.method {
        Method::Ols => Ok(SingleFit::Baseline(ols_ate(data, config.alpha)?)),
        Method::Ipw => {
            let p = fit_propensity(data, &settings.logistic)?;
            Ok(SingleFit::Baseline(ipw_ate(data, &p.scores, config.alpha)?))
        }
        method => {
            let ps = if method.corrected() {
                Some(fit_propensity(data, &settings.logistic)?)
            } else {
                None
            };
            let gp = GpFit::fit(data, ps, &settings)?;
            let moments = gp.moments(data.outcome(), method.corrected())?;
            let posterior = sample_effect_posterior(
                &moments,
                data.treatment(),
                &SamplerConfig {
                    draws: config.draws,
                    alpha: config.alpha,
                    randomized: method.randomized(),
                    seed: derive_seed(config.seed, 100 + method.index()),
                },
            )?;
            Ok(SingleFit::Posterior {
                method,
                posterior,
                nu: if method.corrected() { gp.nu } else { 0.0 },
                hyper: gp.hyper,
            })
        }
    }
}

/// Loads a CSV and runs one method on it.
pub fn fit_single(path: &Path, schema: &Schema, config: &FitConfig) -> Result<SingleFit> {
    let data = load_dataset(path, schema)?;
    fit_dataset_with(&data, config)
}

/// Writes `ci.csv`, and for posterior fits `draws.csv` plus, when requested,
/// `histogram.csv` and `histogram.svg`.
pub fn write_single(dir: &Path, fit: &SingleFit, histogram: bool) -> Result<()> {
    let io = |source| Error::Io {
        path: dir.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    let iv = fit.interval();
    std::fs::write(
        dir.join("ci.csv"),
        format!(
            "ci_low,ci_high\n{},{}\n",
            format_float(iv.ci_low),
            format_float(iv.ci_high)
        ),
    )
    .map_err(io)?;
    if let SingleFit::Posterior { posterior, .. } = fit {
        let mut s = String::from("psi\n");
        for d in &posterior.draws {
            s.push_str(&format_float(*d));
            s.push('\n');
        }
        std::fs::write(dir.join("draws.csv"), s).map_err(io)?;
        if histogram {
            let hist = Histogram::new(&posterior.draws, 30);
            std::fs::write(dir.join("histogram.csv"), hist.to_csv()).map_err(io)?;
            std::fs::write(dir.join("histogram.svg"), hist.to_svg(posterior)).map_err(io)?;
        }
    }
    Ok(())
}

/// Equal-width histogram of posterior draws.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let width = span / bins as f64;
        let mut counts = vec![0; bins];
        for v in values {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Self { lo, width, counts }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_low,bin_high,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            let a = self.lo + k as f64 * self.width;
            let _ = writeln!(s, "{},{},{}", format_float(a), format_float(a + self.width), c);
        }
        s
    }

    /// Bar chart with the posterior mean (solid) and interval bounds (dashed).
    pub fn to_svg(&self, posterior: &EffectPosterior) -> String {
        let (w, h, pad) = (640.0, 360.0, 40.0);
        let bins = self.counts.len() as f64;
        let max = *self.counts.iter().max().unwrap_or(&1) as f64;
        let span = self.width * bins;
        let x_of = |v: f64| pad + (v - self.lo) / span * (w - 2.0 * pad);
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
        );
        let _ = writeln!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
        let bar_w = (w - 2.0 * pad) / bins;
        for (k, &c) in self.counts.iter().enumerate() {
            let bh = c as f64 / max * (h - 2.0 * pad);
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#8fb3d9\" stroke=\"#4a6f99\"/>",
                pad + k as f64 * bar_w,
                h - pad - bh,
                bar_w,
                bh
            );
        }
        let marker = |s: &mut String, v: f64, dash: &str, color: &str| {
            let x = x_of(v);
            let _ = writeln!(
                s,
                "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-width=\"2\"{dash}/>",
                pad / 2.0,
                h - pad
            );
        };
        marker(&mut s, posterior.post_mean, "", "#c0392b");
        marker(&mut s, posterior.ci_low, " stroke-dasharray=\"6 4\"", "#333333");
        marker(&mut s, posterior.ci_high, " stroke-dasharray=\"6 4\"", "#333333");
        let _ = writeln!(
            s,
            "<text x=\"{pad}\" y=\"{:.0}\" font-family=\"sans-serif\" font-size=\"12\">{:.4} .. {:.4}  mean {:.4}  CI [{:.4}, {:.4}]</text>",
            h - pad / 3.0,
            self.lo,
            self.lo + span,
            posterior.post_mean,
            posterior.ci_low,
            posterior.ci_high
        );
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(estimate: f64, lo: f64, hi: f64) -> Interval {
        Interval {
            estimate,
            ci_low: lo,
            ci_high: hi,
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("bart".parse::<Method>().is_err());
        assert_eq!(parse_methods("gp,gp-ps,gp").unwrap(), vec![Method::Gp, Method::GpPs]);
    }

    #[test]
    fn type2_is_zero_when_no_interval_contains_zero() {
        let res: Vec<(f64, Interval)> = (0..10).map(|k| (1.0, iv(1.0, 0.1 + k as f64 * 0.01, 2.0))).collect();
        let s = MethodSummary::from_results(Method::Gp, &res, 0);
        assert_eq!(s.type2_error, 0.0);
        assert_eq!(s.coverage, 1.0);
    }

    #[test]
    fn degenerate_exact_intervals_cover() {
        let res: Vec<(f64, Interval)> = (0..5).map(|_| (1.0, iv(1.0, 1.0, 1.0))).collect();
        let s = MethodSummary::from_results(Method::GpNoRand, &res, 0);
        assert_eq!((s.coverage, s.abs_error_mean, s.ci_size_mean), (1.0, 0.0, 0.0));
    }

    #[test]
    fn summary_statistics() {
        let res = vec![(1.0, iv(1.5, 0.0, 2.0)), (1.0, iv(0.0, -1.0, 0.5))];
        let s = MethodSummary::from_results(Method::Ols, &res, 1);
        assert!((s.abs_error_mean - 0.75).abs() < 1e-15);
        assert!((s.abs_error_sd - (0.125_f64).sqrt()).abs() < 1e-15);
        assert_eq!((s.coverage, s.type2_error), (0.5, 1.0));
        assert_eq!((s.succeeded, s.failed), (2, 1));
    }

    #[test]
    fn failure_limit() {
        let mk = |failed| BenchmarkReport {
            config_echo: String::new(),
            summaries: vec![MethodSummary::from_results(
                Method::Gp,
                &[(1.0, iv(1.0, 0.0, 2.0)); 8],
                failed,
            )],
            records: vec![],
            wall_clock_secs: 0.0,
        };
        assert!(mk(2).check_failures().is_ok());
        assert!(matches!(mk(3).check_failures(), Err(Error::TooManyFailures { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(BenchConfig::default().validate().is_ok());
        let bad = BenchConfig {
            replications: 0,
            ..BenchConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = BenchConfig {
            methods: vec![],
            ..BenchConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = BenchConfig {
            generator: BenchGenerator::Ihdp {
                covariates: "x.csv".into(),
            },
            target: Target::Ate,
            ..BenchConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn seeds_are_distinct() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
    }

    #[test]
    fn table_has_one_row_per_method() {
        let report = BenchmarkReport {
            config_echo: String::new(),
            summaries: vec![
                MethodSummary::from_results(Method::Gp, &[(1.0, iv(1.2, 0.5, 1.9))], 0),
                MethodSummary::from_results(Method::GpPs, &[(1.0, iv(1.0, 0.4, 1.6))], 0),
            ],
            records: vec![],
            wall_clock_secs: 0.0,
        };
        let t = report.to_table();
        assert_eq!(t.lines().count(), 4);
        assert!(t.contains("GP PS") && t.contains("0.200 ± 0.000"));
        assert!(report.to_csv().starts_with("method,abs_error_mean"));
    }
}
