use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use debias_ate::harness::{parse_methods, write_single};
use debias_ate::simgen::{gen_ihdp_outcomes, gen_synthetic, load_covariates};
use debias_ate::{
    fit_single, run_replications, BenchConfig, BenchGenerator, Error, FitConfig, Generator, Method, Schema, SimOptions,
    Target,
};

/// Debiased Gaussian-process inference for average treatment effects.
#[derive(Parser, Debug)]
#[command(name = "debias-ate", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset and write it as CSV.
    Simulate(SimulateArgs),
    /// Estimate the effect on one CSV dataset.
    Fit(FitArgs),
    /// Run a replication study and write summary tables.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct SchemaArgs {
    /// Name of the treatment column.
    #[arg(long, default_value = "treatment")]
    treatment_col: String,
    /// Name of the outcome column.
    #[arg(long, default_value = "outcome")]
    outcome_col: String,
    /// Comma-separated feature columns (default: all other columns).
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
}

impl SchemaArgs {
    fn schema(&self) -> Schema {
        Schema {
            treatment: self.treatment_col.clone(),
            outcome: self.outcome_col.clone(),
            features: self.features.clone(),
        }
    }
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Posterior draws.
    #[arg(long, default_value_t = 2000)]
    draws: usize,
    /// Credible level is 1 - alpha.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Lower propensity truncation bound.
    #[arg(long, default_value_t = 0.1)]
    trunc_lo: f64,
    /// Upper propensity truncation bound.
    #[arg(long, default_value_t = 0.9)]
    trunc_hi: f64,
    /// Fixed correction scale instead of the calibrated one.
    #[arg(long)]
    nu: Option<f64>,
    /// Use the plug-in empirical feature distribution instead of the Bayesian bootstrap.
    #[arg(long)]
    no_randomize_f: bool,
    /// Optimizer restarts.
    #[arg(long, default_value_t = 3)]
    restarts: usize,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// hom, het or ihdp-b.
    #[arg(long, default_value = "het")]
    generator: String,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Covariate CSV with a `treatment` column (required for ihdp-b).
    #[arg(long)]
    ihdp_covariates: Option<PathBuf>,
    /// Drop the outcome noise.
    #[arg(long)]
    no_noise: bool,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Input CSV.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    schema: SchemaArgs,
    /// gp, gp-ps, gp-norand, gp-ps-norand, ols or ipw.
    #[arg(long, default_value = "gp-ps")]
    method: String,
    #[command(flatten)]
    model: ModelArgs,
    /// Also write histogram.csv and histogram.svg of the draws.
    #[arg(long)]
    histogram: bool,
    /// Output directory for draws.csv and ci.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// hom, het, ihdp-b or file.
    #[arg(long, default_value = "het")]
    generator: String,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    d: usize,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    /// Comma-separated methods.
    #[arg(long, default_value = "gp,gp-norand,gp-ps,gp-ps-norand")]
    methods: String,
    /// ate or cate.
    #[arg(long, default_value = "ate")]
    target: String,
    #[command(flatten)]
    model: ModelArgs,
    /// Covariate CSV for ihdp-b.
    #[arg(long)]
    ihdp_covariates: Option<PathBuf>,
    /// Dataset CSV for the file generator.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    schema: SchemaArgs,
    /// Known effect of the file dataset.
    #[arg(long)]
    truth: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn simulate(args: &SimulateArgs) -> anyhow::Result<()> {
    let generator: Generator = args.generator.parse()?;
    let opts = SimOptions { noise: !args.no_noise };
    let inst = match generator {
        Generator::IhdpB => {
            let path = args
                .ihdp_covariates
                .as_ref()
                .context("the ihdp-b generator needs --ihdp-covariates")?;
            let cov = load_covariates(path)?;
            gen_ihdp_outcomes(&cov.x, &cov.treatment, args.seed, opts)?
        }
        g => gen_synthetic(args.n, args.d, g, args.seed, opts)?,
    };
    inst.data.write_csv(&args.out)?;
    println!(
        "wrote {} rows to {}; true ATE {}, true CATE {}",
        inst.data.n(),
        args.out.display(),
        inst.true_ate,
        inst.true_cate
    );
    Ok(())
}

fn fit(args: &FitArgs) -> anyhow::Result<()> {
    let mut method: Method = args.method.parse()?;
    if args.model.no_randomize_f {
        method = method.without_randomization();
    }
    let config = FitConfig {
        method,
        draws: args.model.draws,
        alpha: args.model.alpha,
        seed: args.model.seed,
        nu_override: args.model.nu,
        trunc_lo: args.model.trunc_lo,
        trunc_hi: args.model.trunc_hi,
        restarts: args.model.restarts,
    };
    let result = fit_single(&args.data, &args.schema.schema(), &config)?;
    write_single(&args.out, &result, args.histogram)?;
    println!("{}", result.summary_line());
    Ok(())
}

fn bench(args: &BenchArgs) -> anyhow::Result<()> {
    let mut methods = parse_methods(&args.methods)?;
    if args.model.no_randomize_f {
        let mut plug_in = Vec::new();
        for m in methods.into_iter().map(Method::without_randomization) {
            if !plug_in.contains(&m) {
                plug_in.push(m);
            }
        }
        methods = plug_in;
    }
    let generator = match args.generator.to_ascii_lowercase().as_str() {
        "file" => BenchGenerator::File {
            path: args.data.clone().context("the file generator needs --data")?,
            schema: args.schema.schema(),
            truth: args.truth.context("the file generator needs --truth")?,
        },
        other => match other.parse::<Generator>()? {
            Generator::IhdpB => BenchGenerator::Ihdp {
                covariates: args
                    .ihdp_covariates
                    .clone()
                    .context("the ihdp-b generator needs --ihdp-covariates")?,
            },
            g => BenchGenerator::Synthetic(g),
        },
    };
    let target: Target = args.target.parse()?;
    let config = BenchConfig {
        generator,
        n: args.n,
        d: args.d,
        replications: args.reps,
        methods,
        target,
        draws: args.model.draws,
        alpha: args.model.alpha,
        seed: args.model.seed,
        nu_override: args.model.nu,
        trunc_lo: args.model.trunc_lo,
        trunc_hi: args.model.trunc_hi,
        restarts: args.model.restarts,
    };
    let report = run_replications(&config)?;
    report.write(&args.out)?;
    print!("{}", report.to_table());
    eprintln!(
        "finished {} replications in {:.1}s",
        config.replications, report.wall_clock_secs
    );
    Ok(())
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("DEBIAS_ATE_THREADS") {
        let threads: usize = v
            .parse()
            .ok()
            .filter(|&t| t > 0)
            .with_context(|| format!("DEBIAS_ATE_THREADS must be a positive integer, got `{v}`"))?;
        if rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .is_err()
        {
            bail!("could not configure the worker pool");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Bench(a) => bench(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::TooManyFailures { .. }) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
