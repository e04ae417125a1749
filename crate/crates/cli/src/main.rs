use clap::{Args, Parser, Subcommand, ValueEnum};
use signtn::harness::{emit_plot_data, run_experiment, Experiment, ExperimentConfig, PlotStyle};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "signtn", version, about = "Sign structure and contraction hardness of random tensor networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Monte Carlo free-energy density difference on cylinders.
    Deltaf(RunArgs),
    /// Boundary-state Rényi-2 entropy over a λD grid.
    Entropy(RunArgs),
    /// Entropy scan towards a structured target tensor.
    Interp(RunArgs),
    /// Spin-model predictions of the boundary entropy.
    Statmech(RunArgs),
    /// Line tension over a (D, μ) grid.
    Phase(RunArgs),
    /// Boundary entropy of random PEPS norm networks.
    Peps(RunArgs),
    /// Positive-sum estimate of PEPS norms.
    Possum(RunArgs),
    /// Positivity-guided gauge optimization.
    Gauge(RunArgs),
    /// Brute force against transfer contraction on small lattices.
    Oracle(RunArgs),
    /// Reshape a raw CSV into (x, y, yerr, series) points.
    Plot {
        #[arg(long, value_enum)]
        style: Style,
        raw: PathBuf,
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Style {
    Entropy,
    Deltaf,
    Peps,
}

/// Flags override values read from `--config`.
#[derive(Args, Default)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Ensemble kind, or spin model for statmech/phase.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long = "D", value_delimiter = ',')]
    bond_dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    lambda: Vec<f64>,
    #[arg(long = "lambdaD", value_delimiter = ',')]
    lambda_d: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    mu: Vec<f64>,
    #[arg(long = "W", value_delimiter = ',')]
    widths: Vec<usize>,
    /// PEPS physical dimensions.
    #[arg(long = "d", value_delimiter = ',')]
    phys_dims: Vec<usize>,
    #[arg(long = "K")]
    samples: Option<usize>,
    #[arg(long)]
    chi: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long = "L")]
    length: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    step: Option<f64>,
}

fn override_vec<T>(dst: &mut Vec<T>, src: Vec<T>) {
    if !src.is_empty() {
        *dst = src;
    }
}

fn override_opt<T>(dst: &mut Option<T>, src: Option<T>) {
    if src.is_some() {
        *dst = src;
    }
}

fn build_config(experiment: Experiment, a: RunArgs) -> signtn::Result<ExperimentConfig> {
    let mut c = match &a.config {
        Some(path) => {
            let c = ExperimentConfig::from_json(&std::fs::read_to_string(path)?)?;
            if c.experiment != experiment {
                return Err(signtn::Error::Config {
                    field: "experiment".into(),
                    reason: format!("file declares {:?}, subcommand runs {:?}", c.experiment, experiment),
                });
            }
            c
        }
        None => ExperimentConfig::new(experiment),
    };
    if let Some(s) = a.seed {
        c.master_seed = s;
    }
    override_opt(&mut c.output_path, a.out);
    override_opt(&mut c.workers, a.workers);
    override_opt(&mut c.kind, a.kind);
    override_opt(&mut c.target, a.target);
    override_vec(&mut c.bond_dims, a.bond_dims);
    override_vec(&mut c.lambda, a.lambda);
    override_vec(&mut c.lambda_d, a.lambda_d);
    override_vec(&mut c.mu, a.mu);
    override_vec(&mut c.widths, a.widths);
    override_vec(&mut c.phys_dims, a.phys_dims);
    override_opt(&mut c.samples, a.samples);
    override_opt(&mut c.chi, a.chi);
    override_opt(&mut c.trials, a.trials);
    override_opt(&mut c.length, a.length);
    override_opt(&mut c.burn_in, a.burn_in);
    override_opt(&mut c.rows, a.rows);
    override_opt(&mut c.cols, a.cols);
    override_opt(&mut c.mode, a.mode);
    override_opt(&mut c.iters, a.iters);
    override_opt(&mut c.step, a.step);
    Ok(c)
}

fn run(cmd: Cmd) -> signtn::Result<()> {
    let (experiment, args) = match cmd {
        Cmd::Deltaf(a) => (Experiment::DeltaF, a),
        Cmd::Entropy(a) => (Experiment::EntropyScan, a),
        Cmd::Interp(a) => (Experiment::Interpolation, a),
        Cmd::Statmech(a) => (Experiment::Statmech, a),
        Cmd::Phase(a) => (Experiment::PhaseScan, a),
        Cmd::Peps(a) => (Experiment::PepsEntropy, a),
        Cmd::Possum(a) => (Experiment::PositiveSum, a),
        Cmd::Gauge(a) => (Experiment::GaugeOpt, a),
        Cmd::Oracle(a) => (Experiment::OracleSuite, a),
        Cmd::Plot { style, raw, out } => {
            let style = match style {
                Style::Entropy => PlotStyle::Entropy,
                Style::Deltaf => PlotStyle::DeltaF,
                Style::Peps => PlotStyle::Peps,
            };
            let points = emit_plot_data(&raw, style, &out)?;
            println!("{} points -> {}", points.len(), out.display());
            return Ok(());
        }
    };
    let out = run_experiment(&build_config(experiment, args)?)?;
    println!("{} rows -> {}", out.rows, out.raw.display());
    println!("aggregate -> {}", out.agg.display());
    if let Some(log) = out.log {
        println!("log -> {}", log.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse().cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
