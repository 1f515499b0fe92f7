use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tsppml_bench::report::TABLE_METHODS;
use tsppml_bench::{
    render_report, run_experiment, BenchError, ExperimentConfig, ExperimentKind, FedMethod, MetricsReport,
};

/// Privacy-preserving time-series classification benchmark.
///
/// Exit status: 0 on success, 1 if any run failed, 2 on configuration errors.
#[derive(Parser)]
#[command(name = "tsppml", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Centralized training (`baseline` or `arch_bench`).
    Train(RunArgs),
    /// DP-SGD training over the configured noise multipliers.
    DpTrain(RunArgs),
    /// FedAVG over the configured client counts.
    FedTrain(RunArgs),
    /// Federated ensembles under all three voting schemes.
    Ensemble(RunArgs),
    /// Ensembles of DP-trained clients.
    Fuse(RunArgs),
    /// Privacy budget sweeps.
    Eps(RunArgs),
    /// Encrypted against plaintext runtime of one batch.
    MpcBench(RunArgs),
    /// Encrypted inference fidelity on the test set.
    MpcInfer(RunArgs),
    /// Any experiment kind.
    Run(RunArgs),
    /// Combines `results.csv` files into a comparison table.
    Report {
        /// Directories or `results.csv` files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated method columns.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
}

fn load(args: &RunArgs, allowed: &[ExperimentKind]) -> Result<ExperimentConfig, BenchError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if !allowed.is_empty() && !allowed.contains(&cfg.experiment) {
        let names: Vec<&str> = allowed.iter().map(|k| k.name()).collect();
        return Err(BenchError::Config(format!(
            "experiment '{}' does not match this command (expected {})",
            cfg.experiment.name(),
            names.join(" or ")
        )));
    }
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn execute(cfg: &ExperimentConfig) -> Result<bool, BenchError> {
    let report = run_experiment(cfg)?;
    report.write_csvs(&cfg.output_dir)?;
    print!("{}", render_report(&report));
    Ok(report.any_failed())
}

fn report(inputs: &[PathBuf], out: Option<&Path>, methods: &[String]) -> Result<bool, BenchError> {
    let mut merged = MetricsReport::default();
    for input in inputs {
        let path = if input.is_dir() { input.join(tsppml_bench::report::RESULTS_CSV) } else { input.clone() };
        merged.extend(MetricsReport::read_results(&path)?);
    }
    let methods: Vec<&str> =
        if methods.is_empty() { TABLE_METHODS.to_vec() } else { methods.iter().map(String::as_str).collect() };
    let table = merged.pivot_csv(&methods);
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
            let path = dir.join("table.csv");
            std::fs::write(&path, &table).map_err(|e| BenchError::io(&path, e))?;
            merged.write_csvs(dir)?;
        }
        None => print!("{table}"),
    }
    print!("{}", render_report(&merged));
    Ok(merged.any_failed())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    use ExperimentKind as K;
    let result = match Cli::parse().command {
        Command::Train(a) => load(&a, &[K::Baseline, K::ArchBench]).and_then(|c| execute(&c)),
        Command::DpTrain(a) => load(&a, &[K::DpSweep]).and_then(|c| execute(&c)),
        Command::FedTrain(a) => load(&a, &[K::FedEnsembleStudy]).and_then(|mut c| {
            c.fed_methods = vec![FedMethod::Fedavg];
            execute(&c)
        }),
        Command::Ensemble(a) => load(&a, &[K::FedEnsembleStudy]).and_then(|mut c| {
            c.fed_methods = vec![FedMethod::Ensemble];
            execute(&c)
        }),
        Command::Fuse(a) => load(&a, &[K::DpFedFusion]).and_then(|c| execute(&c)),
        Command::Eps(a) => load(&a, &[K::EpsStudy]).and_then(|c| execute(&c)),
        Command::MpcBench(a) => load(&a, &[K::MpcRuntime]).and_then(|c| execute(&c)),
        Command::MpcInfer(a) => load(&a, &[K::MpcInference]).and_then(|c| execute(&c)),
        Command::Run(a) => load(&a, &[]).and_then(|c| execute(&c)),
        Command::Report { inputs, out, methods } => report(&inputs, out.as_deref(), &methods),
    };
    match result {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("some runs FAILED; see results.csv");
            ExitCode::from(1)
        }
        Err(e @ BenchError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
