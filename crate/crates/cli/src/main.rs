use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use driftdecomp::error::{Error, Result};
use driftdecomp::eval::{mean_shift, rrmse, rrmse_in, Region};
use driftdecomp::experiment::{
    self, ExperimentConfig, RunDir, DRIFT_NET_FILE, POTENTIAL_NET_FILE, REPORT_FILE,
};
use driftdecomp::fieldio::{load_field, save_field, FieldData};
use driftdecomp::grid::{divergence_fd, VectorField};
use driftdecomp::oracle::{benchmark, decompose_with_oracle};

#[derive(Parser)]
#[command(name = "driftdecomp", version, about = "Learn drift decompositions b = -grad(psi) + R from density snapshots")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Benchmark whose defaults are used when no config file is given.
    #[arg(long, global = true, default_value = "double-well")]
    benchmark: String,
    /// Base seed; corpus, phase 1 and phase 2 use seed, seed+1, seed+2.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Dotted `key=value` override, may be repeated (e.g. phase1.epochs=500).
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved configuration.
    Config,
    /// Simulate the snapshot corpus.
    Generate,
    /// Fit the drift network to the stored corpus.
    TrainPhase1,
    /// Fit the potential network against the stored drift network.
    TrainPhase2,
    /// Compare stored networks with the benchmark truth.
    Evaluate,
    /// Generate, train both phases and evaluate.
    Run,
    /// Split a drift with the finite-volume reference solver.
    OracleDecompose {
        /// Vector field file to decompose instead of the benchmark drift.
        #[arg(long)]
        field: Option<PathBuf>,
    },
}

fn resolve_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::for_benchmark(&common.benchmark)?,
    };
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = common.seed {
        cfg.reseed(seed);
    }
    if let Some(dir) = &common.out_dir {
        cfg.output_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_report(report: &experiment::EvalReport) {
    for (label, m) in [("full", report.full), ("interior", report.interior)] {
        if let Some(m) = m {
            println!("{label:>8}: rRMSE_b {:.3e}  rRMSE_psi {:.3e}  rRMSE_R {:.3e}", m.rrmse_b, m.rrmse_psi, m.rrmse_r);
        }
    }
}

fn oracle_decompose(cfg: &ExperimentConfig, field: Option<&PathBuf>, dir: &RunDir) -> Result<()> {
    let b = match field {
        Some(path) => match load_field(path)? {
            FieldData::Vector(v) => v,
            FieldData::Scalar(_) => return Err(Error::Config(format!("{} holds a scalar field", path.display()))),
        },
        None => benchmark(&cfg.benchmark)?.sample_drift(&cfg.grid),
    };
    let grid = *b.grid();
    let (psi, r) = decompose_with_oracle(&b, &grid)?;
    let div = divergence_fd(&r)?;
    let sup = div.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("max |div R| = {sup:.3e} (max |b| = {:.3e})", b.max_norm());
    save_field(dir.path("oracle_potential.field"), &FieldData::Scalar(psi.clone()))?;
    save_field(dir.path("oracle_rotation.field"), &FieldData::Vector(r.clone()))?;
    experiment::write_quiver_csv(&r, dir.path("oracle_rotation.csv"))?;
    if field.is_none() {
        let bm = benchmark(&cfg.benchmark)?;
        let truth = bm.sample_psi(&grid);
        let shifted = mean_shift(&psi, &truth);
        experiment::write_scalar_csv(&["psi_oracle", "psi_true"], &[&shifted, &truth], dir.path("oracle_potential.csv"))?;
        let interior = Region::Interior { half: cfg.interior_half_width };
        let r_true: VectorField = bm.sample_rotation(&grid);
        println!(
            "oracle vs truth: rRMSE_psi {:.3e} (interior {:.3e}), rRMSE_R {:.3e} (interior {:.3e})",
            rrmse(&shifted, &truth)?,
            rrmse_in(&shifted, &truth, interior)?,
            rrmse(&r, &r_true)?,
            rrmse_in(&r, &r_true, interior)?,
        );
    } else {
        experiment::write_scalar_csv(&["psi_oracle"], &[&psi], dir.path("oracle_potential.csv"))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.common)?;
    if let Command::Config = cli.command {
        print!("{}", cfg.to_toml_string()?);
        return Ok(());
    }
    let dir = RunDir::create(&cfg.output_dir)?;
    match cli.command {
        Command::Config => unreachable!(),
        Command::Generate => {
            cfg.save(dir.path("config.toml"))?;
            let corpus = experiment::generate(&cfg)?;
            dir.save_corpus(&corpus)?;
            info!("wrote {} pairs to {}", corpus.len(), cfg.output_dir.display());
        }
        Command::TrainPhase1 => {
            let corpus = dir.load_corpus()?;
            let (_, loss) = experiment::run_phase1(&cfg, &corpus, &dir)?;
            println!("phase 1 final loss {loss:.6e}");
        }
        Command::TrainPhase2 => {
            let net_b = dir.load_net(DRIFT_NET_FILE)?;
            let (_, loss) = experiment::run_phase2(&cfg, &net_b, &dir)?;
            println!("phase 2 final loss {loss:.6e}");
        }
        Command::Evaluate => {
            let net_b = dir.load_net(DRIFT_NET_FILE)?;
            let net_psi = dir.load_net(POTENTIAL_NET_FILE)?;
            let report = experiment::evaluate(&cfg, &net_b, &net_psi, &dir)?;
            print_report(&report);
        }
        Command::Run => {
            let report = experiment::run_experiment(&cfg)?;
            print_report(&report);
            info!("report written to {}", dir.path(REPORT_FILE).display());
        }
        Command::OracleDecompose { field } => oracle_decompose(&cfg, field.as_ref(), &dir)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
