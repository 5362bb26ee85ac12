use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sipfield::lattice::MultiIndex;
use sipfield_cli::commands::{self, Outcome};
use sipfield_cli::config::{LabConfig, ModelSpec};
use sipfield_cli::{CliError, EXIT_CHECK_FAILED, EXIT_ERROR, EXIT_PASS};

#[derive(Parser, Debug)]
#[command(
    name = "sipfield",
    version,
    about = "Coupling laboratory for associated random fields on Z^d"
)]
struct Cli {
    /// TOML or JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Lattice dimension.
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Model preset: iid-<law> or ma-<law>, law in gaussian, exponential, rademacher.
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    replicates: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<u32>,
    #[arg(long, global = true)]
    beta: Option<u32>,
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Block window, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    kmax: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the parameter hypotheses.
    ValidateParams,
    /// Boundary sequence, blocks, good set, enumeration and core rectangles.
    Geometry,
    /// Covariance function, susceptibility gap and block variance bounds.
    Covariance,
    /// Simulate the field and record partial sums.
    Simulate {
        /// Field extent, comma separated; defaults to the corner past the block window.
        #[arg(long, value_delimiter = ',')]
        extent: Option<Vec<u64>>,
        /// Also write each replicate's cells as a binary grid.
        #[arg(long)]
        dump: bool,
    },
    /// Run the coupling experiment.
    Couple,
    /// Run the statistical checks.
    Verify {
        /// clt, moment, maximal, lil, terms or all; repeatable.
        #[arg(long = "check", value_delimiter = ',')]
        checks: Vec<String>,
        /// Square sides for the rate and moment checks.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<u64>>,
        /// Replicates of the rate and moment checks.
        #[arg(long)]
        check_replicates: Option<usize>,
    },
    /// Merge the JSON artifacts of the output directory.
    Report,
}

fn resolve(cli: &Cli) -> Result<LabConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => LabConfig::load(path)?,
        None => LabConfig::default(),
    };
    if let Some(d) = cli.dim {
        if d != config.d {
            config.d = d;
            config.model = ModelSpec::preset(&preset_name(&config.model), d)?;
        }
    }
    if let Some(name) = &cli.model {
        config.model = ModelSpec::preset(name, config.d)?;
    }
    let g = &mut config.geometry;
    g.alpha = cli.alpha.unwrap_or(g.alpha);
    g.beta = cli.beta.unwrap_or(g.beta);
    g.tau = cli.tau.unwrap_or(g.tau);
    if cli.kmax.is_some() {
        g.kmax.clone_from(&cli.kmax);
    }
    let e = &mut config.experiment;
    e.seed = cli.seed.unwrap_or(e.seed);
    e.replicates = cli.replicates.unwrap_or(e.replicates);
    e.epsilon = cli.epsilon.unwrap_or(e.epsilon);
    if let Some(out) = &cli.out {
        config.output_dir.clone_from(out);
    }
    if let Command::Verify {
        checks,
        sizes,
        check_replicates,
    } = &cli.command
    {
        if !checks.is_empty() {
            config.experiment.checks.clone_from(checks);
        }
        if let Some(s) = sizes {
            config.experiment.sizes.clone_from(s);
        }
        config.experiment.check_replicates =
            check_replicates.unwrap_or(config.experiment.check_replicates);
    }
    config.check()?;
    Ok(config)
}

fn preset_name(model: &ModelSpec) -> String {
    let kind = match model.kind {
        sipfield_cli::config::ModelKind::Iid => "iid",
        sipfield_cli::config::ModelKind::MovingAverage => "ma",
    };
    let law = match model.innovation {
        sipfield::field::Innovation::Gaussian => "gaussian",
        sipfield::field::Innovation::CenteredExponential => "exponential",
        sipfield::field::Innovation::Rademacher => "rademacher",
    };
    format!("{kind}-{law}")
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let config = resolve(cli)?;
    match &cli.command {
        Command::ValidateParams => commands::validate_params(&config),
        Command::Geometry => commands::geometry(&config),
        Command::Covariance => commands::covariance(&config),
        Command::Simulate { extent, dump } => {
            commands::simulate(&config, extent.clone().map(MultiIndex::new), *dump)
        }
        Command::Couple => commands::couple(&config),
        Command::Verify { .. } => commands::verify(&config, &config.experiment.checks),
        Command::Report => commands::report(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            ExitCode::from(if outcome.passed {
                EXIT_PASS
            } else {
                EXIT_CHECK_FAILED
            } as u8)
        }
        Err(e) => {
            eprintln!("sipfield: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
