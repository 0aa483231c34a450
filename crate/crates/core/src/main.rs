use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use frechet_dose::app::run;
use frechet_dose::config::{InputFormat, InputSpec, Mode, OutcomeSpace, RunConfig};
use frechet_dose::estimators::{Bandwidth, EstimatorKind};
use frechet_dose::ingest::{ingest_embedded, ingest_life_tables, write_embedded, LifeTableOptions};
use frechet_dose::simlab::OutcomeModelKind;
use frechet_dose::{Error, Result};

/// Causal dose-response curves for distribution-valued outcomes.
///
/// Every option can be set in a TOML file passed with --config; flags
/// override the file. `--dump-config` prints the resolved configuration
/// with all defaults filled in.
#[derive(Parser, Debug)]
#[command(name = "frechet-dose", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo study on a synthetic design.
    Simulate(RunArgs),
    /// Fit a dose-response curve and effect maps.
    Estimate(RunArgs),
    /// Estimate plus pointwise bands and HulC intervals.
    Infer(RunArgs),
    /// Read an input file, validate it and print a summary.
    IngestCheck(IngestArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Model {
    A,
    B,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Or,
    Ipw,
    Dr,
    Cf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    LifeTable,
    Embedded,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Space {
    Quantile,
    Vector,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed [default: 1].
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: out].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    dump_config: bool,

    /// dgp.scenario (1, 2 or 3) [default: 1].
    #[arg(long)]
    scenario: Option<u8>,
    /// dgp.model [default: a].
    #[arg(long, value_enum)]
    model: Option<Model>,
    /// dgp.n, sample size [default: 1000].
    #[arg(long)]
    n: Option<usize>,
    /// dgp.sigma [default: 1].
    #[arg(long)]
    sigma: Option<f64>,
    /// dgp.grid_len, probability grid size M [default: 51].
    #[arg(long)]
    grid_len: Option<usize>,
    /// simulate.replications [default: 100].
    #[arg(long)]
    replications: Option<usize>,

    /// input.path; without it estimate/infer draw data from the dgp.
    #[arg(long)]
    input: Option<PathBuf>,
    /// input.format [default: life-table].
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// input.space for embedded input [default: quantile].
    #[arg(long, value_enum)]
    space: Option<Space>,
    /// input.life_table.bandwidth in years [default: 2].
    #[arg(long)]
    smoothing: Option<f64>,

    /// estimator.kind [default: cf].
    #[arg(long, value_enum)]
    estimator: Option<Kind>,
    /// estimator.kernel.h; a number or "auto" [default: auto].
    #[arg(long)]
    bandwidth: Option<String>,
    /// estimator.folds [default: 5].
    #[arg(long)]
    folds: Option<usize>,
    /// inference.alpha [default: 0.05].
    #[arg(long)]
    alpha: Option<f64>,
    /// grid.contrasts, comma separated percentiles [default: 0.05,0.5,0.95].
    #[arg(long, value_delimiter = ',')]
    contrasts: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    input: PathBuf,
    #[arg(long, value_enum, default_value = "life-table")]
    format: Format,
    #[arg(long, value_enum, default_value = "quantile")]
    space: Space,
    /// Smoothing bandwidth in years for life tables.
    #[arg(long, default_value_t = 2.0)]
    smoothing: f64,
    /// Probability grid size for life tables.
    #[arg(long, default_value_t = 51)]
    grid_len: usize,
    /// Also write the embedded observations as CSV.
    #[arg(long)]
    write_embedded: Option<PathBuf>,
}

fn resolve(mode: Mode, a: &RunArgs) -> Result<RunConfig> {
    let mut c = match &a.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::default(),
    };
    c.mode = mode;
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = &a.out {
        c.out = v.clone();
    }
    if let Some(v) = a.scenario {
        c.dgp.scenario = v;
    }
    if let Some(v) = a.model {
        c.dgp.model = match v {
            Model::A => OutcomeModelKind::A,
            Model::B => OutcomeModelKind::B,
        };
    }
    if let Some(v) = a.n {
        c.dgp.n = v;
    }
    if let Some(v) = a.sigma {
        c.dgp.sigma = v;
    }
    if let Some(v) = a.grid_len {
        c.dgp.grid_len = v;
    }
    if let Some(v) = a.replications {
        c.simulate.replications = v;
    }
    if a.input.is_some()
        || a.format.is_some()
        || a.space.is_some()
        || a.smoothing.is_some()
        || (a.grid_len.is_some() && c.input.is_some())
    {
        let i = c.input.get_or_insert_with(InputSpec::default);
        if let Some(v) = &a.input {
            i.path = v.clone();
        }
        if let Some(v) = a.format {
            i.format = input_format(v);
        }
        if let Some(v) = a.space {
            i.space = outcome_space(v);
        }
        if let Some(v) = a.smoothing {
            i.life_table.bandwidth = v;
        }
        if let Some(v) = a.grid_len {
            i.life_table.grid_len = v;
        }
    }
    if let Some(v) = a.estimator {
        c.estimator.kind = match v {
            Kind::Or => EstimatorKind::Or,
            Kind::Ipw => EstimatorKind::Ipw,
            Kind::Dr => EstimatorKind::Dr,
            Kind::Cf => EstimatorKind::Cf,
        };
    }
    if let Some(v) = &a.bandwidth {
        c.estimator.kernel.h = match v.as_str() {
            "auto" => Bandwidth::Auto,
            s => Bandwidth::Fixed(s.parse().map_err(|_| {
                Error::Config(format!("--bandwidth: expected a number or auto, got {s}"))
            })?),
        };
    }
    if let Some(v) = a.folds {
        c.estimator.folds = v;
    }
    if let Some(v) = a.alpha {
        c.inference.alpha = v;
    }
    if let Some(v) = &a.contrasts {
        c.grid.contrasts = v.clone();
    }
    c.validate()?;
    Ok(c)
}

fn input_format(f: Format) -> InputFormat {
    match f {
        Format::LifeTable => InputFormat::LifeTable,
        Format::Embedded => InputFormat::Embedded,
    }
}

fn outcome_space(s: Space) -> OutcomeSpace {
    match s {
        Space::Quantile => OutcomeSpace::Quantile,
        Space::Vector => OutcomeSpace::Vector,
    }
}

fn set_threads(threads: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn ingest_check(a: &IngestArgs) -> Result<()> {
    let data = match a.format {
        Format::LifeTable => ingest_life_tables(
            &a.input,
            &LifeTableOptions {
                bandwidth: a.smoothing,
                grid_len: a.grid_len,
                ..Default::default()
            },
        )?,
        Format::Embedded => ingest_embedded(&a.input, outcome_space(a.space).grid_kind())?,
    };
    if let Some(p) = &a.write_embedded {
        write_embedded(&data, std::fs::File::create(p)?)?;
    }
    let t = data.treatment();
    let summary = serde_json::json!({
        "units": data.n(),
        "covariates": data.p(),
        "grid_len": data.grid_len(),
        "groups": data.group_labels(),
        "treatment_min": t.iter().copied().fold(f64::INFINITY, f64::min),
        "treatment_max": t.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn main_inner(cli: Cli) -> Result<()> {
    let (mode, args) = match &cli.command {
        Command::Simulate(a) => (Mode::Simulate, a),
        Command::Estimate(a) => (Mode::Estimate, a),
        Command::Infer(a) => (Mode::Infer, a),
        Command::IngestCheck(a) => return ingest_check(a),
    };
    let config = resolve(mode, args)?;
    if args.dump_config {
        print!("{}", config.to_toml()?);
        return Ok(());
    }
    set_threads(args.threads)?;
    let outcome = run(&config)?;
    println!(
        "{}",
        serde_json::json!({
            "status": "ok",
            "mode": mode.name(),
            "out": outcome.out,
            "config_hash": outcome.manifest.config_hash,
            "files": outcome.files,
        })
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({
                "status": "error",
                "kind": e.kind(),
                "exit_code": e.exit_code(),
                "message": e.to_string(),
            });
            eprintln!("{record}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
