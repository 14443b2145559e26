use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use chaosym::pipeline::{run_pipeline, InputSpec, RunOptions, Stage, StageRange, OUT_DIR_ENV};
use chaosym::signal_io::{parse_config_with_seed, PipelineConfig};
use chaosym::{Error, ErrorClass};

#[derive(Parser)]
#[command(
    name = "chaosym",
    version,
    about = "Attractor symmetry mining and reduced-model identification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Produce the scalar series (builtin Rössler generator or an input CSV)
    Generate(Common),
    /// Delay-embed the series into a trajectory
    Embed(Common),
    /// Place markers and enumerate candidate fragments
    Fragments(Common),
    /// Resample and normalize fragments
    Normalize(Common),
    /// Spectral signatures and the pairwise distance matrix
    Distances(Common),
    /// Genetic search for the most self-similar fragment set
    Select(Common),
    /// Least-squares model fit on the trajectory
    Identify(Common),
    /// Iterate the fitted model from the first trajectory point
    Simulate(Common),
    /// Compare simulated and original trajectories
    Compare(Common),
    /// Full pipeline, or the range given by --stages
    Run {
        #[command(flatten)]
        common: Common,
        /// Stage range such as `normalize..select`
        #[arg(long)]
        stages: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    Rossler,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $CHAOSYM_OUT, then ./chaosym-out)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Input series CSV
    #[arg(long, conflicts_with = "generate")]
    input: Option<PathBuf>,
    /// Builtin generator
    #[arg(long, value_enum)]
    generate: Option<Generator>,
}

fn load_config(common: &Common) -> chaosym::Result<PipelineConfig> {
    match &common.config {
        Some(p) => parse_config_with_seed(p, common.seed),
        None => match common.seed {
            Some(seed) => Ok(PipelineConfig::with_seed(seed)),
            None => Err(Error::SchemaViolation {
                path: "seed".into(),
                message: "no config given; pass --seed".into(),
            }),
        },
    }
}

fn execute(common: &Common, stages: StageRange) -> chaosym::Result<()> {
    let cfg = load_config(common)?;
    let out_dir = common
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("chaosym-out"));
    let input = match (&common.input, common.generate) {
        (Some(p), _) => Some(InputSpec::File(p.clone())),
        (None, Some(Generator::Rossler)) => Some(InputSpec::Rossler),
        (None, None) => None,
    };
    let opts = RunOptions {
        out_dir: out_dir.clone(),
        stages,
        input,
        config_path: common.config.clone(),
    };
    let manifest = run_pipeline(&cfg, &opts)?;
    println!(
        "stages {} complete, {} outputs in {}",
        manifest.stages_run,
        manifest.outputs.len(),
        out_dir.display()
    );
    if let Some(f) = manifest.stats.winner_fitness {
        println!("winner fitness {f}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                ErrorClass::Usage.exit_code() as u8
            } else {
                0
            });
        }
    };
    let result = match &cli.command {
        Command::Generate(c) => execute(c, StageRange::single(Stage::Generate)),
        Command::Embed(c) => execute(c, StageRange::single(Stage::Embed)),
        Command::Fragments(c) => execute(c, StageRange::single(Stage::Fragments)),
        Command::Normalize(c) => execute(c, StageRange::single(Stage::Normalize)),
        Command::Distances(c) => execute(c, StageRange::single(Stage::Distances)),
        Command::Select(c) => execute(c, StageRange::single(Stage::Select)),
        Command::Identify(c) => execute(c, StageRange::single(Stage::Identify)),
        Command::Simulate(c) => execute(c, StageRange::single(Stage::Simulate)),
        Command::Compare(c) => execute(c, StageRange::single(Stage::Compare)),
        Command::Run { common, stages } => stages
            .as_deref()
            .map_or(Ok(StageRange::all()), str::parse)
            .and_then(|r| execute(common, r)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
