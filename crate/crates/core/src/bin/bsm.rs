use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bsm::config::{Profile, ResolvedConfig};
use bsm::pipeline::{Pipeline, Stage, StageError};

#[derive(Parser)]
#[command(name = "bsm", version, about = "Binaural signal matching for microphone arrays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the room, microphone signals and SH reference.
    Simulate(Common),
    /// Design the direct and reverberant filter banks.
    Design(Common),
    /// Render binaural estimates and references.
    Render(Common),
    /// Compute NMSE reports and the verdict.
    Evaluate(Common),
    /// Run all four stages in order.
    Pipeline(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config merged over the profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, default_value = "bsm-out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "desk", value_parser = parse_profile)]
    profile: Profile,
    /// Validate the config and exit without writing anything.
    #[arg(long)]
    dry_run: bool,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: bsm::Error| e.to_string())
}

fn run(stage: Option<Stage>, args: &Common) -> Result<(), StageError> {
    let tag = |error| StageError {
        stage: stage.unwrap_or(Stage::Simulate),
        error,
    };
    let config = ResolvedConfig::load(args.config.as_deref(), args.profile, args.seed).map_err(tag)?;
    let pipeline = Pipeline::new(config, &args.out).map_err(tag)?;
    if args.dry_run {
        println!("config ok, scene digest {}", hex::encode(pipeline.digest()));
        return Ok(());
    }
    let Some(stage) = stage else {
        let ev = pipeline.run_all()?;
        println!("{}", serde_json::to_string_pretty(&ev.verdict.to_json()).unwrap_or_default());
        return Ok(());
    };
    let tag = |error| StageError { stage, error };
    match stage {
        Stage::Simulate => {
            let stats = pipeline.simulate().map_err(tag)?;
            println!("{}", serde_json::to_string_pretty(&stats.to_json()).unwrap_or_default());
        }
        Stage::Design => {
            let (direct, reverb) = pipeline.design().map_err(tag)?;
            println!(
                "designed {} bins for {} mics; reverberant MagLS from {:?} Hz",
                direct.bins(),
                direct.mics(),
                reverb.magls_start_hz()
            );
        }
        Stage::Render => {
            pipeline.render().map_err(tag)?;
            println!("rendered into {}", args.out.display());
        }
        Stage::Evaluate => {
            let ev = pipeline.evaluate().map_err(tag)?;
            println!("{}", serde_json::to_string_pretty(&ev.verdict.to_json()).unwrap_or_default());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (stage, args) = match &cli.command {
        Command::Simulate(a) => (Some(Stage::Simulate), a),
        Command::Design(a) => (Some(Stage::Design), a),
        Command::Render(a) => (Some(Stage::Render), a),
        Command::Evaluate(a) => (Some(Stage::Evaluate), a),
        Command::Pipeline(a) => (None, a),
    };
    match run(stage, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
