use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ridgelab::experiment::{run, ExperimentConfig, ExperimentKind, Overrides};

/// Run a configured ridge regression experiment and write CSV tables,
/// SVG plots and a summary.
#[derive(Parser, Debug)]
#[command(name = "ridgelab", version)]
struct Args {
    /// samplewise-iso, samplewise-noniso, modelwise-proj, counterexample,
    /// conjecture, relu-samplewise or relu-modelwise
    kind: String,
    /// TOML experiment manifest.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory (default `out/<kind>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the built-in synthetic dataset for random-feature kinds.
    #[arg(long)]
    synthetic: bool,
    /// Print the summary as JSON.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = (|| -> ridgelab::Result<String> {
        let overrides = Overrides {
            kind: Some(args.kind.parse::<ExperimentKind>()?),
            seed: args.seed,
            trials: args.trials,
            out: args.out.clone(),
            synthetic: args.synthetic,
        };
        let config = ExperimentConfig::from_path(&args.config)?.apply(&overrides)?;
        let summary = run(&config)?;
        Ok(if args.json {
            serde_json::to_string_pretty(&summary).expect("summary serializes")
        } else {
            summary.render()
        })
    })();
    match result {
        Ok(text) => {
            // A closed pipe (e.g. `| head`) is not an error for the run itself.
            let _ = writeln!(std::io::stdout().lock(), "{}", text.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
