use std::error::Error as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use meshstab::frontend::FloDirectory;
use meshstab::pipeline::{
    generate_synthetic, measure, parse_sweep_values, read_frames, run_pipeline, run_pipeline_with, run_sweep,
    sweep_csv, trajectory_csv, write_frames, PipelineConfig, SweepKind, SyntheticSpec,
};
use meshstab::{Error, Result};

#[derive(Parser)]
#[command(name = "stab", version, about = "Grid-trajectory video stabilization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stabilize a directory of numbered frames.
    Run {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory of precomputed `%06d.flo` files used instead of the
        /// built-in flow estimator.
        #[arg(long)]
        flow: Option<PathBuf>,
    },
    /// Render a synthetic shaky sequence with ground-truth trajectories.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score a stabilized sequence against its input; prints the report.
    Metrics {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run one parameter sweep over every sequence in a corpus.
    Sweep {
        /// iterations, mr_weights, ts_weights or noise
        #[arg(long)]
        kind: SweepKind,
        /// Comma-separated settings, e.g. `5,10,15`, `10:40`, `none,g5,sp,blank`.
        #[arg(long)]
        values: String,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    path.map_or_else(|| Ok(PipelineConfig::default()), PipelineConfig::load)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            input,
            output,
            config,
            seed,
            flow,
        } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let frames = read_frames(&input)?;
            let out = match flow {
                Some(dir) => run_pipeline_with(&frames, &cfg, &FloDirectory { dir })?,
                None => run_pipeline(&frames, &cfg)?,
            };
            write_frames(&output, &out.frames)?;
            write_text(&output.join("trajectory.csv"), &trajectory_csv(&out.original, &out.smoothed)?)?;
            write_text(&output.join("report.json"), &out.report.to_json())?;
        }
        Command::Synth { spec, output } => {
            let spec = SyntheticSpec::load(&spec)?;
            let seq = generate_synthetic(&spec)?;
            write_frames(&output, &seq.frames)?;
            write_text(&output.join("ground_truth.csv"), &trajectory_csv(&seq.unstable, &seq.smooth)?)?;
        }
        Command::Metrics { before, after, config } => {
            let cfg = load_config(config.as_deref())?;
            let report = measure(&read_frames(&before)?, &read_frames(&after)?, &cfg)?;
            println!("{}", report.to_json());
        }
        Command::Sweep {
            kind,
            values,
            corpus,
            out,
            config,
        } => {
            let cfg = load_config(config.as_deref())?;
            let values = parse_sweep_values(kind, &values)?;
            let rows = run_sweep(&corpus, kind, &values, &cfg)?;
            write_text(&out, &sweep_csv(&rows))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprint!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                eprint!(": {s}");
                source = s.source();
            }
            eprintln!();
            ExitCode::FAILURE
        }
    }
}
