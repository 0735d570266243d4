use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use autoanno::metrics::{timing_report, EvalConfig, Interpolation};
use autoanno::pipeline::{annotate_to_disk, dump_paths, load_document, run_evaluate, DumpOptions, PipelineConfig, PipelineError};
use autoanno::review::{replay, EditLog};
use autoanno::schema::serialize;
use autoanno::synth::{run_synth, SynthConfig, SynthError};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "autoanno", version, about = "Automatic annotation of driving-scene video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Annotate a sequence described by a pipeline config file.
    Annotate {
        #[arg(long)]
        config: PathBuf,
        /// Also write per-frame lane models as JSON lines next to the output.
        #[arg(long)]
        dump_lanes: bool,
        /// Also write per-frame tracker state as JSON lines next to the output.
        #[arg(long)]
        dump_tracks: bool,
    },
    /// Score a predicted annotation document against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        json_out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, value_enum, default_value_t = Interp::AllPoint)]
        interpolation: Interp,
    },
    /// Write a synthetic scene: frames, lane masks, detections, oracle and ground truth.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a correction diff to a document and write the result.
    Replay {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        diff: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fail unless the result is byte-identical to this file.
        #[arg(long)]
        expect: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Interp {
    #[value(name = "all-point")]
    AllPoint,
    #[value(name = "11-point")]
    ElevenPoint,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn annotate(config: &Path, dumps: DumpOptions) -> Result<()> {
    let cfg = PipelineConfig::load(config)?;
    let out = annotate_to_disk(&cfg, dumps)?;
    let records: usize = out.document.frames.iter().map(|f| f.records.len()).sum();
    println!(
        "wrote {records} records over {} frames to {}",
        out.document.frames.len(),
        cfg.output.display()
    );
    let (lanes, tracks) = dump_paths(&cfg.output);
    if dumps.lanes {
        println!("lane dump: {}", lanes.display());
    }
    if dumps.tracks {
        println!("track dump: {}", tracks.display());
    }
    print!("{}", timing_report(&out.timing)?);
    Ok(())
}

fn evaluate(pred: &Path, gt: &Path, json_out: Option<&Path>, cfg: EvalConfig) -> Result<()> {
    let report = run_evaluate(pred, gt, &cfg)?;
    print!("{report}");
    if let Some(path) = json_out {
        write(path, &serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn synth(config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg: SynthConfig = match config {
        Some(path) => serde_json::from_str(&read(path)?)
            .with_context(|| format!("parsing synth config {}", path.display()))?,
        None => SynthConfig::default(),
    };
    let scene = run_synth(&cfg, out)?;
    println!(
        "wrote {} frames and {} ground-truth records to {}",
        scene.frames.len(),
        scene.ground_truth.records().count(),
        out.display()
    );
    Ok(())
}

fn replay_diff(original: &Path, diff: &Path, out: Option<&Path>, expect: Option<&Path>) -> Result<()> {
    let doc = load_document(original)?;
    let log: EditLog = serde_json::from_str(&read(diff)?)
        .with_context(|| format!("parsing diff {}", diff.display()))?;
    let text = serialize(&replay(&doc, &log)?)?;
    match out {
        Some(path) => write(path, &text)?,
        None => println!("{text}"),
    }
    if let Some(path) = expect {
        if read(path)?.trim_end() != text {
            bail!("replayed document differs from {}", path.display());
        }
        eprintln!("replay matches {}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Annotate { config, dump_lanes, dump_tracks } => {
            annotate(&config, DumpOptions { lanes: dump_lanes, tracks: dump_tracks })
        }
        Command::Evaluate { pred, gt, json_out, iou, interpolation } => {
            if !(iou > 0.0 && iou <= 1.0) {
                bail!("--iou must be in (0, 1], got {iou}");
            }
            let interpolation = match interpolation {
                Interp::AllPoint => Interpolation::AllPoint,
                Interp::ElevenPoint => Interpolation::ElevenPoint,
            };
            evaluate(&pred, &gt, json_out.as_deref(), EvalConfig { iou_threshold: iou, interpolation })
        }
        Command::Synth { config, out } => synth(config.as_deref(), &out),
        Command::Replay { original, diff, out, expect } => {
            replay_diff(&original, &diff, out.as_deref(), expect.as_deref())
        }
    }
}

/// 2 when the pipeline tripped one of its own invariants, 1 for anything
/// wrong with the inputs.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return if e.is_internal() { 2 } else { 1 };
        }
        if let Some(SynthError::Assembly(_)) = cause.downcast_ref::<SynthError>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn internal_failures_exit_with_two() {
        let err = anyhow::Error::new(PipelineError::Pool("spawn failed".into())).context("annotating");
        assert_eq!(exit_code(&err), 2);
        let err = anyhow::Error::new(SynthError::Assembly("bad record".into()));
        assert_eq!(exit_code(&err), 2);
    }

    #[test]
    fn input_failures_exit_with_one() {
        let err = anyhow::Error::new(PipelineError::Config { path: "a.json".into(), message: "x".into() });
        assert_eq!(exit_code(&err), 1);
        assert_eq!(exit_code(&anyhow::anyhow!("anything else")), 1);
    }

    #[test]
    fn cli_shape() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
