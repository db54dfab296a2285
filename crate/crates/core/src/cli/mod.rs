//! The `mfbridge` command line: `train`, `eval` and `inspect`.
//!
//! A training run writes into its output directory:
//!
//! * `config.txt`, the effective configuration (re-usable with `--config`),
//! * `metrics.ndjson`, one JSON record per optimizer step and per stage
//!   evaluation, free of wall-clock values so that reruns compare equal,
//! * `report.json`, the [`RunReport`](crate::trainer::RunReport),
//! * `checkpoints/stage_<k>.ckpt`, and
//! * CSV and SVG exports of the final evaluation draw.

mod config;
mod svg;

pub use config::RunConfig;
pub use svg::{export_plots, setup_svg, terminal_svg, trajectories_svg};

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::net::NetBundle;
use crate::scenario::{ProblemSpec, ScenarioName};
use crate::sde::TrajectoryBatch;
use crate::trainer::{evaluate, train, Evaluation, StageRecord, TrainIo};

#[derive(Parser, Debug)]
#[command(name = "mfbridge", version, about = "Mean-field Schrödinger bridge solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train from scratch and write metrics, checkpoints and plots.
    Train {
        #[arg(long)]
        scenario: ScenarioName,
        #[arg(long)]
        stages: Option<usize>,
        /// Optimizer steps per half-stage.
        #[arg(long)]
        steps: Option<usize>,
        /// Fresh paths per half-stage.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// `key = value` file applied before the flags above.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Simulate a checkpoint in both directions and score it.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scenario: ScenarioName,
        #[arg(long, default_value_t = 512)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Problem overrides (`spec.*` keys).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print network shapes and checkpoint metadata.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_batch(batch: &TrajectoryBatch, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    batch.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Trajectory CSVs and plots for both directions under `dir`.
fn export_eval(spec: &ProblemSpec, fwd: &TrajectoryBatch, bwd: &TrajectoryBatch, dir: &Path) -> Result<()> {
    mkdir(dir)?;
    write_batch(fwd, &dir.join("trajectories_forward.csv"))?;
    write_batch(bwd, &dir.join("trajectories_backward.csv"))?;
    export_plots(fwd, spec, dir)?;
    export_plots(bwd, spec, &dir.join("backward"))
}

fn summary_line(r: &StageRecord) -> String {
    let e = &r.eval;
    let mut s = format!(
        "stage {:>3}  ed {:.4}  ed_bwd {:.4}  collisions {:.4}",
        r.stage, e.energy_distance, e.backward_energy_distance, e.collision_rate
    );
    if let Some(c) = &e.mode_coverage {
        let pct: Vec<String> = c.iter().map(|v| format!("{:.0}", 100.0 * v)).collect();
        s.push_str(&format!("  coverage% [{}]", pct.join(" ")));
    }
    s.push_str(&format!("  {:.1}s", r.wall_clock_s));
    s
}

#[allow(clippy::too_many_arguments)]
fn run_train(
    scenario: ScenarioName,
    stages: Option<usize>,
    steps: Option<usize>,
    k: Option<usize>,
    seed: Option<u64>,
    out: &Path,
    config: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<()> {
    let mut run = RunConfig::new(scenario)?;
    if let Some(path) = config {
        run.apply_text(&read(path)?)?;
    }
    if let Some(v) = stages {
        run.train.stages = v;
    }
    if let Some(v) = steps {
        run.train.steps_per_stage = v;
    }
    if let Some(v) = k {
        run.train.k = v;
    }
    if let Some(v) = seed {
        run.train.seed = v;
    }
    run.validate()?;
    let echo = run.echo();
    let _ = stdout.write_all(echo.as_bytes());

    mkdir(out)?;
    let ckpt_dir = out.join("checkpoints");
    mkdir(&ckpt_dir)?;
    write(&out.join("config.txt"), &echo)?;
    let log_path = out.join("metrics.ndjson");
    let mut log = create(&log_path)?;
    let mut progress = |r: &StageRecord| {
        let _ = writeln!(stdout, "{}", summary_line(r));
    };
    let outcome = train(
        &run.spec,
        &run.train,
        TrainIo {
            checkpoint_dir: Some(&ckpt_dir),
            log: Some(&mut log),
            on_stage: Some(&mut progress),
        },
    )?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let report = serde_json::to_string_pretty(&outcome.report).expect("report serializes");
    write(&out.join("report.json"), &report)?;

    let eval_seed = run.train.seed;
    let (_, fwd, bwd) = evaluate(&run.spec, &outcome.nets, run.train.eval_n, eval_seed)?;
    export_eval(&run.spec, &fwd, &bwd, out)
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    checkpoint: String,
    scenario: ScenarioName,
    n: usize,
    seed: u64,
    eval: &'a Evaluation,
}

#[allow(clippy::too_many_arguments)]
fn run_eval(
    ckpt: &Path,
    scenario: ScenarioName,
    n: usize,
    seed: u64,
    out: &Path,
    config: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<()> {
    let mut run = RunConfig::new(scenario)?;
    if let Some(path) = config {
        run.apply_text(&read(path)?)?;
    }
    run.spec.validate()?;
    if n < 2 {
        return Err(Error::Config("--n must be at least 2".into()));
    }
    let nets = NetBundle::load(ckpt)?;
    if let Some(trained_on) = nets.meta.get("scenario") {
        if trained_on != &scenario.to_string() {
            return Err(Error::Config(format!(
                "checkpoint was trained on `{trained_on}`, not `{scenario}`"
            )));
        }
    }
    let (eval, fwd, bwd) = evaluate(&run.spec, &nets, n, seed)?;
    let body = serde_json::to_string_pretty(&EvalOutput {
        checkpoint: ckpt.display().to_string(),
        scenario,
        n,
        seed,
        eval: &eval,
    })
    .expect("evaluation serializes");
    mkdir(out)?;
    write(&out.join("metrics.json"), &body)?;
    export_eval(&run.spec, &fwd, &bwd, out)?;
    let _ = writeln!(stdout, "{body}");
    Ok(())
}

fn run_inspect(ckpt: &Path, stdout: &mut dyn Write) -> Result<()> {
    let nets = NetBundle::load(ckpt)?;
    let _ = stdout.write_all(nets.describe().as_bytes());
    Ok(())
}

/// Parses `args` (program name first) and runs the command, writing
/// progress to `stdout`. Returns the process exit code; errors are printed
/// to `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match cli.command {
        Command::Train {
            scenario,
            stages,
            steps,
            k,
            seed,
            out,
            config,
        } => run_train(scenario, stages, steps, k, seed, &out, config.as_deref(), stdout),
        Command::Eval {
            ckpt,
            scenario,
            n,
            seed,
            out,
            config,
        } => run_eval(&ckpt, scenario, n, seed, &out, config.as_deref(), stdout),
        Command::Inspect { ckpt } => run_inspect(&ckpt, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}
