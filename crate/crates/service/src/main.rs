use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use mfl_core::eval::{
    render_columns, render_rows, run_matrix, synth_task_with, ExperimentMatrix, MatrixReport, Metric, SynthParams,
};
use mfl_core::model::write_pool;
use mfl_core::orchestrator::{preview_schedule, render_text, Engine, HighBinding, RunConfig, RunDir};
use mfl_service::Registry;

#[derive(Parser)]
#[command(name = "mfl", version, about = "Multi-fidelity interactive annotation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config to completion and print the report.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint file instead of starting fresh.
        #[arg(long, conflicts_with = "config")]
        resume: Option<PathBuf>,
        /// Overrides the config's run directory.
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Print the per-round budget schedule without running anything.
    Plan {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render a finished run directory or experiment matrix directory.
    Report { dir: PathBuf },
    /// Run an experiment matrix described by a JSON file.
    Matrix {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic task as pool.jsonl and test.jsonl.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 3750)]
        samples: usize,
        #[arg(long, default_value_t = 4.0)]
        separation: f64,
        /// Fraction of gold labels flipped to another class.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 4)]
        nuisance_dims: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Directory holding one subdirectory per run.
        #[arg(long)]
        runs_root: Option<PathBuf>,
        /// Static console assets to serve under `/`.
        #[arg(long)]
        serve_console: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), String> {
    match cmd {
        Command::Run { config, seed, resume, run_dir } => run(config, seed, resume, run_dir),
        Command::Plan { config } => {
            let c = RunConfig::load(&config).map_err(|e| e.to_string())?;
            c.validate().map_err(|e| e.to_string())?;
            println!("{:>5} {:>6} {:>6} {:>6} {:>10}", "round", "human", "llm", "k", "cumulative");
            for p in preview_schedule(&c.budget) {
                println!("{:>5} {:>6} {:>6} {:>6} {:>10}", p.round, p.human, p.llm, p.k, p.cumulative);
            }
            Ok(())
        }
        Command::Report { dir } => report(&dir),
        Command::Matrix { spec, out } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| format!("{}: {e}", spec.display()))?;
            let m: ExperimentMatrix = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", spec.display()))?;
            let r = run_matrix(&m, out.as_deref()).map_err(|e| e.to_string())?;
            print_matrix(&r);
            Ok(())
        }
        Command::Synth { out, classes, samples, separation, noise, nuisance_dims, seed } => {
            let params = SynthParams { n_classes: classes, n_samples: samples, separation, noise, nuisance_dims, seed };
            let t = synth_task_with(&params).map_err(|e| e.to_string())?;
            std::fs::create_dir_all(&out).map_err(|e| format!("{}: {e}", out.display()))?;
            for (name, samples) in [("pool.jsonl", &t.pool), ("test.jsonl", &t.test)] {
                let path = out.join(name);
                write_pool(&path, samples).map_err(|e| format!("{}: {e}", path.display()))?;
            }
            println!("{} pool and {} test samples in {}", t.pool.len(), t.test.len(), out.display());
            Ok(())
        }
        Command::Serve { listen, runs_root, serve_console } => {
            let registry = Arc::new(Registry::new(runs_root));
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            let reg = registry.clone();
            rt.block_on(mfl_service::serve(listen, reg, serve_console, async {
                let _ = tokio::signal::ctrl_c().await;
            }))
            .map_err(|e| format!("{listen}: {e}"))?;
            registry.stop_all();
            Ok(())
        }
    }
}

fn run(config: Option<PathBuf>, seed: Option<u64>, resume: Option<PathBuf>, run_dir: Option<PathBuf>) -> Result<(), String> {
    let mut engine = match (resume, config) {
        (Some(ckpt), _) => Engine::resume(&ckpt, None).map_err(|e| e.to_string())?,
        (None, Some(path)) => {
            let mut c = RunConfig::load(&path).map_err(|e| e.to_string())?;
            if let Some(s) = seed {
                c.seed = s;
            }
            if run_dir.is_some() {
                c.run_dir = run_dir;
            }
            if c.annotator_high == HighBinding::Queue {
                return Err("annotator.high = queue needs someone answering the queue; start it with `mfl serve`".into());
            }
            Engine::from_config(c, None).map_err(|e| e.to_string())?
        }
        (None, None) => return Err("either --config or --resume is required".into()),
    };
    let report = engine.run().map_err(|e| e.to_string())?;
    print!("{}", render_text(&report));
    Ok(())
}

fn print_matrix(r: &MatrixReport) {
    print!("{}", render_rows(r));
    println!();
    for m in Metric::ALL {
        print!("{}", render_columns(r, m.name(), m));
    }
}

fn report(dir: &Path) -> Result<(), String> {
    if dir.join("matrix.json").exists() {
        print_matrix(&MatrixReport::load(dir).map_err(|e| e.to_string())?);
        return Ok(());
    }
    let r = RunDir::read_report(dir).map_err(|e| e.to_string())?;
    print!("{}", render_text(&r));
    Ok(())
}
