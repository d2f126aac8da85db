//! The `lexa` command line: `train`, `eval` and `export`.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::checkpoint;
use crate::documents::{load_config, load_goals};
use crate::error::{LexaError, Result};
use crate::eval::{evaluate, thread_limit};
use crate::export::{export, ExportKind};
use crate::run::{train, RunOptions};

#[derive(Debug, Parser)]
#[command(name = "lexa", version, about = "Latent explorer-achiever agent: training, evaluation and export")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an agent, resuming if OUTDIR holds an interrupted run.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        outdir: PathBuf,
    },
    /// Evaluate a checkpoint on a goal file.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        goals: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes_per_goal: usize,
    },
    /// Export curves, heatmaps or coincidental counts from a run.
    Export {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum)]
        what: What,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum What {
    Curves,
    Heatmap,
    Coincidental,
}

impl From<What> for ExportKind {
    fn from(w: What) -> Self {
        match w {
            What::Curves => ExportKind::Curves,
            What::Heatmap => ExportKind::Heatmap,
            What::Coincidental => ExportKind::Coincidental,
        }
    }
}

/// Where `eval` writes its CSV: next to the checkpoint.
pub fn eval_csv_path(ckpt: &Path) -> PathBuf {
    let stem = ckpt.file_stem().map_or("checkpoint".into(), |s| s.to_string_lossy().into_owned());
    ckpt.with_file_name(format!("{stem}_eval.csv"))
}

pub fn execute(command: Command) -> Result<()> {
    let threads = thread_limit()?;
    match command {
        Command::Train { config, seed, outdir } => {
            let mut cfg = load_config(&config)?;
            cfg.seed = seed;
            let out = train(&cfg, &outdir, RunOptions { threads, stop_at: None })?;
            println!("trained to env step {} ({} update cycles)", out.env_steps, out.cycles);
            if let Some(report) = out.last_eval {
                print!("{}", report.table());
            }
        }
        Command::Eval {
            ckpt,
            goals,
            episodes_per_goal,
        } => {
            if episodes_per_goal == 0 {
                return Err(LexaError::Usage("--episodes-per-goal must be positive".into()));
            }
            let file = load_goals(&goals)?;
            let agent = checkpoint::load_agent(&ckpt)?;
            let kind = agent.env().kind();
            if file.env != kind {
                return Err(lexa_core::Error::EnvMismatch {
                    expected: kind.name().into(),
                    found: file.env.name().into(),
                }
                .into());
            }
            let report = evaluate(&agent, &file.specs()?, episodes_per_goal, threads)?;
            print!("{}", report.table());
            let csv = eval_csv_path(&ckpt);
            report.write_csv(&csv)?;
            println!("wrote {}", csv.display());
        }
        Command::Export { run, what } => {
            for path in export(&run, what.into())? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
