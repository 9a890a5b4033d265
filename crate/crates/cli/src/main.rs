use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use emoseg::model::Fusion;
use emoseg::supervision::SupervisionSource;
use emoseg_cli::{
    cmd_build_sup, cmd_eval, cmd_gen, cmd_gradcheck, cmd_infer, cmd_train, CliError, CliResult, RunConfig,
    TrainOptions, GRADCHECK_TOLERANCE,
};

#[derive(Parser)]
#[command(name = "emoseg", version, about = "Moving object segmentation with event-supervised motion priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with train/test splits.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        count: usize,
    },
    /// Build per-frame supervision maps for every sequence.
    BuildSup {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "event_gt_dilated")]
        source: SupervisionSource,
        #[arg(long)]
        no_dilate: bool,
        /// Root for `sup_<source>/` (defaults to the dataset).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write checkpoint, loss log and manifest.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Train the RGB-only baseline.
        #[arg(long)]
        no_prior: bool,
        #[arg(long)]
        sup_source: Option<SupervisionSource>,
        #[arg(long)]
        fusion: Option<Fusion>,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Multi-scale inference.
        #[arg(long)]
        ms: bool,
        #[arg(long)]
        report: PathBuf,
    },
    /// Predict masks for a directory of frames.
    Infer {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        ms: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check analytic gradients of the joint loss against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        break_backward: bool,
    },
}

fn load_config(path: Option<PathBuf>) -> CliResult<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(&p)?),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen { config, out, seed, count } => {
            cmd_gen(&load_config(config)?, &out, seed, count)?;
            println!("wrote {count} sequences to {}", out.display());
        }
        Command::BuildSup {
            data,
            source,
            no_dilate,
            out,
        } => {
            let dir = cmd_build_sup(&data, source, no_dilate, out.as_deref())?;
            println!("wrote {}", dir.display());
        }
        Command::Train {
            data,
            config,
            out,
            no_prior,
            sup_source,
            fusion,
        } => {
            let opts = TrainOptions {
                data,
                config: load_config(config)?,
                out,
                no_prior,
                sup_source,
                fusion,
            };
            let res = cmd_train(&opts)?;
            let l = res.final_loss;
            println!("final L_sem={:.6} L_ST={:.6} total={:.6}", l.sem, l.st, l.total);
            println!("wrote {}", res.checkpoint.display());
        }
        Command::Eval { data, ckpt, ms, report } => {
            let res = cmd_eval(&data, &ckpt, ms, &report)?;
            print!("{}", res.report.to_text());
        }
        Command::Infer { frames, ckpt, ms, out } => {
            let n = cmd_infer(&frames, &ckpt, ms, &out)?;
            println!("wrote {n} masks to {}", out.display());
        }
        Command::Gradcheck { seed, break_backward } => {
            let res = cmd_gradcheck(seed, break_backward)?;
            let r = &res.result;
            let worst = r.worst.as_ref().map_or("-".to_string(), |(n, i)| format!("{n}[{i}]"));
            println!(
                "{} max_rel_error={:e} checked={} worst={worst}",
                if res.passed { "PASS" } else { "FAIL" },
                r.max_rel_error,
                r.checked
            );
            if !res.passed {
                return Err(CliError::Numeric(format!(
                    "gradient check failed: {:e} >= {GRADCHECK_TOLERANCE:e}",
                    r.max_rel_error
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
