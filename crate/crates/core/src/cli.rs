//! Argument parsing and exit codes for the `vlm-par` binary.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::Ablation;
use crate::error::{Error, Result};
use crate::pipeline;
use crate::training::gradcheck::DEFAULT_TOLERANCE;

#[derive(Debug, Parser)]
#[command(name = "vlm-par", version, about = "Pedestrian attribute recognition with vision-language fusion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory from a JSON spec.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train fusion and heads; writes weights, manifest and history.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_ablation)]
        ablation: Option<Ablation>,
    },
    /// Evaluate trained weights; writes a JSON report and a CSV sibling.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Train with and without cross-attention and compare per-attribute accuracy.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Cosine alignment between image and prompt embeddings.
    Zeroshot {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { spec, out } => {
            let ds = pipeline::cmd_gen_data(&spec, &out)?;
            println!("wrote {} samples to {}", ds.len(), out.display());
        }
        Command::Train { config, ablation } => {
            let o = pipeline::cmd_train(&config, ablation)?;
            if let Some(last) = o.history.last() {
                println!(
                    "epoch {} loss {:.6} mA {:.4} F1 {:.4}",
                    last.epoch, last.loss, last.mean_accuracy, last.f1
                );
            }
            println!("wrote {}", o.output_dir.display());
        }
        Command::Eval { config, weights, data, report } => {
            let m = pipeline::cmd_eval(&config, &weights, &data, &report)?;
            println!("mA {:.4} F1 {:.4}", m.mean_accuracy, m.mean_f1);
        }
        Command::Ablate { config, data, report } => {
            let r = pipeline::cmd_ablate(&config, &data, &report)?;
            print!("{}", r.to_csv());
        }
        Command::Gradcheck { config, tolerance, corrupt_gradient } => {
            let r = pipeline::cmd_gradcheck(&config, corrupt_gradient)?;
            for g in &r.groups {
                println!("{:<18} checked {:>5}  max rel error {:.3e}", g.name, g.checked, g.max_rel_error);
            }
            if !r.passes(tolerance) {
                return Err(Error::Numeric(format!(
                    "max relative error {:.3e} exceeds tolerance {tolerance:e}",
                    r.max_rel_error()
                )));
            }
        }
        Command::Zeroshot { config, weights, data, report } => {
            let rows = pipeline::cmd_zeroshot(&config, weights.as_deref(), &data, &report)?;
            println!("wrote {} rows to {}", rows.iter().map(|(_, r)| r.len()).sum::<usize>(), report.display());
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
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
