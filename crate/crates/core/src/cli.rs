//! Command-line interface: one subcommand per pipeline stage plus `run`
//! (the whole pipeline) and `sweep` (the pipeline repeated over one knob).
//!
//! Exit codes: 0 on success, 1 for configuration or missing-input problems,
//! 2 for pipeline failures.

use clap::{Parser, Subcommand};
use std::path::PathBuf;

use crate::corpus::load_corpus;
use crate::error::{Error, Result};
use crate::harness::{
    load_config, run_experiment, run_sweep, stage_eval, stage_gen, stage_poison, stage_train,
    stage_train_augmentor, write_json_to, ExperimentReport, OutDir, SweepAxis,
};
use crate::metrics::stealth_report;

#[derive(Debug, Parser)]
#[command(
    name = "memelab",
    version,
    about = "Desk-scale laboratory for cross-modal backdoors in toy meme classifiers"
)]
pub struct Cli {
    /// Experiment config file (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory for corpora, models, reports and plots; overrides
    /// the config's `output_dir` (default `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Master seed; overrides the one in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (0 or omitted picks the machine default).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the clean train/test corpus.
    Gen,
    /// Train the dot-probe whose features texture the augmented trigger.
    TrainAugmentor,
    /// Poison a fraction of the train split with the configured trigger.
    Poison,
    /// Train the victim detector on the poisoned split.
    Train {
        /// Train the no-attack baseline on the clean split instead.
        #[arg(long)]
        clean: bool,
    },
    /// Evaluate the models on disk and write report.json, samples.csv and
    /// plots.
    Eval {
        /// Evaluate this model file instead of models/victim.json.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Compare the poisoned train split against the clean one and print the
    /// stealth summary.
    Stealth,
    /// Run every stage in order.
    Run,
    /// Run the pipeline once per value of one knob.
    Sweep {
        /// One of: rho, lambda, epsilon, gamma, p_trig, trigger_kind.
        #[arg(long)]
        axis: String,
        /// Comma-separated values: numbers for the scalar axes
        /// (`0.01,0.05`), kind names for trigger_kind
        /// (`cmt_initial,patch`).
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

fn headline(report: &ExperimentReport) -> String {
    // Lead with the condition the config asked for; the report carries the
    // full grid either way.
    let eval = &report.config.eval;
    let c = report.backdoored.get(eval.text_mode, eval.defense);
    let far = c.far.map_or("n/a".to_string(), |f| format!("{:.3}", f.rate));
    format!(
        "cda {:.3} | asr {:.3} | far {far} | mean psnr {} | mean ssim {:.4}  \
         (text {:?}, defense {:?})",
        c.cda,
        c.asr.rate,
        report
            .stealth
            .mean_psnr_db
            .map_or("inf".to_string(), |v| format!("{v:.2} dB")),
        report.stealth.mean_ssim,
        eval.text_mode,
        eval.defense,
    )
}

/// Parse-free entry point used by `main` and the CLI tests.
pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads.filter(|n| *n > 0) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    let out = OutDir::new(cli.out.as_ref().unwrap_or(&cfg.output_dir));
    match cli.cmd {
        Command::Gen => {
            let s = stage_gen(&cfg, &out)?;
            println!(
                "generated {} train + {} test memes under {}",
                s.n_train,
                s.n_test,
                out.root().join("corpus").join("clean").display()
            );
        }
        Command::TrainAugmentor => {
            let loss = stage_train_augmentor(&cfg, &out)?;
            println!("augmentor trained, final loss {loss:.4}");
        }
        Command::Poison => {
            let s = stage_poison(&cfg, &out)?;
            println!("poisoned {} train memes (rho {})", s.n_poisoned, s.rho);
        }
        Command::Train { clean } => {
            let loss = stage_train(&cfg, &out, clean)?;
            let which = if clean { "clean baseline" } else { "backdoored" };
            println!("{which} victim trained, final loss {loss:.4}");
        }
        Command::Eval { model } => {
            let report = stage_eval(&cfg, &out, model.as_deref())?;
            println!("{}", headline(&report));
            println!("report written to {}", out.report().display());
        }
        Command::Stealth => {
            let clean = load_corpus(&out.clean_train())?;
            let poisoned = load_corpus(&out.poisoned_train())?;
            let report = stealth_report(&clean, &poisoned)?;
            write_json_to(&out.root().join("stealth.json"), &report)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Run => {
            let report = run_experiment(&cfg, &out)?;
            println!("{}", headline(&report));
            println!("report written to {}", out.report().display());
        }
        Command::Sweep { axis, values } => {
            let axis = SweepAxis::parse(&axis)?;
            let summary = run_sweep(&cfg, &out, axis, &values)?;
            for p in &summary.points {
                println!(
                    "{} = {} -> asr manual {:.3}, asr automatic {:.3}, cda {:.3}",
                    axis.name(),
                    p.value,
                    p.asr_manual,
                    p.asr_automatic,
                    p.cda_automatic
                );
            }
            println!("sweep written to {}", out.root().join("sweep.json").display());
        }
    }
    Ok(())
}
