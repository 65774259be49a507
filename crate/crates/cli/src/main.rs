//! `cocoa` — command-line driver for the offline RL pipeline.
//!
//! Every subcommand reads the same TOML config (`--config`, defaults otherwise),
//! applies the command-line overrides, runs what it needs (reusing cached
//! stages) and prints one JSON line. Failures print a JSON error line on stderr
//! and exit with status 1.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cocoa::algo::{bc_train, evaluate_policy, Variant};
use cocoa::env::{normalized_score, OfflineDataset, ScoreReference, Tier};
use cocoa::harness::{
    emit_plots_data, format_summary, load_trained_policy, run_ablation, run_dir, run_stages, PipelineConfig,
    RunManifest, Stage,
};
use cocoa::{Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "cocoa", version, about = "Offline RL with anchor decomposition and bilinear heads")]
struct Cli {
    /// TOML config; unset fields take their defaults (see `print-config`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; for `ablate`, replaces the seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// alone | cocoa_no_anchor_seeking | cocoa
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// random | medium | medium-replay | medium-expert | expert; for `ablate`, replaces the tier list.
    #[arg(long, global = true)]
    tier: Option<Tier>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the offline dataset and the score reference.
    GenData,
    /// Train the forward dynamics ensemble.
    TrainDynamics,
    /// Train the reverse dynamics model.
    TrainReverse,
    /// Roll out the reverse policy through the reverse model.
    GenReverseBuffer,
    /// Train the anchor-seeking policy on the reverse buffer.
    TrainAnchor,
    /// Train the policy of the selected variant (runs missing upstream stages).
    Train,
    /// Behavior cloning baseline on the selected tier's dataset.
    TrainBc {
        #[arg(long, default_value_t = 20)]
        episodes: usize,
    },
    /// Evaluate a trained policy.
    Eval {
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Run every tier × variant × seed cell and write the comparison report.
    Ablate,
    /// Write learning-curve CSVs for every finished run of the config's sweep.
    PlotData,
    /// Print the effective config with all defaults.
    PrintConfig,
}

fn config(cli: &Cli) -> Result<PipelineConfig> {
    let mut c = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
        c.seeds = vec![s];
    }
    if let Some(o) = &cli.out {
        c.out_dir = o.clone();
    }
    if let Some(v) = cli.variant {
        c.variant.variant = v;
    }
    if let Some(t) = cli.tier {
        c.tier = t;
        c.tiers = vec![t];
    }
    c.validate()?;
    Ok(c)
}

fn stages(c: &PipelineConfig, targets: &[Stage]) -> Result<serde_json::Value> {
    let m = run_stages(c, targets)?;
    m.ok()?;
    Ok(manifest_summary(&m, c))
}

fn manifest_summary(m: &RunManifest, c: &PipelineConfig) -> serde_json::Value {
    json!({
        "manifest": RunManifest::path(&run_dir(c)),
        "stages": m.stages.iter().map(|s| json!({"stage": s.stage, "reused": s.reused, "seconds": s.seconds})).collect::<Vec<_>>(),
        "final_normalized_score": m.final_normalized_score,
    })
}

fn run(cli: &Cli) -> Result<serde_json::Value> {
    let c = config(cli)?;
    match &cli.command {
        Command::GenData => stages(&c, &[Stage::Data, Stage::Reference]),
        Command::TrainDynamics => stages(&c, &[Stage::Dynamics]),
        Command::TrainReverse => stages(&c, &[Stage::Reverse]),
        Command::GenReverseBuffer => stages(&c, &[Stage::ReverseBuffer]),
        Command::TrainAnchor => stages(&c, &[Stage::AnchorPolicy]),
        Command::Train => stages(&c, &[Stage::Train]),
        Command::TrainBc { episodes } => {
            let m = run_stages(&c, &[Stage::Data, Stage::Reference])?;
            m.ok()?;
            let load = |s: Stage| m.stage(s).map(|r| r.dir.clone()).expect("stage was run");
            let ds = OfflineDataset::load(&load(Stage::Data).join("dataset.cocoadat"))?;
            let reference: ScoreReference = serde_json::from_str(&std::fs::read_to_string(
                load(Stage::Reference).join("reference.json"),
            )?)
            .map_err(|e| Error::Format(e.to_string()))?;
            let (policy, report) = bc_train(&ds, &c.bc, c.seed)?;
            let dir = c.out_dir.join(c.tier.name()).join("bc").join(format!("seed{}", c.seed));
            policy.save(&dir)?;
            let j = evaluate_policy(&policy, &c.env, *episodes)?;
            Ok(json!({
                "policy": dir,
                "final_nll": report.curve.last(),
                "eval_return": j,
                "normalized_score": normalized_score(j, &reference)?,
            }))
        }
        Command::Eval { episodes } => {
            let p = load_trained_policy(&c)?;
            let (j, score) = p.evaluate(&c.env, episodes.unwrap_or(c.algo.eval_episodes))?;
            Ok(json!({"eval_return": j, "normalized_score": score}))
        }
        Command::Ablate => {
            let report = run_ablation(&c)?;
            eprint!("{}", format_summary(&report.summary));
            Ok(json!({
                "files": report.files,
                "failed_cells": report.cells.iter().filter(|x| x.normalized_score.is_none()).count(),
            }))
        }
        Command::PlotData => {
            let mut manifests = Vec::new();
            for &tier in &c.tiers {
                for variant in Variant::ALL {
                    for &seed in &c.seeds {
                        let mut r = c.clone();
                        r.tier = tier;
                        r.seed = seed;
                        r.variant.variant = variant;
                        let dir = run_dir(&r);
                        if dir.exists() {
                            manifests.push(RunManifest::load(&dir)?);
                        }
                    }
                }
            }
            if manifests.is_empty() {
                return Err(Error::MissingArtifact(format!("no finished runs under {}", c.out_dir.display())));
            }
            Ok(json!({"files": emit_plots_data(&manifests, &c.out_dir)?}))
        }
        Command::PrintConfig => {
            print!("{}", c.to_toml()?);
            Ok(json!(null))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(serde_json::Value::Null) => ExitCode::SUCCESS,
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}
