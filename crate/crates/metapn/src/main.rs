use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use metapn::bench::{self, RunResult};
use metapn::checkpoint::Checkpoint;
use metapn::config::{ConfigFile, Method};
use metapn::{load_bundle, runlog, sbm, store_bundle};
use serde_json::json;

#[derive(Parser)]
#[command(name = "metapn", version, about = "Few-shot node classification with meta-learned label propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a bundle directory, check every invariant and print its sizes.
    BundleValidate { dir: PathBuf },

    /// Write a stochastic-block-model bundle.
    SynthSbm {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        blocks: usize,
        #[arg(long)]
        p_in: f64,
        #[arg(long)]
        p_out: f64,
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },

    /// Train one method on one split and report its test accuracy.
    Train {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, value_parser = parse_method)]
        method: Method,
        #[arg(long)]
        shots: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for the training log and parameter checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Multi-seed experiment; appends to results.csv in the output directory.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the number of runs (seeds 0..runs).
        #[arg(long)]
        runs: Option<usize>,
    },

    /// Sweep the number of propagation steps.
    AblateK {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<usize>,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: metapn::config::ConfigError| e.to_string())
}

fn print_result(r: &RunResult) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string(r)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::BundleValidate { dir } => {
            let b = load_bundle(&dir).with_context(|| format!("bundle {}", dir.display()))?;
            let mut counts = vec![0usize; b.c()];
            for &l in &b.labels {
                counts[l] += 1;
            }
            println!(
                "{}",
                json!({
                    "name": b.name(),
                    "n": b.n(),
                    "m": b.edges.len(),
                    "f": b.f(),
                    "c": b.c(),
                    "class_counts": counts,
                })
            );
        }
        Command::SynthSbm {
            n,
            blocks,
            p_in,
            p_out,
            sigma,
            seed,
            out,
        } => {
            let spec = sbm::SbmSpec {
                n,
                blocks,
                p_in,
                p_out,
                feature_noise_sigma: sigma,
                seed,
            };
            let b = sbm::generate_sbm(&spec)?;
            store_bundle(&b, &out).with_context(|| format!("writing {}", out.display()))?;
            println!("{}", json!({ "out": out, "n": b.n(), "m": b.edges.len() }));
        }
        Command::Train {
            bundle,
            method,
            shots,
            config,
            seed,
            out,
        } => {
            let mut file = match &config {
                Some(path) => ConfigFile::load(path)?,
                None => ConfigFile::default(),
            };
            file.bundle = Some(bundle);
            file.method = Some(method);
            file.shots = Some(shots);
            file.seeds = Some(vec![seed]);
            file.runs = None;
            let cfg = file.resolve()?;
            let b = load_bundle(&cfg.bundle)
                .with_context(|| format!("loading bundle {}", cfg.bundle.display()))?;
            let split = b.sample_split(cfg.shots, cfg.val_per_class, seed)?;
            let run = bench::run_method(&b, method, &split, &cfg.train_config(seed), cfg.alpha)?;
            if let Some(dir) = &out {
                fs::create_dir_all(dir)?;
                runlog::write_log_file(dir.join("train_log.jsonl"), &run.log)?;
                if let Some((theta, phi)) = &run.params {
                    Checkpoint::from_params(theta, phi).write(dir.join("model.mpn"))?;
                }
            }
            println!(
                "{}",
                json!({
                    "method": method,
                    "dataset": b.name(),
                    "shots": shots,
                    "seed": seed,
                    "test_accuracy": 100.0 * run.accuracy,
                    "epochs": run.log.len(),
                })
            );
        }
        Command::Bench { config, runs } => {
            let mut file = ConfigFile::load(&config)?;
            if let Some(runs) = runs {
                file.runs = Some(runs);
                file.seeds = None;
            }
            print_result(&bench::run_experiment(&file.resolve()?)?)?;
        }
        Command::AblateK { config, k } => {
            let file = ConfigFile::load(&config)?;
            let methods = file
                .methods
                .clone()
                .unwrap_or_else(|| vec![Method::MetaPn, Method::StaticLp]);
            for r in bench::ablate_k(&file.resolve()?, &methods, &k)? {
                print_result(&r)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
