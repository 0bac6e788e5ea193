use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use kgnews_cli::commands::{cmd_kg_train, cmd_preprocess, cmd_synth, cmd_train_eval, render_table};
use kgnews_cli::config::RunConfig;
use kgnews_cli::exit_code;

#[derive(Parser)]
#[command(name = "kgnews", version, about = "Knowledge-graph augmented fake-news detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `paths.output_dir`.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Replace every seed in the config with this value.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train ComplEx embeddings and report link-prediction metrics.
    KgTrain,
    /// Clean, link, filter and split the news corpus.
    Preprocess,
    /// Train and evaluate with and without the entity encoder.
    TrainEval,
    /// Write the synthetic benchmark files.
    Synth,
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = cli.output {
        config.paths.output_dir = dir;
    }
    if let Some(seed) = cli.seed_override {
        config.override_seed(seed);
    }
    config.validate()?;

    match cli.command {
        Command::Synth => {
            let paths = cmd_synth(&config)?;
            println!("wrote {}", paths.triples.display());
            println!("wrote {}", paths.aliases.display());
            println!("wrote {}", paths.news.display());
        }
        Command::KgTrain => {
            let report = cmd_kg_train(&config)?;
            println!(
                "ComplEx: {} entities, {} relations, {} train / {} held-out triples",
                report.n_entities, report.n_relations, report.n_train, report.n_holdout
            );
            for (name, m) in [("train", Some(&report.train)), ("holdout", report.holdout.as_ref())] {
                if let Some(m) = m {
                    println!(
                        "{name:>8}: MRR {:.4}  Hits@1 {:.4}  Hits@3 {:.4}  Hits@10 {:.4}",
                        m.mrr, m.hits_at[&1], m.hits_at[&3], m.hits_at[&10]
                    );
                }
            }
        }
        Command::Preprocess => {
            let s = cmd_preprocess(&config)?;
            println!(
                "kept {} of {} items (fake {}, true {}); train {} / test {}",
                s.retention.after.total(),
                s.rows_loaded,
                s.retention.after.fake,
                s.retention.after.true_,
                s.split.train.total(),
                s.split.test.total()
            );
        }
        Command::TrainEval => {
            let table = cmd_train_eval(&config)?;
            print!("{}", render_table(&table));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
