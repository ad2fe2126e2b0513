use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use xhembed::combine::InitStrategy;
use xhembed::corpus::{read_lines, TokenizerSettings};
use xhembed::embedstore::{
    cosine, csls_neighborhood, csls_score, nearest_neighbors, normalize_in_place, read_embeddings,
};
use xhembed::metrics::evaluate_translations;
use xhembed::nmt::{load_checkpoint, translate, write_translations};
use xhembed_cli::config::parse_strategies;
use xhembed_cli::pipeline::{self, BIBLE, SECOND};
use xhembed_cli::{CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "xhembed", version, about = "Low-resource word embedding initialisation experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (flat `key = value` file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `run.output`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replaces every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Serial strategies and single-threaded subword training.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Comma-separated strategies; overrides `run.strategies`.
    #[arg(long, global = true)]
    strategies: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Sentence and token statistics of both corpora.
    Stats,
    /// Train/dev/test splits and translation vocabularies.
    Split,
    /// Train the subword skip-gram model.
    TrainSubword,
    /// Project high-resource vectors through the lexicon.
    BuildEv,
    /// Learn the orthogonal mapping between the two embedding spaces.
    Map,
    /// Initial source embeddings for each strategy.
    InitEmb,
    /// Train a translation model per strategy on the first corpus.
    TrainMt,
    /// Fine-tune each strategy's model on the second corpus.
    Finetune,
    /// Decode test splits, or an arbitrary file with --checkpoint.
    Translate {
        /// Model to decode with; requires --input and --output.
        #[arg(long, requires_all = ["input", "output"])]
        checkpoint: Option<PathBuf>,
        /// Tokenized source sentences, one per line.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Beam width; defaults to `nmt.beam`.
        #[arg(long)]
        beam: Option<usize>,
        /// Output length cap; defaults to `nmt.max_decode_len`.
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// BLEU of test-split hypotheses, or of --hyp against --ref.
    Evaluate {
        /// Hypothesis file, one sentence per line.
        #[arg(long, requires = "reference")]
        hyp: Option<PathBuf>,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
    },
    /// Nearest neighbours of a word in an embedding file.
    Neighbors {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        word: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Rank by CSLS with this neighbourhood size instead of cosine.
        #[arg(long)]
        csls: Option<usize>,
    },
    /// Every stage for every strategy; writes results.tsv and manifest.txt.
    RunAll,
}

fn config(g: &Global) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &g.out {
        cfg.output = out.clone();
    }
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    if g.deterministic {
        cfg.set_deterministic();
    }
    if let Some(s) = &g.strategies {
        cfg.strategies = parse_strategies(s)?;
        if cfg.strategies.is_empty() {
            return Err(CliError::Validation("--strategies is empty".into()));
        }
    }
    Ok(cfg)
}

fn stage_error(stage: &str) -> impl FnOnce(anyhow::Error) -> CliError + '_ {
    move |error| CliError::Stage {
        stage: stage.to_string(),
        error,
    }
}

fn for_strategies(cfg: &ExperimentConfig, f: impl Fn(InitStrategy) -> Result<(), CliError>) -> Result<(), CliError> {
    cfg.strategies.iter().try_for_each(|&s| f(s))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = config(&cli.global)?;
    match cli.command {
        Command::Stats => print!("{}", pipeline::stats(&cfg)?),
        Command::Split => pipeline::split(&cfg)?,
        Command::TrainSubword => pipeline::train_subword(&cfg)?,
        Command::BuildEv => pipeline::build_ev(&cfg)?,
        Command::Map => pipeline::map(&cfg)?,
        Command::InitEmb => for_strategies(&cfg, |s| pipeline::init_emb(&cfg, s).map(|_| ()))?,
        Command::TrainMt => for_strategies(&cfg, |s| pipeline::train_mt(&cfg, s))?,
        Command::Finetune => for_strategies(&cfg, |s| pipeline::finetune(&cfg, s))?,
        Command::Translate {
            checkpoint: Some(ckpt),
            input,
            output,
            beam,
            max_len,
        } => {
            let (Some(input), Some(output)) = (input, output) else {
                return Err(CliError::Validation("--checkpoint needs --input and --output".into()));
            };
            (|| {
                let (model, _) = load_checkpoint::<f32>(&ckpt)?;
                let tok = TokenizerSettings::default();
                let sources: Vec<Vec<String>> = read_lines(&input)?.iter().map(|l| tok.tokenize(l)).collect();
                let beam = beam.unwrap_or(model.config().beam);
                let max_len = max_len.unwrap_or(model.config().max_decode_len);
                let hyps = translate(&model, &sources, beam, max_len, cfg.decode_threads);
                write_translations(&output, &hyps)?;
                Ok(())
            })()
            .map_err(stage_error("translate"))?
        }
        Command::Translate { .. } => for_strategies(&cfg, |s| {
            pipeline::translate_test(&cfg, s, BIBLE)?;
            pipeline::translate_test(&cfg, s, SECOND).map(|_| ())
        })?,
        Command::Evaluate {
            hyp: Some(hyp),
            reference,
        } => {
            let reference = reference.expect("clap enforces --ref");
            let report = evaluate_translations(&hyp, &reference)
                .context("evaluating")
                .map_err(stage_error("evaluate"))?;
            print!("{report}");
        }
        Command::Evaluate { .. } => for_strategies(&cfg, |s| {
            for corpus in [BIBLE, SECOND] {
                let r = pipeline::evaluate_test(&cfg, s, corpus)?;
                println!("{s}\t{corpus}\t{:.2}\t{:.2}", r.corpus_bleu, r.mean_sentence_bleu);
            }
            Ok(())
        })?,
        Command::Neighbors {
            embeddings,
            word,
            k,
            csls,
        } => (|| {
            let (space, _) = read_embeddings::<f32>(&embeddings)?;
            let query = space.get(&word).with_context(|| format!("{word:?} is not in {}", embeddings.display()))?;
            let qi = space.index_of(&word).expect("looked up above");
            let ranked: Vec<(String, f32)> = match csls {
                None => nearest_neighbors(&space, query, k + 1)?
                    .into_iter()
                    .filter(|(w, _)| *w != word)
                    .take(k)
                    .collect(),
                Some(n) => {
                    let mut unit = space.data().to_owned();
                    for mut row in unit.rows_mut() {
                        normalize_in_place(row.as_slice_mut().expect("standard layout"));
                    }
                    let r = csls_neighborhood(unit.view(), unit.view(), n)?;
                    let row = |i: usize| unit.row(i).to_vec();
                    let q = row(qi);
                    let mut scored: Vec<(String, f32)> = (0..space.len())
                        .filter(|&i| i != qi)
                        .map(|i| (space.tokens()[i].clone(), csls_score(&q, &row(i), r[qi], r[i])))
                        .collect();
                    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
                    scored.truncate(k);
                    scored
                }
            };
            for (w, score) in ranked {
                let cos = cosine(query, space.get(&w).expect("ranked from the space"));
                println!("{w}\t{score:.6}\t{cos:.6}");
            }
            Ok(())
        })()
        .map_err(stage_error("neighbors"))?,
        Command::RunAll => print!("{}", pipeline::run_pipeline(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
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
