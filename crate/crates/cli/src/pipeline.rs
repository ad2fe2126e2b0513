//! Pipeline stages over a persisted artifact directory.
//!
//! Every stage reads its inputs from files written by earlier stages, so a
//! stage can be rerun on its own. [`run_pipeline`] chains them and writes the
//! results table and manifest.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use log::info;
use xhembed::combine::{build_initial_embeddings, pad_matrix, InitInputs, InitStrategy, InitializedEmbeddings};
use xhembed::corpus::{
    corpus_stats, load_parallel_corpus, split_corpus, ParallelCorpus, Vocabulary,
};
use xhembed::embedstore::{read_embeddings, write_embeddings, EmbeddingMatrix};
use xhembed::lexproject::{build_projected_matrix, read_lexicon};
use xhembed::metrics::{evaluate_translations, BleuReport};
use xhembed::nmt::{
    build_model, fine_tune, load_checkpoint, save_checkpoint, train, translate, write_translations, Seq2Seq,
};
use xhembed::subword::{train_skipgram, SubwordModel};
use xhembed::xmap::{learn_mapping, MappingModel};

use crate::config::ExperimentConfig;
use crate::CliError;

pub const BIBLE: &str = "bible";
pub const SECOND: &str = "second";

/// File locations under the output directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn dir(&self, name: &str) -> anyhow::Result<PathBuf> {
        let d = self.root.join(name);
        fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        Ok(d)
    }

    pub fn stats(&self) -> PathBuf {
        self.root.join("stats.tsv")
    }

    pub fn split(&self, corpus: &str, part: &str) -> (PathBuf, PathBuf) {
        let d = self.root.join("splits");
        (d.join(format!("{corpus}.{part}.src")), d.join(format!("{corpus}.{part}.tgt")))
    }

    pub fn source_vocab(&self) -> PathBuf {
        self.root.join("vocab/source.tsv")
    }

    pub fn target_vocab(&self) -> PathBuf {
        self.root.join("vocab/target.tsv")
    }

    pub fn subword_model(&self) -> PathBuf {
        self.root.join("subword/model.txt")
    }

    pub fn projected(&self) -> PathBuf {
        self.root.join("ev/projected.vec")
    }

    pub fn subword_vectors(&self) -> PathBuf {
        self.root.join("em/subword.vec")
    }

    pub fn mapping(&self) -> PathBuf {
        self.root.join("map/mapping.txt")
    }

    pub fn strategy_dir(&self, s: InitStrategy) -> PathBuf {
        self.root.join("strategies").join(s.name())
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results.tsv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.txt")
    }
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn stage<T>(name: impl Into<String>, f: impl FnOnce() -> anyhow::Result<T>) -> Result<T, CliError> {
    let name = name.into();
    info!("stage {name}");
    f().map_err(|error| CliError::Stage { stage: name, error })
}

fn load_corpus(cfg: &ExperimentConfig, src: &Option<PathBuf>, tgt: &Option<PathBuf>, name: &str) -> anyhow::Result<ParallelCorpus> {
    let (src, tgt) = match (src, tgt) {
        (Some(s), Some(t)) => (s, t),
        _ => anyhow::bail!("paths for the {name} corpus are not configured"),
    };
    let (mut corpus, report) = load_parallel_corpus(src, tgt, &cfg.tokenizer)?;
    info!("{name}: {report}");
    corpus.name = name.to_string();
    Ok(corpus)
}

fn load_split(cfg: &ExperimentConfig, art: &Artifacts, corpus: &str, part: &str) -> anyhow::Result<ParallelCorpus> {
    let (s, t) = art.split(corpus, part);
    let (mut c, _) = load_parallel_corpus(&s, &t, &cfg.tokenizer)
        .with_context(|| format!("reading the {corpus} {part} split (run `split` first)"))?;
    c.name = corpus.to_string();
    Ok(c)
}

/// Sentence and token statistics of both corpora.
pub fn stats(cfg: &ExperimentConfig) -> Result<String, CliError> {
    stage("stats", || {
        let p = &cfg.paths;
        let mut out = String::from("corpus\tsentences\tsource_tokens\tsource_mean_len\tsource_std_len\ttarget_tokens\ttarget_mean_len\ttarget_std_len\n");
        for (name, s, t) in [(BIBLE, &p.bible_source, &p.bible_target), (SECOND, &p.second_source, &p.second_target)] {
            if s.is_none() && name == SECOND {
                continue;
            }
            let st = corpus_stats(&load_corpus(cfg, s, t, name)?);
            out.push_str(&format!(
                "{name}\t{}\t{}\t{:.4}\t{:.4}\t{}\t{:.4}\t{:.4}\n",
                st.sentences,
                st.source.tokens,
                st.source.mean_len,
                st.source.std_len,
                st.target.tokens,
                st.target.mean_len,
                st.target.std_len
            ));
        }
        write(&Artifacts::new(&cfg.output).stats(), &out)?;
        Ok(out)
    })
}

/// Seeded train/dev/test splits of both corpora, plus the translation
/// vocabularies built over the two training splits.
pub fn split(cfg: &ExperimentConfig) -> Result<(), CliError> {
    stage("split", || {
        let art = Artifacts::new(&cfg.output);
        let dir = art.dir("splits")?;
        let p = &cfg.paths;
        let mut train_sets = Vec::new();
        for (name, s, t) in [(BIBLE, &p.bible_source, &p.bible_target), (SECOND, &p.second_source, &p.second_target)] {
            let corpus = load_corpus(cfg, s, t, name)?;
            let (tr, dev, test) = split_corpus(&corpus, &cfg.split);
            info!("{name}: {} train / {} dev / {} test", tr.len(), dev.len(), test.len());
            tr.write(&dir, "train")?;
            dev.write(&dir, "dev")?;
            test.write(&dir, "test")?;
            train_sets.push(tr);
        }
        art.dir("vocab")?;
        let src = Vocabulary::build(train_sets.iter().flat_map(|c| c.sources()), cfg.vocab_min_count);
        let tgt = Vocabulary::build(train_sets.iter().flat_map(|c| c.targets()), cfg.vocab_min_count);
        info!("vocabularies: {} source, {} target", src.len(), tgt.len());
        src.write(&art.source_vocab())?;
        tgt.write(&art.target_vocab())?;
        Ok(())
    })
}

/// Subword skip-gram on the source side of both training splits.
pub fn train_subword(cfg: &ExperimentConfig) -> Result<(), CliError> {
    stage("train-subword", || {
        let art = Artifacts::new(&cfg.output);
        let mut sentences: Vec<Vec<String>> = Vec::new();
        for corpus in [BIBLE, SECOND] {
            sentences.extend(load_split(cfg, &art, corpus, "train")?.pairs.into_iter().map(|p| p.source));
        }
        let (model, report) = train_skipgram::<f32, _>(&sentences, &cfg.subword)?;
        art.dir("subword")?;
        model.save(&art.subword_model())?;
        write(&art.root.join("subword/report.tsv"), report.to_string())?;
        Ok(())
    })
}

/// Projects the high-resource vectors through the lexicon.
pub fn build_ev(cfg: &ExperimentConfig) -> Result<(), CliError> {
    stage("build-ev", || {
        let art = Artifacts::new(&cfg.output);
        let lex_path = cfg.paths.lexicon.as_ref().context("paths.lexicon is not configured")?;
        let emb_path = cfg.paths.embeddings.as_ref().context("paths.embeddings is not configured")?;
        let lexicon = read_lexicon(lex_path)?;
        let (hr, read) = read_embeddings::<f32>(emb_path)?;
        if read.duplicates > 0 {
            info!("{} duplicate rows in {} ignored", read.duplicates, emb_path.display());
        }
        let (ev, report) = build_projected_matrix(&lexicon, &hr);
        art.dir("ev")?;
        write_embeddings(&ev, &art.projected())?;
        write(&art.root.join("ev/report.tsv"), report.to_string())?;
        Ok(())
    })
}

fn high_resource_dim(cfg: &ExperimentConfig) -> anyhow::Result<usize> {
    if let Some(d) = cfg.random_dim {
        return Ok(d);
    }
    let path = cfg.paths.embeddings.as_ref().context("paths.embeddings is not configured")?;
    Ok(read_embeddings::<f32>(path)?.0.dim())
}

/// Exports subword vectors for the lexicon sources and the task vocabulary,
/// then learns the orthogonal mapping between the projected and subword
/// spaces (both zero-padded to a common width).
pub fn map(cfg: &ExperimentConfig) -> Result<(), CliError> {
    stage("map", || {
        let art = Artifacts::new(&cfg.output);
        let (ev, _) = read_embeddings::<f32>(&art.projected()).context("reading E_V (run `build-ev` first)")?;
        let sub = SubwordModel::<f32>::load(&art.subword_model()).context("reading the subword model")?;
        let vocab = Vocabulary::read(&art.source_vocab())?;
        let mut words: Vec<&str> = ev.tokens().iter().map(String::as_str).collect();
        for (_, w) in vocab.words() {
            if !ev.contains(w) {
                words.push(w);
            }
        }
        let em = sub.export(words);
        art.dir("em")?;
        write_embeddings(&em, &art.subword_vectors())?;
        let dim = ev.dim().max(em.dim());
        let learned = learn_mapping(&pad_matrix(&ev, dim), &pad_matrix(&em, dim), &cfg.mapping)?;
        art.dir("map")?;
        learned.model.save(&art.mapping())?;
        let mut report = format!(
            "seed_pairs\t{}\nfinal_pairs\t{}\nobjective\t{:.6}\nconverged\t{}\niteration\tdictionary_size\tobjective\n",
            learned.result.history.first().map_or(0, |h| h.dictionary_size),
            learned.result.dictionary.len(),
            learned.result.objective,
            learned.result.converged
        );
        for h in &learned.result.history {
            report.push_str(&format!("{}\t{}\t{:.6}\n", h.iteration, h.dictionary_size, h.objective));
        }
        write(&art.root.join("map/report.tsv"), report)?;
        Ok(())
    })
}

/// Builds the strategy's initial source embeddings.
pub fn init_emb(cfg: &ExperimentConfig, s: InitStrategy) -> Result<InitializedEmbeddings<f32>, CliError> {
    stage(format!("init-emb[{s}]"), || {
        let art = Artifacts::new(&cfg.output);
        let vocab = Vocabulary::read(&art.source_vocab())?;
        let projected: Option<EmbeddingMatrix<f32>> = if s.needs_projected() {
            Some(read_embeddings(&art.projected()).context("reading E_V (run `build-ev` first)")?.0)
        } else {
            None
        };
        let subword = if s.needs_subword() {
            Some(SubwordModel::<f32>::load(&art.subword_model()).context("reading the subword model")?)
        } else {
            None
        };
        let mapping = if s.needs_mapping() {
            Some(MappingModel::<f32>::load(&art.mapping()).context("reading the mapping (run `map` first)")?)
        } else {
            None
        };
        let dim = if s == InitStrategy::Random { high_resource_dim(cfg)? } else { 0 };
        let inputs = InitInputs {
            projected: projected.as_ref(),
            subword: subword.as_ref(),
            mapping: mapping.as_ref(),
            dim,
            seed: cfg.nmt.seed,
        };
        let init = build_initial_embeddings(s, &vocab, &inputs)?;
        let dir = art.strategy_dir(s);
        fs::create_dir_all(&dir)?;
        write_embeddings(&init.matrix, &dir.join("init.vec"))?;
        init.write_provenance(&dir.join("provenance.tsv"))?;
        info!(
            "{s}: {} fromEV, {} fromEM, {} unkSubstituted, {} random",
            init.count(xhembed::combine::Provenance::FromEv),
            init.count(xhembed::combine::Provenance::FromEm),
            init.count(xhembed::combine::Provenance::UnkSubstituted),
            init.count(xhembed::combine::Provenance::Random)
        );
        Ok(init)
    })
}

fn encoded(model: &Seq2Seq<f32>, c: &ParallelCorpus) -> Vec<(Vec<usize>, Vec<usize>)> {
    model.encode_corpus(c)
}

/// Trains the translation model on the first corpus.
pub fn train_mt(cfg: &ExperimentConfig, s: InitStrategy) -> Result<(), CliError> {
    stage(format!("train-mt[{s}]"), || {
        let art = Artifacts::new(&cfg.output);
        let dir = art.strategy_dir(s);
        let init = InitializedEmbeddings::<f32>::read(&dir.join("init.vec"), &dir.join("provenance.tsv"))
            .context("reading initial embeddings (run `init-emb` first)")?;
        let src = Vocabulary::read(&art.source_vocab())?;
        let tgt = Vocabulary::read(&art.target_vocab())?;
        let model = build_model(&cfg.nmt, &src, &init, &tgt)?;
        let train_set = encoded(&model, &load_split(cfg, &art, BIBLE, "train")?);
        let dev_set = encoded(&model, &load_split(cfg, &art, BIBLE, "dev")?);
        let (model, history) = train(model, &train_set, &dev_set, &cfg.train)?;
        info!("{s}: best dev perplexity {:.3} at epoch {}", history.best_dev_perplexity().unwrap_or(f64::NAN), history.best_epoch);
        save_checkpoint(&dir.join("model.ckpt"), &model, &history)?;
        write(&dir.join("history.tsv"), history.to_string())?;
        Ok(())
    })
}

/// Continues training the first-corpus model on the second corpus.
pub fn finetune(cfg: &ExperimentConfig, s: InitStrategy) -> Result<(), CliError> {
    stage(format!("finetune[{s}]"), || {
        let art = Artifacts::new(&cfg.output);
        let dir = art.strategy_dir(s);
        let (model, _) = load_checkpoint::<f32>(&dir.join("model.ckpt")).context("reading model.ckpt (run `train-mt` first)")?;
        let train_set = encoded(&model, &load_split(cfg, &art, SECOND, "train")?);
        let dev_set = encoded(&model, &load_split(cfg, &art, SECOND, "dev")?);
        let (model, history) = fine_tune(model, &train_set, &dev_set, &cfg.finetune)?;
        save_checkpoint(&dir.join("finetuned.ckpt"), &model, &history)?;
        write(&dir.join("finetune_history.tsv"), history.to_string())?;
        Ok(())
    })
}

/// Which checkpoint decodes which test set.
fn checkpoint_for(corpus: &str) -> &'static str {
    if corpus == BIBLE {
        "model.ckpt"
    } else {
        "finetuned.ckpt"
    }
}

/// Decodes a corpus's test split with the strategy's matching checkpoint.
pub fn translate_test(cfg: &ExperimentConfig, s: InitStrategy, corpus: &str) -> Result<PathBuf, CliError> {
    stage(format!("translate[{s}/{corpus}]"), || {
        let art = Artifacts::new(&cfg.output);
        let dir = art.strategy_dir(s);
        let (model, _) = load_checkpoint::<f32>(&dir.join(checkpoint_for(corpus)))?;
        let test = load_split(cfg, &art, corpus, "test")?;
        let sources: Vec<Vec<String>> = test.sources().cloned().collect();
        let hyps = translate(&model, &sources, cfg.nmt.beam, cfg.nmt.max_decode_len, cfg.decode_threads);
        let out = dir.join(format!("{corpus}.test.hyp"));
        write_translations(&out, &hyps)?;
        Ok(out)
    })
}

pub fn evaluate_test(cfg: &ExperimentConfig, s: InitStrategy, corpus: &str) -> Result<BleuReport, CliError> {
    stage(format!("evaluate[{s}/{corpus}]"), || {
        let art = Artifacts::new(&cfg.output);
        let dir = art.strategy_dir(s);
        let (_, reference) = art.split(corpus, "test");
        let report = evaluate_translations(&dir.join(format!("{corpus}.test.hyp")), &reference)?;
        write(&dir.join(format!("{corpus}.bleu.tsv")), report.to_string())?;
        Ok(report)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub strategy: InitStrategy,
    pub bible_corpus_bleu: f64,
    pub bible_sentence_bleu: f64,
    pub second_corpus_bleu: f64,
    pub second_sentence_bleu: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl fmt::Display for ResultsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "strategy\tbible_corpus_bleu\tbible_sentence_bleu\tsecond_corpus_bleu\tsecond_sentence_bleu")?;
        for r in &self.rows {
            writeln!(
                f,
                "{}\t{:.2}\t{:.2}\t{:.2}\t{:.2}",
                r.strategy, r.bible_corpus_bleu, r.bible_sentence_bleu, r.second_corpus_bleu, r.second_sentence_bleu
            )?;
        }
        Ok(())
    }
}

/// init-emb → train-mt → translate → evaluate → finetune → translate → evaluate.
pub fn run_strategy(cfg: &ExperimentConfig, s: InitStrategy) -> Result<ResultRow, CliError> {
    init_emb(cfg, s)?;
    train_mt(cfg, s)?;
    translate_test(cfg, s, BIBLE)?;
    let bible = evaluate_test(cfg, s, BIBLE)?;
    finetune(cfg, s)?;
    translate_test(cfg, s, SECOND)?;
    let second = evaluate_test(cfg, s, SECOND)?;
    Ok(ResultRow {
        strategy: s,
        bible_corpus_bleu: bible.corpus_bleu,
        bible_sentence_bleu: bible.mean_sentence_bleu,
        second_corpus_bleu: second.corpus_bleu,
        second_sentence_bleu: second.mean_sentence_bleu,
    })
}

pub fn manifest(cfg: &ExperimentConfig) -> String {
    let mut out = format!(
        "# xhembed {} experiment manifest; every line below is a valid config setting\n# stages: stats split train-subword build-ev map init-emb train-mt translate evaluate finetune\n",
        env!("CARGO_PKG_VERSION")
    );
    out.push_str(&cfg.to_kv());
    out
}

/// Runs every stage for the configured strategies and writes
/// `results.tsv` and `manifest.txt` under the output directory.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<ResultsTable, CliError> {
    cfg.validate()?;
    let art = Artifacts::new(&cfg.output);
    stage("setup", || Ok(fs::create_dir_all(&art.root)?))?;
    stage("manifest", || write(&art.manifest(), manifest(cfg)))?;
    stats(cfg)?;
    split(cfg)?;
    let any = |f: fn(InitStrategy) -> bool| cfg.strategies.iter().any(|&s| f(s));
    if any(InitStrategy::needs_subword) {
        train_subword(cfg)?;
    }
    if any(InitStrategy::needs_projected) {
        build_ev(cfg)?;
    }
    if any(InitStrategy::needs_mapping) {
        map(cfg)?;
    }
    let rows: Vec<Result<ResultRow, CliError>> = if cfg.deterministic || cfg.strategies.len() == 1 {
        cfg.strategies.iter().map(|&s| run_strategy(cfg, s)).collect()
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = cfg.strategies.iter().map(|&s| scope.spawn(move || run_strategy(cfg, s))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(CliError::Validation("strategy worker panicked".into()))))
                .collect()
        })
    };
    let table = ResultsTable {
        rows: rows.into_iter().collect::<Result<_, _>>()?,
    };
    stage("results", || write(&art.results(), table.to_string()))?;
    Ok(table)
}
