//! Flat `key = value` experiment configuration with dotted section keys.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected so that typos surface immediately. Relative paths resolve
//! against the directory holding the config file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use xhembed::combine::InitStrategy;
use xhembed::corpus::{SplitSpec, TokenizerSettings};
use xhembed::nmt::{Seq2SeqConfig, TrainHyper};
use xhembed::subword::SkipgramConfig;
use xhembed::xmap::SelfLearningConfig;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    pub bible_source: Option<PathBuf>,
    pub bible_target: Option<PathBuf>,
    pub second_source: Option<PathBuf>,
    pub second_target: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub paths: Paths,
    pub split: SplitSpec,
    pub tokenizer: TokenizerSettings,
    /// Minimum count for the translation vocabularies.
    pub vocab_min_count: usize,
    pub subword: SkipgramConfig,
    pub mapping: SelfLearningConfig,
    pub nmt: Seq2SeqConfig,
    /// Dimension of the Random strategy's table; `None` uses the
    /// high-resource embedding dimension.
    pub random_dim: Option<usize>,
    pub train: TrainHyper,
    pub finetune: TrainHyper,
    pub strategies: Vec<InitStrategy>,
    pub output: PathBuf,
    /// Serial strategies and single-threaded subword training.
    pub deterministic: bool,
    /// Worker threads used when decoding test sets.
    pub decode_threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            split: SplitSpec::default(),
            tokenizer: TokenizerSettings::default(),
            vocab_min_count: 1,
            subword: SkipgramConfig::default(),
            mapping: SelfLearningConfig::default(),
            nmt: Seq2SeqConfig::default(),
            random_dim: None,
            train: TrainHyper::default(),
            finetune: TrainHyper::fine_tune_default(),
            strategies: InitStrategy::ALL.to_vec(),
            output: PathBuf::from("out"),
            deterministic: false,
            decode_threads: 1,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Validation(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(CliError::Validation(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

pub fn parse_strategies(value: &str) -> Result<Vec<InitStrategy>, CliError> {
    let mut out = Vec::new();
    for name in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let s: InitStrategy = name
            .parse()
            .map_err(|_| CliError::Validation(format!("unknown strategy {name:?}")))?;
        if !out.contains(&s) {
            out.push(s);
        }
    }
    // results are always reported in the canonical order
    out.sort_by_key(|s| InitStrategy::ALL.iter().position(|a| a == s));
    Ok(out)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse_str(&text, base)
    }

    pub fn parse_str(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        // the default output directory sits next to the config, like explicit paths
        cfg.output = base.join(&cfg.output);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Validation(format!("config line {}: expected key = value", i + 1)))?;
            cfg.set(key.trim(), value.trim(), base)?;
        }
        Ok(cfg)
    }

    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), CliError> {
        let path = || Some(base.join(value));
        match key {
            "paths.bible.source" => self.paths.bible_source = path(),
            "paths.bible.target" => self.paths.bible_target = path(),
            "paths.second.source" => self.paths.second_source = path(),
            "paths.second.target" => self.paths.second_target = path(),
            "paths.lexicon" => self.paths.lexicon = path(),
            "paths.embeddings" => self.paths.embeddings = path(),
            "split.train" => self.split.train = parse(key, value)?,
            "split.dev" => self.split.dev = parse(key, value)?,
            "split.test" => self.split.test = parse(key, value)?,
            "split.seed" => self.split.seed = parse(key, value)?,
            "corpus.lowercase" => self.tokenizer.lowercase = parse_bool(key, value)?,
            "corpus.split_punctuation" => self.tokenizer.split_punctuation = parse_bool(key, value)?,
            "corpus.min_count" => self.vocab_min_count = parse(key, value)?,
            "subword.dim" => self.subword.dim = parse(key, value)?,
            "subword.window" => self.subword.window = parse(key, value)?,
            "subword.negatives" => self.subword.negatives = parse(key, value)?,
            "subword.epochs" => self.subword.epochs = parse(key, value)?,
            "subword.learning_rate" => self.subword.learning_rate = parse(key, value)?,
            "subword.subsample" => self.subword.subsample = parse(key, value)?,
            "subword.min_count" => self.subword.min_count = parse(key, value)?,
            "subword.minn" => self.subword.minn = parse(key, value)?,
            "subword.maxn" => self.subword.maxn = parse(key, value)?,
            "subword.buckets" => self.subword.buckets = parse(key, value)?,
            "subword.seed" => self.subword.seed = parse(key, value)?,
            "subword.threads" => self.subword.threads = parse(key, value)?,
            "map.max_iters" => self.mapping.max_iters = parse(key, value)?,
            "map.patience" => self.mapping.patience = parse(key, value)?,
            "map.csls_k" => self.mapping.csls_k = parse(key, value)?,
            "nmt.layers" => {
                let n = parse(key, value)?;
                self.nmt.encoder_layers = n;
                self.nmt.decoder_layers = n;
            }
            "nmt.hidden" => self.nmt.hidden = parse(key, value)?,
            "nmt.random_dim" => self.random_dim = Some(parse(key, value)?),
            "nmt.dropout" => self.nmt.dropout = parse(key, value)?,
            "nmt.beam" => self.nmt.beam = parse(key, value)?,
            "nmt.max_decode_len" => self.nmt.max_decode_len = parse(key, value)?,
            "nmt.seed" => self.nmt.seed = parse(key, value)?,
            "train.learning_rate" => self.train.learning_rate = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.clip_norm" => self.train.clip_norm = parse(key, value)?,
            "train.epochs" => self.train.max_epochs = parse(key, value)?,
            "train.patience" => self.train.patience = parse(key, value)?,
            "train.seed" => self.train.seed = parse(key, value)?,
            "finetune.learning_rate" => self.finetune.learning_rate = parse(key, value)?,
            "finetune.batch_size" => self.finetune.batch_size = parse(key, value)?,
            "finetune.clip_norm" => self.finetune.clip_norm = parse(key, value)?,
            "finetune.epochs" => self.finetune.max_epochs = parse(key, value)?,
            "finetune.patience" => self.finetune.patience = parse(key, value)?,
            "finetune.seed" => self.finetune.seed = parse(key, value)?,
            "run.strategies" => self.strategies = parse_strategies(value)?,
            "run.output" => self.output = base.join(value),
            "run.deterministic" => self.deterministic = parse_bool(key, value)?,
            "run.decode_threads" => self.decode_threads = parse(key, value)?,
            _ => return Err(CliError::Validation(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Sets every seed in the configuration.
    pub fn set_seed(&mut self, seed: u64) {
        self.split.seed = seed;
        self.subword.seed = seed;
        self.nmt.seed = seed;
        self.train.seed = seed;
        self.finetune.seed = seed;
    }

    /// Forces the reproducible execution mode.
    pub fn set_deterministic(&mut self) {
        self.deterministic = true;
        self.subword.threads = 1;
    }

    fn require(&self, key: &str, value: &Option<PathBuf>, why: &str) -> Result<(), CliError> {
        match value {
            None => Err(CliError::Validation(format!("{key} is required {why}"))),
            Some(p) if !p.exists() => Err(CliError::Validation(format!("{key}: {} does not exist", p.display()))),
            Some(_) => Ok(()),
        }
    }

    /// Checks everything a full pipeline run needs.
    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |e: xhembed::Error| CliError::Validation(e.to_string());
        if self.strategies.is_empty() {
            return Err(CliError::Validation("run.strategies must name at least one strategy".into()));
        }
        self.split.validate().map_err(invalid)?;
        self.subword.validate().map_err(invalid)?;
        self.nmt.validate().map_err(invalid)?;
        self.train.validate().map_err(invalid)?;
        self.finetune.validate().map_err(invalid)?;
        let p = &self.paths;
        self.require("paths.bible.source", &p.bible_source, "for every run")?;
        self.require("paths.bible.target", &p.bible_target, "for every run")?;
        self.require("paths.second.source", &p.second_source, "for fine-tuning")?;
        self.require("paths.second.target", &p.second_target, "for fine-tuning")?;
        for s in &self.strategies {
            if s.needs_projected() {
                let why = format!("by strategy {s}");
                self.require("paths.lexicon", &p.lexicon, &why)?;
                self.require("paths.embeddings", &p.embeddings, &why)?;
            }
        }
        if self.random_dim.is_none() && self.strategies.contains(&InitStrategy::Random) {
            self.require("paths.embeddings", &p.embeddings, "to size the Random strategy (or set nmt.random_dim)")?;
        }
        Ok(())
    }

    /// Every setting as `key = value` lines; parseable by [`ExperimentConfig::parse_str`].
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        let p = &self.paths;
        for (k, v) in [
            ("paths.bible.source", &p.bible_source),
            ("paths.bible.target", &p.bible_target),
            ("paths.second.source", &p.second_source),
            ("paths.second.target", &p.second_target),
            ("paths.lexicon", &p.lexicon),
            ("paths.embeddings", &p.embeddings),
        ] {
            if let Some(v) = v {
                put(k, v.display().to_string());
            }
        }
        put("split.train", self.split.train.to_string());
        put("split.dev", self.split.dev.to_string());
        put("split.test", self.split.test.to_string());
        put("split.seed", self.split.seed.to_string());
        put("corpus.lowercase", self.tokenizer.lowercase.to_string());
        put("corpus.split_punctuation", self.tokenizer.split_punctuation.to_string());
        put("corpus.min_count", self.vocab_min_count.to_string());
        let s = &self.subword;
        put("subword.dim", s.dim.to_string());
        put("subword.window", s.window.to_string());
        put("subword.negatives", s.negatives.to_string());
        put("subword.epochs", s.epochs.to_string());
        put("subword.learning_rate", s.learning_rate.to_string());
        put("subword.subsample", s.subsample.to_string());
        put("subword.min_count", s.min_count.to_string());
        put("subword.minn", s.minn.to_string());
        put("subword.maxn", s.maxn.to_string());
        put("subword.buckets", s.buckets.to_string());
        put("subword.seed", s.seed.to_string());
        put("subword.threads", s.threads.to_string());
        put("map.max_iters", self.mapping.max_iters.to_string());
        put("map.patience", self.mapping.patience.to_string());
        put("map.csls_k", self.mapping.csls_k.to_string());
        let n = &self.nmt;
        put("nmt.layers", n.encoder_layers.to_string());
        put("nmt.hidden", n.hidden.to_string());
        if let Some(d) = self.random_dim {
            put("nmt.random_dim", d.to_string());
        }
        put("nmt.dropout", n.dropout.to_string());
        put("nmt.beam", n.beam.to_string());
        put("nmt.max_decode_len", n.max_decode_len.to_string());
        put("nmt.seed", n.seed.to_string());
        for (prefix, h) in [("train", &self.train), ("finetune", &self.finetune)] {
            put(&format!("{prefix}.learning_rate"), h.learning_rate.to_string());
            put(&format!("{prefix}.batch_size"), h.batch_size.to_string());
            put(&format!("{prefix}.clip_norm"), h.clip_norm.to_string());
            put(&format!("{prefix}.epochs"), h.max_epochs.to_string());
            put(&format!("{prefix}.patience"), h.patience.to_string());
            put(&format!("{prefix}.seed"), h.seed.to_string());
        }
        let names: Vec<&str> = self.strategies.iter().map(|s| s.name()).collect();
        put("run.strategies", names.join(","));
        put("run.output", self.output.display().to_string());
        put("run.deterministic", self.deterministic.to_string());
        put("run.decode_threads", self.decode_threads.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::parse_str("nmt.hiden = 64\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("nmt.hiden"));
    }

    #[test]
    fn kv_round_trip() {
        let text = "# comment\nnmt.hidden = 64\nrun.strategies = xhmeta, Random\nsubword.learning_rate = 0.025\npaths.lexicon = lex.tsv\n";
        let cfg = ExperimentConfig::parse_str(text, Path::new("/data")).unwrap();
        assert_eq!(cfg.nmt.hidden, 64);
        assert_eq!(cfg.strategies, vec![InitStrategy::Random, InitStrategy::XhMeta]);
        assert_eq!(cfg.paths.lexicon, Some(PathBuf::from("/data/lex.tsv")));
        let again = ExperimentConfig::parse_str(&cfg.to_kv(), Path::new("/elsewhere")).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn missing_lexicon_is_named() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["a.xh", "a.en", "b.xh", "b.en"] {
            fs::write(dir.path().join(f), "x\n").unwrap();
        }
        let text = "paths.bible.source = a.xh\npaths.bible.target = a.en\npaths.second.source = b.xh\npaths.second.target = b.en\nrun.strategies = XhPre\n";
        let cfg = ExperimentConfig::parse_str(text, dir.path()).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, CliError::Validation(_)));
        assert!(err.to_string().contains("paths.lexicon"), "{err}");
    }
}
