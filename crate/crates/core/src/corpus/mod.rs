//! Parallel corpora: loading, tokenization, vocabularies, splits, and
//! sentence-length statistics.

mod tokenize;
mod vocab;

pub use tokenize::{tokenize, TokenizerSettings};
pub use vocab::{Vocabulary, BOS, EOS, PAD, SPECIALS, UNK};

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One aligned sentence pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParallelCorpus {
    pub name: String,
    pub pairs: Vec<SentencePair>,
}

/// Line accounting for [`load_parallel_corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadReport {
    pub lines: usize,
    pub kept: usize,
    pub dropped: usize,
}

impl fmt::Display for LoadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "lines\t{}", self.lines)?;
        writeln!(f, "kept\t{}", self.kept)?;
        writeln!(f, "dropped\t{}", self.dropped)
    }
}

impl ParallelCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &Vec<String>> {
        self.pairs.iter().map(|p| &p.source)
    }

    pub fn targets(&self) -> impl Iterator<Item = &Vec<String>> {
        self.pairs.iter().map(|p| &p.target)
    }

    /// Builds a corpus from already-tokenized pairs, dropping either-side-empty ones.
    pub fn from_pairs(name: impl Into<String>, pairs: Vec<(Vec<String>, Vec<String>)>) -> Self {
        Self {
            name: name.into(),
            pairs: pairs
                .into_iter()
                .filter(|(s, t)| !s.is_empty() && !t.is_empty())
                .map(|(source, target)| SentencePair { source, target })
                .collect(),
        }
    }

    /// Writes `<dir>/<name>.<tag>.src` and `.tgt`, tokens joined by single spaces.
    pub fn write(&self, dir: &Path, tag: &str) -> Result<(PathBuf, PathBuf)> {
        let src = dir.join(format!("{}.{tag}.src", self.name));
        let tgt = dir.join(format!("{}.{tag}.tgt", self.name));
        write_side(&src, self.sources())?;
        write_side(&tgt, self.targets())?;
        Ok((src, tgt))
    }
}

fn write_side<'a>(path: &Path, sentences: impl Iterator<Item = &'a Vec<String>>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in sentences {
        writeln!(w, "{}", s.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a file as UTF-8 lines, reporting the first undecodable line.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    if bytes.is_empty() {
        return Ok(lines);
    }
    let body = bytes.strip_suffix(b"\n").unwrap_or(&bytes);
    for (i, raw) in body.split(|&b| b == b'\n').enumerate() {
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = std::str::from_utf8(raw)
            .map_err(|e| Error::parse(path, i + 1, format!("invalid UTF-8: {e}")))?;
        lines.push(line.to_string());
    }
    Ok(lines)
}

/// Loads two line-aligned files into a tokenized corpus named after the source file stem.
pub fn load_parallel_corpus(
    src_path: &Path,
    tgt_path: &Path,
    settings: &TokenizerSettings,
) -> Result<(ParallelCorpus, LoadReport)> {
    let src = read_lines(src_path)?;
    let tgt = read_lines(tgt_path)?;
    if src.len() != tgt.len() {
        return Err(Error::LineCountMismatch {
            source_lines: src.len(),
            target_lines: tgt.len(),
        });
    }
    let name = src_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    let mut corpus = ParallelCorpus {
        name,
        pairs: Vec::with_capacity(src.len()),
    };
    let mut report = LoadReport {
        lines: src.len(),
        ..Default::default()
    };
    for (s, t) in src.iter().zip(&tgt) {
        let source = settings.tokenize(s);
        let target = settings.tokenize(t);
        if source.is_empty() || target.is_empty() {
            report.dropped += 1;
        } else {
            corpus.pairs.push(SentencePair { source, target });
        }
    }
    report.kept = corpus.pairs.len();
    Ok((corpus, report))
}

/// Train/dev/test ratios plus shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.7,
            dev: 0.2,
            test: 0.1,
            seed: 1,
        }
    }
}

impl SplitSpec {
    pub fn new(train: f64, dev: f64, test: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            train,
            dev,
            test,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let rs = [self.train, self.dev, self.test];
        if rs.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidArgument(format!("split ratios must be non-negative: {rs:?}")));
        }
        if (rs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("split ratios must sum to 1: {rs:?}")));
        }
        Ok(())
    }

    /// Sizes of the three splits for `n` items: floors for train and dev, remainder to test.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let cut = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
        let train = cut(self.train).min(n);
        let dev = cut(self.dev).min(n - train);
        (train, dev, n - train - dev)
    }
}

/// Seeded Fisher-Yates shuffle followed by a contiguous cut.
pub fn split_corpus(corpus: &ParallelCorpus, spec: &SplitSpec) -> (ParallelCorpus, ParallelCorpus, ParallelCorpus) {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);

    let (n_train, n_dev, _) = spec.sizes(corpus.len());
    let take = |idx: &[usize]| ParallelCorpus {
        name: corpus.name.clone(),
        pairs: idx.iter().map(|&i| corpus.pairs[i].clone()).collect(),
    };
    (
        take(&order[..n_train]),
        take(&order[n_train..n_train + n_dev]),
        take(&order[n_train + n_dev..]),
    )
}

/// Sentence-length statistics for one side.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SideStats {
    pub mean_len: f64,
    pub std_len: f64,
    pub tokens: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CorpusStats {
    pub sentences: usize,
    pub source: SideStats,
    pub target: SideStats,
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "aspect\tsource\ttarget")?;
        writeln!(
            f,
            "sentence_length\t{:.2}±{:.2}\t{:.2}±{:.2}",
            self.source.mean_len, self.source.std_len, self.target.mean_len, self.target.std_len
        )?;
        writeln!(f, "tokens\t{}\t{}", self.source.tokens, self.target.tokens)?;
        writeln!(f, "sentences\t{}", self.sentences)
    }
}

fn side_stats<'a>(lengths: impl Iterator<Item = &'a Vec<String>>) -> SideStats {
    let lens: Vec<usize> = lengths.map(Vec::len).collect();
    if lens.is_empty() {
        return SideStats::default();
    }
    let n = lens.len() as f64;
    let tokens: usize = lens.iter().sum();
    let mean = tokens as f64 / n;
    let var = lens.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n;
    SideStats {
        mean_len: mean,
        std_len: var.sqrt(),
        tokens,
    }
}

/// Population statistics of sentence lengths on both sides.
pub fn corpus_stats(corpus: &ParallelCorpus) -> CorpusStats {
    CorpusStats {
        sentences: corpus.len(),
        source: side_stats(corpus.sources()),
        target: side_stats(corpus.targets()),
    }
}
