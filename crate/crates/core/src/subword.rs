//! Subword-informed skip-gram embeddings.
//!
//! Words are represented by hashed character n-grams (lengths `minn..=maxn`
//! of the word wrapped in `<` `>`) plus, for in-vocabulary words, a
//! whole-word row. A word vector is the mean of its unit rows, so any
//! non-empty string gets a vector.

use std::cell::UnsafeCell;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Vocabulary, SPECIALS};
use crate::embedstore::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

pub const DEFAULT_MINN: usize = 3;
pub const DEFAULT_MAXN: usize = 6;
pub const DEFAULT_BUCKETS: usize = 100_000;

/// Character n-grams of a wrapped word, ordered by length then position,
/// plus the wrapped word itself as a separate whole-word unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ngrams {
    pub ngrams: Vec<String>,
    pub whole: String,
}

pub fn extract_ngrams(word: &str, minn: usize, maxn: usize) -> Ngrams {
    let whole = format!("<{word}>");
    let chars: Vec<char> = whole.chars().collect();
    let mut ngrams = Vec::new();
    for n in minn.max(1)..=maxn.min(chars.len()) {
        for start in 0..=chars.len() - n {
            ngrams.push(chars[start..start + n].iter().collect());
        }
    }
    Ngrams { ngrams, whole }
}

pub fn fnv1a32(bytes: &[u8]) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for &b in bytes {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

/// Bucket of an n-gram: FNV-1a (32-bit) of its UTF-8 bytes modulo `buckets`.
pub fn ngram_bucket(ngram: &str, buckets: usize) -> usize {
    assert!(buckets >= 1, "bucket count must be positive");
    fnv1a32(ngram.as_bytes()) as usize % buckets
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkipgramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub subsample: f64,
    pub min_count: usize,
    pub minn: usize,
    pub maxn: usize,
    pub buckets: usize,
    pub seed: u64,
    /// 1 selects the deterministic single-worker mode.
    pub threads: usize,
}

impl Default for SkipgramConfig {
    fn default() -> Self {
        Self {
            dim: 300,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.05,
            subsample: 1e-4,
            min_count: 1,
            minn: DEFAULT_MINN,
            maxn: DEFAULT_MAXN,
            buckets: DEFAULT_BUCKETS,
            seed: 1,
            threads: 1,
        }
    }
}

impl SkipgramConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.dim == 0 {
            return bad("subword dim must be positive");
        }
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if self.negatives == 0 {
            return bad("negatives must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.buckets == 0 {
            return bad("bucket count must be positive");
        }
        if self.minn == 0 || self.minn > self.maxn {
            return bad("n-gram lengths must satisfy 1 <= minn <= maxn");
        }
        Ok(())
    }
}

/// Input rows are laid out as `[0, |vocab|)` whole-word rows followed by
/// `buckets` n-gram rows. Output rows index the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct SubwordModel<T> {
    vocab: Vocabulary,
    minn: usize,
    maxn: usize,
    buckets: usize,
    input: Array2<T>,
    output: Array2<T>,
}

impl<T: Scalar> SubwordModel<T> {
    /// Model with input rows uniform in `±1/dim` and zero output rows.
    pub fn init(vocab: Vocabulary, dim: usize, minn: usize, maxn: usize, buckets: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / dim as f64;
        let rows = vocab.len() + buckets;
        let input = Array2::from_shape_simple_fn((rows, dim), || T::of(rng.gen_range(-bound..bound)));
        let output = Array2::zeros((vocab.len(), dim));
        Self {
            vocab,
            minn,
            maxn,
            buckets,
            input,
            output,
        }
    }

    pub fn from_parts(
        vocab: Vocabulary,
        minn: usize,
        maxn: usize,
        buckets: usize,
        input: Array2<T>,
        output: Array2<T>,
    ) -> Result<Self> {
        if input.nrows() != vocab.len() + buckets || output.nrows() != vocab.len() {
            return Err(Error::InvalidArgument("subword model shapes disagree with vocabulary".into()));
        }
        if input.ncols() != output.ncols() {
            return Err(Error::DimensionMismatch {
                expected: input.ncols(),
                got: output.ncols(),
            });
        }
        Ok(Self {
            vocab,
            minn,
            maxn,
            buckets,
            input: input.as_standard_layout().into_owned(),
            output: output.as_standard_layout().into_owned(),
        })
    }

    pub fn dim(&self) -> usize {
        self.input.ncols()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn input(&self) -> &Array2<T> {
        &self.input
    }

    pub fn input_mut(&mut self) -> &mut Array2<T> {
        &mut self.input
    }

    pub fn output(&self) -> &Array2<T> {
        &self.output
    }

    pub fn output_mut(&mut self) -> &mut Array2<T> {
        &mut self.output
    }

    /// Input-row indices composing `word`: one per n-gram occurrence, plus
    /// the whole-word row when `word` is a non-special vocabulary entry.
    pub fn units(&self, word: &str) -> Vec<usize> {
        let grams = extract_ngrams(word, self.minn, self.maxn);
        let offset = self.vocab.len();
        let mut units: Vec<usize> = grams
            .ngrams
            .iter()
            .map(|g| offset + ngram_bucket(g, self.buckets))
            .collect();
        if let Some(id) = self.vocab.get(word) {
            if !Vocabulary::is_special(id) {
                units.push(id);
            }
        }
        units
    }

    fn mean_of_rows(&self, units: &[usize]) -> Vec<T> {
        let mut v = vec![T::zero(); self.dim()];
        for &u in units {
            for (a, &b) in v.iter_mut().zip(self.input.row(u)) {
                *a += b;
            }
        }
        if !units.is_empty() {
            let n = T::of(units.len() as f64);
            v.iter_mut().for_each(|a| *a /= n);
        }
        v
    }

    /// Mean of the word's unit rows. Never fails; OOV words use n-grams only.
    pub fn compose_word_vector(&self, word: &str) -> Vec<T> {
        self.mean_of_rows(&self.units(word))
    }

    /// Matrix with one composed row per distinct token, in first-seen order.
    pub fn export<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> EmbeddingMatrix<T> {
        let mut seen = std::collections::HashSet::new();
        let rows: Vec<(String, Vec<T>)> = words
            .into_iter()
            .filter(|w| !w.is_empty() && seen.insert(w.to_string()))
            .map(|w| (w.to_string(), self.compose_word_vector(w)))
            .collect();
        EmbeddingMatrix::from_rows(self.dim(), rows).expect("composed rows have model dim")
    }

    /// Exports every non-special vocabulary word.
    pub fn export_vocab(&self) -> EmbeddingMatrix<T> {
        self.export(self.vocab.words().map(|(_, w)| w))
    }

    /// Negative-sampling loss of one `(units, context, negatives)` example:
    /// `-log σ(h·o_c) - Σ log σ(-h·o_n)`, with `h` the mean of the unit rows.
    pub fn negative_sampling_loss(&self, units: &[usize], context: usize, negatives: &[usize]) -> T {
        let h = self.mean_of_rows(units);
        let mut loss = softplus(-dot(&h, self.output.row(context).as_slice().unwrap()));
        for &n in negatives {
            loss += softplus(dot(&h, self.output.row(n).as_slice().unwrap()));
        }
        loss
    }

    /// Analytic gradient of [`Self::negative_sampling_loss`] with respect to
    /// every input and output row it touches (accumulated over repeats).
    pub fn negative_sampling_grad(&self, units: &[usize], context: usize, negatives: &[usize]) -> NsGradient<T> {
        let dim = self.dim();
        let h = self.mean_of_rows(units);
        let mut grad_h = vec![T::zero(); dim];
        let mut output: Vec<(usize, Vec<T>)> = Vec::new();
        let targets = std::iter::once((context, true)).chain(negatives.iter().map(|&n| (n, false)));
        for (id, positive) in targets {
            let o = self.output.row(id);
            let s = dot(&h, o.as_slice().unwrap());
            let label = if positive { T::one() } else { T::zero() };
            let d = sigmoid(s) - label;
            for (g, &ov) in grad_h.iter_mut().zip(o.iter()) {
                *g += d * ov;
            }
            let row: Vec<T> = h.iter().map(|&x| d * x).collect();
            match output.iter_mut().find(|(i, _)| *i == id) {
                Some((_, acc)) => acc.iter_mut().zip(&row).for_each(|(a, &b)| *a += b),
                None => output.push((id, row)),
            }
        }
        let scale = T::one() / T::of(units.len() as f64);
        let mut input: Vec<(usize, Vec<T>)> = Vec::new();
        for &u in units {
            match input.iter_mut().find(|(i, _)| *i == u) {
                Some((_, acc)) => acc.iter_mut().zip(&grad_h).for_each(|(a, &g)| *a += g * scale),
                None => input.push((u, grad_h.iter().map(|&g| g * scale).collect())),
            }
        }
        NsGradient { input, output }
    }

    /// Writes the full model (vocabulary, shapes and both matrices) as text.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(
            w,
            "subword-model {} {} {} {} {}",
            self.vocab.len(),
            self.dim(),
            self.minn,
            self.maxn,
            self.buckets
        )
        .map_err(io)?;
        for (i, tok) in self.vocab.tokens().iter().enumerate() {
            writeln!(w, "{tok}\t{}", self.vocab.freq(i)).map_err(io)?;
        }
        for m in [&self.input, &self.output] {
            for row in m.rows() {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(w, "{}", line.join(" ")).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::parse(path, 1, "empty model file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 6 || fields[0] != "subword-model" {
            return Err(Error::parse(path, 1, "expected `subword-model V D MINN MAXN B` header"));
        }
        let num = |i: usize| -> Result<usize> {
            fields[i]
                .parse()
                .map_err(|_| Error::parse(path, 1, format!("bad header field {:?}", fields[i])))
        };
        let (v, dim, minn, maxn, buckets) = (num(1)?, num(2)?, num(3)?, num(4)?, num(5)?);
        let vocab_text: Vec<&str> = lines.by_ref().take(v).collect();
        let vocab = Vocabulary::parse(&(vocab_text.join("\n") + "\n"), path)?;
        let mut read_matrix = |rows: usize, first_line: usize| -> Result<Array2<T>> {
            let mut flat = Vec::with_capacity(rows * dim);
            for r in 0..rows {
                let lineno = first_line + r;
                let line = lines.next().ok_or_else(|| Error::parse(path, lineno, "truncated model"))?;
                let before = flat.len();
                for f in line.split_whitespace() {
                    flat.push(
                        f.parse::<T>()
                            .map_err(|_| Error::parse(path, lineno, format!("bad value {f:?}")))?,
                    );
                }
                if flat.len() - before != dim {
                    return Err(Error::parse(path, lineno, format!("expected {dim} values")));
                }
            }
            Ok(Array2::from_shape_vec((rows, dim), flat).expect("counted"))
        };
        let input = read_matrix(v + buckets, v + 2)?;
        let output = read_matrix(v, 2 * v + buckets + 2)?;
        Self::from_parts(vocab, minn, maxn, buckets, input, output)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NsGradient<T> {
    pub input: Vec<(usize, Vec<T>)>,
    pub output: Vec<(usize, Vec<T>)>,
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `ln(1 + e^x)`, stable for large |x|.
#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    pub tokens_per_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingReport {
    pub epochs: Vec<EpochReport>,
}

impl fmt::Display for TrainingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "epoch\ttokens_per_sec\tmean_loss")?;
        for e in &self.epochs {
            writeln!(f, "{}\t{:.1}\t{:.6}", e.epoch, e.tokens_per_sec, e.mean_loss)?;
        }
        Ok(())
    }
}

/// Shared parameter buffer for lock-free parallel SGD.
///
/// Workers read and write rows without synchronization; lost or torn
/// updates are tolerated in parallel mode. With one worker there is no
/// concurrent access.
struct Hogwild<T> {
    cell: UnsafeCell<Array2<T>>,
}

unsafe impl<T: Send> Sync for Hogwild<T> {}

impl<T: Scalar> Hogwild<T> {
    fn new(a: Array2<T>) -> Self {
        Self { cell: UnsafeCell::new(a) }
    }

    #[allow(clippy::mut_from_ref)]
    fn row(&self, i: usize) -> &mut [T] {
        // SAFETY: the array is never reallocated while shared; row slices are
        // in bounds. Concurrent writers may race on values (Hogwild).
        unsafe {
            let a = &mut *self.cell.get();
            let dim = a.ncols();
            let ptr = a.as_mut_ptr().add(i * dim);
            std::slice::from_raw_parts_mut(ptr, dim)
        }
    }

    fn into_inner(self) -> Array2<T> {
        self.cell.into_inner()
    }
}

struct Trainer<'a, T> {
    config: &'a SkipgramConfig,
    input: Hogwild<T>,
    output: Hogwild<T>,
    units: Vec<Vec<usize>>,
    keep_prob: Vec<f64>,
    negatives: WeightedIndex<f64>,
    total_work: f64,
    threads: usize,
}

struct WorkerStats {
    loss: f64,
    examples: usize,
    tokens: usize,
}

impl<T: Scalar> Trainer<'_, T> {
    fn worker(&self, sentences: &[Vec<usize>], rng: &mut ChaCha8Rng, done_before: usize) -> WorkerStats {
        let cfg = self.config;
        let dim = self.input.row(0).len();
        let mut h = vec![T::zero(); dim];
        let mut grad_h = vec![T::zero(); dim];
        let mut stats = WorkerStats {
            loss: 0.0,
            examples: 0,
            tokens: 0,
        };
        let mut kept = Vec::new();
        for sentence in sentences {
            let progress = ((done_before + stats.tokens) * self.threads) as f64 / self.total_work;
            let lr = T::of(cfg.learning_rate * (1.0 - progress).max(1e-4));
            stats.tokens += sentence.len();

            kept.clear();
            kept.extend(
                sentence
                    .iter()
                    .copied()
                    .filter(|&w| rng.gen::<f64>() < self.keep_prob[w]),
            );
            for (pos, &center) in kept.iter().enumerate() {
                let radius = rng.gen_range(1..=cfg.window);
                let units = &self.units[center];
                let lo = pos.saturating_sub(radius);
                let hi = (pos + radius).min(kept.len() - 1);
                for (cpos, &context) in kept.iter().enumerate().take(hi + 1).skip(lo) {
                    if cpos == pos {
                        continue;
                    }
                    h.iter_mut().for_each(|x| *x = T::zero());
                    for &u in units {
                        for (a, &b) in h.iter_mut().zip(self.input.row(u).iter()) {
                            *a += b;
                        }
                    }
                    let inv = T::one() / T::of(units.len() as f64);
                    h.iter_mut().for_each(|x| *x *= inv);
                    grad_h.iter_mut().for_each(|g| *g = T::zero());

                    let mut loss = T::zero();
                    for k in 0..=cfg.negatives {
                        let (target, label) = if k == 0 {
                            (context, T::one())
                        } else {
                            let Some(n) = self.sample_negative(context, rng) else {
                                break;
                            };
                            (n, T::zero())
                        };
                        let out = self.output.row(target);
                        let s = dot(&h, out);
                        loss += if k == 0 { softplus(-s) } else { softplus(s) };
                        let g = (label - sigmoid(s)) * lr;
                        for ((gh, o), &hv) in grad_h.iter_mut().zip(out.iter_mut()).zip(&h) {
                            *gh += g * *o;
                            *o += g * hv;
                        }
                    }
                    for &u in units {
                        for (a, &g) in self.input.row(u).iter_mut().zip(&grad_h) {
                            *a += g * inv;
                        }
                    }
                    stats.loss += loss.to_f64_lossy();
                    stats.examples += 1;
                }
            }
        }
        stats
    }

    fn sample_negative(&self, context: usize, rng: &mut ChaCha8Rng) -> Option<usize> {
        // ids in the weighted index are offset by the specials
        for _ in 0..64 {
            let n = self.negatives.sample(rng) + SPECIALS.len();
            if n != context {
                return Some(n);
            }
        }
        None
    }
}

/// Trains a subword skip-gram model with negative sampling on one side of a corpus.
pub fn train_skipgram<T: Scalar, S: AsRef<[String]>>(
    sentences: &[S],
    config: &SkipgramConfig,
) -> Result<(SubwordModel<T>, TrainingReport)> {
    config.validate()?;
    let vocab = Vocabulary::build(sentences.iter(), config.min_count);
    if vocab.is_empty() {
        return Err(Error::Empty("vocabulary is empty after min_count filtering".into()));
    }
    let encoded: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| s.as_ref().iter().filter_map(|t| vocab.get(t)).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect();
    let total_tokens: usize = encoded.iter().map(Vec::len).sum();

    let mut model = SubwordModel::<T>::init(
        vocab,
        config.dim,
        config.minn,
        config.maxn,
        config.buckets,
        config.seed,
    );
    let vocab = &model.vocab;
    let units: Vec<Vec<usize>> = vocab.tokens().iter().map(|t| model.units(t)).collect();
    let keep_prob: Vec<f64> = (0..vocab.len())
        .map(|i| {
            let f = vocab.freq(i) as f64 / total_tokens.max(1) as f64;
            if f == 0.0 || config.subsample <= 0.0 {
                1.0
            } else {
                let r = config.subsample / f;
                (r.sqrt() + r).min(1.0)
            }
        })
        .collect();
    let weights: Vec<f64> = vocab.words().map(|(i, _)| (vocab.freq(i) as f64).powf(0.75)).collect();
    let negatives = WeightedIndex::new(&weights).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let input = std::mem::take(&mut model.input);
    let output = std::mem::take(&mut model.output);
    let trainer = Trainer {
        config,
        input: Hogwild::new(input),
        output: Hogwild::new(output),
        units,
        keep_prob,
        negatives,
        total_work: (config.epochs.max(1) * total_tokens.max(1)) as f64,
        threads: config.threads.max(1),
    };

    let threads = trainer.threads;
    let mut rngs: Vec<ChaCha8Rng> = (0..threads)
        .map(|w| ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1).wrapping_mul(0x9e37_79b9).wrapping_add(w as u64)))
        .collect();
    let shards: Vec<Vec<Vec<usize>>> = (0..threads)
        .map(|w| encoded.iter().skip(w).step_by(threads).cloned().collect())
        .collect();

    let mut report = TrainingReport::default();
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let done_before = epoch * total_tokens / threads;
        let stats: Vec<WorkerStats> = if threads == 1 {
            vec![trainer.worker(&shards[0], &mut rngs[0], done_before)]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = shards
                    .iter()
                    .zip(rngs.iter_mut())
                    .map(|(shard, rng)| {
                        let trainer = &trainer;
                        scope.spawn(move || trainer.worker(shard, rng, done_before))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            })
        };
        let (loss, examples, tokens) = stats
            .iter()
            .fold((0.0, 0, 0), |acc, s| (acc.0 + s.loss, acc.1 + s.examples, acc.2 + s.tokens));
        let secs = started.elapsed().as_secs_f64().max(1e-9);
        report.epochs.push(EpochReport {
            epoch: epoch + 1,
            mean_loss: if examples == 0 { 0.0 } else { loss / examples as f64 },
            tokens_per_sec: tokens as f64 / secs,
        });
    }

    model.input = trainer.input.into_inner();
    model.output = trainer.output.into_inner();
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight transcription of the published FNV-1a constants, byte loop over `&str`.
    fn fnv_oracle(s: &str) -> u64 {
        let mut hash: u64 = 2166136261;
        for b in s.bytes() {
            hash ^= u64::from(b);
            hash = (hash * 16777619) % (1u64 << 32);
        }
        hash
    }

    #[test]
    fn ngrams_of_man() {
        let g = extract_ngrams("man", 3, 6);
        assert_eq!(g.ngrams, ["<ma", "man", "an>", "<man", "man>", "<man>"]);
        assert_eq!(g.whole, "<man>");
    }

    #[test]
    fn ngrams_of_single_char() {
        let g = extract_ngrams("a", 3, 6);
        assert_eq!(g.ngrams, ["<a>"]);
        assert_eq!(g.whole, "<a>");
        let g = extract_ngrams("abc", 5, 5);
        assert_eq!(g.ngrams, ["<abc>"]);
    }

    #[test]
    fn ngrams_count_chars_not_bytes() {
        let g = extract_ngrams("\u{e9}", 3, 3);
        assert_eq!(g.ngrams, ["<\u{e9}>"]);
    }

    #[test]
    fn fnv_known_vectors() {
        assert_eq!(fnv1a32(b""), 0x811c9dc5);
        assert_eq!(fnv1a32(b"a"), 0xe40c292c);
        assert_eq!(fnv1a32(b"foobar"), 0xbf9cf968);
    }

    #[test]
    fn buckets_match_oracle() {
        let words = ["indoda", "abantu", "umntwana", "ihamba", "bethuna", "izinto", "ndiyabulela", "kakhulu", "molo", "\u{e9}t\u{e9}"];
        let grams: Vec<String> = words
            .iter()
            .flat_map(|w| extract_ngrams(w, 3, 6).ngrams)
            .take(100)
            .collect();
        assert_eq!(grams.len(), 100);
        for g in &grams {
            for b in [1usize, 7, 2_000_000, 100_000] {
                assert_eq!(ngram_bucket(g, b) as u64, fnv_oracle(g) % b as u64, "{g} B={b}");
            }
            assert_eq!(ngram_bucket(g, 1), 0);
            assert_eq!(ngram_bucket(g, 97), ngram_bucket(g, 97));
        }
    }

    fn toy_vocab(words: &[&str]) -> Vocabulary {
        let side: Vec<Vec<String>> = vec![words.iter().map(|w| w.to_string()).collect()];
        Vocabulary::build(side.iter(), 1)
    }

    #[test]
    fn compose_single_unit_and_two_units() {
        // One bucket: every n-gram hits row |V|.
        let vocab = toy_vocab(&["a"]);
        let mut m = SubwordModel::<f64>::init(vocab, 2, 3, 6, 1, 0);
        m.input_mut().row_mut(4).assign(&ndarray::arr1(&[1.0, 3.0]));
        m.input_mut().row_mut(5).assign(&ndarray::arr1(&[5.0, -1.0]));
        // OOV "b" -> "<b>" one unit = bucket row
        assert_eq!(m.units("b"), vec![5]);
        assert_eq!(m.compose_word_vector("b"), vec![5.0, -1.0]);
        // in-vocab "a" -> bucket row + whole-word row, 2 units
        assert_eq!(m.units("a"), vec![5, 4]);
        assert_eq!(m.compose_word_vector("a"), vec![3.0, 1.0]);
    }

    #[test]
    fn compose_is_total_for_oov() {
        let m = SubwordModel::<f32>::init(toy_vocab(&["man"]), 8, 3, 6, 50, 3);
        for w in ["x", "zzzzzzzzzzzzzzzz", "\u{1F600}", "<>"] {
            let v = m.compose_word_vector(w);
            assert_eq!(v.len(), 8);
            assert!(v.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn export_rows_equal_composition() {
        let m = SubwordModel::<f64>::init(toy_vocab(&["man", "men", "woman"]), 5, 3, 6, 30, 9);
        let e = m.export(["man", "women", "man", "x"]);
        assert_eq!(e.tokens(), ["man", "women", "x"]);
        for t in e.tokens() {
            assert_eq!(e.get(t).unwrap(), m.compose_word_vector(t).as_slice());
        }
    }

    #[test]
    fn ns_gradient_matches_central_differences() {
        let vocab = toy_vocab(&["walka", "walkb", "jump", "run", "the"]);
        let mut m = SubwordModel::<f64>::init(vocab, 6, 3, 6, 13, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        m.output_mut().mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        m.input_mut().mapv_inplace(|v| v * 20.0);
        let units = m.units("walka");
        let context = m.vocab().get("jump").unwrap();
        let negatives = [m.vocab().get("run").unwrap(), m.vocab().get("the").unwrap(), 5];
        let grad = m.negative_sampling_grad(&units, context, &negatives);

        let mut worst: f64 = 0.0;
        let check = |analytic: f64, numeric: f64| {
            let denom = analytic.abs().max(numeric.abs());
            if denom == 0.0 { 0.0 } else { (analytic - numeric).abs() / denom }
        };
        for (row, g) in &grad.input {
            for d in 0..m.dim() {
                let base = m.input()[[*row, d]];
                let h = 1e-5 * base.abs().max(1.0);
                m.input_mut()[[*row, d]] = base + h;
                let up = m.negative_sampling_loss(&units, context, &negatives);
                m.input_mut()[[*row, d]] = base - h;
                let down = m.negative_sampling_loss(&units, context, &negatives);
                m.input_mut()[[*row, d]] = base;
                worst = worst.max(check(g[d], (up - down) / (2.0 * h)));
            }
        }
        for (row, g) in &grad.output {
            for d in 0..m.dim() {
                let base = m.output()[[*row, d]];
                let h = 1e-5 * base.abs().max(1.0);
                m.output_mut()[[*row, d]] = base + h;
                let up = m.negative_sampling_loss(&units, context, &negatives);
                m.output_mut()[[*row, d]] = base - h;
                let down = m.negative_sampling_loss(&units, context, &negatives);
                m.output_mut()[[*row, d]] = base;
                worst = worst.max(check(g[d], (up - down) / (2.0 * h)));
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn empty_vocab_is_an_error() {
        let cfg = SkipgramConfig { min_count: 5, dim: 4, buckets: 10, ..Default::default() };
        let corpus = vec![vec!["a".to_string(), "b".to_string()]];
        assert!(matches!(train_skipgram::<f32, _>(&corpus, &cfg), Err(Error::Empty(_))));
    }

    #[test]
    fn invalid_config_rejected() {
        let corpus = vec![vec!["a".to_string()]];
        for cfg in [
            SkipgramConfig { window: 0, ..Default::default() },
            SkipgramConfig { negatives: 0, ..Default::default() },
            SkipgramConfig { learning_rate: 0.0, ..Default::default() },
        ] {
            assert!(train_skipgram::<f32, _>(&corpus, &cfg).is_err());
        }
    }

    #[test]
    fn save_load_round_trip() {
        let corpus: Vec<Vec<String>> = (0..20)
            .map(|i| vec![format!("w{}", i % 7), format!("v{}", i % 3), "x".into()])
            .collect();
        let cfg = SkipgramConfig { dim: 4, buckets: 17, epochs: 2, ..Default::default() };
        let (m, _) = train_skipgram::<f32, _>(&corpus, &cfg).unwrap();
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("m.sub");
        m.save(&p).unwrap();
        assert_eq!(SubwordModel::<f32>::load(&p).unwrap(), m);
    }
}
