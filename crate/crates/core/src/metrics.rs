//! BLEU: smoothed sentence-level BLEU-4 and standard corpus BLEU.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use crate::corpus::read_lines;
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Clipped n-gram matches and hypothesis n-gram totals for orders 1..=4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NgramCounts {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl NgramCounts {
    pub fn of<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> Self {
        let hyp: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
        let reference: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
        let mut counts = NgramCounts {
            hyp_len: hyp.len(),
            ref_len: reference.len(),
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            let mut ref_grams: HashMap<&[&str], usize> = HashMap::new();
            for g in reference.windows(n) {
                *ref_grams.entry(g).or_default() += 1;
            }
            let mut hyp_grams: HashMap<&[&str], usize> = HashMap::new();
            for g in hyp.windows(n) {
                *hyp_grams.entry(g).or_default() += 1;
            }
            counts.totals[n - 1] = hyp.len().saturating_sub(n - 1);
            counts.matches[n - 1] = hyp_grams
                .iter()
                .map(|(g, &c)| c.min(ref_grams.get(g).copied().unwrap_or(0)))
                .sum();
        }
        counts
    }

    fn add(&mut self, other: &NgramCounts) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }
}

/// `exp(1 - r/c)` when the hypothesis is shorter than the reference, else 1.
pub fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Sentence BLEU on a 0-100 scale.
///
/// Uses order `N = min(4, |hyp|)`; unigram precision is unsmoothed and
/// higher orders use `(matches + 1) / (total + 1)`.
pub fn sentence_bleu<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Empty("reference sentence".into()));
    }
    if hyp.is_empty() {
        return Ok(0.0);
    }
    let c = NgramCounts::of(hyp, reference);
    let order = MAX_ORDER.min(hyp.len());
    let mut log_sum = 0.0;
    for n in 0..order {
        let p = if n == 0 {
            c.matches[0] as f64 / c.totals[0] as f64
        } else {
            (c.matches[n] as f64 + 1.0) / (c.totals[n] as f64 + 1.0)
        };
        if p == 0.0 {
            return Ok(0.0);
        }
        log_sum += p.ln();
    }
    Ok(100.0 * brevity_penalty(c.hyp_len, c.ref_len) * (log_sum / order as f64).exp())
}

/// Corpus BLEU-4 from aggregated counts; 0 if any precision is 0.
pub fn bleu_from_counts(c: &NgramCounts) -> f64 {
    if c.totals.iter().chain(&c.matches).any(|&v| v == 0) {
        return 0.0;
    }
    let log_mean = (0..MAX_ORDER)
        .map(|n| (c.matches[n] as f64 / c.totals[n] as f64).ln())
        .sum::<f64>()
        / MAX_ORDER as f64;
    100.0 * brevity_penalty(c.hyp_len, c.ref_len) * log_mean.exp()
}

fn corpus_counts<S: AsRef<str>, V: AsRef<[S]>>(hyps: &[V], refs: &[V]) -> Result<NgramCounts> {
    if hyps.len() != refs.len() {
        return Err(Error::LineCountMismatch {
            source_lines: hyps.len(),
            target_lines: refs.len(),
        });
    }
    let mut total = NgramCounts::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.add(&NgramCounts::of(h.as_ref(), r.as_ref()));
    }
    Ok(total)
}

/// Standard unsmoothed corpus BLEU-4 on a 0-100 scale.
pub fn corpus_bleu<S: AsRef<str>, V: AsRef<[S]>>(hyps: &[V], refs: &[V]) -> Result<f64> {
    Ok(bleu_from_counts(&corpus_counts(hyps, refs)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    pub corpus_bleu: f64,
    pub mean_sentence_bleu: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub counts: NgramCounts,
    pub sentences: usize,
}

impl BleuReport {
    pub fn compute<S: AsRef<str>, V: AsRef<[S]>>(hyps: &[V], refs: &[V]) -> Result<Self> {
        let counts = corpus_counts(hyps, refs)?;
        let mut sentence_sum = 0.0;
        for (h, r) in hyps.iter().zip(refs) {
            sentence_sum += sentence_bleu(h.as_ref(), r.as_ref())?;
        }
        let precisions = std::array::from_fn(|n| {
            if counts.totals[n] == 0 {
                0.0
            } else {
                counts.matches[n] as f64 / counts.totals[n] as f64
            }
        });
        Ok(Self {
            corpus_bleu: bleu_from_counts(&counts),
            mean_sentence_bleu: if hyps.is_empty() { 0.0 } else { sentence_sum / hyps.len() as f64 },
            precisions,
            brevity_penalty: brevity_penalty(counts.hyp_len, counts.ref_len),
            counts,
            sentences: hyps.len(),
        })
    }
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "metric\tvalue")?;
        writeln!(f, "corpus_bleu\t{:.4}", self.corpus_bleu)?;
        writeln!(f, "mean_sentence_bleu\t{:.4}", self.mean_sentence_bleu)?;
        for (n, p) in self.precisions.iter().enumerate() {
            writeln!(f, "p{}\t{:.6}\t{}/{}", n + 1, p, self.counts.matches[n], self.counts.totals[n])?;
        }
        writeln!(f, "brevity_penalty\t{:.6}", self.brevity_penalty)?;
        writeln!(f, "hyp_tokens\t{}", self.counts.hyp_len)?;
        writeln!(f, "ref_tokens\t{}", self.counts.ref_len)?;
        writeln!(f, "sentences\t{}", self.sentences)?;
        writeln!(f, "beer\tn/a (trained external metric, not computed)")
    }
}

/// Scores a whitespace-tokenized hypothesis file against a reference file.
pub fn evaluate_translations(hyp_path: &Path, ref_path: &Path) -> Result<BleuReport> {
    let split = |lines: Vec<String>| -> Vec<Vec<String>> {
        lines
            .iter()
            .map(|l| l.split_whitespace().map(String::from).collect())
            .collect()
    };
    let hyps = split(read_lines(hyp_path)?);
    let refs = split(read_lines(ref_path)?);
    BleuReport::compute(&hyps, &refs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identity_is_100() {
        assert!((sentence_bleu(&toks("a b c d"), &toks("a b c d")).unwrap() - 100.0).abs() < 1e-9);
        assert!((sentence_bleu(&toks("a"), &toks("a")).unwrap() - 100.0).abs() < 1e-9);
        let c = vec![toks("a b c d e"), toks("x y z w")];
        assert!((corpus_bleu(&c, &c).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn hand_cases() {
        let s = sentence_bleu(&toks("a b c d"), &toks("a b c e")).unwrap();
        assert!((s - 100.0 * 0.1875f64.powf(0.25)).abs() < 1e-9);
        assert_eq!(format!("{s:.2}"), "65.80");
        let s = sentence_bleu(&toks("a"), &toks("a b")).unwrap();
        assert!((s - 100.0 * (-1.0f64).exp()).abs() < 1e-9);
        assert_eq!(format!("{s:.2}"), "36.79");
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(sentence_bleu(&toks(""), &toks("a")).unwrap(), 0.0);
        assert!(sentence_bleu(&toks("a"), &toks("")).is_err());
        assert_eq!(sentence_bleu(&toks("x y"), &toks("a b")).unwrap(), 0.0);
        assert!(corpus_bleu(&[toks("a")], &[toks("a"), toks("b")]).is_err());
    }

    #[test]
    fn single_pair_corpus_is_unsmoothed_sentence() {
        let h = toks("the cat sat on the mat today");
        let r = toks("the cat sat on a mat today");
        let c = NgramCounts::of(&h, &r);
        let expect = 100.0
            * brevity_penalty(7, 7)
            * (0..4).map(|n| c.matches[n] as f64 / c.totals[n] as f64).product::<f64>().powf(0.25);
        assert!((corpus_bleu(&[h], &[r]).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn short_hypothesis_is_penalized() {
        assert!(brevity_penalty(3, 5) < 1.0);
        assert_eq!(brevity_penalty(5, 5), 1.0);
    }

    #[test]
    fn report_is_consistent_and_order_invariant() {
        let hyps = vec![toks("a b c d e"), toks("a b x"), toks("q r s t u v")];
        let refs = vec![toks("a b c d f"), toks("a b c"), toks("q r s t u v w")];
        let r = BleuReport::compute(&hyps, &refs).unwrap();
        assert!((bleu_from_counts(&r.counts) - r.corpus_bleu).abs() < 1e-12);
        let mean = hyps
            .iter()
            .zip(&refs)
            .map(|(h, rf)| sentence_bleu(h, rf).unwrap())
            .sum::<f64>()
            / 3.0;
        assert!((r.mean_sentence_bleu - mean).abs() < 1e-12);
        let (mut h2, mut r2) = (hyps.clone(), refs.clone());
        h2.reverse();
        r2.reverse();
        assert!((corpus_bleu(&h2, &r2).unwrap() - r.corpus_bleu).abs() < 1e-12);
        assert!(r.to_string().contains("beer\tn/a"));
    }

    #[test]
    fn evaluates_files() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("h.txt");
        std::fs::write(&p, "a b c d\ne f g h i\n").unwrap();
        let r = evaluate_translations(&p, &p).unwrap();
        assert!((r.corpus_bleu - 100.0).abs() < 1e-9);
        assert!((r.mean_sentence_bleu - 100.0).abs() < 1e-9);
    }
}
