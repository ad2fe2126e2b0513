use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use super::tape::Graph;
use super::{source_mask, Seq2Seq};
use crate::corpus::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Encoder outputs for a single source sentence.
#[derive(Debug, Clone)]
pub struct EncodedSource<T> {
    outputs: Vec<Array2<T>>,
    mask: Array2<T>,
    init: Vec<Array2<T>>,
}

/// Per-layer decoder states (each 1×hidden).
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState<T> {
    pub layers: Vec<Array2<T>>,
}

#[derive(Debug, Clone)]
pub struct BeamHypothesis<T> {
    /// Starts with BOS; ends with EOS once finished.
    pub tokens: Vec<usize>,
    pub log_prob: T,
    /// State after consuming every token but the last.
    pub state: DecoderState<T>,
}

impl<T> BeamHypothesis<T> {
    pub fn is_finished(&self) -> bool {
        self.tokens.len() > 1 && self.tokens.last() == Some(&EOS)
    }

    /// Generated tokens without the BOS/EOS framing.
    pub fn output(&self) -> Vec<usize> {
        let end = if self.is_finished() { self.tokens.len() - 1 } else { self.tokens.len() };
        self.tokens[1..end].to_vec()
    }
}

/// Tokens the decoder may emit.
fn emittable(id: usize) -> bool {
    id != PAD && id != BOS
}

fn log_softmax<T: Scalar>(row: ndarray::ArrayView1<'_, T>) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + row.iter().map(|&x| (x - max).exp()).fold(T::zero(), |a, b| a + b).ln();
    row.iter().map(|&x| x - lse).collect()
}

impl<T: Scalar> Seq2Seq<T> {
    pub fn encode_source(&self, source: &[usize]) -> EncodedSource<T> {
        let ids = Array2::from_shape_vec((1, source.len()), source.to_vec()).expect("row vector");
        let mut g = Graph::new(self.params());
        let enc = self.encode_graph(&mut g, &ids, &[source.len()], &mut None);
        EncodedSource {
            outputs: enc.outputs.iter().map(|&n| g.value(n).to_owned()).collect(),
            mask: source_mask(&[source.len()], source.len()),
            init: enc.init.iter().map(|&n| g.value(n).to_owned()).collect(),
        }
    }

    pub fn initial_state(&self, enc: &EncodedSource<T>) -> DecoderState<T> {
        DecoderState {
            layers: enc.init.clone(),
        }
    }

    /// Feeds `prev` to the decoder; returns log-probabilities over the target
    /// vocabulary and the next state.
    pub fn step(&self, enc: &EncodedSource<T>, state: &DecoderState<T>, prev: usize) -> (Vec<T>, DecoderState<T>) {
        let mut g = Graph::new(self.params());
        let outs: Vec<_> = enc.outputs.iter().map(|o| g.input(o)).collect();
        let states: Vec<_> = state.layers.iter().map(|s| g.input(s)).collect();
        let (next, logits) = self.decoder_step(&mut g, &outs, &enc.mask, &states, &[prev], &mut None);
        let lp = log_softmax(g.value(logits).row(0));
        let layers = next.iter().map(|&n| g.value(n).to_owned()).collect();
        (lp, DecoderState { layers })
    }

    /// Picks the most probable token at every step until EOS or `max_len`
    /// tokens. Ties go to the lower id.
    pub fn greedy_decode(&self, source: &[usize], max_len: usize) -> Vec<usize> {
        let enc = self.encode_source(source);
        let mut state = self.initial_state(&enc);
        let mut prev = BOS;
        let mut out = Vec::new();
        for _ in 0..max_len {
            let (lp, next) = self.step(&enc, &state, prev);
            let best = (0..lp.len())
                .filter(|&i| emittable(i))
                .fold(EOS, |b, i| if lp[i] > lp[b] || (lp[i] == lp[b] && i < b) { i } else { b });
            if best == EOS {
                break;
            }
            out.push(best);
            state = next;
            prev = best;
        }
        out
    }

    /// Beam search over cumulative log-probability without length
    /// normalisation. At each step every live hypothesis is extended by every
    /// emittable token and the best `beam` candidates are kept; EOS-terminated
    /// ones move to the finished pool. The search stops once the pool's best
    /// score is at least the best live score (scores only decrease), or after
    /// `max_len` tokens, where finished and live hypotheses compete.
    pub fn beam_search(&self, source: &[usize], beam: usize, max_len: usize) -> BeamHypothesis<T> {
        let beam = beam.max(1);
        let enc = self.encode_source(source);
        let mut live = vec![BeamHypothesis {
            tokens: vec![BOS],
            log_prob: T::zero(),
            state: self.initial_state(&enc),
        }];
        let mut finished: Vec<BeamHypothesis<T>> = Vec::new();
        for _ in 0..max_len {
            let expanded: Vec<(Vec<T>, DecoderState<T>)> = live
                .iter()
                .map(|h| self.step(&enc, &h.state, *h.tokens.last().unwrap()))
                .collect();
            let mut cands: Vec<(T, usize, usize)> = Vec::new();
            for (hi, (lp, _)) in expanded.iter().enumerate() {
                for (tok, &v) in lp.iter().enumerate() {
                    if emittable(tok) {
                        cands.push((live[hi].log_prob + v, hi, tok));
                    }
                }
            }
            cands.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.1.cmp(&b.1))
                    .then(a.2.cmp(&b.2))
            });
            let mut next = Vec::with_capacity(beam);
            for &(score, hi, tok) in cands.iter().take(beam) {
                let mut tokens = live[hi].tokens.clone();
                tokens.push(tok);
                let h = BeamHypothesis {
                    tokens,
                    log_prob: score,
                    state: expanded[hi].1.clone(),
                };
                if tok == EOS {
                    finished.push(h);
                } else {
                    next.push(h);
                }
            }
            live = next;
            let Some(best_live) = live.first().map(|h| h.log_prob) else { break };
            if best(&finished).is_some_and(|f| f.log_prob >= best_live) {
                break;
            }
        }
        let pool_best = best(&finished).cloned();
        let live_best = live.into_iter().next();
        match (pool_best, live_best) {
            (Some(f), Some(l)) if l.log_prob > f.log_prob => l,
            (Some(f), _) => f,
            (None, Some(l)) => l,
            (None, None) => unreachable!("a step always yields a candidate"),
        }
    }

    /// Log-probability of emitting `tokens` (generated tokens, EOS included
    /// if present) after `source`.
    pub fn sequence_log_prob(&self, source: &[usize], tokens: &[usize]) -> T {
        let enc = self.encode_source(source);
        let mut state = self.initial_state(&enc);
        let mut prev = BOS;
        let mut total = T::zero();
        for &tok in tokens {
            let (lp, next) = self.step(&enc, &state, prev);
            total += lp[tok];
            state = next;
            prev = tok;
        }
        total
    }

    /// Decodes one tokenised sentence to a space-joined string.
    pub fn translate_sentence(&self, source: &[String], beam: usize, max_len: usize) -> String {
        let ids = self.source_vocab().encode(source);
        let out = if beam == 1 {
            self.greedy_decode(&ids, max_len)
        } else {
            self.beam_search(&ids, beam, max_len).output()
        };
        self.target_vocab().decode(&out).join(" ")
    }
}

fn best<T: Scalar>(pool: &[BeamHypothesis<T>]) -> Option<&BeamHypothesis<T>> {
    pool.iter()
        .fold(None, |acc: Option<&BeamHypothesis<T>>, h| match acc {
            Some(a) if a.log_prob >= h.log_prob => Some(a),
            _ => Some(h),
        })
}

/// Translates every sentence, in order, spreading sentences over `threads`
/// workers. Output is independent of the thread count.
pub fn translate<T: Scalar>(
    model: &Seq2Seq<T>,
    sources: &[Vec<String>],
    beam: usize,
    max_len: usize,
    threads: usize,
) -> Vec<String> {
    let threads = threads.max(1).min(sources.len().max(1));
    if threads == 1 {
        return sources.iter().map(|s| model.translate_sentence(s, beam, max_len)).collect();
    }
    let chunk = sources.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = sources
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|s| model.translate_sentence(s, beam, max_len)).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("decoder thread panicked")).collect()
    })
}

pub fn write_translations(path: &Path, lines: &[String]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
