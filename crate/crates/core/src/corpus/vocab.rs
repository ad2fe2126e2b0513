use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;

pub const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Token/id bijection with frequencies. Ids 0..4 are reserved for the specials.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    freqs: Vec<usize>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::specials_only()
    }
}

impl Vocabulary {
    pub fn specials_only() -> Self {
        let tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let index = tokens.iter().cloned().zip(0..).collect();
        Self {
            tokens,
            freqs: vec![0; SPECIALS.len()],
            index,
        }
    }

    /// Counts tokens over `sentences` and keeps those seen at least
    /// `min_count` times, ordered by descending frequency then lexicographically.
    pub fn build<'a, I, S>(sentences: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        let min_count = min_count.max(1);
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for sentence in sentences {
            for tok in sentence.as_ref() {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(tok, c)| c >= min_count && !SPECIALS.contains(&tok))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut vocab = Self::specials_only();
        for (tok, c) in kept {
            vocab.push(tok.to_string(), c);
        }
        vocab
    }

    fn push(&mut self, token: String, freq: usize) {
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.freqs.push(freq);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// True when only the specials are present.
    pub fn is_empty(&self) -> bool {
        self.tokens.len() == SPECIALS.len()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or [`UNK`].
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn freq(&self, id: usize) -> usize {
        self.freqs[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Non-special tokens with their ids.
    pub fn words(&self) -> impl Iterator<Item = (usize, &str)> {
        self.tokens
            .iter()
            .enumerate()
            .skip(SPECIALS.len())
            .map(|(i, t)| (i, t.as_str()))
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }

    /// Writes `token<TAB>freq` lines in id order.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (tok, f) in self.tokens.iter().zip(&self.freqs) {
            writeln!(w, "{tok}\t{f}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub(crate) fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut vocab = Self::specials_only();
        for (lineno, line) in text.lines().enumerate() {
            let (tok, freq) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, lineno + 1, "expected token<TAB>freq"))?;
            let freq: usize = freq
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, lineno + 1, format!("bad frequency {freq:?}")))?;
            if lineno < SPECIALS.len() {
                if tok != SPECIALS[lineno] {
                    return Err(Error::parse(
                        path,
                        lineno + 1,
                        format!("expected special {:?}, found {tok:?}", SPECIALS[lineno]),
                    ));
                }
                vocab.freqs[lineno] = freq;
                continue;
            }
            if let Some(prev) = vocab.get(tok) {
                return Err(Error::DuplicateEntry {
                    word: tok.to_string(),
                    first: prev + 1,
                    second: lineno + 1,
                });
            }
            vocab.push(tok.to_string(), freq);
        }
        Ok(vocab)
    }
}
