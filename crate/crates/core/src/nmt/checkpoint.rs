use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{EpochRecord, Seq2Seq, Seq2SeqConfig, TrainingHistory};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &str = "seq2seq-checkpoint 1";

/// Writes config, vocabularies, every tensor and the training history to a
/// single text file. Values use the shortest representation that parses
/// back to the same number, so a save/load round trip is exact.
pub fn save_checkpoint<T: Scalar>(path: &Path, model: &Seq2Seq<T>, history: &TrainingHistory) -> Result<()> {
    let c = model.config();
    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(
        out,
        "config encoder_layers={} decoder_layers={} hidden={} emb_dim={} dropout={} max_decode_len={} beam={} seed={}",
        c.encoder_layers,
        c.decoder_layers,
        c.hidden,
        model.emb_dim(),
        c.dropout,
        c.max_decode_len,
        c.beam,
        c.seed
    )
    .unwrap();
    for (tag, vocab) in [("source", model.source_vocab()), ("target", model.target_vocab())] {
        writeln!(out, "vocab {tag} {}", vocab.len()).unwrap();
        for (id, tok) in vocab.tokens().iter().enumerate() {
            writeln!(out, "{tok}\t{}", vocab.freq(id)).unwrap();
        }
    }
    for (name, t) in model.param_names().iter().zip(model.params()) {
        writeln!(out, "tensor {name} {} {}", t.nrows(), t.ncols()).unwrap();
        for row in t.rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(" ")).unwrap();
        }
    }
    writeln!(
        out,
        "history {} best_epoch={} stopped_early={}",
        history.records.len(),
        history.best_epoch,
        history.stopped_early
    )
    .unwrap();
    for r in &history.records {
        let loss = r.train_loss.map_or("-".to_string(), |l| l.to_string());
        writeln!(out, "{}\t{loss}\t{}\t{}", r.epoch, r.dev_perplexity, r.seconds).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => Err(Error::parse(self.path, self.line + 1, "unexpected end of checkpoint")),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.path, self.line, msg)
    }
}

fn field<'a>(lines: &Lines<'_>, parts: &HashMap<&'a str, &'a str>, key: &str) -> Result<&'a str> {
    parts.get(key).copied().ok_or_else(|| lines.err(format!("missing {key}")))
}

fn num<N: std::str::FromStr>(lines: &Lines<'_>, s: &str) -> Result<N> {
    s.parse().map_err(|_| lines.err(format!("bad number {s:?}")))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(Seq2Seq<T>, TrainingHistory)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Lines {
        path,
        inner: text.lines().enumerate(),
        line: 0,
    };
    if lines.next()? != MAGIC {
        return Err(lines.err("not a seq2seq checkpoint"));
    }
    let cfg_line = lines.next()?;
    let Some(rest) = cfg_line.strip_prefix("config ") else {
        return Err(lines.err("expected config line"));
    };
    let parts: HashMap<&str, &str> = rest.split_whitespace().filter_map(|p| p.split_once('=')).collect();
    let config = Seq2SeqConfig {
        encoder_layers: num(&lines, field(&lines, &parts, "encoder_layers")?)?,
        decoder_layers: num(&lines, field(&lines, &parts, "decoder_layers")?)?,
        hidden: num(&lines, field(&lines, &parts, "hidden")?)?,
        emb_dim: Some(num(&lines, field(&lines, &parts, "emb_dim")?)?),
        dropout: num(&lines, field(&lines, &parts, "dropout")?)?,
        max_decode_len: num(&lines, field(&lines, &parts, "max_decode_len")?)?,
        beam: num(&lines, field(&lines, &parts, "beam")?)?,
        seed: num(&lines, field(&lines, &parts, "seed")?)?,
    };

    let mut vocabs = Vec::new();
    for tag in ["source", "target"] {
        let head = lines.next()?;
        let n: usize = match head.strip_prefix(&format!("vocab {tag} ")) {
            Some(n) => num(&lines, n)?,
            None => return Err(lines.err(format!("expected {tag} vocabulary"))),
        };
        let mut block = String::new();
        for _ in 0..n {
            block.push_str(lines.next()?);
            block.push('\n');
        }
        vocabs.push(Vocabulary::parse(&block, path)?);
    }
    let target_vocab = vocabs.pop().unwrap();
    let source_vocab = vocabs.pop().unwrap();

    let mut tensors = HashMap::new();
    let mut head = lines.next()?;
    while let Some(rest) = head.strip_prefix("tensor ") {
        let f: Vec<&str> = rest.split_whitespace().collect();
        if f.len() != 3 {
            return Err(lines.err("expected tensor name rows cols"));
        }
        let (rows, cols): (usize, usize) = (num(&lines, f[1])?, num(&lines, f[2])?);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = lines.next()?;
            let before = data.len();
            for v in line.split_whitespace() {
                data.push(num::<T>(&lines, v)?);
            }
            if data.len() - before != cols {
                return Err(lines.err(format!("tensor {} row has {} values, expected {cols}", f[0], data.len() - before)));
            }
        }
        let t = Array2::from_shape_vec((rows, cols), data).expect("sized above");
        if tensors.insert(f[0].to_string(), t).is_some() {
            return Err(lines.err(format!("duplicate tensor {}", f[0])));
        }
        head = lines.next()?;
    }
    let Some(rest) = head.strip_prefix("history ") else {
        return Err(lines.err("expected history block"));
    };
    let mut hf = rest.split_whitespace();
    let n: usize = num(&lines, hf.next().unwrap_or(""))?;
    let hparts: HashMap<&str, &str> = hf.filter_map(|p| p.split_once('=')).collect();
    let mut history = TrainingHistory {
        records: Vec::with_capacity(n),
        best_epoch: num(&lines, field(&lines, &hparts, "best_epoch")?)?,
        stopped_early: num(&lines, field(&lines, &hparts, "stopped_early")?)?,
    };
    for _ in 0..n {
        let line = lines.next()?;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(lines.err("expected epoch, loss, perplexity, seconds"));
        }
        history.records.push(EpochRecord {
            epoch: num(&lines, f[0])?,
            train_loss: if f[1] == "-" { None } else { Some(num(&lines, f[1])?) },
            dev_perplexity: num(&lines, f[2])?,
            seconds: num(&lines, f[3])?,
        });
    }
    let model = Seq2Seq::from_parts(config, source_vocab, target_vocab, tensors)?;
    Ok((model, history))
}
