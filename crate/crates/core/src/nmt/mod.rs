//! Attention-based GRU encoder-decoder for sentence translation.
//!
//! The encoder is a stack of bidirectional GRU layers whose per-direction
//! size is half the hidden size; the decoder is a GRU stack of the same
//! depth, initialised per layer through a linear bridge from the final
//! encoder states. Each decoder step attends over the encoder outputs with a
//! multiplicative score and combines the context with the top state through
//! a tanh layer before the output projection.

mod checkpoint;
mod decode;
mod gradcheck;
pub mod tape;
mod train;

use std::collections::HashMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::combine::InitializedEmbeddings;
use crate::corpus::{Vocabulary, BOS, EOS, PAD};
use crate::corpus::ParallelCorpus;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use tape::{Graph, NodeId};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use decode::{translate, write_translations, BeamHypothesis, DecoderState, EncodedSource};
pub use gradcheck::{GradientCheckReport, GradientSample};
pub use train::{fine_tune, perplexity, train, EpochRecord, TrainHyper, TrainingHistory};

/// Uniform initialisation range for every tensor not copied from an
/// initial embedding table.
pub const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Decoder state size; each encoder direction gets half.
    pub hidden: usize,
    /// `None` takes the dimension of the initial source embeddings.
    pub emb_dim: Option<usize>,
    pub dropout: f64,
    pub max_decode_len: usize,
    pub beam: usize,
    pub seed: u64,
}

impl Default for Seq2SeqConfig {
    fn default() -> Self {
        Self {
            encoder_layers: 2,
            decoder_layers: 2,
            hidden: 128,
            emb_dim: None,
            dropout: 0.3,
            max_decode_len: 100,
            beam: 5,
            seed: 1,
        }
    }
}

impl Seq2SeqConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.hidden == 0 || self.hidden % 2 != 0 {
            return bad("hidden size must be positive and even");
        }
        if self.encoder_layers == 0 || self.encoder_layers != self.decoder_layers {
            return bad("encoder and decoder need the same positive number of layers");
        }
        if self.beam == 0 {
            return bad("beam must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.max_decode_len == 0 {
            return bad("max decode length must be positive");
        }
        if self.emb_dim == Some(0) {
            return bad("embedding dimension must be positive");
        }
        Ok(())
    }
}

/// Tensor indices of one GRU cell. Gates follow the usual formulation
/// `r = σ(x·W_ir + h·W_hr + b_r)`, `z = σ(x·W_iz + h·W_hz + b_z)`,
/// `n = tanh(x·W_in + b_in + r ⊙ (h·W_hn + b_hn))`, `h' = (1 − z) ⊙ n + z ⊙ h`.
#[derive(Debug, Clone, Copy)]
struct GruCell {
    w_ir: usize,
    w_iz: usize,
    w_in: usize,
    w_hr: usize,
    w_hz: usize,
    w_hn: usize,
    b_r: usize,
    b_z: usize,
    b_in: usize,
    b_hn: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    src_emb: usize,
    tgt_emb: usize,
    encoder: Vec<[GruCell; 2]>,
    bridge: Vec<(usize, usize)>,
    decoder: Vec<GruCell>,
    attn: usize,
    combine: usize,
    out_w: usize,
    out_b: usize,
}

#[derive(Default)]
struct Shapes {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
}

impl Shapes {
    fn add(&mut self, name: String, rows: usize, cols: usize) -> usize {
        self.names.push(name);
        self.shapes.push((rows, cols));
        self.names.len() - 1
    }

    fn gru(&mut self, prefix: &str, input: usize, n: usize) -> GruCell {
        let mut w = |s: &str, r| self.add(format!("{prefix}.{s}"), r, n);
        GruCell {
            w_ir: w("w_ir", input),
            w_iz: w("w_iz", input),
            w_in: w("w_in", input),
            w_hr: w("w_hr", n),
            w_hz: w("w_hz", n),
            w_hn: w("w_hn", n),
            b_r: w("b_r", 1),
            b_z: w("b_z", 1),
            b_in: w("b_in", 1),
            b_hn: w("b_hn", 1),
        }
    }
}

fn layout(config: &Seq2SeqConfig, emb: usize, src_vocab: usize, tgt_vocab: usize) -> (Layout, Shapes) {
    let h = config.hidden;
    let half = h / 2;
    let mut s = Shapes::default();
    let src_emb = s.add("src_emb".into(), src_vocab, emb);
    let tgt_emb = s.add("tgt_emb".into(), tgt_vocab, emb);
    let mut encoder = Vec::new();
    for l in 0..config.encoder_layers {
        let input = if l == 0 { emb } else { h };
        let fwd = s.gru(&format!("enc.l{l}.fwd"), input, half);
        let bwd = s.gru(&format!("enc.l{l}.bwd"), input, half);
        encoder.push([fwd, bwd]);
    }
    let bridge = (0..config.decoder_layers)
        .map(|l| (s.add(format!("bridge.l{l}.w"), h, h), s.add(format!("bridge.l{l}.b"), 1, h)))
        .collect();
    let decoder = (0..config.decoder_layers)
        .map(|l| s.gru(&format!("dec.l{l}"), if l == 0 { emb } else { h }, h))
        .collect();
    let attn = s.add("attn.w".into(), h, h);
    let combine = s.add("combine.w".into(), 2 * h, h);
    let out_w = s.add("out.w".into(), h, tgt_vocab);
    let out_b = s.add("out.b".into(), 1, tgt_vocab);
    let layout = Layout {
        src_emb,
        tgt_emb,
        encoder,
        bridge,
        decoder,
        attn,
        combine,
        out_w,
        out_b,
    };
    (layout, s)
}

/// Parameters and vocabularies of a translation model.
#[derive(Debug, Clone)]
pub struct Seq2Seq<T> {
    config: Seq2SeqConfig,
    source_vocab: Vocabulary,
    target_vocab: Vocabulary,
    names: Vec<String>,
    params: Vec<Array2<T>>,
    layout: Layout,
}

/// Builds a model whose source embedding table is copied from `source_init`
/// and whose other tensors are drawn uniformly from ±[`INIT_RANGE`] with
/// `config.seed` (the target PAD row is zero).
pub fn build_model<T: Scalar>(
    config: &Seq2SeqConfig,
    source_vocab: &Vocabulary,
    source_init: &InitializedEmbeddings<T>,
    target_vocab: &Vocabulary,
) -> Result<Seq2Seq<T>> {
    config.validate()?;
    let init = &source_init.matrix;
    if init.tokens() != source_vocab.tokens() {
        let missing = source_vocab
            .tokens()
            .iter()
            .find(|t| !init.contains(t))
            .cloned()
            .unwrap_or_else(|| "(row order differs)".into());
        return Err(Error::InvalidArgument(format!(
            "initial embeddings do not match the source vocabulary: {missing}"
        )));
    }
    let emb = init.dim();
    if let Some(d) = config.emb_dim {
        if d != emb {
            return Err(Error::DimensionMismatch { expected: d, got: emb });
        }
    }
    let config = Seq2SeqConfig {
        emb_dim: Some(emb),
        ..config.clone()
    };
    let (layout, shapes) = layout(&config, emb, source_vocab.len(), target_vocab.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = shapes
        .shapes
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| {
            if i == layout.src_emb {
                init.data().to_owned()
            } else {
                Array2::from_shape_simple_fn((r, c), || T::of(rng.gen_range(-INIT_RANGE..INIT_RANGE)))
            }
        })
        .collect::<Vec<_>>();
    let mut model = Seq2Seq {
        config,
        source_vocab: source_vocab.clone(),
        target_vocab: target_vocab.clone(),
        names: shapes.names,
        params,
        layout,
    };
    let tgt = model.layout.tgt_emb;
    model.params[tgt].row_mut(PAD).fill(T::zero());
    Ok(model)
}

/// Padded id matrices for a group of sentence pairs. Targets are framed as
/// `BOS y` (decoder input) and `y EOS` (prediction target).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub source: Array2<usize>,
    pub source_lens: Vec<usize>,
    pub target_in: Array2<usize>,
    pub target_out: Array2<usize>,
    pub target_lens: Vec<usize>,
}

impl Batch {
    pub fn new(pairs: &[&(Vec<usize>, Vec<usize>)]) -> Self {
        let b = pairs.len();
        let s = pairs.iter().map(|p| p.0.len()).max().unwrap_or(0);
        let t = pairs.iter().map(|p| p.1.len() + 1).max().unwrap_or(0);
        let mut source = Array2::from_elem((b, s), PAD);
        let mut target_in = Array2::from_elem((b, t), PAD);
        let mut target_out = Array2::from_elem((b, t), PAD);
        for (i, (src, tgt)) in pairs.iter().map(|p| (&p.0, &p.1)).enumerate() {
            for (j, &id) in src.iter().enumerate() {
                source[[i, j]] = id;
            }
            target_in[[i, 0]] = BOS;
            for (j, &id) in tgt.iter().enumerate() {
                target_in[[i, j + 1]] = id;
                target_out[[i, j]] = id;
            }
            target_out[[i, tgt.len()]] = EOS;
        }
        Self {
            source,
            source_lens: pairs.iter().map(|p| p.0.len()).collect(),
            target_in,
            target_out,
            target_lens: pairs.iter().map(|p| p.1.len() + 1).collect(),
        }
    }

    pub fn from_examples(examples: &[(Vec<usize>, Vec<usize>)]) -> Self {
        Self::new(&examples.iter().collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.source_lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_lens.is_empty()
    }

    /// Number of scored target tokens (EOS included).
    pub fn target_tokens(&self) -> usize {
        self.target_lens.iter().sum()
    }
}

/// Inverted dropout driven by its own random stream.
pub(crate) struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

fn dropout<T: Scalar>(g: &mut Graph<'_, T>, x: NodeId, d: &mut Option<Dropout<'_>>) -> NodeId {
    let Some(d) = d else { return x };
    if d.rate == 0.0 {
        return x;
    }
    let keep = 1.0 - d.rate;
    let scale = T::of(1.0 / keep);
    let shape = g.value(x).raw_dim();
    let factor = Array2::from_shape_simple_fn(shape, || if d.rng.gen_bool(keep) { scale } else { T::zero() });
    g.scale(x, factor)
}

pub(crate) struct EncoderNodes {
    pub outputs: Vec<NodeId>,
    pub init: Vec<NodeId>,
}

impl<T: Scalar> Seq2Seq<T> {
    pub fn config(&self) -> &Seq2SeqConfig {
        &self.config
    }

    pub fn source_vocab(&self) -> &Vocabulary {
        &self.source_vocab
    }

    pub fn target_vocab(&self) -> &Vocabulary {
        &self.target_vocab
    }

    pub fn emb_dim(&self) -> usize {
        self.config.emb_dim.expect("resolved at build time")
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Array2<T>] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Array2<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Array2<T>> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.params[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Redraws every tensor except the source and target embedding tables
    /// uniformly from ±`scale`.
    pub fn randomize_params(&mut self, scale: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = [self.layout.src_emb, self.layout.tgt_emb];
        for (i, p) in self.params.iter_mut().enumerate() {
            if !keep.contains(&i) {
                p.mapv_inplace(|_| T::of(rng.gen_range(-scale..scale)));
            }
        }
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Array2<T>] {
        &mut self.params
    }

    pub(crate) fn from_parts(
        config: Seq2SeqConfig,
        source_vocab: Vocabulary,
        target_vocab: Vocabulary,
        tensors: HashMap<String, Array2<T>>,
    ) -> Result<Self> {
        config.validate()?;
        let emb = config
            .emb_dim
            .ok_or_else(|| Error::InvalidArgument("checkpoint config lacks emb_dim".into()))?;
        let (layout, shapes) = layout(&config, emb, source_vocab.len(), target_vocab.len());
        let mut tensors = tensors;
        let mut params = Vec::with_capacity(shapes.names.len());
        for (name, &(r, c)) in shapes.names.iter().zip(&shapes.shapes) {
            let t = tensors
                .remove(name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing tensor {name}")))?;
            if t.dim() != (r, c) {
                return Err(Error::InvalidArgument(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.dim(),
                    (r, c)
                )));
            }
            params.push(t);
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::InvalidArgument(format!("unexpected tensor {extra}")));
        }
        Ok(Self {
            config,
            source_vocab,
            target_vocab,
            names: shapes.names,
            params,
            layout,
        })
    }

    /// Encodes a corpus into id pairs with each side's vocabulary; unknown
    /// tokens become UNK.
    pub fn encode_corpus(&self, corpus: &ParallelCorpus) -> Vec<(Vec<usize>, Vec<usize>)> {
        corpus
            .pairs
            .iter()
            .map(|p| (self.source_vocab.encode(&p.source), self.target_vocab.encode(&p.target)))
            .collect()
    }

    fn gru_step<'p>(&self, g: &mut Graph<'p, T>, c: GruCell, x: NodeId, h: NodeId) -> NodeId {
        let gate = |g: &mut Graph<'p, T>, wi, wh, b| {
            let a = g.param(wi);
            let a = g.matmul(x, a);
            let r = g.param(wh);
            let r = g.matmul(h, r);
            let s = g.add(a, r);
            let b = g.param(b);
            let s = g.add_row(s, b);
            g.sigmoid(s)
        };
        let r = gate(g, c.w_ir, c.w_hr, c.b_r);
        let z = gate(g, c.w_iz, c.w_hz, c.b_z);
        let (w_in, b_in, w_hn, b_hn) = (g.param(c.w_in), g.param(c.b_in), g.param(c.w_hn), g.param(c.b_hn));
        let xn = g.affine(x, w_in, b_in);
        let hn = g.affine(h, w_hn, b_hn);
        let rh = g.mul(r, hn);
        let n = g.add(xn, rh);
        let n = g.tanh(n);
        let keep = g.one_minus(z);
        let a = g.mul(keep, n);
        let b = g.mul(z, h);
        g.add(a, b)
    }

    /// Runs the encoder over a padded batch. Positions at or beyond a
    /// sentence's length leave that row's state untouched, so outputs inside
    /// the sentence never see padding.
    pub(crate) fn encode_graph(
        &self,
        g: &mut Graph<'_, T>,
        source: &Array2<usize>,
        lens: &[usize],
        drop: &mut Option<Dropout<'_>>,
    ) -> EncoderNodes {
        let (b, s) = source.dim();
        let half = self.config.hidden / 2;
        let masks: Vec<Vec<T>> = (0..s)
            .map(|t| lens.iter().map(|&l| if t < l { T::one() } else { T::zero() }).collect())
            .collect();
        let mut inputs: Vec<NodeId> = (0..s)
            .map(|t| {
                let ids: Vec<usize> = source.column(t).to_vec();
                let e = g.gather(self.layout.src_emb, &ids);
                dropout(g, e, drop)
            })
            .collect();
        let mut finals = Vec::new();
        for (l, cells) in self.layout.encoder.iter().enumerate() {
            let zeros = g.constant(Array2::zeros((b, half)));
            let mut fwd = Vec::with_capacity(s);
            let mut h = zeros;
            for t in 0..s {
                let cand = self.gru_step(g, cells[0], inputs[t], h);
                h = g.blend(cand, h, masks[t].clone());
                fwd.push(h);
            }
            let fwd_final = h;
            let mut bwd = vec![zeros; s];
            let mut h = zeros;
            for t in (0..s).rev() {
                let cand = self.gru_step(g, cells[1], inputs[t], h);
                h = g.blend(cand, h, masks[t].clone());
                bwd[t] = h;
            }
            finals.push(g.concat(fwd_final, h));
            let outputs: Vec<NodeId> = fwd.iter().zip(&bwd).map(|(&f, &bk)| g.concat(f, bk)).collect();
            inputs = if l + 1 < self.layout.encoder.len() {
                outputs.into_iter().map(|o| dropout(g, o, drop)).collect()
            } else {
                outputs
            };
        }
        let init = self
            .layout
            .bridge
            .iter()
            .zip(&finals)
            .map(|(&(w, bias), &f)| {
                let (w, bias) = (g.param(w), g.param(bias));
                g.affine(f, w, bias)
            })
            .collect();
        EncoderNodes { outputs: inputs, init }
    }

    /// One decoder step for every batch row; returns the new per-layer
    /// states and the output logits.
    pub(crate) fn decoder_step(
        &self,
        g: &mut Graph<'_, T>,
        enc: &[NodeId],
        mask: &Array2<T>,
        states: &[NodeId],
        prev: &[usize],
        drop: &mut Option<Dropout<'_>>,
    ) -> (Vec<NodeId>, NodeId) {
        let e = g.gather(self.layout.tgt_emb, prev);
        let mut x = dropout(g, e, drop);
        let mut new_states = Vec::with_capacity(states.len());
        for (l, (&cell, &h)) in self.layout.decoder.iter().zip(states).enumerate() {
            let h = self.gru_step(g, cell, x, h);
            new_states.push(h);
            x = if l + 1 < states.len() { dropout(g, h, drop) } else { h };
        }
        let top = x;
        let wa = g.param(self.layout.attn);
        let q = g.matmul(top, wa);
        let ctx = g.attention(q, enc, enc, mask);
        let cat = g.concat(ctx, top);
        let wc = g.param(self.layout.combine);
        let a = g.matmul(cat, wc);
        let a = g.tanh(a);
        let a = dropout(g, a, drop);
        let (wo, bo) = (g.param(self.layout.out_w), g.param(self.layout.out_b));
        (new_states, g.affine(a, wo, bo))
    }

    /// Teacher-forced mean token cross-entropy of `batch` as a graph node.
    pub(crate) fn loss_graph<'p>(
        &self,
        params: &'p [Array2<T>],
        batch: &Batch,
        drop: &mut Option<Dropout<'_>>,
    ) -> (Graph<'p, T>, NodeId) {
        let mut g = Graph::new(params);
        let enc = self.encode_graph(&mut g, &batch.source, &batch.source_lens, drop);
        let mask = source_mask::<T>(&batch.source_lens, batch.source.ncols());
        let count = T::of(batch.target_tokens().max(1) as f64);
        let mut states = enc.init.clone();
        let mut terms = Vec::with_capacity(batch.target_in.ncols());
        for t in 0..batch.target_in.ncols() {
            let prev: Vec<usize> = batch.target_in.column(t).to_vec();
            let (s, logits) = self.decoder_step(&mut g, &enc.outputs, &mask, &states, &prev, drop);
            states = s;
            let targets: Vec<usize> = batch.target_out.column(t).to_vec();
            let weights: Vec<T> = batch
                .target_lens
                .iter()
                .map(|&l| if t < l { T::one() / count } else { T::zero() })
                .collect();
            terms.push(g.cross_entropy(logits, &targets, &weights));
        }
        let loss = g.sum(&terms);
        (g, loss)
    }

    /// Mean cross-entropy over the non-PAD target tokens of `batch`, and its
    /// gradient for every tensor (in [`Seq2Seq::param_names`] order).
    pub fn forward_loss(&self, batch: &Batch) -> (T, Vec<Array2<T>>) {
        let (g, loss) = self.loss_graph(&self.params, batch, &mut None);
        (g.scalar(loss), g.backward(loss))
    }

    /// Loss without gradients, dropout off.
    pub fn loss(&self, batch: &Batch) -> T {
        let (g, loss) = self.loss_graph(&self.params, batch, &mut None);
        g.scalar(loss)
    }

    pub(crate) fn forward_loss_dropout(&self, batch: &Batch, rng: &mut ChaCha8Rng) -> (T, Vec<Array2<T>>) {
        let mut drop = Some(Dropout {
            rate: self.config.dropout,
            rng,
        });
        let (g, loss) = self.loss_graph(&self.params, batch, &mut drop);
        (g.scalar(loss), g.backward(loss))
    }
}

pub(crate) fn source_mask<T: Scalar>(lens: &[usize], width: usize) -> Array2<T> {
    Array2::from_shape_fn((lens.len(), width), |(b, s)| if s < lens[b] { T::one() } else { T::zero() })
}
