//! Initial source-side embeddings for the downstream vocabulary under each
//! initialization strategy.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Vocabulary, PAD};
use crate::embedstore::{read_embeddings, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::subword::SubwordModel;
use crate::xmap::MappingModel;

pub const RANDOM_INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InitStrategy {
    Random,
    VecMap,
    XhSub,
    XhPre,
    XhMeta,
}

impl InitStrategy {
    /// All strategies in results-table row order.
    pub const ALL: [InitStrategy; 5] = [
        InitStrategy::Random,
        InitStrategy::VecMap,
        InitStrategy::XhSub,
        InitStrategy::XhPre,
        InitStrategy::XhMeta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InitStrategy::Random => "Random",
            InitStrategy::VecMap => "VecMap",
            InitStrategy::XhSub => "XhSub",
            InitStrategy::XhPre => "XhPre",
            InitStrategy::XhMeta => "XhMeta",
        }
    }

    pub fn needs_projected(self) -> bool {
        matches!(self, InitStrategy::XhPre | InitStrategy::VecMap | InitStrategy::XhMeta)
    }

    pub fn needs_subword(self) -> bool {
        self != InitStrategy::Random
    }

    pub fn needs_mapping(self) -> bool {
        self == InitStrategy::VecMap
    }
}

impl fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    FromEv,
    FromEm,
    UnkSubstituted,
    Random,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::FromEv => "fromEV",
            Provenance::FromEm => "fromEM",
            Provenance::UnkSubstituted => "unkSubstituted",
            Provenance::Random => "random",
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Provenance::FromEv, Provenance::FromEm, Provenance::UnkSubstituted, Provenance::Random]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown provenance {s:?}")))
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Embeddings over the task vocabulary with a provenance tag per row.
#[derive(Debug, Clone, PartialEq)]
pub struct InitializedEmbeddings<T> {
    pub matrix: EmbeddingMatrix<T>,
    pub provenance: Vec<Provenance>,
}

impl<T: Scalar> InitializedEmbeddings<T> {
    pub fn count(&self, p: Provenance) -> usize {
        self.provenance.iter().filter(|&&q| q == p).count()
    }

    /// Writes the `token<TAB>provenance` sidecar.
    pub fn write_provenance(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (t, p) in self.matrix.tokens().iter().zip(&self.provenance) {
            writeln!(w, "{t}\t{p}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a matrix written by [`crate::embedstore::write_embeddings`] and its provenance
    /// sidecar; the sidecar must list the same tokens in the same order.
    pub fn read(vectors: &Path, provenance: &Path) -> Result<Self> {
        let (matrix, _) = read_embeddings(vectors)?;
        let text = fs::read_to_string(provenance).map_err(|e| Error::io(provenance, e))?;
        let mut tags = Vec::with_capacity(matrix.len());
        for (i, line) in text.lines().enumerate() {
            let (tok, tag) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(provenance, i + 1, "expected token<TAB>provenance"))?;
            if matrix.tokens().get(i).map(String::as_str) != Some(tok) {
                return Err(Error::parse(provenance, i + 1, format!("token {tok:?} out of step with the vectors")));
            }
            tags.push(tag.parse().map_err(|_| Error::parse(provenance, i + 1, format!("bad provenance {tag:?}")))?);
        }
        if tags.len() != matrix.len() {
            return Err(Error::parse(provenance, tags.len() + 1, "fewer provenance lines than vectors"));
        }
        Ok(Self {
            matrix,
            provenance: tags,
        })
    }
}

/// Centroid of the projected rows, used for words without a projection.
pub fn unk_vector<T: Scalar>(ev: &EmbeddingMatrix<T>) -> Result<Vec<T>> {
    if ev.is_empty() {
        return Err(Error::Empty("projected matrix for UNK centroid".into()));
    }
    let sum = ev.data().sum_axis(ndarray::Axis(0));
    let n = T::of(ev.len() as f64);
    Ok(sum.iter().map(|&v| v / n).collect())
}

/// Elementwise mean of two vectors.
pub fn meta_embedding<T: Scalar>(ev: &[T], em: &[T]) -> Result<Vec<T>> {
    if ev.len() != em.len() {
        return Err(Error::DimensionMismatch {
            expected: ev.len(),
            got: em.len(),
        });
    }
    let two = T::of(2.0);
    Ok(ev.iter().zip(em).map(|(&a, &b)| (a + b) / two).collect())
}

/// Zero-pads (or passes through) `v` to length `dim`.
pub fn pad_to<T: Scalar>(v: &[T], dim: usize) -> Vec<T> {
    let mut out = v.to_vec();
    if out.len() < dim {
        out.resize(dim, T::zero());
    }
    out
}

/// Zero-pads every row to `dim` columns.
pub fn pad_matrix<T: Scalar>(m: &EmbeddingMatrix<T>, dim: usize) -> EmbeddingMatrix<T> {
    if m.dim() >= dim {
        return m.clone();
    }
    let mut data = Array2::zeros((m.len(), dim));
    data.slice_mut(ndarray::s![.., ..m.dim()]).assign(&m.data());
    EmbeddingMatrix::new(m.tokens().to_vec(), data).expect("same tokens")
}

/// Sources available to [`build_initial_embeddings`].
#[derive(Debug, Clone, Copy)]
pub struct InitInputs<'a, T> {
    pub projected: Option<&'a EmbeddingMatrix<T>>,
    pub subword: Option<&'a SubwordModel<T>>,
    pub mapping: Option<&'a MappingModel<T>>,
    /// Row dimension for the random strategy when no other source fixes it.
    pub dim: usize,
    pub seed: u64,
}

fn require<'a, X>(value: Option<&'a X>, strategy: InitStrategy, input: &str) -> Result<&'a X> {
    value.ok_or_else(|| Error::MissingInput {
        strategy: strategy.to_string(),
        input: input.to_string(),
    })
}

/// Builds one row per token of `vocab` (specials included) under `strategy`.
pub fn build_initial_embeddings<T: Scalar>(
    strategy: InitStrategy,
    vocab: &Vocabulary,
    inputs: &InitInputs<'_, T>,
) -> Result<InitializedEmbeddings<T>> {
    let ev = if strategy.needs_projected() {
        Some(require(inputs.projected, strategy, "projected embeddings (E_V)")?)
    } else {
        None
    };
    let em = if strategy.needs_subword() {
        Some(require(inputs.subword, strategy, "subword model (E_M)")?)
    } else {
        None
    };
    let mapping = if strategy.needs_mapping() {
        Some(require(inputs.mapping, strategy, "cross-space mapping")?)
    } else {
        None
    };

    let dim = match strategy {
        InitStrategy::Random => inputs.dim,
        InitStrategy::XhSub => em.unwrap().dim(),
        InitStrategy::VecMap => mapping.unwrap().dim(),
        InitStrategy::XhPre | InitStrategy::XhMeta => ev.unwrap().dim().max(em.unwrap().dim()),
    };
    if dim == 0 {
        return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
    }
    let unk = match (strategy, ev) {
        (InitStrategy::XhMeta, Some(ev)) => Some(pad_to(&unk_vector(ev)?, dim)),
        _ => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(inputs.seed);
    let random_row = |rng: &mut ChaCha8Rng| -> Vec<T> {
        (0..dim)
            .map(|_| T::of(rng.gen_range(-RANDOM_INIT_RANGE..RANDOM_INIT_RANGE)))
            .collect()
    };

    let mut flat = Vec::with_capacity(vocab.len() * dim);
    let mut provenance = Vec::with_capacity(vocab.len());
    for (id, word) in vocab.tokens().iter().enumerate() {
        let (row, tag) = if id == PAD {
            (vec![T::zero(); dim], Provenance::Random)
        } else if Vocabulary::is_special(id) || strategy == InitStrategy::Random {
            (random_row(&mut rng), Provenance::Random)
        } else {
            let em = em.expect("non-random strategies have a subword model");
            let projected = ev.and_then(|ev| ev.get(word));
            match strategy {
                InitStrategy::XhSub => (em.compose_word_vector(word), Provenance::FromEm),
                InitStrategy::XhPre => match projected {
                    Some(v) => (pad_to(v, dim), Provenance::FromEv),
                    None => (pad_to(&em.compose_word_vector(word), dim), Provenance::FromEm),
                },
                InitStrategy::VecMap => {
                    let m = mapping.expect("checked");
                    match projected {
                        Some(v) => (m.map_x_vector(&pad_to(v, dim)), Provenance::FromEv),
                        None => (
                            m.map_z_vector(&pad_to(&em.compose_word_vector(word), dim)),
                            Provenance::FromEm,
                        ),
                    }
                }
                InitStrategy::XhMeta => {
                    let sub = pad_to(&em.compose_word_vector(word), dim);
                    match projected {
                        Some(v) => (meta_embedding(&pad_to(v, dim), &sub)?, Provenance::FromEv),
                        None => (
                            meta_embedding(unk.as_ref().expect("computed for XhMeta"), &sub)?,
                            Provenance::UnkSubstituted,
                        ),
                    }
                }
                InitStrategy::Random => unreachable!(),
            }
        };
        flat.extend(row);
        provenance.push(tag);
    }
    let data = Array2::from_shape_vec((vocab.len(), dim), flat).expect("one row per token");
    Ok(InitializedEmbeddings {
        matrix: EmbeddingMatrix::new(vocab.tokens().to_vec(), data)?,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(words: &[&str]) -> Vocabulary {
        let side: Vec<Vec<String>> = vec![words.iter().map(|w| w.to_string()).collect()];
        Vocabulary::build(side.iter(), 1)
    }

    fn ev() -> EmbeddingMatrix<f64> {
        EmbeddingMatrix::from_rows(
            4,
            [("indoda", vec![0.6, 0.8, 0.0, 0.0]), ("bethuna", vec![1.0, 1.0, 0.0, 0.0])]
                .into_iter()
                .map(|(t, v)| (t.to_string(), v)),
        )
        .unwrap()
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in InitStrategy::ALL {
            assert_eq!(s.to_string().parse::<InitStrategy>().unwrap(), s);
            assert_eq!(s.name().to_lowercase().parse::<InitStrategy>().unwrap(), s);
        }
        assert!("glove".parse::<InitStrategy>().is_err());
    }

    #[test]
    fn unk_is_centroid() {
        let one = EmbeddingMatrix::from_rows(2, [("a".to_string(), vec![1.0, 2.0])]).unwrap();
        assert_eq!(unk_vector(&one).unwrap(), vec![1.0, 2.0]);
        let two = EmbeddingMatrix::from_rows(
            2,
            [("a".to_string(), vec![1.0, 0.0]), ("b".to_string(), vec![0.0, 1.0])],
        )
        .unwrap();
        assert_eq!(unk_vector(&two).unwrap(), vec![0.5, 0.5]);
        assert!(unk_vector(&EmbeddingMatrix::<f64>::empty(2).unwrap()).is_err());
    }

    #[test]
    fn meta_is_mean() {
        assert_eq!(meta_embedding(&[1.0, 3.0], &[3.0, 1.0]).unwrap(), vec![2.0, 2.0]);
        assert_eq!(meta_embedding(&[0.25, -1.0], &[0.25, -1.0]).unwrap(), vec![0.25, -1.0]);
        assert!(meta_embedding(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn strategies_follow_their_rules() {
        let task = vocab(&["indoda", "ihamba", "bethuna"]);
        let sub = SubwordModel::<f64>::init(vocab(&["indoda", "ihamba"]), 4, 3, 6, 50, 7);
        let ev = ev();
        let inputs = InitInputs {
            projected: Some(&ev),
            subword: Some(&sub),
            mapping: None,
            dim: 4,
            seed: 3,
        };

        let xs = build_initial_embeddings(InitStrategy::XhSub, &task, &inputs).unwrap();
        assert_eq!(xs.count(Provenance::FromEm), 3);
        assert_eq!(xs.matrix.get("ihamba").unwrap(), sub.compose_word_vector("ihamba").as_slice());

        let xp = build_initial_embeddings(InitStrategy::XhPre, &task, &inputs).unwrap();
        assert_eq!(xp.matrix.get("indoda").unwrap(), ev.get("indoda").unwrap());
        let ih = task.get("ihamba").unwrap();
        assert_eq!(xp.provenance[ih], Provenance::FromEm);
        assert_eq!(xp.matrix.row(ih), xs.matrix.row(ih));

        let xm = build_initial_embeddings(InitStrategy::XhMeta, &task, &inputs).unwrap();
        assert_eq!(xm.provenance[ih], Provenance::UnkSubstituted);
        let expect = meta_embedding(&unk_vector(&ev).unwrap(), &sub.compose_word_vector("ihamba")).unwrap();
        assert_eq!(xm.matrix.row(ih), expect.as_slice());
        let ind = task.get("indoda").unwrap();
        let both: Vec<f64> = ev
            .get("indoda")
            .unwrap()
            .iter()
            .zip(sub.compose_word_vector("indoda"))
            .map(|(a, b)| (a + b) / 2.0)
            .collect();
        assert_eq!(xm.matrix.row(ind), both.as_slice());

        for init in [&xs, &xp, &xm] {
            assert_eq!(init.matrix.len(), task.len());
            assert!(init.matrix.row(PAD).iter().all(|&v| v == 0.0));
            assert_eq!(&init.provenance[..4], &[Provenance::Random; 4]);
        }
    }

    #[test]
    fn random_is_seeded_and_bounded() {
        let task = vocab(&["a", "b", "c"]);
        let inputs = InitInputs::<f64> {
            projected: None,
            subword: None,
            mapping: None,
            dim: 6,
            seed: 11,
        };
        let a = build_initial_embeddings(InitStrategy::Random, &task, &inputs).unwrap();
        let b = build_initial_embeddings(InitStrategy::Random, &task, &inputs).unwrap();
        assert_eq!(a, b);
        assert!(a.matrix.data().iter().all(|v| v.abs() <= RANDOM_INIT_RANGE));
        assert_eq!(a.count(Provenance::Random), task.len());
    }

    #[test]
    fn missing_inputs_are_named() {
        let task = vocab(&["a"]);
        let inputs = InitInputs::<f64> {
            projected: None,
            subword: None,
            mapping: None,
            dim: 4,
            seed: 0,
        };
        for s in [InitStrategy::XhSub, InitStrategy::XhPre, InitStrategy::VecMap, InitStrategy::XhMeta] {
            match build_initial_embeddings(s, &task, &inputs) {
                Err(Error::MissingInput { strategy, .. }) => assert_eq!(strategy, s.name()),
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn smaller_space_is_zero_padded() {
        let task = vocab(&["indoda", "zz"]);
        let sub = SubwordModel::<f64>::init(vocab(&["indoda"]), 2, 3, 6, 20, 1);
        let ev = ev();
        let inputs = InitInputs {
            projected: Some(&ev),
            subword: Some(&sub),
            mapping: None,
            dim: 0,
            seed: 0,
        };
        let xm = build_initial_embeddings(InitStrategy::XhMeta, &task, &inputs).unwrap();
        assert_eq!(xm.matrix.dim(), 4);
        let zz = xm.matrix.get("zz").unwrap();
        let sub_zz = sub.compose_word_vector("zz");
        let unk = unk_vector(&ev).unwrap();
        assert_eq!(zz[3], unk[3] / 2.0);
        assert_eq!(zz[0], (unk[0] + sub_zz[0]) / 2.0);
    }
}
