//! Orthogonal mapping of two embedding spaces into a common space,
//! with CSLS dictionary induction and a self-learning refinement loop.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::embedstore::{cosine, normalize_in_place, top_k, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_CSLS_K: usize = 10;

/// `(row in X, row in Z)` pairs, sorted and unique.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DictionaryPairs {
    pub pairs: Vec<(usize, usize)>,
}

impl DictionaryPairs {
    pub fn new(mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        pairs.dedup();
        Self { pairs }
    }

    pub fn identity(n: usize) -> Self {
        Self::new((0..n).map(|i| (i, i)).collect())
    }

    /// Identity pairs over the shared tokens of two matrices.
    pub fn shared_tokens<T: Scalar>(x: &EmbeddingMatrix<T>, z: &EmbeddingMatrix<T>) -> Self {
        Self::new(
            x.tokens()
                .iter()
                .enumerate()
                .filter_map(|(i, t)| z.index_of(t).map(|j| (i, j)))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn reversed(&self) -> Self {
        Self::new(self.pairs.iter().map(|&(i, j)| (j, i)).collect())
    }

    fn check(&self, nx: usize, nz: usize) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::Empty("dictionary".into()));
        }
        if let Some(&(i, j)) = self.pairs.iter().find(|&&(i, j)| i >= nx || j >= nz) {
            return Err(Error::InvalidArgument(format!(
                "dictionary pair ({i}, {j}) out of range for {nx}x{nz} spaces"
            )));
        }
        Ok(())
    }
}

/// Column means subtracted during [`preprocess`] and rows that ended up zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessRecord<T> {
    pub means: Vec<T>,
    pub zero_rows: Vec<usize>,
}

impl<T: Scalar> PreprocessRecord<T> {
    /// Normalize, centre with the recorded means, normalize again.
    pub fn apply(&self, v: &[T]) -> Vec<T> {
        let mut out = v.to_vec();
        normalize_in_place(&mut out);
        out.iter_mut().zip(&self.means).for_each(|(a, &m)| *a -= m);
        normalize_in_place(&mut out);
        out
    }
}

/// Unit-normalize rows, mean-centre columns, unit-normalize rows again.
pub fn preprocess<T: Scalar>(matrix: ArrayView2<'_, T>) -> Result<(Array2<T>, PreprocessRecord<T>)> {
    if matrix.nrows() == 0 {
        return Err(Error::Empty("matrix to preprocess".into()));
    }
    let mut m = matrix.to_owned();
    for mut row in m.rows_mut() {
        normalize_in_place(row.as_slice_mut().expect("owned rows are contiguous"));
    }
    let means: Array1<T> = m.mean_axis(Axis(0)).expect("non-empty");
    m -= &means;
    let mut zero_rows = Vec::new();
    for (i, mut row) in m.rows_mut().into_iter().enumerate() {
        let slice = row.as_slice_mut().expect("contiguous");
        if slice.iter().all(|v| v.abs() <= T::epsilon()) {
            slice.iter_mut().for_each(|v| *v = T::zero());
        }
        if normalize_in_place(slice) {
            zero_rows.push(i);
        }
    }
    Ok((
        m,
        PreprocessRecord {
            means: means.to_vec(),
            zero_rows,
        },
    ))
}

/// Orthogonal pair `(W_x, W_z)` mapping both spaces into a common space.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalPair<T> {
    pub wx: Array2<T>,
    pub wz: Array2<T>,
    /// The cross-covariance had (numerically) zero singular values.
    pub rank_deficient: bool,
}

impl<T: Scalar> OrthogonalPair<T> {
    pub fn map_x(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        x.dot(&self.wx)
    }

    pub fn map_z(&self, z: ArrayView2<'_, T>) -> Array2<T> {
        z.dot(&self.wz)
    }
}

fn to_nalgebra<T: Scalar>(a: &Array2<T>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]].to_f64_lossy())
}

fn from_nalgebra<T: Scalar>(m: &DMatrix<f64>) -> Array2<T> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| T::of(m[(i, j)]))
}

/// Procrustes fit: with `X_Dᵀ Z_D = U Σ Vᵀ`, returns `W_x = U`, `W_z = V`.
pub fn fit_orthogonal_mapping<T: Scalar>(
    x: ArrayView2<'_, T>,
    z: ArrayView2<'_, T>,
    dict: &DictionaryPairs,
) -> Result<OrthogonalPair<T>> {
    if x.ncols() != z.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            got: z.ncols(),
        });
    }
    dict.check(x.nrows(), z.nrows())?;
    let d = x.ncols();
    let xd = x.select(Axis(0), &dict.pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let zd = z.select(Axis(0), &dict.pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    let cross = to_nalgebra(&xd.t().dot(&zd));
    let svd = cross.svd(true, true);
    let mut u = svd.u.expect("requested U");
    let mut v = svd.v_t.expect("requested Vᵀ").transpose();
    // Each singular pair is defined up to a joint sign flip; pick the sign
    // that makes the pair's entry sum positive (symmetric in U and V).
    for c in 0..d {
        if u.column(c).sum() + v.column(c).sum() < 0.0 {
            u.column_mut(c).neg_mut();
            v.column_mut(c).neg_mut();
        }
    }
    let max_sv = svd.singular_values.max();
    let rank_deficient =
        max_sv == 0.0 || svd.singular_values.iter().any(|&s| s <= max_sv * 1e-10 * d as f64);
    Ok(OrthogonalPair {
        wx: from_nalgebra(&u),
        wz: from_nalgebra(&v),
        rank_deficient,
    })
}

/// Mutual CSLS nearest neighbours of two (already mapped, unit-row) spaces:
/// every X row's best Z row and every Z row's best X row.
pub fn induce_dictionary<T: Scalar>(
    x_mapped: ArrayView2<'_, T>,
    z_mapped: ArrayView2<'_, T>,
    k: usize,
) -> Result<DictionaryPairs> {
    if x_mapped.nrows() == 0 || z_mapped.nrows() == 0 {
        return Err(Error::Empty("space for dictionary induction".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let sims = x_mapped.dot(&z_mapped.t());
    let mean_top = |row: ndarray::ArrayView1<'_, T>, k: usize| {
        let k = k.min(row.len());
        top_k(row.iter().copied(), k).iter().map(|&(_, s)| s).sum::<T>() / T::of(k as f64)
    };
    let r_x: Vec<T> = sims.axis_iter(Axis(0)).map(|r| mean_top(r, k)).collect();
    let r_z: Vec<T> = sims.axis_iter(Axis(1)).map(|c| mean_top(c, k)).collect();
    let two = T::of(2.0);

    let mut pairs = Vec::with_capacity(sims.nrows() + sims.ncols());
    for (i, row) in sims.axis_iter(Axis(0)).enumerate() {
        let scores = row.iter().zip(&r_z).map(|(&s, &r)| two * s - r);
        pairs.push((i, top_k(scores, 1)[0].0));
    }
    for (j, col) in sims.axis_iter(Axis(1)).enumerate() {
        let scores = col.iter().zip(&r_x).map(|(&s, &r)| two * s - r);
        pairs.push((top_k(scores, 1)[0].0, j));
    }
    Ok(DictionaryPairs::new(pairs))
}

/// Mean cosine of dictionary pairs in the common space.
pub fn dictionary_objective<T: Scalar>(xw: ArrayView2<'_, T>, zw: ArrayView2<'_, T>, dict: &DictionaryPairs) -> T {
    if dict.is_empty() {
        return T::zero();
    }
    let total: T = dict
        .pairs
        .iter()
        .map(|&(i, j)| {
            cosine(
                xw.row(i).as_slice().expect("contiguous"),
                zw.row(j).as_slice().expect("contiguous"),
            )
        })
        .sum();
    total / T::of(dict.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfLearningConfig {
    pub max_iters: usize,
    pub patience: usize,
    pub csls_k: usize,
}

impl Default for SelfLearningConfig {
    fn default() -> Self {
        Self {
            max_iters: 20,
            patience: 3,
            csls_k: DEFAULT_CSLS_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub dictionary_size: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfLearningResult<T> {
    pub mapping: OrthogonalPair<T>,
    /// Dictionary the returned mapping was fitted on.
    pub dictionary: DictionaryPairs,
    pub objective: T,
    pub history: Vec<IterationRecord>,
    /// The induced dictionary stopped changing.
    pub converged: bool,
}

/// Alternates Procrustes fits and CSLS induction, keeping the best objective seen.
///
/// Iteration 0 is the fit on `seed`.
pub fn self_learning_loop<T: Scalar>(
    x: ArrayView2<'_, T>,
    z: ArrayView2<'_, T>,
    seed: &DictionaryPairs,
    config: &SelfLearningConfig,
) -> Result<SelfLearningResult<T>> {
    let fit = fit_orthogonal_mapping(x, z, seed)?;
    let objective = dictionary_objective(fit.map_x(x).view(), fit.map_z(z).view(), seed);
    let mut history = vec![IterationRecord {
        iteration: 0,
        dictionary_size: seed.len(),
        objective: objective.to_f64_lossy(),
    }];
    let mut best = (fit.clone(), seed.clone(), objective);
    let mut current = (fit, seed.clone());
    let mut stale = 0;
    let mut converged = false;

    for iteration in 1..=config.max_iters {
        let (fit, dict) = &current;
        let induced = induce_dictionary(fit.map_x(x).view(), fit.map_z(z).view(), config.csls_k)?;
        if &induced == dict {
            converged = true;
            break;
        }
        let refit = fit_orthogonal_mapping(x, z, &induced)?;
        let objective = dictionary_objective(refit.map_x(x).view(), refit.map_z(z).view(), &induced);
        history.push(IterationRecord {
            iteration,
            dictionary_size: induced.len(),
            objective: objective.to_f64_lossy(),
        });
        if objective > best.2 {
            best = (refit.clone(), induced.clone(), objective);
            stale = 0;
        } else {
            stale += 1;
        }
        current = (refit, induced);
        if stale >= config.patience {
            break;
        }
    }

    Ok(SelfLearningResult {
        mapping: best.0,
        dictionary: best.1,
        objective: best.2,
        history,
        converged,
    })
}

/// A fitted mapping together with the preprocessing of each side, so that
/// arbitrary vectors of either space can be sent to the common space.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingModel<T> {
    pub mapping: OrthogonalPair<T>,
    pub x_prep: PreprocessRecord<T>,
    pub z_prep: PreprocessRecord<T>,
}

impl<T: Scalar> MappingModel<T> {
    pub fn map_x_vector(&self, v: &[T]) -> Vec<T> {
        let p = Array1::from(self.x_prep.apply(v));
        p.dot(&self.mapping.wx).to_vec()
    }

    pub fn map_z_vector(&self, v: &[T]) -> Vec<T> {
        let p = Array1::from(self.z_prep.apply(v));
        p.dot(&self.mapping.wz).to_vec()
    }

    pub fn dim(&self) -> usize {
        self.mapping.wx.nrows()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        let join = |it: &mut dyn Iterator<Item = &T>| it.map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
        writeln!(w, "mapping {}", self.dim()).map_err(io)?;
        for m in [&self.mapping.wx, &self.mapping.wz] {
            for row in m.rows() {
                writeln!(w, "{}", join(&mut row.iter())).map_err(io)?;
            }
        }
        writeln!(w, "{}", join(&mut self.x_prep.means.iter())).map_err(io)?;
        writeln!(w, "{}", join(&mut self.z_prep.means.iter())).map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        let d: usize = lines
            .next()
            .and_then(|(_, l)| l.strip_prefix("mapping "))
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::parse(path, 1, "expected `mapping D` header"))?;
        let mut row = || -> Result<Vec<T>> {
            let (i, line) = lines.next().ok_or_else(|| Error::parse(path, 0, "truncated mapping"))?;
            let v: Vec<T> = line
                .split_whitespace()
                .map(|f| f.parse::<T>().map_err(|_| Error::parse(path, i + 1, format!("bad value {f:?}"))))
                .collect::<Result<_>>()?;
            if v.len() != d {
                return Err(Error::parse(path, i + 1, format!("expected {d} values")));
            }
            Ok(v)
        };
        let mat = |row: &mut dyn FnMut() -> Result<Vec<T>>| -> Result<Array2<T>> {
            let flat: Vec<T> = (0..d).map(|_| row()).collect::<Result<Vec<_>>>()?.concat();
            Ok(Array2::from_shape_vec((d, d), flat).expect("d x d"))
        };
        let wx = mat(&mut row)?;
        let wz = mat(&mut row)?;
        let xm = row()?;
        let zm = row()?;
        Ok(Self {
            mapping: OrthogonalPair {
                wx,
                wz,
                rank_deficient: false,
            },
            x_prep: PreprocessRecord {
                means: xm,
                zero_rows: Vec::new(),
            },
            z_prep: PreprocessRecord {
                means: zm,
                zero_rows: Vec::new(),
            },
        })
    }
}

/// Output of [`learn_mapping`].
#[derive(Debug, Clone)]
pub struct LearnedMapping<T> {
    pub model: MappingModel<T>,
    pub x_mapped: EmbeddingMatrix<T>,
    pub z_mapped: EmbeddingMatrix<T>,
    pub result: SelfLearningResult<T>,
}

/// Preprocesses both spaces, seeds with identity pairs over shared tokens,
/// and runs the self-learning loop.
pub fn learn_mapping<T: Scalar>(
    x: &EmbeddingMatrix<T>,
    z: &EmbeddingMatrix<T>,
    config: &SelfLearningConfig,
) -> Result<LearnedMapping<T>> {
    let (xp, x_prep) = preprocess(x.data())?;
    let (zp, z_prep) = preprocess(z.data())?;
    let seed = DictionaryPairs::shared_tokens(x, z);
    let result = self_learning_loop(xp.view(), zp.view(), &seed, config)?;
    let x_mapped = EmbeddingMatrix::new(x.tokens().to_vec(), result.mapping.map_x(xp.view()))?;
    let z_mapped = EmbeddingMatrix::new(z.tokens().to_vec(), result.mapping.map_z(zp.view()))?;
    Ok(LearnedMapping {
        model: MappingModel {
            mapping: result.mapping.clone(),
            x_prep,
            z_prep,
        },
        x_mapped,
        z_mapped,
        result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0))
    }

    /// Orthogonal factor of a Gram-Schmidt pass over a random matrix.
    fn rotation(d: usize, seed: u64) -> Array2<f64> {
        let a = random(d, d, seed);
        let q = to_nalgebra(&a).qr().q();
        from_nalgebra(&q)
    }

    fn max_abs(a: &Array2<f64>) -> f64 {
        a.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn orthogonality_error(w: &Array2<f64>) -> f64 {
        let e = w.t().dot(w) - Array2::<f64>::eye(w.ncols());
        e.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn preprocess_hand_matrix() {
        let m: Array2<f64> = array![[3.0, 4.0], [1.0, 0.0], [0.0, 2.0]];
        let (p, rec) = preprocess(m.view()).unwrap();
        // normalized rows: (0.6,0.8), (1,0), (0,1); means (1.6/3, 1.8/3)
        let means: [f64; 2] = [1.6 / 3.0, 1.8 / 3.0];
        assert!((rec.means[0] - means[0]).abs() < 1e-12 && (rec.means[1] - means[1]).abs() < 1e-12);
        let rows: [[f64; 2]; 3] = [[0.6, 0.8], [1.0, 0.0], [0.0, 1.0]];
        for (i, r) in rows.iter().enumerate() {
            let c = [r[0] - means[0], r[1] - means[1]];
            let n = (c[0] * c[0] + c[1] * c[1]).sqrt();
            assert!((p[[i, 0]] - c[0] / n).abs() < 1e-12);
            assert!((p[[i, 1]] - c[1] / n).abs() < 1e-12);
        }
        assert!(rec.zero_rows.is_empty());
    }

    #[test]
    fn preprocess_identical_rows_are_flagged() {
        let m = array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        let (p, rec) = preprocess(m.view()).unwrap();
        assert_eq!(rec.zero_rows, vec![0, 1, 2]);
        assert!(p.iter().all(|&v| v == 0.0));
        assert!(preprocess(Array2::<f64>::zeros((0, 2)).view()).is_err());
    }

    #[test]
    fn preprocess_rows_are_unit() {
        let (p, rec) = preprocess(random(40, 7, 3).view()).unwrap();
        for (i, r) in p.rows().into_iter().enumerate() {
            if !rec.zero_rows.contains(&i) {
                assert!((r.dot(&r).sqrt() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identical_spaces_map_identically() {
        let (x, _) = preprocess(random(30, 6, 1).view()).unwrap();
        let fit = fit_orthogonal_mapping(x.view(), x.view(), &DictionaryPairs::identity(30)).unwrap();
        assert!(max_abs(&(fit.map_x(x.view()) - fit.map_z(x.view()))) <= 1e-6);
        assert!(orthogonality_error(&fit.wx) < 1e-6);
    }

    #[test]
    fn recovers_rotation() {
        let x = random(50, 20, 2);
        let r = rotation(20, 9);
        let z = x.dot(&r);
        let fit = fit_orthogonal_mapping(x.view(), z.view(), &DictionaryPairs::identity(50)).unwrap();
        assert!(max_abs(&(fit.map_x(x.view()) - fit.map_z(z.view()))) <= 1e-5);
        assert!(max_abs(&(fit.wx.dot(&fit.wz.t()) - &r)) <= 1e-5);
        assert!(orthogonality_error(&fit.wx) < 1e-6);
        assert!(orthogonality_error(&fit.wz) < 1e-6);
        assert!(!fit.rank_deficient);
    }

    #[test]
    fn mapping_preserves_norms_and_swaps_roles() {
        let (x, _) = preprocess(random(25, 5, 4).view()).unwrap();
        let (z, _) = preprocess(random(25, 5, 5).view()).unwrap();
        let dict = DictionaryPairs::new((0..25).map(|i| (i, (i * 7) % 25)).collect());
        let fit = fit_orthogonal_mapping(x.view(), z.view(), &dict).unwrap();
        let xw = fit.map_x(x.view());
        for (a, b) in x.rows().into_iter().zip(xw.rows()) {
            assert!((a.dot(&a).sqrt() - b.dot(&b).sqrt()).abs() < 1e-9);
        }
        let swapped = fit_orthogonal_mapping(z.view(), x.view(), &dict.reversed()).unwrap();
        assert!(max_abs(&(swapped.map_z(x.view()) - &xw)) < 1e-6);
        assert!(max_abs(&(swapped.map_x(z.view()) - fit.map_z(z.view()))) < 1e-6);
    }

    #[test]
    fn rank_deficient_still_orthogonal() {
        let x = array![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let fit = fit_orthogonal_mapping(x.view(), x.view(), &DictionaryPairs::identity(2)).unwrap();
        assert!(fit.rank_deficient);
        assert!(orthogonality_error(&fit.wx) < 1e-6);
    }

    #[test]
    fn bad_dictionaries_rejected() {
        let x = random(3, 2, 0);
        assert!(fit_orthogonal_mapping(x.view(), x.view(), &DictionaryPairs::default()).is_err());
        assert!(fit_orthogonal_mapping(x.view(), x.view(), &DictionaryPairs::new(vec![(0, 5)])).is_err());
    }

    /// CSLS argmax by direct evaluation of every pair's score.
    fn brute_force_induction(x: &Array2<f64>, z: &Array2<f64>, k: usize) -> DictionaryPairs {
        let cos = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| a.dot(&b);
        let r = |q: ndarray::ArrayView1<f64>, space: &Array2<f64>| {
            let mut s: Vec<f64> = space.rows().into_iter().map(|row| cos(q, row)).collect();
            s.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let k = k.min(s.len());
            s[..k].iter().sum::<f64>() / k as f64
        };
        let csls = |i: usize, j: usize| 2.0 * cos(x.row(i), z.row(j)) - r(x.row(i), z) - r(z.row(j), x);
        let mut pairs = Vec::new();
        for i in 0..x.nrows() {
            let mut best = 0;
            for j in 1..z.nrows() {
                if csls(i, j) > csls(i, best) {
                    best = j;
                }
            }
            pairs.push((i, best));
        }
        for j in 0..z.nrows() {
            let mut best = 0;
            for i in 1..x.nrows() {
                if csls(i, j) > csls(best, j) {
                    best = i;
                }
            }
            pairs.push((best, j));
        }
        DictionaryPairs::new(pairs)
    }

    #[test]
    fn induction_matches_brute_force() {
        let (x, _) = preprocess(random(30, 4, 11).view()).unwrap();
        let (z, _) = preprocess(random(30, 4, 12).view()).unwrap();
        for k in [1, 3, 10] {
            assert_eq!(induce_dictionary(x.view(), z.view(), k).unwrap(), brute_force_induction(&x, &z, k));
        }
        assert_eq!(induce_dictionary(x.view(), x.view(), 10).unwrap(), DictionaryPairs::identity(30));
        // k beyond the space size clamps
        assert_eq!(induce_dictionary(x.view(), z.view(), 500).unwrap(), brute_force_induction(&x, &z, 30));
        assert!(induce_dictionary(Array2::<f64>::zeros((0, 4)).view(), z.view(), 1).is_err());
    }

    #[test]
    fn identity_seed_converges_immediately() {
        let (x, _) = preprocess(random(40, 8, 21).view()).unwrap();
        let z = x.dot(&rotation(8, 22));
        let seed = DictionaryPairs::identity(40);
        let res = self_learning_loop(x.view(), z.view(), &seed, &SelfLearningConfig::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.history.len(), 1);
        let fit = fit_orthogonal_mapping(x.view(), z.view(), &seed).unwrap();
        assert_eq!(res.mapping, fit);
        assert!((res.objective - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_iterations_returns_seed_fit() {
        let (x, _) = preprocess(random(20, 4, 31).view()).unwrap();
        let (z, _) = preprocess(random(20, 4, 32).view()).unwrap();
        let seed = DictionaryPairs::identity(20);
        let cfg = SelfLearningConfig { max_iters: 0, ..Default::default() };
        let res = self_learning_loop(x.view(), z.view(), &seed, &cfg).unwrap();
        assert_eq!(res.mapping, fit_orthogonal_mapping(x.view(), z.view(), &seed).unwrap());
        assert_eq!(res.dictionary, seed);
    }

    #[test]
    fn best_objective_is_retained() {
        let (x, _) = preprocess(random(30, 5, 41).view()).unwrap();
        let (z, _) = preprocess(random(30, 5, 42).view()).unwrap();
        let seed = DictionaryPairs::identity(30);
        let res = self_learning_loop(x.view(), z.view(), &seed, &SelfLearningConfig::default()).unwrap();
        let best = res.history.iter().map(|h| h.objective).fold(f64::MIN, f64::max);
        assert!(res.objective >= res.history[0].objective);
        assert_eq!(res.objective, best);
    }

    #[test]
    fn mapping_model_round_trips() {
        let xm = EmbeddingMatrix::new((0..12).map(|i| format!("w{i}")).collect(), random(12, 3, 51)).unwrap();
        let zm = EmbeddingMatrix::new((0..12).map(|i| format!("w{i}")).collect(), random(12, 3, 52)).unwrap();
        let learned = learn_mapping(&xm, &zm, &SelfLearningConfig::default()).unwrap();
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("map.txt");
        learned.model.save(&p).unwrap();
        let back = MappingModel::<f64>::load(&p).unwrap();
        assert_eq!(back.mapping.wx, learned.model.mapping.wx);
        assert_eq!(back.z_prep.means, learned.model.z_prep.means);
        let v = xm.row(3);
        let mapped = back.map_x_vector(v);
        for (a, b) in mapped.iter().zip(learned.x_mapped.row(3)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
