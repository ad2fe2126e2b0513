//! Token-indexed embedding matrices: text I/O, normalization, and similarity search.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::{dot, l2_norm, Scalar};

/// Dense embedding matrix with one row per unique token.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<T> {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    data: Array2<T>,
}

impl<T: Scalar> EmbeddingMatrix<T> {
    /// Builds a matrix, rejecting duplicate tokens, non-finite values and a zero dimension.
    pub fn new(tokens: Vec<String>, data: Array2<T>) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        if tokens.len() != data.nrows() {
            return Err(Error::DimensionMismatch {
                expected: tokens.len(),
                got: data.nrows(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("embedding contains non-finite values".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if let Some(prev) = index.insert(t.clone(), i) {
                return Err(Error::DuplicateEntry {
                    word: t.clone(),
                    first: prev + 1,
                    second: i + 1,
                });
            }
        }
        Ok(Self {
            tokens,
            index,
            data: data.as_standard_layout().into_owned(),
        })
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(Vec::new(), Array2::zeros((0, dim)))
    }

    /// Builds a matrix from `(token, row)` pairs; all rows must have length `dim`.
    pub fn from_rows<I>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<T>)>,
    {
        let mut tokens = Vec::new();
        let mut flat = Vec::new();
        for (tok, row) in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            tokens.push(tok);
            flat.extend(row);
        }
        let data = Array2::from_shape_vec((tokens.len(), dim), flat).expect("shape checked");
        Self::new(tokens, data)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.data.row(i).to_slice().expect("standard layout")
    }

    pub fn get(&self, token: &str) -> Option<&[T]> {
        self.index_of(token).map(|i| self.row(i))
    }

    pub fn data(&self) -> ArrayView2<'_, T> {
        self.data.view()
    }

    pub fn into_parts(self) -> (Vec<String>, Array2<T>) {
        (self.tokens, self.data)
    }

    /// Rows whose tokens are listed in `tokens`, in that order; missing tokens are skipped.
    pub fn select(&self, tokens: &[String]) -> Self {
        let rows = tokens
            .iter()
            .filter_map(|t| self.get(t).map(|r| (t.clone(), r.to_vec())));
        Self::from_rows(self.dim(), rows).expect("subset of a valid matrix")
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingMatrix<U> {
        EmbeddingMatrix {
            tokens: self.tokens.clone(),
            index: self.index.clone(),
            data: self.data.mapv(|v| U::of(v.to_f64_lossy())),
        }
    }
}

/// Side information from [`read_embeddings`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReadReport {
    pub header: bool,
    pub duplicates: usize,
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut it = line.split_whitespace();
    let n = it.next()?.parse().ok()?;
    let d = it.next()?.parse().ok()?;
    it.next().is_none().then_some((n, d))
}

/// Reads a word2vec/GloVe style text file, with or without an `N D` header line.
///
/// Duplicate tokens keep their first occurrence.
pub fn read_embeddings<T: Scalar>(path: &Path) -> Result<(EmbeddingMatrix<T>, ReadReport)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();

    let mut report = ReadReport::default();
    let mut expected_rows = None;
    let mut dim = None;
    if let Some((_, first)) = lines.peek() {
        if let Some((n, d)) = parse_header(first) {
            report.header = true;
            expected_rows = Some(n);
            dim = Some(d);
            lines.next();
        }
    }

    let mut tokens = Vec::new();
    let mut seen = HashMap::new();
    let mut flat: Vec<T> = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let mut fields = line.split_whitespace();
        let token = fields.next().expect("non-blank line");
        let mut values = Vec::new();
        for f in fields {
            let v: T = f
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("non-numeric value {f:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, lineno, format!("non-finite value {f:?}")));
            }
            values.push(v);
        }
        let d = *dim.get_or_insert(values.len());
        if values.len() != d {
            return Err(Error::parse(
                path,
                lineno,
                format!("{} values, expected {d}", values.len()),
            ));
        }
        if seen.contains_key(token) {
            report.duplicates += 1;
            continue;
        }
        seen.insert(token.to_string(), tokens.len());
        tokens.push(token.to_string());
        flat.extend(values);
    }

    let dim = dim.ok_or_else(|| Error::Empty(format!("{} has no embedding rows", path.display())))?;
    if let Some(n) = expected_rows {
        let rows = tokens.len() + report.duplicates;
        if rows != n {
            return Err(Error::parse(path, 1, format!("header declares {n} rows, found {rows}")));
        }
    }
    let data = Array2::from_shape_vec((tokens.len(), dim), flat).expect("rows checked");
    Ok((EmbeddingMatrix::new(tokens, data)?, report))
}

/// Writes header form with six decimals per value.
pub fn write_embeddings<T: Scalar>(matrix: &EmbeddingMatrix<T>, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{} {}", matrix.len(), matrix.dim()).map_err(io)?;
    for (i, tok) in matrix.tokens().iter().enumerate() {
        write!(w, "{tok}").map_err(io)?;
        for v in matrix.row(i) {
            write!(w, " {:.6}", v.to_f64_lossy()).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Returns the L2-normalized vector and whether the input had zero norm
/// (in which case it is returned unchanged).
pub fn unit_normalize<T: Scalar>(v: &[T]) -> (Vec<T>, bool) {
    let mut out = v.to_vec();
    let zero = normalize_in_place(&mut out);
    (out, zero)
}

/// Normalizes in place; returns true if the vector had zero norm and was left as is.
pub fn normalize_in_place<T: Scalar>(v: &mut [T]) -> bool {
    let n = l2_norm(v);
    if n == T::zero() {
        return true;
    }
    v.iter_mut().for_each(|x| *x /= n);
    false
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> T {
    let denom = l2_norm(a) * l2_norm(b);
    if denom == T::zero() {
        T::zero()
    } else {
        dot(a, b) / denom
    }
}

/// Indices of the `k` largest scores, descending, ties by lower index.
pub(crate) fn top_k<T: Scalar>(scores: impl IntoIterator<Item = T>, k: usize) -> Vec<(usize, T)> {
    let mut ranked: Vec<(usize, T)> = scores.into_iter().enumerate().collect();
    let cmp = |a: &(usize, T), b: &(usize, T)| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    };
    let k = k.min(ranked.len());
    if k < ranked.len() && k > 0 {
        ranked.select_nth_unstable_by(k - 1, cmp);
        ranked.truncate(k);
    }
    ranked.sort_by(cmp);
    ranked.truncate(k);
    ranked
}

/// Top-`k` rows of `matrix` by cosine similarity with `query`.
pub fn nearest_neighbors<T: Scalar>(
    matrix: &EmbeddingMatrix<T>,
    query: &[T],
    k: usize,
) -> Result<Vec<(String, T)>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if query.len() != matrix.dim() {
        return Err(Error::DimensionMismatch {
            expected: matrix.dim(),
            got: query.len(),
        });
    }
    let scores = (0..matrix.len()).map(|i| cosine(matrix.row(i), query));
    Ok(top_k(scores, k)
        .into_iter()
        .map(|(i, s)| (matrix.tokens[i].clone(), s))
        .collect())
}

/// Mean similarity of each query row to its `k` nearest rows of `space`.
///
/// Rows are assumed unit-normalized, so similarity is the dot product.
/// `k` is clamped to the size of `space`.
pub fn csls_neighborhood<T: Scalar>(
    space: ArrayView2<'_, T>,
    queries: ArrayView2<'_, T>,
    k: usize,
) -> Result<Vec<T>> {
    if space.nrows() == 0 {
        return Err(Error::Empty("CSLS neighbourhood space".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let k = k.min(space.nrows());
    let sims = queries.dot(&space.t());
    Ok(sims
        .axis_iter(Axis(0))
        .map(|row| {
            let best = top_k(row.iter().copied(), k);
            best.iter().map(|&(_, s)| s).sum::<T>() / T::of(k as f64)
        })
        .collect())
}

/// Cross-domain similarity local scaling: `2 cos(x, y) - r_t(x) - r_s(y)`.
pub fn csls_score<T: Scalar>(x: &[T], y: &[T], r_t_x: T, r_s_y: T) -> T {
    T::of(2.0) * dot(x, y) - r_t_x - r_s_y
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn write_file(body: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("e.vec");
        fs::write(&p, body).unwrap();
        (d, p)
    }

    fn basis() -> EmbeddingMatrix<f64> {
        EmbeddingMatrix::new(
            vec!["x".into(), "y".into(), "z".into()],
            array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        )
        .unwrap()
    }

    #[test]
    fn reads_header_form() {
        let (_d, p) = write_file("2 3\na 1 0 0\nb 0 1 0\n");
        let (m, r) = read_embeddings::<f64>(&p).unwrap();
        assert!(r.header);
        assert_eq!((m.len(), m.dim()), (2, 3));
        assert_eq!(m.get("b").unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn reads_headerless_form() {
        let (_d, p) = write_file("a 1 0 0.5\nb 0 1 -2e-1\n");
        let (m, r) = read_embeddings::<f32>(&p).unwrap();
        assert!(!r.header);
        assert_eq!((m.len(), m.dim()), (2, 3));
        assert_eq!(m.get("b").unwrap()[2], -0.2);
    }

    #[test]
    fn short_row_is_an_error_with_line() {
        let (_d, p) = write_file("1 3\na 1 0\n");
        match read_embeddings::<f64>(&p) {
            Err(Error::Parse { line: 2, message, .. }) => assert!(message.contains("expected 3")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_is_an_error() {
        let (_d, p) = write_file("a 1 zz\n");
        assert!(matches!(read_embeddings::<f64>(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn duplicates_keep_first() {
        let (_d, p) = write_file("a 1 2\nb 3 4\na 5 6\n");
        let (m, r) = read_embeddings::<f64>(&p).unwrap();
        assert_eq!(r.duplicates, 1);
        assert_eq!(m.get("a").unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn writes_header_and_empty_matrix() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("o.vec");
        write_embeddings(&basis(), &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next(), Some("3 3"));

        write_embeddings(&EmbeddingMatrix::<f64>::empty(7).unwrap(), &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "0 7\n");
        let (m, _) = read_embeddings::<f64>(&p).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.dim(), 7);
    }

    #[test]
    fn normalization_cases() {
        let (v, zero) = unit_normalize(&[3.0f64, 4.0]);
        assert!(!zero);
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        let (v, zero) = unit_normalize(&[0.0f64, 0.0]);
        assert!(zero);
        assert_eq!(v, vec![0.0, 0.0]);
        let (v, _) = unit_normalize(&[0.0f64, 1.0]);
        assert_eq!(v, vec![0.0, 1.0]);
    }

    #[test]
    fn neighbors_on_basis() {
        let m = basis();
        let nn = nearest_neighbors(&m, &[1.0, 0.0, 0.0], 2).unwrap();
        assert_eq!(nn[0], ("x".to_string(), 1.0));
        assert_eq!(nn[1].1, 0.0);
        assert_eq!(nn[1].0, "y");
        assert_eq!(nearest_neighbors(&m, &[0.0, 0.0, 1.0], 10).unwrap().len(), 3);
        assert!(nearest_neighbors(&m, &[1.0, 0.0], 1).is_err());
    }

    #[test]
    fn csls_single_candidate_is_zero() {
        let x: Array2<f64> = array![[0.6, 0.8]];
        let y = array![[1.0, 0.0]];
        let rt = csls_neighborhood(y.view(), x.view(), 1).unwrap();
        let rs = csls_neighborhood(x.view(), y.view(), 1).unwrap();
        let s = csls_score(x.row(0).as_slice().unwrap(), y.row(0).as_slice().unwrap(), rt[0], rs[0]);
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn csls_identical_spaces_self_score_is_zero() {
        let m = basis();
        let rt = csls_neighborhood(m.data(), m.data(), 1).unwrap();
        assert_eq!(rt, vec![1.0; 3]);
        assert_eq!(csls_score(m.row(0), m.row(0), rt[0], rt[0]), 0.0);
        assert!(csls_neighborhood(Array2::<f64>::zeros((0, 3)).view(), m.data(), 1).is_err());
    }

    #[test]
    fn csls_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut rand_space = |n: usize| {
            let mut a = Array2::<f64>::from_shape_fn((n, 3), |_| rng.gen_range(-1.0..1.0));
            for mut r in a.rows_mut() {
                normalize_in_place(r.as_slice_mut().unwrap());
            }
            a
        };
        let xs = rand_space(3);
        let zs = rand_space(3);
        let k = 2;
        let rt = csls_neighborhood(zs.view(), xs.view(), k).unwrap();
        let rs = csls_neighborhood(xs.view(), zs.view(), k).unwrap();
        // brute force
        let mean_top = |q: ndarray::ArrayView1<f64>, space: &Array2<f64>| {
            let mut c: Vec<f64> = space.rows().into_iter().map(|r| r.dot(&q)).collect();
            c.sort_by(|a, b| b.partial_cmp(a).unwrap());
            c[..k].iter().sum::<f64>() / k as f64
        };
        for i in 0..3 {
            for j in 0..3 {
                let bx = mean_top(xs.row(i), &zs);
                let by = mean_top(zs.row(j), &xs);
                let expect = 2.0 * xs.row(i).dot(&zs.row(j)) - bx - by;
                let got = csls_score(
                    xs.row(i).as_slice().unwrap(),
                    zs.row(j).as_slice().unwrap(),
                    rt[i],
                    rs[j],
                );
                assert!((got - expect).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn write_read_round_trip(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data = Array2::<f64>::from_shape_fn((10, 5), |_| rng.gen_range(-1.0..1.0));
            let tokens = (0..10).map(|i| format!("w{i}")).collect();
            let m = EmbeddingMatrix::new(tokens, data).unwrap();
            let d = tempfile::tempdir().unwrap();
            let p = d.path().join("m.vec");
            write_embeddings(&m, &p).unwrap();
            let (back, _) = read_embeddings::<f64>(&p).unwrap();
            prop_assert_eq!(back.tokens(), m.tokens());
            for (a, b) in back.data().iter().zip(m.data().iter()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }

        #[test]
        fn normalize_is_idempotent(v in proptest::collection::vec(-100.0f64..100.0, 1..10)) {
            let (once, zero) = unit_normalize(&v);
            prop_assume!(!zero);
            let (twice, _) = unit_normalize(&once);
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn row_query_finds_itself(seed in any::<u64>(), pick in 0usize..8) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data = Array2::<f64>::from_shape_fn((8, 4), |_| rng.gen_range(-1.0..1.0));
            let m = EmbeddingMatrix::new((0..8).map(|i| format!("t{i}")).collect(), data).unwrap();
            let nn = nearest_neighbors(&m, m.row(pick), 1).unwrap();
            prop_assert_eq!(&nn[0].0, &format!("t{pick}"));
            prop_assert!((nn[0].1 - 1.0).abs() < 1e-9);
        }
    }
}
