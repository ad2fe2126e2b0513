//! Projection of low-resource words into a high-resource embedding space
//! through a bilingual lexicon.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::embedstore::{unit_normalize, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconEntry {
    pub source: String,
    pub translation: Vec<String>,
}

/// Source words paired with one or more translation words.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BilingualLexicon {
    pub entries: Vec<LexiconEntry>,
}

impl BilingualLexicon {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.source.as_str())
    }

    pub fn from_entries<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<S>)>,
        S: Into<String>,
    {
        let mut seen = HashMap::new();
        let mut out = Vec::new();
        for (i, (src, tr)) in entries.into_iter().enumerate() {
            let source: String = src.into();
            let translation: Vec<String> = tr.into_iter().map(Into::into).collect();
            if translation.is_empty() {
                return Err(Error::InvalidArgument(format!("entry {source:?} has no translation")));
            }
            if let Some(first) = seen.insert(source.clone(), i + 1) {
                return Err(Error::DuplicateEntry {
                    word: source,
                    first,
                    second: i + 1,
                });
            }
            out.push(LexiconEntry { source, translation });
        }
        Ok(Self { entries: out })
    }
}

/// Reads a TSV lexicon: `source<TAB>space separated translation words`.
///
/// Both columns are lowercased to match the corpus tokenizer.
pub fn read_lexicon(path: &Path) -> Result<BilingualLexicon> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (src, tr) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, lineno, "missing translation column"))?;
        let source = src.trim().to_lowercase();
        let translation: Vec<String> = tr.split_whitespace().map(str::to_lowercase).collect();
        if source.is_empty() {
            return Err(Error::parse(path, lineno, "empty source word"));
        }
        if translation.is_empty() {
            return Err(Error::parse(path, lineno, "empty translation column"));
        }
        if let Some(&first) = seen.get(&source) {
            return Err(Error::DuplicateEntry {
                word: source,
                first,
                second: lineno,
            });
        }
        seen.insert(source.clone(), lineno);
        entries.push(LexiconEntry { source, translation });
    }
    Ok(BilingualLexicon { entries })
}

/// Sum of the unit-normalized high-resource vectors of the entry's
/// translation words, with the words absent from `hr` that were dropped.
/// `None` when no translation word is present.
pub fn project_entry<T: Scalar>(entry: &LexiconEntry, hr: &EmbeddingMatrix<T>) -> (Option<Vec<T>>, Vec<String>) {
    let mut sum: Option<Vec<T>> = None;
    let mut missing = Vec::new();
    for word in &entry.translation {
        match hr.get(word) {
            Some(row) => {
                let (unit, _) = unit_normalize(row);
                match sum.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&unit).for_each(|(a, &u)| *a += u),
                    None => sum = Some(unit),
                }
            }
            None => missing.push(word.clone()),
        }
    }
    (sum, missing)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProjectionReport {
    pub covered: usize,
    /// Source words whose translation words were all missing.
    pub skipped: Vec<String>,
    /// Per covered entry, the translation words that were missing.
    pub dropped_words: Vec<(String, Vec<String>)>,
}

impl fmt::Display for ProjectionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "covered\t{}", self.covered)?;
        writeln!(f, "skipped\t{}", self.skipped.len())?;
        for s in &self.skipped {
            writeln!(f, "skip\t{s}\tall translation words missing")?;
        }
        for (s, words) in &self.dropped_words {
            writeln!(f, "drop\t{s}\t{}", words.join(" "))?;
        }
        Ok(())
    }
}

/// One row per covered lexicon entry, in lexicon order.
pub fn build_projected_matrix<T: Scalar>(
    lexicon: &BilingualLexicon,
    hr: &EmbeddingMatrix<T>,
) -> (EmbeddingMatrix<T>, ProjectionReport) {
    let mut report = ProjectionReport::default();
    let mut rows = Vec::new();
    for entry in &lexicon.entries {
        let (vector, missing) = project_entry(entry, hr);
        match vector {
            Some(v) => {
                report.covered += 1;
                if !missing.is_empty() {
                    report.dropped_words.push((entry.source.clone(), missing));
                }
                rows.push((entry.source.clone(), v));
            }
            None => report.skipped.push(entry.source.clone()),
        }
    }
    let matrix = EmbeddingMatrix::from_rows(hr.dim(), rows).expect("unique sources, hr dim");
    (matrix, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hr() -> EmbeddingMatrix<f64> {
        EmbeddingMatrix::from_rows(
            2,
            [
                ("man", vec![3.0, 4.0]),
                ("listen", vec![1.0, 0.0]),
                ("everyone", vec![0.0, 2.0]),
                ("woman", vec![-2.0, 0.0]),
                ("child", vec![0.0, -0.5]),
            ]
            .into_iter()
            .map(|(t, v)| (t.to_string(), v)),
        )
        .unwrap()
    }

    fn entry(src: &str, tr: &[&str]) -> LexiconEntry {
        LexiconEntry {
            source: src.into(),
            translation: tr.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn reads_tsv_entries() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("lex.tsv");
        fs::write(&p, "indoda\tman\n\nbethuna\tlisten everyone\n").unwrap();
        let lex = read_lexicon(&p).unwrap();
        assert_eq!(lex.entries, vec![entry("indoda", &["man"]), entry("bethuna", &["listen", "everyone"])]);
    }

    #[test]
    fn duplicate_source_reports_both_lines() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("lex.tsv");
        fs::write(&p, "a\tx\nb\ty\na\tx\n").unwrap();
        match read_lexicon(&p) {
            Err(Error::DuplicateEntry { first: 1, second: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_an_error() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("lex.tsv");
        fs::write(&p, "a\tx\nlonely\n").unwrap();
        assert!(matches!(read_lexicon(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn single_word_projection_is_normalized() {
        let (v, missing) = project_entry(&entry("indoda", &["man"]), &hr());
        let v = v.unwrap();
        assert!(missing.is_empty());
        assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn sequence_projection_sums_units() {
        let (v, _) = project_entry(&entry("bethuna", &["listen", "everyone"]), &hr());
        assert_eq!(v.unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn partial_and_total_oov() {
        let (v, missing) = project_entry(&entry("x", &["listen", "nothing"]), &hr());
        assert_eq!(v.unwrap(), vec![1.0, 0.0]);
        assert_eq!(missing, vec!["nothing"]);
        let (v, missing) = project_entry(&entry("y", &["nope", "nada"]), &hr());
        assert!(v.is_none());
        assert_eq!(missing.len(), 2);
    }

    #[test]
    fn matrix_and_report() {
        let empty = BilingualLexicon::default();
        let (m, r) = build_projected_matrix(&empty, &hr());
        assert!(m.is_empty());
        assert_eq!((r.covered, r.skipped.len()), (0, 0));

        let two = BilingualLexicon::from_entries([("a", vec!["man"]), ("b", vec!["zzz"])]).unwrap();
        let (m, r) = build_projected_matrix(&two, &hr());
        assert_eq!(m.len(), 1);
        assert_eq!((r.covered, r.skipped.len()), (1, 1));

        let five = BilingualLexicon::from_entries([
            ("indoda", vec!["man"]),
            ("bethuna", vec!["listen", "everyone"]),
            ("umfazi", vec!["woman"]),
            ("umntwana", vec!["child", "missing"]),
            ("abantu", vec!["man", "woman", "child"]),
        ])
        .unwrap();
        let (m, r) = build_projected_matrix(&five, &hr());
        assert_eq!(m.dim(), 2);
        assert_eq!(r.covered + r.skipped.len(), 5);
        for e in &five.entries {
            assert_eq!(m.get(&e.source).unwrap(), project_entry(e, &hr()).0.unwrap().as_slice());
        }
        assert_eq!(r.dropped_words, vec![("umntwana".to_string(), vec!["missing".to_string()])]);
    }
}
