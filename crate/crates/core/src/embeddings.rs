//! Monolingual embedding sets in the fastText / word2vec text format.
//!
//! A file starts with a header line `n d` followed by one line per word: the
//! token and `d` space-separated decimals. Rows are expected in descending
//! frequency order, which is what the vocabulary caps elsewhere rely on.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

pub type WordVector = Array1<f64>;

/// Vocabulary plus an `n × d` row-major matrix of word vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Array2<f64>,
}

/// What the loader dropped on the way in.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub duplicates_skipped: usize,
}

impl EmbeddingSet {
    /// Builds a set from words and a matching matrix. Rejects duplicates,
    /// empty input and non-finite entries.
    pub fn new(words: Vec<String>, vectors: Array2<f64>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        if vectors.nrows() != words.len() {
            return Err(Error::DimensionMismatch {
                expected: words.len(),
                found: vectors.nrows(),
            });
        }
        if vectors.ncols() == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be >= 1".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate word {w:?}")));
            }
        }
        if let Some((i, _)) = vectors
            .rows()
            .into_iter()
            .enumerate()
            .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidArgument(format!(
                "non-finite entry in vector of {:?}",
                words[i]
            )));
        }
        Ok(EmbeddingSet {
            words,
            index,
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, row: usize) -> &str {
        &self.words[row]
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn row_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn vector(&self, row: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(row)
    }

    pub fn get(&self, word: &str) -> Option<ArrayView1<'_, f64>> {
        self.row_of(word).map(|r| self.vectors.row(r))
    }

    /// First `n` rows (the `n` most frequent words).
    pub fn truncated(&self, n: usize) -> EmbeddingSet {
        let n = n.clamp(1, self.len());
        let words = self.words[..n].to_vec();
        let index = words.iter().cloned().zip(0..).collect();
        EmbeddingSet {
            words,
            index,
            vectors: self.vectors.slice(ndarray::s![..n, ..]).to_owned(),
        }
    }

    /// Scales every row to unit Euclidean norm.
    pub fn normalize(&self) -> Result<EmbeddingSet> {
        let mut vectors = self.vectors.clone();
        for (i, mut row) in vectors.axis_iter_mut(Axis(0)).enumerate() {
            let norm = row.dot(&row).sqrt();
            if norm == 0.0 {
                return Err(Error::ZeroNorm(self.words[i].clone()));
            }
            row.mapv_inplace(|v| v / norm);
        }
        Ok(EmbeddingSet {
            words: self.words.clone(),
            index: self.index.clone(),
            vectors,
        })
    }

    /// Arithmetic mean of the vectors of the in-vocabulary tokens, together with
    /// the number of tokens that were found. Out-of-vocabulary tokens are
    /// skipped.
    pub fn mean_vector<S: AsRef<str>>(&self, tokens: &[S]) -> Result<(WordVector, usize)> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("empty token list".into()));
        }
        let mut sum = Array1::zeros(self.dim());
        let mut used = 0usize;
        for t in tokens {
            if let Some(r) = self.row_of(t.as_ref()) {
                sum += &self.vectors.row(r);
                used += 1;
            }
        }
        if used == 0 {
            return Err(Error::NoTokenFound);
        }
        sum /= used as f64;
        Ok((sum, used))
    }

    /// Parses the text format from a reader, keeping at most `max_vocab` words.
    pub fn read_text<R: BufRead>(
        reader: R,
        max_vocab: usize,
        context: &str,
    ) -> Result<(EmbeddingSet, LoadReport)> {
        if max_vocab == 0 {
            return Err(Error::InvalidArgument("max_vocab must be >= 1".into()));
        }
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(l) => l.map_err(|e| Error::io(context, e))?,
            None => return Err(Error::format(context, 1, "missing header")),
        };
        let (n, d) = parse_header(&header).ok_or_else(|| {
            Error::format(context, 1, format!("malformed header {header:?}, expected \"n d\""))
        })?;

        let keep = n.min(max_vocab);
        let mut words = Vec::with_capacity(keep);
        let mut seen = HashMap::with_capacity(keep);
        let mut data = Vec::with_capacity(keep * d);
        let mut report = LoadReport::default();

        for (lineno, line) in lines.enumerate() {
            if words.len() >= keep {
                break;
            }
            let lineno = lineno + 2;
            let line = line.map_err(|e| Error::io(context, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_ascii_whitespace();
            let word = fields.next().expect("non-empty line has a token");
            let start = data.len();
            for f in fields {
                let v: f64 = f
                    .parse()
                    .map_err(|_| Error::format(context, lineno, format!("bad number {f:?}")))?;
                if !v.is_finite() {
                    return Err(Error::format(context, lineno, "non-finite value"));
                }
                data.push(v);
            }
            let arity = data.len() - start;
            if arity != d {
                return Err(Error::format(
                    context,
                    lineno,
                    format!("expected {d} values for {word:?}, found {arity}"),
                ));
            }
            if seen.contains_key(word) {
                data.truncate(start);
                report.duplicates_skipped += 1;
                continue;
            }
            seen.insert(word.to_string(), words.len());
            words.push(word.to_string());
        }
        if words.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        if report.duplicates_skipped > 0 {
            log::warn!(
                "{context}: skipped {} duplicate word(s)",
                report.duplicates_skipped
            );
        }
        let vectors = Array2::from_shape_vec((words.len(), d), data).expect("row arity checked");
        Ok((
            EmbeddingSet {
                words,
                index: seen,
                vectors,
            },
            report,
        ))
    }

    /// Writes the text format. Values use the shortest representation that
    /// parses back to the same `f64`.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim())?;
        for (word, row) in self.words.iter().zip(self.vectors.rows()) {
            w.write_all(word.as_bytes())?;
            for v in row {
                write!(w, " {v}")?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_text(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut it = line.split_ascii_whitespace();
    let n = it.next()?.parse().ok()?;
    let d: usize = it.next()?.parse().ok()?;
    if it.next().is_some() || d == 0 {
        return None;
    }
    Some((n, d))
}

/// Loads at most `max_vocab` words from a text embedding file.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    max_vocab: usize,
) -> Result<(EmbeddingSet, LoadReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    EmbeddingSet::read_text(BufReader::new(file), max_vocab, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn parse(text: &str, max_vocab: usize) -> Result<(EmbeddingSet, LoadReport)> {
        EmbeddingSet::read_text(text.as_bytes(), max_vocab, "test")
    }

    #[test]
    fn loads_words_in_file_order() {
        let (set, report) = parse("2 3\na 1 0 0\nb 0 1 0", 10).unwrap();
        assert_eq!(set.words(), ["a", "b"]);
        assert_eq!(set.dim(), 3);
        assert_eq!(report.duplicates_skipped, 0);
    }

    #[test]
    fn truncates_to_max_vocab() {
        let (set, _) = parse("2 3\na 1 0 0\nb 0 1 0", 1).unwrap();
        assert_eq!(set.words(), ["a"]);
    }

    #[test]
    fn keeps_first_duplicate() {
        let (set, report) = parse("2 3\na 1 0 0\na 0 1 0", 10).unwrap();
        assert_eq!(set.words(), ["a"]);
        assert_eq!(set.vector(0).to_vec(), vec![1.0, 0.0, 0.0]);
        assert_eq!(report.duplicates_skipped, 1);
    }

    #[test]
    fn tolerates_trailing_space() {
        let (set, _) = parse("1 2\nx 0.5 0.25 \n", 10).unwrap();
        assert_eq!(set.vector(0).to_vec(), vec![0.5, 0.25]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(parse("two 3\na 1 0 0", 10), Err(Error::Format { line: 1, .. })));
        assert!(matches!(parse("1 3\na 1 0", 10), Err(Error::Format { line: 2, .. })));
        assert!(matches!(parse("1 2\na 1 NaN", 10), Err(Error::Format { .. })));
        assert!(matches!(parse("1 2\na 1 inf", 10), Err(Error::Format { .. })));
        assert!(matches!(parse("0 2\n", 10), Err(Error::EmptyVocabulary)));
        assert!(matches!(parse("", 10), Err(Error::Format { .. })));
    }

    #[test]
    fn normalize_examples() {
        let set = EmbeddingSet::new(vec!["a".into(), "b".into()], array![[3.0, 4.0, 0.0], [1.0, 0.0, 0.0]])
            .unwrap()
            .normalize()
            .unwrap();
        assert!((set.vector(0)[0] - 0.6).abs() < 1e-15);
        assert!((set.vector(0)[1] - 0.8).abs() < 1e-15);
        assert_eq!(set.vector(1).to_vec(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_names_zero_row() {
        let set = EmbeddingSet::new(vec!["ok".into(), "zero".into()], array![[1.0, 1.0], [0.0, 0.0]]).unwrap();
        match set.normalize() {
            Err(Error::ZeroNorm(w)) => assert_eq!(w, "zero"),
            other => panic!("expected ZeroNorm, got {other:?}"),
        }
    }

    #[test]
    fn normalize_random_rows_have_unit_norm() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let m = Array2::from_shape_fn((10, 5), |_| rng.random_range(-2.0..2.0));
        let words = (0..10).map(|i| format!("w{i}")).collect();
        let set = EmbeddingSet::new(words, m).unwrap().normalize().unwrap();
        for row in set.vectors().rows() {
            let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn mean_vector_examples() {
        let set = EmbeddingSet::new(vec!["a".into(), "b".into()], array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let (v, used) = set.mean_vector(&["a"]).unwrap();
        assert_eq!((v.to_vec(), used), (vec![1.0, 0.0], 1));
        let (v, used) = set.mean_vector(&["a", "b"]).unwrap();
        assert_eq!((v.to_vec(), used), (vec![0.5, 0.5], 2));
        let (v, used) = set.mean_vector(&["a", "zzz"]).unwrap();
        assert_eq!((v.to_vec(), used), (vec![1.0, 0.0], 1));
        assert!(matches!(set.mean_vector(&["zzz"]), Err(Error::NoTokenFound)));
        assert!(set.mean_vector::<&str>(&[]).is_err());
    }

    fn arb_set() -> impl Strategy<Value = EmbeddingSet> {
        (1usize..8, 1usize..6).prop_flat_map(|(n, d)| {
            proptest::collection::vec(-10.0f64..10.0, n * d).prop_map(move |data| {
                let mut m = Array2::from_shape_vec((n, d), data).unwrap();
                // keep rows away from zero so normalize is defined
                m.column_mut(0).mapv_inplace(|v| if v.abs() < 0.1 { 1.0 } else { v });
                EmbeddingSet::new((0..n).map(|i| format!("w{i}")).collect(), m).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn text_round_trip(set in arb_set()) {
            let mut buf = Vec::new();
            set.write_text(&mut buf).unwrap();
            let (back, _) = EmbeddingSet::read_text(&buf[..], usize::MAX, "rt").unwrap();
            prop_assert_eq!(back, set);
        }

        #[test]
        fn normalize_is_idempotent(set in arb_set()) {
            let once = set.normalize().unwrap();
            let twice = once.normalize().unwrap();
            for (a, b) in once.vectors().iter().zip(twice.vectors()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn mean_vector_permutation_invariant(set in arb_set(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut tokens: Vec<String> = set.words().to_vec();
            tokens.push("oov".into());
            let (a, na) = set.mean_vector(&tokens).unwrap();
            tokens.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (b, nb) = set.mean_vector(&tokens).unwrap();
            prop_assert_eq!(na, nb);
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
