//! Bilingual lexicon induction (P@1) and the model-selection criteria.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array1;
use serde::Serialize;

use crate::concepts::ConceptCorpus;
use crate::embeddings::{EmbeddingSet, WordVector};
use crate::error::{Error, Result};
use crate::mapping::MappingMatrix;
use crate::retrieval::{best_targets, induce_dictionary, map_source, Metric, NeighborhoodStats};

/// Source word → admissible target translations.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BilingualDictionary {
    entries: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DictionaryReport {
    pub skipped: Vec<(usize, String)>,
}

impl BilingualDictionary {
    pub fn from_pairs<S: Into<String>, T: Into<String>>(pairs: impl IntoIterator<Item = (S, T)>) -> Self {
        let mut entries: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (s, t) in pairs {
            entries.entry(s.into()).or_default().insert(t.into());
        }
        BilingualDictionary { entries }
    }

    pub fn read_tsv<R: BufRead>(reader: R, context: &str) -> Result<(Self, DictionaryReport)> {
        let mut pairs = Vec::new();
        let mut report = DictionaryReport::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(context, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                [s, t] if !s.is_empty() && !t.is_empty() => pairs.push((s.to_string(), t.to_string())),
                _ => report
                    .skipped
                    .push((i + 1, format!("expected 2 tab-separated fields, found {}", fields.len()))),
            }
        }
        if !report.skipped.is_empty() {
            log::warn!("{context}: skipped {} malformed line(s)", report.skipped.len());
        }
        let dict = Self::from_pairs(pairs);
        if dict.is_empty() {
            return Err(Error::Empty(format!("{context}: dictionary has no entries")));
        }
        Ok((dict, report))
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (s, ts) in &self.entries {
            for t in ts {
                writeln!(w, "{s}\t{t}")?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, source: &str) -> Option<&BTreeSet<String>> {
        self.entries.get(source)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeSet<String>)> {
        self.entries.iter()
    }
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<(BilingualDictionary, DictionaryReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BilingualDictionary::read_tsv(BufReader::new(file), &path.display().to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PAt1Report {
    pub p_at_1: f64,
    /// Fraction of dictionary source words present in the source vocabulary.
    pub coverage: f64,
    pub metric: Metric,
    /// CSLS neighbourhood size, when CSLS was used.
    pub k: Option<usize>,
    pub evaluable: usize,
    pub total: usize,
}

/// Fraction of in-vocabulary dictionary source words whose top retrieved
/// target is one of their admissible translations.
pub fn evaluate_p_at_1(
    w: &MappingMatrix,
    src: &EmbeddingSet,
    tgt: &EmbeddingSet,
    dict: &BilingualDictionary,
    metric: Metric,
    stats: Option<&NeighborhoodStats>,
) -> Result<PAt1Report> {
    let entries: Vec<(usize, &BTreeSet<String>)> = dict
        .iter()
        .filter_map(|(s, ts)| src.row_of(s).map(|r| (r, ts)))
        .collect();
    if entries.is_empty() {
        return Err(Error::Empty("no dictionary source word is in the source vocabulary".into()));
    }
    let mapped = map_source(w, src)?;
    let rows: Vec<usize> = entries.iter().map(|e| e.0).collect();
    let best = best_targets(mapped.view(), &rows, tgt, metric, stats)?;
    let correct = entries
        .iter()
        .zip(&best)
        .filter(|((_, ts), nb)| ts.contains(tgt.word(nb.row)))
        .count();
    Ok(PAt1Report {
        p_at_1: correct as f64 / entries.len() as f64,
        coverage: entries.len() as f64 / dict.len() as f64,
        metric,
        k: match metric {
            Metric::Csls => stats.map(|s| s.k),
            Metric::Nn => None,
        },
        evaluable: entries.len(),
        total: dict.len(),
    })
}

fn cosine(a: &WordVector, b: &WordVector) -> f64 {
    let d = a.dot(b);
    let n = (a.dot(a) * b.dot(b)).sqrt();
    if n == 0.0 {
        0.0
    } else {
        d / n
    }
}

fn mean_pair_cosine(w: &MappingMatrix, pairs: impl Iterator<Item = Option<(WordVector, WordVector)>>) -> Result<f64> {
    let cosines: Vec<f64> = pairs
        .flatten()
        .map(|(s, t)| w.apply(s.view()).map(|ws| cosine(&ws, &t)))
        .collect::<Result<_>>()?;
    if cosines.is_empty() {
        return Err(Error::Empty("no concept is embeddable on both sides".into()));
    }
    Ok(cosines.iter().sum::<f64>() / cosines.len() as f64)
}

/// Mean over concepts of `cos(W · mean(source title), mean(target title))`.
/// Concepts whose title is out of vocabulary on either side are skipped.
pub fn criterion_title(w: &MappingMatrix, corpus: &ConceptCorpus, src: &EmbeddingSet, tgt: &EmbeddingSet) -> Result<f64> {
    mean_pair_cosine(
        w,
        corpus.pairs().iter().map(|p| {
            if p.title_src.is_empty() || p.title_tgt.is_empty() {
                return None;
            }
            let s = src.mean_vector(&p.title_src).ok()?.0;
            let t = tgt.mean_vector(&p.title_tgt).ok()?.0;
            Some((s, t))
        }),
    )
}

/// The `m` most frequent in-vocabulary words of an article, ties broken
/// lexicographically.
fn top_words<'a>(counts: &'a BTreeMap<String, u64>, set: &EmbeddingSet, m: usize) -> Vec<&'a str> {
    let mut words: Vec<(&str, u64)> = counts
        .iter()
        .filter(|(w, _)| set.contains(w))
        .map(|(w, &c)| (w.as_str(), c))
        .collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    words.truncate(m);
    words.into_iter().map(|(w, _)| w).collect()
}

/// Like [`criterion_title`], but each side of a pair is represented by the mean
/// of its article's `m` most frequent in-vocabulary words.
pub fn criterion_topwords(
    w: &MappingMatrix,
    corpus: &ConceptCorpus,
    src: &EmbeddingSet,
    tgt: &EmbeddingSet,
    m: usize,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be >= 1".into()));
    }
    mean_pair_cosine(
        w,
        corpus.pairs().iter().map(|p| {
            let s = top_words(&p.src_counts, src, m);
            let t = top_words(&p.tgt_counts, tgt, m);
            if s.is_empty() || t.is_empty() {
                return None;
            }
            Some((src.mean_vector(&s).ok()?.0, tgt.mean_vector(&t).ok()?.0))
        }),
    )
}

/// Mean cosine of the mutual-nearest CSLS pairs among the `top_n` most
/// frequent source words. Needs no corpus.
pub fn criterion_mean_cosine(
    w: &MappingMatrix,
    src: &EmbeddingSet,
    tgt: &EmbeddingSet,
    top_n: usize,
    csls_k: usize,
) -> Result<f64> {
    let dict = induce_dictionary(w, src, tgt, top_n, Metric::Csls, csls_k)?;
    let mapped = map_source(w, src)?;
    let total: f64 = dict.pairs.iter().map(|&(s, t)| mapped.row(s).dot(&tgt.vector(t))).sum();
    Ok(total / dict.len() as f64)
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let rx = ranks(x);
    let ry = ranks(y);
    pearson(&rx, &ry)
}

fn ranks(v: &[f64]) -> Array1<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = Array1::zeros(v.len());
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let ma = a.mean().unwrap_or(0.0);
    let mb = b.mean().unwrap_or(0.0);
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        da += (x - ma).powi(2);
        db += (y - mb).powi(2);
    }
    if da == 0.0 || db == 0.0 {
        return 0.0;
    }
    num / (da * db).sqrt()
}
