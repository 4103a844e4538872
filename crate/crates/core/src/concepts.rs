//! Concept-aligned article pairs and the hierarchical sampler built on them.
//!
//! The corpus file is JSON lines, one aligned article pair per line:
//!
//! ```json
//! {"id": "Q42", "title_src": ["douglas", "adams"], "title_tgt": ["douglas", "adams"],
//!  "src": {"schriftsteller": 3, "roman": 2}, "tgt": {"writer": 4, "novel": 1}}
//! ```
//!
//! Sampling draws a source word uniformly from the common vocabulary, then a
//! concept in proportion to that word's count in each source article, then a
//! target word uniformly from the concept's target sub-vocabulary.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::{EmbeddingSet, WordVector};
use crate::error::{Error, Result};

/// One line of the corpus file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptRecord {
    pub id: String,
    pub title_src: Vec<String>,
    pub title_tgt: Vec<String>,
    pub src: BTreeMap<String, u64>,
    pub tgt: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConceptPair {
    /// Dense id in `[0, h)`, assigned in file order.
    pub id: usize,
    /// The identifier from the file.
    pub name: String,
    pub title_src: Vec<String>,
    pub title_tgt: Vec<String>,
    pub src_counts: BTreeMap<String, u64>,
    pub tgt_counts: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, Default)]
pub struct ConceptCorpus {
    pairs: Vec<ConceptPair>,
    source_word_freq: HashMap<String, u64>,
    word_to_concepts: HashMap<String, Vec<(usize, u64)>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusReport {
    /// `(line number, reason)` for every rejected line.
    pub skipped: Vec<(usize, String)>,
}

impl ConceptCorpus {
    /// Builds a corpus from records, skipping invalid ones. Returns the corpus
    /// and the indices (into `records`) of skipped records with reasons.
    pub fn from_records(records: Vec<ConceptRecord>) -> (ConceptCorpus, Vec<(usize, String)>) {
        let mut corpus = ConceptCorpus::default();
        let mut skipped = Vec::new();
        let mut names = HashSet::new();
        for (i, rec) in records.into_iter().enumerate() {
            if let Err(reason) = validate(&rec) {
                skipped.push((i, reason));
                continue;
            }
            if !names.insert(rec.id.clone()) {
                skipped.push((i, format!("duplicate id {:?}", rec.id)));
                continue;
            }
            corpus.push(rec);
        }
        (corpus, skipped)
    }

    fn push(&mut self, rec: ConceptRecord) {
        let id = self.pairs.len();
        for (w, &c) in &rec.src {
            *self.source_word_freq.entry(w.clone()).or_default() += c;
            self.word_to_concepts.entry(w.clone()).or_default().push((id, c));
        }
        self.pairs.push(ConceptPair {
            id,
            name: rec.id,
            title_src: rec.title_src,
            title_tgt: rec.title_tgt,
            src_counts: rec.src,
            tgt_counts: rec.tgt,
        });
    }

    pub fn read_jsonl<R: BufRead>(reader: R, context: &str) -> Result<(ConceptCorpus, CorpusReport)> {
        let mut records = Vec::new();
        let mut line_of = Vec::new();
        let mut report = CorpusReport::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(context, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<ConceptRecord>(&line) {
                Ok(rec) => {
                    records.push(rec);
                    line_of.push(i + 1);
                }
                Err(e) => report.skipped.push((i + 1, e.to_string())),
            }
        }
        let (corpus, skipped) = Self::from_records(records);
        report
            .skipped
            .extend(skipped.into_iter().map(|(k, why)| (line_of[k], why)));
        report.skipped.sort();
        if !report.skipped.is_empty() {
            log::warn!("{context}: skipped {} invalid line(s)", report.skipped.len());
        }
        if corpus.is_empty() {
            return Err(Error::Empty(format!("{context}: no valid concept pairs")));
        }
        Ok((corpus, report))
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for p in &self.pairs {
            let rec = ConceptRecord {
                id: p.name.clone(),
                title_src: p.title_src.clone(),
                title_tgt: p.title_tgt.clone(),
                src: p.src_counts.clone(),
                tgt: p.tgt_counts.clone(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn pairs(&self) -> &[ConceptPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn source_word_freq(&self, word: &str) -> u64 {
        self.source_word_freq.get(word).copied().unwrap_or(0)
    }

    /// `(concept id, count)` for every source article containing `word`, in id order.
    pub fn concepts_of(&self, word: &str) -> &[(usize, u64)] {
        self.word_to_concepts.get(word).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Checks the structural invariants; returns a description of the first
    /// violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (i, p) in self.pairs.iter().enumerate() {
            if p.id != i {
                return Err(format!("pair {i} has id {}", p.id));
            }
            if p.src_counts.is_empty() || p.tgt_counts.is_empty() {
                return Err(format!("pair {i} has an empty article"));
            }
            if p.src_counts.values().chain(p.tgt_counts.values()).any(|&c| c == 0) {
                return Err(format!("pair {i} has a zero count"));
            }
        }
        for (w, list) in &self.word_to_concepts {
            let total: u64 = list.iter().map(|&(_, c)| c).sum();
            if self.source_word_freq.get(w) != Some(&total) {
                return Err(format!("frequency of {w:?} disagrees with its concept list"));
            }
            for &(c, n) in list {
                if self.pairs[c].src_counts.get(w) != Some(&n) {
                    return Err(format!("concept {c} count of {w:?} disagrees"));
                }
            }
        }
        Ok(())
    }
}

fn validate(rec: &ConceptRecord) -> std::result::Result<(), String> {
    if rec.src.is_empty() {
        return Err("empty source article".into());
    }
    if rec.tgt.is_empty() {
        return Err("empty target article".into());
    }
    if rec.src.values().chain(rec.tgt.values()).any(|&c| c == 0) {
        return Err("zero word count".into());
    }
    Ok(())
}

pub fn load_concept_corpus(path: impl AsRef<Path>) -> Result<(ConceptCorpus, CorpusReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ConceptCorpus::read_jsonl(BufReader::new(file), &path.display().to_string())
}

/// Mean target-language embedding of the concept title. `Err(NoTokenFound)`
/// means the concept cannot be embedded and has to be left out.
pub fn concept_embedding(pair: &ConceptPair, tgt: &EmbeddingSet) -> Result<WordVector> {
    if pair.title_tgt.is_empty() {
        return Err(Error::NoTokenFound);
    }
    tgt.mean_vector(&pair.title_tgt).map(|(v, _)| v)
}

#[derive(Clone, Debug)]
pub struct SamplerConfig {
    /// Only rows ranked below this (by file order) are used on either side.
    pub vocab_cap: usize,
    /// Concepts with fewer in-vocabulary target words are dropped.
    pub min_target_words: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            vocab_cap: 100_000,
            min_target_words: 5,
        }
    }
}

#[derive(Clone, Debug)]
struct WordEntry {
    src_row: usize,
    /// Positions into `SamplerIndex::concepts`.
    concepts: Vec<usize>,
    cumulative: Vec<u64>,
}

#[derive(Clone, Debug)]
struct ConceptEntry {
    id: usize,
    target_rows: Vec<usize>,
}

/// A sampled `(source word, concept, target word)` triple, as row ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triple {
    pub src_row: usize,
    /// Position of the concept inside the sampler (see [`SamplerIndex::concept_id`]).
    pub concept: usize,
    pub tgt_row: usize,
}

#[derive(Clone, Debug)]
pub struct SamplerIndex {
    words: Vec<WordEntry>,
    concepts: Vec<ConceptEntry>,
    /// Title embedding per retained concept, one row each.
    concept_vectors: Array2<f64>,
}

impl SamplerIndex {
    pub fn build(
        corpus: &ConceptCorpus,
        src: &EmbeddingSet,
        tgt: &EmbeddingSet,
        cfg: &SamplerConfig,
    ) -> Result<SamplerIndex> {
        if corpus.is_empty() {
            return Err(Error::Empty("concept corpus".into()));
        }
        if cfg.vocab_cap == 0 {
            return Err(Error::InvalidArgument("vocab_cap must be >= 1".into()));
        }
        let mut position = vec![None; corpus.len()];
        let mut concepts = Vec::new();
        let mut vectors = Vec::new();
        let (mut untitled, mut small) = (0usize, 0usize);
        for pair in corpus.pairs() {
            let title = match concept_embedding(pair, tgt) {
                Ok(v) => v,
                Err(_) => {
                    untitled += 1;
                    continue;
                }
            };
            let mut target_rows: Vec<usize> = pair
                .tgt_counts
                .keys()
                .filter_map(|w| tgt.row_of(w))
                .filter(|&r| r < cfg.vocab_cap)
                .collect();
            target_rows.sort_unstable();
            if target_rows.is_empty() || target_rows.len() < cfg.min_target_words {
                small += 1;
                continue;
            }
            position[pair.id] = Some(concepts.len());
            concepts.push(ConceptEntry {
                id: pair.id,
                target_rows,
            });
            vectors.extend(title.iter().copied());
        }
        if untitled + small > 0 {
            log::info!("sampler dropped {untitled} concept(s) without an embeddable title and {small} with too few target words");
        }

        let mut words = Vec::new();
        for src_row in 0..src.len().min(cfg.vocab_cap) {
            let mut list = Vec::new();
            let mut cumulative = Vec::new();
            let mut total = 0u64;
            for &(cid, count) in corpus.concepts_of(src.word(src_row)) {
                if let Some(pos) = position[cid] {
                    total += count;
                    list.push(pos);
                    cumulative.push(total);
                }
            }
            if !list.is_empty() {
                words.push(WordEntry {
                    src_row,
                    concepts: list,
                    cumulative,
                });
            }
        }
        if words.is_empty() {
            return Err(Error::Empty("no source word is shared by the embeddings and the corpus".into()));
        }
        let concept_vectors = Array2::from_shape_vec((concepts.len(), tgt.dim()), vectors)
            .expect("one title vector per concept");
        Ok(SamplerIndex {
            words,
            concepts,
            concept_vectors,
        })
    }

    /// Source rows of the common vocabulary, ascending.
    pub fn common_vocab(&self) -> Vec<usize> {
        self.words.iter().map(|w| w.src_row).collect()
    }

    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn n_concepts(&self) -> usize {
        self.concepts.len()
    }

    /// Corpus id of the concept at sampler position `pos`.
    pub fn concept_id(&self, pos: usize) -> usize {
        self.concepts[pos].id
    }

    pub fn concept_target_rows(&self, pos: usize) -> &[usize] {
        &self.concepts[pos].target_rows
    }

    pub fn concept_vectors(&self) -> &Array2<f64> {
        &self.concept_vectors
    }

    /// `P(concept | source row)` as `(sampler position, probability)` pairs.
    pub fn concept_distribution(&self, src_row: usize) -> Option<Vec<(usize, f64)>> {
        let i = self.words.binary_search_by_key(&src_row, |w| w.src_row).ok()?;
        let w = &self.words[i];
        let total = *w.cumulative.last().expect("non-empty") as f64;
        let mut prev = 0u64;
        Some(
            w.concepts
                .iter()
                .zip(&w.cumulative)
                .map(|(&c, &cum)| {
                    let p = (cum - prev) as f64 / total;
                    prev = cum;
                    (c, p)
                })
                .collect(),
        )
    }

    pub fn sample_triple<R: Rng + ?Sized>(&self, rng: &mut R) -> Triple {
        let w = &self.words[rng.random_range(0..self.words.len())];
        let total = *w.cumulative.last().expect("non-empty");
        let r = rng.random_range(0..total);
        let k = w.cumulative.partition_point(|&c| c <= r);
        let concept = w.concepts[k];
        let rows = &self.concepts[concept].target_rows;
        Triple {
            src_row: w.src_row,
            concept,
            tgt_row: rows[rng.random_range(0..rows.len())],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(id: &str, src: &[(&str, u64)], tgt: &[(&str, u64)], title: &[&str]) -> ConceptRecord {
        ConceptRecord {
            id: id.into(),
            title_src: title.iter().map(|s| s.to_string()).collect(),
            title_tgt: title.iter().map(|s| s.to_string()).collect(),
            src: src.iter().map(|(w, c)| (w.to_string(), *c)).collect(),
            tgt: tgt.iter().map(|(w, c)| (w.to_string(), *c)).collect(),
        }
    }

    fn jsonl(recs: &[ConceptRecord]) -> String {
        recs.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect()
    }

    fn set(words: &[&str], d: usize) -> EmbeddingSet {
        let n = words.len();
        let m = Array2::from_shape_fn((n, d), |(i, j)| if j == i % d { 1.0 } else { 0.1 });
        EmbeddingSet::new(words.iter().map(|s| s.to_string()).collect(), m).unwrap()
    }

    fn cfg(cap: usize) -> SamplerConfig {
        SamplerConfig {
            vocab_cap: cap,
            min_target_words: 1,
        }
    }

    #[test]
    fn loads_single_pair() {
        let text = jsonl(&[rec("c", &[("a", 2)], &[("x", 1)], &["t"])]);
        let (c, report) = ConceptCorpus::read_jsonl(text.as_bytes(), "t").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.source_word_freq("a"), 2);
        assert!(report.skipped.is_empty());
        c.validate().unwrap();
    }

    #[test]
    fn sums_shared_words() {
        let text = jsonl(&[
            rec("c0", &[("a", 2)], &[("x", 1)], &["t"]),
            rec("c1", &[("a", 3), ("b", 1)], &[("y", 1)], &["t"]),
        ]);
        let (c, _) = ConceptCorpus::read_jsonl(text.as_bytes(), "t").unwrap();
        assert_eq!(c.source_word_freq("a"), 5);
        assert_eq!(c.concepts_of("a"), &[(0, 2), (1, 3)]);
        c.validate().unwrap();
    }

    #[test]
    fn skips_bad_lines() {
        let mut text = jsonl(&[
            rec("c0", &[("a", 2)], &[], &["t"]),
            rec("c1", &[("a", 2)], &[("x", 1)], &["t"]),
            rec("c1", &[("b", 2)], &[("x", 1)], &["t"]),
        ]);
        text.push_str("{not json\n");
        let (c, report) = ConceptCorpus::read_jsonl(text.as_bytes(), "t").unwrap();
        assert_eq!(c.len(), 1);
        let lines: Vec<usize> = report.skipped.iter().map(|(l, _)| *l).collect();
        assert_eq!(lines, vec![1, 3, 4]);

        let only_bad = jsonl(&[rec("c0", &[("a", 2)], &[], &["t"])]);
        let (_, r) = ConceptCorpus::from_records(vec![rec("c0", &[("a", 2)], &[], &["t"])]);
        assert_eq!(r.len(), 1);
        assert!(ConceptCorpus::read_jsonl(only_bad.as_bytes(), "t").is_err());
    }

    #[test]
    fn concept_embedding_examples() {
        let tgt = EmbeddingSet::new(
            vec!["cat".into(), "new".into(), "york".into()],
            array![[0.3, 0.4], [1.0, 0.0], [0.0, 1.0]],
        )
        .unwrap();
        let (c, _) = ConceptCorpus::from_records(vec![
            rec("a", &[("s", 1)], &[("cat", 1)], &["cat"]),
            rec("b", &[("s", 1)], &[("cat", 1)], &["new", "york"]),
            rec("c", &[("s", 1)], &[("cat", 1)], &["qqq"]),
        ]);
        assert_eq!(concept_embedding(&c.pairs()[0], &tgt).unwrap().to_vec(), vec![0.3, 0.4]);
        assert_eq!(concept_embedding(&c.pairs()[1], &tgt).unwrap().to_vec(), vec![0.5, 0.5]);
        assert!(matches!(concept_embedding(&c.pairs()[2], &tgt), Err(Error::NoTokenFound)));
    }

    #[test]
    fn common_vocab_is_intersection() {
        let src = set(&["a", "b"], 2);
        let tgt = set(&["x", "t"], 2);
        let (c, _) = ConceptCorpus::from_records(vec![rec("c", &[("b", 1), ("c", 1)], &[("x", 1)], &["t"])]);
        let idx = SamplerIndex::build(&c, &src, &tgt, &cfg(100)).unwrap();
        assert_eq!(idx.common_vocab(), vec![1]);
    }

    #[test]
    fn vocab_cap_truncates_by_rank() {
        let src = set(&["a", "b"], 2);
        let tgt = set(&["x", "t"], 2);
        let (c, _) = ConceptCorpus::from_records(vec![rec("c", &[("a", 1), ("b", 1)], &[("x", 1)], &["t"])]);
        let idx = SamplerIndex::build(&c, &src, &tgt, &cfg(1)).unwrap();
        assert_eq!(idx.common_vocab(), vec![0]);
    }

    #[test]
    fn drops_concepts_without_target_words_or_title() {
        let src = set(&["a", "b"], 2);
        let tgt = set(&["x", "t"], 2);
        let (c, _) = ConceptCorpus::from_records(vec![
            rec("keep", &[("a", 1)], &[("x", 1)], &["t"]),
            rec("oov", &[("b", 1)], &[("zzz", 1)], &["t"]),
            rec("untitled", &[("b", 1)], &[("x", 1)], &["qqq"]),
        ]);
        let idx = SamplerIndex::build(&c, &src, &tgt, &cfg(100)).unwrap();
        assert_eq!(idx.n_concepts(), 1);
        assert_eq!(idx.concept_id(0), 0);
        // b only occurred in dropped concepts
        assert_eq!(idx.common_vocab(), vec![0]);

        let strict = SamplerConfig {
            vocab_cap: 100,
            min_target_words: 5,
        };
        assert!(SamplerIndex::build(&c, &src, &tgt, &strict).is_err());
    }

    #[test]
    fn degenerate_distributions() {
        let src = set(&["s"], 2);
        let tgt = set(&["x", "t"], 2);
        let (c, _) = ConceptCorpus::from_records(vec![rec("c0", &[("s", 4)], &[("x", 2)], &["t"])]);
        let idx = SamplerIndex::build(&c, &src, &tgt, &cfg(100)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let t = idx.sample_triple(&mut rng);
            assert_eq!((t.src_row, t.concept, t.tgt_row), (0, 0, 0));
        }
    }

    fn two_concept_index() -> SamplerIndex {
        let src = set(&["s", "u"], 2);
        let tgt = set(&["x", "y", "z", "t"], 2);
        let (c, _) = ConceptCorpus::from_records(vec![
            rec("c0", &[("s", 1), ("u", 2)], &[("x", 1), ("y", 5)], &["t"]),
            rec("c1", &[("s", 3)], &[("z", 9)], &["t"]),
        ]);
        SamplerIndex::build(&c, &src, &tgt, &cfg(100)).unwrap()
    }

    #[test]
    fn concept_frequencies_follow_counts() {
        let idx = two_concept_index();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (mut n_s, mut n_c1) = (0usize, 0usize);
        while n_s < 100_000 {
            let t = idx.sample_triple(&mut rng);
            if t.src_row == 0 {
                n_s += 1;
                if t.concept == 1 {
                    n_c1 += 1;
                }
            }
        }
        let p = n_c1 as f64 / n_s as f64;
        assert!((p - 0.75).abs() < 0.01, "P(c1|s) = {p}");
        let dist = idx.concept_distribution(0).unwrap();
        assert_eq!(dist, vec![(0, 0.25), (1, 0.75)]);
    }

    #[test]
    fn chi_square_goodness_of_fit() {
        // s occurs in four concepts with counts 1, 2, 3, 4
        let src = set(&["s"], 2);
        let tgt = set(&["x", "t"], 2);
        let recs = (0..4)
            .map(|i| rec(&format!("c{i}"), &[("s", i + 1)], &[("x", 1)], &["t"]))
            .collect();
        let (c, _) = ConceptCorpus::from_records(recs);
        let idx = SamplerIndex::build(&c, &src, &tgt, &cfg(100)).unwrap();
        let n = 100_000;
        let mut observed = [0f64; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..n {
            observed[idx.sample_triple(&mut rng).concept] += 1.0;
        }
        let chi2: f64 = (0..4)
            .map(|i| {
                let e = n as f64 * (i + 1) as f64 / 10.0;
                (observed[i] - e).powi(2) / e
            })
            .sum();
        // upper 0.001 quantile of chi-square with 3 degrees of freedom
        assert!(chi2 < 16.266, "chi2 = {chi2}");
    }

    #[test]
    fn triples_are_consistent_and_reproducible() {
        let src = set(&["s", "u"], 2);
        let tgt = set(&["x", "y", "z", "t"], 2);
        let (c, _) = ConceptCorpus::from_records(vec![
            rec("c0", &[("s", 1), ("u", 2)], &[("x", 1), ("y", 5)], &["t"]),
            rec("c1", &[("s", 3)], &[("z", 9)], &["t"]),
        ]);
        let idx = SamplerIndex::build(&c, &src, &tgt, &cfg(100)).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..500).map(|_| idx.sample_triple(&mut rng)).collect::<Vec<_>>()
        };
        let a = draw(3);
        assert_eq!(a, draw(3));
        assert_ne!(a, draw(4));
        for t in a {
            let pair = &c.pairs()[idx.concept_id(t.concept)];
            assert!(pair.src_counts.contains_key(src.word(t.src_row)));
            assert!(pair.tgt_counts.contains_key(tgt.word(t.tgt_row)));
        }
    }
}
