//! Synthetic bilingual worlds with a known rotation.
//!
//! Source vectors form a Gaussian mixture around `n_concepts` unit centroids.
//! Each target vector is the rotated source vector plus isotropic noise,
//! renormalized. Rows are laid out as:
//!
//! * `0..n_stop`: stopwords, random directions, present in every article;
//! * `n_stop..n_stop + n_concepts`: one title token per concept, placed on its
//!   centroid;
//! * the rest: regular words, assigned round-robin to concepts.
//!
//! Source word `i` is `s_i`, its translation is `t_i`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::concepts::{ConceptCorpus, ConceptRecord};
use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::evaluation::BilingualDictionary;
use crate::linalg::normalize_rows;
use crate::mapping::MappingMatrix;

const STOPWORD_COUNT: u64 = 20;
const TITLE_COUNT: u64 = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub n_words: usize,
    pub dim: usize,
    pub n_concepts: usize,
    /// Per-component standard deviation of the target noise.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Spread of a word around its centroid; smaller is tighter.
    pub spread: f64,
    pub n_stopwords: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_words: 3000,
            dim: 50,
            n_concepts: 100,
            noise_sigma: 0.05,
            seed: 0,
            spread: 1.0,
            n_stopwords: 5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    pub src: EmbeddingSet,
    pub tgt: EmbeddingSet,
    pub corpus: ConceptCorpus,
    pub truth: BilingualDictionary,
    pub rotation: MappingMatrix,
    /// Concept of each regular word and title token; `None` for stopwords.
    pub cluster_of: Vec<Option<usize>>,
}

fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let g: f64 = StandardNormal.sample(rng);
        scale * g
    })
}

pub fn gen_synthetic_world(p: &SynthParams) -> Result<SyntheticWorld> {
    if p.n_concepts == 0 || p.n_words < p.n_concepts {
        return Err(Error::InvalidArgument(format!(
            "need n_words >= n_concepts >= 1, got n_words={} n_concepts={}",
            p.n_words, p.n_concepts
        )));
    }
    if p.dim == 0 {
        return Err(Error::InvalidArgument("dim must be >= 1".into()));
    }
    if !(p.noise_sigma >= 0.0 && p.noise_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise_sigma must be >= 0, got {}", p.noise_sigma)));
    }
    if !(p.spread >= 0.0 && p.spread.is_finite()) {
        return Err(Error::InvalidArgument(format!("spread must be >= 0, got {}", p.spread)));
    }
    let (n, d, h) = (p.n_words, p.dim, p.n_concepts);
    let n_stop = p.n_stopwords.min(n - h);
    let first_regular = n_stop + h;

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let rotation = MappingMatrix::init_orthogonal(d, rng.next_u64())?;
    let mut centroids = gaussian(h, d, 1.0, &mut rng);
    normalize_rows(&mut centroids);

    let cluster_of: Vec<Option<usize>> = (0..n)
        .map(|i| match i {
            i if i < n_stop => None,
            i if i < first_regular => Some(i - n_stop),
            i => Some((i - first_regular) % h),
        })
        .collect();

    let jitter = gaussian(n, d, p.spread / (d as f64).sqrt(), &mut rng);
    let stop_dirs = gaussian(n_stop, d, 1.0, &mut rng);
    let mut src = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        let mut row = src.row_mut(i);
        match cluster_of[i] {
            None => row.assign(&stop_dirs.row(i)),
            Some(c) if i < first_regular => row.assign(&centroids.row(c)),
            Some(c) => row.assign(&(&centroids.row(c) + &jitter.row(i))),
        }
    }
    normalize_rows(&mut src);

    let mut tgt = rotation.apply_rows(src.view())? + gaussian(n, d, p.noise_sigma, &mut rng);
    normalize_rows(&mut tgt);

    let src_words: Vec<String> = (0..n).map(|i| format!("s_{i}")).collect();
    let tgt_words: Vec<String> = (0..n).map(|i| format!("t_{i}")).collect();

    let mut articles: Vec<BTreeMap<usize, u64>> = vec![BTreeMap::new(); h];
    for (c, art) in articles.iter_mut().enumerate() {
        for s in 0..n_stop {
            art.insert(s, STOPWORD_COUNT);
        }
        art.insert(n_stop + c, TITLE_COUNT);
    }
    for i in first_regular..n {
        let c = cluster_of[i].expect("regular word has a cluster");
        let affinity = src.row(i).dot(&centroids.row(c)).max(0.0);
        articles[c].insert(i, 1 + (4.0 * affinity).round() as u64);
    }
    let records = articles
        .iter()
        .enumerate()
        .map(|(c, art)| ConceptRecord {
            id: format!("c{c}"),
            title_src: vec![src_words[n_stop + c].clone()],
            title_tgt: vec![tgt_words[n_stop + c].clone()],
            src: art.iter().map(|(&i, &k)| (src_words[i].clone(), k)).collect(),
            tgt: art.iter().map(|(&i, &k)| (tgt_words[i].clone(), k)).collect(),
        })
        .collect();
    let (corpus, skipped) = ConceptCorpus::from_records(records);
    debug_assert!(skipped.is_empty());

    let truth = BilingualDictionary::from_pairs(src_words.iter().cloned().zip(tgt_words.iter().cloned()));
    Ok(SyntheticWorld {
        src: EmbeddingSet::new(src_words, src)?,
        tgt: EmbeddingSet::new(tgt_words, tgt)?,
        corpus,
        truth,
        rotation,
        cluster_of,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorldFiles {
    pub src: PathBuf,
    pub tgt: PathBuf,
    pub corpus: PathBuf,
    pub truth: PathBuf,
    pub rotation: PathBuf,
}

impl WorldFiles {
    pub fn in_dir(dir: &Path) -> Self {
        WorldFiles {
            src: dir.join("src.vec"),
            tgt: dir.join("tgt.vec"),
            corpus: dir.join("corpus.jsonl"),
            truth: dir.join("truth.tsv"),
            rotation: dir.join("rotation.txt"),
        }
    }
}

impl SyntheticWorld {
    /// Writes the world in the standard formats under `dir` (created if needed).
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<WorldFiles> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = WorldFiles::in_dir(dir);
        self.src.save(&files.src)?;
        self.tgt.save(&files.tgt)?;
        write_with(&files.corpus, |w| self.corpus.write_jsonl(w))?;
        write_with(&files.truth, |w| self.truth.write_tsv(w))?;
        self.rotation.save(&files.rotation)?;
        Ok(files)
    }

    /// Mean pairwise source cosine within concepts and across concepts, over
    /// all non-stopword rows.
    pub fn separation(&self) -> (f64, f64) {
        let rows: Vec<(usize, usize)> = self
            .cluster_of
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.map(|c| (i, c)))
            .collect();
        let v = self.src.vectors();
        let (mut within, mut nw, mut across, mut na) = (0.0, 0usize, 0.0, 0usize);
        for (a, &(i, ci)) in rows.iter().enumerate() {
            for &(j, cj) in &rows[a + 1..] {
                let cos = v.row(i).dot(&v.row(j));
                if ci == cj {
                    within += cos;
                    nw += 1;
                } else {
                    across += cos;
                    na += 1;
                }
            }
        }
        (within / nw.max(1) as f64, across / na.max(1) as f64)
    }
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Unit vector along a random direction; handy for planting hubs in tests.
pub fn random_unit(d: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Array1<f64> = Array1::from_shape_fn(d, |_| StandardNormal.sample(&mut rng));
    let n = v.dot(&v).sqrt();
    v / n
}
