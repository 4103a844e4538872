//! Exact nearest-neighbour and CSLS retrieval over mapped embeddings.
//!
//! `CSLS(Wv_s, v_t) = 2 cos(Wv_s, v_t) − r_t(Wv_s) − r_s(v_t)` where `r_t` is
//! the mean cosine of a mapped source vector to its `k` nearest targets and
//! `r_s` the mean cosine of a target to its `k` nearest mapped sources.
//!
//! All scans are brute force over row chunks; chunks run in parallel and are
//! merged in order, so results do not depend on the thread count.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::linalg::normalize_rows;
use crate::mapping::MappingMatrix;

pub const DEFAULT_CSLS_K: usize = 10;
pub const DEFAULT_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Nn,
    Csls,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Nn => "nn",
            Metric::Csls => "csls",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nn" => Ok(Metric::Nn),
            "csls" => Ok(Metric::Csls),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?} (expected nn or csls)"))),
        }
    }
}

/// A retrieved row with its score (cosine for NN, CSLS otherwise).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub row: usize,
    pub score: f64,
}

/// Descending score, then ascending row.
fn rank(a: &Neighbor, b: &Neighbor) -> Ordering {
    b.score.total_cmp(&a.score).then(a.row.cmp(&b.row))
}

fn top_k(scores: impl Iterator<Item = f64>, k: usize) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = scores.enumerate().map(|(row, score)| Neighbor { row, score }).collect();
    if k < all.len() {
        all.select_nth_unstable_by(k, rank);
        all.truncate(k);
    }
    all.sort_by(rank);
    all
}

fn best_of(scores: impl Iterator<Item = f64>) -> Option<Neighbor> {
    scores
        .enumerate()
        .map(|(row, score)| Neighbor { row, score })
        .min_by(rank)
}

/// Runs `per_row(query index, similarity row)` for every query, scanning
/// `chunk` queries against all keys at a time.
fn scan<T, F>(queries: ArrayView2<'_, f64>, keys: ArrayView2<'_, f64>, chunk: usize, per_row: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, ArrayView1<'_, f64>) -> T + Sync,
{
    let n = queries.nrows();
    let chunk = chunk.max(1);
    let starts: Vec<usize> = (0..n).step_by(chunk).collect();
    starts
        .into_par_iter()
        .map(|start| {
            let end = (start + chunk).min(n);
            let sims = queries.slice(ndarray::s![start..end, ..]).dot(&keys.t());
            sims.axis_iter(Axis(0))
                .enumerate()
                .map(|(i, row)| per_row(start + i, row))
                .collect::<Vec<T>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// `k` most cosine-similar target rows to `query`; both sides are assumed unit
/// norm.
pub fn nn_topk(query: ArrayView1<'_, f64>, targets: &EmbeddingSet, k: usize) -> Result<Vec<Neighbor>> {
    if k == 0 || k > targets.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside 1..={}",
            targets.len()
        )));
    }
    if query.len() != targets.dim() {
        return Err(Error::DimensionMismatch {
            expected: targets.dim(),
            found: query.len(),
        });
    }
    Ok(top_k(targets.vectors().dot(&query).into_iter(), k))
}

/// Source rows mapped by `W` and renormalized to unit length.
pub fn map_source(w: &MappingMatrix, src: &EmbeddingSet) -> Result<Array2<f64>> {
    let mut mapped = w.apply_rows(src.vectors().view())?;
    normalize_rows(&mut mapped);
    Ok(mapped)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborhoodStats {
    /// Per source row: mean cosine of the mapped vector to its `k` nearest targets.
    pub r_t: Vec<f64>,
    /// Per target row: mean cosine to its `k` nearest mapped sources.
    pub r_s: Vec<f64>,
    pub k: usize,
}

impl NeighborhoodStats {
    pub fn csls(&self, src_row: usize, tgt_row: usize, cosine: f64) -> f64 {
        csls_score(cosine, self.r_t[src_row], self.r_s[tgt_row])
    }
}

pub fn csls_score(cosine: f64, r_t: f64, r_s: f64) -> f64 {
    2.0 * cosine - r_t - r_s
}

fn mean_top_k(row: ArrayView1<'_, f64>, k: usize) -> f64 {
    top_k(row.iter().copied(), k).iter().map(|n| n.score).sum::<f64>() / k as f64
}

pub fn compute_stats(w: &MappingMatrix, src: &EmbeddingSet, tgt: &EmbeddingSet, k: usize) -> Result<NeighborhoodStats> {
    compute_stats_chunked(w, src, tgt, k, DEFAULT_CHUNK)
}

pub fn compute_stats_chunked(
    w: &MappingMatrix,
    src: &EmbeddingSet,
    tgt: &EmbeddingSet,
    k: usize,
    chunk: usize,
) -> Result<NeighborhoodStats> {
    let mapped = map_source(w, src)?;
    stats_from_mapped(mapped.view(), tgt.vectors().view(), k, chunk)
}

fn stats_from_mapped(
    mapped: ArrayView2<'_, f64>,
    tgt: ArrayView2<'_, f64>,
    k: usize,
    chunk: usize,
) -> Result<NeighborhoodStats> {
    if k == 0 || k > tgt.nrows() || k > mapped.nrows() {
        return Err(Error::InvalidArgument(format!(
            "CSLS neighbourhood k = {k} must be in 1..={}",
            tgt.nrows().min(mapped.nrows())
        )));
    }
    let r_t = scan(mapped, tgt, chunk, |_, row| mean_top_k(row, k));
    let r_s = scan(tgt, mapped, chunk, |_, row| mean_top_k(row, k));
    Ok(NeighborhoodStats { r_t, r_s, k })
}

/// Scores every target for one source row under `metric`.
fn target_scores(
    mapped_query: ArrayView1<'_, f64>,
    src_row: usize,
    tgt: &EmbeddingSet,
    metric: Metric,
    stats: Option<&NeighborhoodStats>,
) -> Result<Vec<f64>> {
    let cos = tgt.vectors().dot(&mapped_query);
    Ok(match metric {
        Metric::Nn => cos.to_vec(),
        Metric::Csls => {
            let stats = stats.ok_or_else(|| Error::InvalidArgument("CSLS needs neighbourhood stats".into()))?;
            cos.iter().enumerate().map(|(j, &c)| stats.csls(src_row, j, c)).collect()
        }
    })
}

/// Top `k_out` targets for source row `src_row`, ranked by CSLS.
pub fn csls_topk(
    src_row: usize,
    w: &MappingMatrix,
    src: &EmbeddingSet,
    tgt: &EmbeddingSet,
    stats: &NeighborhoodStats,
    k_out: usize,
) -> Result<Vec<Neighbor>> {
    topk_for(src_row, w, src, tgt, Metric::Csls, Some(stats), k_out)
}

/// Top `k_out` targets for source row `src_row` under either metric.
pub fn topk_for(
    src_row: usize,
    w: &MappingMatrix,
    src: &EmbeddingSet,
    tgt: &EmbeddingSet,
    metric: Metric,
    stats: Option<&NeighborhoodStats>,
    k_out: usize,
) -> Result<Vec<Neighbor>> {
    if src_row >= src.len() {
        return Err(Error::InvalidArgument(format!("source row {src_row} out of range")));
    }
    if k_out == 0 || k_out > tgt.len() {
        return Err(Error::InvalidArgument(format!("k = {k_out} outside 1..={}", tgt.len())));
    }
    let mut q = w.apply(src.vector(src_row))?;
    let norm = q.dot(&q).sqrt();
    if norm > 0.0 {
        q /= norm;
    }
    let scores = target_scores(q.view(), src_row, tgt, metric, stats)?;
    Ok(top_k(scores.into_iter(), k_out))
}

/// Best target for each of `src_rows` (indices into `src`).
pub fn best_targets(
    mapped: ArrayView2<'_, f64>,
    src_rows: &[usize],
    tgt: &EmbeddingSet,
    metric: Metric,
    stats: Option<&NeighborhoodStats>,
) -> Result<Vec<Neighbor>> {
    if metric == Metric::Csls && stats.is_none() {
        return Err(Error::InvalidArgument("CSLS needs neighbourhood stats".into()));
    }
    let queries = mapped.select(Axis(0), src_rows);
    Ok(scan(queries.view(), tgt.vectors().view(), DEFAULT_CHUNK, |i, row| {
        let s = src_rows[i];
        let best = match (metric, stats) {
            (Metric::Csls, Some(st)) => best_of(row.iter().enumerate().map(|(j, &c)| st.csls(s, j, c))),
            _ => best_of(row.iter().copied()),
        };
        best.expect("targets are non-empty")
    }))
}

/// Best source among `candidates` (source rows) for each target row in
/// `tgt_rows`. Returned rows index `src`, not `candidates`.
fn best_sources(
    mapped: ArrayView2<'_, f64>,
    candidates: &[usize],
    tgt: &EmbeddingSet,
    tgt_rows: &[usize],
    metric: Metric,
    stats: Option<&NeighborhoodStats>,
) -> Vec<Neighbor> {
    let keys = mapped.select(Axis(0), candidates);
    let queries = tgt.vectors().select(Axis(0), tgt_rows);
    scan(queries.view(), keys.view(), DEFAULT_CHUNK, |i, row| {
        let t = tgt_rows[i];
        let best = match (metric, stats) {
            (Metric::Csls, Some(st)) => {
                best_of(row.iter().enumerate().map(|(j, &c)| st.csls(candidates[j], t, c)))
            }
            _ => best_of(row.iter().copied()),
        }
        .expect("candidates are non-empty");
        Neighbor {
            row: candidates[best.row],
            score: best.score,
        }
    })
}

/// Mutual nearest pairs `(source row, target row)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InducedDictionary {
    pub pairs: Vec<(usize, usize)>,
}

impl InducedDictionary {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Retrieves the best target for each of the `top_n` most frequent source
/// words, then the best source (among the same `top_n`) for each of those
/// targets, keeping pairs that agree in both directions.
pub fn induce_dictionary(
    w: &MappingMatrix,
    src: &EmbeddingSet,
    tgt: &EmbeddingSet,
    top_n: usize,
    metric: Metric,
    csls_k: usize,
) -> Result<InducedDictionary> {
    let stats = match metric {
        Metric::Csls => Some(compute_stats(w, src, tgt, csls_k)?),
        Metric::Nn => None,
    };
    induce_dictionary_with(w, src, tgt, top_n, metric, stats.as_ref())
}

pub fn induce_dictionary_with(
    w: &MappingMatrix,
    src: &EmbeddingSet,
    tgt: &EmbeddingSet,
    top_n: usize,
    metric: Metric,
    stats: Option<&NeighborhoodStats>,
) -> Result<InducedDictionary> {
    if top_n == 0 {
        return Err(Error::InvalidArgument("top_n must be >= 1".into()));
    }
    let n = if top_n > src.len() {
        log::warn!("top_n {top_n} exceeds source vocabulary {}; clamping", src.len());
        src.len()
    } else {
        top_n
    };
    let mapped = map_source(w, src)?;
    let sources: Vec<usize> = (0..n).collect();
    let forward = best_targets(mapped.view(), &sources, tgt, metric, stats)?;

    let mut hit: Vec<usize> = forward.iter().map(|nb| nb.row).collect();
    hit.sort_unstable();
    hit.dedup();
    let backward = best_sources(mapped.view(), &sources, tgt, &hit, metric, stats);
    let back_of = |t: usize| backward[hit.binary_search(&t).expect("target was hit")].row;

    let pairs: Vec<(usize, usize)> = forward
        .iter()
        .enumerate()
        .filter(|&(s, nb)| back_of(nb.row) == s)
        .map(|(s, nb)| (s, nb.row))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Empty("induced dictionary has no mutual pairs".into()));
    }
    Ok(InducedDictionary { pairs })
}
