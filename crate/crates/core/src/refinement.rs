//! Iterative Procrustes refinement: induce a mutual-nearest dictionary from the
//! current mapping, refit `W` on it in closed form, repeat a fixed number of
//! times.

use ndarray::Axis;
use serde::Serialize;

use crate::embeddings::EmbeddingSet;
use crate::error::Result;
use crate::mapping::{procrustes_fit, MappingMatrix};
use crate::retrieval::{induce_dictionary, map_source, Metric, DEFAULT_CSLS_K};

#[derive(Clone, Debug, PartialEq)]
pub struct RefineConfig {
    pub iterations: usize,
    pub top_n: usize,
    pub metric: Metric,
    pub csls_k: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            iterations: 5,
            top_n: 10_000,
            metric: Metric::Csls,
            csls_k: DEFAULT_CSLS_K,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub dict_size: usize,
    /// Mean cosine of the induced pairs under the mapping that induced them.
    pub mean_cosine: f64,
    /// `‖WWᵀ − I‖_F` of the refitted mapping.
    pub orth_error: f64,
}

#[derive(Clone, Debug)]
pub struct RefineOutcome {
    pub w: MappingMatrix,
    pub log: Vec<IterationLog>,
    /// Set when an iteration could not proceed; `w` is then the last good mapping.
    pub aborted: Option<String>,
}

pub fn refine(w0: &MappingMatrix, src: &EmbeddingSet, tgt: &EmbeddingSet, cfg: &RefineConfig) -> Result<RefineOutcome> {
    let mut w = w0.clone();
    let mut log = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let dict = match induce_dictionary(&w, src, tgt, cfg.top_n, cfg.metric, cfg.csls_k) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("refinement stopped at iteration {iteration}: {e}");
                return Ok(RefineOutcome {
                    w,
                    log,
                    aborted: Some(format!("iteration {iteration}: {e}")),
                });
            }
        };
        let s_rows: Vec<usize> = dict.pairs.iter().map(|p| p.0).collect();
        let t_rows: Vec<usize> = dict.pairs.iter().map(|p| p.1).collect();
        let mapped = map_source(&w, src)?;
        let mean_cosine = dict
            .pairs
            .iter()
            .map(|&(s, t)| mapped.row(s).dot(&tgt.vector(t)))
            .sum::<f64>()
            / dict.len() as f64;

        let src_rows = src.vectors().select(Axis(0), &s_rows);
        let tgt_rows = tgt.vectors().select(Axis(0), &t_rows);
        w = procrustes_fit(src_rows.view(), tgt_rows.view())?;
        log.push(IterationLog {
            iteration,
            dict_size: dict.len(),
            mean_cosine,
            orth_error: w.orthogonality_error(),
        });
    }
    Ok(RefineOutcome { w, log, aborted: None })
}
