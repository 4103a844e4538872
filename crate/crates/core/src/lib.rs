//! Cross-lingual word embedding alignment with concept-conditioned adversarial
//! training.
//!
//! A pipeline built from this crate:
//!
//! 1. load two monolingual [`EmbeddingSet`]s and a [`ConceptCorpus`] of aligned
//!    article pairs,
//! 2. learn an approximately orthogonal [`MappingMatrix`] with
//!    [`adversarial::train`] (standard GAN or the multi-discriminator concept
//!    GAN),
//! 3. refine it with iterative Procrustes over CSLS-induced dictionaries
//!    ([`refinement::refine`]),
//! 4. score bilingual lexicon induction as P@1 ([`evaluation::evaluate_p_at_1`]).
//!
//! The [`testbed`] module generates synthetic bilingual worlds with a known
//! ground-truth rotation for end-to-end checks.

pub mod adversarial;
pub mod concepts;
pub mod embeddings;
mod error;
pub mod evaluation;
pub mod linalg;
pub mod mapping;
pub mod refinement;
pub mod retrieval;
pub mod testbed;

pub use concepts::{ConceptCorpus, ConceptPair, SamplerIndex};
pub use embeddings::{EmbeddingSet, WordVector};
pub use error::{Error, Result};
pub use evaluation::BilingualDictionary;
pub use mapping::MappingMatrix;
pub use retrieval::{Metric, NeighborhoodStats};
