use std::collections::VecDeque;

use ndarray::{concatenate, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::discriminator::{disc_loss_and_grads, gen_loss_and_grad, DiscriminatorNet, GenBatch};
use crate::concepts::{SamplerIndex, Triple};
use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::mapping::MappingMatrix;

const RECENT_ROWS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    StandardGan,
    ConceptGan,
}

/// Where the language discriminator's samples come from in concept mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DlSampling {
    /// The concept-conditioned triples shared with the concept discriminator.
    Conditioned,
    /// Uniform draws over each vocabulary, as in standard mode.
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub batch_size: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub lr_decay: f64,
    pub beta: f64,
    pub smoothing: f64,
    pub steps_per_epoch: usize,
    pub epochs: usize,
    pub disc_steps_per_gen_step: usize,
    pub seed: u64,
    pub hidden_l: usize,
    pub hidden_cl: usize,
    /// Rows used for uniform sampling (standard mode and global `D_l` sampling).
    pub vocab_cap: usize,
    pub dl_sampling: DlSampling,
    /// Turns the concept discriminator off in concept mode.
    pub concept_disc: bool,
    /// A metrics row is emitted every `log_every` steps (and at every epoch end).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::ConceptGan,
            batch_size: 32,
            lr_generator: 0.1,
            lr_discriminator: 0.1,
            lr_decay: 0.98,
            beta: 0.001,
            smoothing: 0.1,
            steps_per_epoch: 1000,
            epochs: 10,
            disc_steps_per_gen_step: 1,
            seed: 0,
            hidden_l: 1024,
            hidden_cl: 2048,
            vocab_cap: 100_000,
            dl_sampling: DlSampling::Conditioned,
            concept_disc: true,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_generator", self.lr_generator),
            ("lr_discriminator", self.lr_discriminator),
            ("lr_decay", self.lr_decay),
            ("beta", self.beta),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(0.0..0.5).contains(&self.smoothing) {
            return Err(Error::InvalidArgument(format!(
                "smoothing must be in [0, 0.5), got {}",
                self.smoothing
            )));
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("steps_per_epoch", self.steps_per_epoch),
            ("disc_steps_per_gen_step", self.disc_steps_per_gen_step),
            ("hidden_l", self.hidden_l),
            ("hidden_cl", self.hidden_cl),
            ("vocab_cap", self.vocab_cap),
            ("log_every", self.log_every),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    fn uses_concept_disc(&self) -> bool {
        self.mode == Mode::ConceptGan && self.concept_disc
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub d_l_loss: f64,
    pub d_cl_loss: Option<f64>,
    pub gen_loss: f64,
    pub orth_error: f64,
    /// Only set on epoch-end rows.
    pub criterion: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestCheckpoint {
    pub criterion: f64,
    pub epoch: usize,
    pub step: u64,
    pub w: MappingMatrix,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub w: MappingMatrix,
    pub d_l: DiscriminatorNet,
    pub d_cl: Option<DiscriminatorNet>,
    pub step: u64,
    pub epochs_done: usize,
    /// The last few emitted metrics rows.
    pub recent: VecDeque<MetricsRow>,
    pub best: Option<BestCheckpoint>,
    /// Largest `‖WWᵀ − I‖_F` seen after any step.
    pub max_orth_error: f64,
    lr_generator: f64,
    lr_discriminator: f64,
}

impl TrainState {
    /// The best checkpoint if one was taken, otherwise the current mapping.
    pub fn best_w(&self) -> &MappingMatrix {
        self.best.as_ref().map(|b| &b.w).unwrap_or(&self.w)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Setup(#[from] Error),
    /// Training stopped midway; `state` is the dump at the point of failure.
    #[error("training aborted at step {}: {error}", state.step)]
    Aborted { error: Error, state: Box<TrainState> },
}

/// Receives model-selection requests and metrics during training.
pub trait TrainObserver {
    /// Model-selection criterion for the mapping at the end of `epoch`; larger is better.
    fn criterion(&mut self, epoch: usize, w: &MappingMatrix) -> f64;

    fn record(&mut self, _row: &MetricsRow) {}
}

impl<F: FnMut(usize, &MappingMatrix) -> f64> TrainObserver for F {
    fn criterion(&mut self, epoch: usize, w: &MappingMatrix) -> f64 {
        self(epoch, w)
    }
}

/// Independent RNG streams derived from the run seed.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Default)]
struct Batch {
    lang_src: Vec<usize>,
    lang_tgt: Vec<usize>,
    triples: Option<Vec<Triple>>,
}

struct BatchSampler<'a> {
    cfg: &'a TrainConfig,
    sampler: Option<&'a SamplerIndex>,
    n_src: usize,
    n_tgt: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler<'_> {
    fn uniform(&mut self, batch: &mut Batch) {
        for _ in 0..self.cfg.batch_size {
            batch.lang_src.push(self.rng.random_range(0..self.n_src));
        }
        for _ in 0..self.cfg.batch_size {
            batch.lang_tgt.push(self.rng.random_range(0..self.n_tgt));
        }
    }

    fn triples(&mut self) -> Vec<Triple> {
        let sampler = self.sampler.expect("concept mode has a sampler");
        (0..self.cfg.batch_size)
            .map(|_| sampler.sample_triple(&mut self.rng))
            .collect()
    }

    fn next(&mut self) -> Batch {
        let mut batch = Batch::default();
        match (self.cfg.mode, self.cfg.dl_sampling) {
            (Mode::StandardGan, _) | (Mode::ConceptGan, DlSampling::Global) => {
                self.uniform(&mut batch);
                if self.cfg.uses_concept_disc() {
                    batch.triples = Some(self.triples());
                }
            }
            (Mode::ConceptGan, DlSampling::Conditioned) => {
                let t = self.triples();
                batch.lang_src = t.iter().map(|t| t.src_row).collect();
                batch.lang_tgt = t.iter().map(|t| t.tgt_row).collect();
                if self.cfg.uses_concept_disc() {
                    batch.triples = Some(t);
                }
            }
        }
        batch
    }
}

struct Gathered {
    lang_src: Array2<f64>,
    lang_tgt: Array2<f64>,
    /// `(source rows, target rows, concept vectors)`
    concept: Option<(Array2<f64>, Array2<f64>, Array2<f64>)>,
}

fn gather(batch: &Batch, src: &EmbeddingSet, tgt: &EmbeddingSet, sampler: Option<&SamplerIndex>) -> Gathered {
    let concept = batch.triples.as_ref().map(|ts| {
        let s: Vec<usize> = ts.iter().map(|t| t.src_row).collect();
        let t: Vec<usize> = ts.iter().map(|t| t.tgt_row).collect();
        let c: Vec<usize> = ts.iter().map(|t| t.concept).collect();
        let vc = sampler
            .expect("triples come from a sampler")
            .concept_vectors()
            .select(Axis(0), &c);
        (src.vectors().select(Axis(0), &s), tgt.vectors().select(Axis(0), &t), vc)
    });
    Gathered {
        lang_src: src.vectors().select(Axis(0), &batch.lang_src),
        lang_tgt: tgt.vectors().select(Axis(0), &batch.lang_tgt),
        concept,
    }
}

fn join(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[a.view(), b.view()]).expect("row counts agree")
}

/// Adversarial training of `W`. Each step runs `disc_steps_per_gen_step`
/// discriminator updates, one generator update and one orthogonalization step.
/// At every epoch end the observer's criterion is evaluated, the best mapping
/// is kept and both learning rates decay.
pub fn train(
    src: &EmbeddingSet,
    tgt: &EmbeddingSet,
    sampler: Option<&SamplerIndex>,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> std::result::Result<TrainState, TrainError> {
    cfg.validate()?;
    if src.dim() != tgt.dim() {
        return Err(Error::DimensionMismatch {
            expected: src.dim(),
            found: tgt.dim(),
        }
        .into());
    }
    if cfg.mode == Mode::ConceptGan && sampler.is_none() {
        return Err(Error::InvalidArgument("concept-gan mode needs a concept sampler".into()).into());
    }
    if let Some(s) = sampler {
        if s.concept_vectors().ncols() != tgt.dim() {
            return Err(Error::DimensionMismatch {
                expected: tgt.dim(),
                found: s.concept_vectors().ncols(),
            }
            .into());
        }
    }
    let d = src.dim();

    let mut state = TrainState {
        w: MappingMatrix::init_orthogonal(d, cfg.seed)?,
        d_l: DiscriminatorNet::new(d, cfg.hidden_l, &mut stream(cfg.seed, 1))?,
        d_cl: if cfg.uses_concept_disc() {
            Some(DiscriminatorNet::new(2 * d, cfg.hidden_cl, &mut stream(cfg.seed, 2))?)
        } else {
            None
        },
        step: 0,
        epochs_done: 0,
        recent: VecDeque::with_capacity(RECENT_ROWS),
        best: None,
        max_orth_error: 0.0,
        lr_generator: cfg.lr_generator,
        lr_discriminator: cfg.lr_discriminator,
    };
    state.max_orth_error = state.w.orthogonality_error();

    let mut batches = BatchSampler {
        cfg,
        sampler,
        n_src: src.len().min(cfg.vocab_cap),
        n_tgt: tgt.len().min(cfg.vocab_cap),
        rng: stream(cfg.seed, 3),
    };

    for epoch in 0..cfg.epochs {
        for i in 0..cfg.steps_per_epoch {
            let row = match train_step(&mut state, &mut batches, src, tgt, sampler, cfg) {
                Ok(row) => row,
                Err(error) => {
                    return Err(TrainError::Aborted {
                        error,
                        state: Box::new(state),
                    })
                }
            };
            let epoch_end = i + 1 == cfg.steps_per_epoch;
            if !epoch_end && state.step.is_multiple_of(cfg.log_every as u64) {
                emit(&mut state, observer, row);
            } else if epoch_end {
                let criterion = observer.criterion(epoch, &state.w);
                if !criterion.is_finite() {
                    return Err(TrainError::Aborted {
                        error: Error::Diverged {
                            step: state.step,
                            reason: format!("model-selection criterion is {criterion}"),
                        },
                        state: Box::new(state),
                    });
                }
                if state.best.as_ref().is_none_or(|b| criterion > b.criterion) {
                    state.best = Some(BestCheckpoint {
                        criterion,
                        epoch,
                        step: state.step,
                        w: state.w.clone(),
                    });
                }
                emit(
                    &mut state,
                    observer,
                    MetricsRow {
                        criterion: Some(criterion),
                        ..row
                    },
                );
            }
        }
        state.epochs_done = epoch + 1;
        state.lr_generator *= cfg.lr_decay;
        state.lr_discriminator *= cfg.lr_decay;
        log::debug!(
            "epoch {epoch}: criterion {:?}, orth error {:.3e}",
            state.recent.back().and_then(|r| r.criterion),
            state.w.orthogonality_error()
        );
    }
    Ok(state)
}

fn emit(state: &mut TrainState, observer: &mut dyn TrainObserver, row: MetricsRow) {
    observer.record(&row);
    if state.recent.len() == RECENT_ROWS {
        state.recent.pop_front();
    }
    state.recent.push_back(row);
}

fn train_step(
    state: &mut TrainState,
    batches: &mut BatchSampler<'_>,
    src: &EmbeddingSet,
    tgt: &EmbeddingSet,
    sampler: Option<&SamplerIndex>,
    cfg: &TrainConfig,
) -> Result<MetricsRow> {
    let mut d_l_loss = f64::NAN;
    let mut d_cl_loss = None;
    for _ in 0..cfg.disc_steps_per_gen_step {
        let g = gather(&batches.next(), src, tgt, sampler);
        let fake = state.w.apply_rows(g.lang_src.view())?;
        let (loss, grads) = disc_loss_and_grads(&state.d_l, g.lang_tgt.view(), fake.view(), cfg.smoothing)?;
        state.d_l.sgd_step(&grads, state.lr_discriminator);
        d_l_loss = loss;

        if let (Some(net), Some((s, t, vc))) = (state.d_cl.as_mut(), g.concept.as_ref()) {
            let real = join(t, vc);
            let fake = join(&state.w.apply_rows(s.view())?, vc);
            let (loss, grads) = disc_loss_and_grads(net, real.view(), fake.view(), cfg.smoothing)?;
            net.sgd_step(&grads, state.lr_discriminator);
            d_cl_loss = Some(loss);
        }
    }

    let g = gather(&batches.next(), src, tgt, sampler);
    let gen_batch = GenBatch {
        lang_src: g.lang_src.view(),
        concept: g.concept.as_ref().map(|(s, _, vc)| (s.view(), vc.view())),
    };
    let (gen_loss, grad) = gen_loss_and_grad(&state.w, &state.d_l, state.d_cl.as_ref(), gen_batch)?;
    state.w.as_array_mut().scaled_add(-state.lr_generator, &grad);
    state.w.orthogonalize_in_place(cfg.beta)?;
    state.step += 1;

    let orth_error = state.w.orthogonality_error();
    state.max_orth_error = state.max_orth_error.max(orth_error);
    let losses_finite = d_l_loss.is_finite() && gen_loss.is_finite() && d_cl_loss.is_none_or(f64::is_finite);
    if !losses_finite || !orth_error.is_finite() {
        return Err(Error::Diverged {
            step: state.step,
            reason: format!("non-finite value (d_l {d_l_loss}, d_cl {d_cl_loss:?}, gen {gen_loss}, orth {orth_error})"),
        });
    }
    Ok(MetricsRow {
        step: state.step,
        d_l_loss,
        d_cl_loss,
        gen_loss,
        orth_error,
        criterion: None,
    })
}
