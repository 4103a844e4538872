use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::Serialize;
use serde_json::json;

use conceptmap_core::adversarial::{train as run_training, DlSampling, MetricsRow, Mode, TrainConfig, TrainError, TrainObserver};
use conceptmap_core::concepts::{load_concept_corpus, SamplerConfig, SamplerIndex};
use conceptmap_core::embeddings::load_embeddings;
use conceptmap_core::evaluation::{
    criterion_mean_cosine, criterion_title, criterion_topwords, evaluate_p_at_1, load_dictionary, PAt1Report,
};
use conceptmap_core::mapping::{save_checkpoint, CheckpointMeta};
use conceptmap_core::refinement::{refine as run_refine, RefineConfig};
use conceptmap_core::retrieval::{compute_stats, induce_dictionary, topk_for};
use conceptmap_core::testbed::{gen_synthetic_world, SynthParams};
use conceptmap_core::{ConceptCorpus, EmbeddingSet, MappingMatrix, Metric};

use crate::config::{Config, SchemaError};
use crate::manifest::{config_hash, Manifest};

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BEST_FILE: &str = "best.W";
pub const DUMP_FILE: &str = "state_dump.json";
pub const DUMP_W_FILE: &str = "state_dump.W";

/// Ten significant digits, '.' as the decimal separator.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.9e}")
}

fn load_set(cfg: &Config, key: &str) -> anyhow::Result<EmbeddingSet> {
    let path = cfg.path(key);
    let (set, report) = load_embeddings(&path, cfg.usize("data.max_vocab"))?;
    if report.duplicates_skipped > 0 {
        log::warn!("{}: {} duplicate word(s) skipped", path.display(), report.duplicates_skipped);
    }
    Ok(set.normalize()?)
}

fn load_corpus(cfg: &Config) -> anyhow::Result<ConceptCorpus> {
    let path = cfg.path("data.corpus");
    let (corpus, report) = load_concept_corpus(&path)?;
    for (line, reason) in &report.skipped {
        log::warn!("{}:{line}: skipped ({reason})", path.display());
    }
    Ok(corpus)
}

fn load_mapping(cfg: &Config, dim: usize) -> anyhow::Result<MappingMatrix> {
    match cfg.opt_path("mapping.checkpoint") {
        None => Ok(MappingMatrix::identity(dim)),
        Some(p) => {
            let w = MappingMatrix::load(&p)?;
            if w.dim() != dim {
                bail!("{}: mapping is {}-dimensional, embeddings are {dim}", p.display(), w.dim());
            }
            Ok(w)
        }
    }
}

fn metric(cfg: &Config) -> Metric {
    cfg.str("retrieval.metric").parse().expect("schema restricts the metric")
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn p_at_1(cfg: &Config, w: &MappingMatrix, src: &EmbeddingSet, tgt: &EmbeddingSet) -> anyhow::Result<PAt1Report> {
    let (dict, report) = load_dictionary(cfg.path("data.dictionary"))?;
    for (line, reason) in &report.skipped {
        log::warn!("dictionary line {line}: skipped ({reason})");
    }
    let m = metric(cfg);
    let stats = match m {
        Metric::Csls => Some(compute_stats(w, src, tgt, cfg.usize("retrieval.csls_k"))?),
        Metric::Nn => None,
    };
    Ok(evaluate_p_at_1(w, src, tgt, &dict, m, stats.as_ref())?)
}

/// Builds the trainer config, reporting bad values under their config keys.
pub fn train_config(cfg: &Config) -> Result<TrainConfig, SchemaError> {
    let tc = TrainConfig {
        mode: match cfg.str("train.mode") {
            "standard-gan" => Mode::StandardGan,
            _ => Mode::ConceptGan,
        },
        batch_size: cfg.usize("train.batch_size"),
        lr_generator: cfg.f64("train.lr_generator"),
        lr_discriminator: cfg.f64("train.lr_discriminator"),
        lr_decay: cfg.f64("train.lr_decay"),
        beta: cfg.f64("train.beta"),
        smoothing: cfg.f64("train.smoothing"),
        steps_per_epoch: cfg.usize("train.steps_per_epoch"),
        epochs: cfg.usize("train.epochs"),
        disc_steps_per_gen_step: cfg.usize("train.disc_steps"),
        seed: cfg.u64("seed"),
        hidden_l: cfg.usize("model.hidden_l"),
        hidden_cl: cfg.usize("model.hidden_cl"),
        vocab_cap: cfg.usize("sampler.vocab_cap"),
        dl_sampling: match cfg.str("sampler.dl_sampling") {
            "global" => DlSampling::Global,
            _ => DlSampling::Conditioned,
        },
        concept_disc: cfg.bool("model.concept_disc"),
        log_every: cfg.usize("train.log_every"),
    };
    let mut problems = Vec::new();
    let mut need = |key: &str, ok: bool, what: &str| {
        if !ok {
            problems.push(format!("{key}: {what}"));
        }
    };
    let positive = |x: f64| x > 0.0;
    need("train.lr_generator", positive(tc.lr_generator), "must be > 0");
    need("train.lr_discriminator", positive(tc.lr_discriminator), "must be > 0");
    need("train.lr_decay", positive(tc.lr_decay), "must be > 0");
    need("train.beta", positive(tc.beta), "must be > 0");
    need("train.smoothing", (0.0..0.5).contains(&tc.smoothing), "must be in [0, 0.5)");
    for key in [
        "train.batch_size",
        "train.steps_per_epoch",
        "train.disc_steps",
        "train.log_every",
        "model.hidden_l",
        "model.hidden_cl",
        "sampler.vocab_cap",
        "sampler.min_target_words",
        "selection.top_m",
        "retrieval.csls_k",
    ] {
        need(key, cfg.u64(key) > 0, "must be >= 1");
    }
    if problems.is_empty() {
        debug_assert!(tc.validate().is_ok());
        Ok(tc)
    } else {
        Err(SchemaError { problems })
    }
}

/// Keys `train` needs, with the reason when the requirement is conditional.
fn check_train_keys(cfg: &Config) -> Result<(), SchemaError> {
    let mut problems: Vec<String> = ["data.src", "data.tgt"]
        .iter()
        .filter(|k| !cfg.is_set(k))
        .map(|k| format!("{k}: required"))
        .collect();
    if !cfg.is_set("data.corpus") {
        let mode = cfg.str("train.mode");
        let criterion = cfg.str("selection.criterion");
        if mode == "concept-gan" {
            problems.push(format!("data.corpus: required when train.mode is {mode:?}"));
        } else if criterion != "mean-cosine" {
            problems.push(format!("data.corpus: required when selection.criterion is {criterion:?}"));
        }
    }
    if let Err(e) = train_config(cfg) {
        problems.extend(e.problems);
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(SchemaError { problems })
    }
}

struct Selector<'a> {
    kind: &'a str,
    top_m: usize,
    top_n: usize,
    csls_k: usize,
    corpus: Option<&'a ConceptCorpus>,
    src: &'a EmbeddingSet,
    tgt: &'a EmbeddingSet,
    csv: BufWriter<File>,
    write_error: Option<std::io::Error>,
}

impl Selector<'_> {
    fn evaluate(&self, w: &MappingMatrix) -> conceptmap_core::Result<f64> {
        match (self.kind, self.corpus) {
            ("title", Some(c)) => criterion_title(w, c, self.src, self.tgt),
            ("topwords", Some(c)) => criterion_topwords(w, c, self.src, self.tgt, self.top_m),
            _ => criterion_mean_cosine(w, self.src, self.tgt, self.top_n, self.csls_k),
        }
    }
}

pub const METRICS_HEADER: &str = "step,d_l_loss,d_cl_loss,gen_loss,orth_error,criterion";

pub fn metrics_line(row: &MetricsRow) -> String {
    let opt = |x: Option<f64>| x.map(fmt_num).unwrap_or_default();
    format!(
        "{},{},{},{},{},{}",
        row.step,
        fmt_num(row.d_l_loss),
        opt(row.d_cl_loss),
        fmt_num(row.gen_loss),
        fmt_num(row.orth_error),
        opt(row.criterion)
    )
}

impl TrainObserver for Selector<'_> {
    fn criterion(&mut self, epoch: usize, w: &MappingMatrix) -> f64 {
        match self.evaluate(w) {
            Ok(v) => {
                log::info!("epoch {epoch}: {} criterion {v:.6}", self.kind);
                v
            }
            Err(e) => {
                log::error!("epoch {epoch}: criterion failed: {e}");
                f64::NAN
            }
        }
    }

    fn record(&mut self, row: &MetricsRow) {
        if self.write_error.is_none() {
            if let Err(e) = writeln!(self.csv, "{}", metrics_line(row)) {
                self.write_error = Some(e);
            }
        }
    }
}

#[derive(Serialize)]
struct StateDump<'a> {
    error: String,
    step: u64,
    epochs_done: usize,
    max_orth_error: f64,
    best_criterion: Option<f64>,
    recent: Vec<&'a MetricsRow>,
    mapping: String,
}

pub fn train(cfg: &Config) -> anyhow::Result<()> {
    check_train_keys(cfg)?;
    let tc = train_config(cfg)?;
    let out = cfg.path("output.dir");
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Manifest::new("train", cfg)?.write(&out.join(MANIFEST_FILE))?;

    let src = load_set(cfg, "data.src")?;
    let tgt = load_set(cfg, "data.tgt")?;
    let corpus = if cfg.is_set("data.corpus") { Some(load_corpus(cfg)?) } else { None };
    let sampler = match (&corpus, tc.mode) {
        (Some(c), Mode::ConceptGan) => {
            let sc = SamplerConfig {
                vocab_cap: tc.vocab_cap,
                min_target_words: cfg.usize("sampler.min_target_words"),
            };
            let s = SamplerIndex::build(c, &src, &tgt, &sc)?;
            log::info!("sampler: {} words, {} concepts", s.n_words(), s.n_concepts());
            Some(s)
        }
        _ => None,
    };

    let mut csv = create(&out.join(METRICS_FILE))?;
    writeln!(csv, "{METRICS_HEADER}")?;
    let mut selector = Selector {
        kind: cfg.str("selection.criterion"),
        top_m: cfg.usize("selection.top_m"),
        top_n: cfg.usize("refine.top_n"),
        csls_k: cfg.usize("retrieval.csls_k"),
        corpus: corpus.as_ref(),
        src: &src,
        tgt: &tgt,
        csv,
        write_error: None,
    };
    // surface criterion setup errors (e.g. no embeddable titles) before training
    selector.evaluate(&MappingMatrix::identity(src.dim()))?;

    let result = run_training(&src, &tgt, sampler.as_ref(), &tc, &mut selector);
    selector.csv.flush()?;
    if let Some(e) = selector.write_error {
        return Err(anyhow!("writing {}: {e}", out.join(METRICS_FILE).display()));
    }
    match result {
        Ok(state) => {
            let best = state.best.as_ref().ok_or_else(|| anyhow!("training produced no checkpoint"))?;
            let meta = CheckpointMeta {
                step: best.step,
                criterion: Some(best.criterion),
                seed: tc.seed,
                config_hash: config_hash(cfg),
            };
            save_checkpoint(out.join(BEST_FILE), &best.w, &meta)?;
            log::info!(
                "best criterion {:.6} at epoch {} (step {}); max orth error {:.3e}",
                best.criterion,
                best.epoch,
                best.step,
                state.max_orth_error
            );
            Ok(())
        }
        Err(TrainError::Setup(e)) => Err(e.into()),
        Err(TrainError::Aborted { error, state }) => {
            state.w.save(out.join(DUMP_W_FILE))?;
            let dump = StateDump {
                error: error.to_string(),
                step: state.step,
                epochs_done: state.epochs_done,
                max_orth_error: state.max_orth_error,
                best_criterion: state.best.as_ref().map(|b| b.criterion),
                recent: state.recent.iter().collect(),
                mapping: DUMP_W_FILE.to_string(),
            };
            std::fs::write(out.join(DUMP_FILE), serde_json::to_string_pretty(&dump)? + "\n")?;
            Err(anyhow!("{error}; state dumped to {}", out.join(DUMP_FILE).display()))
        }
    }
}

fn default_output(cfg: &Config, suffix: &str) -> PathBuf {
    cfg.opt_path("output.path").unwrap_or_else(|| {
        let mut p = cfg.path("mapping.checkpoint").into_os_string();
        p.push(suffix);
        PathBuf::from(p)
    })
}

pub fn refine(cfg: &Config) -> anyhow::Result<()> {
    cfg.require(&["data.src", "data.tgt", "mapping.checkpoint"])?;
    let input = cfg.path("mapping.checkpoint");
    let output = default_output(cfg, ".refined");
    let src = load_set(cfg, "data.src")?;
    let tgt = load_set(cfg, "data.tgt")?;
    let w0 = load_mapping(cfg, src.dim())?;
    let rc = RefineConfig {
        iterations: cfg.usize("refine.iterations"),
        top_n: cfg.usize("refine.top_n"),
        metric: metric(cfg),
        csls_k: cfg.usize("retrieval.csls_k"),
    };
    let outcome = run_refine(&w0, &src, &tgt, &rc)?;

    if rc.iterations == 0 {
        std::fs::copy(&input, &output).with_context(|| format!("copying to {}", output.display()))?;
    } else {
        outcome.w.save(&output)?;
    }
    let mut log_path = output.clone().into_os_string();
    log_path.push(".log.csv");
    let log_path = PathBuf::from(log_path);
    let mut log = create(&log_path)?;
    writeln!(log, "iteration,dict_size,mean_cosine,orth_error")?;
    for it in &outcome.log {
        writeln!(
            log,
            "{},{},{},{}",
            it.iteration,
            it.dict_size,
            fmt_num(it.mean_cosine),
            fmt_num(it.orth_error)
        )?;
    }
    log.flush()?;
    if let Some(reason) = outcome.aborted {
        bail!("refinement stopped early ({reason}); last good mapping written to {}", output.display());
    }
    if cfg.is_set("data.dictionary") {
        let before = p_at_1(cfg, &w0, &src, &tgt)?;
        let after = p_at_1(cfg, &outcome.w, &src, &tgt)?;
        let report = json!({
            "unrefined": before.p_at_1,
            "refined": after.p_at_1,
            "delta": after.p_at_1 - before.p_at_1,
            "metric": before.metric,
            "evaluable": after.evaluable,
        });
        println!("{report}");
    }
    Ok(())
}

pub fn evaluate(cfg: &Config) -> anyhow::Result<()> {
    cfg.require(&["data.src", "data.tgt", "data.dictionary"])?;
    let src = load_set(cfg, "data.src")?;
    let tgt = load_set(cfg, "data.tgt")?;
    let w = load_mapping(cfg, src.dim())?;
    let report = p_at_1(cfg, &w, &src, &tgt)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

pub fn induce(cfg: &Config) -> anyhow::Result<()> {
    cfg.require(&["data.src", "data.tgt"])?;
    let src = load_set(cfg, "data.src")?;
    let tgt = load_set(cfg, "data.tgt")?;
    let w = load_mapping(cfg, src.dim())?;
    let dict = induce_dictionary(
        &w,
        &src,
        &tgt,
        cfg.usize("refine.top_n"),
        metric(cfg),
        cfg.usize("retrieval.csls_k"),
    )?;
    let mut out: Box<dyn Write> = match cfg.opt_path("output.path") {
        Some(p) => Box::new(create(&p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    for &(s, t) in &dict.pairs {
        writeln!(out, "{}\t{}", src.word(s), tgt.word(t))?;
    }
    out.flush()?;
    Ok(())
}

pub fn synth(cfg: &Config) -> anyhow::Result<()> {
    let params = SynthParams {
        n_words: cfg.usize("synth.n_words"),
        dim: cfg.usize("synth.dim"),
        n_concepts: cfg.usize("synth.n_concepts"),
        noise_sigma: cfg.f64("synth.noise_sigma"),
        seed: cfg.u64("seed"),
        spread: cfg.f64("synth.spread"),
        ..SynthParams::default()
    };
    let world = gen_synthetic_world(&params)?;
    let files = world.write_to_dir(cfg.path("output.dir"))?;
    let report = json!({
        "src": files.src,
        "tgt": files.tgt,
        "corpus": files.corpus,
        "truth": files.truth,
        "rotation": files.rotation,
    });
    println!("{report}");
    Ok(())
}

pub fn knn(cfg: &Config) -> anyhow::Result<()> {
    cfg.require(&["data.src", "data.tgt", "knn.word"])?;
    let src = load_set(cfg, "data.src")?;
    let tgt = load_set(cfg, "data.tgt")?;
    let w = load_mapping(cfg, src.dim())?;
    let word = cfg.str("knn.word");
    let row = src
        .row_of(word)
        .ok_or_else(|| anyhow!("knn.word: {word:?} is not in the source vocabulary"))?;
    let m = metric(cfg);
    let k = cfg.usize("knn.k");
    let stats = match m {
        Metric::Csls => Some(compute_stats(&w, &src, &tgt, cfg.usize("retrieval.csls_k"))?),
        Metric::Nn => None,
    };
    let mut out = std::io::stdout().lock();
    for nb in topk_for(row, &w, &src, &tgt, m, stats.as_ref(), k)? {
        writeln!(out, "{}\t{}", tgt.word(nb.row), fmt_num(nb.score))?;
    }
    Ok(())
}
