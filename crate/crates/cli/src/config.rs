//! Flat dotted-key configuration shared by every subcommand.
//!
//! A config file is a JSON object whose keys are the dotted names below
//! (nested objects are flattened, so `{"train": {"epochs": 3}}` and
//! `{"train.epochs": 3}` are equivalent). Command-line `--key value` pairs
//! override file values; a key may be given by any unambiguous dotted suffix,
//! e.g. `--epochs` for `train.epochs`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde_json::{Map, Number, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Str,
    Path,
    Int,
    Float,
    Bool,
    Enum(&'static [&'static str]),
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kind::Str => f.write_str("string"),
            Kind::Path => f.write_str("path"),
            Kind::Int => f.write_str("non-negative integer"),
            Kind::Float => f.write_str("number"),
            Kind::Bool => f.write_str("boolean"),
            Kind::Enum(opts) => write!(f, "one of {}", opts.join("|")),
        }
    }
}

pub struct KeySpec {
    pub key: &'static str,
    pub kind: Kind,
    /// JSON literal of the default, or `None` when the key has no default.
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const MODES: &[&str] = &["concept-gan", "standard-gan"];
const METRICS: &[&str] = &["csls", "nn"];
const CRITERIA: &[&str] = &["title", "topwords", "mean-cosine"];
const DL_SAMPLING: &[&str] = &["conditioned", "global"];

macro_rules! key {
    ($key:literal, $kind:expr, $default:expr, $help:literal) => {
        KeySpec {
            key: $key,
            kind: $kind,
            default: $default,
            help: $help,
        }
    };
}

pub static SCHEMA: &[KeySpec] = &[
    key!("seed", Kind::Int, Some("0"), "run seed"),
    key!("data.src", Kind::Path, None, "source embeddings (text format)"),
    key!("data.tgt", Kind::Path, None, "target embeddings (text format)"),
    key!("data.corpus", Kind::Path, None, "concept corpus (JSONL)"),
    key!("data.dictionary", Kind::Path, None, "evaluation dictionary (TSV)"),
    key!("data.max_vocab", Kind::Int, Some("200000"), "words loaded per embedding file"),
    key!("mapping.checkpoint", Kind::Path, None, "input mapping; identity when unset"),
    key!("train.mode", Kind::Enum(MODES), Some("\"concept-gan\""), "training mode"),
    key!("train.batch_size", Kind::Int, Some("32"), "samples per batch"),
    key!("train.epochs", Kind::Int, Some("10"), "number of epochs"),
    key!("train.steps_per_epoch", Kind::Int, Some("1000"), "generator steps per epoch"),
    key!("train.lr_generator", Kind::Float, Some("0.1"), "generator SGD learning rate"),
    key!("train.lr_discriminator", Kind::Float, Some("0.1"), "discriminator SGD learning rate"),
    key!("train.lr_decay", Kind::Float, Some("0.98"), "learning-rate decay per epoch"),
    key!("train.beta", Kind::Float, Some("0.001"), "orthogonalization strength"),
    key!("train.smoothing", Kind::Float, Some("0.1"), "discriminator label smoothing"),
    key!("train.disc_steps", Kind::Int, Some("1"), "discriminator updates per generator update"),
    key!("train.log_every", Kind::Int, Some("10"), "steps between metrics rows"),
    key!("model.hidden_l", Kind::Int, Some("1024"), "language discriminator hidden width"),
    key!("model.hidden_cl", Kind::Int, Some("2048"), "concept discriminator hidden width"),
    key!("model.concept_disc", Kind::Bool, Some("true"), "use the concept discriminator in concept-gan mode"),
    key!("sampler.vocab_cap", Kind::Int, Some("100000"), "most frequent words eligible for sampling"),
    key!("sampler.min_target_words", Kind::Int, Some("5"), "minimum target words per concept"),
    key!("sampler.dl_sampling", Kind::Enum(DL_SAMPLING), Some("\"conditioned\""), "language discriminator batches in concept-gan mode"),
    key!("selection.criterion", Kind::Enum(CRITERIA), Some("\"title\""), "model-selection criterion"),
    key!("selection.top_m", Kind::Int, Some("10"), "words per article for the topwords criterion"),
    key!("retrieval.metric", Kind::Enum(METRICS), Some("\"csls\""), "retrieval metric"),
    key!("retrieval.csls_k", Kind::Int, Some("10"), "CSLS neighbourhood size"),
    key!("refine.iterations", Kind::Int, Some("5"), "Procrustes refinement iterations"),
    key!("refine.top_n", Kind::Int, Some("10000"), "source words searched for mutual neighbours"),
    key!("knn.word", Kind::Str, None, "query word"),
    key!("knn.k", Kind::Int, Some("10"), "neighbours returned"),
    key!("synth.n_words", Kind::Int, Some("3000"), "synthetic vocabulary size"),
    key!("synth.dim", Kind::Int, Some("50"), "synthetic dimension"),
    key!("synth.n_concepts", Kind::Int, Some("100"), "synthetic concept count"),
    key!("synth.noise_sigma", Kind::Float, Some("0.05"), "target noise per component"),
    key!("synth.spread", Kind::Float, Some("1.0"), "word spread around centroids"),
    key!("output.dir", Kind::Path, Some("\"run\""), "output directory (train, synth)"),
    key!("output.path", Kind::Path, None, "output file (refine, induce)"),
];

/// Every problem found while building a config, each prefixed with its key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaError {
    pub problems: Vec<String>,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} problem(s)):", self.problems.len())?;
        for p in &self.problems {
            writeln!(f, "  {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for SchemaError {}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    values: BTreeMap<&'static str, Value>,
}

fn key_spec(key: &str) -> Option<&'static KeySpec> {
    SCHEMA.iter().find(|s| s.key == key)
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        _ => out.push((prefix.to_string(), v.clone())),
    }
}

/// Checks a JSON value against a kind, coercing integers to floats where a
/// number is expected.
fn check(kind: Kind, v: &Value) -> Result<Value, String> {
    let ok = match (kind, v) {
        (Kind::Str | Kind::Path, Value::String(_)) => true,
        (Kind::Int, Value::Number(n)) => n.is_u64(),
        (Kind::Float, Value::Number(n)) => {
            return n
                .as_f64()
                .filter(|f| f.is_finite())
                .map(|f| Value::Number(Number::from_f64(f).expect("finite")))
                .ok_or_else(|| format!("expected {kind}, got {v}"));
        }
        (Kind::Bool, Value::Bool(_)) => true,
        (Kind::Enum(opts), Value::String(s)) => opts.contains(&s.as_str()),
        _ => false,
    };
    if ok {
        Ok(v.clone())
    } else {
        Err(format!("expected {kind}, got {v}"))
    }
}

/// Parses a command-line string as the key's kind.
fn parse_cli(kind: Kind, raw: &str) -> Result<Value, String> {
    let v = match kind {
        Kind::Str | Kind::Path | Kind::Enum(_) => Value::String(raw.to_string()),
        Kind::Int => raw
            .parse::<u64>()
            .map(Value::from)
            .map_err(|_| format!("expected {kind}, got {raw:?}"))?,
        Kind::Float => raw
            .parse::<f64>()
            .ok()
            .and_then(Number::from_f64)
            .map(Value::Number)
            .ok_or_else(|| format!("expected {kind}, got {raw:?}"))?,
        Kind::Bool => match raw {
            "true" => Value::Bool(true),
            "false" => Value::Bool(false),
            _ => return Err(format!("expected {kind}, got {raw:?}")),
        },
    };
    check(kind, &v)
}

/// Resolves a command-line key: exact match first, then unique dotted suffix.
pub fn resolve_key(name: &str) -> Result<&'static str, String> {
    if let Some(s) = key_spec(name) {
        return Ok(s.key);
    }
    let matches: Vec<&'static str> = SCHEMA
        .iter()
        .map(|s| s.key)
        .filter(|k| k.ends_with(&format!(".{name}")))
        .collect();
    match matches.as_slice() {
        [k] => Ok(k),
        [] => Err(format!("{name}: unknown key")),
        _ => Err(format!("{name}: ambiguous, could be {}", matches.join(", "))),
    }
}

/// Splits `--key value` / `--key=value` arguments.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, SchemaError> {
    let mut out = Vec::new();
    let mut problems = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(name) = arg.strip_prefix("--") else {
            problems.push(format!("{arg}: expected --key value"));
            continue;
        };
        if let Some((k, v)) = name.split_once('=') {
            out.push((k.to_string(), v.to_string()));
        } else if let Some(v) = it.next() {
            out.push((name.to_string(), v.clone()));
        } else {
            problems.push(format!("{name}: missing value"));
        }
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(SchemaError { problems })
    }
}

impl Config {
    /// Defaults, then `file` (a JSON object), then command-line overrides.
    pub fn build(file: Option<&Value>, overrides: &[(String, String)]) -> Result<Config, SchemaError> {
        let mut problems = Vec::new();
        let mut values = BTreeMap::new();
        for s in SCHEMA {
            if let Some(d) = s.default {
                values.insert(s.key, serde_json::from_str(d).expect("schema defaults are valid JSON"));
            }
        }
        match file {
            None => {}
            Some(Value::Object(_)) => {
                let mut flat = Vec::new();
                flatten("", file.expect("matched"), &mut flat);
                for (k, v) in flat {
                    match key_spec(&k) {
                        None => problems.push(format!("{k}: unknown key")),
                        Some(s) if v.is_null() => {
                            values.remove(s.key);
                        }
                        Some(s) => match check(s.kind, &v) {
                            Ok(v) => {
                                values.insert(s.key, v);
                            }
                            Err(e) => problems.push(format!("{k}: {e}")),
                        },
                    }
                }
            }
            Some(other) => problems.push(format!("<root>: expected a JSON object, got {other}")),
        }
        for (name, raw) in overrides {
            match resolve_key(name) {
                Err(e) => problems.push(e),
                Ok(key) => match parse_cli(key_spec(key).expect("resolved").kind, raw) {
                    Ok(v) => {
                        values.insert(key, v);
                    }
                    Err(e) => problems.push(format!("{key}: {e}")),
                },
            }
        }
        if problems.is_empty() {
            Ok(Config { values })
        } else {
            Err(SchemaError { problems })
        }
    }

    pub fn from_file(path: &Path, overrides: &[(String, String)]) -> anyhow::Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let json: Value = serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        Ok(Config::build(Some(&json), overrides)?)
    }

    /// Reports every key in `keys` that has no value.
    pub fn require(&self, keys: &[&str]) -> Result<(), SchemaError> {
        let problems: Vec<String> = keys
            .iter()
            .filter(|k| !self.values.contains_key(**k))
            .map(|k| format!("{k}: required"))
            .collect();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SchemaError { problems })
        }
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn get(&self, key: &str) -> &Value {
        debug_assert!(key_spec(key).is_some(), "{key} is not in the schema");
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("{key} has no value; call require() first"))
    }

    pub fn str(&self, key: &str) -> &str {
        self.get(key).as_str().expect("validated string")
    }

    pub fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.str(key))
    }

    pub fn opt_path(&self, key: &str) -> Option<PathBuf> {
        self.values.get(key).map(|v| PathBuf::from(v.as_str().expect("validated path")))
    }

    pub fn u64(&self, key: &str) -> u64 {
        self.get(key).as_u64().expect("validated integer")
    }

    pub fn usize(&self, key: &str) -> usize {
        usize::try_from(self.u64(key)).unwrap_or(usize::MAX)
    }

    pub fn f64(&self, key: &str) -> f64 {
        self.get(key).as_f64().expect("validated number")
    }

    pub fn bool(&self, key: &str) -> bool {
        self.get(key).as_bool().expect("validated boolean")
    }

    /// All resolved values as a flat JSON object (sorted by key).
    pub fn to_json(&self) -> Value {
        Value::Object(self.values.iter().map(|(k, v)| (k.to_string(), v.clone())).collect::<Map<_, _>>())
    }
}

/// Help text listing the schema, for `--help`.
pub fn schema_help() -> String {
    let mut s = String::from("Configuration keys (set in --config JSON or as --key value):\n");
    for k in SCHEMA {
        let default = k.default.map(|d| format!(" [default: {d}]")).unwrap_or_default();
        s.push_str(&format!("  {:<26} {} ({}){}\n", k.key, k.help, k.kind, default));
    }
    s
}
