use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use nlpcfg::corpus::PunctuationSet;
use nlpcfg::eval::F1Averaging;
use nlpcfg::train::TrainConfig;
use nlpcfg::{Error, Result};

/// Every key accepted in a config file or through `--set`.
pub const KEYS: &[&str] = &[
    // paths
    "corpus",
    "dev",
    "gold_trees",
    "gold_deps",
    "embeddings",
    "checkpoint",
    "out",
    "predicted",
    "punctuation",
    // training
    "num_nonterminals",
    "num_preterminals",
    "dim_z",
    "dim_embed",
    "mlp_layers",
    "encoder_hidden",
    "factorization",
    "tie_word_embeddings",
    "curriculum",
    "curriculum_rate",
    "curriculum_additive",
    "mc_samples",
    "learning_rate",
    "clip_norm",
    "batch_size",
    "max_epochs",
    "seed",
    "min_count",
    "workers",
    "kmeans_init",
    "init",
    "dev_fraction",
    // other commands
    "averaging",
    "num_samples",
    "max_depth",
    "max_attempts",
    "vocab_size",
    "gradcheck_coords",
    "gradcheck_step",
    "gradcheck_tolerance",
    "gradcheck_len",
    "oracle_draws",
    "oracle_max_len",
    "oracle_nonterminals",
    "oracle_preterminals",
];

/// Parses flat `key = value` text. `#` starts a comment line; later lines win.
pub fn parse_config_text(text: &str, path: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_string(),
            line: i + 1,
            msg: "expected key = value".into(),
        })?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(Error::Parse {
                path: path.to_string(),
                line: i + 1,
                msg: format!("unknown key {k:?}"),
            });
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Random,
    Pretrained,
}

/// Resolved settings for one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub corpus: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub gold_trees: Option<PathBuf>,
    pub gold_deps: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub predicted: Option<PathBuf>,
    pub punctuation: Option<PunctuationSet>,
    pub init: Init,
    pub dev_fraction: f64,
    pub averaging: F1Averaging,
    pub num_samples: usize,
    pub max_depth: usize,
    pub max_attempts: usize,
    pub vocab_size: usize,
    pub gradcheck_coords: usize,
    pub gradcheck_step: f64,
    pub gradcheck_tolerance: f64,
    pub gradcheck_len: usize,
    pub oracle_draws: usize,
    pub oracle_max_len: usize,
    pub oracle_nonterminals: usize,
    pub oracle_preterminals: usize,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

impl RunConfig {
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = RunConfig {
            train: TrainConfig::default(),
            corpus: None,
            dev: None,
            gold_trees: None,
            gold_deps: None,
            embeddings: None,
            checkpoint: None,
            out: None,
            predicted: None,
            punctuation: None,
            init: Init::Random,
            dev_fraction: 0.1,
            averaging: F1Averaging::Sentence,
            num_samples: 10,
            max_depth: 200,
            max_attempts: 100,
            vocab_size: 20,
            gradcheck_coords: 10,
            gradcheck_step: 1e-5,
            gradcheck_tolerance: 1e-4,
            gradcheck_len: 3,
            oracle_draws: 20,
            oracle_max_len: 5,
            oracle_nonterminals: 2,
            oracle_preterminals: 2,
        };
        for (k, v) in map {
            let t = &mut c.train;
            let path = || Some(PathBuf::from(v));
            match k.as_str() {
                "corpus" => c.corpus = path(),
                "dev" => c.dev = path(),
                "gold_trees" => c.gold_trees = path(),
                "gold_deps" => c.gold_deps = path(),
                "embeddings" => c.embeddings = path(),
                "checkpoint" => c.checkpoint = path(),
                "out" => c.out = path(),
                "predicted" => c.predicted = path(),
                "punctuation" => {
                    c.punctuation = match v.as_str() {
                        "none" => None,
                        "default" => Some(PunctuationSet::default()),
                        file => Some(PunctuationSet::load(file.as_ref())?),
                    }
                }
                "num_nonterminals" => t.num_nonterminals = parse(k, v)?,
                "num_preterminals" => t.num_preterminals = parse(k, v)?,
                "dim_z" => t.dim_z = parse(k, v)?,
                "dim_embed" => t.dim_embed = parse(k, v)?,
                "mlp_layers" => {
                    let l: Vec<usize> = v.split(',').map(|x| parse(k, x.trim())).collect::<Result<_>>()?;
                    t.mlp_layers = l
                        .try_into()
                        .map_err(|_| Error::Config("mlp_layers needs three comma-separated counts".into()))?;
                }
                "encoder_hidden" => t.encoder_hidden = parse(k, v)?,
                "factorization" => t.factorization = v.parse()?,
                "tie_word_embeddings" => t.tie_word_embeddings = parse_bool(k, v)?,
                "curriculum" => t.curriculum = parse_bool(k, v)?,
                "curriculum_rate" => t.curriculum_rate = parse(k, v)?,
                "curriculum_additive" => t.curriculum_additive = parse_bool(k, v)?,
                "mc_samples" => t.mc_samples = parse(k, v)?,
                "learning_rate" => t.learning_rate = parse(k, v)?,
                "clip_norm" => t.clip_norm = parse(k, v)?,
                "batch_size" => t.batch_size = parse(k, v)?,
                "max_epochs" => t.max_epochs = parse(k, v)?,
                "seed" => t.seed = parse(k, v)?,
                "min_count" => t.min_count = parse(k, v)?,
                "workers" => t.workers = parse(k, v)?,
                "kmeans_init" => t.kmeans_init = parse_bool(k, v)?,
                "init" => {
                    c.init = match v.as_str() {
                        "random" => Init::Random,
                        "pretrained" => Init::Pretrained,
                        _ => return Err(Error::Config(format!("init: expected random or pretrained, got {v:?}"))),
                    }
                }
                "dev_fraction" => c.dev_fraction = parse(k, v)?,
                "averaging" => {
                    c.averaging = match v.as_str() {
                        "sentence" => F1Averaging::Sentence,
                        "corpus" => F1Averaging::Corpus,
                        _ => return Err(Error::Config(format!("averaging: expected sentence or corpus, got {v:?}"))),
                    }
                }
                "num_samples" => c.num_samples = parse(k, v)?,
                "max_depth" => c.max_depth = parse(k, v)?,
                "max_attempts" => c.max_attempts = parse(k, v)?,
                "vocab_size" => c.vocab_size = parse(k, v)?,
                "gradcheck_coords" => c.gradcheck_coords = parse(k, v)?,
                "gradcheck_step" => c.gradcheck_step = parse(k, v)?,
                "gradcheck_tolerance" => c.gradcheck_tolerance = parse(k, v)?,
                "gradcheck_len" => c.gradcheck_len = parse(k, v)?,
                "oracle_draws" => c.oracle_draws = parse(k, v)?,
                "oracle_max_len" => c.oracle_max_len = parse(k, v)?,
                "oracle_nonterminals" => c.oracle_nonterminals = parse(k, v)?,
                "oracle_preterminals" => c.oracle_preterminals = parse(k, v)?,
                _ => return Err(Error::Config(format!("unknown key {k:?}"))),
            }
        }
        if !(c.dev_fraction > 0.0 && c.dev_fraction < 1.0) {
            return Err(Error::Config("dev_fraction must lie in (0, 1)".into()));
        }
        c.train.validate()?;
        Ok(c)
    }
}
