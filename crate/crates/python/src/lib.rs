use std::collections::BTreeMap;

use nlpcfg::chart::{decode, oracle_compare, sample_with_retries, ModelGrammar};
use nlpcfg::diff::Checkpoint;
use nlpcfg::eval::{attachment_scores as attach, tree_f1 as f1_of};
use nlpcfg::grammar::{parse_bracketed, write_lex_tree, DependencyArcs, Vocab};
use nlpcfg::scoring::{FactorizationMode, LpcfgModel, ModelConfig};
use nlpcfg::train::{
    draw_noise, init_model, kl_gaussian as kl, neg_elbo as elbo, perplexity as ppl, point_log_likelihood, train as fit,
    TrainConfig,
};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn err(e: nlpcfg::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Training hyper-parameters; attribute names follow the config-file keys.
#[pyclass(name = "TrainConfig", from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    inner: TrainConfig,
}

macro_rules! config_fields {
    ($($name:ident: $ty:ty),* $(,)?) => {
        #[pymethods]
        impl PyTrainConfig {
            $(
                #[getter]
                fn $name(&self) -> $ty {
                    self.inner.$name.clone()
                }
            )*
            /// Defaults, overridden by keyword arguments.
            #[new]
            #[pyo3(signature = (**kwargs))]
            fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
                let mut c = PyTrainConfig {
                    inner: TrainConfig::default(),
                };
                if let Some(kw) = kwargs {
                    for (k, v) in kw.iter() {
                        c.set_field(&k.extract::<String>()?, &v)?;
                    }
                }
                c.inner.validate().map_err(err)?;
                Ok(c)
            }

            #[getter]
            fn factorization(&self) -> &'static str {
                self.inner.factorization.name()
            }

            fn __repr__(&self) -> String {
                format!("{:?}", self.inner)
            }
        }
        impl PyTrainConfig {
            fn set_field(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
                match key {
                    $(stringify!($name) => self.inner.$name = value.extract()?,)*
                    "factorization" => {
                        let s: String = value.extract()?;
                        self.inner.factorization = s.parse().map_err(err)?;
                    }
                    _ => return Err(PyValueError::new_err(format!("unknown setting {key:?}"))),
                }
                Ok(())
            }
        }
    };
}

config_fields! {
    num_nonterminals: usize,
    num_preterminals: usize,
    dim_z: usize,
    dim_embed: usize,
    mlp_layers: [usize; 3],
    encoder_hidden: usize,
    tie_word_embeddings: bool,
    curriculum_rate: f64,
    curriculum_additive: bool,
    curriculum: bool,
    mc_samples: usize,
    learning_rate: f64,
    clip_norm: f64,
    batch_size: usize,
    max_epochs: usize,
    seed: u64,
    min_count: usize,
    workers: usize,
    kmeans_init: bool,
}

/// A trained or freshly initialised model with its vocabulary.
#[pyclass(name = "Model")]
struct PyModel {
    model: LpcfgModel,
    vocab: Vocab,
}

impl PyModel {
    fn ids(&self, tokens: &[String]) -> Vec<usize> {
        self.vocab.encode(tokens)
    }
}

#[pymethods]
impl PyModel {
    /// Random initialisation over `vocab` (which must start with "<unk>").
    #[staticmethod]
    fn init(config: &PyTrainConfig, vocab: Vec<String>) -> PyResult<Self> {
        let vocab = Vocab::from_token_list(vocab, config.inner.min_count).map_err(err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.inner.seed);
        let model = init_model(&config.inner, vocab.len(), None, &mut rng).map_err(err)?;
        Ok(PyModel { model, vocab })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ck = Checkpoint::load(path.as_ref()).map_err(err)?;
        let (model, vocab) = LpcfgModel::from_checkpoint(&ck).map_err(err)?;
        Ok(PyModel { model, vocab })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.model
            .to_checkpoint(&self.vocab, &BTreeMap::new())
            .and_then(|c| c.save(path.as_ref()))
            .map_err(err)
    }

    #[getter]
    fn num_nonterminals(&self) -> usize {
        self.model.config.num_nonterminals
    }

    #[getter]
    fn num_preterminals(&self) -> usize {
        self.model.config.num_preterminals
    }

    #[getter]
    fn factorization(&self) -> &'static str {
        self.model.config.mode.name()
    }

    #[getter]
    fn vocab(&self) -> Vec<String> {
        self.vocab.tokens().to_vec()
    }

    fn encode(&self, tokens: Vec<String>) -> Vec<usize> {
        self.ids(&tokens)
    }

    /// Viterbi tree at z = mu(x): (bracketed tree with heads, 1-based heads, log score).
    fn parse(&self, tokens: Vec<String>) -> PyResult<(String, Vec<usize>, f64)> {
        let (tree, score) = decode(&self.model, &self.ids(&tokens)).map_err(err)?;
        let text = write_lex_tree(&tree, &self.model.signature(), &tokens).map_err(err)?;
        let heads = tree.extract_dependencies().map_err(err)?.to_one_based();
        Ok((text, heads, score))
    }

    /// log p(x | z = mu(x)).
    fn log_likelihood(&self, tokens: Vec<String>) -> PyResult<f64> {
        point_log_likelihood(&self.model, &self.ids(&tokens)).map_err(err)
    }

    fn perplexity(&self, sentences: Vec<Vec<String>>) -> PyResult<f64> {
        let ids: Vec<Vec<usize>> = sentences.iter().map(|s| self.ids(s)).collect();
        ppl(&self.model, &ids).map_err(err)
    }

    /// Monte-Carlo negative ELBo with `samples` reparameterised draws.
    #[pyo3(signature = (tokens, samples = 1, seed = 0))]
    fn neg_elbo(&self, tokens: Vec<String>, samples: usize, seed: u64) -> PyResult<f64> {
        let noise = draw_noise(samples, self.model.config.dim_z, &mut ChaCha8Rng::seed_from_u64(seed));
        elbo(&self.model, &self.model.params, &self.ids(&tokens), &noise).map_err(err)
    }

    /// Log-probability tables for `tokens` at `z` (default: the proposal mean).
    #[pyo3(signature = (tokens, z = None))]
    fn rule_tables<'py>(&self, py: Python<'py>, tokens: Vec<String>, z: Option<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
        let ids = self.ids(&tokens);
        let z = match z {
            Some(z) => z,
            None => self.model.encoder().encode_values(&self.model.params, &ids).map_err(err)?.0,
        };
        let t = self.model.build_tables(&z, &ids).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("root", t.root.clone())?;
        d.set_item("emit", t.emit.clone())?;
        d.set_item("head_child", t.head_child.clone())?;
        d.set_item("noninherit_left", t.noninherit[0].clone())?;
        d.set_item("noninherit_right", t.noninherit[1].clone())?;
        d.set_item("max_normalization_error", t.max_normalization_error())?;
        Ok(d)
    }

    /// Draws `n` (words, bracketed tree) pairs from the prior over z.
    #[pyo3(signature = (n, seed = 0, max_depth = 200))]
    fn sample(&self, n: usize, seed: u64, max_depth: usize) -> PyResult<Vec<(Vec<String>, String)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sig = self.model.signature();
        (0..n)
            .map(|_| {
                let z = draw_noise(1, self.model.config.dim_z, &mut rng).remove(0);
                let g = ModelGrammar::new(&self.model, z)?;
                let (s, _) = sample_with_retries(&g, max_depth, 100, &mut rng)?;
                let words: Vec<String> = s.words.iter().map(|&w| self.vocab.token(w).to_string()).collect();
                let tree = write_lex_tree(&s.tree, &sig, &words)?;
                Ok((words, tree))
            })
            .collect::<nlpcfg::Result<_>>()
            .map_err(err)
    }
}

/// Trains on tokenized sentences; returns the best model and per-epoch metrics.
#[pyfunction]
fn train<'py>(
    py: Python<'py>,
    config: &PyTrainConfig,
    train_sentences: Vec<Vec<String>>,
    dev_sentences: Vec<Vec<String>>,
) -> PyResult<(PyModel, Vec<Bound<'py, PyDict>>)> {
    let cfg = &config.inner;
    let vocab = Vocab::from_counts(train_sentences.iter().flatten().map(String::as_str), cfg.min_count);
    let enc = |s: &[Vec<String>]| -> Vec<Vec<usize>> { s.iter().map(|x| vocab.encode(x)).collect() };
    let (tr, dev) = (enc(&train_sentences), enc(&dev_sentences));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = init_model(cfg, vocab.len(), None, &mut rng).map_err(err)?;
    let outcome = py
        .detach(|| fit(model, &tr, &dev, cfg, &mut |_, _, _| Ok(())))
        .map_err(err)?;
    let rows = outcome
        .metrics
        .iter()
        .map(|m| {
            let d = PyDict::new(py);
            d.set_item("epoch", m.epoch)?;
            d.set_item("curriculum_limit", m.curriculum_limit)?;
            d.set_item("train_neg_elbo", m.train_neg_elbo)?;
            d.set_item("val_perplexity", m.val_perplexity)?;
            d.set_item("wall_seconds", m.wall_seconds)?;
            Ok(d)
        })
        .collect::<PyResult<_>>()?;
    Ok((
        PyModel {
            model: outcome.best,
            vocab,
        },
        rows,
    ))
}

/// Closed-form KL(N(mu, diag sigma) || N(0, I)), with sigma the variances.
#[pyfunction]
fn kl_gaussian(mu: Vec<f64>, sigma: Vec<f64>) -> PyResult<f64> {
    kl(&mu, &sigma).map_err(err)
}

/// (DAS, UAS) of 1-based head lists, 0 marking the root.
#[pyfunction]
fn attachment_scores(predicted: Vec<usize>, gold: Vec<usize>) -> PyResult<(f64, f64)> {
    let p = DependencyArcs::from_one_based(&predicted).map_err(err)?;
    let g = DependencyArcs::from_one_based(&gold).map_err(err)?;
    attach(&p, &g).map_err(err)
}

/// Unlabeled F1 of a head-annotated predicted tree against a gold bracketing.
#[pyfunction]
fn tree_f1(predicted: &str, gold: &str, num_nonterminals: usize, num_preterminals: usize) -> PyResult<f64> {
    let sig = nlpcfg::grammar::GrammarSignature::new(num_nonterminals, num_preterminals, 1).map_err(err)?;
    let pred = parse_bracketed(predicted).and_then(|t| t.to_lex_tree(&sig)).map_err(err)?;
    let gold = parse_bracketed(gold).map_err(err)?;
    f1_of(&pred, &gold).map_err(err)
}

/// Largest |chart − enumeration| gaps for log Z and the Viterbi score over random small models.
#[pyfunction]
#[pyo3(signature = (draws = 5, max_len = 5, factorization = "main", seed = 0))]
fn oracle_check(draws: usize, max_len: usize, factorization: &str, seed: u64) -> PyResult<(f64, f64)> {
    let mode: FactorizationMode = factorization.parse().map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut wz, mut wb) = (0.0f64, 0.0f64);
    for _ in 0..draws {
        let cfg = ModelConfig {
            num_nonterminals: 2,
            num_preterminals: 2,
            vocab_size: 6,
            dim_z: 3,
            dim_embed: 4,
            mlp_layers: [1, 1, 1],
            encoder_hidden: 4,
            mode,
            tie_word_embeddings: false,
        };
        let m = LpcfgModel::init(cfg, &mut rng).map_err(err)?;
        let z = draw_noise(1, 3, &mut rng).remove(0);
        for len in 2..=max_len {
            let s: Vec<usize> = (0..len).map(|_| rng.random_range(0..6)).collect();
            let c = m.build_tables(&z, &s).and_then(|t| oracle_compare(&t)).map_err(err)?;
            wz = wz.max(c.log_z_error());
            wb = wb.max(c.best_error());
        }
    }
    Ok((wz, wb))
}

#[pymodule]
#[pyo3(name = "nlpcfg")]
fn nlpcfg_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(kl_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(attachment_scores, m)?)?;
    m.add_function(wrap_pyfunction!(tree_f1, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_check, m)?)?;
    Ok(())
}
