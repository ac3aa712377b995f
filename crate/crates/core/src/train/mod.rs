//! Variational training: objective, initialisation, curriculum and the epoch loop.

mod curriculum;
mod kmeans;
mod objective;
mod optim;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use curriculum::{curriculum_next, CurriculumState};
pub use kmeans::kmeans;
pub use objective::{
    draw_noise, kl_gaussian, neg_elbo, neg_elbo_grad, neg_elbo_grad_with, neg_elbo_var, perplexity,
    point_log_likelihood, ElboTerms,
};
pub use optim::Adam;

use crate::diff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scoring::{FactorizationMode, LpcfgModel, ModelConfig, WordRole};

/// Hyper-parameters of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub num_nonterminals: usize,
    pub num_preterminals: usize,
    pub dim_z: usize,
    pub dim_embed: usize,
    pub mlp_layers: [usize; 3],
    pub encoder_hidden: usize,
    pub factorization: FactorizationMode,
    pub tie_word_embeddings: bool,
    /// Percent growth of the length limit per epoch.
    pub curriculum_rate: f64,
    pub curriculum_additive: bool,
    /// When off, every sentence is admitted from the first epoch.
    pub curriculum: bool,
    pub mc_samples: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub min_count: usize,
    pub workers: usize,
    /// Initialise preterminal embeddings from k-means centroids of the word embeddings.
    pub kmeans_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            num_nonterminals: 10,
            num_preterminals: 20,
            dim_z: 60,
            dim_embed: 300,
            mlp_layers: [6, 6, 4],
            encoder_hidden: 300,
            factorization: FactorizationMode::Main,
            tie_word_embeddings: false,
            curriculum_rate: 10.0,
            curriculum_additive: false,
            curriculum: true,
            mc_samples: 1,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            batch_size: 8,
            max_epochs: 15,
            seed: 0,
            min_count: 2,
            workers: 1,
            kmeans_init: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("mc_samples", self.mc_samples),
            ("batch_size", self.batch_size),
            ("workers", self.workers),
            ("min_count", self.min_count),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be at least 1")));
            }
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("learning_rate and clip_norm must be positive".into()));
        }
        if !(self.curriculum_rate >= 0.0) {
            return Err(Error::Config("curriculum_rate must be ≥ 0".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            num_nonterminals: self.num_nonterminals,
            num_preterminals: self.num_preterminals,
            vocab_size,
            dim_z: self.dim_z,
            dim_embed: self.dim_embed,
            mlp_layers: self.mlp_layers,
            encoder_hidden: self.encoder_hidden,
            mode: self.factorization,
            tie_word_embeddings: self.tie_word_embeddings,
        }
    }
}

/// Fresh model: word embeddings from `embeddings` when given (else N(0, I)),
/// preterminal embeddings from k-means centroids of the word embeddings.
pub fn init_model(cfg: &TrainConfig, vocab_size: usize, embeddings: Option<&Tensor>, rng: &mut impl Rng) -> Result<LpcfgModel> {
    cfg.validate()?;
    let mut model = LpcfgModel::init(cfg.model_config(vocab_size), rng)?;
    if let Some(e) = embeddings {
        if e.shape() != [vocab_size, cfg.dim_embed] {
            return Err(Error::Shape(format!(
                "embeddings are {:?}, model needs [{vocab_size}, {}]",
                e.shape(),
                cfg.dim_embed
            )));
        }
        let mut names: Vec<&str> = [
            WordRole::HeadInput,
            WordRole::Emission,
            WordRole::ContextLeft,
            WordRole::ContextRight,
        ]
        .iter()
        .map(|&r| model.config.word_param(r))
        .collect();
        names.push("enc.emb");
        names.dedup();
        for name in names {
            *model.params.get_mut(name)? = e.clone();
        }
    }
    if cfg.kmeans_init {
        let words = model.params.get(model.config.word_param(WordRole::HeadInput))?;
        let d = cfg.dim_embed;
        let points: Vec<Vec<f64>> = words.data().chunks(d).map(<[f64]>::to_vec).collect();
        match kmeans(&points, cfg.num_preterminals, rng) {
            Ok(centroids) => {
                let n = cfg.num_nonterminals;
                let u_sym = model.params.get_mut("u_sym")?;
                for (p, c) in centroids.iter().enumerate() {
                    u_sym.data_mut()[(n + p) * d..(n + p + 1) * d].copy_from_slice(c);
                }
            }
            Err(e) => log::warn!("skipping k-means preterminal initialisation: {e}"),
        }
    }
    Ok(model)
}

/// One row of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub curriculum_limit: usize,
    pub train_neg_elbo: f64,
    pub val_perplexity: f64,
    pub wall_seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch\tcurriculum_limit\ttrain_neg_elbo\tval_perplexity\twall_seconds";

impl EpochMetrics {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{:.10}\t{:.10}\t{:.3}",
            self.epoch, self.curriculum_limit, self.train_neg_elbo, self.val_perplexity, self.wall_seconds
        )
    }
}

/// Full metrics log text: a note on the perplexity estimate, the header and one line per epoch.
pub fn format_metrics_log(rows: &[EpochMetrics]) -> String {
    let mut s = String::from("# val_perplexity uses the point estimate z = mu(x), not a bound on the marginal\n");
    s.push_str(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_line());
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: LpcfgModel,
    pub best_epoch: usize,
    pub last: LpcfgModel,
    pub metrics: Vec<EpochMetrics>,
}

/// Callback after every epoch: the metrics row, the current model and
/// whether it is the best so far by validation perplexity.
pub type EpochObserver<'o> = dyn FnMut(&EpochMetrics, &LpcfgModel, bool) -> Result<()> + 'o;

fn batches(lengths: &[(usize, usize)], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    // sort by length with random tie order, cut into batches, shuffle batches
    let mut keyed: Vec<(usize, u64, usize)> = lengths.iter().map(|&(i, l)| (l, rng.random(), i)).collect();
    keyed.sort_unstable();
    let order: Vec<usize> = keyed.into_iter().map(|(_, _, i)| i).collect();
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    out.shuffle(rng);
    out
}

fn mean_neg_elbo(model: &LpcfgModel, sentences: &[&Vec<usize>], noise: &[Vec<Vec<f64>>]) -> Result<f64> {
    let vals: Vec<f64> = sentences
        .par_iter()
        .zip(noise.par_iter())
        .map(|(s, e)| neg_elbo(model, &model.params, s, e))
        .collect::<Result<_>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

fn par_perplexity(model: &LpcfgModel, sentences: &[Vec<usize>]) -> Result<f64> {
    let lls: Vec<f64> = sentences
        .par_iter()
        .map(|s| point_log_likelihood(model, s))
        .collect::<Result<_>>()?;
    let tokens: usize = sentences.iter().map(Vec::len).sum();
    Ok((-lls.iter().sum::<f64>() / tokens as f64).exp())
}

/// Runs `cfg.max_epochs` epochs after an epoch-0 evaluation of the initial model.
pub fn train(
    model: LpcfgModel,
    train_set: &[Vec<usize>],
    dev_set: &[Vec<usize>],
    cfg: &TrainConfig,
    observer: &mut EpochObserver<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::Config("training needs non-empty train and validation sets".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let max_len = train_set.iter().map(Vec::len).max().unwrap_or(0);
    let mut curriculum = CurriculumState::new(max_len, cfg.curriculum_rate, cfg.curriculum_additive)?;
    if !cfg.curriculum {
        curriculum.current_limit = max_len;
    }
    let mut model = model;
    let mut opt = Adam::new(&model.params, cfg.learning_rate, Some(cfg.clip_norm));
    let start = Instant::now();
    let n = model.config.dim_z;

    let admitted = |c: &CurriculumState| -> Vec<(usize, usize)> {
        train_set
            .iter()
            .enumerate()
            .filter(|(_, s)| c.admits(s.len()))
            .map(|(i, s)| (i, s.len()))
            .collect()
    };

    let mut metrics = Vec::new();
    let mut best: Option<(f64, usize, LpcfgModel)> = None;
    for epoch in 0..=cfg.max_epochs {
        let pool_set = admitted(&curriculum);
        if pool_set.is_empty() {
            return Err(Error::Schedule(format!(
                "no training sentence fits the length limit {}",
                curriculum.current_limit
            )));
        }
        let train_neg_elbo = if epoch == 0 {
            let sents: Vec<&Vec<usize>> = pool_set.iter().map(|&(i, _)| &train_set[i]).collect();
            let noise: Vec<Vec<Vec<f64>>> = sents.iter().map(|_| draw_noise(cfg.mc_samples, n, &mut rng)).collect();
            pool.install(|| mean_neg_elbo(&model, &sents, &noise))?
        } else {
            let mut total = 0.0;
            let mut count = 0usize;
            for batch in batches(&pool_set, cfg.batch_size, &mut rng) {
                let noise: Vec<Vec<Vec<f64>>> = batch.iter().map(|_| draw_noise(cfg.mc_samples, n, &mut rng)).collect();
                let results: Vec<(ElboTerms, ParamStore)> = pool.install(|| {
                    batch
                        .par_iter()
                        .zip(noise.par_iter())
                        .map(|(&i, e)| neg_elbo_grad(&model, &train_set[i], e))
                        .collect::<Result<_>>()
                })?;
                let mut grad = model.params.zeros_like();
                for (terms, g) in &results {
                    total += -terms.elbo();
                    grad.add_assign(g);
                }
                count += results.len();
                grad.scale(1.0 / results.len() as f64);
                opt.step(&mut model.params, &grad);
                if !model.params.all_finite() {
                    return Err(Error::Contract(format!("parameters diverged in epoch {epoch}")));
                }
            }
            total / count as f64
        };
        let val = pool.install(|| par_perplexity(&model, dev_set))?;
        let row = EpochMetrics {
            epoch,
            curriculum_limit: curriculum.current_limit,
            train_neg_elbo,
            val_perplexity: val,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        let improved = best.as_ref().is_none_or(|(v, _, _)| val < *v);
        if improved {
            best = Some((val, epoch, model.clone()));
        }
        log::info!("{}", row.to_line());
        observer(&row, &model, improved)?;
        metrics.push(row);
        if epoch > 0 {
            curriculum = curriculum_next(&curriculum);
        }
    }
    let (_, best_epoch, best_model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best: best_model,
        best_epoch,
        last: model,
        metrics,
    })
}
