use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nlpcfg::chart::{decode, oracle_compare, sample_with_retries, ModelGrammar, MAX_ENUMERATION_LEN};
use nlpcfg::corpus::{
    build_corpus, load_embedding_file, load_gold, read_text, Corpus, GoldAnnotations, IngestOptions, Ingested, RawText,
    Split, VocabPolicy,
};
use nlpcfg::diff::{gradcheck, write_atomic, Checkpoint};
use nlpcfg::eval::evaluate;
use nlpcfg::grammar::{
    parse_tree_file, write_dependency_file, write_lex_tree, BracketTree, GrammarSignature, LexTree, Vocab,
};
use nlpcfg::scoring::{LpcfgModel, ModelConfig};
use nlpcfg::train::{draw_noise, format_metrics_log, init_model, neg_elbo, neg_elbo_grad, train as fit};
use nlpcfg::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{Init, RunConfig};

fn require<'a>(v: &'a Option<PathBuf>, flag: &str, cmd: &str) -> Result<&'a Path> {
    v.as_deref()
        .ok_or_else(|| Error::Config(format!("{cmd} needs --{flag}")))
}

fn ingest(cfg: &RunConfig, raw: RawText, gold: Option<GoldAnnotations>, split: Split, vocab: VocabPolicy) -> Result<Ingested> {
    let r = build_corpus(
        raw,
        gold,
        &IngestOptions {
            split,
            vocab,
            punctuation: cfg.punctuation.clone(),
        },
    )?;
    if !r.report.too_short.is_empty() {
        warn!(
            "{split}: dropped {} of {} sentences shorter than two tokens",
            r.report.too_short.len(),
            r.report.read
        );
    }
    Ok(r)
}

fn load_model(path: &Path) -> Result<(LpcfgModel, Vocab)> {
    LpcfgModel::from_checkpoint(&Checkpoint::load(path)?)
}

fn pool(cfg: &RunConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.train.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Writes every `(path, bytes)` atomically, removing those already written if a later one fails.
fn write_all(files: &[(PathBuf, Vec<u8>)]) -> Result<()> {
    let mut done: Vec<&Path> = Vec::new();
    for (path, bytes) in files {
        if let Err(e) = write_atomic(path, bytes) {
            for p in done {
                let _ = std::fs::remove_file(p);
            }
            return Err(e);
        }
        done.push(path);
    }
    Ok(())
}

fn out_dir(cfg: &RunConfig, cmd: &str) -> Result<PathBuf> {
    let dir = require(&cfg.out, "out", cmd)?.to_path_buf();
    if dir.is_file() {
        return Err(Error::Config(format!("{} is a file; {cmd} writes a directory", dir.display())));
    }
    Ok(dir)
}

fn split_holdout(raw: RawText, fraction: f64, seed: u64) -> Result<(RawText, RawText)> {
    let n = raw.lines.len();
    if n < 2 {
        return Err(Error::Config("holding out a validation share needs at least two sentences; pass --dev".into()));
    }
    let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15));
    let mut is_dev = vec![false; n];
    order[..k].iter().for_each(|&i| is_dev[i] = true);
    let (mut train, mut dev) = (
        RawText {
            lines: Vec::new(),
            line_numbers: Vec::new(),
        },
        RawText {
            lines: Vec::new(),
            line_numbers: Vec::new(),
        },
    );
    for ((line, no), d) in raw.lines.into_iter().zip(raw.line_numbers).zip(is_dev) {
        let part = if d { &mut dev } else { &mut train };
        part.lines.push(line);
        part.line_numbers.push(no);
    }
    Ok((train, dev))
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let corpus = require(&cfg.corpus, "corpus", "train")?;
    let dir = out_dir(cfg, "train")?;
    let raw = read_text(corpus)?;
    let (train_raw, dev_raw) = match &cfg.dev {
        Some(p) => (raw, read_text(p)?),
        None => split_holdout(raw, cfg.dev_fraction, cfg.train.seed)?,
    };
    let tr = ingest(cfg, train_raw, None, Split::Train, VocabPolicy::Build {
        min_count: cfg.train.min_count,
    })?;
    let dev = ingest(cfg, dev_raw, None, Split::Dev, VocabPolicy::Fixed(tr.vocab.clone()))?;
    info!(
        "train: {} sentences, dev: {} sentences, vocabulary {}",
        tr.corpus.len(),
        dev.corpus.len(),
        tr.vocab.len()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let embeddings = match (cfg.init, &cfg.embeddings) {
        (Init::Pretrained, Some(p)) => Some(load_embedding_file(p, &tr.vocab, cfg.train.dim_embed, &mut rng)?.0),
        (Init::Pretrained, None) => return Err(Error::Config("--init pretrained needs --embeddings".into())),
        (Init::Random, Some(_)) => {
            warn!("--embeddings ignored with --init random");
            None
        }
        (Init::Random, None) => None,
    };
    let model = init_model(&cfg.train, tr.vocab.len(), embeddings.as_ref(), &mut rng)?;
    let mut observer = |m: &nlpcfg::train::EpochMetrics, _: &LpcfgModel, best: bool| -> Result<()> {
        info!(
            "epoch {} limit {} train -ELBO {:.4} val ppl {:.4}{}",
            m.epoch,
            m.curriculum_limit,
            m.train_neg_elbo,
            m.val_perplexity,
            if best { " (best)" } else { "" }
        );
        Ok(())
    };
    let outcome = fit(model, &tr.corpus.sentences, &dev.corpus.sentences, &cfg.train, &mut observer)?;
    let extra = BTreeMap::from([
        ("best_epoch".to_string(), outcome.best_epoch.to_string()),
        ("seed".to_string(), cfg.train.seed.to_string()),
    ]);
    let ck = outcome.best.to_checkpoint(&tr.vocab, &extra)?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
    write_all(&[
        (dir.join("model.ckpt"), ck.to_bytes()),
        (dir.join("metrics.tsv"), format_metrics_log(&outcome.metrics).into_bytes()),
    ])?;
    println!(
        "best epoch {} of {}; wrote {}",
        outcome.best_epoch,
        cfg.train.max_epochs,
        dir.display()
    );
    Ok(())
}

fn decode_all(cfg: &RunConfig, model: &LpcfgModel, corpus: &Corpus) -> Result<Vec<LexTree>> {
    pool(cfg)?.install(|| {
        corpus
            .sentences
            .par_iter()
            .map(|s| decode(model, s).map(|(t, _)| t))
            .collect()
    })
}

pub fn parse(cfg: &RunConfig) -> Result<()> {
    let ckpt = require(&cfg.checkpoint, "checkpoint", "parse")?;
    let corpus = require(&cfg.corpus, "corpus", "parse")?;
    let dir = out_dir(cfg, "parse")?;
    let (model, vocab) = load_model(ckpt)?;
    let data = ingest(cfg, read_text(corpus)?, None, Split::Test, VocabPolicy::Fixed(vocab))?;
    let trees = decode_all(cfg, &model, &data.corpus)?;
    let sig = model.signature();
    let mut tree_text = String::new();
    let mut deps = Vec::with_capacity(trees.len());
    for (t, words) in trees.iter().zip(&data.corpus.tokens) {
        tree_text.push_str(&write_lex_tree(t, &sig, words)?);
        tree_text.push('\n');
        deps.push((words.clone(), t.extract_dependencies()?));
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
    write_all(&[
        (dir.join("trees.txt"), tree_text.into_bytes()),
        (dir.join("deps.txt"), write_dependency_file(&deps).into_bytes()),
    ])?;
    println!("parsed {} sentences; wrote {}", trees.len(), dir.display());
    Ok(())
}

/// Smallest signature naming every `NT-k` and `T-k` label in `trees`.
fn signature_for(trees: &[BracketTree]) -> Result<GrammarSignature> {
    fn walk(t: &BracketTree, n: &mut usize, p: &mut usize) -> Result<()> {
        let bad = || Error::Format(format!("predicted label {:?} is not NT-k or T-k", t.label));
        if let Some(k) = t.label.strip_prefix("NT-") {
            *n = (*n).max(k.parse::<usize>().map_err(|_| bad())? + 1);
        } else if let Some(k) = t.label.strip_prefix("T-") {
            *p = (*p).max(k.parse::<usize>().map_err(|_| bad())? + 1);
        } else {
            return Err(bad());
        }
        t.children.iter().try_for_each(|c| walk(c, n, p))
    }
    let (mut n, mut p) = (1, 1);
    for t in trees {
        walk(t, &mut n, &mut p)?;
    }
    GrammarSignature::new(n, p, 1)
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    if cfg.gold_trees.is_none() && cfg.gold_deps.is_none() {
        return Err(Error::Config("eval needs --gold-trees and/or --gold-deps".into()));
    }
    let gold = load_gold(cfg.gold_trees.as_deref(), cfg.gold_deps.as_deref())?;
    let n = gold.len().unwrap_or(0);
    let gold_raw = || RawText::from_lines((0..n).map(|k| gold.words(k).unwrap_or_default()).collect());
    let (preds, corpus) = match (&cfg.predicted, &cfg.checkpoint) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
            let brackets = parse_tree_file(&text, &p.display().to_string())?;
            let sig = signature_for(&brackets)?;
            let preds: Vec<LexTree> = brackets.iter().map(|b| b.to_lex_tree(&sig)).collect::<Result<_>>()?;
            let data = ingest(cfg, gold_raw(), Some(gold.clone()), Split::Test, VocabPolicy::Fixed(Vocab::synthetic(1)))?;
            (preds, data.corpus)
        }
        (None, Some(ck)) => {
            let (model, vocab) = load_model(ck)?;
            let raw = match &cfg.corpus {
                Some(c) => read_text(c)?,
                None => gold_raw(),
            };
            let data = ingest(cfg, raw, Some(gold.clone()), Split::Test, VocabPolicy::Fixed(vocab))?;
            (decode_all(cfg, &model, &data.corpus)?, data.corpus)
        }
        (None, None) => return Err(Error::Config("eval needs --predicted or --checkpoint".into())),
    };
    let report = evaluate(&preds, corpus.gold_trees.as_deref(), corpus.gold_deps.as_deref(), cfg.averaging)?;
    print!("{}", report.to_text());
    if let Some(out) = &cfg.out {
        write_atomic(out, report.to_json().as_bytes())?;
    }
    Ok(())
}

pub fn sample(cfg: &RunConfig) -> Result<()> {
    let ckpt = require(&cfg.checkpoint, "checkpoint", "sample")?;
    let (model, vocab) = load_model(ckpt)?;
    let sig = model.signature();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut out = String::new();
    let mut rejected = 0;
    for _ in 0..cfg.num_samples {
        let z = draw_noise(1, model.config.dim_z, &mut rng).remove(0);
        let grammar = ModelGrammar::new(&model, z)?;
        let (s, r) = sample_with_retries(&grammar, cfg.max_depth, cfg.max_attempts, &mut rng)?;
        rejected += r;
        let words: Vec<&str> = s.words.iter().map(|&w| vocab.token(w)).collect();
        out.push_str(&write_lex_tree(&s.tree, &sig, &words)?);
        out.push('\n');
    }
    if rejected > 0 {
        info!("{rejected} draws rejected by the length or depth guard");
    }
    match &cfg.out {
        Some(p) => write_atomic(p, out.as_bytes())?,
        None => print!("{out}"),
    }
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let model = match &cfg.checkpoint {
        Some(p) => load_model(p)?.0,
        None => init_model(&cfg.train, cfg.vocab_size, None, &mut rng)?,
    };
    if cfg.gradcheck_len < 2 {
        return Err(Error::Config("gradcheck_len must be at least 2".into()));
    }
    let sentence: Vec<usize> = (0..cfg.gradcheck_len)
        .map(|_| rng.random_range(0..model.config.vocab_size))
        .collect();
    let noise = draw_noise(cfg.train.mc_samples, model.config.dim_z, &mut rng);
    let (_, grads) = neg_elbo_grad(&model, &sentence, &noise)?;
    let reports = gradcheck::check_groups(
        &model.params,
        &grads,
        |p| neg_elbo(&model, p, &sentence, &noise),
        cfg.gradcheck_coords,
        cfg.gradcheck_step,
        &mut rng,
    )?;
    let mut failed = 0;
    for r in &reports {
        let ok = r.passed(cfg.gradcheck_tolerance);
        failed += usize::from(!ok);
        println!(
            "{:<24} coords {:>4}  max rel err {:.3e}  {}",
            r.name,
            r.checks.len(),
            r.max_rel_err(),
            if ok { "ok" } else { "FAIL" }
        );
    }
    if failed > 0 {
        return Err(Error::Contract(format!(
            "gradcheck failed: {failed} of {} groups exceed relative error {:e}",
            reports.len(),
            cfg.gradcheck_tolerance
        )));
    }
    println!("gradcheck passed: {} groups", reports.len());
    Ok(())
}

pub fn oracle(cfg: &RunConfig) -> Result<()> {
    const LOG_Z_TOL: f64 = 1e-6;
    const BEST_TOL: f64 = 1e-9;
    if !(2..=MAX_ENUMERATION_LEN).contains(&cfg.oracle_max_len) {
        return Err(Error::Config(format!("oracle_max_len must lie in 2..={MAX_ENUMERATION_LEN}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let loaded = cfg.checkpoint.as_deref().map(load_model).transpose()?.map(|(m, _)| m);
    let (mut worst_z, mut worst_best, mut checked) = (0.0f64, 0.0f64, 0);
    for _ in 0..cfg.oracle_draws {
        let model = match &loaded {
            Some(m) => m.clone(),
            None => LpcfgModel::init(
                ModelConfig {
                    num_nonterminals: cfg.oracle_nonterminals,
                    num_preterminals: cfg.oracle_preterminals,
                    vocab_size: 6,
                    dim_z: 3,
                    dim_embed: 4,
                    mlp_layers: [1, 1, 1],
                    encoder_hidden: 4,
                    mode: cfg.train.factorization,
                    tie_word_embeddings: false,
                },
                &mut rng,
            )?,
        };
        let z = draw_noise(1, model.config.dim_z, &mut rng).remove(0);
        for len in 2..=cfg.oracle_max_len {
            let sentence: Vec<usize> = (0..len).map(|_| rng.random_range(0..model.config.vocab_size)).collect();
            let c = oracle_compare(&model.build_tables(&z, &sentence)?)?;
            worst_z = worst_z.max(c.log_z_error());
            worst_best = worst_best.max(c.best_error());
            checked += 1;
        }
    }
    println!("oracle: {checked} table sets; max |log Z error| {worst_z:.3e}; max |Viterbi error| {worst_best:.3e}");
    if !(worst_z <= LOG_Z_TOL && worst_best <= BEST_TOL) {
        return Err(Error::Contract(format!(
            "oracle failed: log-marginal error {worst_z:.3e} (limit {LOG_Z_TOL:e}), Viterbi error {worst_best:.3e} (limit {BEST_TOL:e})"
        )));
    }
    println!("oracle passed");
    Ok(())
}
