//! Ingestion of tokenized text, gold trees and gold dependencies.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use log::{info, warn};
use rand::Rng;

use crate::diff::{load_embeddings, Tensor};
use crate::error::{Error, Result};
use crate::grammar::{parse_dependency_file, parse_tree_file, BracketTree, DependencyArcs, Vocab, MIN_SENTENCE_LEN};

/// ASCII punctuation tokens plus the symbolic tokens of Penn Treebank tokenization.
pub const DEFAULT_PUNCTUATION: &[&str] = &[
    ".", ",", ":", ";", "?", "!", "'", "\"", "`", "``", "''", "(", ")", "[", "]", "{", "}", "-", "--", "...", "/",
    "\\", "#", "$", "%", "&", "*", "@", "_", "~", "|", "<", ">", "=", "+", "^", "-LRB-", "-RRB-", "-LCB-", "-RCB-",
    "-LSB-", "-RSB-", "-NONE-",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

/// How token ids are assigned.
#[derive(Debug, Clone)]
pub enum VocabPolicy {
    /// Build a vocabulary from this corpus; only valid for the train split.
    Build { min_count: usize },
    /// Map through an existing vocabulary; unseen tokens become `<unk>`.
    Fixed(Vocab),
}

/// A set of tokens treated as punctuation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PunctuationSet(BTreeSet<String>);

impl Default for PunctuationSet {
    fn default() -> Self {
        PunctuationSet(DEFAULT_PUNCTUATION.iter().map(|s| s.to_string()).collect())
    }
}

impl PunctuationSet {
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        PunctuationSet(tokens.into_iter().map(Into::into).collect())
    }

    /// One token per line. Blank lines and lines starting with `# ` are skipped.
    pub fn parse(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && (*l == "#" || !l.starts_with("# "))),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Non-blank lines of a text file, whitespace-tokenized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawText {
    pub lines: Vec<Vec<String>>,
    /// 0-based line index of each entry in the source file.
    pub line_numbers: Vec<usize>,
}

impl RawText {
    pub fn from_lines(lines: Vec<Vec<String>>) -> Self {
        let line_numbers = (0..lines.len()).collect();
        RawText { lines, line_numbers }
    }
}

/// Splits `text` into whitespace-tokenized sentences. Blank lines are
/// skipped, matching the gold file formats; an empty file is an error.
pub fn parse_text(text: &str, path: &str) -> Result<RawText> {
    let mut raw = RawText {
        lines: Vec::new(),
        line_numbers: Vec::new(),
    };
    for (i, line) in text.lines().enumerate() {
        if let Some(c) = line.chars().find(|c| c.is_control() && !c.is_whitespace()) {
            return Err(Error::Parse {
                path: path.to_string(),
                line: i + 1,
                msg: format!("control character {c:?} in sentence"),
            });
        }
        let toks: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if !toks.is_empty() {
            raw.lines.push(toks);
            raw.line_numbers.push(i);
        }
    }
    if raw.lines.is_empty() {
        return Err(Error::Format(format!("{path}: no sentences")));
    }
    Ok(raw)
}

pub fn read_text(path: &Path) -> Result<RawText> {
    parse_text(&read_file(path)?, &path.display().to_string())
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Gold annotations, one entry per sentence, in file order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GoldAnnotations {
    pub trees: Option<Vec<BracketTree>>,
    pub deps: Option<Vec<DependencyArcs>>,
    /// Tokens of the dependency file, used to check alignment.
    pub dep_tokens: Option<Vec<Vec<String>>>,
}

impl GoldAnnotations {
    pub fn len(&self) -> Option<usize> {
        self.trees.as_ref().map(Vec::len).or(self.deps.as_ref().map(Vec::len))
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_none() && self.deps.is_none()
    }

    /// Words of sentence `k`, from the trees when present.
    pub fn words(&self, k: usize) -> Option<Vec<String>> {
        if let Some(t) = &self.trees {
            return Some(t[k].words().into_iter().map(str::to_string).collect());
        }
        self.dep_tokens.as_ref().map(|d| d[k].clone())
    }
}

/// Parses gold trees and/or dependencies and checks they describe the same sentences.
pub fn parse_gold(trees: Option<(&str, &str)>, deps: Option<(&str, &str)>) -> Result<GoldAnnotations> {
    let trees = trees.map(|(text, path)| parse_tree_file(text, path)).transpose()?;
    let deps = deps.map(|(text, path)| parse_dependency_file(text, path)).transpose()?;
    if let (Some(t), Some(d)) = (&trees, &deps) {
        if t.len() != d.len() {
            return Err(Error::Alignment(format!(
                "{} gold trees but {} dependency sentences",
                t.len(),
                d.len()
            )));
        }
        for (k, (t, d)) in t.iter().zip(d).enumerate() {
            if t.words() != d.tokens {
                return Err(Error::Alignment(format!(
                    "sentence {}: gold tree and dependency tokens differ",
                    k + 1
                )));
            }
        }
    }
    if let Some(d) = &deps {
        for (k, s) in d.iter().enumerate() {
            if !s.arcs.is_projective() {
                warn!("gold dependency sentence {} is non-projective; kept and flagged", k + 1);
            }
        }
    }
    let (deps, dep_tokens) = match deps {
        Some(d) => {
            let (tok, arcs): (Vec<_>, Vec<_>) = d.into_iter().map(|s| (s.tokens, s.arcs)).unzip();
            (Some(arcs), Some(tok))
        }
        None => (None, None),
    };
    Ok(GoldAnnotations { trees, deps, dep_tokens })
}

/// Reads gold files from disk.
pub fn load_gold(trees: Option<&Path>, deps: Option<&Path>) -> Result<GoldAnnotations> {
    let t = trees.map(|p| Ok::<_, Error>((read_file(p)?, p.display().to_string()))).transpose()?;
    let d = deps.map(|p| Ok::<_, Error>((read_file(p)?, p.display().to_string()))).transpose()?;
    parse_gold(
        t.as_ref().map(|(a, b)| (a.as_str(), b.as_str())),
        d.as_ref().map(|(a, b)| (a.as_str(), b.as_str())),
    )
}

/// Sentences removed during ingestion, by 0-based source line.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DropReport {
    pub read: usize,
    pub too_short: Vec<usize>,
}

impl DropReport {
    pub fn kept(&self) -> usize {
        self.read - self.too_short.len()
    }
}

/// An ingested split. All per-sentence vectors are parallel.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub split: Split,
    pub tokens: Vec<Vec<String>>,
    /// Token ids under the vocabulary the corpus was encoded with.
    pub sentences: Vec<Vec<usize>>,
    /// 0-based line of each sentence in the source file.
    pub origin: Vec<usize>,
    pub gold_trees: Option<Vec<BracketTree>>,
    pub gold_deps: Option<Vec<DependencyArcs>>,
    /// Per sentence, whether the gold dependencies cross.
    pub nonprojective: Vec<bool>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.tokens.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Checks lengths and the 1:1 alignment of gold annotations.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.sentences.len() != n || self.origin.len() != n {
            return Err(Error::Contract("corpus vectors differ in length".into()));
        }
        for (k, (t, s)) in self.tokens.iter().zip(&self.sentences).enumerate() {
            if t.len() < MIN_SENTENCE_LEN || t.len() != s.len() {
                return Err(Error::Contract(format!("sentence {k} has {} tokens", t.len())));
            }
        }
        if let Some(trees) = &self.gold_trees {
            if trees.len() != n {
                return Err(Error::Alignment(format!("{} sentences, {} gold trees", n, trees.len())));
            }
            for (k, (t, toks)) in trees.iter().zip(&self.tokens).enumerate() {
                if t.words() != *toks {
                    return Err(Error::Alignment(format!("sentence {k}: gold tree does not match the text")));
                }
            }
        }
        if let Some(deps) = &self.gold_deps {
            if deps.len() != n || self.nonprojective.len() != n {
                return Err(Error::Alignment(format!("{} sentences, {} gold dependency trees", n, deps.len())));
            }
            for (k, (d, toks)) in deps.iter().zip(&self.tokens).enumerate() {
                if d.len() != toks.len() {
                    return Err(Error::Alignment(format!(
                        "sentence {k}: {} tokens but {} dependency heads",
                        toks.len(),
                        d.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Builds a vocabulary from this corpus. Only a train split may define one.
    pub fn build_vocab(&self, min_count: usize) -> Result<Vocab> {
        if self.split != Split::Train {
            return Err(Error::Config(format!("vocabulary must come from the train split, not {}", self.split)));
        }
        Ok(Vocab::from_counts(self.tokens.iter().flatten().map(String::as_str), min_count))
    }

    /// Re-encodes every sentence under `vocab`.
    pub fn encode(&mut self, vocab: &Vocab) {
        self.sentences = self.tokens.iter().map(|t| vocab.encode(t)).collect();
    }

    fn retain(&mut self, keep: &[bool]) {
        fn filter<T>(v: &mut Vec<T>, keep: &[bool]) {
            let mut it = keep.iter();
            v.retain(|_| *it.next().expect("parallel"));
        }
        filter(&mut self.tokens, keep);
        filter(&mut self.sentences, keep);
        filter(&mut self.origin, keep);
        if let Some(t) = &mut self.gold_trees {
            filter(t, keep);
        }
        if let Some(d) = &mut self.gold_deps {
            filter(d, keep);
            filter(&mut self.nonprojective, keep);
        }
    }

    fn drop_short(&mut self) -> Vec<usize> {
        let keep: Vec<bool> = self.tokens.iter().map(|t| t.len() >= MIN_SENTENCE_LEN).collect();
        let dropped = self.origin.iter().zip(&keep).filter(|(_, k)| !**k).map(|(o, _)| *o).collect();
        self.retain(&keep);
        dropped
    }
}

/// Options for [`build_corpus`].
#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub split: Split,
    pub vocab: VocabPolicy,
    pub punctuation: Option<PunctuationSet>,
}

/// Result of ingestion: the corpus, the vocabulary it is encoded with, and
/// what was dropped.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub corpus: Corpus,
    pub vocab: Vocab,
    pub report: DropReport,
}

/// Aligns gold annotations with text, removes punctuation when asked, drops
/// sentences shorter than two tokens and encodes the rest. A train split
/// with [`VocabPolicy::Build`] defines the vocabulary from what survives.
pub fn build_corpus(raw: RawText, gold: Option<GoldAnnotations>, opts: &IngestOptions) -> Result<Ingested> {
    let n = raw.lines.len();
    let gold = gold.filter(|g| !g.is_empty());
    if let Some(g) = &gold {
        let m = g.len().expect("non-empty gold");
        if m != n {
            return Err(Error::Alignment(format!("{n} text lines but {m} gold sentences")));
        }
        for (k, line) in raw.lines.iter().enumerate() {
            if g.words(k).as_ref() != Some(line) {
                return Err(Error::Alignment(format!(
                    "line {}: text has {} tokens, gold {}",
                    k + 1,
                    line.len(),
                    g.words(k).map_or(0, |w| w.len())
                )));
            }
        }
    }
    let (gold_trees, gold_deps) = match gold {
        Some(g) => (g.trees, g.deps),
        None => (None, None),
    };
    let nonprojective = gold_deps
        .as_ref()
        .map(|d| d.iter().map(|a| !a.is_projective()).collect())
        .unwrap_or_default();
    let mut corpus = Corpus {
        split: opts.split,
        sentences: vec![Vec::new(); n],
        tokens: raw.lines,
        origin: raw.line_numbers,
        gold_trees,
        gold_deps,
        nonprojective,
    };
    let mut report = DropReport {
        read: n,
        too_short: Vec::new(),
    };
    if let Some(p) = &opts.punctuation {
        strip_punctuation(&mut corpus, p)?;
    }
    report.too_short = corpus.drop_short();
    if !report.too_short.is_empty() {
        info!(
            "{}: dropped {} of {} sentences shorter than {MIN_SENTENCE_LEN} tokens",
            opts.split,
            report.too_short.len(),
            n
        );
    }
    if corpus.is_empty() {
        return Err(Error::Format(format!("{}: no sentence of length ≥ {MIN_SENTENCE_LEN}", opts.split)));
    }
    let vocab = match &opts.vocab {
        VocabPolicy::Build { min_count } => corpus.build_vocab(*min_count)?,
        VocabPolicy::Fixed(v) => v.clone(),
    };
    corpus.encode(&vocab);
    corpus.validate()?;
    Ok(Ingested { corpus, vocab, report })
}

/// Reads a text file and ingests it without gold annotations or punctuation filtering.
pub fn load_text(path: &Path, split: Split, vocab: VocabPolicy) -> Result<Ingested> {
    build_corpus(
        read_text(path)?,
        None,
        &IngestOptions {
            split,
            vocab,
            punctuation: None,
        },
    )
}

/// Removes punctuation tokens from `corpus`, re-indexing gold spans and arcs,
/// and drops sentences left with fewer than two tokens. Returns the filtered
/// corpus and the source lines that were dropped.
///
/// Dependents of a removed token attach to its nearest surviving ancestor.
/// Surviving tokens with no surviving ancestor were governed through removed
/// tokens from ROOT; the leftmost becomes the new root and the others attach to it.
pub fn filter_punctuation(corpus: &Corpus, punct: &PunctuationSet) -> Result<(Corpus, Vec<usize>)> {
    let mut out = corpus.clone();
    strip_punctuation(&mut out, punct)?;
    let dropped = out.drop_short();
    if !dropped.is_empty() {
        info!("dropped {} sentences left shorter than {MIN_SENTENCE_LEN} tokens after punctuation removal", dropped.len());
    }
    Ok((out, dropped))
}

fn strip_punctuation(corpus: &mut Corpus, punct: &PunctuationSet) -> Result<()> {
    for k in 0..corpus.len() {
        let keep: Vec<bool> = corpus.tokens[k].iter().map(|t| !punct.contains(t)).collect();
        if keep.iter().all(|&b| b) {
            continue;
        }
        let mut it = keep.iter();
        corpus.tokens[k].retain(|_| *it.next().expect("parallel"));
        if corpus.sentences[k].len() == keep.len() {
            let mut it = keep.iter();
            corpus.sentences[k].retain(|_| *it.next().expect("parallel"));
        }
        if let Some(trees) = &mut corpus.gold_trees {
            trees[k] = prune_tree(&trees[k], &keep).unwrap_or_else(|| BracketTree::node(trees[k].label.clone(), Vec::new()));
        }
        if let Some(deps) = &mut corpus.gold_deps {
            if let Some(arcs) = reattach(&deps[k], &keep)? {
                corpus.nonprojective[k] = !arcs.is_projective();
                deps[k] = arcs;
            } else {
                // everything removed; the sentence is dropped as too short
                deps[k] = DependencyArcs::new(vec![None]).expect("single root");
            }
        }
    }
    Ok(())
}

/// New 0-based positions of kept tokens.
fn new_positions(keep: &[bool]) -> Vec<Option<usize>> {
    let mut next = 0;
    keep.iter()
        .map(|&k| {
            k.then(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

/// Removes the preterminals at dropped positions and any constituent left
/// empty; head annotations follow their token or vanish with it.
pub fn prune_tree(tree: &BracketTree, keep: &[bool]) -> Option<BracketTree> {
    let pos = new_positions(keep);
    let mut offset = 0;
    prune_node(tree, keep, &pos, &mut offset)
}

fn prune_node(t: &BracketTree, keep: &[bool], pos: &[Option<usize>], offset: &mut usize) -> Option<BracketTree> {
    if t.word.is_some() {
        let i = *offset;
        *offset += 1;
        return keep[i].then(|| t.clone());
    }
    let children: Vec<BracketTree> = t.children.iter().filter_map(|c| prune_node(c, keep, pos, offset)).collect();
    if children.is_empty() {
        return None;
    }
    Some(BracketTree {
        label: t.label.clone(),
        head: t.head.and_then(|h| pos.get(h).copied().flatten()),
        word: None,
        children,
    })
}

/// Re-attaches arcs after removing the tokens where `keep` is false.
/// Returns `None` when no token survives.
pub fn reattach(arcs: &DependencyArcs, keep: &[bool]) -> Result<Option<DependencyArcs>> {
    if arcs.len() != keep.len() {
        return Err(Error::Alignment(format!(
            "{} dependency heads for {} tokens",
            arcs.len(),
            keep.len()
        )));
    }
    let pos = new_positions(keep);
    let n = pos.iter().flatten().count();
    if n == 0 {
        return Ok(None);
    }
    let mut heads: Vec<Option<usize>> = Vec::with_capacity(n);
    for i in (0..keep.len()).filter(|&i| keep[i]) {
        let mut h = arcs.head_of(i);
        while let Some(j) = h {
            if keep[j] {
                break;
            }
            h = arcs.head_of(j);
        }
        heads.push(h.map(|j| pos[j].expect("kept")));
    }
    let root = heads.iter().position(Option::is_none).expect("the topmost kept token has no kept ancestor");
    for (i, h) in heads.iter_mut().enumerate() {
        if h.is_none() && i != root {
            *h = Some(root);
        }
    }
    DependencyArcs::new(heads).map(Some)
}

/// Reads pretrained vectors for `vocab`; returns the matrix and how many tokens were found.
pub fn load_embedding_file<R: Rng + ?Sized>(path: &Path, vocab: &Vocab, dim: usize, rng: &mut R) -> Result<(Tensor, usize)> {
    let text = read_file(path)?;
    let (m, found) = load_embeddings(&text, &path.display().to_string(), vocab, dim, rng)?;
    info!("embeddings: {found} of {} vocabulary entries found in {}", vocab.len(), path.display());
    Ok((m, found))
}
