use std::cell::RefCell;
use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::grammar::{Direction, GrammarSignature, LexNode, LexTree};
use crate::scoring::{LpcfgModel, RuleScoreTables};

/// Generative distributions of a grammar at a fixed compound vector.
pub trait RuleSource {
    fn signature(&self) -> GrammarSignature;
    /// `log p(S → A)` over non-terminals.
    fn root_log_probs(&self) -> Result<Vec<f64>>;
    /// `log p(X → w)` over the full vocabulary.
    fn emission_log_probs(&self, symbol: usize) -> Result<Vec<f64>>;
    /// `log p(B, C, dir | A, head word)` laid out `[dir, B, C]`.
    fn branch_log_probs(&self, parent: usize, word: usize) -> Result<Vec<f64>>;
}

fn branch_joint(t: &RuleScoreTables, pos: usize, parent: usize) -> Vec<f64> {
    let s = t.num_symbols();
    let mut out = Vec::with_capacity(2 * s * s);
    for dir in [Direction::Left, Direction::Right] {
        for b in 0..s {
            for c in 0..s {
                out.push(t.branch(pos, parent, b, c, dir));
            }
        }
    }
    out
}

/// Rule tables for every vocabulary item at once: position `w` of
/// `tables` holds the distributions conditioned on head word `w`.
#[derive(Debug, Clone)]
pub struct DenseGrammar {
    pub tables: RuleScoreTables,
}

impl DenseGrammar {
    pub fn new(tables: RuleScoreTables) -> Self {
        DenseGrammar { tables }
    }

    pub fn from_model(model: &LpcfgModel, z: &[f64]) -> Result<Self> {
        let words: Vec<usize> = (0..model.config.vocab_size).collect();
        Ok(DenseGrammar {
            tables: model.build_tables(z, &words)?,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.tables.len
    }

    /// Tables for a concrete sentence, gathered from the per-word columns.
    pub fn sentence_tables(&self, sentence: &[usize]) -> Result<RuleScoreTables> {
        let t = &self.tables;
        if let Some(&w) = sentence.iter().find(|&&w| w >= t.len) {
            return Err(Error::Contract(format!("word id {w} outside vocabulary of {}", t.len)));
        }
        let (n, s) = (t.num_nonterminals, t.num_symbols());
        let mut out = RuleScoreTables::empty(n, t.num_preterminals, sentence.len());
        out.root.copy_from_slice(&t.root);
        let hc_block = n * 2 * s;
        let ni_block = n * s * s;
        for (p, &w) in sentence.iter().enumerate() {
            for x in 0..s {
                out.emit[x * sentence.len() + p] = t.emit(x, w);
            }
            out.head_child[p * hc_block..(p + 1) * hc_block]
                .copy_from_slice(&t.head_child[w * hc_block..(w + 1) * hc_block]);
            for d in 0..2 {
                out.noninherit[d][p * ni_block..(p + 1) * ni_block]
                    .copy_from_slice(&t.noninherit[d][w * ni_block..(w + 1) * ni_block]);
            }
        }
        Ok(out)
    }
}

impl RuleSource for DenseGrammar {
    fn signature(&self) -> GrammarSignature {
        self.tables.signature(self.tables.len)
    }

    fn root_log_probs(&self) -> Result<Vec<f64>> {
        Ok(self.tables.root.clone())
    }

    fn emission_log_probs(&self, symbol: usize) -> Result<Vec<f64>> {
        let v = self.tables.len;
        Ok(self.tables.emit[symbol * v..(symbol + 1) * v].to_vec())
    }

    fn branch_log_probs(&self, parent: usize, word: usize) -> Result<Vec<f64>> {
        Ok(branch_joint(&self.tables, word, parent))
    }
}

/// Lazily evaluated grammar backed by a model; per-word tables are cached.
pub struct ModelGrammar<'m> {
    model: &'m LpcfgModel,
    z: Vec<f64>,
    root: Vec<f64>,
    emission: Tensor,
    cache: RefCell<HashMap<usize, RuleScoreTables>>,
}

impl<'m> ModelGrammar<'m> {
    pub fn new(model: &'m LpcfgModel, z: Vec<f64>) -> Result<Self> {
        let emission = model.emission_table(&z)?;
        let root = model.build_tables(&z, &[0])?.root;
        Ok(ModelGrammar {
            model,
            z,
            root,
            emission,
            cache: RefCell::new(HashMap::new()),
        })
    }
}

impl RuleSource for ModelGrammar<'_> {
    fn signature(&self) -> GrammarSignature {
        self.model.signature()
    }

    fn root_log_probs(&self) -> Result<Vec<f64>> {
        Ok(self.root.clone())
    }

    fn emission_log_probs(&self, symbol: usize) -> Result<Vec<f64>> {
        Ok(self.emission.row(symbol).to_vec())
    }

    fn branch_log_probs(&self, parent: usize, word: usize) -> Result<Vec<f64>> {
        let mut cache = self.cache.borrow_mut();
        if !cache.contains_key(&word) {
            cache.insert(word, self.model.build_tables(&self.z, &[word])?);
        }
        Ok(branch_joint(&cache[&word], 0, parent))
    }
}

/// A generated sentence and the tree that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub words: Vec<usize>,
    pub tree: LexTree,
}

fn draw<R: Rng + ?Sized>(log_probs: &[f64], rng: &mut R) -> Result<usize> {
    let m = log_probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::Contract("cannot sample from an empty distribution".into()));
    }
    let w: Vec<f64> = log_probs.iter().map(|v| (v - m).exp()).collect();
    let dist = WeightedIndex::new(&w).map_err(|e| Error::Contract(format!("bad distribution: {e}")))?;
    Ok(dist.sample(rng))
}

enum Gen {
    Leaf(usize, usize),
    Node(usize, Direction, Box<Gen>, Box<Gen>),
}

struct Sampler<'s, S: RuleSource + ?Sized> {
    source: &'s S,
    sig: GrammarSignature,
    max_depth: usize,
}

impl<S: RuleSource + ?Sized> Sampler<'_, S> {
    fn expand<R: Rng + ?Sized>(&self, symbol: usize, word: usize, depth: usize, rng: &mut R) -> Result<Gen> {
        if depth > self.max_depth {
            return Err(Error::DepthExceeded(self.max_depth));
        }
        let s = self.sig.num_symbols();
        let idx = draw(&self.source.branch_log_probs(symbol, word)?, rng)?;
        let (d, n1, n2) = (idx / (s * s), (idx / s) % s, idx % s);
        let (dir, dependent_symbol) = if d == 0 {
            (Direction::Left, n2)
        } else {
            (Direction::Right, n1)
        };
        let beta = draw(&self.source.emission_log_probs(dependent_symbol)?, rng)?;
        let (mut alpha, mut beta) = (word, beta);
        if dir == Direction::Right {
            std::mem::swap(&mut alpha, &mut beta);
        }
        let left = self.child(n1, alpha, depth, rng)?;
        let right = self.child(n2, beta, depth, rng)?;
        Ok(Gen::Node(symbol, dir, Box::new(left), Box::new(right)))
    }

    fn child<R: Rng + ?Sized>(&self, symbol: usize, word: usize, depth: usize, rng: &mut R) -> Result<Gen> {
        if self.sig.is_nonterminal(symbol) {
            self.expand(symbol, word, depth + 1, rng)
        } else {
            Ok(Gen::Leaf(symbol, word))
        }
    }
}

fn realize(g: Gen, words: &mut Vec<usize>) -> LexNode {
    match g {
        Gen::Leaf(x, w) => {
            words.push(w);
            LexNode::leaf(x, words.len() - 1)
        }
        Gen::Node(x, dir, l, r) => {
            let l = realize(*l, words);
            let r = realize(*r, words);
            LexNode::branch(x, dir, l, r)
        }
    }
}

/// Ancestral sampling in pre-order: draw the root symbol and its head word,
/// then recursively draw both children, the direction and the dependent's
/// word. Fails with [`Error::DepthExceeded`] when the recursion passes
/// `max_depth` branching levels.
pub fn sample_tree<S: RuleSource + ?Sized, R: Rng + ?Sized>(source: &S, max_depth: usize, rng: &mut R) -> Result<Sample> {
    let sig = source.signature();
    let root = draw(&source.root_log_probs()?, rng)?;
    let alpha = draw(&source.emission_log_probs(root)?, rng)?;
    let sampler = Sampler {
        source,
        sig,
        max_depth,
    };
    let g = sampler.expand(root, alpha, 1, rng)?;
    let mut words = Vec::new();
    let node = realize(g, &mut words);
    Ok(Sample {
        words,
        tree: LexTree::new(node),
    })
}

/// Retries [`sample_tree`] after depth-guard failures. Returns the sample and
/// the number of discarded attempts.
pub fn sample_with_retries<S: RuleSource + ?Sized, R: Rng + ?Sized>(
    source: &S,
    max_depth: usize,
    max_attempts: usize,
    rng: &mut R,
) -> Result<(Sample, usize)> {
    for attempt in 0..max_attempts {
        match sample_tree(source, max_depth, rng) {
            Ok(s) => return Ok((s, attempt)),
            Err(Error::DepthExceeded(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::DepthExceeded(max_depth))
}
