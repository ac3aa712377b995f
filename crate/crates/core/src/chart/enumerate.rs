use crate::error::{Error, Result};
use crate::grammar::{Direction, GrammarSignature, LexNode, LexTree, MIN_SENTENCE_LEN};
use crate::scoring::RuleScoreTables;

/// Longest sentence [`enumerate_trees`] accepts.
pub const MAX_ENUMERATION_LEN: usize = 7;

fn subtrees(i: usize, j: usize, h: usize, sig: &GrammarSignature) -> Vec<LexNode> {
    if i == j {
        return (sig.num_nonterminals..sig.num_symbols()).map(|x| LexNode::leaf(x, i)).collect();
    }
    let mut out = Vec::new();
    for k in i..j {
        let (heads_left, heads_right, dir): (Vec<usize>, Vec<usize>, _) = if h <= k {
            (vec![h], (k + 1..=j).collect(), Direction::Left)
        } else {
            ((i..=k).collect(), vec![h], Direction::Right)
        };
        let lefts: Vec<LexNode> = heads_left.iter().flat_map(|&hl| subtrees(i, k, hl, sig)).collect();
        let rights: Vec<LexNode> = heads_right.iter().flat_map(|&hr| subtrees(k + 1, j, hr, sig)).collect();
        for a in 0..sig.num_nonterminals {
            for l in &lefts {
                for r in &rights {
                    out.push(LexNode::branch(a, dir, l.clone(), r.clone()));
                }
            }
        }
    }
    out
}

/// Every tree over `len` tokens: each bracketing, head assignment and
/// labelling in which leaves are preterminals and branching nodes are
/// non-terminals, exactly once.
pub fn enumerate_trees(len: usize, sig: &GrammarSignature) -> Result<Vec<LexTree>> {
    if !(MIN_SENTENCE_LEN..=MAX_ENUMERATION_LEN).contains(&len) {
        return Err(Error::Length {
            len,
            min: MIN_SENTENCE_LEN,
            max: MAX_ENUMERATION_LEN,
        });
    }
    Ok((0..len)
        .flat_map(|h| subtrees(0, len - 1, h, sig))
        .map(LexTree::new)
        .collect())
}

/// Sum of rule scores over all rules of `tree`.
pub fn tree_log_score(t: &RuleScoreTables, tree: &LexTree) -> Result<f64> {
    if tree.len() != t.len {
        return Err(Error::Length {
            len: tree.len(),
            min: t.len,
            max: t.len,
        });
    }
    let sig = t.signature(1);
    let mut total = 0.0;
    for r in tree.rules(&sig)? {
        total += t.rule_score(&r)?;
    }
    Ok(total)
}

/// Chart quantities next to their brute-force counterparts for one table set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleComparison {
    pub chart_log_z: f64,
    pub enum_log_z: f64,
    pub chart_best: f64,
    pub enum_best: f64,
    pub trees: usize,
}

impl OracleComparison {
    pub fn log_z_error(&self) -> f64 {
        (self.chart_log_z - self.enum_log_z).abs()
    }

    pub fn best_error(&self) -> f64 {
        (self.chart_best - self.enum_best).abs()
    }
}

/// Runs inside and Viterbi on `t` and recomputes both by enumerating every tree.
pub fn oracle_compare(t: &RuleScoreTables) -> Result<OracleComparison> {
    let trees = enumerate_trees(t.len, &t.signature(1))?;
    let scores: Vec<f64> = trees.iter().map(|tr| tree_log_score(t, tr)).collect::<Result<_>>()?;
    let enum_best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let enum_log_z = if enum_best == f64::NEG_INFINITY {
        enum_best
    } else {
        enum_best + scores.iter().map(|s| (s - enum_best).exp()).sum::<f64>().ln()
    };
    Ok(OracleComparison {
        chart_log_z: super::inside(t)?.log_marginal(),
        enum_log_z,
        chart_best: super::viterbi(t)?.1,
        enum_best,
        trees: trees.len(),
    })
}
