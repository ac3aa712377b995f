use crate::error::{Error, Result};
use crate::grammar::{Direction, GrammarSignature, RuleInstance};

/// Per-sentence log-probability tables consumed by the chart algorithms.
///
/// Layouts (row-major, `S = |N| + |P|`, `L` = sentence length):
/// - `root[A]`: `log p(S → A)`, length `|N|`
/// - `emit[C, i]`: `log p(C → x_i)` normalised over the full vocabulary, `[S, L]`
/// - `head_child[h, A, dir, H]`: `log p(H, dir | A, x_h)`, `[L, |N|, 2, S]`,
///   one distribution over both directions per `(h, A)`
/// - `noninherit[dir][h, A, H, O]`: `log p(O | A, H, x_h, dir)` with `H` the
///   head-inheriting child and `O` the other child, `[L, |N|, S, S]`
#[derive(Debug, Clone, PartialEq)]
pub struct RuleScoreTables {
    pub num_nonterminals: usize,
    pub num_preterminals: usize,
    pub len: usize,
    pub root: Vec<f64>,
    pub emit: Vec<f64>,
    pub head_child: Vec<f64>,
    pub noninherit: [Vec<f64>; 2],
}

impl RuleScoreTables {
    /// Tables filled with `-inf`, ready to be populated by hand.
    pub fn empty(num_nonterminals: usize, num_preterminals: usize, len: usize) -> Self {
        let s = num_nonterminals + num_preterminals;
        let ninf = f64::NEG_INFINITY;
        RuleScoreTables {
            num_nonterminals,
            num_preterminals,
            len,
            root: vec![ninf; num_nonterminals],
            emit: vec![ninf; s * len],
            head_child: vec![ninf; len * num_nonterminals * 2 * s],
            noninherit: [
                vec![ninf; len * num_nonterminals * s * s],
                vec![ninf; len * num_nonterminals * s * s],
            ],
        }
    }

    pub fn num_symbols(&self) -> usize {
        self.num_nonterminals + self.num_preterminals
    }

    pub fn signature(&self, vocab_size: usize) -> GrammarSignature {
        GrammarSignature {
            num_nonterminals: self.num_nonterminals,
            num_preterminals: self.num_preterminals,
            vocab_size,
        }
    }

    #[inline]
    pub fn emit_index(&self, sym: usize, pos: usize) -> usize {
        sym * self.len + pos
    }

    #[inline]
    pub fn head_child_index(&self, h: usize, a: usize, dir: usize, child: usize) -> usize {
        let s = self.num_symbols();
        ((h * self.num_nonterminals + a) * 2 + dir) * s + child
    }

    #[inline]
    pub fn noninherit_index(&self, h: usize, a: usize, head: usize, other: usize) -> usize {
        let s = self.num_symbols();
        ((h * self.num_nonterminals + a) * s + head) * s + other
    }

    pub fn root(&self, a: usize) -> f64 {
        self.root[a]
    }

    pub fn emit(&self, sym: usize, pos: usize) -> f64 {
        self.emit[self.emit_index(sym, pos)]
    }

    pub fn head_child(&self, h: usize, a: usize, dir: Direction, child: usize) -> f64 {
        self.head_child[self.head_child_index(h, a, dir.index(), child)]
    }

    pub fn noninherit(&self, dir: Direction, h: usize, a: usize, head: usize, other: usize) -> f64 {
        self.noninherit[dir.index()][self.noninherit_index(h, a, head, other)]
    }

    /// Joint `log p(left, right, dir | A, x_h)` excluding the dependent's emission.
    pub fn branch(&self, h: usize, a: usize, left: usize, right: usize, dir: Direction) -> f64 {
        let (head, other) = match dir {
            Direction::Left => (left, right),
            Direction::Right => (right, left),
        };
        self.head_child(h, a, dir, head) + self.noninherit(dir, h, a, head, other)
    }

    /// Largest deviation from 1 of any conditional distribution's total mass.
    /// Emission is checked only over the stored sentence columns, so callers
    /// verify full-vocabulary normalisation separately.
    pub fn max_normalization_error(&self) -> f64 {
        let n = self.num_nonterminals;
        let s = self.num_symbols();
        let mass = |xs: &mut dyn Iterator<Item = f64>| xs.map(f64::exp).sum::<f64>();
        let mut worst = (mass(&mut self.root.iter().copied()) - 1.0).abs();
        for h in 0..self.len {
            for a in 0..n {
                let i0 = self.head_child_index(h, a, 0, 0);
                worst = worst.max((mass(&mut self.head_child[i0..i0 + 2 * s].iter().copied()) - 1.0).abs());
                for dir in 0..2 {
                    for head in 0..s {
                        let j0 = self.noninherit_index(h, a, head, 0);
                        let m = mass(&mut self.noninherit[dir][j0..j0 + s].iter().copied());
                        worst = worst.max((m - 1.0).abs());
                    }
                }
            }
        }
        worst
    }

    fn check_symbol(&self, sym: usize) -> Result<()> {
        if sym >= self.num_symbols() {
            return Err(Error::Symbol {
                symbol: sym,
                limit: self.num_symbols(),
            });
        }
        Ok(())
    }

    fn check_pos(&self, pos: usize) -> Result<()> {
        if pos >= self.len {
            return Err(Error::Length {
                len: pos + 1,
                min: 1,
                max: self.len,
            });
        }
        Ok(())
    }

    /// Score `g(r, z)` of a single rule instance.
    pub fn rule_score(&self, rule: &RuleInstance) -> Result<f64> {
        match *rule {
            RuleInstance::Root { symbol, head } => {
                if symbol >= self.num_nonterminals {
                    return Err(Error::Symbol {
                        symbol,
                        limit: self.num_nonterminals,
                    });
                }
                self.check_pos(head)?;
                Ok(self.root(symbol) + self.emit(symbol, head))
            }
            RuleInstance::Branch {
                parent,
                left,
                right,
                direction,
                head,
                dependent,
            } => {
                if parent >= self.num_nonterminals {
                    return Err(Error::Symbol {
                        symbol: parent,
                        limit: self.num_nonterminals,
                    });
                }
                self.check_symbol(left)?;
                self.check_symbol(right)?;
                self.check_pos(head)?;
                self.check_pos(dependent)?;
                let other = match direction {
                    Direction::Left => right,
                    Direction::Right => left,
                };
                Ok(self.branch(head, parent, left, right, direction) + self.emit(other, dependent))
            }
            RuleInstance::Emit { preterminal, position } => {
                self.check_symbol(preterminal)?;
                self.check_pos(position)?;
                Ok(0.0)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize, p: usize, len: usize, vocab: usize) -> RuleScoreTables {
        let s = n + p;
        let mut t = RuleScoreTables::empty(n, p, len);
        t.root.fill(-(n as f64).ln());
        t.emit.fill(-(vocab as f64).ln());
        t.head_child.fill(-((2 * s) as f64).ln());
        t.noninherit[0].fill(-(s as f64).ln());
        t.noninherit[1].fill(-(s as f64).ln());
        t
    }

    #[test]
    fn emit_rule_scores_zero() {
        let t = uniform(2, 2, 3, 4);
        let r = RuleInstance::Emit {
            preterminal: 3,
            position: 1,
        };
        assert_eq!(t.rule_score(&r).unwrap(), 0.0);
    }

    #[test]
    fn root_rule_uniform_composition() {
        let t = uniform(2, 1, 2, 4);
        let r = RuleInstance::Root { symbol: 1, head: 0 };
        assert!((t.rule_score(&r).unwrap() - (-(2f64.ln()) - 4f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_symbols_rejected() {
        let t = uniform(2, 2, 3, 4);
        assert!(matches!(
            t.rule_score(&RuleInstance::Root { symbol: 2, head: 0 }),
            Err(Error::Symbol { .. })
        ));
        let r = RuleInstance::Branch {
            parent: 0,
            left: 4,
            right: 0,
            direction: Direction::Left,
            head: 0,
            dependent: 1,
        };
        assert!(matches!(t.rule_score(&r), Err(Error::Symbol { .. })));
    }

    #[test]
    fn uniform_tables_are_normalized() {
        let t = uniform(3, 2, 4, 9);
        assert!(t.max_normalization_error() < 1e-12);
    }
}
