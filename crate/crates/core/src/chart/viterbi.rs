use super::inside::check_tables;
use crate::error::{Error, Result};
use crate::grammar::{Direction, LexNode, LexTree};
use crate::scoring::RuleScoreTables;

const NEG_INF: f64 = f64::NEG_INFINITY;

#[derive(Debug, Clone, Copy)]
struct Back {
    split: usize,
    left: usize,
    right: usize,
}

struct MaxChart {
    len: usize,
    num_symbols: usize,
    delta: Vec<f64>,
    back: Vec<Option<Back>>,
    emit_max: Vec<f64>,
    co_head: Vec<usize>,
}

impl MaxChart {
    #[inline]
    fn bi(&self, i: usize, j: usize, h: usize, x: usize) -> usize {
        ((i * self.len + j) * self.len + h) * self.num_symbols + x
    }

    #[inline]
    fn ei(&self, i: usize, j: usize, x: usize) -> usize {
        (i * self.len + j) * self.num_symbols + x
    }

    fn build(&self, i: usize, j: usize, h: usize, x: usize) -> LexNode {
        if i == j {
            return LexNode::leaf(x, i);
        }
        let bp = self.back[self.bi(i, j, h, x)].expect("finite cell has a backpointer");
        let k = bp.split;
        if h <= k {
            let co = self.co_head[self.ei(k + 1, j, bp.right)];
            LexNode::branch(
                x,
                Direction::Left,
                self.build(i, k, h, bp.left),
                self.build(k + 1, j, co, bp.right),
            )
        } else {
            let co = self.co_head[self.ei(i, k, bp.left)];
            LexNode::branch(
                x,
                Direction::Right,
                self.build(i, k, co, bp.left),
                self.build(k + 1, j, h, bp.right),
            )
        }
    }
}

/// Highest-scoring lexicalized tree and its log score.
///
/// Ties are broken towards the smallest split point, then the lowest
/// `(left, right)` symbol pair, then the lowest co-head position; at the top,
/// the lowest root symbol and then the lowest head position.
pub fn viterbi(t: &RuleScoreTables) -> Result<(LexTree, f64)> {
    check_tables(t)?;
    let (n, s, l) = (t.num_nonterminals, t.num_symbols(), t.len);
    let mut c = MaxChart {
        len: l,
        num_symbols: s,
        delta: vec![NEG_INF; l * l * l * s],
        back: vec![None; l * l * l * s],
        emit_max: vec![NEG_INF; l * l * s],
        co_head: vec![0; l * l * s],
    };
    for i in 0..l {
        for x in n..s {
            let b = c.bi(i, i, i, x);
            c.delta[b] = 0.0;
            let e = c.ei(i, i, x);
            c.emit_max[e] = t.emit(x, i);
            c.co_head[e] = i;
        }
    }
    for w in 2..=l {
        for i in 0..=l - w {
            let j = i + w - 1;
            for h in i..=j {
                for a in 0..n {
                    let mut best = NEG_INF;
                    let mut arg = None;
                    for k in i..j {
                        for b in 0..s {
                            for cc in 0..s {
                                let v = if h <= k {
                                    t.head_child[t.head_child_index(h, a, 0, b)]
                                        + t.noninherit[0][t.noninherit_index(h, a, b, cc)]
                                        + c.delta[c.bi(i, k, h, b)]
                                        + c.emit_max[c.ei(k + 1, j, cc)]
                                } else {
                                    t.head_child[t.head_child_index(h, a, 1, cc)]
                                        + t.noninherit[1][t.noninherit_index(h, a, cc, b)]
                                        + c.delta[c.bi(k + 1, j, h, cc)]
                                        + c.emit_max[c.ei(i, k, b)]
                                };
                                if v > best {
                                    best = v;
                                    arg = Some(Back {
                                        split: k,
                                        left: b,
                                        right: cc,
                                    });
                                }
                            }
                        }
                    }
                    let bi = c.bi(i, j, h, a);
                    c.delta[bi] = best;
                    c.back[bi] = arg;
                }
            }
            for x in 0..n {
                let mut best = NEG_INF;
                let mut arg = i;
                for h in i..=j {
                    let v = t.emit(x, h) + c.delta[c.bi(i, j, h, x)];
                    if v > best {
                        best = v;
                        arg = h;
                    }
                }
                let e = c.ei(i, j, x);
                c.emit_max[e] = best;
                c.co_head[e] = arg;
            }
        }
    }
    let mut best = NEG_INF;
    let mut top = None;
    for a in 0..n {
        for h in 0..l {
            let v = t.root[a] + t.emit(a, h) + c.delta[c.bi(0, l - 1, h, a)];
            if v > best {
                best = v;
                top = Some((a, h));
            }
        }
    }
    let (a, h) = top.ok_or_else(|| Error::Contract("no tree has positive probability".into()))?;
    Ok((LexTree::new(c.build(0, l - 1, h, a)), best))
}
