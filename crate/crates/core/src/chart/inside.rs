use std::sync::Arc;

use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::grammar::MIN_SENTENCE_LEN;
use crate::scoring::{RuleScoreTables, TableVars};

const NEG_INF: f64 = f64::NEG_INFINITY;

/// `log Σ exp(a[i] + b[i])` over two equal-length slices.
#[inline]
pub(crate) fn lse_sum(a: &[f64], b: &[f64]) -> f64 {
    let mut m = NEG_INF;
    for (x, y) in a.iter().zip(b) {
        m = m.max(x + y);
    }
    if m == NEG_INF {
        return NEG_INF;
    }
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x + y - m).exp()).sum();
    m + s.ln()
}

#[inline]
fn lse(xs: &[f64]) -> f64 {
    crate::diff::logsumexp(xs)
}

pub(crate) fn check_tables(t: &RuleScoreTables) -> Result<()> {
    if t.len < MIN_SENTENCE_LEN {
        return Err(Error::Length {
            len: t.len,
            min: MIN_SENTENCE_LEN,
            max: usize::MAX,
        });
    }
    let (n, s, l) = (t.num_nonterminals, t.num_symbols(), t.len);
    let ok = t.root.len() == n
        && t.emit.len() == s * l
        && t.head_child.len() == l * n * 2 * s
        && t.noninherit.iter().all(|v| v.len() == l * n * s * s);
    if !ok {
        return Err(Error::Shape("rule tables do not match their declared sizes".into()));
    }
    Ok(())
}

/// Inside scores of one sentence, in log space.
///
/// `beta(i, j, h, X)` is the log total score of subtrees rooted in `X` that
/// span tokens `i..=j` with head word `h`, excluding the emission of `h`.
/// `emit_marg(X, i, j)` folds that emission in and marginalises the head.
#[derive(Debug, Clone)]
pub struct Chart {
    pub len: usize,
    pub num_nonterminals: usize,
    pub num_symbols: usize,
    beta: Vec<f64>,
    emit_marg: Vec<f64>,
    log_z: f64,
}

impl Chart {
    #[inline]
    fn bi(&self, i: usize, j: usize, h: usize, x: usize) -> usize {
        ((i * self.len + j) * self.len + h) * self.num_symbols + x
    }

    #[inline]
    fn ei(&self, i: usize, j: usize) -> usize {
        (i * self.len + j) * self.num_symbols
    }

    pub fn beta(&self, i: usize, j: usize, h: usize, x: usize) -> f64 {
        self.beta[self.bi(i, j, h, x)]
    }

    pub fn emit_marg(&self, x: usize, i: usize, j: usize) -> f64 {
        self.emit_marg[self.ei(i, j) + x]
    }

    /// `log p_z(x)`.
    pub fn log_marginal(&self) -> f64 {
        self.log_z
    }
}

/// Fills the chart bottom-up and returns it with `log p_z(x)`.
pub fn inside(t: &RuleScoreTables) -> Result<Chart> {
    check_tables(t)?;
    let (n, s, l) = (t.num_nonterminals, t.num_symbols(), t.len);
    let mut c = Chart {
        len: l,
        num_nonterminals: n,
        num_symbols: s,
        beta: vec![NEG_INF; l * l * l * s],
        emit_marg: vec![NEG_INF; l * l * s],
        log_z: NEG_INF,
    };
    for i in 0..l {
        for x in n..s {
            let b = c.bi(i, i, i, x);
            c.beta[b] = 0.0;
            let e = c.ei(i, i) + x;
            c.emit_marg[e] = t.emit(x, i);
        }
    }
    let mut terms = Vec::new();
    for w in 2..=l {
        for i in 0..=l - w {
            let j = i + w - 1;
            for h in i..=j {
                for a in 0..n {
                    terms.clear();
                    for k in i..j {
                        if h <= k {
                            let er = c.ei(k + 1, j);
                            let e_right = &c.emit_marg[er..er + s];
                            for b in 0..s {
                                let bb = c.beta[c.bi(i, k, h, b)];
                                let hc = t.head_child[t.head_child_index(h, a, 0, b)];
                                if bb == NEG_INF || hc == NEG_INF {
                                    continue;
                                }
                                let ni0 = t.noninherit_index(h, a, b, 0);
                                let inner = lse_sum(&t.noninherit[0][ni0..ni0 + s], e_right);
                                terms.push(hc + bb + inner);
                            }
                        } else {
                            let el = c.ei(i, k);
                            let e_left = &c.emit_marg[el..el + s];
                            for cc in 0..s {
                                let bc = c.beta[c.bi(k + 1, j, h, cc)];
                                let hc = t.head_child[t.head_child_index(h, a, 1, cc)];
                                if bc == NEG_INF || hc == NEG_INF {
                                    continue;
                                }
                                let ni0 = t.noninherit_index(h, a, cc, 0);
                                let inner = lse_sum(&t.noninherit[1][ni0..ni0 + s], e_left);
                                terms.push(hc + bc + inner);
                            }
                        }
                    }
                    let v = lse(&terms);
                    let b = c.bi(i, j, h, a);
                    c.beta[b] = v;
                }
            }
            for x in 0..n {
                terms.clear();
                for h in i..=j {
                    terms.push(t.emit(x, h) + c.beta[c.bi(i, j, h, x)]);
                }
                let e = c.ei(i, j) + x;
                c.emit_marg[e] = lse(&terms);
            }
        }
    }
    terms.clear();
    for a in 0..n {
        for h in 0..l {
            terms.push(t.root[a] + t.emit(a, h) + c.beta[c.bi(0, l - 1, h, a)]);
        }
    }
    c.log_z = lse(&terms);
    Ok(c)
}

/// Gradients of `log p_z(x)` with respect to every table entry, laid out as
/// the tables themselves. These are the expected rule counts.
#[derive(Debug, Clone)]
pub struct TableGradients {
    pub root: Vec<f64>,
    pub emit: Vec<f64>,
    pub head_child: Vec<f64>,
    pub noninherit: [Vec<f64>; 2],
}

#[inline]
fn weight(g: f64, term: f64, total: f64) -> f64 {
    if g == 0.0 || term == NEG_INF || total == NEG_INF {
        0.0
    } else {
        g * (term - total).exp()
    }
}

/// Reverse sweep through the inside recurrence.
pub fn inside_backward(t: &RuleScoreTables, c: &Chart) -> TableGradients {
    let (n, s, l) = (t.num_nonterminals, t.num_symbols(), t.len);
    let mut g = TableGradients {
        root: vec![0.0; n],
        emit: vec![0.0; s * l],
        head_child: vec![0.0; t.head_child.len()],
        noninherit: [vec![0.0; t.noninherit[0].len()], vec![0.0; t.noninherit[1].len()]],
    };
    let mut bbar = vec![0.0; c.beta.len()];
    let mut ebar = vec![0.0; c.emit_marg.len()];
    for a in 0..n {
        for h in 0..l {
            let bi = c.bi(0, l - 1, h, a);
            let w = weight(1.0, t.root[a] + t.emit(a, h) + c.beta[bi], c.log_z);
            g.root[a] += w;
            g.emit[t.emit_index(a, h)] += w;
            bbar[bi] += w;
        }
    }
    for w in (2..=l).rev() {
        for i in 0..=l - w {
            let j = i + w - 1;
            let e0 = c.ei(i, j);
            for x in 0..n {
                let eb = ebar[e0 + x];
                for h in i..=j {
                    let bi = c.bi(i, j, h, x);
                    let wt = weight(eb, t.emit(x, h) + c.beta[bi], c.emit_marg[e0 + x]);
                    g.emit[t.emit_index(x, h)] += wt;
                    bbar[bi] += wt;
                }
            }
            for h in i..=j {
                for a in 0..n {
                    let bi = c.bi(i, j, h, a);
                    let gb = bbar[bi];
                    let total = c.beta[bi];
                    if gb == 0.0 || total == NEG_INF {
                        continue;
                    }
                    for k in i..j {
                        let (dir, other0) = if h <= k { (0, c.ei(k + 1, j)) } else { (1, c.ei(i, k)) };
                        let e_other = &c.emit_marg[other0..other0 + s];
                        for hd in 0..s {
                            let ci = if dir == 0 { c.bi(i, k, h, hd) } else { c.bi(k + 1, j, h, hd) };
                            let bh = c.beta[ci];
                            let hci = t.head_child_index(h, a, dir, hd);
                            let hc = t.head_child[hci];
                            if bh == NEG_INF || hc == NEG_INF {
                                continue;
                            }
                            let ni0 = t.noninherit_index(h, a, hd, 0);
                            let ni = &t.noninherit[dir][ni0..ni0 + s];
                            let inner = lse_sum(ni, e_other);
                            let wt = weight(gb, hc + bh + inner, total);
                            if wt == 0.0 {
                                continue;
                            }
                            g.head_child[hci] += wt;
                            bbar[ci] += wt;
                            for o in 0..s {
                                let wo = weight(wt, ni[o] + e_other[o], inner);
                                g.noninherit[dir][ni0 + o] += wo;
                                ebar[other0 + o] += wo;
                            }
                        }
                    }
                }
            }
        }
    }
    for i in 0..l {
        let e0 = c.ei(i, i);
        for x in n..s {
            g.emit[t.emit_index(x, i)] += ebar[e0 + x];
        }
    }
    g
}

/// Records `log p_z(x)` on the tape as a single node whose backward pass is
/// [`inside_backward`]. Returns the node and the filled chart.
pub fn inside_var<'a>(tape: &mut Tape<'a>, vars: &TableVars, tables: RuleScoreTables) -> Result<(Var, Arc<Chart>)> {
    let chart = Arc::new(inside(&tables)?);
    let value = Tensor::scalar(chart.log_marginal());
    let shapes: Vec<Vec<usize>> = [vars.root, vars.emit, vars.head_child, vars.noninherit_left, vars.noninherit_right]
        .iter()
        .map(|v| tape.value(*v).shape().to_vec())
        .collect();
    let held = Arc::clone(&chart);
    let backward = Box::new(move |up: &Tensor| -> Vec<Tensor> {
        let scale = up.item();
        let g = inside_backward(&tables, &held);
        let [nl, nr] = g.noninherit;
        [g.root, g.emit, g.head_child, nl, nr]
            .into_iter()
            .zip(&shapes)
            .map(|(mut d, shape)| {
                d.iter_mut().for_each(|v| *v *= scale);
                Tensor::new(shape.clone(), d).expect("gradient matches table shape")
            })
            .collect()
    });
    let inputs = [vars.root, vars.emit, vars.head_child, vars.noninherit_left, vars.noninherit_right];
    Ok((tape.custom(&inputs, value, backward), chart))
}
