//! Constituency and dependency evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grammar::{BracketTree, DependencyArcs, LexTree, Span};

/// Precision, recall and F1 of one span comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Spans that count for evaluation: width ≥ 2 and not the whole sentence.
pub fn scored_spans(spans: &BTreeSet<Span>, len: usize) -> BTreeSet<Span> {
    spans
        .iter()
        .copied()
        .filter(|&(i, j)| j > i && !(i == 0 && j + 1 == len))
        .collect()
}

fn prf(matched: usize, pred: usize, gold: usize) -> Prf {
    if pred == 0 && gold == 0 {
        return Prf {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
    }
    let p = if pred == 0 { 0.0 } else { matched as f64 / pred as f64 };
    let r = if gold == 0 { 0.0 } else { matched as f64 / gold as f64 };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    Prf {
        precision: p,
        recall: r,
        f1,
    }
}

/// Unlabeled span precision/recall/F1 for one sentence of `len` tokens.
pub fn span_prf(pred: &BTreeSet<Span>, gold: &BTreeSet<Span>, len: usize) -> Prf {
    let (p, g) = (scored_spans(pred, len), scored_spans(gold, len));
    prf(p.intersection(&g).count(), p.len(), g.len())
}

pub fn unlabeled_f1(pred: &BTreeSet<Span>, gold: &BTreeSet<Span>, len: usize) -> f64 {
    span_prf(pred, gold, len).f1
}

/// F1 between a predicted tree and a gold bracketing of the same sentence.
pub fn tree_f1(pred: &LexTree, gold: &BracketTree) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::Alignment(format!(
            "predicted tree has {} tokens, gold {}",
            pred.len(),
            gold.len()
        )));
    }
    Ok(unlabeled_f1(&pred.constituent_spans(), &gold.constituent_spans(), pred.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum F1Averaging {
    /// Mean of sentence-level scores.
    #[default]
    Sentence,
    /// One score from span counts pooled over the corpus.
    Corpus,
}

/// Corpus F1 over `(pred spans, gold spans, length)` triples.
pub fn corpus_f1(items: &[(BTreeSet<Span>, BTreeSet<Span>, usize)], averaging: F1Averaging) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    match averaging {
        F1Averaging::Sentence => items.iter().map(|(p, g, l)| unlabeled_f1(p, g, *l)).sum::<f64>() / items.len() as f64,
        F1Averaging::Corpus => {
            let (mut m, mut np, mut ng) = (0, 0, 0);
            for (p, g, l) in items {
                let (p, g) = (scored_spans(p, *l), scored_spans(g, *l));
                m += p.intersection(&g).count();
                np += p.len();
                ng += g.len();
            }
            prf(m, np, ng).f1
        }
    }
}

/// Token counts behind the attachment scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct AttachmentCounts {
    pub tokens: usize,
    pub directed: usize,
    pub undirected: usize,
}

impl AttachmentCounts {
    pub fn das(&self) -> f64 {
        ratio(self.directed, self.tokens)
    }

    pub fn uas(&self) -> f64 {
        ratio(self.undirected, self.tokens)
    }

    pub fn add(&mut self, other: &AttachmentCounts) {
        self.tokens += other.tokens;
        self.directed += other.directed;
        self.undirected += other.undirected;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Token `i` with predicted head `p` is directed-correct when `p` is its gold
/// head. It is undirected-correct when that holds or when `p` is a word whose
/// gold head is `i`; a predicted ROOT attachment only matches a gold ROOT.
pub fn attachment_counts(pred: &DependencyArcs, gold: &DependencyArcs) -> Result<AttachmentCounts> {
    if pred.len() != gold.len() {
        return Err(Error::Alignment(format!(
            "predicted arcs cover {} tokens, gold {}",
            pred.len(),
            gold.len()
        )));
    }
    let mut c = AttachmentCounts {
        tokens: pred.len(),
        ..Default::default()
    };
    for i in 0..pred.len() {
        let p = pred.head_of(i);
        if p == gold.head_of(i) {
            c.directed += 1;
            c.undirected += 1;
        } else if let Some(p) = p {
            if gold.head_of(p) == Some(i) {
                c.undirected += 1;
            }
        }
    }
    Ok(c)
}

/// `(DAS, UAS)` for one sentence.
pub fn attachment_scores(pred: &DependencyArcs, gold: &DependencyArcs) -> Result<(f64, f64)> {
    let c = attachment_counts(pred, gold)?;
    Ok((c.das(), c.uas()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct LabelCount {
    pub found: usize,
    pub total: usize,
}

impl LabelCount {
    pub fn recall(&self) -> f64 {
        ratio(self.found, self.total)
    }
}

fn check_pairs(preds: &[LexTree], golds: &[BracketTree]) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(Error::Alignment(format!("{} predicted trees, {} gold", preds.len(), golds.len())));
    }
    for (k, (p, g)) in preds.iter().zip(golds).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Alignment(format!(
                "sentence {k}: predicted tree has {} tokens, gold {}",
                p.len(),
                g.len()
            )));
        }
    }
    Ok(())
}

/// Per gold label, how many of its scored spans the prediction also brackets.
pub fn label_recall(preds: &[LexTree], golds: &[BracketTree]) -> Result<BTreeMap<String, LabelCount>> {
    check_pairs(preds, golds)?;
    let mut out: BTreeMap<String, LabelCount> = BTreeMap::new();
    for (p, g) in preds.iter().zip(golds) {
        let len = g.len();
        let spans = p.constituent_spans();
        for ((i, j), label) in g.labeled_spans() {
            if j <= i || (i == 0 && j + 1 == len) {
                continue;
            }
            let e = out.entry(label.to_string()).or_default();
            e.total += 1;
            if spans.contains(&(i, j)) {
                e.found += 1;
            }
        }
    }
    Ok(out)
}

/// Co-occurrence of induced symbols and gold labels on shared scored spans.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Alignment {
    /// Gold labels with at least one shared span, sorted.
    pub labels: Vec<String>,
    /// Induced symbols seen on shared spans, ascending.
    pub symbols: Vec<usize>,
    /// `counts[label][symbol]`
    pub counts: Vec<Vec<usize>>,
    /// Row-normalised `counts`; every row sums to 1.
    pub proportions: Vec<Vec<f64>>,
    /// No span was shared, so the matrix has no rows.
    pub empty: bool,
}

pub fn alignment_matrix(preds: &[LexTree], golds: &[BracketTree]) -> Result<Alignment> {
    check_pairs(preds, golds)?;
    let mut pairs: BTreeMap<(String, usize), usize> = BTreeMap::new();
    for (p, g) in preds.iter().zip(golds) {
        let len = g.len();
        let induced: BTreeMap<Span, usize> = p.labeled_spans().into_iter().collect();
        for (span, label) in g.labeled_spans() {
            if span.1 <= span.0 || (span.0 == 0 && span.1 + 1 == len) {
                continue;
            }
            if let Some(&sym) = induced.get(&span) {
                *pairs.entry((label.to_string(), sym)).or_default() += 1;
            }
        }
    }
    let labels: Vec<String> = pairs.keys().map(|(l, _)| l.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let symbols: Vec<usize> = pairs.keys().map(|&(_, s)| s).collect::<BTreeSet<_>>().into_iter().collect();
    let mut counts = vec![vec![0; symbols.len()]; labels.len()];
    for ((l, s), c) in &pairs {
        let li = labels.binary_search(l).expect("collected");
        let si = symbols.binary_search(s).expect("collected");
        counts[li][si] = *c;
    }
    let proportions = counts
        .iter()
        .map(|row| {
            let t: usize = row.iter().sum();
            row.iter().map(|&c| c as f64 / t as f64).collect()
        })
        .collect();
    Ok(Alignment {
        empty: labels.is_empty(),
        labels,
        symbols,
        counts,
        proportions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ReportCounts {
    pub sentences: usize,
    pub tokens: usize,
    pub pred_spans: usize,
    pub gold_spans: usize,
    pub matched_spans: usize,
    pub directed_arcs: usize,
    pub undirected_arcs: usize,
}

/// Everything computed against the available gold annotations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub f1: Option<f64>,
    pub das: Option<f64>,
    pub uas: Option<f64>,
    pub label_recall: BTreeMap<String, f64>,
    pub alignment: Option<Alignment>,
    pub counts: ReportCounts,
}

/// Scores `preds` against gold trees and/or gold dependencies.
pub fn evaluate(
    preds: &[LexTree],
    gold_trees: Option<&[BracketTree]>,
    gold_deps: Option<&[DependencyArcs]>,
    averaging: F1Averaging,
) -> Result<EvalReport> {
    let mut counts = ReportCounts {
        sentences: preds.len(),
        tokens: preds.iter().map(LexTree::len).sum(),
        ..Default::default()
    };
    let mut report = EvalReport {
        f1: None,
        das: None,
        uas: None,
        label_recall: BTreeMap::new(),
        alignment: None,
        counts,
    };
    if let Some(golds) = gold_trees {
        check_pairs(preds, golds)?;
        let items: Vec<_> = preds
            .iter()
            .zip(golds)
            .map(|(p, g)| (p.constituent_spans(), g.constituent_spans(), p.len()))
            .collect();
        for (p, g, l) in &items {
            let (p, g) = (scored_spans(p, *l), scored_spans(g, *l));
            counts.matched_spans += p.intersection(&g).count();
            counts.pred_spans += p.len();
            counts.gold_spans += g.len();
        }
        report.f1 = Some(corpus_f1(&items, averaging));
        report.label_recall = label_recall(preds, golds)?
            .into_iter()
            .map(|(k, v)| (k, v.recall()))
            .collect();
        report.alignment = Some(alignment_matrix(preds, golds)?);
    }
    if let Some(golds) = gold_deps {
        if golds.len() != preds.len() {
            return Err(Error::Alignment(format!(
                "{} predicted trees, {} gold dependency sentences",
                preds.len(),
                golds.len()
            )));
        }
        let mut total = AttachmentCounts::default();
        for (p, g) in preds.iter().zip(golds) {
            total.add(&attachment_counts(&p.extract_dependencies()?, g)?);
        }
        counts.directed_arcs = total.directed;
        counts.undirected_arcs = total.undirected;
        report.das = Some(total.das());
        report.uas = Some(total.uas());
    }
    report.counts = counts;
    Ok(report)
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}", 100.0 * x));
        let _ = writeln!(s, "sentences  {}", self.counts.sentences);
        let _ = writeln!(s, "tokens     {}", self.counts.tokens);
        let _ = writeln!(s, "F1         {}", pct(self.f1));
        let _ = writeln!(s, "DAS        {}", pct(self.das));
        let _ = writeln!(s, "UAS        {}", pct(self.uas));
        if !self.label_recall.is_empty() {
            let _ = writeln!(s, "label recall");
            for (k, v) in &self.label_recall {
                let _ = writeln!(s, "  {k:<8} {:.2}", 100.0 * v);
            }
        }
        if let Some(a) = &self.alignment {
            if a.empty {
                let _ = writeln!(s, "alignment: no shared spans");
            } else {
                let _ = write!(s, "alignment {:<8}", "");
                for sym in &a.symbols {
                    let _ = write!(s, " NT-{sym:<3}");
                }
                s.push('\n');
                for (label, row) in a.labels.iter().zip(&a.proportions) {
                    let _ = write!(s, "  {label:<16}");
                    for v in row {
                        let _ = write!(s, " {v:>6.3}");
                    }
                    s.push('\n');
                }
            }
        }
        s
    }
}
