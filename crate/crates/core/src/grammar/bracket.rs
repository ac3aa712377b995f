//! Single-line bracketed trees, `(S (NP (DT the) (NN dog)) (VP ...))`.
//!
//! Internal node labels may carry a 1-based head annotation, `NT-3[2]`, which
//! is how induced lexicalized trees are written out.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::tree::{GrammarSignature, LexNode, LexTree, Span};
use crate::error::{Error, Result};

/// Labeled n-ary tree as read from a treebank line. Preterminal nodes carry
/// the word; all other nodes carry children.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BracketTree {
    pub label: String,
    /// 0-based head position, if annotated.
    pub head: Option<usize>,
    pub word: Option<String>,
    pub children: Vec<BracketTree>,
}

impl BracketTree {
    pub fn preterminal(label: impl Into<String>, word: impl Into<String>) -> Self {
        BracketTree {
            label: label.into(),
            head: None,
            word: Some(word.into()),
            children: Vec::new(),
        }
    }

    pub fn node(label: impl Into<String>, children: Vec<BracketTree>) -> Self {
        BracketTree {
            label: label.into(),
            head: None,
            word: None,
            children,
        }
    }

    pub fn is_preterminal(&self) -> bool {
        self.word.is_some()
    }

    pub fn words(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_words(&mut out);
        out
    }

    fn collect_words<'a>(&'a self, out: &mut Vec<&'a str>) {
        match &self.word {
            Some(w) => out.push(w),
            None => self.children.iter().for_each(|c| c.collect_words(out)),
        }
    }

    pub fn len(&self) -> usize {
        match self.word {
            Some(_) => 1,
            None => self.children.iter().map(BracketTree::len).sum(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every non-preterminal node with its span, in pre-order. Unary chains
    /// yield one entry per label.
    pub fn labeled_spans(&self) -> Vec<(Span, &str)> {
        let mut out = Vec::new();
        self.walk_spans(0, &mut out);
        out
    }

    fn walk_spans<'a>(&'a self, start: usize, out: &mut Vec<(Span, &'a str)>) -> usize {
        if self.word.is_some() {
            return start + 1;
        }
        let idx = out.len();
        out.push(((start, start), self.label.as_str()));
        let mut pos = start;
        for c in &self.children {
            pos = c.walk_spans(pos, out);
        }
        out[idx].0 = (start, pos.saturating_sub(1).max(start));
        pos
    }

    /// Spans of width ≥ 2 covered by some non-preterminal node, including the whole sentence.
    pub fn constituent_spans(&self) -> BTreeSet<Span> {
        self.labeled_spans()
            .into_iter()
            .map(|(s, _)| s)
            .filter(|&(i, j)| j > i)
            .collect()
    }

    pub fn to_bracketed(&self) -> String {
        let mut s = String::new();
        self.write_into(&mut s);
        s
    }

    fn write_into(&self, s: &mut String) {
        s.push('(');
        s.push_str(&self.label);
        if let Some(h) = self.head {
            let _ = write!(s, "[{}]", h + 1);
        }
        if let Some(w) = &self.word {
            s.push(' ');
            s.push_str(w);
        }
        for c in &self.children {
            s.push(' ');
            c.write_into(s);
        }
        s.push(')');
    }

    /// Converts a head-annotated binary tree with `NT-k`/`T-k` labels into a [`LexTree`].
    pub fn to_lex_tree(&self, sig: &GrammarSignature) -> Result<LexTree> {
        let mut pos = 0;
        let root = self.to_lex_node(sig, &mut pos)?;
        let tree = LexTree::new(root);
        tree.validate(sig)?;
        Ok(tree)
    }

    fn to_lex_node(&self, sig: &GrammarSignature, pos: &mut usize) -> Result<LexNode> {
        let symbol = sig.parse_symbol(&self.label)?;
        if self.word.is_some() {
            let n = LexNode::leaf(symbol, *pos);
            *pos += 1;
            return Ok(n);
        }
        if self.children.len() != 2 {
            return Err(Error::Structure(format!(
                "node {} has {} children, expected 2",
                self.label,
                self.children.len()
            )));
        }
        let left = self.children[0].to_lex_node(sig, pos)?;
        let right = self.children[1].to_lex_node(sig, pos)?;
        let head = self
            .head
            .ok_or_else(|| Error::Format(format!("node {} lacks a head annotation", self.label)))?;
        Ok(LexNode {
            symbol,
            start: left.start,
            end: right.end,
            head,
            children: Some(Box::new((left, right))),
        })
    }

    pub fn from_lex_tree<S: AsRef<str>>(tree: &LexTree, sig: &GrammarSignature, words: &[S]) -> Result<Self> {
        if words.len() != tree.len() {
            return Err(Error::Alignment(format!(
                "tree spans {} tokens but {} words given",
                tree.len(),
                words.len()
            )));
        }
        Ok(from_lex_node(&tree.root, sig, words))
    }
}

fn from_lex_node<S: AsRef<str>>(n: &LexNode, sig: &GrammarSignature, words: &[S]) -> BracketTree {
    match n.children.as_deref() {
        None => BracketTree::preterminal(sig.symbol_name(n.symbol), words[n.start].as_ref()),
        Some((l, r)) => BracketTree {
            label: sig.symbol_name(n.symbol),
            head: Some(n.head),
            word: None,
            children: vec![from_lex_node(l, sig, words), from_lex_node(r, sig, words)],
        },
    }
}

/// Writes a lexicalized tree in the bracketed-with-heads format.
pub fn write_lex_tree<S: AsRef<str>>(tree: &LexTree, sig: &GrammarSignature, words: &[S]) -> Result<String> {
    Ok(BracketTree::from_lex_tree(tree, sig, words)?.to_bracketed())
}

#[derive(Debug, PartialEq)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn tokenize(line: &str) -> Vec<Tok<'_>> {
    let mut out = Vec::new();
    let bytes = line.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                out.push(Tok::Open);
                i += 1;
            }
            b')' => {
                out.push(Tok::Close);
                i += 1;
            }
            c if c.is_ascii_whitespace() => i += 1,
            _ => {
                let start = i;
                while i < bytes.len() && !matches!(bytes[i], b'(' | b')') && !bytes[i].is_ascii_whitespace() {
                    i += 1;
                }
                out.push(Tok::Atom(&line[start..i]));
            }
        }
    }
    out
}

fn split_head(label: &str) -> Result<(String, Option<usize>)> {
    if let Some(stripped) = label.strip_suffix(']') {
        if let Some(open) = stripped.rfind('[') {
            let h: usize = stripped[open + 1..]
                .parse()
                .map_err(|_| Error::Format(format!("bad head annotation in {label:?}")))?;
            if h == 0 {
                return Err(Error::Format(format!("head annotation in {label:?} must be 1-based")));
            }
            return Ok((stripped[..open].to_string(), Some(h - 1)));
        }
    }
    Ok((label.to_string(), None))
}

/// Parses one bracketed tree. A wrapping unlabeled node, as in `( (S ...) )`, is removed.
pub fn parse_bracketed(line: &str) -> Result<BracketTree> {
    let toks = tokenize(line);
    let mut pos = 0;
    let tree = parse_node(&toks, &mut pos)?;
    if pos != toks.len() {
        return Err(Error::Format("trailing material after tree".into()));
    }
    let mut tree = tree;
    while tree.label.is_empty() && tree.word.is_none() && tree.children.len() == 1 {
        tree = tree.children.pop().expect("one child");
    }
    Ok(tree)
}

fn parse_node(toks: &[Tok<'_>], pos: &mut usize) -> Result<BracketTree> {
    if toks.get(*pos) != Some(&Tok::Open) {
        return Err(Error::Format("expected '('".into()));
    }
    *pos += 1;
    let (label, head) = match toks.get(*pos) {
        Some(Tok::Atom(a)) => {
            *pos += 1;
            split_head(a)?
        }
        _ => (String::new(), None),
    };
    // (TAG word)
    if let (Some(Tok::Atom(w)), Some(Tok::Close)) = (toks.get(*pos), toks.get(*pos + 1)) {
        *pos += 2;
        return Ok(BracketTree {
            label,
            head,
            word: Some((*w).to_string()),
            children: Vec::new(),
        });
    }
    let mut children = Vec::new();
    loop {
        match toks.get(*pos) {
            Some(Tok::Close) => {
                *pos += 1;
                break;
            }
            Some(Tok::Open) => children.push(parse_node(toks, pos)?),
            Some(Tok::Atom(a)) => return Err(Error::Format(format!("unexpected bare token {a:?}"))),
            None => return Err(Error::Format("unbalanced brackets".into())),
        }
    }
    if children.is_empty() {
        return Err(Error::Format(format!("empty constituent {label:?}")));
    }
    Ok(BracketTree {
        label,
        head,
        word: None,
        children,
    })
}

/// Parses a file with one tree per non-empty line.
pub fn parse_tree_file(text: &str, path: &str) -> Result<Vec<BracketTree>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_bracketed(l).map_err(|e| Error::Parse {
                path: path.to_string(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::tree::Direction;

    #[test]
    fn parses_ptb_style() {
        let t = parse_bracketed("( (S (NP (DT the) (NN dog)) (VP (VBZ is) (VP (VBG chasing) (NP (DT the) (NN cat))))) )").unwrap();
        assert_eq!(t.label, "S");
        assert_eq!(t.words(), vec!["the", "dog", "is", "chasing", "the", "cat"]);
        let spans = t.constituent_spans();
        assert!(spans.contains(&(0, 1)));
        assert!(spans.contains(&(2, 5)));
        assert!(spans.contains(&(0, 5)));
    }

    #[test]
    fn unbalanced_is_an_error() {
        assert!(parse_bracketed("(S (NP (DT the) (NN dog))").is_err());
        assert!(parse_bracketed("(S (NP (DT the)) x)").is_err());
        assert!(parse_bracketed("(S (NP (DT the))))").is_err());
    }

    #[test]
    fn head_annotation_round_trip() {
        let sig = GrammarSignature::new(4, 8, 10).unwrap();
        let line = "(NT-3[2] (T-7 the) (T-4 dog))";
        let t = parse_bracketed(line).unwrap();
        assert_eq!(t.head, Some(1));
        let lex = t.to_lex_tree(&sig).unwrap();
        assert_eq!(lex.root.direction(), Some(Direction::Right));
        assert_eq!(write_lex_tree(&lex, &sig, &["the", "dog"]).unwrap(), line);
    }

    #[test]
    fn lex_conversion_needs_heads() {
        let sig = GrammarSignature::new(4, 8, 10).unwrap();
        let t = parse_bracketed("(NT-3 (T-7 the) (T-4 dog))").unwrap();
        assert!(t.to_lex_tree(&sig).is_err());
    }
}
