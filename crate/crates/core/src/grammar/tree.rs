use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::deps::DependencyArcs;
use crate::error::{Error, Result};

/// Inclusive, 0-based token span `(start, end)`.
pub type Span = (usize, usize);

/// Symbol inventory of a lexicalized grammar.
///
/// Symbol ids `0..num_nonterminals` are non-terminals and
/// `num_nonterminals..num_symbols()` are preterminals. The start symbol is
/// implicit and never carries an id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammarSignature {
    pub num_nonterminals: usize,
    pub num_preterminals: usize,
    pub vocab_size: usize,
}

impl GrammarSignature {
    pub fn new(num_nonterminals: usize, num_preterminals: usize, vocab_size: usize) -> Result<Self> {
        if num_nonterminals == 0 || num_preterminals == 0 || vocab_size == 0 {
            return Err(Error::Config(format!(
                "grammar needs at least one non-terminal, preterminal and word \
                 (got {num_nonterminals}, {num_preterminals}, {vocab_size})"
            )));
        }
        Ok(Self {
            num_nonterminals,
            num_preterminals,
            vocab_size,
        })
    }

    pub fn num_symbols(&self) -> usize {
        self.num_nonterminals + self.num_preterminals
    }

    pub fn is_nonterminal(&self, sym: usize) -> bool {
        sym < self.num_nonterminals
    }

    pub fn is_preterminal(&self, sym: usize) -> bool {
        sym >= self.num_nonterminals && sym < self.num_symbols()
    }

    /// Display name: `NT-k` for non-terminals, `T-k` for preterminals (k relative to its block).
    pub fn symbol_name(&self, sym: usize) -> String {
        if self.is_nonterminal(sym) {
            format!("NT-{sym}")
        } else {
            format!("T-{}", sym - self.num_nonterminals)
        }
    }

    pub fn parse_symbol(&self, name: &str) -> Result<usize> {
        let bad = || Error::Format(format!("unknown symbol label {name:?}"));
        let sym = if let Some(k) = name.strip_prefix("NT-") {
            let k: usize = k.parse().map_err(|_| bad())?;
            if k >= self.num_nonterminals {
                return Err(bad());
            }
            k
        } else if let Some(k) = name.strip_prefix("T-") {
            let k: usize = k.parse().map_err(|_| bad())?;
            if k >= self.num_preterminals {
                return Err(bad());
            }
            self.num_nonterminals + k
        } else {
            return Err(bad());
        };
        Ok(sym)
    }
}

/// Which child inherits the parent's head word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    /// Left child inherits (`A[α] → B[α] C[β]`).
    Left,
    /// Right child inherits (`A[α] → B[β] C[α]`).
    Right,
}

impl Direction {
    pub fn index(self) -> usize {
        match self {
            Direction::Left => 0,
            Direction::Right => 1,
        }
    }
}

/// One rule application inside a lexicalized tree. Head and dependent are
/// token positions in the sentence the tree spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleInstance {
    Root {
        symbol: usize,
        head: usize,
    },
    Branch {
        parent: usize,
        left: usize,
        right: usize,
        direction: Direction,
        head: usize,
        dependent: usize,
    },
    Emit {
        preterminal: usize,
        position: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexNode {
    pub symbol: usize,
    pub start: usize,
    pub end: usize,
    pub head: usize,
    pub children: Option<Box<(LexNode, LexNode)>>,
}

impl LexNode {
    pub fn leaf(symbol: usize, position: usize) -> Self {
        LexNode {
            symbol,
            start: position,
            end: position,
            head: position,
            children: None,
        }
    }

    /// Joins two adjacent subtrees; `direction` picks which child's head the parent inherits.
    pub fn branch(symbol: usize, direction: Direction, left: LexNode, right: LexNode) -> Self {
        let head = match direction {
            Direction::Left => left.head,
            Direction::Right => right.head,
        };
        LexNode {
            symbol,
            start: left.start,
            end: right.end,
            head,
            children: Some(Box::new((left, right))),
        }
    }

    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    /// Direction of this branching node, or `None` for leaves and malformed heads.
    pub fn direction(&self) -> Option<Direction> {
        let (l, r) = self.children.as_deref()?;
        if l.head == self.head {
            Some(Direction::Left)
        } else if r.head == self.head {
            Some(Direction::Right)
        } else {
            None
        }
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a LexNode)) {
        f(self);
        if let Some((l, r)) = self.children.as_deref() {
            l.visit(f);
            r.visit(f);
        }
    }
}

/// Binary lexicalized parse tree. The root node's symbol is the non-terminal
/// produced by the start rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexTree {
    pub root: LexNode,
}

impl LexTree {
    pub fn new(root: LexNode) -> Self {
        LexTree { root }
    }

    pub fn len(&self) -> usize {
        self.root.end + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn root_symbol(&self) -> usize {
        self.root.symbol
    }

    pub fn head(&self) -> usize {
        self.root.head
    }

    /// Pre-order traversal of all nodes.
    pub fn nodes(&self) -> Vec<&LexNode> {
        let mut out = Vec::new();
        self.root.visit(&mut |n| out.push(n));
        out
    }

    /// Checks the structural invariants against a signature.
    pub fn validate(&self, sig: &GrammarSignature) -> Result<()> {
        if self.root.start != 0 {
            return Err(Error::Structure("tree must start at token 0".into()));
        }
        if !sig.is_nonterminal(self.root.symbol) {
            return Err(Error::Structure(format!(
                "root symbol {} is not a non-terminal",
                self.root.symbol
            )));
        }
        validate_node(&self.root, sig)
    }

    /// Structural check that ignores symbol categories.
    pub fn validate_shape(&self) -> Result<()> {
        if self.root.start != 0 {
            return Err(Error::Structure("tree must start at token 0".into()));
        }
        validate_shape(&self.root)
    }

    /// Rule instances in top-down, left-to-right order: the start rule, then
    /// one branch or emission per node.
    pub fn rules(&self, sig: &GrammarSignature) -> Result<Vec<RuleInstance>> {
        self.validate(sig)?;
        let mut rules = vec![RuleInstance::Root {
            symbol: self.root.symbol,
            head: self.root.head,
        }];
        self.root.visit(&mut |n| match n.children.as_deref() {
            None => rules.push(RuleInstance::Emit {
                preterminal: n.symbol,
                position: n.start,
            }),
            Some((l, r)) => {
                let direction = n.direction().expect("validated");
                let dependent = match direction {
                    Direction::Left => r.head,
                    Direction::Right => l.head,
                };
                rules.push(RuleInstance::Branch {
                    parent: n.symbol,
                    left: l.symbol,
                    right: r.symbol,
                    direction,
                    head: n.head,
                    dependent,
                });
            }
        });
        Ok(rules)
    }

    /// Dependency arcs encoded by the tree: `ROOT → head` from the start rule
    /// and `head → dependent` for every branching node.
    pub fn extract_dependencies(&self) -> Result<DependencyArcs> {
        self.validate_shape()?;
        let mut heads = vec![None; self.len()];
        self.root.visit(&mut |n| {
            if let Some((l, r)) = n.children.as_deref() {
                let dep = if l.head == n.head { r.head } else { l.head };
                heads[dep] = Some(n.head);
            }
        });
        DependencyArcs::new(heads)
    }

    /// Spans of all branching nodes (width ≥ 2), including the whole sentence.
    pub fn constituent_spans(&self) -> BTreeSet<Span> {
        let mut out = BTreeSet::new();
        self.root.visit(&mut |n| {
            if !n.is_leaf() {
                out.insert((n.start, n.end));
            }
        });
        out
    }

    /// Branching spans paired with the symbol labelling them.
    pub fn labeled_spans(&self) -> Vec<(Span, usize)> {
        let mut out = Vec::new();
        self.root.visit(&mut |n| {
            if !n.is_leaf() {
                out.push(((n.start, n.end), n.symbol));
            }
        });
        out
    }
}

fn validate_shape(n: &LexNode) -> Result<()> {
    if n.start > n.end || n.head < n.start || n.head > n.end {
        return Err(Error::Structure(format!(
            "node [{}, {}] has head {} outside its span",
            n.start, n.end, n.head
        )));
    }
    match n.children.as_deref() {
        None => {
            if n.start != n.end {
                return Err(Error::Structure(format!(
                    "leaf spans [{}, {}], expected width 1",
                    n.start, n.end
                )));
            }
        }
        Some((l, r)) => {
            if l.start != n.start || r.end != n.end || l.end + 1 != r.start {
                return Err(Error::Structure(format!(
                    "children of [{}, {}] do not partition it",
                    n.start, n.end
                )));
            }
            if n.direction().is_none() {
                return Err(Error::Structure(format!(
                    "head {} of [{}, {}] is not inherited from a child",
                    n.head, n.start, n.end
                )));
            }
            validate_shape(l)?;
            validate_shape(r)?;
        }
    }
    Ok(())
}

fn validate_node(n: &LexNode, sig: &GrammarSignature) -> Result<()> {
    validate_shape(n)?;
    let mut err = None;
    n.visit(&mut |m| {
        if err.is_some() {
            return;
        }
        let ok = if m.is_leaf() {
            sig.is_preterminal(m.symbol)
        } else {
            sig.is_nonterminal(m.symbol)
        };
        if !ok {
            err = Some(Error::Structure(format!(
                "symbol {} at [{}, {}] has the wrong category for a {} node",
                m.symbol,
                m.start,
                m.end,
                if m.is_leaf() { "leaf" } else { "branching" }
            )));
        }
    });
    err.map_or(Ok(()), Err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig() -> GrammarSignature {
        GrammarSignature::new(2, 2, 10).unwrap()
    }

    fn two_word_left() -> LexTree {
        LexTree::new(LexNode::branch(
            0,
            Direction::Left,
            LexNode::leaf(2, 0),
            LexNode::leaf(3, 1),
        ))
    }

    #[test]
    fn two_word_left_headed() {
        let t = two_word_left();
        t.validate(&sig()).unwrap();
        let d = t.extract_dependencies().unwrap();
        assert_eq!(d.heads(), &[None, Some(0)]);
        assert_eq!(d.root(), 0);
        assert!(t.constituent_spans().iter().all(|&s| s == (0, 1)));
    }

    #[test]
    fn non_inherited_head_is_rejected() {
        // Parent head that neither child carries.
        let broken = LexTree::new(LexNode {
            symbol: 0,
            start: 0,
            end: 2,
            head: 1,
            children: Some(Box::new((
                LexNode::leaf(2, 0),
                LexNode::branch(1, Direction::Right, LexNode::leaf(2, 1), LexNode::leaf(2, 2)),
            ))),
        });
        assert!(matches!(broken.extract_dependencies(), Err(Error::Structure(_))));
    }

    #[test]
    fn category_checks() {
        let mut t = two_word_left();
        t.root.symbol = 2;
        assert!(t.validate(&sig()).is_err());
        let mut t = two_word_left();
        t.root.children.as_mut().unwrap().0.symbol = 1;
        assert!(t.validate(&sig()).is_err());
    }

    #[test]
    fn rules_cover_every_node() {
        let t = two_word_left();
        let rules = t.rules(&sig()).unwrap();
        assert_eq!(rules.len(), 4);
        assert_eq!(
            rules[1],
            RuleInstance::Branch {
                parent: 0,
                left: 2,
                right: 3,
                direction: Direction::Left,
                head: 0,
                dependent: 1
            }
        );
    }

    #[test]
    fn left_branching_chain_spans() {
        // ((((w1 w2) w3) w4) w5), 1-based spans [1,2],[1,3],[1,4],[1,5]
        let mut node = LexNode::leaf(2, 0);
        for i in 1..5 {
            node = LexNode::branch(0, Direction::Left, node, LexNode::leaf(2, i));
        }
        let t = LexTree::new(node);
        let spans: Vec<_> = t.constituent_spans().into_iter().collect();
        assert_eq!(spans, vec![(0, 1), (0, 2), (0, 3), (0, 4)]);
    }

    #[test]
    fn symbol_names_round_trip() {
        let s = sig();
        for sym in 0..s.num_symbols() {
            assert_eq!(s.parse_symbol(&s.symbol_name(sym)).unwrap(), sym);
        }
        assert!(s.parse_symbol("NT-9").is_err());
        assert!(s.parse_symbol("X").is_err());
    }
}
