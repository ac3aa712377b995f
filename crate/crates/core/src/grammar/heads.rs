use super::bracket::BracketTree;
use super::deps::DependencyArcs;
use super::tree::{Direction, LexNode, LexTree};
use crate::error::{Error, Result};

/// Head-percolation heuristics for turning an unlexicalized binary tree into dependencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadRule {
    Left,
    Right,
    /// Head of the wider child; equal widths go to the left child.
    Large,
}

impl HeadRule {
    pub const ALL: [HeadRule; 3] = [HeadRule::Left, HeadRule::Right, HeadRule::Large];

    pub fn name(self) -> &'static str {
        match self {
            HeadRule::Left => "left",
            HeadRule::Right => "right",
            HeadRule::Large => "large",
        }
    }

    fn pick(self, left_width: usize, right_width: usize) -> Direction {
        match self {
            HeadRule::Left => Direction::Left,
            HeadRule::Right => Direction::Right,
            HeadRule::Large if right_width > left_width => Direction::Right,
            HeadRule::Large => Direction::Left,
        }
    }
}

/// Propagates heads bottom-up through a binary tree and reads off the arcs.
/// Every non-preterminal node must have exactly two children.
pub fn heuristic_head_assign(tree: &BracketTree, rule: HeadRule) -> Result<DependencyArcs> {
    let n = tree.len();
    if n < 2 {
        return Err(Error::Length { len: n, min: 2, max: usize::MAX });
    }
    let mut heads = vec![None; n];
    let mut pos = 0;
    propagate(tree, rule, &mut pos, &mut heads)?;
    DependencyArcs::new(heads)
}

// Returns (head, width) of the subtree.
fn propagate(t: &BracketTree, rule: HeadRule, pos: &mut usize, heads: &mut [Option<usize>]) -> Result<(usize, usize)> {
    if t.word.is_some() {
        *pos += 1;
        return Ok((*pos - 1, 1));
    }
    if t.children.len() != 2 {
        return Err(Error::Structure(format!(
            "node {:?} has {} children; head rules need a binary tree",
            t.label,
            t.children.len()
        )));
    }
    let (lh, lw) = propagate(&t.children[0], rule, pos, heads)?;
    let (rh, rw) = propagate(&t.children[1], rule, pos, heads)?;
    let head = match rule.pick(lw, rw) {
        Direction::Left => {
            heads[rh] = Some(lh);
            lh
        }
        Direction::Right => {
            heads[lh] = Some(rh);
            rh
        }
    };
    Ok((head, lw + rw))
}

/// Re-derives every head in a lexicalized tree from a heuristic rule,
/// keeping shape and symbols.
pub fn relabel_heads(tree: &LexTree, rule: HeadRule) -> LexTree {
    fn go(n: &LexNode, rule: HeadRule) -> LexNode {
        match n.children.as_deref() {
            None => n.clone(),
            Some((l, r)) => {
                let (l, r) = (go(l, rule), go(r, rule));
                let dir = rule.pick(l.width(), r.width());
                LexNode::branch(n.symbol, dir, l, r)
            }
        }
    }
    LexTree::new(go(&tree.root, rule))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::bracket::parse_bracketed;

    fn right_branching(n: usize) -> BracketTree {
        let mut t = BracketTree::preterminal("X", format!("w{}", n - 1));
        for i in (0..n - 1).rev() {
            t = BracketTree::node("X", vec![BracketTree::preterminal("X", format!("w{i}")), t]);
        }
        t
    }

    #[test]
    fn left_rule_on_right_branching_chains() {
        let arcs = heuristic_head_assign(&right_branching(5), HeadRule::Left).unwrap();
        assert_eq!(arcs.heads(), &[None, Some(0), Some(1), Some(2), Some(3)]);
    }

    #[test]
    fn right_rule_on_right_branching_roots_last() {
        let arcs = heuristic_head_assign(&right_branching(5), HeadRule::Right).unwrap();
        assert_eq!(arcs.root(), 4);
        assert_eq!(arcs.heads(), &[Some(4), Some(4), Some(4), Some(4), None]);
    }

    #[test]
    fn large_ties_prefer_left() {
        // ((a b) (c d)): every node is a tie
        let t = parse_bracketed("(X (X (X a) (X b)) (X (X c) (X d)))").unwrap();
        let arcs = heuristic_head_assign(&t, HeadRule::Large).unwrap();
        assert_eq!(arcs.heads(), &[None, Some(0), Some(0), Some(2)]);
        // (a (b c)): right child wider
        let t = parse_bracketed("(X (X a) (X (X b) (X c)))").unwrap();
        let arcs = heuristic_head_assign(&t, HeadRule::Large).unwrap();
        assert_eq!(arcs.heads(), &[Some(1), None, Some(1)]);
    }

    #[test]
    fn non_binary_rejected() {
        let t = parse_bracketed("(X (X a) (X b) (X c))").unwrap();
        assert!(heuristic_head_assign(&t, HeadRule::Left).is_err());
        let t = parse_bracketed("(X (Y (X a)) (X b))").unwrap();
        assert!(heuristic_head_assign(&t, HeadRule::Left).is_err());
    }
}
