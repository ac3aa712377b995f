use std::collections::HashMap;

use nlpcfg::chart::{
    enumerate_trees, inside, inside_backward, sample_tree, sample_with_retries, tree_log_score, viterbi, DenseGrammar,
    ModelGrammar, RuleSource,
};
use nlpcfg::diff::logsumexp;
use nlpcfg::grammar::{GrammarSignature, LexTree};
use nlpcfg::scoring::{FactorizationMode, LpcfgModel, ModelConfig, RuleScoreTables};
use nlpcfg::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn normalize_blocks(v: &mut [f64], block: usize) {
    for b in v.chunks_mut(block) {
        let z = logsumexp(b);
        b.iter_mut().for_each(|x| *x -= z);
    }
}

fn random_tables(n: usize, p: usize, len: usize, vocab: usize, rng: &mut impl Rng) -> RuleScoreTables {
    let s = n + p;
    let mut t = RuleScoreTables::empty(n, p, len);
    let mut fill = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x = rng.random_range(-2.0..2.0));
    fill(&mut t.root);
    fill(&mut t.head_child);
    fill(&mut t.noninherit[0]);
    fill(&mut t.noninherit[1]);
    normalize_blocks(&mut t.root, n);
    normalize_blocks(&mut t.head_child, 2 * s);
    normalize_blocks(&mut t.noninherit[0], s);
    normalize_blocks(&mut t.noninherit[1], s);
    // emission columns drawn from a full-vocabulary distribution per symbol
    for x in 0..s {
        let mut row: Vec<f64> = (0..vocab).map(|_| rng.random_range(-2.0..2.0)).collect();
        normalize_blocks(&mut row, vocab);
        for i in 0..len {
            t.emit[x * len + i] = row[rng.random_range(0..vocab)];
        }
    }
    t
}

fn enumerated(t: &RuleScoreTables) -> Vec<(LexTree, f64)> {
    let sig = t.signature(1);
    enumerate_trees(t.len, &sig)
        .unwrap()
        .into_iter()
        .map(|tree| {
            let s = tree_log_score(t, &tree).unwrap();
            (tree, s)
        })
        .collect()
}

/// Independent count of trees over `w` tokens headed at offset `p`.
fn count_headed(w: usize, p: usize, n: u128, pre: u128, memo: &mut HashMap<(usize, usize), u128>) -> u128 {
    if w == 1 {
        return pre;
    }
    if let Some(&c) = memo.get(&(w, p)) {
        return c;
    }
    let mut total = 0;
    for left in 1..w {
        let right = w - left;
        if p < left {
            let others: u128 = (0..right).map(|q| count_headed(right, q, n, pre, memo)).sum();
            total += count_headed(left, p, n, pre, memo) * others;
        } else {
            let others: u128 = (0..left).map(|q| count_headed(left, q, n, pre, memo)).sum();
            total += others * count_headed(right, p - left, n, pre, memo);
        }
    }
    let c = n * total;
    memo.insert((w, p), c);
    c
}

fn count_trees(len: usize, n: usize, p: usize) -> u128 {
    let mut memo = HashMap::new();
    (0..len).map(|h| count_headed(len, h, n as u128, p as u128, &mut memo)).sum()
}

#[test]
fn uniform_two_word_marginal() {
    let v = 5usize;
    let mut t = RuleScoreTables::empty(1, 1, 2);
    t.root.fill(0.0);
    t.emit.fill(-(v as f64).ln());
    t.head_child.fill(-(4f64).ln());
    t.noninherit[0].fill(-(2f64).ln());
    t.noninherit[1].fill(-(2f64).ln());
    let c = inside(&t).unwrap();
    let want = (1.0 / (4.0 * (v * v) as f64)).ln();
    assert!((c.log_marginal() - want).abs() < 1e-12);
}

#[test]
fn short_sentences_rejected() {
    let t = RuleScoreTables::empty(1, 1, 1);
    assert!(matches!(inside(&t), Err(Error::Length { .. })));
    assert!(matches!(viterbi(&t), Err(Error::Length { .. })));
}

#[test]
fn enumeration_counts_match_recursive_counter() {
    let sig = GrammarSignature::new(1, 1, 3).unwrap();
    assert_eq!(enumerate_trees(2, &sig).unwrap().len(), 2);
    for (n, p) in [(1, 1), (2, 2), (1, 3)] {
        let sig = GrammarSignature::new(n, p, 3).unwrap();
        for len in 2..=5 {
            let trees = enumerate_trees(len, &sig).unwrap();
            assert_eq!(trees.len() as u128, count_trees(len, n, p), "n={n} p={p} len={len}");
            for t in &trees {
                t.validate(&sig).unwrap();
            }
        }
    }
    // len=2: root label × direction × leaf labels
    let sig = GrammarSignature::new(2, 2, 3).unwrap();
    assert_eq!(enumerate_trees(2, &sig).unwrap().len(), 2 * 2 * 4);
}

#[test]
fn enumeration_trees_are_distinct() {
    let sig = GrammarSignature::new(2, 1, 3).unwrap();
    let trees = enumerate_trees(4, &sig).unwrap();
    let mut seen = std::collections::HashSet::new();
    for t in &trees {
        assert!(seen.insert(format!("{t:?}")));
    }
}

#[test]
fn enumeration_length_guard() {
    let sig = GrammarSignature::new(1, 1, 3).unwrap();
    assert!(enumerate_trees(8, &sig).is_err());
    assert!(enumerate_trees(1, &sig).is_err());
}

#[test]
fn inside_and_viterbi_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..4 {
        for len in 2..=4 {
            let t = random_tables(2, 2, len, 6, &mut rng);
            let trees = enumerated(&t);
            let scores: Vec<f64> = trees.iter().map(|(_, s)| *s).collect();
            let c = inside(&t).unwrap();
            assert!((c.log_marginal() - logsumexp(&scores)).abs() < 1e-9);
            let (tree, best) = viterbi(&t).unwrap();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!((best - max).abs() < 1e-9);
            assert!((tree_log_score(&t, &tree).unwrap() - best).abs() < 1e-9);
            assert!(best < c.log_marginal());
        }
    }
}

#[test]
fn model_tables_match_enumeration_in_every_mode() {
    for mode in FactorizationMode::ALL {
        let cfg = ModelConfig {
            num_nonterminals: 2,
            num_preterminals: 2,
            vocab_size: 6,
            dim_z: 2,
            dim_embed: 3,
            mlp_layers: [1, 1, 1],
            encoder_hidden: 3,
            mode,
            tie_word_embeddings: false,
        };
        let m = LpcfgModel::init(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let t = m.build_tables(&[0.3, -0.2], &[1, 4, 2]).unwrap();
        let scores: Vec<f64> = enumerated(&t).iter().map(|(_, s)| *s).collect();
        assert!((inside(&t).unwrap().log_marginal() - logsumexp(&scores)).abs() < 1e-9, "{mode}");
    }
}

#[test]
fn one_hot_tables_recover_unique_tree() {
    // N = {0}, P = {1, 2}; S→0, 0 always splits into (1 ←) with right child 2
    let mut t = RuleScoreTables::empty(1, 2, 2);
    let s = 3;
    t.root[0] = 0.0;
    t.emit.fill(-(3f64).ln());
    for h in 0..2 {
        let i = t.head_child_index(h, 0, 0, 1);
        t.head_child[i] = 0.0;
        for head in 0..s {
            let i = t.noninherit_index(h, 0, head, 2);
            t.noninherit[0][i] = 0.0;
            t.noninherit[1][i] = 0.0;
        }
    }
    let scores: Vec<f64> = enumerated(&t).iter().map(|(_, s)| *s).collect();
    assert_eq!(scores.iter().filter(|s| s.is_finite()).count(), 1);
    let (tree, best) = viterbi(&t).unwrap();
    assert_eq!(tree.head(), 0);
    let leaves: Vec<usize> = tree.nodes().iter().filter(|n| n.is_leaf()).map(|n| n.symbol).collect();
    assert_eq!(leaves, vec![1, 2]);
    assert!((best - inside(&t).unwrap().log_marginal()).abs() < 1e-12);
}

#[test]
fn viterbi_ties_prefer_smallest_split_and_symbols() {
    let v = 4;
    let mut t = RuleScoreTables::empty(1, 2, 3);
    t.root.fill(0.0);
    t.emit.fill(-(v as f64).ln());
    t.head_child.fill(-(6f64).ln());
    t.noninherit[0].fill(-(3f64).ln());
    t.noninherit[1].fill(-(3f64).ln());
    let (tree, _) = viterbi(&t).unwrap();
    // all trees tie: root symbol 0 at head 0, split after token 0, lowest pair
    assert_eq!(tree.head(), 0);
    let (l, r) = tree.root.children.as_deref().unwrap();
    assert_eq!((l.start, l.end, l.symbol), (0, 0, 1));
    assert_eq!((r.start, r.end, r.symbol), (1, 2, 0));
    assert_eq!(r.head, 1);
    assert_eq!(viterbi(&t).unwrap(), viterbi(&t).unwrap());
}

#[test]
fn masking_entries_never_increases_inside() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let t = random_tables(2, 2, 4, 6, &mut rng);
    let base = inside(&t).unwrap().log_marginal();
    for _ in 0..30 {
        let mut m = t.clone();
        let table = rng.random_range(0..4);
        let v = match table {
            0 => &mut m.root,
            1 => &mut m.head_child,
            2 => &mut m.noninherit[0],
            _ => &mut m.noninherit[1],
        };
        let i = rng.random_range(0..v.len());
        v[i] = f64::NEG_INFINITY;
        assert!(inside(&m).unwrap().log_marginal() <= base + 1e-12);
    }
}

#[test]
fn backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = random_tables(2, 2, 4, 6, &mut rng);
    let c = inside(&t).unwrap();
    let g = inside_backward(&t, &c);
    let h = 1e-6;
    let f = |t: &RuleScoreTables| inside(t).unwrap().log_marginal();
    let check = |get: &dyn Fn(&mut RuleScoreTables) -> &mut Vec<f64>, grad: &[f64], rng: &mut ChaCha8Rng| {
        let mut m = t.clone();
        let n = get(&mut m).len();
        for _ in 0..15 {
            let i = rng.random_range(0..n);
            let orig = get(&mut m)[i];
            get(&mut m)[i] = orig + h;
            let up = f(&m);
            get(&mut m)[i] = orig - h;
            let down = f(&m);
            get(&mut m)[i] = orig;
            let num = (up - down) / (2.0 * h);
            assert!((num - grad[i]).abs() < 1e-7, "{num} vs {}", grad[i]);
        }
    };
    check(&|m| &mut m.root, &g.root, &mut rng);
    check(&|m| &mut m.emit, &g.emit, &mut rng);
    check(&|m| &mut m.head_child, &g.head_child, &mut rng);
    check(&|m| &mut m.noninherit[0], &g.noninherit[0], &mut rng);
    check(&|m| &mut m.noninherit[1], &g.noninherit[1], &mut rng);
}

#[test]
fn gradients_are_expected_rule_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let t = random_tables(1, 2, 3, 4, &mut rng);
    let c = inside(&t).unwrap();
    let g = inside_backward(&t, &c);
    let sig = t.signature(1);
    let z = c.log_marginal();
    let mut root_counts = vec![0.0; 1];
    let mut emit_counts = vec![0.0; t.emit.len()];
    for (tree, s) in enumerated(&t) {
        let p = (s - z).exp();
        for r in tree.rules(&sig).unwrap() {
            match r {
                nlpcfg::grammar::RuleInstance::Root { symbol, head } => {
                    root_counts[symbol] += p;
                    emit_counts[t.emit_index(symbol, head)] += p;
                }
                nlpcfg::grammar::RuleInstance::Branch {
                    left,
                    right,
                    direction,
                    dependent,
                    ..
                } => {
                    let other = if direction == nlpcfg::grammar::Direction::Left { right } else { left };
                    emit_counts[t.emit_index(other, dependent)] += p;
                }
                nlpcfg::grammar::RuleInstance::Emit { .. } => {}
            }
        }
    }
    assert!((g.root[0] - root_counts[0]).abs() < 1e-10);
    for (a, b) in g.emit.iter().zip(&emit_counts) {
        assert!((a - b).abs() < 1e-10);
    }
}

fn tiny_dense(seed: u64) -> DenseGrammar {
    // N=1, P=1, |Σ|=2; stopping is likely so trees stay small
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = RuleScoreTables::empty(1, 1, 2);
    t.root[0] = 0.0;
    for x in 0..2 {
        let a: f64 = rng.random_range(0.2..0.8);
        t.emit[x * 2] = a.ln();
        t.emit[x * 2 + 1] = (1.0 - a).ln();
    }
    for w in 0..2 {
        // head child: (T ←), (N ←), (T →), (N →) with the non-terminal rare
        let hc = [0.45, 0.05, 0.45, 0.05];
        for dir in 0..2 {
            for head in 0..2 {
                let i = t.head_child_index(w, 0, dir, head);
                t.head_child[i] = (hc[dir * 2 + (1 - head)] as f64).ln();
                let j = t.noninherit_index(w, 0, head, 0);
                let q: f64 = rng.random_range(0.05..0.15);
                t.noninherit[dir][j] = q.ln();
                t.noninherit[dir][j + 1] = (1.0 - q).ln();
            }
        }
    }
    DenseGrammar::new(t)
}

#[test]
fn dense_grammar_is_normalized() {
    let g = tiny_dense(1);
    assert!(g.tables.max_normalization_error() < 1e-12);
    for a in 0..1 {
        for w in 0..2 {
            let mass: f64 = g.branch_log_probs(a, w).unwrap().iter().map(|v| v.exp()).sum();
            assert!((mass - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn samples_are_valid_trees_with_consistent_words() {
    let g = tiny_dense(2);
    let sig = g.signature();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let (s, _) = sample_with_retries(&g, 30, 100, &mut rng).unwrap();
        s.tree.validate(&sig).unwrap();
        s.tree.extract_dependencies().unwrap();
        assert_eq!(s.words.len(), s.tree.len());
    }
}

#[test]
fn sample_frequencies_match_enumerated_probabilities() {
    let g = tiny_dense(4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 40_000;
    let mut counts: HashMap<(Vec<usize>, String), usize> = HashMap::new();
    for _ in 0..draws {
        let s = sample_tree(&g, 50, &mut rng).unwrap();
        if s.words.len() <= 3 {
            *counts.entry((s.words.clone(), format!("{:?}", s.tree))).or_default() += 1;
        }
    }
    let sig = g.signature();
    let mut checked = 0;
    for len in 2..=3 {
        for code in 0..(1usize << len) {
            let words: Vec<usize> = (0..len).map(|i| (code >> i) & 1).collect();
            let t = g.sentence_tables(&words).unwrap();
            for tree in enumerate_trees(len, &sig).unwrap() {
                let p = tree_log_score(&t, &tree).unwrap().exp();
                let seen = *counts.get(&(words.clone(), format!("{tree:?}"))).unwrap_or(&0) as f64;
                let mean = draws as f64 * p;
                let sd = (draws as f64 * p * (1.0 - p)).sqrt();
                assert!((seen - mean).abs() <= 3.0 * sd + 1.0, "{words:?}: {seen} vs {mean}");
                checked += 1;
            }
        }
    }
    assert!(checked > 10);
}

#[test]
fn one_hot_grammar_always_samples_the_same_tree() {
    let mut t = RuleScoreTables::empty(1, 1, 2);
    t.root[0] = 0.0;
    t.emit[0] = 0.0; // N emits word 0
    t.emit[2 + 1] = 0.0; // T emits word 1
    for w in 0..2 {
        let i = t.head_child_index(w, 0, 1, 1);
        t.head_child[i] = 0.0;
        for head in 0..2 {
            let j = t.noninherit_index(w, 0, head, 1);
            t.noninherit[0][j] = 0.0;
            t.noninherit[1][j] = 0.0;
        }
    }
    let g = DenseGrammar::new(t);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let first = sample_tree(&g, 10, &mut rng).unwrap();
    assert_eq!(first.words, vec![1, 0]);
    for _ in 0..20 {
        assert_eq!(sample_tree(&g, 10, &mut rng).unwrap(), first);
    }
}

#[test]
fn runaway_grammar_trips_depth_guard() {
    // the only branching rule produces two non-terminals
    let mut t = RuleScoreTables::empty(1, 1, 1);
    t.root[0] = 0.0;
    t.emit.fill(0.0);
    let i = t.head_child_index(0, 0, 0, 0);
    t.head_child[i] = 0.0;
    let j = t.noninherit_index(0, 0, 0, 0);
    t.noninherit[0][j] = 0.0;
    let g = DenseGrammar::new(t);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(sample_tree(&g, 8, &mut rng), Err(Error::DepthExceeded(8))));
    assert!(matches!(sample_with_retries(&g, 8, 3, &mut rng), Err(Error::DepthExceeded(_))));
}

#[test]
fn model_grammar_agrees_with_dense_grammar() {
    let cfg = ModelConfig {
        num_nonterminals: 2,
        num_preterminals: 2,
        vocab_size: 5,
        dim_z: 2,
        dim_embed: 3,
        mlp_layers: [1, 1, 1],
        encoder_hidden: 3,
        mode: FactorizationMode::Main,
        tie_word_embeddings: false,
    };
    let m = LpcfgModel::init(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let z = vec![0.1, 0.2];
    let dense = DenseGrammar::from_model(&m, &z).unwrap();
    let lazy = ModelGrammar::new(&m, z).unwrap();
    for w in 0..5 {
        let (a, b) = (dense.branch_log_probs(1, w).unwrap(), lazy.branch_log_probs(1, w).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
    for x in 0..4 {
        let (a, b) = (dense.emission_log_probs(x).unwrap(), lazy.emission_log_probs(x).unwrap());
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn sentence_mass_is_at_most_one() {
    let g = tiny_dense(6);
    let mut total = 0.0;
    for len in 2..=5 {
        for code in 0..(1usize << len) {
            let words: Vec<usize> = (0..len).map(|i| (code >> i) & 1).collect();
            total += inside(&g.sentence_tables(&words).unwrap()).unwrap().log_marginal().exp();
        }
    }
    assert!(total <= 1.0 + 1e-12);
    assert!(total > 0.5);
}

#[test]
fn oracle_comparison_agrees_with_direct_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let t = random_tables(2, 2, 3, 5, &mut rng);
    let c = nlpcfg::chart::oracle_compare(&t).unwrap();
    let scores: Vec<f64> = enumerated(&t).into_iter().map(|(_, s)| s).collect();
    assert_eq!(c.trees, scores.len());
    assert!((c.enum_log_z - logsumexp(&scores)).abs() < 1e-12);
    assert!(c.log_z_error() < 1e-9 && c.best_error() < 1e-9);
}

#[test]
fn decode_is_viterbi_at_the_proposal_mean() {
    let cfg = ModelConfig {
        num_nonterminals: 2,
        num_preterminals: 2,
        vocab_size: 6,
        dim_z: 3,
        dim_embed: 4,
        mlp_layers: [1, 1, 1],
        encoder_hidden: 4,
        mode: FactorizationMode::Main,
        tie_word_embeddings: false,
    };
    let m = LpcfgModel::init(cfg, &mut ChaCha8Rng::seed_from_u64(72)).unwrap();
    let s = [1, 4, 2, 5];
    let (mu, _) = m.encoder().encode_values(&m.params, &s).unwrap();
    let expected = viterbi(&m.build_tables(&mu, &s).unwrap()).unwrap();
    assert_eq!(nlpcfg::chart::decode(&m, &s).unwrap(), expected);
}
