use std::collections::BTreeSet;

use nlpcfg::corpus::{
    build_corpus, filter_punctuation, load_gold, load_text, parse_gold, parse_text, prune_tree, reattach, Corpus,
    IngestOptions, PunctuationSet, RawText, Split, VocabPolicy,
};
use nlpcfg::grammar::{parse_bracketed, DependencyArcs, UNK_TOKEN};
use nlpcfg::Error;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn raw(lines: &[&str]) -> RawText {
    RawText::from_lines(lines.iter().map(|l| l.split_whitespace().map(str::to_string).collect()).collect())
}

fn opts(split: Split, vocab: VocabPolicy, punctuation: Option<PunctuationSet>) -> IngestOptions {
    IngestOptions {
        split,
        vocab,
        punctuation,
    }
}

#[test]
fn short_sentences_are_dropped_and_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "t.txt", "a b\na\n");
    let r = load_text(&p, Split::Train, VocabPolicy::Build { min_count: 1 }).unwrap();
    assert_eq!(r.corpus.len(), 1);
    assert_eq!(r.report.too_short, vec![1]);
    assert_eq!((r.report.read, r.report.kept()), (2, 1));
    assert_eq!(r.corpus.origin, vec![0]);
}

#[test]
fn rare_tokens_map_to_unk_and_ids_round_trip() {
    let r = build_corpus(raw(&["a b a", "b c a"]), None, &opts(Split::Train, VocabPolicy::Build { min_count: 2 }, None))
        .unwrap();
    let v = &r.vocab;
    assert_eq!(v.id("c"), v.unk_id());
    assert!(!v.contains("c"));
    assert_eq!(r.corpus.sentences[1][1], v.unk_id());
    let ids = v.encode(&["a", "b"]);
    assert_eq!(v.encode(&v.decode(&ids)), ids);
    // ids are a bijection onto [0, |V|) with unk at 0
    let set: BTreeSet<usize> = v.tokens().iter().map(|t| v.id(t)).collect();
    assert_eq!(set, (0..v.len()).collect());
    assert_eq!(v.token(0), UNK_TOKEN);
}

#[test]
fn dev_split_uses_the_train_vocabulary() {
    let train = build_corpus(raw(&["a b", "a b"]), None, &opts(Split::Train, VocabPolicy::Build { min_count: 1 }, None))
        .unwrap();
    let dev = build_corpus(raw(&["a z"]), None, &opts(Split::Dev, VocabPolicy::Fixed(train.vocab.clone()), None)).unwrap();
    assert_eq!(dev.corpus.sentences[0], vec![train.vocab.id("a"), 0]);
    let err = build_corpus(raw(&["a z"]), None, &opts(Split::Dev, VocabPolicy::Build { min_count: 1 }, None));
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn empty_and_malformed_files_error() {
    assert!(matches!(parse_text("\n  \n", "e.txt"), Err(Error::Format(_))));
    assert!(matches!(parse_text("a b\nc \u{0} d\n", "m.txt"), Err(Error::Parse { line: 2, .. })));
    let t = parse_text("a b\n\nc d\n", "x").unwrap();
    assert_eq!(t.line_numbers, vec![0, 2]);
}

#[test]
fn gold_tree_and_dependencies_load() {
    let dir = tempfile::tempdir().unwrap();
    let tree = "(S (NP (DT the) (NN dog)) (VP (VBZ is) (VP (VBG chasing) (NP (DT the) (NN cat)))))\n";
    let deps = "1\tthe\t2\n2\tdog\t4\n3\tis\t4\n4\tchasing\t0\n5\tthe\t6\n6\tcat\t4\n\n";
    let g = load_gold(Some(&write(&dir, "g.tree", tree)), Some(&write(&dir, "g.dep", deps))).unwrap();
    let t = &g.trees.as_ref().unwrap()[0];
    assert_eq!(t.len(), 6);
    assert!(t.constituent_spans().iter().all(|&(_, j)| j < 6));
    assert!(t.constituent_spans().contains(&(0, 5)));
    let arcs = &g.deps.as_ref().unwrap()[0];
    assert_eq!(arcs.root(), 3);
    assert_eq!(arcs.to_one_based(), vec![2, 4, 4, 0, 6, 4]);

    let text = write(&dir, "t.txt", "the dog is chasing the cat\n");
    let r = build_corpus(
        nlpcfg::corpus::read_text(&text).unwrap(),
        Some(g),
        &opts(Split::Test, VocabPolicy::Fixed(nlpcfg::grammar::Vocab::synthetic(3)), None),
    )
    .unwrap();
    assert_eq!(r.corpus.nonprojective, vec![false]);
}

#[test]
fn gold_errors() {
    assert!(parse_gold(Some(("(S (A a) (B b)", "t")), None).is_err());
    let bad_head = "1\ta\t3\n2\tb\t0\n";
    assert!(parse_gold(None, Some((bad_head, "d"))).is_err());
    let g = parse_gold(Some(("(S (A a) (B b))", "t")), None).unwrap();
    let err = build_corpus(raw(&["a b c"]), Some(g.clone()), &opts(Split::Test, VocabPolicy::Build { min_count: 1 }, None));
    assert!(matches!(err, Err(Error::Alignment(_))));
    let err = build_corpus(raw(&["a b", "a b"]), Some(g), &opts(Split::Test, VocabPolicy::Build { min_count: 1 }, None));
    assert!(matches!(err, Err(Error::Alignment(_))));
    let mismatch = parse_gold(Some(("(S (A a) (B b))", "t")), Some(("1\ta\t0\n2\tc\t1\n", "d")));
    assert!(matches!(mismatch, Err(Error::Alignment(_))));
}

#[test]
fn nonprojective_gold_is_kept_and_flagged() {
    // 1→3, 2→4 cross
    let g = parse_gold(None, Some(("1\ta\t3\n2\tb\t4\n3\tc\t0\n4\td\t3\n", "d"))).unwrap();
    let r = build_corpus(raw(&["a b c d"]), Some(g), &opts(Split::Train, VocabPolicy::Build { min_count: 1 }, None))
        .unwrap();
    assert_eq!(r.corpus.nonprojective, vec![true]);
}

fn gold_corpus(tree: &str, heads: &[usize]) -> Corpus {
    let t = parse_bracketed(tree).unwrap();
    let words: Vec<String> = t.words().iter().map(|s| s.to_string()).collect();
    let mut deps = String::new();
    for (i, (w, h)) in words.iter().zip(heads).enumerate() {
        deps.push_str(&format!("{}\t{}\t{}\n", i + 1, w, h));
    }
    let g = parse_gold(Some((tree, "t")), Some((&deps, "d"))).unwrap();
    build_corpus(
        RawText::from_lines(vec![words]),
        Some(g),
        &opts(Split::Train, VocabPolicy::Build { min_count: 1 }, None),
    )
    .unwrap()
    .corpus
}

#[test]
fn trailing_period_is_removed() {
    let c = gold_corpus("(S (NP (DT the) (NN dog)) (VP (VBZ barks)) (. .))", &[2, 3, 0, 3]);
    let (f, dropped) = filter_punctuation(&c, &PunctuationSet::default()).unwrap();
    assert!(dropped.is_empty());
    assert_eq!(f.tokens[0], vec!["the", "dog", "barks"]);
    assert_eq!(f.gold_deps.as_ref().unwrap()[0].to_one_based(), vec![2, 3, 0]);
    let spans = f.gold_trees.as_ref().unwrap()[0].constituent_spans();
    assert_eq!(spans, BTreeSet::from([(0, 1), (0, 2)]));
    assert_eq!(f.sentences[0].len(), 3);
}

#[test]
fn punctuation_free_sentence_is_unchanged() {
    let c = gold_corpus("(S (NP (DT the) (NN dog)) (VBZ barks))", &[2, 3, 0]);
    let (f, dropped) = filter_punctuation(&c, &PunctuationSet::default()).unwrap();
    assert!(dropped.is_empty());
    assert_eq!(f, c);
}

#[test]
fn dependents_of_punctuation_reattach_to_its_head() {
    // a , b c : a→, ; ,→c ; b→c ; c root
    let c = gold_corpus("(S (X (A a) (P ,) (B b)) (C c))", &[2, 4, 4, 0]);
    let (f, _) = filter_punctuation(&c, &PunctuationSet::default()).unwrap();
    assert_eq!(f.tokens[0], vec!["a", "b", "c"]);
    assert_eq!(f.gold_deps.as_ref().unwrap()[0].to_one_based(), vec![3, 3, 0]);
    assert_eq!(f.gold_trees.as_ref().unwrap()[0].to_bracketed(), "(S (X (A a) (B b)) (C c))");
}

#[test]
fn punctuation_root_hands_over_to_leftmost_survivor() {
    // x y ! : x→! ; y→! ; ! root
    let c = gold_corpus("(S (X x) (Y y) (P !))", &[3, 3, 0]);
    let (f, _) = filter_punctuation(&c, &PunctuationSet::default()).unwrap();
    assert_eq!(f.gold_deps.as_ref().unwrap()[0].to_one_based(), vec![0, 1]);
    // chain through two removed tokens: a→, ; ,→. ; . root ; b→a
    let arcs = DependencyArcs::from_one_based(&[2, 3, 0, 1]).unwrap();
    let r = reattach(&arcs, &[true, false, false, true]).unwrap().unwrap();
    assert_eq!(r.to_one_based(), vec![0, 1]);
}

#[test]
fn sentences_reduced_below_two_are_dropped() {
    let c = gold_corpus("(S (X x) (P .) (Q ,))", &[0, 1, 1]);
    let (f, dropped) = filter_punctuation(&c, &PunctuationSet::default()).unwrap();
    assert!(f.is_empty());
    assert_eq!(dropped, vec![0]);
}

#[test]
fn head_annotations_follow_their_token() {
    let t = parse_bracketed("(S[3] (A a) (P ,) (B b))").unwrap();
    assert_eq!(prune_tree(&t, &[true, false, true]).unwrap().head, Some(1));
    let t = parse_bracketed("(S[2] (A a) (P ,) (B b))").unwrap();
    assert_eq!(prune_tree(&t, &[true, false, true]).unwrap().head, None);
}

#[test]
fn custom_punctuation_set() {
    let p = PunctuationSet::parse("# comment\n#\n%%\n\n");
    assert!(p.contains("#") && p.contains("%%") && !p.contains("."));
    let r = build_corpus(raw(&["a %% b .", "%% c"]), None, &opts(Split::Train, VocabPolicy::Build { min_count: 1 }, Some(p)))
        .unwrap();
    assert_eq!(r.corpus.tokens, vec![vec!["a", "b", "."]]);
    assert_eq!(r.report.too_short, vec![1]);
    assert!(!r.vocab.contains("%%"));
}

#[test]
fn filtering_is_idempotent_on_random_sentences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pool = ["a", "b", "c", ".", ",", "``", "-LRB-", "d"];
    let punct = PunctuationSet::default();
    for _ in 0..200 {
        let n = rng.random_range(2..9);
        let words: Vec<&str> = (0..n).map(|_| *pool.choose(&mut rng).unwrap()).collect();
        // right-branching gold tree and a random tree of arcs
        let mut tree = format!("(T {})", words[n - 1]);
        for w in words[..n - 1].iter().rev() {
            tree = format!("(X (T {w}) {tree})");
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut heads = vec![0; n];
        for k in 1..n {
            heads[order[k]] = order[rng.random_range(0..k)] + 1;
        }
        let c = gold_corpus(&tree, &heads);
        let (once, _) = filter_punctuation(&c, &punct).unwrap();
        let (twice, dropped) = filter_punctuation(&once, &punct).unwrap();
        assert!(dropped.is_empty());
        assert_eq!(once, twice);
        once.validate().unwrap();
        for t in &once.tokens {
            assert!(t.iter().all(|w| !punct.contains(w)));
        }
    }
}
