use nlpcfg::diff::{ParamStore, Tensor};
use nlpcfg::grammar::{Direction, RuleInstance};
use nlpcfg::scoring::{FactorizationMode, LpcfgModel, ModelConfig, RuleScoreTables};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(mode: FactorizationMode) -> ModelConfig {
    ModelConfig {
        num_nonterminals: 2,
        num_preterminals: 3,
        vocab_size: 7,
        dim_z: 3,
        dim_embed: 4,
        mlp_layers: [2, 3, 2],
        encoder_hidden: 5,
        mode,
        tie_word_embeddings: false,
    }
}

fn model(mode: FactorizationMode, seed: u64) -> LpcfgModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = LpcfgModel::init(config(mode), &mut rng).unwrap();
    // nonzero biases so the oracle exercises them
    for (name, t) in m.params.iter_mut() {
        if name.ends_with(".b") {
            for v in t.data_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }
    m
}

fn z(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

// ---- independent dense re-implementation ----

fn row(p: &ParamStore, name: &str, r: usize) -> Vec<f64> {
    let t = p.get(name).unwrap();
    let c = *t.shape().last().unwrap();
    t.data()[r * c..(r + 1) * c].to_vec()
}

fn linear(p: &ParamStore, prefix: &str, x: &[f64]) -> Vec<f64> {
    let w = p.get(&format!("{prefix}.w")).unwrap();
    let b = p.get(&format!("{prefix}.b")).unwrap();
    let out = w.shape()[1];
    (0..out)
        .map(|j| b.data()[j] + x.iter().enumerate().map(|(i, xi)| xi * w.data()[i * out + j]).sum::<f64>())
        .collect()
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|a| a.max(0.0)).collect()
}

fn mlp(p: &ParamStore, prefix: &str, layers: usize, x: &[f64]) -> Vec<f64> {
    let mut h = if p.contains(&format!("{prefix}.in.w")) {
        linear(p, &format!("{prefix}.in"), x)
    } else {
        x.to_vec()
    };
    let mut l = 0;
    while l + 1 < layers {
        let a = relu(linear(p, &format!("{prefix}.l{l}"), &h));
        let a = relu(linear(p, &format!("{prefix}.l{}", l + 1), &a));
        h = a.iter().zip(&h).map(|(x, y)| x + y).collect();
        l += 2;
    }
    if l < layers {
        h = relu(linear(p, &format!("{prefix}.l{l}"), &h));
    }
    linear(p, &format!("{prefix}.out"), &h)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_normalize(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

// ---- tests ----

#[test]
fn root_scores_match_direct_formula() {
    let m = model(FactorizationMode::Main, 1);
    let zv = z(2, 3);
    let t = m.build_tables(&zv, &[1, 2]).unwrap();
    let h = mlp(&m.params, "f1", 2, &cat(&[&row(&m.params, "u_start", 0), &zv]));
    let logits: Vec<f64> = (0..2).map(|a| dot(&h, &row(&m.params, "v_root", a))).collect();
    for (got, want) in t.root.iter().zip(log_normalize(&logits)) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn emission_scores_match_direct_formula_and_normalize_over_vocab() {
    let m = model(FactorizationMode::Main, 3);
    let zv = z(4, 3);
    let sentence = [6, 0, 3];
    let t = m.build_tables(&zv, &sentence).unwrap();
    let full = m.emission_table(&zv).unwrap();
    for c in 0..5 {
        let h = mlp(&m.params, "f2", 3, &cat(&[&row(&m.params, "u_sym", c), &zv]));
        let logits: Vec<f64> = (0..7).map(|w| dot(&h, &row(&m.params, "v_word", w))).collect();
        let lp = log_normalize(&logits);
        let mass: f64 = full.row(c).iter().map(|v| v.exp()).sum();
        assert!((mass - 1.0).abs() < 1e-10);
        for (i, &w) in sentence.iter().enumerate() {
            assert!((t.emit(c, i) - lp[w]).abs() < 1e-12);
        }
    }
}

#[test]
fn head_child_scores_match_direct_formula() {
    let m = model(FactorizationMode::Main, 5);
    let zv = z(6, 3);
    let sentence = [4, 2];
    let t = m.build_tables(&zv, &sentence).unwrap();
    for (h, &w) in sentence.iter().enumerate() {
        for a in 0..2 {
            let x = cat(&[&row(&m.params, "u_nt", a), &row(&m.params, "u_word", w), &zv]);
            let hid = mlp(&m.params, "f3", 2, &x);
            let mut logits = Vec::new();
            for name in ["v_head_left", "v_head_right"] {
                for b in 0..5 {
                    logits.push(dot(&hid, &row(&m.params, name, b)));
                }
            }
            let lp = log_normalize(&logits);
            for b in 0..5 {
                assert!((t.head_child(h, a, Direction::Left, b) - lp[b]).abs() < 1e-12);
                assert!((t.head_child(h, a, Direction::Right, b) - lp[5 + b]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn noninherit_scores_match_direct_formula() {
    let m = model(FactorizationMode::Main, 7);
    let zv = z(8, 3);
    let sentence = [5, 1, 1];
    let t = m.build_tables(&zv, &sentence).unwrap();
    let s = 5;
    for (h, &w) in sentence.iter().enumerate() {
        for a in 0..2 {
            let xl = cat(&[&row(&m.params, "w_nt_left", a), &row(&m.params, "w_word_left", w), &zv]);
            let xr = cat(&[&row(&m.params, "w_nt_right", a), &row(&m.params, "w_word_right", w), &zv]);
            for head in 0..s {
                // left-headed: B = head fixed, C free; pair index B*S + C
                let ll: Vec<f64> = (0..s).map(|c| dot(&xl, &row(&m.params, "v_pair", head * s + c))).collect();
                // right-headed: C = head fixed, B free; pair index B*S + C
                let lr: Vec<f64> = (0..s).map(|b| dot(&xr, &row(&m.params, "v_pair", b * s + head))).collect();
                let (pl, pr) = (log_normalize(&ll), log_normalize(&lr));
                for o in 0..s {
                    assert!((t.noninherit(Direction::Left, h, a, head, o) - pl[o]).abs() < 1e-12);
                    assert!((t.noninherit(Direction::Right, h, a, head, o) - pr[o]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn branch_rule_score_is_sum_of_lookups() {
    let m = model(FactorizationMode::Main, 9);
    let t = m.build_tables(&z(10, 3), &[1, 2, 3, 4]).unwrap();
    let r = RuleInstance::Branch {
        parent: 1,
        left: 3,
        right: 0,
        direction: Direction::Right,
        head: 3,
        dependent: 1,
    };
    let s = 5;
    let want = t.head_child[((3 * 2 + 1) * 2 + 1) * s]
        + t.noninherit[1][((3 * 2 + 1) * s) * s + 3]
        + t.emit[3 * 4 + 1];
    assert!((t.rule_score(&r).unwrap() - want).abs() < 1e-15);
}

fn branch_mass(t: &RuleScoreTables, h: usize, a: usize) -> f64 {
    let s = t.num_symbols();
    let mut total = 0.0;
    for l in 0..s {
        for r in 0..s {
            for dir in [Direction::Left, Direction::Right] {
                total += t.branch(h, a, l, r, dir).exp();
            }
        }
    }
    total
}

#[test]
fn every_mode_normalizes() {
    for mode in FactorizationMode::ALL {
        let m = model(mode, 11);
        let t = m.build_tables(&z(12, 3), &[0, 6, 2]).unwrap();
        assert!(t.max_normalization_error() < 1e-10, "{mode}");
        for h in 0..3 {
            for a in 0..2 {
                let mass = branch_mass(&t, h, a);
                assert!((mass - 1.0).abs() < 1e-8, "{mode}: {mass}");
            }
        }
    }
}

#[test]
fn main_and_fii_normalize_on_smallest_grammar() {
    for mode in [FactorizationMode::Main, FactorizationMode::FII] {
        let mut cfg = config(mode);
        cfg.num_nonterminals = 1;
        cfg.num_preterminals = 1;
        let m = LpcfgModel::init(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let t = m.build_tables(&z(1, 3), &[3, 4]).unwrap();
        assert!((branch_mass(&t, 0, 0) - 1.0).abs() < 1e-10);
    }
}

#[test]
fn fi_tables_ignore_head_word() {
    let m = model(FactorizationMode::FI, 13);
    let t = m.build_tables(&z(14, 3), &[0, 1, 2, 3, 4, 5, 6]).unwrap();
    for h in 1..7 {
        for a in 0..2 {
            for l in 0..5 {
                for r in 0..5 {
                    for dir in [Direction::Left, Direction::Right] {
                        assert_eq!(t.branch(h, a, l, r, dir), t.branch(0, a, l, r, dir));
                    }
                }
            }
        }
    }
}

#[test]
fn main_tables_depend_on_head_word() {
    let m = model(FactorizationMode::Main, 13);
    let t = m.build_tables(&z(14, 3), &[0, 1]).unwrap();
    assert_ne!(t.branch(0, 0, 1, 2, Direction::Left), t.branch(1, 0, 1, 2, Direction::Left));
}

#[test]
fn fiii_other_child_ignores_direction() {
    let m = model(FactorizationMode::FIII, 15);
    let t = m.build_tables(&z(16, 3), &[2, 5]).unwrap();
    assert_eq!(t.noninherit[0], t.noninherit[1]);
}

#[test]
fn tables_are_deterministic() {
    for mode in FactorizationMode::ALL {
        let m = model(mode, 17);
        let zv = z(18, 3);
        assert_eq!(m.build_tables(&zv, &[1, 3, 5]).unwrap(), m.build_tables(&zv, &[1, 3, 5]).unwrap());
    }
}

#[test]
fn symmetric_embeddings_give_uniform_distributions() {
    let mut m = model(FactorizationMode::Main, 19);
    for name in ["v_root", "v_word", "v_head_left", "v_head_right", "v_pair"] {
        let t = m.params.get_mut(name).unwrap();
        let c = t.shape()[1];
        let first = t.data()[..c].to_vec();
        for r in t.data_mut().chunks_mut(c) {
            r.copy_from_slice(&first);
        }
    }
    // v_head_right must equal v_head_left for a uniform 2S softmax
    let left = m.params.get("v_head_left").unwrap().clone();
    *m.params.get_mut("v_head_right").unwrap() = left;
    let t = m.build_tables(&z(20, 3), &[0, 1]).unwrap();
    for v in &t.root {
        assert!((v + 2f64.ln()).abs() < 1e-12);
    }
    for v in &t.emit {
        assert!((v + 7f64.ln()).abs() < 1e-12);
    }
    for v in &t.head_child {
        assert!((v + 10f64.ln()).abs() < 1e-12);
    }
    for v in t.noninherit.iter().flatten() {
        assert!((v + 5f64.ln()).abs() < 1e-12);
    }
}

#[test]
fn single_word_vocabulary_gives_zero_emission() {
    let mut cfg = config(FactorizationMode::Main);
    cfg.vocab_size = 1;
    cfg.num_nonterminals = 1;
    let m = LpcfgModel::init(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let t = m.build_tables(&z(1, 3), &[0, 0]).unwrap();
    assert!(t.emit.iter().all(|v| v.abs() < 1e-15));
    assert!(t.root.iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn tied_embeddings_share_one_matrix() {
    let mut cfg = config(FactorizationMode::Main);
    cfg.tie_word_embeddings = true;
    let m = LpcfgModel::init(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(m.params.contains("word_emb"));
    assert!(!m.params.contains("u_word"));
    let t = m.build_tables(&z(1, 3), &[1, 2]).unwrap();
    assert!(t.max_normalization_error() < 1e-10);
}

#[test]
fn out_of_vocabulary_word_is_rejected() {
    let m = model(FactorizationMode::Main, 1);
    assert!(m.build_tables(&z(1, 3), &[1, 7]).is_err());
    assert!(m.build_tables(&[0.0; 2], &[1, 2]).is_err());
}

#[test]
fn config_round_trips_through_metadata() {
    let cfg = config(FactorizationMode::FIII);
    assert_eq!(ModelConfig::from_meta(&cfg.to_meta()).unwrap(), cfg);
}

#[test]
fn params_are_finite() {
    for mode in FactorizationMode::ALL {
        let m = model(mode, 21);
        assert!(m.params.all_finite());
        let _: &Tensor = m.params.get("v_pair").unwrap();
    }
}

#[test]
fn checkpoint_round_trip_and_shape_check() {
    let vocab = nlpcfg::grammar::Vocab::synthetic(7);
    for mode in FactorizationMode::ALL {
        let m = model(mode, 31);
        let ck = m.to_checkpoint(&vocab, &Default::default()).unwrap();
        let ck = nlpcfg::diff::Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        let (back, v) = LpcfgModel::from_checkpoint(&ck).unwrap();
        assert_eq!(back, m);
        assert_eq!(v.tokens(), vocab.tokens());
    }
    let m = model(FactorizationMode::Main, 31);
    let mut ck = m.to_checkpoint(&vocab, &Default::default()).unwrap();
    ck.meta.insert("dim_z".into(), "4".into());
    assert!(matches!(LpcfgModel::from_checkpoint(&ck), Err(nlpcfg::Error::Shape(_))));
    assert!(m.to_checkpoint(&nlpcfg::grammar::Vocab::synthetic(6), &Default::default()).is_err());
}
