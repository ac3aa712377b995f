use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tables::RuleScoreTables;
use crate::diff::{Checkpoint, EncoderSpec, Mlp, MlpSpec, ParamStore, ParamVars, ProposalEncoder, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::grammar::{GrammarSignature, Vocab};

/// How the branching-rule probability is factorised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FactorizationMode {
    /// `p(H, dir | A, α) · p(O | A, H, α, dir)`
    #[default]
    Main,
    /// `p(B, C | A) · p(dir | A → B C)`; no head-word conditioning.
    FI,
    /// `p(B, C, dir | A, α)` in one softmax with direction-specific pair embeddings.
    FII,
    /// `p(H, dir | A, α) · p(O | A, H, α)`; the other child ignores direction.
    FIII,
}

impl FactorizationMode {
    pub const ALL: [FactorizationMode; 4] = [
        FactorizationMode::Main,
        FactorizationMode::FI,
        FactorizationMode::FII,
        FactorizationMode::FIII,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FactorizationMode::Main => "main",
            FactorizationMode::FI => "f1",
            FactorizationMode::FII => "f2",
            FactorizationMode::FIII => "f3",
        }
    }
}

impl fmt::Display for FactorizationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FactorizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "main" => Ok(FactorizationMode::Main),
            "f1" | "fi" => Ok(FactorizationMode::FI),
            "f2" | "fii" => Ok(FactorizationMode::FII),
            "f3" | "fiii" => Ok(FactorizationMode::FIII),
            other => Err(Error::Config(format!("unknown factorization {other:?}"))),
        }
    }
}

/// Shapes of every learned array.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_nonterminals: usize,
    pub num_preterminals: usize,
    pub vocab_size: usize,
    /// Compound vector size `n`.
    pub dim_z: usize,
    /// Embedding size `d`.
    pub dim_embed: usize,
    /// Hidden layers of the root, emission and head-child perceptrons.
    pub mlp_layers: [usize; 3],
    pub encoder_hidden: usize,
    pub mode: FactorizationMode,
    /// Share one word-embedding matrix across every word role.
    pub tie_word_embeddings: bool,
}

impl ModelConfig {
    pub fn num_symbols(&self) -> usize {
        self.num_nonterminals + self.num_preterminals
    }

    pub fn signature(&self) -> GrammarSignature {
        GrammarSignature {
            num_nonterminals: self.num_nonterminals,
            num_preterminals: self.num_preterminals,
            vocab_size: self.vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_nonterminals", self.num_nonterminals),
            ("num_preterminals", self.num_preterminals),
            ("vocab_size", self.vocab_size),
            ("dim_z", self.dim_z),
            ("dim_embed", self.dim_embed),
            ("encoder_hidden", self.encoder_hidden),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be at least 1")));
            }
        }
        Ok(())
    }

    fn width(&self) -> usize {
        self.dim_embed + self.dim_z
    }

    pub fn f1(&self) -> Mlp {
        Mlp::new(
            MlpSpec {
                in_dim: self.width(),
                width: self.width(),
                out_dim: self.dim_embed,
                num_layers: self.mlp_layers[0],
                residual: true,
            },
            "f1",
        )
    }

    pub fn f2(&self) -> Mlp {
        Mlp::new(
            MlpSpec {
                in_dim: self.width(),
                width: self.width(),
                out_dim: self.dim_embed,
                num_layers: self.mlp_layers[1],
                residual: true,
            },
            "f2",
        )
    }

    pub fn f3(&self) -> Mlp {
        Mlp::new(
            MlpSpec {
                in_dim: 2 * self.dim_embed + self.dim_z,
                width: self.width(),
                out_dim: self.dim_embed,
                num_layers: self.mlp_layers[2],
                residual: true,
            },
            "f3",
        )
    }

    pub fn encoder(&self) -> ProposalEncoder {
        ProposalEncoder::new(EncoderSpec {
            vocab_size: self.vocab_size,
            embed_dim: self.dim_embed,
            hidden: self.encoder_hidden,
            latent: self.dim_z,
        })
    }

    /// Parameter name backing a word-embedding role.
    pub fn word_param(&self, role: WordRole) -> &'static str {
        if self.tie_word_embeddings {
            return "word_emb";
        }
        match role {
            WordRole::HeadInput => "u_word",
            WordRole::Emission => "v_word",
            WordRole::ContextLeft => "w_word_left",
            WordRole::ContextRight => "w_word_right",
        }
    }

    /// Flat `key=value` form stored in checkpoints.
    pub fn to_meta(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("num_nonterminals".into(), self.num_nonterminals.to_string());
        m.insert("num_preterminals".into(), self.num_preterminals.to_string());
        m.insert("vocab_size".into(), self.vocab_size.to_string());
        m.insert("dim_z".into(), self.dim_z.to_string());
        m.insert("dim_embed".into(), self.dim_embed.to_string());
        m.insert(
            "mlp_layers".into(),
            format!("{},{},{}", self.mlp_layers[0], self.mlp_layers[1], self.mlp_layers[2]),
        );
        m.insert("encoder_hidden".into(), self.encoder_hidden.to_string());
        m.insert("factorization".into(), self.mode.name().into());
        m.insert("tie_word_embeddings".into(), self.tie_word_embeddings.to_string());
        m
    }

    pub fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| -> Result<&str> {
            meta.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Format(format!("checkpoint metadata lacks {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("checkpoint metadata {k} is not a count")))
        };
        let layers: Vec<usize> = get("mlp_layers")?
            .split(',')
            .map(|v| v.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format("bad mlp_layers".into()))?;
        if layers.len() != 3 {
            return Err(Error::Format("mlp_layers needs three values".into()));
        }
        let cfg = ModelConfig {
            num_nonterminals: num("num_nonterminals")?,
            num_preterminals: num("num_preterminals")?,
            vocab_size: num("vocab_size")?,
            dim_z: num("dim_z")?,
            dim_embed: num("dim_embed")?,
            mlp_layers: [layers[0], layers[1], layers[2]],
            encoder_hidden: num("encoder_hidden")?,
            mode: get("factorization")?.parse()?,
            tie_word_embeddings: get("tie_word_embeddings")? == "true",
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordRole {
    /// `u_α`, input to the head-child perceptron.
    HeadInput,
    /// `v_α`, output side of the emission softmax.
    Emission,
    /// `w_α` for left-headed non-inheriting child scores.
    ContextLeft,
    /// `w_α` for right-headed non-inheriting child scores.
    ContextRight,
}

/// Neural L-PCFG: configuration plus every learned array, including the proposal encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LpcfgModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// Tape handles of one sentence's rule tables, laid out as in [`RuleScoreTables`].
#[derive(Debug, Clone, Copy)]
pub struct TableVars {
    pub root: Var,
    pub emit: Var,
    pub head_child: Var,
    pub noninherit_left: Var,
    pub noninherit_right: Var,
}

impl LpcfgModel {
    /// Word embeddings from N(0, I); every other array Xavier-normal.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (n, s, v, d, z) = (
            config.num_nonterminals,
            config.num_symbols(),
            config.vocab_size,
            config.dim_embed,
            config.dim_z,
        );
        let mut p = ParamStore::new();
        p.insert("u_start", Tensor::xavier_normal(1, d, rng));
        p.insert("u_nt", Tensor::xavier_normal(n, d, rng));
        p.insert("u_sym", Tensor::xavier_normal(s, d, rng));
        p.insert("v_root", Tensor::xavier_normal(n, d, rng));
        p.insert("w_nt_left", Tensor::xavier_normal(n, d, rng));
        p.insert("w_nt_right", Tensor::xavier_normal(n, d, rng));
        p.insert("v_head_left", Tensor::xavier_normal(s, d, rng));
        p.insert("v_head_right", Tensor::xavier_normal(s, d, rng));
        p.insert("v_pair", Tensor::xavier_normal(s * s, 2 * d + z, rng));
        if config.mode == FactorizationMode::FII {
            p.insert("v_pair_right", Tensor::xavier_normal(s * s, 2 * d + z, rng));
        }
        if config.tie_word_embeddings {
            p.insert("word_emb", Tensor::randn(&[v, d], 1.0, rng));
        } else {
            p.insert("u_word", Tensor::randn(&[v, d], 1.0, rng));
            p.insert("w_word_left", Tensor::randn(&[v, d], 1.0, rng));
            p.insert("w_word_right", Tensor::randn(&[v, d], 1.0, rng));
            p.insert("v_word", Tensor::xavier_normal(v, d, rng));
        }
        config.f1().init(&mut p, rng);
        config.f2().init(&mut p, rng);
        config.f3().init(&mut p, rng);
        config.encoder().init(&mut p, rng);
        Ok(LpcfgModel { config, params: p })
    }

    pub fn signature(&self) -> GrammarSignature {
        self.config.signature()
    }

    pub fn encoder(&self) -> ProposalEncoder {
        self.config.encoder()
    }

    fn check_sentence(&self, sentence: &[usize]) -> Result<()> {
        if sentence.is_empty() {
            return Err(Error::Length {
                len: 0,
                min: 1,
                max: usize::MAX,
            });
        }
        if let Some(&w) = sentence.iter().find(|&&w| w >= self.config.vocab_size) {
            return Err(Error::Contract(format!(
                "word id {w} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// `log p_z(S → A)` as a `[|N|]` tape value.
    pub fn root_scores(&self, tape: &mut Tape<'_>, pv: &ParamVars, z: Var) -> Result<Var> {
        let x = tape.concat_cols(&[pv.get("u_start")?, z])?;
        let h = self.config.f1().forward(tape, pv, x)?;
        let logits = tape.matmul_nt(h, pv.get("v_root")?)?;
        let lp = tape.log_softmax(logits);
        tape.reshape(lp, &[self.config.num_nonterminals])
    }

    /// Full-vocabulary `log p_z(C → w)` as `[S, |Σ|]`.
    pub fn emission_full(&self, tape: &mut Tape<'_>, pv: &ParamVars, z: Var) -> Result<Var> {
        let s = self.config.num_symbols();
        let zb = tape.broadcast_rows(z, s)?;
        let x = tape.concat_cols(&[pv.get("u_sym")?, zb])?;
        let h = self.config.f2().forward(tape, pv, x)?;
        let logits = tape.matmul_nt(h, pv.get(self.config.word_param(WordRole::Emission))?)?;
        Ok(tape.log_softmax(logits))
    }

    /// Sentence columns of the emission table, `[S, L]`.
    pub fn emission_scores(&self, tape: &mut Tape<'_>, pv: &ParamVars, z: Var, sentence: &[usize]) -> Result<Var> {
        let full = self.emission_full(tape, pv, z)?;
        let (s, v) = (self.config.num_symbols(), self.config.vocab_size);
        let index = (0..s).flat_map(|c| sentence.iter().map(move |&w| c * v + w)).collect();
        tape.gather(full, index, &[s, sentence.len()])
    }

    fn rows_by_position(&self, sentence: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let n = self.config.num_nonterminals;
        let a_rows = sentence.iter().flat_map(|_| 0..n).collect();
        let w_rows = sentence.iter().flat_map(|&w| std::iter::repeat_n(w, n)).collect();
        (a_rows, w_rows)
    }

    /// `log p_z(H, dir | A, x_h)` as `[L, |N|, 2, S]`, one softmax over `2S` per `(h, A)`.
    pub fn head_child_scores(&self, tape: &mut Tape<'_>, pv: &ParamVars, z: Var, sentence: &[usize]) -> Result<Var> {
        let (n, s, l) = (self.config.num_nonterminals, self.config.num_symbols(), sentence.len());
        let (a_rows, w_rows) = self.rows_by_position(sentence);
        let ua = tape.gather_rows(pv.get("u_nt")?, &a_rows)?;
        let uw = tape.gather_rows(pv.get(self.config.word_param(WordRole::HeadInput))?, &w_rows)?;
        let zb = tape.broadcast_rows(z, l * n)?;
        let x = tape.concat_cols(&[ua, uw, zb])?;
        let h = self.config.f3().forward(tape, pv, x)?;
        let targets = tape.concat_rows(&[pv.get("v_head_left")?, pv.get("v_head_right")?])?;
        let logits = tape.matmul_nt(h, targets)?;
        let lp = tape.log_softmax(logits);
        tape.reshape(lp, &[l, n, 2, s])
    }

    /// Raw `[w_A; w_α; z]ᵀ v_BC` logits, `[L·|N|, S²]` in `(B, C)` order.
    fn pair_logits(&self, tape: &mut Tape<'_>, pv: &ParamVars, z: Var, sentence: &[usize], right: bool, pair: &str) -> Result<Var> {
        let (n, l) = (self.config.num_nonterminals, sentence.len());
        let (a_rows, w_rows) = self.rows_by_position(sentence);
        let (nt, role) = if right {
            ("w_nt_right", WordRole::ContextRight)
        } else {
            ("w_nt_left", WordRole::ContextLeft)
        };
        let wa = tape.gather_rows(pv.get(nt)?, &a_rows)?;
        let ww = tape.gather_rows(pv.get(self.config.word_param(role))?, &w_rows)?;
        let zb = tape.broadcast_rows(z, l * n)?;
        let x = tape.concat_cols(&[wa, ww, zb])?;
        tape.matmul_nt(x, pv.get(pair)?)
    }

    /// Reorders each `S×S` block of a flat `(B, C)`-ordered tensor into `(C, B)` order.
    fn transpose_pairs(&self, tape: &mut Tape<'_>, v: Var, blocks: usize) -> Result<Var> {
        let s = self.config.num_symbols();
        let mut index = Vec::with_capacity(blocks * s * s);
        for blk in 0..blocks {
            for c in 0..s {
                for b in 0..s {
                    index.push(blk * s * s + b * s + c);
                }
            }
        }
        tape.gather(v, index, &[blocks * s * s])
    }

    /// Non-inheriting child tables `(left, right)`, each `[L, |N|, S, S]` indexed `(head, other)`.
    pub fn noninherit_scores(&self, tape: &mut Tape<'_>, pv: &ParamVars, z: Var, sentence: &[usize]) -> Result<(Var, Var)> {
        let (n, s, l) = (self.config.num_nonterminals, self.config.num_symbols(), sentence.len());
        let shape = [l, n, s, s];
        let left = self.pair_logits(tape, pv, z, sentence, false, "v_pair")?;
        let left = tape.reshape(left, &shape)?;
        let left = tape.log_softmax(left);
        let right = self.pair_logits(tape, pv, z, sentence, true, "v_pair")?;
        let right = self.transpose_pairs(tape, right, l * n)?;
        let right = tape.reshape(right, &shape)?;
        let right = tape.log_softmax(right);
        Ok((left, right))
    }

    /// Splits joint `(B, C)`-ordered branch log-probabilities for one
    /// direction into head-child marginals `[rows, S]` and conditionals `[rows, S, S]`.
    fn split_joint(&self, tape: &mut Tape<'_>, joint: Var, rows: usize, right: bool) -> Result<(Var, Var)> {
        let s = self.config.num_symbols();
        let joint = if right {
            self.transpose_pairs(tape, joint, rows)?
        } else {
            joint
        };
        let joint = tape.reshape(joint, &[rows, s, s])?;
        let marginal = tape.logsumexp_last(joint);
        let conditional = tape.log_softmax(joint);
        Ok((marginal, conditional))
    }

    /// Repeats a per-`A` table `[|N|, k]` for every sentence position.
    fn repeat_positions(&self, tape: &mut Tape<'_>, v: Var, len: usize, tail: &[usize]) -> Result<Var> {
        let per = tape.value(v).numel();
        let index = (0..len).flat_map(|_| 0..per).collect();
        let mut shape = vec![len, self.config.num_nonterminals];
        shape.extend_from_slice(tail);
        tape.gather(v, index, &shape)
    }

    fn branch_tables_fi(&self, tape: &mut Tape<'_>, pv: &ParamVars, z: Var, len: usize) -> Result<(Var, Var, Var)> {
        let (n, s, d) = (self.config.num_nonterminals, self.config.num_symbols(), self.config.dim_embed);
        let zb = tape.broadcast_rows(z, n)?;
        let blank = tape.leaf(Tensor::zeros(&[n, d]));
        // p(B, C | A)
        let x = tape.concat_cols(&[pv.get("w_nt_left")?, blank, zb])?;
        let pair = tape.matmul_nt(x, pv.get("v_pair")?)?;
        let pair = tape.log_softmax(pair);
        // p(dir | A → B C): head-child affinities from f3 without the word
        let xa = tape.concat_cols(&[pv.get("u_nt")?, blank, zb])?;
        let ha = self.config.f3().forward(tape, pv, xa)?;
        let dl = tape.matmul_nt(ha, pv.get("v_head_left")?)?;
        let dr = tape.matmul_nt(ha, pv.get("v_head_right")?)?;
        let mut il = Vec::with_capacity(n * s * s);
        let mut ir = Vec::with_capacity(n * s * s);
        for a in 0..n {
            for b in 0..s {
                for c in 0..s {
                    il.push(a * s + b);
                    ir.push(a * s + c);
                }
            }
        }
        let dl = tape.gather(dl, il, &[n * s * s, 1])?;
        let dr = tape.gather(dr, ir, &[n * s * s, 1])?;
        let dirs = tape.concat_cols(&[dl, dr])?;
        let dirs = tape.log_softmax(dirs);
        let lidx = (0..n * s * s).map(|i| 2 * i).collect();
        let ridx = (0..n * s * s).map(|i| 2 * i + 1).collect();
        let pl = tape.gather(dirs, lidx, &[n, s * s])?;
        let pr = tape.gather(dirs, ridx, &[n, s * s])?;
        let jl = tape.add(pair, pl)?;
        let jr = tape.add(pair, pr)?;
        let (hl, nl) = self.split_joint(tape, jl, n, false)?;
        let (hr, nr) = self.split_joint(tape, jr, n, true)?;
        let hc = tape.concat_cols(&[hl, hr])?;
        let hc = self.repeat_positions(tape, hc, len, &[2, s])?;
        let nl = self.repeat_positions(tape, nl, len, &[s, s])?;
        let nr = self.repeat_positions(tape, nr, len, &[s, s])?;
        Ok((hc, nl, nr))
    }

    fn branch_tables_fii(&self, tape: &mut Tape<'_>, pv: &ParamVars, z: Var, sentence: &[usize]) -> Result<(Var, Var, Var)> {
        let (n, s, l) = (self.config.num_nonterminals, self.config.num_symbols(), sentence.len());
        let rows = l * n;
        let left = self.pair_logits(tape, pv, z, sentence, false, "v_pair")?;
        let right = self.pair_logits(tape, pv, z, sentence, true, "v_pair_right")?;
        let joint = tape.concat_cols(&[left, right])?;
        let joint = tape.log_softmax(joint);
        let ss = s * s;
        let lidx = (0..rows).flat_map(|r| (0..ss).map(move |k| r * 2 * ss + k)).collect();
        let ridx = (0..rows).flat_map(|r| (0..ss).map(move |k| r * 2 * ss + ss + k)).collect();
        let jl = tape.gather(joint, lidx, &[rows, ss])?;
        let jr = tape.gather(joint, ridx, &[rows, ss])?;
        let (hl, nl) = self.split_joint(tape, jl, rows, false)?;
        let (hr, nr) = self.split_joint(tape, jr, rows, true)?;
        let hc = tape.concat_cols(&[hl, hr])?;
        let hc = tape.reshape(hc, &[l, n, 2, s])?;
        let nl = tape.reshape(nl, &[l, n, s, s])?;
        let nr = tape.reshape(nr, &[l, n, s, s])?;
        Ok((hc, nl, nr))
    }

    fn branch_tables_fiii(&self, tape: &mut Tape<'_>, pv: &ParamVars, z: Var, sentence: &[usize]) -> Result<(Var, Var, Var)> {
        let (n, s, l) = (self.config.num_nonterminals, self.config.num_symbols(), sentence.len());
        let hc = self.head_child_scores(tape, pv, z, sentence)?;
        // (head, other) indexing shared by both directions
        let logits = self.pair_logits(tape, pv, z, sentence, false, "v_pair")?;
        let logits = tape.reshape(logits, &[l, n, s, s])?;
        let ni = tape.log_softmax(logits);
        Ok((hc, ni, ni))
    }

    /// All rule tables for one sentence and compound vector `z` (`[1, n]` on the tape).
    pub fn table_vars(&self, tape: &mut Tape<'_>, pv: &ParamVars, z: Var, sentence: &[usize]) -> Result<TableVars> {
        self.check_sentence(sentence)?;
        let root = self.root_scores(tape, pv, z)?;
        let emit = self.emission_scores(tape, pv, z, sentence)?;
        let (head_child, noninherit_left, noninherit_right) = match self.config.mode {
            FactorizationMode::Main => {
                let hc = self.head_child_scores(tape, pv, z, sentence)?;
                let (nl, nr) = self.noninherit_scores(tape, pv, z, sentence)?;
                (hc, nl, nr)
            }
            FactorizationMode::FI => self.branch_tables_fi(tape, pv, z, sentence.len())?,
            FactorizationMode::FII => self.branch_tables_fii(tape, pv, z, sentence)?,
            FactorizationMode::FIII => self.branch_tables_fiii(tape, pv, z, sentence)?,
        };
        Ok(TableVars {
            root,
            emit,
            head_child,
            noninherit_left,
            noninherit_right,
        })
    }

    /// Copies tape values into plain tables.
    pub fn tables_from_vars(&self, tape: &Tape<'_>, vars: &TableVars, len: usize) -> RuleScoreTables {
        RuleScoreTables {
            num_nonterminals: self.config.num_nonterminals,
            num_preterminals: self.config.num_preterminals,
            len,
            root: tape.value(vars.root).data().to_vec(),
            emit: tape.value(vars.emit).data().to_vec(),
            head_child: tape.value(vars.head_child).data().to_vec(),
            noninherit: [
                tape.value(vars.noninherit_left).data().to_vec(),
                tape.value(vars.noninherit_right).data().to_vec(),
            ],
        }
    }

    pub fn z_var(&self, tape: &mut Tape<'_>, z: &[f64]) -> Result<Var> {
        if z.len() != self.config.dim_z {
            return Err(Error::Shape(format!(
                "compound vector has {} entries, model expects {}",
                z.len(),
                self.config.dim_z
            )));
        }
        Ok(tape.leaf(Tensor::matrix(1, z.len(), z.to_vec())?))
    }

    /// Plain tables for a sentence at a fixed compound vector.
    pub fn build_tables(&self, z: &[f64], sentence: &[usize]) -> Result<RuleScoreTables> {
        let mut tape = Tape::new();
        let pv = self.params.register(&mut tape);
        let zv = self.z_var(&mut tape, z)?;
        let vars = self.table_vars(&mut tape, &pv, zv, sentence)?;
        Ok(self.tables_from_vars(&tape, &vars, sentence.len()))
    }

    /// Full-vocabulary emission table `[S, |Σ|]` at a fixed compound vector.
    pub fn emission_table(&self, z: &[f64]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pv = self.params.register(&mut tape);
        let zv = self.z_var(&mut tape, z)?;
        let e = self.emission_full(&mut tape, &pv, zv)?;
        Ok(tape.value(e).clone())
    }

    /// Packs the model and its vocabulary. `extra` entries are stored
    /// alongside the configuration metadata.
    pub fn to_checkpoint(&self, vocab: &Vocab, extra: &BTreeMap<String, String>) -> Result<Checkpoint> {
        if vocab.len() != self.config.vocab_size {
            return Err(Error::Shape(format!(
                "vocabulary has {} entries, model {}",
                vocab.len(),
                self.config.vocab_size
            )));
        }
        let mut meta = extra.clone();
        meta.extend(self.config.to_meta());
        meta.insert("min_count".into(), vocab.min_count().to_string());
        Ok(Checkpoint {
            meta,
            vocab: vocab.tokens().to_vec(),
            params: self.params.clone(),
        })
    }

    /// Rebuilds a model, checking every stored array against the shapes its configuration implies.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, Vocab)> {
        let config = ModelConfig::from_meta(&ck.meta)?;
        let min_count = ck.meta.get("min_count").and_then(|v| v.parse().ok()).unwrap_or(1);
        let vocab = Vocab::from_token_list(ck.vocab.clone(), min_count)?;
        if vocab.len() != config.vocab_size {
            return Err(Error::Shape(format!(
                "checkpoint vocabulary has {} entries, configuration says {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let reference = LpcfgModel::init(config.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        let (want, have) = (reference.params.names(), ck.params.names());
        if want != have {
            return Err(Error::Shape(format!("checkpoint arrays {have:?} do not match the configuration {want:?}")));
        }
        for name in &want {
            let (a, b) = (reference.params.get(name)?.shape(), ck.params.get(name)?.shape());
            if a != b {
                return Err(Error::Shape(format!("checkpoint array {name} is {b:?}, configuration needs {a:?}")));
            }
        }
        Ok((
            LpcfgModel {
                config,
                params: ck.params.clone(),
            },
            vocab,
        ))
    }
}
