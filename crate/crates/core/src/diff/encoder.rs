//! Gated recurrent proposal network producing the Gaussian over the compound vector.

use rand::Rng;

use super::params::{ParamStore, ParamVars};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderSpec {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub latent: usize,
}

/// Single-layer GRU over word embeddings. The final hidden state feeds two
/// linear heads: the mean and the log-variance of `q(z | x)`.
#[derive(Debug, Clone)]
pub struct ProposalEncoder {
    pub spec: EncoderSpec,
}

const GATES: [&str; 3] = ["z", "r", "h"];

impl ProposalEncoder {
    pub fn new(spec: EncoderSpec) -> Self {
        ProposalEncoder { spec }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        let s = self.spec;
        store.insert("enc.emb", Tensor::randn(&[s.vocab_size, s.embed_dim], 1.0, rng));
        for g in GATES {
            store.insert(format!("enc.w{g}"), Tensor::xavier_normal(s.embed_dim, s.hidden, rng));
            store.insert(format!("enc.u{g}"), Tensor::xavier_normal(s.hidden, s.hidden, rng));
            store.insert(format!("enc.b{g}"), Tensor::zeros(&[s.hidden]));
        }
        store.insert("enc.mu.w", Tensor::xavier_normal(s.hidden, s.latent, rng));
        store.insert("enc.mu.b", Tensor::zeros(&[s.latent]));
        store.insert("enc.lv.w", Tensor::xavier_normal(s.hidden, s.latent, rng));
        store.insert("enc.lv.b", Tensor::zeros(&[s.latent]));
    }

    /// Returns `(mu, log_variance)`, each `[1, latent]`.
    pub fn encode(&self, tape: &mut Tape<'_>, pv: &ParamVars, words: &[usize]) -> Result<(Var, Var)> {
        if words.is_empty() {
            return Err(Error::Contract("cannot encode an empty sentence".into()));
        }
        let s = self.spec;
        let emb = tape.gather_rows(pv.get("enc.emb")?, words)?;
        // input projections for all steps at once: [len, hidden] per gate
        let mut xw = Vec::with_capacity(3);
        for g in GATES {
            let p = tape.matmul(emb, pv.get(&format!("enc.w{g}"))?)?;
            xw.push(tape.add_row(p, pv.get(&format!("enc.b{g}"))?)?);
        }
        let (uz, ur, uh) = (pv.get("enc.uz")?, pv.get("enc.ur")?, pv.get("enc.uh")?);
        let mut h = tape.leaf(Tensor::zeros(&[1, s.hidden]));
        for t in 0..words.len() {
            let row: Vec<usize> = (t * s.hidden..(t + 1) * s.hidden).collect();
            let xz = tape.gather(xw[0], row.clone(), &[1, s.hidden])?;
            let xr = tape.gather(xw[1], row.clone(), &[1, s.hidden])?;
            let xh = tape.gather(xw[2], row, &[1, s.hidden])?;
            let hz = tape.matmul(h, uz)?;
            let a = tape.add(xz, hz)?;
            let zg = tape.sigmoid(a);
            let hr = tape.matmul(h, ur)?;
            let a = tape.add(xr, hr)?;
            let rg = tape.sigmoid(a);
            let rh = tape.mul(rg, h)?;
            let rhu = tape.matmul(rh, uh)?;
            let a = tape.add(xh, rhu)?;
            let cand = tape.tanh(a);
            // h ← h + z ⊙ (cand − h)
            let diff = tape.sub(cand, h)?;
            let step = tape.mul(zg, diff)?;
            h = tape.add(h, step)?;
        }
        let mu = tape.matmul(h, pv.get("enc.mu.w")?)?;
        let mu = tape.add_row(mu, pv.get("enc.mu.b")?)?;
        let lv = tape.matmul(h, pv.get("enc.lv.w")?)?;
        let lv = tape.add_row(lv, pv.get("enc.lv.b")?)?;
        Ok((mu, lv))
    }

    /// Plain-value `(mu, sigma)` with `sigma` the per-coordinate variance.
    pub fn encode_values(&self, store: &ParamStore, words: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let pv = store.register(&mut tape);
        let (mu, lv) = self.encode(&mut tape, &pv, words)?;
        let sigma = tape.value(lv).data().iter().map(|v| v.exp()).collect();
        Ok((tape.value(mu).data().to_vec(), sigma))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ProposalEncoder, ParamStore) {
        let enc = ProposalEncoder::new(EncoderSpec {
            vocab_size: 7,
            embed_dim: 4,
            hidden: 5,
            latent: 3,
        });
        let mut store = ParamStore::new();
        enc.init(&mut store, &mut ChaCha8Rng::seed_from_u64(2));
        (enc, store)
    }

    #[test]
    fn deterministic_and_positive() {
        let (enc, store) = setup();
        let a = enc.encode_values(&store, &[1, 4, 2]).unwrap();
        let b = enc.encode_values(&store, &[1, 4, 2]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 3);
        assert!(a.1.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn empty_input_rejected() {
        let (enc, store) = setup();
        assert!(enc.encode_values(&store, &[]).is_err());
    }
}
