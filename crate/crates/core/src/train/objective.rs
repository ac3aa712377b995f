use rand::Rng;
use rand_distr::StandardNormal;

use crate::chart::{inside, inside_var};
use crate::diff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::grammar::MIN_SENTENCE_LEN;
use crate::scoring::LpcfgModel;

/// `KL(N(μ, diag σ) ‖ N(0, I))` with `σ` the variance:
/// `−½ (Σ (log σᵢ − σᵢ + 1) − ‖μ‖²)`.
pub fn kl_gaussian(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::Shape(format!("mu has {} entries, sigma {}", mu.len(), sigma.len())));
    }
    if let Some(s) = sigma.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::Contract(format!("variance must be positive, got {s}")));
    }
    let inner: f64 = sigma.iter().map(|&s| s.ln() - s + 1.0).sum();
    let norm: f64 = mu.iter().map(|m| m * m).sum();
    Ok(-0.5 * (inner - norm))
}

/// Standard-normal noise for `samples` draws of an `n`-dimensional vector.
pub fn draw_noise<R: Rng + ?Sized>(samples: usize, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..samples).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

/// Pieces of one sentence's objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    /// `(1/L) Σᵢ log p_{zᵢ}(x)`
    pub log_likelihood: f64,
    pub kl: f64,
}

impl ElboTerms {
    pub fn elbo(&self) -> f64 {
        self.log_likelihood - self.kl
    }
}

fn check_len(sentence: &[usize]) -> Result<()> {
    if sentence.len() < MIN_SENTENCE_LEN {
        return Err(Error::Length {
            len: sentence.len(),
            min: MIN_SENTENCE_LEN,
            max: usize::MAX,
        });
    }
    Ok(())
}

/// Records the negative ELBo of `sentence` on `tape`, with
/// `zᵢ = μ + σ^{1/2} ⊙ noise[i]`.
pub fn neg_elbo_var<'a>(
    model: &LpcfgModel,
    tape: &mut Tape<'a>,
    pv: &crate::diff::ParamVars,
    sentence: &[usize],
    noise: &[Vec<f64>],
) -> Result<(Var, ElboTerms)> {
    check_len(sentence)?;
    if noise.is_empty() {
        return Err(Error::Config("at least one Monte-Carlo sample is required".into()));
    }
    let n = model.config.dim_z;
    let (mu, logvar) = model.encoder().encode(tape, pv, sentence)?;
    let half = tape.scale(logvar, 0.5);
    let std = tape.exp(half);
    let mut total = None;
    let mut ll = 0.0;
    for eps in noise {
        if eps.len() != n {
            return Err(Error::Shape(format!("noise has {} entries, expected {n}", eps.len())));
        }
        let e = tape.leaf(Tensor::matrix(1, n, eps.clone())?);
        let se = tape.mul(std, e)?;
        let z = tape.add(mu, se)?;
        let vars = model.table_vars(tape, pv, z, sentence)?;
        let tables = model.tables_from_vars(tape, &vars, sentence.len());
        let (lp, _) = inside_var(tape, &vars, tables)?;
        ll += tape.value(lp).item();
        total = Some(match total {
            None => lp,
            Some(t) => tape.add(t, lp)?,
        });
    }
    let mean_ll = tape.scale(total.expect("nonempty"), 1.0 / noise.len() as f64);
    // KL = −½ Σ (logvar − exp(logvar) + 1 − μ²)
    let var = tape.exp(logvar);
    let a = tape.sub(logvar, var)?;
    let a = tape.add_scalar(a, 1.0);
    let mu2 = tape.mul(mu, mu)?;
    let a = tape.sub(a, mu2)?;
    let s = tape.sum(a);
    let kl = tape.scale(s, -0.5);
    let loss = tape.sub(kl, mean_ll)?;
    let terms = ElboTerms {
        log_likelihood: ll / noise.len() as f64,
        kl: tape.value(kl).item(),
    };
    Ok((loss, terms))
}

/// Negative ELBo and its gradient with respect to every parameter.
pub fn neg_elbo_grad(model: &LpcfgModel, sentence: &[usize], noise: &[Vec<f64>]) -> Result<(ElboTerms, ParamStore)> {
    neg_elbo_grad_with(model, &model.params, sentence, noise)
}

/// As [`neg_elbo_grad`] but evaluated at `params` instead of the model's own.
pub fn neg_elbo_grad_with(
    model: &LpcfgModel,
    params: &ParamStore,
    sentence: &[usize],
    noise: &[Vec<f64>],
) -> Result<(ElboTerms, ParamStore)> {
    let mut tape = Tape::new();
    let pv = params.register(&mut tape);
    let (loss, terms) = neg_elbo_var(model, &mut tape, &pv, sentence, noise)?;
    let mut grads = tape.backward(loss)?;
    Ok((terms, pv.gradients(&mut grads, params)))
}

/// Negative ELBo value only.
pub fn neg_elbo(model: &LpcfgModel, params: &ParamStore, sentence: &[usize], noise: &[Vec<f64>]) -> Result<f64> {
    let mut tape = Tape::new();
    let pv = params.register(&mut tape);
    let (loss, _) = neg_elbo_var(model, &mut tape, &pv, sentence, noise)?;
    Ok(tape.value(loss).item())
}

/// `log p_z(x)` at the proposal mean `z = μ(x)`.
pub fn point_log_likelihood(model: &LpcfgModel, sentence: &[usize]) -> Result<f64> {
    check_len(sentence)?;
    let (mu, _) = model.encoder().encode_values(&model.params, sentence)?;
    let tables = model.build_tables(&mu, sentence)?;
    Ok(inside(&tables)?.log_marginal())
}

/// `exp(−Σ log p(x) / Σ |x|)` using the point estimate at `z = μ(x)`.
pub fn perplexity(model: &LpcfgModel, sentences: &[Vec<usize>]) -> Result<f64> {
    let mut ll = 0.0;
    let mut tokens = 0usize;
    for s in sentences {
        ll += point_log_likelihood(model, s)?;
        tokens += s.len();
    }
    if tokens == 0 {
        return Err(Error::Contract("perplexity of an empty set".into()));
    }
    Ok((-ll / tokens as f64).exp())
}
