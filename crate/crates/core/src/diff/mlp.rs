use rand::Rng;

use super::params::{ParamStore, ParamVars};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Shape of a residual ReLU perceptron.
///
/// Inputs whose width differs from `width` go through a linear projection
/// first. Hidden layers are taken in pairs; each pair is a block
/// `relu(W₂ relu(W₁x + b₁) + b₂) + x` (the `+ x` dropped when `residual` is
/// off). An odd trailing layer is a plain `relu(Wx + b)`. A final linear head
/// maps `width` to `out_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub width: usize,
    pub out_dim: usize,
    pub num_layers: usize,
    pub residual: bool,
}

/// A perceptron bound to a parameter-name prefix.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub prefix: String,
}

impl Mlp {
    pub fn new(spec: MlpSpec, prefix: impl Into<String>) -> Self {
        Mlp {
            spec,
            prefix: prefix.into(),
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{}", self.prefix, part)
    }

    fn has_input_proj(&self) -> bool {
        self.spec.in_dim != self.spec.width
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        let s = self.spec;
        if self.has_input_proj() {
            store.insert(self.name("in.w"), Tensor::xavier_normal(s.in_dim, s.width, rng));
            store.insert(self.name("in.b"), Tensor::zeros(&[s.width]));
        }
        for l in 0..s.num_layers {
            store.insert(self.name(&format!("l{l}.w")), Tensor::xavier_normal(s.width, s.width, rng));
            store.insert(self.name(&format!("l{l}.b")), Tensor::zeros(&[s.width]));
        }
        store.insert(self.name("out.w"), Tensor::xavier_normal(s.width, s.out_dim, rng));
        store.insert(self.name("out.b"), Tensor::zeros(&[s.out_dim]));
    }

    fn linear(&self, tape: &mut Tape<'_>, pv: &ParamVars, x: Var, part: &str) -> Result<Var> {
        let w = pv.get(&self.name(&format!("{part}.w")))?;
        let b = pv.get(&self.name(&format!("{part}.b")))?;
        let h = tape.matmul(x, w)?;
        tape.add_row(h, b)
    }

    /// Residual stack only: `[m, in_dim] → [m, width]`.
    pub fn forward_body(&self, tape: &mut Tape<'_>, pv: &ParamVars, x: Var) -> Result<Var> {
        let s = self.spec;
        let (_, cols) = tape.value(x).as_matrix()?;
        if cols != s.in_dim {
            return Err(Error::Shape(format!(
                "{}: input width {cols}, expected {}",
                self.prefix, s.in_dim
            )));
        }
        let x = if tape.value(x).shape().len() == 1 {
            tape.reshape(x, &[1, cols])?
        } else {
            x
        };
        let mut h = if self.has_input_proj() {
            self.linear(tape, pv, x, "in")?
        } else {
            x
        };
        let mut l = 0;
        while l + 1 < s.num_layers {
            let a = self.linear(tape, pv, h, &format!("l{l}"))?;
            let a = tape.relu(a);
            let a = self.linear(tape, pv, a, &format!("l{}", l + 1))?;
            let a = tape.relu(a);
            h = if s.residual { tape.add(a, h)? } else { a };
            l += 2;
        }
        if l < s.num_layers {
            let a = self.linear(tape, pv, h, &format!("l{l}"))?;
            h = tape.relu(a);
        }
        Ok(h)
    }

    /// Residual stack followed by the linear head: `[m, in_dim] → [m, out_dim]`.
    pub fn forward(&self, tape: &mut Tape<'_>, pv: &ParamVars, x: Var) -> Result<Var> {
        let h = self.forward_body(tape, pv, x)?;
        self.linear(tape, pv, h, "out")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(layers: usize) -> MlpSpec {
        MlpSpec {
            in_dim: 5,
            width: 5,
            out_dim: 3,
            num_layers: layers,
            residual: true,
        }
    }

    #[test]
    fn zero_weights_give_identity_plus_relu_zero() {
        let mlp = Mlp::new(spec(2), "f");
        let mut store = ParamStore::new();
        mlp.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
        for (_, t) in store.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::matrix(2, 5, (0..10).map(|i| i as f64 - 4.5).collect()).unwrap();
        let mut tape = Tape::new();
        let pv = store.register(&mut tape);
        let xv = tape.leaf(x.clone());
        let y = mlp.forward_body(&mut tape, &pv, xv).unwrap();
        // relu(0·relu(0·x + 0) + 0) + x = x
        assert_eq!(tape.value(y).data(), x.data());
    }

    #[test]
    fn one_block_matches_direct_formula() {
        let mlp = Mlp::new(spec(2), "f");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        mlp.init(&mut store, &mut rng);
        for name in ["f.l0.b", "f.l1.b"] {
            *store.get_mut(name).unwrap() = Tensor::randn(&[5], 0.3, &mut rng);
        }
        let x: Vec<f64> = (0..5).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut tape = Tape::new();
        let pv = store.register(&mut tape);
        let xv = tape.leaf(Tensor::vector(x.clone()));
        let y = mlp.forward_body(&mut tape, &pv, xv).unwrap();

        let lin = |w: &Tensor, b: &Tensor, v: &[f64]| -> Vec<f64> {
            (0..5)
                .map(|j| b.data()[j] + (0..5).map(|i| v[i] * w.data()[i * 5 + j]).sum::<f64>())
                .collect()
        };
        let relu = |v: Vec<f64>| v.into_iter().map(|a| a.max(0.0)).collect::<Vec<_>>();
        let h1 = relu(lin(store.get("f.l0.w").unwrap(), store.get("f.l0.b").unwrap(), &x));
        let h2 = relu(lin(store.get("f.l1.w").unwrap(), store.get("f.l1.b").unwrap(), &h1));
        for (j, got) in tape.value(y).data().iter().enumerate() {
            assert!((got - (h2[j] + x[j])).abs() < 1e-13);
        }
    }

    #[test]
    fn width_mismatch_rejected() {
        let mlp = Mlp::new(spec(2), "f");
        let mut store = ParamStore::new();
        mlp.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
        let mut tape = Tape::new();
        let pv = store.register(&mut tape);
        let xv = tape.leaf(Tensor::zeros(&[1, 4]));
        assert!(matches!(mlp.forward(&mut tape, &pv, xv), Err(Error::Shape(_))));
    }
}
