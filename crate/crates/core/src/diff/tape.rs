//! Tensor-level reverse-mode differentiation.
//!
//! A [`Tape`] records every operation as a node holding its value. Nodes only
//! reference earlier nodes, so walking the node list backwards is a reverse
//! topological order and each node is visited exactly once.

use std::borrow::Cow;

use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, logsumexp, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type BackwardFn<'a> = Box<dyn Fn(&Tensor) -> Vec<Tensor> + Send + Sync + 'a>;

enum Op<'a> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    BroadcastRows(Var),
    Gather(Var, Vec<usize>),
    Reshape(Var),
    LogSoftmax(Var),
    LogSumExpLast(Var),
    Sum(Var),
    Custom(Vec<Var>, BackwardFn<'a>),
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op<'a>,
}

/// Operation recorder. Leaves may borrow their tensors, so parameters are
/// never copied onto a per-sentence tape.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of a scalar with respect to every recorded node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op<'a>) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by tape op");
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Records an owned leaf (inputs, constants, noise).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Records a borrowed leaf, typically a model parameter.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    fn zip_map(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op<'a>) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(x, y, what)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| f(*p, *q)).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(t, op))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op<'a>) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|v| f(*v)).collect();
        let t = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push(t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, "add", |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, "sub", |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, "mul", |p, q| p * q, Op::Mul(a, b))
    }

    /// `a [m,n] + row [n]`, broadcasting the row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let x = self.value(a);
        let r = self.value(row);
        let n = x.last_dim();
        if r.numel() != n {
            return Err(Error::Shape(format!(
                "add_row: row of {} for last dim {}",
                r.numel(),
                n
            )));
        }
        let mut data = x.data().to_vec();
        for chunk in data.chunks_mut(n) {
            for (v, b) in chunk.iter_mut().zip(r.data()) {
                *v += b;
            }
        }
        let t = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |v| v * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |v| v + c, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |v| v.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Contract("log of a non-positive value".into()));
        }
        Ok(self.map(a, f64::ln, Op::Log(a)))
    }

    /// `a [m,k] · b [k,n]`. A rank-1 `a` is treated as one row.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).as_matrix()?;
        let (k2, n) = self.value(b).as_matrix()?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul: [{m},{k}] x [{k2},{n}]")));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::matrix(m, n, out)?;
        Ok(self.push(t, Op::MatMul(a, b)))
    }

    /// `a [m,k] · bᵀ` for `b [n,k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).as_matrix()?;
        let (n, k2) = self.value(b).as_matrix()?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul_nt: [{m},{k}] x [{n},{k2}]^T")));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::matrix(m, n, out)?;
        Ok(self.push(t, Op::MatMulNt(a, b)))
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of nothing".into()));
        }
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| self.value(p).as_matrix())
            .collect::<Result<_>>()?;
        let m = dims[0].0;
        if dims.iter().any(|d| d.0 != m) {
            return Err(Error::Shape(format!("concat_cols row counts {dims:?}")));
        }
        let total: usize = dims.iter().map(|d| d.1).sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &(_, c)) in parts.iter().zip(&dims) {
                out.extend_from_slice(&self.value(p).data()[r * c..(r + 1) * c]);
            }
        }
        let t = Tensor::matrix(m, total, out)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec())))
    }

    /// Row-wise concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of nothing".into()));
        }
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| self.value(p).as_matrix())
            .collect::<Result<_>>()?;
        let c = dims[0].1;
        if dims.iter().any(|d| d.1 != c) {
            return Err(Error::Shape(format!("concat_rows column counts {dims:?}")));
        }
        let rows: usize = dims.iter().map(|d| d.0).sum();
        let mut out = Vec::with_capacity(rows * c);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::matrix(rows, c, out)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec())))
    }

    /// Repeats a row vector `m` times into an `[m, n]` matrix.
    pub fn broadcast_rows(&mut self, v: Var, m: usize) -> Result<Var> {
        let x = self.value(v);
        let (r, n) = x.as_matrix()?;
        if r != 1 {
            return Err(Error::Shape(format!("broadcast_rows needs one row, got {r}")));
        }
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(x.data());
        }
        let t = Tensor::matrix(m, n, out)?;
        Ok(self.push(t, Op::BroadcastRows(v)))
    }

    /// Flat index selection: `out.flat[i] = a.flat[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, a: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= x.numel()) {
            return Err(Error::Shape(format!("gather index {bad} out of {}", x.numel())));
        }
        let data = index.iter().map(|&i| x.data()[i]).collect();
        let t = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(t, Op::Gather(a, index)))
    }

    /// Selects whole rows of a matrix (embedding lookup).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = self.value(a).as_matrix()?;
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::Shape(format!("row {bad} out of {r}")));
        }
        let index = rows.iter().flat_map(|&i| (i * c)..((i + 1) * c)).collect();
        self.gather(a, index, &[rows.len(), c])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.last_dim();
        let mut data = x.data().to_vec();
        for chunk in data.chunks_mut(n) {
            let z = logsumexp(chunk);
            chunk.iter_mut().for_each(|v| *v -= z);
        }
        let t = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::LogSoftmax(a))
    }

    /// Log-sum-exp over the last axis, dropping it.
    pub fn logsumexp_last(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.last_dim();
        let data: Vec<f64> = x.data().chunks(n).map(logsumexp).collect();
        let shape = match x.shape() {
            [] => vec![],
            s => s[..s.len() - 1].to_vec(),
        };
        let t = Tensor::new(shape, data).expect("shape");
        self.push(t, Op::LogSumExpLast(a))
    }

    /// Log-sum-exp over every element, as a scalar.
    pub fn logsumexp_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        let flat = self.reshape(a, &[n])?;
        Ok(self.logsumexp_last(flat))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Records an externally computed value with a hand-written vector-Jacobian
    /// product. `backward` receives the output gradient and returns one
    /// gradient per input, in order.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, backward: BackwardFn<'a>) -> Var {
        self.push(value, Op::Custom(inputs.to_vec(), backward))
    }

    /// Reverse sweep from a scalar.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = &*node.value;
        let mut acc = |v: Var, t: Tensor| {
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let like = |v: Var, data: Vec<f64>| Tensor::new(self.value(v).shape().to_vec(), data).expect("shape");
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, like(*a, g.data().to_vec()));
                acc(*b, like(*b, g.data().to_vec()));
            }
            Op::Sub(a, b) => {
                acc(*a, like(*a, g.data().to_vec()));
                acc(*b, like(*b, g.data().iter().map(|v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (x, z) = (self.value(*a), self.value(*b));
                acc(*a, like(*a, g.data().iter().zip(z.data()).map(|(p, q)| p * q).collect()));
                acc(*b, like(*b, g.data().iter().zip(x.data()).map(|(p, q)| p * q).collect()));
            }
            Op::AddRow(a, r) => {
                acc(*a, like(*a, g.data().to_vec()));
                let n = y.last_dim();
                let mut col = vec![0.0; n];
                for chunk in g.data().chunks(n) {
                    col.iter_mut().zip(chunk).for_each(|(c, v)| *c += v);
                }
                acc(*r, like(*r, col));
            }
            Op::Scale(a, c) => acc(*a, like(*a, g.data().iter().map(|v| v * c).collect())),
            Op::AddScalar(a) | Op::Reshape(a) => acc(*a, like(*a, g.data().to_vec())),
            Op::Relu(a) => {
                let x = self.value(*a);
                acc(
                    *a,
                    like(*a, g.data().iter().zip(x.data()).map(|(d, v)| if *v > 0.0 { *d } else { 0.0 }).collect()),
                );
            }
            Op::Sigmoid(a) => acc(
                *a,
                like(*a, g.data().iter().zip(y.data()).map(|(d, s)| d * s * (1.0 - s)).collect()),
            ),
            Op::Tanh(a) => acc(
                *a,
                like(*a, g.data().iter().zip(y.data()).map(|(d, t)| d * (1.0 - t * t)).collect()),
            ),
            Op::Exp(a) => acc(*a, like(*a, g.data().iter().zip(y.data()).map(|(d, e)| d * e).collect())),
            Op::Log(a) => {
                let x = self.value(*a);
                acc(*a, like(*a, g.data().iter().zip(x.data()).map(|(d, v)| d / v).collect()));
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).as_matrix()?;
                let (_, n) = self.value(*b).as_matrix()?;
                let mut da = vec![0.0; m * k];
                gemm_nt_acc(g.data(), self.value(*b).data(), &mut da, m, n, k);
                let mut db = vec![0.0; k * n];
                gemm_tn_acc(self.value(*a).data(), g.data(), &mut db, m, k, n);
                acc(*a, like(*a, da));
                acc(*b, like(*b, db));
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.value(*a).as_matrix()?;
                let (n, _) = self.value(*b).as_matrix()?;
                let mut da = vec![0.0; m * k];
                gemm_acc(g.data(), self.value(*b).data(), &mut da, m, n, k);
                let mut db = vec![0.0; n * k];
                gemm_tn_acc(g.data(), self.value(*a).data(), &mut db, m, n, k);
                acc(*a, like(*a, da));
                acc(*b, like(*b, db));
            }
            Op::ConcatCols(parts) => {
                let (m, total) = y.as_matrix()?;
                let mut off = 0;
                for &p in parts {
                    let (_, c) = self.value(p).as_matrix()?;
                    let mut d = Vec::with_capacity(m * c);
                    for r in 0..m {
                        d.extend_from_slice(&g.data()[r * total + off..r * total + off + c]);
                    }
                    off += c;
                    acc(p, like(p, d));
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    acc(p, like(p, g.data()[off..off + n].to_vec()));
                    off += n;
                }
            }
            Op::BroadcastRows(v) => {
                let n = y.last_dim();
                let mut col = vec![0.0; n];
                for chunk in g.data().chunks(n) {
                    col.iter_mut().zip(chunk).for_each(|(c, v)| *c += v);
                }
                acc(*v, like(*v, col));
            }
            Op::Gather(a, index) => {
                let mut d = vec![0.0; self.value(*a).numel()];
                for (gv, &i) in g.data().iter().zip(index) {
                    d[i] += gv;
                }
                acc(*a, like(*a, d));
            }
            Op::LogSoftmax(a) => {
                let n = y.last_dim();
                let mut d = Vec::with_capacity(y.numel());
                for (gy, ly) in g.data().chunks(n).zip(y.data().chunks(n)) {
                    let s: f64 = gy.iter().sum();
                    d.extend(gy.iter().zip(ly).map(|(gi, li)| gi - li.exp() * s));
                }
                acc(*a, like(*a, d));
            }
            Op::LogSumExpLast(a) => {
                let x = self.value(*a);
                let n = x.last_dim();
                let mut d = Vec::with_capacity(x.numel());
                for ((row, gv), lse) in x.data().chunks(n).zip(g.data()).zip(y.data()) {
                    d.extend(row.iter().map(|v| gv * (v - lse).exp()));
                }
                acc(*a, like(*a, d));
            }
            Op::Sum(a) => {
                let gv = g.item();
                acc(*a, Tensor::full(self.value(*a).shape(), gv));
            }
            Op::Custom(inputs, f) => {
                let gs = f(g);
                if gs.len() != inputs.len() {
                    return Err(Error::Contract("custom op returned wrong gradient count".into()));
                }
                for (&v, t) in inputs.iter().zip(gs) {
                    same_shape(self.value(v), &t, "custom op gradient")?;
                    acc(v, t);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k) = a.as_matrix().unwrap();
        let (_, n) = b.as_matrix().unwrap();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn log_softmax_of_constant_is_uniform() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![2.5; 3]));
        let y = t.log_softmax(x);
        for v in t.value(y).data() {
            assert!((v + 3f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[4, 2], 1.0, &mut rng);
        let mut t = Tape::new();
        let (va, vb) = (t.leaf(a.clone()), t.leaf(b.clone()));
        let c = t.matmul(va, vb).unwrap();
        for (x, y) in t.value(c).data().iter().zip(naive_matmul(&a, &b)) {
            assert!((x - y).abs() < 1e-12);
        }
        let bt = Tensor::matrix(2, 4, (0..8).map(|i| b.data()[(i % 4) * 2 + i / 4]).collect()).unwrap();
        let vbt = t.leaf(bt);
        let c2 = t.matmul_nt(va, vbt).unwrap();
        assert_eq!(t.value(c2).shape(), &[3, 2]);
        for (x, y) in t.value(c2).data().iter().zip(t.value(c).data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(&[2, 3]));
        let b = t.leaf(Tensor::zeros(&[2, 2]));
        assert!(matches!(t.matmul(a, b), Err(Error::Shape(_))));
        assert!(matches!(t.add(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn log_softmax_entry_gradient_closed_form() {
        let xs = vec![0.3, -1.2, 2.0, 0.7];
        let k = 2;
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(xs.clone()));
        let y = t.log_softmax(x);
        let pick = t.gather(y, vec![k], &[]).unwrap();
        let g = t.backward(pick).unwrap();
        let z: f64 = xs.iter().map(|v| v.exp()).sum();
        for (i, gi) in g.get(x).unwrap().data().iter().enumerate() {
            let expect = if i == k { 1.0 } else { 0.0 } - xs[i].exp() / z;
            assert!((gi - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn gradients_accumulate_over_reuse() {
        // f = sum(x * x) + sum(x) → df/dx = 2x + 1
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.5, -0.5]));
        let sq = t.mul(x, x).unwrap();
        let a = t.sum(sq);
        let b = t.sum(x);
        let f = t.add(a, b).unwrap();
        let g = t.backward(f).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[4.0, 0.0]);
    }
}
