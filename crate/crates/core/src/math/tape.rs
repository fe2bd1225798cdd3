//! Reverse-mode differentiation over a recorded tape of dense matrix ops.
//!
//! Every op stores its forward value. `Tape::backward` walks the tape in
//! reverse and accumulates adjoints; gradients for parameter leaves are then
//! added into the owning [`Parameter`]s.

use std::sync::Arc;

use rand::Rng;

use super::ops;
use super::sparse::SparseMatrix;
use super::tensor::{dot, matmul_a_bt_into, matmul_at_b_into, Tensor};
use crate::error::{NrkgError, Result};

/// A learnable tensor together with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
            trainable: true,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Relu(Var),
    NormalizeRows(Var, Vec<f64>),
    RowNorms(Var),
    Gather(Var, Vec<usize>),
    ConcatRows(Var, Var),
    SparseMatMul(Arc<SparseMatrix>, Var),
    MaskMul(Var, Vec<f64>),
    Square(Var),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation. Build one per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of every node reachable from the loss.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.values()[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// A parameter leaf; `slot` identifies the parameter when gradients are collected.
    pub fn param(&mut self, slot: usize, p: &Parameter) -> Var {
        self.push(p.value.clone(), Op::Param(slot))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `x W + b` with the bias broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, m) = self.value(x).dims2();
        let bias = self.value(b);
        if bias.len() != m {
            return Err(NrkgError::Dimension(format!(
                "bias {:?} against rows of width {m}",
                bias.shape()
            )));
        }
        let mut out = self.value(x).values().to_vec();
        for row in out.chunks_mut(m) {
            for (o, bv) in row.iter_mut().zip(bias.values()) {
                *o += bv;
            }
        }
        let out = Tensor::matrix(n, m, out)?;
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).dims2(), self.value(b).dims2());
        if sa != sb {
            return Err(NrkgError::Dimension(format!("{what} of {sa:?} and {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let vals = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), vals)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let vals = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), vals)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        out.values_mut().iter_mut().for_each(|v| *v *= c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = ops::leaky_relu(self.value(x), slope);
        self.push(out, Op::LeakyRelu(x, slope))
    }

    /// `max(0, x)` elementwise.
    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.values_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let (out, norms) = ops::l2_normalize_with_norms(self.value(x))?;
        Ok(self.push(out, Op::NormalizeRows(x, norms)))
    }

    /// Euclidean norm of every row, as an `n x 1` column.
    pub fn row_norms(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (n, _) = t.dims2();
        let vals = (0..n).map(|i| dot(t.row(i), t.row(i)).sqrt()).collect();
        let out = Tensor::matrix(n, 1, vals).expect("n > 0");
        self.push(out, Op::RowNorms(x))
    }

    /// Rows of `x` selected (with repetition) by `index`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (n, m) = t.dims2();
        if index.is_empty() {
            return Err(NrkgError::EmptyBatch("gather with no indices".into()));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(NrkgError::Dimension(format!("row {bad} out of {n}")));
        }
        let mut vals = Vec::with_capacity(index.len() * m);
        for &i in index {
            vals.extend_from_slice(t.row(i));
        }
        let out = Tensor::matrix(index.len(), m, vals)?;
        Ok(self.push(out, Op::Gather(x, index.to_vec())))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.value(a).dims2();
        let (rb, cb) = self.value(b).dims2();
        if ca != cb {
            return Err(NrkgError::Dimension(format!("concat of {ra}x{ca} and {rb}x{cb}")));
        }
        let mut vals = self.value(a).values().to_vec();
        vals.extend_from_slice(self.value(b).values());
        let out = Tensor::matrix(ra + rb, ca, vals)?;
        Ok(self.push(out, Op::ConcatRows(a, b)))
    }

    /// `S x` for a constant sparse operator `S`.
    pub fn sparse_matmul(&mut self, s: Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let (n, m) = self.value(x).dims2();
        if s.cols() != n {
            return Err(NrkgError::Dimension(format!(
                "operator {}x{} against {n}x{m}",
                s.rows(),
                s.cols()
            )));
        }
        let vals = s.matmul_dense(self.value(x).values(), m);
        let out = Tensor::matrix(s.rows(), m, vals)?;
        Ok(self.push(out, Op::SparseMatMul(s, x)))
    }

    /// Elementwise product with a constant mask of the same size.
    pub fn mask_mul(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(NrkgError::Dimension(format!(
                "mask of {} against {} values",
                mask.len(),
                self.value(x).len()
            )));
        }
        let mut out = self.value(x).clone();
        out.values_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        Ok(self.push(out, Op::MaskMul(x, mask)))
    }

    /// Inverted dropout; identity outside training.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R, training: bool) -> Result<Var> {
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let mask = ops::dropout_scales(self.value(x).len(), rate, rng);
        self.mask_mul(x, mask)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.values_mut().iter_mut().for_each(|v| *v *= *v);
        self.push(out, Op::Square(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.sum() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(NrkgError::Dimension(format!(
                "backward from non-scalar {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, delta: &[f64]) {
            match &mut grads[v.0] {
                Some(g) => g.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
                slot @ None => *slot = Some(delta.to_vec()),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, k) = av.dims2();
                    let m = bv.cols();
                    let mut ga = vec![0.0; n * k];
                    matmul_a_bt_into(&g, bv.values(), &mut ga, n, m, k);
                    let mut gb = vec![0.0; k * m];
                    matmul_at_b_into(av.values(), &g, &mut gb, n, k, m);
                    acc(&mut grads, *a, &ga);
                    acc(&mut grads, *b, &gb);
                }
                Op::AddBias(x, b) => {
                    let m = self.value(*b).len();
                    let mut gb = vec![0.0; m];
                    for row in g.chunks(m) {
                        gb.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                    }
                    acc(&mut grads, *x, &g);
                    acc(&mut grads, *b, &gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, &g);
                    acc(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    acc(&mut grads, *b, &neg);
                }
                Op::Scale(a, c) => {
                    let d: Vec<f64> = g.iter().map(|v| v * c).collect();
                    acc(&mut grads, *a, &d);
                }
                Op::LeakyRelu(x, slope) => {
                    let d: Vec<f64> = self
                        .value(*x)
                        .values()
                        .iter()
                        .zip(&g)
                        .map(|(xv, gv)| if *xv >= 0.0 { *gv } else { gv * slope })
                        .collect();
                    acc(&mut grads, *x, &d);
                }
                Op::Relu(x) => {
                    let d: Vec<f64> = self
                        .value(*x)
                        .values()
                        .iter()
                        .zip(&g)
                        .map(|(xv, gv)| if *xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    acc(&mut grads, *x, &d);
                }
                Op::NormalizeRows(x, norms) => {
                    // d/dx (x / |x|) applied to g: (g - y (y . g)) / |x|
                    let y = &node.value;
                    let m = y.cols();
                    let mut d = vec![0.0; g.len()];
                    for (i, &nrm) in norms.iter().enumerate() {
                        let yr = y.row(i);
                        let gr = &g[i * m..(i + 1) * m];
                        let proj = dot(yr, gr);
                        for j in 0..m {
                            d[i * m + j] = (gr[j] - yr[j] * proj) / nrm;
                        }
                    }
                    acc(&mut grads, *x, &d);
                }
                Op::RowNorms(x) => {
                    let xv = self.value(*x);
                    let m = xv.cols();
                    let mut d = vec![0.0; xv.len()];
                    for (i, (&nrm, &gi)) in node.value.values().iter().zip(&g).enumerate() {
                        if nrm > 0.0 {
                            for j in 0..m {
                                d[i * m + j] = gi * xv.row(i)[j] / nrm;
                            }
                        }
                    }
                    acc(&mut grads, *x, &d);
                }
                Op::Gather(x, index) => {
                    let xv = self.value(*x);
                    let m = xv.cols();
                    let mut d = vec![0.0; xv.len()];
                    for (k, &i) in index.iter().enumerate() {
                        for j in 0..m {
                            d[i * m + j] += g[k * m + j];
                        }
                    }
                    acc(&mut grads, *x, &d);
                }
                Op::ConcatRows(a, b) => {
                    let split = self.value(*a).len();
                    acc(&mut grads, *a, &g[..split]);
                    acc(&mut grads, *b, &g[split..]);
                }
                Op::SparseMatMul(s, x) => {
                    let m = self.value(*x).cols();
                    let d = s.transpose_matmul_dense(&g, m);
                    acc(&mut grads, *x, &d);
                }
                Op::MaskMul(x, mask) => {
                    let d: Vec<f64> = g.iter().zip(mask).map(|(a, b)| a * b).collect();
                    acc(&mut grads, *x, &d);
                }
                Op::Square(x) => {
                    let d: Vec<f64> = self
                        .value(*x)
                        .values()
                        .iter()
                        .zip(&g)
                        .map(|(xv, gv)| 2.0 * xv * gv)
                        .collect();
                    acc(&mut grads, *x, &d);
                }
                Op::Sum(x) => {
                    let d = vec![g[0]; self.value(*x).len()];
                    acc(&mut grads, *x, &d);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).len();
                    let d = vec![g[0] / n as f64; n];
                    acc(&mut grads, *x, &d);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Adds the gradients of every parameter leaf into `params[slot].grad`.
    pub fn accumulate(&self, grads: &Gradients, params: &mut [Parameter]) {
        for (idx, node) in self.nodes.iter().enumerate().take(grads.grads.len()) {
            if let (Op::Param(slot), Some(g)) = (&node.op, &grads.grads[idx]) {
                let p = &mut params[*slot];
                p.grad.values_mut().iter_mut().zip(g).for_each(|(a, d)| *a += d);
            }
        }
    }
}

impl Gradients {
    /// Adjoint of `v`, if it is reachable from the loss.
    pub fn of(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Runs `backward` and accumulates into `params` after zeroing their grads.
pub fn backward_into(tape: &Tape, loss: Var, params: &mut [Parameter]) -> Result<()> {
    let grads = tape.backward(loss)?;
    params.iter_mut().for_each(Parameter::zero_grad);
    tape.accumulate(&grads, params);
    Ok(())
}
