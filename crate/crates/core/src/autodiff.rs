//! Tape-based reverse-mode differentiation over flat `f64` buffers.
//!
//! Every node holds a flat vector; shapes are a convention of the caller
//! (row-major). Nodes are appended in evaluation order, so the tape is
//! topologically sorted by construction and [`Tape::backward`] is a single
//! reverse sweep.
//!
//! ```
//! use fluxcube_core::autodiff::Tape;
//!
//! let mut tape = Tape::new();
//! let x = tape.input(vec![3.0]);
//! let y = tape.mul(x, x);
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x), &[6.0]);
//! ```

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::dynamics::{sigmoid, softplus};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Adds a scalar or elementwise constant.
    Shift(Var),
    /// Elementwise product with a constant; also serves as a masked select.
    MulConst(Var, Arc<[f64]>),
    /// `w` is `rows x cols` row-major, `x` has `cols` entries.
    MatVec { w: Var, x: Var, rows: usize, cols: usize },
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Softplus(Var),
    Sin(Var),
    Cos(Var),
    Gather(Var, Arc<[usize]>),
    /// Sums consecutive runs of `width` entries.
    SumChunks(Var, usize),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Vec<f64>,
}

/// Records primitive operations and their values for one backward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; all zeros when `var` did
    /// not influence the loss.
    pub fn get(&self, var: Var) -> &[f64] {
        &self.grads[var.0]
    }

    pub fn take(&mut self, var: Var) -> Vec<f64> {
        core::mem::take(&mut self.grads[var.0])
    }
}

fn map(values: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    values.iter().map(|v| f(*v)).collect()
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &[f64] {
        &self.nodes[var.0].value
    }

    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value[0]
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, var: Var) -> &[f64] {
        &self.nodes[var.0].value
    }

    /// A leaf: parameters and constants alike.
    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(Op::Input, value)
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (x, y) = (self.val(a), self.val(b));
        assert_eq!(x.len(), y.len(), "elementwise operands differ in length");
        x.iter().zip(y).map(|(p, q)| f(*p, *q)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |p, q| p + q);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |p, q| p - q);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |p, q| p * q);
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = map(self.val(a), |x| x * c);
        self.push(Op::Scale(a, c), v)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let v = map(self.val(a), |x| x + c);
        self.push(Op::Shift(a), v)
    }

    pub fn mul_const(&mut self, a: Var, c: Arc<[f64]>) -> Var {
        assert_eq!(self.val(a).len(), c.len());
        let v = self.val(a).iter().zip(c.iter()).map(|(x, y)| x * y).collect();
        self.push(Op::MulConst(a, c), v)
    }

    pub fn add_const(&mut self, a: Var, c: Arc<[f64]>) -> Var {
        assert_eq!(self.val(a).len(), c.len());
        let v = self.val(a).iter().zip(c.iter()).map(|(x, y)| x + y).collect();
        self.push(Op::Shift(a), v)
    }

    pub fn matvec(&mut self, w: Var, x: Var, rows: usize, cols: usize) -> Var {
        let (wv, xv) = (self.val(w), self.val(x));
        assert_eq!(wv.len(), rows * cols);
        assert_eq!(xv.len(), cols);
        let v = (0..rows)
            .map(|r| wv[r * cols..(r + 1) * cols].iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        self.push(Op::MatVec { w, x, rows, cols }, v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = map(self.val(a), libm::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = map(self.val(a), |x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = map(self.val(a), libm::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = map(self.val(a), softplus);
        self.push(Op::Softplus(a), v)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let v = map(self.val(a), libm::sin);
        self.push(Op::Sin(a), v)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let v = map(self.val(a), libm::cos);
        self.push(Op::Cos(a), v)
    }

    /// `out[m] = a[index[m]]`; indices may repeat (broadcast).
    pub fn gather(&mut self, a: Var, index: Arc<[usize]>) -> Var {
        let src = self.val(a);
        let v = index.iter().map(|&i| src[i]).collect();
        self.push(Op::Gather(a, index), v)
    }

    pub fn sum_chunks(&mut self, a: Var, width: usize) -> Var {
        let src = self.val(a);
        assert!(width > 0 && src.len() % width == 0);
        let v = src.chunks(width).map(|c| c.iter().sum()).collect();
        self.push(Op::SumChunks(a, width), v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = vec![self.val(a).iter().sum()];
        self.push(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let src = self.val(a);
        let v = vec![src.iter().sum::<f64>() / src.len() as f64];
        self.push(Op::Mean(a), v)
    }

    pub fn concat(&mut self, parts: Vec<Var>) -> Var {
        let mut v = Vec::new();
        for p in &parts {
            v.extend_from_slice(self.val(*p));
        }
        self.push(Op::Concat(parts), v)
    }

    /// Propagates `d loss / d node` to every node recorded before `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let len = self.nodes[loss.0].value.len();
        if len != 1 {
            return Err(Error::NonScalarLoss(len));
        }
        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        grads[loss.0][0] = 1.0;
        for id in (0..=loss.0).rev() {
            let g = core::mem::take(&mut grads[id]);
            if g.iter().all(|v| *v == 0.0) {
                grads[id] = g;
                continue;
            }
            let node = &self.nodes[id];
            match &node.op {
                Op::Input => {}
                Op::Add(a, b) => {
                    axpy(&mut grads[a.0], 1.0, &g);
                    axpy(&mut grads[b.0], 1.0, &g);
                }
                Op::Sub(a, b) => {
                    axpy(&mut grads[a.0], 1.0, &g);
                    axpy(&mut grads[b.0], -1.0, &g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.val(*a), self.val(*b));
                    for (i, gi) in g.iter().enumerate() {
                        grads[a.0][i] += gi * bv[i];
                    }
                    for (i, gi) in g.iter().enumerate() {
                        grads[b.0][i] += gi * av[i];
                    }
                }
                Op::Scale(a, c) => axpy(&mut grads[a.0], *c, &g),
                Op::Shift(a) => axpy(&mut grads[a.0], 1.0, &g),
                Op::MulConst(a, c) => {
                    for (i, gi) in g.iter().enumerate() {
                        grads[a.0][i] += gi * c[i];
                    }
                }
                Op::MatVec { w, x, rows, cols } => {
                    let (wv, xv) = (self.val(*w), self.val(*x));
                    for r in 0..*rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        let gw = &mut grads[w.0][r * cols..(r + 1) * cols];
                        for (c, slot) in gw.iter_mut().enumerate() {
                            *slot += gr * xv[c];
                        }
                        let gx = &mut grads[x.0];
                        for (c, slot) in gx.iter_mut().enumerate() {
                            *slot += gr * wv[r * cols + c];
                        }
                    }
                }
                Op::Tanh(a) => {
                    for (i, gi) in g.iter().enumerate() {
                        let y = node.value[i];
                        grads[a.0][i] += gi * (1.0 - y * y);
                    }
                }
                Op::Relu(a) => {
                    let av = self.val(*a);
                    for (i, gi) in g.iter().enumerate() {
                        if av[i] > 0.0 {
                            grads[a.0][i] += gi;
                        }
                    }
                }
                Op::Exp(a) => {
                    for (i, gi) in g.iter().enumerate() {
                        grads[a.0][i] += gi * node.value[i];
                    }
                }
                Op::Softplus(a) => {
                    let av = self.val(*a);
                    for (i, gi) in g.iter().enumerate() {
                        grads[a.0][i] += gi * sigmoid(av[i]);
                    }
                }
                Op::Sin(a) => {
                    let av = self.val(*a);
                    for (i, gi) in g.iter().enumerate() {
                        grads[a.0][i] += gi * libm::cos(av[i]);
                    }
                }
                Op::Cos(a) => {
                    let av = self.val(*a);
                    for (i, gi) in g.iter().enumerate() {
                        grads[a.0][i] -= gi * libm::sin(av[i]);
                    }
                }
                Op::Gather(a, index) => {
                    let ga = &mut grads[a.0];
                    for (m, &src) in index.iter().enumerate() {
                        ga[src] += g[m];
                    }
                }
                Op::SumChunks(a, width) => {
                    let ga = &mut grads[a.0];
                    for (i, gi) in g.iter().enumerate() {
                        for slot in &mut ga[i * width..(i + 1) * width] {
                            *slot += gi;
                        }
                    }
                }
                Op::Sum(a) => {
                    for slot in grads[a.0].iter_mut() {
                        *slot += g[0];
                    }
                }
                Op::Mean(a) => {
                    let n = self.val(*a).len() as f64;
                    for slot in grads[a.0].iter_mut() {
                        *slot += g[0] / n;
                    }
                }
                Op::Concat(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let n = self.val(*p).len();
                        axpy(&mut grads[p.0], 1.0, &g[at..at + n]);
                        at += n;
                    }
                }
            }
            grads[id] = g;
        }
        Ok(Gradients { grads })
    }
}

fn axpy(dst: &mut [f64], alpha: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}
