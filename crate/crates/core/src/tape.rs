//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! Every value is a 2-D array; scalars are `1 × 1`. Sparse matrices can only
//! appear as constant left operands of a product, which covers TF-IDF batches
//! and normalized adjacencies.

use std::borrow::Cow;
use std::collections::BTreeMap;

use ndarray::{Array2, Axis, Zip};

use crate::params::ParamStore;
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Op<'a> {
    Leaf,
    MatMul(Var, Var),
    SpMatMul(&'a SparseMatrix, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Softplus(Var),
    Relu(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    ConcatCols(Var, Var),
    RowDot(Var, Var),
    RowSum(Var),
    Sum(Var),
}

struct Node<'a> {
    value: Cow<'a, Array2<f64>>,
    op: Op<'a>,
    needs_grad: bool,
}

pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

pub(crate) fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<f64>, op: Op<'a>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A leaf that receives a gradient.
    pub fn variable(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn variable_ref(&mut self, value: &'a Array2<f64>) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, value: &'a Array2<f64>) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds every tensor of `store` as a differentiable leaf, without copying.
    pub fn bind(&mut self, store: &'a ParamStore) -> Bound {
        Bound {
            vars: store
                .iter()
                .map(|(name, value)| (name.to_owned(), self.variable_ref(value)))
                .collect(),
        }
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let value = self.value(v);
        debug_assert_eq!(value.dim(), (1, 1));
        value[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let g = self.grad_of(&[a, b]);
        self.push(value, Op::MatMul(a, b), g)
    }

    /// `s · b` for a constant sparse `s`.
    pub fn sp_matmul(&mut self, s: &'a SparseMatrix, b: Var) -> Var {
        let value = s.mul_dense(self.value(b));
        let g = self.grad_of(&[b]);
        self.push(value, Op::SpMatMul(s, b), g)
    }

    /// Adds the `1 × n` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let value = self.value(a) + self.value(bias);
        let g = self.grad_of(&[a, bias]);
        self.push(value, Op::AddRow(a, bias), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let g = self.grad_of(&[a, b]);
        self.push(value, Op::Add(a, b), g)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let g = self.grad_of(&[a, b]);
        self.push(value, Op::Sub(a, b), g)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        let g = self.grad_of(&[a, b]);
        self.push(value, Op::Mul(a, b), g)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        let g = self.grad_of(&[a]);
        self.push(value, Op::Scale(a, factor), g)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) + c;
        let g = self.grad_of(&[a]);
        self.push(value, Op::AddScalar(a), g)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(softplus);
        let g = self.grad_of(&[a]);
        self.push(value, Op::Softplus(a), g)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let g = self.grad_of(&[a]);
        self.push(value, Op::Relu(a), g)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        let g = self.grad_of(&[a]);
        self.push(value, Op::Exp(a), g)
    }

    /// Elementwise clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).mapv(|x| x.clamp(lo, hi));
        let g = self.grad_of(&[a]);
        self.push(value, Op::Clamp(a, lo, hi), g)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let g = self.grad_of(&[a]);
        self.push(value, Op::SoftmaxRows(a), g)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let value = log_softmax_rows(self.value(a));
        let g = self.grad_of(&[a]);
        self.push(value, Op::LogSoftmaxRows(a), g)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let value = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concatenated operands share a row count");
        let g = self.grad_of(&[a, b]);
        self.push(value, Op::ConcatCols(a, b), g)
    }

    /// Row-wise inner products, `B × 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let prod = self.value(a) * self.value(b);
        let value = prod.sum_axis(Axis(1)).insert_axis(Axis(1));
        let g = self.grad_of(&[a, b]);
        self.push(value, Op::RowDot(a, b), g)
    }

    /// Row sums, `B × 1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let g = self.grad_of(&[a]);
        self.push(value, Op::RowSum(a), g)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let g = self.grad_of(&[a]);
        self.push(value, Op::Sum(a), g)
    }

    /// Mean of all entries, `1 × 1`.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Gradients of the scalar `root` with respect to every node that needs one.
    pub fn backward(&self, root: Var) -> Gradients {
        debug_assert_eq!(self.value(root).dim(), (1, 1), "backward from a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones((1, 1)));

        fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(acc) => *acc += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let y = &*node.value;
            let need = |v: &Var| self.nodes[v.0].needs_grad;
            match node.op {
                Op::Leaf => {
                    grads[idx] = Some(gy);
                }
                Op::MatMul(a, b) => {
                    if need(&a) {
                        accumulate(&mut grads, a, gy.dot(&self.value(b).t()));
                    }
                    if need(&b) {
                        accumulate(&mut grads, b, self.value(a).t().dot(&gy));
                    }
                }
                Op::SpMatMul(s, b) => {
                    accumulate(&mut grads, b, s.t_mul_dense(&gy));
                }
                Op::AddRow(a, bias) => {
                    if need(&bias) {
                        accumulate(&mut grads, bias, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if need(&a) {
                        accumulate(&mut grads, a, gy);
                    }
                }
                Op::Add(a, b) => {
                    if need(&a) {
                        accumulate(&mut grads, a, gy.clone());
                    }
                    if need(&b) {
                        accumulate(&mut grads, b, gy);
                    }
                }
                Op::Sub(a, b) => {
                    if need(&a) {
                        accumulate(&mut grads, a, gy.clone());
                    }
                    if need(&b) {
                        accumulate(&mut grads, b, -gy);
                    }
                }
                Op::Mul(a, b) => {
                    if need(&a) {
                        accumulate(&mut grads, a, &gy * self.value(b));
                    }
                    if need(&b) {
                        accumulate(&mut grads, b, &gy * self.value(a));
                    }
                }
                Op::Scale(a, f) => accumulate(&mut grads, a, gy * f),
                Op::AddScalar(a) => accumulate(&mut grads, a, gy),
                Op::Softplus(a) => {
                    let mut g = gy;
                    Zip::from(&mut g)
                        .and(self.value(a))
                        .for_each(|g, &x| *g *= sigmoid(x));
                    accumulate(&mut grads, a, g);
                }
                Op::Relu(a) => {
                    let mut g = gy;
                    Zip::from(&mut g)
                        .and(self.value(a))
                        .for_each(|g, &x| {
                            if x <= 0.0 {
                                *g = 0.0
                            }
                        });
                    accumulate(&mut grads, a, g);
                }
                Op::Exp(a) => accumulate(&mut grads, a, gy * y),
                Op::Clamp(a, lo, hi) => {
                    let mut g = gy;
                    Zip::from(&mut g)
                        .and(self.value(a))
                        .for_each(|g, &x| {
                            if x < lo || x > hi {
                                *g = 0.0
                            }
                        });
                    accumulate(&mut grads, a, g);
                }
                Op::SoftmaxRows(a) => {
                    // dx = y ⊙ (dy − Σ dy⊙y)
                    let dots = (&gy * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    accumulate(&mut grads, a, y * &(gy - &dots));
                }
                Op::LogSoftmaxRows(a) => {
                    // dx = dy − softmax(x) Σ dy
                    let sums = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let p = y.mapv(f64::exp);
                    accumulate(&mut grads, a, gy - &(p * &sums));
                }
                Op::ConcatCols(a, b) => {
                    let split = self.value(a).ncols();
                    if need(&a) {
                        accumulate(&mut grads, a, gy.slice(ndarray::s![.., ..split]).to_owned());
                    }
                    if need(&b) {
                        accumulate(&mut grads, b, gy.slice(ndarray::s![.., split..]).to_owned());
                    }
                }
                Op::RowDot(a, b) => {
                    if need(&a) {
                        accumulate(&mut grads, a, self.value(b) * &gy);
                    }
                    if need(&b) {
                        accumulate(&mut grads, b, self.value(a) * &gy);
                    }
                }
                Op::RowSum(a) => {
                    let shape = self.value(a).raw_dim();
                    let g = gy
                        .broadcast(shape)
                        .expect("row gradient broadcasts across columns")
                        .to_owned();
                    accumulate(&mut grads, a, g);
                }
                Op::Sum(a) => {
                    let g = Array2::from_elem(self.value(a).raw_dim(), gy[[0, 0]]);
                    accumulate(&mut grads, a, g);
                }
            }
        }
        Gradients { grads }
    }
}

/// Parameter name → leaf on a tape.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Per-parameter gradients; parameters the loss does not touch get zeros.
    pub fn collect(&self, tape: &Tape<'_>, bound: &Bound) -> BTreeMap<String, Array2<f64>> {
        bound
            .iter()
            .map(|(name, v)| {
                let g = self
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Array2::zeros(tape.value(v).raw_dim()));
                (name.to_owned(), g)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central differences of `f` around `x`.
    fn numeric_grad(x: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
        let h = 1e-6;
        let mut g = Array2::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[[r, c]] += h;
            let mut xm = x.clone();
            xm[[r, c]] -= h;
            g[[r, c]] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn check<'s>(x: Array2<f64>, build: impl Fn(&mut Tape<'s>, Var) -> Var) {
        let mut tape = Tape::new();
        let v = tape.variable(x.clone());
        let out = build(&mut tape, v);
        let analytic = tape.backward(out).get(v).unwrap().clone();
        let numeric = numeric_grad(&x, |xx| {
            let mut t = Tape::new();
            let v = t.variable(xx.clone());
            let o = build(&mut t, v);
            t.scalar(o)
        });
        let diff = (&analytic - &numeric).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff < 1e-7, "max grad diff {diff}\n{analytic}\n{numeric}");
    }

    fn x() -> Array2<f64> {
        array![[0.3, -1.2, 0.7], [1.5, 0.1, -0.4]]
    }

    #[test]
    fn elementwise_ops() {
        check(x(), |t, v| {
            let a = t.softplus(v);
            let b = t.exp(v);
            let c = t.mul(a, b);
            let d = t.scale(c, 0.5);
            let e = t.add_scalar(d, 2.0);
            let f = t.sub(e, v);
            t.sum(f)
        });
        check(x(), |t, v| {
            let c = t.clamp(v, -1.0, 1.0);
            let r = t.relu(c);
            let s = t.add(r, c);
            t.mean(s)
        });
    }

    #[test]
    fn softmax_and_log_softmax() {
        let w = array![[1.0, 2.0, -1.0], [0.5, -0.5, 3.0]];
        check(x(), |t, v| {
            let s = t.softmax_rows(v);
            let c = t.constant(w.clone());
            let m = t.mul(s, c);
            t.sum(m)
        });
        check(x(), |t, v| {
            let s = t.log_softmax_rows(v);
            let c = t.constant(w.clone());
            let d = t.row_dot(s, c);
            t.sum(d)
        });
    }

    #[test]
    fn products_and_structure() {
        let sparse = SparseMatrix::new(2, 2, vec![(0, 1, 2.0), (1, 0, -1.0), (1, 1, 0.5)]).unwrap();
        let other = array![[0.2, 0.1], [-0.3, 0.4], [1.0, 0.0]];
        check(x(), |t, v| {
            let w = t.constant(other.clone());
            let p = t.matmul(v, w);
            let q = t.sp_matmul(&sparse, p);
            let bias = t.constant(array![[0.1, -0.2]]);
            let r = t.add_row(q, bias);
            let cat = t.concat_cols(r, v);
            let s = t.row_sum(cat);
            let sq = t.mul(s, s);
            t.sum(sq)
        });
        // bias gradient
        check(array![[0.1, -0.2, 0.3]], |t, b| {
            let a = t.constant(x());
            let r = t.add_row(a, b);
            let e = t.exp(r);
            t.sum(e)
        });
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(x());
        let v = t.variable(x());
        let m = t.mul(c, v);
        let s = t.sum(m);
        let g = t.backward(s);
        assert!(g.get(c).is_none());
        assert_eq!(g.get(v).unwrap(), &x());
    }
}
