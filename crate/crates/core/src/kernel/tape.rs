//! Matrix-valued reverse-mode tape.
//!
//! Every operation appends a node holding its forward value; [`Tape::grad`]
//! walks the nodes backwards from a `1 x 1` output. Nodes are appended in
//! evaluation order, so the node list is already topologically sorted.

use super::mat::{matmul_at_into, matmul_bt_into, matmul_into};
use super::ops::{log_softmax_at, minmax_parts, sigmoid, softmax_in_place, BCE_EPS};
use super::Mat;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    RowSoftmax(Var),
    ColMean(Var),
    MinMax {
        input: Var,
        lo: usize,
        hi: usize,
        range: f64,
    },
    WeightedPool {
        weights: Var,
        nodes: Var,
        total: f64,
    },
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    ShiftRows(Var, isize),
    SoftmaxCe {
        logits: Var,
        label: usize,
    },
    Bce {
        probs: Var,
        targets: Vec<f64>,
    },
    Mean(Vec<Var>),
    SumProduct(Var, Var),
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output with respect to every node.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zero-filled when `v` does not influence the output.
    pub fn get_or_zeros(&self, v: Var, tape: &Tape) -> Mat {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.value(v).shape();
                Mat::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Distance of the recorded computation from its non-differentiable
    /// points: the smallest relu input magnitude and the smallest gap between
    /// the two largest (or two smallest) entries of a min-max input.
    /// Infinite when the tape has no such op.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match node.op {
                Op::Relu(a) => {
                    for x in self.value(a).data() {
                        margin = margin.min(x.abs());
                    }
                }
                Op::MinMax { input, .. } => {
                    let mut v = self.value(input).data().to_vec();
                    if v.len() > 1 {
                        v.sort_by(f64::total_cmp);
                        let n = v.len();
                        margin = margin.min(v[1] - v[0]).min(v[n - 1] - v[n - 2]);
                    }
                }
                _ => {}
            }
        }
        margin
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a * b^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(Error::shape(
                "matmul_bt",
                format!("{:?} times transpose of {:?}", va.shape(), vb.shape()),
            ));
        }
        let mut out = Mat::zeros(va.rows(), vb.rows());
        matmul_bt_into(va, vb, &mut out);
        Ok(self.push(out, Op::MatMulBt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a `1 x C` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows() != 1 || vr.cols() != va.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} plus row {:?}", va.shape(), vr.shape()),
            ));
        }
        let mut out = va.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(vr.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).scale(k);
        self.push(out, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let out = super::ops::row_softmax(self.value(a));
        self.push(out, Op::RowSoftmax(a))
    }

    /// Softmax over a single row vector, recorded as a row softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        self.row_softmax(a)
    }

    /// Mean over rows, giving a `1 x C` row.
    pub fn col_mean(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.rows() == 0 {
            return Err(Error::Empty("col_mean"));
        }
        let mut out = Mat::zeros(1, va.cols());
        for r in va.iter_rows() {
            for (o, x) in out.data_mut().iter_mut().zip(r) {
                *o += x;
            }
        }
        let inv = 1.0 / va.rows() as f64;
        for o in out.data_mut() {
            *o *= inv;
        }
        Ok(self.push(out, Op::ColMean(a)))
    }

    /// Min-max normalization of a `1 x n` row.
    pub fn minmax(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.rows() != 1 || va.cols() == 0 {
            return Err(Error::shape(
                "minmax",
                format!("expected non-empty row, got {:?}", va.shape()),
            ));
        }
        let (v, lo, hi, range) = minmax_parts(va.data());
        Ok(self.push(
            Mat::row_vector(&v),
            Op::MinMax {
                input: a,
                lo,
                hi,
                range,
            },
        ))
    }

    /// `sum_j w_j x_j / sum_j w_j`, falling back to the plain row mean when
    /// the weights sum to zero. `weights` is `1 x M`, `nodes` is `M x F`.
    pub fn weighted_pool(&mut self, weights: Var, nodes: Var) -> Result<Var> {
        let (w, x) = (self.value(weights), self.value(nodes));
        if w.rows() != 1 || w.cols() != x.rows() {
            return Err(Error::shape(
                "weighted_pool",
                format!("weights {:?} for nodes {:?}", w.shape(), x.shape()),
            ));
        }
        if x.rows() == 0 {
            return Err(Error::Empty("weighted_pool"));
        }
        let total: f64 = w.data().iter().sum();
        let mut out = Mat::zeros(1, x.cols());
        if total > 0.0 {
            for (r, &wj) in x.iter_rows().zip(w.data()) {
                for (o, v) in out.data_mut().iter_mut().zip(r) {
                    *o += wj * v;
                }
            }
            for o in out.data_mut() {
                *o /= total;
            }
        } else {
            for r in x.iter_rows() {
                for (o, v) in out.data_mut().iter_mut().zip(r) {
                    *o += v;
                }
            }
            let inv = 1.0 / x.rows() as f64;
            for o in out.data_mut() {
                *o *= inv;
            }
        }
        Ok(self.push(
            out,
            Op::WeightedPool {
                weights,
                nodes,
                total,
            },
        ))
    }

    /// Horizontal concatenation; all parts must share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Empty("concat_cols"));
        };
        let rows = self.value(first).rows();
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row counts {rows} and {}", v.rows()),
                ));
            }
            cols += v.cols();
        }
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let v = self.value(p);
                out.row_mut(r)[c0..c0 + v.cols()].copy_from_slice(v.row(r));
                c0 += v.cols();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Vertical stacking; all parts must share a column count.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Empty("stack_rows"));
        };
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::shape(
                    "stack_rows",
                    format!("column counts {cols} and {}", v.cols()),
                ));
            }
            data.extend_from_slice(v.data());
        }
        let rows = data.len() / cols.max(1);
        let out = Mat::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::StackRows(parts.to_vec())))
    }

    /// `out[i] = a[i - k]`, zero where `i - k` falls outside the rows.
    pub fn shift_rows(&mut self, a: Var, k: isize) -> Var {
        let va = self.value(a);
        let mut out = Mat::zeros(va.rows(), va.cols());
        for i in 0..va.rows() {
            let src = i as isize - k;
            if src >= 0 && (src as usize) < va.rows() {
                out.row_mut(i).copy_from_slice(va.row(src as usize));
            }
        }
        self.push(out, Op::ShiftRows(a, k))
    }

    /// `-log softmax(logits)[label]` for a `1 x G` logit row.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let v = self.value(logits);
        if v.rows() != 1 {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("expected a row, got {:?}", v.shape()),
            ));
        }
        if label >= v.cols() {
            return Err(Error::Index {
                index: label,
                len: v.cols(),
            });
        }
        let loss = -log_softmax_at(v.data(), label);
        Ok(self.push(Mat::scalar(loss), Op::SoftmaxCe { logits, label }))
    }

    /// Mean binary cross-entropy of clamped probabilities against targets.
    pub fn bce(&mut self, probs: Var, targets: &[f64]) -> Result<Var> {
        let v = self.value(probs);
        if v.data().len() != targets.len() || targets.is_empty() {
            return Err(Error::shape(
                "bce",
                format!(
                    "{} probabilities, {} targets",
                    v.data().len(),
                    targets.len()
                ),
            ));
        }
        let loss = v
            .data()
            .iter()
            .zip(targets)
            .map(|(&p, &t)| super::ops::bce(p, t))
            .sum::<f64>()
            / targets.len() as f64;
        Ok(self.push(
            Mat::scalar(loss),
            Op::Bce {
                probs,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Mean of `1 x 1` nodes.
    pub fn mean(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("mean"));
        }
        let mut s = 0.0;
        for &p in parts {
            s += self.value(p).item()?;
        }
        let out = Mat::scalar(s / parts.len() as f64);
        Ok(self.push(out, Op::Mean(parts.to_vec())))
    }

    /// `sum(a .* b)` as a `1 x 1` node.
    pub fn sum_product(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        va.same_shape(vb, "sum_product")?;
        let s = super::ops::dot(va.data(), vb.data());
        Ok(self.push(Mat::scalar(s), Op::SumProduct(a, b)))
    }

    /// Reverse-mode gradients of the scalar `output`.
    pub fn grad(&self, output: Var) -> Result<Gradients> {
        if self.value(output).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "gradient requested for non-scalar output of shape {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Mat::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.backprop(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        let mut acc = |v: Var, d: Mat| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&d),
            slot @ None => *slot = Some(d),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut da = Mat::zeros(va.rows(), va.cols());
                matmul_bt_into(g, vb, &mut da);
                let mut db = Mat::zeros(vb.rows(), vb.cols());
                matmul_at_into(va, g, &mut db);
                acc(*a, da);
                acc(*b, db);
            }
            Op::MatMulBt(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut da = Mat::zeros(va.rows(), va.cols());
                matmul_into(g, vb, &mut da);
                let mut db = Mat::zeros(vb.rows(), vb.cols());
                matmul_at_into(g, va, &mut db);
                acc(*a, da);
                acc(*b, db);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, row) => {
                let mut dr = Mat::zeros(1, g.cols());
                for r in g.iter_rows() {
                    for (o, x) in dr.data_mut().iter_mut().zip(r) {
                        *o += x;
                    }
                }
                acc(*a, g.clone());
                acc(*row, dr);
            }
            Op::Scale(a, k) => acc(*a, g.scale(*k)),
            Op::Relu(a) => {
                let va = self.value(*a);
                let mut d = g.clone();
                for (o, &x) in d.data_mut().iter_mut().zip(va.data()) {
                    if x <= 0.0 {
                        *o = 0.0;
                    }
                }
                acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                for (o, &y) in d.data_mut().iter_mut().zip(node.value.data()) {
                    *o *= y * (1.0 - y);
                }
                acc(*a, d);
            }
            Op::RowSoftmax(a) => {
                let y = &node.value;
                let mut d = Mat::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let inner = super::ops::dot(yr, gr);
                    for ((o, &yv), &gv) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - inner);
                    }
                }
                acc(*a, d);
            }
            Op::ColMean(a) => {
                let va = self.value(*a);
                let inv = 1.0 / va.rows() as f64;
                let mut d = Mat::zeros(va.rows(), va.cols());
                for r in 0..va.rows() {
                    for (o, &gv) in d.row_mut(r).iter_mut().zip(g.data()) {
                        *o = gv * inv;
                    }
                }
                acc(*a, d);
            }
            Op::MinMax {
                input,
                lo,
                hi,
                range,
            } => {
                let n = node.value.cols();
                let mut d = Mat::zeros(1, n);
                if *range > 0.0 {
                    // y_i = (x_i - x_lo) / (x_hi - x_lo)
                    let y = node.value.data();
                    let gd = g.data();
                    let mut s_lo = 0.0;
                    let mut s_hi = 0.0;
                    for i in 0..n {
                        d.data_mut()[i] += gd[i] / range;
                        s_lo += gd[i] * (y[i] - 1.0) / range;
                        s_hi -= gd[i] * y[i] / range;
                    }
                    d.data_mut()[*lo] += s_lo;
                    d.data_mut()[*hi] += s_hi;
                }
                acc(*input, d);
            }
            Op::WeightedPool {
                weights,
                nodes,
                total,
            } => {
                let (w, x) = (self.value(*weights), self.value(*nodes));
                let pooled = node.value.data();
                let gd = g.data();
                let mut dw = Mat::zeros(1, w.cols());
                let mut dx = Mat::zeros(x.rows(), x.cols());
                if *total > 0.0 {
                    for j in 0..x.rows() {
                        let xr = x.row(j);
                        let mut s = 0.0;
                        for f in 0..x.cols() {
                            s += gd[f] * (xr[f] - pooled[f]);
                        }
                        dw.data_mut()[j] = s / total;
                        let wj = w.data()[j] / total;
                        for (o, &gv) in dx.row_mut(j).iter_mut().zip(gd) {
                            *o = gv * wj;
                        }
                    }
                } else {
                    let inv = 1.0 / x.rows() as f64;
                    for j in 0..x.rows() {
                        for (o, &gv) in dx.row_mut(j).iter_mut().zip(gd) {
                            *o = gv * inv;
                        }
                    }
                }
                acc(*weights, dw);
                acc(*nodes, dx);
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for &p in parts {
                    let vp = self.value(p);
                    let mut d = Mat::zeros(vp.rows(), vp.cols());
                    for r in 0..vp.rows() {
                        d.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + vp.cols()]);
                    }
                    c0 += vp.cols();
                    acc(p, d);
                }
            }
            Op::StackRows(parts) => {
                let mut r0 = 0;
                for &p in parts {
                    let vp = self.value(p);
                    let n = vp.rows() * vp.cols();
                    let start = r0 * g.cols();
                    let d =
                        Mat::from_vec(vp.rows(), vp.cols(), g.data()[start..start + n].to_vec())
                            .expect("stack_rows gradient slice");
                    r0 += vp.rows();
                    acc(p, d);
                }
            }
            Op::ShiftRows(a, k) => {
                let rows = g.rows();
                let mut d = Mat::zeros(rows, g.cols());
                for i in 0..rows {
                    let src = i as isize - k;
                    if src >= 0 && (src as usize) < rows {
                        let src = src as usize;
                        for (o, &gv) in d.row_mut(src).iter_mut().zip(g.row(i)) {
                            *o += gv;
                        }
                    }
                }
                acc(*a, d);
            }
            Op::SoftmaxCe { logits, label } => {
                let gv = g.data()[0];
                let mut p = self.value(*logits).clone();
                softmax_in_place(p.data_mut());
                p.data_mut()[*label] -= 1.0;
                acc(*logits, p.scale(gv));
            }
            Op::Bce { probs, targets } => {
                let gv = g.data()[0] / targets.len() as f64;
                let vp = self.value(*probs);
                let mut d = Mat::zeros(vp.rows(), vp.cols());
                for ((o, &p), &t) in d.data_mut().iter_mut().zip(vp.data()).zip(targets) {
                    // clamp has zero slope outside the open interval
                    if p > BCE_EPS && p < 1.0 - BCE_EPS {
                        *o = gv * (-t / p + (1.0 - t) / (1.0 - p));
                    }
                }
                acc(*probs, d);
            }
            Op::Mean(parts) => {
                let gv = g.data()[0] / parts.len() as f64;
                for &p in parts {
                    acc(p, Mat::scalar(gv));
                }
            }
            Op::SumProduct(a, b) => {
                let gv = g.data()[0];
                acc(*a, self.value(*b).scale(gv));
                acc(*b, self.value(*a).scale(gv));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::testing::{assert_grad_matches, random_mat};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Mat::scalar(3.0));
        let y = t.sum_product(x, x).unwrap();
        let g = t.grad(y).unwrap();
        assert_eq!(g.get(x).unwrap().item().unwrap(), 6.0);
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Mat::scalar(3.0));
        let c = t.leaf(Mat::scalar(5.0));
        let zero = t.scale(x, 0.0);
        let y = t.add(zero, c).unwrap();
        let g = t.grad(y).unwrap();
        assert_eq!(g.get(x).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn kink_margin_tracks_relu_and_minmax_inputs() {
        let mut t = Tape::new();
        let x = t.leaf(Mat::from_vec(1, 4, vec![0.5, -0.03, 2.0, 1.9]).unwrap());
        assert_eq!(t.kink_margin(), f64::INFINITY);
        t.relu(x);
        assert!((t.kink_margin() - 0.03).abs() < 1e-15);
        t.minmax(x).unwrap();
        assert!((t.kink_margin() - 0.03).abs() < 1e-15);
        let y = t.leaf(Mat::from_vec(1, 3, vec![1.0, 1.001, 5.0]).unwrap());
        t.minmax(y).unwrap();
        assert!((t.kink_margin() - 0.001).abs() < 1e-12);
    }

    #[test]
    fn non_scalar_output_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Mat::zeros(2, 2));
        assert!(matches!(t.grad(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unused_leaf_has_no_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Mat::scalar(1.0));
        let y = t.leaf(Mat::scalar(2.0));
        let z = t.sum_product(x, x).unwrap();
        let g = t.grad(z).unwrap();
        assert!(g.get(y).is_none());
        assert_eq!(g.get_or_zeros(y, &t), Mat::zeros(1, 1));
    }

    /// bce(sigmoid(w . x), t) against central differences.
    #[test]
    fn logistic_bce_gradient() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_mat(&mut rng, 1, 5, 1.0);
            let x = random_mat(&mut rng, 5, 1, 1.0);
            let target = if rng.random::<bool>() { 1.0 } else { 0.0 };
            assert_grad_matches(&[w, x], |t, v| {
                let z = t.matmul(v[0], v[1])?;
                let p = t.sigmoid(z);
                t.bce(p, &[target])
            });
        }
    }

    #[test]
    fn every_op_gradient() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let a = random_mat(&mut rng, 3, 4, 1.0);
            let b = random_mat(&mut rng, 4, 2, 1.0);
            let c = random_mat(&mut rng, 3, 4, 1.0);
            let row = random_mat(&mut rng, 1, 4, 1.0);
            let probe3x4 = random_mat(&mut rng, 3, 4, 1.0);
            let probe3x2 = random_mat(&mut rng, 3, 2, 1.0);
            let probe3x3 = random_mat(&mut rng, 3, 3, 1.0);
            let probe1x4 = random_mat(&mut rng, 1, 4, 1.0);
            let probe1x3 = random_mat(&mut rng, 1, 3, 1.0);
            let probe3x8 = random_mat(&mut rng, 3, 8, 1.0);
            let probe6x4 = random_mat(&mut rng, 6, 4, 1.0);
            let label = rng.random_range(0..4);
            let targets: Vec<f64> = (0..4).map(|_| rng.random_range(0..2) as f64).collect();
            let shift = rng.random_range(-2i32..=2) as isize;
            let weights = random_mat(&mut rng, 1, 3, 1.0).map(f64::abs);

            assert_grad_matches(&[a.clone(), b.clone()], |t, v| {
                let m = t.matmul(v[0], v[1])?;
                let p = t.leaf(probe3x2.clone());
                t.sum_product(m, p)
            });
            assert_grad_matches(&[a.clone(), c.clone()], |t, v| {
                let m = t.matmul_bt(v[0], v[1])?;
                let p = t.leaf(probe3x3.clone());
                t.sum_product(m, p)
            });
            // finite differences are only valid away from the relu kink
            let pre_min = (0..3)
                .flat_map(|i| (0..4).map(move |j| (i, j)))
                .map(|(i, j)| (a.get(i, j) + c.get(i, j) + row.get(0, j)).abs())
                .fold(f64::INFINITY, f64::min);
            if pre_min > 1e-2 {
                assert_grad_matches(&[a.clone(), c.clone(), row.clone()], |t, v| {
                    let s = t.add(v[0], v[1])?;
                    let s = t.add_row(s, v[2])?;
                    let s = t.scale(s, -1.7);
                    let s = t.relu(s);
                    let p = t.leaf(probe3x4.clone());
                    t.sum_product(s, p)
                });
            }
            assert_grad_matches(std::slice::from_ref(&a), |t, v| {
                let s = t.sigmoid(v[0]);
                let s = t.row_softmax(s);
                let s = t.col_mean(s)?;
                let p = t.leaf(probe1x4.clone());
                t.sum_product(s, p)
            });
            assert_grad_matches(std::slice::from_ref(&row), |t, v| {
                let s = t.minmax(v[0])?;
                let p = t.leaf(probe1x4.clone());
                t.sum_product(s, p)
            });
            assert_grad_matches(&[weights.clone(), a.clone()], |t, v| {
                let s = t.weighted_pool(v[0], v[1])?;
                let p = t.leaf(probe1x4.clone());
                t.sum_product(s, p)
            });
            assert_grad_matches(&[a.clone(), c.clone()], |t, v| {
                let s = t.concat_cols(&[v[0], v[1]])?;
                let p = t.leaf(probe3x8.clone());
                t.sum_product(s, p)
            });
            assert_grad_matches(&[a.clone(), c.clone()], |t, v| {
                let s = t.stack_rows(&[v[0], v[1]])?;
                let p = t.leaf(probe6x4.clone());
                t.sum_product(s, p)
            });
            assert_grad_matches(std::slice::from_ref(&a), |t, v| {
                let s = t.shift_rows(v[0], shift);
                let p = t.leaf(probe3x4.clone());
                t.sum_product(s, p)
            });
            assert_grad_matches(std::slice::from_ref(&row), |t, v| t.softmax_cross_entropy(v[0], label));
            assert_grad_matches(std::slice::from_ref(&row), |t, v| {
                let p = t.sigmoid(v[0]);
                t.bce(p, &targets)
            });
            assert_grad_matches(&[probe1x3.clone(), row.clone()], |t, v| {
                let x = t.sum_product(v[0], v[0])?;
                let y = t.softmax_cross_entropy(v[1], label)?;
                t.mean(&[x, y])
            });
        }
    }
}
