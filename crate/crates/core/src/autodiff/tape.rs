//! Eagerly evaluated reverse-mode tape over dense matrices.
//!
//! Every primitive computes its value when recorded and carries an adjoint
//! in [`Tape::backward`]; the op set is a closed enum, so a primitive
//! without an adjoint does not compile. Ops with kinks or discrete choices
//! (relu, abs, min/max reductions) fold their branch pattern into a
//! structural signature, which the gradient checker uses to discard
//! finite-difference probes that cross a kink.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sampling::{InterpSource, InterpolationPlan, INTERP_EPS};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Reduce across columns, one result per row (`N x M -> N x 1`).
    Rows,
    /// Reduce across rows, one result per column (`N x M -> 1 x M`).
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    BroadcastRows(Var),
    BroadcastCols(Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    NormalizeRows(Var),
    Abs(Var),
    SoftmaxRows(Var),
    SegmentSoftmax(Var, Vec<usize>),
    Sum(Var),
    SumCols(Var),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    MinReduce(Var, Axis, Vec<usize>),
    GroupMax(Var, Vec<usize>),
    ConcatRows(Var, Var),
    Interpolate {
        fine: Var,
        coarse: Var,
        feats: Var,
        plan: InterpolationPlan,
    },
    PairwiseDist(Var, Var),
}

const NORMALIZE_EPS: f64 = 1e-12;

fn row_norm(row: &[f64]) -> f64 {
    (row.iter().map(|v| v * v).sum::<f64>() + NORMALIZE_EPS).sqrt()
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    signature: u64,
    adjoint_fault: bool,
    residuals: BTreeMap<usize, f64>,
}

const FNV_PRIME: u64 = 0x0100_0000_01b3;

impl Tape {
    pub fn new() -> Self {
        Self {
            signature: 0xcbf2_9ce4_8422_2325,
            ..Self::default()
        }
    }

    /// Deliberately corrupts the matmul adjoint. Only for exercising the
    /// failure path of gradient checks.
    pub fn inject_adjoint_fault(&mut self) {
        self.adjoint_fault = true;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of every discrete decision recorded so far.
    pub fn signature(&self) -> u64 {
        self.signature
    }

    /// Folds externally made discrete choices (sampling, graph structure)
    /// into the signature.
    pub fn note(&mut self, values: impl IntoIterator<Item = usize>) {
        for v in values {
            self.mix(v as u64);
        }
        self.mix(u64::MAX);
    }

    fn mix(&mut self, v: u64) {
        self.signature = (self.signature ^ v).wrapping_mul(FNV_PRIME);
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// A `1 x 1` value as an unevaluated sum `hi + lo`. Only `sum` nodes
    /// carry a nonzero `lo`, the rounding error of their final addition.
    pub fn scalar_parts(&self, v: Var) -> (f64, f64) {
        let hi = self.value(v).item();
        (hi, self.residuals.get(&v.0).copied().unwrap_or(0.0))
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Registers a named parameter; repeated names return the same handle.
    pub fn param(&mut self, name: &str, value: &Matrix) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "{what}: shape mismatch"
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// Repeats a `1 x C` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.rows(), 1, "broadcast_rows needs a single row");
        let mut out = Matrix::zeros(rows, src.cols());
        for r in 0..rows {
            out.row_mut(r).copy_from_slice(src.row(0));
        }
        self.push(out, Op::BroadcastRows(a))
    }

    /// Repeats an `N x 1` column `cols` times.
    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.cols(), 1, "broadcast_cols needs a single column");
        let mut out = Matrix::zeros(src.rows(), cols);
        for r in 0..src.rows() {
            out.row_mut(r).fill(src.get(r, 0));
        }
        self.push(out, Op::BroadcastCols(a))
    }

    /// `a + bias` with a `1 x C` bias added to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let b = self.broadcast_rows(bias, self.value(a).rows());
        self.add(a, b)
    }

    /// `a + col` with an `N x 1` column added to every channel.
    pub fn add_col(&mut self, a: Var, col: Var) -> Var {
        let b = self.broadcast_cols(col, self.value(a).cols());
        self.add(a, b)
    }

    /// `x * w + b` for a row-per-sample input.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        let pattern: Vec<bool> = self.value(a).data().iter().map(|&x| x > 0.0).collect();
        for p in pattern {
            self.mix(u64::from(p));
        }
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// Scales every row to unit Euclidean norm: `x / sqrt(|x|^2 + 1e-12)`.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..x.rows() {
            let s = row_norm(x.row(r));
            for v in out.row_mut(r) {
                *v /= s;
            }
        }
        self.push(out, Op::NormalizeRows(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        let pattern: Vec<u64> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| if x > 0.0 { 1 } else if x < 0.0 { 2 } else { 0 })
            .collect();
        for p in pattern {
            self.mix(p);
        }
        self.push(v, Op::Abs(a))
    }

    /// Softmax of every row, stabilized by the row maximum.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..x.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Column-wise softmax within each row segment `offsets[s]..offsets[s+1]`.
    pub fn segment_softmax(&mut self, a: Var, offsets: Vec<usize>) -> Var {
        let x = self.value(a);
        assert_eq!(*offsets.last().unwrap_or(&0), x.rows(), "segment offsets");
        let cols = x.cols();
        let mut out = x.clone();
        let mut buf = Vec::new();
        for s in offsets.windows(2) {
            if s[0] == s[1] {
                continue;
            }
            for c in 0..cols {
                buf.clear();
                buf.extend((s[0]..s[1]).map(|r| x.get(r, c)));
                softmax_in_place(&mut buf);
                for (k, r) in (s[0]..s[1]).enumerate() {
                    out.set(r, c, buf[k]);
                }
            }
        }
        self.push(out, Op::SegmentSoftmax(a, offsets))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let (hi, lo) = compensated_sum(self.value(a).data());
        let v = self.push(Matrix::scalar(hi), Op::Sum(a));
        self.residuals.insert(v.0, lo);
        v
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum over channels: `N x C -> N x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = (0..x.rows()).map(|r| x.row(r).iter().sum()).collect();
        let v = Matrix::from_vec(x.rows(), 1, data).expect("column shape");
        self.push(v, Op::SumCols(a))
    }

    pub fn gather_rows(&mut self, a: Var, indices: Vec<usize>) -> Var {
        let v = self.value(a).gather_rows(&indices);
        self.push(v, Op::GatherRows(a, indices))
    }

    /// Output row `indices[r]` accumulates input row `r`.
    pub fn scatter_add_rows(&mut self, a: Var, indices: Vec<usize>, out_rows: usize) -> Var {
        let x = self.value(a);
        assert_eq!(indices.len(), x.rows());
        let mut out = Matrix::zeros(out_rows, x.cols());
        for (r, &i) in indices.iter().enumerate() {
            for (o, &v) in out.row_mut(i).iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        self.push(out, Op::ScatterAddRows(a, indices))
    }

    /// Minimum along `axis`; the gradient flows to the first minimizer.
    pub fn min_reduce(&mut self, a: Var, axis: Axis) -> Var {
        let x = self.value(a);
        let (out, arg) = match axis {
            Axis::Rows => {
                let mut vals = Vec::with_capacity(x.rows());
                let mut arg = Vec::with_capacity(x.rows());
                for r in 0..x.rows() {
                    let (j, v) = first_min(x.row(r).iter().copied());
                    vals.push(v);
                    arg.push(j);
                }
                (Matrix::from_vec(x.rows(), 1, vals).expect("shape"), arg)
            }
            Axis::Cols => {
                let mut vals = Vec::with_capacity(x.cols());
                let mut arg = Vec::with_capacity(x.cols());
                for c in 0..x.cols() {
                    let (i, v) = first_min((0..x.rows()).map(|r| x.get(r, c)));
                    vals.push(v);
                    arg.push(i);
                }
                (Matrix::from_vec(1, x.cols(), vals).expect("shape"), arg)
            }
        };
        for &i in &arg {
            self.mix(i as u64);
        }
        self.push(out, Op::MinReduce(a, axis, arg))
    }

    /// Channel-wise max over row groups: output row `g`, channel `c` is the
    /// maximum of `a[r, c]` over `r in groups[g]`. Gradient flows to the
    /// first maximizer.
    pub fn group_max(&mut self, a: Var, groups: &[Vec<usize>]) -> Var {
        let x = self.value(a);
        let cols = x.cols();
        let mut out = Matrix::zeros(groups.len(), cols);
        let mut arg = Vec::with_capacity(groups.len() * cols);
        for (g, rows) in groups.iter().enumerate() {
            assert!(!rows.is_empty(), "empty max-pool group");
            for c in 0..cols {
                let mut best = rows[0];
                for &r in &rows[1..] {
                    if x.get(r, c) > x.get(best, c) {
                        best = r;
                    }
                }
                out.set(g, c, x.get(best, c));
                arg.push(best);
            }
        }
        for &i in &arg {
            self.mix(i as u64);
        }
        self.push(out, Op::GroupMax(a, arg))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.cols(), y.cols(), "concat_rows column mismatch");
        let mut data = x.data().to_vec();
        data.extend_from_slice(y.data());
        let v = Matrix::from_vec(x.rows() + y.rows(), x.cols(), data).expect("shape");
        self.push(v, Op::ConcatRows(a, b))
    }

    /// Inverse-distance interpolation of `feats` (rows aligned with
    /// `coarse`) onto `fine`, differentiable in all three inputs.
    pub fn interpolate(&mut self, fine: Var, coarse: Var, feats: Var, plan: InterpolationPlan) -> Var {
        let (pf, pc, f) = (self.value(fine), self.value(coarse), self.value(feats));
        assert_eq!(plan.sources.len(), pf.rows());
        assert_eq!(pc.rows(), f.rows());
        let mut out = Matrix::zeros(pf.rows(), f.cols());
        for (i, src) in plan.sources.iter().enumerate() {
            match src {
                InterpSource::Copy(j) => out.row_mut(i).copy_from_slice(f.row(*j)),
                InterpSource::Blend(js) => {
                    let u: Vec<f64> = js
                        .iter()
                        .map(|&j| 1.0 / (row_dist(pf.row(i), pc.row(j)) + INTERP_EPS))
                        .collect();
                    let total: f64 = u.iter().sum();
                    let row = out.row_mut(i);
                    for (&j, uk) in js.iter().zip(&u) {
                        let w = uk / total;
                        for (o, &v) in row.iter_mut().zip(f.row(j)) {
                            *o += w * v;
                        }
                    }
                }
            }
        }
        let mut skeleton = Vec::with_capacity(plan.sources.len() * 4);
        for src in &plan.sources {
            match src {
                InterpSource::Copy(j) => skeleton.extend([0, *j]),
                InterpSource::Blend(js) => {
                    skeleton.push(1);
                    skeleton.extend(js.iter().copied());
                }
            }
        }
        self.note(skeleton);
        self.push(out, Op::Interpolate { fine, coarse, feats, plan })
    }

    /// Euclidean distance between every row of `a` and every row of `b`
    /// (both `. x 3`).
    pub fn pairwise_dist(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.cols(), y.cols());
        let mut out = Matrix::zeros(x.rows(), y.rows());
        for i in 0..x.rows() {
            for j in 0..y.rows() {
                out.set(i, j, row_dist(x.row(i), y.row(j)));
            }
        }
        self.push(out, Op::PairwiseDist(a, b))
    }

    /// Reverse sweep from a `1 x 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let (rows, cols) = self.value(loss).shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NotScalarLoss { rows, cols });
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
            shapes: self.params.values().map(|v| self.value(*v).shape()).collect(),
        })
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip_map(val(*b), |x, y| x * y));
                accumulate(grads, *b, g.zip_map(val(*a), |x, y| x * y));
            }
            Op::MatMul(a, b) => {
                accumulate(grads, *a, g.matmul_t(val(*b)));
                let mut gb = val(*a).t_matmul(g);
                if self.adjoint_fault {
                    gb = gb.map(|x| 1.5 * x);
                }
                accumulate(grads, *b, gb);
            }
            Op::MatMulT(a, b) => {
                accumulate(grads, *a, g.matmul(val(*b)));
                accumulate(grads, *b, g.t_matmul(val(*a)));
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::BroadcastRows(a) => {
                let mut ga = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, &v) in ga.row_mut(0).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::BroadcastCols(a) => {
                let data = (0..g.rows()).map(|r| g.row(r).iter().sum()).collect();
                accumulate(grads, *a, Matrix::from_vec(g.rows(), 1, data).expect("shape"));
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.map(|x| x * s)),
            Op::Relu(a) => {
                accumulate(grads, *a, g.zip_map(val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }))
            }
            Op::NormalizeRows(a) => {
                let x = val(*a);
                let y = &node.value;
                let mut out = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let s = row_norm(x.row(r));
                    let gy: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                    for ((o, &gv), &yv) in out.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = (gv - yv * gy) / s;
                    }
                }
                accumulate(grads, *a, out)
            }
            Op::Tanh(a) => accumulate(grads, *a, g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y))),
            Op::Abs(a) => accumulate(
                grads,
                *a,
                g.zip_map(val(*a), |gv, x| {
                    if x > 0.0 {
                        gv
                    } else if x < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                }),
            ),
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(p, q)| p * q).sum();
                    for c in 0..y.cols() {
                        ga.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::SegmentSoftmax(a, offsets) => {
                let y = &node.value;
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for s in offsets.windows(2) {
                    for c in 0..y.cols() {
                        let dot: f64 = (s[0]..s[1]).map(|r| y.get(r, c) * g.get(r, c)).sum();
                        for r in s[0]..s[1] {
                            ga.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                accumulate(grads, *a, Matrix::filled(r, c, g.item()));
            }
            Op::SumCols(a) => {
                let (r, c) = val(*a).shape();
                let mut ga = Matrix::zeros(r, c);
                for i in 0..r {
                    ga.row_mut(i).fill(g.get(i, 0));
                }
                accumulate(grads, *a, ga);
            }
            Op::GatherRows(a, indices) => {
                let (r, c) = val(*a).shape();
                let mut ga = Matrix::zeros(r, c);
                for (k, &i) in indices.iter().enumerate() {
                    for (o, &v) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::ScatterAddRows(a, indices) => {
                accumulate(grads, *a, g.gather_rows(indices));
            }
            Op::MinReduce(a, axis, arg) => {
                let (r, c) = val(*a).shape();
                let mut ga = Matrix::zeros(r, c);
                match axis {
                    Axis::Rows => {
                        for (i, &j) in arg.iter().enumerate() {
                            ga.set(i, j, g.get(i, 0));
                        }
                    }
                    Axis::Cols => {
                        for (j, &i) in arg.iter().enumerate() {
                            ga.set(i, j, g.get(0, j));
                        }
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::GroupMax(a, arg) => {
                let (r, c) = val(*a).shape();
                let mut ga = Matrix::zeros(r, c);
                for gi in 0..g.rows() {
                    for ch in 0..c {
                        let src = arg[gi * c + ch];
                        ga.set(src, ch, ga.get(src, ch) + g.get(gi, ch));
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::ConcatRows(a, b) => {
                let ra = val(*a).rows();
                let cols = g.cols();
                let top = Matrix::from_vec(ra, cols, g.data()[..ra * cols].to_vec()).expect("shape");
                let bottom = Matrix::from_vec(g.rows() - ra, cols, g.data()[ra * cols..].to_vec())
                    .expect("shape");
                accumulate(grads, *a, top);
                accumulate(grads, *b, bottom);
            }
            Op::Interpolate {
                fine,
                coarse,
                feats,
                plan,
            } => {
                let (pf, pc, f) = (val(*fine), val(*coarse), val(*feats));
                let mut g_fine = Matrix::zeros(pf.rows(), pf.cols());
                let mut g_coarse = Matrix::zeros(pc.rows(), pc.cols());
                let mut g_feats = Matrix::zeros(f.rows(), f.cols());
                for (i, src) in plan.sources.iter().enumerate() {
                    let gi = g.row(i);
                    match src {
                        InterpSource::Copy(j) => {
                            for (o, &v) in g_feats.row_mut(*j).iter_mut().zip(gi) {
                                *o += v;
                            }
                        }
                        InterpSource::Blend(js) => {
                            let d: Vec<f64> = js.iter().map(|&j| row_dist(pf.row(i), pc.row(j))).collect();
                            let u: Vec<f64> = d.iter().map(|dk| 1.0 / (dk + INTERP_EPS)).collect();
                            let total: f64 = u.iter().sum();
                            let s: Vec<f64> = js
                                .iter()
                                .map(|&j| gi.iter().zip(f.row(j)).map(|(a, b)| a * b).sum())
                                .collect();
                            let ws: f64 = u.iter().zip(&s).map(|(uk, sk)| uk / total * sk).sum();
                            for (k, &j) in js.iter().enumerate() {
                                let w = u[k] / total;
                                for (o, &v) in g_feats.row_mut(j).iter_mut().zip(gi) {
                                    *o += w * v;
                                }
                                let gu = (s[k] - ws) / total;
                                let gd = -gu * u[k] * u[k];
                                if d[k] > 0.0 {
                                    for ax in 0..3 {
                                        let dir = (pf.get(i, ax) - pc.get(j, ax)) / d[k];
                                        g_fine.set(i, ax, g_fine.get(i, ax) + gd * dir);
                                        g_coarse.set(j, ax, g_coarse.get(j, ax) - gd * dir);
                                    }
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *fine, g_fine);
                accumulate(grads, *coarse, g_coarse);
                accumulate(grads, *feats, g_feats);
            }
            Op::PairwiseDist(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let d = &node.value;
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                let mut gb = Matrix::zeros(y.rows(), y.cols());
                for i in 0..x.rows() {
                    for j in 0..y.rows() {
                        let gij = g.get(i, j);
                        let dij = d.get(i, j);
                        if gij == 0.0 || dij <= 0.0 {
                            continue;
                        }
                        for ax in 0..x.cols() {
                            let t = gij * (x.get(i, ax) - y.get(j, ax)) / dij;
                            ga.set(i, ax, ga.get(i, ax) + t);
                            gb.set(j, ax, gb.get(j, ax) - t);
                        }
                    }
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn softmax_in_place(xs: &mut [f64]) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

fn first_min(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best
}

#[inline]
/// Neumaier summation, returned as the rounded sum and its residual.
fn compensated_sum(xs: &[f64]) -> (f64, f64) {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    let hi = sum + c;
    let lo = if sum.abs() >= c.abs() { (sum - hi) + c } else { (c - hi) + sum };
    (hi, lo)
}

fn row_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    params: BTreeMap<String, Var>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to any recorded node, `None` if unreachable.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for every registered parameter. Parameters the loss does
    /// not depend on get zeros and a warning.
    pub fn params(&self) -> BTreeMap<String, Matrix> {
        self.params
            .iter()
            .zip(&self.shapes)
            .map(|((name, v), &(r, c))| {
                let g = match &self.grads[v.0] {
                    Some(g) => g.clone(),
                    None => {
                        log::warn!("parameter {name} is disconnected from the loss");
                        Matrix::zeros(r, c)
                    }
                };
                (name.clone(), g)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Matrix {
        Matrix::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn square_derivative() {
        let mut t = Tape::new();
        let x = t.param("x", &Matrix::scalar(3.0));
        let y = t.mul(x, x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.params()["x"].item(), 6.0);
    }

    #[test]
    fn relu_sum() {
        let mut t = Tape::new();
        let x = t.param("x", &m(1, 2, &[-1.0, 2.0]));
        let r = t.relu(x);
        let s = t.sum(r);
        let g = t.backward(s).unwrap();
        assert_eq!(g.params()["x"].data(), &[0.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.constant(m(1, 2, &[1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::NotScalarLoss { rows: 1, cols: 2 })));
    }

    #[test]
    fn abs_subgradient_at_zero() {
        let mut t = Tape::new();
        let x = t.param("x", &m(1, 3, &[0.0, -2.0, 1.0]));
        let a = t.abs(x);
        let s = t.sum(a);
        let g = t.backward(s).unwrap();
        assert_eq!(g.params()["x"].data(), &[0.0, -1.0, 1.0]);
    }

    #[test]
    fn min_reduce_routes_to_first_minimizer() {
        let mut t = Tape::new();
        let x = t.param("x", &m(2, 3, &[2.0, 1.0, 1.0, 0.5, 4.0, 0.5]));
        let r = t.min_reduce(x, Axis::Rows);
        let s = t.sum(r);
        let g = t.backward(s).unwrap();
        assert_eq!(g.params()["x"].data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        let mut t = Tape::new();
        let x = t.param("x", &m(2, 2, &[1.0, 3.0, 1.0, 2.0]));
        let c = t.min_reduce(x, Axis::Cols);
        assert_eq!(t.value(c).data(), &[1.0, 2.0]);
        let s = t.sum(c);
        let g = t.backward(s).unwrap();
        assert_eq!(g.params()["x"].data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn disconnected_param_gets_zero() {
        let mut t = Tape::new();
        let x = t.param("x", &Matrix::scalar(2.0));
        let _unused = t.param("unused", &m(1, 2, &[1.0, 1.0]));
        let y = t.mul(x, x);
        let g = t.backward(y).unwrap().params();
        assert_eq!(g["unused"], Matrix::zeros(1, 2));
    }

    #[test]
    fn repeated_param_name_shares_handle() {
        let mut t = Tape::new();
        let a = t.param("w", &Matrix::scalar(1.0));
        let b = t.param("w", &Matrix::scalar(5.0));
        assert_eq!(a, b);
        assert_eq!(t.value(b).item(), 1.0);
    }

    #[test]
    fn signature_tracks_kinks() {
        let build = |x: f64| {
            let mut t = Tape::new();
            let v = t.constant(Matrix::scalar(x));
            t.relu(v);
            t.signature()
        };
        assert_eq!(build(0.3), build(0.7));
        assert_ne!(build(0.3), build(-0.3));
    }

    #[test]
    fn segment_softmax_sums_to_one() {
        let mut t = Tape::new();
        let x = t.constant(m(5, 2, &[1.0, 0.0, 2.0, 0.0, 3.0, 5.0, -1.0, 2.0, 0.0, 0.0]));
        let y = t.segment_softmax(x, vec![0, 1, 1, 3, 5]);
        let v = t.value(y);
        assert_eq!(v.get(0, 0), 1.0);
        for c in 0..2 {
            assert!((v.get(1, c) + v.get(2, c) - 1.0).abs() < 1e-15);
            assert!((v.get(3, c) + v.get(4, c) - 1.0).abs() < 1e-15);
        }
    }
}
