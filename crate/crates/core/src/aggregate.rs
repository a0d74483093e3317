//! Edge-conditioned graph aggregation.
//!
//! For an edge `j -> k` the logit vector is
//! `beta((f_j + d_j) - (f_k + d_k)) + gamma * |p_j - p_k|_1`, where `d` is a
//! learned affine positional encoding and `beta` a two-layer relu MLP. The
//! scalar Manhattan term is broadcast over channels. Weights are a
//! channel-wise softmax over each node's out-edges, and the output is
//! `h_j = sum_k a_jk * (h_prev_k + d_k)` (elementwise).
//!
//! Non-edges never enter the sparse computation, which is equivalent to a
//! dense logit matrix with [`MASK_CONSTANT`] on every non-edge.

use crate::autodiff::{Tape, Var};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::graph::FlexGraph;
use crate::matrix::{FeatureMatrix, Matrix};

/// Logit assigned to non-edges by the equivalent dense formulation.
pub const MASK_CONSTANT: f64 = -1e9;
pub const DEFAULT_GAMMA: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PosEncoding {
    /// `3 x C`
    pub weight: Matrix,
    /// `1 x C`
    pub bias: Matrix,
}

impl PosEncoding {
    pub fn width(&self) -> usize {
        self.weight.cols()
    }

    pub fn on_tape(&self, t: &mut Tape) -> PosEncodingVars {
        PosEncodingVars {
            weight: t.constant(self.weight.clone()),
            bias: t.constant(self.bias.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PosEncodingVars {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationMlp {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl RelationMlp {
    pub fn on_tape(&self, t: &mut Tape) -> RelationMlpVars {
        RelationMlpVars {
            w1: t.constant(self.w1.clone()),
            b1: t.constant(self.b1.clone()),
            w2: t.constant(self.w2.clone()),
            b2: t.constant(self.b2.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RelationMlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl RelationMlpVars {
    pub fn apply(&self, t: &mut Tape, x: Var) -> Var {
        let h = t.affine(x, self.w1, self.b1);
        let h = t.relu(h);
        t.affine(h, self.w2, self.b2)
    }
}

/// Per-edge logit vectors, rows aligned with the graph's `targets`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeLogits(pub Matrix);

/// Per-edge attention weights, rows aligned with the graph's `targets`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeWeights(pub Matrix);

pub fn pos_encode_op(t: &mut Tape, points: Var, enc: &PosEncodingVars) -> Var {
    t.affine(points, enc.weight, enc.bias)
}

pub fn edge_logits_op(
    t: &mut Tape,
    g: &FlexGraph,
    feats: Var,
    delta: Var,
    points: Var,
    beta: &RelationMlpVars,
    gamma: f64,
) -> Var {
    let sources = g.sources();
    let fd = t.add(feats, delta);
    let fs = t.gather_rows(fd, sources.clone());
    let ft = t.gather_rows(fd, g.targets.clone());
    let rel = t.sub(fs, ft);
    let logits = beta.apply(t, rel);
    let ps = t.gather_rows(points, sources);
    let pt = t.gather_rows(points, g.targets.clone());
    let dp = t.sub(ps, pt);
    let dp = t.abs(dp);
    let l1 = t.sum_cols(dp);
    let m = t.scale(l1, gamma);
    t.add_col(logits, m)
}

pub fn masked_softmax_op(t: &mut Tape, g: &FlexGraph, logits: Var) -> Var {
    t.segment_softmax(logits, g.offsets.clone())
}

pub fn aggregate_op(t: &mut Tape, g: &FlexGraph, weights: Var, h_prev: Var, delta: Var) -> Var {
    let hd = t.add(h_prev, delta);
    let gathered = t.gather_rows(hd, g.targets.clone());
    let weighted = t.mul(weights, gathered);
    t.scatter_add_rows(weighted, g.sources(), g.n_nodes)
}

/// Logits, softmax and weighted sum in one go.
pub fn graph_aggregate_op(
    t: &mut Tape,
    g: &FlexGraph,
    feats: Var,
    h_prev: Var,
    points: Var,
    enc: &PosEncodingVars,
    beta: &RelationMlpVars,
    gamma: f64,
) -> Var {
    let delta = pos_encode_op(t, points, enc);
    let logits = edge_logits_op(t, g, feats, delta, points, beta, gamma);
    let weights = masked_softmax_op(t, g, logits);
    aggregate_op(t, g, weights, h_prev, delta)
}

fn check_rows(what: &str, m: &Matrix, n: usize) -> Result<()> {
    if m.rows() != n {
        return Err(Error::ShapeMismatch(format!("{what} has {} rows, expected {n}", m.rows())));
    }
    Ok(())
}

pub fn pos_encode(cloud: &PointCloud, enc: &PosEncoding) -> Result<FeatureMatrix> {
    if enc.weight.rows() != 3 || enc.bias.shape() != (1, enc.width()) {
        return Err(Error::ShapeMismatch("positional encoding must be 3xC with a 1xC bias".into()));
    }
    let mut t = Tape::new();
    let p = t.constant(cloud.to_matrix());
    let e = enc.on_tape(&mut t);
    let out = pos_encode_op(&mut t, p, &e);
    Ok(t.value(out).clone())
}

pub fn edge_logits(
    g: &FlexGraph,
    feats: &FeatureMatrix,
    delta: &FeatureMatrix,
    cloud: &PointCloud,
    beta: &RelationMlp,
    gamma: f64,
) -> Result<EdgeLogits> {
    check_rows("features", feats, g.n_nodes)?;
    check_rows("positional encoding", delta, g.n_nodes)?;
    if cloud.len() != g.n_nodes || feats.cols() != delta.cols() || beta.w1.rows() != feats.cols() {
        return Err(Error::ShapeMismatch("edge logit inputs disagree".into()));
    }
    let mut t = Tape::new();
    let f = t.constant(feats.clone());
    let d = t.constant(delta.clone());
    let p = t.constant(cloud.to_matrix());
    let b = beta.on_tape(&mut t);
    let out = edge_logits_op(&mut t, g, f, d, p, &b, gamma);
    Ok(EdgeLogits(t.value(out).clone()))
}

pub fn masked_softmax(g: &FlexGraph, logits: &EdgeLogits) -> EdgeWeights {
    let mut t = Tape::new();
    let l = t.constant(logits.0.clone());
    let w = masked_softmax_op(&mut t, g, l);
    EdgeWeights(t.value(w).clone())
}

pub fn aggregate(
    g: &FlexGraph,
    weights: &EdgeWeights,
    h_prev: &FeatureMatrix,
    delta: &FeatureMatrix,
) -> Result<FeatureMatrix> {
    check_rows("previous features", h_prev, g.n_nodes)?;
    check_rows("positional encoding", delta, g.n_nodes)?;
    check_rows("edge weights", &weights.0, g.edge_count())?;
    if h_prev.cols() != delta.cols() || weights.0.cols() != h_prev.cols() {
        return Err(Error::ShapeMismatch("aggregation channel counts disagree".into()));
    }
    let mut t = Tape::new();
    let w = t.constant(weights.0.clone());
    let h = t.constant(h_prev.clone());
    let d = t.constant(delta.clone());
    let out = aggregate_op(&mut t, g, w, h, d);
    Ok(t.value(out).clone())
}
