//! Two-stage attention fusion of local and global graph features.
//!
//! The local block biases its tokens with the per-point detail value,
//! the global block injects a linear transform of the global-graph
//! features into both queries and keys. Single head, `d_k = C`, every
//! point is a token.

use crate::autodiff::{Tape, Var};
use crate::detail::DetailField;
use crate::error::{Error, Result};
use crate::matrix::{FeatureMatrix, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    /// Only read by [`global_fusion`].
    pub w_g: Matrix,
}

impl AttentionParams {
    pub fn width(&self) -> usize {
        self.w_q.rows()
    }

    fn check(&self) -> Result<()> {
        let c = self.width();
        for (name, m) in [("W_Q", &self.w_q), ("W_K", &self.w_k), ("W_V", &self.w_v), ("W_g", &self.w_g)] {
            if m.shape() != (c, c) {
                return Err(Error::ShapeMismatch(format!("{name} is {:?}, expected {c}x{c}", m.shape())));
            }
        }
        Ok(())
    }

    pub fn on_tape(&self, t: &mut Tape) -> AttentionVars {
        AttentionVars {
            w_q: t.constant(self.w_q.clone()),
            w_k: t.constant(self.w_k.clone()),
            w_v: t.constant(self.w_v.clone()),
            w_g: Some(t.constant(self.w_g.clone())),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_g: Option<Var>,
}

/// `softmax(q kᵀ / sqrt(C)) v`
pub fn attention_op(t: &mut Tape, q: Var, k: Var, v: Var) -> Var {
    let c = t.value(q).cols().max(1);
    let s = t.matmul_t(q, k);
    let s = t.scale(s, 1.0 / (c as f64).sqrt());
    let a = t.softmax_rows(s);
    t.matmul(a, v)
}

pub fn local_fusion_op(t: &mut Tape, h_local: Var, detail: Var, p: &AttentionVars) -> Var {
    let biased = t.add_col(h_local, detail);
    let q = t.matmul(biased, p.w_q);
    let k = t.matmul(biased, p.w_k);
    let v = t.matmul(biased, p.w_v);
    attention_op(t, q, k, v)
}

/// `injected` is `h_global · W_g`, or `None` for a zero injection.
pub fn global_fusion_op(t: &mut Tape, h_l: Var, injected: Option<Var>, p: &AttentionVars) -> Var {
    let mut q = t.matmul(h_l, p.w_q);
    let mut k = t.matmul(h_l, p.w_k);
    let v = t.matmul(h_l, p.w_v);
    if let Some(g) = injected {
        q = t.add(q, g);
        k = t.add(k, g);
    }
    attention_op(t, q, k, v)
}

fn detail_column(d: &DetailField) -> Matrix {
    Matrix::from_vec(d.values.len(), 1, d.values.clone()).expect("column shape")
}

pub fn local_fusion(h_local: &FeatureMatrix, detail: &DetailField, params: &AttentionParams) -> Result<FeatureMatrix> {
    params.check()?;
    if h_local.cols() != params.width() || detail.values.len() != h_local.rows() {
        return Err(Error::ShapeMismatch("local fusion inputs disagree".into()));
    }
    let mut t = Tape::new();
    let h = t.constant(h_local.clone());
    let d = t.constant(detail_column(detail));
    let p = params.on_tape(&mut t);
    let out = local_fusion_op(&mut t, h, d, &p);
    Ok(t.value(out).clone())
}

pub fn global_fusion(h_l: &FeatureMatrix, h_global: &FeatureMatrix, params: &AttentionParams) -> Result<FeatureMatrix> {
    params.check()?;
    if h_l.shape() != h_global.shape() || h_l.cols() != params.width() {
        return Err(Error::ShapeMismatch("global fusion inputs disagree".into()));
    }
    let mut t = Tape::new();
    let h = t.constant(h_l.clone());
    let g = t.constant(h_global.clone());
    let p = params.on_tape(&mut t);
    let inj = t.matmul(g, p.w_g.expect("constant W_g"));
    let out = global_fusion_op(&mut t, h, Some(inj), &p);
    Ok(t.value(out).clone())
}
