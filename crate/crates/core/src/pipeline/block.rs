//! One coarse-to-fine block: per-point features, detail-driven graphs,
//! edge-conditioned aggregation, fusion, and offset upsampling.

use super::bind;
use super::config::{DegreeMode, GraphMode, StageConfig};
use crate::aggregate::{graph_aggregate_op, PosEncodingVars, RelationMlpVars};
use crate::autodiff::{ParamStore, Tape, Var};
use crate::cloud::PointCloud;
use crate::detail::{
    allocate_degrees, default_degree_window, downsampled_len, normalize_curvature, DegreeAssignment, DetailField,
};
use crate::error::{Error, Result};
use crate::fusion::{global_fusion_op, local_fusion_op, AttentionVars};
use crate::geometry::estimate_curvature;
use crate::graph::{build_global_graph, build_local_graph, FlexGraph};
use crate::matrix::Matrix;
use crate::sampling::{canonical_start, fps, InterpolationPlan};

/// Offsets are `OFFSET_SCALE * tanh(.)`, so each coordinate moves at most this far.
pub const OFFSET_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockDiagnostics {
    pub detail: DetailField,
    /// Raw surface variation per input point.
    pub curvature: Vec<f64>,
    pub degrees: DegreeAssignment,
    pub local: Option<FlexGraph>,
    pub global: Option<FlexGraph>,
}

#[derive(Clone, Debug)]
pub struct BlockVars {
    pub points: Var,
    pub features: Var,
    /// Predicted per-child offsets.
    pub offsets: Var,
    pub diagnostics: BlockDiagnostics,
}

fn structure_note(t: &mut Tape, g: &FlexGraph) {
    t.note(g.offsets.iter().copied());
    t.note(g.targets.iter().copied());
}

fn degree_window(n: usize, stage: &StageConfig) -> (usize, usize) {
    let (lo, hi) = default_degree_window(n);
    let hi = stage.settings.d_max.unwrap_or(hi).min(n - 1);
    let lo = stage.settings.d_min.unwrap_or(lo).min(hi);
    (lo, hi)
}

/// Detail scores and degrees for features `q` on `cloud`, `h_prev` being the
/// previous-stage features. Returns the tape column of scores as well.
pub fn detail_and_degrees_op(
    t: &mut Tape,
    cloud: &PointCloud,
    points: Var,
    q: Var,
    h_prev: Var,
    stage: &StageConfig,
) -> Result<(Var, DetailField, Vec<f64>, DegreeAssignment)> {
    let n = cloud.len();
    let set = &stage.settings;
    let q_du = if set.s == 1 {
        q
    } else {
        let count = downsampled_len(n, set.s);
        if count == 0 {
            return Err(Error::EmptyAfterDownsample);
        }
        let idx = fps(cloud, count, canonical_start(cloud))?.indices;
        t.note(idx.iter().copied());
        let coarse = cloud.select(&idx);
        let plan = InterpolationPlan::new(&coarse, cloud);
        let coarse_pts = t.gather_rows(points, idx.clone());
        let coarse_q = t.gather_rows(q, idx);
        t.interpolate(points, coarse_pts, coarse_q, plan)
    };
    let a = t.sub(q, q_du);
    let a = t.abs(a);
    let a = t.sum_cols(a);
    let b = t.sub(q, h_prev);
    let b = t.abs(b);
    let b = t.sum_cols(b);
    let d_col = t.add(a, b);
    let detail = DetailField { values: t.value(d_col).data().to_vec() };

    let kappa = estimate_curvature(cloud, set.k_c.min(n - 1))?;
    let degrees = match set.degree_mode {
        DegreeMode::Uniform(k) => DegreeAssignment::uniform(n, k.min(n - 1)),
        DegreeMode::Flexible => {
            let norm = normalize_curvature(&kappa, &detail);
            let (lo, hi) = degree_window(n, stage);
            allocate_degrees(&detail, &norm, set.alpha, lo, hi, set.share_mode)?
        }
    };
    Ok((d_col, detail, kappa.kappa, degrees))
}

fn channel_vars(t: &mut Tape, store: &ParamStore, prefix: &str) -> Result<(PosEncodingVars, RelationMlpVars)> {
    Ok((
        PosEncodingVars {
            weight: bind(t, store, &format!("{prefix}.pos.w"))?,
            bias: bind(t, store, &format!("{prefix}.pos.b"))?,
        },
        RelationMlpVars {
            w1: bind(t, store, &format!("{prefix}.beta.w1"))?,
            b1: bind(t, store, &format!("{prefix}.beta.b1"))?,
            w2: bind(t, store, &format!("{prefix}.beta.w2"))?,
            b2: bind(t, store, &format!("{prefix}.beta.b2"))?,
        },
    ))
}

fn attention_vars(t: &mut Tape, store: &ParamStore, prefix: &str, with_g: bool) -> Result<AttentionVars> {
    Ok(AttentionVars {
        w_q: bind(t, store, &format!("{prefix}.wq"))?,
        w_k: bind(t, store, &format!("{prefix}.wk"))?,
        w_v: bind(t, store, &format!("{prefix}.wv"))?,
        w_g: if with_g { Some(bind(t, store, &format!("{prefix}.wg"))?) } else { None },
    })
}

/// Per-point features of a block: `relu(P Wp + H Wh + g Wg + b1) W2 + b2`.
pub fn point_features_op(
    t: &mut Tape,
    store: &ParamStore,
    name: &str,
    points: Var,
    h_prev: Var,
    global_f: Var,
) -> Result<Var> {
    let n = t.value(points).rows();
    let wp = bind(t, store, &format!("{name}.q.wp"))?;
    let wh = bind(t, store, &format!("{name}.q.wh"))?;
    let wg = bind(t, store, &format!("{name}.q.wg"))?;
    let b1 = bind(t, store, &format!("{name}.q.b1"))?;
    let w2 = bind(t, store, &format!("{name}.q.w2"))?;
    let b2 = bind(t, store, &format!("{name}.q.b2"))?;
    let a = t.matmul(points, wp);
    let h = t.matmul(h_prev, wh);
    let g = t.matmul(global_f, wg);
    let g = t.broadcast_rows(g, n);
    let x = t.add(a, h);
    let x = t.add(x, g);
    let x = t.add_row(x, b1);
    let x = t.relu(x);
    Ok(t.affine(x, w2, b2))
}

/// `index` is 1-based and selects the `block{index}.*` parameters.
#[allow(clippy::too_many_arguments)]
pub fn dfg_block_op(
    t: &mut Tape,
    store: &ParamStore,
    index: usize,
    points: Var,
    h_prev: Var,
    global_f: Var,
    stage: &StageConfig,
) -> Result<BlockVars> {
    let name = format!("block{index}");
    let cloud = PointCloud::from_matrix(t.value(points))?;
    let n = cloud.len();
    if t.value(h_prev).shape() != (n, stage.width) {
        return Err(Error::ShapeMismatch(format!(
            "previous features are {:?}, expected {n}x{}",
            t.value(h_prev).shape(),
            stage.width
        )));
    }
    if n < 4 {
        return Err(Error::TooFewPoints { n, min: 4 });
    }
    let set = &stage.settings;
    let q = point_features_op(t, store, &name, points, h_prev, global_f)?;
    let (d_col, detail, curvature, degrees) = detail_and_degrees_op(t, &cloud, points, q, h_prev, stage)?;

    let local = if set.graphs.uses_local() {
        let g = build_local_graph(&cloud, &degrees)?;
        structure_note(t, &g);
        Some(g)
    } else {
        None
    };
    let global = if set.graphs.uses_global() {
        let (g, _) = build_global_graph(&cloud, t.value(q), &degrees, set.anchor_count, canonical_start(&cloud))?;
        structure_note(t, &g);
        Some(g)
    } else {
        None
    };

    let agg = |t: &mut Tape, g: &FlexGraph, ch: &str| -> Result<Var> {
        let (enc, beta) = channel_vars(t, store, &format!("{name}.{ch}"))?;
        Ok(graph_aggregate_op(t, g, q, h_prev, points, &enc, &beta, set.gamma))
    };
    let h_local = match &local {
        Some(g) => Some(agg(t, g, "local")?),
        None => None,
    };
    let h_global = match &global {
        Some(g) => Some(agg(t, g, "global")?),
        None => None,
    };

    let fuse1 = attention_vars(t, store, &format!("{name}.fuse1"), false)?;
    let fuse2 = attention_vars(t, store, &format!("{name}.fuse2"), set.graphs == GraphMode::Both)?;
    // residual connections around both attention blocks
    let fused = match (h_local, h_global) {
        (Some(hl), Some(hg)) => {
            let a = local_fusion_op(t, hl, d_col, &fuse1);
            let x1 = t.add(hl, a);
            let inj = t.matmul(hg, fuse2.w_g.expect("W_g bound in both-channel mode"));
            let b = global_fusion_op(t, x1, Some(inj), &fuse2);
            t.add(x1, b)
        }
        (Some(h), None) | (None, Some(h)) => {
            let a = local_fusion_op(t, h, d_col, &fuse1);
            let x1 = t.add(h, a);
            let b = global_fusion_op(t, x1, None, &fuse2);
            t.add(x1, b)
        }
        (None, None) => unreachable!("at least one graph channel is active"),
    };

    let w1 = bind(t, store, &format!("{name}.mlp.w1"))?;
    let b1 = bind(t, store, &format!("{name}.mlp.b1"))?;
    let w2 = bind(t, store, &format!("{name}.mlp.w2"))?;
    let b2 = bind(t, store, &format!("{name}.mlp.b2"))?;
    let m = t.affine(fused, w1, b1);
    let m = t.relu(m);
    let m = t.affine(m, w2, b2);
    let h = t.add(fused, m);
    let h = t.normalize_rows(h);

    let r = stage.up_ratio;
    let parents: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat(i).take(r)).collect();
    let copies: Vec<usize> = (0..n).flat_map(|_| 0..r).collect();
    let hp = t.gather_rows(h, parents.clone());
    let pp = t.gather_rows(points, parents);
    let wa = bind(t, store, &format!("{name}.up.wa"))?;
    let code = bind(t, store, &format!("{name}.up.code"))?;
    let ba = bind(t, store, &format!("{name}.up.ba"))?;
    let wo = bind(t, store, &format!("{name}.up.wo"))?;
    let bo = bind(t, store, &format!("{name}.up.bo"))?;
    let code = t.gather_rows(code, copies);
    let hidden = t.matmul(hp, wa);
    let hidden = t.add(hidden, code);
    let hidden = t.add_row(hidden, ba);
    let hidden = t.relu(hidden);
    let off = t.affine(hidden, wo, bo);
    let off = t.tanh(off);
    let offsets = t.scale(off, OFFSET_SCALE);
    let next = t.add(pp, offsets);

    Ok(BlockVars {
        points: next,
        features: hp,
        offsets,
        diagnostics: BlockDiagnostics { detail, curvature, degrees, local, global },
    })
}

/// Value-level wrapper around [`dfg_block_op`].
pub fn dfg_block(
    p_prev: &PointCloud,
    h_prev: &Matrix,
    global_f: &Matrix,
    index: usize,
    stage: &StageConfig,
    store: &ParamStore,
) -> Result<(PointCloud, Matrix, BlockDiagnostics)> {
    stage.validate()?;
    let mut t = Tape::new();
    let p = t.constant(p_prev.to_matrix());
    let h = t.constant(h_prev.clone());
    let g = t.constant(global_f.clone());
    let out = dfg_block_op(&mut t, store, index, p, h, g, stage)?;
    Ok((PointCloud::from_matrix(t.value(out.points))?, t.value(out.features).clone(), out.diagnostics))
}
