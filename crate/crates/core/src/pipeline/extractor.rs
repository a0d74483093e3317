//! Lite per-point feature extractor: embed, then three rounds of FPS
//! halving with neighbourhood max-pooling. Every level is interpolated back
//! to full resolution and summed.

use super::config::ModelConfig;
use super::init::EXTRACTOR_LEVELS;
use super::bind;
use crate::autodiff::{ParamStore, Tape, Var};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::matrix::{FeatureMatrix, Matrix};
use crate::sampling::{fps_canonical, knn, InterpolationPlan};

pub const MIN_INPUT_POINTS: usize = 16;

#[derive(Clone, Copy, Debug)]
pub struct ExtractorVars {
    /// `1 x C`
    pub global_f: Var,
    /// `N x C`
    pub per_point: Var,
}

pub fn extract_features_op(
    t: &mut Tape,
    store: &ParamStore,
    partial: &PointCloud,
    cfg: &ModelConfig,
) -> Result<ExtractorVars> {
    let n = partial.len();
    if n < MIN_INPUT_POINTS {
        return Err(Error::TooFewPoints { n, min: MIN_INPUT_POINTS });
    }
    let full = t.constant(partial.to_matrix());
    let w = bind(t, store, "extract.embed.w")?;
    let b = bind(t, store, "extract.embed.b")?;
    let f0 = t.affine(full, w, b);
    let f0 = t.relu(f0);

    let mut per_point = f0;
    let mut cloud = partial.clone();
    let mut feats = f0;
    for l in 1..=EXTRACTOR_LEVELS {
        let count = cloud.len().div_ceil(2);
        let sample = fps_canonical(&cloud, count)?;
        let coarse = cloud.select(&sample.indices);
        let k = cfg.extractor_k.min(cloud.len());
        let nbrs = knn(&cloud, &coarse, k)?;

        let mut rel = Vec::with_capacity(count * k * 3);
        let mut flat = Vec::with_capacity(count * k);
        let mut groups = Vec::with_capacity(count);
        for (c, list) in nbrs.lists.iter().enumerate() {
            let center = coarse.get(c);
            let start = flat.len();
            for nb in list {
                let d = cloud.get(nb.index) - center;
                rel.extend([d.x, d.y, d.z]);
                flat.push(nb.index);
            }
            groups.push((start..flat.len()).collect::<Vec<_>>());
        }
        let rel = t.constant(Matrix::from_vec(flat.len(), 3, rel)?);
        let gathered = t.gather_rows(feats, flat);
        let wp = bind(t, store, &format!("extract.l{l}.wp"))?;
        let wf = bind(t, store, &format!("extract.l{l}.wf"))?;
        let bl = bind(t, store, &format!("extract.l{l}.b"))?;
        let a = t.matmul(rel, wp);
        let bterm = t.matmul(gathered, wf);
        let pre = t.add(a, bterm);
        let pre = t.add_row(pre, bl);
        let act = t.relu(pre);
        let pooled = t.group_max(act, &groups);

        let coarse_var = t.constant(coarse.to_matrix());
        let plan = InterpolationPlan::new(&coarse, partial);
        let up = t.interpolate(full, coarse_var, pooled, plan);
        per_point = t.add(per_point, up);

        cloud = coarse;
        feats = pooled;
    }
    let rows = t.value(feats).rows();
    let global_f = t.group_max(feats, &[(0..rows).collect()]);
    Ok(ExtractorVars { global_f, per_point })
}

/// Value-level wrapper: `(global_f (1 x C), per_point (N x C))`.
pub fn extract_features(
    partial: &PointCloud,
    cfg: &ModelConfig,
    store: &ParamStore,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let mut t = Tape::new();
    let out = extract_features_op(&mut t, store, partial, cfg)?;
    Ok((t.value(out.global_f).clone(), t.value(out.per_point).clone()))
}
