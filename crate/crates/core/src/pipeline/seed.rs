//! Lite seed generator: each FPS anchor of the partial input spawns one
//! point through an MLP over its own feature and the global feature; the
//! union with the input is FPS-reduced to the seed size.

use super::bind;
use super::config::{ModelConfig, SeedFeatures};
use super::extractor::ExtractorVars;
use crate::autodiff::{ParamStore, Tape, Var};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::sampling::fps_canonical;

#[derive(Clone, Debug)]
pub struct SeedVars {
    /// `N_0 x 3`
    pub points: Var,
    /// `N_0 x C`, the previous-stage features of the first block.
    pub features: Var,
    /// Rows of `[partial; generated]` that survived the final FPS.
    pub chosen: Vec<usize>,
}

pub fn generate_seed_op(
    t: &mut Tape,
    store: &ParamStore,
    partial: &PointCloud,
    feats: &ExtractorVars,
    cfg: &ModelConfig,
) -> Result<SeedVars> {
    let n = partial.len();
    if cfg.n_coarse > n {
        return Err(Error::Config(format!("n_coarse {} exceeds the {n} input points", cfg.n_coarse)));
    }
    if cfg.n_seed > n + cfg.n_coarse {
        return Err(Error::Config(format!(
            "n_seed {} exceeds input plus generated points ({})",
            cfg.n_seed,
            n + cfg.n_coarse
        )));
    }
    let anchors = fps_canonical(partial, cfg.n_coarse)?.indices;
    let anchor_pts = t.constant(partial.select(&anchors).to_matrix());
    let fa = t.gather_rows(feats.per_point, anchors.clone());

    let w1f = bind(t, store, "seed.w1f")?;
    let w1g = bind(t, store, "seed.w1g")?;
    let b1 = bind(t, store, "seed.b1")?;
    let w2 = bind(t, store, "seed.w2")?;
    let b2 = bind(t, store, "seed.b2")?;
    let local = t.matmul(fa, w1f);
    let glob = t.matmul(feats.global_f, w1g);
    let glob = t.broadcast_rows(glob, anchors.len());
    let h = t.add(local, glob);
    let h = t.add_row(h, b1);
    let h = t.relu(h);
    let offsets = t.affine(h, w2, b2);
    let generated = t.add(anchor_pts, offsets);

    let input = t.constant(partial.to_matrix());
    let all = t.concat_rows(input, generated);
    let all_cloud = PointCloud::from_matrix(t.value(all))?;
    let chosen = fps_canonical(&all_cloud, cfg.n_seed)?.indices;
    t.note(chosen.iter().copied());
    let points = t.gather_rows(all, chosen.clone());

    let features = match cfg.h0 {
        SeedFeatures::Seed => {
            let all_f = t.concat_rows(feats.per_point, fa);
            let h0 = t.gather_rows(all_f, chosen.clone());
            t.normalize_rows(h0)
        }
        SeedFeatures::Zeros => t.constant(FeatureMatrix::zeros(cfg.n_seed, cfg.width)),
    };
    Ok(SeedVars { points, features, chosen })
}

/// Value-level wrapper returning the seed cloud.
pub fn generate_seed(partial: &PointCloud, cfg: &ModelConfig, store: &ParamStore) -> Result<PointCloud> {
    let mut t = Tape::new();
    let feats = super::extractor::extract_features_op(&mut t, store, partial, cfg)?;
    let seed = generate_seed_op(&mut t, store, partial, &feats, cfg)?;
    PointCloud::from_matrix(t.value(seed.points))
}
