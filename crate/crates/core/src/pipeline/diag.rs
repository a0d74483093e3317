//! Degree maps for arbitrary clouds: the first block's detail scores and
//! degrees, with the extractor's per-point features as the previous stage.

use super::block::{detail_and_degrees_op, point_features_op};
use super::config::ModelConfig;
use super::extractor::extract_features_op;
use crate::autodiff::{ParamStore, Tape};
use crate::cloud::PointCloud;
use crate::detail::{DegreeAssignment, DetailField};
use crate::error::Result;
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct DegreeMap {
    pub detail: DetailField,
    pub curvature: Vec<f64>,
    pub degrees: DegreeAssignment,
    /// The block's per-point features, used for feature-space graphs.
    pub features: Matrix,
}

pub fn degree_map(cloud: &PointCloud, cfg: &ModelConfig, store: &ParamStore) -> Result<DegreeMap> {
    cfg.validate()?;
    let mut t = Tape::new();
    let feats = extract_features_op(&mut t, store, cloud, cfg)?;
    let h_prev = t.normalize_rows(feats.per_point);
    let points = t.constant(cloud.to_matrix());
    let q = point_features_op(&mut t, store, "block1", points, h_prev, feats.global_f)?;
    let (_, detail, curvature, degrees) = detail_and_degrees_op(&mut t, cloud, points, q, h_prev, &cfg.stage(0))?;
    Ok(DegreeMap { detail, curvature, degrees, features: t.value(q).clone() })
}
