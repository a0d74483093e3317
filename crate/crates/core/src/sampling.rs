//! Farthest point sampling, exact k-nearest neighbours and inverse-distance
//! feature interpolation.
//!
//! Every selection breaks ties by the lowest index so results are fully
//! deterministic. Neighbour search is an exact brute-force scan; clouds in
//! this crate stay in the low thousands of points.

use std::cmp::Ordering;

use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

/// Indices chosen by [`fps`], in selection order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleResult {
    pub indices: Vec<usize>,
}

impl SampleResult {
    pub fn count(&self) -> usize {
        self.indices.len()
    }
}

/// Greedy max-min farthest point sampling starting at `start`.
pub fn fps(cloud: &PointCloud, count: usize, start: usize) -> Result<SampleResult> {
    let n = cloud.len();
    if count == 0 || count > n {
        return Err(Error::CountOutOfRange { count, n });
    }
    if start >= n {
        return Err(Error::StartOutOfRange { start, n });
    }
    let pts = cloud.points();
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut chosen = vec![false; n];
    let mut indices = Vec::with_capacity(count);
    let mut current = start;
    for _ in 0..count {
        indices.push(current);
        chosen[current] = true;
        let c = pts[current];
        let mut best = usize::MAX;
        let mut best_d = -1.0;
        for (i, p) in pts.iter().enumerate() {
            if chosen[i] {
                continue;
            }
            let d = p.dist2(&c);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            // strict comparison keeps the lowest index on ties
            if min_d2[i] > best_d {
                best_d = min_d2[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(SampleResult { indices })
}

/// Index of the lexicographically smallest point (x, then y, then z, then
/// index). Used as an FPS start that does not depend on point order.
pub fn canonical_start(cloud: &PointCloud) -> usize {
    let pts = cloud.points();
    (0..pts.len())
        .min_by(|&a, &b| {
            let (p, q) = (pts[a], pts[b]);
            p.x.total_cmp(&q.x)
                .then(p.y.total_cmp(&q.y))
                .then(p.z.total_cmp(&q.z))
                .then(a.cmp(&b))
        })
        .expect("non-empty cloud")
}

/// FPS from [`canonical_start`].
pub fn fps_canonical(cloud: &PointCloud, count: usize) -> Result<SampleResult> {
    fps(cloud, count, canonical_start(cloud))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist: f64,
}

/// One ascending-by-distance neighbour list per query.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborList {
    pub lists: Vec<Vec<Neighbor>>,
}

impl NeighborList {
    pub fn indices(&self, query: usize) -> Vec<usize> {
        self.lists[query].iter().map(|n| n.index).collect()
    }
}

fn cmp_candidates(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// The `k` nearest points of `cloud` to `q`, optionally skipping one index.
pub fn nearest(cloud: &PointCloud, q: &Point3, k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
    let mut cand: Vec<(f64, usize)> = cloud
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, p)| (p.dist2(q), i))
        .collect();
    let k = k.min(cand.len());
    if k == 0 {
        return Vec::new();
    }
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, cmp_candidates);
        cand.truncate(k);
    }
    cand.sort_unstable_by(cmp_candidates);
    cand.into_iter()
        .map(|(d2, index)| Neighbor {
            index,
            dist: d2.sqrt(),
        })
        .collect()
}

/// Exact k-NN of every query point among `cloud`. Nothing is excluded.
pub fn knn(cloud: &PointCloud, queries: &PointCloud, k: usize) -> Result<NeighborList> {
    if k == 0 || k > cloud.len() {
        return Err(Error::KTooLarge {
            k,
            max: cloud.len(),
        });
    }
    Ok(NeighborList {
        lists: queries.iter().map(|q| nearest(cloud, q, k, None)).collect(),
    })
}

/// Exact k-NN of every point of `cloud` among the others (self excluded).
pub fn knn_self(cloud: &PointCloud, k: usize) -> Result<NeighborList> {
    let max = cloud.len() - 1;
    if k == 0 || k > max {
        return Err(Error::KTooLarge { k, max });
    }
    Ok(NeighborList {
        lists: cloud
            .iter()
            .enumerate()
            .map(|(i, q)| nearest(cloud, q, k, Some(i)))
            .collect(),
    })
}

/// Number of coarse neighbours blended per fine point.
pub const INTERP_NEIGHBORS: usize = 3;
pub const INTERP_EPS: f64 = 1e-8;
/// A fine point closer than this to its nearest coarse point copies it.
pub const COINCIDENCE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum InterpSource {
    /// Fine point coincides with this coarse point.
    Copy(usize),
    /// Blend of these coarse points, nearest first.
    Blend(Vec<usize>),
}

/// Which coarse points feed each fine point. The weights themselves are
/// recomputed from coordinates so they can be differentiated.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationPlan {
    pub sources: Vec<InterpSource>,
    pub coarse_len: usize,
}

impl InterpolationPlan {
    pub fn new(coarse: &PointCloud, fine: &PointCloud) -> Self {
        let k = INTERP_NEIGHBORS.min(coarse.len());
        let sources = fine
            .iter()
            .map(|q| {
                let nn = nearest(coarse, q, k, None);
                if nn[0].dist < COINCIDENCE_TOL {
                    InterpSource::Copy(nn[0].index)
                } else {
                    InterpSource::Blend(nn.iter().map(|n| n.index).collect())
                }
            })
            .collect();
        Self {
            sources,
            coarse_len: coarse.len(),
        }
    }

    /// Normalized inverse-distance weights `(coarse index, weight)` per fine point.
    pub fn weights(&self, coarse: &PointCloud, fine: &PointCloud) -> Vec<Vec<(usize, f64)>> {
        self.sources
            .iter()
            .enumerate()
            .map(|(i, src)| match src {
                InterpSource::Copy(j) => vec![(*j, 1.0)],
                InterpSource::Blend(js) => {
                    let q = fine.get(i);
                    let u: Vec<f64> = js
                        .iter()
                        .map(|&j| 1.0 / (q.dist(&coarse.get(j)) + INTERP_EPS))
                        .collect();
                    let total: f64 = u.iter().sum();
                    js.iter().zip(u).map(|(&j, w)| (j, w / total)).collect()
                }
            })
            .collect()
    }
}

/// Inverse-distance weighted upsampling of coarse features onto `fine`.
pub fn interpolate_up(
    coarse: &PointCloud,
    coarse_feats: &FeatureMatrix,
    fine: &PointCloud,
) -> Result<FeatureMatrix> {
    if coarse_feats.rows() != coarse.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} coarse features for {} coarse points",
            coarse_feats.rows(),
            coarse.len()
        )));
    }
    let plan = InterpolationPlan::new(coarse, fine);
    Ok(apply_weights(
        &plan.weights(coarse, fine),
        coarse_feats,
    ))
}

pub(crate) fn apply_weights(weights: &[Vec<(usize, f64)>], feats: &FeatureMatrix) -> FeatureMatrix {
    let mut out = FeatureMatrix::zeros(weights.len(), feats.cols());
    for (i, ws) in weights.iter().enumerate() {
        if let [(j, w)] = ws.as_slice() {
            if *w == 1.0 {
                out.row_mut(i).copy_from_slice(feats.row(*j));
                continue;
            }
        }
        let row = out.row_mut(i);
        for &(j, w) in ws {
            for (o, &f) in row.iter_mut().zip(feats.row(j)) {
                *o += w * f;
            }
        }
    }
    out
}
