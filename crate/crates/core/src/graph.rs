//! Degree-flexible graph construction.
//!
//! Graphs are directed and stored in compressed adjacency form: the
//! targets of node `i` are `targets[offsets[i]..offsets[i + 1]]`. Messages
//! flow from targets to the source node during aggregation.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::detail::DegreeAssignment;
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::sampling::{fps, nearest, SampleResult};

pub const DEFAULT_ANCHOR_COUNT: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Local,
    Global,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlexGraph {
    pub n_nodes: usize,
    pub channel: Channel,
    pub offsets: Vec<usize>,
    pub targets: Vec<usize>,
    pub degrees: Vec<usize>,
}

impl FlexGraph {
    pub fn from_lists(channel: Channel, lists: &[Vec<usize>]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for l in lists {
            targets.extend_from_slice(l);
            offsets.push(targets.len());
        }
        Self {
            n_nodes: lists.len(),
            channel,
            offsets,
            targets,
            degrees: lists.iter().map(Vec::len).collect(),
        }
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.targets[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }

    /// Source node of every edge, aligned with `targets`.
    pub fn sources(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.targets.len());
        for i in 0..self.n_nodes {
            out.extend(std::iter::repeat_n(i, self.degrees[i]));
        }
        out
    }

    /// Checks every structural invariant, returning the first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.offsets.len() != self.n_nodes + 1 || self.degrees.len() != self.n_nodes {
            return Err("offsets/degrees length".into());
        }
        if self.offsets[0] != 0 || self.offsets[self.n_nodes] != self.targets.len() {
            return Err("offset endpoints".into());
        }
        for i in 0..self.n_nodes {
            if self.offsets[i] > self.offsets[i + 1] {
                return Err(format!("offsets decrease at {i}"));
            }
            let nb = self.neighbors(i);
            if nb.len() != self.degrees[i] {
                return Err(format!("node {i} degree {} != {}", nb.len(), self.degrees[i]));
            }
            let mut seen = HashSet::new();
            for &t in nb {
                if t >= self.n_nodes {
                    return Err(format!("node {i} target {t} out of range"));
                }
                if t == i {
                    return Err(format!("self loop at {i}"));
                }
                if !seen.insert(t) {
                    return Err(format!("duplicate target {t} at node {i}"));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: FlexGraph = serde_json::from_str(text)?;
        g.validate().map_err(Error::Config)?;
        Ok(g)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

/// FPS-selected anchor nodes for the global channel.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    pub indices: Vec<usize>,
    pub features: FeatureMatrix,
}

/// Node `i` links to its `degrees[i]` nearest other points.
pub fn build_local_graph(cloud: &PointCloud, degrees: &DegreeAssignment) -> Result<FlexGraph> {
    let n = cloud.len();
    if degrees.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: degrees.len(),
        });
    }
    let mut lists = Vec::with_capacity(n);
    for (i, &d) in degrees.degrees.iter().enumerate() {
        if d > n - 1 {
            return Err(Error::DegreeExceedsN {
                node: i,
                degree: d,
                available: n - 1,
            });
        }
        lists.push(
            nearest(cloud, &cloud.get(i), d, Some(i))
                .into_iter()
                .map(|nb| nb.index)
                .collect(),
        );
    }
    Ok(FlexGraph::from_lists(Channel::Local, &lists))
}

/// Per-node global degree: half the local degree (rounded up), at least 1,
/// at most the number of anchors other than the node itself.
pub fn global_degree(local: usize, anchors: usize, is_anchor: bool) -> usize {
    let cap = anchors - usize::from(is_anchor);
    local.div_ceil(2).clamp(1, cap.max(1)).min(cap)
}

/// Anchors are `fps(cloud, min(anchor_count, N), start)`; node `i` links to
/// the anchors closest to it in feature space. Ties go to the anchor that
/// was sampled first.
pub fn build_global_graph(
    cloud: &PointCloud,
    feats: &FeatureMatrix,
    degrees: &DegreeAssignment,
    anchor_count: usize,
    start: usize,
) -> Result<(FlexGraph, AnchorSet)> {
    let n = cloud.len();
    if anchor_count == 0 {
        return Err(Error::CountOutOfRange { count: 0, n });
    }
    if feats.rows() != n || degrees.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows and {} degrees for {n} points",
            feats.rows(),
            degrees.len()
        )));
    }
    let SampleResult { indices } = fps(cloud, anchor_count.min(n), start)?;
    let mut anchor_pos = vec![usize::MAX; n];
    for (pos, &a) in indices.iter().enumerate() {
        anchor_pos[a] = pos;
    }
    let mut lists = Vec::with_capacity(n);
    for i in 0..n {
        let is_anchor = anchor_pos[i] != usize::MAX;
        let d = global_degree(degrees.degrees[i], indices.len(), is_anchor);
        let fi = feats.row(i);
        let mut cand: Vec<(f64, usize)> = indices
            .iter()
            .enumerate()
            .filter(|(_, &a)| a != i)
            .map(|(pos, &a)| {
                let d2: f64 = fi.iter().zip(feats.row(a)).map(|(x, y)| (x - y) * (x - y)).sum();
                (d2, pos)
            })
            .collect();
        cand.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        lists.push(cand.iter().take(d).map(|&(_, pos)| indices[pos]).collect());
    }
    let anchors = AnchorSet {
        features: feats.gather_rows(&indices),
        indices,
    };
    Ok((FlexGraph::from_lists(Channel::Global, &lists), anchors))
}

/// Membership predicate over ordered node pairs.
#[derive(Clone, Debug)]
pub struct Adjacency {
    rows: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn connected(&self, j: usize, k: usize) -> bool {
        self.rows.get(j).is_some_and(|r| r.binary_search(&k).is_ok())
    }
}

pub fn mask_matrix(g: &FlexGraph) -> Adjacency {
    Adjacency {
        rows: (0..g.n_nodes)
            .map(|i| {
                let mut r = g.neighbors(i).to_vec();
                r.sort_unstable();
                r
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point3;
    use crate::rng::Rng;
    use crate::sampling::knn_self;

    fn random_cloud(rng: &mut Rng, n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|_| Point3::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0))).collect()).unwrap()
    }

    #[test]
    fn uniform_degrees_reproduce_knn() {
        let mut rng = Rng::new(4);
        let c = random_cloud(&mut rng, 5);
        let g = build_local_graph(&c, &DegreeAssignment::uniform(5, 2)).unwrap();
        let nl = knn_self(&c, 2).unwrap();
        for i in 0..5 {
            assert_eq!(g.neighbors(i), nl.indices(i).as_slice());
        }
        g.validate().unwrap();
    }

    #[test]
    fn degrees_are_realized() {
        let mut rng = Rng::new(5);
        let c = random_cloud(&mut rng, 6);
        let mut d = DegreeAssignment::uniform(6, 2);
        d.degrees = vec![1, 3, 0, 5, 2, 2];
        let g = build_local_graph(&c, &d).unwrap();
        assert_eq!(g.neighbors(0).len(), 1);
        assert_eq!(g.neighbors(1).len(), 3);
        assert_eq!(g.edge_count(), 13);
        g.validate().unwrap();
        d.degrees[2] = 6;
        assert!(matches!(build_local_graph(&c, &d), Err(Error::DegreeExceedsN { node: 2, .. })));
    }

    #[test]
    fn small_cloud_uses_all_points_as_anchors() {
        let mut rng = Rng::new(6);
        let c = random_cloud(&mut rng, 4);
        let f = FeatureMatrix::filled(4, 3, 1.0);
        let (g, anchors) = build_global_graph(&c, &f, &DegreeAssignment::uniform(4, 2), 512, 0).unwrap();
        assert_eq!(anchors.indices.len(), 4);
        g.validate().unwrap();
        // identical features: ties resolved by anchor order, self skipped
        for i in 0..4 {
            let expect: Vec<usize> = anchors.indices.iter().copied().filter(|&a| a != i).take(1).collect();
            assert_eq!(g.neighbors(i), expect.as_slice());
        }
    }

    #[test]
    fn global_degree_rule() {
        assert_eq!(global_degree(16, 512, false), 8);
        assert_eq!(global_degree(5, 512, true), 3);
        assert_eq!(global_degree(0, 512, false), 1);
        assert_eq!(global_degree(40, 4, true), 3);
        assert_eq!(global_degree(40, 4, false), 4);
    }

    #[test]
    fn global_graph_matches_brute_force() {
        let mut rng = Rng::new(7);
        let n = 300;
        let c = random_cloud(&mut rng, n);
        let f = FeatureMatrix::from_vec(n, 5, (0..n * 5).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let mut d = DegreeAssignment::uniform(n, 0);
        d.degrees = (0..n).map(|_| rng.index(20)).collect();
        let (g, anchors) = build_global_graph(&c, &f, &d, 64, 0).unwrap();
        g.validate().unwrap();
        assert_eq!(anchors.indices, fps(&c, 64, 0).unwrap().indices);
        for i in 0..n {
            let is_anchor = anchors.indices.contains(&i);
            let want = (d.degrees[i].div_ceil(2)).clamp(1, 64 - usize::from(is_anchor));
            let mut all: Vec<(f64, usize, usize)> = anchors
                .indices
                .iter()
                .enumerate()
                .filter(|(_, &a)| a != i)
                .map(|(p, &a)| {
                    let s: f64 = (0..5).map(|ch| (f.get(i, ch) - f.get(a, ch)).powi(2)).sum();
                    (s, p, a)
                })
                .collect();
            all.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
            let expect: Vec<usize> = all.iter().take(want).map(|t| t.2).collect();
            assert_eq!(g.neighbors(i), expect.as_slice());
        }
    }

    #[test]
    fn mask_is_directed_membership() {
        let g = FlexGraph::from_lists(Channel::Local, &[vec![1], vec![], vec![0, 1]]);
        let m = mask_matrix(&g);
        assert!(m.connected(0, 1));
        assert!(!m.connected(1, 0));
        assert!(m.connected(2, 0) && m.connected(2, 1) && !m.connected(2, 2));
        let empty = FlexGraph::from_lists(Channel::Local, &[vec![], vec![]]);
        let m = mask_matrix(&empty);
        assert!((0..2).all(|a| (0..2).all(|b| !m.connected(a, b))));
    }

    #[test]
    fn json_round_trip_has_schema_fields() {
        let g = FlexGraph::from_lists(Channel::Global, &[vec![1], vec![0]]);
        let text = g.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["n_nodes", "channel", "offsets", "targets", "degrees"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["channel"], "global");
        assert_eq!(FlexGraph::from_json(&text).unwrap(), g);
    }
}
