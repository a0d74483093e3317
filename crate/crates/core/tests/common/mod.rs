//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use dfg_core::aggregate::{PosEncoding, RelationMlp, MASK_CONSTANT};
use dfg_core::graph::FlexGraph;
use dfg_core::{Matrix, Point3, PointCloud, Rng};

pub fn random_cloud(rng: &mut Rng, n: usize) -> PointCloud {
    let pts = (0..n)
        .map(|_| Point3::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)))
        .collect();
    PointCloud::new(pts).unwrap()
}

/// Cloud on a coarse integer lattice, so distance ties are common.
pub fn lattice_cloud(rng: &mut Rng, n: usize) -> PointCloud {
    let pts = (0..n)
        .map(|_| Point3::new(rng.index(4) as f64, rng.index(4) as f64, rng.index(3) as f64))
        .collect();
    PointCloud::new(pts).unwrap()
}

pub fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform(-scale, scale)).collect()).unwrap()
}

/// Full scan and sort by (squared distance, index).
pub fn brute_knn(cloud: &PointCloud, q: &Point3, k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
    let mut all: Vec<(f64, usize)> = Vec::new();
    for i in 0..cloud.len() {
        if Some(i) == exclude {
            continue;
        }
        let p = cloud.get(i);
        let (dx, dy, dz) = (p.x - q.x, p.y - q.y, p.z - q.z);
        all.push((dx * dx + dy * dy + dz * dz, i));
    }
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(d2, i)| (i, d2.sqrt())).collect()
}

/// Every selection after the first attains the maximum, over all unselected
/// points, of the distance to the already selected set.
pub fn fps_is_greedy(cloud: &PointCloud, picked: &[usize]) -> bool {
    for step in 1..picked.len() {
        let chosen = &picked[..step];
        let gap = |i: usize| {
            chosen
                .iter()
                .map(|&c| cloud.get(i).dist2(&cloud.get(c)))
                .fold(f64::INFINITY, f64::min)
        };
        let best = (0..cloud.len())
            .filter(|i| !chosen.contains(i))
            .map(gap)
            .fold(f64::NEG_INFINITY, f64::max);
        if chosen.contains(&picked[step]) || gap(picked[step]) != best {
            return false;
        }
    }
    true
}

fn mlp(beta: &RelationMlp, x: &[f64]) -> Vec<f64> {
    let hidden: Vec<f64> = (0..beta.w1.cols())
        .map(|h| {
            let s: f64 = x.iter().enumerate().map(|(c, v)| v * beta.w1.get(c, h)).sum();
            (s + beta.b1.get(0, h)).max(0.0)
        })
        .collect();
    (0..beta.w2.cols())
        .map(|o| hidden.iter().enumerate().map(|(h, v)| v * beta.w2.get(h, o)).sum::<f64>() + beta.b2.get(0, o))
        .collect()
}

pub fn dense_pos_encode(cloud: &PointCloud, enc: &PosEncoding) -> Matrix {
    let c = enc.width();
    let mut out = Matrix::zeros(cloud.len(), c);
    for i in 0..cloud.len() {
        let p = cloud.get(i).to_array();
        for j in 0..c {
            let s: f64 = (0..3).map(|a| p[a] * enc.weight.get(a, j)).sum();
            out.set(i, j, s + enc.bias.get(0, j));
        }
    }
    out
}

/// Aggregation over a dense `N x N` logit table in which every non-edge
/// holds the mask constant, followed by an ordinary per-row softmax.
pub fn dense_aggregate(
    g: &FlexGraph,
    feats: &Matrix,
    delta: &Matrix,
    cloud: &PointCloud,
    beta: &RelationMlp,
    gamma: f64,
    h_prev: &Matrix,
) -> Matrix {
    let n = g.n_nodes;
    let c = feats.cols();
    let mut out = Matrix::zeros(n, c);
    for i in 0..n {
        let mut logits = vec![vec![MASK_CONSTANT; c]; n];
        for &j in g.neighbors(i) {
            let x: Vec<f64> = (0..c)
                .map(|ch| feats.get(i, ch) + delta.get(i, ch) - feats.get(j, ch) - delta.get(j, ch))
                .collect();
            let (pi, pj) = (cloud.get(i), cloud.get(j));
            let manhattan = (pi.x - pj.x).abs() + (pi.y - pj.y).abs() + (pi.z - pj.z).abs();
            for (ch, v) in mlp(beta, &x).into_iter().enumerate() {
                logits[j][ch] = v + gamma * manhattan;
            }
        }
        for ch in 0..c {
            let m = (0..n).map(|j| logits[j][ch]).fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = (0..n).map(|j| (logits[j][ch] - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let v: f64 = (0..n).map(|j| e[j] / z * (h_prev.get(j, ch) + delta.get(j, ch))).sum();
            out.set(i, ch, v);
        }
    }
    out
}

/// Mean nearest distance from `a` to `b`, with the same summation order as
/// the library.
pub fn directed(a: &PointCloud, b: &PointCloud, squared: bool) -> f64 {
    let mut total = 0.0;
    for p in a.iter() {
        let mut best = f64::INFINITY;
        for q in b.iter() {
            let (dx, dy, dz) = (p.x - q.x, p.y - q.y, p.z - q.z);
            best = best.min(dx * dx + dy * dy + dz * dz);
        }
        total += if squared { best } else { best.sqrt() };
    }
    total / a.len() as f64
}
