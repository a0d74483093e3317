//! Detail-richness scores and their conversion into per-point degrees.
//!
//! The score of point `i` is
//! `sum_c |Q[i,c] - Q_du[i,c]| + sum_c |Q[i,c] - H[i,c]|`, where `Q_du` are
//! the features after FPS downsampling and inverse-distance upsampling and
//! `H` the features handed over by the previous stage. The degree budget is
//! `B = alpha * sum_i (D_i + kappa_i)` and each point receives
//! `round(B * D_i / sum D)` connections, clamped to a realizable window.

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::CurvatureField;
use crate::matrix::FeatureMatrix;
use crate::sampling::{fps, interpolate_up};

#[derive(Clone, Debug, PartialEq)]
pub struct DetailField {
    pub values: Vec<f64>,
}

impl DetailField {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

pub fn detail_richness(
    q: &FeatureMatrix,
    q_down_up: &FeatureMatrix,
    h_prev: &FeatureMatrix,
) -> Result<DetailField> {
    if q.shape() != q_down_up.shape() || q.shape() != h_prev.shape() {
        return Err(Error::ShapeMismatch(format!(
            "detail inputs {:?}, {:?}, {:?}",
            q.shape(),
            q_down_up.shape(),
            h_prev.shape()
        )));
    }
    let values = (0..q.rows())
        .map(|i| {
            let a: f64 = q.row(i).iter().zip(q_down_up.row(i)).map(|(x, y)| (x - y).abs()).sum();
            let b: f64 = q.row(i).iter().zip(h_prev.row(i)).map(|(x, y)| (x - y).abs()).sum();
            a + b
        })
        .collect();
    Ok(DetailField { values })
}

/// Number of points kept when downsampling `n` points by ratio `s`.
pub fn downsampled_len(n: usize, s: usize) -> usize {
    n.div_ceil(s)
}

/// FPS to `ceil(N/s)` points from `start`, then interpolate the sampled
/// features back onto every point. `s == 1` returns `q` unchanged.
pub fn down_up_features(
    cloud: &PointCloud,
    q: &FeatureMatrix,
    s: usize,
    start: usize,
) -> Result<FeatureMatrix> {
    if q.rows() != cloud.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows for {} points",
            q.rows(),
            cloud.len()
        )));
    }
    if s == 0 {
        return Err(Error::EmptyAfterDownsample);
    }
    if s == 1 {
        return Ok(q.clone());
    }
    let count = downsampled_len(cloud.len(), s);
    if count == 0 {
        return Err(Error::EmptyAfterDownsample);
    }
    let sample = fps(cloud, count, start)?;
    let coarse = cloud.select(&sample.indices);
    interpolate_up(&coarse, &q.gather_rows(&sample.indices), cloud)
}

/// How per-point shares of the budget are computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShareMode {
    /// Share proportional to `D_i`; curvature only enlarges the budget.
    #[default]
    Literal,
    /// Share proportional to `D_i + kappa_i`.
    Combined,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegreeAssignment {
    pub degrees: Vec<usize>,
    /// Rounded shares before clamping.
    pub unclamped: Vec<i64>,
    pub budget: f64,
    pub alpha: f64,
    pub d_min: usize,
    pub d_max: usize,
}

impl DegreeAssignment {
    /// Every point gets degree `k`.
    pub fn uniform(n: usize, k: usize) -> Self {
        Self {
            degrees: vec![k; n],
            unclamped: vec![k as i64; n],
            budget: (n * k) as f64,
            alpha: 1.0,
            d_min: k,
            d_max: k,
        }
    }

    pub fn total(&self) -> usize {
        self.degrees.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.degrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }
}

/// Default degree window for `n` points: `[4, min(32, n - 1)]`, with the lower
/// bound pulled down when the cloud is too small for it.
pub fn default_degree_window(n: usize) -> (usize, usize) {
    let d_max = 32.min(n.saturating_sub(1));
    (4.min(d_max), d_max)
}

pub fn allocate_degrees(
    detail: &DetailField,
    kappa: &[f64],
    alpha: f64,
    d_min: usize,
    d_max: usize,
    mode: ShareMode,
) -> Result<DegreeAssignment> {
    let n = detail.len();
    if kappa.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: kappa.len(),
        });
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::BadAlpha(alpha));
    }
    if n == 0 || d_min > d_max || d_max > n - 1 {
        return Err(Error::BadDegreeWindow { d_min, d_max, n });
    }
    let d = &detail.values;
    let budget = alpha * d.iter().zip(kappa).map(|(a, k)| a + k).sum::<f64>();
    let shares: Vec<f64> = match mode {
        ShareMode::Literal => d.clone(),
        ShareMode::Combined => d.iter().zip(kappa).map(|(a, k)| a + k).collect(),
    };
    let total: f64 = shares.iter().sum();
    let unclamped: Vec<i64> = if total < 1e-12 {
        vec![(budget / n as f64).round() as i64; n]
    } else {
        shares.iter().map(|s| (budget * s / total).round() as i64).collect()
    };
    let degrees = unclamped
        .iter()
        .map(|&r| r.clamp(d_min as i64, d_max as i64) as usize)
        .collect();
    Ok(DegreeAssignment {
        degrees,
        unclamped,
        budget,
        alpha,
        d_min,
        d_max,
    })
}

/// Min-max rescales curvature onto `[0, max D]` so it is commensurate with
/// the detail scores. Constant curvature (or all-zero detail) maps to zero.
pub fn normalize_curvature(kappa: &CurvatureField, detail: &DetailField) -> Vec<f64> {
    let max_d = detail.values.iter().copied().fold(0.0, f64::max);
    let lo = kappa.kappa.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = kappa.kappa.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max_d <= 0.0 || hi - lo < 1e-12 {
        return vec![0.0; kappa.kappa.len()];
    }
    kappa
        .kappa
        .iter()
        .map(|&k| (k - lo) / (hi - lo) * max_d)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point3;
    use crate::rng::Rng;
    use crate::sampling::fps;
    use proptest::prelude::*;

    fn field(v: &[f64]) -> DetailField {
        DetailField { values: v.to_vec() }
    }

    #[test]
    fn detail_identity_is_zero() {
        let q = FeatureMatrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(detail_richness(&q, &q, &q).unwrap().values, vec![0.0, 0.0]);
    }

    #[test]
    fn detail_hand_case() {
        let q = FeatureMatrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let du = FeatureMatrix::from_vec(1, 2, vec![0.0, 2.0]).unwrap();
        let h = FeatureMatrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(detail_richness(&q, &du, &h).unwrap().values, vec![2.0]);
        let bad = FeatureMatrix::zeros(1, 3);
        assert!(matches!(detail_richness(&q, &bad, &h), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn detail_matches_recomputation() {
        let mut rng = Rng::new(8);
        let m = |rng: &mut Rng| FeatureMatrix::from_vec(64, 8, (0..512).map(|_| rng.uniform(-2.0, 2.0)).collect()).unwrap();
        let (q, du, h) = (m(&mut rng), m(&mut rng), m(&mut rng));
        let d = detail_richness(&q, &du, &h).unwrap();
        for i in 0..64 {
            let mut e = 0.0;
            for c in 0..8 {
                e += (q.get(i, c) - du.get(i, c)).abs();
            }
            for c in 0..8 {
                e += (q.get(i, c) - h.get(i, c)).abs();
            }
            assert!((d.values[i] - e).abs() < 1e-12);
        }
    }

    fn random_cloud(rng: &mut Rng, n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|_| Point3::new(rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0))).collect()).unwrap()
    }

    #[test]
    fn down_up_identity_and_constant() {
        let mut rng = Rng::new(1);
        let cloud = random_cloud(&mut rng, 30);
        let q = FeatureMatrix::from_vec(30, 3, (0..90).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        assert_eq!(down_up_features(&cloud, &q, 1, 0).unwrap(), q);
        let c = FeatureMatrix::filled(30, 3, 0.7);
        let out = down_up_features(&cloud, &c, 3, 0).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn down_up_composes_fps_and_interpolation() {
        let mut rng = Rng::new(2);
        let cloud = random_cloud(&mut rng, 60);
        let q = FeatureMatrix::from_vec(60, 4, (0..240).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let direct = down_up_features(&cloud, &q, 3, 0).unwrap();
        let idx = fps(&cloud, 20, 0).unwrap().indices;
        let composed = interpolate_up(&cloud.select(&idx), &q.gather_rows(&idx), &cloud).unwrap();
        assert_eq!(direct, composed);
    }

    #[test]
    fn allocation_hand_cases() {
        let lit = ShareMode::Literal;
        let a = allocate_degrees(&field(&[1.0, 2.0, 3.0]), &[0.0; 3], 1.0, 0, 2, lit).unwrap();
        assert_eq!(a.budget, 6.0);
        assert_eq!(a.unclamped, vec![1, 2, 3]);
        let a = allocate_degrees(&field(&[2.0; 4]), &[0.0; 4], 2.0, 0, 3, lit).unwrap();
        assert_eq!(a.budget, 16.0);
        assert_eq!(a.unclamped, vec![4, 4, 4, 4]);
        let a = allocate_degrees(&field(&[1.0, 2.0, 3.0]), &[1.0; 3], 1.0, 1, 2, lit).unwrap();
        assert_eq!(a.budget, 9.0);
        assert_eq!(a.unclamped, vec![2, 3, 5]);
        assert_eq!(a.degrees, vec![2, 2, 2]);
    }

    #[test]
    fn allocation_errors_and_fallback() {
        let d = field(&[0.0; 4]);
        assert!(matches!(allocate_degrees(&d, &[0.0; 3], 1.0, 0, 3, ShareMode::Literal), Err(Error::LengthMismatch { .. })));
        assert!(matches!(allocate_degrees(&d, &[0.0; 4], 0.0, 0, 3, ShareMode::Literal), Err(Error::BadAlpha(_))));
        assert!(matches!(allocate_degrees(&d, &[0.0; 4], 1.0, 0, 4, ShareMode::Literal), Err(Error::BadDegreeWindow { .. })));
        // zero detail: B = alpha * sum(kappa) = 8, spread uniformly
        let a = allocate_degrees(&d, &[2.0; 4], 1.0, 0, 3, ShareMode::Literal).unwrap();
        assert_eq!(a.unclamped, vec![2; 4]);
        assert_eq!(a.degrees, vec![2; 4]);
    }

    #[test]
    fn combined_mode_uses_curvature_in_shares() {
        let a = allocate_degrees(&field(&[1.0, 1.0]), &[0.0, 2.0], 1.0, 0, 1, ShareMode::Combined).unwrap();
        // B = 4, shares 1/4 and 3/4
        assert_eq!(a.unclamped, vec![1, 3]);
    }

    #[test]
    fn curvature_normalization() {
        let d = field(&[0.0, 4.0, 2.0]);
        let k = CurvatureField { kappa: vec![0.1, 0.2, 0.3], k: 3 };
        let n = normalize_curvature(&k, &d);
        assert!((n[0] - 0.0).abs() < 1e-12 && (n[1] - 2.0).abs() < 1e-12 && (n[2] - 4.0).abs() < 1e-12);
        let flat = CurvatureField { kappa: vec![0.2; 3], k: 3 };
        assert_eq!(normalize_curvature(&flat, &d), vec![0.0; 3]);
    }

    proptest! {
        #[test]
        fn allocation_invariants(
            d in prop::collection::vec(0.0f64..10.0, 2..40),
            kseed in any::<u64>(),
            alpha in 0.1f64..4.0,
        ) {
            let n = d.len();
            let mut rng = Rng::new(kseed);
            let kappa: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 1.0 / 3.0)).collect();
            let d_max = n - 1;
            let d_min = d_max.min(1);
            let a = allocate_degrees(&field(&d), &kappa, alpha, d_min, d_max, ShareMode::Literal).unwrap();
            let total: usize = a.degrees.iter().sum();
            prop_assert!(total >= n * d_min && total <= n * d_max);
            prop_assert!(a.degrees.iter().all(|&x| x >= d_min && x <= d_max));
            if d.iter().sum::<f64>() >= 1e-12 {
                let s: i64 = a.unclamped.iter().sum();
                prop_assert!((s as f64 - a.budget).abs() <= n as f64 / 2.0 + 1e-9);
                for i in 0..n {
                    for j in 0..n {
                        if d[i] >= d[j] {
                            prop_assert!(a.unclamped[i] >= a.unclamped[j]);
                        }
                    }
                }
            }
        }

        #[test]
        fn doubling_alpha_doubles_budget(d in prop::collection::vec(0.01f64..10.0, 2..20)) {
            let n = d.len();
            let one = allocate_degrees(&field(&d), &vec![0.0; n], 1.0, 0, n - 1, ShareMode::Literal).unwrap();
            let two = allocate_degrees(&field(&d), &vec![0.0; n], 2.0, 0, n - 1, ShareMode::Literal).unwrap();
            prop_assert!((two.budget - 2.0 * one.budget).abs() < 1e-9 * one.budget.max(1.0));
            let scaled: Vec<f64> = d.iter().map(|v| v * 3.5).collect();
            let s = allocate_degrees(&field(&scaled), &vec![0.0; n], 1.0, 0, n - 1, ShareMode::Literal).unwrap();
            let argmax = (0..n).max_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
            let top = *s.unclamped.iter().max().unwrap();
            prop_assert_eq!(s.unclamped[argmax], top);
        }
    }
}
