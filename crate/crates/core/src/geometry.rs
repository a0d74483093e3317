//! PCA surface variation and the Manhattan distance.

use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};
use crate::sampling::nearest;

/// Per-point surface variation `lambda3 / (lambda1 + lambda2 + lambda3)`,
/// each value in `[0, 1/3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureField {
    pub kappa: Vec<f64>,
    pub k: usize,
}

pub const DEFAULT_CURVATURE_K: usize = 16;

/// Curvature from the covariance of each point together with its `k`
/// nearest neighbours.
pub fn estimate_curvature(cloud: &PointCloud, k: usize) -> Result<CurvatureField> {
    if k < 3 {
        return Err(Error::KTooSmall { k, min: 3 });
    }
    if k > cloud.len().saturating_sub(1) {
        return Err(Error::KTooLarge {
            k,
            max: cloud.len().saturating_sub(1),
        });
    }
    let kappa = cloud
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let mut hood: Vec<Point3> = nearest(cloud, q, k, Some(i))
                .into_iter()
                .map(|n| cloud.get(n.index))
                .collect();
            hood.push(*q);
            surface_variation(&hood)
        })
        .collect();
    Ok(CurvatureField { kappa, k })
}

/// Surface variation of a point set; zero for degenerate (near-zero trace) sets.
pub fn surface_variation(points: &[Point3]) -> f64 {
    let cov = covariance(points);
    let trace = cov[0][0] + cov[1][1] + cov[2][2];
    if trace < 1e-12 {
        return 0.0;
    }
    let ev = symmetric_eigenvalues(cov);
    let smallest = ev[2].max(0.0);
    (smallest / ev.iter().map(|v| v.max(0.0)).sum::<f64>()).clamp(0.0, 1.0 / 3.0)
}

fn covariance(points: &[Point3]) -> [[f64; 3]; 3] {
    let n = points.len() as f64;
    let mean = points.iter().fold(Point3::ORIGIN, |acc, &p| acc + p) * (1.0 / n);
    let mut cov = [[0.0; 3]; 3];
    for p in points {
        let d = (*p - mean).to_array();
        for r in 0..3 {
            for c in 0..3 {
                cov[r][c] += d[r] * d[c];
            }
        }
    }
    for row in &mut cov {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    cov
}

/// Eigenvalues of a symmetric 3x3 matrix, descending, by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(mut a: [[f64; 3]; 3]) -> [f64; 3] {
    for _sweep in 0..64 {
        let off = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
        let diag = a[0][0].powi(2) + a[1][1].powi(2) + a[2][2].powi(2);
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q].abs() < f64::MIN_POSITIVE {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            // A <- J^T A J for the (p, q) rotation
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
        }
    }
    let mut ev = [a[0][0], a[1][1], a[2][2]];
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// `gamma * (|dx| + |dy| + |dz|)`.
#[inline]
pub fn manhattan(a: &Point3, b: &Point3, gamma: f64) -> f64 {
    gamma * ((a.x - b.x).abs() + (a.y - b.y).abs() + (a.z - b.z).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn manhattan_examples() {
        assert_eq!(manhattan(&Point3::ORIGIN, &Point3::new(1.0, 2.0, 3.0), 1.0), 6.0);
        let p = Point3::new(0.3, -2.0, 9.0);
        assert_eq!(manhattan(&p, &p, 1.0), 0.0);
        assert_eq!(
            manhattan(&Point3::new(1.0, 1.0, 1.0), &Point3::new(-1.0, -1.0, -1.0), 0.5),
            3.0
        );
    }

    #[test]
    fn planar_grid_is_flat() {
        let pts: Vec<Point3> = (0..25)
            .map(|i| Point3::new((i % 5) as f64, (i / 5) as f64, 0.0))
            .collect();
        let c = PointCloud::new(pts).unwrap();
        let k = estimate_curvature(&c, 8).unwrap();
        for (i, &v) in k.kappa.iter().enumerate() {
            let (x, y) = (i % 5, i / 5);
            if (1..4).contains(&x) && (1..4).contains(&y) {
                assert!(v.abs() < 1e-9, "kappa[{i}] = {v}");
            }
        }
    }

    #[test]
    fn identical_points_are_degenerate() {
        let c = PointCloud::new(vec![Point3::new(1.0, 2.0, 3.0); 9]).unwrap();
        let k = estimate_curvature(&c, 8).unwrap();
        assert!(k.kappa.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn k_bounds() {
        let c = PointCloud::new(vec![Point3::ORIGIN; 5]).unwrap();
        assert!(matches!(estimate_curvature(&c, 2), Err(Error::KTooSmall { .. })));
        assert!(matches!(estimate_curvature(&c, 5), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn jacobi_diagonal_and_known() {
        assert_eq!(symmetric_eigenvalues([[1.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 2.0]]), [3.0, 2.0, 1.0]);
        let ev = symmetric_eigenvalues([[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]]);
        for (a, b) in ev.iter().zip([5.0, 3.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn curvature_rigid_motion_invariant() {
        let mut rng = Rng::new(11);
        let c = PointCloud::new(
            (0..120)
                .map(|_| Point3::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-0.2, 0.2)))
                .collect(),
        )
        .unwrap();
        let (s, co) = (0.6f64.sin(), 0.6f64.cos());
        let moved = c
            .map(|p| Point3::new(co * p.x - s * p.y + 3.0, s * p.x + co * p.y - 1.0, p.z + 0.5))
            .unwrap();
        let a = estimate_curvature(&c, 12).unwrap();
        let b = estimate_curvature(&moved, 12).unwrap();
        for (x, y) in a.kappa.iter().zip(&b.kappa) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn manhattan_metric_axioms(
            a in prop::array::uniform3(-10.0f64..10.0),
            b in prop::array::uniform3(-10.0f64..10.0),
            c in prop::array::uniform3(-10.0f64..10.0),
            g in 0.0f64..5.0,
        ) {
            let (a, b, c) = (Point3::from_slice(&a), Point3::from_slice(&b), Point3::from_slice(&c));
            prop_assert_eq!(manhattan(&a, &b, g), manhattan(&b, &a, g));
            prop_assert!(manhattan(&a, &b, g) >= 0.0);
            prop_assert!(manhattan(&a, &c, g) <= manhattan(&a, &b, g) + manhattan(&b, &c, g) + 1e-12);
            prop_assert!((manhattan(&a, &b, 2.0 * g) - 2.0 * manhattan(&a, &b, g)).abs() < 1e-12);
        }
    }
}
