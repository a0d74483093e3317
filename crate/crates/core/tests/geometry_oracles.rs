mod common;

use common::{brute_knn, random_cloud};
use dfg_core::geometry::{estimate_curvature, surface_variation};
use dfg_core::{Point3, PointCloud, Rng};
use nalgebra::{Matrix3, SymmetricEigen};

fn eigen_variation(points: &[Point3]) -> f64 {
    let n = points.len() as f64;
    let mean = points.iter().fold([0.0; 3], |m, p| [m[0] + p.x / n, m[1] + p.y / n, m[2] + p.z / n]);
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = nalgebra::Vector3::new(p.x - mean[0], p.y - mean[1], p.z - mean[2]);
        cov += d * d.transpose();
    }
    let ev = SymmetricEigen::new(cov / n).eigenvalues;
    let total = ev.sum();
    if total <= 0.0 {
        return 0.0;
    }
    ev.min().max(0.0) / total
}

#[test]
fn surface_variation_matches_eigen_decomposition() {
    let mut rng = Rng::new(31);
    for _ in 0..200 {
        let n = 4 + rng.index(30);
        let cloud = random_cloud(&mut rng, n);
        let got = surface_variation(cloud.points());
        let want = eigen_variation(cloud.points());
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        assert!((0.0..=1.0 / 3.0 + 1e-12).contains(&got));
    }
}

#[test]
fn curvature_field_uses_point_and_neighbours() {
    let mut rng = Rng::new(2);
    let cloud = random_cloud(&mut rng, 80);
    let k = 10;
    let field = estimate_curvature(&cloud, k).unwrap();
    for i in 0..cloud.len() {
        let mut hood = vec![cloud.get(i)];
        hood.extend(brute_knn(&cloud, &cloud.get(i), k, Some(i)).into_iter().map(|(j, _)| cloud.get(j)));
        assert!((field.kappa[i] - eigen_variation(&hood)).abs() < 1e-9);
    }
}

#[test]
fn sphere_bends_more_than_plane() {
    let mut rng = Rng::new(9);
    let sphere = PointCloud::new((0..400).map(|_| Point3::from_slice(&rng.unit_vector())).collect()).unwrap();
    let plane = PointCloud::new((0..400).map(|_| Point3::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), 0.0)).collect()).unwrap();
    let ks = estimate_curvature(&sphere, 16).unwrap().kappa;
    let kp = estimate_curvature(&plane, 16).unwrap().kappa;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(kp.iter().all(|&k| k < 1e-12));
    assert!(mean(&ks) > 1e-3);
}
