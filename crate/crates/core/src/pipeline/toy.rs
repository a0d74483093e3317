//! Parametric toy completion tasks: a surface sample as ground truth and
//! the same surface with a region removed as the partial input.

use std::f64::consts::PI;
use std::str::FromStr;

use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const SPHERE_RADIUS: f64 = 0.4;
/// Points with `y > CAP_COS * r` are removed from the sphere.
pub const CAP_COS: f64 = 0.0;
pub const CUBE_SIDE: f64 = 0.7;
pub const CYLINDER_RADIUS: f64 = 0.3;
pub const CYLINDER_HEIGHT: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyTask {
    /// Sphere with the cap beyond [`CAP_COS`] removed.
    SphereMinusCap,
    /// Cube surface without one face.
    CubeMinusFace,
    /// Cylinder (with caps) cut in half by a random vertical plane.
    CylinderMinusHalf,
}

impl FromStr for ToyTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(ToyTask::SphereMinusCap),
            "cube" => Ok(ToyTask::CubeMinusFace),
            "cylinder" => Ok(ToyTask::CylinderMinusHalf),
            other => Err(Error::Config(format!("unknown toy task '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToySample {
    pub partial: PointCloud,
    pub gt: PointCloud,
}

fn sphere_point(rng: &mut Rng, r: f64) -> Point3 {
    Point3::from_slice(&rng.unit_vector()) * r
}

fn cube_point(rng: &mut Rng, face: usize) -> Point3 {
    let h = CUBE_SIDE / 2.0;
    let u = rng.uniform(-h, h);
    let v = rng.uniform(-h, h);
    let s = if face % 2 == 0 { h } else { -h };
    match face / 2 {
        0 => Point3::new(s, u, v),
        1 => Point3::new(u, s, v),
        _ => Point3::new(u, v, s),
    }
}

fn cylinder_point(rng: &mut Rng) -> Point3 {
    let (r, h) = (CYLINDER_RADIUS, CYLINDER_HEIGHT);
    let side = 2.0 * PI * r * h;
    let cap = PI * r * r;
    let pick = rng.uniform(0.0, side + 2.0 * cap);
    let theta = rng.uniform(0.0, 2.0 * PI);
    if pick < side {
        Point3::new(r * theta.cos(), rng.uniform(-h / 2.0, h / 2.0), r * theta.sin())
    } else {
        let rho = r * rng.uniform(0.0, 1.0).sqrt();
        let y = if pick < side + cap { h / 2.0 } else { -h / 2.0 };
        Point3::new(rho * theta.cos(), y, rho * theta.sin())
    }
}

/// Draws points from `gen` until `n` pass `keep`.
fn sample_until(rng: &mut Rng, n: usize, mut gen: impl FnMut(&mut Rng) -> Point3, keep: impl Fn(&Point3) -> bool) -> PointCloud {
    let mut pts = Vec::with_capacity(n);
    while pts.len() < n {
        let p = gen(rng);
        if keep(&p) {
            pts.push(p);
        }
    }
    PointCloud::new(pts).expect("finite toy sample")
}

impl ToyTask {
    pub fn sample(self, rng: &mut Rng, partial_points: usize, gt_points: usize) -> ToySample {
        match self {
            ToyTask::SphereMinusCap => {
                let r = SPHERE_RADIUS;
                let gt = sample_until(rng, gt_points, |g| sphere_point(g, r), |_| true);
                let partial = sample_until(rng, partial_points, |g| sphere_point(g, r), |p| p.y <= CAP_COS * r);
                ToySample { partial, gt }
            }
            ToyTask::CubeMinusFace => {
                let missing = rng.index(6);
                let gt = sample_until(rng, gt_points, |g| { let f = g.index(6); cube_point(g, f) }, |_| true);
                let partial = sample_until(
                    rng,
                    partial_points,
                    |g| {
                        let mut f = g.index(5);
                        if f >= missing {
                            f += 1;
                        }
                        cube_point(g, f)
                    },
                    |_| true,
                );
                ToySample { partial, gt }
            }
            ToyTask::CylinderMinusHalf => {
                let phi = rng.uniform(0.0, 2.0 * PI);
                let n = (phi.cos(), phi.sin());
                let gt = sample_until(rng, gt_points, cylinder_point, |_| true);
                let partial = sample_until(rng, partial_points, cylinder_point, |p| p.x * n.0 + p.z * n.1 <= 0.0);
                ToySample { partial, gt }
            }
        }
    }
}

/// Sphere of radius 0.25 beside a flat square, `n` points on each, for
/// comparing degrees on curved versus flat regions. Returns the cloud and
/// `true` for sphere points.
pub fn sphere_plane(rng: &mut Rng, n: usize) -> (PointCloud, Vec<bool>) {
    let mut pts = Vec::with_capacity(2 * n);
    let c = Point3::new(-0.25, 0.0, 0.0);
    for _ in 0..n {
        pts.push(c + Point3::from_slice(&rng.unit_vector()) * 0.25);
    }
    for _ in 0..n {
        pts.push(Point3::new(rng.uniform(0.1, 0.6), 0.0, rng.uniform(-0.25, 0.25)));
    }
    let labels = (0..2 * n).map(|i| i < n).collect();
    (PointCloud::new(pts).expect("finite"), labels)
}
