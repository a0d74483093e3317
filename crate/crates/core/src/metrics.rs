//! Chamfer and fidelity distances, brute force.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    CDL1,
    CDL2,
    FD,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::CDL1 => "cd_l1",
            MetricKind::CDL2 => "cd_l2",
            MetricKind::FD => "fd",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub kind: MetricKind,
    /// Display multiplier; `value` itself is never scaled.
    pub scale_factor: f64,
}

impl MetricValue {
    pub fn reported(&self) -> f64 {
        self.value * self.scale_factor
    }
}

/// Reporting options. `halved` divides the two-sided Chamfer sum by two;
/// it has no effect on fidelity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricOptions {
    pub halved: bool,
    pub scale_factor: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions { halved: false, scale_factor: 1.0 }
    }
}

impl MetricOptions {
    /// Values reported multiplied by 1000.
    pub fn times_1000() -> Self {
        MetricOptions { halved: false, scale_factor: 1e3 }
    }
}

/// Mean over `from` of the distance to the nearest point of `to`.
/// `squared` switches to squared distances.
fn directed_mean(from: &PointCloud, to: &PointCloud, squared: bool) -> f64 {
    let mins: Vec<f64> = from
        .points()
        .par_iter()
        .map(|p| {
            let mut best = f64::INFINITY;
            for q in to.iter() {
                let d = p.dist2(q);
                if d < best {
                    best = d;
                }
            }
            if squared {
                best
            } else {
                best.sqrt()
            }
        })
        .collect();
    mins.iter().sum::<f64>() / from.len() as f64
}

fn chamfer(p: &PointCloud, s: &PointCloud, squared: bool, kind: MetricKind, opts: &MetricOptions) -> Result<MetricValue> {
    // both terms are computed independently and added in a fixed order
    // so swapping the arguments is exact
    let a = directed_mean(p, s, squared);
    let b = directed_mean(s, p, squared);
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let mut value = lo + hi;
    if opts.halved {
        value *= 0.5;
    }
    Ok(MetricValue { value, kind, scale_factor: opts.scale_factor })
}

pub fn chamfer_l1(p: &PointCloud, s: &PointCloud) -> Result<MetricValue> {
    chamfer_l1_with(p, s, &MetricOptions::default())
}

pub fn chamfer_l1_with(p: &PointCloud, s: &PointCloud, opts: &MetricOptions) -> Result<MetricValue> {
    chamfer(p, s, false, MetricKind::CDL1, opts)
}

pub fn chamfer_l2(p: &PointCloud, s: &PointCloud) -> Result<MetricValue> {
    chamfer_l2_with(p, s, &MetricOptions::default())
}

pub fn chamfer_l2_with(p: &PointCloud, s: &PointCloud, opts: &MetricOptions) -> Result<MetricValue> {
    chamfer(p, s, true, MetricKind::CDL2, opts)
}

pub fn fidelity(input_partial: &PointCloud, output: &PointCloud) -> Result<MetricValue> {
    fidelity_with(input_partial, output, &MetricOptions::default())
}

pub fn fidelity_with(input_partial: &PointCloud, output: &PointCloud, opts: &MetricOptions) -> Result<MetricValue> {
    Ok(MetricValue {
        value: directed_mean(input_partial, output, false),
        kind: MetricKind::FD,
        scale_factor: opts.scale_factor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point3;
    use crate::rng::Rng;

    fn pc(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| Point3::from_slice(p)).collect()).unwrap()
    }

    fn random(rng: &mut Rng, n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|_| Point3::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0))).collect()).unwrap()
    }

    #[test]
    fn closed_forms() {
        let a = pc(&[[0.0, 0.0, 0.0]]);
        let b = pc(&[[3.0, 4.0, 0.0]]);
        assert_eq!(chamfer_l1(&a, &b).unwrap().value, 10.0);
        assert_eq!(chamfer_l2(&a, &b).unwrap().value, 50.0);
        let out = pc(&[[1.0, 0.0, 0.0], [5.0, 5.0, 5.0]]);
        assert_eq!(fidelity(&a, &out).unwrap().value, 1.0);
        let h = MetricOptions { halved: true, scale_factor: 1e3 };
        let m = chamfer_l1_with(&a, &b, &h).unwrap();
        assert_eq!(m.value, 5.0);
        assert_eq!(m.reported(), 5000.0);
    }

    #[test]
    fn identical_and_contained() {
        let mut rng = Rng::new(4);
        let a = random(&mut rng, 40);
        assert_eq!(chamfer_l1(&a, &a).unwrap().value, 0.0);
        assert_eq!(chamfer_l2(&a, &a).unwrap().value, 0.0);
        let mut pts = a.points().to_vec();
        pts.extend(random(&mut rng, 10).points());
        let sup = PointCloud::new(pts).unwrap();
        assert_eq!(fidelity(&a, &sup).unwrap().value, 0.0);
    }

    #[test]
    fn symmetric_and_bounded() {
        let mut rng = Rng::new(9);
        for _ in 0..10 {
            let a = random(&mut rng, 30);
            let b = random(&mut rng, 50);
            let ab = chamfer_l1(&a, &b).unwrap().value;
            assert_eq!(ab, chamfer_l1(&b, &a).unwrap().value);
            assert_eq!(chamfer_l2(&a, &b).unwrap().value, chamfer_l2(&b, &a).unwrap().value);
            assert!(fidelity(&a, &b).unwrap().value <= ab);
        }
    }
}
