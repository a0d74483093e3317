use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn dist2(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    #[inline]
    pub fn dist(&self, other: &Point3) -> f64 {
        self.dist2(other).sqrt()
    }

    pub fn dot(&self, other: &Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self::new(s[0], s[1], s[2])
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Ordered, non-empty set of finite points. Indices are point identities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if !points.iter().all(Point3::is_finite) {
            return Err(Error::NonFinite("point cloud"));
        }
        Ok(Self { points })
    }

    /// Builds a cloud from an `N x 3` matrix.
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        if m.cols() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "point matrix must have 3 columns, got {}",
                m.cols()
            )));
        }
        Self::new((0..m.rows()).map(|i| Point3::from_slice(m.row(i))).collect())
    }

    pub fn to_matrix(&self) -> Matrix {
        let data = self.points.iter().flat_map(|p| p.to_array()).collect();
        Matrix::from_vec(self.points.len(), 3, data).expect("3 columns per point")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3> {
        self.points.iter()
    }

    #[inline]
    pub fn get(&self, i: usize) -> Point3 {
        self.points[i]
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    /// Sub-cloud with the given indices, in order. Panics on an empty index list.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        assert!(!indices.is_empty(), "selection must be non-empty");
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
        }
    }

    /// Applies `f` to every point.
    pub fn map(&self, f: impl Fn(Point3) -> Point3) -> Result<PointCloud> {
        PointCloud::new(self.points.iter().map(|&p| f(p)).collect())
    }

    pub fn bounding_box(&self) -> (Point3, Point3) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points[1..] {
            lo = Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        (lo, hi)
    }

    pub fn max_coord_diff(&self, other: &PointCloud) -> f64 {
        assert_eq!(self.len(), other.len());
        self.points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| {
                (a.x - b.x)
                    .abs()
                    .max((a.y - b.y).abs())
                    .max((a.z - b.z).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Result of [`normalize_unit_cube`]: `original = normalized * scale + offset`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub scale: f64,
    pub offset: Point3,
}

impl Normalization {
    pub fn apply(&self, p: Point3) -> Point3 {
        (p - self.offset) * (1.0 / self.scale)
    }

    pub fn invert(&self, p: Point3) -> Point3 {
        p * self.scale + self.offset
    }
}

/// Centers the bounding box at the origin and divides by its largest side,
/// so the cloud fits in `[-0.5, 0.5]^3`. A cloud with zero extent maps to
/// the origin with scale 1.
pub fn normalize_unit_cube(cloud: &PointCloud) -> (PointCloud, Normalization) {
    let (lo, hi) = cloud.bounding_box();
    let offset = (lo + hi) * 0.5;
    let extent = (hi.x - lo.x).max(hi.y - lo.y).max(hi.z - lo.z);
    let scale = if extent > 1e-12 { extent } else { 1.0 };
    let norm = Normalization { scale, offset };
    let out = PointCloud {
        points: cloud.points.iter().map(|&p| norm.apply(p)).collect(),
    };
    (out, norm)
}
