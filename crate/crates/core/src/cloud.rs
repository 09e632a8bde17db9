//! Point cloud containers and unit-sphere normalization.

use crate::error::{Error, Result};
use crate::Point3;

const NORMAL_TOLERANCE: f64 = 1e-6;

/// An input cloud of `M >= 1` points with optional unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCloud {
    points: Vec<Point3>,
    normals: Option<Vec<Point3>>,
}

impl SparseCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        Self::build(points, None)
    }

    pub fn with_normals(points: Vec<Point3>, normals: Vec<Point3>) -> Result<Self> {
        Self::build(points, Some(normals))
    }

    fn build(points: Vec<Point3>, normals: Option<Vec<Point3>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Range("a cloud needs at least one point".into()));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Contract(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(normals) = &normals {
            if normals.len() != points.len() {
                return Err(Error::Contract(format!(
                    "{} normals for {} points",
                    normals.len(),
                    points.len()
                )));
            }
            for (i, n) in normals.iter().enumerate() {
                let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                if !((len - 1.0).abs() <= NORMAL_TOLERANCE) {
                    return Err(Error::Contract(format!("normal {i} has length {len}")));
                }
            }
        }
        Ok(Self { points, normals })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Point3]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; a cloud holds at least one point.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_parts(self) -> (Vec<Point3>, Option<Vec<Point3>>) {
        (self.points, self.normals)
    }
}

/// An upsampled cloud. `provenance[j] = (i, r)` records the source point and
/// replica index when known.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseCloud {
    pub points: Vec<Point3>,
    pub provenance: Option<Vec<(usize, usize)>>,
}

impl DenseCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Similarity transform mapping a cloud into the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub centroid: Point3,
    pub scale: f64,
}

impl Normalization {
    /// Centroid = mean of the points, scale = largest distance to the centroid.
    pub fn fit(points: &[Point3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Range("cannot normalize an empty cloud".into()));
        }
        let n = points.len() as f64;
        let mut centroid = [0.0; 3];
        for p in points {
            for d in 0..3 {
                centroid[d] += p[d];
            }
        }
        for c in &mut centroid {
            *c /= n;
        }
        let scale = points
            .iter()
            .map(|p| crate::dist2(p, &centroid))
            .fold(0.0, f64::max)
            .sqrt();
        if scale == 0.0 {
            return Err(Error::Degenerate(
                "all points coincide; unit-sphere scale is zero".into(),
            ));
        }
        Ok(Self { centroid, scale })
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        [
            (p[0] - self.centroid[0]) / self.scale,
            (p[1] - self.centroid[1]) / self.scale,
            (p[2] - self.centroid[2]) / self.scale,
        ]
    }

    pub fn invert(&self, p: &Point3) -> Point3 {
        [
            p[0] * self.scale + self.centroid[0],
            p[1] * self.scale + self.centroid[1],
            p[2] * self.scale + self.centroid[2],
        ]
    }

    pub fn apply_all(&self, points: &[Point3]) -> Vec<Point3> {
        points.iter().map(|p| self.apply(p)).collect()
    }

    pub fn invert_all(&self, points: &[Point3]) -> Vec<Point3> {
        points.iter().map(|p| self.invert(p)).collect()
    }
}

/// Maps `points` into the unit sphere, returning the transformed points and
/// the parameters of the inverse transform.
pub fn normalize_unit_sphere(points: &[Point3]) -> Result<(Vec<Point3>, Normalization)> {
    let norm = Normalization::fit(points)?;
    Ok((norm.apply_all(points), norm))
}
