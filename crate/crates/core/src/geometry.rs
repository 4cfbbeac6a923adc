//! Oriented point sets and the small amount of geometry shared by every
//! other module.
//!
//! Points are stored as `Vector3<f64>` whatever the ambient dimension. A 2D
//! set keeps `z = 0` on every point and every normal, which is exactly the
//! embedding of S¹ into S² used when 2D normals are fed to the d = 3
//! von Mises-Fisher constants.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Normals must have unit length within this tolerance.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// How the points of a shape are connected, if at all.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    /// Points are ordered along a 2D curve.
    Polyline { closed: bool },
    /// Triangle faces (3D meshes).
    Faces(Vec<[usize; 3]>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrientedPointSet {
    dim: usize,
    points: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
    connectivity: Option<Connectivity>,
}

impl OrientedPointSet {
    pub fn new(dim: usize, points: Vec<Vec3>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidDimension(dim));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidShape(format!("point {i} is not finite")));
            }
            if dim == 2 && p.z != 0.0 {
                return Err(Error::InvalidShape(format!("2D point {i} has non-zero z coordinate")));
            }
        }
        Ok(Self {
            dim,
            points,
            normals: None,
            connectivity: None,
        })
    }

    pub fn from_xy(points: &[[f64; 2]]) -> Result<Self> {
        Self::new(2, points.iter().map(|p| Vec3::new(p[0], p[1], 0.0)).collect())
    }

    pub fn from_xyz(points: &[[f64; 3]]) -> Result<Self> {
        Self::new(3, points.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect())
    }

    /// Attaches normals, checking count, unit length and (in 2D) the z = 0 plane.
    pub fn with_normals(mut self, normals: Vec<Vec3>) -> Result<Self> {
        if normals.len() != self.points.len() {
            return Err(Error::CountMismatch(self.points.len(), normals.len()));
        }
        for (i, u) in normals.iter().enumerate() {
            if ((u.norm() - 1.0).abs() > UNIT_TOLERANCE) || !u.norm().is_finite() {
                return Err(Error::InvalidShape(format!(
                    "normal {i} has norm {} (expected 1)",
                    u.norm()
                )));
            }
            if self.dim == 2 && u.z != 0.0 {
                return Err(Error::InvalidShape(format!("2D normal {i} leaves the z = 0 plane")));
            }
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn with_connectivity(mut self, connectivity: Connectivity) -> Result<Self> {
        match &connectivity {
            Connectivity::Polyline { .. } => {
                if self.dim != 2 {
                    return Err(Error::InvalidShape(
                        "polyline connectivity is only defined for 2D shapes".into(),
                    ));
                }
            }
            Connectivity::Faces(faces) => {
                let n = self.points.len();
                for (f, face) in faces.iter().enumerate() {
                    if face.iter().any(|&v| v >= n) {
                        return Err(Error::InvalidShape(format!(
                            "face {f} references a vertex out of range"
                        )));
                    }
                    if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                        return Err(Error::InvalidShape(format!("face {f} repeats a vertex")));
                    }
                }
            }
        }
        self.connectivity = Some(connectivity);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn connectivity(&self) -> Option<&Connectivity> {
        self.connectivity.as_ref()
    }

    pub fn faces(&self) -> Option<&[[usize; 3]]> {
        match &self.connectivity {
            Some(Connectivity::Faces(f)) => Some(f),
            _ => None,
        }
    }

    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }

    pub fn without_connectivity(mut self) -> Self {
        self.connectivity = None;
        self
    }

    /// Keeps only the listed points (and their normals), dropping connectivity.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            dim: self.dim,
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self.normals.as_ref().map(|n| indices.iter().map(|&i| n[i]).collect()),
            connectivity: None,
        }
    }

    /// Replaces the point coordinates, keeping everything else.
    pub(crate) fn replace_points(&self, points: Vec<Vec3>) -> Self {
        debug_assert_eq!(points.len(), self.points.len());
        Self { points, ..self.clone() }
    }

    /// Replaces points and normals together; normals are trusted to be unit.
    pub(crate) fn replace_points_normals(&self, points: Vec<Vec3>, normals: Option<Vec<Vec3>>) -> Self {
        Self {
            dim: self.dim,
            points,
            normals,
            connectivity: self.connectivity.clone(),
        }
    }

    pub fn centroid(&self) -> Result<Vec3> {
        if self.points.is_empty() {
            return Err(Error::EmptyShape);
        }
        let sum = self.points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
        Ok(sum / self.points.len() as f64)
    }
}

/// Axis-aligned bounds of a point set. In 2D the z range is `[0, 0]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub dim: usize,
    pub min: Vec3,
    pub max: Vec3,
}

impl BoundingBox {
    pub fn new(dim: usize, min: Vec3, max: Vec3) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidDimension(dim));
        }
        if (0..dim).any(|k| min[k] > max[k]) {
            return Err(Error::InvalidShape("bounding box min exceeds max".into()));
        }
        Ok(Self { dim, min, max })
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn max_extent(&self) -> f64 {
        self.extent().iter().take(self.dim).cloned().fold(0.0, f64::max)
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }
}

pub fn bounding_box(shape: &OrientedPointSet) -> Result<BoundingBox> {
    let first = shape.points.first().ok_or(Error::EmptyShape)?;
    let (min, max) = shape
        .points
        .iter()
        .fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
    BoundingBox::new(shape.dim, min, max)
}

/// Uniformly samples `min(m, n)` points without replacement.
///
/// Returned indices are sorted so the sample keeps the source order. The same
/// seed always gives the same sample.
pub fn subsample(shape: &OrientedPointSet, m: usize, seed: u64) -> Result<(OrientedPointSet, Vec<usize>)> {
    if m == 0 {
        return Err(Error::InvalidConfig("subsample size must be at least 1".into()));
    }
    let n = shape.len();
    if m >= n {
        return Ok((shape.clone(), (0..n).collect()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = rand::seq::index::sample(&mut rng, n, m).into_vec();
    indices.sort_unstable();
    Ok((shape.select(&indices), indices))
}

/// Uniform scale and offset taking a shape into the unit box: `p' = (p - offset) * scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitBoxMap {
    pub scale: f64,
    pub offset: Vec3,
}

impl UnitBoxMap {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            offset: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - self.offset) * self.scale
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        p / self.scale + self.offset
    }

    pub fn invert_shape(&self, shape: &OrientedPointSet) -> OrientedPointSet {
        shape.replace_points(shape.points.iter().map(|p| self.invert(p)).collect())
    }
}

/// Maps the shape into `[0, 1]^d` with a single scale, so aspect ratio is kept
/// and normals need no correction.
pub fn normalize_to_unit_box(shape: &OrientedPointSet) -> Result<(OrientedPointSet, UnitBoxMap)> {
    let bbox = bounding_box(shape)?;
    let extent = bbox.max_extent();
    if extent <= 0.0 {
        return Err(Error::DegenerateShape("shape has zero extent on every axis".into()));
    }
    let mut offset = bbox.min;
    if shape.dim == 2 {
        offset.z = 0.0;
    }
    let map = UnitBoxMap {
        scale: 1.0 / extent,
        offset,
    };
    let points = shape.points.iter().map(|p| map.apply(p)).collect();
    Ok((shape.replace_points(points), map))
}
