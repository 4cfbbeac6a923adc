//! Parametric transformations of oriented point sets: 2D and 3D rotations
//! (optionally with a translation) and thin-plate splines.

use nalgebra::{Matrix2, Matrix3, Quaternion, Rotation2, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, OrientedPointSet, Vec3};
use crate::normals::{estimate_normals, NormalEstimatorConfig};

/// |det J| below this is treated as a fold of the warp.
const SINGULAR_DET: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformFamily {
    Rotation2d,
    Rotation3d,
    Tps,
}

impl TransformFamily {
    pub fn is_rigid(self) -> bool {
        !matches!(self, TransformFamily::Tps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation2DParams {
    /// Radians, counterclockwise.
    pub angle: f64,
    #[serde(default)]
    pub translation: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation3DParams {
    /// Unit quaternion `[w, x, y, z]`.
    pub quaternion: [f64; 4],
    #[serde(default)]
    pub translation: [f64; 3],
}

impl Rotation3DParams {
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Self> {
        let axis = nalgebra::Unit::try_new(axis, 1e-12)
            .ok_or_else(|| Error::InvalidConfig("rotation axis has zero length".into()))?;
        let q = UnitQuaternion::from_axis_angle(&axis, angle);
        Ok(Self {
            quaternion: [q.w, q.i, q.j, q.k],
            translation: [0.0; 3],
        })
    }

    fn unit_quaternion(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.quaternion;
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.unit_quaternion().to_rotation_matrix().into_inner()
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn angle(&self) -> f64 {
        self.unit_quaternion().angle()
    }
}

/// Thin-plate spline `x ↦ A x + t + Σ_j w_j U(‖x − c_j‖)` with
/// `U(r) = r² log r` in 2D and `U(r) = r` in 3D.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TpsDoc", into = "TpsDoc")]
pub struct TpsParams {
    dim: usize,
    affine: Matrix3<f64>,
    translation: Vec3,
    control_points: Vec<Vec3>,
    weights: Vec<Vec3>,
}

#[derive(Serialize, Deserialize)]
struct TpsDoc {
    dim: usize,
    affine: Vec<Vec<f64>>,
    translation: Vec<f64>,
    control_points: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
}

fn vec_from(row: &[f64], dim: usize, what: &str) -> Result<Vec3> {
    if row.len() != dim {
        return Err(Error::InvalidConfig(format!(
            "{what} has {} entries, expected {dim}",
            row.len()
        )));
    }
    let mut v = Vec3::zeros();
    for (k, x) in row.iter().enumerate() {
        v[k] = *x;
    }
    Ok(v)
}

impl TryFrom<TpsDoc> for TpsParams {
    type Error = Error;

    fn try_from(doc: TpsDoc) -> Result<Self> {
        let d = doc.dim;
        if d != 2 && d != 3 {
            return Err(Error::InvalidDimension(d));
        }
        if doc.affine.len() != d {
            return Err(Error::InvalidConfig(
                "affine matrix has the wrong number of rows".into(),
            ));
        }
        let mut affine = Matrix3::identity();
        for (r, row) in doc.affine.iter().enumerate() {
            let v = vec_from(row, d, "affine row")?;
            for c in 0..d {
                affine[(r, c)] = v[c];
            }
        }
        let translation = vec_from(&doc.translation, d, "translation")?;
        let control_points = doc
            .control_points
            .iter()
            .map(|c| vec_from(c, d, "control point"))
            .collect::<Result<Vec<_>>>()?;
        let weights = doc
            .weights
            .iter()
            .map(|w| vec_from(w, d, "weight"))
            .collect::<Result<Vec<_>>>()?;
        TpsParams::new(d, affine, translation, control_points, weights)
    }
}

impl From<TpsParams> for TpsDoc {
    fn from(t: TpsParams) -> Self {
        let d = t.dim;
        let row = |v: &Vec3| v.iter().take(d).cloned().collect::<Vec<_>>();
        TpsDoc {
            dim: d,
            affine: (0..d).map(|r| (0..d).map(|c| t.affine[(r, c)]).collect()).collect(),
            translation: row(&t.translation),
            control_points: t.control_points.iter().map(row).collect(),
            weights: t.weights.iter().map(row).collect(),
        }
    }
}

/// Radial factor `g(r)` with `∇_x U(‖x − c‖) = g(r) (x − c)`.
#[inline]
fn radial_gradient_factor(dim: usize, r: f64) -> f64 {
    if r == 0.0 {
        return 0.0;
    }
    if dim == 2 {
        2.0 * r.ln() + 1.0
    } else {
        1.0 / r
    }
}

/// The radial basis `U(r)`; zero at the origin in both dimensions.
#[inline]
pub fn tps_kernel(dim: usize, r: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else if dim == 2 {
        r * r * r.ln()
    } else {
        r
    }
}

impl TpsParams {
    pub fn new(
        dim: usize,
        affine: Matrix3<f64>,
        translation: Vec3,
        control_points: Vec<Vec3>,
        weights: Vec<Vec3>,
    ) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidDimension(dim));
        }
        if weights.len() != control_points.len() {
            return Err(Error::CountMismatch(control_points.len(), weights.len()));
        }
        let mut affine = affine;
        let mut translation = translation;
        let mut control_points = control_points;
        let mut weights = weights;
        if dim == 2 {
            // the third axis is inert in 2D
            affine[(0, 2)] = 0.0;
            affine[(1, 2)] = 0.0;
            affine[(2, 0)] = 0.0;
            affine[(2, 1)] = 0.0;
            affine[(2, 2)] = 1.0;
            translation.z = 0.0;
            for c in control_points.iter_mut() {
                c.z = 0.0;
            }
            for w in weights.iter_mut() {
                w.z = 0.0;
            }
        }
        Ok(Self {
            dim,
            affine,
            translation,
            control_points,
            weights,
        })
    }

    /// Identity warp anchored at the given control points.
    pub fn identity(dim: usize, control_points: Vec<Vec3>) -> Result<Self> {
        let n = control_points.len();
        Self::new(
            dim,
            Matrix3::identity(),
            Vec3::zeros(),
            control_points,
            vec![Vec3::zeros(); n],
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn affine(&self) -> &Matrix3<f64> {
        &self.affine
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn control_points(&self) -> &[Vec3] {
        &self.control_points
    }

    pub fn weights(&self) -> &[Vec3] {
        &self.weights
    }

    /// Number of free parameters: `N·d + d² + d`.
    pub fn latent_dim(&self) -> usize {
        let d = self.dim;
        self.control_points.len() * d + d * d + d
    }

    pub fn apply_point(&self, x: &Vec3) -> Vec3 {
        let mut y = self.affine * x + self.translation;
        for (c, w) in self.control_points.iter().zip(&self.weights) {
            let r = (x - c).norm();
            y += w * tps_kernel(self.dim, r);
        }
        y
    }

    pub fn jacobian(&self, x: &Vec3) -> Matrix3<f64> {
        let mut j = self.affine;
        for (c, w) in self.control_points.iter().zip(&self.weights) {
            let diff = x - c;
            let g = radial_gradient_factor(self.dim, diff.norm());
            if g != 0.0 {
                j += w * (diff * g).transpose();
            }
        }
        j
    }

    /// Maps a normal by the cofactor matrix of `J(x)` and renormalizes: the
    /// direction of `J^{-T} u` where `det J > 0`, without the sign flip of
    /// `1/det` where the warp folds, so the cost stays continuous.
    fn map_normal(&self, index: usize, x: &Vec3, u: &Vec3) -> Result<Vec3> {
        let j = self.jacobian(x);
        let mapped = if self.dim == 2 {
            let j2 = Matrix2::new(j[(0, 0)], j[(0, 1)], j[(1, 0)], j[(1, 1)]);
            let det = j2.determinant();
            if det.abs() < SINGULAR_DET {
                return Err(Error::SingularJacobian { index, det });
            }
            Vec3::new(
                j2[(1, 1)] * u.x - j2[(1, 0)] * u.y,
                -j2[(0, 1)] * u.x + j2[(0, 0)] * u.y,
                0.0,
            )
        } else {
            let det = j.determinant();
            if det.abs() < SINGULAR_DET {
                return Err(Error::SingularJacobian { index, det });
            }
            let cofactor = j
                .try_inverse()
                .ok_or(Error::SingularJacobian { index, det })?
                .transpose()
                * det;
            cofactor * u
        };
        let n = mapped.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::SingularJacobian { index, det: 0.0 });
        }
        Ok(mapped / n)
    }

    /// `Σ_k w_kᵀ K w_k` over coordinates, with `K_ij = U(‖c_i − c_j‖)`.
    pub fn bending_energy(&self) -> f64 {
        let mut e = 0.0;
        for (i, (ci, wi)) in self.control_points.iter().zip(&self.weights).enumerate() {
            for (cj, wj) in self.control_points.iter().zip(&self.weights).skip(i + 1) {
                e += 2.0 * tps_kernel(self.dim, (ci - cj).norm()) * wi.dot(wj);
            }
        }
        e
    }
}

/// How normals follow a transformation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalMode {
    /// `u ↦ normalize(J(x)^{-T} u)`; exact for rotations.
    #[default]
    Jacobian,
    /// Re-estimate normals from the transformed points.
    Recompute(NormalEstimatorConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Transform {
    Rotation2d(Rotation2DParams),
    Rotation3d(Rotation3DParams),
    Tps(TpsParams),
}

impl Transform {
    pub fn rotation2d(angle: f64) -> Self {
        Transform::Rotation2d(Rotation2DParams {
            angle,
            translation: [0.0; 2],
        })
    }

    pub fn rotation3d_axis_angle(axis: Vec3, angle: f64) -> Result<Self> {
        Ok(Transform::Rotation3d(Rotation3DParams::from_axis_angle(axis, angle)?))
    }

    /// The identity of the requested family; TPS needs its control points.
    pub fn identity(family: TransformFamily, dim: usize, control_points: Option<Vec<Vec3>>) -> Result<Self> {
        match family {
            TransformFamily::Rotation2d => Ok(Self::rotation2d(0.0)),
            TransformFamily::Rotation3d => Ok(Transform::Rotation3d(Rotation3DParams {
                quaternion: [1.0, 0.0, 0.0, 0.0],
                translation: [0.0; 3],
            })),
            TransformFamily::Tps => {
                let cps =
                    control_points.ok_or_else(|| Error::InvalidConfig("TPS identity needs control points".into()))?;
                Ok(Transform::Tps(TpsParams::identity(dim, cps)?))
            }
        }
    }

    pub fn family(&self) -> TransformFamily {
        match self {
            Transform::Rotation2d(_) => TransformFamily::Rotation2d,
            Transform::Rotation3d(_) => TransformFamily::Rotation3d,
            Transform::Tps(_) => TransformFamily::Tps,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Transform::Rotation2d(_) => 2,
            Transform::Rotation3d(_) => 3,
            Transform::Tps(t) => t.dim,
        }
    }

    fn check_dim(&self, shape: &OrientedPointSet) -> Result<()> {
        if shape.dim() != self.dim() {
            return Err(Error::DimensionError {
                expected: self.dim(),
                found: shape.dim(),
            });
        }
        Ok(())
    }

    /// Linear part and translation of a rigid transform.
    fn rigid_parts(&self) -> Option<(Matrix3<f64>, Vec3)> {
        match self {
            Transform::Rotation2d(p) => {
                let r = Rotation2::new(p.angle).into_inner();
                let mut m = Matrix3::identity();
                m.fixed_view_mut::<2, 2>(0, 0).copy_from(&r);
                Some((m, Vec3::new(p.translation[0], p.translation[1], 0.0)))
            }
            Transform::Rotation3d(p) => Some((p.matrix(), Vec3::from(p.translation))),
            Transform::Tps(_) => None,
        }
    }

    pub fn apply_point(&self, x: &Vec3) -> Vec3 {
        match self {
            Transform::Tps(t) => t.apply_point(x),
            _ => {
                let (m, t) = self.rigid_parts().expect("rigid");
                m * x + t
            }
        }
    }

    pub fn apply_to_points(&self, shape: &OrientedPointSet) -> Result<Vec<Vec3>> {
        self.check_dim(shape)?;
        Ok(match self.rigid_parts() {
            Some((m, t)) => shape.points().iter().map(|x| m * x + t).collect(),
            None => shape.points().iter().map(|x| self.apply_point(x)).collect(),
        })
    }

    /// Transforms the normals of `shape`; `transformed` are the already
    /// transformed points, needed only by the recompute mode.
    fn transform_normals(
        &self,
        shape: &OrientedPointSet,
        transformed: &[Vec3],
        mode: &NormalMode,
    ) -> Result<Vec<Vec3>> {
        let normals = shape.normals().ok_or(Error::MissingNormals)?;
        if let NormalMode::Recompute(cfg) = mode {
            let moved = shape.replace_points(transformed.to_vec()).without_normals();
            return estimate_normals(&moved, cfg);
        }
        match (self, self.rigid_parts()) {
            (_, Some((m, _))) => Ok(normals.iter().map(|u| m * u).collect()),
            (Transform::Tps(t), None) => shape
                .points()
                .iter()
                .zip(normals)
                .enumerate()
                .map(|(i, (x, u))| t.map_normal(i, x, u))
                .collect(),
            _ => unreachable!(),
        }
    }

    pub fn apply_to_normals(&self, shape: &OrientedPointSet, mode: &NormalMode) -> Result<Vec<Vec3>> {
        self.check_dim(shape)?;
        let transformed = match mode {
            NormalMode::Recompute(_) => self.apply_to_points(shape)?,
            NormalMode::Jacobian => Vec::new(),
        };
        self.transform_normals(shape, &transformed, mode)
    }

    /// Transforms points and, when present, normals.
    pub fn apply(&self, shape: &OrientedPointSet, mode: &NormalMode) -> Result<OrientedPointSet> {
        let points = self.apply_to_points(shape)?;
        let normals = if shape.normals().is_some() {
            Some(self.transform_normals(shape, &points, mode)?)
        } else {
            None
        };
        Ok(shape.replace_points_normals(points, normals))
    }

    /// Flattens the free parameters. Rotations: `[angle]` or `[w, x, y, z]`,
    /// followed by the translation when `with_translation`. TPS: affine
    /// matrix (row-major), translation, then the warping weights.
    pub fn to_params(&self, with_translation: bool) -> Vec<f64> {
        match self {
            Transform::Rotation2d(p) => {
                let mut v = vec![p.angle];
                if with_translation {
                    v.extend_from_slice(&p.translation);
                }
                v
            }
            Transform::Rotation3d(p) => {
                let mut v = p.quaternion.to_vec();
                if with_translation {
                    v.extend_from_slice(&p.translation);
                }
                v
            }
            Transform::Tps(t) => {
                let d = t.dim;
                let mut v = Vec::with_capacity(t.latent_dim());
                for r in 0..d {
                    for c in 0..d {
                        v.push(t.affine[(r, c)]);
                    }
                }
                v.extend(t.translation.iter().take(d));
                for w in &t.weights {
                    v.extend(w.iter().take(d));
                }
                v
            }
        }
    }

    /// Builds a transform of the same family (and TPS grid) from a parameter
    /// vector laid out as in [`Transform::to_params`]. Quaternions are
    /// renormalized.
    pub fn with_params(&self, params: &[f64], with_translation: bool) -> Result<Transform> {
        let expected = self.to_params(with_translation).len();
        if params.len() != expected {
            return Err(Error::DimensionError {
                expected,
                found: params.len(),
            });
        }
        Ok(match self {
            Transform::Rotation2d(_) => Transform::Rotation2d(Rotation2DParams {
                angle: params[0],
                translation: if with_translation {
                    [params[1], params[2]]
                } else {
                    [0.0; 2]
                },
            }),
            Transform::Rotation3d(_) => {
                let q = &params[..4];
                let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
                if !(n > 0.0) || !n.is_finite() {
                    return Err(Error::NonFiniteObjective);
                }
                Transform::Rotation3d(Rotation3DParams {
                    quaternion: [q[0] / n, q[1] / n, q[2] / n, q[3] / n],
                    translation: if with_translation {
                        [params[4], params[5], params[6]]
                    } else {
                        [0.0; 3]
                    },
                })
            }
            Transform::Tps(t) => {
                let d = t.dim;
                let mut affine = Matrix3::identity();
                let mut k = 0;
                for r in 0..d {
                    for c in 0..d {
                        affine[(r, c)] = params[k];
                        k += 1;
                    }
                }
                let mut translation = Vec3::zeros();
                for c in 0..d {
                    translation[c] = params[k];
                    k += 1;
                }
                let weights = (0..t.control_points.len())
                    .map(|_| {
                        let mut w = Vec3::zeros();
                        for c in 0..d {
                            w[c] = params[k];
                            k += 1;
                        }
                        w
                    })
                    .collect();
                Transform::Tps(TpsParams::new(
                    d,
                    affine,
                    translation,
                    t.control_points.clone(),
                    weights,
                )?)
            }
        })
    }
}

/// Linear blend `Σ α_k θ_k` of same-family transforms. Quaternions are blended
/// on the hemisphere of the first one and renormalized.
pub fn interpolate(transforms: &[Transform], alphas: &[f64]) -> Result<Transform> {
    let first = transforms
        .first()
        .ok_or_else(|| Error::InvalidConfig("interpolation needs at least one transform".into()))?;
    if transforms.len() != alphas.len() {
        return Err(Error::CountMismatch(transforms.len(), alphas.len()));
    }
    for t in transforms {
        if t.family() != first.family() || t.dim() != first.dim() {
            return Err(Error::FamilyMismatch(format!(
                "{:?} vs {:?}",
                first.family(),
                t.family()
            )));
        }
        if let (Transform::Tps(a), Transform::Tps(b)) = (first, t) {
            if a.control_points != b.control_points {
                return Err(Error::GridMismatch);
            }
        }
    }
    let mut blended = vec![0.0; first.to_params(true).len()];
    let reference = first.to_params(true);
    for (t, &alpha) in transforms.iter().zip(alphas) {
        let mut p = t.to_params(true);
        if let Transform::Rotation3d(_) = t {
            let dot: f64 = p[..4].iter().zip(&reference[..4]).map(|(a, b)| a * b).sum();
            if dot < 0.0 {
                p[..4].iter_mut().for_each(|x| *x = -*x);
            }
        }
        for (acc, x) in blended.iter_mut().zip(&p) {
            *acc += alpha * x;
        }
    }
    first.with_params(&blended, true)
}

/// Regular lattice spanning `bbox`, `per_axis[k]` points along axis `k`
/// (corners included). Points are ordered with the first axis varying fastest.
pub fn control_grid(bbox: &BoundingBox, per_axis: &[usize]) -> Result<Vec<Vec3>> {
    let d = bbox.dim;
    if per_axis.len() != d {
        return Err(Error::DimensionError {
            expected: d,
            found: per_axis.len(),
        });
    }
    if per_axis.iter().any(|&n| n < 2) {
        return Err(Error::InvalidConfig(
            "control grid needs at least 2 points per axis".into(),
        ));
    }
    let extent = bbox.extent();
    if (0..d).any(|k| !(extent[k] > 0.0)) {
        return Err(Error::DegenerateShape("bounding box has zero extent on an axis".into()));
    }
    let total: usize = per_axis.iter().product();
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut p = Vec3::zeros();
        for k in 0..d {
            let idx = rem % per_axis[k];
            rem /= per_axis[k];
            let frac = idx as f64 / (per_axis[k] - 1) as f64;
            p[k] = bbox.min[k] + frac * extent[k];
        }
        out.push(p);
    }
    Ok(out)
}

/// Default lattice size: 4 × 3 in 2D (4 along the longer side), 5 × 5 × 5 in 3D.
pub fn default_grid_shape(bbox: &BoundingBox) -> Vec<usize> {
    if bbox.dim == 2 {
        let e = bbox.extent();
        if e.x >= e.y {
            vec![4, 3]
        } else {
            vec![3, 4]
        }
    } else {
        vec![5, 5, 5]
    }
}
