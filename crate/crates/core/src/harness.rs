//! Synthetic experiments: shape generators, ground-truth deformations,
//! perturbations, error scoring and a batch runner producing CSV rows and a
//! per-value summary.

use std::f64::consts::TAU;
use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::costs::CostFamily;
use crate::error::{Error, Result};
use crate::geometry::{bounding_box, normalize_to_unit_box, subsample, Connectivity, OrientedPointSet, Vec3};
use crate::normals::{normals_knn_pca, normals_mesh};
use crate::optimize::{register, AnnealingSchedule, CorrespondenceOptions, RegisterOptions};
use crate::par;
use crate::transforms::{tps_kernel, NormalMode, TpsParams, Transform, TransformFamily};

/// Closed parametric curve families.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    /// `r(t) = 1 + Σ_{k=2..5} a_k cos(k t + φ_k)` with seeded `a_k ∈ [0.05, 0.15]`.
    #[default]
    Fourier,
    Circle,
}

/// Radial harmonics of a Fourier-perturbed circle, for `k = 2..5`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FourierCurve {
    pub amplitudes: [f64; 4],
    pub phases: [f64; 4],
}

impl FourierCurve {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amplitudes = std::array::from_fn(|_| rng.random_range(0.05..=0.15));
        let phases = std::array::from_fn(|_| rng.random_range(0.0..TAU));
        Self { amplitudes, phases }
    }

    pub fn circle() -> Self {
        Self {
            amplitudes: [0.0; 4],
            phases: [0.0; 4],
        }
    }

    fn radius(&self, t: f64) -> (f64, f64) {
        let mut r = 1.0;
        let mut dr = 0.0;
        for (i, (a, phi)) in self.amplitudes.iter().zip(&self.phases).enumerate() {
            let k = (i + 2) as f64;
            r += a * (k * t + phi).cos();
            dr -= a * k * (k * t + phi).sin();
        }
        (r, dr)
    }

    /// `n` points at uniform parameter values, counterclockwise, with exact
    /// outward unit normals and closed polyline connectivity.
    pub fn sample(&self, n: usize) -> Result<OrientedPointSet> {
        if n < 8 {
            return Err(Error::InsufficientPoints { n, k: 8 });
        }
        let mut points = Vec::with_capacity(n);
        let mut normals = Vec::with_capacity(n);
        for i in 0..n {
            let t = TAU * i as f64 / n as f64;
            let (r, dr) = self.radius(t);
            let (s, c) = t.sin_cos();
            points.push(Vec3::new(r * c, r * s, 0.0));
            let tangent = Vec3::new(dr * c - r * s, dr * s + r * c, 0.0).normalize();
            normals.push(Vec3::new(tangent.y, -tangent.x, 0.0));
        }
        OrientedPointSet::new(2, points)?
            .with_normals(normals)?
            .with_connectivity(Connectivity::Polyline { closed: true })
    }
}

/// A seeded closed curve with analytic normals, scaled into the unit box.
pub fn gen_curve(kind: CurveKind, n: usize, seed: u64) -> Result<OrientedPointSet> {
    let curve = match kind {
        CurveKind::Fourier => FourierCurve::random(seed),
        CurveKind::Circle => FourierCurve::circle(),
    };
    Ok(normalize_to_unit_box(&curve.sample(n)?)?.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshKind {
    /// Subdivided icosahedron with smooth random radial bumps.
    #[default]
    Icosphere,
    /// Torus with smooth random radial bumps on the tube.
    Torus,
}

/// Triangle mesh: vertices and counterclockwise (outward) faces.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    /// Unit icosphere after `level` 4-to-1 subdivisions (`10·4^level + 2` vertices).
    pub fn icosphere(level: usize) -> Self {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut vertices: Vec<Vec3> = [
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ]
        .iter()
        .map(|v| Vec3::from(*v).normalize())
        .collect();
        let mut faces = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..level {
            let mut midpoint = std::collections::HashMap::new();
            let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec3>| {
                *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    vertices.push(((vertices[a] + vertices[b]) / 2.0).normalize());
                    vertices.len() - 1
                })
            };
            let mut next = Vec::with_capacity(faces.len() * 4);
            for [a, b, c] in faces {
                let ab = mid(a, b, &mut vertices);
                let bc = mid(b, c, &mut vertices);
                let ca = mid(c, a, &mut vertices);
                next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        Self { vertices, faces }
    }

    /// Torus with `nu × nv` vertices, major radius 1 and tube radius `r`.
    pub fn torus(nu: usize, nv: usize, r: f64) -> Self {
        let mut vertices = Vec::with_capacity(nu * nv);
        for i in 0..nu {
            let u = TAU * i as f64 / nu as f64;
            for j in 0..nv {
                let v = TAU * j as f64 / nv as f64;
                let rho = 1.0 + r * v.cos();
                vertices.push(Vec3::new(rho * u.cos(), rho * u.sin(), r * v.sin()));
            }
        }
        let idx = |i: usize, j: usize| (i % nu) * nv + (j % nv);
        let mut faces = Vec::with_capacity(2 * nu * nv);
        for i in 0..nu {
            for j in 0..nv {
                let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            }
        }
        Self { vertices, faces }
    }

    /// Moves every vertex along `direction(v)` by a smooth seeded bump field.
    fn bump<F: Fn(&Vec3) -> (Vec3, Vec3)>(&mut self, seed: u64, amplitude: f64, frame: F) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves: Vec<(Vec3, f64, f64, f64)> = (0..6)
            .map(|_| {
                let dir: [f64; 3] = UnitSphere.sample(&mut rng);
                let freq = rng.random_range(1.0..3.0);
                let phase = rng.random_range(0.0..TAU);
                let amp = rng.random_range(0.0..amplitude);
                (Vec3::from(dir), freq, phase, amp)
            })
            .collect();
        for v in &mut self.vertices {
            let (anchor, dir) = frame(v);
            let offset: f64 = waves
                .iter()
                .map(|(w, f, p, a)| a * (f * w.dot(&anchor) + p).cos())
                .sum();
            *v += dir * offset;
        }
    }

    pub fn to_shape(&self) -> Result<OrientedPointSet> {
        let normals = normals_mesh(&self.vertices, &self.faces, 10)?.normals;
        OrientedPointSet::new(3, self.vertices.clone())?
            .with_normals(normals)?
            .with_connectivity(Connectivity::Faces(self.faces.clone()))
    }
}

/// A seeded bumpy closed surface with face-averaged normals, scaled into the
/// unit box. If the mesh has more than `n` vertices, `n` are kept at random
/// (connectivity is then dropped).
pub fn gen_mesh(kind: MeshKind, n: usize, seed: u64) -> Result<OrientedPointSet> {
    if n < 12 {
        return Err(Error::InsufficientPoints { n, k: 12 });
    }
    let mesh = match kind {
        MeshKind::Icosphere => {
            let mut level = 0;
            while 10 * 4usize.pow(level as u32) + 2 < n {
                level += 1;
            }
            let mut m = Mesh::icosphere(level);
            m.bump(seed, 0.08, |v| (*v, v.normalize()));
            m
        }
        MeshKind::Torus => {
            let nv = ((n as f64 / 3.0).sqrt().ceil() as usize).max(6);
            let nu = (3 * nv).max(n.div_ceil(nv));
            let mut m = Mesh::torus(nu, nv, 0.4);
            m.bump(seed, 0.03, |v| {
                let ring = Vec3::new(v.x, v.y, 0.0).normalize();
                (*v, (v - ring).normalize())
            });
            m
        }
    };
    let shape = mesh.to_shape()?;
    let shape = if shape.len() > n {
        subsample(&shape, n, seed ^ 0x5eed)?.0
    } else {
        shape
    };
    Ok(normalize_to_unit_box(&shape)?.0)
}

/// Control points of the ground-truth warp: bounding-box corners, edge
/// midpoints and centre in 2D; the 8 corners and centre in 3D.
pub fn deformation_controls(shape: &OrientedPointSet) -> Result<Vec<Vec3>> {
    let b = bounding_box(shape)?;
    let (lo, hi, mid) = (b.min, b.max, b.center());
    Ok(if shape.dim() == 2 {
        let xs = [lo.x, mid.x, hi.x];
        let ys = [lo.y, mid.y, hi.y];
        ys.iter()
            .flat_map(|&y| xs.iter().map(move |&x| Vec3::new(x, y, 0.0)))
            .collect()
    } else {
        let mut c: Vec<Vec3> = (0..8)
            .map(|i| {
                Vec3::new(
                    if i & 1 == 0 { lo.x } else { hi.x },
                    if i & 2 == 0 { lo.y } else { hi.y },
                    if i & 4 == 0 { lo.z } else { hi.z },
                )
            })
            .collect();
        c.push(mid);
        c
    })
}

/// The TPS that interpolates `controls[k] ↦ targets[k]` exactly.
pub fn fit_tps(dim: usize, controls: &[Vec3], targets: &[Vec3]) -> Result<TpsParams> {
    let n = controls.len();
    if targets.len() != n {
        return Err(Error::CountMismatch(n, targets.len()));
    }
    let size = n + dim + 1;
    let mut l = DMatrix::<f64>::zeros(size, size);
    let mut rhs = DMatrix::<f64>::zeros(size, dim);
    for i in 0..n {
        for j in 0..n {
            l[(i, j)] = tps_kernel(dim, (controls[i] - controls[j]).norm());
        }
        l[(i, n)] = 1.0;
        l[(n, i)] = 1.0;
        for k in 0..dim {
            l[(i, n + 1 + k)] = controls[i][k];
            l[(n + 1 + k, i)] = controls[i][k];
            rhs[(i, k)] = targets[i][k];
        }
    }
    let sol = l
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::DegenerateShape("TPS interpolation system is singular".into()))?;
    let weights = (0..n)
        .map(|i| {
            let mut w = Vec3::zeros();
            (0..dim).for_each(|k| w[k] = sol[(i, k)]);
            w
        })
        .collect();
    let mut translation = Vec3::zeros();
    let mut affine = Matrix3::identity();
    for k in 0..dim {
        translation[k] = sol[(n, k)];
        for c in 0..dim {
            affine[(k, c)] = sol[(n + 1 + c, k)];
        }
    }
    TpsParams::new(dim, affine, translation, controls.to_vec(), weights)
}

/// Seeded TPS warp whose control-point displacements have standard deviation
/// `0.02 · degree · diag(bbox)`. Returns the warped shape (normals by the
/// Jacobian) and the ground-truth transform.
pub fn deform_tps(shape: &OrientedPointSet, degree: f64, seed: u64) -> Result<(OrientedPointSet, Transform)> {
    if !(degree >= 0.0) || !degree.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "degree of deformation {degree} must be non-negative"
        )));
    }
    let controls = deformation_controls(shape)?;
    let sigma = 0.02 * degree * bounding_box(shape)?.diagonal();
    let displacements = gaussian_offsets(controls.len(), shape.dim(), seed)?;
    let targets: Vec<Vec3> = controls
        .iter()
        .zip(&displacements)
        .map(|(c, d)| c + d * sigma)
        .collect();
    let warp = Transform::Tps(fit_tps(shape.dim(), &controls, &targets)?);
    Ok((warp.apply(shape, &NormalMode::Jacobian)?, warp))
}

/// Standard normal offsets (third coordinate zero in 2D).
fn gaussian_offsets(n: usize, dim: usize, seed: u64) -> Result<Vec<Vec3>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Ok((0..n)
        .map(|_| {
            let mut v = Vec3::zeros();
            (0..dim).for_each(|k| v[k] = normal.sample(&mut rng));
            v
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// Drop `⌈f·n⌉` points.
    RemoveFraction(f64),
    /// Displace points by iid Gaussian noise; the normals are dropped and
    /// must be re-estimated.
    GaussNoise(f64),
    /// Independent subsample of `m` points.
    Resample(usize),
    /// Rigid rotation (degrees) about the origin; in 3D about `axis`.
    Rotate { degrees: f64, axis: [f64; 3] },
}

pub fn perturb(shape: &OrientedPointSet, op: Perturbation, seed: u64) -> Result<OrientedPointSet> {
    match op {
        Perturbation::RemoveFraction(f) => {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::InvalidFraction(f));
            }
            let n = shape.len();
            let remove = (f * n as f64).ceil() as usize;
            if remove == 0 {
                return Ok(shape.clone());
            }
            Ok(subsample(shape, n - remove, seed)?.0)
        }
        Perturbation::GaussNoise(sigma) => {
            if !(sigma >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "noise level {sigma} must be non-negative"
                )));
            }
            let noise = gaussian_offsets(shape.len(), shape.dim(), seed)?;
            let points = shape.points().iter().zip(&noise).map(|(p, e)| p + e * sigma).collect();
            OrientedPointSet::new(shape.dim(), points)
        }
        Perturbation::Resample(m) => Ok(subsample(shape, m, seed)?.0),
        Perturbation::Rotate { degrees, axis } => {
            rotation(shape.dim(), degrees, Vec3::from(axis))?.apply(shape, &NormalMode::Jacobian)
        }
    }
}

fn rotation(dim: usize, degrees: f64, axis: Vec3) -> Result<Transform> {
    if dim == 2 {
        Ok(Transform::rotation2d(degrees.to_radians()))
    } else {
        Transform::rotation3d_axis_angle(axis, degrees.to_radians())
    }
}

/// Mean Euclidean distance between index-aligned points.
pub fn mse(transformed_model: &[Vec3], target: &[Vec3]) -> Result<f64> {
    mean_error(transformed_model, target, false)
}

/// Mean distance, or mean squared distance when `squared`.
pub fn mean_error(a: &[Vec3], b: &[Vec3], squared: bool) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::CountMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::EmptyShape);
    }
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(p, q)| {
            if squared {
                (p - q).norm_squared()
            } else {
                (p - q).norm()
            }
        })
        .collect();
    Ok(par::pairwise_sum(&d) / a.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Rigid2d,
    Rigid2dMissing,
    Nonrigid2d,
    Nonrigid2dRot,
    Nonrigid2dMissing,
    Rigid3dSame,
    Rigid3dResampled,
    Rigid3dNoise,
    Nonrigid3d,
}

impl Scenario {
    pub const ALL: [Scenario; 9] = [
        Scenario::Rigid2d,
        Scenario::Rigid2dMissing,
        Scenario::Nonrigid2d,
        Scenario::Nonrigid2dRot,
        Scenario::Nonrigid2dMissing,
        Scenario::Rigid3dSame,
        Scenario::Rigid3dResampled,
        Scenario::Rigid3dNoise,
        Scenario::Nonrigid3d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Rigid2d => "rigid2d",
            Scenario::Rigid2dMissing => "rigid2d_missing",
            Scenario::Nonrigid2d => "nonrigid2d",
            Scenario::Nonrigid2dRot => "nonrigid2d_rot",
            Scenario::Nonrigid2dMissing => "nonrigid2d_missing",
            Scenario::Rigid3dSame => "rigid3d_same",
            Scenario::Rigid3dResampled => "rigid3d_resampled",
            Scenario::Rigid3dNoise => "rigid3d_noise",
            Scenario::Nonrigid3d => "nonrigid3d",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Scenario::Rigid2d
            | Scenario::Rigid2dMissing
            | Scenario::Nonrigid2d
            | Scenario::Nonrigid2dRot
            | Scenario::Nonrigid2dMissing => 2,
            _ => 3,
        }
    }

    pub fn is_rigid(self) -> bool {
        matches!(
            self,
            Scenario::Rigid2d
                | Scenario::Rigid2dMissing
                | Scenario::Rigid3dSame
                | Scenario::Rigid3dResampled
                | Scenario::Rigid3dNoise
        )
    }

    /// What the sweep values mean for this scenario.
    pub fn sweep_meaning(self) -> &'static str {
        match self {
            Scenario::Rigid2d | Scenario::Rigid3dSame | Scenario::Rigid3dResampled | Scenario::Nonrigid2dRot => {
                "rotation (degrees)"
            }
            Scenario::Rigid2dMissing | Scenario::Nonrigid2dMissing => "removed fraction",
            Scenario::Nonrigid2d | Scenario::Nonrigid3d => "degree of deformation",
            Scenario::Rigid3dNoise => "noise standard deviation",
        }
    }

    fn default_sweep(self) -> Vec<f64> {
        match self {
            Scenario::Rigid2d => vec![30.0, 60.0, 90.0, 120.0, 150.0, 180.0],
            Scenario::Rigid2dMissing => vec![0.07, 0.2, 0.33, 0.47, 0.6],
            Scenario::Nonrigid2d | Scenario::Nonrigid3d => (1..=8).map(f64::from).collect(),
            Scenario::Nonrigid2dRot => vec![-75.0, -60.0, -45.0, -30.0, -15.0, 15.0, 30.0, 45.0, 60.0, 75.0],
            Scenario::Nonrigid2dMissing => vec![0.07, 0.2, 0.33, 0.47],
            Scenario::Rigid3dSame | Scenario::Rigid3dResampled => vec![30.0, 60.0, 90.0, 120.0],
            Scenario::Rigid3dNoise => vec![0.001, 0.002, 0.003],
        }
    }

    fn default_points(self) -> usize {
        match self {
            Scenario::Rigid2dMissing => 150,
            Scenario::Nonrigid3d => 300,
            s if s.dim() == 3 => 500,
            _ => 100,
        }
    }

    fn default_families(self) -> Vec<CostFamily> {
        match self {
            s if !s.is_rigid() => vec![CostFamily::Cx, CostFamily::Cxu],
            s if s.dim() == 3 => vec![CostFamily::Cx, CostFamily::CuDelta, CostFamily::CxuDelta],
            _ => vec![CostFamily::Cx, CostFamily::Cu, CostFamily::Cxu],
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scenario '{s}'")))
    }
}

/// Batch experiment description. Unset fields take scenario defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub sweep: Vec<f64>,
    pub trials: usize,
    pub families: Vec<CostFamily>,
    pub seed: u64,
    pub n_points: Option<usize>,
    /// Rotation (degrees) used when the sweep is not over rotations.
    pub angle: f64,
    /// Degree of deformation used when the sweep is not over degrees.
    pub degree: f64,
    pub subsample: Option<usize>,
    pub schedule: Option<AnnealingSchedule>,
    pub max_evals: usize,
    pub multi_start: usize,
    /// Correspondence-guided registration; defaults to on for non-rigid scenarios.
    pub correspondences: Option<bool>,
    /// TPS control lattice; 3D defaults to 3 × 3 × 3 to keep runs short.
    pub tps_grid: Option<Vec<usize>>,
    /// Report the mean squared distance instead of the mean distance.
    pub squared: bool,
    /// Fill the `seconds` column; off gives byte-identical CSV across runs.
    pub record_timing: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self::new(Scenario::Rigid2d)
    }
}

impl ExperimentSpec {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            sweep: scenario.default_sweep(),
            trials: 10,
            families: scenario.default_families(),
            seed: 0,
            n_points: None,
            angle: 60.0,
            degree: 4.0,
            subsample: None,
            schedule: None,
            max_evals: 50_000,
            multi_start: 1,
            correspondences: None,
            tps_grid: None,
            squared: false,
            record_timing: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.sweep.is_empty() || self.families.is_empty() {
            return Err(Error::InvalidConfig("sweep and families must be non-empty".into()));
        }
        if !self.scenario.is_rigid() {
            if let Some(f) = self.families.iter().find(|f| !f.uses_positions()) {
                return Err(Error::InvalidConfig(format!(
                    "cost '{f}' cannot drive a non-rigid registration"
                )));
            }
        }
        Ok(())
    }

    fn points(&self) -> usize {
        self.n_points.unwrap_or(self.scenario.default_points())
    }
}

/// A generated registration problem with its ground truth.
#[derive(Clone, Debug)]
pub struct Trial {
    pub model: OrientedPointSet,
    pub target: OrientedPointSet,
    /// Where every model point should end up.
    pub ground_truth: Vec<Vec3>,
    pub truth: Transform,
}

fn random_axis(seed: u64) -> Vec3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00a1_1ce5);
    let v: [f64; 3] = UnitSphere.sample(&mut rng);
    Vec3::from(v)
}

/// k for the k-NN normal fit after noise: 40, 60 or 120 neighbours as the
/// noise grows, capped at n/20 (at least 10) for small point sets.
pub fn noise_neighbours(sigma: f64, n: usize) -> usize {
    let k = if sigma <= 0.001 {
        40
    } else if sigma <= 0.002 {
        60
    } else {
        120
    };
    k.min((n / 20).max(10)).min(n - 1)
}

/// Builds the problem for one sweep value and trial seed.
pub fn make_trial(spec: &ExperimentSpec, value: f64, seed: u64) -> Result<Trial> {
    let n = spec.points();
    let dim = spec.scenario.dim();
    let axis = random_axis(seed);
    let rotate = |shape: &OrientedPointSet, degrees: f64| {
        perturb(
            shape,
            Perturbation::Rotate {
                degrees,
                axis: axis.into(),
            },
            seed,
        )
    };
    let rigid_trial = |model: OrientedPointSet, degrees: f64| -> Result<(Trial, OrientedPointSet)> {
        let truth = rotation(dim, degrees, axis)?;
        let rotated = rotate(&model, degrees)?;
        let ground_truth = rotated.points().to_vec();
        Ok((
            Trial {
                model,
                target: rotated.clone(),
                ground_truth,
                truth,
            },
            rotated,
        ))
    };
    let nonrigid_trial = |degree: f64, degrees: f64, removed: f64| -> Result<Trial> {
        let model = gen_curve(CurveKind::Fourier, n, seed)?;
        let (warped, warp) = deform_tps(&model, degree, seed.wrapping_add(1))?;
        let rotated = rotate(&warped, degrees)?;
        let ground_truth = rotated.points().to_vec();
        let target = perturb(&rotated, Perturbation::RemoveFraction(removed), seed.wrapping_add(2))?;
        // a rotated spline is the spline through the rotated control images
        let truth = match (&warp, degrees != 0.0) {
            (Transform::Tps(t), true) => {
                let turn = rotation(dim, degrees, axis)?;
                let images: Vec<Vec3> = t
                    .control_points()
                    .iter()
                    .map(|c| turn.apply_point(&warp.apply_point(c)))
                    .collect();
                Transform::Tps(fit_tps(dim, t.control_points(), &images)?)
            }
            _ => warp,
        };
        Ok(Trial {
            model,
            target,
            ground_truth,
            truth,
        })
    };
    Ok(match spec.scenario {
        Scenario::Rigid2d => rigid_trial(gen_curve(CurveKind::Fourier, n, seed)?, value)?.0,
        Scenario::Rigid2dMissing => {
            let (mut t, rotated) = rigid_trial(gen_curve(CurveKind::Fourier, n, seed)?, spec.angle)?;
            t.target = perturb(&rotated, Perturbation::RemoveFraction(value), seed.wrapping_add(2))?;
            t
        }
        Scenario::Nonrigid2d => nonrigid_trial(value, 0.0, 0.0)?,
        Scenario::Nonrigid2dRot => nonrigid_trial(spec.degree, value, 0.0)?,
        Scenario::Nonrigid2dMissing => nonrigid_trial(spec.degree, 0.0, value)?,
        Scenario::Rigid3dSame => rigid_trial(gen_mesh(MeshKind::Icosphere, n, seed)?, value)?.0,
        Scenario::Rigid3dResampled => {
            let dense = gen_mesh(MeshKind::Icosphere, 4 * n, seed)?;
            let model = subsample(&dense, n, seed.wrapping_add(3))?.0;
            let other = subsample(&dense, n, seed.wrapping_add(4))?.0;
            let truth = rotation(dim, value, axis)?;
            Trial {
                ground_truth: truth.apply_to_points(&model)?,
                target: rotate(&other, value)?,
                model,
                truth,
            }
        }
        Scenario::Rigid3dNoise => {
            let (mut t, rotated) = rigid_trial(gen_mesh(MeshKind::Icosphere, n, seed)?, spec.angle)?;
            let noisy = perturb(&rotated, Perturbation::GaussNoise(value), seed.wrapping_add(5))?;
            let normals = normals_knn_pca(noisy.points(), noise_neighbours(value, noisy.len()))?;
            t.target = noisy.with_normals(normals)?;
            t
        }
        Scenario::Nonrigid3d => {
            let model = gen_mesh(MeshKind::Icosphere, n, seed)?;
            let (target, warp) = deform_tps(&model, value, seed.wrapping_add(1))?;
            Trial {
                ground_truth: target.points().to_vec(),
                model,
                target,
                truth: warp,
            }
        }
    })
}

/// Registration options a spec implies for one family and trial.
pub fn register_options(spec: &ExperimentSpec, family: CostFamily, seed: u64) -> RegisterOptions {
    let dim = spec.scenario.dim();
    let transform = match (spec.scenario.is_rigid(), dim) {
        (false, _) => TransformFamily::Tps,
        (true, 2) => TransformFamily::Rotation2d,
        (true, _) => TransformFamily::Rotation3d,
    };
    let corr = spec.correspondences.unwrap_or(!spec.scenario.is_rigid());
    RegisterOptions {
        cost: family,
        transform,
        schedule: spec.schedule,
        subsample: spec.subsample,
        seed,
        correspondences: corr.then(CorrespondenceOptions::default),
        tps_grid: spec
            .tps_grid
            .clone()
            .or_else(|| (transform == TransformFamily::Tps && dim == 3).then(|| vec![3, 3, 3])),
        max_evals: spec.max_evals,
        multi_start: spec.multi_start,
        ..RegisterOptions::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub sweep_value: f64,
    pub trial: usize,
    pub family: String,
    pub mean_error: f64,
    pub seconds: f64,
    pub iterations: usize,
    pub evals: usize,
    pub monotone: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub sweep_value: f64,
    pub family: String,
    pub mean: f64,
    pub std_error: f64,
    pub median: f64,
    pub trials: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub scenario: String,
    pub sweep_meaning: String,
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryEntry>,
}

impl ExperimentResult {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "scenario": self.scenario,
            "sweep_meaning": self.sweep_meaning,
            "summary": self.summary,
        }))?)
    }

    pub fn entry(&self, sweep_value: f64, family: CostFamily) -> Option<&SummaryEntry> {
        self.summary
            .iter()
            .find(|e| e.sweep_value == sweep_value && e.family == family.name())
    }

    /// Mean error of `family` over every sweep value (failed trials excluded).
    pub fn overall_mean(&self, family: CostFamily) -> f64 {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.family == family.name() && r.mean_error.is_finite())
            .map(|r| r.mean_error)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn summarize(rows: &[ResultRow], sweep: &[f64], families: &[CostFamily]) -> Vec<SummaryEntry> {
    let mut out = Vec::new();
    for &value in sweep {
        for family in families {
            let all: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.sweep_value == value && r.family == family.name())
                .collect();
            let mut ok: Vec<f64> = all.iter().map(|r| r.mean_error).filter(|e| e.is_finite()).collect();
            ok.sort_by(f64::total_cmp);
            let k = ok.len();
            let mean = ok.iter().sum::<f64>() / k as f64;
            let std_error = if k > 1 {
                let var = ok.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
                (var / k as f64).sqrt()
            } else {
                f64::NAN
            };
            let median = match k {
                0 => f64::NAN,
                _ if k % 2 == 1 => ok[k / 2],
                _ => 0.5 * (ok[k / 2 - 1] + ok[k / 2]),
            };
            out.push(SummaryEntry {
                sweep_value: value,
                family: family.name().to_string(),
                mean,
                std_error,
                median,
                trials: k,
                failures: all.len() - k,
            });
        }
    }
    out
}

/// Registers one trial with every cost family the experiment lists.
fn run_trial(spec: &ExperimentSpec, value: f64, trial: usize) -> Vec<ResultRow> {
    let seed = spec.seed.wrapping_add(trial as u64);
    let problem = make_trial(spec, value, seed);
    spec.families
        .iter()
        .map(|&family| {
            let started = Instant::now();
            let outcome = problem
                .as_ref()
                .map_err(|e| Error::InvalidConfig(e.to_string()))
                .and_then(|p| {
                    let report = register(&p.model, &p.target, &register_options(spec, family, seed))?;
                    let moved = report.transform.apply_to_points(&p.model)?;
                    Ok((mean_error(&moved, &p.ground_truth, spec.squared)?, report))
                });
            let seconds = if spec.record_timing {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            };
            let (mean_error, iterations, evals, monotone) = match outcome {
                Ok((e, r)) => (e, r.iterations, r.evals, r.is_monotone()),
                Err(_) => (f64::NAN, 0, 0, true),
            };
            ResultRow {
                scenario: spec.scenario.name().to_string(),
                sweep_value: value,
                trial,
                family: family.name().to_string(),
                mean_error,
                seconds,
                iterations,
                evals,
                monotone,
            }
        })
        .collect()
}

/// Runs every sweep value × trial × family. Trials run in parallel; a failed
/// trial becomes a NaN row instead of aborting the batch.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let jobs: Vec<(f64, usize)> = spec
        .sweep
        .iter()
        .flat_map(|&v| (0..spec.trials).map(move |t| (v, t)))
        .collect();
    let rows: Vec<ResultRow> = par::map_slice(&jobs, |&(v, t)| run_trial(spec, v, t))
        .into_iter()
        .flatten()
        .collect();
    Ok(ExperimentResult {
        scenario: spec.scenario.name().to_string(),
        sweep_meaning: spec.scenario.sweep_meaning().to_string(),
        summary: summarize(&rows, &spec.sweep, &spec.families),
        rows,
    })
}
