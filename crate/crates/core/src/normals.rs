//! Normal estimation: cubic-spline normals for ordered 2D curves, face-averaged
//! mesh normals, and k-nearest-neighbour plane fits with minimum-spanning-tree
//! orientation propagation.

use std::collections::VecDeque;

use nalgebra::{Matrix3, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Connectivity, OrientedPointSet, Vec3, UNIT_TOLERANCE};
use crate::par;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalMethod {
    /// Keep the normals the shape already carries (e.g. from a parametric generator).
    Analytic,
    Spline2d,
    MeshFaceAvg,
    #[default]
    KnnPca,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalEstimatorConfig {
    pub method: NormalMethod,
    pub k_neighbors: usize,
    pub embed_2d_in_s2: bool,
    /// Reverse the 2D spline sign convention (right-hand normals).
    pub flip: bool,
}

impl Default for NormalEstimatorConfig {
    fn default() -> Self {
        Self {
            method: NormalMethod::KnnPca,
            k_neighbors: 10,
            embed_2d_in_s2: true,
            flip: false,
        }
    }
}

impl NormalEstimatorConfig {
    pub fn with_method(method: NormalMethod) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn knn(k: usize) -> Self {
        Self {
            method: NormalMethod::KnnPca,
            k_neighbors: k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.method == NormalMethod::KnnPca && self.k_neighbors < 3 {
            return Err(Error::InvalidConfig("knn_pca needs at least 3 neighbours".into()));
        }
        Ok(())
    }
}

/// Estimates normals for `shape` with the configured method.
pub fn estimate_normals(shape: &OrientedPointSet, cfg: &NormalEstimatorConfig) -> Result<Vec<Vec3>> {
    cfg.validate()?;
    match cfg.method {
        NormalMethod::Analytic => shape.normals().map(<[Vec3]>::to_vec).ok_or(Error::MissingNormals),
        NormalMethod::Spline2d => {
            if shape.dim() != 2 {
                return Err(Error::DimensionError {
                    expected: 2,
                    found: shape.dim(),
                });
            }
            let closed = match shape.connectivity() {
                Some(Connectivity::Polyline { closed }) => *closed,
                _ => true,
            };
            let mut n = normals_spline2d(shape.points(), closed)?;
            if cfg.flip {
                n.iter_mut().for_each(|u| *u = -*u);
            }
            Ok(n)
        }
        NormalMethod::MeshFaceAvg => {
            let faces = shape
                .faces()
                .ok_or_else(|| Error::InvalidConfig("mesh normals need face connectivity".into()))?;
            Ok(normals_mesh(shape.points(), faces, cfg.k_neighbors)?.normals)
        }
        NormalMethod::KnnPca => {
            if shape.dim() == 2 {
                return Err(Error::InvalidConfig(
                    "knn_pca works on 3D points; use spline2d for curves".into(),
                ));
            }
            normals_knn_pca(shape.points(), cfg.k_neighbors)
        }
    }
}

/// Attaches freshly estimated normals to a copy of `shape`.
pub fn with_estimated_normals(shape: &OrientedPointSet, cfg: &NormalEstimatorConfig) -> Result<OrientedPointSet> {
    let normals = estimate_normals(shape, cfg)?;
    shape.clone().with_normals(normals)
}

// --- cubic splines -----------------------------------------------------------

fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * c[i - 1];
        c[i] = if i + 1 < n { sup[i] / m } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Cyclic tridiagonal system (Sherman-Morrison): `sub[0]` couples row 0 to the
/// last unknown and `sup[n-1]` couples the last row to the first.
fn solve_cyclic(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let alpha = sub[0];
    let beta = sup[n - 1];
    let gamma = -diag[0];
    let mut b = diag.to_vec();
    b[0] -= gamma;
    b[n - 1] -= alpha * beta / gamma;
    let x = solve_tridiagonal(sub, &b, sup, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = beta;
    let z = solve_tridiagonal(sub, &b, sup, &u);
    let factor = (x[0] + alpha * x[n - 1] / gamma) / (1.0 + z[0] + alpha * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - factor * zi).collect()
}

/// Derivatives at the knots of an interpolating cubic spline (natural when
/// open, periodic when closed) parameterized by `knots` spacing `h`.
fn spline_slopes(values: &[f64], h: &[f64], closed: bool) -> Vec<f64> {
    let n = values.len();
    let next = |i: usize| if i + 1 == n { 0 } else { i + 1 };
    let prev = |i: usize| if i == 0 { n - 1 } else { i - 1 };
    let slope = |i: usize| (values[next(i)] - values[i]) / h[i];
    let m = if closed {
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            let hp = h[prev(i)];
            sub[i] = hp;
            diag[i] = 2.0 * (hp + h[i]);
            sup[i] = h[i];
            rhs[i] = 6.0 * (slope(i) - slope(prev(i)));
        }
        solve_cyclic(&sub, &diag, &sup, &rhs)
    } else {
        let mut m = vec![0.0; n];
        if n > 2 {
            let inner = n - 2;
            let mut sub = vec![0.0; inner];
            let mut diag = vec![0.0; inner];
            let mut sup = vec![0.0; inner];
            let mut rhs = vec![0.0; inner];
            for k in 0..inner {
                let i = k + 1;
                sub[k] = h[i - 1];
                diag[k] = 2.0 * (h[i - 1] + h[i]);
                sup[k] = h[i];
                rhs[k] = 6.0 * (slope(i) - slope(i - 1));
            }
            let inner_m = solve_tridiagonal(&sub, &diag, &sup, &rhs);
            m[1..n - 1].copy_from_slice(&inner_m);
        }
        m
    };
    (0..n)
        .map(|i| {
            if !closed && i == n - 1 {
                let j = n - 2;
                slope(j) + h[j] * (m[j] + 2.0 * m[n - 1]) / 6.0
            } else {
                slope(i) - h[i] * (2.0 * m[i] + m[next(i)]) / 6.0
            }
        })
        .collect()
}

/// Normals of an ordered 2D curve from the tangents of an interpolating cubic
/// spline. The tangent is rotated by −90°, so a counterclockwise closed curve
/// gets outward normals.
pub fn normals_spline2d(points: &[Vec3], closed: bool) -> Result<Vec<Vec3>> {
    let n = points.len();
    if n < 4 {
        return Err(Error::InsufficientPoints { n, k: 3 });
    }
    let segments = if closed { n } else { n - 1 };
    let mut h = vec![0.0; n];
    for i in 0..segments {
        let j = (i + 1) % n;
        let len = (points[j] - points[i]).norm();
        if !(len > 0.0) {
            return Err(Error::DegenerateCurve(i, j));
        }
        h[i] = len;
    }
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let dx = spline_slopes(&xs, &h, closed);
    let dy = spline_slopes(&ys, &h, closed);
    dx.iter()
        .zip(&dy)
        .enumerate()
        .map(|(i, (&tx, &ty))| {
            let len = tx.hypot(ty);
            if !(len > 0.0) {
                return Err(Error::DegenerateCurve(i, (i + 1) % n));
            }
            Ok(Vec3::new(ty / len, -tx / len, 0.0))
        })
        .collect()
}

// --- meshes ------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct MeshNormals {
    pub normals: Vec<Vec3>,
    /// Vertices without a usable incident face; their normals come from a plane fit.
    pub isolated: Vec<usize>,
}

/// Vertex normals as the normalized mean of incident triangle unit normals
/// (counterclockwise winding). Vertices with no incident face fall back to a
/// `k`-neighbour plane fit, oriented to agree with the nearest mesh normal.
pub fn normals_mesh(points: &[Vec3], faces: &[[usize; 3]], k: usize) -> Result<MeshNormals> {
    let n = points.len();
    let mut acc = vec![Vec3::zeros(); n];
    for (f, face) in faces.iter().enumerate() {
        if face.iter().any(|&v| v >= n) {
            return Err(Error::InvalidShape(format!(
                "face {f} references a vertex out of range"
            )));
        }
        let [a, b, c] = face.map(|v| points[v]);
        let cross = (b - a).cross(&(c - a));
        let len = cross.norm();
        if len > 0.0 {
            let unit = cross / len;
            for &v in face {
                acc[v] += unit;
            }
        }
    }
    let mut normals = vec![Vec3::zeros(); n];
    let mut isolated = Vec::new();
    for (i, s) in acc.iter().enumerate() {
        let len = s.norm();
        if len > 1e-12 {
            normals[i] = s / len;
        } else {
            isolated.push(i);
        }
    }
    if !isolated.is_empty() {
        if isolated.len() == n {
            return Err(Error::InvalidShape("mesh has no usable faces".into()));
        }
        let k = k.max(3).min(n - 1);
        for &i in &isolated {
            let neigh = nearest_neighbours(points, i, k);
            let mut u = plane_normal(points, i, &neigh);
            let anchor = neigh.iter().find(|j| !isolated.contains(j)).map(|&j| normals[j]);
            if let Some(a) = anchor {
                if u.dot(&a) < 0.0 {
                    u = -u;
                }
            }
            normals[i] = u;
        }
    }
    Ok(MeshNormals { normals, isolated })
}

// --- k-NN plane fits -----------------------------------------------------------

/// Indices of the `k` nearest other points of `points[i]`, nearest first
/// (ties broken by index).
pub(crate) fn nearest_neighbours(points: &[Vec3], i: usize, k: usize) -> Vec<usize> {
    let p = points[i];
    let mut cand: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, q)| ((q - p).norm_squared(), j))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k, cmp);
        cand.truncate(k);
    }
    cand.sort_by(cmp);
    cand.into_iter().map(|(_, j)| j).collect()
}

/// Smallest-eigenvalue eigenvector of the covariance of the point and its neighbours.
fn plane_normal(points: &[Vec3], i: usize, neighbours: &[usize]) -> Vec3 {
    let members = std::iter::once(i).chain(neighbours.iter().copied());
    let count = neighbours.len() as f64 + 1.0;
    let mean = members.clone().fold(Vec3::zeros(), |acc, j| acc + points[j]) / count;
    let cov = members.fold(Matrix3::zeros(), |acc, j| {
        let d = points[j] - mean;
        acc + d * d.transpose()
    }) / count;
    let eig = SymmetricEigen::new(cov);
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("3 eigenvalues");
    let v: Vec3 = eig.eigenvectors.column(idx).into_owned();
    v.normalize()
}

/// Euclidean minimum spanning tree (dense Prim) as a parent array rooted at `root`.
fn euclidean_mst(points: &[Vec3], root: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![None; n];
    best[root] = 0.0;
    for _ in 0..n {
        let mut u = usize::MAX;
        let mut bu = f64::INFINITY;
        for v in 0..n {
            if !in_tree[v] && (best[v] < bu || (u == usize::MAX && best[v].is_finite())) {
                u = v;
                bu = best[v];
            }
        }
        if u == usize::MAX {
            break;
        }
        in_tree[u] = true;
        let pu = points[u];
        for v in 0..n {
            if !in_tree[v] {
                let d = (points[v] - pu).norm_squared();
                if d < best[v] {
                    best[v] = d;
                    parent[v] = Some(u);
                }
            }
        }
    }
    parent
}

/// Plane-fit normals from `k` nearest neighbours, made consistent by
/// propagation along the Euclidean MST from the point farthest from the
/// centroid, whose normal is pointed away from the centroid.
pub fn normals_knn_pca(points: &[Vec3], k: usize) -> Result<Vec<Vec3>> {
    let n = points.len();
    if k < 3 {
        return Err(Error::InvalidConfig("knn_pca needs at least 3 neighbours".into()));
    }
    if k >= n {
        return Err(Error::InsufficientPoints { n, k });
    }
    let mut normals = par::map_range(n, |i| {
        let neigh = nearest_neighbours(points, i, k);
        plane_normal(points, i, &neigh)
    });

    let centroid = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n as f64;
    let root = (0..n)
        .max_by(|&a, &b| {
            let da = (points[a] - centroid).norm_squared();
            let db = (points[b] - centroid).norm_squared();
            da.total_cmp(&db).then(b.cmp(&a))
        })
        .expect("non-empty");
    if normals[root].dot(&(points[root] - centroid)) < 0.0 {
        normals[root] = -normals[root];
    }
    let parent = euclidean_mst(points, root);
    let mut children = vec![Vec::new(); n];
    for (v, p) in parent.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(v);
        }
    }
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &v in &children[u] {
            if normals[v].dot(&normals[u]) < 0.0 {
                normals[v] = -normals[v];
            }
            queue.push_back(v);
        }
    }
    Ok(normals)
}

/// `(a, b) ↦ (a, b, 0)`.
pub fn embed_s1_in_s2(normals: &[Vector2<f64>]) -> Result<Vec<Vec3>> {
    normals
        .iter()
        .enumerate()
        .map(|(i, u)| {
            if (u.norm() - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::InvalidShape(format!("normal {i} is not unit length")));
            }
            Ok(Vec3::new(u.x, u.y, 0.0))
        })
        .collect()
}

/// Drops the third coordinate of embedded 2D normals.
pub fn project_s2_to_s1(normals: &[Vec3]) -> Vec<Vector2<f64>> {
    normals.iter().map(|u| Vector2::new(u.x, u.y)).collect()
}
