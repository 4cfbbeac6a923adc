//! Point correspondences from a blend of local neighbourhood-structure and
//! global position distances, solved as a one-to-one assignment.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::normals::nearest_neighbours;
use crate::par;

pub const DEFAULT_K: usize = 5;

/// Dense row-major matrix of pairwise distances.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    fn from_rows(rows: usize, cols: usize, by_row: Vec<Vec<f64>>) -> Self {
        Self {
            rows,
            cols,
            data: by_row.into_iter().flatten().collect(),
        }
    }

    /// Rescales all entries to [0, 1]; a constant matrix becomes all zeros.
    fn min_max_normalize(&mut self) {
        let lo = self.data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for v in &mut self.data {
            *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
        }
    }
}

/// One-to-one pairs `(model index, target index)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub pairs: Vec<(usize, usize)>,
    /// Local/global mixing weight the pairs were estimated with.
    pub alpha: f64,
}

impl CorrespondenceSet {
    /// Pairs `(i, i)` for `i < n`.
    pub fn identity(n: usize) -> Self {
        Self {
            pairs: (0..n).map(|i| (i, i)).collect(),
            alpha: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.pairs.iter().all(|&(i, j)| i == j)
    }

    /// Checks one-to-one pairing and index ranges.
    pub fn validate(&self, n1: usize, n2: usize) -> Result<()> {
        let mut seen_i = vec![false; n1];
        let mut seen_j = vec![false; n2];
        for &(i, j) in &self.pairs {
            if i >= n1 || j >= n2 {
                return Err(Error::InvalidConfig(format!("pair ({i}, {j}) out of range")));
            }
            if std::mem::replace(&mut seen_i[i], true) || std::mem::replace(&mut seen_j[j], true) {
                return Err(Error::InvalidConfig(format!("pair ({i}, {j}) repeats an index")));
            }
        }
        Ok(())
    }

    /// Sum of `cost` over the pairs.
    pub fn total_cost(&self, cost: &DistanceMatrix) -> f64 {
        self.pairs.iter().map(|&(i, j)| cost.get(i, j)).sum()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["i", "j"])?;
        for &(i, j) in &self.pairs {
            w.write_record([i.to_string(), j.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn check_inputs(m: &[Vec3], t: &[Vec3]) -> Result<()> {
    if m.is_empty() || t.is_empty() {
        return Err(Error::EmptyShape);
    }
    Ok(())
}

/// Squared Euclidean distances, min-max normalized over the whole matrix.
pub fn global_distance(m: &[Vec3], t: &[Vec3]) -> Result<DistanceMatrix> {
    check_inputs(m, t)?;
    let rows = par::map_slice(m, |p| t.iter().map(|q| (p - q).norm_squared()).collect());
    let mut g = DistanceMatrix::from_rows(m.len(), t.len(), rows);
    g.min_max_normalize();
    Ok(g)
}

/// Sorted distances to the `k` nearest neighbours, divided by their mean.
fn descriptors(points: &[Vec3], k: usize) -> Vec<Vec<f64>> {
    par::map_range(points.len(), |i| {
        let mut d: Vec<f64> = nearest_neighbours(points, i, k)
            .into_iter()
            .map(|j| (points[j] - points[i]).norm())
            .collect();
        d.sort_by(f64::total_cmp);
        let mean = d.iter().sum::<f64>() / k as f64;
        if mean > 0.0 {
            d.iter_mut().for_each(|v| *v /= mean);
        }
        d
    })
}

/// Squared distances between scale-normalized k-NN descriptors, min-max normalized.
pub fn local_distance(m: &[Vec3], t: &[Vec3], k: usize) -> Result<DistanceMatrix> {
    check_inputs(m, t)?;
    let n = m.len().min(t.len());
    if k == 0 || k >= n {
        return Err(Error::InsufficientPoints { n, k });
    }
    let dm = descriptors(m, k);
    let dt = descriptors(t, k);
    let rows = par::map_slice(&dm, |a| {
        dt.iter()
            .map(|b| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
            .collect()
    });
    let mut l = DistanceMatrix::from_rows(m.len(), t.len(), rows);
    l.min_max_normalize();
    Ok(l)
}

/// `α·L + (1 − α)·G`.
pub fn cost_matrix(m: &[Vec3], t: &[Vec3], alpha: f64, k: usize) -> Result<DistanceMatrix> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidFraction(alpha));
    }
    let g = global_distance(m, t)?;
    let l = local_distance(m, t, k)?;
    Ok(DistanceMatrix {
        rows: g.rows,
        cols: g.cols,
        data: l
            .data
            .iter()
            .zip(&g.data)
            .map(|(l, g)| alpha * l + (1.0 - alpha) * g)
            .collect(),
    })
}

/// Minimum-cost one-to-one assignment; every index of the smaller side is matched.
pub fn estimate(m: &[Vec3], t: &[Vec3], alpha: f64, k: usize) -> Result<CorrespondenceSet> {
    let cost = cost_matrix(m, t, alpha, k)?;
    Ok(CorrespondenceSet {
        pairs: assign(&cost),
        alpha,
    })
}

/// Rectangular Hungarian algorithm (shortest augmenting paths with
/// potentials), O(n²·m). Pairs are returned sorted by model index.
pub fn assign(cost: &DistanceMatrix) -> Vec<(usize, usize)> {
    let transpose = cost.rows > cost.cols;
    let (n, m) = if transpose {
        (cost.cols, cost.rows)
    } else {
        (cost.rows, cost.cols)
    };
    let c = |i: usize, j: usize| if transpose { cost.get(j, i) } else { cost.get(i, j) };

    // 1-based, column 0 is the virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = c(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| p[j] != 0)
        .map(|j| {
            let (i, j) = (p[j] - 1, j - 1);
            if transpose {
                (j, i)
            } else {
                (i, j)
            }
        })
        .collect();
    pairs.sort_unstable();
    pairs
}
