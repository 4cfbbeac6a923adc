//! L2 registration objectives between a transformed model and a target.
//!
//! Every family returns a value to minimize. In `Full` mode that is
//! `‖p1‖² − 2⟨p1|p2⟩` (the constant `‖p2‖²` is dropped); in
//! `RigidScalarProduct` mode it is `−⟨p1|p2⟩`, which is all a rotation can
//! change.
//!
//! Per-pair terms are evaluated in log form and accumulated row by row with a
//! running max shift, so large concentrations do not overflow.

use serde::{Deserialize, Serialize};

use crate::correspond::CorrespondenceSet;
use crate::error::{Error, Result};
use crate::geometry::{OrientedPointSet, Vec3};
use crate::kernels::{combined_concentration, log_cd_unchecked, log_gauss_product, KernelParams};
use crate::par;
use crate::transforms::{NormalMode, Transform};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CostFamily {
    #[serde(rename = "x")]
    Cx,
    #[serde(rename = "x-delta")]
    CxDelta,
    #[serde(rename = "u")]
    Cu,
    #[serde(rename = "u-delta")]
    CuDelta,
    #[serde(rename = "xu")]
    Cxu,
    #[serde(rename = "xu-delta")]
    CxuDelta,
}

impl CostFamily {
    pub const ALL: [CostFamily; 6] = [
        CostFamily::Cx,
        CostFamily::CxDelta,
        CostFamily::Cu,
        CostFamily::CuDelta,
        CostFamily::Cxu,
        CostFamily::CxuDelta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CostFamily::Cx => "x",
            CostFamily::CxDelta => "x-delta",
            CostFamily::Cu => "u",
            CostFamily::CuDelta => "u-delta",
            CostFamily::Cxu => "xu",
            CostFamily::CxuDelta => "xu-delta",
        }
    }

    pub fn uses_positions(self) -> bool {
        !matches!(self, CostFamily::Cu | CostFamily::CuDelta)
    }

    pub fn uses_normals(self) -> bool {
        !matches!(self, CostFamily::Cx | CostFamily::CxDelta)
    }

    /// Directional kernel on the target side, if the family uses normals.
    pub fn directional(self) -> Option<DirectionalKernel> {
        match self {
            CostFamily::Cu | CostFamily::Cxu => Some(DirectionalKernel::Vmf),
            CostFamily::CuDelta | CostFamily::CxuDelta => Some(DirectionalKernel::Dirac),
            _ => None,
        }
    }
}

impl std::str::FromStr for CostFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CostFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown cost family '{s}'")))
    }
}

impl std::fmt::Display for CostFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    #[default]
    Full,
    RigidScalarProduct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionalKernel {
    Vmf,
    Dirac,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub family: CostFamily,
    pub mode: CostMode,
    pub kernel: KernelParams,
    pub correspondences: Option<CorrespondenceSet>,
    /// Sphere dimension of the direction kernels. 2D normals are embedded in
    /// S² by default, so this is 3 unless set to 2 explicitly.
    pub direction_dim: usize,
}

impl CostSpec {
    pub fn new(family: CostFamily, mode: CostMode, kernel: KernelParams) -> Self {
        Self {
            family,
            mode,
            kernel,
            correspondences: None,
            direction_dim: 3,
        }
    }

    pub fn with_correspondences(mut self, corr: Option<CorrespondenceSet>) -> Self {
        self.correspondences = corr;
        self
    }

    /// Checks this cost spec against the transform that will be optimized.
    pub fn check_transform(&self, transform: &Transform) -> Result<()> {
        let family = transform.family();
        if self.mode == CostMode::RigidScalarProduct && !family.is_rigid() {
            return Err(Error::InvalidConfig(
                "the rigid scalar-product mode needs a rotation transform".into(),
            ));
        }
        if !self.family.uses_positions() && !family.is_rigid() {
            return Err(Error::InvalidConfig(
                "normal-only costs cannot constrain a thin-plate spline".into(),
            ));
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !matches!(self.direction_dim, 2 | 3) {
            return Err(Error::InvalidDimension(self.direction_dim));
        }
        if self.family.directional() == Some(DirectionalKernel::Vmf) && !(self.kernel.kappa2 > 0.0) {
            return Err(Error::InvalidConcentration(self.kernel.kappa2));
        }
        Ok(())
    }
}

/// Running `(max, Σ exp(l − max))` accumulator.
#[derive(Clone, Copy, Debug)]
struct LogSum {
    max: f64,
    sum: f64,
}

impl LogSum {
    const EMPTY: LogSum = LogSum {
        max: f64::NEG_INFINITY,
        sum: 0.0,
    };

    #[inline]
    fn push(&mut self, l: f64) {
        if l > self.max {
            self.sum = self.sum * (self.max - l).exp() + 1.0;
            self.max = l;
        } else {
            self.sum += (l - self.max).exp();
        }
    }

    /// Deterministic combination of per-row accumulators.
    fn combine(rows: &[LogSum]) -> f64 {
        let max = rows.iter().map(|r| r.max).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let scaled: Vec<f64> = rows.iter().map(|r| r.sum * (r.max - max).exp()).collect();
        max + par::pairwise_sum(&scaled).ln()
    }
}

/// Which pairs enter a sum.
#[derive(Clone, Copy)]
enum Pairs<'a> {
    All(usize, usize),
    Matched(&'a [(usize, usize)]),
}

impl Pairs<'_> {
    fn count(&self) -> f64 {
        match self {
            Pairs::All(a, b) => (*a * *b) as f64,
            Pairs::Matched(p) => p.len() as f64,
        }
    }
}

/// `log Σ exp(term(i, j))` over the selected pairs.
fn log_sum<F>(pairs: Pairs<'_>, term: F) -> f64
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let rows = match pairs {
        Pairs::All(n1, n2) => par::map_range(n1, |i| {
            let mut acc = LogSum::EMPTY;
            for j in 0..n2 {
                acc.push(term(i, j));
            }
            acc
        }),
        Pairs::Matched(p) => par::map_slice(p, |&(i, j)| {
            let mut acc = LogSum::EMPTY;
            acc.push(term(i, j));
            acc
        }),
    };
    LogSum::combine(&rows)
}

/// Log-domain pair terms with the kernel constants folded in.
struct Terms<'a> {
    x1: &'a [Vec3],
    u1: Option<&'a [Vec3]>,
    x2: &'a [Vec3],
    u2: Option<&'a [Vec3]>,
    d: usize,
    dd: usize,
    k: KernelParams,
}

impl Terms<'_> {
    #[inline]
    fn gauss(&self, a: &Vec3, b: &Vec3, variance: f64) -> f64 {
        log_gauss_product((a - b).norm_squared(), variance, self.d)
    }

    #[inline]
    fn vmf_vmf(&self, a: &Vec3, b: &Vec3, k1: f64, k2: f64, log_c1: f64, log_c2: f64) -> f64 {
        log_c1 + log_c2 - log_cd_unchecked(combined_concentration(k1, k2, a.dot(b)), self.dd)
    }

    fn position_self(&self, pairs: Pairs<'_>) -> f64 {
        let var = 2.0 * self.k.h1 * self.k.h1;
        log_sum(pairs, |i, j| self.gauss(&self.x1[i], &self.x1[j], var))
    }

    fn position_cross(&self, pairs: Pairs<'_>, h2: f64) -> f64 {
        let var = self.k.h1 * self.k.h1 + h2 * h2;
        log_sum(pairs, |i, j| self.gauss(&self.x1[i], &self.x2[j], var))
    }

    fn normals(&self) -> (&[Vec3], &[Vec3]) {
        (self.u1.expect("checked"), self.u2.expect("checked"))
    }

    /// Direction-only self term, `⟨vMF(ũᵢ, κ1) | vMF(ũⱼ, κ1)⟩`.
    fn direction_self(&self, pairs: Pairs<'_>) -> f64 {
        let (u1, _) = self.normals();
        let k1 = self.k.kappa1;
        let lc = log_cd_unchecked(k1, self.dd);
        log_sum(pairs, |i, j| self.vmf_vmf(&u1[i], &u1[j], k1, k1, lc, lc))
    }

    fn direction_cross(&self, pairs: Pairs<'_>, kernel: DirectionalKernel) -> f64 {
        let (u1, u2) = self.normals();
        let (k1, k2) = (self.k.kappa1, self.k.kappa2);
        let lc1 = log_cd_unchecked(k1, self.dd);
        match kernel {
            DirectionalKernel::Dirac => log_sum(pairs, |i, j| lc1 + k1 * u1[i].dot(&u2[j])),
            DirectionalKernel::Vmf => {
                let lc2 = log_cd_unchecked(k2, self.dd);
                log_sum(pairs, |i, j| self.vmf_vmf(&u1[i], &u2[j], k1, k2, lc1, lc2))
            }
        }
    }

    fn joint_self(&self, pairs: Pairs<'_>) -> f64 {
        let (u1, _) = self.normals();
        let k1 = self.k.kappa1;
        let lc = log_cd_unchecked(k1, self.dd);
        let var = 2.0 * self.k.h1 * self.k.h1;
        log_sum(pairs, |i, j| {
            self.gauss(&self.x1[i], &self.x1[j], var) + self.vmf_vmf(&u1[i], &u1[j], k1, k1, lc, lc)
        })
    }

    fn joint_cross(&self, pairs: Pairs<'_>, kernel: DirectionalKernel) -> f64 {
        let (u1, u2) = self.normals();
        let (k1, k2) = (self.k.kappa1, self.k.kappa2);
        let lc1 = log_cd_unchecked(k1, self.dd);
        let var = self.k.h1 * self.k.h1 + self.k.h2 * self.k.h2;
        match kernel {
            DirectionalKernel::Dirac => log_sum(pairs, |i, j| {
                self.gauss(&self.x1[i], &self.x2[j], var) + lc1 + k1 * u1[i].dot(&u2[j])
            }),
            DirectionalKernel::Vmf => {
                let lc2 = log_cd_unchecked(k2, self.dd);
                log_sum(pairs, |i, j| {
                    self.gauss(&self.x1[i], &self.x2[j], var) + self.vmf_vmf(&u1[i], &u2[j], k1, k2, lc1, lc2)
                })
            }
        }
    }
}

fn prepare<'a>(spec: &CostSpec, model: &'a OrientedPointSet, target: &'a OrientedPointSet) -> Result<Terms<'a>> {
    spec.validate()?;
    if model.is_empty() || target.is_empty() {
        return Err(Error::EmptyShape);
    }
    if model.dim() != target.dim() {
        return Err(Error::DimensionError {
            expected: model.dim(),
            found: target.dim(),
        });
    }
    if spec.family.uses_normals() && (model.normals().is_none() || target.normals().is_none()) {
        return Err(Error::MissingNormals);
    }
    if spec.direction_dim == 2 && model.dim() == 3 && spec.family.uses_normals() {
        return Err(Error::InvalidDimension(2));
    }
    if let Some(c) = &spec.correspondences {
        if c.is_empty() {
            return Err(Error::InvalidConfig("empty correspondence set".into()));
        }
        c.validate(model.len(), target.len())?;
    }
    Ok(Terms {
        x1: model.points(),
        u1: model.normals(),
        x2: target.points(),
        u2: target.normals(),
        d: model.dim(),
        dd: spec.direction_dim,
        k: spec.kernel,
    })
}

/// Evaluates the objective for an already transformed model.
pub fn evaluate(spec: &CostSpec, model: &OrientedPointSet, target: &OrientedPointSet) -> Result<f64> {
    let t = prepare(spec, model, target)?;
    let diagonal: Vec<(usize, usize)>;
    let (self_pairs, cross_pairs) = match &spec.correspondences {
        Some(c) => {
            // matched model points pair only with themselves in ‖p1‖²
            diagonal = c.pairs.iter().map(|&(i, _)| (i, i)).collect();
            (Pairs::Matched(&diagonal), Pairs::Matched(&c.pairs))
        }
        None => (
            Pairs::All(model.len(), model.len()),
            Pairs::All(model.len(), target.len()),
        ),
    };
    let log_cross = match spec.family {
        CostFamily::Cx => t.position_cross(cross_pairs, spec.kernel.h2),
        CostFamily::CxDelta => t.position_cross(cross_pairs, 0.0),
        CostFamily::Cu | CostFamily::CuDelta => t.direction_cross(cross_pairs, directional(spec.family)),
        CostFamily::Cxu | CostFamily::CxuDelta => t.joint_cross(cross_pairs, directional(spec.family)),
    };
    let cross = (log_cross - cross_pairs.count().ln()).exp();
    let value = match spec.mode {
        CostMode::RigidScalarProduct => -cross,
        CostMode::Full => {
            let log_self = match spec.family {
                CostFamily::Cx | CostFamily::CxDelta => t.position_self(self_pairs),
                CostFamily::Cu | CostFamily::CuDelta => t.direction_self(self_pairs),
                CostFamily::Cxu | CostFamily::CxuDelta => t.joint_self(self_pairs),
            };
            (log_self - self_pairs.count().ln()).exp() - 2.0 * cross
        }
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteObjective)
    }
}

fn directional(family: CostFamily) -> DirectionalKernel {
    family.directional().expect("family uses normals")
}

/// Logarithm of the unnormalized rigid cross sum, kernel constants dropped:
/// `ΣΣ exp(κ1 ũᵢᵀu₂ⱼ)` for the direction families,
/// `ΣΣ exp(−‖x₂ⱼ − x̃ᵢ‖² / (2(h1² + h2²)))` for the position families and
/// their product for the joint families.
pub fn log_cross_sum(spec: &CostSpec, model: &OrientedPointSet, target: &OrientedPointSet) -> Result<f64> {
    let t = prepare(spec, model, target)?;
    let pairs = match &spec.correspondences {
        Some(c) => Pairs::Matched(&c.pairs),
        None => Pairs::All(model.len(), target.len()),
    };
    let k = spec.kernel;
    let h2 = if spec.family == CostFamily::CxDelta { 0.0 } else { k.h2 };
    let var = k.h1 * k.h1 + h2 * h2;
    let pos = |i: usize, j: usize| -(t.x1[i] - t.x2[j]).norm_squared() / (2.0 * var);
    Ok(match spec.family {
        CostFamily::Cx | CostFamily::CxDelta => log_sum(pairs, pos),
        CostFamily::Cu | CostFamily::CuDelta => {
            let (u1, u2) = t.normals();
            log_sum(pairs, |i, j| k.kappa1 * u1[i].dot(&u2[j]))
        }
        CostFamily::Cxu | CostFamily::CxuDelta => {
            let (u1, u2) = t.normals();
            log_sum(pairs, |i, j| pos(i, j) + k.kappa1 * u1[i].dot(&u2[j]))
        }
    })
}

/// Position-only cost (`Cx`, or `Cx_delta` when `h2 = 0`) in full form.
pub fn cost_x(
    model: &OrientedPointSet,
    target: &OrientedPointSet,
    k: &KernelParams,
    corr: Option<&CorrespondenceSet>,
) -> Result<f64> {
    let family = if k.h2 == 0.0 {
        CostFamily::CxDelta
    } else {
        CostFamily::Cx
    };
    let mut kernel = *k;
    if kernel.kappa1 <= 0.0 {
        kernel.kappa1 = 1.0;
    }
    evaluate(
        &CostSpec::new(family, CostMode::Full, kernel).with_correspondences(corr.cloned()),
        model,
        target,
    )
}

/// Direction-only cost in full form.
pub fn cost_u(
    model: &OrientedPointSet,
    target: &OrientedPointSet,
    k: &KernelParams,
    variant: DirectionalKernel,
) -> Result<f64> {
    let family = match variant {
        DirectionalKernel::Vmf => CostFamily::Cu,
        DirectionalKernel::Dirac => CostFamily::CuDelta,
    };
    evaluate(&CostSpec::new(family, CostMode::Full, *k), model, target)
}

/// Joint position and direction cost in full form.
pub fn cost_xu(
    model: &OrientedPointSet,
    target: &OrientedPointSet,
    k: &KernelParams,
    variant: DirectionalKernel,
    corr: Option<&CorrespondenceSet>,
) -> Result<f64> {
    let family = match variant {
        DirectionalKernel::Vmf => CostFamily::Cxu,
        DirectionalKernel::Dirac => CostFamily::CxuDelta,
    };
    evaluate(
        &CostSpec::new(family, CostMode::Full, *k).with_correspondences(corr.cloned()),
        model,
        target,
    )
}

/// Applies `transform` to the model (normals by the inverse-transpose
/// Jacobian) and evaluates the objective.
pub fn cost_value(
    spec: &CostSpec,
    model: &OrientedPointSet,
    target: &OrientedPointSet,
    transform: &Transform,
) -> Result<f64> {
    spec.check_transform(transform)?;
    let moved = if spec.family.uses_normals() {
        transform.apply(model, &NormalMode::Jacobian)?
    } else {
        model.replace_points(transform.apply_to_points(model)?)
    };
    evaluate(spec, &moved, target)
}
