//! Annealed registration: minimize the cost at a coarse bandwidth and low
//! concentration, then sharpen both geometrically and minimize again from the
//! previous solution.

use std::f64::consts::{PI, TAU};
use std::ops::Range;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::correspond::{self, CorrespondenceSet};
use crate::costs::{self, CostFamily, CostMode, CostSpec};
use crate::error::{Error, Result};
use crate::geometry::{bounding_box, subsample, OrientedPointSet, Vec3};
use crate::kernels::KernelParams;
use crate::transforms::{control_grid, default_grid_shape, NormalMode, Transform, TransformFamily};

/// Geometric schedule: stage `s` uses `h_init·h_step^s` and `κ_init·κ_step^s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealingSchedule {
    pub h_init: f64,
    pub h_final: f64,
    pub h_step: f64,
    pub kappa_init: f64,
    pub kappa_final: f64,
    pub kappa_step: f64,
    pub steps: usize,
}

impl AnnealingSchedule {
    /// Derives the final values from the initial ones and the step factors.
    pub fn new(h_init: f64, h_step: f64, kappa_init: f64, kappa_step: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::ScheduleExhausted);
        }
        let last = (steps - 1) as i32;
        let s = Self {
            h_init,
            h_final: h_init * h_step.powi(last),
            h_step,
            kappa_init,
            kappa_final: kappa_init * kappa_step.powi(last),
            kappa_step,
            steps,
        };
        s.validate()?;
        Ok(s)
    }

    /// Default for a transform family: halve `h` from half the bounding-box
    /// diagonal and double `κ` from 1, over 6 (2D rigid), 8 (3D rigid and
    /// TPS) or 5 (2D TPS) stages.
    pub fn default_for(family: TransformFamily, dim: usize, diagonal: f64) -> Result<Self> {
        // Planar rotations start nearly isotropic in direction: the first
        // harmonic of a curve's normal field is weak, so a sharp kernel
        // early on locks onto the half-turn ambiguity of the second.
        // Surfaces start with a narrower bandwidth: near-spherical shapes
        // blur into rotation-invariant blobs at half the diagonal.
        let (h_scale, kappa_init, steps) = match (family, dim) {
            (TransformFamily::Tps, 2) => (0.5, 1.0, 5),
            (TransformFamily::Tps, _) => (0.5, 1.0, 8),
            (TransformFamily::Rotation2d, _) => (0.5, 0.05, 10),
            (TransformFamily::Rotation3d, _) => (0.2, 0.05, 10),
        };
        Self::new(h_scale * diagonal, 0.5, kappa_init, 2.0, steps)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("annealing schedule: {m}")));
        if self.steps == 0 {
            return Err(Error::ScheduleExhausted);
        }
        let finite = [
            self.h_init,
            self.h_final,
            self.h_step,
            self.kappa_init,
            self.kappa_final,
            self.kappa_step,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite || !(self.h_final > 0.0) || !(self.kappa_init > 0.0) {
            return bad("h and κ must be positive and finite");
        }
        if !(self.h_step > 0.0 && self.h_step <= 1.0) || self.kappa_step < 1.0 {
            return bad("need h_step in (0, 1] and κ_step ≥ 1");
        }
        if self.h_init < self.h_final || self.kappa_init > self.kappa_final {
            return bad("h must decrease and κ increase");
        }
        let last = (self.steps - 1) as i32;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs());
        if !close(self.h_init * self.h_step.powi(last), self.h_final)
            || !close(self.kappa_init * self.kappa_step.powi(last), self.kappa_final)
        {
            return bad("initial values, step factors and final values disagree");
        }
        Ok(())
    }

    /// `(h, κ)` at stage `s`.
    pub fn stage(&self, s: usize) -> (f64, f64) {
        (
            self.h_init * self.h_step.powi(s as i32),
            self.kappa_init * self.kappa_step.powi(s as i32),
        )
    }
}

/// Central-difference gradient with per-coordinate step `rel·max(1, |θᵢ|)`.
pub fn fd_gradient<F>(f: &mut F, theta: &[f64], rel: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut x = theta.to_vec();
    let mut g = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let eps = rel * theta[i].abs().max(1.0);
        x[i] = theta[i] + eps;
        let fp = f(&x)?;
        x[i] = theta[i] - eps;
        let fm = f(&x)?;
        x[i] = theta[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFiniteObjective);
        }
        g.push((fp - fm) / (2.0 * eps));
    }
    Ok(g)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerOptions {
    pub max_evals: usize,
    pub grad_tol: f64,
    pub rel_tol: f64,
    pub fd_step: f64,
    /// Parameters constrained to unit norm (a quaternion).
    pub unit_block: Option<Range<usize>>,
    /// Coordinate step of the probe used to leave stationary points that
    /// are not minima; 0 disables it.
    pub escape_step: f64,
    pub max_escapes: usize,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self {
            max_evals: 50_000,
            grad_tol: 1e-8,
            rel_tol: 1e-10,
            fd_step: 1e-6,
            unit_block: None,
            escape_step: 0.05,
            max_escapes: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Gradient,
    RelativeChange,
    MaxEvals,
    Stalled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerResult {
    pub theta: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub evals: usize,
    pub iterations: usize,
    pub escapes: usize,
    pub stop: StopReason,
    pub stalled: bool,
}

struct Budget<F> {
    f: F,
    evals: usize,
    max: usize,
}

#[derive(Debug)]
enum Halt {
    Budget,
    Err(Error),
}

impl From<Error> for Halt {
    fn from(e: Error) -> Self {
        Halt::Err(e)
    }
}

impl<F: FnMut(&[f64]) -> Result<f64>> Budget<F> {
    fn eval(&mut self, x: &[f64]) -> std::result::Result<f64, Halt> {
        if self.evals >= self.max {
            return Err(Halt::Budget);
        }
        self.evals += 1;
        let v = (self.f)(x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Halt::Err(Error::NonFiniteObjective))
        }
    }

    fn grad(&mut self, x: &[f64], rel: f64) -> std::result::Result<Vec<f64>, Halt> {
        if self.evals + 2 * x.len() > self.max {
            return Err(Halt::Budget);
        }
        let mut count = 0;
        let f = &mut self.f;
        let g = fd_gradient(
            &mut |t: &[f64]| {
                count += 1;
                f(t)
            },
            x,
            rel,
        )?;
        self.evals += count;
        Ok(g)
    }
}

fn renormalize(x: &mut [f64], block: &Option<Range<usize>>) {
    if let Some(r) = block {
        let n = x[r.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            x[r.clone()].iter_mut().for_each(|v| *v /= n);
        }
    }
}

/// BFGS on the inverse Hessian with finite-difference gradients and
/// backtracking Armijo line search (40 halvings at most).
///
/// The first step is scaled to length 0.1 and the initial inverse Hessian is
/// rescaled by `sᵀy / yᵀy` after it. When the gradient test fires, each
/// coordinate is probed by `±escape_step`; a lower value restarts the
/// descent from there, so saddles and maxima (e.g. a start exactly opposite
/// the optimum) are not reported as converged.
pub fn minimize_inner<F>(f: F, theta0: &[f64], opts: &InnerOptions) -> Result<InnerResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut b = Budget {
        f,
        evals: 0,
        max: opts.max_evals.max(1),
    };
    let mut x = theta0.to_vec();
    renormalize(&mut x, &opts.unit_block);
    let fx0 = match b.eval(&x) {
        Ok(v) => v,
        Err(Halt::Err(e)) => return Err(e),
        Err(Halt::Budget) => unreachable!("budget is at least one evaluation"),
    };
    let mut state = Descent {
        x,
        fx: fx0,
        iterations: 0,
        escapes: 0,
        stalled: false,
    };
    let stop = match state.run(&mut b, opts) {
        Ok(reason) => reason,
        Err(Halt::Budget) => StopReason::MaxEvals,
        Err(Halt::Err(e)) => return Err(e),
    };
    Ok(InnerResult {
        theta: state.x,
        value: state.fx,
        initial_value: fx0,
        evals: b.evals,
        iterations: state.iterations,
        escapes: state.escapes,
        stop,
        stalled: state.stalled,
    })
}

struct Descent {
    x: Vec<f64>,
    fx: f64,
    iterations: usize,
    escapes: usize,
    stalled: bool,
}

impl Descent {
    fn run<F>(&mut self, b: &mut Budget<F>, opts: &InnerOptions) -> std::result::Result<StopReason, Halt>
    where
        F: FnMut(&[f64]) -> Result<f64>,
    {
        loop {
            let reason = self.bfgs(b, opts)?;
            if reason != StopReason::Gradient || self.escapes >= opts.max_escapes || !self.probe(b, opts)? {
                return Ok(reason);
            }
            self.escapes += 1;
        }
    }

    /// Moves to the best lower point among `x ± escape_step·eᵢ`, if any.
    fn probe<F>(&mut self, b: &mut Budget<F>, opts: &InnerOptions) -> std::result::Result<bool, Halt>
    where
        F: FnMut(&[f64]) -> Result<f64>,
    {
        if !(opts.escape_step > 0.0) {
            return Ok(false);
        }
        let mut best: Option<(Vec<f64>, f64)> = None;
        for i in 0..self.x.len() {
            for sign in [1.0, -1.0] {
                let mut y = self.x.clone();
                y[i] += sign * opts.escape_step;
                renormalize(&mut y, &opts.unit_block);
                let fy = b.eval(&y)?;
                if fy < best.as_ref().map_or(self.fx, |(_, v)| *v) {
                    best = Some((y, fy));
                }
            }
        }
        Ok(match best {
            Some((y, fy)) => {
                self.x = y;
                self.fx = fy;
                true
            }
            None => false,
        })
    }

    fn bfgs<F>(&mut self, b: &mut Budget<F>, opts: &InnerOptions) -> std::result::Result<StopReason, Halt>
    where
        F: FnMut(&[f64]) -> Result<f64>,
    {
        const C1: f64 = 1e-4;
        const MAX_HALVINGS: usize = 40;
        const FIRST_STEP: f64 = 0.1;
        let n = self.x.len();
        let mut h = DMatrix::<f64>::identity(n, n);
        let mut fresh = true;
        let mut g = DVector::from_vec(b.grad(&self.x, opts.fd_step)?);
        loop {
            let gnorm = g.norm();
            if gnorm < opts.grad_tol {
                return Ok(StopReason::Gradient);
            }
            let mut p = if fresh { -&g * (FIRST_STEP / gnorm) } else { -(&h * &g) };
            let mut slope = g.dot(&p);
            if !(slope < 0.0) {
                h = DMatrix::identity(n, n);
                fresh = true;
                p = -&g * (FIRST_STEP / gnorm);
                slope = g.dot(&p);
            }
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let mut y: Vec<f64> = self.x.iter().zip(p.iter()).map(|(a, d)| a + t * d).collect();
                renormalize(&mut y, &opts.unit_block);
                let fy = b.eval(&y)?;
                if fy <= self.fx + C1 * t * slope {
                    accepted = Some((y, fy));
                    break;
                }
                t *= 0.5;
            }
            let Some((x_new, f_new)) = accepted else {
                self.stalled = true;
                return Ok(StopReason::Stalled);
            };
            self.iterations += 1;
            let f_old = self.fx;
            let s = DVector::from_iterator(n, x_new.iter().zip(&self.x).map(|(a, b)| a - b));
            self.x = x_new;
            self.fx = f_new;
            if (f_old - f_new).abs() <= opts.rel_tol * f_old.abs().max(f64::MIN_POSITIVE) {
                return Ok(StopReason::RelativeChange);
            }
            let g_new = DVector::from_vec(b.grad(&self.x, opts.fd_step)?);
            let yv = &g_new - &g;
            let sy = s.dot(&yv);
            if sy > 1e-12 * s.norm() * yv.norm() {
                if fresh {
                    h *= sy / yv.dot(&yv);
                    fresh = false;
                }
                let rho = 1.0 / sy;
                let hy = &h * &yv;
                let yhy = yv.dot(&hy);
                // H ← (I − ρsyᵀ) H (I − ρysᵀ) + ρssᵀ, expanded
                h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            }
            g = g_new;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrespondenceOptions {
    pub k: usize,
    /// Estimate once at the first stage instead of at every stage.
    pub freeze: bool,
    /// Local weight at the first stage; it falls linearly to 0 at the last.
    /// Below 1 because the kNN descriptor barely varies along a uniformly
    /// sampled curve, so purely local matches are close to random.
    pub alpha_start: f64,
}

impl Default for CorrespondenceOptions {
    fn default() -> Self {
        Self {
            k: correspond::DEFAULT_K,
            freeze: false,
            alpha_start: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegisterOptions {
    pub cost: CostFamily,
    pub transform: TransformFamily,
    /// Defaults to the scalar-product form for rotations and the full L2
    /// form for TPS.
    pub mode: Option<CostMode>,
    pub schedule: Option<AnnealingSchedule>,
    /// Points kept per shape; defaults to `min(n, 1000)`.
    pub subsample: Option<usize>,
    pub seed: u64,
    pub with_translation: bool,
    pub correspondences: Option<CorrespondenceOptions>,
    /// TPS control points per axis; defaults to a grid over the model bounding box.
    pub tps_grid: Option<Vec<usize>>,
    pub max_evals: usize,
    /// Number of rotation starts (evenly spaced); 1 starts at the identity only.
    pub multi_start: usize,
    pub direction_dim: usize,
    pub escape_step: f64,
}

impl Default for RegisterOptions {
    fn default() -> Self {
        Self {
            cost: CostFamily::Cxu,
            transform: TransformFamily::Rotation2d,
            mode: None,
            schedule: None,
            subsample: None,
            seed: 0,
            with_translation: false,
            correspondences: None,
            tps_grid: None,
            max_evals: 50_000,
            multi_start: 1,
            direction_dim: 3,
            escape_step: 0.05,
        }
    }
}

pub const DEFAULT_SUBSAMPLE: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: usize,
    pub h: f64,
    pub kappa: f64,
    pub alpha: Option<f64>,
    pub entry_cost: f64,
    pub exit_cost: f64,
    pub evals: usize,
    pub iterations: usize,
    pub escapes: usize,
    pub stop: StopReason,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub transform: Transform,
    pub cost: CostFamily,
    pub stages: Vec<StageTrace>,
    pub start: usize,
    pub final_cost: f64,
    pub evals: usize,
    pub iterations: usize,
    pub seconds: f64,
    /// Final correspondences (model and target subsample indices), when enabled.
    pub correspondences: Option<CorrespondenceSet>,
}

impl OptimizeReport {
    /// Every stage ended no higher than it started.
    pub fn is_monotone(&self) -> bool {
        self.stages.iter().all(|s| s.exit_cost <= s.entry_cost)
    }

    /// Copy with wall-clock fields zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.seconds = 0.0;
        r.stages.iter_mut().for_each(|s| s.seconds = 0.0);
        r
    }
}

fn starting_transforms(base: &Transform, k: usize) -> Result<Vec<Transform>> {
    if k <= 1 {
        return Ok(vec![base.clone()]);
    }
    let angles = (0..k).map(|i| TAU * i as f64 / k as f64);
    match base {
        Transform::Rotation2d(_) => Ok(angles.map(Transform::rotation2d).collect()),
        Transform::Rotation3d(_) => {
            let axes = [Vec3::z(), Vec3::x(), Vec3::y()];
            angles
                .enumerate()
                .map(|(i, a)| Transform::rotation3d_axis_angle(axes[i % 3], a))
                .collect()
        }
        Transform::Tps(_) => Err(Error::InvalidConfig("multi-start applies to rotations only".into())),
    }
}

/// Registers `model` onto `target`.
///
/// Both shapes are subsampled, the transform starts at the identity and each
/// annealing stage is minimized in turn. With correspondences enabled they
/// are re-estimated on the current model at every stage, blending from the
/// local to the global distance.
pub fn register(model: &OrientedPointSet, target: &OrientedPointSet, opts: &RegisterOptions) -> Result<OptimizeReport> {
    let started = Instant::now();
    if model.is_empty() || target.is_empty() {
        return Err(Error::EmptyShape);
    }
    if model.dim() != target.dim() {
        return Err(Error::DimensionError {
            expected: model.dim(),
            found: target.dim(),
        });
    }
    let dim = model.dim();
    let expected_family = if dim == 2 {
        TransformFamily::Rotation2d
    } else {
        TransformFamily::Rotation3d
    };
    if opts.transform.is_rigid() && opts.transform != expected_family {
        return Err(Error::InvalidConfig(format!(
            "{:?} does not act on {dim}D shapes",
            opts.transform
        )));
    }
    if opts.cost.uses_normals() && (model.normals().is_none() || target.normals().is_none()) {
        return Err(Error::MissingNormals);
    }
    if let Some(c) = &opts.correspondences {
        if !(0.0..=1.0).contains(&c.alpha_start) {
            return Err(Error::InvalidConfig(format!(
                "alpha_start {} outside [0, 1]",
                c.alpha_start
            )));
        }
    }
    let mode = opts.mode.unwrap_or(if opts.transform.is_rigid() {
        CostMode::RigidScalarProduct
    } else {
        CostMode::Full
    });
    let bbox = bounding_box(model)?;
    let schedule = match opts.schedule {
        Some(s) => {
            s.validate()?;
            s
        }
        None => AnnealingSchedule::default_for(opts.transform, dim, bbox.diagonal())?,
    };

    let m = opts.subsample.unwrap_or(DEFAULT_SUBSAMPLE);
    let (model_s, _) = subsample(model, m, opts.seed)?;
    let (target_s, _) = subsample(target, m, opts.seed.wrapping_add(0x9e37_79b9_7f4a_7c15))?;

    let identity = match opts.transform {
        TransformFamily::Tps => {
            let grid = opts.tps_grid.clone().unwrap_or_else(|| default_grid_shape(&bbox));
            Transform::identity(TransformFamily::Tps, dim, Some(control_grid(&bbox, &grid)?))?
        }
        f => Transform::identity(f, dim, None)?,
    };
    let probe_spec = CostSpec {
        direction_dim: opts.direction_dim,
        ..CostSpec::new(opts.cost, mode, KernelParams::shared(1.0, 1.0)?)
    };
    probe_spec.check_transform(&identity)?;

    let mut best: Option<OptimizeReport> = None;
    for (start, init) in starting_transforms(&identity, opts.multi_start)?
        .into_iter()
        .enumerate()
    {
        let report = anneal(&model_s, &target_s, &init, &probe_spec, &schedule, opts, start)?;
        if best.as_ref().is_none_or(|b| report.final_cost < b.final_cost) {
            best = Some(report);
        }
    }
    let mut report = best.expect("at least one start");
    report.seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

fn anneal(
    model: &OrientedPointSet,
    target: &OrientedPointSet,
    init: &Transform,
    base_spec: &CostSpec,
    schedule: &AnnealingSchedule,
    opts: &RegisterOptions,
    start: usize,
) -> Result<OptimizeReport> {
    let started = Instant::now();
    let unit_block = matches!(init, Transform::Rotation3d(_)).then_some(0..4);
    let inner = InnerOptions {
        max_evals: opts.max_evals,
        unit_block,
        escape_step: opts.escape_step,
        ..InnerOptions::default()
    };
    let uses_normals = opts.cost.uses_normals();
    let mut current = init.clone();
    let mut theta = current.to_params(opts.with_translation);
    let mut corr: Option<CorrespondenceSet> = None;
    let mut stages = Vec::with_capacity(schedule.steps);
    let (mut evals, mut iterations) = (0, 0);

    for s in 0..schedule.steps {
        let stage_start = Instant::now();
        let (h, kappa) = schedule.stage(s);
        let mut spec = base_spec.clone();
        spec.kernel = KernelParams::shared(h, kappa)?;
        let mut alpha = None;
        if let Some(c) = &opts.correspondences {
            let a = if schedule.steps == 1 {
                c.alpha_start
            } else {
                c.alpha_start * (1.0 - s as f64 / (schedule.steps - 1) as f64)
            };
            if corr.is_none() || !c.freeze {
                let moved = current.apply_to_points(model)?;
                corr = Some(correspond::estimate(&moved, target.points(), a, c.k)?);
            }
            alpha = corr.as_ref().map(|c| c.alpha);
            spec.correspondences = corr.clone();
        }
        let objective = |p: &[f64]| -> Result<f64> {
            let t = current.with_params(p, opts.with_translation)?;
            let moved = if uses_normals {
                t.apply(model, &NormalMode::Jacobian)?
            } else {
                model.replace_points(t.apply_to_points(model)?)
            };
            costs::evaluate(&spec, &moved, target)
        };
        let r = minimize_inner(objective, &theta, &inner)?;
        theta = r.theta;
        current = current.with_params(&theta, opts.with_translation)?;
        evals += r.evals;
        iterations += r.iterations;
        stages.push(StageTrace {
            stage: s,
            h,
            kappa,
            alpha,
            entry_cost: r.initial_value,
            exit_cost: r.value,
            evals: r.evals,
            iterations: r.iterations,
            escapes: r.escapes,
            stop: r.stop,
            seconds: stage_start.elapsed().as_secs_f64(),
        });
    }
    if let Transform::Rotation2d(p) = &mut current {
        p.angle = (p.angle + PI).rem_euclid(TAU) - PI;
    }
    let final_cost = stages.last().map_or(f64::NAN, |s| s.exit_cost);
    Ok(OptimizeReport {
        transform: current,
        cost: opts.cost,
        stages,
        start,
        final_cost,
        evals,
        iterations,
        seconds: started.elapsed().as_secs_f64(),
        correspondences: corr,
    })
}
