//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers to run a subset:
//! `cargo test -p dirreg --test acceptance -- 3 7`.

use std::f64::consts::{PI, TAU};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use dirreg::correspond;
use dirreg::costs::{cost_value, evaluate, CostFamily, CostMode, CostSpec};
use dirreg::harness::{deform_tps, gen_curve, run_experiment, CurveKind, ExperimentResult, ExperimentSpec, Scenario};
use dirreg::kernels::{log_c3, log_sp_vmf_vmf, VmfKernel};
use dirreg::transforms::interpolate;
use dirreg::{KernelParams, NormalMode, OrientedPointSet, Transform, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

/// Mean errors closer than this are a tie: both runs sit at the optimizer's
/// numerical floor, far below any registration failure.
const TIE: f64 = 1e-6;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// Monotonicity of every harness run, collected for criterion 9.
#[derive(Default)]
struct Runs {
    total: usize,
    non_monotone: Vec<String>,
}

impl Runs {
    fn record(&mut self, r: &ExperimentResult) {
        for row in &r.rows {
            self.total += 1;
            if !row.monotone {
                self.non_monotone.push(format!(
                    "{} {} {} t{}",
                    r.scenario, row.sweep_value, row.family, row.trial
                ));
            }
        }
    }
}

fn experiment(scenario: Scenario, edit: impl FnOnce(&mut ExperimentSpec), runs: &mut Runs) -> ExperimentResult {
    let mut spec = ExperimentSpec::new(scenario);
    spec.record_timing = false;
    edit(&mut spec);
    let r = run_experiment(&spec).expect("experiment runs");
    runs.record(&r);
    r
}

fn failures(r: &ExperimentResult) -> usize {
    r.summary.iter().map(|e| e.failures).sum()
}

fn mean(r: &ExperimentResult, v: f64, f: CostFamily) -> f64 {
    r.entry(v, f).expect("summary entry").mean
}

fn sample_vmf(mu: &Vec3, kappa: f64, rng: &mut ChaCha8Rng) -> Vec3 {
    // inverse CDF of the cosine to the mean on S²
    let xi: f64 = rng.random();
    let w = 1.0 + (xi + (1.0 - xi) * (-2.0 * kappa).exp()).ln() / kappa;
    let phi = rng.random_range(0.0..TAU);
    let a = if mu.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = mu.cross(&a).normalize();
    let e2 = mu.cross(&e1);
    let s = (1.0 - w * w).max(0.0).sqrt();
    mu * w + (e1 * phi.cos() + e2 * phi.sin()) * s
}

fn c1_kernel_oracle() -> Outcome {
    let mu1 = Vec3::z();
    let mu2 = Vec3::new(0.3f64.sin(), 0.0, 0.3f64.cos());
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for kappa in [0.1, 1.0, 10.0, 50.0] {
        let closed = log_sp_vmf_vmf(mu1.as_slice(), mu2.as_slice(), kappa, kappa, 3)
            .unwrap()
            .exp();
        let k2 = VmfKernel::new(mu2.as_slice().to_vec(), kappa).unwrap();
        // importance sampling from the first kernel
        let n = 10_000_000;
        let sum: f64 = (0..n)
            .map(|_| k2.density(sample_vmf(&mu1, kappa, &mut rng).as_slice()))
            .sum();
        let mc = sum / n as f64;
        worst = worst.max(((mc - closed) / closed).abs());
    }
    Outcome::new(worst < 0.01, format!("worst relative gap {worst:.2e} (limit 1e-2)"))
}

/// Adaptive Simpson quadrature, written independently of the library's.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
}

fn c2_c3_identity() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..=60 {
        let kappa = 1e-3 * (5e4f64).powf(i as f64 / 60.0);
        // 1/C3(κ) = 2π ∫ exp(κ t) dt over [-1, 1], scaled by exp(-κ)
        let scaled = simpson(&|t: f64| (kappa * (t - 1.0)).exp(), -1.0, 1.0, 1e-14);
        let log_c = -(TAU.ln() + scaled.ln() + kappa);
        let got = log_c3(kappa).unwrap();
        worst = worst.max((got - log_c).exp_m1().abs());
    }
    let far = log_c3(700.0).unwrap();
    Outcome::new(
        worst < 1e-6 && far.is_finite(),
        format!("worst relative gap {worst:.2e} on [1e-3, 50]; log C3(700) = {far:.4}"),
    )
}

fn c3_rigid_2d(runs: &mut Runs) -> Outcome {
    let r = experiment(Scenario::Rigid2d, |_| {}, runs);
    let sweep: Vec<f64> = r.summary.iter().map(|e| e.sweep_value).collect();
    let worst_xu = sweep.iter().map(|&v| mean(&r, v, CostFamily::Cxu)).fold(0.0, f64::max);
    let worst_u = sweep.iter().map(|&v| mean(&r, v, CostFamily::Cu)).fold(0.0, f64::max);
    let (xu, x) = (r.overall_mean(CostFamily::Cxu), r.overall_mean(CostFamily::Cx));
    Outcome::new(
        failures(&r) == 0 && worst_xu < 1e-4 && worst_u < 1e-4 && xu <= x + TIE,
        format!("worst per-angle mean: xu {worst_xu:.2e}, u {worst_u:.2e}; sweep mean xu {xu:.2e} vs x {x:.2e}"),
    )
}

fn c4_missing_2d(runs: &mut Runs) -> Outcome {
    let r = experiment(
        Scenario::Rigid2dMissing,
        |s| s.families = vec![CostFamily::Cx, CostFamily::Cxu],
        runs,
    );
    let mut ok = failures(&r) == 0;
    let mut parts = Vec::new();
    for v in [0.07, 0.2, 0.33, 0.47, 0.6] {
        let (xu, x) = (mean(&r, v, CostFamily::Cxu), mean(&r, v, CostFamily::Cx));
        if v < 0.5 {
            ok &= xu <= x + TIE;
        }
        parts.push(format!("{:.0}%: xu {xu:.1e} x {x:.1e}", v * 100.0));
    }
    Outcome::new(ok, parts.join("; "))
}

fn c5_rigid_3d_same(runs: &mut Runs) -> Outcome {
    let r = experiment(Scenario::Rigid3dSame, |s| s.trials = 5, runs);
    let families = [CostFamily::Cx, CostFamily::CuDelta, CostFamily::CxuDelta];
    let worst: Vec<(CostFamily, f64)> = families
        .iter()
        .map(|&f| {
            let m = r
                .summary
                .iter()
                .filter(|e| e.family == f.name())
                .map(|e| e.mean)
                .fold(0.0, f64::max);
            (f, m)
        })
        .collect();
    let ok = failures(&r) == 0 && worst.iter().all(|(_, m)| *m < 1e-5);
    let text: Vec<String> = worst.iter().map(|(f, m)| format!("{f} {m:.2e}")).collect();
    Outcome::new(
        ok,
        format!("worst per-angle mean over 30..120 deg: {}", text.join(", ")),
    )
}

fn c6_rigid_3d_resampled(runs: &mut Runs) -> Outcome {
    let r = experiment(
        Scenario::Rigid3dResampled,
        |s| {
            s.trials = 5;
            s.sweep = vec![60.0];
        },
        runs,
    );
    let xu = mean(&r, 60.0, CostFamily::CxuDelta);
    let x = mean(&r, 60.0, CostFamily::Cx);
    let u = mean(&r, 60.0, CostFamily::CuDelta);
    Outcome::new(
        failures(&r) == 0 && xu <= x + TIE && x <= u + TIE,
        format!("xu-delta {xu:.3e} <= x {x:.3e} <= u-delta {u:.3e}"),
    )
}

fn translated(shape: &OrientedPointSet, t: Vec3) -> OrientedPointSet {
    let pts = shape.points().iter().map(|p| p + t).collect();
    OrientedPointSet::new(shape.dim(), pts)
        .unwrap()
        .with_normals(shape.normals().unwrap().to_vec())
        .unwrap()
}

fn c7_translation_invariance() -> Outcome {
    let s1 = gen_curve(CurveKind::Fourier, 80, 11).unwrap();
    let s2 = Transform::rotation2d(0.7).apply(&s1, &NormalMode::Jacobian).unwrap();
    let spec = CostSpec::new(CostFamily::Cu, CostMode::Full, KernelParams::shared(0.1, 8.0).unwrap());
    let base = evaluate(&spec, &s1, &s2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let worst = (0..100)
        .map(|_| {
            let t = Vec3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), 0.0);
            (evaluate(&spec, &translated(&s1, t), &s2).unwrap() - base).abs()
        })
        .fold(0.0, f64::max);
    Outcome::new(
        worst < 1e-12,
        format!("largest change {worst:.1e} over 100 translations"),
    )
}

fn argmin_degrees(family: CostFamily, model: &OrientedPointSet, target: &OrientedPointSet) -> usize {
    let k = KernelParams::shared(0.05, 32.0).unwrap();
    let spec = CostSpec::new(family, CostMode::RigidScalarProduct, k);
    (0..360)
        .map(|d| {
            let t = Transform::rotation2d((d as f64).to_radians());
            (d, cost_value(&spec, model, target, &t).unwrap())
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0
}

fn c8_dirac_equivalence() -> Outcome {
    let model = gen_curve(CurveKind::Fourier, 50, 5).unwrap();
    let target = Transform::rotation2d(PI / 3.0)
        .apply(&model, &NormalMode::Jacobian)
        .unwrap();
    let [u, ud, xu, xud] = [
        CostFamily::Cu,
        CostFamily::CuDelta,
        CostFamily::Cxu,
        CostFamily::CxuDelta,
    ]
    .map(|f| argmin_degrees(f, &model, &target));
    Outcome::new(
        u == ud && xu == xud,
        format!("argmin u {u}, u-delta {ud}, xu {xu}, xu-delta {xud} (deg)"),
    )
}

fn c9_monotone(runs: &Runs) -> Outcome {
    let bad = &runs.non_monotone;
    let shown: Vec<&str> = bad.iter().take(5).map(String::as_str).collect();
    Outcome::new(
        runs.total > 0 && bad.is_empty(),
        format!("{} of {} runs non-monotone {}", bad.len(), runs.total, shown.join(", ")),
    )
}

fn c10_correspondences() -> Outcome {
    let s = gen_curve(CurveKind::Fourier, 60, 2).unwrap();
    let rotated = Transform::rotation2d(PI / 3.0).apply_to_points(&s).unwrap();
    let mut ok = true;
    for alpha in [0.0, 0.5, 1.0] {
        ok &= correspond::estimate(s.points(), s.points(), alpha, correspond::DEFAULT_K)
            .unwrap()
            .is_identity();
    }
    let rot = correspond::estimate(s.points(), &rotated, 1.0, correspond::DEFAULT_K)
        .unwrap()
        .is_identity();
    Outcome::new(
        ok && rot,
        format!("identical sets identity: {ok}; 60 deg copy at alpha 1 identity: {rot}"),
    )
}

fn c11_nonrigid_2d(runs: &mut Runs) -> Outcome {
    let r = experiment(
        Scenario::Nonrigid2d,
        |s| {
            s.sweep = vec![1.0, 2.0, 3.0, 4.0];
            s.families = vec![CostFamily::Cxu];
        },
        runs,
    );
    let medians: Vec<f64> = [1.0, 2.0, 3.0, 4.0]
        .iter()
        .map(|&v| r.entry(v, CostFamily::Cxu).unwrap().median)
        .collect();
    let worst = medians.iter().copied().fold(0.0, f64::max);
    let text: Vec<String> = medians.iter().map(|m| format!("{m:.3}")).collect();
    Outcome::new(
        worst < 0.05,
        format!("median error per degree 1..4: {}", text.join(", ")),
    )
}

fn c12_interpolation_endpoints() -> Outcome {
    let shape = gen_curve(CurveKind::Fourier, 40, 9).unwrap();
    let ts: Vec<Transform> = (0..3).map(|s| deform_tps(&shape, 3.0, 100 + s).unwrap().1).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pts: Vec<Vec3> = (0..1000)
        .map(|_| Vec3::new(rng.random_range(-0.5..1.5), rng.random_range(-0.5..1.5), 0.0))
        .collect();
    let mut worst = 0.0f64;
    for (alphas, k) in [([1.0, 0.0, 0.0], 0), ([0.0, 1.0, 0.0], 1)] {
        let blend = interpolate(&ts, &alphas).unwrap();
        for p in &pts {
            worst = worst.max((blend.apply_point(p) - ts[k].apply_point(p)).norm());
        }
    }
    // rotations too, in 3D where quaternion signs matter
    let mut rng3 = ChaCha8Rng::seed_from_u64(13);
    let rots: Vec<Transform> = (0..3)
        .map(|_| {
            let axis: [f64; 3] = UnitSphere.sample(&mut rng3);
            Transform::rotation3d_axis_angle(Vec3::from(axis), rng3.random_range(0.0..PI)).unwrap()
        })
        .collect();
    for (alphas, k) in [([1.0, 0.0, 0.0], 0), ([0.0, 1.0, 0.0], 1)] {
        let blend = interpolate(&rots, &alphas).unwrap();
        for p in &pts {
            worst = worst.max((blend.apply_point(p) - rots[k].apply_point(p)).norm());
        }
    }
    Outcome::new(worst < 1e-12, format!("largest endpoint deviation {worst:.1e}"))
}

fn main() -> ExitCode {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let on = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let budgets = [30, 5, 300, 600, 600, 600, 60, 120, 0, 60, 1200, 60];
    let mut runs = Runs::default();
    let mut failed = 0;
    let mut report = |n: usize, f: &mut dyn FnMut(&mut Runs) -> Outcome, runs: &mut Runs| {
        if !on(n) {
            return;
        }
        let start = Instant::now();
        let mut o = f(runs);
        let took = start.elapsed();
        let budget = budgets[n - 1];
        if budget > 0 && took > Duration::from_secs(budget) {
            o.pass = false;
            o.detail += &format!("; over the {budget} s budget");
        }
        failed += usize::from(!o.pass);
        println!(
            "criterion {n:>2}: {} ({:.1} s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            o.detail
        );
    };
    report(1, &mut |_| c1_kernel_oracle(), &mut runs);
    report(2, &mut |_| c2_c3_identity(), &mut runs);
    report(3, &mut c3_rigid_2d, &mut runs);
    report(4, &mut c4_missing_2d, &mut runs);
    report(5, &mut c5_rigid_3d_same, &mut runs);
    report(6, &mut c6_rigid_3d_resampled, &mut runs);
    report(7, &mut |_| c7_translation_invariance(), &mut runs);
    report(8, &mut |_| c8_dirac_equivalence(), &mut runs);
    report(10, &mut |_| c10_correspondences(), &mut runs);
    report(11, &mut c11_nonrigid_2d, &mut runs);
    report(12, &mut |_| c12_interpolation_endpoints(), &mut runs);
    // monotonicity covers every harness run above, so it is reported last
    report(9, &mut |r: &mut Runs| c9_monotone(r), &mut runs);
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
