//! `dirreg` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dirreg::costs::CostFamily;
use dirreg::harness::{self, ExperimentSpec, Scenario};
use dirreg::io::{self, RunConfig};
use dirreg::normals::{self, NormalEstimatorConfig, NormalMethod};
use dirreg::optimize::{self, CorrespondenceOptions};
use dirreg::transforms::{self, NormalMode, Transform, TransformFamily};
use dirreg::{Connectivity, OrientedPointSet};

#[derive(Parser)]
#[command(
    name = "dirreg",
    version,
    about = "Register oriented point sets by kernel density L2 distance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align MODEL onto TARGET and write the recovered transform.
    Register(RegisterArgs),
    /// Estimate normals and write the shape back out.
    Normals(NormalsArgs),
    /// Write one generated harness trial (model, target, truth).
    Generate(GenerateArgs),
    /// Run a batch experiment described by a JSON spec.
    Experiment(ExperimentArgs),
    /// Mean point-to-point error between two aligned files.
    Evaluate(EvaluateArgs),
    /// Blend transforms of one family with barycentric weights.
    Interpolate(InterpolateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CostArg {
    X,
    U,
    UDelta,
    Xu,
    XuDelta,
}

impl From<CostArg> for CostFamily {
    fn from(c: CostArg) -> Self {
        match c {
            CostArg::X => CostFamily::Cx,
            CostArg::U => CostFamily::Cu,
            CostArg::UDelta => CostFamily::CuDelta,
            CostArg::Xu => CostFamily::Cxu,
            CostArg::XuDelta => CostFamily::CxuDelta,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TransformArg {
    Rot2,
    Rot3,
    Tps,
}

impl From<TransformArg> for TransformFamily {
    fn from(t: TransformArg) -> Self {
        match t {
            TransformArg::Rot2 => TransformFamily::Rotation2d,
            TransformArg::Rot3 => TransformFamily::Rotation3d,
            TransformArg::Tps => TransformFamily::Tps,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Spline,
    Mesh,
    Knn,
}

/// Polyline connectivity for CSV inputs.
#[derive(Args, Clone, Copy)]
struct CurveFlags {
    /// Rows form a closed curve.
    #[arg(long, conflicts_with = "open")]
    closed: bool,
    /// Rows form an open curve.
    #[arg(long)]
    open: bool,
}

impl CurveFlags {
    fn connectivity(self) -> Option<Connectivity> {
        match (self.closed, self.open) {
            (true, _) => Some(Connectivity::Polyline { closed: true }),
            (_, true) => Some(Connectivity::Polyline { closed: false }),
            _ => None,
        }
    }
}

#[derive(Args)]
struct RegisterArgs {
    model: PathBuf,
    target: PathBuf,
    #[arg(long, value_enum)]
    cost: Option<CostArg>,
    #[arg(long, value_enum)]
    transform: Option<TransformArg>,
    /// JSON run configuration; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_transform: Option<PathBuf>,
    /// Transformed model (.csv or .ply).
    #[arg(long)]
    out_points: Option<PathBuf>,
    /// Full optimizer report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Final (model, target) pairs as CSV; needs correspondences enabled.
    #[arg(long)]
    dump_correspondences: Option<PathBuf>,
    /// Re-estimate point correspondences at each annealing stage.
    #[arg(long)]
    correspondences: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    curve: CurveFlags,
}

#[derive(Args)]
struct NormalsArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long, value_enum, default_value = "knn")]
    method: MethodArg,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Reverse every normal.
    #[arg(long)]
    flip: bool,
    #[command(flatten)]
    curve: CurveFlags,
}

#[derive(Args)]
struct GenerateArgs {
    scenario: String,
    /// Sweep value (angle, removal fraction, degree or noise level).
    #[arg(long)]
    value: f64,
    /// Directory for model, target, ground truth and truth.json.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    points: Option<usize>,
}

#[derive(Args)]
struct ExperimentArgs {
    spec: PathBuf,
    /// Per-trial CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    a: PathBuf,
    b: PathBuf,
    /// Average squared distances instead.
    #[arg(long)]
    squared: bool,
}

#[derive(Args)]
struct InterpolateArgs {
    #[arg(long, num_args = 1.., required = true)]
    transforms: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true, allow_negative_numbers = true)]
    alphas: Vec<f64>,
    /// Blended transform JSON; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Shape to warp with the blend.
    #[arg(long, requires = "out_points")]
    apply: Option<PathBuf>,
    #[arg(long)]
    out_points: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for bad input, 3 for failures while running.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<dirreg::Error>()) {
        Some(d) if !d.is_validation() => 3,
        Some(_) => 2,
        None if e.chain().any(|c| c.is::<std::io::Error>()) => 3,
        None => 2,
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("DIRREG_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("DIRREG_THREADS must be a positive integer, got '{v}'"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Register(a) => register(a),
        Command::Normals(a) => estimate_normals(a),
        Command::Generate(a) => generate(a),
        Command::Experiment(a) => experiment(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Interpolate(a) => interpolate(a),
    }
}

fn read_shape(path: &Path, curve: CurveFlags) -> anyhow::Result<OrientedPointSet> {
    io::read_shape(path, curve.connectivity()).with_context(|| format!("reading {}", path.display()))
}

/// Normals for shapes that lack them: splines for curves, face averages for
/// meshes, otherwise the configured (default k-NN) fit.
fn ensure_normals(shape: OrientedPointSet, cfg: Option<&NormalEstimatorConfig>) -> dirreg::Result<OrientedPointSet> {
    if shape.normals().is_some() {
        return Ok(shape);
    }
    let cfg = match (cfg, shape.connectivity()) {
        (Some(c), _) => c.clone(),
        (None, Some(Connectivity::Polyline { .. })) => NormalEstimatorConfig::with_method(NormalMethod::Spline2d),
        (None, Some(Connectivity::Faces(_))) => NormalEstimatorConfig::with_method(NormalMethod::MeshFaceAvg),
        (None, None) => NormalEstimatorConfig::default(),
    };
    normals::with_estimated_normals(&shape, &cfg)
}

fn register(a: RegisterArgs) -> anyhow::Result<()> {
    let mut cfg: RunConfig = match &a.config {
        Some(p) => io::read_json(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(c) = a.cost {
        cfg.cost = c.into();
    }
    if let Some(t) = a.transform {
        cfg.transform = Some(t.into());
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.correspondences && cfg.correspondences.is_none() {
        cfg.correspondences = Some(CorrespondenceOptions::default());
    }
    if a.dump_correspondences.is_some() && cfg.correspondences.is_none() {
        bail!(dirreg::Error::InvalidConfig(
            "--dump-correspondences needs --correspondences or a config that enables them".into()
        ));
    }
    let mut model = read_shape(&a.model, a.curve)?;
    let mut target = read_shape(&a.target, a.curve)?;
    if model.dim() != target.dim() {
        bail!(dirreg::Error::DimensionError {
            expected: model.dim(),
            found: target.dim(),
        });
    }
    let opts = cfg.register_options(model.dim())?;
    if opts.cost.uses_normals() || opts.transform == TransformFamily::Tps {
        model = ensure_normals(model, cfg.normals.as_ref())?;
        target = ensure_normals(target, cfg.normals.as_ref())?;
    }
    let report = optimize::register(&model, &target, &opts)?;
    let transform_json = serde_json::to_string_pretty(&report.transform)?;
    match &a.out_transform {
        Some(p) => io::write_json(p, &report.transform)?,
        None => println!("{transform_json}"),
    }
    if let Some(p) = &a.out_points {
        io::write_shape(p, &report.transform.apply(&model, &NormalMode::Jacobian)?)?;
    }
    if let Some(p) = &a.report {
        io::write_json(p, &report)?;
    }
    if let (Some(p), Some(c)) = (&a.dump_correspondences, &report.correspondences) {
        c.save_csv(p)?;
    }
    eprintln!(
        "cost {} final {:.6e} after {} stages, {} evaluations",
        report.cost,
        report.final_cost,
        report.stages.len(),
        report.evals
    );
    Ok(())
}

fn estimate_normals(a: NormalsArgs) -> anyhow::Result<()> {
    let shape = read_shape(&a.input, a.curve)?;
    let method = match a.method {
        MethodArg::Spline => NormalMethod::Spline2d,
        MethodArg::Mesh => NormalMethod::MeshFaceAvg,
        MethodArg::Knn => NormalMethod::KnnPca,
    };
    let cfg = NormalEstimatorConfig {
        method,
        k_neighbors: a.k,
        flip: a.flip,
        ..NormalEstimatorConfig::default()
    };
    let out = normals::with_estimated_normals(&shape.without_normals(), &cfg)?;
    io::write_shape(&a.output, &out)?;
    Ok(())
}

fn generate(a: GenerateArgs) -> anyhow::Result<()> {
    let scenario: Scenario = a.scenario.parse()?;
    let mut spec = ExperimentSpec::new(scenario);
    spec.seed = a.seed;
    spec.n_points = a.points;
    spec.sweep = vec![a.value];
    spec.validate()?;
    let trial = harness::make_trial(&spec, a.value, a.seed)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let ext = if scenario.dim() == 2 { "csv" } else { "ply" };
    io::write_shape(&a.out_dir.join(format!("model.{ext}")), &trial.model)?;
    io::write_shape(&a.out_dir.join(format!("target.{ext}")), &trial.target)?;
    let gt = OrientedPointSet::new(trial.model.dim(), trial.ground_truth.clone())?;
    io::write_shape(&a.out_dir.join(format!("ground_truth.{ext}")), &gt)?;
    io::write_json(&a.out_dir.join("truth.json"), &trial.truth)?;
    Ok(())
}

fn experiment(a: ExperimentArgs) -> anyhow::Result<()> {
    let mut spec: ExperimentSpec =
        io::read_json(&a.spec).with_context(|| format!("reading spec {}", a.spec.display()))?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let result = harness::run_experiment(&spec)?;
    match &a.out {
        Some(p) => result.write_csv(std::fs::File::create(p)?)?,
        None => result.write_csv(std::io::stdout().lock())?,
    }
    if let Some(p) = &a.summary {
        std::fs::write(p, result.summary_json()? + "\n")?;
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let x = read_shape(
        &a.a,
        CurveFlags {
            closed: false,
            open: false,
        },
    )?;
    let y = read_shape(
        &a.b,
        CurveFlags {
            closed: false,
            open: false,
        },
    )?;
    println!("{}", harness::mean_error(x.points(), y.points(), a.squared)?);
    Ok(())
}

fn interpolate(a: InterpolateArgs) -> anyhow::Result<()> {
    let ts: Vec<Transform> = a
        .transforms
        .iter()
        .map(|p| io::read_json(p).with_context(|| format!("reading transform {}", p.display())))
        .collect::<anyhow::Result<_>>()?;
    let blend = transforms::interpolate(&ts, &a.alphas)?;
    match &a.out {
        Some(p) => io::write_json(p, &blend)?,
        None => println!("{}", serde_json::to_string_pretty(&blend)?),
    }
    if let (Some(src), Some(dst)) = (&a.apply, &a.out_points) {
        let shape = read_shape(
            src,
            CurveFlags {
                closed: false,
                open: false,
            },
        )?;
        io::write_shape(dst, &blend.apply(&shape, &NormalMode::Jacobian)?)?;
    }
    Ok(())
}
