//! The five subcommands: single registrations, the square toy protocol,
//! the tree disturbance ablation, the rotation-translation ambiguity
//! sweep, and scene generation.
//!
//! Every command is a plain function over its argument struct so the
//! protocols are callable from tests without spawning the binary.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use cfpnp::dynaweight::{dynaweight_register, AlternationConfig};
use cfpnp::metrics::{median, pose_difference, projection_residual, MetricsReport, ResidualReference};
use cfpnp::objectives::{KernelConfig, LossKind};
use cfpnp::solvers::{
    dticp_register, irls_register, rotation_only_register, RegistrationResult, SolverConfig,
    Termination, TraceRecord,
};
use cfpnp::spatial::build_index;
use cfpnp::synthlab::{
    ambiguity_demo, ambiguity_square, default_camera, make_square_scene, make_tree_scene,
    perturb_pose, perturb_pose_pixel_ball, prune_branches, scene_depth_ratio, DisturbanceSpec,
    SyntheticScene,
};
use cfpnp::{CameraIntrinsics, PointSet2D, PointSet3D, Pose};

use crate::pointio;
use crate::report::{write_csv, write_json, write_trace_csv, PoseReport};
use crate::{CliError, CliResult};

/// Registration backend selectable on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverChoice {
    /// Closest-point baseline, squared loss.
    #[value(alias = "dticp_squared")]
    DticpSquared,
    /// Closest-point baseline, Huber loss.
    #[value(alias = "dticp_huber")]
    DticpHuber,
    /// Kernel objective minimized by reweighted least squares.
    #[value(alias = "rkhs_irls", alias = "rkhs")]
    RkhsIrls,
    /// Kernel objective restricted to rotation.
    #[value(alias = "rotation_only")]
    RotationOnly,
    /// Alternating full-set / subset search.
    Dynaweight,
}

impl SolverChoice {
    pub fn token(self) -> &'static str {
        match self {
            SolverChoice::DticpSquared => "dticp-squared",
            SolverChoice::DticpHuber => "dticp-huber",
            SolverChoice::RkhsIrls => "rkhs-irls",
            SolverChoice::RotationOnly => "rotation-only",
            SolverChoice::Dynaweight => "dynaweight",
        }
    }
}

impl fmt::Display for SolverChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Tuning knobs shared by every command that solves.
#[derive(Debug, Clone, Args)]
pub struct SolverOpts {
    /// Initial-pose penalty weight.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,

    /// Lower clamp on the kernel width, pixels.
    #[arg(long, default_value_t = 0.5)]
    pub ell_floor: f64,

    /// Iterations between kernel width halvings.
    #[arg(long, default_value_t = 5)]
    pub shrink_period: usize,

    /// Median error threshold ending the alternating search, pixels.
    #[arg(long, default_value_t = 2.0)]
    pub xi: f64,

    /// Cap on outer iterations per solve.
    #[arg(long, default_value_t = 50)]
    pub max_iterations: usize,

    /// Keep all trials on the calling thread. They already run
    /// sequentially; the flag is recorded so timing runs are auditable.
    #[arg(long)]
    pub single_thread: bool,
}

impl Default for SolverOpts {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            ell_floor: 0.5,
            shrink_period: 5,
            xi: 2.0,
            max_iterations: 50,
            single_thread: false,
        }
    }
}

impl SolverOpts {
    pub fn kernel_config(&self) -> KernelConfig {
        KernelConfig {
            lambda: self.lambda,
            ell_floor: self.ell_floor,
            shrink_period: self.shrink_period,
            ..KernelConfig::default()
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig { max_outer_iterations: self.max_iterations, ..SolverConfig::default() }
    }

    pub fn alternation_config(&self) -> AlternationConfig {
        AlternationConfig { tre_threshold: self.xi, ..AlternationConfig::default() }
    }
}

/// Resolved configuration echoed into every output file.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub seed: u64,
    pub kernel: KernelConfig,
    pub optimizer: SolverConfig,
    pub alternation: AlternationConfig,
    pub single_thread: bool,
}

impl ConfigEcho {
    fn new(seed: u64, opts: &SolverOpts) -> Self {
        Self {
            seed,
            kernel: opts.kernel_config(),
            optimizer: opts.solver_config(),
            alternation: opts.alternation_config(),
            single_thread: opts.single_thread,
        }
    }

    /// Flat `key=value` lines for CSV reproducibility headers.
    fn csv_lines(&self, command: &str, extras: &[(&str, String)]) -> Vec<String> {
        let mut lines = vec![
            format!("command={command}"),
            format!("seed={}", self.seed),
            format!("lambda={}", self.kernel.lambda),
            format!("ell_floor={}", self.kernel.ell_floor),
            format!("shrink_period={}", self.kernel.shrink_period),
            format!("max_iterations={}", self.optimizer.max_outer_iterations),
            format!("xi={}", self.alternation.tre_threshold),
            format!("single_thread={}", self.single_thread),
        ];
        for (k, v) in extras {
            lines.push(format!("{k}={v}"));
        }
        lines
    }
}

/// What one solve produced, with the solver kind erased.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub pose: Pose,
    pub termination: Termination,
    pub iterations: usize,
    pub trace: Vec<TraceRecord>,
    pub alternations: Option<usize>,
    pub tre_history: Option<Vec<f64>>,
    pub wall_time_ms: f64,
}

impl From<RegistrationResult> for RunOutcome {
    fn from(r: RegistrationResult) -> Self {
        Self {
            pose: r.pose,
            termination: r.termination,
            iterations: r.iterations,
            trace: r.trace,
            alternations: None,
            tre_history: None,
            wall_time_ms: r.wall_time_ms,
        }
    }
}

/// Runs one registration with the chosen backend.
pub fn run_solver(
    choice: SolverChoice,
    src: &PointSet3D,
    targets: &PointSet2D,
    cam: &CameraIntrinsics,
    t0: &Pose,
    opts: &SolverOpts,
) -> cfpnp::Result<RunOutcome> {
    let kcfg = opts.kernel_config();
    let scfg = opts.solver_config();
    match choice {
        SolverChoice::DticpSquared => {
            dticp_register(src, targets, cam, t0, LossKind::Squared, &scfg).map(Into::into)
        }
        SolverChoice::DticpHuber => {
            dticp_register(src, targets, cam, t0, LossKind::default_huber(), &scfg).map(Into::into)
        }
        SolverChoice::RkhsIrls => irls_register(src, targets, cam, t0, &kcfg, &scfg).map(Into::into),
        SolverChoice::RotationOnly => {
            rotation_only_register(src, targets, cam, t0, &kcfg, &scfg).map(Into::into)
        }
        SolverChoice::Dynaweight => {
            let r = dynaweight_register(
                src,
                targets,
                cam,
                t0,
                &kcfg,
                &scfg,
                &opts.alternation_config(),
            )?;
            Ok(RunOutcome {
                pose: r.pose,
                termination: if r.converged {
                    Termination::Converged
                } else {
                    Termination::MaxIterations
                },
                iterations: r.alternations,
                trace: Vec::new(),
                alternations: Some(r.alternations),
                tre_history: Some(r.tre_history),
                wall_time_ms: r.wall_time_ms,
            })
        }
    }
}

/// Splitmix-style seed derivation so each (stream, item) pair gets an
/// independent deterministic generator.
pub fn derive_seed(seed: u64, stream: u64, item: u64) -> u64 {
    let mut x = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ item.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Median known-pair error and projection residual RMSE at a pose.
///
/// Uses the recorded source-target pairing when the targets are a full
/// aligned projection of the sources; falls back to closest-point pairing
/// for pruned scenes.
fn scene_metrics(scene: &SyntheticScene, pose: &Pose) -> cfpnp::Result<(f64, f64)> {
    let aligned = scene.targets.len() == scene.source.len()
        && scene.target_source_indices.iter().enumerate().all(|(i, &j)| i == j);
    let res = if aligned {
        projection_residual(
            &scene.source,
            pose,
            &scene.camera,
            &ResidualReference::Known(&scene.targets),
        )?
    } else {
        let index = build_index(&scene.targets)?;
        projection_residual(&scene.source, pose, &scene.camera, &ResidualReference::Closest(&index))?
    };
    Ok((median(&res.per_point)?, res.rmse))
}

/// One disturbance trial of one solver.
#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    /// Failure message; the numeric fields are infinite when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub median_tre: f64,
    pub angle_deg: f64,
    pub dist: f64,
    pub projection_residual: f64,
}

fn run_trial(
    trial: usize,
    choice: SolverChoice,
    scene: &SyntheticScene,
    t0: &Pose,
    opts: &SolverOpts,
) -> TrialRecord {
    let attempt = run_solver(choice, &scene.source, &scene.targets, &scene.camera, t0, opts)
        .and_then(|out| {
            let (angle, dist) = pose_difference(&out.pose, &scene.ground_truth);
            let (tre, pr) = scene_metrics(scene, &out.pose)?;
            Ok(TrialRecord {
                trial,
                error: None,
                median_tre: tre,
                angle_deg: angle,
                dist,
                projection_residual: pr,
            })
        });
    attempt.unwrap_or_else(|e| TrialRecord {
        trial,
        error: Some(e.to_string()),
        median_tre: f64::INFINITY,
        angle_deg: f64::INFINITY,
        dist: f64::INFINITY,
        projection_residual: f64::INFINITY,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Aggregate of one solver over all trials at one protocol setting.
#[derive(Debug, Clone, Serialize)]
pub struct SolverSummary {
    pub solver: SolverChoice,
    pub mean_tre: f64,
    pub median_tre: f64,
    pub mean_angle_deg: f64,
    pub mean_dist: f64,
    /// Fraction of trials whose projection residual exceeds the threshold.
    pub gfr: f64,
    pub trials: Vec<TrialRecord>,
}

fn summarize(choice: SolverChoice, trials: Vec<TrialRecord>, gfr_threshold: f64) -> SolverSummary {
    let failures = trials.iter().filter(|t| t.error.is_some()).count();
    let gfr = (failures
        + trials
            .iter()
            .filter(|t| t.error.is_none() && t.projection_residual > gfr_threshold)
            .count()) as f64
        / trials.len().max(1) as f64;
    let mut tres: Vec<f64> = trials.iter().map(|t| t.median_tre).collect();
    tres.sort_by(f64::total_cmp);
    let median_tre = if tres.is_empty() {
        f64::NAN
    } else if tres.len() % 2 == 1 {
        tres[tres.len() / 2]
    } else {
        0.5 * (tres[tres.len() / 2 - 1] + tres[tres.len() / 2])
    };
    SolverSummary {
        solver: choice,
        mean_tre: mean(trials.iter().map(|t| t.median_tre)),
        median_tre,
        mean_angle_deg: mean(trials.iter().map(|t| t.angle_deg)),
        mean_dist: mean(trials.iter().map(|t| t.dist)),
        gfr,
        trials,
    }
}

fn ensure_out_dir(dir: &PathBuf) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::io_err(dir, e))
}

// ---------------------------------------------------------------------------
// register

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// 3D source point file.
    #[arg(long, required_unless_present = "scene", conflicts_with = "scene")]
    pub source: Option<PathBuf>,

    /// 2D target point file.
    #[arg(long, required_unless_present = "scene", conflicts_with = "scene")]
    pub targets: Option<PathBuf>,

    /// Scene JSON from gen-scene; replaces the point files and enables
    /// ground-truth error columns.
    #[arg(long)]
    pub scene: Option<PathBuf>,

    /// Camera intrinsics JSON; the built-in 1024x1024 camera when absent.
    #[arg(long)]
    pub camera: Option<PathBuf>,

    /// Initial pose JSON; identity when absent.
    #[arg(long)]
    pub t0: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = SolverChoice::RkhsIrls)]
    pub solver: SolverChoice,

    /// Recorded in the outputs; register itself draws no randomness.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,

    #[command(flatten)]
    pub opts: SolverOpts,
}

#[derive(Debug, Serialize)]
pub struct RegisterReport {
    pub command: &'static str,
    pub solver: SolverChoice,
    pub config: ConfigEcho,
    pub camera: CameraIntrinsics,
    pub source_points: usize,
    pub target_points: usize,
    pub pose: PoseReport,
    pub termination: Termination,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alternations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tre_history: Option<Vec<f64>>,
    pub metrics: MetricsReport,
}

/// Report plus the process exit code the run should end with.
#[derive(Debug)]
pub struct RegisterRun {
    pub report: RegisterReport,
    pub exit_code: i32,
}

pub fn cmd_register(args: &RegisterArgs) -> CliResult<RegisterRun> {
    ensure_out_dir(&args.out_dir)?;
    let scene = args.scene.as_deref().map(pointio::read_scene).transpose()?;
    let (source, targets, camera) = match &scene {
        Some(s) => (s.source.clone(), s.targets.clone(), s.camera),
        None => {
            let source = pointio::read_points3d(args.source.as_deref().ok_or_else(|| {
                CliError::Usage("--source is required without --scene".to_string())
            })?)?;
            let targets = pointio::read_points2d(args.targets.as_deref().ok_or_else(|| {
                CliError::Usage("--targets is required without --scene".to_string())
            })?)?;
            let camera = match args.camera.as_deref() {
                Some(p) => pointio::read_camera(p)?,
                None => default_camera(),
            };
            (source, targets, camera)
        }
    };
    let t0 = args.t0.as_deref().map(pointio::read_pose).transpose()?.unwrap_or_else(Pose::identity);

    let outcome = run_solver(args.solver, &source, &targets, &camera, &t0, &args.opts)?;
    eprintln!("registration wall time: {:.1} ms", outcome.wall_time_ms);

    let index = build_index(&targets)?;
    let residuals = match &scene {
        Some(s) => {
            let aligned = s.targets.len() == s.source.len()
                && s.target_source_indices.iter().enumerate().all(|(i, &j)| i == j);
            if aligned {
                projection_residual(
                    &source,
                    &outcome.pose,
                    &camera,
                    &ResidualReference::Known(&targets),
                )?
            } else {
                projection_residual(
                    &source,
                    &outcome.pose,
                    &camera,
                    &ResidualReference::Closest(&index),
                )?
            }
        }
        None => {
            projection_residual(&source, &outcome.pose, &camera, &ResidualReference::Closest(&index))?
        }
    };
    let tre = median(&residuals.per_point)?;
    let pose_error = scene.as_ref().map(|s| pose_difference(&outcome.pose, &s.ground_truth));
    let metrics = MetricsReport::new(&residuals, tre, pose_error)?;

    let config = ConfigEcho::new(args.seed, &args.opts);
    let report = RegisterReport {
        command: "register",
        solver: args.solver,
        config,
        camera,
        source_points: source.len(),
        target_points: targets.len(),
        pose: PoseReport::from_pose(&outcome.pose),
        termination: outcome.termination,
        iterations: outcome.iterations,
        alternations: outcome.alternations,
        tre_history: outcome.tre_history.clone(),
        metrics,
    };
    write_json(&args.out_dir.join("result.json"), &report)?;
    let lines = report
        .config
        .csv_lines("register", &[("solver", args.solver.to_string())]);
    write_trace_csv(&args.out_dir.join("trace.csv"), &lines, &outcome.trace)?;

    println!(
        "register solver={} termination={:?} iterations={} median_tre={:.4}",
        args.solver, report.termination, report.iterations, report.metrics.median_tre
    );
    let exit_code = if report.termination == Termination::Degenerate { 2 } else { 0 };
    Ok(RegisterRun { report, exit_code })
}

// ---------------------------------------------------------------------------
// toymodel

#[derive(Debug, Args)]
pub struct ToymodelArgs {
    /// Square perimeter point counts, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [8usize, 44, 84, 124, 164])]
    pub counts: Vec<usize>,

    #[arg(long, default_value_t = 10)]
    pub trials: usize,

    /// Start-pose disturbance radius, in tenths of a scene unit of
    /// end-point motion at the mean scene depth.
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,

    #[arg(long, default_value_t = 7)]
    pub seed: u64,

    /// Gross-failure threshold on the projection residual, pixels.
    #[arg(long, default_value_t = 5.0)]
    pub gfr_threshold: f64,

    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,

    #[command(flatten)]
    pub opts: SolverOpts,
}

impl Default for ToymodelArgs {
    fn default() -> Self {
        Self {
            counts: vec![8, 44, 84, 124, 164],
            trials: 10,
            radius: 1.0,
            seed: 7,
            gfr_threshold: 5.0,
            out_dir: PathBuf::from("."),
            opts: SolverOpts::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ToymodelRow {
    pub points: usize,
    #[serde(flatten)]
    pub summary: SolverSummary,
}

#[derive(Debug, Serialize)]
pub struct ToymodelReport {
    pub command: &'static str,
    pub config: ConfigEcho,
    pub counts: Vec<usize>,
    pub trials: usize,
    pub radius: f64,
    pub gfr_threshold: f64,
    pub rows: Vec<ToymodelRow>,
}

/// Square-scene protocol: for each point count, both the closest-point
/// baseline and the kernel solver start from the same disturbed poses.
pub fn cmd_toymodel(args: &ToymodelArgs) -> CliResult<ToymodelReport> {
    if args.trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".to_string()));
    }
    if !(args.radius >= 0.0) {
        return Err(CliError::Usage("--radius must be nonnegative".to_string()));
    }
    ensure_out_dir(&args.out_dir)?;
    let solvers = [SolverChoice::DticpSquared, SolverChoice::RkhsIrls];
    let mut rows = Vec::new();
    for &count in &args.counts {
        let scene = make_square_scene(count)?;
        // One stream per count: rerunning a single count reproduces the
        // same disturbances as the full sweep.
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(args.seed, 1, count as u64));
        let depth = scene
            .source
            .points
            .iter()
            .map(|p| scene.ground_truth.transform(p).z)
            .sum::<f64>()
            / scene.source.len() as f64;
        // Radius unit: a tenth of a scene unit of end-point motion at the
        // mean depth, converted to its pixel footprint. Unit radius stays
        // below the sparse-count pairing gaps while crossing the dense ones.
        let f = 0.5 * (scene.camera.fx + scene.camera.fy);
        let radius_px = args.radius * 0.1 * f / depth;
        let starts: Vec<Pose> = (0..args.trials)
            .map(|_| {
                perturb_pose_pixel_ball(&scene.ground_truth, radius_px, depth, &scene.camera, &mut rng)
            })
            .collect();
        for &solver in &solvers {
            let trials: Vec<TrialRecord> = starts
                .iter()
                .enumerate()
                .map(|(i, t0)| run_trial(i, solver, &scene, t0, &args.opts))
                .collect();
            let summary = summarize(solver, trials, args.gfr_threshold);
            println!(
                "toymodel points={count} solver={} tre={:.4} angle={:.4} dist={:.4} gfr={:.2}",
                summary.solver, summary.mean_tre, summary.mean_angle_deg, summary.mean_dist,
                summary.gfr
            );
            rows.push(ToymodelRow { points: count, summary });
        }
    }

    let config = ConfigEcho::new(args.seed, &args.opts);
    let report = ToymodelReport {
        command: "toymodel",
        config,
        counts: args.counts.clone(),
        trials: args.trials,
        radius: args.radius,
        gfr_threshold: args.gfr_threshold,
        rows,
    };
    write_json(&args.out_dir.join("toymodel.json"), &report)?;
    let lines = report.config.csv_lines(
        "toymodel",
        &[
            ("trials", args.trials.to_string()),
            ("radius", args.radius.to_string()),
            ("gfr_threshold", args.gfr_threshold.to_string()),
        ],
    );
    let columns =
        ["points", "solver", "mean_tre", "median_tre", "mean_angle_deg", "mean_dist", "gfr"];
    let csv_rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.points.to_string(),
                r.summary.solver.to_string(),
                r.summary.mean_tre.to_string(),
                r.summary.median_tre.to_string(),
                r.summary.mean_angle_deg.to_string(),
                r.summary.mean_dist.to_string(),
                r.summary.gfr.to_string(),
            ]
        })
        .collect();
    write_csv(&args.out_dir.join("toymodel.csv"), &lines, &columns, &csv_rows)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// ablation

#[derive(Debug, Args)]
pub struct AblationArgs {
    /// Disturbance levels as sigma_translation:sigma_rotation_deg pairs.
    #[arg(long, value_delimiter = ',', default_values_t = ["5:2".to_string(), "8:3".to_string(), "10:5".to_string()])]
    pub levels: Vec<String>,

    #[arg(long, default_value_t = 20)]
    pub trials: usize,

    /// Leaf count of each generated tree scene.
    #[arg(long, default_value_t = 8)]
    pub branches: usize,

    /// Near edge of the tree depth band, scene units.
    #[arg(long, default_value_t = 500.0)]
    pub depth_min: f64,

    /// Far edge of the tree depth band, scene units.
    #[arg(long, default_value_t = 800.0)]
    pub depth_max: f64,

    /// Leaf branches removed from the 2D targets of every trial scene.
    #[arg(long, default_value_t = 0)]
    pub prune_leaves: usize,

    #[arg(long, default_value_t = 7)]
    pub seed: u64,

    /// Gross-failure threshold on the projection residual, pixels.
    #[arg(long, default_value_t = 5.0)]
    pub gfr_threshold: f64,

    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,

    #[command(flatten)]
    pub opts: SolverOpts,
}

impl Default for AblationArgs {
    fn default() -> Self {
        Self {
            levels: vec!["5:2".to_string(), "8:3".to_string(), "10:5".to_string()],
            trials: 20,
            branches: 8,
            depth_min: 500.0,
            depth_max: 800.0,
            prune_leaves: 0,
            seed: 7,
            gfr_threshold: 5.0,
            out_dir: PathBuf::from("."),
            opts: SolverOpts::default(),
        }
    }
}

fn parse_level(text: &str) -> CliResult<DisturbanceSpec> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 2 {
        return Err(CliError::Usage(format!(
            "level {text:?} must be sigma_translation:sigma_rotation_deg"
        )));
    }
    let sigma_translation = parts[0]
        .trim()
        .parse::<f64>()
        .map_err(|_| CliError::Usage(format!("bad translation sigma in {text:?}")))?;
    let sigma_rotation_deg = parts[1]
        .trim()
        .parse::<f64>()
        .map_err(|_| CliError::Usage(format!("bad rotation sigma in {text:?}")))?;
    if sigma_translation < 0.0 || sigma_rotation_deg < 0.0 {
        return Err(CliError::Usage(format!("sigmas must be nonnegative in {text:?}")));
    }
    Ok(DisturbanceSpec { sigma_translation, sigma_rotation_deg })
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub sigma_translation: f64,
    pub sigma_rotation_deg: f64,
    #[serde(flatten)]
    pub summary: SolverSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct SceneSummary {
    pub trial: usize,
    pub scene_seed: u64,
    pub source_points: usize,
    pub target_points: usize,
    pub pruned_segments: usize,
}

#[derive(Debug, Serialize)]
pub struct AblationReport {
    pub command: &'static str,
    pub config: ConfigEcho,
    pub levels: Vec<DisturbanceSpec>,
    pub trials: usize,
    pub branches: usize,
    pub depth_range: (f64, f64),
    pub prune_leaves: usize,
    pub gfr_threshold: f64,
    pub scenes: Vec<SceneSummary>,
    pub rows: Vec<AblationRow>,
}

/// Tree-scene protocol: the plain kernel solver against the alternating
/// one, over Gaussian disturbance levels, on per-trial random trees.
pub fn cmd_ablation(args: &AblationArgs) -> CliResult<AblationReport> {
    if args.trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".to_string()));
    }
    ensure_out_dir(&args.out_dir)?;
    let levels: Vec<DisturbanceSpec> =
        args.levels.iter().map(|t| parse_level(t)).collect::<CliResult<_>>()?;

    // Trees are shared across levels and solvers so comparisons pair up.
    let mut scenes = Vec::with_capacity(args.trials);
    let mut scene_rows = Vec::with_capacity(args.trials);
    for trial in 0..args.trials {
        let scene_seed = derive_seed(args.seed, 2, trial as u64);
        let mut scene = make_tree_scene(args.branches, (args.depth_min, args.depth_max), scene_seed)?;
        if args.prune_leaves > 0 {
            scene = prune_branches(&scene, args.prune_leaves, derive_seed(args.seed, 3, trial as u64))?;
            eprintln!(
                "trial {trial}: kept {} of {} targets after pruning",
                scene.targets.len(),
                scene.source.len()
            );
        }
        scene_rows.push(SceneSummary {
            trial,
            scene_seed,
            source_points: scene.source.len(),
            target_points: scene.targets.len(),
            pruned_segments: scene.pruned_segments.len(),
        });
        scenes.push(scene);
    }

    let solvers = [SolverChoice::RkhsIrls, SolverChoice::Dynaweight];
    let mut rows = Vec::new();
    for (li, level) in levels.iter().enumerate() {
        let starts: Vec<Pose> = scenes
            .iter()
            .enumerate()
            .map(|(trial, scene)| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    args.seed,
                    100 + li as u64,
                    trial as u64,
                ));
                perturb_pose(&scene.ground_truth, level, &mut rng)
            })
            .collect();
        for &solver in &solvers {
            let trials: Vec<TrialRecord> = scenes
                .iter()
                .zip(&starts)
                .enumerate()
                .map(|(trial, (scene, t0))| run_trial(trial, solver, scene, t0, &args.opts))
                .collect();
            let summary = summarize(solver, trials, args.gfr_threshold);
            println!(
                "ablation level={}:{} solver={} tre={:.4} angle={:.4} dist={:.4} gfr={:.2}",
                level.sigma_translation,
                level.sigma_rotation_deg,
                summary.solver,
                summary.mean_tre,
                summary.mean_angle_deg,
                summary.mean_dist,
                summary.gfr
            );
            rows.push(AblationRow {
                sigma_translation: level.sigma_translation,
                sigma_rotation_deg: level.sigma_rotation_deg,
                summary,
            });
        }
    }

    let config = ConfigEcho::new(args.seed, &args.opts);
    let report = AblationReport {
        command: "ablation",
        config,
        levels,
        trials: args.trials,
        branches: args.branches,
        depth_range: (args.depth_min, args.depth_max),
        prune_leaves: args.prune_leaves,
        gfr_threshold: args.gfr_threshold,
        scenes: scene_rows,
        rows,
    };
    write_json(&args.out_dir.join("ablation.json"), &report)?;
    let lines = report.config.csv_lines(
        "ablation",
        &[
            ("trials", args.trials.to_string()),
            ("branches", args.branches.to_string()),
            ("depth_range", format!("{}..{}", args.depth_min, args.depth_max)),
            ("prune_leaves", args.prune_leaves.to_string()),
            ("gfr_threshold", args.gfr_threshold.to_string()),
        ],
    );
    let columns = [
        "sigma_translation",
        "sigma_rotation_deg",
        "solver",
        "mean_tre",
        "median_tre",
        "mean_angle_deg",
        "mean_dist",
        "gfr",
    ];
    let csv_rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.sigma_translation.to_string(),
                r.sigma_rotation_deg.to_string(),
                r.summary.solver.to_string(),
                r.summary.mean_tre.to_string(),
                r.summary.median_tre.to_string(),
                r.summary.mean_angle_deg.to_string(),
                r.summary.mean_dist.to_string(),
                r.summary.gfr.to_string(),
            ]
        })
        .collect();
    write_csv(&args.out_dir.join("ablation.csv"), &lines, &columns, &csv_rows)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// ambiguity

#[derive(Debug, Args)]
pub struct AmbiguityArgs {
    /// Depth ratios to sweep, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [5.0, 4.0, 3.0, 2.0, 1.5])]
    pub ratios: Vec<f64>,

    /// Probe translation x component.
    #[arg(long, default_value_t = 0.5)]
    pub tx: f64,

    /// Probe translation y component.
    #[arg(long, default_value_t = 0.0)]
    pub ty: f64,

    /// Probe translation z component.
    #[arg(long, default_value_t = 0.0)]
    pub tz: f64,

    /// Points along the probe square perimeter.
    #[arg(long, default_value_t = 16)]
    pub points: usize,

    /// Recorded in the outputs; the sweep is deterministic.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,

    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

impl Default for AmbiguityArgs {
    fn default() -> Self {
        Self {
            ratios: vec![5.0, 4.0, 3.0, 2.0, 1.5],
            tx: 0.5,
            ty: 0.0,
            tz: 0.0,
            points: 16,
            seed: 7,
            out_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AmbiguityRow {
    pub depth_ratio: f64,
    /// Violated-precondition message; the numeric fields are absent then.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub actual_depth_ratio: Option<f64>,
    pub mean_ratio: Option<f64>,
    pub max_ratio: Option<f64>,
    pub roll: Option<f64>,
    pub mean_displacement: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct AmbiguitySweep {
    pub command: &'static str,
    pub seed: u64,
    pub translation: [f64; 3],
    pub points: usize,
    pub rows: Vec<AmbiguityRow>,
}

/// How closely per-point rotations mimic a translated view, swept over
/// scene depth ratios. Rows whose ratio violates the analysis
/// precondition are reported and skipped rather than aborting the sweep.
pub fn cmd_ambiguity(args: &AmbiguityArgs) -> CliResult<AmbiguitySweep> {
    ensure_out_dir(&args.out_dir)?;
    let cam = default_camera();
    let t = Vector3::new(args.tx, args.ty, args.tz);
    let mut rows = Vec::new();
    for &ratio in &args.ratios {
        let row = match ambiguity_square(ratio, args.points)
            .and_then(|points| ambiguity_demo(&points, &t, &cam).map(|r| (points, r)))
        {
            Ok((points, report)) => {
                let max_ratio =
                    report.ratio.iter().fold(0.0f64, |a, &b| a.max(b));
                AmbiguityRow {
                    depth_ratio: ratio,
                    error: None,
                    actual_depth_ratio: Some(scene_depth_ratio(&points)),
                    mean_ratio: Some(report.mean_ratio),
                    max_ratio: Some(max_ratio),
                    roll: Some(report.roll),
                    mean_displacement: Some(mean(report.displacement.iter().copied())),
                }
            }
            Err(e) => AmbiguityRow {
                depth_ratio: ratio,
                error: Some(e.to_string()),
                actual_depth_ratio: None,
                mean_ratio: None,
                max_ratio: None,
                roll: None,
                mean_displacement: None,
            },
        };
        match &row.error {
            None => println!(
                "ambiguity ratio={} mean_ratio={:.4} roll={:.5}",
                ratio,
                row.mean_ratio.unwrap(),
                row.roll.unwrap()
            ),
            Some(e) => println!("ambiguity ratio={ratio} skipped: {e}"),
        }
        rows.push(row);
    }

    let sweep = AmbiguitySweep {
        command: "ambiguity",
        seed: args.seed,
        translation: [args.tx, args.ty, args.tz],
        points: args.points,
        rows,
    };
    write_json(&args.out_dir.join("ambiguity.json"), &sweep)?;
    let lines = vec![
        "command=ambiguity".to_string(),
        format!("seed={}", args.seed),
        format!("translation={},{},{}", args.tx, args.ty, args.tz),
        format!("points={}", args.points),
    ];
    let columns =
        ["depth_ratio", "mean_ratio", "max_ratio", "roll", "mean_displacement", "error"];
    let csv_rows: Vec<Vec<String>> = sweep
        .rows
        .iter()
        .map(|r| {
            vec![
                r.depth_ratio.to_string(),
                r.mean_ratio.map(|v| v.to_string()).unwrap_or_default(),
                r.max_ratio.map(|v| v.to_string()).unwrap_or_default(),
                r.roll.map(|v| v.to_string()).unwrap_or_default(),
                r.mean_displacement.map(|v| v.to_string()).unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(&args.out_dir.join("ambiguity.csv"), &lines, &columns, &csv_rows)?;
    Ok(sweep)
}

// ---------------------------------------------------------------------------
// gen-scene

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SceneKind {
    Square,
    Tree,
}

#[derive(Debug, Args)]
pub struct GenSceneArgs {
    #[arg(long, value_enum)]
    pub kind: SceneKind,

    /// Square perimeter point count.
    #[arg(long, default_value_t = 44)]
    pub points: usize,

    /// Leaf count for tree scenes.
    #[arg(long, default_value_t = 8)]
    pub branches: usize,

    #[arg(long, default_value_t = 500.0)]
    pub depth_min: f64,

    #[arg(long, default_value_t = 800.0)]
    pub depth_max: f64,

    /// Leaf branches removed from the 2D targets.
    #[arg(long, default_value_t = 0)]
    pub prune_leaves: usize,

    #[arg(long, default_value_t = 7)]
    pub seed: u64,

    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

/// Generates a scene and writes scene.json plus the two point files.
pub fn cmd_gen_scene(args: &GenSceneArgs) -> CliResult<SyntheticScene> {
    ensure_out_dir(&args.out_dir)?;
    let mut scene = match args.kind {
        SceneKind::Square => make_square_scene(args.points)?,
        SceneKind::Tree => {
            make_tree_scene(args.branches, (args.depth_min, args.depth_max), args.seed)?
        }
    };
    if args.prune_leaves > 0 {
        scene = prune_branches(&scene, args.prune_leaves, derive_seed(args.seed, 3, 0))?;
    }
    write_json(&args.out_dir.join("scene.json"), &scene)?;
    let header = format!(
        "generated scene kind={} seed={}",
        match args.kind {
            SceneKind::Square => "square",
            SceneKind::Tree => "tree",
        },
        args.seed
    );
    pointio::write_points3d(&args.out_dir.join("source.txt"), &scene.source, &header)?;
    pointio::write_points2d(&args.out_dir.join("targets.txt"), &scene.targets, &header)?;
    println!(
        "gen-scene wrote {} source and {} target points to {}",
        scene.source.len(),
        scene.targets.len(),
        args.out_dir.display()
    );
    Ok(scene)
}
