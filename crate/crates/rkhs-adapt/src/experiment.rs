//! Experiment orchestration: config parsing, seeded center selection,
//! diagnostics, estimation, and CSV/JSON artifact emission. Each pipeline
//! stage is runnable standalone on the artifacts of the previous stages, and
//! `run_experiment` is exactly the composition of the stages, so the two
//! paths produce identical files.

use crate::cvt::{self, P2};
use crate::diagnostics;
use crate::dynamics::{
    self, estimate_period, limit_set_samples, simulate, AffineSystem, PiezoParams, Trajectory,
};
use crate::estimator::{
    pointwise_error_grid, run_estimator, EstimationFrame, EstimatorConfig, EstimatorRun, GridSpec,
};
use crate::kernels::{CenterSet, Kernel, KernelKind};
use crate::numerics::{Matrix, Vector};
use crate::som::{self, BetaSchedule, Topology};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const CENTERS_CSV: &str = "centers.csv";
pub const CENTERS_TRACE_CSV: &str = "centers_trace.csv";
pub const ALPHA_HISTORY_CSV: &str = "alpha_history.csv";
pub const ERROR_NORMS_CSV: &str = "error_norms.csv";
pub const ERROR_GRID_CSV: &str = "error_grid.csv";
pub const ERROR_GRID_AXES_CSV: &str = "error_grid_axes.csv";
pub const DIAGNOSTICS_JSON: &str = "diagnostics.json";
pub const MANIFEST_JSON: &str = "manifest.json";

/// Name of the seeded generator recorded in the manifest so alternate
/// implementations can reproduce the random streams.
pub const RNG_NAME: &str = "chacha8";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing input artifact {0}; run the producing stage first")]
    MissingInput(PathBuf),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Dynamics(#[from] dynamics::DynamicsError),
    #[error(transparent)]
    Kernel(#[from] crate::kernels::KernelError),
    #[error(transparent)]
    Estimator(#[from] crate::estimator::EstimatorError),
    #[error(transparent)]
    Geometry(#[from] cvt::CvtError),
    #[error(transparent)]
    Som(#[from] som::SomError),
    #[error(transparent)]
    Diagnostics(#[from] diagnostics::DiagnosticsError),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
}

impl ExperimentError {
    /// 2 for config/input problems, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::MissingInput(_) | Self::Io(_) => 2,
            _ => 3,
        }
    }
}

fn config_err(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Piezo,
    VdpLike,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub kind: SystemKind,
    /// Piezo structural parameters; ignored for other systems.
    #[serde(default = "default_piezo")]
    pub piezo: PiezoSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiezoSection {
    pub modal_mass: f64,
    pub modal_stiffness: f64,
    pub k_n1: f64,
    pub k_n2: f64,
    pub scale: f64,
}

fn default_piezo() -> PiezoSection {
    let p = PiezoParams::reference();
    PiezoSection {
        modal_mass: p.modal_mass,
        modal_stiffness: p.modal_stiffness,
        k_n1: p.k_n1,
        k_n2: p.k_n2,
        scale: p.scale,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Initial condition in the scaled working coordinates.
    pub x0: Vec<f64>,
    pub duration: f64,
    pub dt: f64,
    /// Transient length dropped before limit-set extraction.
    #[serde(default)]
    pub discard: f64,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CenterMethod {
    UniformLimitSet,
    RandomLimitSet,
    Cvt,
    Som,
    ExplicitList,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentersConfig {
    pub method: CenterMethod,
    pub count: usize,
    /// Mandatory whenever the selected method draws random numbers.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Size of the dense uniform set the random method subselects from.
    #[serde(default = "default_dense_count")]
    pub dense_count: usize,
    /// CVT width schedule as (scale_out, scale_in) pairs, widest first.
    #[serde(default = "default_width_schedule")]
    pub width_schedule: Vec<(f64, f64)>,
    /// Number of closed-curve samples handed to the CVT stage.
    #[serde(default = "default_loop_samples")]
    pub loop_samples: usize,
    /// SOM learning rate and the time it switches off.
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub beta_t_off: Option<f64>,
    /// Centers given directly, one row per center.
    #[serde(default)]
    pub explicit: Vec<Vec<f64>>,
}

fn default_dense_count() -> usize {
    48
}

fn default_width_schedule() -> Vec<(f64, f64)> {
    vec![(1.1, 0.9)]
}

fn default_loop_samples() -> usize {
    256
}

fn default_beta() -> f64 {
    0.99
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub length_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    pub gamma: f64,
    /// Scalar broadcast to the initial coefficient vector.
    pub alpha0: f64,
    /// Estimation horizon and step; the simulation stage's values when
    /// omitted. Lets a short sampling run feed a long estimation run.
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    /// Diagonal of the Lyapunov Q; identity when omitted.
    #[serde(default)]
    pub q_diag: Option<Vec<f64>>,
    /// Replacement A_s (row-major rows) when the plant's A is not Hurwitz.
    #[serde(default)]
    pub hurwitz_shift: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub xhat0: Option<Vec<f64>>,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    /// Half-width expansion factor around the limit-set bounding box.
    pub factor: f64,
    /// Number of limit-set samples evaluated alongside the grid.
    pub limit_samples: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { nx: 101, ny: 101, factor: 1.5, limit_samples: 400 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Occupancy ball radius; just under half the minimum separation when
    /// omitted.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Occupancy window length; the estimated orbit period when omitted.
    #[serde(default)]
    pub delta: Option<f64>,
    pub limit_samples: usize,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self { epsilon: None, delta: None, limit_samples: 400 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Artifact directory; overridable by the CLI `--out` flag.
    #[serde(default)]
    pub dir: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub simulation: SimulationConfig,
    pub centers: CentersConfig,
    pub kernel: KernelConfig,
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let sim = &self.simulation;
        if !(sim.dt > 0.0 && sim.duration > 0.0) {
            return Err(config_err("simulation.dt and simulation.duration must be positive"));
        }
        if sim.discard < 0.0 || sim.discard >= sim.duration {
            return Err(config_err("simulation.discard must lie in [0, duration)"));
        }
        if sim.record_stride == 0 || self.estimator.record_stride == 0 {
            return Err(config_err("record_stride must be >= 1"));
        }
        if sim.x0.len() != 2 {
            return Err(config_err("simulation.x0 must have 2 entries"));
        }
        let c = &self.centers;
        if c.count == 0 {
            return Err(config_err("centers.count must be >= 1"));
        }
        let randomized = matches!(c.method, CenterMethod::RandomLimitSet | CenterMethod::Cvt);
        if randomized && c.seed.is_none() {
            return Err(config_err("centers.seed is mandatory for randomized methods"));
        }
        match c.method {
            CenterMethod::RandomLimitSet if c.dense_count < c.count => {
                return Err(config_err("centers.dense_count must be >= centers.count"));
            }
            CenterMethod::Som if c.count >= c.loop_samples => {
                return Err(config_err("SOM requires centers.count < centers.loop_samples"));
            }
            CenterMethod::ExplicitList if c.explicit.is_empty() => {
                return Err(config_err("centers.explicit must be nonempty for explicit-list"));
            }
            _ => {}
        }
        if !(self.estimator.gamma > 0.0) {
            return Err(config_err("estimator.gamma must be positive"));
        }
        if self.estimator.duration.is_some_and(|d| !(d > 0.0))
            || self.estimator.dt.is_some_and(|d| !(d > 0.0))
        {
            return Err(config_err("estimator.duration and estimator.dt must be positive"));
        }
        if !(self.kernel.length_scale > 0.0) {
            return Err(config_err("kernel.length_scale must be positive"));
        }
        if self.grid.nx < 2 || self.grid.ny < 2 {
            return Err(config_err("grid.nx and grid.ny must be >= 2"));
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    let cfg: ExperimentConfig =
        toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn build_system(cfg: &SystemConfig) -> Result<AffineSystem, ExperimentError> {
    match cfg.kind {
        SystemKind::Piezo => {
            let p = &cfg.piezo;
            Ok(dynamics::piezo_system(PiezoParams {
                modal_mass: p.modal_mass,
                modal_stiffness: p.modal_stiffness,
                modal_damping: 0.0,
                input_gain: 0.0,
                k_n1: p.k_n1,
                k_n2: p.k_n2,
                scale: p.scale,
            })?)
        }
        SystemKind::VdpLike => Ok(dynamics::vdp_like_system()),
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

fn require_input(path: &Path) -> Result<(), ExperimentError> {
    if path.exists() {
        Ok(())
    } else {
        Err(ExperimentError::MissingInput(path.to_path_buf()))
    }
}

/// Stage 1: integrate the plant and write trajectory.csv.
pub fn stage_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<(), ExperimentError> {
    let sys = build_system(&cfg.system)?;
    let x0 = Vector::from_vec(cfg.simulation.x0.clone());
    let traj = simulate(&sys, &x0, cfg.simulation.duration, cfg.simulation.dt)?;
    let recorded = record_stride(&traj, cfg.simulation.record_stride)?;
    std::fs::create_dir_all(out)?;
    recorded.write_csv(&out.join(TRAJECTORY_CSV))?;
    Ok(())
}

fn record_stride(traj: &Trajectory, stride: usize) -> Result<Trajectory, ExperimentError> {
    if stride <= 1 {
        return Ok(traj.clone());
    }
    let states: Vec<Vector> = traj.states.iter().step_by(stride).cloned().collect();
    Ok(Trajectory::new(traj.t0, traj.dt * stride as f64, states)?)
}

fn post_discard(traj: &Trajectory, discard: f64) -> Result<Trajectory, ExperimentError> {
    if discard <= 0.0 {
        return Ok(traj.clone());
    }
    let first = ((discard / traj.dt).ceil() as usize).min(traj.len().saturating_sub(2));
    Ok(Trajectory::new(traj.time(first), traj.dt, traj.states[first..].to_vec())?)
}

/// Final full period of the post-discard trajectory: the closed-orbit
/// polyline all limit-set center methods work from.
pub fn closed_orbit(traj: &Trajectory, discard: f64) -> Result<Vec<Vector>, ExperimentError> {
    let tail = post_discard(traj, discard)?;
    let period = estimate_period(&tail)
        .ok_or_else(|| config_err("trajectory shows no oscillation; cannot extract an orbit"))?;
    let n = ((period / tail.dt).round() as usize).clamp(2, tail.len());
    Ok(tail.states[tail.len() - n..].to_vec())
}

/// Equal-arc-length subdivision of a closed polyline into n points.
pub fn uniform_on_loop(loop_pts: &[Vector], n: usize) -> Result<Vec<Vector>, ExperimentError> {
    if loop_pts.len() < 2 || n == 0 {
        return Err(config_err("need at least 2 loop points and n >= 1"));
    }
    let m = loop_pts.len();
    let mut cum = Vec::with_capacity(m + 1);
    cum.push(0.0);
    for i in 0..m {
        let seg = (&loop_pts[(i + 1) % m] - &loop_pts[i]).norm();
        cum.push(cum[i] + seg);
    }
    let total = *cum.last().unwrap();
    if !(total > 0.0) {
        return Err(config_err("loop has zero length"));
    }
    let mut out = Vec::with_capacity(n);
    let mut seg = 0usize;
    for k in 0..n {
        let target = total * k as f64 / n as f64;
        while seg + 1 < m && cum[seg + 1] < target {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let frac = if len > 0.0 { (target - cum[seg]) / len } else { 0.0 };
        let a = &loop_pts[seg];
        let b = &loop_pts[(seg + 1) % m];
        out.push(a + (b - a) * frac);
    }
    Ok(out)
}

fn to_p2(v: &Vector) -> Result<P2, ExperimentError> {
    if v.len() != 2 {
        return Err(config_err("planar center methods require 2-dimensional states"));
    }
    Ok(P2::new(v[0], v[1]))
}

fn from_p2(p: P2) -> Vector {
    Vector::from_vec(vec![p.x, p.y])
}

fn evenly_subsample(pts: &[Vector], max_count: usize) -> Vec<Vector> {
    if pts.len() <= max_count {
        return pts.to_vec();
    }
    (0..max_count)
        .map(|k| pts[(k as f64 * pts.len() as f64 / max_count as f64) as usize].clone())
        .collect()
}

/// One row of the per-iteration center trace for CVT/SOM runs.
struct TraceRow {
    iter: usize,
    center: usize,
    point: P2,
}

/// Stage 2: select centers from trajectory.csv, write centers.csv and, for
/// the iterative methods, centers_trace.csv.
pub fn stage_centers(cfg: &ExperimentConfig, out: &Path) -> Result<(), ExperimentError> {
    let traj_path = out.join(TRAJECTORY_CSV);
    require_input(&traj_path)?;
    let traj = Trajectory::read_csv(&traj_path)?;
    let (centers, trace) = select_centers(cfg, &traj)?;
    write_centers_csv(&out.join(CENTERS_CSV), &centers)?;
    if let Some(rows) = trace {
        let mut text = String::from("iter,center,x1,x2\n");
        for r in rows {
            text.push_str(&format!(
                "{},{},{},{}\n",
                r.iter,
                r.center,
                fmt_f(r.point.x),
                fmt_f(r.point.y)
            ));
        }
        std::fs::write(out.join(CENTERS_TRACE_CSV), text)?;
    }
    Ok(())
}

fn select_centers(
    cfg: &ExperimentConfig,
    traj: &Trajectory,
) -> Result<(Vec<Vector>, Option<Vec<TraceRow>>), ExperimentError> {
    let c = &cfg.centers;
    match c.method {
        CenterMethod::ExplicitList => {
            let centers = c.explicit.iter().map(|row| Vector::from_vec(row.clone())).collect();
            Ok((centers, None))
        }
        CenterMethod::UniformLimitSet => {
            let orbit = closed_orbit(traj, cfg.simulation.discard)?;
            Ok((uniform_on_loop(&orbit, c.count)?, None))
        }
        CenterMethod::RandomLimitSet => {
            let orbit = closed_orbit(traj, cfg.simulation.discard)?;
            let dense = uniform_on_loop(&orbit, c.dense_count)?;
            let seed = c.seed.expect("validated");
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut idx = rand::seq::index::sample(&mut rng, c.dense_count, c.count).into_vec();
            idx.sort_unstable();
            Ok((idx.into_iter().map(|i| dense[i].clone()).collect(), None))
        }
        CenterMethod::Cvt => {
            let orbit = closed_orbit(traj, cfg.simulation.discard)?;
            let samples: Vec<P2> = evenly_subsample(&orbit, c.loop_samples)
                .iter()
                .map(to_p2)
                .collect::<Result<_, _>>()?;
            let opts = cvt::Algorithm1Options {
                seed: c.seed.expect("validated"),
                ..cvt::Algorithm1Options::default()
            };
            let result = cvt::algorithm1(&samples, c.count, &c.width_schedule, opts)?;
            let mut rows = Vec::new();
            for (iter, gens) in result.lloyd.trace.iter().enumerate() {
                for (j, &p) in gens.iter().enumerate() {
                    rows.push(TraceRow { iter, center: j, point: p });
                }
            }
            let centers = result.centers.iter().map(|&p| from_p2(p)).collect();
            Ok((centers, Some(rows)))
        }
        CenterMethod::Som => {
            let tail = post_discard(traj, cfg.simulation.discard)?;
            let samples: Vec<P2> =
                tail.states.iter().map(to_p2).collect::<Result<_, _>>()?;
            let schedule = match c.beta_t_off {
                Some(t_off) => BetaSchedule::new(vec![(t_off, c.beta)], 0.0)?,
                None => BetaSchedule::constant(c.beta)?,
            };
            let result = som::algorithm2(&samples, tail.dt, c.count, Topology::Ring, schedule)?;
            // The trace records the per-sample maximum displacement, thinned
            // to at most 1000 rows; center index is unused for SOM.
            let stride = (result.displacement_trace.len() / 1000).max(1);
            let rows = result
                .displacement_trace
                .iter()
                .enumerate()
                .step_by(stride)
                .map(|(i, &d)| TraceRow { iter: i, center: 0, point: P2::new(d, 0.0) })
                .collect();
            let centers = result.centers.iter().map(|&p| from_p2(p)).collect();
            Ok((centers, Some(rows)))
        }
    }
}

pub fn write_centers_csv(path: &Path, centers: &[Vector]) -> Result<(), ExperimentError> {
    if centers.is_empty() {
        return Err(config_err("no centers to write"));
    }
    let d = centers[0].len();
    let mut text = String::new();
    text.push_str(&(1..=d).map(|i| format!("x{i}")).collect::<Vec<_>>().join(","));
    text.push('\n');
    for c in centers {
        text.push_str(&c.iter().map(|&v| fmt_f(v)).collect::<Vec<_>>().join(","));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_centers_csv(path: &Path) -> Result<Vec<Vector>, ExperimentError> {
    require_input(path)?;
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let _header = lines.next().ok_or_else(|| config_err("empty centers file"))?;
    let mut out = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse()).collect();
        let vals = vals.map_err(|e| config_err(format!("bad centers row: {e}")))?;
        out.push(Vector::from_vec(vals));
    }
    if out.is_empty() {
        return Err(config_err("centers file has no rows"));
    }
    Ok(out)
}

fn build_center_set(
    cfg: &ExperimentConfig,
    centers: Vec<Vector>,
) -> Result<CenterSet, ExperimentError> {
    let kernel = Kernel::new(cfg.kernel.kind, cfg.kernel.length_scale)?;
    Ok(CenterSet::new(kernel, centers)?)
}

/// Stage 3: placement + PE diagnostics from trajectory.csv and centers.csv,
/// written to diagnostics.json.
pub fn stage_diagnose(cfg: &ExperimentConfig, out: &Path) -> Result<(), ExperimentError> {
    let traj = Trajectory::read_csv(&out.join(TRAJECTORY_CSV))
        .map_err(|_| ExperimentError::MissingInput(out.join(TRAJECTORY_CSV)))?;
    let centers = read_centers_csv(&out.join(CENTERS_CSV))?;
    let cs = build_center_set(cfg, centers)?;
    let tail = post_discard(&traj, cfg.simulation.discard)?;
    let epsilon = match cfg.diagnostics.epsilon {
        Some(e) => e,
        None => diagnostics::default_epsilon(cs.centers())
            .map_err(|_| config_err("diagnostics.epsilon required when fewer than 2 centers"))?,
    };
    let delta = match cfg.diagnostics.delta {
        Some(d) => d,
        None => estimate_period(&tail)
            .ok_or_else(|| config_err("diagnostics.delta required for non-oscillatory runs"))?,
    };
    let pe = diagnostics::pe_occupancy(&tail, cs.centers(), epsilon, delta)?;
    let limit =
        limit_set_samples(&traj, cfg.simulation.discard, cfg.diagnostics.limit_samples)?;
    let report = diagnostics::placement_report(&cs, &limit, Some(pe))?;
    std::fs::write(out.join(DIAGNOSTICS_JSON), serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

impl From<serde_json::Error> for ExperimentError {
    fn from(e: serde_json::Error) -> Self {
        config_err(format!("json: {e}"))
    }
}

fn estimator_config(
    cfg: &ExperimentConfig,
    n_centers: usize,
    dim: usize,
) -> Result<EstimatorConfig, ExperimentError> {
    let e = &cfg.estimator;
    let mut out = EstimatorConfig::new(
        e.gamma,
        Vector::from_element(n_centers, e.alpha0),
    );
    if let Some(q) = &e.q_diag {
        if q.len() != dim {
            return Err(config_err("estimator.q_diag length must match the state dimension"));
        }
        out.q = Some(Matrix::from_diagonal(&Vector::from_vec(q.clone())));
    }
    if let Some(rows) = &e.hurwitz_shift {
        if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
            return Err(config_err("estimator.hurwitz_shift must be a square state-dim matrix"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        out.hurwitz_shift = Some(Matrix::from_row_slice(dim, dim, &flat));
    }
    if let Some(xh) = &e.xhat0 {
        if xh.len() != dim {
            return Err(config_err("estimator.xhat0 length must match the state dimension"));
        }
        out.xhat0 = Some(Vector::from_vec(xh.clone()));
    }
    out.record_stride = e.record_stride;
    Ok(out)
}

/// Stage 4: run the coupled estimator from centers.csv; write
/// alpha_history.csv and error_norms.csv.
pub fn stage_estimate(cfg: &ExperimentConfig, out: &Path) -> Result<(), ExperimentError> {
    let run = estimate_run(cfg, out)?;
    write_alpha_history(&out.join(ALPHA_HISTORY_CSV), &run)?;
    write_error_norms(&out.join(ERROR_NORMS_CSV), &run)?;
    Ok(())
}

/// The estimator run for the configured experiment, from the centers.csv
/// artifact. Exposed so callers can inspect the run beyond the CSV artifacts.
pub fn estimate_run(cfg: &ExperimentConfig, out: &Path) -> Result<EstimatorRun, ExperimentError> {
    let centers = read_centers_csv(&out.join(CENTERS_CSV))?;
    let cs = build_center_set(cfg, centers)?;
    let sys = build_system(&cfg.system)?;
    let ecfg = estimator_config(cfg, cs.len(), sys.dim())?;
    let x0 = Vector::from_vec(cfg.simulation.x0.clone());
    let duration = cfg.estimator.duration.unwrap_or(cfg.simulation.duration);
    let dt = cfg.estimator.dt.unwrap_or(cfg.simulation.dt);
    Ok(run_estimator(&sys, &cs, &ecfg, &x0, duration, dt)?)
}

fn write_alpha_history(path: &Path, run: &EstimatorRun) -> Result<(), ExperimentError> {
    let n = run.alpha[0].len();
    let mut text = String::from("t");
    for i in 1..=n {
        text.push_str(&format!(",a{i}"));
    }
    text.push('\n');
    for (i, a) in run.alpha.iter().enumerate() {
        text.push_str(&fmt_f(run.time(i)));
        for v in a.iter() {
            text.push(',');
            text.push_str(&fmt_f(*v));
        }
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn write_error_norms(path: &Path, run: &EstimatorRun) -> Result<(), ExperimentError> {
    let se = run.state_error_norm();
    let ce = run.coefficient_error_norm();
    let mut text = String::from("t,state_error,coefficient_error\n");
    for i in 0..run.len() {
        text.push_str(&format!("{},{},{}\n", fmt_f(run.time(i)), fmt_f(se[i]), fmt_f(ce[i])));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn read_final_alpha(path: &Path) -> Result<Vector, ExperimentError> {
    require_input(path)?;
    let text = std::fs::read_to_string(path)?;
    let last = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .last()
        .ok_or_else(|| config_err("empty alpha history"))?;
    let vals: Result<Vec<f64>, _> = last.split(',').skip(1).map(|f| f.parse()).collect();
    let vals = vals.map_err(|e| config_err(format!("bad alpha row: {e}")))?;
    Ok(Vector::from_vec(vals))
}

/// Stage 5: pointwise error |f - f_hat| of the final coefficients over a grid
/// around the limit set; writes error_grid.csv (x,y,error rows) and
/// error_grid_axes.csv.
pub fn stage_grid(cfg: &ExperimentConfig, out: &Path) -> Result<(), ExperimentError> {
    let traj = Trajectory::read_csv(&out.join(TRAJECTORY_CSV))
        .map_err(|_| ExperimentError::MissingInput(out.join(TRAJECTORY_CSV)))?;
    let centers = read_centers_csv(&out.join(CENTERS_CSV))?;
    let cs = build_center_set(cfg, centers)?;
    let alpha = read_final_alpha(&out.join(ALPHA_HISTORY_CSV))?;
    let sys = build_system(&cfg.system)?;
    let ecfg = estimator_config(cfg, cs.len(), sys.dim())?;
    let frame = EstimationFrame::new(&sys, ecfg.hurwitz_shift.as_ref())?;
    let limit =
        limit_set_samples(&traj, cfg.simulation.discard, cfg.grid.limit_samples)?;
    let spec = GridSpec::from_samples(&limit, cfg.grid.factor, cfg.grid.nx, cfg.grid.ny);
    let f = frame.f_handle();
    let grid = pointwise_error_grid(move |x| f(x), &cs, &alpha, &spec, &limit)?;
    let mut text = String::from("x,y,error\n");
    for (j, &y) in grid.ys.iter().enumerate() {
        for (i, &x) in grid.xs.iter().enumerate() {
            text.push_str(&format!("{},{},{}\n", fmt_f(x), fmt_f(y), fmt_f(grid.values[j][i])));
        }
    }
    std::fs::write(out.join(ERROR_GRID_CSV), text)?;
    let mut axes = String::from("axis,index,value\n");
    for (i, &x) in grid.xs.iter().enumerate() {
        axes.push_str(&format!("x,{i},{}\n", fmt_f(x)));
    }
    for (j, &y) in grid.ys.iter().enumerate() {
        axes.push_str(&format!("y,{j},{}\n", fmt_f(y)));
    }
    std::fs::write(out.join(ERROR_GRID_AXES_CSV), axes)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    rng: &'a str,
    seed: Option<u64>,
    config: &'a ExperimentConfig,
}

pub fn write_manifest(cfg: &ExperimentConfig, out: &Path) -> Result<(), ExperimentError> {
    let manifest = Manifest { rng: RNG_NAME, seed: cfg.centers.seed, config: cfg };
    std::fs::write(out.join(MANIFEST_JSON), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// The full pipeline: exactly the five stages in order plus the manifest, so
/// `run` and the manual subcommand chain write identical artifacts.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<(), ExperimentError> {
    cfg.validate()?;
    stage_simulate(cfg, out)?;
    stage_centers(cfg, out)?;
    stage_diagnose(cfg, out)?;
    stage_estimate(cfg, out)?;
    stage_grid(cfg, out)?;
    write_manifest(cfg, out)?;
    Ok(())
}
