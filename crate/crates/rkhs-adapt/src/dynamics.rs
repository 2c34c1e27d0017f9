//! Plant definitions (the piezoelectric oscillator, the nonlinear oscillator,
//! and user-defined affine systems), per-state scaling, and trajectory
//! generation. Scaled coordinates are the working frame for everything
//! downstream: the system builder performs the change of variables on
//! A, B, f once.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::numerics::{self, Matrix, NumericsError, Vector};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("simulation produced no samples after discard")]
    EmptyResult,
    #[error("trajectory file malformed: {0}")]
    BadTrajectoryFile(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Nonlinearity = Arc<dyn Fn(&Vector) -> f64 + Send + Sync>;

/// System of the form xdot = A x + B f(x) with a scalar unknown
/// nonlinearity f, expressed in scaled working coordinates z_i = x_i / s_i.
/// f is used only by the plant integrator and evaluation metrics, never by
/// the estimator's learning law.
#[derive(Clone)]
pub struct AffineSystem {
    a: Matrix,
    b: Vector,
    f_true: Nonlinearity,
    scale: Vector,
}

impl fmt::Debug for AffineSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AffineSystem")
            .field("a", &self.a)
            .field("b", &self.b)
            .field("scale", &self.scale)
            .finish_non_exhaustive()
    }
}

impl AffineSystem {
    /// Build from original-frame A, B, f and per-state scale factors.
    /// With S = diag(scale) the working-frame system is
    /// zdot = S^-1 A S z + S^-1 B f(S z).
    pub fn new(
        a: Matrix,
        b: Vector,
        f: Nonlinearity,
        scale: Vector,
    ) -> Result<Self, DynamicsError> {
        let d = a.nrows();
        if !a.is_square() || b.len() != d || scale.len() != d {
            return Err(DynamicsError::InvalidParameter(
                "A, B, scale dimensions inconsistent".into(),
            ));
        }
        numerics::check_finite_matrix(&a)?;
        numerics::check_finite_vector(&b)?;
        if scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(DynamicsError::InvalidParameter(
                "scale factors must be strictly positive".into(),
            ));
        }
        let s = Matrix::from_diagonal(&scale);
        let s_inv = Matrix::from_diagonal(&scale.map(|v| 1.0 / v));
        let a_w = &s_inv * &a * &s;
        let b_w = &s_inv * &b;
        let f_w: Nonlinearity = Arc::new(move |z: &Vector| f(&(&s * z)));
        Ok(Self { a: a_w, b: b_w, f_true: f_w, scale })
    }

    /// A in the scaled working frame.
    pub fn a(&self) -> &Matrix {
        &self.a
    }

    /// B in the scaled working frame.
    pub fn b(&self) -> &Vector {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn scale(&self) -> &Vector {
        &self.scale
    }

    /// The unknown nonlinearity as a function of the scaled state.
    pub fn f_true(&self, z: &Vector) -> f64 {
        (self.f_true)(z)
    }

    pub fn f_true_handle(&self) -> Nonlinearity {
        Arc::clone(&self.f_true)
    }

    /// Vector field in the working frame.
    pub fn field(&self, z: &Vector) -> Vector {
        &self.a * z + &self.b * (self.f_true)(z)
    }
}

/// Parameters of the single-mode piezoelectric oscillator.
#[derive(Debug, Clone, Copy)]
pub struct PiezoParams {
    pub modal_mass: f64,
    pub modal_stiffness: f64,
    pub modal_damping: f64,
    pub input_gain: f64,
    pub k_n1: f64,
    pub k_n2: f64,
    pub scale: f64,
}

impl PiezoParams {
    /// Undamped, no-input configuration used in all experiments here.
    pub fn reference() -> Self {
        Self {
            modal_mass: 0.9745,
            modal_stiffness: 329.9006,
            modal_damping: 0.0,
            input_gain: 0.0,
            k_n1: -1.2901e5,
            k_n2: 1.2053e9,
            scale: 0.02,
        }
    }
}

/// Two-state piezoelectric oscillator with cubic-quintic nonlinear stiffness,
/// f(x) = -(K_N1/M) x1^3 - (K_N2/M) x1^5, in scaled coordinates x1 = S * z1.
/// The base-excitation input is zero (undamped, no-input case).
pub fn piezo_system(p: PiezoParams) -> Result<AffineSystem, DynamicsError> {
    if !(p.modal_mass > 0.0) {
        return Err(DynamicsError::InvalidParameter("modal mass must be positive".into()));
    }
    if !(p.scale > 0.0) {
        return Err(DynamicsError::InvalidParameter("scale must be positive".into()));
    }
    let m = p.modal_mass;
    let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -p.modal_stiffness / m, -p.modal_damping / m]);
    let b = Vector::from_vec(vec![0.0, 1.0]);
    let (kn1, kn2) = (p.k_n1 / m, p.k_n2 / m);
    let f: Nonlinearity = Arc::new(move |x: &Vector| {
        let x1 = x[0];
        -kn1 * x1.powi(3) - kn2 * x1.powi(5)
    });
    AffineSystem::new(a, b, f, Vector::from_vec(vec![p.scale, 1.0]))
}

/// Nonlinear oscillator with A = [[0,1],[-1,0.5]], B = [0,1], f(x) = -x1^2 x2.
/// Settles onto a nonsymmetric limit cycle.
pub fn vdp_like_system() -> AffineSystem {
    let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.5]);
    let b = Vector::from_vec(vec![0.0, 1.0]);
    let f: Nonlinearity = Arc::new(|x: &Vector| -x[0] * x[0] * x[1]);
    AffineSystem::new(a, b, f, Vector::from_vec(vec![1.0, 1.0])).expect("static dimensions")
}

/// Uniformly sampled state path in the scaled working coordinates.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub states: Vec<Vector>,
}

impl Trajectory {
    pub fn new(t0: f64, dt: f64, states: Vec<Vector>) -> Result<Self, DynamicsError> {
        if !(dt > 0.0) || states.is_empty() {
            return Err(DynamicsError::InvalidParameter("dt > 0 and nonempty states required".into()));
        }
        for s in &states {
            numerics::check_finite_vector(s)?;
        }
        Ok(Self { t0, dt, states })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn duration(&self) -> f64 {
        (self.len() - 1) as f64 * self.dt
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DynamicsError> {
        let mut out = String::new();
        out.push('t');
        for i in 0..self.dim() {
            out.push_str(&format!(",x{}", i + 1));
        }
        out.push('\n');
        for (i, s) in self.states.iter().enumerate() {
            out.push_str(&format!("{:.16e}", self.time(i)));
            for v in s.iter() {
                out.push_str(&format!(",{:.16e}", v));
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, DynamicsError> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| DynamicsError::BadTrajectoryFile("empty file".into()))?;
        if !header.starts_with("t,") {
            return Err(DynamicsError::BadTrajectoryFile("expected header t,x1,...".into()));
        }
        let mut times = Vec::new();
        let mut states = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let t: f64 = fields
                .next()
                .unwrap()
                .parse()
                .map_err(|e| DynamicsError::BadTrajectoryFile(format!("bad t: {e}")))?;
            let vals: Result<Vec<f64>, _> = fields.map(|f| f.parse::<f64>()).collect();
            let vals = vals.map_err(|e| DynamicsError::BadTrajectoryFile(format!("bad value: {e}")))?;
            times.push(t);
            states.push(Vector::from_vec(vals));
        }
        if states.len() < 2 {
            return Err(DynamicsError::BadTrajectoryFile("need at least two samples".into()));
        }
        let dt = times[1] - times[0];
        for w in times.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0) {
                return Err(DynamicsError::BadTrajectoryFile("nonuniform time spacing".into()));
            }
        }
        Trajectory::new(times[0], dt, states)
    }
}

/// Integrate zdot = A z + B f(z) in the working frame with fixed-step RK4.
/// The step count is rounded so the trajectory stays uniformly sampled.
pub fn simulate(
    sys: &AffineSystem,
    x0: &Vector,
    duration: f64,
    dt: f64,
) -> Result<Trajectory, DynamicsError> {
    if !(dt > 0.0) || !(duration > 0.0) {
        return Err(DynamicsError::InvalidParameter("duration and dt must be positive".into()));
    }
    let n_steps = (duration / dt).round().max(1.0) as usize;
    let (_, states) =
        numerics::rk4_integrate(|_, z| sys.field(z), x0, (0.0, n_steps as f64 * dt), dt)?;
    Trajectory::new(0.0, dt, states)
}

/// Drop the initial transient of length `discard`, then subsample evenly to
/// at most `max_count` points, preserving path order. Returned samples are a
/// subset of the trajectory samples.
pub fn limit_set_samples(
    traj: &Trajectory,
    discard: f64,
    max_count: usize,
) -> Result<Vec<Vector>, DynamicsError> {
    if discard >= traj.duration() {
        return Err(DynamicsError::EmptyResult);
    }
    let first = ((discard / traj.dt).ceil() as usize).min(traj.len() - 1);
    let retained = traj.len() - first;
    if retained == 0 || max_count == 0 {
        return Err(DynamicsError::EmptyResult);
    }
    let count = retained.min(max_count);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        // Even subsampling over the retained window, strictly increasing.
        let idx = first + (k as f64 * retained as f64 / count as f64) as usize;
        out.push(traj.states[idx.min(traj.len() - 1)].clone());
    }
    Ok(out)
}

/// Dominant-period estimate from zero crossings of the first state about its
/// mean. Used for the PE window default and closed-orbit extraction.
pub fn estimate_period(traj: &Trajectory) -> Option<f64> {
    let mean: f64 = traj.states.iter().map(|s| s[0]).sum::<f64>() / traj.len() as f64;
    let mut crossings = Vec::new();
    for i in 1..traj.len() {
        let a = traj.states[i - 1][0] - mean;
        let b = traj.states[i][0] - mean;
        if a <= 0.0 && b > 0.0 {
            // Linear interpolation of the upward crossing time.
            let frac = if (b - a).abs() > 0.0 { -a / (b - a) } else { 0.0 };
            crossings.push(traj.time(i - 1) + frac * traj.dt);
        }
    }
    if crossings.len() < 2 {
        return None;
    }
    let total = crossings.last().unwrap() - crossings.first().unwrap();
    Some(total / (crossings.len() - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Total mechanical energy of the piezo oscillator in original
    /// coordinates, evaluated from the scaled state. Independent oracle for
    /// the conservation checks.
    pub fn piezo_energy(p: &PiezoParams, z: &Vector) -> f64 {
        let x = p.scale * z[0];
        let v = z[1];
        0.5 * p.modal_mass * v * v
            + 0.5 * p.modal_stiffness * x * x
            + 0.25 * p.k_n1 * x.powi(4)
            + p.k_n2 * x.powi(6) / 6.0
    }

    #[test]
    fn piezo_nonlinearity_odd() {
        let sys = piezo_system(PiezoParams::reference()).unwrap();
        assert_eq!(sys.f_true(&Vector::from_vec(vec![0.0, 0.3])), 0.0);
        let a = sys.f_true(&Vector::from_vec(vec![1.0, 0.0]));
        let b = sys.f_true(&Vector::from_vec(vec![-1.0, 0.0]));
        assert!((a + b).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn piezo_rejects_bad_parameters() {
        let mut p = PiezoParams::reference();
        p.modal_mass = 0.0;
        assert!(piezo_system(p).is_err());
        let mut p = PiezoParams::reference();
        p.scale = -1.0;
        assert!(piezo_system(p).is_err());
    }

    #[test]
    fn piezo_energy_conservation() {
        let p = PiezoParams::reference();
        let sys = piezo_system(p).unwrap();
        let x0 = Vector::from_vec(vec![1.5, 0.0]);
        let traj = simulate(&sys, &x0, 100.0, 2e-4).unwrap();
        let e0 = piezo_energy(&p, &x0);
        let drift = traj
            .states
            .iter()
            .map(|z| ((piezo_energy(&p, z) - e0) / e0).abs())
            .fold(0.0_f64, f64::max);
        assert!(drift < 1e-6, "relative energy drift {drift:.3e}");
    }

    #[test]
    fn vdp_values_and_boundedness() {
        let sys = vdp_like_system();
        assert_eq!(sys.f_true(&Vector::from_vec(vec![0.0, 2.0])), 0.0);
        assert_eq!(sys.f_true(&Vector::from_vec(vec![1.0, 1.0])), -1.0);
        let traj = simulate(&sys, &Vector::from_vec(vec![0.0, 2.0]), 200.0, 1e-3).unwrap();
        let sup = traj
            .states
            .iter()
            .map(|s| s.amax())
            .fold(0.0_f64, f64::max);
        assert!(sup < 5.0, "trajectory sup norm {sup}");
    }

    #[test]
    fn stable_linear_decay() {
        let a = Matrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let b = Vector::from_vec(vec![0.0, 1.0]);
        let sys = AffineSystem::new(a, b, Arc::new(|_| 0.0), Vector::from_vec(vec![1.0, 1.0]))
            .unwrap();
        let x0 = Vector::from_vec(vec![1.0, 1.0]);
        let traj = simulate(&sys, &x0, 10.0, 1e-2).unwrap();
        assert!(traj.states.last().unwrap().norm() < x0.norm());
    }

    #[test]
    fn scaling_consistency() {
        // Simulating the scaled system directly equals simulating in original
        // coordinates and scaling the states afterwards.
        let p = PiezoParams::reference();
        let scaled = piezo_system(p).unwrap();
        let unscaled = piezo_system(PiezoParams { scale: 1.0, ..p }).unwrap();
        let z0 = Vector::from_vec(vec![1.5, 0.0]);
        let x0 = Vector::from_vec(vec![1.5 * p.scale, 0.0]);
        let a = simulate(&scaled, &z0, 1.0, 1e-3).unwrap();
        let b = simulate(&unscaled, &x0, 1.0, 1e-3).unwrap();
        for (za, xb) in a.states.iter().zip(&b.states) {
            assert!((za[0] - xb[0] / p.scale).abs() < 1e-9);
            assert!((za[1] - xb[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn limit_set_samples_conservative_orbit() {
        let p = PiezoParams::reference();
        let sys = piezo_system(p).unwrap();
        let x0 = Vector::from_vec(vec![1.5, 0.0]);
        let traj = simulate(&sys, &x0, 2.0, 1e-3).unwrap();
        let samples = limit_set_samples(&traj, 0.0, 400).unwrap();
        let e0 = piezo_energy(&p, &x0);
        for s in &samples {
            assert!(((piezo_energy(&p, s) - e0) / e0).abs() < 1e-6);
        }
    }

    #[test]
    fn limit_set_samples_edge_cases() {
        let sys = vdp_like_system();
        let traj = simulate(&sys, &Vector::from_vec(vec![0.0, 2.0]), 1.0, 0.1).unwrap();
        // A discard inside the final step leaves a single point.
        let one = limit_set_samples(&traj, traj.duration() - 0.5 * traj.dt, 100).unwrap();
        assert_eq!(one.len(), 1);
        assert!(limit_set_samples(&traj, traj.duration(), 100).is_err());
    }

    #[test]
    fn limit_set_samples_subset_and_ordered() {
        let sys = vdp_like_system();
        let traj = simulate(&sys, &Vector::from_vec(vec![0.0, 2.0]), 5.0, 1e-2).unwrap();
        let samples = limit_set_samples(&traj, 1.0, 37).unwrap();
        let mut last_idx = None;
        for s in &samples {
            let idx = traj
                .states
                .iter()
                .position(|x| x == s)
                .expect("sample must come from the trajectory");
            if let Some(prev) = last_idx {
                assert!(idx > prev);
            }
            last_idx = Some(idx);
        }
    }

    #[test]
    fn vdp_limit_cycle_settles() {
        // Samples after a 100 s discard stay Hausdorff-close to a later window.
        let sys = vdp_like_system();
        let traj = simulate(&sys, &Vector::from_vec(vec![0.0, 2.0]), 200.0, 1e-3).unwrap();
        let early = limit_set_samples(&traj, 100.0, 2000).unwrap();
        let first = (150.0 / traj.dt) as usize;
        let late: Vec<Vector> = traj.states[first..].to_vec();
        let d = early
            .iter()
            .map(|a| late.iter().map(|b| (a - b).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0_f64, f64::max);
        assert!(d < 0.05, "directed Hausdorff distance {d}");
    }

    #[test]
    fn period_estimate_matches_linear_oscillator() {
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -4.0, 0.0]);
        let b = Vector::from_vec(vec![0.0, 1.0]);
        let sys = AffineSystem::new(a, b, Arc::new(|_| 0.0), Vector::from_vec(vec![1.0, 1.0]))
            .unwrap();
        let traj = simulate(&sys, &Vector::from_vec(vec![1.0, 0.0]), 20.0, 1e-3).unwrap();
        let period = estimate_period(&traj).unwrap();
        assert!((period - std::f64::consts::PI).abs() < 1e-3);
    }

    #[test]
    fn trajectory_csv_roundtrip() {
        let sys = vdp_like_system();
        let traj = simulate(&sys, &Vector::from_vec(vec![0.0, 2.0]), 0.5, 1e-2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        traj.write_csv(&path).unwrap();
        let back = Trajectory::read_csv(&path).unwrap();
        assert_eq!(back.len(), traj.len());
        for (a, b) in traj.states.iter().zip(&back.states) {
            assert_eq!(a, b);
        }
    }
}
