//! The finite-dimensional RKHS adaptive estimator: coupled RK4 integration of
//! the plant, the state estimate, and the coefficient learning law
//! alphadot = K^-1 Gamma^-1 k(x_c, x) B^T P (x - xhat), plus error metrics
//! and pointwise error grids.

use std::sync::Arc;

use thiserror::Error;

use crate::dynamics::AffineSystem;
use crate::kernels::{CenterSet, KernelError};
use crate::numerics::{self, Matrix, NumericsError, Vector, DIVERGENCE_BOUND};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("system matrix is not Hurwitz (max Re = {max_re}); supply a Hurwitz shift")]
    NotHurwitz { max_re: f64 },
    #[error("Hurwitz shift is not realizable: A - A_s must equal B r^T for some row r")]
    ShiftNotRealizable,
    #[error("gain must be positive, got {0}")]
    BadGain(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// The frame the estimator actually works in. When the plant's A is not
/// Hurwitz, a shift matrix A_s replaces it and the difference is folded into
/// the unknown: A x + B f(x) = A_s x + B f'(x) with f'(x) = f(x) + r . x and
/// A - A_s = B r^T. The estimator then learns f'.
pub struct EstimationFrame {
    a: Matrix,
    f: Arc<dyn Fn(&Vector) -> f64 + Send + Sync>,
}

impl EstimationFrame {
    pub fn new(sys: &AffineSystem, shift: Option<&Matrix>) -> Result<Self, EstimatorError> {
        let d = sys.dim();
        let a = match shift {
            None => sys.a().clone(),
            Some(a_s) => {
                if a_s.nrows() != d || a_s.ncols() != d {
                    return Err(EstimatorError::DimensionMismatch { expected: d, got: a_s.nrows() });
                }
                a_s.clone()
            }
        };
        let max_re = numerics::max_real_eigenvalue_part(&a);
        if max_re >= -1e-12 {
            return Err(EstimatorError::NotHurwitz { max_re });
        }
        let f_true = sys.f_true_handle();
        let f: Arc<dyn Fn(&Vector) -> f64 + Send + Sync> = match shift {
            None => f_true,
            Some(a_s) => {
                let diff = sys.a() - a_s;
                let b = sys.b();
                // Pivot on the largest B component; the remaining rows of the
                // difference must vanish for B r^T to reproduce it.
                let j = b.iamax();
                if b[j].abs() <= 1e-14 {
                    return Err(EstimatorError::ShiftNotRealizable);
                }
                let r: Vector = diff.row(j).transpose() / b[j];
                let recon = b * r.transpose();
                if numerics::max_norm(&(&diff - recon))
                    > 1e-9 * (1.0 + numerics::max_norm(&diff))
                {
                    return Err(EstimatorError::ShiftNotRealizable);
                }
                Arc::new(move |x: &Vector| f_true(x) + r.dot(x))
            }
        };
        Ok(Self { a, f })
    }

    /// A used by both the estimator and the (rewritten) plant.
    pub fn a(&self) -> &Matrix {
        &self.a
    }

    /// The redefined unknown nonlinearity the estimator is learning.
    pub fn f(&self, x: &Vector) -> f64 {
        (self.f)(x)
    }

    pub fn f_handle(&self) -> Arc<dyn Fn(&Vector) -> f64 + Send + Sync> {
        Arc::clone(&self.f)
    }
}

#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    /// Positive scalar learning gain Gamma.
    pub gamma: f64,
    /// SPD matrix for the Lyapunov equation; identity when `None`.
    pub q: Option<Matrix>,
    /// Initial coefficient vector.
    pub alpha0: Vector,
    /// Initial state estimate; defaults to x0.
    pub xhat0: Option<Vector>,
    /// Replacement A_s when the plant's A is not Hurwitz.
    pub hurwitz_shift: Option<Matrix>,
    /// Record every `record_stride`-th integration step (>= 1).
    pub record_stride: usize,
}

impl EstimatorConfig {
    pub fn new(gamma: f64, alpha0: Vector) -> Self {
        Self { gamma, q: None, alpha0, xhat0: None, hurwitz_shift: None, record_stride: 1 }
    }
}

/// Recorded histories of a completed estimator run.
#[derive(Debug, Clone)]
pub struct EstimatorRun {
    pub t0: f64,
    /// Spacing of the recorded samples (integration dt times the stride).
    pub dt: f64,
    pub x: Vec<Vector>,
    pub xhat: Vec<Vector>,
    pub alpha: Vec<Vector>,
    pub p: Matrix,
    /// Interpolation coefficients of the estimation-frame unknown.
    pub alpha_star: Vector,
}

impl EstimatorRun {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// ||x - xhat|| per recorded sample.
    pub fn state_error_norm(&self) -> Vec<f64> {
        self.x.iter().zip(&self.xhat).map(|(x, xh)| (x - xh).norm()).collect()
    }

    /// ||alpha* - alpha(t)|| per recorded sample.
    pub fn coefficient_error_norm(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| (&self.alpha_star - a).norm()).collect()
    }
}

/// Coefficient rate of the learning law at one instant. The only plant
/// information it reads is the measured state and the state error.
pub fn coefficient_rate(
    cs: &CenterSet,
    gamma: f64,
    btp: &Vector,
    x: &Vector,
    x_err: &Vector,
) -> Result<Vector, EstimatorError> {
    let k = cs.kernel_vector(x)?;
    let scalar = btp.dot(x_err) / gamma;
    Ok(cs.factorization().solve(&(k * scalar))?)
}

/// Jointly integrate the plant, state estimate, and coefficient estimate with
/// one RK4 clock over the stacked state (x, xhat, alpha).
pub fn run_estimator(
    sys: &AffineSystem,
    cs: &CenterSet,
    cfg: &EstimatorConfig,
    x0: &Vector,
    duration: f64,
    dt: f64,
) -> Result<EstimatorRun, EstimatorError> {
    let d = sys.dim();
    let n = cs.len();
    if x0.len() != d {
        return Err(EstimatorError::DimensionMismatch { expected: d, got: x0.len() });
    }
    if cs.dim() != d {
        return Err(EstimatorError::DimensionMismatch { expected: d, got: cs.dim() });
    }
    if cfg.alpha0.len() != n {
        return Err(EstimatorError::DimensionMismatch { expected: n, got: cfg.alpha0.len() });
    }
    if !(cfg.gamma > 0.0) {
        return Err(EstimatorError::BadGain(cfg.gamma));
    }
    let frame = EstimationFrame::new(sys, cfg.hurwitz_shift.as_ref())?;
    let q = cfg.q.clone().unwrap_or_else(|| Matrix::identity(d, d));
    let p = numerics::lyapunov_solve(frame.a(), &q)?;
    let btp: Vector = (sys.b().transpose() * &p).transpose();
    let alpha_star = cs.target_coefficients(|c| frame.f(c))?;

    let xhat0 = cfg.xhat0.clone().unwrap_or_else(|| x0.clone());
    if xhat0.len() != d {
        return Err(EstimatorError::DimensionMismatch { expected: d, got: xhat0.len() });
    }

    let a = frame.a();
    let b = sys.b();
    let gamma = cfg.gamma;
    let deriv = |_t: f64, s: &Vector| -> Vector {
        let x = s.rows(0, d).into_owned();
        let xhat = s.rows(d, d).into_owned();
        let alpha = s.rows(2 * d, n).into_owned();
        let k = cs.kernel_vector(&x).expect("dimension checked");
        let xdot = a * &x + b * frame.f(&x);
        let xhatdot = a * &xhat + b * alpha.dot(&k);
        let scalar = btp.dot(&(&x - &xhat)) / gamma;
        let alphadot = cs
            .factorization()
            .solve(&(k * scalar))
            .expect("Grammian factorized at construction");
        let mut out = Vector::zeros(2 * d + n);
        out.rows_mut(0, d).copy_from(&xdot);
        out.rows_mut(d, d).copy_from(&xhatdot);
        out.rows_mut(2 * d, n).copy_from(&alphadot);
        out
    };

    let mut state = Vector::zeros(2 * d + n);
    state.rows_mut(0, d).copy_from(x0);
    state.rows_mut(d, d).copy_from(&xhat0);
    state.rows_mut(2 * d, n).copy_from(&cfg.alpha0);

    let stride = cfg.record_stride.max(1);
    let n_steps = (duration / dt).round().max(1.0) as usize;
    let mut x_hist = Vec::with_capacity(n_steps / stride + 2);
    let mut xhat_hist = Vec::with_capacity(n_steps / stride + 2);
    let mut alpha_hist = Vec::with_capacity(n_steps / stride + 2);
    let mut record = |s: &Vector| {
        x_hist.push(s.rows(0, d).into_owned());
        xhat_hist.push(s.rows(d, d).into_owned());
        alpha_hist.push(s.rows(2 * d, n).into_owned());
    };
    record(&state);
    for step in 1..=n_steps {
        let t = (step - 1) as f64 * dt;
        state = numerics::rk4_step(&deriv, t, &state, dt);
        if state.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND) {
            return Err(EstimatorError::Numerics(NumericsError::NonFiniteState { t: t + dt }));
        }
        if step % stride == 0 || step == n_steps {
            record(&state);
        }
    }

    Ok(EstimatorRun {
        t0: 0.0,
        dt: dt * stride as f64,
        x: x_hist,
        xhat: xhat_hist,
        alpha: alpha_hist,
        p,
        alpha_star,
    })
}

/// Axis-aligned rectangle and resolution for pointwise error evaluation.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    /// Bounding box of a sample cloud expanded by `factor` about its center.
    pub fn from_samples(samples: &[Vector], factor: f64, nx: usize, ny: usize) -> Self {
        let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in samples {
            xmin = xmin.min(s[0]);
            xmax = xmax.max(s[0]);
            ymin = ymin.min(s[1]);
            ymax = ymax.max(s[1]);
        }
        let (cx, cy) = (0.5 * (xmin + xmax), 0.5 * (ymin + ymax));
        let (hx, hy) = (0.5 * (xmax - xmin) * factor, 0.5 * (ymax - ymin) * factor);
        Self { xmin: cx - hx, xmax: cx + hx, ymin: cy - hy, ymax: cy + hy, nx, ny }
    }

    pub fn x_values(&self) -> Vec<f64> {
        linspace(self.xmin, self.xmax, self.nx)
    }

    pub fn y_values(&self) -> Vec<f64> {
        linspace(self.ymin, self.ymax, self.ny)
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (a + b)];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Dense |f - f_hat| evaluation over a grid, plus the same error along the
/// supplied limit-set samples. `f` is the estimation-frame unknown.
#[derive(Debug, Clone)]
pub struct ErrorGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// values[j][i] = error at (xs[i], ys[j]).
    pub values: Vec<Vec<f64>>,
    pub sample_errors: Vec<f64>,
}

pub fn pointwise_error_grid<F>(
    f: F,
    cs: &CenterSet,
    alpha: &Vector,
    spec: &GridSpec,
    limit_samples: &[Vector],
) -> Result<ErrorGrid, EstimatorError>
where
    F: Fn(&Vector) -> f64,
{
    let xs = spec.x_values();
    let ys = spec.y_values();
    let mut values = Vec::with_capacity(ys.len());
    for &y in &ys {
        let mut row = Vec::with_capacity(xs.len());
        for &x in &xs {
            let pt = Vector::from_vec(vec![x, y]);
            row.push((f(&pt) - cs.f_hat_eval(alpha, &pt)?).abs());
        }
        values.push(row);
    }
    let mut sample_errors = Vec::with_capacity(limit_samples.len());
    for s in limit_samples {
        sample_errors.push((f(s) - cs.f_hat_eval(alpha, s)?).abs());
    }
    Ok(ErrorGrid { xs, ys, values, sample_errors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::AffineSystem;
    use crate::kernels::{Kernel, KernelKind};

    fn v(vals: &[f64]) -> Vector {
        Vector::from_vec(vals.to_vec())
    }

    fn single_center_system() -> (AffineSystem, CenterSet) {
        // d = 1, A = -1, B = 1, f_true(x) = x pins the plant at x0.
        let sys = AffineSystem::new(
            Matrix::from_row_slice(1, 1, &[-1.0]),
            v(&[1.0]),
            Arc::new(|x: &Vector| x[0]),
            v(&[1.0]),
        )
        .unwrap();
        let kernel = Kernel::new(KernelKind::SobolevMatern32, 1.0).unwrap();
        let cs = CenterSet::new(kernel, vec![v(&[0.7])]).unwrap();
        (sys, cs)
    }

    #[test]
    fn zero_equilibrium_preserved_exactly() {
        let sys = AffineSystem::new(
            Matrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]),
            v(&[0.0, 1.0]),
            Arc::new(|_| 0.0),
            v(&[1.0, 1.0]),
        )
        .unwrap();
        let kernel = Kernel::new(KernelKind::SobolevMatern32, 0.5).unwrap();
        let cs = CenterSet::new(kernel, vec![v(&[0.3, 0.0]), v(&[0.0, 0.3])]).unwrap();
        let x0 = v(&[0.4, -0.2]);
        let cfg = EstimatorConfig::new(0.01, Vector::zeros(2));
        let run = run_estimator(&sys, &cs, &cfg, &x0, 1.0, 1e-2).unwrap();
        for (x, xhat) in run.x.iter().zip(&run.xhat) {
            assert_eq!(x, xhat);
        }
        for a in &run.alpha {
            assert_eq!(a.norm(), 0.0);
        }
    }

    #[test]
    fn frozen_state_closed_form_oracle() {
        // With x pinned at the single center c, the error pair
        // (xtil, atil = alpha* - alpha) obeys the linear system
        // [xtil; atil]' = [[-1, 1], [-P/Gamma, 0]] [xtil; atil],
        // solved in closed form via complex eigendecomposition.
        use num_complex::Complex64 as C;
        let (sys, cs) = single_center_system();
        let c0 = 0.7;
        let gamma = 0.05;
        let cfg = EstimatorConfig {
            xhat0: Some(v(&[0.0])),
            ..EstimatorConfig::new(gamma, v(&[0.0]))
        };
        let x0 = v(&[c0]);
        let run = run_estimator(&sys, &cs, &cfg, &x0, 2.0, 1e-4).unwrap();

        let p = 0.5; // A^T P + P A = -I with A = -1
        // Eigenvalues of [[-1, 1], [-p/gamma, 0]].
        let disc = C::new(1.0 - 4.0 * p / gamma, 0.0).sqrt();
        let l1 = (C::new(-1.0, 0.0) + disc) / 2.0;
        let l2 = (C::new(-1.0, 0.0) - disc) / 2.0;
        // Eigenvectors (1, l + 1)^T since first row reads -v1 + v2 = l v1.
        let y0 = (C::new(c0, 0.0), C::new(c0, 0.0)); // xtil(0) = alphatil(0) = c0
        // Solve coefficients a, b of y0 = a w1 + b w2.
        let (w1, w2) = ((C::new(1.0, 0.0), l1 + 1.0), (C::new(1.0, 0.0), l2 + 1.0));
        let det = w1.0 * w2.1 - w2.0 * w1.1;
        let ca = (y0.0 * w2.1 - w2.0 * y0.1) / det;
        let cb = (w1.0 * y0.1 - y0.0 * w1.1) / det;
        let exact = |t: f64| {
            let e1 = (l1 * t).exp();
            let e2 = (l2 * t).exp();
            let xt = ca * w1.0 * e1 + cb * w2.0 * e2;
            let at = ca * w1.1 * e1 + cb * w2.1 * e2;
            (xt.re, at.re)
        };

        for (i, (x, xhat)) in run.x.iter().zip(&run.xhat).enumerate().step_by(500) {
            let t = run.time(i);
            let (xt_exact, at_exact) = exact(t);
            let xt = x[0] - xhat[0];
            let at = run.alpha_star[0] - run.alpha[i][0];
            assert!((x[0] - c0).abs() < 1e-9, "plant must stay pinned");
            assert!((xt - xt_exact).abs() < 1e-6, "t={t}: {xt} vs {xt_exact}");
            assert!((at - at_exact).abs() < 1e-6, "t={t}: {at} vs {at_exact}");
        }
    }

    #[test]
    fn gamma_scaling_of_initial_rate() {
        let (sys, cs) = single_center_system();
        let p = numerics::lyapunov_solve(sys.a(), &Matrix::identity(1, 1)).unwrap();
        let btp: Vector = (sys.b().transpose() * &p).transpose();
        let x = v(&[0.7]);
        let err = v(&[0.3]);
        let r1 = coefficient_rate(&cs, 0.01, &btp, &x, &err).unwrap();
        let r2 = coefficient_rate(&cs, 0.1, &btp, &x, &err).unwrap();
        let ratio = r2.norm() / r1.norm();
        assert!((ratio - 0.1).abs() <= 1e-12 * 0.1);
    }

    #[test]
    fn shift_folds_linear_term_into_unknown() {
        let sys = crate::dynamics::vdp_like_system();
        let shift = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.5]);
        let frame = EstimationFrame::new(&sys, Some(&shift)).unwrap();
        // f'(x) = -x1^2 x2 + x2.
        let x = v(&[2.0, 3.0]);
        assert!((frame.f(&x) - (-12.0 + 3.0)).abs() < 1e-12);
        // Rewritten vector field must equal the original one.
        let orig = sys.field(&x);
        let rewritten = frame.a() * &x + sys.b() * frame.f(&x);
        assert!((orig - rewritten).norm() < 1e-12);
    }

    #[test]
    fn non_hurwitz_without_shift_is_rejected() {
        let sys = crate::dynamics::vdp_like_system();
        let kernel = Kernel::new(KernelKind::SobolevMatern32, 0.5).unwrap();
        let cs = CenterSet::new(kernel, vec![v(&[0.0, 1.0])]).unwrap();
        let cfg = EstimatorConfig::new(0.01, Vector::zeros(1));
        let r = run_estimator(&sys, &cs, &cfg, &v(&[0.0, 2.0]), 0.1, 1e-3);
        assert!(matches!(r, Err(EstimatorError::NotHurwitz { .. })));
    }

    #[test]
    fn unrealizable_shift_is_rejected() {
        let sys = crate::dynamics::vdp_like_system();
        // Changes row 1, which B = [0, 1] cannot absorb.
        let shift = Matrix::from_row_slice(2, 2, &[-1.0, 1.0, -1.0, -0.5]);
        assert!(matches!(
            EstimationFrame::new(&sys, Some(&shift)),
            Err(EstimatorError::ShiftNotRealizable)
        ));
    }

    #[test]
    fn error_norm_shapes() {
        let (sys, cs) = single_center_system();
        let cfg = EstimatorConfig::new(0.05, v(&[0.0]));
        let run = run_estimator(&sys, &cs, &cfg, &v(&[0.7]), 0.01, 0.01).unwrap();
        assert_eq!(run.state_error_norm().len(), run.len());
        assert_eq!(run.coefficient_error_norm().len(), run.len());
    }

    #[test]
    fn grid_zero_cases() {
        let kernel = Kernel::new(KernelKind::SobolevMatern32, 0.5).unwrap();
        let cs = CenterSet::new(kernel, vec![v(&[0.0, 0.0]), v(&[1.0, 0.0])]).unwrap();
        let spec = GridSpec { xmin: -1.0, xmax: 2.0, ymin: -1.0, ymax: 1.0, nx: 11, ny: 7 };
        // f = 0 and alpha = 0 gives an all-zero grid.
        let g = pointwise_error_grid(|_| 0.0, &cs, &Vector::zeros(2), &spec, &[]).unwrap();
        assert!(g.values.iter().flatten().all(|v| *v == 0.0));

        // alpha = alpha*: error vanishes at the centers.
        let f = |x: &Vector| x[0] + 0.5;
        let alpha = cs.target_coefficients(f).unwrap();
        let centers: Vec<Vector> = cs.centers().to_vec();
        let g = pointwise_error_grid(f, &cs, &alpha, &spec, &centers).unwrap();
        assert!(g.sample_errors.iter().all(|e| *e <= 1e-8));
    }
}
