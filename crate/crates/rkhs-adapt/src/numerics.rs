//! Dense linear-algebra and integration substrate: SPD factorization,
//! Lyapunov solver, symmetric condition numbers, and a fixed-step RK4
//! integrator. Dimensions are desk scale (d <= 4 system states, n <= 200
//! kernel centers), so O(n^3) direct methods are used throughout.

use thiserror::Error;

pub type Matrix = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;

/// Divergence guard for the integrator.
pub const DIVERGENCE_BOUND: f64 = 1e12;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("matrix has an eigenvalue with nonnegative real part (max Re = {max_re})")]
    NotHurwitz { max_re: f64 },
    #[error("matrix is not symmetric positive definite")]
    NotSpd,
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("state exceeded divergence bound at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("non-finite entry at construction")]
    NonFiniteEntry,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid integration span or step")]
    InvalidSpan,
}

pub fn check_finite_matrix(m: &Matrix) -> Result<(), NumericsError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFiniteEntry)
    }
}

pub fn check_finite_vector(v: &Vector) -> Result<(), NumericsError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFiniteEntry)
    }
}

/// Max-norm of a matrix (largest absolute entry).
pub fn max_norm(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

pub fn is_symmetric(m: &Matrix) -> bool {
    if !m.is_square() {
        return false;
    }
    let tol = 1e-12 * (1.0 + max_norm(m));
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return false;
            }
        }
    }
    true
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &Matrix) -> Result<Vec<f64>, NumericsError> {
    if !is_symmetric(m) {
        return Err(NumericsError::NotSymmetric);
    }
    let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(ev)
}

/// Largest real part among the (possibly complex) eigenvalues of a square matrix.
pub fn max_real_eigenvalue_part(m: &Matrix) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .fold(f64::NEG_INFINITY, |a, z| a.max(z.re))
}

pub fn is_hurwitz(m: &Matrix) -> bool {
    max_real_eigenvalue_part(m) < -1e-12
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix,
/// with an optional diagonal jitter applied when the plain factorization fails.
#[derive(Debug, Clone)]
pub struct SpdFactorization {
    lower: Matrix,
    dim: usize,
    jitter: f64,
}

impl SpdFactorization {
    /// Factor with zero jitter only.
    pub fn new(m: &Matrix) -> Result<Self, NumericsError> {
        Self::with_jitter(m, 0.0)
    }

    /// Factor, retrying once with `retry_jitter` on the diagonal if the plain
    /// factorization fails.
    pub fn with_jitter(m: &Matrix, retry_jitter: f64) -> Result<Self, NumericsError> {
        check_finite_matrix(m)?;
        if !is_symmetric(m) {
            return Err(NumericsError::NotSpd);
        }
        let attempt = |jit: f64| -> Option<Matrix> {
            let mut a = m.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += jit;
            }
            nalgebra::Cholesky::new(a).map(|c| c.l())
        };
        let (lower, jitter) = match attempt(0.0) {
            Some(l) => (l, 0.0),
            None if retry_jitter > 0.0 => match attempt(retry_jitter) {
                Some(l) => (l, retry_jitter),
                None => return Err(NumericsError::NotSpd),
            },
            None => return Err(NumericsError::NotSpd),
        };
        let fact = Self { lower, dim: m.nrows(), jitter };
        // Reconstruction invariant: || L L^T - (M + jit I) ||_max <= 1e-10 ||M||_max.
        let mut target = m.clone();
        for i in 0..target.nrows() {
            target[(i, i)] += fact.jitter;
        }
        let recon = &fact.lower * fact.lower.transpose();
        if max_norm(&(recon - target)) > 1e-10 * max_norm(m).max(1.0) {
            return Err(NumericsError::NotSpd);
        }
        Ok(fact)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    /// Solve M z = b through the factor (forward then backward substitution).
    pub fn solve(&self, b: &Vector) -> Result<Vector, NumericsError> {
        if b.len() != self.dim {
            return Err(NumericsError::DimensionMismatch { expected: self.dim, got: b.len() });
        }
        let y = self
            .lower
            .solve_lower_triangular(b)
            .ok_or(NumericsError::NotSpd)?;
        self.lower
            .transpose()
            .solve_upper_triangular(&y)
            .ok_or(NumericsError::NotSpd)
    }
}

/// Solve A^T P + P A = -Q for SPD P by Kronecker vectorization of the
/// d^2 x d^2 linear system.
pub fn lyapunov_solve(a: &Matrix, q: &Matrix) -> Result<Matrix, NumericsError> {
    check_finite_matrix(a)?;
    check_finite_matrix(q)?;
    let d = a.nrows();
    if !a.is_square() || q.nrows() != d || q.ncols() != d {
        return Err(NumericsError::DimensionMismatch { expected: d, got: q.nrows() });
    }
    let max_re = max_real_eigenvalue_part(a);
    if max_re >= -1e-12 {
        return Err(NumericsError::NotHurwitz { max_re });
    }
    // Q must be SPD.
    if !is_symmetric(q) {
        return Err(NumericsError::NotSpd);
    }
    SpdFactorization::new(q)?;

    // vec(A^T P + P A) = (I (x) A^T + A^T (x) I) vec(P), column-major vec.
    let eye = Matrix::identity(d, d);
    let at = a.transpose();
    let system = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = Vector::from_iterator(d * d, (-q).iter().copied());
    let sol = system
        .lu()
        .solve(&rhs)
        .ok_or(NumericsError::NotHurwitz { max_re })?;
    let mut p = Matrix::from_iterator(d, d, sol.iter().copied());
    p = (&p + p.transpose()) * 0.5;

    let residual = a.transpose() * &p + &p * a + q;
    if max_norm(&residual) > 1e-9 * max_norm(q) {
        return Err(NumericsError::NotSpd);
    }
    // P must come out SPD for a Hurwitz A and SPD Q.
    SpdFactorization::new(&p)?;
    Ok(p)
}

/// 2-norm condition number lambda_max / lambda_min of a symmetric matrix.
/// Returns +inf when the smallest eigenvalue is nonpositive.
pub fn condition_number_sym(m: &Matrix) -> Result<f64, NumericsError> {
    let ev = sym_eigenvalues(m)?;
    let min = ev[0];
    let max = ev[ev.len() - 1];
    if min <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(max / min)
}

/// One classical RK4 step.
pub fn rk4_step<F>(f: &F, t: f64, x: &Vector, h: f64) -> Vector
where
    F: Fn(f64, &Vector) -> Vector,
{
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * h, &(x + &k1 * (0.5 * h)));
    let k3 = f(t + 0.5 * h, &(x + &k2 * (0.5 * h)));
    let k4 = f(t + h, &(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

fn diverged(x: &Vector) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND)
}

/// Fixed-step classical RK4 over [t0, t1]; the final segment is shortened so
/// t1 is hit exactly. Returns one sample per step, including the endpoints.
pub fn rk4_integrate<F>(
    f: F,
    x0: &Vector,
    t_span: (f64, f64),
    dt: f64,
) -> Result<(Vec<f64>, Vec<Vector>), NumericsError>
where
    F: Fn(f64, &Vector) -> Vector,
{
    let (t0, t1) = t_span;
    if !(dt > 0.0) || !(t1 > t0) {
        return Err(NumericsError::InvalidSpan);
    }
    check_finite_vector(x0)?;
    let mut times = vec![t0];
    let mut states = vec![x0.clone()];
    let mut t = t0;
    let mut x = x0.clone();
    while t < t1 - 1e-12 * (t1 - t0).max(1.0) {
        let h = dt.min(t1 - t);
        x = rk4_step(&f, t, &x, h);
        t += h;
        if diverged(&x) {
            return Err(NumericsError::NonFiniteState { t });
        }
        times.push(t);
        states.push(x.clone());
    }
    Ok((times, states))
}
