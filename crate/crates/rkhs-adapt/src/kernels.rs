//! Positive-definite kernels, kernel vectors, Grammian assembly, and the
//! interpolation coefficients that serve as the ground-truth parameter
//! vector for the adaptive estimator.

use thiserror::Error;

use crate::numerics::{self, Matrix, NumericsError, SpdFactorization, Vector};

/// Retry jitter applied to the Grammian diagonal when the plain Cholesky
/// factorization fails (near-degenerate center sets from the SOM path).
pub const GRAM_RETRY_JITTER: f64 = 1e-10;

/// Default cap on the Grammian condition number.
pub const DEFAULT_CONDITION_CAP: f64 = 1e12;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("centers {i} and {j} coincide (distance <= 1e-12)")]
    DuplicateCenters { i: usize, j: usize },
    #[error("Grammian condition number {condition:.3e} exceeds cap {cap:.3e}")]
    IllConditioned { condition: f64, cap: f64 },
    #[error("center set is empty")]
    EmptyCenters,
    #[error("length scale must be positive, got {0}")]
    BadLengthScale(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    SobolevMatern32,
    GaussianRbf,
}

/// A radial positive-definite kernel with K(x, x) = 1.
///
/// Only the two kinds used in practice are implemented; adding a kind means
/// extending [`KernelKind`] and the `eval_r` match below, everything else is
/// generic in the kernel.
#[derive(Debug, Clone, Copy)]
pub struct Kernel {
    kind: KernelKind,
    length_scale: f64,
}

impl Kernel {
    pub fn new(kind: KernelKind, length_scale: f64) -> Result<Self, KernelError> {
        if !(length_scale > 0.0) || !length_scale.is_finite() {
            return Err(KernelError::BadLengthScale(length_scale));
        }
        Ok(Self { kind, length_scale })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    /// sup sqrt(K(x, x)); both kinds are normalized so this is 1.
    pub fn bound(&self) -> f64 {
        1.0
    }

    fn eval_r(&self, r: f64) -> f64 {
        match self.kind {
            KernelKind::SobolevMatern32 => {
                let a = 3.0_f64.sqrt() * r / self.length_scale;
                (1.0 + a) * (-a).exp()
            }
            KernelKind::GaussianRbf => {
                let s = r / self.length_scale;
                (-s * s).exp()
            }
        }
    }

    pub fn eval(&self, x: &Vector, y: &Vector) -> Result<f64, KernelError> {
        if x.len() != y.len() {
            return Err(KernelError::DimensionMismatch { expected: x.len(), got: y.len() });
        }
        Ok(self.eval_r((x - y).norm()))
    }
}

/// Ordered kernel centers with the cached Grammian and its factorization.
/// Immutable after construction.
#[derive(Debug, Clone)]
pub struct CenterSet {
    kernel: Kernel,
    centers: Vec<Vector>,
    gram: Matrix,
    factor: SpdFactorization,
    condition: f64,
    min_separation: Option<f64>,
}

impl CenterSet {
    pub fn new(kernel: Kernel, centers: Vec<Vector>) -> Result<Self, KernelError> {
        Self::with_condition_cap(kernel, centers, DEFAULT_CONDITION_CAP)
    }

    pub fn with_condition_cap(
        kernel: Kernel,
        centers: Vec<Vector>,
        cap: f64,
    ) -> Result<Self, KernelError> {
        if centers.is_empty() {
            return Err(KernelError::EmptyCenters);
        }
        let dim = centers[0].len();
        let mut min_separation = f64::INFINITY;
        for (i, c) in centers.iter().enumerate() {
            numerics::check_finite_vector(c)?;
            if c.len() != dim {
                return Err(KernelError::DimensionMismatch { expected: dim, got: c.len() });
            }
            for (j, other) in centers.iter().enumerate().skip(i + 1) {
                let d = (c - other).norm();
                if d <= 1e-12 {
                    return Err(KernelError::DuplicateCenters { i, j });
                }
                min_separation = min_separation.min(d);
            }
        }
        let n = centers.len();
        let mut gram = Matrix::zeros(n, n);
        for i in 0..n {
            gram[(i, i)] = 1.0;
            for j in (i + 1)..n {
                let v = kernel.eval(&centers[i], &centers[j])?;
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        let condition = numerics::condition_number_sym(&gram)?;
        if !(condition <= cap) {
            return Err(KernelError::IllConditioned { condition, cap });
        }
        let factor = SpdFactorization::with_jitter(&gram, GRAM_RETRY_JITTER)
            .map_err(|_| KernelError::IllConditioned { condition, cap })?;
        Ok(Self {
            kernel,
            centers,
            gram,
            factor,
            condition,
            min_separation: if n >= 2 { Some(min_separation) } else { None },
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn centers(&self) -> &[Vector] {
        &self.centers
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn grammian(&self) -> &Matrix {
        &self.gram
    }

    pub fn factorization(&self) -> &SpdFactorization {
        &self.factor
    }

    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    /// Minimum pairwise distance; `None` for a single center.
    pub fn min_separation(&self) -> Option<f64> {
        self.min_separation
    }

    /// Kernel vector [K(x_1, x), ..., K(x_n, x)]^T.
    pub fn kernel_vector(&self, x: &Vector) -> Result<Vector, KernelError> {
        if x.len() != self.dim() {
            return Err(KernelError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let mut k = Vector::zeros(self.len());
        for (i, c) in self.centers.iter().enumerate() {
            k[i] = self.kernel.eval(c, x)?;
        }
        Ok(k)
    }

    /// Interpolation coefficients of `f` on the centers: the unique alpha
    /// with K alpha = [f(x_1), ..., f(x_n)]^T. This is the projection of `f`
    /// onto the span of the center kernels, and the reference the estimator's
    /// coefficient error is measured against.
    pub fn target_coefficients<F>(&self, f: F) -> Result<Vector, KernelError>
    where
        F: Fn(&Vector) -> f64,
    {
        let rhs = Vector::from_iterator(self.len(), self.centers.iter().map(|c| f(c)));
        Ok(self.factor.solve(&rhs)?)
    }

    /// Evaluate the kernel expansion sum_i alpha_i K(x_i, x).
    pub fn f_hat_eval(&self, alpha: &Vector, x: &Vector) -> Result<f64, KernelError> {
        if alpha.len() != self.len() {
            return Err(KernelError::DimensionMismatch { expected: self.len(), got: alpha.len() });
        }
        Ok(alpha.dot(&self.kernel_vector(x)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v2(x: f64, y: f64) -> Vector {
        Vector::from_vec(vec![x, y])
    }

    fn matern(l: f64) -> Kernel {
        Kernel::new(KernelKind::SobolevMatern32, l).unwrap()
    }

    #[test]
    fn kernel_eval_values() {
        let k = matern(1.0);
        let x = v2(0.0, 0.0);
        assert_eq!(k.eval(&x, &x).unwrap(), 1.0);
        // r = sqrt(3), l = 1: (1 + 3) e^{-3} = 4 e^{-3}.
        let y = v2(3.0_f64.sqrt(), 0.0);
        assert!((k.eval(&x, &y).unwrap() - 4.0 * (-3.0_f64).exp()).abs() < 1e-15);

        let g = Kernel::new(KernelKind::GaussianRbf, 1.0).unwrap();
        let y = v2(1.0, 0.0);
        assert!((g.eval(&x, &y).unwrap() - (-1.0_f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn kernel_eval_dimension_mismatch() {
        let k = matern(1.0);
        let x = v2(0.0, 0.0);
        let y = Vector::from_vec(vec![0.0, 0.0, 0.0]);
        assert!(matches!(
            k.eval(&x, &y),
            Err(KernelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn kernel_vector_matches_eval() {
        let cs = CenterSet::new(
            matern(1.0),
            vec![v2(0.0, 0.0), v2(1.0, 0.0), v2(0.0, 1.0)],
        )
        .unwrap();
        let kv = cs.kernel_vector(&v2(0.0, 1.0)).unwrap();
        assert_eq!(kv[2], 1.0);
        // Point equidistant from the first two centers gets equal components.
        let kv = cs.kernel_vector(&v2(0.5, 2.0)).unwrap();
        assert!((kv[0] - kv[1]).abs() < 1e-15);
    }

    #[test]
    fn grammian_values() {
        let cs = CenterSet::new(matern(1.0), vec![v2(0.0, 0.0)]).unwrap();
        assert_eq!(cs.grammian()[(0, 0)], 1.0);

        // Two centers at distance sqrt(3) l: off-diagonal 4 e^{-3}.
        let cs = CenterSet::new(matern(1.0), vec![v2(0.0, 0.0), v2(3.0_f64.sqrt(), 0.0)]).unwrap();
        let off = 4.0 * (-3.0_f64).exp();
        assert!((cs.grammian()[(0, 1)] - off).abs() < 1e-15);
        assert!(cs.condition_number() >= 1.0);
    }

    #[test]
    fn duplicate_centers_rejected() {
        let r = CenterSet::new(matern(1.0), vec![v2(0.0, 0.0), v2(0.0, 0.0)]);
        assert!(matches!(r, Err(KernelError::DuplicateCenters { .. })));
    }

    #[test]
    fn target_coefficients_cases() {
        let cs = CenterSet::new(matern(1.0), vec![v2(0.0, 0.0), v2(3.0_f64.sqrt(), 0.0)]).unwrap();
        let zero = cs.target_coefficients(|_| 0.0).unwrap();
        assert_eq!(zero.norm(), 0.0);

        // Two-center system with values (1, 0): hand-solved 2x2 with
        // off-diagonal b = 4e^{-3}: alpha = (1, -b) / (1 - b^2).
        let alpha = cs
            .target_coefficients(|c| if c[0] == 0.0 { 1.0 } else { 0.0 })
            .unwrap();
        let b = 4.0 * (-3.0_f64).exp();
        assert!((alpha[0] - 1.0 / (1.0 - b * b)).abs() < 1e-12);
        assert!((alpha[1] + b / (1.0 - b * b)).abs() < 1e-12);

        // Single center, unit diagonal.
        let cs = CenterSet::new(matern(1.0), vec![v2(0.5, 0.5)]).unwrap();
        let alpha = cs.target_coefficients(|_| 3.5).unwrap();
        assert!((alpha[0] - 3.5).abs() < 1e-15);
    }

    #[test]
    fn interpolation_exactness_at_centers() {
        let centers: Vec<Vector> = (0..12)
            .map(|i| {
                let th = i as f64 / 12.0 * std::f64::consts::TAU;
                v2(th.cos(), th.sin())
            })
            .collect();
        let cs = CenterSet::new(matern(0.5), centers).unwrap();
        let f = |x: &Vector| x[0] * x[0] - 0.3 * x[1];
        let alpha = cs.target_coefficients(f).unwrap();
        for c in cs.centers() {
            assert!((cs.f_hat_eval(&alpha, c).unwrap() - f(c)).abs() <= 1e-8);
        }
    }

    #[test]
    fn f_hat_eval_cases() {
        let cs = CenterSet::new(matern(1.0), vec![v2(0.2, 0.0)]).unwrap();
        let zero = Vector::zeros(1);
        assert_eq!(cs.f_hat_eval(&zero, &v2(5.0, 1.0)).unwrap(), 0.0);
        let alpha = Vector::from_vec(vec![2.0]);
        assert_eq!(cs.f_hat_eval(&alpha, &v2(0.2, 0.0)).unwrap(), 2.0);
    }

    #[test]
    fn grammian_spd_on_random_center_sets() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let l = 0.5;
        for _ in 0..50 {
            let n = rng.gen_range(2..=30);
            let mut centers: Vec<Vector> = Vec::new();
            while centers.len() < n {
                let c = v2(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
                if centers.iter().all(|p| (p - &c).norm() >= 0.05 * l) {
                    centers.push(c);
                }
            }
            let cs = CenterSet::new(matern(l), centers).unwrap();
            let ev = crate::numerics::sym_eigenvalues(cs.grammian()).unwrap();
            assert!(ev[0] > 0.0);
        }
    }

    #[test]
    fn conditioning_grows_as_separation_shrinks() {
        // Same n and l, nested geometries with separation shrinking 10x.
        let l = 1.0;
        let mut prev = 1.0;
        for scale in [1.0, 0.1, 0.01] {
            let centers = vec![
                v2(0.0, 0.0),
                v2(scale, 0.0),
                v2(0.0, scale),
                v2(scale, scale),
            ];
            let cs = CenterSet::with_condition_cap(matern(l), centers, f64::INFINITY).unwrap();
            assert!(cs.condition_number() >= prev);
            prev = cs.condition_number();
        }
    }

    proptest! {
        #[test]
        fn kernel_symmetry(
            x0 in -5.0_f64..5.0, x1 in -5.0_f64..5.0,
            y0 in -5.0_f64..5.0, y1 in -5.0_f64..5.0,
            l in 0.05_f64..3.0,
        ) {
            for kind in [KernelKind::SobolevMatern32, KernelKind::GaussianRbf] {
                let k = Kernel::new(kind, l).unwrap();
                let x = v2(x0, x1);
                let y = v2(y0, y1);
                let a = k.eval(&x, &y).unwrap();
                let b = k.eval(&y, &x).unwrap();
                prop_assert_eq!(a, b);
                // Strictly positive in exact arithmetic; the Gaussian
                // underflows to zero for r >> l, so only require positivity
                // at moderate relative distances.
                prop_assert!((0.0..=1.0).contains(&a));
                if (&x - &y).norm() <= 5.0 * l {
                    prop_assert!(a > 0.0);
                }
            }
        }
    }
}
