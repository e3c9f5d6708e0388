//! Gaussian correlation over quantitative inputs and 2-D latent source coordinates.
//!
//! `r(h, h') = exp(-Σ φᵢ (xᵢ - x'ᵢ)² - ‖z - z'‖²)`, with the latent block at unit scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::scalar::Scalar;

/// Largest jitter the ladder escalates to before giving up.
pub const MAX_JITTER: f64 = 1e-4;

/// A training or query point after normalization and latent mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MappedPoint<T = f64> {
    pub x: Vec<T>,
    pub z: [T; 2],
}

impl<T: Scalar> MappedPoint<T> {
    pub fn new(x: Vec<T>, z: [T; 2]) -> Self {
        Self { x, z }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct KernelParams<T = f64> {
    pub phi: Vec<T>,
    pub jitter: T,
}

impl<T: Scalar> KernelParams<T> {
    pub fn new(phi: Vec<T>, jitter: T) -> Result<Self> {
        if phi.iter().any(|p| !(*p > T::zero()) || !p.is_finite()) {
            return Err(Error::InvalidInput("scale factors must be positive and finite".into()));
        }
        if jitter < T::zero() || jitter >= T::one() {
            return Err(Error::InvalidInput("jitter must lie in [0, 1)".into()));
        }
        Ok(Self { phi, jitter })
    }

    pub fn dim(&self) -> usize {
        self.phi.len()
    }
}

/// Negative log-correlation, `Σ φᵢ Δxᵢ² + ‖Δz‖²`, without validation.
#[inline]
pub(crate) fn distance<T: Scalar>(a: &MappedPoint<T>, b: &MappedPoint<T>, phi: &[T]) -> T {
    let mut s = T::zero();
    for ((&xa, &xb), &p) in a.x.iter().zip(&b.x).zip(phi) {
        let d = xa - xb;
        s = s + p * d * d;
    }
    let d0 = a.z[0] - b.z[0];
    let d1 = a.z[1] - b.z[1];
    s + d0 * d0 + d1 * d1
}

pub fn correlation<T: Scalar>(a: &MappedPoint<T>, b: &MappedPoint<T>, params: &KernelParams<T>) -> Result<T> {
    check_dim(a, params.dim())?;
    check_dim(b, params.dim())?;
    Ok((-distance(a, b, &params.phi)).exp())
}

fn check_dim<T>(p: &MappedPoint<T>, q: usize) -> Result<()> {
    if p.x.len() != q {
        return Err(Error::DimensionMismatch { expected: q, got: p.x.len() });
    }
    Ok(())
}

/// Cholesky factor of `R + jitter·I`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredCorrelation<T = f64> {
    pub(crate) chol: Cholesky<T>,
    pub(crate) jitter: T,
    pub(crate) log_det: T,
}

impl<T: Scalar> FactoredCorrelation<T> {
    pub fn order(&self) -> usize {
        self.chol.order()
    }

    /// Jitter actually used after any escalation.
    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn log_det(&self) -> T {
        self.log_det
    }

    pub fn factor(&self) -> &Cholesky<T> {
        &self.chol
    }

    /// `(R + jitter·I)⁻¹ rhs`.
    pub fn solve(&self, rhs: &[T]) -> Result<Vec<T>> {
        if rhs.len() != self.order() {
            return Err(Error::DimensionMismatch { expected: self.order(), got: rhs.len() });
        }
        Ok(self.chol.solve(rhs))
    }

    /// Same as [`solve`](Self::solve) for a row-major `n × cols` right-hand side.
    pub fn solve_matrix(&self, rhs: &[T], cols: usize) -> Result<Vec<T>> {
        if cols == 0 || rhs.len() != self.order() * cols {
            return Err(Error::DimensionMismatch { expected: self.order() * cols.max(1), got: rhs.len() });
        }
        Ok(self.chol.solve_matrix(rhs, cols))
    }

    pub(crate) fn from_cholesky(chol: Cholesky<T>, jitter: T) -> Self {
        let log_det = chol.log_det();
        Self { chol, jitter, log_det }
    }
}

/// Dense correlation matrix `R` (no jitter), row-major.
pub fn correlation_matrix<T: Scalar>(points: &[MappedPoint<T>], params: &KernelParams<T>) -> Result<Vec<T>> {
    let n = points.len();
    for p in points {
        check_dim(p, params.dim())?;
    }
    let mut r = vec![T::zero(); n * n];
    for i in 0..n {
        r[i * n + i] = T::one();
        for j in 0..i {
            let v = (-distance(&points[i], &points[j], &params.phi)).exp();
            r[i * n + j] = v;
            r[j * n + i] = v;
        }
    }
    Ok(r)
}

/// Factor `R + jitter·I`, escalating the jitter tenfold on failure up to
/// [`MAX_JITTER`].
pub fn build_factored<T: Scalar>(
    points: &[MappedPoint<T>],
    params: &KernelParams<T>,
) -> Result<FactoredCorrelation<T>> {
    if points.is_empty() {
        return Err(Error::InvalidInput("at least one point is required".into()));
    }
    let r = correlation_matrix(points, params)?;
    factor_with_ladder(r, points.len(), params.jitter)
}

/// Jitter values tried, in order, starting from `start`.
pub fn jitter_ladder<T: Scalar>(start: T) -> Vec<T> {
    let max = T::of(MAX_JITTER);
    let mut ladder = vec![start];
    let mut j = start.max(T::jitter_floor());
    if j > start {
        ladder.push(j);
    }
    while j < max * T::of(0.999) {
        j = j * T::of(10.0);
        if j >= max * T::of(0.999) {
            j = max;
        }
        ladder.push(j);
    }
    ladder
}

pub(crate) fn factor_with_ladder<T: Scalar>(mut r: Vec<T>, n: usize, start: T) -> Result<FactoredCorrelation<T>> {
    let ladder = jitter_ladder(start);
    let mut applied = T::zero();
    for &j in &ladder {
        for i in 0..n {
            r[i * n + i] = r[i * n + i] - applied + j;
        }
        applied = j;
        if let Some(chol) = Cholesky::factor(&r, n) {
            return Ok(FactoredCorrelation::from_cholesky(chol, j));
        }
    }
    Err(Error::IllConditioned { ladder: ladder.iter().map(|j| j.f64()).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: &[f64], z: [f64; 2]) -> MappedPoint {
        MappedPoint::new(x.to_vec(), z)
    }

    #[test]
    fn identical_points_correlate_fully() {
        let params = KernelParams::new(vec![2.5, 0.1], 0.0).unwrap();
        let a = p(&[0.3, 0.9], [0.4, -1.0]);
        assert_eq!(correlation(&a, &a, &params).unwrap(), 1.0);
    }

    #[test]
    fn unit_distance_in_x() {
        let params = KernelParams::new(vec![1.0], 0.0).unwrap();
        let v = correlation(&p(&[0.0], [0.0, 0.0]), &p(&[1.0], [0.0, 0.0]), &params).unwrap();
        // e⁻¹ written out to avoid reusing exp()
        assert!((v - 0.367_879_441_171_442_3).abs() < 1e-15);
    }

    #[test]
    fn latent_only_kernel() {
        let params = KernelParams::<f64>::new(vec![], 0.0).unwrap();
        let v = correlation(&p(&[], [0.0, 0.0]), &p(&[], [1.0, 0.0]), &params).unwrap();
        assert!((v - 0.367_879_441_171_442_3).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let params = KernelParams::new(vec![1.0, 1.0], 0.0).unwrap();
        let err = correlation(&p(&[0.0], [0.0, 0.0]), &p(&[0.0], [0.0, 0.0]), &params);
        assert_eq!(err, Err(Error::DimensionMismatch { expected: 2, got: 1 }));
    }

    #[test]
    fn rejects_nonpositive_phi() {
        assert!(KernelParams::new(vec![0.0], 1e-8).is_err());
        assert!(KernelParams::new(vec![-1.0], 1e-8).is_err());
    }

    #[test]
    fn single_point_factor() {
        let params = KernelParams::new(vec![1.0], 1e-6).unwrap();
        let fc = build_factored(&[p(&[0.5], [0.0, 0.0])], &params).unwrap();
        assert_eq!(fc.order(), 1);
        assert!((fc.log_det() - (1.0f64 + 1e-6).ln()).abs() < 1e-15);
    }

    #[test]
    fn identity_solve_is_noop() {
        let params = KernelParams::new(vec![1.0], 0.0).unwrap();
        let fc = build_factored(&[p(&[0.5], [0.0, 0.0])], &params).unwrap();
        assert_eq!(fc.solve(&[3.25]).unwrap(), vec![3.25]);
        assert!(fc.solve(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn duplicate_points_need_jitter() {
        let pts = vec![p(&[0.2], [0.0, 0.0]), p(&[0.2], [0.0, 0.0])];
        let fc = build_factored(&pts, &KernelParams::new(vec![1.0], 1e-6).unwrap()).unwrap();
        assert_eq!(fc.jitter(), 1e-6);
        // eigenvalues of [[1+j, 1], [1, 1+j]] are j and 2+j
        let smallest = 1e-6;
        let det = fc.log_det().exp();
        assert!((det / (2.0 + 1e-6) - smallest).abs() < 1e-12);
    }

    #[test]
    fn ladder_escalates_when_zero_jitter_fails() {
        let pts = vec![p(&[0.2], [0.0, 0.0]), p(&[0.2], [0.0, 0.0])];
        let fc = build_factored(&pts, &KernelParams::new(vec![1.0], 0.0).unwrap()).unwrap();
        assert!(fc.jitter() > 0.0);
        assert!(fc.jitter() <= MAX_JITTER);
    }

    #[test]
    fn ladder_ends_at_max() {
        let l = jitter_ladder(1e-8f64);
        assert_eq!(l.first(), Some(&1e-8));
        assert_eq!(*l.last().unwrap(), MAX_JITTER);
        assert_eq!(l.len(), 5);
    }
}
