//! Concentrated (profile) log-likelihood and its gradient in the internal
//! coordinates `θ = (log φ, free latent coordinates)`.

use crate::linalg::Cholesky;
use crate::scalar::{dot, Scalar};

/// Number of free latent coordinates for `l` sources once source 1 is pinned
/// to the origin and source 2 to the nonnegative first axis.
pub fn latent_param_count(l: usize) -> usize {
    match l {
        0 | 1 => 0,
        2 => 1,
        _ => 2 * l - 3,
    }
}

/// Latent coordinates of every source from the free parameters.
pub fn unpack_latent<T: Scalar>(free: &[T], l: usize) -> Vec<[T; 2]> {
    debug_assert_eq!(free.len(), latent_param_count(l));
    let mut z = vec![[T::zero(); 2]; l];
    if l >= 2 {
        z[1][0] = free[0];
    }
    for s in 2..l {
        z[s] = [free[2 * s - 3], free[2 * s - 2]];
    }
    z
}

/// Inverse of [`unpack_latent`]. Coordinates are assumed already anchored.
pub fn pack_latent<T: Scalar>(z: &[[T; 2]]) -> Vec<T> {
    let l = z.len();
    let mut free = Vec::with_capacity(latent_param_count(l));
    if l >= 2 {
        free.push(z[1][0]);
    }
    for p in z.iter().skip(2) {
        free.extend_from_slice(p);
    }
    free
}

/// Terms the profile formulas share.
#[derive(Debug, Clone)]
pub(crate) struct ProfileTerms<T> {
    pub mu: T,
    pub quad: T,
    /// `L⁻¹ (y − μ 1)`.
    pub whitened: Vec<T>,
}

/// Closed-form GLS mean and residual quadratic form from a factor.
pub(crate) fn profile_terms<T: Scalar>(chol: &Cholesky<T>, ys: &[T]) -> ProfileTerms<T> {
    let n = ys.len();
    let u1 = chol.forward(&vec![T::one(); n]);
    let uy = chol.forward(ys);
    let mu = dot(&u1, &uy) / dot(&u1, &u1);
    let whitened: Vec<T> = uy.iter().zip(&u1).map(|(&a, &b)| a - mu * b).collect();
    let quad = dot(&whitened, &whitened);
    ProfileTerms { mu, quad, whitened }
}

/// Precomputed pairwise data for repeated likelihood evaluations on one
/// training set.
pub(crate) struct Profile<'a, T> {
    n: usize,
    q: usize,
    l: usize,
    ys: &'a [T],
    sources: Vec<usize>,
    /// Squared coordinate differences for every pair `j < i`, packed.
    sqdiff: Vec<T>,
    jitter: T,
}

#[inline]
fn pair(i: usize, j: usize) -> usize {
    i * (i - 1) / 2 + j
}

impl<'a, T: Scalar> Profile<'a, T> {
    /// `units` are normalized inputs, `sources` are 1-based labels.
    pub fn new(units: &[Vec<T>], sources: &[usize], l: usize, ys: &'a [T], jitter: T) -> Self {
        let n = units.len();
        let q = units.first().map_or(0, Vec::len);
        let mut sqdiff = Vec::with_capacity(n * n.saturating_sub(1) / 2 * q);
        for i in 1..n {
            for j in 0..i {
                for k in 0..q {
                    let d = units[i][k] - units[j][k];
                    sqdiff.push(d * d);
                }
            }
        }
        Self { n, q, l, ys, sources: sources.iter().map(|s| s - 1).collect(), sqdiff, jitter }
    }

    /// `(−log-likelihood, −gradient)` at `theta`, or `None` if the matrix
    /// cannot be factored or the profile variance vanishes.
    pub fn negative(&self, theta: &[f64], with_grad: bool) -> Option<(f64, Vec<f64>)> {
        let (n, q) = (self.n, self.q);
        let phi: Vec<T> = theta[..q].iter().map(|&t| T::of(t.exp())).collect();
        let free: Vec<T> = theta[q..].iter().map(|&t| T::of(t)).collect();
        let z = unpack_latent(&free, self.l);

        let mut r = vec![T::zero(); n * n];
        for i in 0..n {
            r[i * n + i] = T::one() + self.jitter;
            let zi = z[self.sources[i]];
            for j in 0..i {
                let zj = z[self.sources[j]];
                let base = pair(i, j) * q;
                let mut e = T::zero();
                for k in 0..q {
                    e = e + phi[k] * self.sqdiff[base + k];
                }
                let d0 = zi[0] - zj[0];
                let d1 = zi[1] - zj[1];
                e = e + d0 * d0 + d1 * d1;
                let v = (-e).exp();
                r[i * n + j] = v;
                r[j * n + i] = v;
            }
        }
        let chol = Cholesky::factor(&r, n)?;
        let terms = profile_terms(&chol, self.ys);
        let sigma2 = terms.quad / T::of(n as f64);
        if !(sigma2 > T::zero()) || !sigma2.is_finite() {
            return None;
        }
        let loglik = -T::of(n as f64) * sigma2.ln() - chol.log_det();
        let value = -loglik.f64();
        if !value.is_finite() {
            return None;
        }
        if !with_grad {
            return Some((value, Vec::new()));
        }

        let mut alpha = terms.whitened.clone();
        chol.backward_in_place(&mut alpha);
        let inv = chol.inverse();
        let two = T::of(2.0);
        let mut g_phi = vec![T::zero(); q];
        let mut g_z = vec![[T::zero(); 2]; self.l];
        for i in 1..n {
            let si = self.sources[i];
            for j in 0..i {
                let sj = self.sources[j];
                // both (i, j) and (j, i) contribute
                let w = two * (alpha[i] * alpha[j] / sigma2 - inv[i * n + j]) * r[i * n + j];
                let base = pair(i, j) * q;
                for k in 0..q {
                    g_phi[k] = g_phi[k] - w * phi[k] * self.sqdiff[base + k];
                }
                if si != sj {
                    for c in 0..2 {
                        let d = two * (z[si][c] - z[sj][c]) * w;
                        g_z[si][c] = g_z[si][c] - d;
                        g_z[sj][c] = g_z[sj][c] + d;
                    }
                }
            }
        }
        let mut grad: Vec<f64> = g_phi.iter().map(|g| -g.f64()).collect();
        grad.extend(pack_latent(&g_z).iter().map(|g| -g.f64()));
        Some((value, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_packing_round_trips() {
        for l in 1..6 {
            let free: Vec<f64> = (0..latent_param_count(l)).map(|i| i as f64 * 0.3 + 0.1).collect();
            let z = unpack_latent(&free, l);
            assert_eq!(z[0], [0.0, 0.0]);
            if l >= 2 {
                assert_eq!(z[1][1], 0.0);
            }
            assert_eq!(pack_latent(&z), free);
        }
    }

    fn fixture() -> (Vec<Vec<f64>>, Vec<usize>, Vec<f64>) {
        let xs: Vec<Vec<f64>> = (0..9).map(|i| vec![(i as f64 * 0.37) % 1.0, (i as f64 * 0.61) % 1.0]).collect();
        let sources = vec![1, 2, 3, 1, 2, 3, 1, 2, 3];
        let ys: Vec<f64> = xs.iter().zip(&sources).map(|(x, &s)| (3.0 * x[0]).sin() + x[1] * s as f64 * 0.3).collect();
        (xs, sources, ys)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (xs, sources, ys) = fixture();
        let p = Profile::new(&xs, &sources, 3, &ys, 1e-8);
        let theta = [0.4, -0.3, 0.5, 0.2, -0.7];
        let (_, g) = p.negative(&theta, true).unwrap();
        for k in 0..theta.len() {
            let h = 1e-6;
            let mut a = theta;
            let mut b = theta;
            a[k] += h;
            b[k] -= h;
            let fd = (p.negative(&a, false).unwrap().0 - p.negative(&b, false).unwrap().0) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-5 * (1.0 + fd.abs()), "component {k}: {fd} vs {}", g[k]);
        }
    }
}
