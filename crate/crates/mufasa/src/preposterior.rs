//! Kriging-believer pre-posterior analysis.
//!
//! A candidate `(x, s)` is appended to the training data with its current
//! predicted mean as a believed, noise-free observation. Hyperparameters stay
//! frozen; only the GLS mean, the profile variance and the correlation factor
//! change.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kernel::{factor_with_ladder, MappedPoint};
use crate::linalg::Cholesky;
use crate::lvgp::{profile_terms, FittedLvgp};
use crate::scalar::{dot, Scalar};

/// Divisor of the updated profile variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaDivisor {
    /// Size of the training set before augmentation.
    #[default]
    Original,
    /// Size of the augmented set.
    Augmented,
}

impl SigmaDivisor {
    fn value(self, n: usize) -> usize {
        match self {
            SigmaDivisor::Original => n,
            SigmaDivisor::Augmented => n + 1,
        }
    }
}

/// The base model plus one believed observation.
#[derive(Debug, Clone)]
pub struct PrePosteriorModel<'a, T = f64> {
    base: &'a FittedLvgp<T>,
    candidate: MappedPoint<T>,
    candidate_x: Vec<T>,
    candidate_source: usize,
    believed_y: T,
    factor: Cholesky<T>,
    mu_new: T,
    sigma2_new: T,
}

impl<'a, T: Scalar> PrePosteriorModel<'a, T> {
    pub fn augment(base: &'a FittedLvgp<T>, x: &[T], source: usize, divisor: SigmaDivisor) -> Result<Self> {
        let believed_y = base.predict(x, source)?.mean;
        let candidate = base.map(x, source)?;
        let column = base.correlations(&candidate);
        let jitter = base.factored().jitter();
        let chol = &base.factored().chol;
        let factor = match chol.bordered(&column, T::one() + jitter) {
            Some(f) => f,
            None => {
                // the candidate duplicates a training point closely enough
                // that the bordered pivot vanished; refactor with the ladder
                let n = base.points().len() + 1;
                let mut all: Vec<&MappedPoint<T>> = base.points().iter().collect();
                all.push(&candidate);
                let mut r = vec![T::zero(); n * n];
                for i in 0..n {
                    r[i * n + i] = T::one();
                    for j in 0..i {
                        let v = base.correlation_between(all[i], all[j]);
                        r[i * n + j] = v;
                        r[j * n + i] = v;
                    }
                }
                factor_with_ladder(r, n, jitter)?.chol
            }
        };
        let mut ys = base.standardized_outputs().to_vec();
        ys.push(base.normalization().standardize(believed_y));
        let terms = profile_terms(&factor, &ys);
        let sigma2_new =
            if base.is_constant() { T::zero() } else { terms.quad / T::of(divisor.value(base.points().len()) as f64) };
        Ok(Self {
            base,
            candidate,
            candidate_x: x.to_vec(),
            candidate_source: source,
            believed_y,
            factor,
            mu_new: terms.mu,
            sigma2_new,
        })
    }

    pub fn base(&self) -> &FittedLvgp<T> {
        self.base
    }

    pub fn candidate(&self) -> (&[T], usize) {
        (&self.candidate_x, self.candidate_source)
    }

    pub fn mapped_candidate(&self) -> &MappedPoint<T> {
        &self.candidate
    }

    /// Believed output in original units.
    pub fn believed_y(&self) -> T {
        self.believed_y
    }

    /// Updated GLS mean, standardized units.
    pub fn mu_new(&self) -> T {
        self.mu_new
    }

    /// Updated profile variance, standardized units.
    pub fn sigma2_new(&self) -> T {
        self.sigma2_new
    }

    pub fn augmented_factor(&self) -> &Cholesky<T> {
        &self.factor
    }

    /// `1 − r̃ᵀ R_new⁻¹ r̃` at the query, before scaling by the process variance.
    pub fn structural_term(&self, x: &[T], source: usize) -> Result<T> {
        let point = self.base.map(x, source)?;
        let mut r = self.base.correlations(&point);
        r.push(self.base.correlation_between(&point, &self.candidate));
        self.factor.forward_in_place(&mut r);
        Ok(T::one() - dot(&r, &r))
    }

    /// Pre-posterior predictive variance in original output units.
    pub fn variance(&self, x: &[T], source: usize) -> Result<T> {
        let s = self.base.normalization().y_scale;
        let k = self.structural_term(x, source)?;
        Ok((self.sigma2_new * k).max(T::zero()) * s * s)
    }
}

/// Structural term of the base model, `1 − r̃ᵀ R⁻¹ r̃`.
pub fn base_structural_term<T: Scalar>(model: &FittedLvgp<T>, x: &[T], source: usize) -> Result<T> {
    let point = model.map(x, source)?;
    let v = model.factored().chol.forward(&model.correlations(&point));
    Ok(T::one() - dot(&v, &v))
}

/// Pre-posterior variance at one fixed query for many candidates, each in
/// `O(n²)` via a bordered-factor update instead of a fresh factorization.
#[derive(Debug, Clone)]
pub struct VarianceProbe<'a, T = f64> {
    model: &'a FittedLvgp<T>,
    target: MappedPoint<T>,
    target_x: Vec<T>,
    target_source: usize,
    u_target: Vec<T>,
    u_ones: Vec<T>,
    residual: Vec<T>,
    ones_norm: T,
    quad: T,
    divisor: SigmaDivisor,
    current: T,
}

impl<'a, T: Scalar> VarianceProbe<'a, T> {
    pub fn new(model: &'a FittedLvgp<T>, x: &[T], source: usize, divisor: SigmaDivisor) -> Result<Self> {
        let target = model.map(x, source)?;
        let chol = &model.factored().chol;
        let u_target = chol.forward(&model.correlations(&target));
        let n = model.points().len();
        let u_ones = chol.forward(&vec![T::one(); n]);
        let terms = profile_terms(chol, model.standardized_outputs());
        let s = model.normalization().y_scale;
        let current = (model.sigma2_hat() * (T::one() - dot(&u_target, &u_target))).max(T::zero()) * s * s;
        Ok(Self {
            model,
            target,
            target_x: x.to_vec(),
            target_source: source,
            ones_norm: dot(&u_ones, &u_ones),
            u_target,
            u_ones,
            quad: terms.quad,
            residual: terms.whitened,
            divisor,
            current,
        })
    }

    /// Variance at the target under the current model, original units.
    pub fn current_variance(&self) -> T {
        self.current
    }

    /// Pre-posterior variance at the target after believing `(x, source)`.
    pub fn variance_after(&self, x: &[T], source: usize) -> Result<T> {
        let u = self.model.normalization().to_unit(x)?;
        self.model.training_set().check_label(source)?;
        match self.fast(u, source) {
            Some(v) => Ok(v),
            None => PrePosteriorModel::augment(self.model, x, source, self.divisor)?
                .variance(&self.target_x, self.target_source),
        }
    }

    /// Same as [`variance_after`](Self::variance_after) for a candidate given
    /// in normalized coordinates, skipping input validation.
    pub(crate) fn variance_after_unit(&self, u: &[T], source: usize) -> T {
        match self.fast(u.to_vec(), source) {
            Some(v) => v,
            None => {
                let x = self.model.normalization().from_unit(u);
                self.variance_after(&x, source).unwrap_or(self.current)
            }
        }
    }

    fn fast(&self, u: Vec<T>, source: usize) -> Option<T> {
        let model = self.model;
        if model.is_constant() {
            return Some(T::zero());
        }
        let cand = model.map_unit(u, source);
        let r_c = model.correlations(&cand);
        let chol = &model.factored().chol;
        let v = chol.forward(&r_c);
        let d2 = T::one() + model.factored().jitter() - dot(&v, &v);
        if !(d2 > T::zero()) {
            return None;
        }
        let d = d2.sqrt();
        // last entries of L_new⁻¹ applied to 1, to the believed outputs and to r̃
        let a = (T::one() - dot(&v, &self.u_ones)) / d;
        let t = (dot(&r_c, model.alpha_weights()) - dot(&v, &self.residual)) / d;
        let k = model.correlation_between(&self.target, &cand);
        let w = (k - dot(&v, &self.u_target)) / d;
        let quad = self.quad + t * t - (a * t) * (a * t) / (self.ones_norm + a * a);
        let n = model.points().len();
        let sigma2 = quad / T::of(self.divisor.value(n) as f64);
        let structural = T::one() - dot(&self.u_target, &self.u_target) - w * w;
        let s = model.normalization().y_scale;
        Some((sigma2 * structural).max(T::zero()) * s * s)
    }
}
