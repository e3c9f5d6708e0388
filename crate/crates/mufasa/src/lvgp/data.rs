use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Relative slack allowed when checking that a point lies within bounds.
const BOUND_SLACK: f64 = 1e-10;

/// Observations from every fidelity source, in original units.
///
/// Source labels run from 1 to `n_sources`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrainingSet<T = f64> {
    pub inputs: Vec<Vec<T>>,
    pub sources: Vec<usize>,
    pub outputs: Vec<T>,
    pub bounds: Vec<(T, T)>,
    pub hf_label: usize,
    pub n_sources: usize,
}

impl<T: Scalar> TrainingSet<T> {
    /// Empty set over `bounds` with labels `1..=n_sources`.
    pub fn new(bounds: Vec<(T, T)>, n_sources: usize, hf_label: usize) -> Result<Self> {
        if n_sources == 0 {
            return Err(invalid("at least one source is required"));
        }
        if hf_label == 0 || hf_label > n_sources {
            return Err(invalid(format!("hf_label {hf_label} outside 1..={n_sources}")));
        }
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(invalid(format!("bounds of input {i} are not an interval")));
            }
        }
        Ok(Self { inputs: Vec::new(), sources: Vec::new(), outputs: Vec::new(), bounds, hf_label, n_sources })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn push(&mut self, x: Vec<T>, source: usize, y: T) -> Result<()> {
        self.check_point(&x)?;
        self.check_label(source)?;
        if !y.is_finite() {
            return Err(invalid("observed output is not finite"));
        }
        self.inputs.push(x);
        self.sources.push(source);
        self.outputs.push(y);
        Ok(())
    }

    pub fn check_label(&self, source: usize) -> Result<()> {
        if source == 0 || source > self.n_sources {
            return Err(invalid(format!("source label {source} outside 1..={}", self.n_sources)));
        }
        Ok(())
    }

    pub fn check_point(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        for (i, (&v, &(lo, hi))) in x.iter().zip(&self.bounds).enumerate() {
            let slack = (hi - lo) * T::of(BOUND_SLACK);
            if !(v >= lo - slack && v <= hi + slack) {
                return Err(invalid(format!("input {i} = {v} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Rows observed from `source`.
    pub fn count_of(&self, source: usize) -> usize {
        self.sources.iter().filter(|&&s| s == source).count()
    }

    /// Rows of one source relabelled as a single-source set.
    pub fn only_source(&self, source: usize) -> Result<Self> {
        self.check_label(source)?;
        let mut out = Self::new(self.bounds.clone(), 1, 1)?;
        for ((x, &s), &y) in self.inputs.iter().zip(&self.sources).zip(&self.outputs) {
            if s == source {
                out.push(x.clone(), 1, y)?;
            }
        }
        Ok(out)
    }

    /// Whether a row of `source` lies within `tol` of `x` in unit-box coordinates.
    pub fn has_near(&self, x: &[T], source: usize, tol: f64) -> bool {
        self.inputs.iter().zip(&self.sources).any(|(row, &s)| {
            s == source
                && row
                    .iter()
                    .zip(x)
                    .zip(&self.bounds)
                    .all(|((&a, &b), &(lo, hi))| ((a - b) / (hi - lo)).abs().f64() <= tol)
        })
    }

    /// Best (smallest) observed output of `source`.
    pub fn best_of(&self, source: usize) -> Option<T> {
        self.sources
            .iter()
            .zip(&self.outputs)
            .filter(|(&s, _)| s == source)
            .map(|(_, &y)| y)
            .fold(None, |acc, y| Some(acc.map_or(y, |a: T| a.min(y))))
    }

    pub(crate) fn validate_for_fit(&self) -> Result<()> {
        if self.len() < 2 {
            return Err(invalid(format!("need at least 2 training rows, got {}", self.len())));
        }
        Ok(())
    }

    /// Convert every value to another scalar type.
    pub fn cast<U: Scalar>(&self) -> TrainingSet<U> {
        let c = |v: T| U::of(v.f64());
        TrainingSet {
            inputs: self.inputs.iter().map(|r| r.iter().map(|&v| c(v)).collect()).collect(),
            sources: self.sources.clone(),
            outputs: self.outputs.iter().map(|&v| c(v)).collect(),
            bounds: self.bounds.iter().map(|&(a, b)| (c(a), c(b))).collect(),
            hf_label: self.hf_label,
            n_sources: self.n_sources,
        }
    }
}

/// Affine maps between original units and the normalized space the model
/// works in: inputs to `[0, 1]`, outputs to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Normalization<T = f64> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub y_mean: T,
    pub y_scale: T,
}

/// Output spread below which the data are treated as constant.
pub const CONSTANT_OUTPUT_STD: f64 = 1e-12;

impl<T: Scalar> Normalization<T> {
    pub fn from_data(data: &TrainingSet<T>) -> Self {
        let n = T::of(data.len().max(1) as f64);
        let mean = data.outputs.iter().fold(T::zero(), |a, &y| a + y) / n;
        let var = data.outputs.iter().fold(T::zero(), |a, &y| a + (y - mean) * (y - mean)) / n;
        let std = var.sqrt();
        let scale = if std.f64() < CONSTANT_OUTPUT_STD { T::one() } else { std };
        Self {
            lower: data.bounds.iter().map(|b| b.0).collect(),
            upper: data.bounds.iter().map(|b| b.1).collect(),
            y_mean: mean,
            y_scale: scale,
        }
    }

    pub fn to_unit(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.lower.len() {
            return Err(Error::DimensionMismatch { expected: self.lower.len(), got: x.len() });
        }
        let mut out = Vec::with_capacity(x.len());
        for (i, ((&v, &lo), &hi)) in x.iter().zip(&self.lower).zip(&self.upper).enumerate() {
            let u = (v - lo) / (hi - lo);
            let slack = T::of(BOUND_SLACK);
            if !(u >= -slack && u <= T::one() + slack) {
                return Err(invalid(format!("input {i} = {v} outside [{lo}, {hi}]")));
            }
            out.push(u.max(T::zero()).min(T::one()));
        }
        Ok(out)
    }

    pub fn from_unit(&self, u: &[T]) -> Vec<T> {
        u.iter().zip(&self.lower).zip(&self.upper).map(|((&t, &lo), &hi)| lo + t * (hi - lo)).collect()
    }

    pub fn standardize(&self, y: T) -> T {
        (y - self.y_mean) / self.y_scale
    }

    pub fn destandardize(&self, y: T) -> T {
        self.y_mean + self.y_scale * y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set() -> TrainingSet {
        let mut t = TrainingSet::new(vec![(-2.0, 3.0)], 3, 1).unwrap();
        t.push(vec![0.0], 1, 1.0).unwrap();
        t.push(vec![1.0], 2, 0.5).unwrap();
        t.push(vec![-2.0], 2, 0.1).unwrap();
        t
    }

    #[test]
    fn rejects_out_of_bounds_and_bad_labels() {
        let mut t = set();
        assert!(t.push(vec![3.5], 1, 0.0).is_err());
        assert!(t.push(vec![0.0], 4, 0.0).is_err());
        assert!(t.push(vec![0.0], 0, 0.0).is_err());
        assert!(t.push(vec![0.0, 1.0], 1, 0.0).is_err());
        assert!(TrainingSet::<f64>::new(vec![(1.0, 1.0)], 1, 1).is_err());
        assert!(TrainingSet::<f64>::new(vec![(0.0, 1.0)], 2, 3).is_err());
    }

    #[test]
    fn only_source_relabels() {
        let t = set().only_source(2).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.sources, vec![1, 1]);
        assert_eq!(t.n_sources, 1);
    }

    #[test]
    fn normalization_round_trips() {
        let t = set();
        let n = Normalization::from_data(&t);
        let u = n.to_unit(&[0.5]).unwrap();
        assert!((u[0] - 0.5).abs() < 1e-15);
        assert!((n.from_unit(&u)[0] - 0.5).abs() < 1e-15);
        assert!((n.destandardize(n.standardize(0.7)) - 0.7).abs() < 1e-15);
        assert!(n.to_unit(&[3.1]).is_err());
    }

    #[test]
    fn near_and_best() {
        let t = set();
        assert!(t.has_near(&[1.0 + 1e-7], 2, 1e-6));
        assert!(!t.has_near(&[1.0], 1, 1e-6));
        assert_eq!(t.best_of(2), Some(0.1));
        assert_eq!(t.best_of(3), None);
    }
}
