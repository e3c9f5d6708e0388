//! Multi-fidelity latent-variable Gaussian process.
//!
//! The source label of each observation is mapped to a learned point in a
//! 2-D latent plane, and a single Gaussian process is fitted over
//! `(x, z(source))` by maximizing the profile likelihood.

mod data;
mod likelihood;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernel::{distance, factor_with_ladder, FactoredCorrelation, MappedPoint, MAX_JITTER};
use crate::optim::{bfgs_bounded, BfgsOptions, Minimum};
use crate::qmc::Sobol;
use crate::scalar::{dot, Scalar};

pub use data::{Normalization, TrainingSet, CONSTANT_OUTPUT_STD};
pub use likelihood::{latent_param_count, pack_latent, unpack_latent};
pub(crate) use likelihood::{profile_terms, Profile};

/// Hyperparameters in the coordinates the optimizer works in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub log_phi: Vec<f64>,
    /// Anchored latent coordinates, one row per source.
    pub latent: Vec<[f64; 2]>,
}

impl Hyperparameters {
    fn theta(&self) -> Vec<f64> {
        let mut t = self.log_phi.clone();
        t.extend(pack_latent(&self.latent));
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub restarts: usize,
    pub log_phi_bounds: (f64, f64),
    /// Free latent coordinates are searched in `[-latent_bound, latent_bound]`.
    pub latent_bound: f64,
    pub jitter: f64,
    pub optimizer: BfgsOptions,
    /// Previous optimum; adds one restart from this point when dimensions agree.
    pub warm_start: Option<Hyperparameters>,
    pub parallel: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            log_phi_bounds: (-6.0, 6.0),
            latent_bound: 3.0,
            jitter: 1e-8,
            optimizer: BfgsOptions::default(),
            warm_start: None,
            parallel: true,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if self.restarts == 0 && self.warm_start.is_none() {
            return Err(Error::Config("at least one restart is required".into()));
        }
        let (lo, hi) = self.log_phi_bounds;
        if !(lo < hi) || !(self.latent_bound > 0.0) {
            return Err(Error::Config("empty hyperparameter search box".into()));
        }
        if !(0.0..MAX_JITTER).contains(&self.jitter) {
            return Err(Error::Config(format!("jitter must lie in [0, {MAX_JITTER})")));
        }
        Ok(())
    }

    fn search_box(&self, q: usize, l: usize) -> (Vec<f64>, Vec<f64>) {
        let m = latent_param_count(l);
        let mut lower = vec![self.log_phi_bounds.0; q];
        let mut upper = vec![self.log_phi_bounds.1; q];
        lower.extend(std::iter::repeat_n(-self.latent_bound, m));
        upper.extend(std::iter::repeat_n(self.latent_bound, m));
        if m > 0 {
            // source 2 lives on the nonnegative first axis
            lower[q] = 0.0;
        }
        (lower, upper)
    }
}

/// Outcome of one optimizer restart.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartOutcome {
    pub start: Vec<f64>,
    pub theta: Option<Vec<f64>>,
    /// Achieved profile log-likelihood, if the restart produced a valid model.
    pub log_likelihood: Option<f64>,
    pub evals: usize,
}

/// Predictive mean and variance in original output units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Prediction<T = f64> {
    pub mean: T,
    pub variance: T,
}

impl<T: Scalar> Prediction<T> {
    pub fn std_dev(&self) -> T {
        self.variance.max(T::zero()).sqrt()
    }
}

/// A fitted model. Immutable once built.
#[derive(Debug, Clone)]
pub struct FittedLvgp<T = f64> {
    phi: Vec<T>,
    latent: Vec<[T; 2]>,
    mu_hat: T,
    sigma2_hat: T,
    log_likelihood: T,
    normalization: Normalization<T>,
    factored: FactoredCorrelation<T>,
    data: TrainingSet<T>,
    points: Vec<MappedPoint<T>>,
    ys: Vec<T>,
    alpha: Vec<T>,
    divisor: usize,
    constant: bool,
    restarts: Vec<RestartOutcome>,
}

impl<T: Scalar> FittedLvgp<T> {
    /// Fit by maximizing the profile likelihood over every restart.
    pub fn fit(data: &TrainingSet<T>, config: &FitConfig) -> Result<Self> {
        data.validate_for_fit()?;
        config.validate()?;
        let norm = Normalization::from_data(data);
        let (q, l) = (data.dim(), data.n_sources);
        if is_constant(data) {
            let latent = spread_latent(l);
            return assemble(data.clone(), norm, vec![T::one(); q], latent, T::of(config.jitter), None, Vec::new());
        }

        let units: Vec<Vec<T>> = data.inputs.iter().map(|x| norm.to_unit(x)).collect::<Result<_>>()?;
        let ys: Vec<T> = data.outputs.iter().map(|&y| norm.standardize(y)).collect();
        let profile = Profile::new(&units, &data.sources, l, &ys, T::of(config.jitter));
        let (lower, upper) = config.search_box(q, l);
        let starts = restart_points(config, &lower, &upper, q);

        let run = |start: &Vec<f64>| -> RestartOutcome {
            let best: Option<Minimum> =
                bfgs_bounded(|t, grad| profile.negative(t, grad), start, &lower, &upper, config.optimizer);
            match best {
                Some(m) => RestartOutcome {
                    start: start.clone(),
                    log_likelihood: Some(-m.value),
                    theta: Some(m.x),
                    evals: m.evals,
                },
                None => RestartOutcome { start: start.clone(), theta: None, log_likelihood: None, evals: 1 },
            }
        };
        let outcomes: Vec<RestartOutcome> =
            if config.parallel { starts.par_iter().map(run).collect() } else { starts.iter().map(run).collect() };

        let best = outcomes.iter().filter_map(|o| Some((o.log_likelihood?, o.theta.as_ref()?))).fold(
            None::<(f64, &Vec<f64>)>,
            |acc, cur| match acc {
                Some(a) if a.0 >= cur.0 => Some(a),
                _ => Some(cur),
            },
        );
        let Some((_, theta)) = best else {
            return Err(Error::IllConditioned { ladder: vec![config.jitter] });
        };
        let phi = theta[..q].iter().map(|&t| T::of(t.exp())).collect();
        let free: Vec<T> = theta[q..].iter().map(|&t| T::of(t)).collect();
        let latent = unpack_latent(&free, l);
        assemble(data.clone(), norm, phi, latent, T::of(config.jitter), None, outcomes)
    }

    /// Model with hand-fixed scale factors (normalized-input units) and
    /// latent coordinates. Latent rows are used as given.
    pub fn with_hyperparameters(data: &TrainingSet<T>, phi: Vec<T>, latent: Vec<[T; 2]>, jitter: T) -> Result<Self> {
        data.validate_for_fit()?;
        if phi.len() != data.dim() {
            return Err(Error::DimensionMismatch { expected: data.dim(), got: phi.len() });
        }
        if latent.len() != data.n_sources {
            return Err(Error::DimensionMismatch { expected: data.n_sources, got: latent.len() });
        }
        if phi.iter().any(|p| !(*p > T::zero()) || !p.is_finite()) {
            return Err(invalid("scale factors must be positive and finite"));
        }
        let norm = Normalization::from_data(data);
        assemble(data.clone(), norm, phi, latent, jitter, None, Vec::new())
    }

    /// Rebuild on `data` with every hyperparameter frozen: scale factors,
    /// latent coordinates, normalization and jitter. The variance divisor is
    /// the size of the original training set.
    pub fn condition_on(&self, data: &TrainingSet<T>) -> Result<Self> {
        self.condition_on_with_divisor(data, self.divisor)
    }

    /// As [`condition_on`](Self::condition_on) with an explicit divisor for
    /// the profile variance.
    pub fn condition_on_with_divisor(&self, data: &TrainingSet<T>, divisor: usize) -> Result<Self> {
        if data.dim() != self.data.dim() || data.n_sources != self.data.n_sources {
            return Err(invalid("conditioning data has a different layout"));
        }
        if divisor == 0 {
            return Err(invalid("variance divisor must be positive"));
        }
        assemble(
            data.clone(),
            self.normalization.clone(),
            self.phi.clone(),
            self.latent.clone(),
            self.factored.jitter(),
            Some(divisor),
            Vec::new(),
        )
    }

    pub fn predict(&self, x: &[T], source: usize) -> Result<Prediction<T>> {
        let point = self.map(x, source)?;
        let r = self.correlations(&point);
        let mean = self.mu_hat + dot(&r, &self.alpha);
        let v = self.factored.chol.forward(&r);
        let var = (self.sigma2_hat * (T::one() - dot(&v, &v))).max(T::zero());
        let s = self.normalization.y_scale;
        Ok(Prediction { mean: self.normalization.destandardize(mean), variance: var * s * s })
    }

    /// Predictive mean only; skips the triangular solve.
    pub fn predict_mean(&self, x: &[T], source: usize) -> Result<T> {
        let point = self.map(x, source)?;
        let r = self.correlations(&point);
        Ok(self.normalization.destandardize(self.mu_hat + dot(&r, &self.alpha)))
    }

    /// Anchored latent coordinates with their source labels; empty for a
    /// single-source model.
    pub fn latent_positions(&self) -> Vec<(usize, [T; 2])> {
        if self.latent.len() < 2 {
            return Vec::new();
        }
        self.latent.iter().enumerate().map(|(i, &z)| (i + 1, z)).collect()
    }

    pub fn latent_distance(&self, a: usize, b: usize) -> Result<T> {
        self.data.check_label(a)?;
        self.data.check_label(b)?;
        let (za, zb) = (self.latent[a - 1], self.latent[b - 1]);
        Ok(((za[0] - zb[0]).powi(2) + (za[1] - zb[1]).powi(2)).sqrt())
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        Hyperparameters {
            log_phi: self.phi.iter().map(|p| p.f64().ln()).collect(),
            latent: self.latent.iter().map(|z| [z[0].f64(), z[1].f64()]).collect(),
        }
    }

    /// Scale factors in normalized-input units.
    pub fn phi(&self) -> &[T] {
        &self.phi
    }

    pub fn latent(&self) -> &[[T; 2]] {
        &self.latent
    }

    /// GLS mean in standardized output units.
    pub fn mu_hat(&self) -> T {
        self.mu_hat
    }

    /// Profile process variance in standardized output units.
    pub fn sigma2_hat(&self) -> T {
        self.sigma2_hat
    }

    pub fn log_likelihood(&self) -> T {
        self.log_likelihood
    }

    pub fn normalization(&self) -> &Normalization<T> {
        &self.normalization
    }

    pub fn factored(&self) -> &FactoredCorrelation<T> {
        &self.factored
    }

    pub fn training_set(&self) -> &TrainingSet<T> {
        &self.data
    }

    /// Standardized training outputs, in row order.
    pub fn standardized_outputs(&self) -> &[T] {
        &self.ys
    }

    /// Whether the outputs were constant, giving a zero-variance model.
    pub fn is_constant(&self) -> bool {
        self.constant
    }

    pub fn hf_label(&self) -> usize {
        self.data.hf_label
    }

    pub fn n_sources(&self) -> usize {
        self.data.n_sources
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    /// Divisor used for the profile variance.
    pub fn variance_divisor(&self) -> usize {
        self.divisor
    }

    /// Per-restart outcomes of the fit that produced this model.
    pub fn restarts(&self) -> &[RestartOutcome] {
        &self.restarts
    }

    /// Map an original-unit query to the model's normalized space.
    pub fn map(&self, x: &[T], source: usize) -> Result<MappedPoint<T>> {
        self.data.check_label(source)?;
        Ok(MappedPoint::new(self.normalization.to_unit(x)?, self.latent[source - 1]))
    }

    pub(crate) fn map_unit(&self, u: Vec<T>, source: usize) -> MappedPoint<T> {
        MappedPoint::new(u, self.latent[source - 1])
    }

    /// `R⁻¹ (y − μ̂ 1)` in standardized units.
    pub(crate) fn alpha_weights(&self) -> &[T] {
        &self.alpha
    }

    pub(crate) fn points(&self) -> &[MappedPoint<T>] {
        &self.points
    }

    /// Correlations between `point` and every training point.
    pub fn correlations(&self, point: &MappedPoint<T>) -> Vec<T> {
        self.points.iter().map(|p| (-distance(point, p, &self.phi)).exp()).collect()
    }

    pub(crate) fn correlation_between(&self, a: &MappedPoint<T>, b: &MappedPoint<T>) -> T {
        (-distance(a, b, &self.phi)).exp()
    }
}

fn is_constant<T: Scalar>(data: &TrainingSet<T>) -> bool {
    let n = Normalization::from_data(data);
    let var = data.outputs.iter().fold(T::zero(), |a, &y| a + (y - n.y_mean) * (y - n.y_mean));
    (var / T::of(data.len() as f64)).sqrt().f64() < CONSTANT_OUTPUT_STD
}

/// Distinct latent rows for constant models, keeping the matrix well posed.
fn spread_latent<T: Scalar>(l: usize) -> Vec<[T; 2]> {
    (0..l).map(|s| [T::of(3.0 * s as f64), T::zero()]).collect()
}

fn restart_points(config: &FitConfig, lower: &[f64], upper: &[f64], q: usize) -> Vec<Vec<f64>> {
    let d = lower.len();
    let mut starts = Vec::with_capacity(config.restarts + 1);
    if config.restarts > 0 {
        let mut zero: Vec<f64> = vec![0.0; d];
        for ((v, &lo), &hi) in zero.iter_mut().zip(lower).zip(upper) {
            *v = v.clamp(lo, hi);
        }
        starts.push(zero);
    }
    if config.restarts > 1 {
        let mut sobol = Sobol::new(d).expect("search dimension within Sobol limits");
        // the first Sobol point is the lower corner
        sobol.next_point();
        for u in sobol.take_points(config.restarts - 1) {
            starts.push(u.iter().zip(lower.iter().zip(upper)).map(|(&t, (&lo, &hi))| lo + t * (hi - lo)).collect());
        }
    }
    if let Some(w) = &config.warm_start {
        let theta = w.theta();
        if theta.len() == d && w.log_phi.len() == q {
            starts.push(theta);
        }
    }
    starts
}

fn assemble<T: Scalar>(
    data: TrainingSet<T>,
    normalization: Normalization<T>,
    phi: Vec<T>,
    latent: Vec<[T; 2]>,
    jitter: T,
    divisor: Option<usize>,
    restarts: Vec<RestartOutcome>,
) -> Result<FittedLvgp<T>> {
    let n = data.len();
    let points: Vec<MappedPoint<T>> = data
        .inputs
        .iter()
        .zip(&data.sources)
        .map(|(x, &s)| Ok(MappedPoint::new(normalization.to_unit(x)?, latent[s - 1])))
        .collect::<Result<_>>()?;
    let mut r = vec![T::zero(); n * n];
    for i in 0..n {
        r[i * n + i] = T::one();
        for j in 0..i {
            let v = (-distance(&points[i], &points[j], &phi)).exp();
            r[i * n + j] = v;
            r[j * n + i] = v;
        }
    }
    let factored = factor_with_ladder(r, n, jitter)?;
    let ys: Vec<T> = data.outputs.iter().map(|&y| normalization.standardize(y)).collect();
    let terms = profile_terms(&factored.chol, &ys);
    let divisor = divisor.unwrap_or(n);
    let constant = is_constant(&data);
    let sigma2 = if constant { T::zero() } else { terms.quad / T::of(divisor as f64) };
    let log_likelihood = if constant { T::zero() } else { -T::of(n as f64) * sigma2.ln() - factored.log_det() };
    let mut alpha = terms.whitened;
    factored.chol.backward_in_place(&mut alpha);
    Ok(FittedLvgp {
        phi,
        latent,
        mu_hat: terms.mu,
        sigma2_hat: sigma2,
        log_likelihood,
        normalization,
        factored,
        data,
        points,
        ys,
        alpha,
        divisor,
        constant,
        restarts,
    })
}

/// Serialized layout of a fitted model. The factorization is rebuilt on load.
#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct FittedLvgpRepr<T> {
    phi: Vec<T>,
    latent: Vec<[T; 2]>,
    mu_hat: T,
    sigma2_hat: T,
    jitter: T,
    log_likelihood: T,
    normalization: Normalization<T>,
    sigma_divisor: usize,
    training: TrainingSet<T>,
}

impl<T: Scalar> Serialize for FittedLvgp<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FittedLvgpRepr {
            phi: self.phi.clone(),
            latent: self.latent.clone(),
            mu_hat: self.mu_hat,
            sigma2_hat: self.sigma2_hat,
            jitter: self.factored.jitter(),
            log_likelihood: self.log_likelihood,
            normalization: self.normalization.clone(),
            sigma_divisor: self.divisor,
            training: self.data.clone(),
        }
        .serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for FittedLvgp<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = FittedLvgpRepr::<T>::deserialize(d)?;
        if r.latent.len() != r.training.n_sources || r.phi.len() != r.training.dim() {
            return Err(D::Error::custom("model shape does not match its training set"));
        }
        let m = assemble(r.training, r.normalization, r.phi, r.latent, r.jitter, Some(r.sigma_divisor), Vec::new())
            .map_err(D::Error::custom)?;
        if m.factored.jitter() != r.jitter {
            return Err(D::Error::custom("stored jitter no longer factors the training matrix"));
        }
        Ok(m)
    }
}
