//! Dense-algebra reference computations shared by the integration tests.
//! Nothing here calls into the crate's factorization code. Solves run in
//! double-double arithmetic so near-singular correlation matrices stay
//! well below the tolerances being checked.

#![allow(dead_code)]

use mufasa::lvgp::{FitConfig, FittedLvgp, TrainingSet};
use mufasa::problems::{generate_doe, Problem};
use twofloat::TwoFloat;

/// Inverse and log-determinant by Gauss–Jordan elimination with partial pivoting.
pub fn gauss_jordan(a: &[f64], n: usize) -> (Vec<f64>, f64) {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    let mut log_det = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i * n + c].abs().total_cmp(&m[j * n + c].abs())).unwrap();
        if p != c {
            for k in 0..n {
                m.swap(p * n + k, c * n + k);
                inv.swap(p * n + k, c * n + k);
            }
        }
        let d = m[c * n + c];
        log_det += d.abs().ln();
        for k in 0..n {
            m[c * n + k] /= d;
            inv[c * n + k] /= d;
        }
        for i in 0..n {
            if i != c {
                let f = m[i * n + c];
                if f != 0.0 {
                    for k in 0..n {
                        m[i * n + k] -= f * m[c * n + k];
                        inv[i * n + k] -= f * inv[c * n + k];
                    }
                }
            }
        }
    }
    (inv, log_det)
}

/// LU factors with partial pivoting, in double-double.
struct Lu {
    n: usize,
    lu: Vec<TwoFloat>,
    perm: Vec<usize>,
}

impl Lu {
    fn new(a: &[f64], n: usize) -> Self {
        let mut lu: Vec<TwoFloat> = a.iter().map(|&v| TwoFloat::from(v)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for c in 0..n {
            let p = (c..n)
                .max_by(|&i, &j| f64::from(lu[i * n + c]).abs().total_cmp(&f64::from(lu[j * n + c]).abs()))
                .unwrap();
            if p != c {
                for k in 0..n {
                    lu.swap(p * n + k, c * n + k);
                }
                perm.swap(p, c);
            }
            let d = lu[c * n + c];
            for i in c + 1..n {
                let f = lu[i * n + c] / d;
                lu[i * n + c] = f;
                for k in c + 1..n {
                    let t = lu[c * n + k];
                    lu[i * n + k] -= f * t;
                }
            }
        }
        Self { n, lu, perm }
    }

    fn solve(&self, b: &[TwoFloat]) -> Vec<TwoFloat> {
        let n = self.n;
        let mut x: Vec<TwoFloat> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                let t = self.lu[i * n + k] * x[k];
                x[i] -= t;
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let t = self.lu[i * n + k] * x[k];
                x[i] -= t;
            }
            x[i] /= self.lu[i * n + i];
        }
        x
    }
}

fn dot(a: &[TwoFloat], b: &[TwoFloat]) -> TwoFloat {
    a.iter().zip(b).fold(TwoFloat::from(0.0), |acc, (x, y)| acc + *x * *y)
}

fn wide(v: &[f64]) -> Vec<TwoFloat> {
    v.iter().map(|&x| TwoFloat::from(x)).collect()
}

/// A GP rebuilt from scratch with a fitted model's hyperparameters.
pub struct DenseGp {
    units: Vec<Vec<f64>>,
    z: Vec<[f64; 2]>,
    phi: Vec<f64>,
    latent: Vec<[f64; 2]>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    lu: Lu,
    resid: Vec<TwoFloat>,
    pub mu: f64,
    pub sigma2: f64,
    pub log_likelihood: f64,
}

impl DenseGp {
    /// Reference model on `data` using `model`'s scale factors, latent
    /// coordinates, normalization and jitter, with `divisor` for the profile
    /// variance.
    pub fn new(model: &FittedLvgp, data: &TrainingSet, divisor: usize) -> Self {
        let norm = model.normalization();
        let (lower, upper) = (norm.lower.clone(), norm.upper.clone());
        let unit = |x: &[f64]| -> Vec<f64> {
            x.iter().zip(&lower).zip(&upper).map(|((v, lo), hi)| (v - lo) / (hi - lo)).collect()
        };
        let units: Vec<Vec<f64>> = data.inputs.iter().map(|x| unit(x)).collect();
        let latent = model.latent().to_vec();
        let z: Vec<[f64; 2]> = data.sources.iter().map(|&s| latent[s - 1]).collect();
        let ys: Vec<f64> = data.outputs.iter().map(|y| (y - norm.y_mean) / norm.y_scale).collect();
        let phi = model.phi().to_vec();
        let n = units.len();
        let jitter = model.factored().jitter();
        let mut r = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                r[i * n + j] = corr(&units[i], z[i], &units[j], z[j], &phi) + if i == j { jitter } else { 0.0 };
            }
        }
        let (_, log_det) = gauss_jordan(&r, n);
        let lu = Lu::new(&r, n);
        let ones = wide(&vec![1.0; n]);
        let ys = wide(&ys);
        let ri1 = lu.solve(&ones);
        let mu = dot(&ri1, &ys) / dot(&ri1, &ones);
        let resid: Vec<TwoFloat> = ys.iter().map(|&y| y - mu).collect();
        let quad = f64::from(dot(&resid, &lu.solve(&resid)));
        let sigma2 = quad / divisor as f64;
        let log_likelihood = -(n as f64) * (quad / n as f64).ln() - log_det;
        let mu = f64::from(mu);
        Self {
            units,
            z,
            phi,
            latent,
            lower,
            upper,
            y_mean: norm.y_mean,
            y_scale: norm.y_scale,
            lu,
            resid,
            mu,
            sigma2,
            log_likelihood,
        }
    }

    /// `(mean, variance)` in original units.
    pub fn predict(&self, x: &[f64], source: usize) -> (f64, f64) {
        let u: Vec<f64> =
            x.iter().zip(&self.lower).zip(&self.upper).map(|((v, lo), hi)| (v - lo) / (hi - lo)).collect();
        let zq = self.latent[source - 1];
        let r: Vec<f64> = self.units.iter().zip(&self.z).map(|(ui, &zi)| corr(&u, zq, ui, zi, &self.phi)).collect();
        let r = wide(&r);
        let ri_r = self.lu.solve(&r);
        let mean = self.mu + f64::from(dot(&ri_r, &self.resid));
        let var = (self.sigma2 * f64::from(TwoFloat::from(1.0) - dot(&r, &ri_r))).max(0.0);
        (mean * self.y_scale + self.y_mean, var * self.y_scale * self.y_scale)
    }
}

fn corr(a: &[f64], za: [f64; 2], b: &[f64], zb: [f64; 2], phi: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..phi.len() {
        s += phi[k] * (a[k] - b[k]).powi(2);
    }
    s += (za[0] - zb[0]).powi(2) + (za[1] - zb[1]).powi(2);
    (-s).exp()
}

/// Training set with the problem's initial design, evaluated.
pub fn initial_data(problem: &Problem, seed: u64) -> TrainingSet {
    let doe = generate_doe(problem, seed);
    let mut data = TrainingSet::new(problem.bounds.clone(), problem.n_sources(), problem.hf_label).unwrap();
    for s in &problem.sources {
        for x in doe.for_source(s.label) {
            data.push(x.clone(), s.label, problem.eval_source(s.label, x).unwrap()).unwrap();
        }
    }
    data
}

pub fn fit(data: &TrainingSet, restarts: usize) -> FittedLvgp {
    FittedLvgp::fit(data, &FitConfig { restarts, ..FitConfig::default() }).unwrap()
}

/// Deterministic pseudo-random points in the problem's bounds.
pub fn random_points(bounds: &[(f64, f64)], n: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect()).collect()
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
