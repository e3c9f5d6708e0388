mod common;

use common::{fit, rel, DenseGp};
use mufasa::lvgp::{FitConfig, FittedLvgp, TrainingSet};
use mufasa::problems::{Problem, Task};

fn three_points() -> TrainingSet {
    let mut d = TrainingSet::new(vec![(0.0, 2.0)], 2, 1).unwrap();
    d.push(vec![0.2], 1, 1.3).unwrap();
    d.push(vec![1.5], 1, -0.4).unwrap();
    d.push(vec![0.9], 2, 0.7).unwrap();
    d
}

#[test]
fn three_point_model_matches_dense_algebra() {
    let d = three_points();
    let m = FittedLvgp::with_hyperparameters(&d, vec![2.5], vec![[0.0, 0.0], [0.6, 0.0]], 1e-8).unwrap();
    let dense = DenseGp::new(&m, &d, 3);
    assert!(rel(m.mu_hat(), dense.mu, 1e-12) < 1e-10);
    assert!(rel(m.sigma2_hat(), dense.sigma2, 1e-12) < 1e-10);
    assert!(rel(m.log_likelihood(), dense.log_likelihood, 1e-12) < 1e-10);
    for x in [0.0, 0.37, 1.1, 2.0] {
        for s in [1, 2] {
            let p = m.predict(&[x], s).unwrap();
            let (mean, var) = dense.predict(&[x], s);
            assert!(rel(p.mean, mean, 1e-12) < 1e-10, "mean at {x},{s}");
            assert!((p.variance - var).abs() <= 1e-10 * var.abs().max(1e-6), "variance at {x},{s}");
        }
    }
}

#[test]
fn single_source_fit_is_a_plain_gp() {
    let p = Problem::builtin("simple1d", Task::Gf).unwrap();
    let mut d = TrainingSet::new(p.bounds.clone(), 1, 1).unwrap();
    for i in 0..7 {
        let x = -2.0 + 5.0 * i as f64 / 6.0 + 0.05 * (i % 2) as f64;
        d.push(vec![x], 1, p.eval_hf(&[x]).unwrap()).unwrap();
    }
    let m = fit(&d, 4);
    assert!(m.latent_positions().is_empty());
    let dense = DenseGp::new(&m, &d, d.len());
    assert!(rel(m.log_likelihood(), dense.log_likelihood, 1e-12) < 1e-10);
    for x in [-1.9, -0.3, 0.8, 2.7] {
        let a = m.predict(&[x], 1).unwrap();
        let (mean, var) = dense.predict(&[x], 1);
        assert!(rel(a.mean, mean, 1e-9) < 1e-10);
        assert!((a.variance - var).abs() <= 1e-10 * var.max(1e-6));
    }
}

#[test]
fn interpolates_training_rows() {
    let p = Problem::builtin("simple1d", Task::Gf).unwrap();
    let data = common::initial_data(&p, 5);
    let m = fit(&data, 4);
    for ((x, &s), &y) in data.inputs.iter().zip(&data.sources).zip(&data.outputs) {
        let mean = m.predict_mean(x, s).unwrap();
        assert!(rel(mean, y, 1.0) < 1e-4, "{x:?} {s}: {mean} vs {y}");
    }
}

#[test]
fn reverts_to_prior_far_from_data() {
    let mut d = TrainingSet::new(vec![(0.0, 10.0)], 1, 1).unwrap();
    for (x, y) in [(0.0, 1.0), (0.5, 2.0), (9.5, -1.0), (10.0, 0.5)] {
        d.push(vec![x], 1, y).unwrap();
    }
    let m: mufasa::Model = FittedLvgp::with_hyperparameters(&d, vec![400.0], vec![[0.0, 0.0]], 1e-8).unwrap();
    let p = m.predict(&[5.0], 1).unwrap();
    let s = m.normalization().y_scale;
    assert!((p.mean - m.normalization().destandardize(m.mu_hat())).abs() < 1e-12);
    assert!(rel(p.variance, m.sigma2_hat() * s * s, 1e-12) < 1e-12);
}

#[test]
fn fitted_optimum_is_stationary() {
    for (name, task) in [("simple1d", Task::Gf), ("sasena", Task::Bo)] {
        let p = Problem::builtin(name, task).unwrap();
        let data = common::initial_data(&p, 3);
        let config = FitConfig::default();
        let m = FittedLvgp::fit(&data, &config).unwrap();
        let (lo, hi) = config.log_phi_bounds;
        let ll = |phi: Vec<f64>, latent: Vec<[f64; 2]>| {
            FittedLvgp::with_hyperparameters(&data, phi, latent, config.jitter).unwrap().log_likelihood()
        };
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let log_phi: Vec<f64> = m.phi().iter().map(|v| v.ln()).collect();
        for k in 0..log_phi.len() {
            if log_phi[k] <= lo + 1e-3 || log_phi[k] >= hi - 1e-3 {
                continue;
            }
            let shifted = |d: f64| -> Vec<f64> {
                log_phi.iter().enumerate().map(|(i, v)| if i == k { (v + d).exp() } else { v.exp() }).collect()
            };
            let g = (ll(shifted(h), m.latent().to_vec()) - ll(shifted(-h), m.latent().to_vec())) / (2.0 * h);
            worst = worst.max(g.abs());
        }
        let z = m.latent().to_vec();
        let mut free = vec![(1usize, 0usize)];
        for s in 2..z.len() {
            free.push((s, 0));
            free.push((s, 1));
        }
        for (s, c) in free {
            if z[s][c].abs() >= config.latent_bound - 1e-3 || (s == 1 && z[1][0] <= 1e-3) {
                continue;
            }
            let shifted = |d: f64| {
                let mut w = z.clone();
                w[s][c] += d;
                w
            };
            let g = (ll(m.phi().to_vec(), shifted(h)) - ll(m.phi().to_vec(), shifted(-h))) / (2.0 * h);
            worst = worst.max(g.abs());
        }
        assert!(worst < 1e-3, "{name}: gradient norm {worst}");
    }
}

#[test]
fn latent_anchoring() {
    let p = Problem::builtin("simple1d", Task::Gf).unwrap();
    let m = fit(&common::initial_data(&p, 8), 4);
    let z = m.latent();
    assert_eq!(z[0], [0.0, 0.0]);
    assert_eq!(z[1][1], 0.0);
    assert!(z[1][0] >= 0.0);
    let d = m.latent_distance(1, 3).unwrap();
    assert!((d - (z[2][0].powi(2) + z[2][1].powi(2)).sqrt()).abs() < 1e-15);
}

#[test]
fn f32_model_tracks_f64() {
    let d = three_points();
    let m64 = FittedLvgp::with_hyperparameters(&d, vec![2.5], vec![[0.0, 0.0], [0.6, 0.0]], 1e-8).unwrap();
    let d32: TrainingSet<f32> = d.cast();
    let m32: mufasa::ModelF32 =
        FittedLvgp::with_hyperparameters(&d32, vec![2.5], vec![[0.0, 0.0], [0.6, 0.0]], 1e-6).unwrap();
    for x in [0.1f32, 1.0, 1.9] {
        let a = m32.predict(&[x], 1).unwrap().mean as f64;
        let b = m64.predict(&[x as f64], 1).unwrap().mean;
        assert!((a - b).abs() < 1e-3);
    }
}
