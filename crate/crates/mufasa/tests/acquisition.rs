mod common;

use common::{fit, initial_data};
use mufasa::acquisition::{
    ei_value, incumbent, mmse_value, select_stage1, select_stage2, AcquisitionConfig, AcquisitionSpec, BenefitProbe,
    Sense, Stage1, Stage2, Stage2Objective,
};
use mufasa::problems::{Problem, Task};
use rand::SeedableRng;

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn grid_ratio(model: &mufasa::Model, x_hf: &[f64], objective: Stage2Objective, costs: &[f64]) -> f64 {
    let probe = BenefitProbe::new(model, x_hf, objective, Default::default()).unwrap();
    let (lo, hi) = model.training_set().bounds[0];
    let mut best = f64::NEG_INFINITY;
    for s in 1..=costs.len() {
        for x in grid(lo, hi, 2001) {
            best = best.max(probe.benefit(&[x], s).unwrap() / costs[s - 1]);
        }
    }
    best
}

#[test]
fn stage2_reaches_grid_maximum() {
    for (name, task, seed) in [("simple1d", Task::Gf, 3), ("sasena", Task::Bo, 4), ("sasena", Task::Bo, 9)] {
        let p = Problem::builtin(name, task).unwrap();
        let model = fit(&initial_data(&p, seed), 4);
        let costs: Vec<f64> = p.costs().iter().map(|&c| c as f64).collect();
        let config = AcquisitionConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let spec = AcquisitionSpec::new(Stage1::Mmse, Stage2::DeltaMsePerCost, Sense::Minimize).unwrap();
        let x_hf = select_stage1(&model, &spec, &config, &mut rng).unwrap().x;
        let choice = select_stage2(&model, &x_hf, Stage2Objective::DeltaMse, &costs, &config, &[]).unwrap();
        let want = grid_ratio(&model, &x_hf, Stage2Objective::DeltaMse, &costs);
        assert!(!choice.fallback);
        assert!(choice.ratio >= 0.99 * want, "{name}/{seed}: {} vs grid {want}", choice.ratio);
    }
}

#[test]
fn stage2_delta_ei_reaches_grid_maximum() {
    let p = Problem::builtin("sasena", Task::Bo).unwrap();
    let model = fit(&initial_data(&p, 12), 4);
    let costs: Vec<f64> = p.costs().iter().map(|&c| c as f64).collect();
    let config = AcquisitionConfig::default();
    let spec = AcquisitionSpec::new(Stage1::Ei, Stage2::DeltaAfPerCost, Sense::Minimize).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let x_hf = select_stage1(&model, &spec, &config, &mut rng).unwrap().x;
    let y_star = incumbent(&model, Sense::Minimize).unwrap();
    let objective = Stage2Objective::DeltaEi { y_star, sense: Sense::Minimize };
    let choice = select_stage2(&model, &x_hf, objective, &costs, &config, &[]).unwrap();
    let want = grid_ratio(&model, &x_hf, objective, &costs);
    if want > 0.0 {
        assert!(choice.ratio >= 0.99 * want, "{} vs grid {want}", choice.ratio);
    } else {
        assert!(choice.fallback);
    }
}

#[test]
fn stage1_reaches_grid_maximum() {
    let p = Problem::builtin("simple1d", Task::Gf).unwrap();
    let model = fit(&initial_data(&p, 7), 4);
    let config = AcquisitionConfig::default();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let xs = grid(-2.0, 3.0, 2001);

    let mmse = AcquisitionSpec::new(Stage1::Mmse, Stage2::None, Sense::Minimize).unwrap();
    let got = select_stage1(&model, &mmse, &config, &mut rng).unwrap();
    let want = xs.iter().map(|&x| mmse_value(&model, &[x]).unwrap()).fold(f64::NEG_INFINITY, f64::max);
    assert!(got.value >= 0.99 * want);
    assert!((mmse_value(&model, &got.x).unwrap() - got.value).abs() <= 1e-12 * got.value);

    let ei = AcquisitionSpec::new(Stage1::Ei, Stage2::None, Sense::Minimize).unwrap();
    let y_star = incumbent(&model, Sense::Minimize).unwrap();
    let got = select_stage1(&model, &ei, &config, &mut rng).unwrap();
    let want = xs.iter().map(|&x| ei_value(&model, &[x], y_star, Sense::Minimize).unwrap()).fold(0.0, f64::max);
    assert!(got.value >= 0.99 * want);
}

#[test]
fn shuffle_picks_a_mode() {
    let p = Problem::builtin("simple1d", Task::Gf).unwrap();
    let model = fit(&initial_data(&p, 7), 4);
    let config = AcquisitionConfig::default();
    let spec = AcquisitionSpec::new(Stage1::MmseShuffle, Stage2::DeltaMsePerCost, Sense::Minimize).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let c = select_stage1(&model, &spec, &config, &mut rng).unwrap();
        assert!(c.modes.iter().any(|m| m.x == c.x && m.value == c.value));
    }
}

#[test]
fn exclusions_are_respected() {
    let p = Problem::builtin("simple1d", Task::Gf).unwrap();
    let model = fit(&initial_data(&p, 3), 4);
    let costs: Vec<f64> = p.costs().iter().map(|&c| c as f64).collect();
    let config = AcquisitionConfig::default();
    let first = select_stage2(&model, &[0.5], Stage2Objective::DeltaMse, &costs, &config, &[]).unwrap();
    let again =
        select_stage2(&model, &[0.5], Stage2Objective::DeltaMse, &costs, &config, &[(first.x.clone(), first.source)])
            .unwrap();
    assert!(again.source != first.source || (again.x[0] - first.x[0]).abs() > 1e-3 * 5.0 * 0.99);
}
