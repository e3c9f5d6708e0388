//! Two-stage acquisition: pick an HF location of interest, then the
//! `(location, source)` sample with the best benefit per unit cost there.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lvgp::FittedLvgp;
use crate::optim::{nelder_mead_bounded, NelderMeadOptions};
use crate::preposterior::{SigmaDivisor, VarianceProbe};
use crate::qmc::Sobol;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sense {
    #[default]
    Minimize,
    Maximize,
}

impl Sense {
    /// Whether `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Sense::Minimize => a < b,
            Sense::Maximize => a > b,
        }
    }

    /// Improvement of `value` over the incumbent `y_star`.
    pub fn improvement(self, value: f64, y_star: f64) -> f64 {
        match self {
            Sense::Minimize => y_star - value,
            Sense::Maximize => value - y_star,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage1 {
    Mmse,
    MmseShuffle,
    Ei,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage2 {
    /// Reduction of the stage-1 acquisition (EI) per unit cost.
    DeltaAfPerCost,
    DeltaMsePerCost,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcquisitionSpec {
    pub stage1: Stage1,
    pub stage2: Stage2,
    pub sense: Sense,
}

impl AcquisitionSpec {
    pub fn new(stage1: Stage1, stage2: Stage2, sense: Sense) -> Result<Self> {
        if stage2 == Stage2::DeltaAfPerCost && stage1 != Stage1::Ei {
            return Err(Error::Config("the acquisition-reduction objective needs an EI first stage".into()));
        }
        Ok(Self { stage1, stage2, sense })
    }
}

/// Search budgets for the acquisition optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionConfig {
    /// Local ascents for mode finding; `None` picks `20·q` clamped to `[20, 100]`.
    pub mode_starts: Option<usize>,
    pub merge_radius: f64,
    pub local: NelderMeadOptions,
    /// Sobol screening points for continuous searches; `None` scales with `q`.
    pub screen: Option<usize>,
    /// Best screened points polished by a local search.
    pub polish: usize,
    pub divisor: SigmaDivisor,
    /// Radius (normalized) around excluded candidates that stage 2 avoids.
    pub exclusion_radius: f64,
    pub parallel: bool,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            mode_starts: None,
            merge_radius: 0.02,
            local: NelderMeadOptions { initial_step: 0.05, max_evals: 400, xtol: 1e-7, ftol: 1e-14 },
            screen: None,
            polish: 4,
            divisor: SigmaDivisor::Original,
            exclusion_radius: 1e-3,
            parallel: true,
        }
    }
}

impl AcquisitionConfig {
    pub fn mode_starts_for(&self, q: usize) -> usize {
        self.mode_starts.unwrap_or((20 * q).clamp(20, 100)).max(1)
    }

    pub fn screen_for(&self, q: usize) -> usize {
        self.screen.unwrap_or((64 * q).clamp(128, 512)).max(1)
    }
}

pub fn normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(u: f64) -> f64 {
    0.5 * libm::erfc(-u / std::f64::consts::SQRT_2)
}

/// Expected improvement of a normal prediction over `y_star`.
pub fn expected_improvement(mean: f64, sd: f64, y_star: f64, sense: Sense) -> f64 {
    let imp = sense.improvement(mean, y_star);
    if !(sd > 0.0) {
        return imp.max(0.0);
    }
    let u = imp / sd;
    (imp * normal_cdf(u) + sd * normal_pdf(u)).max(0.0)
}

/// HF predictive variance.
pub fn mmse_value(model: &FittedLvgp, x: &[f64]) -> Result<f64> {
    Ok(model.predict(x, model.hf_label())?.variance)
}

pub fn ei_value(model: &FittedLvgp, x: &[f64], y_star: f64, sense: Sense) -> Result<f64> {
    let p = model.predict(x, model.hf_label())?;
    Ok(expected_improvement(p.mean, p.std_dev(), y_star, sense))
}

/// Best observed HF output.
pub fn incumbent(model: &FittedLvgp, sense: Sense) -> Option<f64> {
    let data = model.training_set();
    data.sources.iter().zip(&data.outputs).filter(|(&s, _)| s == data.hf_label).map(|(_, &y)| y).fold(None, |acc, y| {
        match acc {
            Some(b) if !sense.better(y, b) => Some(b),
            _ => Some(y),
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub x: Vec<f64>,
    pub value: f64,
}

/// Distinct local maxima of an acquisition surface, best first.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModeSet {
    pub modes: Vec<Mode>,
}

impl ModeSet {
    pub fn best(&self) -> Option<&Mode> {
        self.modes.first()
    }

    /// Draw a mode with probability proportional to its value.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<&Mode> {
        match WeightedIndex::new(self.modes.iter().map(|m| m.value.max(0.0))) {
            Ok(dist) => self.modes.get(dist.sample(rng)),
            Err(_) => self.best(),
        }
    }
}

fn unit_bounds(q: usize) -> (Vec<f64>, Vec<f64>) {
    (vec![0.0; q], vec![1.0; q])
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Local maxima of `f` over the unit cube from Sobol-seeded Nelder–Mead
/// ascents, merged within `merge_radius`.
pub fn find_unit_modes<F>(f: F, q: usize, n_starts: usize, merge_radius: f64, opts: NelderMeadOptions) -> ModeSet
where
    F: Fn(&[f64]) -> f64,
{
    let (lower, upper) = unit_bounds(q);
    let mut sobol = Sobol::new(q).expect("input dimension within Sobol limits");
    let mut found: Vec<(Mode, bool)> = Vec::with_capacity(n_starts);
    for start in sobol.take_points(n_starts.max(1)) {
        let m = nelder_mead_bounded(|u| -f(u), &start, &lower, &upper, opts);
        let value = -m.value;
        let flat = is_flat(&f, &m.x, value);
        found.push((Mode { x: m.x, value }, flat));
    }
    found.sort_by(|a, b| b.0.value.total_cmp(&a.0.value));

    let mut modes: Vec<Mode> = Vec::new();
    let mut plateau_values: Vec<f64> = Vec::new();
    for (mode, flat) in found {
        if !mode.value.is_finite() {
            continue;
        }
        if flat {
            // every point of a flat region is a maximum; keep one per level
            if plateau_values.iter().any(|&v| (v - mode.value).abs() <= 1e-9 * (1.0 + v.abs())) {
                continue;
            }
            plateau_values.push(mode.value);
        }
        if modes.iter().any(|m| distance(&m.x, &mode.x) < merge_radius) {
            continue;
        }
        modes.push(mode);
    }
    if modes.iter().any(|m| m.value > 0.0) {
        modes.retain(|m| m.value > 0.0);
    } else {
        modes.truncate(1);
    }
    ModeSet { modes }
}

fn is_flat<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], value: f64) -> bool {
    let tol = 1e-12 * (1.0 + value.abs());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        for step in [-0.01, 0.01] {
            probe[i] = (x[i] + step).clamp(0.0, 1.0);
            if (f(&probe) - value).abs() > tol {
                return false;
            }
        }
        probe[i] = x[i];
    }
    true
}

/// Modes of the HF predictive variance, locations in original units.
pub fn find_modes(model: &FittedLvgp, n_starts: usize, merge_radius: f64, opts: NelderMeadOptions) -> ModeSet {
    let norm = model.normalization();
    let hf = model.hf_label();
    let f = |u: &[f64]| model.predict(&norm.from_unit(u), hf).map_or(f64::NEG_INFINITY, |p| p.variance);
    let mut set = find_unit_modes(f, model.dim(), n_starts, merge_radius, opts);
    for m in &mut set.modes {
        m.x = norm.from_unit(&m.x);
    }
    set
}

/// Maximize `f` over the unit cube: Sobol screen, then local polish of the
/// best screened points and of any `extra` starts.
pub fn maximize_unit<F>(
    f: F,
    q: usize,
    screen: usize,
    polish: usize,
    extra: &[Vec<f64>],
    opts: NelderMeadOptions,
) -> Mode
where
    F: Fn(&[f64]) -> f64,
{
    let (lower, upper) = unit_bounds(q);
    let mut sobol = Sobol::new(q).expect("input dimension within Sobol limits");
    let mut scored: Vec<Mode> = sobol
        .take_points(screen)
        .into_iter()
        .map(|u| {
            let value = f(&u);
            Mode { x: u, value: if value.is_nan() { f64::NEG_INFINITY } else { value } }
        })
        .collect();
    scored.sort_by(|a, b| b.value.total_cmp(&a.value));
    let mut starts: Vec<Vec<f64>> = extra.to_vec();
    starts.extend(scored.iter().take(polish).map(|m| m.x.clone()));
    let mut best = scored.into_iter().next().unwrap_or(Mode { x: vec![0.5; q], value: f64::NEG_INFINITY });
    for s in starts {
        let m = nelder_mead_bounded(|u| -f(u), &s, &lower, &upper, opts);
        if -m.value > best.value {
            best = Mode { x: m.x, value: -m.value };
        }
    }
    best
}

/// The stage-1 HF location of interest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Choice {
    pub x: Vec<f64>,
    pub value: f64,
    /// Modes considered, for MMSE first stages.
    pub modes: Vec<Mode>,
}

pub fn select_stage1<R: Rng + ?Sized>(
    model: &FittedLvgp,
    spec: &AcquisitionSpec,
    config: &AcquisitionConfig,
    rng: &mut R,
) -> Result<Stage1Choice> {
    let q = model.dim();
    match spec.stage1 {
        Stage1::Mmse | Stage1::MmseShuffle => {
            let set = find_modes(model, config.mode_starts_for(q), config.merge_radius, config.local);
            let pick = if spec.stage1 == Stage1::MmseShuffle { set.sample(rng) } else { set.best() };
            let pick = pick.cloned().ok_or_else(|| Error::InvalidInput("no acquisition modes found".into()))?;
            Ok(Stage1Choice { x: pick.x, value: pick.value, modes: set.modes })
        }
        Stage1::Ei => {
            let y_star = incumbent(model, spec.sense)
                .ok_or_else(|| Error::InvalidInput("EI needs at least one HF observation".into()))?;
            let norm = model.normalization();
            let f = |u: &[f64]| ei_value(model, &norm.from_unit(u), y_star, spec.sense).unwrap_or(f64::NEG_INFINITY);
            let best = maximize_unit(f, q, config.screen_for(q), config.polish, &[], config.local);
            Ok(Stage1Choice { x: norm.from_unit(&best.x), value: best.value, modes: Vec::new() })
        }
    }
}

/// Benefit measured at the location of interest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Stage2Objective {
    DeltaMse,
    DeltaEi { y_star: f64, sense: Sense },
}

/// Evaluates the stage-2 benefit of many candidates against one location of
/// interest.
#[derive(Debug, Clone)]
pub struct BenefitProbe<'a> {
    probe: VarianceProbe<'a, f64>,
    objective: Stage2Objective,
    mean: f64,
    current_ei: f64,
}

impl<'a> BenefitProbe<'a> {
    pub fn new(model: &'a FittedLvgp, x_hf: &[f64], objective: Stage2Objective, divisor: SigmaDivisor) -> Result<Self> {
        let probe = VarianceProbe::new(model, x_hf, model.hf_label(), divisor)?;
        let mean = model.predict_mean(x_hf, model.hf_label())?;
        let current_ei = match objective {
            Stage2Objective::DeltaMse => 0.0,
            Stage2Objective::DeltaEi { y_star, sense } => {
                expected_improvement(mean, probe.current_variance().sqrt(), y_star, sense)
            }
        };
        Ok(Self { probe, objective, mean, current_ei })
    }

    fn from_variance(&self, after: f64) -> f64 {
        match self.objective {
            Stage2Objective::DeltaMse => self.probe.current_variance() - after,
            Stage2Objective::DeltaEi { y_star, sense } => {
                self.current_ei - expected_improvement(self.mean, after.max(0.0).sqrt(), y_star, sense)
            }
        }
    }

    /// Benefit of believing a sample at `(x, source)`, original units.
    pub fn benefit(&self, x: &[f64], source: usize) -> Result<f64> {
        Ok(self.from_variance(self.probe.variance_after(x, source)?))
    }

    pub(crate) fn benefit_unit(&self, u: &[f64], source: usize) -> f64 {
        self.from_variance(self.probe.variance_after_unit(u, source))
    }
}

/// `ŝ²(x_hf) − σ̂²(x_hf | w_next)`; may be negative.
pub fn delta_mse(model: &FittedLvgp, x_hf: &[f64], w_next: (&[f64], usize), divisor: SigmaDivisor) -> Result<f64> {
    BenefitProbe::new(model, x_hf, Stage2Objective::DeltaMse, divisor)?.benefit(w_next.0, w_next.1)
}

/// EI at `x_hf` now minus EI with the pre-posterior deviation, mean held fixed.
pub fn delta_ei(
    model: &FittedLvgp,
    x_hf: &[f64],
    w_next: (&[f64], usize),
    y_star: f64,
    sense: Sense,
    divisor: SigmaDivisor,
) -> Result<f64> {
    BenefitProbe::new(model, x_hf, Stage2Objective::DeltaEi { y_star, sense }, divisor)?.benefit(w_next.0, w_next.1)
}

/// Best candidate found for one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceBest {
    pub source: usize,
    pub x: Vec<f64>,
    pub benefit: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Choice {
    pub x: Vec<f64>,
    pub source: usize,
    pub benefit: f64,
    pub ratio: f64,
    /// No source had a positive benefit; the HF location of interest is sampled.
    pub fallback: bool,
    pub per_source: Vec<SourceBest>,
}

/// Relative tolerance under which two benefit ratios count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Pick the sample with the most benefit per unit cost. `costs` is indexed by
/// source label minus one; `exclude` lists `(x, source)` candidates to avoid.
pub fn select_stage2(
    model: &FittedLvgp,
    x_hf: &[f64],
    objective: Stage2Objective,
    costs: &[f64],
    config: &AcquisitionConfig,
    exclude: &[(Vec<f64>, usize)],
) -> Result<Stage2Choice> {
    let l = model.n_sources();
    if costs.len() != l {
        return Err(Error::DimensionMismatch { expected: l, got: costs.len() });
    }
    if costs.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::InvalidInput("every source cost must be positive".into()));
    }
    let probe = BenefitProbe::new(model, x_hf, objective, config.divisor)?;
    let norm = model.normalization();
    let q = model.dim();
    let u_hf = norm.to_unit(x_hf)?;
    let excluded: Vec<(Vec<f64>, usize)> =
        exclude.iter().map(|(x, s)| Ok((norm.to_unit(x)?, *s))).collect::<Result<_>>()?;

    let search = |source: usize| -> SourceBest {
        let blocked: Vec<&Vec<f64>> = excluded.iter().filter(|(_, s)| *s == source).map(|(u, _)| u).collect();
        let f = |u: &[f64]| {
            if blocked.iter().any(|b| distance(b, u) < config.exclusion_radius) {
                return f64::NEG_INFINITY;
            }
            probe.benefit_unit(u, source)
        };
        let best = maximize_unit(f, q, config.screen_for(q), config.polish, std::slice::from_ref(&u_hf), config.local);
        SourceBest { source, x: norm.from_unit(&best.x), benefit: best.value, ratio: best.value / costs[source - 1] }
    };
    let per_source: Vec<SourceBest> =
        if config.parallel { (1..=l).into_par_iter().map(search).collect() } else { (1..=l).map(search).collect() };

    let mut winner: Option<&SourceBest> = None;
    for cand in per_source.iter().filter(|c| c.benefit > 0.0 && c.benefit.is_finite()) {
        winner = match winner {
            None => Some(cand),
            Some(w) => {
                let scale = w.ratio.abs().max(cand.ratio.abs());
                if (cand.ratio - w.ratio).abs() <= TIE_TOLERANCE * scale {
                    let (cc, wc) = (costs[cand.source - 1], costs[w.source - 1]);
                    if cc < wc || (cc == wc && cand.source < w.source) {
                        Some(cand)
                    } else {
                        Some(w)
                    }
                } else if cand.ratio > w.ratio {
                    Some(cand)
                } else {
                    Some(w)
                }
            }
        };
    }
    Ok(match winner {
        Some(w) => Stage2Choice {
            x: w.x.clone(),
            source: w.source,
            benefit: w.benefit,
            ratio: w.ratio,
            fallback: false,
            per_source: per_source.clone(),
        },
        None => {
            let hf = model.hf_label();
            let benefit = probe.benefit(x_hf, hf)?;
            Stage2Choice {
                x: x_hf.to_vec(),
                source: hf,
                benefit,
                ratio: benefit / costs[hf - 1],
                fallback: true,
                per_source,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ei_reference_values() {
        // φ(0) = 1/√(2π)
        assert!((expected_improvement(0.0, 1.0, 0.0, Sense::Maximize) - 0.398_942_280_401_432_7).abs() < 1e-12);
        // Φ(1) + φ(1) from standard normal tables
        assert!((expected_improvement(1.0, 1.0, 0.0, Sense::Maximize) - 1.083_315_5).abs() < 1e-7);
        assert_eq!(expected_improvement(-0.5, 0.0, 0.0, Sense::Maximize), 0.0);
        assert_eq!(expected_improvement(-0.5, 0.0, 0.0, Sense::Minimize), 0.5);
    }

    #[test]
    fn minimize_mirrors_maximize() {
        for (m, s) in [(0.3, 0.2), (-1.0, 2.0), (0.0, 0.5)] {
            let a = expected_improvement(m, s, 0.1, Sense::Maximize);
            let b = expected_improvement(-m, s, -0.1, Sense::Minimize);
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn shuffle_frequencies_follow_weights() {
        let set = ModeSet { modes: vec![Mode { x: vec![0.1], value: 3.0 }, Mode { x: vec![0.9], value: 1.0 }] };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let hits = (0..10_000).filter(|_| set.sample(&mut rng).unwrap().x[0] == 0.1).count();
        let p = hits as f64 / 10_000.0;
        assert!((p - 0.75).abs() < 0.03, "{p}");
    }

    #[test]
    fn flat_surface_has_one_mode() {
        let set = find_unit_modes(|_| 2.0, 2, 20, 0.02, NelderMeadOptions::default());
        assert_eq!(set.modes.len(), 1);
        assert_eq!(set.modes[0].value, 2.0);
    }

    #[test]
    fn modes_of_a_two_peak_function() {
        let f = |u: &[f64]| (-(u[0] - 0.2).powi(2) * 200.0).exp() + 0.5 * (-(u[0] - 0.7).powi(2) * 200.0).exp();
        let set = find_unit_modes(f, 1, 20, 0.02, NelderMeadOptions::default());
        assert_eq!(set.modes.len(), 2);
        assert!((set.modes[0].x[0] - 0.2).abs() < 1e-3);
        assert!((set.modes[1].x[0] - 0.7).abs() < 1e-3);
    }

    #[test]
    fn delta_af_requires_ei_first_stage() {
        assert!(AcquisitionSpec::new(Stage1::Mmse, Stage2::DeltaAfPerCost, Sense::Minimize).is_err());
        assert!(AcquisitionSpec::new(Stage1::Ei, Stage2::DeltaAfPerCost, Sense::Minimize).is_ok());
    }
}
