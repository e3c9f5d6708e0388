use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{maximize_unit, normal_pdf, AcquisitionConfig, Sense, TIE_TOLERANCE};
use crate::error::{Error, Result};
use crate::lvgp::FittedLvgp;
use crate::planner::observed_best;

/// Sources whose latent distance to HF exceeds `tau` times the median
/// distance of all non-HF sources.
pub fn mfca_exclude(model: &FittedLvgp, tau: f64) -> Vec<usize> {
    let hf = model.hf_label();
    let distances: Vec<(usize, f64)> = (1..=model.n_sources())
        .filter(|&j| j != hf)
        .filter_map(|j| Some((j, model.latent_distance(j, hf).ok()?)))
        .collect();
    mfca_exclude_by_distance(&distances, tau)
}

pub fn mfca_exclude_by_distance(distances: &[(usize, f64)], tau: f64) -> Vec<usize> {
    if distances.is_empty() {
        return Vec::new();
    }
    let mut d: Vec<f64> = distances.iter().map(|p| p.1).collect();
    d.sort_by(f64::total_cmp);
    let threshold = tau * crate::planner::median(&d);
    distances.iter().filter(|p| p.1 > threshold).map(|p| p.0).collect()
}

/// Unscaled acquisition of source `j` at `x`: the exploration part of EI for
/// LF sources, the predicted improvement for HF.
pub fn mfca_value(model: &FittedLvgp, x: &[f64], j: usize, sense: Sense) -> Result<f64> {
    let y_star = observed_best(model.training_set(), j, sense)
        .ok_or_else(|| Error::InvalidInput(format!("source {j} has no observations")))?;
    let p = model.predict(x, j)?;
    if j == model.hf_label() {
        return Ok(sense.improvement(p.mean, y_star));
    }
    let sd = p.std_dev();
    if !(sd > 0.0) {
        return Ok(0.0);
    }
    Ok(sd * normal_pdf((y_star - p.mean) / sd))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfcaChoice {
    pub x: Vec<f64>,
    pub source: usize,
    /// Cost-scaled acquisition of the choice.
    pub value: f64,
    /// Best `(source, x, value)` per queried source.
    pub per_source: Vec<(usize, Vec<f64>, f64)>,
}

/// Maximize the cost-scaled acquisition over `x` for every non-excluded
/// source, then over sources. Candidates within the exclusion radius of an
/// `avoid` entry of the same source are skipped.
pub fn mfca_step(
    model: &FittedLvgp,
    costs: &[f64],
    excluded: &[usize],
    sense: Sense,
    config: &AcquisitionConfig,
    avoid: &[(Vec<f64>, usize)],
) -> Result<MfcaChoice> {
    let l = model.n_sources();
    if costs.len() != l {
        return Err(Error::DimensionMismatch { expected: l, got: costs.len() });
    }
    let norm = model.normalization();
    let q = model.dim();
    let blocked: Vec<(Vec<f64>, usize)> =
        avoid.iter().map(|(x, s)| Ok((norm.to_unit(x)?, *s))).collect::<Result<_>>()?;
    let sources: Vec<usize> = (1..=l).filter(|j| !excluded.contains(j)).collect();
    let search = |&j: &usize| -> (usize, Vec<f64>, f64) {
        let f = |u: &[f64]| {
            let near = blocked.iter().any(|(b, s)| {
                *s == j && b.iter().zip(u).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt() < config.exclusion_radius
            });
            if near {
                return f64::NEG_INFINITY;
            }
            mfca_value(model, &norm.from_unit(u), j, sense).map_or(f64::NEG_INFINITY, |v| v / costs[j - 1])
        };
        let best = maximize_unit(f, q, config.screen_for(q), config.polish, &[], config.local);
        (j, norm.from_unit(&best.x), best.value)
    };
    let per_source: Vec<(usize, Vec<f64>, f64)> =
        if config.parallel { sources.par_iter().map(search).collect() } else { sources.iter().map(search).collect() };
    let mut best: Option<&(usize, Vec<f64>, f64)> = None;
    for cand in &per_source {
        best = match best {
            None => Some(cand),
            Some(b) => {
                let scale = b.2.abs().max(cand.2.abs());
                let tie = (cand.2 - b.2).abs() <= TIE_TOLERANCE * scale;
                let cheaper = costs[cand.0 - 1] < costs[b.0 - 1];
                if (tie && cheaper) || (!tie && cand.2 > b.2) {
                    Some(cand)
                } else {
                    Some(b)
                }
            }
        };
    }
    let (source, x, value) = best.cloned().ok_or_else(|| Error::Config("every source is excluded".into()))?;
    Ok(MfcaChoice { x, source, value, per_source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exclusion_threshold() {
        assert!(mfca_exclude_by_distance(&[(2, 1.0), (3, 1.0), (4, 1.0)], 2.5).is_empty());
        assert_eq!(mfca_exclude_by_distance(&[(2, 1.0), (3, 1.0), (4, 10.0)], 2.5), vec![4]);
        assert!(mfca_exclude_by_distance(&[], 2.5).is_empty());
    }
}
