use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{estimate_point, EstimatorConfig};
use crate::data::{empirical_cause_distribution, split_random, Dataset, DatasetKind};
use crate::error::{Error, Result};

/// Cross-validation scores for candidate subset sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTable {
    /// Sorted ascending.
    pub candidates: Vec<usize>,
    /// `fold_scores[c][f]`: mean absolute error of candidate `c` on fold `f`,
    /// `None` where the estimator failed.
    pub fold_scores: Vec<Vec<Option<f64>>>,
    /// Mean over feasible folds.
    pub mean_scores: Vec<Option<f64>>,
    pub chosen: usize,
}

/// Picks `B` by repeatedly splitting the hospital data into random halves,
/// estimating the held-out half's cause distribution for each candidate and
/// scoring mean absolute error. Lowest mean error wins; ties go to the smaller
/// `B`. Candidates that fail on every fold are ruled out.
pub fn select_subset_size(
    hospital: &Dataset,
    candidates: &[usize],
    folds: usize,
    seed: u64,
    base: &EstimatorConfig,
) -> Result<SelectionTable> {
    if hospital.kind() != DatasetKind::Labeled {
        return Err(Error::LabelsRequired);
    }
    if candidates.is_empty() || folds == 0 {
        return Err(Error::InvalidConfig("need at least one candidate and one fold".into()));
    }
    let mut candidates = candidates.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    if let Some(&b) = candidates.iter().find(|&&b| b == 0 || b >= hospital.k()) {
        return Err(Error::InvalidConfig(format!("candidate B = {b} outside [1, {})", hospital.k())));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splits = (0..folds)
        .map(|_| {
            let split_seed = rng.next_u64();
            let est_seed = rng.next_u64();
            split_random(hospital, 0.5, split_seed).map(|(h, p)| (h, p, est_seed))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut fold_scores = Vec::with_capacity(candidates.len());
    for &b in &candidates {
        let mut scores = Vec::with_capacity(folds);
        for (h, p, est_seed) in &splits {
            let cfg = EstimatorConfig {
                subset_size: Some(b),
                seed: *est_seed,
                n_bootstrap: 0,
                keep_subset_estimates: false,
                weights: None,
                ..base.clone()
            };
            let truth = empirical_cause_distribution(p)?;
            let score = estimate_point(h, p, &cfg).ok().map(|e| {
                let j = truth.len() as f64;
                e.point.values().iter().zip(truth.values()).map(|(a, b)| (a - b).abs()).sum::<f64>() / j
            });
            scores.push(score);
        }
        fold_scores.push(scores);
    }
    let mean_scores: Vec<Option<f64>> = fold_scores
        .iter()
        .map(|s| {
            let ok: Vec<f64> = s.iter().flatten().copied().collect();
            (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64)
        })
        .collect();

    let chosen = if candidates.len() == 1 {
        candidates[0]
    } else {
        let mut best: Option<(usize, f64)> = None;
        for (&b, score) in candidates.iter().zip(&mean_scores) {
            if let Some(s) = *score {
                if best.is_none_or(|(_, bs)| s < bs) {
                    best = Some((b, s));
                }
            }
        }
        best.ok_or(Error::NoFeasibleCandidate)?.0
    };
    Ok(SelectionTable { candidates, fold_scores, mean_scores, chosen })
}
