use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Percentile intervals need at least this many replicates.
pub const MIN_BOOTSTRAP: usize = 50;
/// Fewer replicates than this still run, with a warning.
pub const WARN_BOOTSTRAP: usize = 200;
const MAX_FAILURE_RATE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSummary {
    /// Per-coordinate 2.5% and 97.5% percentiles.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub se: Vec<f64>,
    /// Successful replicate outputs in replicate order.
    pub samples: Vec<Vec<f64>>,
    pub failures: usize,
    pub warnings: Vec<String>,
}

impl BootstrapSummary {
    /// The percentile interval widened, if needed, to contain `point`.
    pub fn interval_around(&self, point: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let lo = self.lower.iter().zip(point).map(|(l, p)| l.min(*p)).collect();
        let hi = self.upper.iter().zip(point).map(|(u, p)| u.max(*p)).collect();
        (lo, hi)
    }
}

/// Linear-interpolation percentile of sorted values, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Runs `pipeline` on `n_bootstrap` pairs of datasets resampled with
/// replacement (hospital and population independently).
///
/// Replicate `r` draws from its own ChaCha stream `r + 1` of `seed`, and the
/// pipeline receives a per-replicate seed from the same stream, so results do
/// not depend on scheduling.
pub fn bootstrap_ci<F>(
    hospital: &Dataset,
    population: &Dataset,
    n_bootstrap: usize,
    seed: u64,
    pipeline: F,
) -> Result<BootstrapSummary>
where
    F: Fn(&Dataset, &Dataset, u64) -> Result<Vec<f64>> + Sync,
{
    if n_bootstrap < MIN_BOOTSTRAP {
        return Err(Error::InvalidConfig(format!(
            "percentile intervals need at least {MIN_BOOTSTRAP} bootstrap replicates, got {n_bootstrap}"
        )));
    }
    let mut warnings = Vec::new();
    if n_bootstrap < WARN_BOOTSTRAP {
        warnings.push(format!(
            "only {n_bootstrap} bootstrap replicates; 95% percentile bounds are noisy below {WARN_BOOTSTRAP}"
        ));
    }

    let outcomes: Vec<Result<Vec<f64>>> = (0..n_bootstrap)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64 + 1);
            let h = hospital.resample(&mut rng)?;
            let p = population.resample(&mut rng)?;
            let inner_seed = rng.next_u64();
            pipeline(&h, &p, inner_seed)
        })
        .collect();

    let mut samples = Vec::with_capacity(n_bootstrap);
    let mut failures = 0;
    let mut last_error = None;
    for outcome in outcomes {
        match outcome {
            Ok(v) => samples.push(v),
            Err(e) => {
                failures += 1;
                last_error = Some(e.to_string());
            }
        }
    }
    if failures as f64 > MAX_FAILURE_RATE * n_bootstrap as f64 || samples.is_empty() {
        return Err(Error::BootstrapFailure {
            failed: failures,
            total: n_bootstrap,
            last: last_error.unwrap_or_default(),
        });
    }
    if failures > 0 {
        warnings.push(format!("{failures} of {n_bootstrap} bootstrap replicates failed and were dropped"));
    }

    let dim = samples[0].len();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::InvalidConfig("bootstrap pipeline returned vectors of varying length".into()));
    }
    let mut lower = Vec::with_capacity(dim);
    let mut upper = Vec::with_capacity(dim);
    let mut se = Vec::with_capacity(dim);
    for c in 0..dim {
        let mut col: Vec<f64> = samples.iter().map(|s| s[c]).collect();
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        se.push(var.sqrt());
        col.sort_by(f64::total_cmp);
        lower.push(percentile(&col, 0.025));
        upper.push(percentile(&col, 0.975));
    }
    Ok(BootstrapSummary { lower, upper, se, samples, failures, warnings })
}
