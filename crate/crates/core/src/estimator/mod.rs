//! The subset-averaged simplex regression estimator of the population cause
//! distribution, with full-pipeline bootstrap intervals and cross-validated
//! choice of the subset size.

mod bootstrap;
mod report;
mod select;

pub use bootstrap::{bootstrap_ci, percentile, BootstrapSummary, MIN_BOOTSTRAP, WARN_BOOTSTRAP};
pub use report::{write_estimate_csv, write_estimate_text};
pub use select::{select_subset_size, SelectionTable};

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Dataset, DatasetKind, SimplexVector, SymptomSubset};
use crate::density::{profile_table, RankRisk, MAX_SUBSET_SIZE};
use crate::error::{Error, Result};
use crate::solver::{solve_simplex, ConstraintSpec};

pub const DEFAULT_N_SUBSETS: usize = 300;

/// `16` when `K >= 18`, otherwise `K / 2`.
pub fn default_subset_size(k: usize) -> usize {
    if k >= 18 {
        16
    } else {
        (k / 2).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    /// Symptoms per subset (`B`); `None` picks [`default_subset_size`].
    pub subset_size: Option<usize>,
    pub n_subsets: usize,
    pub seed: u64,
    /// Bootstrap replicates; zero skips interval estimation.
    pub n_bootstrap: usize,
    /// Minimum retained profiles per subset; `None` means `J + 1`.
    pub min_profiles: Option<usize>,
    pub constraint: ConstraintSpec,
    /// One weight per subset draw for a weighted average.
    pub weights: Option<Vec<f64>>,
    pub keep_subset_estimates: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            subset_size: None,
            n_subsets: DEFAULT_N_SUBSETS,
            seed: 0,
            n_bootstrap: 0,
            min_profiles: None,
            constraint: ConstraintSpec::free(),
            weights: None,
            keep_subset_estimates: false,
        }
    }
}

impl EstimatorConfig {
    pub fn with_seed(seed: u64) -> Self {
        EstimatorConfig { seed, ..Default::default() }
    }

    pub fn resolved_subset_size(&self, k: usize) -> usize {
        self.subset_size.unwrap_or_else(|| default_subset_size(k))
    }
}

/// Why a subset draw did not contribute an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SkipReason {
    NoUsableRecords,
    EmptyCause,
    NoOverlap,
    TooFewProfiles,
    Singular,
    Degenerate,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipReason::NoUsableRecords => "no_usable_records",
            SkipReason::EmptyCause => "empty_cause",
            SkipReason::NoOverlap => "no_overlap",
            SkipReason::TooFewProfiles => "too_few_profiles",
            SkipReason::Singular => "singular",
            SkipReason::Degenerate => "degenerate",
        })
    }
}

/// One retained subset draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetEstimate {
    pub draw: usize,
    pub subset: SymptomSubset,
    pub beta: SimplexVector,
    pub deletions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointEstimate {
    pub point: SimplexVector,
    pub retained: usize,
    pub skipped: BTreeMap<SkipReason, usize>,
    pub subset_estimates: Vec<SubsetEstimate>,
}

impl PointEstimate {
    pub fn n_skipped(&self) -> usize {
        self.skipped.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub causes: Vec<String>,
    pub point: SimplexVector,
    /// Per-cause 95% percentile bounds when bootstrapped.
    pub ci_lower: Option<Vec<f64>>,
    pub ci_upper: Option<Vec<f64>>,
    pub bootstrap_se: Option<Vec<f64>>,
    pub bootstrap_failures: usize,
    pub retained_subsets: usize,
    pub skipped: BTreeMap<SkipReason, usize>,
    pub subset_estimates: Vec<SubsetEstimate>,
    pub subset_size: usize,
    pub config: EstimatorConfig,
    pub warnings: Vec<String>,
}

/// Checks shared by every entry point that pairs hospital and population data.
pub(crate) fn check_pair(hospital: &Dataset, population: &Dataset) -> Result<()> {
    if hospital.kind() != DatasetKind::Labeled {
        return Err(Error::LabelsRequired);
    }
    if hospital.k() != population.k() {
        return Err(Error::SymptomCountMismatch { hospital: hospital.k(), population: population.k() });
    }
    if hospital.cause_set() != population.cause_set() {
        return Err(Error::CauseSetMismatch);
    }
    let counts = hospital.cause_counts()?;
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::CauseAbsent(hospital.cause_set().label(j).to_string()));
    }
    Ok(())
}

/// Subset draws for a run: independent draws of `b` of `k` symptoms from a
/// stream keyed only by the seed.
pub fn draw_subsets(k: usize, b: usize, n: usize, seed: u64) -> Result<Vec<SymptomSubset>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| SymptomSubset::draw(k, b, &mut rng)).collect()
}

fn estimate_subset(
    hospital: &Dataset,
    population: &Dataset,
    subset: &SymptomSubset,
    constraint: &ConstraintSpec,
    min_profiles: usize,
) -> std::result::Result<(SimplexVector, usize), SkipReason> {
    let table = match profile_table(hospital, population, subset) {
        Ok(t) => t,
        Err(Error::NoUsableRecords) => return Err(SkipReason::NoUsableRecords),
        Err(_) => return Err(SkipReason::Degenerate),
    };
    match table.risk {
        Some(RankRisk::EmptyCause(_)) => return Err(SkipReason::EmptyCause),
        Some(RankRisk::NoOverlap) => return Err(SkipReason::NoOverlap),
        Some(RankRisk::TooFewProfiles { .. }) => return Err(SkipReason::TooFewProfiles),
        None => {}
    }
    if table.n_profiles() < min_profiles {
        return Err(SkipReason::TooFewProfiles);
    }
    let y = DVector::from_vec(table.y);
    match solve_simplex(&y, &table.x, constraint) {
        Ok(r) => Ok((r.beta, r.iterations)),
        Err(Error::Singular { .. }) => Err(SkipReason::Singular),
        Err(_) => Err(SkipReason::Degenerate),
    }
}

/// Point estimate only: average of per-subset simplex solutions.
pub fn estimate_point(hospital: &Dataset, population: &Dataset, cfg: &EstimatorConfig) -> Result<PointEstimate> {
    check_pair(hospital, population)?;
    let j = hospital.cause_set().len();
    let k = hospital.k();
    let b = cfg.resolved_subset_size(k);
    if b > MAX_SUBSET_SIZE {
        return Err(Error::InvalidConfig(format!("subset size {b} exceeds {MAX_SUBSET_SIZE}")));
    }
    if cfg.n_subsets == 0 {
        return Err(Error::InvalidConfig("n_subsets must be at least 1".into()));
    }
    if let Some(w) = &cfg.weights {
        if w.len() != cfg.n_subsets || w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "weights must be {} nonnegative numbers",
                cfg.n_subsets
            )));
        }
    }
    cfg.constraint.check(j)?;
    let min_profiles = cfg.min_profiles.unwrap_or(j + 1);
    let subsets = draw_subsets(k, b, cfg.n_subsets, cfg.seed)?;

    let outcomes: Vec<_> = subsets
        .par_iter()
        .map(|s| estimate_subset(hospital, population, s, &cfg.constraint, min_profiles))
        .collect();

    let mut skipped = BTreeMap::new();
    let mut kept = Vec::new();
    for (draw, (subset, outcome)) in subsets.into_iter().zip(outcomes).enumerate() {
        match outcome {
            Ok((beta, deletions)) => kept.push(SubsetEstimate { draw, subset, beta, deletions }),
            Err(reason) => *skipped.entry(reason).or_insert(0) += 1,
        }
    }
    let n_skipped: usize = skipped.values().sum();
    if kept.is_empty() {
        return Err(Error::AllSubsetsSkipped { total: cfg.n_subsets });
    }
    if 2 * n_skipped > cfg.n_subsets {
        return Err(Error::TooManySkipped { skipped: n_skipped, total: cfg.n_subsets });
    }

    let weight = |e: &SubsetEstimate| cfg.weights.as_ref().map_or(1.0, |w| w[e.draw]);
    let total_weight: f64 = kept.iter().map(weight).sum();
    if total_weight <= 0.0 {
        return Err(Error::InvalidConfig("retained subsets have zero total weight".into()));
    }
    let mut mean = vec![0.0; j];
    for e in &kept {
        let w = weight(e) / total_weight;
        for (m, v) in mean.iter_mut().zip(e.beta.values()) {
            *m += w * v;
        }
    }
    // keep pinned causes exact rather than an average of equal values
    for (&i, &v) in cfg.constraint.fixed() {
        mean[i] = v;
    }
    let retained = kept.len();
    Ok(PointEstimate {
        point: SimplexVector::new(mean)?,
        retained,
        skipped,
        subset_estimates: if cfg.keep_subset_estimates { kept } else { Vec::new() },
    })
}

/// Full estimate: point estimate plus, when `cfg.n_bootstrap > 0`, percentile
/// intervals from re-running the whole pipeline on resampled data.
pub fn estimate(hospital: &Dataset, population: &Dataset, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    let point = estimate_point(hospital, population, cfg)?;
    let mut report = EstimateReport {
        causes: hospital.cause_set().labels().to_vec(),
        point: point.point,
        ci_lower: None,
        ci_upper: None,
        bootstrap_se: None,
        bootstrap_failures: 0,
        retained_subsets: point.retained,
        skipped: point.skipped,
        subset_estimates: point.subset_estimates,
        subset_size: cfg.resolved_subset_size(hospital.k()),
        config: cfg.clone(),
        warnings: Vec::new(),
    };
    if cfg.n_bootstrap > 0 {
        let inner = EstimatorConfig { n_bootstrap: 0, keep_subset_estimates: false, ..cfg.clone() };
        let boot = bootstrap_ci(hospital, population, cfg.n_bootstrap, cfg.seed, |h, p, seed| {
            let c = EstimatorConfig { seed, ..inner.clone() };
            Ok(estimate_point(h, p, &c)?.point.into_vec())
        })?;
        let (lower, upper) = boot.interval_around(report.point.values());
        report.ci_lower = Some(lower);
        report.ci_upper = Some(upper);
        report.bootstrap_se = Some(boot.se.clone());
        report.bootstrap_failures = boot.failures;
        report.warnings.extend(boot.warnings);
    }
    Ok(report)
}
