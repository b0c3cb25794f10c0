//! Estimate on a hidden-label half, then unveil the labels and compare.

use std::io::Write;

use rayon::prelude::*;

use super::generate::{generate, GeneratorSpec};
use crate::data::{empirical_cause_distribution, split_by_site, split_random, Dataset};
use crate::error::{Error, Result};
use crate::estimator::{bootstrap_ci, estimate_point, EstimatorConfig};

/// z for a two-sided 95% normal interval.
const Z95: f64 = 1.959963984540054;
/// Populations with fewer records per cause than this get a warning.
const SMALL_SAMPLE_PER_CAUSE: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct CauseValidation {
    pub cause: String,
    /// Direct sample proportion in the hidden half.
    pub truth: f64,
    pub estimate: f64,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    /// Truth inside the estimate's interval.
    pub covered: Option<bool>,
    /// Bootstrap interval of `estimate - direct`.
    pub diff_lower: Option<f64>,
    pub diff_upper: Option<f64>,
    pub diff_covers_zero: Option<bool>,
    /// Normal-approximation 95% interval of the direct sample proportion.
    pub direct_lower: f64,
    pub direct_upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub protocol: String,
    pub n_hospital: usize,
    pub n_population: usize,
    pub causes: Vec<CauseValidation>,
    pub mae: f64,
    pub max_error: f64,
    /// Mean of the `covered` flags, when intervals were computed.
    pub coverage_rate: Option<f64>,
    pub diff_coverage_rate: Option<f64>,
    /// Mean bootstrap interval width over causes.
    pub mean_ci_width: Option<f64>,
    pub mean_direct_width: f64,
    pub warnings: Vec<String>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Runs the estimator on the pair and scores it against the population's
/// hidden labels. With `cfg.n_bootstrap > 0` every replicate re-estimates and
/// recounts the direct proportions on the same resampled data.
pub fn validate_pair(
    protocol: &str,
    hospital: &Dataset,
    population: &Dataset,
    cfg: &EstimatorConfig,
) -> Result<ValidationReport> {
    if !population.has_causes() {
        return Err(Error::LabelsRequired);
    }
    let truth = empirical_cause_distribution(population)?;
    let point = estimate_point(hospital, population, cfg)?.point;
    let j = truth.len();
    let n_pop = population.len() as f64;

    let boot = if cfg.n_bootstrap > 0 {
        let inner = EstimatorConfig { n_bootstrap: 0, keep_subset_estimates: false, ..cfg.clone() };
        let s = bootstrap_ci(hospital, population, cfg.n_bootstrap, cfg.seed, |h, p, seed| {
            let est = estimate_point(h, p, &EstimatorConfig { seed, ..inner.clone() })?.point;
            let direct = empirical_cause_distribution(p)?;
            let mut out = est.values().to_vec();
            out.extend(est.values().iter().zip(direct.values()).map(|(e, d)| e - d));
            Ok(out)
        })?;
        Some(s)
    } else {
        None
    };

    let mut causes = Vec::with_capacity(j);
    for c in 0..j {
        let t = truth[c];
        let half = Z95 * (t * (1.0 - t) / n_pop).sqrt();
        let (lo, hi, dlo, dhi) = match &boot {
            Some(b) => {
                let diff = point[c] - t;
                (
                    Some(b.lower[c].min(point[c])),
                    Some(b.upper[c].max(point[c])),
                    Some(b.lower[j + c].min(diff)),
                    Some(b.upper[j + c].max(diff)),
                )
            }
            None => (None, None, None, None),
        };
        causes.push(CauseValidation {
            cause: hospital.cause_set().label(c).to_string(),
            truth: t,
            estimate: point[c],
            ci_lower: lo,
            ci_upper: hi,
            covered: lo.zip(hi).map(|(l, h)| l <= t && t <= h),
            diff_lower: dlo,
            diff_upper: dhi,
            diff_covers_zero: dlo.zip(dhi).map(|(l, h)| l <= 0.0 && 0.0 <= h),
            direct_lower: t - half,
            direct_upper: t + half,
        });
    }

    let errors: Vec<f64> = causes.iter().map(|c| (c.estimate - c.truth).abs()).collect();
    let rate = |f: fn(&CauseValidation) -> Option<bool>| {
        boot.as_ref().map(|_| mean(causes.iter().map(|c| f64::from(u8::from(f(c) == Some(true))))))
    };
    let mut warnings = boot.as_ref().map(|b| b.warnings.clone()).unwrap_or_default();
    if population.len() < SMALL_SAMPLE_PER_CAUSE * j {
        warnings.push(format!(
            "small population sample: {} records for {j} causes; intervals will be wide",
            population.len()
        ));
    }
    Ok(ValidationReport {
        protocol: protocol.to_string(),
        n_hospital: hospital.len(),
        n_population: population.len(),
        mae: mean(errors.iter().copied()),
        max_error: errors.iter().copied().fold(0.0, f64::max),
        coverage_rate: rate(|c| c.covered),
        diff_coverage_rate: rate(|c| c.diff_covers_zero),
        mean_ci_width: boot
            .as_ref()
            .map(|_| mean(causes.iter().map(|c| c.ci_upper.unwrap() - c.ci_lower.unwrap()))),
        mean_direct_width: mean(causes.iter().map(|c| c.direct_upper - c.direct_lower)),
        causes,
        warnings,
    })
}

/// Random split: `fraction` of the records become the labeled hospital half.
pub fn run_split_validation(d: &Dataset, cfg: &EstimatorConfig, fraction: f64, seed: u64) -> Result<ValidationReport> {
    let (h, p) = split_random(d, fraction, seed)?;
    validate_pair("split", &h, &p, cfg)
}

/// Cross-site split: records tagged with `hospital_sites` form the hospital.
pub fn run_site_validation(d: &Dataset, hospital_sites: &[String], cfg: &EstimatorConfig) -> Result<ValidationReport> {
    let (h, p) = split_by_site(d, hospital_sites)?;
    validate_pair("site", &h, &p, cfg)
}

/// One coverage cell: does the interval for cause `j` in replication `r`
/// contain the generating proportion?
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageStudy {
    /// `covered[r][j]`.
    pub covered: Vec<Vec<bool>>,
    pub rate: f64,
}

/// Fresh datasets per replication, bootstrap intervals scored against the
/// generator's population distribution. Replications run in parallel and are
/// keyed by index, so the result does not depend on scheduling.
pub fn coverage_study(spec: &GeneratorSpec, cfg: &EstimatorConfig, replications: usize, seed: u64) -> Result<CoverageStudy> {
    if cfg.n_bootstrap == 0 || replications == 0 {
        return Err(Error::InvalidConfig("coverage needs bootstrap replicates and replications".into()));
    }
    let covered = (0..replications)
        .into_par_iter()
        .map(|r| {
            let data_seed = seed.wrapping_add(r as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let g = generate(spec, data_seed)?;
            let c = EstimatorConfig { seed: data_seed ^ 0x5555, ..cfg.clone() };
            let report = crate::estimator::estimate(&g.hospital, &g.population, &c)?;
            let (lo, hi) = (report.ci_lower.unwrap(), report.ci_upper.unwrap());
            Ok(spec.population_pd.iter().enumerate().map(|(j, &t)| lo[j] <= t && t <= hi[j]).collect())
        })
        .collect::<Result<Vec<Vec<bool>>>>()?;
    let cells = covered.iter().flatten().count() as f64;
    let rate = covered.iter().flatten().filter(|&&c| c).count() as f64 / cells;
    Ok(CoverageStudy { covered, rate })
}

/// Mean estimator MAE against the generating distribution for each violation
/// magnitude, averaged over `replications` datasets per cell. Replication `r`
/// uses the same seed in every cell.
pub fn violation_sweep(
    spec: &GeneratorSpec,
    cfg: &EstimatorConfig,
    epsilons: &[f64],
    replications: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let cells: Vec<(usize, usize)> =
        (0..epsilons.len()).flat_map(|e| (0..replications).map(move |r| (e, r))).collect();
    let maes = cells
        .par_iter()
        .map(|&(e, r)| {
            let s = GeneratorSpec { violation: epsilons[e], ..spec.clone() };
            let g = generate(&s, seed.wrapping_add(r as u64))?;
            let est = estimate_point(&g.hospital, &g.population, &EstimatorConfig { seed: r as u64, ..cfg.clone() })?;
            Ok(mean(est.point.values().iter().zip(&spec.population_pd).map(|(a, b)| (a - b).abs())))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(epsilons
        .iter()
        .enumerate()
        .map(|(e, &eps)| (eps, mean(maes[e * replications..(e + 1) * replications].iter().copied())))
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Summary key-value lines, then one tab-separated row per cause.
pub fn write_validation_report<W: Write>(mut w: W, r: &ValidationReport) -> Result<()> {
    writeln!(w, "protocol = {}", r.protocol)?;
    writeln!(w, "n_hospital = {}", r.n_hospital)?;
    writeln!(w, "n_population = {}", r.n_population)?;
    writeln!(w, "mae = {}", r.mae)?;
    writeln!(w, "max_error = {}", r.max_error)?;
    writeln!(w, "coverage_rate = {}", opt(r.coverage_rate))?;
    writeln!(w, "diff_coverage_rate = {}", opt(r.diff_coverage_rate))?;
    writeln!(w, "mean_ci_width = {}", opt(r.mean_ci_width))?;
    writeln!(w, "mean_direct_width = {}", r.mean_direct_width)?;
    for warning in &r.warnings {
        writeln!(w, "warning = {warning:?}")?;
    }
    writeln!(w)?;
    writeln!(w, "cause\ttruth\testimate\tci_lower\tci_upper\tcovered\tdiff_lower\tdiff_upper\tdiff_covers_zero")?;
    for c in &r.causes {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            c.cause,
            c.truth,
            c.estimate,
            opt(c.ci_lower),
            opt(c.ci_upper),
            c.covered.map(|b| b.to_string()).unwrap_or_default(),
            opt(c.diff_lower),
            opt(c.diff_upper),
            c.diff_covers_zero.map(|b| b.to_string()).unwrap_or_default(),
        )?;
    }
    Ok(())
}

/// Truth against estimate with both intervals, one row per cause.
pub fn write_scatter<W: Write>(w: W, r: &ValidationReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["cause", "truth", "estimate", "ci_lower", "ci_upper", "direct_lower", "direct_upper"])?;
    for c in &r.causes {
        out.write_record([
            c.cause.clone(),
            c.truth.to_string(),
            c.estimate.to_string(),
            opt(c.ci_lower),
            opt(c.ci_upper),
            c.direct_lower.to_string(),
            c.direct_upper.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Difference series: estimate minus direct, with its interval, one row per
/// cause ordered by truth.
pub fn write_difference<W: Write>(w: W, r: &ValidationReport) -> Result<()> {
    let mut rows: Vec<&CauseValidation> = r.causes.iter().collect();
    rows.sort_by(|a, b| a.truth.total_cmp(&b.truth));
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["cause", "truth", "difference", "diff_lower", "diff_upper"])?;
    for c in rows {
        out.write_record([
            c.cause.clone(),
            c.truth.to_string(),
            (c.estimate - c.truth).to_string(),
            opt(c.diff_lower),
            opt(c.diff_upper),
        ])?;
    }
    out.flush()?;
    Ok(())
}
