//! Individual classification with the estimated cause distribution as prior
//! against the same committee using the hospital distribution.

use std::io::Write;

use super::generate::{generate, GeneratorSpec};
use crate::classifier::{classify, CommitteeConfig};
use crate::data::{empirical_cause_distribution, Dataset, Symptom};
use crate::error::Result;
use crate::estimator::{estimate_point, EstimatorConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub causes: Vec<String>,
    /// Direct proportions in the population sample.
    pub truth: Vec<f64>,
    pub hospital_pd: Vec<f64>,
    pub p_hat: Vec<f64>,
    /// MAP accuracy with the estimated prior.
    pub accuracy_estimated: f64,
    /// MAP accuracy with the hospital prior.
    pub accuracy_hospital: f64,
    /// Mean posteriors; these equal the respective priors after rescaling.
    pub aggregate_estimated: Vec<f64>,
    pub aggregate_hospital: Vec<f64>,
    /// Shares of MAP assignments.
    pub map_estimated: Vec<f64>,
    pub map_hospital: Vec<f64>,
    /// `P(S_k = 1)` in each sample.
    pub hospital_marginals: Vec<f64>,
    pub population_marginals: Vec<f64>,
    pub fallback_estimated: usize,
    pub fallback_hospital: usize,
}

impl ExperimentReport {
    pub fn accuracy_gain(&self) -> f64 {
        self.accuracy_estimated - self.accuracy_hospital
    }
}

fn symptom_marginals(d: &Dataset) -> Vec<f64> {
    (0..d.k())
        .map(|k| {
            let (mut present, mut observed) = (0u64, 0u64);
            for r in d.records() {
                match r.symptoms[k] {
                    Symptom::Present => {
                        present += 1;
                        observed += 1;
                    }
                    Symptom::Absent => observed += 1,
                    Symptom::Missing => {}
                }
            }
            if observed == 0 {
                f64::NAN
            } else {
                present as f64 / observed as f64
            }
        })
        .collect()
}

/// Generates a pair from `spec`, estimates the population cause distribution,
/// and classifies every population record twice: with the estimate as prior
/// and with the hospital distribution as prior.
pub fn run_classifier_experiment(
    spec: &GeneratorSpec,
    committee: &CommitteeConfig,
    estimator: &EstimatorConfig,
    seed: u64,
) -> Result<ExperimentReport> {
    let g = generate(spec, seed)?;
    let (h, p) = (&g.hospital, &g.population);
    let j = h.cause_set().len();
    let truth = empirical_cause_distribution(p)?;
    let hospital_pd = empirical_cause_distribution(h)?;
    let p_hat = estimate_point(h, p, estimator)?.point;
    let a = classify(h, p, &p_hat, committee)?;
    let b = classify(h, p, &hospital_pd, committee)?;
    Ok(ExperimentReport {
        causes: h.cause_set().labels().to_vec(),
        truth: truth.into_vec(),
        hospital_pd: hospital_pd.into_vec(),
        p_hat: p_hat.into_vec(),
        accuracy_estimated: a.accuracy(p).expect("hidden truth"),
        accuracy_hospital: b.accuracy(p).expect("hidden truth"),
        aggregate_estimated: a.mean_posterior(j),
        aggregate_hospital: b.mean_posterior(j),
        map_estimated: a.map_distribution(j),
        map_hospital: b.map_distribution(j),
        hospital_marginals: symptom_marginals(h),
        population_marginals: symptom_marginals(p),
        fallback_estimated: a.n_fallback(),
        fallback_hospital: b.n_fallback(),
    })
}

/// One-sided sign test: probability of at least `wins` successes out of `n`
/// fair coin flips.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    // exact binomial tail, accumulated in log space
    let ln_choose = |k: usize| -> f64 {
        (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum()
    };
    (wins..=n).map(|k| (ln_choose(k) - n as f64 * std::f64::consts::LN_2).exp()).sum::<f64>().min(1.0)
}

pub fn write_experiment_summary<W: Write>(mut w: W, r: &ExperimentReport) -> Result<()> {
    writeln!(w, "accuracy_estimated = {}", r.accuracy_estimated)?;
    writeln!(w, "accuracy_hospital_prior = {}", r.accuracy_hospital)?;
    writeln!(w, "accuracy_gain = {}", r.accuracy_gain())?;
    writeln!(w, "fallback_estimated = {}", r.fallback_estimated)?;
    writeln!(w, "fallback_hospital_prior = {}", r.fallback_hospital)?;
    Ok(())
}

/// Symptom marginals in both samples (scatter of one against the other).
pub fn write_marginals<W: Write>(w: W, r: &ExperimentReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["symptom", "hospital", "population"])?;
    for (k, (a, b)) in r.hospital_marginals.iter().zip(&r.population_marginals).enumerate() {
        out.write_record([(k + 1).to_string(), a.to_string(), b.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Cause distributions in both samples.
pub fn write_cause_marginals<W: Write>(w: W, r: &ExperimentReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["cause", "hospital", "population"])?;
    for (c, (a, b)) in r.causes.iter().zip(r.hospital_pd.iter().zip(&r.truth)) {
        out.write_record([c.clone(), a.to_string(), b.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Truth against both aggregates, one row per cause.
pub fn write_aggregates<W: Write>(w: W, r: &ExperimentReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["cause", "truth", "estimated_prior", "hospital_prior", "map_estimated", "map_hospital"])?;
    for c in 0..r.causes.len() {
        out.write_record([
            r.causes[c].clone(),
            r.truth[c].to_string(),
            r.aggregate_estimated[c].to_string(),
            r.aggregate_hospital[c].to_string(),
            r.map_estimated[c].to_string(),
            r.map_hospital[c].to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::classifier_shift_spec;

    #[test]
    fn sign_test_tail() {
        assert!((sign_test_p(0, 10) - 1.0).abs() < 1e-12);
        assert!((sign_test_p(10, 10) - 1.0 / 1024.0).abs() < 1e-15);
        // P(X >= 15) for X ~ Bin(20, 1/2) = 21700 / 2^20
        assert!((sign_test_p(15, 20) - 21700.0 / 1048576.0).abs() < 1e-12);
    }

    fn small_cfgs() -> (CommitteeConfig, EstimatorConfig) {
        (
            CommitteeConfig { subset_size: Some(10), n_members: 20, ..Default::default() },
            EstimatorConfig { subset_size: Some(8), n_subsets: 40, ..Default::default() },
        )
    }

    #[test]
    fn shift_gives_estimated_prior_the_edge() {
        let (c, e) = small_cfgs();
        let r = run_classifier_experiment(&classifier_shift_spec(1), &c, &e, 1).unwrap();
        assert!(r.accuracy_gain() > 0.05, "{r:?}");
        for j in 0..5 {
            assert!((r.aggregate_estimated[j] - r.p_hat[j]).abs() < 1e-6);
            assert!((r.aggregate_hospital[j] - r.hospital_pd[j]).abs() < 1e-6);
        }
        let mut out = Vec::new();
        write_aggregates(&mut out, &r).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 6);
        let mut out = Vec::new();
        write_marginals(&mut out, &r).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 21);
    }

    #[test]
    fn no_shift_no_edge() {
        let mut spec = classifier_shift_spec(2);
        spec.population_pd = spec.hospital_pd.clone();
        let (c, e) = small_cfgs();
        let r = run_classifier_experiment(&spec, &c, &e, 2).unwrap();
        assert!(r.accuracy_gain().abs() < 0.02, "{r:?}");
    }
}
