//! Individual cause assignment by Bayes' rule, averaged over a committee of
//! symptom subsets and rescaled so the posteriors aggregate to a given cause
//! distribution.

use std::io::Write;

use rayon::prelude::*;

use crate::data::{Dataset, SimplexVector, Symptom, SymptomRecord, SymptomSubset};
use crate::density::{tabulate_conditional, tabulate_marginal, Conditional, Marginal, Profile};
use crate::error::{Error, Result};
use crate::estimator::{default_subset_size, draw_subsets};

pub const DEFAULT_MEMBERS: usize = 100;
pub const RESCALE_TOL: f64 = 1e-8;
pub const RESCALE_MAX_ITER: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LikelihoodMode {
    /// Product of per-symptom Bernoulli frequencies.
    #[default]
    Product,
    /// Smoothed frequency of the whole subset profile.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Denominator {
    /// `sum_j P(s | j) p_j`, which keeps each member's posterior on the simplex.
    #[default]
    Mixture,
    /// Raw profile frequency in the population; rows are renormalized after
    /// averaging.
    RawFrequency,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommitteeConfig {
    /// `None` falls back to the estimator's default rule.
    pub subset_size: Option<usize>,
    pub n_members: usize,
    pub seed: u64,
    pub smoothing: f64,
    pub mode: LikelihoodMode,
    pub denominator: Denominator,
}

impl Default for CommitteeConfig {
    fn default() -> Self {
        CommitteeConfig {
            subset_size: None,
            n_members: DEFAULT_MEMBERS,
            seed: 0,
            smoothing: crate::baseline::DEFAULT_SMOOTHING,
            mode: LikelihoodMode::Product,
            denominator: Denominator::Mixture,
        }
    }
}

/// `P(s_I | D = j)` estimated from labeled data on one symptom subset.
#[derive(Debug, Clone)]
pub struct ConditionalLikelihood {
    pub subset: SymptomSubset,
    mode: LikelihoodMode,
    smoothing: f64,
    /// `rates[j][i]`: `P(S_{I_i} = 1 | D = j)`, product mode.
    rates: Vec<Vec<f64>>,
    joint: Option<Conditional>,
}

/// Builds the per-cause likelihood of subset profiles.
pub fn conditional_likelihood(
    hospital: &Dataset,
    subset: &SymptomSubset,
    smoothing: f64,
    mode: LikelihoodMode,
) -> Result<ConditionalLikelihood> {
    if !hospital.has_causes() {
        return Err(Error::LabelsRequired);
    }
    if !(smoothing >= 0.0) {
        return Err(Error::InvalidConfig(format!("smoothing {smoothing} must be nonnegative")));
    }
    let j = hospital.cause_set().len();
    let b = subset.len();
    let mut present = vec![vec![0u64; b]; j];
    let mut observed = vec![vec![0u64; b]; j];
    let mut n = vec![0u64; j];
    for r in hospital.records() {
        let c = r.cause.expect("labeled");
        n[c] += 1;
        for (i, &k) in subset.indices().iter().enumerate() {
            match r.symptoms[k] {
                Symptom::Present => {
                    present[c][i] += 1;
                    observed[c][i] += 1;
                }
                Symptom::Absent => observed[c][i] += 1,
                Symptom::Missing => {}
            }
        }
    }
    if let Some(c) = n.iter().position(|&v| v == 0) {
        return Err(Error::CauseAbsent(hospital.cause_set().label(c).to_string()));
    }
    let rates = (0..j)
        .map(|c| {
            (0..b)
                .map(|i| {
                    let den = observed[c][i] as f64 + 2.0 * smoothing;
                    if den > 0.0 {
                        (present[c][i] as f64 + smoothing) / den
                    } else {
                        0.5
                    }
                })
                .collect()
        })
        .collect();
    let joint = match mode {
        LikelihoodMode::Product => None,
        LikelihoodMode::Joint => Some(tabulate_conditional(hospital, subset)?),
    };
    Ok(ConditionalLikelihood { subset: subset.clone(), mode, smoothing, rates, joint })
}

impl ConditionalLikelihood {
    pub fn n_causes(&self) -> usize {
        self.rates.len()
    }

    /// Per-cause likelihood of the record's subset profile. Product mode
    /// skips missing symptoms. `None` when the member has nothing to say:
    /// joint mode with a missing symptom or a profile never seen in the
    /// labeled data.
    pub fn likelihood(&self, record: &SymptomRecord) -> Option<Vec<f64>> {
        match (self.mode, &self.joint) {
            (LikelihoodMode::Joint, Some(joint)) => {
                let p = Profile::of(record, &self.subset)?;
                if joint.per_cause.iter().all(|c| c.count(p) == 0) {
                    return None;
                }
                let cells = (1u64 << self.subset.len()) as f64;
                Some(
                    joint
                        .per_cause
                        .iter()
                        .map(|c| {
                            let den = c.usable as f64 + self.smoothing * cells;
                            if den > 0.0 {
                                (c.count(p) as f64 + self.smoothing) / den
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                )
            }
            _ => Some(
                self.rates
                    .iter()
                    .map(|rates| {
                        self.subset.indices().iter().zip(rates).fold(1.0, |acc, (&k, &p)| match record.symptoms[k] {
                            Symptom::Present => acc * p,
                            Symptom::Absent => acc * (1.0 - p),
                            Symptom::Missing => acc,
                        })
                    })
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorRecord {
    /// Position in the population dataset.
    pub record: usize,
    pub posterior: SimplexVector,
    pub map_cause: usize,
    /// No committee member could score the record; the posterior started
    /// from `p_hat`.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub records: Vec<PosteriorRecord>,
    pub rescale_iterations: usize,
    pub converged: bool,
    /// Largest `|mean posterior_j - p_hat_j|` after rescaling.
    pub aggregate_gap: f64,
}

impl Classification {
    pub fn n_fallback(&self) -> usize {
        self.records.iter().filter(|r| r.fallback).count()
    }

    /// Share of records whose MAP cause matches the hidden truth.
    pub fn accuracy(&self, population: &Dataset) -> Option<f64> {
        if !population.has_causes() {
            return None;
        }
        let hits = self
            .records
            .iter()
            .filter(|r| population.records()[r.record].cause == Some(r.map_cause))
            .count();
        Some(hits as f64 / self.records.len() as f64)
    }

    /// Per-cause share of MAP assignments.
    pub fn map_distribution(&self, j: usize) -> Vec<f64> {
        let mut counts = vec![0.0; j];
        for r in &self.records {
            counts[r.map_cause] += 1.0;
        }
        let n = self.records.len() as f64;
        counts.iter().map(|c| c / n).collect()
    }

    /// Per-cause mean posterior.
    pub fn mean_posterior(&self, j: usize) -> Vec<f64> {
        let mut mean = vec![0.0; j];
        for r in &self.records {
            for (m, v) in mean.iter_mut().zip(r.posterior.values()) {
                *m += v;
            }
        }
        let n = self.records.len() as f64;
        mean.iter().map(|m| m / n).collect()
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn normalize(v: &mut [f64]) -> bool {
    let s: f64 = v.iter().sum();
    if s > 0.0 && s.is_finite() {
        v.iter_mut().for_each(|x| *x /= s);
        true
    } else {
        false
    }
}

struct Member {
    likelihood: ConditionalLikelihood,
    population: Option<Marginal>,
}

/// Reweights every row multiplicatively per cause until the column means
/// match `target`. Returns iterations, convergence and the final gap.
fn rescale(rows: &mut [Vec<f64>], target: &[f64]) -> (usize, bool, f64) {
    let j = target.len();
    let n = rows.len() as f64;
    let gap_of = |rows: &[Vec<f64>]| {
        let mut mean = vec![0.0; j];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let gap = mean.iter().zip(target).map(|(m, t)| (m - t).abs()).fold(0.0, f64::max);
        (mean, gap)
    };
    let (mut mean, mut gap) = gap_of(rows);
    let mut iter = 0;
    while gap > RESCALE_TOL && iter < RESCALE_MAX_ITER {
        let w: Vec<f64> = mean.iter().zip(target).map(|(&m, &t)| if m > 0.0 { t / m } else { 1.0 }).collect();
        rows.par_iter_mut().for_each(|r| {
            let before = r.clone();
            r.iter_mut().zip(&w).for_each(|(v, w)| *v *= w);
            if !normalize(r) {
                *r = before;
            }
        });
        iter += 1;
        (mean, gap) = gap_of(rows);
    }
    (iter, gap <= RESCALE_TOL, gap)
}

/// Posterior cause probabilities for every population record.
pub fn classify(
    hospital: &Dataset,
    population: &Dataset,
    p_hat: &SimplexVector,
    cfg: &CommitteeConfig,
) -> Result<Classification> {
    if !hospital.has_causes() {
        return Err(Error::LabelsRequired);
    }
    if hospital.k() != population.k() {
        return Err(Error::SymptomCountMismatch { hospital: hospital.k(), population: population.k() });
    }
    if hospital.cause_set() != population.cause_set() {
        return Err(Error::CauseSetMismatch);
    }
    let j = hospital.cause_set().len();
    if p_hat.len() != j {
        return Err(Error::InvalidConfig(format!("p_hat has {} entries for {j} causes", p_hat.len())));
    }
    if cfg.n_members == 0 {
        return Err(Error::InvalidConfig("committee needs at least one member".into()));
    }
    let k = hospital.k();
    let b = cfg.subset_size.unwrap_or_else(|| default_subset_size(k));
    let subsets = draw_subsets(k, b, cfg.n_members, cfg.seed)?;
    let members = subsets
        .par_iter()
        .map(|s| {
            let population = match cfg.denominator {
                Denominator::Mixture => None,
                Denominator::RawFrequency => tabulate_marginal(population, s).ok(),
            };
            Ok(Member { likelihood: conditional_likelihood(hospital, s, cfg.smoothing, cfg.mode)?, population })
        })
        .collect::<Result<Vec<_>>>()?;

    let prior = p_hat.values();
    let scored: Vec<(Vec<f64>, bool)> = population
        .records()
        .par_iter()
        .map(|r| {
            let mut acc = vec![0.0; j];
            let mut voters = 0usize;
            for m in &members {
                let Some(lik) = m.likelihood.likelihood(r) else { continue };
                let mut num: Vec<f64> = lik.iter().zip(prior).map(|(l, p)| l * p).collect();
                let ok = match &m.population {
                    None => normalize(&mut num),
                    Some(marginal) => match Profile::of(r, &m.likelihood.subset) {
                        Some(p) if marginal.counts.count(p) > 0 => {
                            let f = marginal.counts.count(p) as f64 / marginal.counts.usable as f64;
                            num.iter_mut().for_each(|v| *v /= f);
                            true
                        }
                        _ => false,
                    },
                };
                if ok && num.iter().all(|v| v.is_finite()) && num.iter().sum::<f64>() > 0.0 {
                    acc.iter_mut().zip(&num).for_each(|(a, v)| *a += v);
                    voters += 1;
                }
            }
            if voters == 0 || !normalize(&mut acc) {
                (prior.to_vec(), true)
            } else {
                (acc, false)
            }
        })
        .collect();

    let (mut rows, flags): (Vec<Vec<f64>>, Vec<bool>) = scored.into_iter().unzip();
    let (rescale_iterations, converged, aggregate_gap) = rescale(&mut rows, prior);
    let records = rows
        .into_iter()
        .zip(flags)
        .enumerate()
        .map(|(i, (mut post, fallback))| {
            normalize(&mut post);
            Ok(PosteriorRecord { record: i, map_cause: argmax(&post), posterior: SimplexVector::new(post)?, fallback })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Classification { records, rescale_iterations, converged, aggregate_gap })
}

/// `record,<cause...>,map_cause,fallback`.
pub fn write_posteriors<W: Write>(w: W, c: &Classification, labels: &[String]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["record".to_string()];
    header.extend(labels.iter().cloned());
    header.extend(["map_cause".to_string(), "fallback".to_string()]);
    out.write_record(&header)?;
    for r in &c.records {
        let mut row = vec![r.record.to_string()];
        row.extend(r.posterior.values().iter().map(|v| v.to_string()));
        row.push(labels[r.map_cause].clone());
        row.push(r.fallback.to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CauseSet, DatasetKind};
    use crate::harness::{generate, random_conditionals, GeneratorSpec};

    fn rec(bits: &[u8], cause: Option<usize>) -> SymptomRecord {
        let s = bits
            .iter()
            .map(|&b| match b {
                1 => Symptom::Present,
                0 => Symptom::Absent,
                _ => Symptom::Missing,
            })
            .collect();
        SymptomRecord::new(s, cause)
    }

    fn labeled(records: Vec<SymptomRecord>, k: usize) -> Dataset {
        Dataset::from_records(DatasetKind::Labeled, CauseSet::numbered(2).unwrap(), k, records).unwrap()
    }

    fn unlabeled(records: Vec<SymptomRecord>, k: usize) -> Dataset {
        Dataset::from_records(DatasetKind::Unlabeled, CauseSet::numbered(2).unwrap(), k, records).unwrap()
    }

    fn committee(b: usize, n: usize) -> CommitteeConfig {
        CommitteeConfig { subset_size: Some(b), n_members: n, seed: 3, ..Default::default() }
    }

    #[test]
    fn counting_and_smoothing() {
        let h = labeled(
            vec![rec(&[1, 0], Some(0)), rec(&[1, 0], Some(0)), rec(&[1, 1], Some(0)), rec(&[0, 1], Some(0))]
                .into_iter()
                .chain([rec(&[0, 2], Some(1)), rec(&[0, 2], Some(1))])
                .collect(),
            2,
        );
        let s = SymptomSubset::new(vec![0], 2).unwrap();
        let lik = conditional_likelihood(&h, &s, 0.0, LikelihoodMode::Product).unwrap();
        assert_eq!(lik.likelihood(&rec(&[1, 0], None)).unwrap(), vec![0.75, 0.0]);
        let lik = conditional_likelihood(&h, &s, 1.0, LikelihoodMode::Product).unwrap();
        assert_eq!(lik.likelihood(&rec(&[1, 0], None)).unwrap()[1], 0.25);
        // missing symptoms drop out of the product
        let s = SymptomSubset::new(vec![1], 2).unwrap();
        let lik = conditional_likelihood(&h, &s, 0.0, LikelihoodMode::Product).unwrap();
        assert_eq!(lik.likelihood(&rec(&[1, 2], None)).unwrap(), vec![1.0, 1.0]);
        assert!(conditional_likelihood(&h, &s, -1.0, LikelihoodMode::Product).is_err());
    }

    #[test]
    fn separating_symptom() {
        let h = labeled(
            (0..20).map(|i| if i % 2 == 0 { rec(&[1, 0], Some(0)) } else { rec(&[0, 1], Some(1)) }).collect(),
            2,
        );
        let p = unlabeled(vec![rec(&[1, 0], None), rec(&[0, 1], None)], 2);
        let cfg = CommitteeConfig { smoothing: 0.0, ..committee(1, 4) };
        let c = classify(&h, &p, &SimplexVector::new(vec![0.5, 0.5]).unwrap(), &cfg).unwrap();
        assert_eq!(c.records[0].posterior.values(), &[1.0, 0.0]);
        assert_eq!(c.records[1].posterior.values(), &[0.0, 1.0]);
        assert_eq!(c.records[0].map_cause, 0);
        assert_eq!(c.records[1].map_cause, 1);
        assert!(c.converged);
    }

    #[test]
    fn uninformative_symptoms_return_prior() {
        let spec = GeneratorSpec {
            causes: None,
            n_hospital: 400,
            n_population: 300,
            hospital_pd: vec![0.5, 0.3, 0.2],
            population_pd: vec![0.2, 0.3, 0.5],
            conditionals: vec![vec![0.4; 6]; 3],
            missing_rate: 0.0,
            violation: 0.0,
            sites: None,
        };
        let g = generate(&spec, 1).unwrap();
        // one record per cause with identical symptoms makes the likelihood exactly flat
        let h = Dataset::from_records(
            DatasetKind::Labeled,
            CauseSet::numbered(3).unwrap(),
            6,
            (0..3).map(|c| rec(&[1, 0, 1, 1, 0, 0], Some(c))).collect(),
        )
        .unwrap();
        let prior = SimplexVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        let c = classify(&h, &g.population, &prior, &committee(3, 10)).unwrap();
        for r in &c.records {
            for (a, b) in r.posterior.values().iter().zip(prior.values()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(r.map_cause, 2);
        }
        assert_eq!(c.rescale_iterations, 0);
    }

    #[test]
    fn map_ties_go_to_lowest_index() {
        assert_eq!(argmax(&[0.3, 0.3, 0.4]), 2);
        assert_eq!(argmax(&[0.4, 0.2, 0.4]), 0);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    fn shifted(seed: u64) -> crate::harness::Generated {
        let spec = GeneratorSpec {
            causes: None,
            n_hospital: 1500,
            n_population: 1500,
            hospital_pd: vec![0.5, 0.3, 0.2],
            population_pd: vec![0.2, 0.3, 0.5],
            conditionals: random_conditionals(3, 10, 0.2, 0.8, seed),
            missing_rate: 0.1,
            violation: 0.0,
            sites: None,
        };
        generate(&spec, seed).unwrap()
    }

    #[test]
    fn posteriors_normalized_and_aggregate_to_target() {
        let g = shifted(2);
        let target = SimplexVector::new(vec![0.25, 0.25, 0.5]).unwrap();
        for mode in [LikelihoodMode::Product, LikelihoodMode::Joint] {
            for denominator in [Denominator::Mixture, Denominator::RawFrequency] {
                let cfg = CommitteeConfig { mode, denominator, ..committee(3, 20) };
                let c = classify(&g.hospital, &g.population, &target, &cfg).unwrap();
                for r in &c.records {
                    assert!((r.posterior.values().iter().sum::<f64>() - 1.0).abs() < 1e-10);
                }
                let mean = c.mean_posterior(3);
                for (m, t) in mean.iter().zip(target.values()) {
                    assert!((m - t).abs() < 1e-6, "{mode:?} {denominator:?}: {mean:?}");
                }
                assert!(c.converged);
            }
        }
    }

    #[test]
    fn joint_matches_product_under_independence() {
        let spec = GeneratorSpec {
            causes: None,
            n_hospital: 6000,
            n_population: 10,
            hospital_pd: vec![0.5, 0.5],
            population_pd: vec![0.5, 0.5],
            conditionals: vec![vec![0.3, 0.6, 0.5], vec![0.7, 0.2, 0.4]],
            missing_rate: 0.0,
            violation: 0.0,
            sites: None,
        };
        let g = generate(&spec, 4).unwrap();
        let s = SymptomSubset::new(vec![0, 1], 3).unwrap();
        let joint = conditional_likelihood(&g.hospital, &s, 0.0, LikelihoodMode::Joint).unwrap();
        let product = conditional_likelihood(&g.hospital, &s, 0.0, LikelihoodMode::Product).unwrap();
        let n = g.hospital.cause_counts().unwrap();
        for bits in [[0, 0], [0, 1], [1, 0], [1, 1]] {
            let r = rec(&[bits[0], bits[1], 0], None);
            let (a, b) = (joint.likelihood(&r).unwrap(), product.likelihood(&r).unwrap());
            for c in 0..2 {
                let sigma = (b[c] * (1.0 - b[c]) / n[c] as f64).sqrt();
                assert!((a[c] - b[c]).abs() < 3.0 * sigma, "profile {bits:?} cause {c}");
            }
        }
    }

    #[test]
    fn unseen_profiles_fall_back_to_prior() {
        let h = labeled(vec![rec(&[1, 1, 0], Some(0)), rec(&[0, 0, 0], Some(1))], 3);
        let p = unlabeled(vec![rec(&[1, 0, 1], None), rec(&[1, 1, 0], None), rec(&[2, 0, 1], None)], 3);
        let cfg = CommitteeConfig { mode: LikelihoodMode::Joint, ..committee(2, 5) };
        let prior = SimplexVector::new(vec![0.6, 0.4]).unwrap();
        let c = classify(&h, &p, &prior, &cfg).unwrap();
        assert!(c.records[0].fallback);
        assert!(!c.records[1].fallback);
        assert!(c.records[2].fallback, "each subset is either missing a symptom or unseen");
        assert_eq!(c.n_fallback(), 2);
    }

    #[test]
    fn deterministic_and_thread_invariant() {
        let g = shifted(5);
        let target = SimplexVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        let run = |t| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .unwrap()
                .install(|| classify(&g.hospital, &g.population, &target, &committee(4, 15)).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn estimated_prior_beats_hospital_prior() {
        let g = shifted(6);
        let truth = crate::data::empirical_cause_distribution(&g.population).unwrap();
        let hosp = crate::data::empirical_cause_distribution(&g.hospital).unwrap();
        let cfg = committee(5, 30);
        let a = classify(&g.hospital, &g.population, &truth, &cfg).unwrap().accuracy(&g.population).unwrap();
        let b = classify(&g.hospital, &g.population, &hosp, &cfg).unwrap().accuracy(&g.population).unwrap();
        assert!(a > b, "{a} vs {b}");
    }

    #[test]
    fn input_errors() {
        let g = shifted(7);
        let cfg = committee(3, 5);
        let two = SimplexVector::new(vec![0.5, 0.5]).unwrap();
        assert!(classify(&g.hospital, &g.population, &two, &cfg).is_err());
        let three = SimplexVector::uniform(3);
        assert!(matches!(classify(&g.population.clone().into_unlabeled(), &g.population, &three, &cfg), Err(Error::LabelsRequired)));
        assert!(classify(&g.hospital, &g.population, &three, &CommitteeConfig { n_members: 0, ..cfg.clone() }).is_err());
    }

    #[test]
    fn output_table() {
        let g = shifted(8);
        let c = classify(&g.hospital, &g.population, &SimplexVector::uniform(3), &committee(3, 5)).unwrap();
        let mut out = Vec::new();
        write_posteriors(&mut out, &c, g.hospital.cause_set().labels()).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "record,cause1,cause2,cause3,map_cause,fallback");
        assert!(lines.next().unwrap().starts_with("0,"));
        assert_eq!(text.lines().count(), 1501);
    }
}
