//! Synthetic hospital/population pairs with conditionally independent
//! symptoms.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CauseSet, Dataset, DatasetKind, SimplexVector, Symptom, SymptomRecord};
use crate::error::{Error, Result};

/// Perturbed Bernoulli rates are kept inside this band.
const RATE_FLOOR: f64 = 0.01;

/// Hospital records are tagged with sites whose symptom rates are shifted by
/// `perturbation` in a random direction per (site, cause, symptom).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSpec {
    pub labels: Vec<String>,
    pub perturbation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(default)]
    pub causes: Option<Vec<String>>,
    pub n_hospital: usize,
    pub n_population: usize,
    pub hospital_pd: Vec<f64>,
    pub population_pd: Vec<f64>,
    /// `J x K` rates `P(S_k = 1 | D = j)`.
    pub conditionals: Vec<Vec<f64>>,
    #[serde(default)]
    pub missing_rate: f64,
    /// Magnitude of the shift applied to population rates (`0` keeps
    /// `P(S|D)` identical across the two samples).
    #[serde(default)]
    pub violation: f64,
    #[serde(default)]
    pub sites: Option<SiteSpec>,
}

impl GeneratorSpec {
    pub fn j(&self) -> usize {
        self.conditionals.len()
    }

    pub fn k(&self) -> usize {
        self.conditionals.first().map_or(0, Vec::len)
    }

    pub fn cause_set(&self) -> Result<CauseSet> {
        match &self.causes {
            Some(labels) => CauseSet::new(labels.clone()),
            None => CauseSet::numbered(self.j()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.j();
        let k = self.k();
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if j < 2 || k < 2 {
            return bad(format!("need J >= 2 and K >= 2, got J = {j}, K = {k}"));
        }
        if self.conditionals.iter().any(|row| row.len() != k) {
            return bad("conditionals rows differ in length".into());
        }
        if self.conditionals.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("conditional rates must lie in [0, 1]".into());
        }
        for (name, pd) in [("hospital_pd", &self.hospital_pd), ("population_pd", &self.population_pd)] {
            if pd.len() != j {
                return bad(format!("{name} has {} entries, expected {j}", pd.len()));
            }
            SimplexVector::new(pd.clone())?;
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad(format!("missing_rate {} not in [0, 1)", self.missing_rate));
        }
        if !(self.violation >= 0.0) {
            return bad("violation must be nonnegative".into());
        }
        if let Some(s) = &self.sites {
            if s.labels.len() < 2 || !(s.perturbation >= 0.0) {
                return bad("sites need at least two labels and a nonnegative perturbation".into());
            }
        }
        if let Some(c) = &self.causes {
            if c.len() != j {
                return bad(format!("{} cause labels for J = {j}", c.len()));
            }
        }
        if self.n_hospital == 0 {
            return bad("n_hospital must be positive".into());
        }
        Ok(())
    }

    /// Parses a TOML generator description.
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: GeneratorSpec =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("generator spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("generator spec serializes")
    }
}

/// `J x K` rates drawn uniformly from `[lo, hi]`.
pub fn random_conditionals(j: usize, k: usize, lo: f64, hi: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..j).map(|_| (0..k).map(|_| rng.random_range(lo..=hi)).collect()).collect()
}

fn perturb<R: Rng>(rates: &[Vec<f64>], eps: f64, rng: &mut R) -> Vec<Vec<f64>> {
    rates
        .iter()
        .map(|row| {
            row.iter()
                .map(|&p| {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    if eps == 0.0 {
                        p
                    } else {
                        (p + sign * eps).clamp(RATE_FLOOR, 1.0 - RATE_FLOOR)
                    }
                })
                .collect()
        })
        .collect()
}

fn draw_records<R: Rng>(
    n: usize,
    pd: &[f64],
    rates_for: impl Fn(usize) -> (usize, Option<usize>),
    rates: &[Vec<Vec<f64>>],
    missing_rate: f64,
    rng: &mut R,
) -> Result<Vec<SymptomRecord>> {
    let causes = WeightedIndex::new(pd).map_err(|e| Error::InvalidConfig(format!("cause weights: {e}")))?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let cause = causes.sample(rng);
        let (table, site) = rates_for(i);
        let symptoms = rates[table][cause]
            .iter()
            .map(|&p| {
                let present = rng.random::<f64>() < p;
                if missing_rate > 0.0 && rng.random::<f64>() < missing_rate {
                    Symptom::Missing
                } else if present {
                    Symptom::Present
                } else {
                    Symptom::Absent
                }
            })
            .collect();
        out.push(SymptomRecord { symptoms, cause: Some(cause), site });
    }
    Ok(out)
}

/// A generated pair; the population carries its true causes hidden.
#[derive(Debug, Clone)]
pub struct Generated {
    pub hospital: Dataset,
    pub population: Dataset,
    /// Rates actually used for the population (after any violation).
    pub population_conditionals: Vec<Vec<f64>>,
}

/// Draws the hospital sample only.
pub fn generate_labeled(spec: &GeneratorSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    hospital_sample(spec, &mut rng)
}

fn hospital_sample(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let causes = spec.cause_set()?;
    match &spec.sites {
        None => {
            let records = draw_records(
                spec.n_hospital,
                &spec.hospital_pd,
                |_| (0, None),
                std::slice::from_ref(&spec.conditionals),
                spec.missing_rate,
                rng,
            )?;
            Dataset::from_records(DatasetKind::Labeled, causes, spec.k(), records)
        }
        Some(sites) => {
            let tables: Vec<_> = (0..sites.labels.len())
                .map(|_| perturb(&spec.conditionals, sites.perturbation, rng))
                .collect();
            let n_sites = sites.labels.len();
            let records = draw_records(
                spec.n_hospital,
                &spec.hospital_pd,
                |i| (i % n_sites, Some(i % n_sites)),
                &tables,
                spec.missing_rate,
                rng,
            )?;
            let tags: Vec<usize> = records.iter().map(|r| r.site.unwrap_or(0)).collect();
            let records = records.into_iter().map(|r| SymptomRecord { site: None, ..r }).collect();
            let ds = Dataset::from_records(DatasetKind::Labeled, causes, spec.k(), records)?;
            ds.with_sites(sites.labels.clone(), &tags)
        }
    }
}

/// Draws hospital and population samples. Causes come from the respective
/// distributions, symptoms independently given cause, missingness completely
/// at random.
pub fn generate(spec: &GeneratorSpec, seed: u64) -> Result<Generated> {
    spec.validate()?;
    if spec.n_population == 0 {
        return Err(Error::InvalidConfig("n_population must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hospital = hospital_sample(spec, &mut rng)?;
    let population_conditionals = perturb(&spec.conditionals, spec.violation, &mut rng);
    let records = draw_records(
        spec.n_population,
        &spec.population_pd,
        |_| (0, None),
        std::slice::from_ref(&population_conditionals),
        spec.missing_rate,
        &mut rng,
    )?;
    let population = Dataset::from_records(DatasetKind::Hidden, spec.cause_set()?, spec.k(), records)?;
    Ok(Generated { hospital, population, population_conditionals })
}

/// Five causes, twenty symptoms, 3000 records per sample,
/// and cause distributions that differ sharply between the two samples.
pub fn classifier_shift_spec(seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        causes: None,
        n_hospital: 3000,
        n_population: 3000,
        hospital_pd: vec![0.40, 0.30, 0.15, 0.10, 0.05],
        population_pd: vec![0.05, 0.10, 0.20, 0.30, 0.35],
        conditionals: random_conditionals(5, 20, 0.1, 0.9, seed),
        missing_rate: 0.0,
        violation: 0.0,
        sites: None,
    }
}

/// Thirteen causes, 56 symptoms and 2822 labeled records, meant to be split
/// into hospital and population halves.
pub fn china_shaped_spec(seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        causes: None,
        n_hospital: 2822,
        n_population: 0,
        hospital_pd: vec![0.22, 0.16, 0.12, 0.10, 0.08, 0.07, 0.06, 0.05, 0.04, 0.04, 0.03, 0.02, 0.01],
        population_pd: vec![0.22, 0.16, 0.12, 0.10, 0.08, 0.07, 0.06, 0.05, 0.04, 0.04, 0.03, 0.02, 0.01],
        conditionals: random_conditionals(13, 56, 0.05, 0.6, seed),
        missing_rate: 0.0,
        violation: 0.0,
        sites: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::empirical_cause_distribution;

    fn small_spec() -> GeneratorSpec {
        GeneratorSpec {
            causes: None,
            n_hospital: 4000,
            n_population: 4000,
            hospital_pd: vec![0.5, 0.5],
            population_pd: vec![0.5, 0.5],
            conditionals: vec![vec![0.2, 0.7, 0.5], vec![0.6, 0.3, 0.1]],
            missing_rate: 0.0,
            violation: 0.0,
            sites: None,
        }
    }

    fn symptom_rate(d: &Dataset, cause: Option<usize>, k: usize) -> (f64, f64) {
        let rows: Vec<_> = d
            .records()
            .iter()
            .filter(|r| cause.is_none() || r.cause == cause)
            .filter(|r| !r.symptoms[k].is_missing())
            .collect();
        let n = rows.len() as f64;
        let hits = rows.iter().filter(|r| r.symptoms[k] == Symptom::Present).count() as f64;
        (hits / n, n)
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = small_spec();
        let a = generate(&spec, 3).unwrap();
        let b = generate(&spec, 3).unwrap();
        let c = generate(&spec, 4).unwrap();
        assert_eq!(a.hospital, b.hospital);
        assert_eq!(a.population, b.population);
        assert_ne!(a.hospital, c.hospital);
    }

    #[test]
    fn no_violation_shares_conditionals() {
        let g = generate(&small_spec(), 1).unwrap();
        for j in 0..2 {
            for k in 0..3 {
                let (ph, nh) = symptom_rate(&g.hospital, Some(j), k);
                let (pp, np) = symptom_rate(&g.population, Some(j), k);
                let p = small_spec().conditionals[j][k];
                let sigma = (p * (1.0 - p) * (1.0 / nh + 1.0 / np)).sqrt();
                assert!((ph - pp).abs() < 3.0 * sigma, "cause {j} symptom {k}");
            }
        }
    }

    #[test]
    fn equal_pd_gives_matching_marginals() {
        let g = generate(&small_spec(), 2).unwrap();
        for k in 0..3 {
            let (ph, n) = symptom_rate(&g.hospital, None, k);
            let (pp, _) = symptom_rate(&g.population, None, k);
            let sigma = (2.0 * ph * (1.0 - ph) / n).sqrt();
            assert!((ph - pp).abs() < 3.5 * sigma);
        }
    }

    #[test]
    fn missingness_and_violation() {
        let mut spec = small_spec();
        spec.missing_rate = 0.2;
        spec.violation = 0.1;
        let g = generate(&spec, 5).unwrap();
        let missing = g.population.records().iter().flat_map(|r| &r.symptoms).filter(|s| s.is_missing()).count();
        let frac = missing as f64 / (4000.0 * 3.0);
        assert!((frac - 0.2).abs() < 0.02);
        for (row, orig) in g.population_conditionals.iter().zip(&spec.conditionals) {
            for (p, q) in row.iter().zip(orig) {
                let up = (q + 0.1_f64).clamp(0.01, 0.99);
                let down = (q - 0.1_f64).clamp(0.01, 0.99);
                assert!((p - up).abs() < 1e-12 || (p - down).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shifted_preset_has_divergent_marginals() {
        let spec = classifier_shift_spec(1);
        let g = generate(&spec, 1).unwrap();
        let h = empirical_cause_distribution(&g.hospital).unwrap();
        let p = empirical_cause_distribution(&g.population).unwrap();
        let tv: f64 = h.values().iter().zip(p.values()).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
        assert!(tv > 0.3, "total variation {tv}");
        // most symptom marginals move well beyond sampling noise
        let moved = (0..spec.k())
            .filter(|&k| (symptom_rate(&g.hospital, None, k).0 - symptom_rate(&g.population, None, k).0).abs() > 0.03)
            .count();
        assert!(moved >= 10, "only {moved} symptom marginals differ");
    }

    #[test]
    fn sites_are_tagged() {
        let mut spec = small_spec();
        spec.sites = Some(SiteSpec { labels: vec!["a".into(), "b".into(), "c".into()], perturbation: 0.05 });
        let h = generate_labeled(&spec, 1).unwrap();
        assert_eq!(h.site_labels().len(), 3);
        assert!(h.records().iter().all(|r| r.site.is_some()));
    }

    #[test]
    fn toml_round_trip() {
        let spec = small_spec();
        assert_eq!(GeneratorSpec::from_toml(&spec.to_toml()).unwrap(), spec);
        let mut bad = spec.clone();
        bad.hospital_pd = vec![0.5, 0.6];
        assert!(GeneratorSpec::from_toml(&bad.to_toml()).is_err());
    }
}
