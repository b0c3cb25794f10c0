//! Nonparametric tabulation of symptom subprofiles.
//!
//! A profile over a subset of `B` symptoms is packed into a `u64`, bit `i`
//! holding the `i`-th subset symptom, so `B` is limited to 64.

use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;

use crate::data::{Dataset, SymptomRecord, SymptomSubset, Symptom};
use crate::error::{Error, Result};

pub const MAX_SUBSET_SIZE: usize = 64;

/// A complete (no missing entries) symptom subprofile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Profile {
    code: u64,
    len: u8,
}

impl Profile {
    pub fn from_bits(bits: &[bool]) -> Self {
        assert!(bits.len() <= MAX_SUBSET_SIZE);
        let code = bits.iter().enumerate().fold(0u64, |acc, (i, &b)| acc | ((b as u64) << i));
        Profile { code, len: bits.len() as u8 }
    }

    /// The record's profile on `subset`, or `None` if any subset symptom is missing.
    pub fn of(record: &SymptomRecord, subset: &SymptomSubset) -> Option<Self> {
        let mut code = 0u64;
        for (bit, &k) in subset.indices().iter().enumerate() {
            match record.symptoms[k] {
                Symptom::Present => code |= 1 << bit,
                Symptom::Absent => {}
                Symptom::Missing => return None,
            }
        }
        Some(Profile { code, len: subset.len() as u8 })
    }

    pub fn code(self) -> u64 {
        self.code
    }

    pub fn len(self) -> usize {
        self.len as usize
    }

    pub fn is_empty(self) -> bool {
        self.len == 0
    }

    pub fn bit(self, i: usize) -> bool {
        self.code >> i & 1 == 1
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len() {
            f.write_str(if self.bit(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Sorted distinct profiles with their counts among usable records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProfileCounts {
    pub counts: Vec<(Profile, u64)>,
    pub usable: u64,
}

impl ProfileCounts {
    fn from_profiles(mut profiles: Vec<Profile>) -> Self {
        profiles.sort_unstable();
        let usable = profiles.len() as u64;
        let mut counts: Vec<(Profile, u64)> = Vec::new();
        for p in profiles {
            match counts.last_mut() {
                Some((q, c)) if *q == p => *c += 1,
                _ => counts.push((p, 1)),
            }
        }
        ProfileCounts { counts, usable }
    }

    pub fn count(&self, p: Profile) -> u64 {
        self.counts
            .binary_search_by_key(&p, |(q, _)| *q)
            .map(|i| self.counts[i].1)
            .unwrap_or(0)
    }

    pub fn frequencies(&self) -> Vec<(Profile, f64)> {
        let n = self.usable as f64;
        self.counts.iter().map(|&(p, c)| (p, c as f64 / n)).collect()
    }
}

fn check_subset(d: &Dataset, s: &SymptomSubset) -> Result<()> {
    if s.len() > MAX_SUBSET_SIZE {
        return Err(Error::InvalidSubset(format!("subset size {} exceeds {MAX_SUBSET_SIZE}", s.len())));
    }
    if s.indices().last().is_some_and(|&k| k >= d.k()) {
        return Err(Error::InvalidSubset(format!("subset index out of range for K = {}", d.k())));
    }
    Ok(())
}

/// Population profile distribution `P(S_I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    pub subset: SymptomSubset,
    pub counts: ProfileCounts,
}

/// Profile frequencies over records complete on `s`. Causes are ignored.
pub fn tabulate_marginal(d: &Dataset, s: &SymptomSubset) -> Result<Marginal> {
    check_subset(d, s)?;
    let profiles: Vec<Profile> = d.records().iter().filter_map(|r| Profile::of(r, s)).collect();
    if profiles.is_empty() {
        return Err(Error::NoUsableRecords);
    }
    Ok(Marginal { subset: s.clone(), counts: ProfileCounts::from_profiles(profiles) })
}

/// Per-cause profile distributions `P(S_I | D = j)` from labeled data.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditional {
    pub subset: SymptomSubset,
    pub per_cause: Vec<ProfileCounts>,
}

impl Conditional {
    /// Causes left with no usable records after deletion.
    pub fn empty_causes(&self) -> Vec<usize> {
        (0..self.per_cause.len()).filter(|&j| self.per_cause[j].usable == 0).collect()
    }
}

pub fn tabulate_conditional(d: &Dataset, s: &SymptomSubset) -> Result<Conditional> {
    check_subset(d, s)?;
    if !d.has_causes() {
        return Err(Error::LabelsRequired);
    }
    let mut by_cause: Vec<Vec<Profile>> = vec![Vec::new(); d.cause_set().len()];
    for r in d.records() {
        if let Some(p) = Profile::of(r, s) {
            by_cause[r.cause.ok_or(Error::LabelsRequired)?].push(p);
        }
    }
    Ok(Conditional {
        subset: s.clone(),
        per_cause: by_cause.into_iter().map(ProfileCounts::from_profiles).collect(),
    })
}

/// Why a table is unsuitable for regression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RankRisk {
    /// Some causes have no usable hospital records on this subset.
    EmptyCause(Vec<usize>),
    /// Fewer retained profiles than causes.
    TooFewProfiles { retained: usize, causes: usize },
    /// No population profile was observed in the hospital.
    NoOverlap,
}

impl fmt::Display for RankRisk {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankRisk::EmptyCause(c) => write!(f, "causes without usable records: {c:?}"),
            RankRisk::TooFewProfiles { retained, causes } => {
                write!(f, "{retained} profiles for {causes} causes")
            }
            RankRisk::NoOverlap => f.write_str("no profile overlap between hospital and population"),
        }
    }
}

/// Population profile frequencies `y` aligned with hospital conditional
/// frequencies `x` (rows = retained profiles, columns = causes).
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTable {
    pub subset: SymptomSubset,
    pub profiles: Vec<Profile>,
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
    /// Population count of each retained profile.
    pub y_counts: Vec<u64>,
    /// Hospital count of each retained profile per cause (`n x J`).
    pub x_counts: DMatrix<u64>,
    /// Usable hospital records per cause (the column denominators).
    pub cause_usable: Vec<u64>,
    pub risk: Option<RankRisk>,
}

impl ProfileTable {
    pub fn n_profiles(&self) -> usize {
        self.profiles.len()
    }

    pub fn n_causes(&self) -> usize {
        self.x.ncols()
    }
}

/// Retains the population-observed profiles. Hospital columns are evaluated on
/// that set (zero where the hospital never shows a profile), normalized by each
/// cause's usable count, so a column may sum to less than one. `y` is
/// renormalized over the retained set.
pub fn align(marginal: &Marginal, conditional: &Conditional) -> Result<ProfileTable> {
    if marginal.subset != conditional.subset {
        return Err(Error::InvalidSubset("marginal and conditional use different subsets".into()));
    }
    let j = conditional.per_cause.len();
    let profiles: Vec<Profile> = marginal.counts.counts.iter().map(|&(p, _)| p).collect();
    let y_counts: Vec<u64> = marginal.counts.counts.iter().map(|&(_, c)| c).collect();
    let n = profiles.len();
    let y_total: u64 = y_counts.iter().sum();
    let y = y_counts.iter().map(|&c| c as f64 / y_total as f64).collect();

    let x_counts = DMatrix::from_fn(n, j, |r, c| conditional.per_cause[c].count(profiles[r]));
    let cause_usable: Vec<u64> = conditional.per_cause.iter().map(|t| t.usable).collect();
    let x = DMatrix::from_fn(n, j, |r, c| match cause_usable[c] {
        0 => 0.0,
        u => x_counts[(r, c)] as f64 / u as f64,
    });

    let empty = conditional.empty_causes();
    let risk = if !empty.is_empty() {
        Some(RankRisk::EmptyCause(empty))
    } else if x_counts.iter().all(|&c| c == 0) {
        Some(RankRisk::NoOverlap)
    } else if n < j {
        Some(RankRisk::TooFewProfiles { retained: n, causes: j })
    } else {
        None
    };

    Ok(ProfileTable {
        subset: marginal.subset.clone(),
        profiles,
        y,
        x,
        y_counts,
        x_counts,
        cause_usable,
        risk,
    })
}

/// Tabulates both datasets on `s` and aligns them.
pub fn profile_table(hospital: &Dataset, population: &Dataset, s: &SymptomSubset) -> Result<ProfileTable> {
    align(&tabulate_marginal(population, s)?, &tabulate_conditional(hospital, s)?)
}

/// Debug dump: profile bitstring, `y`, one `x` column per cause, then counts.
pub fn write_profile_table<W: Write>(sink: W, table: &ProfileTable, cause_labels: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["profile".to_string(), "y".to_string()];
    header.extend(cause_labels.iter().map(|l| format!("x_{l}")));
    header.push("count_y".into());
    header.extend(cause_labels.iter().map(|l| format!("count_{l}")));
    w.write_record(&header)?;
    for r in 0..table.n_profiles() {
        let mut row = vec![table.profiles[r].to_string(), table.y[r].to_string()];
        row.extend((0..table.n_causes()).map(|c| table.x[(r, c)].to_string()));
        row.push(table.y_counts[r].to_string());
        row.extend((0..table.n_causes()).map(|c| table.x_counts[(r, c)].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
