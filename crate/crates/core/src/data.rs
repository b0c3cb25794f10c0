//! Datasets of symptom records, their ingestion from delimited text, and the
//! small value types shared by the estimation modules.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Entries of a [`SimplexVector`] must sum to one within this tolerance.
pub const SIMPLEX_TOL: f64 = 1e-10;

/// One reported symptom indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symptom {
    Present,
    Absent,
    Missing,
}

impl Symptom {
    pub fn parse(cell: &str) -> Option<Symptom> {
        match cell.trim() {
            "1" => Some(Symptom::Present),
            "0" => Some(Symptom::Absent),
            "" | "NA" => Some(Symptom::Missing),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Symptom::Present => "1",
            Symptom::Absent => "0",
            Symptom::Missing => "NA",
        }
    }

    pub fn is_missing(self) -> bool {
        self == Symptom::Missing
    }
}

/// Ordered, distinct cause-of-death labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CauseSet {
    labels: Vec<String>,
}

impl CauseSet {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(Error::InvalidCauseSet(format!(
                "need at least 2 causes, got {}",
                labels.len()
            )));
        }
        let mut seen = HashMap::new();
        for (i, label) in labels.iter().enumerate() {
            if label.is_empty() {
                return Err(Error::InvalidCauseSet(format!("label {i} is empty")));
            }
            if seen.insert(label.as_str(), i).is_some() {
                return Err(Error::InvalidCauseSet(format!("duplicate label `{label}`")));
            }
        }
        Ok(CauseSet { labels })
    }

    /// Causes named `1..=j`.
    pub fn numbered(j: usize) -> Result<Self> {
        Self::new((1..=j).map(|i| format!("cause{i}")))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// One death: `K` symptom indicators, an optional cause index and an optional
/// site tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymptomRecord {
    pub symptoms: Vec<Symptom>,
    pub cause: Option<usize>,
    pub site: Option<usize>,
}

impl SymptomRecord {
    pub fn new(symptoms: Vec<Symptom>, cause: Option<usize>) -> Self {
        SymptomRecord { symptoms, cause, site: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// Causes known and usable (hospital / validation site).
    Labeled,
    /// Causes unknown (population sample).
    Unlabeled,
    /// Population sample whose true causes are carried for scoring only.
    Hidden,
}

/// An immutable collection of symptom records sharing `K` and a cause set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    kind: DatasetKind,
    cause_set: CauseSet,
    symptom_names: Vec<String>,
    cause_column: Option<String>,
    site_labels: Vec<String>,
    records: Vec<SymptomRecord>,
}

impl Dataset {
    pub fn new(
        kind: DatasetKind,
        cause_set: CauseSet,
        symptom_names: Vec<String>,
        records: Vec<SymptomRecord>,
    ) -> Result<Self> {
        let ds = Dataset {
            kind,
            cause_set,
            symptom_names,
            cause_column: None,
            site_labels: Vec::new(),
            records,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Builds a dataset with generated symptom names `s1..sK`.
    pub fn from_records(
        kind: DatasetKind,
        cause_set: CauseSet,
        k: usize,
        records: Vec<SymptomRecord>,
    ) -> Result<Self> {
        Self::new(kind, cause_set, (1..=k).map(|i| format!("s{i}")).collect(), records)
    }

    /// Attaches site labels and per-record site indices.
    pub fn with_sites(mut self, site_labels: Vec<String>, sites: &[usize]) -> Result<Self> {
        if sites.len() != self.records.len() {
            return Err(Error::InvalidConfig("one site per record required".into()));
        }
        self.site_labels = site_labels;
        for (r, &s) in self.records.iter_mut().zip(sites) {
            r.site = Some(s);
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let k = self.symptom_names.len();
        let j = self.cause_set.len();
        for (i, r) in self.records.iter().enumerate() {
            if r.symptoms.len() != k {
                return Err(Error::MalformedRow {
                    line: i as u64 + 1,
                    expected: k,
                    found: r.symptoms.len(),
                });
            }
            match (self.kind, r.cause) {
                (DatasetKind::Unlabeled, Some(_)) => {
                    return Err(Error::InvalidConfig(format!(
                        "record {i} of an unlabeled dataset carries a cause"
                    )))
                }
                (DatasetKind::Labeled | DatasetKind::Hidden, None) => {
                    return Err(Error::MissingCause { line: i as u64 + 1 })
                }
                (_, Some(c)) if c >= j => {
                    return Err(Error::InvalidConfig(format!(
                        "record {i} has cause index {c} outside 0..{j}"
                    )))
                }
                _ => {}
            }
            if let Some(s) = r.site {
                if s >= self.site_labels.len() {
                    return Err(Error::InvalidConfig(format!(
                        "record {i} has site index {s} outside 0..{}",
                        self.site_labels.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    /// Number of symptoms.
    pub fn k(&self) -> usize {
        self.symptom_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SymptomRecord] {
        &self.records
    }

    pub fn cause_set(&self) -> &CauseSet {
        &self.cause_set
    }

    pub fn symptom_names(&self) -> &[String] {
        &self.symptom_names
    }

    pub fn site_labels(&self) -> &[String] {
        &self.site_labels
    }

    /// True when every record carries a cause (labeled or hidden).
    pub fn has_causes(&self) -> bool {
        self.kind != DatasetKind::Unlabeled
    }

    /// Same records with the kind replaced, keeping causes as hidden truth.
    pub fn into_hidden(mut self) -> Self {
        if self.kind == DatasetKind::Labeled {
            self.kind = DatasetKind::Hidden;
        }
        self
    }

    /// Drops any cause information.
    pub fn into_unlabeled(mut self) -> Self {
        self.kind = DatasetKind::Unlabeled;
        for r in &mut self.records {
            r.cause = None;
        }
        self
    }

    /// A dataset of the same shape holding `records` instead.
    pub fn with_records(&self, records: Vec<SymptomRecord>) -> Result<Self> {
        let ds = Dataset {
            kind: self.kind,
            cause_set: self.cause_set.clone(),
            symptom_names: self.symptom_names.clone(),
            cause_column: self.cause_column.clone(),
            site_labels: self.site_labels.clone(),
            records,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn subset_of(&self, kind: DatasetKind, indices: &[usize]) -> Result<Self> {
        let mut ds = self.with_records(indices.iter().map(|&i| self.records[i].clone()).collect())?;
        ds.kind = kind;
        Ok(ds)
    }

    /// Resamples records with replacement.
    pub fn resample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Self> {
        let n = self.records.len();
        let records = (0..n).map(|_| self.records[rng.random_range(0..n)].clone()).collect();
        self.with_records(records)
    }

    /// Per-cause record counts (hidden causes included).
    pub fn cause_counts(&self) -> Result<Vec<u64>> {
        let mut counts = vec![0u64; self.cause_set.len()];
        for r in &self.records {
            counts[r.cause.ok_or(Error::LabelsRequired)?] += 1;
        }
        Ok(counts)
    }
}

/// `B` distinct symptom indices in increasing order, with `1 <= B < K`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SymptomSubset {
    indices: Vec<usize>,
}

impl SymptomSubset {
    pub fn new(mut indices: Vec<usize>, k: usize) -> Result<Self> {
        indices.sort_unstable();
        let b = indices.len();
        if b == 0 || b >= k {
            return Err(Error::InvalidSubset(format!("size {b} must satisfy 1 <= B < K = {k}")));
        }
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSubset("duplicate symptom index".into()));
        }
        if indices[b - 1] >= k {
            return Err(Error::InvalidSubset(format!(
                "index {} out of range for K = {k}",
                indices[b - 1]
            )));
        }
        Ok(SymptomSubset { indices })
    }

    /// Draws `b` of `k` symptoms uniformly without replacement.
    pub fn draw<R: Rng + ?Sized>(k: usize, b: usize, rng: &mut R) -> Result<Self> {
        if b == 0 || b >= k {
            return Err(Error::InvalidSubset(format!("size {b} must satisfy 1 <= B < K = {k}")));
        }
        Self::new(rand::seq::index::sample(rng, k, b).into_vec(), k)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Nonnegative proportions summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector {
    values: Vec<f64>,
}

impl SimplexVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidSimplex("empty vector".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0 + SIMPLEX_TOL).contains(*v)) {
            return Err(Error::InvalidSimplex(format!("entry {v} outside [0, 1]")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidSimplex(format!("entries sum to {sum}")));
        }
        Ok(SimplexVector { values })
    }

    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidSimplex("all counts are zero".into()));
        }
        Self::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn uniform(j: usize) -> Self {
        SimplexVector { values: vec![1.0 / j as f64; j] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

impl std::ops::Index<usize> for SimplexVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// What a column of an input file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnRole {
    Cause,
    Symptom,
    Site,
    Ignore,
}

impl std::str::FromStr for ColumnRole {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cause" => Ok(ColumnRole::Cause),
            "symptom" => Ok(ColumnRole::Symptom),
            "site" => Ok(ColumnRole::Site),
            "id" | "ignore" => Ok(ColumnRole::Ignore),
            other => Err(Error::InvalidConfig(format!("unknown column role `{other}`"))),
        }
    }
}

/// Column roles for an input file.
///
/// Columns not named in the schema are symptoms, unless the schema lists at
/// least one symptom explicitly, in which case unnamed columns are ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    roles: Vec<(String, ColumnRole)>,
}

impl Default for Schema {
    /// A cause column named `cause`; everything else is a symptom.
    fn default() -> Self {
        Schema { roles: vec![("cause".into(), ColumnRole::Cause)] }
    }
}

impl Schema {
    pub fn empty() -> Self {
        Schema { roles: Vec::new() }
    }

    pub fn with_role(mut self, column: impl Into<String>, role: ColumnRole) -> Self {
        let column = column.into();
        if role == ColumnRole::Cause || role == ColumnRole::Site {
            self.roles.retain(|(_, r)| *r != role);
        }
        self.roles.retain(|(c, _)| *c != column);
        self.roles.push((column, role));
        self
    }

    pub fn with_cause_column(self, column: impl Into<String>) -> Self {
        self.with_role(column, ColumnRole::Cause)
    }

    /// Parses `column = role` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut schema = Schema::empty();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (column, role) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n as u64 + 1,
                message: format!("expected `column = role`, got `{line}`"),
            })?;
            let column = column.trim().trim_matches('"');
            schema = schema.with_role(column, role.parse()?);
        }
        Ok(schema)
    }

    pub fn cause_column(&self) -> Option<&str> {
        self.column_with(ColumnRole::Cause)
    }

    pub fn site_column(&self) -> Option<&str> {
        self.column_with(ColumnRole::Site)
    }

    fn column_with(&self, role: ColumnRole) -> Option<&str> {
        self.roles.iter().find(|(_, r)| *r == role).map(|(c, _)| c.as_str())
    }

    fn role_of(&self, column: &str) -> ColumnRole {
        let explicit_symptoms = self.roles.iter().any(|(_, r)| *r == ColumnRole::Symptom);
        match self.roles.iter().find(|(c, _)| c == column) {
            Some((_, role)) => *role,
            None if explicit_symptoms => ColumnRole::Ignore,
            None => ColumnRole::Symptom,
        }
    }
}

/// Which kind of dataset a file is expected to hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    Labeled,
    Unlabeled,
    /// Unlabeled for estimation; a cause column, if present, is kept hidden.
    Validation,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub expect: Expect,
    /// Fixed cause labels. Required for unlabeled files; for labeled files they
    /// default to the distinct labels in order of first appearance.
    pub causes: Option<CauseSet>,
    pub delimiter: Option<u8>,
}

impl LoadOptions {
    pub fn labeled() -> Self {
        LoadOptions { expect: Expect::Labeled, causes: None, delimiter: None }
    }

    pub fn unlabeled(causes: CauseSet) -> Self {
        LoadOptions { expect: Expect::Unlabeled, causes: Some(causes), delimiter: None }
    }

    pub fn validation(causes: CauseSet) -> Self {
        LoadOptions { expect: Expect::Validation, causes: Some(causes), delimiter: None }
    }
}

/// Parses a delimited symptom file.
///
/// The delimiter is a tab if the header contains one, otherwise a comma.
pub fn load_dataset<R: Read>(mut source: R, schema: &Schema, opts: &LoadOptions) -> Result<Dataset> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let delimiter = opts.delimiter.unwrap_or_else(|| {
        if text.lines().next().is_some_and(|h| h.contains('\t')) {
            b'\t'
        } else {
            b','
        }
    });
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();

    let mut cause_col = None;
    let mut site_col = None;
    let mut symptom_cols = Vec::new();
    for (i, name) in header.iter().enumerate() {
        match schema.role_of(name) {
            ColumnRole::Cause => cause_col = Some(i),
            ColumnRole::Site => site_col = Some(i),
            ColumnRole::Symptom => symptom_cols.push(i),
            ColumnRole::Ignore => {}
        }
    }
    if let Some(site) = schema.site_column() {
        if site_col.is_none() {
            return Err(Error::MissingColumn(site.to_string()));
        }
    }
    let kind = match (opts.expect, cause_col) {
        (Expect::Labeled, None) => {
            return Err(Error::MissingColumn(schema.cause_column().unwrap_or("cause").to_string()))
        }
        (Expect::Labeled, Some(_)) => DatasetKind::Labeled,
        (Expect::Unlabeled, Some(i)) => return Err(Error::UnexpectedCauseColumn(header[i].clone())),
        (Expect::Unlabeled | Expect::Validation, None) => DatasetKind::Unlabeled,
        (Expect::Validation, Some(_)) => DatasetKind::Hidden,
    };
    if kind != DatasetKind::Labeled && opts.causes.is_none() {
        return Err(Error::InvalidConfig("unlabeled files need a supplied cause set".into()));
    }

    let mut labels: Vec<String> = opts.causes.as_ref().map(|c| c.labels().to_vec()).unwrap_or_default();
    let fixed_labels = opts.causes.is_some();
    let mut sites: Vec<String> = Vec::new();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != header.len() {
            return Err(Error::MalformedRow { line, expected: header.len(), found: row.len() });
        }
        let symptoms = symptom_cols
            .iter()
            .map(|&c| {
                Symptom::parse(&row[c]).ok_or_else(|| Error::UnknownSymptomValue {
                    line,
                    column: header[c].clone(),
                    value: row[c].to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let cause = match cause_col {
            Some(c) => {
                let label = row[c].trim();
                if label.is_empty() || label == "NA" {
                    return Err(Error::MissingCause { line });
                }
                Some(match labels.iter().position(|l| l == label) {
                    Some(i) => i,
                    None if fixed_labels => {
                        return Err(Error::UnknownCause { line, label: label.to_string() })
                    }
                    None => {
                        labels.push(label.to_string());
                        labels.len() - 1
                    }
                })
            }
            None => None,
        };
        let site = site_col.map(|c| {
            let label = row[c].trim();
            match sites.iter().position(|s| s == label) {
                Some(i) => i,
                None => {
                    sites.push(label.to_string());
                    sites.len() - 1
                }
            }
        });
        records.push(SymptomRecord { symptoms, cause, site });
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cause_set = CauseSet::new(labels)?;
    let symptom_names = symptom_cols.iter().map(|&c| header[c].clone()).collect();
    let ds = Dataset {
        kind,
        cause_set,
        symptom_names,
        cause_column: cause_col.map(|c| header[c].clone()),
        site_labels: sites,
        records,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes a dataset in the format [`load_dataset`] reads: cause column first
/// (if causes are known), then site, then symptoms; missing cells as `NA`.
pub fn write_dataset<W: Write>(sink: W, d: &Dataset, delimiter: u8) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(sink);
    let has_sites = !d.site_labels.is_empty();
    let mut header: Vec<&str> = Vec::new();
    if d.has_causes() {
        header.push(d.cause_column.as_deref().unwrap_or("cause"));
    }
    if has_sites {
        header.push("site");
    }
    header.extend(d.symptom_names.iter().map(String::as_str));
    w.write_record(&header)?;
    let mut row: Vec<&str> = Vec::with_capacity(header.len());
    for r in &d.records {
        row.clear();
        if let Some(c) = r.cause {
            row.push(d.cause_set.label(c));
        }
        if has_sites {
            row.push(r.site.map(|s| d.site_labels[s].as_str()).unwrap_or(""));
        }
        row.extend(r.symptoms.iter().map(|s| s.as_str()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Splits a labeled dataset into a labeled "hospital" part holding
/// `round(fraction * n)` records and a "population" part with hidden causes.
/// Records keep their original relative order within each part.
pub fn split_random(d: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if d.kind != DatasetKind::Labeled {
        return Err(Error::LabelsRequired);
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("split fraction {fraction} must be in (0, 1)")));
    }
    let n = d.len();
    let m = (fraction * n as f64).round() as usize;
    if m == 0 || m == n {
        return Err(Error::EmptySplit { hospital: m, population: n - m });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (h, p) = order.split_at_mut(m);
    h.sort_unstable();
    p.sort_unstable();
    Ok((d.subset_of(DatasetKind::Labeled, h)?, d.subset_of(DatasetKind::Hidden, p)?))
}

/// Splits a labeled dataset by site tag: records from `hospital_sites` form the
/// hospital part, all others the hidden-cause population part.
pub fn split_by_site(d: &Dataset, hospital_sites: &[String]) -> Result<(Dataset, Dataset)> {
    if d.kind != DatasetKind::Labeled {
        return Err(Error::LabelsRequired);
    }
    for s in hospital_sites {
        if !d.site_labels.contains(s) {
            return Err(Error::InvalidConfig(format!("unknown site `{s}`")));
        }
    }
    let in_hospital = |r: &SymptomRecord| {
        r.site.is_some_and(|s| hospital_sites.iter().any(|h| *h == d.site_labels[s]))
    };
    let (h, p): (Vec<usize>, Vec<usize>) = (0..d.len()).partition(|&i| in_hospital(&d.records[i]));
    if h.is_empty() || p.is_empty() {
        return Err(Error::EmptySplit { hospital: h.len(), population: p.len() });
    }
    Ok((d.subset_of(DatasetKind::Labeled, &h)?, d.subset_of(DatasetKind::Hidden, &p)?))
}

/// Fraction of records with each cause; requires (possibly hidden) labels.
pub fn empirical_cause_distribution(d: &Dataset) -> Result<SimplexVector> {
    if !d.has_causes() {
        return Err(Error::LabelsRequired);
    }
    SimplexVector::from_counts(&d.cause_counts()?)
}
