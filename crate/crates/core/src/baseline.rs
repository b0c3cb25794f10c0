//! Crude prevalence from a dichotomous predictor and its sensitivity and
//! specificity correction.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Dataset, DatasetKind, Symptom, SymptomRecord};
use crate::error::{Error, Result};

/// `|sens + spec - 1|` below this leaves the correction undefined.
pub const DENOMINATOR_TOL: f64 = 1e-9;
pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_SMOOTHING: f64 = 0.5;

/// Predicts whether a record died of one target cause.
pub trait DichotomousPredictor: Sync {
    fn target(&self) -> usize;
    fn predict(&self, record: &SymptomRecord) -> bool;
}

/// Something that can be trained into a [`DichotomousPredictor`].
pub trait PredictorFamily: Sync {
    type Predictor: DichotomousPredictor;
    fn fit(&self, training: &Dataset, target: usize) -> Result<Self::Predictor>;
}

/// Two-class conditional-independence scorer: symptoms are treated as
/// independent given target / not target, missing symptoms are skipped, and
/// the record is assigned to the target when the posterior exceeds 0.5.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependenceScorer {
    target: usize,
    prior: f64,
    /// `P(S_k = 1 | target)` and `P(S_k = 1 | not target)`.
    pub rate_target: Vec<f64>,
    pub rate_other: Vec<f64>,
}

impl IndependenceScorer {
    /// Posterior probability of the target cause.
    pub fn posterior(&self, record: &SymptomRecord) -> f64 {
        let mut log_t = self.prior.ln();
        let mut log_o = (1.0 - self.prior).ln();
        for (k, s) in record.symptoms.iter().enumerate() {
            let (pt, po) = (self.rate_target[k], self.rate_other[k]);
            match s {
                Symptom::Present => {
                    log_t += pt.ln();
                    log_o += po.ln();
                }
                Symptom::Absent => {
                    log_t += (1.0 - pt).ln();
                    log_o += (1.0 - po).ln();
                }
                Symptom::Missing => {}
            }
        }
        let d = log_o - log_t;
        if d.is_nan() {
            0.0
        } else {
            1.0 / (1.0 + d.exp())
        }
    }
}

impl DichotomousPredictor for IndependenceScorer {
    fn target(&self) -> usize {
        self.target
    }

    fn predict(&self, record: &SymptomRecord) -> bool {
        self.posterior(record) > 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndependenceScorerFamily {
    pub smoothing: f64,
}

impl Default for IndependenceScorerFamily {
    fn default() -> Self {
        IndependenceScorerFamily { smoothing: DEFAULT_SMOOTHING }
    }
}

impl PredictorFamily for IndependenceScorerFamily {
    type Predictor = IndependenceScorer;

    fn fit(&self, training: &Dataset, target: usize) -> Result<IndependenceScorer> {
        if !training.has_causes() {
            return Err(Error::LabelsRequired);
        }
        if !(self.smoothing >= 0.0) {
            return Err(Error::InvalidConfig(format!("smoothing {} must be nonnegative", self.smoothing)));
        }
        let k = training.k();
        let mut present = [vec![0u64; k], vec![0u64; k]];
        let mut observed = [vec![0u64; k], vec![0u64; k]];
        let mut n = [0u64; 2];
        for r in training.records() {
            let g = usize::from(r.cause != Some(target));
            n[g] += 1;
            for (i, s) in r.symptoms.iter().enumerate() {
                if !s.is_missing() {
                    observed[g][i] += 1;
                    present[g][i] += u64::from(*s == Symptom::Present);
                }
            }
        }
        if n[0] == 0 {
            return Err(Error::CauseAbsent(training.cause_set().label(target).to_string()));
        }
        let a = self.smoothing;
        let rate = |g: usize| -> Vec<f64> {
            (0..k)
                .map(|i| {
                    let den = observed[g][i] as f64 + 2.0 * a;
                    if den > 0.0 {
                        (present[g][i] as f64 + a) / den
                    } else {
                        0.5
                    }
                })
                .collect()
        };
        Ok(IndependenceScorer {
            target,
            prior: n[0] as f64 / (n[0] + n[1]) as f64,
            rate_target: rate(0),
            rate_other: rate(1),
        })
    }
}

/// Fraction of `population` records predicted to be the target.
pub fn crude_prevalence<P: DichotomousPredictor + ?Sized>(pred: &P, population: &Dataset) -> Result<f64> {
    if population.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let hits = population.records().iter().filter(|r| pred.predict(r)).count();
    Ok(hits as f64 / population.len() as f64)
}

/// The 2x2 table of true target status against prediction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_positive: u64,
    pub false_negative: u64,
    pub false_positive: u64,
    pub true_negative: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_positive + self.false_negative + self.false_positive + self.true_negative
    }

    fn add(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (true, true) => self.true_positive += 1,
            (true, false) => self.false_negative += 1,
            (false, true) => self.false_positive += 1,
            (false, false) => self.true_negative += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfusionSummary {
    /// `P(predicted target | target)`.
    pub sensitivity: f64,
    /// `P(predicted other | other)`.
    pub specificity: f64,
    pub counts: Option<ConfusionCounts>,
}

impl ConfusionSummary {
    pub fn from_rates(sensitivity: f64, specificity: f64) -> Result<Self> {
        for (name, v) in [("sensitivity", sensitivity), ("specificity", specificity)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} {v} not in [0, 1]")));
            }
        }
        Ok(ConfusionSummary { sensitivity, specificity, counts: None })
    }

    /// Both classes must be represented.
    pub fn from_counts(c: ConfusionCounts) -> Result<Self> {
        let pos = c.true_positive + c.false_negative;
        let neg = c.false_positive + c.true_negative;
        if pos == 0 || neg == 0 {
            return Err(Error::Degenerate(format!(
                "confusion table needs both classes ({pos} target, {neg} other records)"
            )));
        }
        Ok(ConfusionSummary {
            sensitivity: c.true_positive as f64 / pos as f64,
            specificity: c.true_negative as f64 / neg as f64,
            counts: Some(c),
        })
    }

    /// Columns are true class (target, other), rows predicted class.
    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.sensitivity, 1.0 - self.specificity, 1.0 - self.sensitivity, self.specificity)
    }
}

/// Fold index for every record, stratified so each cause is spread as evenly
/// as possible over the folds.
pub fn stratified_folds(d: &Dataset, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {folds}")));
    }
    if !d.has_causes() {
        return Err(Error::LabelsRequired);
    }
    let j = d.cause_set().len();
    let mut by_cause = vec![Vec::new(); j];
    for (i, r) in d.records().iter().enumerate() {
        by_cause[r.cause.expect("labeled")].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; d.len()];
    // continue the round robin across causes so fold sizes stay balanced too
    let mut next = 0;
    for members in &mut by_cause {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    Ok(assignment)
}

/// Out-of-fold confusion table for `target`: each fold is predicted by a
/// predictor fitted on the remaining folds.
pub fn cv_confusion<F: PredictorFamily>(
    family: &F,
    hospital: &Dataset,
    target: usize,
    folds: usize,
    seed: u64,
) -> Result<ConfusionSummary> {
    if hospital.kind() != DatasetKind::Labeled {
        return Err(Error::LabelsRequired);
    }
    if target >= hospital.cause_set().len() {
        return Err(Error::InvalidConfig(format!("target cause {target} out of range")));
    }
    let assignment = stratified_folds(hospital, folds, seed)?;
    let per_fold: Vec<Result<ConfusionCounts>> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let (train, test): (Vec<_>, Vec<_>) =
                hospital.records().iter().zip(&assignment).partition(|(_, &a)| a != f);
            let train: Vec<SymptomRecord> = train.into_iter().map(|(r, _)| r.clone()).collect();
            if !train.iter().any(|r| r.cause == Some(target)) {
                return Err(Error::FoldMissingTarget {
                    fold: f,
                    cause: hospital.cause_set().label(target).to_string(),
                });
            }
            let pred = family.fit(&hospital.with_records(train)?, target)?;
            let mut c = ConfusionCounts::default();
            for (r, _) in test {
                c.add(r.cause == Some(target), pred.predict(r));
            }
            Ok(c)
        })
        .collect();
    let mut total = ConfusionCounts::default();
    for c in per_fold {
        let c = c?;
        total.true_positive += c.true_positive;
        total.false_negative += c.false_negative;
        total.false_positive += c.false_positive;
        total.true_negative += c.true_negative;
    }
    ConfusionSummary::from_counts(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackCalculation {
    pub estimate: f64,
    /// The estimate lies outside `[0, 1]`. It is returned as is.
    pub impossible: bool,
}

/// `(crude - (1 - spec)) / (sens - (1 - spec))`, unclamped.
pub fn back_calculate(crude: f64, conf: &ConfusionSummary) -> Result<BackCalculation> {
    let false_pos = 1.0 - conf.specificity;
    let den = conf.sensitivity - false_pos;
    if den.abs() < DENOMINATOR_TOL {
        return Err(Error::DegenerateDenominator { sum: conf.sensitivity + conf.specificity });
    }
    let estimate = (crude - false_pos) / den;
    Ok(BackCalculation { estimate, impossible: !(0.0..=1.0).contains(&estimate) })
}

/// Least-squares solution of `crude = confusion * p` where column `j` of
/// `confusion` is the prediction distribution given true class `j`.
pub fn back_calculate_matrix(crude: Vector2<f64>, confusion: &Matrix2<f64>) -> Result<Vector2<f64>> {
    for c in 0..2 {
        let col = confusion.column(c);
        if col.iter().any(|v| !(0.0..=1.0 + 1e-12).contains(v)) || (col.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("confusion column {c} is not a distribution")));
        }
    }
    let a = DMatrix::from_column_slice(2, 2, confusion.as_slice());
    let b = DVector::from_column_slice(crude.as_slice());
    let (q, r) = a.qr().unpack();
    let rcond = r[(0, 0)].abs().min(r[(1, 1)].abs()) / r[(0, 0)].abs().max(r[(1, 1)].abs());
    if !(rcond > 1e-12) {
        return Err(Error::Singular { rcond });
    }
    let rhs = q.transpose() * b;
    let sol = r.solve_upper_triangular(&rhs).ok_or(Error::Singular { rcond })?;
    Ok(Vector2::new(sol[0], sol[1]))
}

/// How far apart the composite ("all other causes") specificities of the two
/// samples are, when misclassification rates `misclass[j] = P(predicted
/// target | cause j)` are shared. Each side weights the non-target rates by
/// that sample's cause distribution normalized over the composite category.
pub fn specificity_consistency_gap(
    hospital_pd: &[f64],
    population_pd: &[f64],
    misclass: &[f64],
    target: usize,
) -> Result<f64> {
    let j = misclass.len();
    if hospital_pd.len() != j || population_pd.len() != j || target >= j {
        return Err(Error::InvalidConfig("cause distributions and rates must share J".into()));
    }
    let side = |pd: &[f64]| -> Result<f64> {
        let mass: f64 = (0..j).filter(|&i| i != target).map(|i| pd[i]).sum();
        if mass <= 0.0 {
            return Err(Error::DegenerateDenominator { sum: mass });
        }
        Ok((0..j).filter(|&i| i != target).map(|i| misclass[i] * pd[i] / mass).sum())
    };
    Ok((side(population_pd)? - side(hospital_pd)?).abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRow {
    pub cause: String,
    pub crude: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    /// `None` when sensitivity + specificity is too close to 1.
    pub corrected: Option<f64>,
    pub impossible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineReport {
    pub rows: Vec<BaselineRow>,
    /// Sum of the corrected estimates; it need not be 1.
    pub sum: f64,
}

/// Runs the corrected-prevalence baseline for every cause in turn.
pub fn baseline_report<F: PredictorFamily>(
    family: &F,
    hospital: &Dataset,
    population: &Dataset,
    folds: usize,
    seed: u64,
) -> Result<BaselineReport> {
    crate::estimator::check_pair(hospital, population)?;
    let rows = (0..hospital.cause_set().len())
        .into_par_iter()
        .map(|t| {
            let conf = cv_confusion(family, hospital, t, folds, seed)?;
            let crude = crude_prevalence(&family.fit(hospital, t)?, population)?;
            let (corrected, impossible) = match back_calculate(crude, &conf) {
                Ok(b) => (Some(b.estimate), b.impossible),
                Err(Error::DegenerateDenominator { .. }) => (None, true),
                Err(e) => return Err(e),
            };
            Ok(BaselineRow {
                cause: hospital.cause_set().label(t).to_string(),
                crude,
                sensitivity: conf.sensitivity,
                specificity: conf.specificity,
                corrected,
                impossible,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sum = rows.iter().filter_map(|r| r.corrected).sum();
    Ok(BaselineReport { rows, sum })
}

/// Tab-separated rows followed by a `sum` line.
pub fn write_baseline_report<W: Write>(mut w: W, r: &BaselineReport) -> Result<()> {
    writeln!(w, "cause\tcrude\tsensitivity\tspecificity\tcorrected\timpossible")?;
    for row in &r.rows {
        let corrected = row.corrected.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            row.cause, row.crude, row.sensitivity, row.specificity, corrected, row.impossible
        )?;
    }
    writeln!(w, "sum\t\t\t\t{}\t", r.sum)?;
    Ok(())
}
