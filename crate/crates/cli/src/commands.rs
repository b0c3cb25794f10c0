use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use vacalc::baseline::{baseline_report, write_baseline_report, IndependenceScorerFamily, DEFAULT_FOLDS};
use vacalc::classifier::{classify, write_posteriors, CommitteeConfig, Denominator, LikelihoodMode};
use vacalc::data::{load_dataset, write_dataset, CauseSet, Dataset, LoadOptions, Schema, SimplexVector};
use vacalc::estimator::{
    estimate, estimate_point, select_subset_size, write_estimate_csv, write_estimate_text, EstimatorConfig,
    DEFAULT_N_SUBSETS,
};
use vacalc::harness::{
    china_shaped_spec, classifier_shift_spec, generate, generate_labeled, run_classifier_experiment,
    run_site_validation, run_split_validation, write_aggregates, write_cause_marginals, write_difference,
    write_experiment_summary, write_marginals, write_scatter, write_validation_report, GeneratorSpec,
};
use vacalc::solver::ConstraintSpec;
use vacalc::error::Error;

use crate::args::*;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Written next to every set of outputs; feeding it back through `--config`
/// reproduces the run.
#[derive(Debug, Serialize, Deserialize)]
struct Manifest<T> {
    command: String,
    version: String,
    args: T,
    #[serde(default)]
    result: toml::Table,
}

fn load_manifest<T: DeserializeOwned + Default>(path: Option<&Path>, command: &str) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let m: Manifest<T> =
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: invalid manifest: {e}", path.display())))?;
    if m.command != command {
        return Err(CliError::usage(format!(
            "{}: manifest is for `{}`, not `{command}`",
            path.display(),
            m.command
        )));
    }
    Ok(m.args)
}

struct Output {
    dir: PathBuf,
    inputs: Vec<PathBuf>,
}

impl Output {
    fn new(dir: &Path, inputs: &[&Path]) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
        let inputs = inputs.iter().filter_map(|p| fs::canonicalize(p).ok()).collect();
        Ok(Output { dir: dir.to_path_buf(), inputs })
    }

    fn write(&self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> vacalc::error::Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        if let Ok(p) = fs::canonicalize(&path) {
            if self.inputs.contains(&p) {
                return Err(CliError::usage(format!("refusing to overwrite input file {}", path.display())));
            }
        }
        let mut buf = Vec::new();
        f(&mut buf).map_err(CliError::from)?;
        fs::write(&path, buf).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }

    fn manifest<T: Serialize>(&self, command: &str, args: &T, result: toml::Table) -> Result<()> {
        let m = Manifest { command: command.into(), version: env!("CARGO_PKG_VERSION").into(), args, result };
        let text = toml::to_string(&m).map_err(|e| CliError::internal(format!("manifest: {e}")))?;
        self.write("manifest.toml", |w| {
            w.extend_from_slice(text.as_bytes());
            Ok(())
        })
    }
}

fn require<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| CliError::usage(format!("missing required flag --{flag}")))
}

fn with_path(path: &Path) -> impl FnOnce(Error) -> CliError + '_ {
    move |e| {
        let mut c = CliError::from(e);
        c.message = format!("{}: {}", path.display(), c.message);
        c
    }
}

fn read_schema(inputs: &Inputs) -> Result<Schema> {
    match &inputs.schema {
        None => Ok(Schema::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
            Schema::parse(&text).map_err(with_path(p))
        }
    }
}

fn read_dataset(path: &Path, schema: &Schema, opts: &LoadOptions) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    load_dataset(std::io::BufReader::new(file), schema, opts).map_err(with_path(path))
}

fn read_pair(inputs: &Inputs) -> Result<(Dataset, Dataset)> {
    let schema = read_schema(inputs)?;
    let hospital_path = require(&inputs.hospital, "hospital")?;
    let population_path = require(&inputs.population, "population")?;
    let hospital = read_dataset(hospital_path, &schema, &LoadOptions::labeled())?;
    let causes = hospital.cause_set().clone();
    let opts = if inputs.validation_mode { LoadOptions::validation(causes) } else { LoadOptions::unlabeled(causes) };
    let population = read_dataset(population_path, &schema, &opts)?;
    Ok((hospital, population))
}

fn constraint(fix: &[String], causes: &CauseSet) -> Result<ConstraintSpec> {
    let mut pairs = Vec::with_capacity(fix.len());
    for item in fix {
        let (name, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--fix-cause expects NAME=P, got `{item}`")))?;
        let j = causes
            .index_of(name.trim())
            .ok_or_else(|| CliError::usage(format!("--fix-cause: unknown cause `{}`", name.trim())))?;
        let p: f64 =
            value.trim().parse().map_err(|_| CliError::usage(format!("--fix-cause: `{value}` is not a number")))?;
        pairs.push((j, p));
    }
    ConstraintSpec::with_fixed(pairs).map_err(CliError::from)
}

fn estimator_config(a: &EstimatorArgs, seed: u64, causes: &CauseSet) -> Result<EstimatorConfig> {
    Ok(EstimatorConfig {
        subset_size: a.subset_size,
        n_subsets: a.n_subsets.unwrap_or(DEFAULT_N_SUBSETS),
        seed,
        n_bootstrap: a.bootstrap.unwrap_or(0),
        min_profiles: a.min_profiles,
        constraint: constraint(&a.fix_cause, causes)?,
        weights: None,
        keep_subset_estimates: false,
    })
}

fn committee_config(a: &CommitteeArgs, subset_size: Option<usize>, seed: u64) -> CommitteeConfig {
    let d = CommitteeConfig::default();
    CommitteeConfig {
        subset_size,
        n_members: a.members.unwrap_or(d.n_members),
        seed,
        smoothing: a.smoothing.unwrap_or(d.smoothing),
        mode: if a.joint { LikelihoodMode::Joint } else { LikelihoodMode::Product },
        denominator: if a.raw_denominator { Denominator::RawFrequency } else { Denominator::Mixture },
    }
}

/// Runs `--select-B` when requested, writing its score table, and returns the
/// configuration to estimate with.
fn maybe_select(
    out: &Output,
    args: &EstimatorArgs,
    hospital: &Dataset,
    mut cfg: EstimatorConfig,
    result: &mut toml::Table,
) -> Result<EstimatorConfig> {
    if args.select_b.is_empty() {
        return Ok(cfg);
    }
    let folds = args.folds.unwrap_or(DEFAULT_FOLDS);
    let table = select_subset_size(hospital, &args.select_b, folds, cfg.seed, &cfg)?;
    out.write("select_b.csv", |w| {
        let mut t = csv::Writer::from_writer(w);
        let mut header = vec!["subset_size".to_string(), "mean_mae".to_string()];
        header.extend((1..=folds).map(|f| format!("fold{f}")));
        t.write_record(&header)?;
        for (c, &b) in table.candidates.iter().enumerate() {
            let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into());
            let mut row = vec![b.to_string(), fmt(table.mean_scores[c])];
            row.extend(table.fold_scores[c].iter().map(|&v| fmt(v)));
            t.write_record(&row)?;
        }
        t.flush()?;
        Ok(())
    })?;
    result.insert("selected_subset_size".into(), (table.chosen as i64).into());
    cfg.subset_size = Some(table.chosen);
    Ok(cfg)
}

pub fn estimate_cmd(cmd: EstimateCmd) -> Result<()> {
    let base: EstimateOpts = load_manifest(cmd.common.config.as_deref(), "estimate")?;
    let opts = cmd.opts.merge(base);
    let seed = *require(&opts.seed, "seed")?;
    let (hospital, population) = read_pair(&opts.inputs)?;
    let out = Output::new(&cmd.common.out_dir, &input_paths(&opts.inputs))?;
    let mut result = toml::Table::new();
    let cfg = estimator_config(&opts.estimator, seed, hospital.cause_set())?;
    let cfg = maybe_select(&out, &opts.estimator, &hospital, cfg, &mut result)?;
    let report = estimate(&hospital, &population, &cfg)?;
    out.write("estimate.txt", |w| write_estimate_text(w, &report))?;
    out.write("estimate.csv", |w| write_estimate_csv(w, &report))?;

    result.insert("subset_size".into(), (report.subset_size as i64).into());
    result.insert("retained_subsets".into(), (report.retained_subsets as i64).into());
    let mut skipped = toml::Table::new();
    for (reason, n) in &report.skipped {
        skipped.insert(reason.to_string(), (*n as i64).into());
    }
    result.insert("skipped_subsets".into(), skipped.into());
    result.insert("bootstrap_failures".into(), (report.bootstrap_failures as i64).into());
    result.insert("warnings".into(), report.warnings.clone().into());
    out.manifest("estimate", &opts, result)
}

fn input_paths(inputs: &Inputs) -> Vec<&Path> {
    [&inputs.hospital, &inputs.population, &inputs.schema].into_iter().flatten().map(PathBuf::as_path).collect()
}

pub fn baseline_cmd(cmd: BaselineCmd) -> Result<()> {
    let base: BaselineOpts = load_manifest(cmd.common.config.as_deref(), "baseline")?;
    let opts = cmd.opts.merge(base);
    let seed = *require(&opts.seed, "seed")?;
    let (hospital, population) = read_pair(&opts.inputs)?;
    let out = Output::new(&cmd.common.out_dir, &input_paths(&opts.inputs))?;
    let family = IndependenceScorerFamily { smoothing: opts.smoothing.unwrap_or(IndependenceScorerFamily::default().smoothing) };
    let report = baseline_report(&family, &hospital, &population, opts.folds.unwrap_or(DEFAULT_FOLDS), seed)?;
    out.write("baseline.tsv", |w| write_baseline_report(w, &report))?;
    let mut result = toml::Table::new();
    result.insert("sum_of_estimates".into(), report.sum.into());
    result.insert("impossible".into(), (report.rows.iter().filter(|r| r.impossible).count() as i64).into());
    out.manifest("baseline", &opts, result)
}

/// Reads a `cause,point` table (extra columns ignored) in cause-set order.
fn read_p_hat(path: &Path, causes: &CauseSet) -> Result<SimplexVector> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let headers = r.headers().map_err(|e| CliError::data(format!("{}: {e}", path.display())))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::data(format!("{}: missing column `{name}`", path.display())))
    };
    let (ci, pi) = (col("cause")?, col("point")?);
    let mut values = vec![None; causes.len()];
    for row in r.records() {
        let row = row.map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let j = causes
            .index_of(&row[ci])
            .ok_or_else(|| CliError::data(format!("{}: unknown cause `{}`", path.display(), &row[ci])))?;
        let v: f64 = row[pi]
            .parse()
            .map_err(|_| CliError::data(format!("{}: `{}` is not a number", path.display(), &row[pi])))?;
        values[j] = Some(v);
    }
    let values: Option<Vec<f64>> = values.into_iter().collect();
    let values = values.ok_or_else(|| CliError::data(format!("{}: every cause needs a row", path.display())))?;
    SimplexVector::new(values).map_err(with_path(path))
}

pub fn classify_cmd(cmd: ClassifyCmd) -> Result<()> {
    let base: ClassifyOpts = load_manifest(cmd.common.config.as_deref(), "classify")?;
    let opts = cmd.opts.merge(base);
    let seed = *require(&opts.seed, "seed")?;
    let (hospital, population) = read_pair(&opts.inputs)?;
    let mut inputs = input_paths(&opts.inputs);
    inputs.extend(opts.p_hat.as_deref());
    let out = Output::new(&cmd.common.out_dir, &inputs)?;
    let p_hat = match &opts.p_hat {
        Some(p) => read_p_hat(p, hospital.cause_set())?,
        None => {
            let cfg = estimator_config(&opts.estimator, seed, hospital.cause_set())?;
            estimate_point(&hospital, &population, &cfg)?.point
        }
    };
    let cfg = committee_config(&opts.committee, opts.estimator.subset_size, seed);
    let c = classify(&hospital, &population, &p_hat, &cfg)?;
    let labels = hospital.cause_set().labels();
    out.write("posteriors.csv", |w| write_posteriors(w, &c, labels))?;
    out.write("p_hat.csv", |w| {
        let mut t = csv::Writer::from_writer(w);
        t.write_record(["cause", "point"])?;
        for (l, v) in labels.iter().zip(p_hat.values()) {
            t.write_record([l.clone(), v.to_string()])?;
        }
        t.flush()?;
        Ok(())
    })?;
    let mut result = toml::Table::new();
    result.insert("fallback_records".into(), (c.n_fallback() as i64).into());
    result.insert("rescale_iterations".into(), (c.rescale_iterations as i64).into());
    result.insert("rescale_converged".into(), c.converged.into());
    out.manifest("classify", &opts, result)
}

pub fn validate_cmd(cmd: ValidateCmd) -> Result<()> {
    let base: ValidateOpts = load_manifest(cmd.common.config.as_deref(), "validate")?;
    let opts = cmd.opts.merge(base);
    let seed = *require(&opts.seed, "seed")?;
    let protocol = *require(&opts.protocol, "protocol")?;
    let schema = read_schema(&opts.inputs)?;
    let path = require(&opts.inputs.hospital, "hospital")?;
    let data = read_dataset(path, &schema, &LoadOptions::labeled())?;
    let out = Output::new(&cmd.common.out_dir, &input_paths(&opts.inputs))?;
    let cfg = estimator_config(&opts.estimator, seed, data.cause_set())?;
    let report = match protocol {
        Protocol::Split => run_split_validation(&data, &cfg, opts.fraction.unwrap_or(0.5), seed)?,
        Protocol::Site => {
            if opts.hospital_sites.is_empty() {
                return Err(CliError::usage("--protocol site needs --hospital-sites".into()));
            }
            run_site_validation(&data, &opts.hospital_sites, &cfg)?
        }
    };
    out.write("validation.txt", |w| write_validation_report(w, &report))?;
    out.write("scatter.csv", |w| write_scatter(w, &report))?;
    out.write("difference.csv", |w| write_difference(w, &report))?;
    let mut result = toml::Table::new();
    result.insert("mae".into(), report.mae.into());
    if let Some(r) = report.diff_coverage_rate {
        result.insert("diff_coverage_rate".into(), r.into());
    }
    result.insert("warnings".into(), report.warnings.clone().into());
    out.manifest("validate", &opts, result)
}

pub fn simulate_cmd(cmd: SimulateCmd) -> Result<()> {
    let base: SimulateOpts = load_manifest(cmd.common.config.as_deref(), "simulate")?;
    let opts = cmd.opts.merge(base);
    let seed = *require(&opts.seed, "seed")?;
    let mut inputs = Vec::new();
    let spec = match (&opts.spec, opts.preset) {
        (Some(path), _) => {
            inputs.push(path.as_path());
            let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            GeneratorSpec::from_toml(&text).map_err(with_path(path))?
        }
        (None, Some(Preset::ClassifierShift)) => classifier_shift_spec(seed),
        (None, Some(Preset::ChinaShaped)) => china_shaped_spec(seed),
        (None, None) => return Err(CliError::usage("simulate needs --spec or --preset".into())),
    };
    let out = Output::new(&cmd.common.out_dir, &inputs)?;
    out.write("spec.toml", |w| {
        w.extend_from_slice(spec.to_toml().as_bytes());
        Ok(())
    })?;
    let mut result = toml::Table::new();
    if spec.n_population == 0 {
        let hospital = generate_labeled(&spec, seed)?;
        out.write("hospital.csv", |w| write_dataset(w, &hospital, b','))?;
        return out.manifest("simulate", &opts, result);
    }
    let g = generate(&spec, seed)?;
    out.write("hospital.csv", |w| write_dataset(w, &g.hospital, b','))?;
    out.write("population.csv", |w| write_dataset(w, &g.population.clone().into_unlabeled(), b','))?;
    out.write("population_truth.csv", |w| write_dataset(w, &g.population, b','))?;

    let cfg = estimator_config(&opts.estimator, seed, g.hospital.cause_set())?;
    let committee = committee_config(&opts.committee, opts.estimator.subset_size, seed);
    let r = run_classifier_experiment(&spec, &committee, &cfg, seed)?;
    out.write("experiment.txt", |w| write_experiment_summary(w, &r))?;
    out.write("symptom_marginals.csv", |w| write_marginals(w, &r))?;
    out.write("cause_marginals.csv", |w| write_cause_marginals(w, &r))?;
    out.write("aggregates.csv", |w| write_aggregates(w, &r))?;
    result.insert("accuracy_estimated".into(), r.accuracy_estimated.into());
    result.insert("accuracy_hospital_prior".into(), r.accuracy_hospital.into());
    out.manifest("simulate", &opts, result)
}
