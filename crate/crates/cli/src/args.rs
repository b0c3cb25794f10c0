use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "vacalc", version, about = "Cause-of-death distribution estimation from verbal autopsy data")]
pub struct Cli {
    /// Worker threads; defaults to the number of cores. Output does not
    /// depend on it.
    #[arg(long, global = true, env = "VACALC_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the population cause distribution
    Estimate(EstimateCmd),
    /// Per-cause corrected prevalence from a dichotomous predictor
    Baseline(BaselineCmd),
    /// Assign causes to individual population records
    Classify(ClassifyCmd),
    /// Split labeled data, estimate on one part and score against its labels
    Validate(ValidateCmd),
    /// Generate synthetic data and run the classifier experiment
    Simulate(SimulateCmd),
}

/// Flags every command shares. Neither field is recorded in the manifest.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Directory for all outputs (created if missing)
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Manifest from an earlier run; explicit flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Fills unset fields of `self` from `base`.
pub trait Merge {
    fn merge(self, base: Self) -> Self;
}

macro_rules! merge_impl {
    ($ty:ty { opt: [$($o:ident),*], vec: [$($v:ident),*], flag: [$($f:ident),*], nested: [$($n:ident),*] }) => {
        impl Merge for $ty {
            #[allow(unused_variables)]
            fn merge(self, base: Self) -> Self {
                Self {
                    $($o: self.$o.or(base.$o),)*
                    $($v: if self.$v.is_empty() { base.$v } else { self.$v },)*
                    $($f: self.$f || base.$f,)*
                    $($n: self.$n.merge(base.$n),)*
                }
            }
        }
    };
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct Inputs {
    /// Labeled hospital data (comma or tab delimited)
    #[arg(long)]
    pub hospital: Option<PathBuf>,
    /// Unlabeled population data
    #[arg(long)]
    pub population: Option<PathBuf>,
    /// Column roles, one `column = role` per line (cause, symptom, site, ignore)
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Accept a cause column in the population file and ignore its values
    #[arg(long)]
    pub validation_mode: bool,
}
merge_impl!(Inputs { opt: [hospital, population, schema], vec: [], flag: [validation_mode], nested: [] });

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorArgs {
    /// Symptoms per subset (B)
    #[arg(long)]
    pub subset_size: Option<usize>,
    /// Number of symptom subsets averaged
    #[arg(long)]
    pub n_subsets: Option<usize>,
    /// Bootstrap replicates for intervals (0 for a point estimate only)
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Minimum distinct profiles for a subset to count (default J + 1)
    #[arg(long)]
    pub min_profiles: Option<usize>,
    /// Pin a cause's proportion, as NAME=P; repeatable
    #[arg(long = "fix-cause", value_name = "NAME=P")]
    pub fix_cause: Vec<String>,
    /// Choose B by cross-validation among these candidates
    #[arg(long = "select-B", value_delimiter = ',', value_name = "LIST")]
    pub select_b: Vec<usize>,
    /// Folds for --select-B and for sensitivity/specificity estimation
    #[arg(long)]
    pub folds: Option<usize>,
}
merge_impl!(EstimatorArgs {
    opt: [subset_size, n_subsets, bootstrap, min_profiles, folds],
    vec: [fix_cause, select_b],
    flag: [],
    nested: []
});

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct CommitteeArgs {
    /// Committee members (symptom subsets) for classification
    #[arg(long)]
    pub members: Option<usize>,
    /// Additive smoothing pseudo-count
    #[arg(long)]
    pub smoothing: Option<f64>,
    /// Use joint profile frequencies instead of the per-symptom product
    #[arg(long)]
    pub joint: bool,
    /// Divide by raw population profile frequencies instead of the mixture
    #[arg(long)]
    pub raw_denominator: bool,
}
merge_impl!(CommitteeArgs { opt: [members, smoothing], vec: [], flag: [joint, raw_denominator], nested: [] });

#[derive(Debug, Args)]
pub struct EstimateCmd {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub opts: EstimateOpts,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateOpts {
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub inputs: Inputs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
}
merge_impl!(EstimateOpts { opt: [seed], vec: [], flag: [], nested: [inputs, estimator] });

#[derive(Debug, Args)]
pub struct BaselineCmd {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub opts: BaselineOpts,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineOpts {
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub inputs: Inputs,
    /// Cross-validation folds
    #[arg(long)]
    pub folds: Option<usize>,
    /// Additive smoothing of the reference predictor
    #[arg(long)]
    pub smoothing: Option<f64>,
}
merge_impl!(BaselineOpts { opt: [seed, folds, smoothing], vec: [], flag: [], nested: [inputs] });

#[derive(Debug, Args)]
pub struct ClassifyCmd {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub opts: ClassifyOpts,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyOpts {
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub inputs: Inputs,
    /// Cause distribution to aggregate to (`cause,point` table); estimated
    /// when absent
    #[arg(long)]
    pub p_hat: Option<PathBuf>,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub committee: CommitteeArgs,
}
merge_impl!(ClassifyOpts { opt: [seed, p_hat], vec: [], flag: [], nested: [inputs, estimator, committee] });

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Random split of the labeled records
    Split,
    /// Split by site tag
    Site,
}

#[derive(Debug, Args)]
pub struct ValidateCmd {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub opts: ValidateOpts,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidateOpts {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Labeled data to split (`--hospital`); `--population` is not used
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long, value_enum)]
    pub protocol: Option<Protocol>,
    /// Share of records kept labeled under the split protocol
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Sites forming the labeled part under the site protocol
    #[arg(long, value_delimiter = ',')]
    pub hospital_sites: Vec<String>,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
}
merge_impl!(ValidateOpts {
    opt: [seed, protocol, fraction],
    vec: [hospital_sites],
    flag: [],
    nested: [inputs, estimator]
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Five causes, twenty symptoms, strongly shifted cause distributions
    ClassifierShift,
    /// Thirteen causes, 56 symptoms, 2822 labeled records
    ChinaShaped,
}

#[derive(Debug, Args)]
pub struct SimulateCmd {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub opts: SimulateOpts,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateOpts {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Generator description (TOML)
    #[arg(long, conflicts_with = "preset")]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub committee: CommitteeArgs,
}
merge_impl!(SimulateOpts { opt: [seed, spec, preset], vec: [], flag: [], nested: [estimator, committee] });
