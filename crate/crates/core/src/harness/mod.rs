//! Synthetic data and validation protocols.

mod experiment;
mod generate;
mod validate;

pub use experiment::{
    run_classifier_experiment, sign_test_p, write_aggregates, write_cause_marginals, write_experiment_summary,
    write_marginals, ExperimentReport,
};
pub use generate::{
    china_shaped_spec, classifier_shift_spec, generate, generate_labeled, random_conditionals, Generated,
    GeneratorSpec, SiteSpec,
};
pub use validate::{
    coverage_study, run_site_validation, run_split_validation, validate_pair, violation_sweep,
    write_difference, write_scatter, write_validation_report, CauseValidation, CoverageStudy, ValidationReport,
};
