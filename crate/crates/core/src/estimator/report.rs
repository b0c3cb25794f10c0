use std::io::Write;

use super::EstimateReport;
use crate::error::Result;

/// Key-value header followed by a tab-separated per-cause table.
pub fn write_estimate_text<W: Write>(mut w: W, r: &EstimateReport) -> Result<()> {
    let cfg = &r.config;
    let j = r.causes.len();
    writeln!(w, "subset_size = {}", r.subset_size)?;
    writeln!(w, "n_subsets = {}", cfg.n_subsets)?;
    writeln!(w, "seed = {}", cfg.seed)?;
    writeln!(w, "n_bootstrap = {}", cfg.n_bootstrap)?;
    writeln!(w, "min_profiles = {}", cfg.min_profiles.unwrap_or(j + 1))?;
    for (&i, &v) in cfg.constraint.fixed() {
        writeln!(w, "fixed.{} = {}", r.causes[i], v)?;
    }
    writeln!(w, "weighted = {}", cfg.weights.is_some())?;
    writeln!(w, "retained_subsets = {}", r.retained_subsets)?;
    writeln!(w, "skipped_subsets = {}", r.skipped.values().sum::<usize>())?;
    for (reason, n) in &r.skipped {
        writeln!(w, "skipped.{reason} = {n}")?;
    }
    writeln!(w, "bootstrap_failures = {}", r.bootstrap_failures)?;
    for warning in &r.warnings {
        writeln!(w, "warning = {warning:?}")?;
    }
    writeln!(w)?;
    writeln!(w, "cause\tpoint\tci_lower\tci_upper\tse")?;
    for c in 0..j {
        let opt = |v: &Option<Vec<f64>>| v.as_ref().map(|v| v[c].to_string()).unwrap_or_default();
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            r.causes[c],
            r.point[c],
            opt(&r.ci_lower),
            opt(&r.ci_upper),
            opt(&r.bootstrap_se)
        )?;
    }
    Ok(())
}

/// `cause,point,lo,hi`; bounds are empty without bootstrap.
pub fn write_estimate_csv<W: Write>(w: W, r: &EstimateReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["cause", "point", "lo", "hi"])?;
    for c in 0..r.causes.len() {
        let opt = |v: &Option<Vec<f64>>| v.as_ref().map(|v| v[c].to_string()).unwrap_or_default();
        out.write_record([r.causes[c].clone(), r.point[c].to_string(), opt(&r.ci_lower), opt(&r.ci_upper)])?;
    }
    out.flush()?;
    Ok(())
}
