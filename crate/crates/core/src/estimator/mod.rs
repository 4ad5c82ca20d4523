//! Propensity estimation from judge-annotated click logs.
//!
//! Click rates are tabulated per (judge score, rank). For each score, the
//! rate at rank `p` divided by the rate at rank 1 cancels relevance under the
//! position-based model, leaving the examination propensity. Averaging these
//! ratios over scores gives the estimate; averaging within score buckets and
//! comparing the curves checks whether the judge score screens off rank.

mod bootstrap;
mod buckets;
mod grid;
mod propensity;
mod table;

pub use bootstrap::{bootstrap_ci, bootstrap_many, BootstrapConfig, BootstrapResult};
pub use buckets::{
    bucket_curves, bucket_divergence, BucketCurve, BucketCurves, DivergenceReport, OmittedBucket, RankGap,
    DIVERGENCE_THRESHOLD,
};
pub use grid::{
    blues, estimate_grid, flatten_grid, heatmap_svg, map_to_grid, read_propensity_csv, write_bucket_csv,
    write_propensity_csv,
};
pub use propensity::{
    propensity_averaged, propensity_single_score, EstimatorSpec, PropensityEstimate, RankEstimate, ScoreRatios,
    Weighting,
};
pub use table::{click_rate, CellCounts, ClickRateTable, CompactRow, QueryGroups};

use crate::error::Result;
use crate::exec::Exec;
use crate::types::{Impression, ScoreBucket};

/// Everything the estimate command reports for one log.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub overall: PropensityEstimate,
    pub buckets: BucketCurves,
    /// `None` with fewer than two usable buckets.
    pub divergence: Option<DivergenceReport>,
    pub warnings: Vec<String>,
}

/// Overall and per-bucket estimates with bootstrap intervals attached, plus
/// the divergence report. All estimators share the same resamples.
pub fn analyze(
    log: &[Impression],
    buckets: &[ScoreBucket],
    spec: &EstimatorSpec,
    bootstrap: &BootstrapConfig,
    exec: Exec,
) -> Result<Analysis> {
    let groups = QueryGroups::from_log(log)?;
    let table = groups.table();
    let overall = propensity_averaged(&table, spec)?;
    let mut curves = bucket_curves(&table, buckets, spec)?;

    let mut specs = vec![spec.clone()];
    specs.extend(curves.curves.iter().map(|c| spec.for_bucket(&c.bucket)));
    let mut boot = bootstrap_many(&groups, &specs, bootstrap, exec)?.into_iter();

    let mut warnings = overall.warnings.clone();
    let first = boot.next().expect("one result per spec");
    warnings.extend(first.warnings.iter().cloned());
    let overall = overall.with_intervals(&first.intervals);
    for (curve, result) in curves.curves.iter_mut().zip(boot) {
        let estimate = std::mem::replace(&mut curve.estimate, PropensityEstimate::from_values(&[1.0])?);
        curve.estimate = estimate.with_intervals(&result.intervals);
        warnings.extend(
            curve
                .estimate
                .warnings
                .iter()
                .map(|w| format!("{}: {w}", curve.bucket.label)),
        );
    }
    for o in &curves.omitted {
        warnings.push(format!("{} omitted: {}", o.bucket.label, o.reason));
    }
    let divergence = if curves.curves.len() >= 2 {
        Some(bucket_divergence(&curves)?)
    } else {
        warnings.push("fewer than two buckets estimated; divergence unavailable".into());
        None
    };
    Ok(Analysis {
        overall,
        buckets: curves,
        divergence,
        warnings,
    })
}
