use rand::Rng;
use serde::{Deserialize, Serialize};

use super::propensity::{propensity_averaged, EstimatorSpec};
use super::table::QueryGroups;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
    /// Two-sided coverage of the percentile interval.
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: 200,
            seed: 0,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// Percentile interval per rank; `None` where no resample produced an estimate.
    pub intervals: Vec<Option<(f64, f64)>>,
    /// Resamples in which estimation was impossible.
    pub failed_resamples: usize,
    pub warnings: Vec<String>,
}

/// Query-level percentile bootstrap for one estimator.
pub fn bootstrap_ci(
    groups: &QueryGroups,
    spec: &EstimatorSpec,
    config: &BootstrapConfig,
    exec: Exec,
) -> Result<BootstrapResult> {
    Ok(bootstrap_many(groups, std::slice::from_ref(spec), config, exec)?.remove(0))
}

/// Runs several estimators on the same resampled tables.
///
/// Whole queries are resampled with replacement, since rows within a query
/// share one logged ranking. Resample `r` draws from its own stream, so
/// results do not depend on the worker count.
pub fn bootstrap_many(
    groups: &QueryGroups,
    specs: &[EstimatorSpec],
    config: &BootstrapConfig,
    exec: Exec,
) -> Result<Vec<BootstrapResult>> {
    if config.resamples < 100 {
        return Err(Error::config("resamples", "need at least 100 bootstrap resamples"));
    }
    if !(config.level > 0.0 && config.level < 1.0) {
        return Err(Error::config("level", "must lie strictly between 0 and 1"));
    }
    let n = groups.num_queries();
    let page = groups.page_size();
    let mut warnings = Vec::new();
    if n < 10 {
        warnings.push(format!("only {n} queries; bootstrap intervals are unreliable"));
    }

    // draws[r][k] = estimate vector of spec k under resample r
    let draws: Vec<Vec<Option<Vec<Option<f64>>>>> = exec.map_range(config.resamples, |r| {
        let mut rng = stream_rng(config.seed, Stream::Bootstrap, r as u64);
        let mut multiplicity = vec![0u32; n];
        for _ in 0..n {
            multiplicity[rng.random_range(0..n)] += 1;
        }
        let table = groups.weighted_table(&multiplicity);
        specs
            .iter()
            .map(|spec| propensity_averaged(&table, spec).ok().map(|e| e.values()))
            .collect()
    });

    let tail = (1.0 - config.level) / 2.0;
    let results = (0..specs.len())
        .map(|k| {
            let mut failed = 0;
            let mut per_rank: Vec<Vec<f64>> = vec![Vec::with_capacity(config.resamples); page];
            for resample in &draws {
                match &resample[k] {
                    Some(values) => {
                        for (i, v) in values.iter().enumerate() {
                            if let Some(v) = v {
                                per_rank[i].push(*v);
                            }
                        }
                    }
                    None => failed += 1,
                }
            }
            let intervals = per_rank
                .iter_mut()
                .map(|values| {
                    if values.is_empty() {
                        return None;
                    }
                    values.sort_by(f64::total_cmp);
                    Some((percentile(values, tail), percentile(values, 1.0 - tail)))
                })
                .collect();
            let mut warnings = warnings.clone();
            if failed > 0 {
                warnings.push(format!(
                    "{failed} of {} resamples could not be estimated",
                    config.resamples
                ));
            }
            BootstrapResult {
                intervals,
                failed_resamples: failed,
                warnings,
            }
        })
        .collect();
    Ok(results)
}

/// Linear interpolation between order statistics of sorted `values`.
pub(crate) fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{GridCell, Impression, JudgeScore, Rank};

    fn rows(query: &str, clicks: &[bool], score: u8) -> Vec<Impression> {
        clicks
            .iter()
            .enumerate()
            .map(|(i, &clicked)| Impression {
                query_id: query.into(),
                item_id: format!("{query}-{i}"),
                rank: Rank::from_index(i),
                cell: GridCell {
                    row: 0,
                    col: i as u16,
                },
                judge_score: Some(JudgeScore::new(score).unwrap()),
                clicked,
                booked: false,
                true_relevance: None,
            })
            .collect()
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert_eq!(percentile(&v, 0.125), 1.5);
        assert_eq!(percentile(&v, 1.0), 5.0);
    }

    #[test]
    fn identical_queries_give_zero_width_intervals() {
        let mut log = Vec::new();
        for q in 0..1000 {
            log.extend(rows(&format!("q{q}"), &[true, false, true], 70));
        }
        let groups = QueryGroups::from_log(&log).unwrap();
        let spec = EstimatorSpec {
            min_support: 1,
            ..Default::default()
        };
        let res = bootstrap_ci(&groups, &spec, &BootstrapConfig::default(), Exec::default()).unwrap();
        assert_eq!(res.intervals, vec![Some((1.0, 1.0)), Some((0.0, 0.0)), Some((1.0, 1.0))]);
    }

    #[test]
    fn heterogeneous_queries_give_proper_intervals() {
        let mut log = Vec::new();
        for q in 0..1000 {
            log.extend(rows(&format!("a{q}"), &[true, false, true], 70));
            log.extend(rows(&format!("b{q}"), &[true, true, false], 70));
        }
        let groups = QueryGroups::from_log(&log).unwrap();
        let spec = EstimatorSpec {
            min_support: 1,
            ..Default::default()
        };
        let res = bootstrap_ci(&groups, &spec, &BootstrapConfig::default(), Exec::default()).unwrap();
        let (lo, hi) = res.intervals[1].unwrap();
        assert!(lo < 0.5 && hi > 0.5 && hi - lo < 0.1, "({lo}, {hi})");
        assert_eq!(res.intervals[0], Some((1.0, 1.0)));
    }

    #[test]
    fn one_query_duplicated_is_degenerate() {
        let mut log = Vec::new();
        for _ in 0..1000 {
            log.extend(rows("q0", &[true, false, true], 70));
        }
        let groups = QueryGroups::from_log(&log).unwrap();
        assert_eq!(groups.num_queries(), 1);
        let spec = EstimatorSpec {
            min_support: 1,
            ..Default::default()
        };
        let res = bootstrap_ci(&groups, &spec, &BootstrapConfig::default(), Exec::default()).unwrap();
        assert_eq!(res.intervals[1], Some((0.0, 0.0)));
        assert_eq!(res.intervals[2], Some((1.0, 1.0)));
        assert!(res.warnings.iter().any(|w| w.contains("unreliable")));
    }

    #[test]
    fn too_few_resamples_rejected() {
        let groups = QueryGroups::from_log(&rows("q", &[true], 10)).unwrap();
        let cfg = BootstrapConfig {
            resamples: 99,
            ..Default::default()
        };
        assert!(bootstrap_ci(&groups, &EstimatorSpec::default(), &cfg, Exec::default()).is_err());
    }

    #[test]
    fn deterministic_across_exec_modes() {
        let mut log = Vec::new();
        for q in 0..300 {
            let pattern = [q % 2 == 0, q % 3 == 0, q % 5 == 0, q % 7 == 0];
            log.extend(rows(&format!("q{q}"), &pattern, 60 + (q % 3) as u8));
        }
        let groups = QueryGroups::from_log(&log).unwrap();
        let spec = EstimatorSpec {
            min_support: 20,
            ..Default::default()
        };
        let cfg = BootstrapConfig {
            seed: 9,
            ..Default::default()
        };
        let a = bootstrap_ci(&groups, &spec, &cfg, Exec::Sequential).unwrap();
        let b = bootstrap_ci(&groups, &spec, &cfg, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
