use serde::{Deserialize, Serialize};

use super::propensity::{propensity_averaged, EstimatorSpec, PropensityEstimate};
use super::table::ClickRateTable;
use crate::error::{Error, Result};
use crate::types::{check_disjoint, Rank, ScoreBucket};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketCurve {
    pub bucket: ScoreBucket,
    pub estimate: PropensityEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmittedBucket {
    pub bucket: ScoreBucket,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketCurves {
    pub curves: Vec<BucketCurve>,
    pub omitted: Vec<OmittedBucket>,
}

/// One independently anchored propensity curve per score bucket. Buckets
/// without enough support are omitted and recorded, not fatal.
pub fn bucket_curves(
    table: &ClickRateTable,
    buckets: &[ScoreBucket],
    spec: &EstimatorSpec,
) -> Result<BucketCurves> {
    check_disjoint(buckets)?;
    let mut curves = Vec::new();
    let mut omitted = Vec::new();
    for bucket in buckets {
        match propensity_averaged(table, &spec.for_bucket(bucket)) {
            Ok(estimate) => curves.push(BucketCurve {
                bucket: bucket.clone(),
                estimate,
            }),
            Err(e @ Error::EstimationImpossible { .. }) => {
                log::warn!("bucket {} omitted: {e}", bucket.label);
                omitted.push(OmittedBucket {
                    bucket: bucket.clone(),
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(BucketCurves { curves, omitted })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankGap {
    pub rank: Rank,
    /// Largest absolute difference between any two bucket estimates.
    pub max_gap: f64,
    pub pair: (String, String),
    /// Some pair of intervals at this rank fails to overlap.
    pub separated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub buckets: Vec<String>,
    pub per_rank: Vec<RankGap>,
    pub max_gap: f64,
    pub max_gap_rank: Option<Rank>,
    /// Ranks (anchor excluded) where every pair of intervals overlaps.
    pub consistent_fraction: f64,
    pub separated_fraction: f64,
    /// Separated at 25% or more of the compared ranks.
    pub divergent: bool,
}

/// Fraction of compared ranks that must separate for the curves to count as
/// divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 0.25;

/// Compares bucket curves rank by rank. Ranks beyond 1 where at least two
/// curves have estimates are compared; a curve without an interval is treated
/// as a point.
pub fn bucket_divergence(curves: &BucketCurves) -> Result<DivergenceReport> {
    if curves.curves.len() < 2 {
        return Err(Error::Validation(format!(
            "divergence needs at least two bucket curves, have {}",
            curves.curves.len()
        )));
    }
    let page = curves.curves.iter().map(|c| c.estimate.len()).max().unwrap_or(0);
    let mut per_rank = Vec::new();
    for i in 1..page {
        let points: Vec<(&str, f64, (f64, f64))> = curves
            .curves
            .iter()
            .filter_map(|c| {
                let r = c.estimate.ranks.get(i)?;
                let v = r.estimate?;
                Some((c.bucket.label.as_str(), v, r.ci.unwrap_or((v, v))))
            })
            .collect();
        if points.len() < 2 {
            continue;
        }
        let mut gap = RankGap {
            rank: Rank::from_index(i),
            max_gap: 0.0,
            pair: (points[0].0.to_string(), points[1].0.to_string()),
            separated: false,
        };
        for (a, pa) in points.iter().enumerate() {
            for pb in &points[a + 1..] {
                let d = (pa.1 - pb.1).abs();
                if d > gap.max_gap {
                    gap.max_gap = d;
                    gap.pair = (pa.0.to_string(), pb.0.to_string());
                }
                let overlap = pa.2 .0 <= pb.2 .1 && pb.2 .0 <= pa.2 .1;
                gap.separated |= !overlap;
            }
        }
        per_rank.push(gap);
    }
    let compared = per_rank.len().max(1) as f64;
    let separated = per_rank.iter().filter(|g| g.separated).count() as f64;
    let (max_gap, max_gap_rank) = per_rank
        .iter()
        .fold((0.0, None), |(best, at), g| {
            if g.max_gap > best {
                (g.max_gap, Some(g.rank))
            } else {
                (best, at)
            }
        });
    let separated_fraction = if per_rank.is_empty() { 0.0 } else { separated / compared };
    Ok(DivergenceReport {
        buckets: curves.curves.iter().map(|c| c.bucket.label.clone()).collect(),
        max_gap,
        max_gap_rank,
        consistent_fraction: if per_rank.is_empty() { 1.0 } else { 1.0 - separated_fraction },
        separated_fraction,
        divergent: separated_fraction >= DIVERGENCE_THRESHOLD,
        per_rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::PropensityEstimate;

    fn curve(label: &str, values: &[f64], half_width: f64) -> BucketCurve {
        let mut estimate = PropensityEstimate::from_values(values).unwrap();
        for r in estimate.ranks.iter_mut().skip(1) {
            let v = r.estimate.unwrap();
            r.ci = Some((v - half_width, v + half_width));
        }
        BucketCurve {
            bucket: ScoreBucket::new(label, 0, 0).unwrap(),
            estimate,
        }
    }

    fn curves(cs: Vec<BucketCurve>) -> BucketCurves {
        BucketCurves {
            curves: cs,
            omitted: Vec::new(),
        }
    }

    #[test]
    fn identical_curves_do_not_diverge() {
        let report = bucket_divergence(&curves(vec![
            curve("a", &[1.0, 0.5, 0.25], 0.01),
            curve("b", &[1.0, 0.5, 0.25], 0.01),
        ]))
        .unwrap();
        assert_eq!(report.max_gap, 0.0);
        assert!(!report.divergent);
        assert_eq!(report.consistent_fraction, 1.0);
    }

    #[test]
    fn max_gap_arithmetic() {
        let report = bucket_divergence(&curves(vec![
            curve("a", &[1.0, 0.5, 0.25], 0.0),
            curve("b", &[1.0, 0.5, 0.45], 0.0),
        ]))
        .unwrap();
        assert!((report.max_gap - 0.20).abs() < 1e-12);
        assert_eq!(report.max_gap_rank, Some(Rank::new(3).unwrap()));
        // One of two compared ranks separates.
        assert_eq!(report.separated_fraction, 0.5);
        assert!(report.divergent);
    }

    #[test]
    fn overlapping_intervals_are_consistent() {
        let report = bucket_divergence(&curves(vec![
            curve("a", &[1.0, 0.5, 0.25, 0.2], 0.06),
            curve("b", &[1.0, 0.55, 0.3, 0.1], 0.06),
        ]))
        .unwrap();
        // Every gap is at most 0.1, inside the combined width of 0.12.
        assert!(!report.divergent);
        let report = bucket_divergence(&curves(vec![
            curve("a", &[1.0, 0.5, 0.25, 0.2], 0.02),
            curve("b", &[1.0, 0.55, 0.3, 0.1], 0.02),
        ]))
        .unwrap();
        assert_eq!(report.separated_fraction, 1.0);
        assert!(report.divergent);
    }

    #[test]
    fn needs_two_curves() {
        assert!(bucket_divergence(&curves(vec![curve("a", &[1.0, 0.5], 0.0)])).is_err());
    }

    #[test]
    fn empty_bucket_is_omitted() {
        let mut table = ClickRateTable::new(2);
        for _ in 0..100 {
            table.record(crate::types::JudgeScore::new(90).unwrap(), Rank::TOP, true, false);
            table.record(crate::types::JudgeScore::new(90).unwrap(), Rank::new(2).unwrap(), false, false);
        }
        let out = bucket_curves(&table, &ScoreBucket::standard_set(), &EstimatorSpec::default()).unwrap();
        assert_eq!(out.curves.len(), 1);
        assert_eq!(out.curves[0].bucket.label, "Excellent");
        assert_eq!(out.omitted.len(), 2);
    }

    #[test]
    fn single_bucket_matches_direct_estimate() {
        let mut table = ClickRateTable::new(3);
        for (s, rates) in [(50u8, [0.5, 0.3, 0.2]), (85, [0.9, 0.5, 0.3])] {
            for (i, rate) in rates.iter().enumerate() {
                let clicks = (rate * 200.0) as u64;
                let score = crate::types::JudgeScore::new(s).unwrap();
                table.record_weighted(score, Rank::from_index(i), true, false, clicks);
                table.record_weighted(score, Rank::from_index(i), false, false, 200 - clicks);
            }
        }
        let bucket = ScoreBucket::new("Fair", 41, 60).unwrap();
        let spec = EstimatorSpec::default();
        let out = bucket_curves(&table, std::slice::from_ref(&bucket), &spec).unwrap();
        let direct = propensity_averaged(&table, &spec.for_bucket(&bucket)).unwrap();
        assert_eq!(out.curves[0].estimate, direct);
    }
}
