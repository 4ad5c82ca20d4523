use serde::{Deserialize, Serialize};

use super::table::{click_rate, ClickRateTable};
use crate::error::{Error, Result};
use crate::types::{JudgeScore, Rank, ScoreBucket};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Plain mean over retained scores.
    #[default]
    Unweighted,
    /// Mean weighted by `n1 * np / (n1 + np)`, the effective sample size of
    /// the two cells in a ratio.
    SupportWeighted,
}

/// Which scores to average and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorSpec {
    /// Inclusive score range.
    pub score_lo: u8,
    pub score_hi: u8,
    /// Additive smoothing for click rates.
    pub smoothing: f64,
    /// Minimum impressions in a (score, rank) cell, rank 1 included, for that
    /// cell's ratio to count.
    pub min_support: u64,
    pub weighting: Weighting,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        EstimatorSpec {
            score_lo: 0,
            score_hi: JudgeScore::MAX,
            smoothing: 0.0,
            min_support: 50,
            weighting: Weighting::Unweighted,
        }
    }
}

impl EstimatorSpec {
    pub fn for_bucket(&self, bucket: &ScoreBucket) -> Self {
        EstimatorSpec {
            score_lo: bucket.lo,
            score_hi: bucket.hi,
            ..self.clone()
        }
    }

    fn scores(&self) -> impl Iterator<Item = JudgeScore> {
        (self.score_lo..=self.score_hi.min(JudgeScore::MAX)).map(|s| JudgeScore::new(s).unwrap())
    }
}

/// Per-rank ratios `rate(s, p) / rate(s, 1)` for one judge score. `None`
/// where the rank-`p` cell lacks support.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRatios {
    pub score: JudgeScore,
    pub ratios: Vec<Option<f64>>,
    /// `n(s, 1) * n(s, p) / (n(s, 1) + n(s, p))` per rank.
    pub support: Vec<f64>,
}

/// Ratio of each rank's click rate to the rank-1 click rate for score `s`.
///
/// Fails with [`Error::InsufficientSupport`] when the rank-1 cell holds fewer
/// than `min_support` impressions; callers averaging over many scores treat
/// that as an exclusion, not a failure.
pub fn propensity_single_score(
    table: &ClickRateTable,
    score: JudgeScore,
    alpha: f64,
    min_support: u64,
) -> Result<ScoreRatios> {
    let top = table.cell(score, Rank::TOP);
    if top.impressions < min_support || (top.impressions == 0 && alpha <= 0.0) {
        return Err(Error::InsufficientSupport {
            score: score.get(),
            impressions: top.impressions,
            min_support,
        });
    }
    let top_rate = click_rate(table, score, Rank::TOP, alpha)?;
    let n1 = top.impressions as f64;
    let mut ratios = Vec::with_capacity(table.page_size());
    let mut support = Vec::with_capacity(table.page_size());
    ratios.push(Some(1.0));
    support.push(n1 / 2.0);
    for i in 1..table.page_size() {
        let rank = Rank::from_index(i);
        let cell = table.cell(score, rank);
        let np = cell.impressions as f64;
        support.push(if np > 0.0 { n1 * np / (n1 + np) } else { 0.0 });
        if cell.impressions < min_support || (cell.impressions == 0 && alpha <= 0.0) {
            ratios.push(None);
            continue;
        }
        // A score never clicked at rank 1 carries no information about examination.
        if top_rate == 0.0 {
            ratios.push(None);
            continue;
        }
        ratios.push(Some(click_rate(table, score, rank, alpha)? / top_rate));
    }
    Ok(ScoreRatios {
        score,
        ratios,
        support,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEstimate {
    pub rank: Rank,
    pub estimate: Option<f64>,
    /// Bootstrap percentile interval, once attached.
    pub ci: Option<(f64, f64)>,
    /// Scores whose ratio contributed at this rank.
    pub n_scores: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityEstimate {
    pub ranks: Vec<RankEstimate>,
    /// Scores meeting the rank-1 support threshold.
    pub retained_scores: Vec<u8>,
    /// Scores observed in the table but below the rank-1 threshold.
    pub excluded_scores: Vec<u8>,
    pub warnings: Vec<String>,
}

impl PropensityEstimate {
    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn estimate(&self, rank: Rank) -> Option<f64> {
        self.ranks.get(rank.index()).and_then(|r| r.estimate)
    }

    pub fn values(&self) -> Vec<Option<f64>> {
        self.ranks.iter().map(|r| r.estimate).collect()
    }

    /// A fully specified estimate, e.g. for IPS training from known values.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.first() != Some(&1.0) {
            return Err(Error::Validation(
                "propensity values must start with exactly 1.0 at rank 1".into(),
            ));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Validation("propensity values must be positive".into()));
        }
        Ok(PropensityEstimate {
            ranks: values
                .iter()
                .enumerate()
                .map(|(i, &v)| RankEstimate {
                    rank: Rank::from_index(i),
                    estimate: Some(v),
                    ci: (i == 0).then_some((1.0, 1.0)),
                    n_scores: 0,
                })
                .collect(),
            retained_scores: Vec::new(),
            excluded_scores: Vec::new(),
            warnings: Vec::new(),
        })
    }

    /// Attaches per-rank intervals; rank 1 is always `[1, 1]`.
    pub fn with_intervals(mut self, intervals: &[Option<(f64, f64)>]) -> Self {
        for (r, ci) in self.ranks.iter_mut().zip(intervals) {
            r.ci = *ci;
        }
        if let Some(top) = self.ranks.first_mut() {
            top.ci = Some((1.0, 1.0));
        }
        self
    }
}

/// Averages per-score ratio vectors over the scores in `spec`'s range.
///
/// Rank 1 is exactly 1.0 by construction. Values above 1.0 at deeper ranks are
/// reported unclamped with a warning.
pub fn propensity_averaged(table: &ClickRateTable, spec: &EstimatorSpec) -> Result<PropensityEstimate> {
    let page = table.page_size();
    let mut sums = vec![0.0f64; page];
    let mut weights = vec![0.0f64; page];
    let mut counts = vec![0usize; page];
    let mut retained = Vec::new();
    let mut excluded = Vec::new();

    for score in spec.scores() {
        match propensity_single_score(table, score, spec.smoothing, spec.min_support) {
            Ok(r) => {
                retained.push(score.get());
                for (i, ratio) in r.ratios.iter().enumerate() {
                    if let Some(v) = ratio {
                        let w = match spec.weighting {
                            Weighting::Unweighted => 1.0,
                            Weighting::SupportWeighted => r.support[i],
                        };
                        sums[i] += w * v;
                        weights[i] += w;
                        counts[i] += 1;
                    }
                }
            }
            Err(Error::InsufficientSupport { .. }) => {
                if table.score_total(score) > 0 {
                    excluded.push(score.get());
                }
            }
            Err(e) => return Err(e),
        }
    }
    if retained.is_empty() {
        return Err(Error::EstimationImpossible {
            min_support: spec.min_support,
        });
    }

    let mut warnings = Vec::new();
    let ranks = (0..page)
        .map(|i| {
            let rank = Rank::from_index(i);
            let estimate = if i == 0 {
                Some(1.0)
            } else if counts[i] > 0 && weights[i] > 0.0 {
                let v = sums[i] / weights[i];
                if v > 1.0 {
                    warnings.push(format!("rank {rank}: estimate {v:.4} exceeds 1"));
                }
                if v == 0.0 {
                    warnings.push(format!("rank {rank}: no clicks among retained scores"));
                }
                Some(v)
            } else {
                None
            };
            RankEstimate {
                rank,
                estimate,
                ci: None,
                n_scores: counts[i],
            }
        })
        .collect();
    if !excluded.is_empty() {
        log::debug!(
            "scores {}-{}: {} excluded below min_support {}",
            spec.score_lo,
            spec.score_hi,
            excluded.len(),
            spec.min_support
        );
    }
    Ok(PropensityEstimate {
        ranks,
        retained_scores: retained,
        excluded_scores: excluded,
        warnings,
    })
}
