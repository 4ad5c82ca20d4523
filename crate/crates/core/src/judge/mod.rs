//! The judge score channel.
//!
//! A [`JudgeSource`] assigns a [`JudgeScore`] to an impression. Three sources
//! ship with the crate: [`SimulatedJudge`] draws calibrated noisy scores from
//! the simulator's true relevance, [`ConstantJudge`] is a fixed-score mock,
//! and [`EndpointJudge`] calls a chat-completion HTTP endpoint.

mod annotate;
mod endpoint;
pub mod mock_server;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{key_index, stream_rng, Stream};
use crate::types::{Impression, JudgeScore, Rank};

pub use annotate::{annotate_log, AnnotateOptions, Annotation, AnnotationSummary, JudgeCache};
pub use endpoint::{
    parse_score, Catalog, EndpointConfig, EndpointJudge, ItemText, JudgeRequest, JudgeResponse,
    PromptTemplate, DEFAULT_PROMPT, DEFAULT_TOKEN_ENV,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum JudgeError {
    #[error("judge endpoint timed out")]
    Timeout,
    #[error("judge transport error: {0}")]
    Transport(String),
    #[error("judge endpoint returned HTTP {0}")]
    Status(u16),
    #[error("malformed judge reply: {0:?}")]
    Malformed(String),
    #[error("judge score {0} outside 0..=100")]
    OutOfRange(i64),
    #[error("missing input for judge: {0}")]
    MissingInput(String),
}

impl JudgeError {
    /// Whether another attempt could plausibly succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            JudgeError::Timeout | JudgeError::Transport(_) => true,
            JudgeError::Status(code) => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

/// Monotone map from relevance probability to mean score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScoreMapping {
    /// `intercept + slope * relevance`.
    Linear { slope: f64, intercept: f64 },
    /// Linear interpolation through `(relevance, score)` knots.
    Piecewise { knots: Vec<(f64, f64)> },
}

impl Default for ScoreMapping {
    fn default() -> Self {
        ScoreMapping::Linear {
            slope: 100.0,
            intercept: 0.0,
        }
    }
}

impl ScoreMapping {
    pub fn validate(&self) -> Result<()> {
        match self {
            ScoreMapping::Linear { slope, intercept } => {
                if !(slope.is_finite() && *slope >= 0.0 && intercept.is_finite()) {
                    return Err(Error::config(
                        "calib.mapping",
                        "linear mapping needs a finite slope >= 0",
                    ));
                }
            }
            ScoreMapping::Piecewise { knots } => {
                if knots.len() < 2 {
                    return Err(Error::config("calib.mapping", "need at least two knots"));
                }
                for w in knots.windows(2) {
                    if !(w[1].0 > w[0].0 && w[1].1 >= w[0].1) {
                        return Err(Error::config(
                            "calib.mapping",
                            "knots must increase in relevance and be non-decreasing in score",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, relevance: f64) -> f64 {
        match self {
            ScoreMapping::Linear { slope, intercept } => intercept + slope * relevance,
            ScoreMapping::Piecewise { knots } => {
                let (first, last) = (knots[0], knots[knots.len() - 1]);
                if relevance <= first.0 {
                    return first.1;
                }
                if relevance >= last.0 {
                    return last.1;
                }
                let i = knots.partition_point(|k| k.0 <= relevance);
                let (a, b) = (knots[i - 1], knots[i]);
                a.1 + (b.1 - a.1) * (relevance - a.0) / (b.0 - a.0)
            }
        }
    }
}

/// How the simulated judge turns relevance into a score.
///
/// `position_leak` adds `leak * (rank - 1)` score points; zero keeps the score
/// a function of relevance and noise only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeCalibration {
    pub mapping: ScoreMapping,
    pub noise_sd: f64,
    pub position_leak: f64,
}

impl Default for JudgeCalibration {
    fn default() -> Self {
        JudgeCalibration {
            mapping: ScoreMapping::default(),
            noise_sd: 8.0,
            position_leak: 0.0,
        }
    }
}

impl JudgeCalibration {
    pub fn validate(&self) -> Result<()> {
        self.mapping.validate()?;
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::config("calib.noise_sd", "must be finite and >= 0"));
        }
        if !(self.position_leak >= 0.0 && self.position_leak.is_finite()) {
            return Err(Error::config("calib.position_leak", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// `clamp(round(mapping(rel) + noise + leak * (rank - 1)), 0, 100)`.
///
/// Always consumes exactly one standard-normal draw, even with zero noise.
pub fn simulate_score<R: Rng + ?Sized>(
    relevance: f64,
    rank: Rank,
    calib: &JudgeCalibration,
    rng: &mut R,
) -> JudgeScore {
    let z: f64 = rng.sample(StandardNormal);
    let raw = calib.mapping.apply(relevance)
        + calib.noise_sd * z
        + calib.position_leak * f64::from(rank.get() - 1);
    let clamped = raw.round().clamp(0.0, f64::from(JudgeScore::MAX));
    JudgeScore::new(clamped as u8).expect("clamped into range")
}

/// Something that can score an impression.
pub trait JudgeSource: Sync {
    /// Impressions with equal keys share one judgement.
    fn cache_key(&self, imp: &Impression) -> String;

    fn judge(&self, imp: &Impression) -> Result<JudgeScore, JudgeError>;
}

/// Calibrated noisy judge driven by `true_relevance`. Each
/// `(query_id, item_id)` pair gets its own random stream, so annotation is
/// idempotent and order-independent.
#[derive(Debug, Clone)]
pub struct SimulatedJudge {
    pub calib: JudgeCalibration,
    pub seed: u64,
}

impl JudgeSource for SimulatedJudge {
    fn cache_key(&self, imp: &Impression) -> String {
        format!("{}\u{1f}{}\u{1f}{}", imp.query_id, imp.item_id, imp.rank)
    }

    fn judge(&self, imp: &Impression) -> Result<JudgeScore, JudgeError> {
        let rel = imp.true_relevance.ok_or_else(|| {
            JudgeError::MissingInput(format!(
                "{}/{} has no true_relevance for the simulated judge",
                imp.query_id, imp.item_id
            ))
        })?;
        let mut rng = stream_rng(
            self.seed,
            Stream::Scores,
            key_index(&[&imp.query_id, &imp.item_id]),
        );
        Ok(simulate_score(rel, imp.rank, &self.calib, &mut rng))
    }
}

/// Returns the same score for everything.
#[derive(Debug, Clone, Copy)]
pub struct ConstantJudge(pub JudgeScore);

impl JudgeSource for ConstantJudge {
    fn cache_key(&self, imp: &Impression) -> String {
        format!("{}\u{1f}{}", imp.query_id, imp.item_id)
    }

    fn judge(&self, _imp: &Impression) -> Result<JudgeScore, JudgeError> {
        Ok(self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand::SeedableRng;

    fn rank(v: u16) -> Rank {
        Rank::new(v).unwrap()
    }

    fn noiseless(leak: f64) -> JudgeCalibration {
        JudgeCalibration {
            mapping: ScoreMapping::default(),
            noise_sd: 0.0,
            position_leak: leak,
        }
    }

    #[test]
    fn simulate_score_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(simulate_score(1.0, rank(1), &noiseless(0.0), &mut rng).get(), 100);
        assert_eq!(simulate_score(0.5, rank(1), &noiseless(0.0), &mut rng).get(), 50);
        assert_eq!(simulate_score(0.5, rank(6), &noiseless(2.0), &mut rng).get(), 60);
        assert_eq!(simulate_score(0.9, rank(12), &noiseless(4.0), &mut rng).get(), 100);
    }

    #[test]
    fn piecewise_mapping_interpolates_and_clamps() {
        let m = ScoreMapping::Piecewise {
            knots: vec![(0.0, 10.0), (0.5, 40.0), (1.0, 90.0)],
        };
        m.validate().unwrap();
        assert_eq!(m.apply(-1.0), 10.0);
        assert_eq!(m.apply(0.25), 25.0);
        assert_eq!(m.apply(0.75), 65.0);
        assert_eq!(m.apply(2.0), 90.0);
        let bad = ScoreMapping::Piecewise {
            knots: vec![(0.0, 50.0), (1.0, 40.0)],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn calibration_validation() {
        assert!(JudgeCalibration::default().validate().is_ok());
        let neg = JudgeCalibration {
            noise_sd: -1.0,
            ..Default::default()
        };
        assert!(neg.validate().is_err());
    }

    /// With no leak, the score distribution at fixed relevance must not depend
    /// on rank: chi-square homogeneity test across ranks 1 and 12.
    #[test]
    fn no_leak_score_distribution_independent_of_rank() {
        let calib = JudgeCalibration::default();
        let n = 100_000;
        let mut counts = vec![[0u64; 2]; JudgeScore::LEVELS];
        for (col, r) in [(0usize, 1u16), (1, 12)] {
            let mut rng = stream_rng(99, Stream::Scores, u64::from(r));
            for _ in 0..n {
                let s = simulate_score(0.6, rank(r), &calib, &mut rng);
                counts[usize::from(s.get())][col] += 1;
            }
        }
        // Pool sparse tail cells so expected counts stay >= 5.
        let mut pooled: Vec<[u64; 2]> = Vec::new();
        let mut acc = [0u64; 2];
        for c in counts {
            acc[0] += c[0];
            acc[1] += c[1];
            if acc[0] + acc[1] >= 20 {
                pooled.push(acc);
                acc = [0, 0];
            }
        }
        if let Some(last) = pooled.last_mut() {
            last[0] += acc[0];
            last[1] += acc[1];
        }
        let total = 2.0 * n as f64;
        let mut chi2 = 0.0;
        for c in &pooled {
            let row = (c[0] + c[1]) as f64;
            for &obs in c {
                let expected = row * n as f64 / total;
                chi2 += (obs as f64 - expected).powi(2) / expected;
            }
        }
        let dof = (pooled.len() - 1) as f64;
        // Wilson-Hilferty upper 1% point of chi-square(dof).
        let z = 2.326_347_874;
        let h = 2.0 / (9.0 * dof);
        let critical = dof * (1.0 - h + z * h.sqrt()).powi(3);
        assert!(chi2 < critical, "chi2 {chi2} >= {critical} (dof {dof})");
    }

    #[test]
    fn leak_shifts_mean_linearly() {
        let calib = JudgeCalibration {
            position_leak: 1.5,
            ..Default::default()
        };
        let n = 100_000;
        let mean_at = |r: u16| {
            let mut rng = stream_rng(5, Stream::Scores, u64::from(r));
            (0..n)
                .map(|_| f64::from(simulate_score(0.5, rank(r), &calib, &mut rng).get()))
                .sum::<f64>()
                / n as f64
        };
        let base = mean_at(1);
        let deep = mean_at(9);
        let tolerance = 3.0 * calib.noise_sd / (n as f64).sqrt() * 2f64.sqrt();
        assert!((deep - base - 1.5 * 8.0).abs() < tolerance, "{deep} - {base}");
    }

    #[test]
    fn simulated_judge_requires_relevance_and_is_deterministic() {
        let judge = SimulatedJudge {
            calib: JudgeCalibration::default(),
            seed: 3,
        };
        let mut imp = Impression {
            query_id: "q".into(),
            item_id: "i".into(),
            rank: rank(2),
            cell: crate::types::GridCell { row: 0, col: 1 },
            judge_score: None,
            clicked: false,
            booked: false,
            true_relevance: None,
        };
        assert!(matches!(judge.judge(&imp), Err(JudgeError::MissingInput(_))));
        imp.true_relevance = Some(0.7);
        assert_eq!(judge.judge(&imp).unwrap(), judge.judge(&imp).unwrap());
    }
}
