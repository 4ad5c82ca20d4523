//! Synthetic impression logs under the position-based model.
//!
//! Each query draws a candidate pool with true relevances, a noisy logging
//! policy ranks the pool, the top `page_size` candidates are displayed, and
//! every displayed item gets a judge score, a click and possibly a booking.
//! All randomness is drawn from per-query named streams (see [`crate::rng`]),
//! so the output is a pure function of the config.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::click_model::{click_probability, sample_click, PropensitySurface, SurfaceSpec};
use crate::error::{Error, Result};
use crate::estimator::ClickRateTable;
use crate::exec::Exec;
use crate::judge::{simulate_score, JudgeCalibration};
use crate::ltr::FeatureTable;
use crate::rng::{stream_rng, Stream};
use crate::types::{GridLayout, Impression, Rank};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RelevancePrior {
    Uniform { lo: f64, hi: f64 },
    Beta { alpha: f64, beta: f64 },
}

impl Default for RelevancePrior {
    fn default() -> Self {
        RelevancePrior::Uniform { lo: 0.0, hi: 1.0 }
    }
}

impl RelevancePrior {
    fn validate(&self) -> Result<()> {
        match *self {
            RelevancePrior::Uniform { lo, hi } => {
                if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                    return Err(Error::config(
                        "relevance_prior",
                        "uniform bounds must satisfy 0 <= lo <= hi <= 1",
                    ));
                }
            }
            RelevancePrior::Beta { alpha, beta } => {
                if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
                    return Err(Error::config(
                        "relevance_prior",
                        "beta parameters must be positive",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Booking probability given a click, as a function of relevance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BookingSpec {
    /// `scale * relevance`.
    Linear { scale: f64 },
    Constant { probability: f64 },
}

impl Default for BookingSpec {
    fn default() -> Self {
        BookingSpec::Linear { scale: 0.5 }
    }
}

impl BookingSpec {
    fn validate(&self) -> Result<()> {
        let (field, v) = match *self {
            BookingSpec::Linear { scale } => ("booking.scale", scale),
            BookingSpec::Constant { probability } => ("booking.probability", probability),
        };
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::config(field, "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn rate(&self, relevance: f64) -> f64 {
        match *self {
            BookingSpec::Linear { scale } => scale * relevance,
            BookingSpec::Constant { probability } => probability,
        }
    }
}

/// Ranker features emitted alongside the log.
///
/// Each entry of `relevance_noise_sd` adds one noisy view of relevance;
/// `policy_signal` adds the non-relevance part of the logging policy's score
/// (a feature the production ranker used, correlated with position but not
/// with relevance); `distractors` adds pure-noise columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSpec {
    pub relevance_noise_sd: Vec<f64>,
    pub policy_signal: bool,
    pub distractors: usize,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            relevance_noise_sd: vec![0.15, 0.3],
            policy_signal: true,
            distractors: 1,
        }
    }
}

impl FeatureSpec {
    pub fn none() -> Self {
        FeatureSpec {
            relevance_noise_sd: Vec::new(),
            policy_signal: false,
            distractors: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.relevance_noise_sd.len() + usize::from(self.policy_signal) + self.distractors
    }
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub num_queries: usize,
    pub items_per_query: usize,
    #[serde(default)]
    pub layout: GridLayout,
    pub surface: SurfaceSpec,
    #[serde(default)]
    pub relevance_prior: RelevancePrior,
    pub policy_noise_sd: f64,
    #[serde(default)]
    pub booking: BookingSpec,
    #[serde(default)]
    pub calib: JudgeCalibration,
    #[serde(default)]
    pub features: FeatureSpec,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            num_queries: 10_000,
            items_per_query: 24,
            layout: GridLayout::default(),
            surface: SurfaceSpec::Exponential { gamma: 1.0 },
            relevance_prior: RelevancePrior::default(),
            policy_noise_sd: 0.3,
            booking: BookingSpec::default(),
            calib: JudgeCalibration::default(),
            features: FeatureSpec::default(),
            seed: default_seed(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        if self.items_per_query < self.layout.page_size() {
            return Err(Error::config(
                "items_per_query",
                format!(
                    "{} is smaller than the page size {}",
                    self.items_per_query,
                    self.layout.page_size()
                ),
            ));
        }
        if !(self.policy_noise_sd >= 0.0 && self.policy_noise_sd.is_finite()) {
            return Err(Error::config("policy_noise_sd", "must be finite and >= 0"));
        }
        self.relevance_prior.validate()?;
        self.booking.validate()?;
        self.calib.validate()?;
        if self
            .features
            .relevance_noise_sd
            .iter()
            .any(|sd| !(*sd >= 0.0 && sd.is_finite()))
        {
            return Err(Error::config("features.relevance_noise_sd", "must be finite and >= 0"));
        }
        self.surface.build(&self.layout)?;
        Ok(())
    }

    pub fn surface(&self) -> Result<PropensitySurface> {
        self.surface.build(&self.layout)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical))
    }
}

/// The displayed rows of one query plus their feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryLog {
    pub impressions: Vec<Impression>,
    pub features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SimulatedLog {
    pub impressions: Vec<Impression>,
    pub features: FeatureTable,
    pub surface: PropensitySurface,
}

/// Validated config plus the surface it implies.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SimConfig,
    surface: PropensitySurface,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let surface = config.surface()?;
        Ok(Simulator { config, surface })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn surface(&self) -> &PropensitySurface {
        &self.surface
    }

    pub fn query_id(q: usize) -> String {
        format!("q{q:07}")
    }

    /// Simulates query number `q`; independent of every other query.
    pub fn query(&self, q: usize) -> QueryLog {
        let cfg = &self.config;
        let seed = cfg.seed;
        let index = q as u64;
        let n = cfg.items_per_query;

        let mut rng = stream_rng(seed, Stream::Relevance, index);
        let relevance: Vec<f64> = match cfg.relevance_prior {
            RelevancePrior::Uniform { lo, hi } => {
                (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
            }
            RelevancePrior::Beta { alpha, beta } => {
                let dist = Beta::new(alpha, beta).expect("validated");
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
        };

        let mut rng = stream_rng(seed, Stream::Policy, index);
        let policy_noise: Vec<f64> = (0..n)
            .map(|_| cfg.policy_noise_sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        // Descending policy score; candidate index breaks exact ties.
        order.sort_by(|&a, &b| {
            let (sa, sb) = (relevance[a] + policy_noise[a], relevance[b] + policy_noise[b]);
            sb.total_cmp(&sa).then(a.cmp(&b))
        });
        order.truncate(cfg.layout.page_size());

        let mut score_rng = stream_rng(seed, Stream::Scores, index);
        let mut click_rng = stream_rng(seed, Stream::Clicks, index);
        let mut booking_rng = stream_rng(seed, Stream::Bookings, index);
        let mut feature_rng = stream_rng(seed, Stream::Features, index);
        let query_id = Self::query_id(q);

        let mut impressions = Vec::with_capacity(order.len());
        let mut features = Vec::with_capacity(order.len());
        for (slot, &candidate) in order.iter().enumerate() {
            let rank = Rank::from_index(slot);
            let rel = relevance[candidate];
            let score = simulate_score(rel, rank, &cfg.calib, &mut score_rng);
            let p_click = click_probability(rel, &self.surface, rank).expect("rank within page");
            let clicked = sample_click(p_click, &mut click_rng);
            // Drawn unconditionally so the booking stream stays aligned.
            let book_draw: f64 = booking_rng.random();
            let booked = clicked && book_draw < cfg.booking.rate(rel);

            let mut fv = Vec::with_capacity(cfg.features.dim());
            for sd in &cfg.features.relevance_noise_sd {
                fv.push(rel + sd * feature_rng.sample::<f64, _>(StandardNormal));
            }
            if cfg.features.policy_signal {
                fv.push(policy_noise[candidate]);
            }
            for _ in 0..cfg.features.distractors {
                fv.push(feature_rng.sample::<f64, _>(StandardNormal));
            }
            features.push(fv);

            impressions.push(Impression {
                query_id: query_id.clone(),
                item_id: format!("{query_id}-i{candidate:03}"),
                rank,
                cell: cfg.layout.rank_to_cell(rank).expect("rank within page"),
                judge_score: Some(score),
                clicked,
                booked,
                true_relevance: Some(rel),
            });
        }
        QueryLog {
            impressions,
            features,
        }
    }

    pub fn run(&self, exec: Exec) -> SimulatedLog {
        let per_query = exec.map_range(self.config.num_queries, |q| self.query(q));
        let rows = self.config.num_queries * self.config.layout.page_size();
        let mut impressions = Vec::with_capacity(rows);
        let mut features = FeatureTable::new(self.config.features.dim());
        for log in per_query {
            for (imp, fv) in log.impressions.iter().zip(log.features) {
                features
                    .insert(&imp.query_id, &imp.item_id, fv)
                    .expect("consistent feature dimension");
            }
            impressions.extend(log.impressions);
        }
        SimulatedLog {
            impressions,
            features,
            surface: self.surface.clone(),
        }
    }
}

/// Runs the whole simulation; rows are ordered by query, then rank.
pub fn simulate(config: &SimConfig) -> Result<SimulatedLog> {
    simulate_with(config, Exec::default())
}

pub fn simulate_with(config: &SimConfig, exec: Exec) -> Result<SimulatedLog> {
    Ok(Simulator::new(config.clone())?.run(exec))
}

/// Counts and clicks per (score, rank) cell.
pub fn empirical_click_rates(log: &[Impression]) -> Result<ClickRateTable> {
    ClickRateTable::from_log(log)
}
