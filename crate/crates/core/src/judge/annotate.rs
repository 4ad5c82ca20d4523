use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};
use std::thread;

use serde::{Deserialize, Serialize};

use super::{JudgeError, JudgeSource};
use crate::types::{Impression, JudgeScore};

/// Judgements keyed by [`JudgeSource::cache_key`]. Safe to share between
/// threads and across annotation batches.
#[derive(Debug, Default)]
pub struct JudgeCache {
    scores: RwLock<HashMap<String, JudgeScore>>,
}

impl JudgeCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<JudgeScore> {
        self.scores.read().unwrap().get(key).copied()
    }

    pub fn insert(&self, key: String, score: JudgeScore) {
        self.scores.write().unwrap().insert(key, score);
    }

    pub fn len(&self) -> usize {
        self.scores.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct AnnotateOptions {
    /// Re-score rows that already carry a judge score.
    pub force: bool,
    pub max_in_flight: usize,
}

impl Default for AnnotateOptions {
    fn default() -> Self {
        AnnotateOptions {
            force: false,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRow {
    pub row: usize,
    pub query_id: String,
    pub item_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSummary {
    pub rows: usize,
    /// Rows that already had a score and were left alone.
    pub kept: usize,
    pub annotated: usize,
    /// Judge invocations made by this batch.
    pub calls: usize,
    pub cache_hits: usize,
    pub failures: Vec<FailedRow>,
}

#[derive(Debug, Clone)]
pub struct Annotation {
    pub log: Vec<Impression>,
    pub summary: AnnotationSummary,
}

/// Scores every impression that lacks a judge score (or all of them with
/// `force`). Identical cache keys are judged once; at most `max_in_flight`
/// judgements run concurrently; output order equals input order. Rows whose
/// judgement fails stay unannotated and are listed in the summary.
pub fn annotate_log(
    log: &[Impression],
    source: &dyn JudgeSource,
    options: &AnnotateOptions,
    cache: &JudgeCache,
) -> Annotation {
    let mut summary = AnnotationSummary {
        rows: log.len(),
        ..Default::default()
    };

    let targets: Vec<(usize, String)> = log
        .iter()
        .enumerate()
        .filter(|(_, imp)| options.force || imp.judge_score.is_none())
        .map(|(i, imp)| (i, source.cache_key(imp)))
        .collect();
    summary.kept = log.len() - targets.len();

    let mut pending: Vec<(usize, &str)> = Vec::new();
    let mut queued = HashSet::new();
    for (row, key) in &targets {
        if cache.get(key).is_none() && queued.insert(key.as_str()) {
            pending.push((*row, key.as_str()));
        }
    }
    summary.calls = pending.len();
    summary.cache_hits = targets.len() - pending.len();

    let errors = run_pending(log, source, &pending, options.max_in_flight.max(1), cache);

    let mut out = log.to_vec();
    for (row, key) in &targets {
        match cache.get(key) {
            Some(score) => {
                out[*row].judge_score = Some(score);
                summary.annotated += 1;
            }
            None => {
                out[*row].judge_score = None;
                let error = errors
                    .get(key.as_str())
                    .map(ToString::to_string)
                    .unwrap_or_else(|| "no judgement".into());
                summary.failures.push(FailedRow {
                    row: *row,
                    query_id: log[*row].query_id.clone(),
                    item_id: log[*row].item_id.clone(),
                    error,
                });
            }
        }
    }
    if !summary.failures.is_empty() {
        log::warn!(
            "{} of {} rows could not be annotated",
            summary.failures.len(),
            summary.rows
        );
    }
    Annotation { log: out, summary }
}

fn run_pending<'k>(
    log: &[Impression],
    source: &dyn JudgeSource,
    pending: &[(usize, &'k str)],
    max_in_flight: usize,
    cache: &JudgeCache,
) -> HashMap<&'k str, JudgeError> {
    let next = AtomicUsize::new(0);
    let errors = Mutex::new(HashMap::new());
    let workers = max_in_flight.min(pending.len());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(row, key)) = pending.get(i) else {
                    break;
                };
                match source.judge(&log[row]) {
                    Ok(score) => cache.insert(key.to_string(), score),
                    Err(e) => {
                        errors.lock().unwrap().insert(key, e);
                    }
                }
            });
        }
    });
    errors.into_inner().unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::mock_server::{MockJudgeServer, MockReply};
    use crate::judge::{
        Catalog, ConstantJudge, EndpointConfig, EndpointJudge, ItemText, JudgeCalibration,
        PromptTemplate, SimulatedJudge,
    };
    use crate::types::{GridCell, Rank};

    fn row(q: usize, item: usize, rank: u16) -> Impression {
        Impression {
            query_id: format!("q{q}"),
            item_id: format!("i{item}"),
            rank: Rank::new(rank).unwrap(),
            cell: GridCell {
                row: 0,
                col: rank - 1,
            },
            judge_score: None,
            clicked: false,
            booked: false,
            true_relevance: Some(0.1 * (item % 10) as f64),
        }
    }

    fn catalog_for(log: &[Impression]) -> Catalog {
        let mut catalog = Catalog::default();
        for imp in log {
            catalog
                .queries
                .insert(imp.query_id.clone(), format!("query text {}", imp.query_id));
            catalog.items.insert(
                imp.item_id.clone(),
                ItemText {
                    title: format!("title {}", imp.item_id),
                    description: format!("description {}", imp.item_id),
                },
            );
        }
        catalog
    }

    fn endpoint(server: &MockJudgeServer, catalog: Catalog, in_flight: usize) -> EndpointJudge {
        EndpointJudge::new(
            EndpointConfig {
                base_url: server.base_url(),
                max_attempts: 1,
                backoff_ms: 1,
                max_in_flight: in_flight,
                ..Default::default()
            },
            PromptTemplate::default(),
            catalog,
        )
    }

    #[test]
    fn empty_log_makes_no_calls() {
        let server = MockJudgeServer::start(|_| MockReply::content("70"));
        let judge = endpoint(&server, Catalog::default(), 4);
        let out = annotate_log(&[], &judge, &AnnotateOptions::default(), &JudgeCache::new());
        assert!(out.log.is_empty());
        assert_eq!(out.summary.calls, 0);
        assert_eq!(server.request_count(), 0);
    }

    #[test]
    fn constant_mock_annotates_everything() {
        let log: Vec<_> = (0..3).map(|i| row(0, i, i as u16 + 1)).collect();
        let server = MockJudgeServer::start(|_| MockReply::content("70"));
        let judge = endpoint(&server, catalog_for(&log), 2);
        let out = annotate_log(&log, &judge, &AnnotateOptions::default(), &JudgeCache::new());
        assert!(out.log.iter().all(|r| r.judge_score.map(|s| s.get()) == Some(70)));
        assert_eq!(out.summary.annotated, 3);
    }

    #[test]
    fn duplicate_pairs_are_judged_once() {
        // 60 distinct (query, item) pairs, 40 of them repeated once more.
        let mut log: Vec<_> = (0..60).map(|i| row(i / 6, i, (i % 6) as u16 + 1)).collect();
        log.extend((0..40).map(|i| row(i / 6, i, (i % 6) as u16 + 1)));
        let distinct: HashSet<_> = log.iter().map(|r| (&r.query_id, &r.item_id)).collect();
        assert_eq!(log.len(), 100);
        assert_eq!(distinct.len(), 60);

        let server = MockJudgeServer::start(|_| MockReply::content("55"));
        let judge = endpoint(&server, catalog_for(&log), 4);
        let out = annotate_log(&log, &judge, &AnnotateOptions::default(), &JudgeCache::new());
        assert!(server.request_count() <= 60);
        assert_eq!(out.summary.calls, 60);
        assert_eq!(out.summary.cache_hits, 40);
        assert!(out.summary.failures.is_empty());
    }

    #[test]
    fn in_flight_limit_and_order_are_respected() {
        let log: Vec<_> = (0..24).map(|i| row(i, i, 1)).collect();
        let server = MockJudgeServer::start(|prompt| {
            // Later items reply faster, so completion order differs from input order.
            let n: u64 = prompt
                .split("query text q")
                .nth(1)
                .and_then(|s| s.split_whitespace().next())
                .and_then(|s| s.parse().ok())
                .unwrap_or(0);
            MockReply::content(n.to_string()).delayed(60u64.saturating_sub(2 * n))
        });
        let judge = endpoint(&server, catalog_for(&log), 3);
        let options = AnnotateOptions {
            force: false,
            max_in_flight: 3,
        };
        let out = annotate_log(&log, &judge, &options, &JudgeCache::new());
        assert!(server.max_in_flight() <= 3);
        let scores: Vec<u8> = out.log.iter().map(|r| r.judge_score.unwrap().get()).collect();
        assert_eq!(scores, (0..24).collect::<Vec<u8>>());
    }

    #[test]
    fn failures_are_counted_not_fatal() {
        let log: Vec<_> = (0..4).map(|i| row(0, i, i as u16 + 1)).collect();
        let server = MockJudgeServer::start(|prompt| {
            if prompt.contains("title i2") {
                MockReply::content("not a number")
            } else {
                MockReply::content("33")
            }
        });
        let judge = endpoint(&server, catalog_for(&log), 2);
        let out = annotate_log(&log, &judge, &AnnotateOptions::default(), &JudgeCache::new());
        assert_eq!(out.summary.annotated, 3);
        assert_eq!(out.summary.failures.len(), 1);
        assert_eq!(out.summary.failures[0].row, 2);
        assert!(out.log[2].judge_score.is_none());
        assert_eq!(out.log[3].judge_score.unwrap().get(), 33);
    }

    #[test]
    fn existing_scores_kept_unless_forced() {
        let mut log: Vec<_> = (0..3).map(|i| row(0, i, i as u16 + 1)).collect();
        log[1].judge_score = Some(JudgeScore::new(5).unwrap());
        let judge = ConstantJudge(JudgeScore::new(90).unwrap());
        let out = annotate_log(&log, &judge, &AnnotateOptions::default(), &JudgeCache::new());
        assert_eq!(out.summary.kept, 1);
        assert_eq!(out.log[1].judge_score.unwrap().get(), 5);
        let forced = annotate_log(
            &log,
            &judge,
            &AnnotateOptions {
                force: true,
                ..Default::default()
            },
            &JudgeCache::new(),
        );
        assert_eq!(forced.log[1].judge_score.unwrap().get(), 90);
    }

    #[test]
    fn simulated_source_is_idempotent() {
        let log: Vec<_> = (0..50).map(|i| row(i / 10, i, (i % 10) as u16 + 1)).collect();
        let judge = SimulatedJudge {
            calib: JudgeCalibration::default(),
            seed: 11,
        };
        let a = annotate_log(&log, &judge, &AnnotateOptions::default(), &JudgeCache::new());
        let b = annotate_log(&log, &judge, &AnnotateOptions::default(), &JudgeCache::new());
        assert_eq!(a.log, b.log);
        let again = annotate_log(&a.log, &judge, &AnnotateOptions { force: true, ..Default::default() }, &JudgeCache::new());
        assert_eq!(again.log, a.log);
    }
}
