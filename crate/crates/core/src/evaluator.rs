//! Ranking metrics, a BM25 baseline and percentage-delta reporting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::types::{Impression, JudgeScore, Rank};

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// `sum_{i <= min(k, n)} gains[i] / log2(i + 1)` with 1-based positions.
pub fn dcg_at_k(gains: &[f64], k: usize) -> f64 {
    compensated_sum(
        gains
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, g)| g / ((i + 2) as f64).log2()),
    )
}

/// DCG of `ranking` (indices into `labels`) over the ideal DCG; `None` when
/// every label is zero.
pub fn ndcg_at_k(ranking: &[usize], labels: &[f64], k: usize) -> Option<f64> {
    let mut ideal = labels.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let best = dcg_at_k(&ideal, k);
    if best <= 0.0 {
        return None;
    }
    let gains: Vec<f64> = ranking.iter().map(|&i| labels[i]).collect();
    Some(dcg_at_k(&gains, k) / best)
}

/// One query to evaluate: candidate labels, the ranking each method produced,
/// and the logged rank that sets the query's wNDCG weight.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInstance {
    pub query_id: String,
    pub item_ids: Vec<String>,
    pub labels: Vec<f64>,
    pub rankings: BTreeMap<String, Vec<usize>>,
    /// Deepest logged rank among booked items; `None` without a booking.
    pub logged_rank_of_booked: Option<Rank>,
    pub judge_scores: Vec<Option<JudgeScore>>,
}

impl EvalInstance {
    /// Registers the ranking induced by per-candidate `scores`.
    pub fn add_ranking(&mut self, method: &str, scores: &[f64]) -> Result<()> {
        if scores.len() != self.item_ids.len() {
            return Err(Error::Dimension {
                expected: self.item_ids.len(),
                actual: scores.len(),
            });
        }
        self.rankings
            .insert(method.to_string(), ranking_from_scores(scores, &self.item_ids));
        Ok(())
    }

    /// Judge scores as ranking scores; fails on unannotated candidates.
    pub fn judge_ranking_scores(&self) -> Result<Vec<f64>> {
        self.judge_scores
            .iter()
            .map(|s| {
                s.map(|s| f64::from(s.get())).ok_or_else(|| {
                    Error::Validation(format!("query {} has unannotated candidates", self.query_id))
                })
            })
            .collect()
    }
}

/// Indices by descending score; equal scores by ascending item id.
pub fn ranking_from_scores(scores: &[f64], item_ids: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| item_ids[a].cmp(&item_ids[b]))
    });
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Booked,
    TrueRelevance,
}

/// Groups a log into instances, one per query in first-appearance order, with
/// the logged order registered as method `logged`.
pub fn instances_from_log(log: &[Impression], labels: LabelSource) -> Result<Vec<EvalInstance>> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<Vec<&Impression>> = Vec::new();
    for imp in log {
        let next = groups.len();
        let q = *index.entry(imp.query_id.as_str()).or_insert(next);
        if q == next {
            groups.push(Vec::new());
        }
        groups[q].push(imp);
    }
    groups
        .into_iter()
        .map(|mut rows| {
            rows.sort_by_key(|imp| imp.rank);
            let labels = rows
                .iter()
                .map(|imp| match labels {
                    LabelSource::Booked => Ok(f64::from(u8::from(imp.booked))),
                    LabelSource::TrueRelevance => imp.true_relevance.ok_or_else(|| {
                        Error::Validation(format!(
                            "({}, {}) has no true relevance",
                            imp.query_id, imp.item_id
                        ))
                    }),
                })
                .collect::<Result<Vec<f64>>>()?;
            let mut rankings = BTreeMap::new();
            rankings.insert(LOGGED.to_string(), (0..rows.len()).collect());
            Ok(EvalInstance {
                query_id: rows[0].query_id.clone(),
                item_ids: rows.iter().map(|imp| imp.item_id.clone()).collect(),
                labels,
                rankings,
                logged_rank_of_booked: rows.iter().filter(|imp| imp.booked).map(|imp| imp.rank).max(),
                judge_scores: rows.iter().map(|imp| imp.judge_score).collect(),
            })
        })
        .collect()
}

/// Method name of the logging policy's own ranking.
pub const LOGGED: &str = "logged";

/// Weighted mean of per-instance values; instances without a weight are
/// excluded and counted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedMean {
    pub value: Option<f64>,
    pub included: usize,
    pub excluded: usize,
}

/// `sum w_q * v_q / sum w_q` with `w_q` the logged rank of the booked item.
pub fn wndcg(values: &[(f64, Option<Rank>)]) -> WeightedMean {
    let included: Vec<(f64, f64)> = values
        .iter()
        .filter_map(|(v, r)| r.map(|r| (*v, f64::from(r.get()))))
        .collect();
    let total = compensated_sum(included.iter().map(|(_, w)| *w));
    WeightedMean {
        value: (total > 0.0).then(|| compensated_sum(included.iter().map(|(v, w)| v * w)) / total),
        included: included.len(),
        excluded: values.len() - included.len(),
    }
}

/// wNDCG@k of one method over a set of instances.
pub fn wndcg_at_k(instances: &[EvalInstance], method: &str, k: usize) -> Result<WeightedMean> {
    let mut values = Vec::new();
    let mut skipped = 0;
    for inst in instances {
        let ranking = inst
            .rankings
            .get(method)
            .ok_or_else(|| Error::UnknownMethod(method.to_string()))?;
        match ndcg_at_k(ranking, &inst.labels, k) {
            Some(v) => values.push((v, inst.logged_rank_of_booked)),
            None => skipped += 1,
        }
    }
    let mut out = wndcg(&values);
    out.excluded += skipped;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    pub ndcg: f64,
    pub wndcg: f64,
    /// Instances contributing to NDCG.
    pub n: usize,
    /// Instances contributing to wNDCG.
    pub n_weighted: usize,
    /// Instances skipped for having no positive label.
    pub skipped: usize,
}

/// Mean NDCG@k and wNDCG@k for every method present in all instances.
pub fn evaluate(instances: &[EvalInstance], k: usize, exec: Exec) -> Result<Vec<MethodMetrics>> {
    if k == 0 {
        return Err(Error::config("k", "must be at least 1"));
    }
    let methods: Vec<String> = match instances.first() {
        Some(first) => first.rankings.keys().cloned().collect(),
        None => return Ok(Vec::new()),
    };
    for inst in instances {
        for m in &methods {
            let ranking = inst.rankings.get(m).ok_or_else(|| Error::UnknownMethod(m.clone()))?;
            check_permutation(ranking, inst.labels.len(), &inst.query_id, m)?;
        }
    }
    let per_instance: Vec<Vec<Option<f64>>> = exec.map_range(instances.len(), |q| {
        let inst = &instances[q];
        methods
            .iter()
            .map(|m| ndcg_at_k(&inst.rankings[m], &inst.labels, k))
            .collect()
    });
    Ok(methods
        .iter()
        .enumerate()
        .map(|(j, method)| {
            let scored: Vec<(f64, Option<Rank>)> = per_instance
                .iter()
                .zip(instances)
                .filter_map(|(row, inst)| row[j].map(|v| (v, inst.logged_rank_of_booked)))
                .collect();
            let weighted = wndcg(&scored);
            let n = scored.len();
            MethodMetrics {
                method: method.clone(),
                ndcg: if n == 0 { 0.0 } else { compensated_sum(scored.iter().map(|(v, _)| *v)) / n as f64 },
                wndcg: weighted.value.unwrap_or(0.0),
                n,
                n_weighted: weighted.included,
                skipped: instances.len() - n,
            }
        })
        .collect())
}

fn check_permutation(ranking: &[usize], n: usize, query: &str, method: &str) -> Result<()> {
    let mut seen = vec![false; n];
    for &i in ranking {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Validation(format!(
                "{method} ranking for {query} is not a permutation of its {n} candidates"
            )));
        }
    }
    Ok(())
}

/// Lower-cased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Okapi BM25 over a fixed corpus, with `idf = ln((N - df + 0.5) / (df + 0.5) + 1)`
/// so that terms present in every document still score positively.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    docs: Vec<HashMap<String, usize>>,
    lengths: Vec<usize>,
    df: HashMap<String, usize>,
    avg_len: f64,
}

impl Bm25Index {
    pub fn new(docs: &[Vec<String>], params: Bm25Params) -> Self {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut counts = Vec::with_capacity(docs.len());
        for doc in docs {
            let mut tf: HashMap<String, usize> = HashMap::new();
            for term in doc {
                *tf.entry(term.clone()).or_default() += 1;
            }
            for term in tf.keys() {
                *df.entry(term.clone()).or_default() += 1;
            }
            counts.push(tf);
        }
        let lengths: Vec<usize> = docs.iter().map(Vec::len).collect();
        let total: usize = lengths.iter().sum();
        let avg_len = if docs.is_empty() { 0.0 } else { total as f64 / docs.len() as f64 };
        Bm25Index {
            params,
            docs: counts,
            lengths,
            df,
            avg_len,
        }
    }

    pub fn from_texts(texts: &[&str], params: Bm25Params) -> Self {
        let docs: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
        Self::new(&docs, params)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Score of document `doc`; repeated query terms count once per occurrence.
    pub fn score(&self, query: &[String], doc: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let len = self.lengths[doc] as f64;
        let norm = if self.avg_len > 0.0 { len / self.avg_len } else { 0.0 };
        compensated_sum(query.iter().filter_map(|term| {
            let tf = *self.docs[doc].get(term)? as f64;
            Some(self.idf(term) * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm)))
        }))
    }

    pub fn scores(&self, query: &[String], docs: &[usize]) -> Vec<f64> {
        docs.iter().map(|&d| self.score(query, d)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodDelta {
    pub method: String,
    pub ndcg_pct: f64,
    pub wndcg_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub baseline: String,
    pub methods: Vec<MethodMetrics>,
    /// One entry per non-baseline method, in input order.
    pub deltas: Vec<MethodDelta>,
}

/// `100 * (m - b) / b` per metric against `baseline`.
pub fn delta_report(methods: &[MethodMetrics], baseline: &str, k: usize) -> Result<EvalReport> {
    let base = methods
        .iter()
        .find(|m| m.method == baseline)
        .ok_or_else(|| Error::UnknownMethod(baseline.to_string()))?;
    for (value, metric) in [(base.ndcg, "ndcg"), (base.wndcg, "wndcg")] {
        if value.is_nan() || value <= 0.0 {
            return Err(Error::UndefinedDelta {
                method: baseline.to_string(),
                metric,
            });
        }
    }
    let mut names = HashSet::new();
    if let Some(dup) = methods.iter().find(|m| !names.insert(m.method.as_str())) {
        return Err(Error::Validation(format!("method `{}` listed twice", dup.method)));
    }
    Ok(EvalReport {
        k,
        baseline: baseline.to_string(),
        methods: methods.to_vec(),
        deltas: methods
            .iter()
            .filter(|m| m.method != baseline)
            .map(|m| MethodDelta {
                method: m.method.clone(),
                ndcg_pct: 100.0 * (m.ndcg - base.ndcg) / base.ndcg,
                wndcg_pct: 100.0 * (m.wndcg - base.wndcg) / base.wndcg,
            })
            .collect(),
    })
}

/// Signed percentage to two decimals with a true minus sign (U+2212), e.g.
/// `−10.00%`, `+0.81%`, `0.00%`.
pub fn format_delta(pct: f64) -> String {
    let text = format!("{:.2}", pct.abs());
    if text.bytes().all(|c| c == b'0' || c == b'.') {
        return "0.00%".to_string();
    }
    let sign = if pct < 0.0 { '\u{2212}' } else { '+' };
    format!("{sign}{text}%")
}

/// `method,ndcg,wndcg,n` with four decimals.
pub fn write_report_csv<W: Write>(out: W, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "ndcg", "wndcg", "n"])?;
    for m in &report.methods {
        w.write_record([
            m.method.clone(),
            format!("{:.4}", m.ndcg),
            format!("{:.4}", m.wndcg),
            m.n.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("report csv", e))?;
    Ok(())
}

/// Plain-text table of deltas against the baseline.
pub fn render_table(report: &EvalReport) -> String {
    let h1 = format!("\u{394} NDCG@{}", report.k);
    let h2 = format!("\u{394} wNDCG@{}", report.k);
    let name_w = report
        .deltas
        .iter()
        .map(|d| d.method.chars().count())
        .chain([6])
        .max()
        .unwrap_or(6);
    let col_w = h2.chars().count().max(10);
    let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w.saturating_sub(s.chars().count())));
    let lpad = |s: &str, w: usize| format!("{}{s}", " ".repeat(w.saturating_sub(s.chars().count())));
    let mut out = String::new();
    let _ = writeln!(out, "Relative to {}", report.baseline);
    let _ = writeln!(out, "{}  {}  {}", pad("Method", name_w), lpad(&h1, col_w), lpad(&h2, col_w));
    let _ = writeln!(out, "{}", "-".repeat(name_w + 2 * col_w + 4));
    for d in &report.deltas {
        let _ = writeln!(
            out,
            "{}  {}  {}",
            pad(&d.method, name_w),
            lpad(&format_delta(d.ndcg_pct), col_w),
            lpad(&format_delta(d.wndcg_pct), col_w)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn dcg_examples() {
        assert_eq!(dcg_at_k(&[1.0, 0.0, 0.0], 3), 1.0);
        assert_abs_diff_eq!(dcg_at_k(&[0.0, 1.0], 2), 0.63093, epsilon = 1e-5);
        assert_eq!(dcg_at_k(&[0.0; 4], 4), 0.0);
        assert_eq!(dcg_at_k(&[0.0, 1.0], 1), 0.0);
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[0, 1, 2], &[1.0, 1.0, 0.0], 10), Some(1.0));
        assert_abs_diff_eq!(ndcg_at_k(&[0, 1], &[0.0, 1.0], 10).unwrap(), 0.63093, epsilon = 1e-5);
        assert_eq!(ndcg_at_k(&[0, 1], &[0.0, 0.0], 10), None);
    }

    fn rank(r: u16) -> Option<Rank> {
        Some(Rank::new(r).unwrap())
    }

    #[test]
    fn weighted_mean_examples() {
        let out = wndcg(&[(1.0, rank(1)), (0.5, rank(3))]);
        assert_eq!(out.value, Some(0.625));
        let values = [(0.2, rank(1)), (0.9, rank(1)), (0.4, rank(1)), (0.7, None)];
        let out = wndcg(&values);
        assert_abs_diff_eq!(out.value.unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!((out.included, out.excluded), (3, 1));
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let naive: f64 = [1e16, 1.0, -1e16].iter().sum();
        assert_eq!(naive, 0.0);
        assert_eq!(compensated_sum([1e16, 1.0, -1e16]), 1.0);
    }

    #[test]
    fn bm25_examples() {
        let idx = Bm25Index::from_texts(&["red shoes"], Bm25Params::default());
        assert_eq!(idx.score(&tokenize("blue hat"), 0), 0.0);
        assert_eq!(idx.score(&[], 0), 0.0);
        // N = df = 1: idf = ln(0.5 / 1.5 + 1); tf = 1 and len = avglen, so the
        // tf factor is (k1 + 1) / (1 + k1) = 1.
        let expected = (0.5f64 / 1.5 + 1.0).ln();
        assert_abs_diff_eq!(idx.score(&tokenize("red"), 0), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 0.287_682_072_451_781, epsilon = 1e-12);
    }

    #[test]
    fn bm25_duplicates_score_identically() {
        let idx = Bm25Index::from_texts(&["wine tour", "wine tour", "city walk"], Bm25Params::default());
        let q = tokenize("Wine tasting tour");
        assert_eq!(idx.score(&q, 0), idx.score(&q, 1));
        assert!(idx.score(&q, 0) > idx.score(&q, 2));
        let ids: Vec<String> = ["c", "b", "a"].map(String::from).to_vec();
        assert_eq!(ranking_from_scores(&idx.scores(&q, &[2, 1, 0]), &ids), vec![2, 1, 0]);
    }

    #[test]
    fn bm25_monotone_in_term_frequency() {
        let docs: Vec<Vec<String>> = (0..6)
            .map(|tf| {
                let mut d = vec!["boat".to_string(); tf];
                d.resize(8, "filler".to_string());
                d
            })
            .collect();
        let idx = Bm25Index::new(&docs, Bm25Params::default());
        let q = vec!["boat".to_string()];
        for d in 1..docs.len() {
            assert!(idx.score(&q, d) > idx.score(&q, d - 1));
        }
    }

    fn metrics(method: &str, ndcg: f64, wndcg: f64) -> MethodMetrics {
        MethodMetrics {
            method: method.into(),
            ndcg,
            wndcg,
            n: 10,
            n_weighted: 10,
            skipped: 0,
        }
    }

    #[test]
    fn delta_examples() {
        let r = delta_report(&[metrics("prod", 0.5, 0.5), metrics("same", 0.5, 0.5), metrics("x", 0.45, 0.5)], "prod", 10).unwrap();
        assert_eq!(format_delta(r.deltas[0].ndcg_pct), "0.00%");
        assert_eq!(format_delta(r.deltas[1].ndcg_pct), "\u{2212}10.00%");
        assert_eq!(format_delta(0.81), "+0.81%");
        assert_eq!(format_delta(-0.004), "0.00%");
        assert!(matches!(
            delta_report(&[metrics("prod", 0.0, 0.5)], "prod", 10),
            Err(Error::UndefinedDelta { metric: "ndcg", .. })
        ));
        assert!(matches!(delta_report(&[metrics("a", 0.5, 0.5)], "b", 10), Err(Error::UnknownMethod(_))));
    }

    #[test]
    fn table_fixture_strings() {
        let r = delta_report(
            &[metrics("prod", 1.0, 1.0), metrics("bm25", 0.5776, 0.9), metrics("judge", 0.7256, 1.0081)],
            "prod",
            10,
        )
        .unwrap();
        assert_eq!(format_delta(r.deltas[0].ndcg_pct), "\u{2212}42.24%");
        assert_eq!(format_delta(r.deltas[1].ndcg_pct), "\u{2212}27.44%");
        assert_eq!(format_delta(r.deltas[1].wndcg_pct), "+0.81%");
        let table = render_table(&r);
        assert!(table.contains("\u{2212}42.24%"));
        assert!(table.lines().any(|l| l.starts_with("judge") && l.contains("+0.81%")));
    }

    #[test]
    fn report_csv_has_four_decimals() {
        let r = delta_report(&[metrics("prod", 0.5, 0.25), metrics("x", 1.0 / 3.0, 0.2)], "prod", 10).unwrap();
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &r).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "method,ndcg,wndcg,n\nprod,0.5000,0.2500,10\nx,0.3333,0.2000,10\n"
        );
    }

    fn imp(q: &str, item: &str, r: u16, booked: bool) -> Impression {
        Impression {
            query_id: q.into(),
            item_id: item.into(),
            rank: Rank::new(r).unwrap(),
            cell: crate::types::GridCell { row: 0, col: r - 1 },
            judge_score: None,
            clicked: booked,
            booked,
            true_relevance: Some(if booked { 1.0 } else { 0.0 }),
        }
    }

    #[test]
    fn instances_and_evaluation() {
        let log = vec![
            imp("a", "a2", 2, true),
            imp("a", "a1", 1, false),
            imp("b", "b1", 1, false),
            imp("b", "b2", 2, true),
            imp("b", "b3", 3, true),
            imp("c", "c1", 1, false),
        ];
        let mut inst = instances_from_log(&log, LabelSource::Booked).unwrap();
        assert_eq!(inst.len(), 3);
        assert_eq!(inst[0].item_ids, vec!["a1", "a2"]);
        assert_eq!(inst[0].logged_rank_of_booked, rank(2));
        // Multiple bookings take the deepest logged rank.
        assert_eq!(inst[1].logged_rank_of_booked, rank(3));
        assert_eq!(inst[2].logged_rank_of_booked, None);
        for i in &mut inst {
            let mut rev: Vec<usize> = (0..i.labels.len()).collect();
            rev.reverse();
            i.rankings.insert("reversed".into(), rev);
        }
        let m = evaluate(&inst, 10, Exec::Sequential).unwrap();
        let logged = m.iter().find(|m| m.method == LOGGED).unwrap();
        assert_eq!((logged.n, logged.skipped, logged.n_weighted), (2, 1, 2));
        let reversed = m.iter().find(|m| m.method == "reversed").unwrap();
        assert_eq!(reversed.ndcg, 1.0);
        assert_eq!(wndcg_at_k(&inst, "reversed", 10).unwrap().value, Some(1.0));
        assert_eq!(wndcg_at_k(&inst, "reversed", 10).unwrap().excluded, 1);
        assert_eq!(m, evaluate(&inst, 10, Exec::Parallel).unwrap());
    }

    #[test]
    fn malformed_ranking_rejected() {
        let log = vec![imp("a", "a1", 1, true), imp("a", "a2", 2, false)];
        let mut inst = instances_from_log(&log, LabelSource::Booked).unwrap();
        inst[0].rankings.insert("bad".into(), vec![0, 0]);
        assert!(evaluate(&inst, 10, Exec::Sequential).is_err());
    }
}
