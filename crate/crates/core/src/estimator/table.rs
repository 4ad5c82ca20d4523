use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::types::{Impression, JudgeScore, Rank};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    pub impressions: u64,
    pub clicks: u64,
    pub bookings: u64,
}

impl CellCounts {
    /// Raw click proportion; `None` for an empty cell.
    pub fn rate(&self) -> Option<f64> {
        (self.impressions > 0).then(|| self.clicks as f64 / self.impressions as f64)
    }
}

/// Impression, click and booking counts per (judge score, rank).
///
/// Tables form a commutative monoid under [`ClickRateTable::merge`], so a log
/// can be counted in shards and combined in any order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClickRateTable {
    page_size: usize,
    cells: Vec<CellCounts>,
}

impl ClickRateTable {
    pub fn new(page_size: usize) -> Self {
        ClickRateTable {
            page_size,
            cells: vec![CellCounts::default(); JudgeScore::LEVELS * page_size],
        }
    }

    pub fn page_size(&self) -> usize {
        self.page_size
    }

    fn slot(&self, score: JudgeScore, rank: Rank) -> usize {
        usize::from(score.get()) * self.page_size + rank.index()
    }

    fn grow(&mut self, page_size: usize) {
        if page_size <= self.page_size {
            return;
        }
        let mut cells = vec![CellCounts::default(); JudgeScore::LEVELS * page_size];
        for s in 0..JudgeScore::LEVELS {
            let old = &self.cells[s * self.page_size..(s + 1) * self.page_size];
            cells[s * page_size..s * page_size + self.page_size].copy_from_slice(old);
        }
        self.cells = cells;
        self.page_size = page_size;
    }

    pub fn cell(&self, score: JudgeScore, rank: Rank) -> CellCounts {
        if rank.index() >= self.page_size {
            return CellCounts::default();
        }
        self.cells[self.slot(score, rank)]
    }

    pub fn record(&mut self, score: JudgeScore, rank: Rank, clicked: bool, booked: bool) {
        self.record_weighted(score, rank, clicked, booked, 1);
    }

    /// Adds `weight` copies of one observation.
    pub fn record_weighted(
        &mut self,
        score: JudgeScore,
        rank: Rank,
        clicked: bool,
        booked: bool,
        weight: u64,
    ) {
        self.grow(rank.index() + 1);
        let slot = self.slot(score, rank);
        let cell = &mut self.cells[slot];
        cell.impressions += weight;
        cell.clicks += weight * u64::from(clicked);
        cell.bookings += weight * u64::from(booked);
    }

    pub fn merge(&mut self, other: &ClickRateTable) {
        self.grow(other.page_size);
        for s in 0..JudgeScore::LEVELS {
            for r in 0..other.page_size {
                let theirs = other.cells[s * other.page_size + r];
                let mine = &mut self.cells[s * self.page_size + r];
                mine.impressions += theirs.impressions;
                mine.clicks += theirs.clicks;
                mine.bookings += theirs.bookings;
            }
        }
    }

    /// Total impressions for a score across all ranks.
    pub fn score_total(&self, score: JudgeScore) -> u64 {
        let s = usize::from(score.get());
        self.cells[s * self.page_size..(s + 1) * self.page_size]
            .iter()
            .map(|c| c.impressions)
            .sum()
    }

    pub fn from_log(log: &[Impression]) -> Result<Self> {
        Self::from_log_with(log, Exec::default())
    }

    /// Counts a log in parallel shards; fails listing unannotated rows.
    pub fn from_log_with(log: &[Impression], exec: Exec) -> Result<Self> {
        check_annotated(log)?;
        let page_size = log.iter().map(|imp| imp.rank.index() + 1).max().unwrap_or(0);
        let shards = exec.map_chunks(log, 1 << 16, |chunk| {
            let mut table = ClickRateTable::new(page_size);
            for imp in chunk {
                let score = imp.judge_score.expect("checked above");
                table.record(score, imp.rank, imp.clicked, imp.booked);
            }
            table
        });
        let mut table = ClickRateTable::new(page_size);
        for shard in &shards {
            table.merge(shard);
        }
        Ok(table)
    }
}

pub(crate) fn check_annotated(log: &[Impression]) -> Result<()> {
    let missing: Vec<usize> = log
        .iter()
        .enumerate()
        .filter(|(_, imp)| imp.judge_score.is_none())
        .map(|(i, _)| i)
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Unannotated {
            count: missing.len(),
            rows: missing.into_iter().take(10).collect(),
        })
    }
}

/// `(clicks + alpha) / (impressions + 2 alpha)`.
pub fn click_rate(table: &ClickRateTable, score: JudgeScore, rank: Rank, alpha: f64) -> Result<f64> {
    let cell = table.cell(score, rank);
    if cell.impressions == 0 && alpha <= 0.0 {
        return Err(Error::UndefinedCell {
            score: score.get(),
            rank: rank.get(),
        });
    }
    Ok((cell.clicks as f64 + alpha) / (cell.impressions as f64 + 2.0 * alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompactRow {
    pub score: JudgeScore,
    pub rank: Rank,
    pub clicked: bool,
    pub booked: bool,
}

/// Annotated rows grouped by query, for query-level resampling.
#[derive(Debug, Clone)]
pub struct QueryGroups {
    offsets: Vec<usize>,
    rows: Vec<CompactRow>,
}

impl QueryGroups {
    /// Groups by `query_id` in order of first appearance.
    pub fn from_log(log: &[Impression]) -> Result<Self> {
        check_annotated(log)?;
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut buckets: Vec<Vec<CompactRow>> = Vec::new();
        for imp in log {
            let next = buckets.len();
            let q = *index.entry(imp.query_id.as_str()).or_insert(next);
            if q == next {
                buckets.push(Vec::new());
            }
            buckets[q].push(CompactRow {
                score: imp.judge_score.expect("checked above"),
                rank: imp.rank,
                clicked: imp.clicked,
                booked: imp.booked,
            });
        }
        let mut offsets = Vec::with_capacity(buckets.len() + 1);
        offsets.push(0);
        let mut rows = Vec::with_capacity(log.len());
        for b in buckets {
            rows.extend(b);
            offsets.push(rows.len());
        }
        Ok(QueryGroups { offsets, rows })
    }

    pub fn num_queries(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn query(&self, q: usize) -> &[CompactRow] {
        &self.rows[self.offsets[q]..self.offsets[q + 1]]
    }

    pub fn page_size(&self) -> usize {
        self.rows.iter().map(|r| r.rank.index() + 1).max().unwrap_or(0)
    }

    /// Table with query `q` counted `multiplicity[q]` times.
    pub fn weighted_table(&self, multiplicity: &[u32]) -> ClickRateTable {
        let mut table = ClickRateTable::new(self.page_size());
        for (q, &m) in multiplicity.iter().enumerate() {
            if m == 0 {
                continue;
            }
            for row in self.query(q) {
                table.record_weighted(row.score, row.rank, row.clicked, row.booked, u64::from(m));
            }
        }
        table
    }

    pub fn table(&self) -> ClickRateTable {
        self.weighted_table(&vec![1; self.num_queries()])
    }
}
