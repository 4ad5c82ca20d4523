//! Shared domain vocabulary: ranks, grid cells, judge scores, score buckets
//! and the impression record that every other module consumes.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1-based list position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub struct Rank(u16);

impl Rank {
    pub const TOP: Rank = Rank(1);

    pub fn new(value: u16) -> Result<Self> {
        if value == 0 {
            return Err(Error::Range {
                what: "rank",
                value: 0,
                bound: "ranks are 1-based".into(),
            });
        }
        Ok(Rank(value))
    }

    pub fn get(self) -> u16 {
        self.0
    }

    /// Zero-based offset, for indexing rank-ordered vectors.
    pub fn index(self) -> usize {
        usize::from(self.0) - 1
    }

    pub fn from_index(index: usize) -> Self {
        Rank(u16::try_from(index + 1).expect("rank index overflows u16"))
    }
}

impl TryFrom<u16> for Rank {
    type Error = Error;
    fn try_from(value: u16) -> Result<Self> {
        Rank::new(value)
    }
}

impl From<Rank> for u16 {
    fn from(rank: Rank) -> u16 {
        rank.0
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Zero-based grid coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridCell {
    pub row: u16,
    pub col: u16,
}

/// Row-major result grid. `columns * rows` is the page size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub columns: u16,
    pub rows: u16,
}

impl Default for GridLayout {
    /// Four columns by three rows.
    fn default() -> Self {
        GridLayout {
            columns: 4,
            rows: 3,
        }
    }
}

impl GridLayout {
    pub fn new(columns: u16, rows: u16) -> Result<Self> {
        let layout = GridLayout { columns, rows };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns == 0 {
            return Err(Error::config("layout.columns", "must be positive"));
        }
        if self.rows == 0 {
            return Err(Error::config("layout.rows", "must be positive"));
        }
        if u32::from(self.columns) * u32::from(self.rows) > u32::from(u16::MAX) {
            return Err(Error::config("layout", "page size exceeds 65535"));
        }
        Ok(())
    }

    pub fn page_size(&self) -> usize {
        usize::from(self.columns) * usize::from(self.rows)
    }

    pub fn ranks(&self) -> impl Iterator<Item = Rank> {
        (0..self.page_size()).map(Rank::from_index)
    }

    pub fn rank_to_cell(&self, rank: Rank) -> Result<GridCell> {
        let offset = rank.index();
        if offset >= self.page_size() {
            return Err(Error::Range {
                what: "rank",
                value: i64::from(rank.get()),
                bound: format!("layout {}x{} holds {} slots", self.columns, self.rows, self.page_size()),
            });
        }
        let columns = usize::from(self.columns);
        Ok(GridCell {
            row: (offset / columns) as u16,
            col: (offset % columns) as u16,
        })
    }

    pub fn cell_to_rank(&self, cell: GridCell) -> Result<Rank> {
        if cell.row >= self.rows || cell.col >= self.columns {
            return Err(Error::Layout(format!(
                "cell ({}, {}) outside {}x{} grid",
                cell.row, cell.col, self.columns, self.rows
            )));
        }
        Ok(Rank::from_index(
            usize::from(cell.row) * usize::from(self.columns) + usize::from(cell.col),
        ))
    }
}

/// Judge relevance score on the integer scale 0..=100.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct JudgeScore(u8);

impl JudgeScore {
    pub const MAX: u8 = 100;
    /// Number of distinct scores on the scale.
    pub const LEVELS: usize = 101;

    pub fn new(value: u8) -> Result<Self> {
        if value > Self::MAX {
            return Err(Error::Range {
                what: "judge score",
                value: i64::from(value),
                bound: "0..=100".into(),
            });
        }
        Ok(JudgeScore(value))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = JudgeScore> {
        (0..=Self::MAX).map(JudgeScore)
    }
}

impl TryFrom<u8> for JudgeScore {
    type Error = Error;
    fn try_from(value: u8) -> Result<Self> {
        JudgeScore::new(value)
    }
}

impl From<JudgeScore> for u8 {
    fn from(score: JudgeScore) -> u8 {
        score.0
    }
}

impl fmt::Display for JudgeScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Inclusive judge-score range with a display label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreBucket {
    pub label: String,
    pub lo: u8,
    pub hi: u8,
}

impl ScoreBucket {
    pub fn new(label: impl Into<String>, lo: u8, hi: u8) -> Result<Self> {
        if lo > hi || hi > JudgeScore::MAX {
            return Err(Error::config(
                "buckets",
                format!("invalid bucket bounds {lo}-{hi}"),
            ));
        }
        Ok(ScoreBucket {
            label: label.into(),
            lo,
            hi,
        })
    }

    pub fn contains(&self, score: JudgeScore) -> bool {
        (self.lo..=self.hi).contains(&score.get())
    }

    fn overlaps(&self, other: &ScoreBucket) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    /// Excellent (81-100), Good (61-80), Fair (41-60). Scores below 41 fall
    /// outside every bucket.
    pub fn standard_set() -> Vec<ScoreBucket> {
        vec![
            ScoreBucket::new("Excellent", 81, 100).unwrap(),
            ScoreBucket::new("Good", 61, 80).unwrap(),
            ScoreBucket::new("Fair", 41, 60).unwrap(),
        ]
    }

    /// Parses `"81-100,61-80,41-60"` or `"Excellent=81-100,..."`. Unlabelled
    /// ranges that coincide with a standard bucket take its name.
    pub fn parse_list(spec: &str) -> Result<Vec<ScoreBucket>> {
        let standard = Self::standard_set();
        let mut out = Vec::new();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (label, range) = match part.split_once('=') {
                Some((l, r)) => (Some(l.trim().to_string()), r.trim()),
                None => (None, part),
            };
            let (lo, hi) = range
                .split_once('-')
                .ok_or_else(|| Error::config("buckets", format!("`{part}` is not lo-hi")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<u8>()
                    .map_err(|_| Error::config("buckets", format!("`{s}` is not a score")))
            };
            let (lo, hi) = (parse(lo)?, parse(hi)?);
            let label = label.unwrap_or_else(|| {
                standard
                    .iter()
                    .find(|b| b.lo == lo && b.hi == hi)
                    .map(|b| b.label.clone())
                    .unwrap_or_else(|| format!("{lo}-{hi}"))
            });
            out.push(ScoreBucket::new(label, lo, hi)?);
        }
        check_disjoint(&out)?;
        Ok(out)
    }
}

pub fn check_disjoint(buckets: &[ScoreBucket]) -> Result<()> {
    for (i, a) in buckets.iter().enumerate() {
        for b in &buckets[i + 1..] {
            if a.overlaps(b) {
                return Err(Error::config(
                    "buckets",
                    format!("`{}` ({}-{}) overlaps `{}` ({}-{})", a.label, a.lo, a.hi, b.label, b.lo, b.hi),
                ));
            }
        }
    }
    Ok(())
}

/// The unique bucket holding `score`, or `None` when no bucket covers it.
pub fn bucket_of(score: JudgeScore, buckets: &[ScoreBucket]) -> Result<Option<&ScoreBucket>> {
    check_disjoint(buckets)?;
    Ok(buckets.iter().find(|b| b.contains(score)))
}

/// One logged (query, item, rank) display with its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ImpressionRecord", into = "ImpressionRecord")]
pub struct Impression {
    pub query_id: String,
    pub item_id: String,
    pub rank: Rank,
    pub cell: GridCell,
    pub judge_score: Option<JudgeScore>,
    pub clicked: bool,
    pub booked: bool,
    /// Only present in simulated logs.
    pub true_relevance: Option<f64>,
}

/// Flat JSONL wire form; field order is the on-disk order.
#[derive(Serialize, Deserialize)]
struct ImpressionRecord {
    query_id: String,
    item_id: String,
    rank: u16,
    row: u16,
    col: u16,
    judge_score: Option<u8>,
    clicked: bool,
    booked: bool,
    true_relevance: Option<f64>,
}

impl From<Impression> for ImpressionRecord {
    fn from(imp: Impression) -> Self {
        ImpressionRecord {
            query_id: imp.query_id,
            item_id: imp.item_id,
            rank: imp.rank.get(),
            row: imp.cell.row,
            col: imp.cell.col,
            judge_score: imp.judge_score.map(JudgeScore::get),
            clicked: imp.clicked,
            booked: imp.booked,
            true_relevance: imp.true_relevance,
        }
    }
}

impl TryFrom<ImpressionRecord> for Impression {
    type Error = Error;

    fn try_from(rec: ImpressionRecord) -> Result<Self> {
        let imp = Impression {
            query_id: rec.query_id,
            item_id: rec.item_id,
            rank: Rank::new(rec.rank)?,
            cell: GridCell {
                row: rec.row,
                col: rec.col,
            },
            judge_score: rec.judge_score.map(JudgeScore::new).transpose()?,
            clicked: rec.clicked,
            booked: rec.booked,
            true_relevance: rec.true_relevance,
        };
        imp.validate()?;
        Ok(imp)
    }
}

impl Impression {
    /// Record-local schema checks (layout consistency is checked by [`validate_log`]).
    pub fn validate(&self) -> Result<()> {
        if self.booked && !self.clicked {
            return Err(Error::Validation(format!(
                "{}/{}: booked without click",
                self.query_id, self.item_id
            )));
        }
        if let Some(rel) = self.true_relevance {
            if !(0.0..=1.0).contains(&rel) {
                return Err(Error::Validation(format!(
                    "{}/{}: true_relevance {rel} outside [0, 1]",
                    self.query_id, self.item_id
                )));
            }
        }
        Ok(())
    }
}

/// Checks every record, cell/rank consistency under `layout`, and rank
/// uniqueness within each query.
pub fn validate_log(log: &[Impression], layout: &GridLayout) -> Result<()> {
    let mut seen = HashSet::new();
    for (i, imp) in log.iter().enumerate() {
        imp.validate()?;
        let cell = layout.rank_to_cell(imp.rank)?;
        if cell != imp.cell {
            return Err(Error::Validation(format!(
                "row {i}: rank {} maps to ({}, {}) but record says ({}, {})",
                imp.rank, cell.row, cell.col, imp.cell.row, imp.cell.col
            )));
        }
        if !seen.insert((imp.query_id.as_str(), imp.rank)) {
            return Err(Error::Validation(format!(
                "row {i}: query {} repeats rank {}",
                imp.query_id, imp.rank
            )));
        }
    }
    Ok(())
}

/// Recovers the grid layout implied by the `(rank, row, col)` triples of a log.
pub fn infer_layout(log: &[Impression]) -> Result<GridLayout> {
    let mut columns = 0u16;
    let mut rows = 0u16;
    for imp in log {
        columns = columns.max(imp.cell.col + 1);
        rows = rows.max(imp.cell.row + 1);
    }
    if log.is_empty() {
        return Err(Error::Layout("cannot infer a layout from an empty log".into()));
    }
    let layout = GridLayout::new(columns, rows)?;
    validate_log(log, &layout)?;
    Ok(layout)
}

pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, rows: &[T]) -> Result<()> {
    for row in rows {
        serde_json::to_writer(&mut out, row).map_err(|source| Error::Json {
            context: "serializing record".into(),
            source,
        })?;
        out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    out.flush().map_err(|e| Error::io("<jsonl>", e))
}

pub fn read_jsonl<R: BufRead, T: for<'de> Deserialize<'de>>(input: R) -> Result<Vec<T>> {
    let mut rows = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|source| Error::Json {
            context: format!("line {}", n + 1),
            source,
        })?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rank(v: u16) -> Rank {
        Rank::new(v).unwrap()
    }

    #[test]
    fn rank_to_cell_examples() {
        let grid = GridLayout::new(4, 3).unwrap();
        assert_eq!(grid.rank_to_cell(rank(1)).unwrap(), GridCell { row: 0, col: 0 });
        assert_eq!(grid.rank_to_cell(rank(5)).unwrap(), GridCell { row: 1, col: 0 });
        assert_eq!(grid.rank_to_cell(rank(12)).unwrap(), GridCell { row: 2, col: 3 });
        assert!(matches!(grid.rank_to_cell(rank(13)), Err(Error::Range { .. })));
    }

    #[test]
    fn rank_zero_rejected() {
        assert!(Rank::new(0).is_err());
        assert!(serde_json::from_str::<Rank>("0").is_err());
    }

    #[test]
    fn judge_score_bounds() {
        assert!(JudgeScore::new(100).is_ok());
        assert!(JudgeScore::new(101).is_err());
    }

    #[test]
    fn bucket_of_standard_set() {
        let buckets = ScoreBucket::standard_set();
        let label = |s| {
            bucket_of(JudgeScore::new(s).unwrap(), &buckets)
                .unwrap()
                .map(|b| b.label.clone())
        };
        assert_eq!(label(81).as_deref(), Some("Excellent"));
        assert_eq!(label(60).as_deref(), Some("Fair"));
        assert_eq!(label(12), None);
    }

    #[test]
    fn overlapping_buckets_rejected() {
        let buckets = vec![
            ScoreBucket::new("a", 10, 50).unwrap(),
            ScoreBucket::new("b", 50, 60).unwrap(),
        ];
        assert!(matches!(
            bucket_of(JudgeScore::new(55).unwrap(), &buckets),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn parse_bucket_list() {
        let parsed = ScoreBucket::parse_list("81-100,61-80,41-60").unwrap();
        assert_eq!(parsed, ScoreBucket::standard_set());
        let custom = ScoreBucket::parse_list("low=0-40").unwrap();
        assert_eq!(custom[0].label, "low");
        assert!(ScoreBucket::parse_list("0-50,40-60").is_err());
        assert!(ScoreBucket::parse_list("60-40").is_err());
    }

    #[test]
    fn impression_wire_format() {
        let imp = Impression {
            query_id: "q1".into(),
            item_id: "i9".into(),
            rank: rank(6),
            cell: GridCell { row: 1, col: 1 },
            judge_score: None,
            clicked: true,
            booked: false,
            true_relevance: Some(0.25),
        };
        let text = serde_json::to_string(&imp).unwrap();
        assert_eq!(
            text,
            r#"{"query_id":"q1","item_id":"i9","rank":6,"row":1,"col":1,"judge_score":null,"clicked":true,"booked":false,"true_relevance":0.25}"#
        );
        let back: Impression = serde_json::from_str(&text).unwrap();
        assert_eq!(back, imp);
    }

    #[test]
    fn booked_without_click_rejected() {
        let text = r#"{"query_id":"q","item_id":"i","rank":1,"row":0,"col":0,"judge_score":5,"clicked":false,"booked":true,"true_relevance":null}"#;
        assert!(serde_json::from_str::<Impression>(text).is_err());
    }

    #[test]
    fn validate_log_catches_inconsistent_cell_and_duplicate_rank() {
        let grid = GridLayout::new(4, 3).unwrap();
        let mut imp = Impression {
            query_id: "q".into(),
            item_id: "a".into(),
            rank: rank(5),
            cell: GridCell { row: 1, col: 0 },
            judge_score: None,
            clicked: false,
            booked: false,
            true_relevance: None,
        };
        assert!(validate_log(std::slice::from_ref(&imp), &grid).is_ok());
        let dup = vec![imp.clone(), Impression { item_id: "b".into(), ..imp.clone() }];
        assert!(validate_log(&dup, &grid).is_err());
        imp.cell = GridCell { row: 0, col: 1 };
        assert!(validate_log(&[imp], &grid).is_err());
    }

    proptest! {
        #[test]
        fn rank_cell_round_trip(columns in 1u16..12, rows in 1u16..12, pick in 0usize..1000) {
            let grid = GridLayout::new(columns, rows).unwrap();
            let r = Rank::from_index(pick % grid.page_size());
            let cell = grid.rank_to_cell(r).unwrap();
            prop_assert!(cell.row < rows && cell.col < columns);
            prop_assert_eq!(grid.cell_to_rank(cell).unwrap(), r);
        }
    }
}
