use std::fmt::Write as _;
use std::io::{Read, Write};

use super::buckets::BucketCurves;
use super::propensity::{PropensityEstimate, RankEstimate};
use crate::error::{Error, Result};
use crate::types::{GridLayout, Rank};

/// Rearranges a rank-ordered vector into `M[row][col]`, row-major.
pub fn map_to_grid<T: Clone>(values: &[T], layout: &GridLayout) -> Result<Vec<Vec<T>>> {
    if values.len() != layout.page_size() {
        return Err(Error::Layout(format!(
            "{} values do not fill a {}x{} grid of {} slots",
            values.len(),
            layout.columns,
            layout.rows,
            layout.page_size()
        )));
    }
    Ok(values
        .chunks(usize::from(layout.columns))
        .map(<[T]>::to_vec)
        .collect())
}

pub fn flatten_grid<T: Clone>(grid: &[Vec<T>]) -> Vec<T> {
    grid.concat()
}

pub fn estimate_grid(est: &PropensityEstimate, layout: &GridLayout) -> Result<Vec<Vec<Option<f64>>>> {
    map_to_grid(&est.values(), layout)
}

/// Linear ramp through the sequential "Blues" palette; 0 is lightest, 1 darkest.
pub fn blues(t: f64) -> (u8, u8, u8) {
    const STOPS: [(u8, u8, u8); 5] = [
        (247, 251, 255),
        (198, 219, 239),
        (107, 174, 214),
        (33, 113, 181),
        (8, 48, 107),
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let pos = t * (STOPS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(STOPS.len() - 2);
    let f = pos - i as f64;
    let mix = |a: u8, b: u8| (f64::from(a) + (f64::from(b) - f64::from(a)) * f).round() as u8;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    (mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// SVG heatmap of a grid of values on a fixed [0, 1] scale. Missing cells are
/// drawn grey and labelled "n/a".
pub fn heatmap_svg(grid: &[Vec<Option<f64>>], title: &str) -> String {
    const CELL: usize = 90;
    const TOP: usize = 40;
    let rows = grid.len();
    let cols = grid.iter().map(Vec::len).max().unwrap_or(0);
    let width = cols * CELL + 20;
    let height = rows * CELL + TOP + 10;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="10" y="24" font-size="16">{}</text>"#,
        escape(title)
    );
    for (r, row) in grid.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            let x = 10 + c * CELL;
            let y = TOP + r * CELL;
            let (fill, label, ink) = match v {
                Some(v) => {
                    let (red, green, blue) = blues(*v);
                    let ink = if *v > 0.55 { "#ffffff" } else { "#000000" };
                    (format!("#{red:02x}{green:02x}{blue:02x}"), format!("{v:.3}"), ink)
                }
                None => ("#d9d9d9".to_string(), "n/a".to_string(), "#000000"),
            };
            let _ = writeln!(
                svg,
                r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="#ffffff"/>"##
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" font-size="14" text-anchor="middle" fill="{ink}">{label}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 5
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const PROPENSITY_HEADER: [&str; 7] = ["rank", "row", "col", "estimate", "ci_lo", "ci_hi", "n_scores"];

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn estimate_record(r: &RankEstimate, layout: &GridLayout) -> Result<Vec<String>> {
    let cell = layout.rank_to_cell(r.rank)?;
    Ok(vec![
        r.rank.to_string(),
        cell.row.to_string(),
        cell.col.to_string(),
        opt(r.estimate),
        opt(r.ci.map(|c| c.0)),
        opt(r.ci.map(|c| c.1)),
        r.n_scores.to_string(),
    ])
}

/// Writes `rank,row,col,estimate,ci_lo,ci_hi,n_scores`; missing values are empty.
pub fn write_propensity_csv<W: Write>(out: W, est: &PropensityEstimate, layout: &GridLayout) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PROPENSITY_HEADER)?;
    for r in &est.ranks {
        w.write_record(estimate_record(r, layout)?)?;
    }
    w.flush().map_err(|e| Error::io("propensity csv", e))?;
    Ok(())
}

pub fn write_bucket_csv<W: Write>(out: W, curves: &BucketCurves, layout: &GridLayout) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["bucket"];
    header.extend(PROPENSITY_HEADER);
    w.write_record(&header)?;
    for curve in &curves.curves {
        for r in &curve.estimate.ranks {
            let mut record = vec![curve.bucket.label.clone()];
            record.extend(estimate_record(r, layout)?);
            w.write_record(&record)?;
        }
    }
    w.flush().map_err(|e| Error::io("bucket csv", e))?;
    Ok(())
}

#[derive(serde::Deserialize)]
struct PropensityRow {
    rank: u16,
    estimate: Option<f64>,
    ci_lo: Option<f64>,
    ci_hi: Option<f64>,
    n_scores: usize,
}

/// Reads a propensity CSV written by [`write_propensity_csv`].
pub fn read_propensity_csv<R: Read>(input: R) -> Result<PropensityEstimate> {
    let mut reader = csv::Reader::from_reader(input);
    let mut ranks = Vec::new();
    for (i, row) in reader.deserialize::<PropensityRow>().enumerate() {
        let row = row?;
        let rank = Rank::new(row.rank)?;
        if rank.index() != i {
            return Err(Error::Validation(format!(
                "propensity csv row {} holds rank {}; ranks must be consecutive from 1",
                i + 1,
                row.rank
            )));
        }
        ranks.push(RankEstimate {
            rank,
            estimate: row.estimate,
            ci: row.ci_lo.zip(row.ci_hi),
            n_scores: row.n_scores,
        });
    }
    if ranks.first().and_then(|r| r.estimate) != Some(1.0) {
        return Err(Error::Validation("propensity csv must start with rank 1 at 1.0".into()));
    }
    Ok(PropensityEstimate {
        ranks,
        retained_scores: Vec::new(),
        excluded_scores: Vec::new(),
        warnings: Vec::new(),
    })
}
