//! Ground-truth examination surfaces and position-based click sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{GridLayout, Rank};

/// Examination probability per rank, anchored so that rank 1 is exactly 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PropensitySurface {
    values: Vec<f64>,
}

impl PropensitySurface {
    /// Takes rank-ordered values that already satisfy the anchor.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        match values.first() {
            None => return Err(Error::config("surface", "must cover at least one rank")),
            Some(&first) if first != 1.0 => {
                return Err(Error::config(
                    "surface",
                    format!("rank 1 must be exactly 1.0, got {first}"),
                ))
            }
            _ => {}
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0 && **v <= 1.0))
        {
            return Err(Error::config(
                "surface",
                format!("rank {} value {v} outside (0, 1]", i + 1),
            ));
        }
        Ok(PropensitySurface { values })
    }

    /// Divides a raw parameterization by its rank-1 value.
    pub fn normalized(raw: Vec<f64>) -> Result<Self> {
        let first = *raw
            .first()
            .ok_or_else(|| Error::config("surface", "must cover at least one rank"))?;
        if !(first > 0.0 && first.is_finite()) {
            return Err(Error::config("surface", "rank-1 value must be positive"));
        }
        let mut values: Vec<f64> = raw.iter().map(|v| v / first).collect();
        values[0] = 1.0;
        Self::from_values(values)
    }

    pub fn uniform(page_size: usize) -> Self {
        PropensitySurface {
            values: vec![1.0; page_size.max(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, rank: Rank) -> Option<f64> {
        self.values.get(rank.index()).copied()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// CSV with header `rank,row,col,propensity`.
    pub fn to_csv(&self, layout: &GridLayout) -> Result<String> {
        if layout.page_size() != self.values.len() {
            return Err(Error::Layout(format!(
                "surface has {} ranks, layout holds {}",
                self.values.len(),
                layout.page_size()
            )));
        }
        let mut out = String::from("rank,row,col,propensity\n");
        for (i, v) in self.values.iter().enumerate() {
            let rank = Rank::from_index(i);
            let cell = layout.rank_to_cell(rank)?;
            out.push_str(&format!("{},{},{},{}\n", rank, cell.row, cell.col, v));
        }
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            rank: u16,
            propensity: f64,
        }
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut values = Vec::new();
        for row in reader.deserialize::<Row>() {
            let row = row?;
            if usize::from(row.rank) != values.len() + 1 {
                return Err(Error::Validation(format!(
                    "surface csv: expected rank {}, found {}",
                    values.len() + 1,
                    row.rank
                )));
            }
            values.push(row.propensity);
        }
        Self::from_values(values)
    }
}

impl TryFrom<Vec<f64>> for PropensitySurface {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::from_values(values)
    }
}

impl From<PropensitySurface> for Vec<f64> {
    fn from(surface: PropensitySurface) -> Vec<f64> {
        surface.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayParams {
    pub gamma: f64,
}

/// `1 / p^gamma` for `p = 1..=page_size`.
pub fn exponential_surface(page_size: usize, params: DecayParams) -> Result<PropensitySurface> {
    if page_size == 0 {
        return Err(Error::config("page_size", "must be at least 1"));
    }
    if !(params.gamma >= 0.0 && params.gamma.is_finite()) {
        return Err(Error::config("surface.gamma", "must be a finite value >= 0"));
    }
    let values = (1..=page_size)
        .map(|p| 1.0 / (p as f64).powf(params.gamma))
        .collect();
    PropensitySurface::from_values(values)
}

/// Per-row scale times a per-row column profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSurfaceParams {
    pub row_factors: Vec<f64>,
    pub column_profiles: Vec<Vec<f64>>,
}

impl GridSurfaceParams {
    /// A 4x3 shape with a steep first-column drop in row 0, a right-edge rise
    /// of 10% between the last two cells of row 1, and an almost flat row 2.
    pub fn edge_rise_4x3() -> Self {
        GridSurfaceParams {
            row_factors: vec![1.0, 1.0, 1.0],
            column_profiles: vec![
                vec![1.0, 0.72, 0.62, 0.58],
                vec![0.5, 0.4, 0.35, 0.385],
                vec![0.3, 0.29, 0.285, 0.28],
            ],
        }
    }
}

pub fn grid_surface(layout: &GridLayout, params: &GridSurfaceParams) -> Result<PropensitySurface> {
    let rows = usize::from(layout.rows);
    let columns = usize::from(layout.columns);
    if params.row_factors.len() != rows {
        return Err(Error::config(
            "surface.row_factors",
            format!("expected {rows} entries, got {}", params.row_factors.len()),
        ));
    }
    if params.column_profiles.len() != rows {
        return Err(Error::config(
            "surface.column_profiles",
            format!("expected {rows} rows, got {}", params.column_profiles.len()),
        ));
    }
    let mut raw = Vec::with_capacity(layout.page_size());
    for (r, (factor, profile)) in params
        .row_factors
        .iter()
        .zip(&params.column_profiles)
        .enumerate()
    {
        if profile.len() != columns {
            return Err(Error::config(
                format!("surface.column_profiles[{r}]"),
                format!("expected {columns} columns, got {}", profile.len()),
            ));
        }
        raw.extend(profile.iter().map(|c| factor * c));
    }
    PropensitySurface::normalized(raw)
}

/// Surface choices accepted in simulation configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceSpec {
    Exponential { gamma: f64 },
    Grid(GridSurfaceParams),
    Values { values: Vec<f64> },
}

impl SurfaceSpec {
    pub fn build(&self, layout: &GridLayout) -> Result<PropensitySurface> {
        let surface = match self {
            SurfaceSpec::Exponential { gamma } => {
                exponential_surface(layout.page_size(), DecayParams { gamma: *gamma })?
            }
            SurfaceSpec::Grid(params) => grid_surface(layout, params)?,
            SurfaceSpec::Values { values } => PropensitySurface::normalized(values.clone())?,
        };
        if surface.len() != layout.page_size() {
            return Err(Error::config(
                "surface",
                format!("{} values for a page of {}", surface.len(), layout.page_size()),
            ));
        }
        Ok(surface)
    }
}

/// Position-based model: relevance times examination.
pub fn click_probability(relevance: f64, surface: &PropensitySurface, rank: Rank) -> Result<f64> {
    let examination = surface.get(rank).ok_or(Error::Range {
        what: "rank",
        value: i64::from(rank.get()),
        bound: format!("surface covers {} ranks", surface.len()),
    })?;
    Ok(relevance * examination)
}

/// One Bernoulli draw; consumes exactly one `f64` from `rng`.
pub fn sample_click<R: Rng + ?Sized>(p_click: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < p_click
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn rank(v: u16) -> Rank {
        Rank::new(v).unwrap()
    }

    #[test]
    fn exponential_examples() {
        let flat = exponential_surface(3, DecayParams { gamma: 0.0 }).unwrap();
        assert_eq!(flat.values(), &[1.0, 1.0, 1.0]);
        let inv = exponential_surface(3, DecayParams { gamma: 1.0 }).unwrap();
        assert_eq!(inv.values()[..2], [1.0, 0.5]);
        assert_relative_eq!(inv.values()[2], 1.0 / 3.0);
        let sqrt = exponential_surface(4, DecayParams { gamma: 0.5 }).unwrap();
        assert_eq!(sqrt.get(rank(4)), Some(0.5));
        assert!(exponential_surface(0, DecayParams { gamma: 1.0 }).is_err());
        assert!(exponential_surface(3, DecayParams { gamma: -1.0 }).is_err());
    }

    #[test]
    fn grid_examples() {
        let single = grid_surface(
            &GridLayout::new(4, 1).unwrap(),
            &GridSurfaceParams {
                row_factors: vec![1.0],
                column_profiles: vec![vec![1.0, 0.8, 0.6, 0.5]],
            },
        )
        .unwrap();
        assert_eq!(single.values(), &[1.0, 0.8, 0.6, 0.5]);

        let layout = GridLayout::new(4, 3).unwrap();
        let ones = GridSurfaceParams {
            row_factors: vec![1.0; 3],
            column_profiles: vec![vec![1.0; 4]; 3],
        };
        assert_eq!(grid_surface(&layout, &ones).unwrap().values(), &[1.0; 12]);

        let rise = grid_surface(&layout, &GridSurfaceParams::edge_rise_4x3()).unwrap();
        let v = rise.values();
        assert_relative_eq!(v[7] / v[6], 1.1, epsilon = 1e-12);
    }

    #[test]
    fn grid_normalizes_rank_one() {
        let layout = GridLayout::new(2, 1).unwrap();
        let params = GridSurfaceParams {
            row_factors: vec![0.5],
            column_profiles: vec![vec![0.8, 0.4]],
        };
        assert_eq!(grid_surface(&layout, &params).unwrap().values(), &[1.0, 0.5]);
    }

    #[test]
    fn grid_dimension_mismatch() {
        let layout = GridLayout::new(4, 3).unwrap();
        let params = GridSurfaceParams {
            row_factors: vec![1.0; 2],
            column_profiles: vec![vec![1.0; 4]; 2],
        };
        assert!(matches!(grid_surface(&layout, &params), Err(Error::Config { .. })));
    }

    #[test]
    fn anchor_enforced() {
        assert!(PropensitySurface::from_values(vec![0.9, 0.5]).is_err());
        assert!(PropensitySurface::from_values(vec![1.0, 0.0]).is_err());
        assert!(PropensitySurface::from_values(vec![1.0, 1.2]).is_err());
    }

    #[test]
    fn click_probability_examples() {
        let surface = PropensitySurface::from_values(vec![1.0, 0.5, 0.4, 0.3, 0.25]).unwrap();
        assert_eq!(click_probability(1.0, &surface, rank(1)).unwrap(), 1.0);
        assert_relative_eq!(click_probability(0.4, &surface, rank(5)).unwrap(), 0.1);
        assert_eq!(click_probability(0.0, &surface, rank(3)).unwrap(), 0.0);
        assert!(click_probability(0.5, &surface, rank(6)).is_err());
    }

    #[test]
    fn sample_click_extremes() {
        let mut rng = stream_rng(1, Stream::Clicks, 0);
        assert!((0..10_000).all(|_| !sample_click(0.0, &mut rng)));
        assert!((0..10_000).all(|_| sample_click(1.0, &mut rng)));
    }

    #[test]
    fn sample_click_law_of_large_numbers() {
        let mut rng = stream_rng(2024, Stream::Clicks, 0);
        let n = 1_000_000;
        let hits = (0..n).filter(|_| sample_click(0.3, &mut rng)).count();
        let rate = hits as f64 / n as f64;
        assert!((rate - 0.3).abs() < 0.002, "rate {rate}");
    }

    #[test]
    fn surface_csv_round_trip() {
        let layout = GridLayout::new(2, 2).unwrap();
        let surface = PropensitySurface::from_values(vec![1.0, 0.7, 0.5, 0.3]).unwrap();
        let csv = surface.to_csv(&layout).unwrap();
        assert!(csv.starts_with("rank,row,col,propensity\n1,0,0,1\n2,0,1,0.7\n"));
        assert_eq!(PropensitySurface::from_csv(&csv).unwrap(), surface);
    }

    proptest! {
        #[test]
        fn exponential_is_monotone_and_anchored(gamma in 0.0f64..5.0, n in 1usize..40) {
            let s = exponential_surface(n, DecayParams { gamma }).unwrap();
            prop_assert_eq!(s.values()[0], 1.0);
            for w in s.values().windows(2) {
                prop_assert!(w[1] <= w[0]);
                prop_assert!(w[1] > 0.0);
            }
        }

        #[test]
        fn click_probability_bounded_and_monotone(rel in 0.0f64..=1.0, bump in 0.0f64..0.5, gamma in 0.0f64..3.0, r in 1u16..12) {
            let s = exponential_surface(12, DecayParams { gamma }).unwrap();
            let p = click_probability(rel, &s, rank(r)).unwrap();
            prop_assert!(p <= rel.min(s.get(rank(r)).unwrap()) + 1e-15);
            let higher = click_probability((rel + bump).min(1.0), &s, rank(r)).unwrap();
            prop_assert!(higher >= p);
            let deeper = click_probability(rel, &s, rank(r + 1)).unwrap();
            prop_assert!(deeper <= p);
        }
    }
}
