use std::collections::BTreeMap;

use super::{Crop, Dataset, NormStats, YearFeatures, YieldStats, N_FEATURES, PREV_YIELD_INDEX};
use crate::error::{Error, Result};

/// Mean reported yield of `crop` over all counties in `year`.
pub fn national_mean_yield(ds: &Dataset, crop: Crop, year: i32) -> Option<f64> {
    let v = ds.yields.year_values(year, crop);
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Years `year - dt ..= year` for `county`, oldest first, each with its
/// previous-year national mean yield filled in. Fails if any year (or the
/// yield average preceding it) is missing.
pub fn assemble_window(ds: &Dataset, county: usize, year: i32, dt: usize, crop: Crop) -> Result<Vec<YearFeatures>> {
    let id = ds.graph.id(county).to_string();
    let mut out = Vec::with_capacity(dt + 1);
    for y in year - dt as i32..=year {
        let f = ds.features(county, y).ok_or_else(|| Error::WindowUnavailable {
            county: id.clone(),
            year: y,
        })?;
        let prev = national_mean_yield(ds, crop, y - 1).ok_or_else(|| Error::WindowUnavailable {
            county: id.clone(),
            year: y - 1,
        })?;
        let mut f = f.clone();
        f.values[PREV_YIELD_INDEX] = prev;
        out.push(f);
    }
    Ok(out)
}

/// Counts of candidate samples that were dropped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SkipReport {
    /// Labeled samples without a complete history window.
    pub missing_window: usize,
    /// County-years with features but no label.
    pub unlabeled: usize,
}

/// A normalized dataset specialised to one crop: the previous-year yield
/// slot is filled (standardized) and labels are standardized.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub ds: Dataset,
    pub crop: Crop,
    pub yield_stats: YieldStats,
    prev_yield: BTreeMap<i32, f64>,
}

impl Prepared {
    /// `normalized` must come from `stats.apply` (or `normalize`).
    pub fn new(normalized: &Dataset, stats: &NormStats, crop: Crop) -> Result<Self> {
        let ys = stats.yield_stats(crop)?;
        let mut ds = normalized.clone();
        let years = ds.years();
        let prev: Vec<Option<f64>> = years
            .iter()
            .map(|&y| national_mean_yield(normalized, crop, y - 1).map(|m| ys.standardize(m)))
            .collect();
        for c in 0..ds.n_counties() {
            for (k, &y) in years.iter().enumerate() {
                if let Some(r) = ds.features_mut(c, y) {
                    r.values[PREV_YIELD_INDEX] = prev[k].unwrap_or(f64::NAN);
                }
            }
        }
        let prev_yield = years
            .iter()
            .zip(&prev)
            .filter_map(|(&y, p)| p.map(|v| (y, v)))
            .collect();
        Ok(Prepared {
            ds,
            crop,
            yield_stats: ys,
            prev_yield,
        })
    }

    /// Standardized previous-year national mean yield stored for `year`.
    pub fn prev_value(&self, year: i32) -> Option<f64> {
        self.prev_yield.get(&year).copied()
    }

    /// The model-ready row, or a placeholder for a county without features
    /// that year: training means everywhere (zeros) plus the year's yield slot.
    pub fn row_or_fill(&self, county: usize, year: i32) -> Option<std::borrow::Cow<'_, [f64]>> {
        if let Some(r) = self.row(county, year) {
            return Some(std::borrow::Cow::Borrowed(r));
        }
        let prev = self.prev_value(year)?;
        let mut v = vec![0.0; N_FEATURES];
        v[PREV_YIELD_INDEX] = prev;
        Some(std::borrow::Cow::Owned(v))
    }

    pub fn n_counties(&self) -> usize {
        self.ds.n_counties()
    }

    /// Model-ready record, or `None` when features or the yield average are missing.
    pub fn row(&self, county: usize, year: i32) -> Option<&[f64]> {
        let r = self.ds.features(county, year)?;
        (!r.values[PREV_YIELD_INDEX].is_nan()).then_some(&r.values[..])
    }

    pub fn row_mut(&mut self, county: usize, year: i32) -> Option<&mut [f64]> {
        self.ds.features_mut(county, year).map(|r| &mut r.values[..])
    }

    pub fn window_available(&self, county: usize, year: i32, dt: usize) -> bool {
        (year - dt as i32..=year).all(|y| self.row(county, y).is_some())
    }

    /// Standardized label.
    pub fn label(&self, county: usize, year: i32) -> Option<f64> {
        self.ds
            .yield_of(county, year, self.crop)
            .map(|y| self.yield_stats.standardize(y))
    }

    pub fn raw_label(&self, county: usize, year: i32) -> Option<f64> {
        self.ds.yield_of(county, year, self.crop)
    }

    /// Labeled `(county, year)` pairs in `years` with a complete window.
    pub fn samples(&self, years: &[i32], dt: usize) -> (Vec<(usize, i32)>, SkipReport) {
        let mut out = Vec::new();
        let mut skip = SkipReport::default();
        for &y in years {
            for c in 0..self.n_counties() {
                if self.label(c, y).is_none() {
                    if self.ds.features(c, y).is_some() {
                        skip.unlabeled += 1;
                    }
                    continue;
                }
                if self.window_available(c, y, dt) {
                    out.push((c, y));
                } else {
                    skip.missing_window += 1;
                }
            }
        }
        (out, skip)
    }

    /// Flattened windows `[dt + 1] × N_FEATURES` per sample, oldest year first.
    pub fn gather(&self, samples: &[(usize, i32)], dt: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(samples.len() * (dt + 1) * N_FEATURES);
        for &(c, y) in samples {
            for yy in y - dt as i32..=y {
                out.extend_from_slice(self.row(c, yy).expect("window checked by caller"));
            }
        }
        out
    }
}
