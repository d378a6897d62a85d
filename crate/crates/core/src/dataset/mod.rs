//! County-year feature tables, yields, splits, normalization, window assembly
//! and a seeded synthetic generator.

mod io;
mod norm;
mod synth;
mod window;

pub use io::{feature_header, load_dataset, parse_yields, save_dataset, write_features_csv, write_yields_csv};
pub use norm::{normalize, ChannelStats, NormStats, YieldStats};
pub use synth::{generate_synthetic, SynthConfig};
pub use window::{assemble_window, national_mean_yield, Prepared, SkipReport};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::CountyGraph;
use crate::layers::{N_DEPTHS, N_EXTRAS, N_LAND, N_SOIL, N_WEATHER, N_WEEKS};

pub const WEATHER_VARS: [&str; N_WEATHER] = ["ppt", "tdmean", "tmax", "tmean", "tmin", "vpdmax", "vpdmin"];

pub const LAND_VARS: [&str; N_LAND] = [
    "apcp", "mavail0to200", "mavail0to100", "soilm0to200", "soilm0to100", "soilm0to10", "soilm10to40",
    "soilm40to100", "soilm100to200", "spfh", "tmp2m", "tsoil0to10", "tsoil10to40", "tsoil40to100",
    "tsoil100to200", "windmax",
];

pub const SOIL_VARS: [&str; N_SOIL] = [
    "awc", "bd", "ec", "om", "silt", "clay", "sand", "pclay", "psiltyclay", "psandyclay", "pclayloam",
    "psiltyclayloam", "psandyclayloam", "ploam", "psiltloam", "psandyloam", "psilt", "ploamysand", "psand", "ph",
];

/// Stored extras; the seventh model input (previous-year national mean yield)
/// is derived from the yield table.
pub const EXTRA_VARS: [&str; N_EXTRAS - 1] = ["nccpi", "resdept", "nccpismgrn", "nccpicorn", "nccpicotton", "nccpisoy"];

pub const WEATHER_OFFSET: usize = 0;
pub const LAND_OFFSET: usize = WEATHER_OFFSET + N_WEATHER * N_WEEKS;
pub const SOIL_OFFSET: usize = LAND_OFFSET + N_LAND * N_WEEKS;
pub const EXTRAS_OFFSET: usize = SOIL_OFFSET + N_SOIL * N_DEPTHS;
/// Index of the previous-year national mean yield inside a feature vector.
pub const PREV_YIELD_INDEX: usize = EXTRAS_OFFSET + N_EXTRAS - 1;
/// Length of one flattened county-year record.
pub const N_FEATURES: usize = EXTRAS_OFFSET + N_EXTRAS;

/// Weekly channel index (weather channels first, then land surface) for a
/// flat offset below `SOIL_OFFSET`.
pub fn weekly_channel_of(i: usize) -> usize {
    i / N_WEEKS
}

/// Which normalization channel a flat feature index belongs to.
/// Channels: 23 weekly, 20 soil, 6 stored extras, then the derived yield slot.
pub fn channel_of(i: usize) -> usize {
    if i < SOIL_OFFSET {
        i / N_WEEKS
    } else if i < EXTRAS_OFFSET {
        N_WEATHER + N_LAND + (i - SOIL_OFFSET) / N_DEPTHS
    } else {
        N_WEATHER + N_LAND + N_SOIL + (i - EXTRAS_OFFSET)
    }
}

pub const N_CHANNELS: usize = N_WEATHER + N_LAND + N_SOIL + N_EXTRAS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Crop {
    Corn,
    Soybean,
}

impl Crop {
    pub const ALL: [Crop; 2] = [Crop::Corn, Crop::Soybean];

    pub fn as_str(self) -> &'static str {
        match self {
            Crop::Corn => "corn",
            Crop::Soybean => "soybean",
        }
    }
}

impl fmt::Display for Crop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Crop {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "corn" => Ok(Crop::Corn),
            "soybean" | "soybeans" | "soy" => Ok(Crop::Soybean),
            other => Err(Error::InvalidArgument(format!("unknown crop `{other}`"))),
        }
    }
}

/// One county-year record, flattened as
/// `[weather 7×52 | land 16×52 | soil 20×6 | extras 7]`, channel-major.
/// Missing cells are NaN.
#[derive(Clone, Debug)]
pub struct YearFeatures {
    pub county: String,
    pub year: i32,
    pub values: Vec<f64>,
}

impl YearFeatures {
    pub fn new(county: impl Into<String>, year: i32, values: Vec<f64>) -> Result<Self> {
        let county = county.into();
        if values.len() != N_FEATURES {
            return Err(Error::shape(
                "year_features",
                format!("county {county} year {year}: {} values, expected {N_FEATURES}", values.len()),
            ));
        }
        Ok(YearFeatures { county, year, values })
    }

    pub fn weather(&self) -> &[f64] {
        &self.values[WEATHER_OFFSET..LAND_OFFSET]
    }

    pub fn land(&self) -> &[f64] {
        &self.values[LAND_OFFSET..SOIL_OFFSET]
    }

    pub fn soil(&self) -> &[f64] {
        &self.values[SOIL_OFFSET..EXTRAS_OFFSET]
    }

    pub fn extras(&self) -> &[f64] {
        &self.values[EXTRAS_OFFSET..]
    }

    pub fn missing_cells(&self) -> usize {
        self.values[..PREV_YIELD_INDEX].iter().filter(|v| v.is_nan()).count()
    }
}

/// Sparse `(county, year, crop) → bushels/acre`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct YieldTable {
    entries: BTreeMap<(String, i32, Crop), f64>,
}

impl YieldTable {
    pub fn new() -> Self {
        YieldTable::default()
    }

    pub fn insert(&mut self, county: &str, year: i32, crop: Crop, value: f64) -> Result<()> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::Domain {
                op: "yield_table",
                detail: format!("yield {value} for {county}/{year}/{crop} must be positive"),
            });
        }
        self.entries.insert((county.to_string(), year, crop), value);
        Ok(())
    }

    pub fn get(&self, county: &str, year: i32, crop: Crop) -> Option<f64> {
        self.entries.get(&(county.to_string(), year, crop)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, i32, Crop, f64)> {
        self.entries.iter().map(|((c, y, k), v)| (c.as_str(), *y, *k, *v))
    }

    /// All yields of `crop` in `year`.
    pub fn year_values(&self, year: i32, crop: Crop) -> Vec<f64> {
        self.iter().filter(|e| e.1 == year && e.2 == crop).map(|e| e.3).collect()
    }

    pub fn labeled_count(&self, year: i32, crop: Crop) -> usize {
        self.iter().filter(|e| e.1 == year && e.2 == crop).count()
    }
}

/// Test year `t`, validation year `t - 1`, training on every earlier year.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct YearSplit {
    pub test_year: i32,
    pub val_year: i32,
    pub train_years: Vec<i32>,
}

impl YearSplit {
    pub fn new(test_year: i32, dataset_years: &[i32]) -> Result<Self> {
        let val_year = test_year - 1;
        for y in [test_year, val_year] {
            if !dataset_years.contains(&y) {
                return Err(Error::InvalidArgument(format!("split year {y} not in the dataset")));
            }
        }
        let mut train_years: Vec<i32> = dataset_years.iter().copied().filter(|&y| y < val_year).collect();
        train_years.sort_unstable();
        train_years.dedup();
        if train_years.is_empty() {
            return Err(Error::Empty(format!("no training years before {val_year}")));
        }
        Ok(YearSplit {
            test_year,
            val_year,
            train_years,
        })
    }

    pub fn is_train(&self, year: i32) -> bool {
        self.train_years.binary_search(&year).is_ok()
    }
}

/// Features for every county over a contiguous span of years, the county
/// graph, and the yield table. County order follows the graph.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph: CountyGraph,
    pub first_year: i32,
    pub n_years: usize,
    /// `[county][year - first_year]`
    features: Vec<Option<YearFeatures>>,
    pub yields: YieldTable,
}

impl Dataset {
    /// Records for counties absent from `graph` are an error.
    pub fn new(graph: CountyGraph, records: Vec<YearFeatures>, yields: YieldTable) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("dataset has no feature rows".into()));
        }
        let first_year = records.iter().map(|r| r.year).min().unwrap();
        let last_year = records.iter().map(|r| r.year).max().unwrap();
        let n_years = (last_year - first_year + 1) as usize;
        let mut features: Vec<Option<YearFeatures>> = vec![None; graph.len() * n_years];
        for r in records {
            if r.values.len() != N_FEATURES {
                return Err(Error::shape("dataset", format!("county {} year {}", r.county, r.year)));
            }
            let c = graph.index_of(&r.county)?;
            let slot = c * n_years + (r.year - first_year) as usize;
            if features[slot].is_some() {
                return Err(Error::InvalidArgument(format!("duplicate row for {} {}", r.county, r.year)));
            }
            features[slot] = Some(r);
        }
        Ok(Dataset {
            graph,
            first_year,
            n_years,
            features,
            yields,
        })
    }

    pub fn years(&self) -> Vec<i32> {
        (0..self.n_years as i32).map(|k| self.first_year + k).collect()
    }

    pub fn last_year(&self) -> i32 {
        self.first_year + self.n_years as i32 - 1
    }

    pub fn n_counties(&self) -> usize {
        self.graph.len()
    }

    pub fn counties(&self) -> &[String] {
        self.graph.ids()
    }

    pub fn year_index(&self, year: i32) -> Option<usize> {
        (year >= self.first_year && year <= self.last_year()).then(|| (year - self.first_year) as usize)
    }

    pub fn features(&self, county: usize, year: i32) -> Option<&YearFeatures> {
        let y = self.year_index(year)?;
        self.features.get(county * self.n_years + y)?.as_ref()
    }

    pub fn features_mut(&mut self, county: usize, year: i32) -> Option<&mut YearFeatures> {
        let y = self.year_index(year)?;
        self.features.get_mut(county * self.n_years + y)?.as_mut()
    }

    pub fn records(&self) -> impl Iterator<Item = &YearFeatures> {
        self.features.iter().flatten()
    }

    pub fn n_records(&self) -> usize {
        self.records().count()
    }

    pub fn missing_cells(&self) -> usize {
        self.records().map(YearFeatures::missing_cells).sum()
    }

    pub fn yield_of(&self, county: usize, year: i32, crop: Crop) -> Option<f64> {
        self.yields.get(self.graph.id(county), year, crop)
    }

    /// Number of counties with a yield label for `crop` in `year`.
    pub fn labeled_count(&self, year: i32, crop: Crop) -> usize {
        (0..self.n_counties())
            .filter(|&c| self.yield_of(c, year, crop).is_some())
            .count()
    }

    /// Standard deviation of every stored yield of `crop`, across all years.
    pub fn yield_std_all_years(&self, crop: Crop) -> Result<f64> {
        let v: Vec<f64> = self.yields.iter().filter(|e| e.2 == crop).map(|e| e.3).collect();
        if v.len() < 2 {
            return Err(Error::Empty(format!("fewer than two {crop} yields")));
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
        Ok(var.sqrt())
    }

    /// Structural equality; NaN cells compare equal to NaN.
    pub fn same_as(&self, other: &Dataset) -> bool {
        self.graph == other.graph
            && self.first_year == other.first_year
            && self.n_years == other.n_years
            && self.yields == other.yields
            && self.features.len() == other.features.len()
            && self.features.iter().zip(&other.features).all(|(a, b)| match (a, b) {
                (None, None) => true,
                (Some(a), Some(b)) => {
                    a.county == b.county
                        && a.year == b.year
                        && a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits())
                }
                _ => false,
            })
    }
}
