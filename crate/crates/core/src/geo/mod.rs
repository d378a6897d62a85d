//! Preprocessing from gridded sources to county features: weighted
//! raster-to-county averages, daily/hourly to weekly reduction and soil
//! texture classification.

mod pipeline;
mod raster;
mod temporal;
mod texture;

pub use pipeline::{aggregate_files, parse_manifest, run_manifest, ManifestEntry, ManifestKind};
pub use raster::{aggregate_to_county, build_weight_map, parse_weight_file, CellOverlap, CountyWeightMap, RasterGrid};
pub use temporal::{daily_to_weekly, hourly_to_daily, DailyReduce, VariableKind};
pub use texture::{classify_texture, county_texture_fractions, TextureClass, TexturePoint};

#[cfg(test)]
mod tests;
