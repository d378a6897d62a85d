use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::raster::{aggregate_to_county, CountyWeightMap, RasterGrid};
use super::temporal::{daily_to_weekly, VariableKind};
use crate::dataset::feature_header;
use crate::error::{Error, Result};
use crate::layers::N_WEEKS;
use crate::par;

/// How a manifest entry's rasters become county columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ManifestKind {
    /// One raster, one column (soil and extras).
    Static,
    /// Daily rasters summed into weeks.
    Flux,
    /// Daily rasters averaged into weeks.
    State,
}

impl ManifestKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "static" => Some(ManifestKind::Static),
            "flux" => Some(ManifestKind::Flux),
            "state" => Some(ManifestKind::State),
            _ => None,
        }
    }
}

/// `target,kind,path`. Static targets are full column names (`s_awc_0`);
/// weekly targets are column prefixes (`w_ppt`) expanded to all 52 weeks and
/// their path holds a `{day}` placeholder filled with `001`, `002`, ….
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub target: String,
    pub kind: ManifestKind,
    pub path: String,
}

impl ManifestEntry {
    fn columns(&self) -> Vec<String> {
        match self.kind {
            ManifestKind::Static => vec![self.target.clone()],
            _ => (0..N_WEEKS).map(|w| format!("{}_{w}", self.target)).collect(),
        }
    }
}

pub fn parse_manifest(text: &str, origin: &Path) -> Result<Vec<ManifestEntry>> {
    let known: BTreeMap<String, usize> = feature_header().into_iter().enumerate().map(|(i, c)| (c, i)).collect();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::parse(origin, 1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["target", "kind", "path"] {
        return Err(Error::parse(origin, 1, "expected header `target,kind,path`"));
    }
    let mut out: Vec<ManifestEntry> = Vec::new();
    let mut seen = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(origin, e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let kind = ManifestKind::parse(&rec[1])
            .ok_or_else(|| Error::parse(origin, line, format!("unknown kind `{}` (static, flux or state)", &rec[1])))?;
        let entry = ManifestEntry {
            target: rec[0].to_string(),
            kind,
            path: rec[2].to_string(),
        };
        if kind != ManifestKind::Static && !entry.path.contains("{day}") {
            return Err(Error::parse(origin, line, "daily path needs a `{day}` placeholder"));
        }
        for col in entry.columns() {
            if !known.contains_key(&col) || col == "county" || col == "year" {
                return Err(Error::parse(origin, line, format!("`{col}` is not a feature column")));
            }
            if seen.insert(col.clone(), line).is_some() {
                return Err(Error::parse(origin, line, format!("column `{col}` listed twice")));
            }
        }
        out.push(entry);
    }
    Ok(out)
}

fn load_checked(path: &Path, weights: &CountyWeightMap) -> Result<RasterGrid> {
    let g = RasterGrid::load(path)?;
    weights
        .check_cells(g.len())
        .map_err(|e| Error::parse(path, 1, e.to_string()))?;
    Ok(g)
}

/// Daily raster paths for one entry: `001` upward while files exist; 365 or
/// 366 days are required.
fn daily_paths(dir: &Path, pattern: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for day in 1..=366 {
        let p = dir.join(pattern.replace("{day}", &format!("{day:03}")));
        if !p.exists() {
            break;
        }
        out.push(p);
    }
    if out.len() < 365 {
        let missing = dir.join(pattern.replace("{day}", &format!("{:03}", out.len() + 1)));
        return Err(Error::io(
            missing,
            std::io::Error::new(std::io::ErrorKind::NotFound, "daily raster missing"),
        ));
    }
    Ok(out)
}

/// Aggregates every manifest entry for `year` and renders a features
/// fragment: `county,year` followed by the covered columns in manifest
/// order of the full feature header. Counties without support are `NA`.
pub fn run_manifest(
    raster_dir: &Path,
    manifest: &[ManifestEntry],
    weights: &CountyWeightMap,
    year: i32,
) -> Result<String> {
    let counties: Vec<&str> = weights.counties().collect();
    let mut columns: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    for entry in manifest {
        match entry.kind {
            ManifestKind::Static => {
                let g = load_checked(&raster_dir.join(&entry.path), weights)?;
                let vals = par::map_indexed(counties.len(), |i| aggregate_to_county(&g, weights, counties[i]));
                columns.insert(entry.target.clone(), vals);
            }
            ManifestKind::Flux | ManifestKind::State => {
                let kind = if entry.kind == ManifestKind::Flux {
                    VariableKind::Flux
                } else {
                    VariableKind::State
                };
                let mut daily: Vec<Vec<Option<f64>>> = vec![Vec::new(); counties.len()];
                for p in daily_paths(raster_dir, &entry.path)? {
                    let g = load_checked(&p, weights)?;
                    let vals = par::map_indexed(counties.len(), |i| aggregate_to_county(&g, weights, counties[i]));
                    for (d, v) in daily.iter_mut().zip(vals) {
                        d.push(v);
                    }
                }
                let mut weekly: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(counties.len()); N_WEEKS];
                for series in &daily {
                    let full: Option<Vec<f64>> = series.iter().copied().collect();
                    match full {
                        Some(s) => {
                            for (w, v) in daily_to_weekly(&s, kind)?.into_iter().enumerate() {
                                weekly[w].push(Some(v));
                            }
                        }
                        None => weekly.iter_mut().for_each(|c| c.push(None)),
                    }
                }
                for (w, vals) in weekly.into_iter().enumerate() {
                    columns.insert(format!("{}_{w}", entry.target), vals);
                }
            }
        }
    }
    let order: Vec<String> = feature_header().into_iter().filter(|c| columns.contains_key(c)).collect();
    let mut out = String::from("county,year");
    for c in &order {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (i, county) in counties.iter().enumerate() {
        let _ = write!(out, "{county},{year}");
        for c in &order {
            match columns[c][i] {
                Some(v) => {
                    let _ = write!(out, ",{v}");
                }
                None => out.push_str(",NA"),
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Reads the weight and manifest files, then [`run_manifest`].
pub fn aggregate_files(
    raster_dir: &Path,
    weights_file: &Path,
    manifest_file: &Path,
    landcover: Option<&Path>,
    year: i32,
) -> Result<String> {
    let wtext = fs::read_to_string(weights_file).map_err(|e| Error::io(weights_file, e))?;
    let rows = super::raster::parse_weight_file(&wtext, weights_file)?;
    let lc = landcover.map(RasterGrid::load).transpose()?;
    let weights = super::raster::build_weight_map(&rows, lc.as_ref())
        .map_err(|e| Error::parse(weights_file, 0, e.to_string()))?;
    let mtext = fs::read_to_string(manifest_file).map_err(|e| Error::io(manifest_file, e))?;
    let manifest = parse_manifest(&mtext, manifest_file)?;
    run_manifest(raster_dir, &manifest, &weights, year)
}
