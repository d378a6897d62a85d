use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Crop, Dataset, YearFeatures, YieldTable, EXTRA_VARS, LAND_VARS, N_FEATURES, PREV_YIELD_INDEX, SOIL_VARS, WEATHER_VARS};
use crate::error::{Error, Result};
use crate::graph::CountyGraph;
use crate::layers::{N_DEPTHS, N_WEEKS};

/// Column manifest of `features.csv`: `county,year`, then weekly weather,
/// weekly land surface, depth-indexed soil and the six stored extras.
pub fn feature_header() -> Vec<String> {
    let mut h = vec!["county".to_string(), "year".to_string()];
    for v in WEATHER_VARS {
        h.extend((0..N_WEEKS).map(|w| format!("w_{v}_{w}")));
    }
    for v in LAND_VARS {
        h.extend((0..N_WEEKS).map(|w| format!("l_{v}_{w}")));
    }
    for v in SOIL_VARS {
        h.extend((0..N_DEPTHS).map(|d| format!("s_{v}_{d}")));
    }
    h.extend(EXTRA_VARS.iter().map(|v| format!("e_{v}")));
    h
}

fn parse_cell(s: &str) -> std::result::Result<f64, String> {
    let t = s.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("bad numeric cell `{t}`")),
    }
}

fn fmt_cell(out: &mut String, v: f64) {
    if v.is_nan() {
        out.push_str("NA");
    } else {
        let _ = write!(out, "{v}");
    }
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn line_of(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

/// Parses `features.csv`. The previous-year yield slot is left NaN.
pub fn parse_features(text: &str, origin: &Path) -> Result<Vec<YearFeatures>> {
    let mut rdr = reader(text);
    let header = rdr
        .headers()
        .map_err(|e| Error::parse(origin, 1, e.to_string()))?
        .clone();
    let want = feature_header();
    if header.len() != want.len() {
        return Err(Error::parse(
            origin,
            1,
            format!("header has {} columns, expected {}", header.len(), want.len()),
        ));
    }
    if let Some((i, (got, exp))) = header.iter().zip(&want).enumerate().find(|(_, (g, e))| g != e) {
        return Err(Error::parse(origin, 1, format!("column {} is `{got}`, expected `{exp}`", i + 1)));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(origin, e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = line_of(&rec);
        if rec.len() != want.len() {
            return Err(Error::parse(origin, line, format!("{} fields, expected {}", rec.len(), want.len())));
        }
        let county = rec[0].to_string();
        if county.is_empty() {
            return Err(Error::parse(origin, line, "empty county id"));
        }
        let year: i32 = rec[1]
            .parse()
            .map_err(|_| Error::parse(origin, line, format!("bad year `{}`", &rec[1])))?;
        let mut values = Vec::with_capacity(N_FEATURES);
        for (k, cell) in rec.iter().skip(2).enumerate() {
            values.push(parse_cell(cell).map_err(|m| Error::parse(origin, line, format!("{}: {m}", want[k + 2])))?);
        }
        values.push(f64::NAN);
        rows.push(YearFeatures::new(county, year, values)?);
    }
    if rows.is_empty() {
        return Err(Error::Empty(format!("{} has no data rows", origin.display())));
    }
    Ok(rows)
}

/// Parses `yields.csv` (`county,year,crop,yield`). Rows with an empty or `NA`
/// yield are treated as unreported.
pub fn parse_yields(text: &str, origin: &Path) -> Result<YieldTable> {
    let mut rdr = reader(text);
    let header = rdr
        .headers()
        .map_err(|e| Error::parse(origin, 1, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != ["county", "year", "crop", "yield"] {
        return Err(Error::parse(origin, 1, "expected header `county,year,crop,yield`"));
    }
    let mut table = YieldTable::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(origin, e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = line_of(&rec);
        if rec.len() != 4 {
            return Err(Error::parse(origin, line, format!("{} fields, expected 4", rec.len())));
        }
        let year: i32 = rec[1]
            .parse()
            .map_err(|_| Error::parse(origin, line, format!("bad year `{}`", &rec[1])))?;
        let crop: Crop = rec[2].parse().map_err(|e: Error| Error::parse(origin, line, e.to_string()))?;
        let v = parse_cell(&rec[3]).map_err(|m| Error::parse(origin, line, m))?;
        if v.is_nan() {
            continue;
        }
        table
            .insert(&rec[0], year, crop, v)
            .map_err(|e| Error::parse(origin, line, e.to_string()))?;
    }
    Ok(table)
}

/// Loads the three dataset files. The adjacency file defines the county set
/// and order; feature or yield rows for other counties are rejected.
pub fn load_dataset(features: &Path, yields: &Path, adjacency: &Path) -> Result<Dataset> {
    let graph = CountyGraph::load(adjacency, None)?;
    let rows = parse_features(&read(features)?, features)?;
    for r in &rows {
        graph.index_of(&r.county)?;
    }
    let table = parse_yields(&read(yields)?, yields)?;
    for (c, ..) in table.iter() {
        graph.index_of(c)?;
    }
    Dataset::new(graph, rows, table)
}

pub fn write_features_csv(ds: &Dataset) -> String {
    let header = feature_header();
    let mut out = header.join(",");
    out.push('\n');
    for c in 0..ds.n_counties() {
        for y in ds.years() {
            let Some(r) = ds.features(c, y) else { continue };
            out.push_str(&r.county);
            let _ = write!(out, ",{}", r.year);
            for &v in &r.values[..PREV_YIELD_INDEX] {
                out.push(',');
                fmt_cell(&mut out, v);
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_yields_csv(table: &YieldTable) -> String {
    let mut out = String::from("county,year,crop,yield\n");
    for (c, y, k, v) in table.iter() {
        let _ = writeln!(out, "{c},{y},{k},{v}");
    }
    out
}

/// Writes `features.csv`, `yields.csv` and `adjacency.tsv` into `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        ("features.csv", write_features_csv(ds)),
        ("yields.csv", write_yields_csv(&ds.yields)),
        ("adjacency.tsv", ds.graph.to_edge_list()),
    ];
    for (name, body) in files {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}
