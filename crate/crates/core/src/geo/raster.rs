use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A row-major grid in ESRI ASCII layout (row 0 is the northern edge).
#[derive(Clone, Debug, PartialEq)]
pub struct RasterGrid {
    pub ncols: usize,
    pub nrows: usize,
    pub x0: f64,
    pub y0: f64,
    pub cell_size: f64,
    pub nodata: Option<f64>,
    pub values: Vec<f64>,
}

impl RasterGrid {
    pub fn new(ncols: usize, nrows: usize, cell_size: f64, values: Vec<f64>) -> Result<Self> {
        let g = RasterGrid {
            ncols,
            nrows,
            x0: 0.0,
            y0: 0.0,
            cell_size,
            nodata: None,
            values,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0) {
            return Err(Error::InvalidArgument(format!("cell size must be positive, got {}", self.cell_size)));
        }
        if self.values.len() != self.ncols * self.nrows {
            return Err(Error::shape(
                "raster",
                format!("{} values for {}×{} cells", self.values.len(), self.nrows, self.ncols),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Cell value, or `None` for nodata and NaN cells.
    pub fn value(&self, cell: usize) -> Option<f64> {
        let v = *self.values.get(cell)?;
        if v.is_nan() || self.nodata == Some(v) {
            None
        } else {
            Some(v)
        }
    }

    /// Parses the ESRI ASCII grid format: six header lines (`ncols`, `nrows`,
    /// `xllcorner`/`xllcenter`, `yllcorner`/`yllcenter`, `cellsize`,
    /// optional `nodata_value`) followed by whitespace-separated values.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut header: BTreeMap<String, (usize, String)> = BTreeMap::new();
        let mut body_start = None;
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let mut it = t.split_whitespace();
            let key = it.next().unwrap();
            if key.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) {
                let val = it
                    .next()
                    .ok_or_else(|| Error::parse(origin, i + 1, format!("header `{key}` without a value")))?;
                header.insert(key.to_ascii_lowercase(), (i + 1, val.to_string()));
            } else {
                body_start = Some(i);
                break;
            }
        }
        let field = |names: &[&str]| -> Result<Option<(usize, String)>> {
            Ok(names.iter().find_map(|n| header.get(*n).cloned()))
        };
        let need = |names: &[&str]| -> Result<(usize, String)> {
            field(names)?.ok_or_else(|| Error::parse(origin, 1, format!("missing `{}` header", names[0])))
        };
        let int = |(line, v): (usize, String)| {
            v.parse::<usize>()
                .map_err(|_| Error::parse(origin, line, format!("bad integer `{v}`")))
        };
        let float = |(line, v): (usize, String)| {
            v.parse::<f64>()
                .map_err(|_| Error::parse(origin, line, format!("bad number `{v}`")))
        };
        let ncols = int(need(&["ncols"])?)?;
        let nrows = int(need(&["nrows"])?)?;
        let x0 = float(need(&["xllcorner", "xllcenter"])?)?;
        let y0 = float(need(&["yllcorner", "yllcenter"])?)?;
        let cell_size = float(need(&["cellsize"])?)?;
        let nodata = field(&["nodata_value"])?.map(float).transpose()?;
        let mut values = Vec::with_capacity(ncols * nrows);
        if let Some(start) = body_start {
            for (i, line) in text.lines().enumerate().skip(start) {
                for tok in line.split_whitespace() {
                    let v: f64 = tok
                        .parse()
                        .map_err(|_| Error::parse(origin, i + 1, format!("bad cell value `{tok}`")))?;
                    values.push(v);
                }
            }
        }
        if values.len() != ncols * nrows {
            return Err(Error::parse(
                origin,
                text.lines().count(),
                format!("{} cell values, header declares {nrows}×{ncols}", values.len()),
            ));
        }
        let g = RasterGrid {
            ncols,
            nrows,
            x0,
            y0,
            cell_size,
            nodata,
            values,
        };
        g.validate().map_err(|e| Error::parse(origin, 1, e.to_string()))?;
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RasterGrid::parse(&text, path)
    }

    pub fn to_ascii(&self) -> String {
        let mut out = format!(
            "ncols {}\nnrows {}\nxllcorner {}\nyllcorner {}\ncellsize {}\n",
            self.ncols, self.nrows, self.x0, self.y0, self.cell_size
        );
        if let Some(nd) = self.nodata {
            out.push_str(&format!("nodata_value {nd}\n"));
        }
        for row in self.values.chunks(self.ncols.max(1)) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }
}

/// One row of the county/cell overlap file.
#[derive(Clone, Debug, PartialEq)]
pub struct CellOverlap {
    pub county: String,
    pub cell: usize,
    pub overlap: f64,
    pub agland: f64,
}

/// Per county, `(cell index, overlap × agland)` pairs with positive weight,
/// ordered by cell index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CountyWeightMap {
    pub weights: BTreeMap<String, Vec<(usize, f64)>>,
}

impl CountyWeightMap {
    pub fn counties(&self) -> impl Iterator<Item = &str> {
        self.weights.keys().map(String::as_str)
    }

    pub fn get(&self, county: &str) -> &[(usize, f64)] {
        self.weights.get(county).map_or(&[], Vec::as_slice)
    }

    /// Errors if any referenced cell lies outside a grid of `n_cells`.
    pub fn check_cells(&self, n_cells: usize) -> Result<()> {
        for (c, ws) in &self.weights {
            if let Some((cell, _)) = ws.iter().find(|(cell, _)| *cell >= n_cells) {
                return Err(Error::InvalidArgument(format!(
                    "county {c} references cell {cell}, raster has {n_cells}"
                )));
            }
        }
        Ok(())
    }
}

/// Parses `county,cell_index,overlap_fraction,agland_fraction`.
pub fn parse_weight_file(text: &str, origin: &Path) -> Result<Vec<CellOverlap>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::parse(origin, 1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["county", "cell_index", "overlap_fraction", "agland_fraction"] {
        return Err(Error::parse(
            origin,
            1,
            "expected header `county,cell_index,overlap_fraction,agland_fraction`",
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(origin, e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let num = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|_| Error::parse(origin, line, format!("bad number `{}`", &rec[i])))
        };
        let cell = rec[1]
            .parse::<usize>()
            .map_err(|_| Error::parse(origin, line, format!("bad cell index `{}`", &rec[1])))?;
        out.push(CellOverlap {
            county: rec[0].to_string(),
            cell,
            overlap: num(2)?,
            agland: num(3)?,
        });
    }
    Ok(out)
}

/// Weight = overlap × agland fraction. With `landcover`, the agland fraction
/// of each cell is read from that raster instead of the overlap rows.
/// Zero-weight cells are dropped.
pub fn build_weight_map(rows: &[CellOverlap], landcover: Option<&RasterGrid>) -> Result<CountyWeightMap> {
    let mut per_cell: BTreeMap<usize, f64> = BTreeMap::new();
    let mut weights: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for r in rows {
        if !(0.0..=1.0).contains(&r.overlap) {
            return Err(Error::InvalidArgument(format!(
                "overlap fraction {} for county {} cell {} outside [0, 1]",
                r.overlap, r.county, r.cell
            )));
        }
        let agland = match landcover {
            Some(lc) => lc.value(r.cell).ok_or_else(|| {
                Error::InvalidArgument(format!("land-cover raster has no value for cell {}", r.cell))
            })?,
            None => r.agland,
        };
        if !(0.0..=1.0).contains(&agland) {
            return Err(Error::InvalidArgument(format!(
                "agland fraction {agland} for cell {} outside [0, 1]",
                r.cell
            )));
        }
        let total = per_cell.entry(r.cell).or_insert(0.0);
        *total += r.overlap;
        if *total > 1.0 + 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "overlap fractions of cell {} sum to {total} > 1",
                r.cell
            )));
        }
        let entry = weights.entry(r.county.clone()).or_default();
        let w = r.overlap * agland;
        if w > 0.0 {
            entry.push((r.cell, w));
        }
    }
    for ws in weights.values_mut() {
        ws.sort_by_key(|e| e.0);
    }
    Ok(CountyWeightMap { weights })
}

/// `Σ wᵢvᵢ / Σ wᵢ` over the county's cells that hold data, kept inside their
/// value range; `None` when none do.
pub fn aggregate_to_county(raster: &RasterGrid, weights: &CountyWeightMap, county: &str) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(cell, w) in weights.get(county) {
        if let Some(v) = raster.value(cell) {
            num += w * v;
            den += w;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (den > 0.0).then(|| (num / den).clamp(lo, hi))
}
