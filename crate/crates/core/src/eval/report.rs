use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::metrics::{pearson_corr, r_squared, rmse};
use crate::dataset::Crop;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CountyRecord {
    pub county: String,
    pub truth: f64,
    pub predicted: f64,
    pub residual: f64,
}

/// Test-year metrics with the per-county values they were computed from.
/// `rmse` is in units of the crop's all-years yield standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub crop: Crop,
    pub test_year: i32,
    pub method: String,
    pub early: bool,
    pub yield_std: f64,
    pub rmse: f64,
    pub r2: f64,
    /// `None` when the predictions have zero variance.
    pub corr: Option<f64>,
    pub n_counties: usize,
    pub records: Vec<CountyRecord>,
}

impl EvalReport {
    /// Computes metrics from `(county, truth, predicted)` triples.
    pub fn from_records(
        crop: Crop,
        test_year: i32,
        method: &str,
        early: bool,
        yield_std: f64,
        rows: Vec<(String, f64, f64)>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty(format!("no evaluable {crop} counties in {test_year}")));
        }
        let truth: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let pred: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let rmse = rmse(&truth, &pred, yield_std)?;
        let r2 = r_squared(&truth, &pred)?;
        let corr = match pearson_corr(&truth, &pred) {
            Ok(c) => Some(c),
            Err(Error::Domain { .. }) => None,
            Err(e) => return Err(e),
        };
        let records: Vec<CountyRecord> = rows
            .into_iter()
            .map(|(county, truth, predicted)| CountyRecord {
                county,
                truth,
                predicted,
                residual: truth - predicted,
            })
            .collect();
        Ok(EvalReport {
            crop,
            test_year,
            method: method.to_string(),
            early,
            yield_std,
            rmse,
            r2,
            corr,
            n_counties: records.len(),
            records,
        })
    }

    pub fn metrics_text(&self) -> String {
        let corr = self.corr.map_or("NA".to_string(), |c| format!("{c:?}"));
        format!(
            "crop = {}\ntest_year = {}\nmethod = {}\nearly = {}\nn_counties = {}\nyield_std = {:?}\nrmse = {:?}\nr2 = {:?}\ncorr = {}\n",
            self.crop, self.test_year, self.method, self.early, self.n_counties, self.yield_std, self.rmse, self.r2, corr
        )
    }

    pub fn predictions_csv(&self) -> String {
        let mut out = String::from("county,true,predicted,residual\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{:?},{:?},{:?}", r.county, r.truth, r.predicted, r.residual);
        }
        out
    }

    /// 800×800 scatter of predicted against true yield with the identity line.
    pub fn scatter_svg(&self) -> String {
        const SIZE: f64 = 800.0;
        const PAD: f64 = 60.0;
        let vals = self.records.iter().flat_map(|r| [r.truth, r.predicted]);
        let (mut lo, mut hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !(hi > lo) {
            lo -= 1.0;
            hi += 1.0;
        }
        let margin = 0.05 * (hi - lo);
        let (lo, hi) = (lo - margin, hi + margin);
        let span = SIZE - 2.0 * PAD;
        let x = |v: f64| PAD + (v - lo) / (hi - lo) * span;
        let y = |v: f64| SIZE - PAD - (v - lo) / (hi - lo) * span;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="800" height="800" viewBox="0 0 800 800">"#
        );
        let _ = writeln!(s, r#"<rect width="800" height="800" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<rect x="{PAD}" y="{PAD}" width="{span}" height="{span}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<line class="identity" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="6 4"/>"#,
            x(lo),
            y(lo),
            x(hi),
            y(hi)
        );
        for r in &self.records {
            let _ = writeln!(
                s,
                r#"<circle class="county" cx="{:.2}" cy="{:.2}" r="3" fill="steelblue" fill-opacity="0.7"><title>{}</title></circle>"#,
                x(r.truth),
                y(r.predicted),
                xml_escape(&r.county)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="400" y="785" text-anchor="middle" font-size="16">true yield ({:.1} to {:.1})</text>"#,
            lo, hi
        );
        let _ = writeln!(
            s,
            r#"<text x="20" y="400" text-anchor="middle" font-size="16" transform="rotate(-90 20 400)">predicted yield</text>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="400" y="35" text-anchor="middle" font-size="18">{} {} {}{}: R² {:.3}, RMSE {:.3}</text>"#,
            xml_escape(&self.method),
            self.crop,
            self.test_year,
            if self.early { " early" } else { "" },
            self.r2,
            self.rmse
        );
        s.push_str("</svg>\n");
        s
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Writes `metrics.txt`, `predictions.csv` and `scatter.svg` into `dir`.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        ("metrics.txt", report.metrics_text()),
        ("predictions.csv", report.predictions_csv()),
        ("scatter.svg", report.scatter_svg()),
    ];
    let mut out = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        out.push(p);
    }
    Ok(out)
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.split('#').next().unwrap().trim();
        if t.is_empty() {
            continue;
        }
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| Error::parse(origin, i + 1, format!("expected `key = value`, got `{t}`")))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::parse(origin, i + 1, "empty key"));
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::parse(origin, i + 1, format!("key `{k}` repeated")));
        }
    }
    Ok(out)
}
