use std::fmt::Write as _;
use std::time::Instant;

use super::metrics::population_std;
use super::protocol::evaluate;
use crate::dataset::{Dataset, YearSplit};
use crate::error::Error;
use crate::models::{train, ModelKind, ModelSpec};

/// Scores of one (method, seed) run.
#[derive(Clone, Debug, PartialEq)]
pub struct CellScores {
    pub rmse: f64,
    pub r2: f64,
    pub corr: Option<f64>,
    pub best_epoch: usize,
    /// Test R² and RMSE under early-season masking, when requested.
    pub early: Option<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub kind: ModelKind,
    pub seed: u64,
    pub seconds: f64,
    /// Failure message for runs that errored.
    pub outcome: Result<CellScores, String>,
}

fn run_cell(spec: &ModelSpec, ds: &Dataset, split: &YearSplit, early: bool) -> Result<CellScores, Error> {
    let ck = train(spec, ds, split)?.checkpoint;
    let r = evaluate(&ck, ds, false)?;
    let early = if early {
        let m = evaluate(&ck, ds, true)?;
        Some((m.r2, m.rmse))
    } else {
        None
    };
    Ok(CellScores {
        rmse: r.rmse,
        r2: r.r2,
        corr: r.corr,
        best_epoch: ck.best_epoch,
        early,
    })
}

/// Trains and evaluates every spec under every seed. Failed runs are kept
/// as failures; the rest of the matrix still runs.
pub fn run_benchmark(
    ds: &Dataset,
    specs: &[ModelSpec],
    seeds: &[u64],
    test_year: i32,
    early: bool,
    mut on_cell: impl FnMut(&CellResult),
) -> Result<Vec<CellResult>, Error> {
    let split = YearSplit::new(test_year, &ds.years())?;
    let mut out = Vec::with_capacity(specs.len() * seeds.len());
    for spec in specs {
        for &seed in seeds {
            let mut s = spec.clone();
            s.seed = seed;
            let t0 = Instant::now();
            let outcome = run_cell(&s, ds, &split, early).map_err(|e| e.to_string());
            let cell = CellResult {
                kind: s.kind,
                seed,
                seconds: t0.elapsed().as_secs_f64(),
                outcome,
            };
            on_cell(&cell);
            out.push(cell);
        }
    }
    Ok(out)
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(v: &[f64]) -> Option<Self> {
        let std = population_std(v).ok()?;
        Some(MeanStd {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            std,
        })
    }
}

/// One method's aggregate over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub kind: ModelKind,
    pub runs: usize,
    pub failed: usize,
    pub rmse: Option<MeanStd>,
    pub r2: Option<MeanStd>,
    pub corr: Option<MeanStd>,
    pub early_r2: Option<MeanStd>,
}

impl TableRow {
    pub fn group(&self) -> &'static str {
        if self.kind.is_five_year() {
            "5y"
        } else {
            "1y"
        }
    }
}

/// Rows in first-appearance order of each method.
pub fn summarize(cells: &[CellResult]) -> Vec<TableRow> {
    let mut kinds: Vec<ModelKind> = Vec::new();
    for c in cells {
        if !kinds.contains(&c.kind) {
            kinds.push(c.kind);
        }
    }
    kinds
        .into_iter()
        .map(|kind| {
            let mine: Vec<&CellResult> = cells.iter().filter(|c| c.kind == kind).collect();
            let ok: Vec<&CellScores> = mine.iter().filter_map(|c| c.outcome.as_ref().ok()).collect();
            let col = |f: &dyn Fn(&CellScores) -> Option<f64>| -> Option<MeanStd> {
                let v: Option<Vec<f64>> = ok.iter().map(|s| f(s)).collect();
                v.and_then(|v| MeanStd::of(&v))
            };
            TableRow {
                kind,
                runs: mine.len(),
                failed: mine.len() - ok.len(),
                rmse: col(&|s| Some(s.rmse)),
                r2: col(&|s| Some(s.r2)),
                corr: col(&|s| s.corr),
                early_r2: col(&|s| s.early.map(|e| e.0)),
            }
        })
        .collect()
}

fn cells(m: Option<MeanStd>) -> [String; 2] {
    match m {
        Some(m) => [format!("{:.6}", m.mean), format!("{:.6}", m.std)],
        None => ["NA".into(), "NA".into()],
    }
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = String::from(
        "group,method,runs,failed,rmse_mean,rmse_std,r2_mean,r2_std,corr_mean,corr_std,early_r2_mean,early_r2_std\n",
    );
    for r in rows {
        let cols: Vec<String> = [r.rmse, r.r2, r.corr, r.early_r2].into_iter().flat_map(cells).collect();
        let _ = writeln!(out, "{},{},{},{},{}", r.group(), r.kind, r.runs, r.failed, cols.join(","));
    }
    out
}

/// Aligned text table, 1y methods first, `mean ± std` per metric.
pub fn table_text(rows: &[TableRow]) -> String {
    let early = rows.iter().any(|r| r.early_r2.is_some());
    let pm = |m: Option<MeanStd>| m.map_or("NA".to_string(), |m| format!("{:.4} ± {:.4}", m.mean, m.std));
    let mut out = String::new();
    let mut head = format!("{:<12} {:>5} {:>19} {:>19} {:>19}", "method", "runs", "RMSE", "R2", "Corr");
    if early {
        let _ = write!(head, " {:>19}", "R2 early");
    }
    for group in ["1y", "5y"] {
        let mine: Vec<&TableRow> = rows.iter().filter(|r| r.group() == group).collect();
        if mine.is_empty() {
            continue;
        }
        let _ = writeln!(out, "{group} methods");
        let _ = writeln!(out, "{head}");
        for r in mine {
            let runs = if r.failed > 0 {
                format!("{}/{}", r.runs - r.failed, r.runs)
            } else {
                r.runs.to_string()
            };
            let _ = write!(
                out,
                "{:<12} {:>5} {:>19} {:>19} {:>19}",
                r.kind.as_str(),
                runs,
                pm(r.rmse),
                pm(r.r2),
                pm(r.corr)
            );
            if early {
                let _ = write!(out, " {:>19}", pm(r.early_r2));
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
