use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use yieldgraph::dataset::{generate_synthetic, load_dataset, save_dataset, Crop, Dataset, SynthConfig, YearSplit};
use yieldgraph::eval::{emit_report, evaluate, run_benchmark, summarize, table_csv, table_text};
use yieldgraph::geo::aggregate_files;
use yieldgraph::optim::LrSchedule;
use yieldgraph::models::{train_with_progress, Checkpoint, ModelKind, ModelSpec};

use crate::config::{prepare_out_dir, write, CliError, CliResult, RunConfig};

/// Shared flags of every subcommand.
pub struct Common {
    pub config: Option<PathBuf>,
    pub force: bool,
    pub overrides: Vec<String>,
}

fn finish(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    write(&out.join("config.txt"), cfg.echo())
}

pub const AGGREGATE_KEYS: [(&str, &str); 6] = [
    ("raster_dir", ""),
    ("weights", ""),
    ("manifest", ""),
    ("landcover", ""),
    ("year", ""),
    ("out", ""),
];

pub fn aggregate(c: &Common) -> CliResult<()> {
    let cfg = RunConfig::resolve(
        &AGGREGATE_KEYS,
        |k| AGGREGATE_KEYS.iter().any(|d| d.0 == k),
        c.config.as_deref(),
        &c.overrides,
    )?;
    let year: i32 = cfg.parse("year")?;
    let landcover = cfg.get("landcover").map(PathBuf::from);
    let text = aggregate_files(
        &cfg.path("raster_dir")?,
        &cfg.path("weights")?,
        &cfg.path("manifest")?,
        landcover.as_deref(),
        year,
    )?;
    let out = cfg.path("out")?;
    prepare_out_dir(&out, c.force)?;
    write(&out.join("features.csv"), text)?;
    finish(&cfg, &out)?;
    eprintln!("wrote {}", out.join("features.csv").display());
    Ok(())
}

pub const SYNTH_KEYS: [(&str, &str); 8] = [
    ("n_counties", "100"),
    ("n_years", "20"),
    ("seed", "7"),
    ("first_year", "2000"),
    ("missing_yield_frac", "0.05"),
    ("unlabeled_counties", "3"),
    ("missing_cell_frac", "0.0005"),
    ("out", ""),
];

pub fn synth(c: &Common) -> CliResult<()> {
    let cfg = RunConfig::resolve(&SYNTH_KEYS, |k| SYNTH_KEYS.iter().any(|d| d.0 == k), c.config.as_deref(), &c.overrides)?;
    let mut sc = SynthConfig::new(cfg.parse("n_counties")?, cfg.parse("n_years")?, cfg.parse("seed")?);
    sc.first_year = cfg.parse("first_year")?;
    sc.missing_yield_frac = cfg.parse("missing_yield_frac")?;
    sc.unlabeled_counties = cfg.parse("unlabeled_counties")?;
    sc.missing_cell_frac = cfg.parse("missing_cell_frac")?;
    let ds = generate_synthetic(&sc)?;
    let out = cfg.path("out")?;
    prepare_out_dir(&out, c.force)?;
    save_dataset(&ds, &out)?;
    finish(&cfg, &out)?;
    eprintln!(
        "wrote {} counties × {} years ({} edges) to {}",
        ds.n_counties(),
        ds.years().len(),
        ds.graph.num_edges(),
        out.display()
    );
    Ok(())
}

fn load_data_dir(dir: &Path) -> CliResult<Dataset> {
    Ok(load_dataset(
        &dir.join("features.csv"),
        &dir.join("yields.csv"),
        &dir.join("adjacency.tsv"),
    )?)
}

fn test_year(cfg: &RunConfig, ds: &Dataset) -> CliResult<i32> {
    match cfg.get("test_year") {
        Some(_) => cfg.parse("test_year"),
        None => Ok(ds.last_year()),
    }
}

fn base_spec(preset: &str, kind: ModelKind, crop: Crop, year: i32) -> CliResult<ModelSpec> {
    match preset {
        "published" => Ok(ModelSpec::published(kind, crop, year)),
        "desk" => Ok(ModelSpec::desk_scale(kind, crop, year)),
        p => Err(CliError::input(format!("unknown preset `{p}` (published or desk)"))),
    }
}

const TRAIN_KEYS: [(&str, &str); 6] = [
    ("data", ""),
    ("test_year", ""),
    ("preset", "published"),
    ("crop", "corn"),
    ("kind", ""),
    ("out", ""),
];

pub fn train(c: &Common) -> CliResult<()> {
    let known = |k: &str| TRAIN_KEYS.iter().any(|d| d.0 == k) || ModelSpec::KEYS.contains(&k);
    let mut cfg = RunConfig::resolve(&TRAIN_KEYS, known, c.config.as_deref(), &c.overrides)?;
    let ds = load_data_dir(&cfg.path("data")?)?;
    let year = test_year(&cfg, &ds)?;
    let kind: ModelKind = cfg.require("kind")?.parse()?;
    let crop: Crop = cfg.require("crop")?.parse()?;
    let mut spec = base_spec(cfg.require("preset")?, kind, crop, year)?;
    let explicit: Vec<(String, String)> = cfg
        .iter()
        .filter(|(k, _)| ModelSpec::KEYS.contains(k) && !matches!(*k, "kind" | "crop"))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    for (k, v) in explicit {
        spec.set(&k, &v)?;
    }
    spec.validate()?;
    cfg.set("test_year", year.to_string());
    for (k, v) in spec.to_kv() {
        cfg.set(k, v);
    }
    let split = YearSplit::new(year, &ds.years())?;
    let out = cfg.path("out")?;
    prepare_out_dir(&out, c.force)?;
    eprintln!(
        "training {kind} for {crop}: {} train years, validation {}, test {year}",
        split.train_years.len(),
        split.val_year
    );
    let trained = train_with_progress(&spec, &ds, &split, |r| {
        eprintln!(
            "epoch {:>4}  lr {:.3e}  train {:.5}  val {:.5}  val_rmse {:.5}",
            r.epoch, r.lr, r.train_loss, r.val_loss, r.val_rmse
        )
    })?;
    let ck = trained.checkpoint;
    ck.save(&out.join("checkpoint.ckpt"))?;
    let mut log = String::from("epoch,lr,train_loss,val_loss,val_rmse\n");
    for r in &ck.history {
        let _ = writeln!(log, "{},{:?},{:?},{:?},{:?}", r.epoch, r.lr, r.train_loss, r.val_loss, r.val_rmse);
    }
    write(&out.join("history.csv"), log)?;
    finish(&cfg, &out)?;
    eprintln!(
        "best epoch {} (val rmse {:.5}); skipped windows: train {}, val {}",
        ck.best_epoch,
        ck.history[ck.best_epoch].val_rmse,
        trained.skipped_train.missing_window,
        trained.skipped_val.missing_window
    );
    Ok(())
}

pub const EVALUATE_KEYS: [(&str, &str); 4] = [("checkpoint", ""), ("data", ""), ("early", "false"), ("out", "")];

pub fn evaluate_cmd(c: &Common) -> CliResult<()> {
    let cfg = RunConfig::resolve(
        &EVALUATE_KEYS,
        |k| EVALUATE_KEYS.iter().any(|d| d.0 == k),
        c.config.as_deref(),
        &c.overrides,
    )?;
    let ck = Checkpoint::load(&cfg.path("checkpoint")?)?;
    let ds = load_data_dir(&cfg.path("data")?)?;
    let report = evaluate(&ck, &ds, cfg.flag("early")?)?;
    let out = cfg.path("out")?;
    prepare_out_dir(&out, c.force)?;
    emit_report(&report, &out)?;
    finish(&cfg, &out)?;
    let corr = report.corr.map_or("NA".into(), |v| format!("{v:.4}"));
    println!(
        "{} {} {}{}: rmse {:.4}  r2 {:.4}  corr {corr}  ({} counties)",
        report.method,
        report.crop,
        report.test_year,
        if report.early { " early" } else { "" },
        report.rmse,
        report.r2,
        report.n_counties
    );
    Ok(())
}

const BENCHMARK_KEYS: [(&str, &str); 9] = [
    ("data", ""),
    ("kinds", "ridge-1y,lasso-1y,gru-1y,lstm-1y,cnn-1y,gnn-1y,gru-5y,lstm-5y,cnn-rnn-5y,gnn-rnn-5y"),
    ("seeds", "0,1,2"),
    ("test_year", ""),
    ("crop", "corn"),
    ("preset", "desk"),
    ("epochs", ""),
    ("early", "true"),
    ("out", ""),
];

fn list<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<Vec<T>> {
    let items: Vec<T> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| CliError::input(format!("setting `{key}`: cannot parse `{s}`"))))
        .collect::<CliResult<_>>()?;
    if items.is_empty() {
        return Err(CliError::input(format!("setting `{key}` is empty")));
    }
    Ok(items)
}

pub fn benchmark(c: &Common) -> CliResult<()> {
    let mut cfg = RunConfig::resolve(
        &BENCHMARK_KEYS,
        |k| BENCHMARK_KEYS.iter().any(|d| d.0 == k),
        c.config.as_deref(),
        &c.overrides,
    )?;
    let ds = load_data_dir(&cfg.path("data")?)?;
    let year = test_year(&cfg, &ds)?;
    cfg.set("test_year", year.to_string());
    let crop: Crop = cfg.require("crop")?.parse()?;
    let kinds: Vec<ModelKind> = list("kinds", cfg.require("kinds")?)?;
    let seeds: Vec<u64> = list("seeds", cfg.require("seeds")?)?;
    let epochs: Option<usize> = cfg.get("epochs").map(|_| cfg.parse("epochs")).transpose()?;
    let preset = cfg.require("preset")?.to_string();
    let specs = kinds
        .iter()
        .map(|&k| {
            let mut s = base_spec(&preset, k, crop, year)?;
            if let (Some(e), false) = (epochs, k.is_linear()) {
                s.hyper.epochs = e;
                if let LrSchedule::Cosine { t0, .. } = &mut s.hyper.schedule {
                    *t0 = e;
                }
            }
            Ok(s)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let out = cfg.path("out")?;
    prepare_out_dir(&out, c.force)?;
    let early = cfg.flag("early")?;
    let cells = run_benchmark(&ds, &specs, &seeds, year, early, |cell| match &cell.outcome {
        Ok(s) => eprintln!(
            "{:<12} seed {:<3} r2 {:.4}  rmse {:.4}  best epoch {:<4} {:.1}s",
            cell.kind.as_str(),
            cell.seed,
            s.r2,
            s.rmse,
            s.best_epoch,
            cell.seconds
        ),
        Err(e) => eprintln!("{:<12} seed {:<3} FAILED: {e}", cell.kind.as_str(), cell.seed),
    })?;
    let mut runs = String::from("method,seed,status,rmse,r2,corr,early_r2,early_rmse,best_epoch\n");
    let na = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:?}"));
    for cell in &cells {
        match &cell.outcome {
            Ok(s) => {
                let _ = writeln!(
                    runs,
                    "{},{},ok,{:?},{:?},{},{},{},{}",
                    cell.kind,
                    cell.seed,
                    s.rmse,
                    s.r2,
                    na(s.corr),
                    na(s.early.map(|e| e.0)),
                    na(s.early.map(|e| e.1)),
                    s.best_epoch
                );
            }
            Err(_) => {
                let _ = writeln!(runs, "{},{},failed,NA,NA,NA,NA,NA,NA", cell.kind, cell.seed);
            }
        }
    }
    let rows = summarize(&cells);
    write(&out.join("runs.csv"), runs)?;
    write(&out.join("table.csv"), table_csv(&rows))?;
    let text = table_text(&rows);
    write(&out.join("table.txt"), &text)?;
    finish(&cfg, &out)?;
    print!("{text}");
    Ok(())
}
