use super::mask::{mask_year, MaskingPlan, EARLY_CUTOFF_WEEK};
use super::report::EvalReport;
use crate::dataset::{Dataset, YearSplit};
use crate::error::Result;
use crate::models::Checkpoint;

/// Scores `ck` on its test year: every labeled county with a full window is
/// predicted; unlabeled counties still feed graph models as neighbors.
/// With `early`, test-year weekly features from the cutoff week onward are
/// replaced by each county's training-year means before prediction.
pub fn evaluate(ck: &Checkpoint, ds: &Dataset, early: bool) -> Result<EvalReport> {
    let plan = if early {
        let split = YearSplit::new(ck.test_year, &ds.years())?;
        Some(MaskingPlan::from_training(ds, &split, EARLY_CUTOFF_WEEK)?)
    } else {
        None
    };
    evaluate_with(ck, ds, plan.as_ref())
}

pub fn evaluate_with(ck: &Checkpoint, ds: &Dataset, plan: Option<&MaskingPlan>) -> Result<EvalReport> {
    let crop = ck.spec.crop;
    let year = ck.test_year;
    let yield_std = ds.yield_std_all_years(crop)?;
    let masked;
    let src = match plan {
        Some(p) => {
            masked = mask_year(ds, p, year)?;
            &masked
        }
        None => ds,
    };
    let data = ck.prepare(src)?;
    let (samples, _) = data.samples(&[year], ck.spec.history_years());
    let graph = ck.spec.kind.is_graph().then_some(&data.ds.graph);
    let pred = if samples.is_empty() {
        Vec::new()
    } else {
        ck.predict(&data, &samples, graph)?
    };
    let ys = ck.norm.yield_stats(crop)?;
    let rows = samples
        .iter()
        .zip(pred)
        .map(|(&(c, y), p)| {
            let truth = data.raw_label(c, y).expect("samples are labeled");
            (data.ds.graph.id(c).to_string(), truth, ys.destandardize(p))
        })
        .collect();
    EvalReport::from_records(crop, year, ck.spec.kind.as_str(), plan.is_some(), yield_std, rows)
}
