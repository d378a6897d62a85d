use std::collections::BTreeMap;

use crate::dataset::{Dataset, YearFeatures, YearSplit, WEATHER_OFFSET};
use crate::error::{Error, Result};
use crate::layers::{N_LAND, N_WEATHER, N_WEEKS};

/// First masked week (zero-based); week 22 begins in early June.
pub const EARLY_CUTOFF_WEEK: usize = 22;

const N_WEEKLY: usize = (N_WEATHER + N_LAND) * N_WEEKS;

/// Replacement values for weekly channels from `cutoff_week` onward: each
/// county's per-channel, per-week mean over the training years.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskingPlan {
    pub cutoff_week: usize,
    /// County id → `[(N_WEATHER + N_LAND) × 52]` means, NaN where a cell was
    /// never observed.
    pub means: BTreeMap<String, Vec<f64>>,
}

impl MaskingPlan {
    /// Means over `split.train_years` of the stored (unnormalized) weekly
    /// values; missing cells are skipped.
    pub fn from_training(ds: &Dataset, split: &YearSplit, cutoff_week: usize) -> Result<Self> {
        if cutoff_week > N_WEEKS {
            return Err(Error::InvalidArgument(format!("cutoff week {cutoff_week} beyond {N_WEEKS}")));
        }
        let mut acc: BTreeMap<&str, (Vec<f64>, Vec<u32>)> = BTreeMap::new();
        for r in ds.records().filter(|r| split.is_train(r.year)) {
            let (sum, cnt) = acc
                .entry(r.county.as_str())
                .or_insert_with(|| (vec![0.0; N_WEEKLY], vec![0; N_WEEKLY]));
            for (i, v) in r.values[WEATHER_OFFSET..WEATHER_OFFSET + N_WEEKLY].iter().enumerate() {
                if !v.is_nan() {
                    sum[i] += v;
                    cnt[i] += 1;
                }
            }
        }
        let means = acc
            .into_iter()
            .map(|(c, (s, n))| {
                let m = s.iter().zip(&n).map(|(s, &n)| if n == 0 { f64::NAN } else { s / n as f64 }).collect();
                (c.to_string(), m)
            })
            .collect();
        Ok(MaskingPlan { cutoff_week, means })
    }
}

/// Weeks `≥ cutoff_week` of every weather and land-surface channel take the
/// county's training mean; everything else is copied bit for bit.
pub fn apply_early_mask(features: &YearFeatures, plan: &MaskingPlan) -> Result<YearFeatures> {
    let means = plan
        .means
        .get(&features.county)
        .ok_or_else(|| Error::UnknownNode(features.county.clone()))?;
    let mut out = features.clone();
    for ch in 0..N_WEATHER + N_LAND {
        for w in plan.cutoff_week.min(N_WEEKS)..N_WEEKS {
            let i = ch * N_WEEKS + w;
            out.values[WEATHER_OFFSET + i] = means[i];
        }
    }
    Ok(out)
}

/// Masks every record of `year`.
pub fn mask_year(ds: &Dataset, plan: &MaskingPlan, year: i32) -> Result<Dataset> {
    let mut out = ds.clone();
    for c in 0..ds.n_counties() {
        if let Some(f) = ds.features(c, year) {
            let masked = apply_early_mask(f, plan)?;
            *out.features_mut(c, year).expect("same layout") = masked;
        }
    }
    Ok(out)
}
