use std::collections::BTreeMap;

use super::{channel_of, Crop, Dataset, YearSplit, N_CHANNELS, PREV_YIELD_INDEX};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
    /// Zero variance (or no observations) in the training years; `std` is 1.
    pub constant: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct YieldStats {
    pub mean: f64,
    pub std: f64,
}

impl YieldStats {
    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn destandardize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Per-channel z-score statistics and per-crop yield statistics, computed
/// from training years only.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    /// One entry per stored channel (the derived yield slot is excluded).
    pub channels: Vec<ChannelStats>,
    pub yields: BTreeMap<Crop, YieldStats>,
    /// The years the statistics were computed from.
    pub source_years: Vec<i32>,
}

fn channel_stats(mean: f64, centered_sq: f64, n: usize) -> ChannelStats {
    if n == 0 {
        return ChannelStats { mean: 0.0, std: 1.0, constant: true };
    }
    let std = (centered_sq / n as f64).sqrt();
    if std <= 1e-12 * mean.abs().max(1.0) {
        ChannelStats { mean, std: 1.0, constant: true }
    } else {
        ChannelStats { mean, std, constant: false }
    }
}

impl NormStats {
    pub fn compute(ds: &Dataset, split: &YearSplit) -> Result<Self> {
        let n_stored = N_CHANNELS - 1;
        // two passes (mean, then centered squares) for accuracy
        let mut sum = vec![0.0; n_stored];
        let mut cnt = vec![0usize; n_stored];
        let rows: Vec<_> = ds.records().filter(|r| split.is_train(r.year)).collect();
        for r in &rows {
            for (i, &v) in r.values[..PREV_YIELD_INDEX].iter().enumerate() {
                if !v.is_nan() {
                    let c = channel_of(i);
                    sum[c] += v;
                    cnt[c] += 1;
                }
            }
        }
        let means: Vec<f64> = sum.iter().zip(&cnt).map(|(s, &n)| if n > 0 { s / n as f64 } else { 0.0 }).collect();
        let mut sq = vec![0.0; n_stored];
        for r in &rows {
            for (i, &v) in r.values[..PREV_YIELD_INDEX].iter().enumerate() {
                if !v.is_nan() {
                    let c = channel_of(i);
                    sq[c] += (v - means[c]) * (v - means[c]);
                }
            }
        }
        let channels = (0..n_stored)
            .map(|c| channel_stats(means[c], sq[c], cnt[c]))
            .collect();
        let mut yields = BTreeMap::new();
        for crop in Crop::ALL {
            let v: Vec<f64> = ds
                .yields
                .iter()
                .filter(|e| e.2 == crop && split.is_train(e.1))
                .map(|e| e.3)
                .collect();
            if v.is_empty() {
                continue;
            }
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt();
            yields.insert(crop, YieldStats { mean: m, std: if sd > 0.0 { sd } else { 1.0 } });
        }
        Ok(NormStats {
            channels,
            yields,
            source_years: split.train_years.clone(),
        })
    }

    pub fn yield_stats(&self, crop: Crop) -> Result<YieldStats> {
        self.yields
            .get(&crop)
            .copied()
            .ok_or_else(|| Error::Empty(format!("no {crop} yields in the training years")))
    }

    /// z-scores every stored cell in place; missing cells become 0 (the
    /// training mean).
    pub fn apply(&self, ds: &Dataset) -> Dataset {
        let mut out = ds.clone();
        let years = out.years();
        for c in 0..out.n_counties() {
            for &y in &years {
                if let Some(r) = out.features_mut(c, y) {
                    for (i, v) in r.values[..PREV_YIELD_INDEX].iter_mut().enumerate() {
                        let s = self.channels[channel_of(i)];
                        *v = if v.is_nan() { 0.0 } else { (*v - s.mean) / s.std };
                    }
                }
            }
        }
        out
    }
}

/// Normalizes with statistics drawn from the split's training years.
pub fn normalize(ds: &Dataset, split: &YearSplit) -> Result<(Dataset, NormStats)> {
    let stats = NormStats::compute(ds, split)?;
    if stats.source_years.iter().any(|&y| y >= split.val_year) {
        return Err(Error::InvalidArgument("normalization statistics would see held-out years".into()));
    }
    Ok((stats.apply(ds), stats))
}
