use crate::error::{Error, Result};
use crate::layers::N_WEEKS;

/// Accumulated quantities are summed, instantaneous ones averaged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariableKind {
    Flux,
    State,
}

/// Weeks are days `[7k, 7k + 7)`; the remaining one or two days of the year
/// fold into the last week.
pub fn daily_to_weekly(series: &[f64], kind: VariableKind) -> Result<Vec<f64>> {
    if series.len() != 365 && series.len() != 366 {
        return Err(Error::shape(
            "daily_to_weekly",
            format!("expected 365 or 366 daily values, got {}", series.len()),
        ));
    }
    Ok((0..N_WEEKS)
        .map(|w| {
            let end = if w + 1 == N_WEEKS { series.len() } else { 7 * w + 7 };
            let days = &series[7 * w..end];
            let sum: f64 = days.iter().sum();
            match kind {
                VariableKind::Flux => sum,
                VariableKind::State => sum / days.len() as f64,
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DailyReduce {
    Sum,
    Mean,
    Max,
}

impl From<VariableKind> for DailyReduce {
    fn from(k: VariableKind) -> Self {
        match k {
            VariableKind::Flux => DailyReduce::Sum,
            VariableKind::State => DailyReduce::Mean,
        }
    }
}

/// Reduces consecutive blocks of 24 hourly values to one daily value.
pub fn hourly_to_daily(series: &[f64], reduce: DailyReduce) -> Result<Vec<f64>> {
    if series.is_empty() || series.len() % 24 != 0 {
        return Err(Error::shape(
            "hourly_to_daily",
            format!("{} hourly values is not a whole number of days", series.len()),
        ));
    }
    Ok(series
        .chunks_exact(24)
        .map(|d| match reduce {
            DailyReduce::Sum => d.iter().sum(),
            DailyReduce::Mean => d.iter().sum::<f64>() / 24.0,
            DailyReduce::Max => d.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect())
}
