use crate::error::{Error, Result};

fn check_pair(op: &'static str, t: &[f64], p: &[f64]) -> Result<()> {
    if t.is_empty() {
        return Err(Error::Empty(format!("{op} of an empty vector")));
    }
    if t.len() != p.len() {
        return Err(Error::shape(op, format!("{} true values vs {} predictions", t.len(), p.len())));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Root mean squared error in units of `yield_std`.
pub fn rmse(truth: &[f64], pred: &[f64], yield_std: f64) -> Result<f64> {
    check_pair("rmse", truth, pred)?;
    if !(yield_std > 0.0) || !yield_std.is_finite() {
        return Err(Error::Domain {
            op: "rmse",
            detail: format!("yield std must be positive, got {yield_std}"),
        });
    }
    let mse = truth.iter().zip(pred).map(|(t, p)| (t - p) * (t - p)).sum::<f64>() / truth.len() as f64;
    Ok(mse.sqrt() / yield_std)
}

/// Coefficient of determination; negative when worse than the mean.
pub fn r_squared(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair("r_squared", truth, pred)?;
    let m = mean(truth);
    let ss_tot: f64 = truth.iter().map(|t| (t - m) * (t - m)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Domain {
            op: "r_squared",
            detail: "true values have zero variance".into(),
        });
    }
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p) * (t - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Pearson correlation coefficient.
pub fn pearson_corr(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair("pearson_corr", truth, pred)?;
    let (mt, mp) = (mean(truth), mean(pred));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (t, p) in truth.iter().zip(pred) {
        let (a, b) = (t - mt, p - mp);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Domain {
            op: "pearson_corr",
            detail: "zero variance".into(),
        });
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Population standard deviation.
pub fn population_std(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Empty("std of an empty vector".into()));
    }
    let m = mean(v);
    Ok((v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt())
}
