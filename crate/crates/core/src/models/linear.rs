use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Smallest accepted squared Cholesky pivot relative to the largest diagonal entry.
const RIDGE_PIVOT_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinearKind {
    Ridge,
    Lasso,
}

/// `ŷ = intercept + Σ coef_j (x_j - x_mean_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub kind: LinearKind,
    pub coef: Vec<f64>,
    pub x_mean: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    /// False when coordinate descent hit its iteration cap.
    pub converged: bool,
    /// Lasso objective after each coordinate sweep (empty for ridge).
    pub objective: Vec<f64>,
}

impl LinearModel {
    pub fn n_features(&self) -> usize {
        self.coef.len()
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.coef.len() {
            return Err(Error::shape(
                "linear predict",
                format!("{} features, model has {}", x.len(), self.coef.len()),
            ));
        }
        let mut s = self.intercept;
        for ((b, m), v) in self.coef.iter().zip(&self.x_mean).zip(x) {
            s += b * (v - m);
        }
        Ok(s)
    }

    /// Predictions for `n` stacked rows.
    pub fn predict(&self, x: &[f64], n: usize) -> Result<Vec<f64>> {
        let p = self.coef.len();
        if x.len() != n * p {
            return Err(Error::shape("linear predict", format!("{} values for {n} rows of {p}", x.len())));
        }
        x.chunks_exact(p.max(1)).take(n).map(|r| self.predict_one(r)).collect()
    }

    pub fn nonzero(&self) -> usize {
        self.coef.iter().filter(|c| **c != 0.0).count()
    }
}

struct Centered {
    xc: DMatrix<f64>,
    yc: DVector<f64>,
    x_mean: Vec<f64>,
    y_mean: f64,
}

fn center(x: &[f64], y: &[f64], n: usize, p: usize) -> Result<Centered> {
    if n == 0 {
        return Err(Error::Empty("linear fit without samples".into()));
    }
    if x.len() != n * p || y.len() != n {
        return Err(Error::shape(
            "linear fit",
            format!("{} values for {n}×{p} design, {} targets", x.len(), y.len()),
        ));
    }
    if let Some(i) = x.iter().chain(y).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("linear fit input at position {i}"),
        });
    }
    let mut x_mean = vec![0.0; p];
    for r in x.chunks_exact(p.max(1)) {
        for (m, v) in x_mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    x_mean.iter_mut().for_each(|m| *m /= n as f64);
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, p, |i, j| x[i * p + j] - x_mean[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    Ok(Centered { xc, yc, x_mean, y_mean })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be finite and ≥ 0, got {lambda}")));
    }
    Ok(())
}

/// Ridge regression on centered data: `(XᵀX + λI)β = Xᵀy`, intercept `mean(y)`.
/// `x` is row-major `[n × p]`.
pub fn fit_ridge(x: &[f64], y: &[f64], n: usize, p: usize, lambda: f64) -> Result<LinearModel> {
    check_lambda(lambda)?;
    let c = center(x, y, n, p)?;
    let mut a = c.xc.tr_mul(&c.xc);
    for j in 0..p {
        a[(j, j)] += lambda;
    }
    let rhs = c.xc.tr_mul(&c.yc);
    let singular = || Error::Singular(format!("XᵀX + {lambda}·I is not positive definite; use lambda > 0"));
    let scale = (0..p).map(|j| a[(j, j)]).fold(0.0, f64::max);
    let chol = a.cholesky().ok_or_else(singular)?;
    let l = chol.l_dirty();
    if p > 0 && (0..p).any(|j| l[(j, j)] * l[(j, j)] <= RIDGE_PIVOT_TOL * scale) {
        return Err(singular());
    }
    let beta = chol.solve(&rhs);
    let coef: Vec<f64> = beta.iter().copied().collect();
    if coef.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("ridge solution is not finite; use lambda > 0".into()));
    }
    Ok(LinearModel {
        kind: LinearKind::Ridge,
        coef,
        x_mean: c.x_mean,
        intercept: c.y_mean,
        lambda,
        converged: true,
        objective: Vec::new(),
    })
}

/// `(1/2n)‖y_c - X_c β‖² + λ‖β‖₁` on centered data.
pub fn lasso_objective(model: &LinearModel, x: &[f64], y: &[f64], n: usize) -> Result<f64> {
    let pred = model.predict(x, n)?;
    let rss: f64 = pred.iter().zip(y).map(|(p, t)| (t - p) * (t - p)).sum();
    let l1: f64 = model.coef.iter().map(|b| b.abs()).sum();
    Ok(rss / (2.0 * n as f64) + model.lambda * l1)
}

fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

/// Lasso by cyclic coordinate descent with soft-thresholding on the Gram
/// matrix. Stops when the largest coefficient change in a sweep is below
/// `tol`; hitting `max_iter` sweeps clears `converged` instead of failing.
pub fn fit_lasso(
    x: &[f64],
    y: &[f64],
    n: usize,
    p: usize,
    lambda: f64,
    max_iter: usize,
    tol: f64,
    warm_start: Option<&[f64]>,
) -> Result<LinearModel> {
    check_lambda(lambda)?;
    let c = center(x, y, n, p)?;
    let nf = n as f64;
    let gram = c.xc.tr_mul(&c.xc) / nf;
    let xty: Vec<f64> = (c.xc.tr_mul(&c.yc) / nf).iter().copied().collect();
    let yy = c.yc.dot(&c.yc) / nf;
    let mut beta = match warm_start {
        Some(w) if w.len() == p => w.to_vec(),
        Some(w) => return Err(Error::shape("fit_lasso", format!("warm start of length {} for {p} features", w.len()))),
        None => vec![0.0; p],
    };
    // q = Gβ
    let mut q: Vec<f64> = (0..p).map(|j| (0..p).map(|k| gram[(j, k)] * beta[k]).sum()).collect();
    let objective_of = |beta: &[f64], q: &[f64]| {
        let bqb: f64 = beta.iter().zip(q).map(|(b, v)| b * v).sum();
        let bxy: f64 = beta.iter().zip(&xty).map(|(b, v)| b * v).sum();
        0.5 * (yy - 2.0 * bxy + bqb) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    };
    let mut objective = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        let mut max_delta: f64 = 0.0;
        for j in 0..p {
            let gjj = gram[(j, j)];
            let old = beta[j];
            let new = if gjj <= 0.0 {
                0.0
            } else {
                let rho = xty[j] - (q[j] - gjj * old);
                soft_threshold(rho, lambda) / gjj
            };
            let d = new - old;
            if d != 0.0 {
                beta[j] = new;
                for (k, qk) in q.iter_mut().enumerate() {
                    *qk += gram[(k, j)] * d;
                }
                max_delta = max_delta.max(d.abs());
            }
        }
        objective.push(objective_of(&beta, &q));
        if max_delta < tol {
            converged = true;
            break;
        }
    }
    Ok(LinearModel {
        kind: LinearKind::Lasso,
        coef: beta,
        x_mean: c.x_mean,
        intercept: c.y_mean,
        lambda,
        converged,
        objective,
    })
}
