//! Central finite differences for validating analytic gradients.

use rand::Rng;

use super::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;

/// Denominator floor for [`rel_error`]; below this magnitude the comparison is
/// effectively absolute.
pub const REL_FLOOR: f64 = 1e-3;

/// `(f(x + h·e_i) - f(x - h·e_i)) / 2h` for each coordinate in `coords`.
pub fn central_difference<F>(mut f: F, x: &[f64], coords: &[usize], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe)?;
        probe[i] = orig - h;
        let down = f(&probe)?;
        probe[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// `|a - b| / max(|a|, |b|, REL_FLOOR)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| rel_error(*a, *n))
        .fold(0.0, f64::max)
}

/// Compares analytic parameter gradients of the scalar built by `f` with
/// central differences at the listed `(parameter, flat index)` coordinates.
/// Returns the largest relative error.
pub fn check_param_grads<F>(store: &ParamStore, coords: &[(ParamId, usize)], h: f64, f: F) -> Result<f64>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    tape.backward(loss)?;
    let analytic: Vec<f64> = coords
        .iter()
        .map(|&(id, i)| tape.param_grad(id).map_or(0.0, |g| g[i]))
        .collect();
    let mut probe = store.clone();
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tp = Tape::new();
        let l = f(s, &mut tp)?;
        Ok(tp.value(l).item())
    };
    let mut numeric = Vec::with_capacity(coords.len());
    for &(id, i) in coords {
        let orig = store.get(id).data()[i];
        probe.get_mut(id).data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.get_mut(id).data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.get_mut(id).data_mut()[i] = orig;
        numeric.push((up - down) / (2.0 * h));
    }
    Ok(max_rel_error(&analytic, &numeric))
}

/// One coordinate of a finite-difference comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoordCheck {
    pub analytic: f64,
    /// `(f(x + h) - f(x)) / h`
    pub forward: f64,
    /// `(f(x) - f(x - h)) / h`
    pub backward: f64,
}

impl CoordCheck {
    pub fn central(&self) -> f64 {
        0.5 * (self.forward + self.backward)
    }

    /// True when the one-sided slopes disagree by more than `tol`, i.e. a
    /// non-differentiable point lies within `h` of the probe.
    pub fn crosses_kink(&self, tol: f64) -> bool {
        rel_error(self.forward, self.backward) > tol
    }

    /// Error against the central difference; across a kink, against the
    /// closer one-sided slope.
    pub fn error(&self, kink_tol: f64) -> f64 {
        let central = rel_error(self.analytic, self.central());
        if self.crosses_kink(kink_tol) {
            central
                .min(rel_error(self.analytic, self.forward))
                .min(rel_error(self.analytic, self.backward))
        } else {
            central
        }
    }
}

/// Per-coordinate analytic and one-sided numeric derivatives of the scalar
/// built by `f`.
pub fn param_grad_checks<F>(store: &ParamStore, coords: &[(ParamId, usize)], h: f64, f: F) -> Result<Vec<CoordCheck>>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    let f0 = tape.value(loss).item();
    tape.backward(loss)?;
    let mut probe = store.clone();
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tp = Tape::new();
        let l = f(s, &mut tp)?;
        Ok(tp.value(l).item())
    };
    let mut out = Vec::with_capacity(coords.len());
    for &(id, i) in coords {
        let orig = store.get(id).data()[i];
        probe.get_mut(id).data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.get_mut(id).data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.get_mut(id).data_mut()[i] = orig;
        out.push(CoordCheck {
            analytic: tape.param_grad(id).map_or(0.0, |g| g[i]),
            forward: (up - f0) / h,
            backward: (f0 - down) / h,
        });
    }
    Ok(out)
}

/// Picks `per_param` random flat indices from every parameter.
pub fn sample_coords<R: Rng>(store: &ParamStore, per_param: usize, rng: &mut R) -> Vec<(ParamId, usize)> {
    store
        .ids()
        .flat_map(|id| {
            let n = store.get(id).numel();
            (0..per_param.min(n)).map(move |_| id).collect::<Vec<_>>()
        })
        .map(|id| (id, rng.gen_range(0..store.get(id).numel())))
        .collect()
}
