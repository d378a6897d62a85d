//! Loss, optimizer and learning-rate schedules.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Mean log-cosh residual over the unmasked elements of two `[batch]` vectors.
///
/// `mask[i] == true` keeps element `i`. Masked elements contribute neither
/// loss nor gradient.
pub fn logcosh_loss(tape: &mut Tape, pred: Var, target: Var, mask: &[bool]) -> Result<Var> {
    let (ps, ts) = (tape.shape(pred), tape.shape(target));
    if ps != ts || ps.len() != 1 || ps[0] != mask.len() {
        return Err(Error::shape(
            "logcosh_loss",
            format!("pred {ps:?}, target {ts:?}, mask [{}]", mask.len()),
        ));
    }
    let kept = mask.iter().filter(|&&m| m).count();
    if kept == 0 {
        return Err(Error::Empty("logcosh_loss: every element is masked".into()));
    }
    let w = 1.0 / kept as f64;
    let weights: Vec<f64> = mask.iter().map(|&m| if m { w } else { 0.0 }).collect();
    let r = tape.sub(pred, target)?;
    let l = tape.log_cosh(r)?;
    let wv = tape.constant(Tensor::new(vec![mask.len()], weights)?);
    let lw = tape.mul(l, wv)?;
    tape.sum(lw)
}

/// Adam with L2 regularization folded into the gradient.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step_count: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update from the parameter gradients accumulated on `tape`.
    /// Parameters the tape never touched are left alone.
    pub fn step(&mut self, store: &mut ParamStore, tape: &Tape) -> Result<()> {
        let grads: Vec<Option<&[f64]>> = store.ids().map(|id| tape.param_grad(id)).collect();
        self.apply(store, &grads)
    }

    /// Applies one update from explicit per-parameter gradients (indexed like
    /// the store). Nothing is modified if any gradient is non-finite.
    pub fn apply(&mut self, store: &mut ParamStore, grads: &[Option<&[f64]>]) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::InvalidArgument(format!(
                "adam: {} gradients for {} parameters (state sized for {})",
                grads.len(),
                store.len(),
                self.m.len()
            )));
        }
        for (id, g) in store.ids().zip(grads) {
            if let Some(g) = g {
                if g.len() != store.get(id).numel() {
                    return Err(Error::shape("adam_step", format!("gradient length for {}", store.name(id))));
                }
                if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        context: format!("gradient of {}[{i}]", store.name(id)),
                    });
                }
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<ParamId> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let Some(g) = grads[k] else { continue };
            let p = store.get_mut(id).data_mut();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let gi = g[i] + self.weight_decay * p[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// `lr_max · gamma^floor(epoch / period)`
    Step { lr_max: f64, period: usize, gamma: f64 },
    /// Cosine annealing with warm restarts every `t0` epochs.
    Cosine { lr_max: f64, t0: usize, eta_min: f64 },
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Step { lr_max, period, gamma } => lr_max * gamma.powi((epoch / period.max(1)) as i32),
            LrSchedule::Cosine { lr_max, t0, eta_min } => {
                let phase = (epoch % t0.max(1)) as f64 / t0.max(1) as f64;
                eta_min + (lr_max - eta_min) * (1.0 + (PI * phase).cos()) / 2.0
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::Constant { lr } => lr > 0.0,
            LrSchedule::Step { lr_max, period, gamma } => lr_max > 0.0 && period > 0 && gamma > 0.0,
            LrSchedule::Cosine { lr_max, t0, eta_min } => eta_min > 0.0 && lr_max >= eta_min && t0 > 0,
        };
        if ok && self.lr_at(0).is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid learning-rate schedule {self:?}")))
        }
    }
}

/// `constant:<lr>`, `step:<lr_max>:<period>:<gamma>` or `cosine:<lr_max>:<t0>:<eta_min>`.
impl std::fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            LrSchedule::Constant { lr } => write!(f, "constant:{lr:?}"),
            LrSchedule::Step { lr_max, period, gamma } => write!(f, "step:{lr_max:?}:{period}:{gamma:?}"),
            LrSchedule::Cosine { lr_max, t0, eta_min } => write!(f, "cosine:{lr_max:?}:{t0}:{eta_min:?}"),
        }
    }
}

impl std::str::FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad schedule `{s}`"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let f = |i: usize| parts.get(i).and_then(|p| p.trim().parse::<f64>().ok()).ok_or_else(bad);
        let u = |i: usize| parts.get(i).and_then(|p| p.trim().parse::<usize>().ok()).ok_or_else(bad);
        let sched = match (parts[0].trim().to_ascii_lowercase().as_str(), parts.len()) {
            ("constant", 2) => LrSchedule::Constant { lr: f(1)? },
            ("step", 4) => LrSchedule::Step {
                lr_max: f(1)?,
                period: u(2)?,
                gamma: f(3)?,
            },
            ("cosine", 4) => LrSchedule::Cosine {
                lr_max: f(1)?,
                t0: u(2)?,
                eta_min: f(3)?,
            },
            _ => return Err(bad()),
        };
        sched.validate()?;
        Ok(sched)
    }
}
