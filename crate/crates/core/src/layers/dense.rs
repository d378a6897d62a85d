use rand::Rng;

use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Tape, Var};

/// Fully connected layer, `y = x·Wᵀ + b` with `W` stored `[out × in]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = (1.0 / in_dim as f64).sqrt();
        let w = store.add_uniform(format!("{name}/w"), vec![out_dim, in_dim], bound, rng);
        let b = store.add_uniform(format!("{name}/b"), vec![out_dim], bound, rng);
        Dense { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.linear(x, w, b)
    }
}

/// Two-layer regression head: Dense → relu → Dense(→1).
#[derive(Clone, Debug)]
pub struct RegressionHead {
    pub hidden: Dense,
    pub out: Dense,
}

impl RegressionHead {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, width: usize, rng: &mut R) -> Self {
        RegressionHead {
            hidden: Dense::new(store, &format!("{name}/fc0"), in_dim, width, rng),
            out: Dense::new(store, &format!("{name}/fc1"), width, 1, rng),
        }
    }

    /// `[B × in] → [B]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, store, x)?;
        let h = tape.relu(h)?;
        let y = self.out.forward(tape, store, h)?;
        let rows = tape.shape(y)[0];
        tape.reshape(y, vec![rows])
    }
}
