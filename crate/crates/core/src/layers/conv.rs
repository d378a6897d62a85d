use rand::Rng;

use super::Dense;
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Var};

/// Channel/kernel layout of a convolutional encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvPlan {
    pub in_channels: usize,
    pub in_len: usize,
    /// Output channels of each block.
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    /// Average-pool window after every block, if any.
    pub pool: Option<usize>,
    /// Width of the final dense projection.
    pub out_dim: usize,
}

impl ConvPlan {
    /// Weekly weather + land-surface encoder: 23→32→64→96→128 over 52 weeks,
    /// kernels 7,3,3,3, pool 2 after each block, projected to 64.
    pub fn weekly() -> Self {
        ConvPlan {
            in_channels: 23,
            in_len: 52,
            channels: vec![32, 64, 96, 128],
            kernels: vec![7, 3, 3, 3],
            pool: Some(2),
            out_dim: 64,
        }
    }

    /// Soil encoder: 20→24→28→32 over 6 depths, kernel 2, no pooling, projected to 32.
    pub fn soil() -> Self {
        ConvPlan {
            in_channels: 20,
            in_len: 6,
            channels: vec![24, 28, 32],
            kernels: vec![2, 2, 2],
            pool: None,
            out_dim: 32,
        }
    }

    /// Length of the sequence after every block; errors if a block would not fit.
    pub fn lengths(&self) -> Result<Vec<usize>> {
        if self.channels.len() != self.kernels.len() || self.channels.is_empty() {
            return Err(Error::Config("conv plan needs one kernel per block".into()));
        }
        let mut len = self.in_len;
        let mut out = Vec::with_capacity(self.kernels.len());
        for &k in &self.kernels {
            if len < k {
                return Err(Error::Config(format!("conv plan: length {len} shorter than kernel {k}")));
            }
            len = len + 1 - k;
            if let Some(p) = self.pool {
                if len < p {
                    return Err(Error::Config(format!("conv plan: length {len} shorter than pool {p}")));
                }
                len /= p;
            }
            out.push(len);
        }
        Ok(out)
    }

    pub fn flat_dim(&self) -> Result<usize> {
        let lens = self.lengths()?;
        Ok(lens.last().unwrap() * self.channels.last().unwrap())
    }
}

#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub w: ParamId,
    pub b: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub pool: Option<usize>,
}

/// Conv → relu (→ avg-pool) blocks followed by flatten → dense.
#[derive(Clone, Debug)]
pub struct Conv1dStack {
    pub plan: ConvPlan,
    pub blocks: Vec<ConvBlock>,
    pub proj: Dense,
}

impl Conv1dStack {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, plan: &ConvPlan, rng: &mut R) -> Result<Self> {
        let flat = plan.flat_dim()?;
        let mut cin = plan.in_channels;
        let mut blocks = Vec::with_capacity(plan.channels.len());
        for (i, (&cout, &k)) in plan.channels.iter().zip(&plan.kernels).enumerate() {
            let bound = (1.0 / (cin * k) as f64).sqrt();
            let w = store.add_uniform(format!("{name}/conv{i}/w"), vec![cout, cin, k], bound, rng);
            let b = store.add_uniform(format!("{name}/conv{i}/b"), vec![cout], bound, rng);
            blocks.push(ConvBlock {
                w,
                b,
                in_channels: cin,
                out_channels: cout,
                kernel: k,
                pool: plan.pool,
            });
            cin = cout;
        }
        let proj = Dense::new(store, &format!("{name}/proj"), flat, plan.out_dim, rng);
        Ok(Conv1dStack {
            plan: plan.clone(),
            blocks,
            proj,
        })
    }

    /// `[B × C × L] → [B × out_dim]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        if s.len() != 3 || s[1] != self.plan.in_channels || s[2] != self.plan.in_len {
            return Err(Error::shape(
                "conv encoder",
                format!(
                    "expected [batch, {}, {}], got {s:?}",
                    self.plan.in_channels, self.plan.in_len
                ),
            ));
        }
        let batch = s[0];
        let mut h = x;
        for block in &self.blocks {
            let w = tape.param(store, block.w);
            let b = tape.param(store, block.b);
            h = tape.conv1d(h, w, b)?;
            h = tape.relu(h)?;
            if let Some(p) = block.pool {
                h = tape.avg_pool1d(h, p)?;
            }
        }
        let flat: usize = tape.shape(h)[1..].iter().product();
        let h = tape.reshape(h, vec![batch, flat])?;
        self.proj.forward(tape, store, h)
    }
}
