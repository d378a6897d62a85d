//! Building blocks: convolutional encoders, recurrent cells, dense heads and
//! dropout, plus the per-year embedding that joins them.

mod conv;
mod dense;
mod recurrent;

pub use conv::{Conv1dStack, ConvBlock, ConvPlan};
pub use dense::{Dense, RegressionHead};
pub use recurrent::{CellKind, CellState, RecurrentCell};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

pub const N_WEATHER: usize = 7;
pub const N_LAND: usize = 16;
pub const N_WEEKS: usize = 52;
pub const N_SOIL: usize = 20;
pub const N_DEPTHS: usize = 6;
/// Six soil extras plus the previous-year national mean yield.
pub const N_EXTRAS: usize = 7;

/// Zeroes each element with probability `p` and scales survivors by 1/(1-p)
/// while training; identity otherwise.
pub fn dropout<R: Rng>(tape: &mut Tape, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout probability {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(x);
    }
    let scale = 1.0 / (1.0 - p);
    let shape = tape.shape(x).to_vec();
    let n = shape.iter().product();
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { scale })
        .collect();
    let m = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(x, m)
}

/// Architecture widths of the per-year embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub weekly: ConvPlan,
    pub soil: ConvPlan,
    pub n_extras: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            weekly: ConvPlan::weekly(),
            soil: ConvPlan::soil(),
            n_extras: N_EXTRAS,
        }
    }
}

impl EncoderConfig {
    /// A narrow variant for gradient checks; same block structure, fewer channels.
    pub fn toy() -> Self {
        EncoderConfig {
            weekly: ConvPlan {
                in_channels: N_WEATHER + N_LAND,
                in_len: N_WEEKS,
                channels: vec![3, 3, 4, 4],
                kernels: vec![7, 3, 3, 3],
                pool: Some(2),
                out_dim: 5,
            },
            soil: ConvPlan {
                in_channels: N_SOIL,
                in_len: N_DEPTHS,
                channels: vec![2, 3, 3],
                kernels: vec![2, 2, 2],
                pool: None,
                out_dim: 3,
            },
            n_extras: N_EXTRAS,
        }
    }

    /// Full-size plan with every block's channel count divided by `div`
    /// (rounded up); projection widths are unchanged.
    pub fn narrowed(div: usize) -> Self {
        let mut cfg = EncoderConfig::default();
        let div = div.max(1);
        for c in cfg.weekly.channels.iter_mut().chain(cfg.soil.channels.iter_mut()) {
            *c = c.div_ceil(div);
        }
        cfg
    }

    pub fn weekly_channels(&self) -> usize {
        self.weekly.in_channels
    }

    pub fn embed_dim(&self, weekly_dim: usize) -> usize {
        weekly_dim + self.soil.out_dim + self.n_extras
    }
}

/// One year of inputs for a batch of counties, already on a tape.
#[derive(Clone, Copy, Debug)]
pub struct YearInputs {
    /// `[B × n_w × 52]`
    pub weather: Var,
    /// `[B × n_l × 52]`
    pub land: Var,
    /// `[B × n_s × 6]`
    pub soil: Var,
    /// `[B × n_e]`
    pub extras: Var,
}

/// Encoder for the weekly weather/land-surface block.
#[derive(Clone, Debug)]
pub enum WeeklyEncoder {
    Cnn(Conv1dStack),
    /// Steps a recurrent cell over the weeks and keeps the last hidden state.
    Rnn(RecurrentCell),
}

impl WeeklyEncoder {
    pub fn out_dim(&self) -> usize {
        match self {
            WeeklyEncoder::Cnn(c) => c.plan.out_dim,
            WeeklyEncoder::Rnn(r) => r.hidden_size,
        }
    }
}

/// Per-year embedding `h = (f_wl(weather, land), f_s(soil), extras)`.
#[derive(Clone, Debug)]
pub struct YearEncoder {
    pub weekly: WeeklyEncoder,
    pub soil: Conv1dStack,
    pub n_extras: usize,
    weeks: usize,
}

impl YearEncoder {
    pub fn new_cnn<R: Rng>(store: &mut ParamStore, name: &str, cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        let weekly = Conv1dStack::new(store, &format!("{name}/weekly"), &cfg.weekly, rng)?;
        let soil = Conv1dStack::new(store, &format!("{name}/soil"), &cfg.soil, rng)?;
        Ok(YearEncoder {
            weekly: WeeklyEncoder::Cnn(weekly),
            soil,
            n_extras: cfg.n_extras,
            weeks: cfg.weekly.in_len,
        })
    }

    pub fn new_rnn<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        cfg: &EncoderConfig,
        kind: CellKind,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let cell = RecurrentCell::new(store, &format!("{name}/weekly"), kind, cfg.weekly_channels(), hidden, rng);
        let soil = Conv1dStack::new(store, &format!("{name}/soil"), &cfg.soil, rng)?;
        Ok(YearEncoder {
            weekly: WeeklyEncoder::Rnn(cell),
            soil,
            n_extras: cfg.n_extras,
            weeks: cfg.weekly.in_len,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.weekly.out_dim() + self.soil.plan.out_dim + self.n_extras
    }

    /// `h^{wl}`: weather and land surface concatenated along channels, then encoded.
    pub fn encode_weekly(&self, tape: &mut Tape, store: &ParamStore, weather: Var, land: Var) -> Result<Var> {
        for v in [weather, land] {
            let s = tape.shape(v);
            if s.len() != 3 || s[2] != self.weeks {
                return Err(Error::shape(
                    "encode_weekly",
                    format!("expected {} weeks, got shape {s:?}", self.weeks),
                ));
            }
        }
        let x = tape.concat(&[weather, land], 1)?;
        match &self.weekly {
            WeeklyEncoder::Cnn(c) => c.forward(tape, store, x),
            WeeklyEncoder::Rnn(cell) => {
                let (batch, ch) = (tape.shape(x)[0], tape.shape(x)[1]);
                let mut steps = Vec::with_capacity(self.weeks);
                for w in 0..self.weeks {
                    let s = tape.slice(x, 2, w, 1)?;
                    steps.push(tape.reshape(s, vec![batch, ch])?);
                }
                cell.forward(tape, store, &steps)
            }
        }
    }

    /// `h^s`: convolution over soil depths.
    pub fn encode_soil(&self, tape: &mut Tape, store: &ParamStore, soil: Var) -> Result<Var> {
        let s = tape.shape(soil);
        if s.len() != 3 || s[2] != self.soil.plan.in_len {
            return Err(Error::shape(
                "encode_soil",
                format!("expected {} depths, got shape {s:?}", self.soil.plan.in_len),
            ));
        }
        self.soil.forward(tape, store, soil)
    }

    /// `[B × d_h]` with `d_h = d_wl + d_s + n_e`.
    pub fn embed(&self, tape: &mut Tape, store: &ParamStore, x: &YearInputs) -> Result<Var> {
        let hw = self.encode_weekly(tape, store, x.weather, x.land)?;
        let hs = self.encode_soil(tape, store, x.soil)?;
        let es = tape.shape(x.extras);
        if es.len() != 2 || es[1] != self.n_extras {
            return Err(Error::shape(
                "embed_year",
                format!("expected [batch, {}] extras, got {es:?}", self.n_extras),
            ));
        }
        tape.concat(&[hw, hs, x.extras], 1)
    }
}
