//! The ten compared methods behind one training and prediction interface.
//!
//! Single-year kinds see one county-year; five-year kinds see the window
//! `t-4 ..= t`, oldest first. Linear kinds are fitted in closed form (ridge)
//! or by coordinate descent (lasso); deep kinds are trained with Adam on the
//! log-cosh loss and the best validation epoch is kept.

mod checkpoint;
mod deep;
mod linear;
mod train;

pub use checkpoint::{Checkpoint, Net, CHECKPOINT_MAGIC};
pub use deep::{Batch, DeepNet, GraphBatch};
pub use linear::{fit_lasso, fit_ridge, lasso_objective, LinearKind, LinearModel};
pub use train::{train, train_with_progress, EpochRecord, Trained};

use std::fmt;
use std::str::FromStr;

use crate::dataset::Crop;
use crate::error::{Error, Result};
use crate::graph::{Aggregator, GnnConfig};
use crate::layers::{CellKind, EncoderConfig};
use crate::optim::LrSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Ridge1y,
    Lasso1y,
    Gru1y,
    Lstm1y,
    Cnn1y,
    Gnn1y,
    Gru5y,
    Lstm5y,
    CnnRnn5y,
    GnnRnn5y,
}

impl ModelKind {
    pub const ALL: [ModelKind; 10] = [
        ModelKind::Ridge1y,
        ModelKind::Lasso1y,
        ModelKind::Gru1y,
        ModelKind::Lstm1y,
        ModelKind::Cnn1y,
        ModelKind::Gnn1y,
        ModelKind::Gru5y,
        ModelKind::Lstm5y,
        ModelKind::CnnRnn5y,
        ModelKind::GnnRnn5y,
    ];

    pub const DEEP: [ModelKind; 8] = [
        ModelKind::Gru1y,
        ModelKind::Lstm1y,
        ModelKind::Cnn1y,
        ModelKind::Gnn1y,
        ModelKind::Gru5y,
        ModelKind::Lstm5y,
        ModelKind::CnnRnn5y,
        ModelKind::GnnRnn5y,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Ridge1y => "ridge-1y",
            ModelKind::Lasso1y => "lasso-1y",
            ModelKind::Gru1y => "gru-1y",
            ModelKind::Lstm1y => "lstm-1y",
            ModelKind::Cnn1y => "cnn-1y",
            ModelKind::Gnn1y => "gnn-1y",
            ModelKind::Gru5y => "gru-5y",
            ModelKind::Lstm5y => "lstm-5y",
            ModelKind::CnnRnn5y => "cnn-rnn-5y",
            ModelKind::GnnRnn5y => "gnn-rnn-5y",
        }
    }

    /// Δt: number of prior years in the input window.
    pub fn history_years(self) -> usize {
        if self.is_five_year() {
            4
        } else {
            0
        }
    }

    pub fn is_five_year(self) -> bool {
        matches!(
            self,
            ModelKind::Gru5y | ModelKind::Lstm5y | ModelKind::CnnRnn5y | ModelKind::GnnRnn5y
        )
    }

    pub fn is_linear(self) -> bool {
        matches!(self, ModelKind::Ridge1y | ModelKind::Lasso1y)
    }

    pub fn is_graph(self) -> bool {
        matches!(self, ModelKind::Gnn1y | ModelKind::GnnRnn5y)
    }

    /// Cell type of the recurrent component, if any.
    pub fn cell(self) -> Option<CellKind> {
        match self {
            ModelKind::Gru1y | ModelKind::Gru5y => Some(CellKind::Gru),
            ModelKind::Lstm1y | ModelKind::Lstm5y | ModelKind::CnnRnn5y | ModelKind::GnnRnn5y => Some(CellKind::Lstm),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase().replace('_', "-");
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == t)
            .ok_or_else(|| {
                let names: Vec<&str> = ModelKind::ALL.iter().map(|k| k.as_str()).collect();
                Error::Config(format!("unknown method `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Default ridge grid; `λ` multiplies the identity added to `XᵀX`.
pub const RIDGE_LAMBDAS: [f64; 6] = [1.0, 10.0, 100.0, 1e3, 1e4, 1e5];
/// Default lasso grid, strongest first so each fit warm-starts the next;
/// `λ` weighs the L1 norm against the mean squared residual / 2.
pub const LASSO_LAMBDAS: [f64; 5] = [0.3, 0.1, 0.03, 0.01, 0.003];

/// Training and architecture settings.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyper {
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub gnn: GnnConfig,
    pub rnn_hidden: usize,
    pub head_width: usize,
    /// Divides every convolution block's channel count; 1 keeps the full widths.
    pub channel_div: usize,
    /// Regularization grid for the linear kinds; the best on the validation year wins.
    pub lambdas: Vec<f64>,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            schedule: LrSchedule::Step {
                lr_max: 1e-4,
                period: 25,
                gamma: 0.5,
            },
            batch_size: 128,
            epochs: 100,
            weight_decay: 1e-5,
            gnn: GnnConfig::default(),
            rnn_hidden: 64,
            head_width: 64,
            channel_div: 1,
            lambdas: RIDGE_LAMBDAS.to_vec(),
        }
    }
}

impl Hyper {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig::narrowed(self.channel_div)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.gnn.edge_dropout) {
            return Err(Error::Config("edge_dropout must lie in [0, 1)".into()));
        }
        if self.gnn.fanout == 0 || self.gnn.layers == 0 || self.gnn.hidden == 0 {
            return Err(Error::Config("gnn fanout, layers and hidden must be positive".into()));
        }
        if self.rnn_hidden == 0 || self.head_width == 0 || self.channel_div == 0 {
            return Err(Error::Config("rnn_hidden, head_width and channel_div must be positive".into()));
        }
        if self.lambdas.is_empty() || self.lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config("lambdas must be a non-empty list of non-negative values".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub crop: Crop,
    pub seed: u64,
    pub hyper: Hyper,
}

fn cosine(lr_max: f64, t0: usize, eta_min: f64) -> LrSchedule {
    LrSchedule::Cosine { lr_max, t0, eta_min }
}

fn step(lr_max: f64, gamma: f64) -> LrSchedule {
    LrSchedule::Step {
        lr_max,
        period: 25,
        gamma,
    }
}

impl ModelSpec {
    /// Published per-kind settings for `crop` and `test_year`. The recurrent
    /// and convolutional baselines reuse the CNN-RNN settings.
    pub fn published(kind: ModelKind, crop: Crop, test_year: i32) -> Self {
        let mut h = Hyper::default();
        let corn = crop == Crop::Corn;
        match kind {
            ModelKind::Gnn1y => {
                h.gnn.edge_dropout = 0.1;
                if !corn {
                    h.batch_size = 64;
                    h.schedule = step(1e-4, 0.8);
                } else if test_year == 2018 {
                    h.batch_size = 32;
                    h.schedule = cosine(1e-4, 200, 1e-5);
                } else {
                    h.batch_size = 64;
                    h.schedule = cosine(5e-5, 100, 1e-5);
                    h.epochs = 200;
                    h.gnn.edge_dropout = 0.0;
                }
            }
            ModelKind::GnnRnn5y => {
                h.batch_size = 32;
                h.gnn.edge_dropout = 0.1;
                h.schedule = match (corn, test_year == 2018) {
                    (true, true) => cosine(5e-5, 100, 1e-6),
                    (true, false) => cosine(5e-5, 200, 1e-6),
                    (false, true) => {
                        h.weight_decay = 1e-4;
                        cosine(1e-4, 100, 1e-6)
                    }
                    (false, false) => cosine(5e-5, 100, 1e-6),
                };
            }
            ModelKind::Lasso1y => h.lambdas = LASSO_LAMBDAS.to_vec(),
            _ => {
                h.schedule = step(if corn { 1e-4 } else { 5e-4 }, 0.5);
            }
        }
        ModelSpec { kind, crop, seed: 0, hyper: h }
    }

    /// Reduced settings for the 100-county synthetic benchmark: quarter-width
    /// convolutions, batch 64, cosine decay from 1e-3 over the run.
    pub fn desk_scale(kind: ModelKind, crop: Crop, test_year: i32) -> Self {
        let mut s = ModelSpec::published(kind, crop, test_year);
        let epochs = match kind {
            ModelKind::Gru1y | ModelKind::Lstm1y => 15,
            ModelKind::Gru5y | ModelKind::Lstm5y => 25,
            _ => 40,
        };
        s.hyper.epochs = epochs;
        s.hyper.batch_size = 64;
        s.hyper.channel_div = 4;
        s.hyper.weight_decay = 1e-5;
        s.hyper.schedule = cosine(1e-3, epochs, 1e-5);
        s
    }

    pub fn history_years(&self) -> usize {
        self.kind.history_years()
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()
    }

    /// Every field as `key = value` pairs, in a fixed order.
    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        let h = &self.hyper;
        let lambdas: Vec<String> = h.lambdas.iter().map(|l| format!("{l:?}")).collect();
        vec![
            ("kind", self.kind.to_string()),
            ("crop", self.crop.to_string()),
            ("seed", self.seed.to_string()),
            ("schedule", h.schedule.to_string()),
            ("batch_size", h.batch_size.to_string()),
            ("epochs", h.epochs.to_string()),
            ("weight_decay", format!("{:?}", h.weight_decay)),
            ("aggregator", aggregator_name(h.gnn.aggregator).to_string()),
            ("gnn_hidden", h.gnn.hidden.to_string()),
            ("gnn_layers", h.gnn.layers.to_string()),
            ("fanout", h.gnn.fanout.to_string()),
            ("edge_dropout", format!("{:?}", h.gnn.edge_dropout)),
            ("rnn_hidden", h.rnn_hidden.to_string()),
            ("head_width", h.head_width.to_string()),
            ("channel_div", h.channel_div.to_string()),
            ("lambdas", lambdas.join(",")),
        ]
    }

    /// Overrides one field; `kind` is fixed at construction and cannot be set here.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
        }
        let h = &mut self.hyper;
        match key {
            "crop" => self.crop = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            "schedule" => h.schedule = value.parse()?,
            "batch_size" => h.batch_size = num(key, value)?,
            "epochs" => h.epochs = num(key, value)?,
            "weight_decay" => h.weight_decay = num(key, value)?,
            "aggregator" => h.gnn.aggregator = parse_aggregator(value)?,
            "gnn_hidden" => h.gnn.hidden = num(key, value)?,
            "gnn_layers" => h.gnn.layers = num(key, value)?,
            "fanout" => h.gnn.fanout = num(key, value)?,
            "edge_dropout" => h.gnn.edge_dropout = num(key, value)?,
            "rnn_hidden" => h.rnn_hidden = num(key, value)?,
            "head_width" => h.head_width = num(key, value)?,
            "channel_div" => h.channel_div = num(key, value)?,
            "lambdas" => {
                h.lambdas = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| num(key, s))
                    .collect::<Result<_>>()?
            }
            "kind" => {
                let k: ModelKind = value.parse()?;
                if k != self.kind {
                    return Err(Error::Config(format!("kind is {} and cannot be changed to {k}", self.kind)));
                }
            }
            _ => return Err(Error::Config(format!("unknown model setting `{key}`"))),
        }
        Ok(())
    }

    /// Rebuilds a spec from pairs produced by [`ModelSpec::to_kv`].
    pub fn from_kv<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let pairs: Vec<(&str, &str)> = pairs.into_iter().collect();
        let kind: ModelKind = pairs
            .iter()
            .find(|(k, _)| *k == "kind")
            .ok_or_else(|| Error::Config("missing `kind`".into()))?
            .1
            .parse()?;
        let mut spec = ModelSpec::published(kind, Crop::Corn, 2019);
        for (k, v) in pairs {
            spec.set(k, v)?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub const KEYS: [&'static str; 16] = [
        "kind",
        "crop",
        "seed",
        "schedule",
        "batch_size",
        "epochs",
        "weight_decay",
        "aggregator",
        "gnn_hidden",
        "gnn_layers",
        "fanout",
        "edge_dropout",
        "rnn_hidden",
        "head_width",
        "channel_div",
        "lambdas",
    ];
}

pub fn aggregator_name(a: Aggregator) -> &'static str {
    match a {
        Aggregator::Mean => "mean",
        Aggregator::Pool => "pool",
    }
}

pub fn parse_aggregator(s: &str) -> Result<Aggregator> {
    match s.trim().to_ascii_lowercase().as_str() {
        "mean" => Ok(Aggregator::Mean),
        "pool" | "pooling" => Ok(Aggregator::Pool),
        _ => Err(Error::Config(format!("unknown aggregator `{s}` (mean or pool)"))),
    }
}
