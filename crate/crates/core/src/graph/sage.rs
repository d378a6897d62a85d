use rand::Rng;

use super::SampledBlock;
use crate::error::{Error, Result};
use crate::layers::Dense;
use crate::tensor::{ParamStore, SegmentOp, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregator {
    Mean,
    /// Elementwise max over a learned Dense + relu transform of each neighbor.
    Pool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SageActivation {
    Relu,
    Identity,
}

/// `z' = σ(W · [z_self, agg(z_neighbors)] + b)`.
#[derive(Clone, Debug)]
pub struct SageLayer {
    pub aggregator: Aggregator,
    pub activation: SageActivation,
    pub w: Dense,
    pub pool: Option<Dense>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl SageLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        aggregator: Aggregator,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let pool = (aggregator == Aggregator::Pool).then(|| Dense::new(store, &format!("{name}/pool"), in_dim, in_dim, rng));
        let w = Dense::new(store, &format!("{name}/w"), 2 * in_dim, out_dim, rng);
        SageLayer {
            aggregator,
            activation: SageActivation::Relu,
            w,
            pool,
            in_dim,
            out_dim,
        }
    }

    /// Aggregates neighbor rows of `h_src` per destination segment. Empty
    /// neighborhoods give zero rows.
    pub fn aggregate(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h_src: Var,
        num_dst: usize,
        offsets: &[usize],
        nbr: &[usize],
    ) -> Result<Var> {
        if nbr.is_empty() {
            return Ok(tape.constant(Tensor::zeros(vec![num_dst, self.in_dim])));
        }
        match (self.aggregator, &self.pool) {
            (Aggregator::Mean, _) => {
                let rows = tape.gather_rows(h_src, nbr)?;
                tape.segment_reduce(SegmentOp::Mean, rows, offsets)
            }
            (Aggregator::Pool, Some(pool)) => {
                let t = pool.forward(tape, store, h_src)?;
                let t = tape.relu(t)?;
                let rows = tape.gather_rows(t, nbr)?;
                tape.segment_reduce(SegmentOp::Max, rows, offsets)
            }
            (Aggregator::Pool, None) => Err(Error::Config("pool aggregator without transform".into())),
        }
    }

    /// `h_src` is `[n_src × in_dim]` whose first `num_dst` rows are the
    /// destination nodes; returns `[num_dst × out_dim]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h_src: Var,
        num_dst: usize,
        offsets: &[usize],
        nbr: &[usize],
    ) -> Result<Var> {
        let s = tape.shape(h_src).to_vec();
        if s.len() != 2 || s[1] != self.in_dim || s[0] < num_dst || offsets.len() != num_dst + 1 {
            return Err(Error::shape(
                "sage_layer_forward",
                format!("input {s:?}, {num_dst} destinations, layer width {}", self.in_dim),
            ));
        }
        let agg = self.aggregate(tape, store, h_src, num_dst, offsets, nbr)?;
        let own = if s[0] == num_dst { h_src } else { tape.slice(h_src, 0, 0, num_dst)? };
        let x = tape.concat(&[own, agg], 1)?;
        let z = self.w.forward(tape, store, x)?;
        match self.activation {
            SageActivation::Relu => tape.relu(z),
            SageActivation::Identity => Ok(z),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnnConfig {
    pub aggregator: Aggregator,
    pub hidden: usize,
    pub layers: usize,
    pub fanout: usize,
    pub edge_dropout: f64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            aggregator: Aggregator::Pool,
            hidden: 64,
            layers: 2,
            fanout: 10,
            edge_dropout: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SageStack {
    pub layers: Vec<SageLayer>,
}

impl SageStack {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, cfg: &GnnConfig, rng: &mut R) -> Self {
        let mut d = in_dim;
        let layers = (0..cfg.layers)
            .map(|l| {
                let layer = SageLayer::new(store, &format!("{name}/sage{l}"), cfg.aggregator, d, cfg.hidden, rng);
                d = cfg.hidden;
                layer
            })
            .collect();
        SageStack { layers }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }
}

/// Runs every layer of `stack` over `block`. `base` holds one row per
/// `block.input_nodes()` entry; the result has one row per seed.
pub fn gnn_forward(tape: &mut Tape, store: &ParamStore, stack: &SageStack, block: &SampledBlock, base: Var) -> Result<Var> {
    if stack.layers.len() != block.layers.len() {
        return Err(Error::shape(
            "gnn_forward",
            format!("{} layers in stack, {} in block", stack.layers.len(), block.layers.len()),
        ));
    }
    let rows = tape.shape(base)[0];
    if rows != block.input_nodes().len() {
        return Err(Error::shape(
            "gnn_forward",
            format!("{rows} base rows for {} input nodes", block.input_nodes().len()),
        ));
    }
    let mut h = base;
    for (layer, bl) in stack.layers.iter().zip(&block.layers) {
        h = layer.forward(tape, store, h, bl.num_dst, &bl.offsets, &bl.nbr)?;
    }
    Ok(h)
}
