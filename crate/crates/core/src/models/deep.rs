use rand::seq::SliceRandom;
use rand::Rng;

use super::{ModelKind, ModelSpec};
use crate::dataset::{Prepared, EXTRAS_OFFSET, LAND_OFFSET, N_FEATURES, SOIL_OFFSET, WEATHER_OFFSET};
use crate::error::{Error, Result};
use crate::graph::{gnn_forward, sample_block, CountyGraph, SageStack, SampledBlock};
use crate::layers::{RecurrentCell, RegressionHead, YearEncoder, YearInputs, N_DEPTHS, N_EXTRAS, N_LAND, N_SOIL, N_WEATHER, N_WEEKS};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug)]
enum Arch {
    /// Per-year embedding with a CNN, LSTM or GRU weekly encoder, then the head.
    Encoder1y { enc: YearEncoder },
    Gnn1y { enc: YearEncoder, gnn: SageStack },
    /// Flattened year vectors fed straight into a recurrent cell.
    Flat5y { cell: RecurrentCell },
    CnnRnn { enc: YearEncoder, cell: RecurrentCell },
    GnnRnn { enc: YearEncoder, gnn: SageStack, cell: RecurrentCell },
}

/// Parameters and layer layout of one deep model.
#[derive(Clone, Debug)]
pub struct DeepNet {
    pub kind: ModelKind,
    pub store: ParamStore,
    arch: Arch,
    head: RegressionHead,
}

/// Inputs for one batch of predictions.
#[derive(Clone, Debug)]
pub enum Batch {
    /// `steps[k]` holds the rows of every sample for window year `k`,
    /// flattened `[n × N_FEATURES]`, oldest year first.
    Seq { steps: Vec<Vec<f64>>, n: usize },
    Graph(GraphBatch),
}

/// A sampled neighborhood shared by every year of the batch.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub block: SampledBlock,
    /// Consecutive calendar years covered by `rows`.
    pub first_year: i32,
    /// `rows[k]`: features of every block input node in `first_year + k`,
    /// flattened `[n_input × N_FEATURES]`.
    pub rows: Vec<Vec<f64>>,
    /// Per sample: position of its county among the block seeds, and its target year.
    pub targets: Vec<(usize, i32)>,
    pub history: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        match self {
            Batch::Seq { n, .. } => *n,
            Batch::Graph(g) => g.targets.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits flattened rows into the tape inputs of the year encoder.
pub(crate) fn year_inputs(tape: &mut Tape, rows: &[f64], n: usize) -> Result<YearInputs> {
    if rows.len() != n * N_FEATURES {
        return Err(Error::shape(
            "year_inputs",
            format!("{} values for {n} rows of {N_FEATURES}", rows.len()),
        ));
    }
    let mut weather = Vec::with_capacity(n * N_WEATHER * N_WEEKS);
    let mut land = Vec::with_capacity(n * N_LAND * N_WEEKS);
    let mut soil = Vec::with_capacity(n * N_SOIL * N_DEPTHS);
    let mut extras = Vec::with_capacity(n * N_EXTRAS);
    for r in rows.chunks_exact(N_FEATURES) {
        weather.extend_from_slice(&r[WEATHER_OFFSET..LAND_OFFSET]);
        land.extend_from_slice(&r[LAND_OFFSET..SOIL_OFFSET]);
        soil.extend_from_slice(&r[SOIL_OFFSET..EXTRAS_OFFSET]);
        extras.extend_from_slice(&r[EXTRAS_OFFSET..]);
    }
    Ok(YearInputs {
        weather: tape.constant(Tensor::new(vec![n, N_WEATHER, N_WEEKS], weather)?),
        land: tape.constant(Tensor::new(vec![n, N_LAND, N_WEEKS], land)?),
        soil: tape.constant(Tensor::new(vec![n, N_SOIL, N_DEPTHS], soil)?),
        extras: tape.constant(Tensor::new(vec![n, N_EXTRAS], extras)?),
    })
}

impl DeepNet {
    pub fn new<R: Rng>(spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        let kind = spec.kind;
        if kind.is_linear() {
            return Err(Error::Config(format!("{kind} is not a deep model")));
        }
        let h = &spec.hyper;
        let cfg = h.encoder();
        let mut store = ParamStore::new();
        let s = &mut store;
        let (arch, head_in) = match kind {
            ModelKind::Cnn1y => {
                let enc = YearEncoder::new_cnn(s, "enc", &cfg, rng)?;
                let d = enc.out_dim();
                (Arch::Encoder1y { enc }, d)
            }
            ModelKind::Gru1y | ModelKind::Lstm1y => {
                let enc = YearEncoder::new_rnn(s, "enc", &cfg, kind.cell().unwrap(), cfg.weekly.out_dim, rng)?;
                let d = enc.out_dim();
                (Arch::Encoder1y { enc }, d)
            }
            ModelKind::Gnn1y => {
                let enc = YearEncoder::new_cnn(s, "enc", &cfg, rng)?;
                let gnn = SageStack::new(s, "gnn", enc.out_dim(), &h.gnn, rng);
                let d = gnn.out_dim();
                (Arch::Gnn1y { enc, gnn }, d)
            }
            ModelKind::Gru5y | ModelKind::Lstm5y => {
                let cell = RecurrentCell::new(s, "rnn", kind.cell().unwrap(), N_FEATURES, h.rnn_hidden, rng);
                (Arch::Flat5y { cell }, h.rnn_hidden)
            }
            ModelKind::CnnRnn5y => {
                let enc = YearEncoder::new_cnn(s, "enc", &cfg, rng)?;
                let cell = RecurrentCell::new(s, "rnn", kind.cell().unwrap(), enc.out_dim(), h.rnn_hidden, rng);
                (Arch::CnnRnn { enc, cell }, h.rnn_hidden)
            }
            ModelKind::GnnRnn5y => {
                let enc = YearEncoder::new_cnn(s, "enc", &cfg, rng)?;
                let gnn = SageStack::new(s, "gnn", enc.out_dim(), &h.gnn, rng);
                let cell = RecurrentCell::new(s, "rnn", kind.cell().unwrap(), gnn.out_dim(), h.rnn_hidden, rng);
                (Arch::GnnRnn { enc, gnn, cell }, h.rnn_hidden)
            }
            ModelKind::Ridge1y | ModelKind::Lasso1y => unreachable!(),
        };
        let head = RegressionHead::new(&mut store, "head", head_in, h.head_width, rng);
        Ok(DeepNet { kind, store, arch, head })
    }

    /// Embeds `n` stacked rows in one pass: `[n × d_h]`.
    fn embed_rows(&self, tape: &mut Tape, enc: &YearEncoder, rows: &[f64], n: usize) -> Result<Var> {
        let x = year_inputs(tape, rows, n)?;
        enc.embed(tape, &self.store, &x)
    }

    /// Standardized predictions `[B]` for a batch.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        match (batch, &self.arch) {
            (Batch::Seq { steps, n }, arch) => {
                let want = self.kind.history_years() + 1;
                if steps.len() != want {
                    return Err(Error::shape(
                        "predict",
                        format!("{} needs {want} window years, got {}", self.kind, steps.len()),
                    ));
                }
                let n = *n;
                let h = match arch {
                    Arch::Encoder1y { enc } => self.embed_rows(tape, enc, &steps[0], n)?,
                    Arch::Flat5y { cell } => {
                        let xs = steps
                            .iter()
                            .map(|s| Ok(tape.constant(Tensor::new(vec![n, N_FEATURES], s.clone())?)))
                            .collect::<Result<Vec<_>>>()?;
                        cell.forward(tape, &self.store, &xs)?
                    }
                    Arch::CnnRnn { enc, cell } => {
                        let all = steps.concat();
                        let e = self.embed_rows(tape, enc, &all, n * want)?;
                        let seq = (0..want)
                            .map(|k| tape.slice(e, 0, k * n, n))
                            .collect::<Result<Vec<_>>>()?;
                        cell.forward(tape, &self.store, &seq)?
                    }
                    Arch::Gnn1y { .. } | Arch::GnnRnn { .. } => {
                        return Err(Error::Config(format!("{} needs graph context", self.kind)))
                    }
                };
                self.head.forward(tape, &self.store, h)
            }
            (Batch::Graph(g), Arch::Gnn1y { enc, gnn }) => {
                let per_year = self.graph_embeddings(tape, enc, gnn, g)?;
                let n_seeds = g.block.seeds.len();
                let idx: Vec<usize> = g
                    .targets
                    .iter()
                    .map(|&(s, y)| (y - g.first_year) as usize * n_seeds + s)
                    .collect();
                let h = tape.gather_rows(per_year, &idx)?;
                self.head.forward(tape, &self.store, h)
            }
            (Batch::Graph(g), Arch::GnnRnn { enc, gnn, cell }) => {
                let per_year = self.graph_embeddings(tape, enc, gnn, g)?;
                let n_seeds = g.block.seeds.len();
                let dt = g.history as i32;
                let mut seq = Vec::with_capacity(g.history + 1);
                for k in 0..=dt {
                    let idx: Vec<usize> = g
                        .targets
                        .iter()
                        .map(|&(s, y)| (y - dt + k - g.first_year) as usize * n_seeds + s)
                        .collect();
                    seq.push(tape.gather_rows(per_year, &idx)?);
                }
                let h = cell.forward(tape, &self.store, &seq)?;
                self.head.forward(tape, &self.store, h)
            }
            (Batch::Graph(_), _) => Err(Error::Config(format!("{} does not take graph context", self.kind))),
        }
    }

    /// GNN outputs for every block seed in every batch year, stacked year-major:
    /// `[n_years · n_seeds × d]`.
    fn graph_embeddings(&self, tape: &mut Tape, enc: &YearEncoder, gnn: &SageStack, g: &GraphBatch) -> Result<Var> {
        let n_in = g.block.input_nodes().len();
        let years = g.rows.len();
        if years == 0 {
            return Err(Error::Empty("graph batch without years".into()));
        }
        let all = g.rows.concat();
        let e = self.embed_rows(tape, enc, &all, n_in * years)?;
        let mut outs = Vec::with_capacity(years);
        for k in 0..years {
            let base = tape.slice(e, 0, k * n_in, n_in)?;
            outs.push(gnn_forward(tape, &self.store, gnn, &g.block, base)?);
        }
        if outs.len() == 1 {
            Ok(outs[0])
        } else {
            tape.concat(&outs, 0)
        }
    }
}

/// Groups samples into batches. Graph kinds batch one target year at a time
/// so a block of neighbors is shared; with `rng` the order is shuffled.
pub(crate) fn make_batches<R: Rng>(
    kind: ModelKind,
    samples: &[(usize, i32)],
    batch_size: usize,
    rng: Option<&mut R>,
) -> Vec<Vec<(usize, i32)>> {
    let mut out: Vec<Vec<(usize, i32)>> = Vec::new();
    if kind.is_graph() {
        let mut years: Vec<i32> = samples.iter().map(|s| s.1).collect();
        years.sort_unstable();
        years.dedup();
        let mut groups: Vec<Vec<(usize, i32)>> = years
            .iter()
            .map(|&y| samples.iter().copied().filter(|s| s.1 == y).collect())
            .collect();
        match rng {
            Some(r) => {
                for g in groups.iter_mut() {
                    g.shuffle(r);
                }
                for g in &groups {
                    out.extend(g.chunks(batch_size).map(<[_]>::to_vec));
                }
                out.shuffle(r);
            }
            None => {
                for g in &groups {
                    out.extend(g.chunks(batch_size).map(<[_]>::to_vec));
                }
            }
        }
    } else {
        let mut s = samples.to_vec();
        if let Some(r) = rng {
            s.shuffle(r);
        }
        out.extend(s.chunks(batch_size).map(<[_]>::to_vec));
    }
    out
}

/// Builds the model inputs for `samples`. Graph kinds sample a block on
/// `graph` with the given fanout and edge dropout.
pub(crate) fn assemble<R: Rng>(
    kind: ModelKind,
    data: &Prepared,
    samples: &[(usize, i32)],
    graph: Option<&CountyGraph>,
    layers: usize,
    fanout: usize,
    edge_dropout: f64,
    rng: &mut R,
) -> Result<Batch> {
    if samples.is_empty() {
        return Err(Error::Empty("batch without samples".into()));
    }
    let dt = kind.history_years();
    let row = |c: usize, y: i32| {
        data.row(c, y).ok_or_else(|| Error::WindowUnavailable {
            county: data.ds.graph.id(c).to_string(),
            year: y,
        })
    };
    if !kind.is_graph() {
        if graph.is_some() {
            return Err(Error::Config(format!("{kind} does not take graph context")));
        }
        let mut steps = vec![Vec::with_capacity(samples.len() * N_FEATURES); dt + 1];
        for &(c, y) in samples {
            for (k, step) in steps.iter_mut().enumerate() {
                step.extend_from_slice(row(c, y - dt as i32 + k as i32)?);
            }
        }
        return Ok(Batch::Seq {
            steps,
            n: samples.len(),
        });
    }
    let g = graph.ok_or_else(|| Error::Config(format!("{kind} needs graph context")))?;
    if g.len() != data.n_counties() {
        return Err(Error::Config(format!(
            "graph has {} counties, dataset has {}",
            g.len(),
            data.n_counties()
        )));
    }
    for &(c, y) in samples {
        for k in 0..=dt as i32 {
            row(c, y - k)?;
        }
    }
    let seeds: Vec<usize> = samples.iter().map(|s| s.0).collect();
    let block = sample_block(g, &seeds, fanout, layers, edge_dropout, rng)?;
    let lo = samples.iter().map(|s| s.1).min().unwrap() - dt as i32;
    let hi = samples.iter().map(|s| s.1).max().unwrap();
    let mut rows = Vec::with_capacity((hi - lo + 1) as usize);
    for y in lo..=hi {
        let mut r = Vec::with_capacity(block.input_nodes().len() * N_FEATURES);
        for &n in block.input_nodes() {
            let v = data.row_or_fill(n, y).ok_or_else(|| Error::WindowUnavailable {
                county: data.ds.graph.id(n).to_string(),
                year: y,
            })?;
            r.extend_from_slice(&v);
        }
        rows.push(r);
    }
    let pos: std::collections::HashMap<usize, usize> =
        block.seeds.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let targets = samples.iter().map(|&(c, y)| (pos[&c], y)).collect();
    Ok(Batch::Graph(GraphBatch {
        block,
        first_year: lo,
        rows,
        targets,
        history: dt,
    }))
}
