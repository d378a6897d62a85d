//! Checkpoint container.
//!
//! ```text
//! YIELDGRAPH-CKPT 1\n
//! key = value\n            (model spec, split, selection and statistics)
//! ...
//! end-header\n
//! block*                   (until end of file)
//! ```
//!
//! Each block is `u32 name_len | name (UTF-8) | u32 rank | u64 dim × rank |
//! u64 count | f64 × count`, all little-endian. Deep parameters are stored
//! under `param/<layer path>`; other blocks are `norm/mean`, `norm/std`,
//! `norm/constant`, `history` (`[epochs × 5]`: epoch, lr, train loss,
//! val loss, val RMSE) and, for linear kinds, `linear/coef` and `linear/x_mean`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::train::{predict_deep, EpochRecord};
use super::{DeepNet, LinearKind, LinearModel, ModelSpec};
use crate::dataset::{ChannelStats, Crop, Dataset, NormStats, Prepared, YieldStats, N_CHANNELS, N_FEATURES};
use crate::error::{Error, Result};
use crate::graph::CountyGraph;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "YIELDGRAPH-CKPT 1";

#[derive(Clone, Debug)]
pub enum Net {
    Linear(LinearModel),
    Deep(DeepNet),
}

/// A trained model with everything needed to reproduce its predictions.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub test_year: i32,
    pub norm: NormStats,
    pub net: Net,
    pub history: Vec<EpochRecord>,
    /// Epoch (or lambda index) with the lowest validation RMSE.
    pub best_epoch: usize,
}

impl Checkpoint {
    /// Normalizes `ds` with the stored statistics and fills the yield slot.
    pub fn prepare(&self, ds: &Dataset) -> Result<Prepared> {
        Prepared::new(&self.norm.apply(ds), &self.norm, self.spec.crop)
    }

    /// Standardized predictions for `samples` of prepared data. Graph kinds
    /// require `graph`; every other kind rejects it.
    pub fn predict(&self, data: &Prepared, samples: &[(usize, i32)], graph: Option<&CountyGraph>) -> Result<Vec<f64>> {
        let kind = self.spec.kind;
        match (kind.is_graph(), graph.is_some()) {
            (true, false) => return Err(Error::Config(format!("{kind} needs graph context"))),
            (false, true) => return Err(Error::Config(format!("{kind} does not take graph context"))),
            _ => {}
        }
        match &self.net {
            Net::Linear(m) => {
                for &(c, y) in samples {
                    if data.row(c, y).is_none() {
                        return Err(Error::WindowUnavailable {
                            county: data.ds.graph.id(c).to_string(),
                            year: y,
                        });
                    }
                }
                m.predict(&data.gather(samples, 0), samples.len())
            }
            Net::Deep(net) => predict_deep(net, data, samples, graph, &self.spec),
        }
    }

    /// Prediction from one prepared window (oldest year first) for kinds
    /// that need no graph context.
    pub fn predict_window(&self, window: &[&[f64]]) -> Result<f64> {
        let kind = self.spec.kind;
        if kind.is_graph() {
            return Err(Error::Config(format!("{kind} needs graph context")));
        }
        let want = kind.history_years() + 1;
        if window.len() != want {
            return Err(Error::shape(
                "predict",
                format!("{kind} needs {want} window years, got {}", window.len()),
            ));
        }
        if let Some(r) = window.iter().find(|r| r.len() != N_FEATURES) {
            return Err(Error::shape("predict", format!("row of {} values", r.len())));
        }
        match &self.net {
            Net::Linear(m) => m.predict_one(window[0]),
            Net::Deep(net) => {
                let batch = super::Batch::Seq {
                    steps: window.iter().map(|r| r.to_vec()).collect(),
                    n: 1,
                };
                let mut tape = crate::tensor::Tape::new();
                let y = net.forward(&mut tape, &batch)?;
                Ok(tape.value(y).data()[0])
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header: Vec<(String, String)> =
            self.spec.to_kv().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        header.push(("test_year".into(), self.test_year.to_string()));
        header.push(("best_epoch".into(), self.best_epoch.to_string()));
        let years: Vec<String> = self.norm.source_years.iter().map(|y| y.to_string()).collect();
        header.push(("source_years".into(), years.join(",")));
        for (crop, s) in &self.norm.yields {
            header.push((format!("yield_mean.{crop}"), format!("{:?}", s.mean)));
            header.push((format!("yield_std.{crop}"), format!("{:?}", s.std)));
        }
        if let Net::Linear(m) = &self.net {
            header.push(("linear.intercept".into(), format!("{:?}", m.intercept)));
            header.push(("linear.lambda".into(), format!("{:?}", m.lambda)));
            header.push(("linear.converged".into(), m.converged.to_string()));
        }
        let mut out = format!("{CHECKPOINT_MAGIC}\n");
        for (k, v) in &header {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out.push_str("end-header\n");
        let mut bytes = out.into_bytes();

        let ch = &self.norm.channels;
        write_block(&mut bytes, "norm/mean", &[ch.len()], &ch.iter().map(|c| c.mean).collect::<Vec<_>>());
        write_block(&mut bytes, "norm/std", &[ch.len()], &ch.iter().map(|c| c.std).collect::<Vec<_>>());
        let flags: Vec<f64> = ch.iter().map(|c| if c.constant { 1.0 } else { 0.0 }).collect();
        write_block(&mut bytes, "norm/constant", &[ch.len()], &flags);
        let hist: Vec<f64> = self
            .history
            .iter()
            .flat_map(|r| [r.epoch as f64, r.lr, r.train_loss, r.val_loss, r.val_rmse])
            .collect();
        write_block(&mut bytes, "history", &[self.history.len(), 5], &hist);
        match &self.net {
            Net::Linear(m) => {
                write_block(&mut bytes, "linear/coef", &[m.coef.len()], &m.coef);
                write_block(&mut bytes, "linear/x_mean", &[m.x_mean.len()], &m.x_mean);
            }
            Net::Deep(net) => {
                for (name, t) in net.store.iter() {
                    write_block(&mut bytes, &format!("param/{name}"), t.shape(), t.data());
                }
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let mut pos = 0usize;
        let next_line = |pos: &mut usize| -> Result<String> {
            let rest = &bytes[*pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
            *pos += end + 1;
            String::from_utf8(rest[..end].to_vec()).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))
        };
        let magic = next_line(&mut pos)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(bad(format!("bad magic line `{magic}`")));
        }
        let mut header: Vec<(String, String)> = Vec::new();
        loop {
            let line = next_line(&mut pos)?;
            if line == "end-header" {
                break;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| bad(format!("bad header line `{line}`")))?;
            header.push((k.to_string(), v.to_string()));
        }
        let map: HashMap<&str, &str> = header.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        let get = |k: &str| map.get(k).copied().ok_or_else(|| Error::Checkpoint(format!("missing header key `{k}`")));
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse::<f64>()
                .map_err(|_| Error::Checkpoint(format!("bad number for `{k}`")))
        };
        let spec = ModelSpec::from_kv(
            header
                .iter()
                .filter(|(k, _)| ModelSpec::KEYS.contains(&k.as_str()))
                .map(|(k, v)| (k.as_str(), v.as_str())),
        )
        .map_err(|e| bad(e.to_string()))?;
        let test_year: i32 = get("test_year")?.parse().map_err(|_| bad("bad test_year".into()))?;
        let best_epoch: usize = get("best_epoch")?.parse().map_err(|_| bad("bad best_epoch".into()))?;
        let source_years = get("source_years")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<i32>().map_err(|_| bad(format!("bad source year `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        let mut yields = BTreeMap::new();
        for crop in Crop::ALL {
            if let (Ok(mean), Ok(std)) = (num(&format!("yield_mean.{crop}")), num(&format!("yield_std.{crop}"))) {
                yields.insert(crop, YieldStats { mean, std });
            }
        }

        let mut blocks: BTreeMap<String, Tensor> = BTreeMap::new();
        while pos < bytes.len() {
            let (name, t) = read_block(bytes, &mut pos)?;
            if blocks.insert(name.clone(), t).is_some() {
                return Err(bad(format!("duplicate block `{name}`")));
            }
        }
        let mut take = |name: &str| blocks.remove(name).ok_or_else(|| Error::Checkpoint(format!("missing block `{name}`")));
        let mean = take("norm/mean")?;
        let std = take("norm/std")?;
        let constant = take("norm/constant")?;
        let n_ch = N_CHANNELS - 1;
        for t in [&mean, &std, &constant] {
            if t.shape() != [n_ch] {
                return Err(bad(format!("normalization block of shape {:?}", t.shape())));
            }
        }
        let channels = (0..n_ch)
            .map(|i| ChannelStats {
                mean: mean.data()[i],
                std: std.data()[i],
                constant: constant.data()[i] != 0.0,
            })
            .collect();
        let hist = take("history")?;
        if hist.rank() != 2 || hist.shape()[1] != 5 {
            return Err(bad(format!("history block of shape {:?}", hist.shape())));
        }
        let history = hist
            .data()
            .chunks_exact(5)
            .map(|r| EpochRecord {
                epoch: r[0] as usize,
                lr: r[1],
                train_loss: r[2],
                val_loss: r[3],
                val_rmse: r[4],
            })
            .collect();
        let net = if spec.kind.is_linear() {
            let coef = take("linear/coef")?.into_data();
            let x_mean = take("linear/x_mean")?.into_data();
            if coef.len() != N_FEATURES || x_mean.len() != N_FEATURES {
                return Err(bad("linear blocks have the wrong width".into()));
            }
            Net::Linear(LinearModel {
                kind: if spec.kind == super::ModelKind::Ridge1y {
                    LinearKind::Ridge
                } else {
                    LinearKind::Lasso
                },
                coef,
                x_mean,
                intercept: num("linear.intercept")?,
                lambda: num("linear.lambda")?,
                converged: get("linear.converged")? == "true",
                objective: Vec::new(),
            })
        } else {
            let mut net = DeepNet::new(&spec, &mut ChaCha8Rng::seed_from_u64(0)).map_err(|e| bad(e.to_string()))?;
            let ids: Vec<_> = net.store.ids().collect();
            for id in ids {
                let name = format!("param/{}", net.store.name(id));
                let t = take(&name)?;
                if t.shape() != net.store.get(id).shape() {
                    return Err(bad(format!(
                        "`{name}` has shape {:?}, model expects {:?}",
                        t.shape(),
                        net.store.get(id).shape()
                    )));
                }
                *net.store.get_mut(id) = t;
            }
            Net::Deep(net)
        };
        if let Some(extra) = blocks.keys().next() {
            return Err(bad(format!("unexpected block `{extra}`")));
        }
        Ok(Checkpoint {
            spec,
            test_year,
            norm: NormStats {
                channels,
                yields,
                source_years,
            },
            net,
            history,
            best_epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn write_block(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn take_bytes<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Checkpoint("truncated block".into()))?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

fn read_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    Ok(u32::from_le_bytes(take_bytes(bytes, pos, 4)?.try_into().unwrap()))
}

fn read_u64(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    Ok(u64::from_le_bytes(take_bytes(bytes, pos, 8)?.try_into().unwrap()))
}

fn read_block(bytes: &[u8], pos: &mut usize) -> Result<(String, Tensor)> {
    let len = read_u32(bytes, pos)? as usize;
    let name = String::from_utf8(take_bytes(bytes, pos, len)?.to_vec())
        .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?;
    let rank = read_u32(bytes, pos)? as usize;
    if rank > 8 {
        return Err(Error::Checkpoint(format!("block `{name}` has rank {rank}")));
    }
    let shape = (0..rank)
        .map(|_| read_u64(bytes, pos).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let count = read_u64(bytes, pos)? as usize;
    if shape.iter().product::<usize>() != count {
        return Err(Error::Checkpoint(format!("block `{name}`: {count} values for shape {shape:?}")));
    }
    let raw = take_bytes(bytes, pos, count.checked_mul(8).ok_or_else(|| Error::Checkpoint("block too large".into()))?)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((name, t))
}
