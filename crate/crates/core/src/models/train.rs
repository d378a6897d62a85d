use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::deep::{assemble, make_batches};
use super::{fit_lasso, fit_ridge, Checkpoint, DeepNet, LinearModel, ModelKind, ModelSpec, Net};
use crate::dataset::{normalize, Dataset, Prepared, SkipReport, YearSplit, N_FEATURES};
use crate::error::{Error, Result};
use crate::graph::CountyGraph;
use crate::optim::{logcosh_loss, Adam};
use crate::tensor::{log_cosh, ParamStore, Tape, Tensor};

const EVAL_BATCH: usize = 256;
const LASSO_MAX_ITER: usize = 10_000;
const LASSO_TOL: f64 = 1e-7;

/// One line of the training history. For linear kinds each "epoch" is one
/// point of the regularization grid and `lr` holds its lambda.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Validation RMSE in standardized yield units.
    pub val_rmse: f64,
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub checkpoint: Checkpoint,
    pub skipped_train: SkipReport,
    pub skipped_val: SkipReport,
}

pub fn train(spec: &ModelSpec, ds: &Dataset, split: &YearSplit) -> Result<Trained> {
    train_with_progress(spec, ds, split, |_| {})
}

fn mean_logcosh(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| log_cosh(p - t)).sum::<f64>() / pred.len() as f64
}

fn rmse_std(pred: &[f64], target: &[f64]) -> f64 {
    (pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64).sqrt()
}

/// Trains `spec` on `split.train_years`, scores every epoch on
/// `split.val_year` and keeps the parameters of the best validation epoch.
/// `on_epoch` sees each history record as it is produced.
pub fn train_with_progress(
    spec: &ModelSpec,
    ds: &Dataset,
    split: &YearSplit,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Trained> {
    spec.validate()?;
    let (norm_ds, stats) = normalize(ds, split)?;
    let data = Prepared::new(&norm_ds, &stats, spec.crop)?;
    let dt = spec.history_years();
    let (train_s, skipped_train) = data.samples(&split.train_years, dt);
    if train_s.is_empty() {
        return Err(Error::Empty(format!(
            "no {} training samples with a {}-year window",
            spec.crop,
            dt + 1
        )));
    }
    let (val_s, skipped_val) = data.samples(&[split.val_year], dt);
    if val_s.is_empty() {
        return Err(Error::Empty(format!("no {} validation samples in {}", spec.crop, split.val_year)));
    }
    let y_train: Vec<f64> = train_s.iter().map(|&(c, y)| data.label(c, y).unwrap()).collect();
    let y_val: Vec<f64> = val_s.iter().map(|&(c, y)| data.label(c, y).unwrap()).collect();

    let (net, history, best_epoch) = if spec.kind.is_linear() {
        fit_linear(spec, &data, &train_s, &y_train, &val_s, &y_val, &mut on_epoch)?
    } else {
        fit_deep(spec, &data, &train_s, &y_train, &val_s, &y_val, &mut on_epoch)?
    };
    Ok(Trained {
        checkpoint: Checkpoint {
            spec: spec.clone(),
            test_year: split.test_year,
            norm: stats,
            net,
            history,
            best_epoch,
        },
        skipped_train,
        skipped_val,
    })
}

type Fitted = (Net, Vec<EpochRecord>, usize);

fn fit_linear(
    spec: &ModelSpec,
    data: &Prepared,
    train_s: &[(usize, i32)],
    y_train: &[f64],
    val_s: &[(usize, i32)],
    y_val: &[f64],
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<Fitted> {
    let x = data.gather(train_s, 0);
    let xv = data.gather(val_s, 0);
    let (n, p) = (train_s.len(), N_FEATURES);
    let mut history = Vec::new();
    let mut best: Option<(f64, LinearModel, usize)> = None;
    let mut warm: Option<Vec<f64>> = None;
    for (i, &lambda) in spec.hyper.lambdas.iter().enumerate() {
        let m = match spec.kind {
            ModelKind::Ridge1y => fit_ridge(&x, y_train, n, p, lambda)?,
            _ => fit_lasso(&x, y_train, n, p, lambda, LASSO_MAX_ITER, LASSO_TOL, warm.as_deref())?,
        };
        warm = Some(m.coef.clone());
        let pt = m.predict(&x, n)?;
        let pv = m.predict(&xv, val_s.len())?;
        let rec = EpochRecord {
            epoch: i,
            lr: lambda,
            train_loss: mean_logcosh(&pt, y_train),
            val_loss: mean_logcosh(&pv, y_val),
            val_rmse: rmse_std(&pv, y_val),
        };
        on_epoch(&rec);
        history.push(rec);
        if best.as_ref().map_or(true, |b| rec.val_rmse < b.0) {
            best = Some((rec.val_rmse, m, i));
        }
    }
    let (_, m, e) = best.expect("lambda grid is non-empty");
    Ok((Net::Linear(m), history, e))
}

fn numerical(epoch: usize, batch: usize) -> impl Fn(Error) -> Error {
    move |e| {
        if e.is_numerical() {
            Error::NumericalAbort {
                epoch,
                batch,
                detail: e.to_string(),
            }
        } else {
            e
        }
    }
}

fn fit_deep(
    spec: &ModelSpec,
    data: &Prepared,
    train_s: &[(usize, i32)],
    y_train: &[f64],
    val_s: &[(usize, i32)],
    y_val: &[f64],
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<Fitted> {
    let h = &spec.hyper;
    let kind = spec.kind;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut net = DeepNet::new(spec, &mut rng)?;
    let mut adam = Adam::new(&net.store, h.schedule.lr_at(0), h.weight_decay);
    let graph = kind.is_graph().then_some(&data.ds.graph);
    let label: HashMap<(usize, i32), f64> = train_s.iter().copied().zip(y_train.iter().copied()).collect();
    let mut history = Vec::with_capacity(h.epochs);
    let mut best: Option<(f64, ParamStore, usize)> = None;
    for epoch in 0..h.epochs {
        adam.lr = h.schedule.lr_at(epoch);
        let batches = make_batches(kind, train_s, h.batch_size, Some(&mut rng));
        let (mut total, mut count) = (0.0, 0usize);
        for (bi, chunk) in batches.iter().enumerate() {
            let abort = numerical(epoch, bi);
            let batch = assemble(
                kind,
                data,
                chunk,
                graph,
                h.gnn.layers,
                h.gnn.fanout,
                h.gnn.edge_dropout,
                &mut rng,
            )?;
            let targets: Vec<f64> = chunk.iter().map(|s| label[s]).collect();
            let mut tape = Tape::new();
            let pred = net.forward(&mut tape, &batch).map_err(&abort)?;
            let t = tape.constant(Tensor::vector(targets)?);
            let loss = logcosh_loss(&mut tape, pred, t, &vec![true; chunk.len()]).map_err(&abort)?;
            let lv = tape.value(loss).item();
            tape.backward(loss).map_err(&abort)?;
            adam.step(&mut net.store, &tape).map_err(&abort)?;
            total += lv * chunk.len() as f64;
            count += chunk.len();
        }
        let pv = predict_deep(&net, data, val_s, graph, spec).map_err(numerical(epoch, batches.len()))?;
        let rec = EpochRecord {
            epoch,
            lr: adam.lr,
            train_loss: total / count as f64,
            val_loss: mean_logcosh(&pv, y_val),
            val_rmse: rmse_std(&pv, y_val),
        };
        on_epoch(&rec);
        history.push(rec);
        if best.as_ref().map_or(true, |b| rec.val_rmse < b.0) {
            best = Some((rec.val_rmse, net.store.clone(), epoch));
        }
    }
    let (_, store, e) = best.expect("at least one epoch");
    net.store = store;
    Ok((Net::Deep(net), history, e))
}

/// Inference-mode predictions aligned with `samples`: every neighbor is
/// used and no edges are dropped.
pub(crate) fn predict_deep(
    net: &DeepNet,
    data: &Prepared,
    samples: &[(usize, i32)],
    graph: Option<&CountyGraph>,
    spec: &ModelSpec,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let kind = spec.kind;
    let size = if kind.is_graph() { usize::MAX } else { EVAL_BATCH };
    let batches = make_batches::<ChaCha8Rng>(kind, samples, size, None);
    // full fanout and zero dropout never draw from the generator
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out: HashMap<(usize, i32), f64> = HashMap::with_capacity(samples.len());
    for chunk in &batches {
        let batch = assemble(kind, data, chunk, graph, spec.hyper.gnn.layers, usize::MAX, 0.0, &mut rng)?;
        let mut tape = Tape::new();
        let pred = net.forward(&mut tape, &batch)?;
        for (s, v) in chunk.iter().zip(tape.value(pred).data()) {
            out.insert(*s, *v);
        }
    }
    Ok(samples.iter().map(|s| out[s]).collect())
}
