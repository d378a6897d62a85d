//! Trains one method on the 100-county synthetic set and prints its test R².
//!
//! `cargo run --release --example desk -- <kind> <epochs> <channel_div> <schedule> <batch> [seed] [data_seed]`
//! e.g. `cargo run --release --example desk -- gnn-1y 40 4 cosine:1e-3:40:1e-5 64`

use std::time::Instant;

use yieldgraph::dataset::{generate_synthetic, Crop, SynthConfig, YearSplit};
use yieldgraph::eval::r_squared;
use yieldgraph::models::{train_with_progress, ModelKind, ModelSpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let kind: ModelKind = args[1].parse().unwrap();
    let epochs: usize = args[2].parse().unwrap();
    let div: usize = args[3].parse().unwrap();
    let sched = &args[4];
    let batch: usize = args[5].parse().unwrap();
    let seed: u64 = args.get(6).map_or(0, |s| s.parse().unwrap());
    let data_seed: u64 = args.get(7).map_or(7, |s| s.parse().unwrap());
    let ds = generate_synthetic(&SynthConfig::new(100, 20, data_seed)).unwrap();
    let split = YearSplit::new(2019, &ds.years()).unwrap();
    let mut spec = ModelSpec::published(kind, Crop::Corn, 2019);
    spec.seed = seed;
    spec.hyper.epochs = epochs;
    spec.hyper.channel_div = div;
    spec.hyper.schedule = sched.parse().unwrap();
    spec.hyper.batch_size = batch;
    let t0 = Instant::now();
    let tr = train_with_progress(&spec, &ds, &split, |r| {
        if r.epoch % 5 == 4 || r.epoch == 0 {
            eprintln!("{:>3} lr {:.1e} train {:.4} val_rmse {:.4}", r.epoch, r.lr, r.train_loss, r.val_rmse)
        }
    })
    .unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let ck = tr.checkpoint;
    let data = ck.prepare(&ds).unwrap();
    let (s, _) = data.samples(&[2019], kind.history_years());
    let g = kind.is_graph().then_some(&data.ds.graph);
    let p = ck.predict(&data, &s, g).unwrap();
    let t: Vec<f64> = s.iter().map(|&(c, y)| data.label(c, y).unwrap()).collect();
    println!("{kind} div {div} ep {epochs} best {} test r2 {:.4} time {:.1}s", ck.best_epoch, r_squared(&t, &p).unwrap(), secs);
}
