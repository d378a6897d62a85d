//! Rayon dispatch against the sequential fallback on the hot paths: dense
//! products, a convolutional year-encoder pass and a GraphSAGE forward.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use yieldgraph::graph::{gnn_forward, sample_block, CountyGraph, GnnConfig, SageStack};
use yieldgraph::layers::{EncoderConfig, YearEncoder, YearInputs};
use yieldgraph::par::set_parallel;
use yieldgraph::tensor::{ParamStore, Tape, Tensor};

fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn modes() -> [(&'static str, bool); 2] {
    [("parallel", true), ("sequential", false)]
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random(vec![256, 512], &mut rng);
    let b = random(vec![512, 256], &mut rng);
    let mut g = c.benchmark_group("matmul_fwd_bwd_256x512x256");
    for (name, on) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            set_parallel(on);
            bench.iter(|| {
                let mut tape = Tape::new();
                let x = tape.leaf(a.clone());
                let y = tape.leaf(b.clone());
                let z = tape.matmul(x, y).unwrap();
                let s = tape.sum(z).unwrap();
                tape.backward(s).unwrap();
            })
        });
    }
    g.finish();
    set_parallel(true);
}

fn encoder(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let enc = YearEncoder::new_cnn(&mut store, "enc", &EncoderConfig::narrowed(4), &mut rng).unwrap();
    let n = 64;
    let inputs = [
        random(vec![n, 7, 52], &mut rng),
        random(vec![n, 16, 52], &mut rng),
        random(vec![n, 20, 6], &mut rng),
        random(vec![n, 7], &mut rng),
    ];
    let mut g = c.benchmark_group("cnn_encoder_fwd_bwd_64_counties");
    g.sample_size(20);
    for (name, on) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            set_parallel(on);
            bench.iter(|| {
                let mut tape = Tape::new();
                let x = YearInputs {
                    weather: tape.constant(inputs[0].clone()),
                    land: tape.constant(inputs[1].clone()),
                    soil: tape.constant(inputs[2].clone()),
                    extras: tape.constant(inputs[3].clone()),
                };
                let h = enc.embed(&mut tape, &store, &x).unwrap();
                let s = tape.sum(h).unwrap();
                tape.backward(s).unwrap();
            })
        });
    }
    g.finish();
    set_parallel(true);
}

fn sage(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let graph = CountyGraph::grid(20, 20, "c");
    let cfg = GnnConfig::default();
    let mut store = ParamStore::new();
    let stack = SageStack::new(&mut store, "gnn", 64, &cfg, &mut rng);
    let seeds: Vec<usize> = (0..graph.len()).collect();
    let block = sample_block(&graph, &seeds, cfg.fanout, cfg.layers, 0.0, &mut rng).unwrap();
    let h = random(vec![block.input_nodes().len(), 64], &mut rng);
    let mut g = c.benchmark_group("sage_fwd_bwd_400_counties");
    for (name, on) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |bench| {
            set_parallel(on);
            bench.iter(|| {
                let mut tape = Tape::new();
                let x = tape.constant(h.clone());
                let out = gnn_forward(&mut tape, &store, &stack, &block, x).unwrap();
                let s = tape.sum(out).unwrap();
                tape.backward(s).unwrap();
            })
        });
    }
    g.finish();
    set_parallel(true);
}

criterion_group!(benches, matmul, encoder, sage);
criterion_main!(benches);
