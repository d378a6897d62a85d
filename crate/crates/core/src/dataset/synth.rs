use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    Crop, Dataset, YearFeatures, YieldTable, EXTRAS_OFFSET, LAND_OFFSET, N_FEATURES, PREV_YIELD_INDEX, SOIL_OFFSET,
    WEATHER_OFFSET,
};
use crate::error::{Error, Result};
use crate::graph::CountyGraph;
use crate::layers::{N_DEPTHS, N_EXTRAS, N_LAND, N_SOIL, N_WEATHER, N_WEEKS};

/// Parameters of the synthetic county grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_counties: usize,
    pub n_years: usize,
    pub grid_side: usize,
    pub seed: u64,
    pub first_year: i32,
    /// Fraction of county-year yields withheld.
    pub missing_yield_frac: f64,
    /// Counties that never report a yield.
    pub unlabeled_counties: usize,
    /// Fraction of weekly cells reported missing.
    pub missing_cell_frac: f64,
}

impl SynthConfig {
    pub fn new(n_counties: usize, n_years: usize, seed: u64) -> Self {
        SynthConfig {
            n_counties,
            n_years,
            grid_side: (n_counties as f64).sqrt().round() as usize,
            seed,
            first_year: 2000,
            missing_yield_frac: 0.05,
            unlabeled_counties: 3,
            missing_cell_frac: 5e-4,
        }
    }
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn smooth(g: &CountyGraph, field: &[f64], sweeps: usize) -> Vec<f64> {
    let mut f = field.to_vec();
    for _ in 0..sweeps {
        f = (0..g.len())
            .map(|i| {
                let nb = g.neighbors(i);
                (f[i] + nb.iter().map(|&j| f[j]).sum::<f64>()) / (1 + nb.len()) as f64
            })
            .collect();
    }
    f
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x = (*x - m) / sd);
}

fn smooth_field<R: Rng>(g: &CountyGraph, rng: &mut R) -> Vec<f64> {
    let iid: Vec<f64> = (0..g.len()).map(|_| normal(rng)).collect();
    let mut f = smooth(g, &iid, 2);
    standardize(&mut f);
    f
}

fn round_to(v: f64, digits: i32) -> f64 {
    let s = 10f64.powi(digits);
    (v * s).round() / s
}

/// Mid-season response profile peaking in week 30.
fn season_window(week: usize) -> f64 {
    if week < 22 {
        0.0
    } else {
        (-((week as f64 - 30.0) / 4.0).powi(2)).exp()
    }
}

/// Latent-factor crop-yield world on a square county grid.
///
/// Yields combine a linear trend, a spatially smooth static fertility field
/// and a spatially smooth yearly mid-season anomaly. Soil and extras observe
/// fertility and the weekly channels observe the anomaly (after week 22),
/// each through county-level noise that neighbors can average away.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    let side = cfg.grid_side;
    if side * side != cfg.n_counties || side == 0 {
        return Err(Error::InvalidArgument(format!(
            "{} counties do not form a {side}×{side} grid",
            cfg.n_counties
        )));
    }
    if cfg.n_years < 6 {
        return Err(Error::InvalidArgument(format!("need at least 6 years, got {}", cfg.n_years)));
    }
    if !(0.0..1.0).contains(&cfg.missing_yield_frac) || !(0.0..1.0).contains(&cfg.missing_cell_frac) {
        return Err(Error::InvalidArgument("missing fractions must lie in [0, 1)".into()));
    }
    if cfg.unlabeled_counties >= cfg.n_counties {
        return Err(Error::InvalidArgument("every county would be unlabeled".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let graph = CountyGraph::grid(side, side, "c");
    let n = graph.len();

    let fert = smooth_field(&graph, &mut rng);
    let soil_noise: Vec<f64> = (0..n).map(|_| 0.8 * normal(&mut rng)).collect();

    // static soil and extras: noisy linear proxies of fertility
    let soil_base: Vec<f64> = (0..N_SOIL).map(|_| rng.gen_range(0.0..10.0)).collect();
    let soil_load: Vec<f64> = (0..N_SOIL).map(|_| rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    let extra_base: Vec<f64> = (0..N_EXTRAS - 1).map(|_| rng.gen_range(0.0..5.0)).collect();
    let extra_load: Vec<f64> = (0..N_EXTRAS - 1).map(|_| rng.gen_range(0.5..1.5)).collect();
    let mut static_part = vec![vec![0.0; N_SOIL * N_DEPTHS + N_EXTRAS - 1]; n];
    for c in 0..n {
        let proxy = fert[c] + soil_noise[c];
        for s in 0..N_SOIL {
            for d in 0..N_DEPTHS {
                let depth_w = 1.0 - 0.12 * d as f64;
                static_part[c][s * N_DEPTHS + d] = soil_base[s] + soil_load[s] * depth_w * proxy + 0.3 * normal(&mut rng);
            }
        }
        for e in 0..N_EXTRAS - 1 {
            static_part[c][N_SOIL * N_DEPTHS + e] = extra_base[e] + extra_load[e] * proxy + 0.3 * normal(&mut rng);
        }
    }

    // weekly channels: seasonal sinusoid + county offset + noise + anomaly response
    let n_weekly = N_WEATHER + N_LAND;
    let amp: Vec<f64> = (0..n_weekly).map(|_| rng.gen_range(1.0..4.0)).collect();
    let phase: Vec<f64> = (0..n_weekly).map(|_| rng.gen_range(0.0..52.0)).collect();
    let base: Vec<f64> = (0..n_weekly).map(|_| rng.gen_range(-5.0..20.0)).collect();
    let resp: Vec<f64> = (0..n_weekly)
        .map(|k| if k % 3 == 0 { rng.gen_range(1.0..2.0) } else { rng.gen_range(-0.5..0.5) })
        .collect();
    let county_offset: Vec<Vec<f64>> = (0..n).map(|_| (0..n_weekly).map(|_| 0.5 * normal(&mut rng)).collect()).collect();

    let unlabeled: Vec<usize> = {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        idx.truncate(cfg.unlabeled_counties);
        idx
    };

    let mut records = Vec::with_capacity(n * cfg.n_years);
    let mut yields = YieldTable::new();
    for k in 0..cfg.n_years {
        let year = cfg.first_year + k as i32;
        let anomaly = smooth_field(&graph, &mut rng);
        for c in 0..n {
            let seen = anomaly[c] + 0.6 * normal(&mut rng);
            let mut v = vec![0.0; N_FEATURES];
            for ch in 0..n_weekly {
                let off = if ch < N_WEATHER {
                    WEATHER_OFFSET + ch * N_WEEKS
                } else {
                    LAND_OFFSET + (ch - N_WEATHER) * N_WEEKS
                };
                for w in 0..N_WEEKS {
                    let seasonal = base[ch] + amp[ch] * (2.0 * PI * (w as f64 - phase[ch]) / 52.0).sin();
                    let x = seasonal + county_offset[c][ch] + resp[ch] * season_window(w) * seen + 0.5 * normal(&mut rng);
                    v[off + w] = round_to(x, 4);
                }
            }
            for (i, &s) in static_part[c].iter().enumerate() {
                v[SOIL_OFFSET + i] = round_to(s, 4);
            }
            debug_assert_eq!(SOIL_OFFSET + static_part[c].len(), EXTRAS_OFFSET + N_EXTRAS - 1);
            for cell in v[..SOIL_OFFSET].iter_mut() {
                if rng.gen::<f64>() < cfg.missing_cell_frac {
                    *cell = f64::NAN;
                }
            }
            v[PREV_YIELD_INDEX] = f64::NAN;
            records.push(YearFeatures::new(graph.id(c), year, v)?);

            let t = k as f64;
            let corn = 150.0 + 1.5 * t + 12.0 * fert[c] + 10.0 * anomaly[c] + 4.0 * normal(&mut rng);
            let soy = 45.0 + 0.4 * t + 3.5 * fert[c] + 3.0 * anomaly[c] + 1.2 * normal(&mut rng);
            let report = rng.gen::<f64>() >= cfg.missing_yield_frac;
            if report && !unlabeled.contains(&c) {
                yields.insert(graph.id(c), year, Crop::Corn, round_to(corn.max(1.0), 2))?;
                yields.insert(graph.id(c), year, Crop::Soybean, round_to(soy.max(1.0), 2))?;
            }
        }
    }
    Dataset::new(graph, records, yields)
}
