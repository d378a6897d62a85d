use std::path::Path;

use proptest::prelude::*;

use super::*;
use crate::error::Error;

fn overlap(county: &str, cell: usize, o: f64, a: f64) -> CellOverlap {
    CellOverlap {
        county: county.into(),
        cell,
        overlap: o,
        agland: a,
    }
}

#[test]
fn weighted_mean_matches_hand_value() {
    let g = RasterGrid::new(2, 1, 1.0, vec![10.0, 20.0]).unwrap();
    let w = build_weight_map(&[overlap("a", 0, 0.5, 0.4), overlap("a", 1, 1.0, 0.2)], None).unwrap();
    let ws = w.get("a");
    assert!((ws[0].1 - 0.2).abs() < 1e-15 && (ws[1].1 - 0.2).abs() < 1e-15);
    assert!((aggregate_to_county(&g, &w, "a").unwrap() - 15.0).abs() < 1e-12);
}

#[test]
fn constant_raster_and_nodata() {
    let g = RasterGrid::new(3, 1, 1.0, vec![7.0; 3]).unwrap();
    let w = build_weight_map(&[overlap("a", 0, 0.3, 0.9), overlap("a", 2, 0.7, 0.1)], None).unwrap();
    assert!((aggregate_to_county(&g, &w, "a").unwrap() - 7.0).abs() < 1e-12);
    let mut nd = RasterGrid::new(3, 1, 1.0, vec![-9999.0; 3]).unwrap();
    nd.nodata = Some(-9999.0);
    assert_eq!(aggregate_to_county(&nd, &w, "a"), None);
    assert_eq!(aggregate_to_county(&g, &w, "unknown"), None);
}

#[test]
fn weight_map_rules() {
    let w = build_weight_map(&[overlap("a", 0, 1.0, 0.0), overlap("a", 1, 0.5, 0.5), overlap("b", 2, 1.0, 0.0)], None)
        .unwrap();
    assert_eq!(w.get("a"), &[(1, 0.25)]);
    assert!(w.get("b").is_empty());
    assert!(matches!(
        build_weight_map(&[overlap("a", 0, 1.2, 0.5)], None),
        Err(Error::InvalidArgument(_))
    ));
    assert!(build_weight_map(&[overlap("a", 0, 0.7, 0.5), overlap("b", 0, 0.6, 0.5)], None).is_err());
    assert!(w.check_cells(2).is_ok());
    let bad = build_weight_map(&[overlap("a", 5, 1.0, 1.0)], None).unwrap();
    assert!(bad.check_cells(4).is_err());
}

#[test]
fn landcover_raster_overrides_file_fraction() {
    let lc = RasterGrid::new(2, 1, 1.0, vec![0.5, 0.0]).unwrap();
    let w = build_weight_map(&[overlap("a", 0, 0.5, 1.0), overlap("a", 1, 1.0, 1.0)], Some(&lc)).unwrap();
    assert_eq!(w.get("a"), &[(0, 0.25)]);
}

#[test]
fn ascii_grid_round_trip_and_errors() {
    let text = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 0.5\nNODATA_value -9999\n1 2\n3 -9999\n";
    let g = RasterGrid::parse(text, Path::new("g.asc")).unwrap();
    assert_eq!(g.values, vec![1.0, 2.0, 3.0, -9999.0]);
    assert_eq!(g.value(3), None);
    assert_eq!(RasterGrid::parse(&g.to_ascii(), Path::new("g.asc")).unwrap(), g);
    let short = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2 3\n";
    assert!(matches!(RasterGrid::parse(short, Path::new("s.asc")), Err(Error::Parse { .. })));
    let bad = "ncols 1\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nx\n";
    match RasterGrid::parse(bad, Path::new("b.asc")) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
        other => panic!("{other:?}"),
    }
    assert!(RasterGrid::new(1, 1, 0.0, vec![1.0]).is_err());
}

#[test]
fn weight_file_parses() {
    let rows = parse_weight_file(
        "county,cell_index,overlap_fraction,agland_fraction\n19001,0,0.5,0.4\n19001,1,1,0.2\n",
        Path::new("w.csv"),
    )
    .unwrap();
    assert_eq!(rows[1], overlap("19001", 1, 1.0, 0.2));
    assert!(parse_weight_file("a,b\n", Path::new("w.csv")).is_err());
    match parse_weight_file("county,cell_index,overlap_fraction,agland_fraction\nx,zz,1,1\n", Path::new("w.csv")) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn weekly_fold_rule() {
    let w = daily_to_weekly(&[3.0; 365], VariableKind::State).unwrap();
    assert_eq!(w.len(), 52);
    assert!(w.iter().all(|v| *v == 3.0));
    let f = daily_to_weekly(&[1.0; 365], VariableKind::Flux).unwrap();
    assert!(f[..51].iter().all(|v| *v == 7.0));
    assert_eq!(f[51], 8.0);
    assert_eq!(daily_to_weekly(&[1.0; 366], VariableKind::Flux).unwrap()[51], 9.0);
    assert!(daily_to_weekly(&[1.0; 364], VariableKind::Flux).is_err());
}

#[test]
fn hourly_reduction() {
    let h: Vec<f64> = (0..48).map(|i| i as f64).collect();
    assert_eq!(hourly_to_daily(&h, DailyReduce::Max).unwrap(), vec![23.0, 47.0]);
    assert_eq!(hourly_to_daily(&h, DailyReduce::Sum).unwrap(), vec![276.0, 852.0]);
    assert_eq!(hourly_to_daily(&h, DailyReduce::Mean).unwrap(), vec![11.5, 35.5]);
    assert!(hourly_to_daily(&h[..30], DailyReduce::Sum).is_err());
    assert_eq!(DailyReduce::from(VariableKind::Flux), DailyReduce::Sum);
}

#[test]
fn texture_examples() {
    let c = |a, b, d| classify_texture(&TexturePoint::new(a, b, d).unwrap());
    assert_eq!(c(92.0, 5.0, 3.0), TextureClass::Sand);
    assert_eq!(c(40.0, 40.0, 20.0), TextureClass::Loam);
    assert_eq!(c(20.0, 20.0, 60.0), TextureClass::Clay);
    assert_eq!(c(10.0, 85.0, 5.0), TextureClass::Silt);
    assert_eq!(c(20.0, 65.0, 15.0), TextureClass::SiltLoam);
    assert_eq!(c(5.0, 50.0, 45.0), TextureClass::SiltyClay);
    assert_eq!(c(60.0, 10.0, 30.0), TextureClass::SandyClayLoam);
    assert_eq!(c(55.0, 10.0, 35.0), TextureClass::SandyClay);
}

#[test]
fn texture_point_validation() {
    let p = TexturePoint::new(40.2, 40.0, 20.0).unwrap();
    assert!((p.sand + p.silt + p.clay - 100.0).abs() < 1e-12);
    assert!(TexturePoint::new(50.0, 50.0, 1.0).is_err());
    assert!(TexturePoint::new(-1.0, 81.0, 20.0).is_err());
}

#[test]
fn texture_partition_at_half_percent() {
    for i in 0..=200 {
        for j in 0..=(200 - i) {
            let (clay, silt) = (i as f64 * 0.5, j as f64 * 0.5);
            let p = TexturePoint {
                sand: 100.0 - clay - silt,
                silt,
                clay,
            };
            let hits = TextureClass::ALL.iter().filter(|c| c.contains(&p)).count();
            assert_eq!(hits, 1, "{p:?}");
        }
    }
}

#[test]
fn texture_fractions() {
    let a = TexturePoint::new(92.0, 5.0, 3.0).unwrap();
    let b = TexturePoint::new(20.0, 20.0, 60.0).unwrap();
    let one = county_texture_fractions(&[(a, 2.0)]).unwrap();
    assert_eq!(one[TextureClass::Sand.index()], 1.0);
    let two = county_texture_fractions(&[(a, 1.0), (b, 1.0)]).unwrap();
    assert_eq!(two[TextureClass::Sand.index()], 0.5);
    assert_eq!(two[TextureClass::Clay.index()], 0.5);
    assert_eq!(county_texture_fractions(&[]), None);
}

fn write_grid(dir: &Path, name: &str, vals: &[f64]) {
    let g = RasterGrid::new(vals.len(), 1, 1.0, vals.to_vec()).unwrap();
    std::fs::write(dir.join(name), g.to_ascii()).unwrap();
}

#[test]
fn manifest_pipeline_toy() {
    let dir = tempfile::tempdir().unwrap();
    write_grid(dir.path(), "awc.asc", &[10.0, 20.0, 30.0, 40.0]);
    for d in 1..=365 {
        write_grid(dir.path(), &format!("ppt_{d:03}.asc"), &[1.0, 2.0, 3.0, 4.0]);
    }
    let weights = build_weight_map(
        &[
            overlap("a", 0, 1.0, 1.0),
            overlap("a", 1, 1.0, 0.5),
            overlap("b", 2, 1.0, 0.25),
            overlap("b", 3, 1.0, 0.75),
        ],
        None,
    )
    .unwrap();
    let manifest = parse_manifest(
        "target,kind,path\ns_awc_0,static,awc.asc\nw_ppt,flux,ppt_{day}.asc\n",
        Path::new("m.csv"),
    )
    .unwrap();
    let out = run_manifest(dir.path(), &manifest, &weights, 2019).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("county,year,w_ppt_0,"));
    assert!(lines[0].ends_with(",w_ppt_51,s_awc_0"));
    let a: Vec<f64> = lines[1].split(',').skip(2).map(|v| v.parse().unwrap()).collect();
    let b: Vec<f64> = lines[2].split(',').skip(2).map(|v| v.parse().unwrap()).collect();
    let (ma, mb) = ((1.0 + 2.0 * 0.5) / 1.5, (3.0 * 0.25 + 4.0 * 0.75) / 1.0);
    assert!((a[0] - 7.0 * ma).abs() < 1e-9 && (a[51] - 8.0 * ma).abs() < 1e-9);
    assert!((b[0] - 7.0 * mb).abs() < 1e-9);
    assert!((a[52] - (10.0 + 20.0 * 0.5) / 1.5).abs() < 1e-12);
    assert!((b[52] - (30.0 * 0.25 + 40.0 * 0.75)).abs() < 1e-12);
    assert_eq!(run_manifest(dir.path(), &manifest, &weights, 2019).unwrap(), out);
}

#[test]
fn manifest_rejects_bad_entries() {
    let p = Path::new("m.csv");
    assert!(parse_manifest("target,kind,path\nw_nope,flux,x_{day}\n", p).is_err());
    assert!(parse_manifest("target,kind,path\nw_ppt,flux,x.asc\n", p).is_err());
    assert!(parse_manifest("target,kind,path\ns_awc_0,weird,x.asc\n", p).is_err());
    assert!(parse_manifest("target,kind,path\ns_awc_0,static,a\ns_awc_0,static,b\n", p).is_err());
    assert!(parse_manifest("target,kind,path\ncounty,static,a\n", p).is_err());
}

#[test]
fn missing_daily_raster_names_path() {
    let dir = tempfile::tempdir().unwrap();
    for d in 1..=10 {
        write_grid(dir.path(), &format!("t_{d:03}.asc"), &[1.0]);
    }
    let weights = build_weight_map(&[overlap("a", 0, 1.0, 1.0)], None).unwrap();
    let m = parse_manifest("target,kind,path\nw_tmax,state,t_{day}.asc\n", Path::new("m")).unwrap();
    let err = run_manifest(dir.path(), &m, &weights, 2000).unwrap_err().to_string();
    assert!(err.contains("t_011.asc"), "{err}");
}

proptest! {
    #[test]
    fn aggregate_is_convex_and_scale_invariant(
        cells in prop::collection::vec((-50.0f64..50.0, 0.01f64..1.0, 0.01f64..1.0), 1..12),
        scale in 0.01f64..100.0,
    ) {
        let vals: Vec<f64> = cells.iter().map(|c| c.0).collect();
        let g = RasterGrid::new(vals.len(), 1, 1.0, vals.clone()).unwrap();
        let rows: Vec<CellOverlap> = cells.iter().enumerate().map(|(i, c)| overlap("a", i, c.1, c.2)).collect();
        let w = build_weight_map(&rows, None).unwrap();
        let v = aggregate_to_county(&g, &w, "a").unwrap();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo && v <= hi);
        let mut scaled = w.clone();
        for ws in scaled.weights.values_mut() {
            ws.iter_mut().for_each(|e| e.1 *= scale);
        }
        let vs = aggregate_to_county(&g, &scaled, "a").unwrap();
        prop_assert!((vs - v).abs() <= 1e-12 * v.abs().max(1.0));
    }

    #[test]
    fn flux_weeks_conserve_total(series in prop::collection::vec(0u32..1000, 365..=366)) {
        let s: Vec<f64> = series.iter().map(|&v| v as f64 * 0.25).collect();
        let w = daily_to_weekly(&s, VariableKind::Flux).unwrap();
        prop_assert_eq!(w.iter().sum::<f64>(), s.iter().sum::<f64>());
    }

    #[test]
    fn texture_fractions_sum_to_one(
        pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.001f64..5.0), 1..20),
    ) {
        let points: Vec<(TexturePoint, f64)> = pts
            .iter()
            .map(|&(a, b, w)| {
                let clay = a * 100.0;
                let silt = b * (100.0 - clay);
                (TexturePoint::new(100.0 - clay - silt, silt, clay).unwrap(), w)
            })
            .collect();
        let f = county_texture_fractions(&points).unwrap();
        prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
