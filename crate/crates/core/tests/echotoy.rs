use std::fs;

use echosyn_core::downstream::dominant_period;
use echosyn_core::echotoy::*;
use echosyn_core::privacy::pearson_distance;

#[test]
fn pixel_area_extrema_match_the_label() {
    let cfg = EchoToyConfig::default();
    for i in 0..100 {
        let (id, ef, period, _) = draw_params(&cfg, i);
        let areas: Vec<f64> = (0..period).map(|f| ventricle_area(&cfg, id, ef, period, f)).collect();
        let max = areas.iter().cloned().fold(f64::MIN, f64::max);
        let min = areas.iter().cloned().fold(f64::MAX, f64::min);
        let implied = 100.0 * (max - min) / max;
        assert!((implied - ef).abs() <= 2.0, "sample {i}: label {ef:.2}, pixels {implied:.2}");
    }
}

#[test]
fn dataset_counts_and_determinism() {
    let cfg = EchoToyConfig::default();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = generate_dataset(&cfg, 100, [0.8, 0.1, 0.1], a.path()).unwrap();
    let mb = generate_dataset(&cfg, 100, [0.8, 0.1, 0.1], b.path()).unwrap();
    assert_eq!([ma.count(Split::Train), ma.count(Split::Val), ma.count(Split::Test)], [80, 10, 10]);
    assert_eq!(
        fs::read(a.path().join("manifest.csv")).unwrap(),
        fs::read(b.path().join("manifest.csv")).unwrap()
    );
    for (ra, rb) in ma.records.iter().zip(&mb.records) {
        assert_eq!(fs::read(ma.resolve(ra)).unwrap(), fs::read(mb.resolve(rb)).unwrap(), "{}", ra.id);
    }
    let loaded = DatasetManifest::load(&a.path().join("manifest.csv")).unwrap();
    assert_eq!(loaded.records, ma.records);
    assert!(generate_dataset(&cfg, 5, [0.8, 0.1, 0.1], a.path()).is_err());
}

#[test]
fn ef_draws_are_uniform() {
    let cfg = EchoToyConfig::default();
    let mut bins = [0usize; 10];
    for i in 0..1000 {
        let (_, ef, _, _) = draw_params(&cfg, i);
        let b = ((ef - cfg.ef_min) / (cfg.ef_max - cfg.ef_min) * 10.0) as usize;
        bins[b.min(9)] += 1;
    }
    let chi2: f64 = bins.iter().map(|&o| (o as f64 - 100.0).powi(2) / 100.0).sum();
    // 99th percentile of chi-square with 9 degrees of freedom.
    assert!(chi2 < 21.666, "chi2 {chi2}, bins {bins:?}");
}

#[test]
fn shared_identity_is_closer_than_any_other() {
    let cfg = EchoToyConfig::default();
    let ids: Vec<u64> = (0..20).map(|i| draw_params(&cfg, i).0).collect();
    let frame0 = |id: u64, ef: f64, period: usize| generate_sample(&cfg, id, ef, period, 1).unwrap().video.to_f64_vec();
    let a: Vec<Vec<f64>> = ids.iter().map(|&id| frame0(id, 30.0, 10)).collect();
    let b: Vec<Vec<f64>> = ids.iter().map(|&id| frame0(id, 70.0, 13)).collect();
    for i in 0..20 {
        let same = pearson_distance(&a[i], &b[i]).unwrap();
        for j in (0..20).filter(|j| *j != i) {
            let cross = pearson_distance(&a[i], &b[j]).unwrap();
            assert!(same < cross, "identity {i}: same {same} vs {j}: {cross}");
        }
    }
}

#[test]
fn area_series_repeats_at_the_period() {
    let cfg = EchoToyConfig::default();
    for i in 0..30 {
        let (id, ef, period, _) = draw_params(&cfg, i);
        let areas: Vec<f64> = (0..48).map(|f| ventricle_area(&cfg, id, ef, period, f)).collect();
        let p = dominant_period(&areas);
        assert!((p as i64 - period as i64).abs() <= 1, "sample {i}: period {period}, autocorrelation peak {p}");
    }
}

#[test]
fn view_tag_is_recoverable_from_a_frame() {
    let cfg = EchoToyConfig::default();
    let s = generate_samples(&cfg, 200, [1.0, 0.0, 0.0]).unwrap();
    let ok = s
        .iter()
        .filter(|x| estimate_view(&x.video.slice_rows(0, 1).unwrap(), &cfg).unwrap() == x.view)
        .count();
    assert!(ok >= 190, "{ok}/200");
}
