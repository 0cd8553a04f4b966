use ivctl::calibration::{calibrate, force_from_displacement, identify_influence_vectors, CalibrationConfig, CalibrationReport};
use ivctl::make_reference_plant;
use ivctl::rng::stream;

/// Spread of identified influence-vector entries around the noise-free values.
fn column_std(repeats: usize) -> f64 {
    let p = make_reference_plant("nonlinear20x4", 3).unwrap();
    let exact = p.displacement_map().clone();
    let mut sq = 0.0;
    let mut count = 0usize;
    for seed in 0..40 {
        let (_, j) = identify_influence_vectors(&p, repeats, &mut stream(seed, "calibration")).unwrap();
        sq += (j.matrix() - &exact).iter().map(|d| d * d).sum::<f64>();
        count += exact.len();
    }
    let mean_sq = sq / count as f64;
    // subtract the deterministic part, estimated from a 256-repeat run
    let (_, reference) = identify_influence_vectors(&p, 256, &mut stream(999, "calibration")).unwrap();
    let bias_sq = (reference.matrix() - &exact).iter().map(|d| d * d).sum::<f64>() / exact.len() as f64;
    (mean_sq - bias_sq).max(0.0).sqrt()
}

#[test]
fn influence_noise_shrinks_with_repeats() {
    let (s1, s16) = (column_std(1), column_std(16));
    let ratio = s1 / s16;
    assert!((ratio / 4.0 - 1.0).abs() < 0.2, "std {s1:.4} -> {s16:.4}, ratio {ratio:.2}");
}

#[test]
fn linear_plant_calibrates_exactly() {
    let p = make_reference_plant("linear12x3", 8).unwrap();
    let report = calibrate(&p, &CalibrationConfig::default(), &mut stream(8, "calibration")).unwrap();
    let err = (report.j.matrix() - p.displacement_map()).amax();
    assert!(err < 1e-10, "{err}");
    let f = force_from_displacement(&report.j, p.stiffness()).unwrap();
    assert!((f.matrix() - report.f.as_ref().unwrap().matrix()).amax() < 1e-12);
    // force vectors of the linear plant are the force map columns
    assert!((f.matrix() - p.force_map()).amax() < 1e-8);
}

#[test]
fn report_survives_a_json_round_trip_through_disk() {
    let p = make_reference_plant("nonlinear10x2", 2).unwrap();
    let report = calibrate(&p, &CalibrationConfig::default(), &mut stream(2, "calibration")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cal.json");
    std::fs::write(&path, report.to_json()).unwrap();
    let back = CalibrationReport::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    back.check_plant(&p).unwrap();
    assert_eq!(back.j, report.j);
    assert_eq!(back.dispersion, report.dispersion);
}
