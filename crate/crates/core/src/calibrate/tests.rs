use super::*;
use crate::grid::GridGeometry;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::synthetic::{self, ScenarioConfig, TruthNoise};

fn grid_example(id: &str, geo: &GridGeometry, values: Vec<f64>, truth: Vec<f64>) -> Example {
    let mut ex = Example::new(id, truth);
    ex.grid = Some(GridDistribution::new(geo.clone(), values).unwrap());
    ex
}

fn sample_example(id: &str, truth: Vec<f64>, point: Vec<f64>, cov: Vec<Vec<f64>>) -> Example {
    let mut ex = Example::new(id, truth);
    ex.point = Some(point);
    ex.covariance = Some(cov);
    ex
}

fn identity2() -> Vec<Vec<f64>> {
    vec![vec![1.0, 0.0], vec![0.0, 1.0]]
}

/// Random 2-D calibration set with point, covariance and a heatmap.
fn random_set(n: usize, seed: u64) -> Vec<Example> {
    let geo = GridGeometry::unit(&[8, 8]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let values: Vec<f64> = (0..64).map(|_| rng.random::<f64>() + 0.01).collect();
            let truth = vec![rng.random_range(0.0..7.0), rng.random_range(0.0..7.0)];
            let s = rng.random_range(0.5..2.0);
            let mut ex = grid_example(&format!("e{i}"), &geo, values, truth);
            ex.point = Some(vec![rng.random_range(2.0..5.0), rng.random_range(2.0..5.0)]);
            ex.covariance = Some(vec![vec![s, 0.0], vec![0.0, 2.0 * s]]);
            ex
        })
        .collect()
}

#[test]
fn ellipsoidal_score_example() {
    let ex = sample_example("a", vec![3.0, 4.0], vec![0.0, 0.0], identity2());
    let cal = Calibrator::fit(
        Method::Ellipsoidal,
        std::slice::from_ref(&ex),
        CalibratorConfig::default(),
    )
    .unwrap();
    assert!((cal.score(&ex).unwrap() - 5.0).abs() < 1e-9);
}

#[test]
fn per_axis_ledgers_have_one_entry_per_example() {
    let set = random_set(12, 1);
    for method in [Method::Bonferroni, Method::Sidak] {
        let cal = Calibrator::fit(method, &set, CalibratorConfig::default()).unwrap();
        assert_eq!(cal.ledgers.len(), 2);
        assert!(cal.ledgers.iter().all(|l| l.len() == 12));
    }
}

#[test]
fn aps_calibration_score_example() {
    let geo = GridGeometry::unit(&[3]);
    let ex = grid_example("a", &geo, vec![0.3, 0.5, 0.2], vec![0.0]);
    let config = CalibratorConfig {
        bin_factor: Some(vec![1]),
        ..Default::default()
    };
    let cal = Calibrator::fit(Method::MR2c2rAps, std::slice::from_ref(&ex), config).unwrap();
    assert!((cal.score(&ex).unwrap() - 0.8).abs() < 1e-12);
}

#[test]
fn naive_uniform_grid_takes_nine_cells() {
    let geo = GridGeometry::unit(&[10]);
    let ex = grid_example("a", &geo, vec![0.1; 10], vec![0.0]);
    let cal = Calibrator::fit(
        Method::NaiveR2cr,
        std::slice::from_ref(&ex),
        CalibratorConfig::default(),
    )
    .unwrap();
    match cal.predict(&ex, 0.1).unwrap() {
        PredictionRegion::GridMask(m) => assert_eq!(m.count(), 9),
        other => panic!("unexpected region {other:?}"),
    }
}

#[test]
fn infinite_threshold_covers_the_whole_grid() {
    let set = random_set(5, 2);
    let cal = Calibrator::fit(Method::MR2ccp, &set, CalibratorConfig::default()).unwrap();
    // rank ⌊0.1·6⌋ = 0
    let p = cal.predict_full(&set[0], 0.1).unwrap();
    assert_eq!(p.thresholds, vec![f64::INFINITY]);
    match p.region {
        PredictionRegion::GridMask(m) => assert_eq!(m.count(), 64),
        other => panic!("unexpected region {other:?}"),
    }
}

#[test]
fn m_r2ccp_mask_matches_brute_force() {
    let set = random_set(60, 3);
    let cal = Calibrator::fit(Method::MR2ccp, &set[..50], CalibratorConfig::default()).unwrap();
    for alpha in [0.05f64, 0.1, 0.3, 0.6] {
        // independent threshold: sort ascending by density, pick rank from the top
        let mut dens: Vec<f64> = set[..50]
            .iter()
            .map(|ex| crate::density::interp_density(ex.grid.as_ref().unwrap(), &ex.truth).unwrap())
            .collect();
        dens.sort_by(f64::total_cmp);
        let k = (alpha * 51.0 + 1e-9).floor() as usize;
        let q = if k == 0 { f64::INFINITY } else { -dens[k - 1] };
        for ex in &set[50..] {
            let region = cal.predict(ex, alpha).unwrap();
            let grid = ex.grid.as_ref().unwrap();
            for i in 0..8 {
                for j in 0..8 {
                    let y = [i as f64, j as f64];
                    let expected = -grid.get(&[i, j]).unwrap() <= q;
                    assert_eq!(region.contains(&y).unwrap(), expected, "cell ({i},{j}) α={alpha}");
                }
            }
        }
    }
}

#[test]
fn gaussian_sample_flags_small_sample_sets() {
    let mut ex = Example::new("a", vec![0.0, 0.0]);
    ex.samples = Some(vec![vec![0.0, 0.0], vec![1.0, 1.0]]);
    let cal = Calibrator::fit(
        Method::GaussianSample,
        std::slice::from_ref(&ex),
        CalibratorConfig::default(),
    )
    .unwrap();
    let p = cal.predict_full(&ex, 0.1).unwrap();
    assert_eq!(p.flags, vec!["isotropic_fallback".to_string()]);
    let r = p.thresholds[0];
    assert!((r * r - 4.605170185988091).abs() < 1e-9);
}

#[test]
fn missing_inputs_name_the_field() {
    let ex = Example::new("lonely", vec![0.0, 0.0]);
    let err = Calibrator::fit(Method::MR2ccp, &[ex], CalibratorConfig::default()).unwrap_err();
    assert!(matches!(err, Error::MissingField { field: "grid", .. }));
    assert!(matches!(
        Calibrator::fit(Method::MR2ccp, &[], CalibratorConfig::default()),
        Err(Error::EmptyCalibrationSet)
    ));
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
        assert_eq!(serde_json::to_value(m).unwrap(), serde_json::json!(m.name()));
    }
    assert!(matches!("nope".parse::<Method>(), Err(Error::UnknownMethod(_))));
}

#[test]
fn calibrator_set_json_round_trip() {
    let set = random_set(20, 4);
    for method in Method::ALL {
        if method == Method::GaussianSample {
            continue;
        }
        let fitted = CalibratorSet::fit(method, &set, CalibratorConfig::default(), true).unwrap();
        let json = serde_json::to_string(&fitted).unwrap();
        let back: CalibratorSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, fitted);
        for ex in &set[..3] {
            assert_eq!(
                back.predict_full(ex, 0.2).unwrap(),
                fitted.predict_full(ex, 0.2).unwrap()
            );
        }
    }
}

#[test]
fn per_landmark_sets_use_their_own_ledgers() {
    let mut set = random_set(20, 5);
    for (i, ex) in set.iter_mut().enumerate() {
        ex.landmark = i % 2;
    }
    let fitted = CalibratorSet::fit(Method::MaxNonconf, &set, CalibratorConfig::default(), false).unwrap();
    assert_eq!(fitted.calibrators.len(), 2);
    assert!(fitted.calibrators.values().all(|c| c.ledgers[0].len() == 10));
    let mut stranger = set[0].clone();
    stranger.landmark = 7;
    assert!(matches!(
        fitted.predict_full(&stranger, 0.1),
        Err(Error::IdMismatch(_))
    ));
}

#[test]
fn native_map_scales_grid_regions() {
    let geo = GridGeometry::unit(&[4, 4]);
    let mut ex = grid_example("a", &geo, vec![1.0; 16], vec![2.0, 4.0]);
    ex.native_map = Some(crate::region::AffineMap::scaling(vec![1.0, 2.0]).unwrap());
    let cal = Calibrator::fit(Method::MR2ccp, &vec![ex.clone(); 30], CalibratorConfig::default()).unwrap();
    let r = cal.predict(&ex, 0.1).unwrap();
    assert!((r.measure().unwrap() - 32.0).abs() < 1e-12);
    assert!(r.contains(&ex.truth).unwrap());
}

fn box_volume(r: &PredictionRegion) -> f64 {
    r.measure().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn regions_are_nested_in_alpha(seed in 0u64..1000, a1 in 0.02..0.9f64, gap in 0.0..0.5f64) {
        let a2 = (a1 + gap).min(0.95);
        let set = random_set(40, seed);
        let (cal, test) = set.split_at(30);
        for method in Method::ALL {
            let c = Calibrator::fit(method, cal, CalibratorConfig::default());
            let Ok(c) = c else { continue };
            for ex in test {
                let big = c.predict(ex, a1).unwrap();
                let small = c.predict(ex, a2).unwrap();
                prop_assert!(small.measure().unwrap() <= big.measure().unwrap() + 1e-9, "{method}");
                if let (PredictionRegion::GridMask(s), PredictionRegion::GridMask(b)) = (&small, &big) {
                    for (x, y) in s.included().iter().zip(b.included()) {
                        prop_assert!(!x || *y, "{method}");
                    }
                }
            }
        }
    }
}

fn scenario(n: usize, seed: u64, cov_xy: f64) -> Vec<Example> {
    let mut c = ScenarioConfig::isotropic_2d([24, 24], 2.0, n, seed);
    c.truth_noise = TruthNoise::Anisotropic {
        covariance: vec![vec![4.0, cov_xy], vec![cov_xy, 2.0]],
    };
    synthetic::generate(&c).unwrap()
}

fn mean_measure(c: &Calibrator, test: &[Example], alpha: f64) -> f64 {
    test.iter()
        .map(|ex| box_volume(&c.predict(ex, alpha).unwrap()))
        .sum::<f64>()
        / test.len() as f64
}

#[test]
fn bonferroni_is_at_least_as_large_as_max_nonconf() {
    // correlated axes: the max of two scores sits well inside the Bonferroni
    // per-axis quantiles, so the ordering is not at the mercy of sampling noise
    for seed in 0..4 {
        let set = scenario(400, seed, 0.7 * 8f64.sqrt());
        let (cal, test) = set.split_at(300);
        let bonf = Calibrator::fit(Method::Bonferroni, cal, CalibratorConfig::default()).unwrap();
        let maxn = Calibrator::fit(Method::MaxNonconf, cal, CalibratorConfig::default()).unwrap();
        for alpha in [0.05, 0.1, 0.2] {
            let (b, m) = (mean_measure(&bonf, test, alpha), mean_measure(&maxn, test, alpha));
            assert!(b >= m, "seed {seed} α={alpha}: {b} < {m}");
        }
    }
}

/// Same-process calibration and test data: every conformal method covers at
/// least 1 − α minus three binomial standard errors.
#[test]
fn exchangeable_coverage_holds() {
    let set = scenario(1500, 17, 1.0);
    let (cal, test) = set.split_at(1000);
    let n = test.len() as f64;
    for method in Method::CONFORMAL {
        let c = Calibrator::fit(method, cal, CalibratorConfig::default()).unwrap();
        for alpha in [0.05, 0.1, 0.2] {
            let hits = test
                .iter()
                .filter(|ex| c.predict(ex, alpha).unwrap().contains(&ex.truth).unwrap())
                .count();
            let cov = hits as f64 / n;
            let floor = 1.0 - alpha - 3.0 * (alpha * (1.0 - alpha) / n).sqrt();
            assert!(cov >= floor, "{method} at α={alpha}: {cov} < {floor}");
        }
    }
}

fn coverage_of(c: &Calibrator, test: &[Example], alpha: f64) -> f64 {
    let hits = test
        .iter()
        .filter(|ex| c.predict(ex, alpha).unwrap().contains(&ex.truth).unwrap())
        .count();
    hits as f64 / test.len() as f64
}

#[test]
fn naive_is_roughly_valid_on_oracle_heatmaps() {
    let config = ScenarioConfig::isotropic_2d([48, 48], 3.0, 2000, 23);
    let test = synthetic::generate(&config).unwrap();
    let naive = Calibrator::fit(Method::NaiveR2cr, &test[..1], CalibratorConfig::default()).unwrap();
    let cov = coverage_of(&naive, &test, 0.1);
    assert!((cov - 0.9).abs() <= 0.025, "{cov}");
}

#[test]
fn sharpened_heatmaps_break_naive_but_not_conformal() {
    let mut config = ScenarioConfig::isotropic_2d([48, 48], 4.0, 3000, 29);
    config.heatmap_mode = synthetic::HeatmapMode::Sharpened { beta: 2.0 };
    let set = synthetic::generate(&config).unwrap();
    let (cal, test) = set.split_at(1000);
    let naive = Calibrator::fit(Method::NaiveR2cr, cal, CalibratorConfig::default()).unwrap();
    let naive_cov = coverage_of(&naive, test, 0.1);
    assert!(naive_cov <= 0.85, "naive {naive_cov}");
    let floor = 0.9 - 3.0 * (0.09 / test.len() as f64).sqrt();
    for method in Method::CONFORMAL {
        let c = Calibrator::fit(method, cal, CalibratorConfig::default()).unwrap();
        let cov = coverage_of(&c, test, 0.1);
        assert!(cov >= floor, "{method}: {cov} < {floor}");
    }
}
