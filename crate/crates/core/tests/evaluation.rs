//! Validation indexes, star ratings, residual diagnostics and the AIC
//! screen.

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use stmodels::covariance::{DynamicsParams, ExpSpatialParams};
use stmodels::dataset::{Dataset, Scale, Site, INTERCEPT};
use stmodels::evaluation::{
    aic_screen, nmbf, nnr, residual_diagnostics, rmse_corr_coverage, star_rating, station_indexes, wnnr,
    StationIndexRow,
};
use stmodels::models::CorrParams;
use stmodels::prediction::DrawSummary;
use stmodels::simulator::{default_truth, simulate, SimLayout};
use stmodels::{ModelKind, RngStream};

fn positive_series() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..40).prop_flat_map(|n| (prop::collection::vec(0.01f64..500.0, n), prop::collection::vec(0.01f64..500.0, n)))
}

proptest! {
    #[test]
    fn nmbf_is_antisymmetric_and_scale_free((z, p) in positive_series(), c in 0.01f64..100.0) {
        let a = nmbf(&z, &p).unwrap();
        prop_assert!((a + nmbf(&p, &z).unwrap()).abs() <= 1e-12 * a.abs().max(1.0));
        let zc: Vec<f64> = z.iter().map(|v| v * c).collect();
        let pc: Vec<f64> = p.iter().map(|v| v * c).collect();
        prop_assert!((nmbf(&zc, &pc).unwrap() - a).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn ratio_indexes_are_nonnegative_and_scale_free((z, p) in positive_series(), c in 0.01f64..100.0) {
        let zc: Vec<f64> = z.iter().map(|v| v * c).collect();
        let pc: Vec<f64> = p.iter().map(|v| v * c).collect();
        for f in [wnnr, nnr] {
            let a = f(&z, &p).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((f(&zc, &pc).unwrap() - a).abs() <= 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn ratio_indexes_vanish_only_on_exact_match((z, _) in positive_series(), j in 0usize..40, f in 1.01f64..3.0) {
        prop_assert_eq!(wnnr(&z, &z).unwrap(), 0.0);
        prop_assert_eq!(nnr(&z, &z).unwrap(), 0.0);
        let mut p = z.clone();
        let j = j % z.len();
        p[j] *= f;
        prop_assert!(wnnr(&z, &p).unwrap() > 0.0);
        prop_assert!(nnr(&z, &p).unwrap() > 0.0);
    }

    #[test]
    fn uniform_factor_two_bias_is_plus_or_minus_one((z, _) in positive_series()) {
        let up: Vec<f64> = z.iter().map(|v| 2.0 * v).collect();
        let down: Vec<f64> = z.iter().map(|v| 0.5 * v).collect();
        prop_assert_eq!(nmbf(&z, &up).unwrap(), 1.0);
        prop_assert_eq!(nmbf(&z, &down).unwrap(), -1.0);
    }

    #[test]
    fn stars_are_permutation_invariant(seed in 0u64..1000, m in 2usize..8) {
        let mut rng = RngStream::new(seed);
        let tables: Vec<(String, Vec<StationIndexRow>)> = (0..m)
            .map(|a| (format!("M{a}"), (0..5).map(|s| random_row(&mut rng, s)).collect()))
            .collect();
        let base = star_rating(&tables, 0.95);
        prop_assert!(base.iter().all(|(_, s)| (1..=3).contains(s)));
        let mut shuffled = tables.clone();
        shuffled.shuffle(&mut rng);
        let mut again = star_rating(&shuffled, 0.95);
        let mut sorted = base.clone();
        sorted.sort();
        again.sort();
        prop_assert_eq!(sorted, again);
    }
}

fn random_row(rng: &mut RngStream, s: usize) -> StationIndexRow {
    // Coarse values so ties occur.
    let mut q = |k: f64| (rng.random::<f64>() * k).round() / k;
    StationIndexRow {
        site_id: format!("S{s}"),
        n_used: 10,
        n_missing: 0,
        nmbf: q(4.0) - 0.5,
        wnnr: q(4.0),
        nnr: q(4.0),
        rmse: q(4.0),
        corr: q(4.0),
        coverage: q(4.0),
    }
}

fn row(nmbf: f64, rmse: f64, corr: f64, coverage: f64) -> StationIndexRow {
    StationIndexRow {
        site_id: "S".into(),
        n_used: 10,
        n_missing: 0,
        nmbf,
        wnnr: rmse / 2.0,
        nnr: rmse / 3.0,
        rmse,
        corr,
        coverage,
    }
}

#[test]
fn strictly_best_model_gets_three_stars_and_ties_share() {
    let good = vec![row(0.01, 0.1, 0.9, 0.95)];
    let bad = vec![row(0.3, 0.5, 0.4, 0.70)];
    let s = star_rating(&[("good".into(), good.clone()), ("bad".into(), bad.clone())], 0.95);
    // With two models the runner-up sits in the middle tertile.
    assert_eq!(s, vec![("good".to_string(), 3), ("bad".to_string(), 2)]);
    let same = star_rating(&[("a".into(), bad.clone()), ("b".into(), bad)], 0.95);
    assert_eq!(same[0].1, same[1].1);
}

#[test]
fn six_hand_built_models_fall_in_tertiles() {
    // Model k is worse than model k−1 on every index: mean ranks 1..6,
    // so p = 0..5 and stars are 3,3,2,2,1,1.
    let tables: Vec<(String, Vec<StationIndexRow>)> = (0..6)
        .map(|k| {
            let e = k as f64 * 0.05;
            (format!("M{k}"), vec![row(0.01 + e, 0.1 + e, 0.9 - e, 0.95 - e)])
        })
        .collect();
    let stars: Vec<u8> = star_rating(&tables, 0.95).into_iter().map(|(_, s)| s).collect();
    assert_eq!(stars, vec![3, 3, 2, 2, 1, 1]);
}

#[test]
fn exact_normal_intervals_cover_at_the_nominal_rate() {
    let mut rng = RngStream::new(71);
    let n = 10_000;
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mean = vec![0.0; n];
    let (lo, hi) = (vec![-1.959964; n], vec![1.959964; n]);
    let (_, _, cov) = rmse_corr_coverage(&z, &z.iter().map(|v| v + 1e-3).collect::<Vec<_>>(), &lo, &hi).unwrap();
    let se = (0.95f64 * 0.05 / n as f64).sqrt();
    assert!((cov - 0.95).abs() < 4.0 * se, "coverage {cov}");
    let _ = mean;
}

#[test]
fn missing_validation_days_are_excluded_and_counted() {
    let s = |m: f64| DrawSummary { mean: m, median: m, lo: m - 1.0, hi: m + 1.0 };
    let obs = [Some(2.0), None, Some(3.0), Some(5.0), None];
    let pred = [s(2.0), s(100.0), s(3.0), s(5.0), s(-50.0)];
    let r = station_indexes("S1", &obs, &pred).unwrap();
    assert_eq!((r.n_used, r.n_missing), (3, 2));
    assert_eq!(r.rmse, 0.0);
    assert_eq!(r.nmbf, 0.0);
    assert_eq!(r.coverage, 1.0);
}

fn one_site_dataset(x1: &[f64], x2: &[f64], z: &[f64]) -> Dataset {
    let n = z.len();
    let mut x = Vec::with_capacity(3 * n);
    for t in 0..n {
        x.extend_from_slice(&[1.0, x1[t], x2[t]]);
    }
    Dataset::new(
        vec![Site::new("S1", 0.0, 0.0, 0.0)],
        n,
        vec![INTERCEPT.into(), "x1".into(), "noise".into()],
        x,
        z.iter().map(|v| Some(*v)).collect(),
        Scale::Log,
    )
    .unwrap()
}

#[test]
fn aic_prefers_the_smaller_model_at_the_chi_square_rate() {
    // With a pure-noise extra covariate the larger model wins exactly when
    // the likelihood-ratio statistic exceeds 2, an event of limiting
    // probability P(χ²₁ > 2) ≈ 0.1573.
    let mut rng = RngStream::new(72);
    let (n, reps) = (500, 1000);
    let mut smaller_wins = 0;
    for _ in 0..reps {
        let x1: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let x2: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let z: Vec<f64> = x1.iter().map(|v| 1.0 + 0.5 * v + rng.sample::<f64, _>(StandardNormal)).collect();
        let ds = one_site_dataset(&x1, &x2, &z);
        let r = aic_screen(&ds, &[vec!["x1".into()], vec!["x1".into(), "noise".into()]]).unwrap();
        if r[0].covariates == ["x1"] {
            smaller_wins += 1;
        }
    }
    let p = 0.842_700_792_949_715;
    let f = smaller_wins as f64 / reps as f64;
    let se = (p * (1.0 - p) / reps as f64).sqrt();
    assert!((f - p).abs() < 4.0 * se, "smaller model preferred in {f} of replicates");
}

#[test]
fn aic_of_duplicates_agree_and_intercept_only_matches_closed_form() {
    let mut rng = RngStream::new(73);
    let n = 4000;
    let x1: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let ds = one_site_dataset(&x1, &x1.iter().map(|v| v * v).collect::<Vec<_>>(), &z);
    let r = aic_screen(&ds, &[vec!["x1".into()], vec!["x1".into()]]).unwrap();
    assert_eq!(r[0].aic, r[1].aic);
    let r = aic_screen(&ds, &[vec![]]).unwrap();
    let nf = n as f64;
    let want = nf * (1.0 + (2.0 * std::f64::consts::PI).ln()) + 4.0;
    assert!((r[0].aic.as_ref().unwrap() - want).abs() < 4.0 * (2.0 * nf).sqrt());
}

#[test]
fn rank_deficient_candidates_are_flagged_and_ranked_last() {
    let ones = vec![1.0; 20];
    let z: Vec<f64> = (0..20).map(|t| (t as f64).sin()).collect();
    let x1: Vec<f64> = (0..20).map(|t| t as f64).collect();
    let ds = one_site_dataset(&x1, &ones, &z);
    let r = aic_screen(&ds, &[vec!["noise".into()], vec!["x1".into()]]).unwrap();
    assert!(r[0].aic.is_ok());
    assert!(r[1].aic.is_err());
}

fn layout_for(kind: ModelKind, d: usize, n: usize, seed: u64) -> SimLayout {
    let mut rng = RngStream::new(seed);
    SimLayout::random(d, n, 2, 300.0, 200.0, default_truth(kind, 2), &mut rng).unwrap()
}

#[test]
fn white_noise_residuals_show_no_structure() {
    let mut l = layout_for(ModelKind::A1, 12, 182, 74);
    l.truth.corr = CorrParams::Exp(ExpSpatialParams { theta: 0.01, sigma2_omega: 0.0 });
    let ds = simulate(ModelKind::A1, &l, &mut RngStream::new(1)).unwrap();
    let r = residual_diagnostics(&ds).unwrap();
    let mean_corr = r.cloud.iter().map(|p| p.corr).sum::<f64>() / r.cloud.len() as f64;
    assert!(mean_corr.abs() < 0.03, "{mean_corr}");
    for k in 1..=5 {
        assert!(r.median_acf(k).abs() < 0.1, "lag {k}: {}", r.median_acf(k));
    }
}

#[test]
fn slowly_decaying_spatial_field_gives_a_cloud_near_point_six_at_100_km() {
    let mut l = layout_for(ModelKind::A1, 20, 182, 75);
    l.truth.corr = CorrParams::Exp(ExpSpatialParams { theta: 0.0033, sigma2_omega: 0.3 });
    l.truth.sigma2_eps = 0.05;
    let ds = simulate(ModelKind::A1, &l, &mut RngStream::new(2)).unwrap();
    let r = residual_diagnostics(&ds).unwrap();
    let near: Vec<f64> = r.cloud.iter().filter(|p| (85.0..=115.0).contains(&p.distance_km)).map(|p| p.smooth).collect();
    assert!(!near.is_empty());
    let s = near.iter().sum::<f64>() / near.len() as f64;
    assert!((0.5..=0.7).contains(&s), "lowess at 100 km: {s}");
}

#[test]
fn persistent_scalar_process_gives_lag_one_residual_acf() {
    let mut l = layout_for(ModelKind::B, 10, 182, 76);
    l.truth.dynamics = Some(DynamicsParams { rho: 0.83, sigma2_eta: Some(0.2) });
    let ds = simulate(ModelKind::B, &l, &mut RngStream::new(3)).unwrap();
    let a = residual_diagnostics(&ds).unwrap().median_acf(1);
    assert!((0.4..=0.8).contains(&a), "median lag-1 acf {a}");
}
