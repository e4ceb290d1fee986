//! Full conditionals of the samplers against dense Gaussian conditioning.

mod common;

use common::toy;
use nalgebra::{DMatrix, DVector};
use stmodels::covariance::separable_corr_matrix;
use stmodels::inference::{
    beta_conditional, enbloc_conditional_dense, enbloc_draw, enbloc_update_u, ess, ffbs_model_b, ffbs_model_c,
    sample_inv_gamma, variance_conditional, KronEigen,
};
use stmodels::models::{conditional_loglik, latent_loglik_a2, log_prior, marginal_loglik, LatentState, ParamId};
use stmodels::oracle::{self, max_rel_diff, moment_discrepancy};
use stmodels::{ModelKind, ParamState, PriorSpec, RngStream};

const DRAWS: usize = 50_000;
const MC_SE: f64 = 4.0;

fn col(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

#[test]
fn beta_conditional_matches_dense_for_every_model() {
    let prior = PriorSpec::default();
    for kind in ModelKind::ALL {
        let (md, psi) = toy(kind, 3, 4, &[1, 7], 21);
        let (m, c) = beta_conditional(kind, &psi, &md, &prior).unwrap();
        let (mo, co) = oracle::beta_conditional(kind, &psi, &md, &prior).unwrap();
        assert!(max_rel_diff(&col(&m), &col(&mo)) < 1e-8, "{kind} mean {m} vs {mo}");
        assert!(max_rel_diff(&c, &co) < 1e-8, "{kind} cov {c} vs {co}");
    }
}

#[test]
fn dense_beta_conditional_is_a_slice_of_the_joint() {
    // Log-joint differences between two β values equal the Gaussian
    // conditional's log-density differences.
    let prior = PriorSpec::default();
    for kind in ModelKind::ALL {
        let (md, psi) = toy(kind, 3, 3, &[4], 22);
        let (m, c) = oracle::beta_conditional(kind, &psi, &md, &prior).unwrap();
        let prec = c.clone().try_inverse().unwrap();
        let q = |b: &DVector<f64>| -0.5 * (b - &m).dot(&(&prec * (b - &m)));
        let b1 = &m + DVector::from_vec(vec![0.3, -0.2]);
        let b2 = &m - DVector::from_vec(vec![0.1, 0.4]);
        let joint = |b: &DVector<f64>| {
            let s = ParamState { beta: b.clone(), ..psi.clone() };
            oracle::joint_log_density(kind, &s, &md, &prior).unwrap()
        };
        let lhs = joint(&b1) - joint(&b2);
        let rhs = q(&b1) - q(&b2);
        assert!((lhs - rhs).abs() < 1e-8 * lhs.abs().max(1.0), "{kind}: {lhs} vs {rhs}");
    }
}

#[test]
fn variance_conditionals_match_dense_joint() {
    let prior = PriorSpec::default();
    let cases = [
        (ModelKind::A2, ParamId::Sigma2Omega),
        (ModelKind::A2, ParamId::Sigma2Eps),
        (ModelKind::B, ParamId::Sigma2Eta),
        (ModelKind::C, ParamId::Sigma2Omega),
        (ModelKind::C, ParamId::Sigma2Eps),
    ];
    for (kind, which) in cases {
        let (md, psi) = toy(kind, 3, 4, &[2, 9], 23);
        let (a, b) = variance_conditional(kind, which, &psi, &md, &prior).unwrap();
        let ig = |x: f64| -(a + 1.0) * x.ln() - b / x;
        let joint = |x: f64| {
            let mut s = psi.clone();
            s.set(which, x).unwrap();
            oracle::joint_log_density(kind, &s, &md, &prior).unwrap()
        };
        let x0 = 0.7;
        for x in [0.05, 0.2, 0.45, 1.3, 3.0] {
            let lhs = joint(x) - joint(x0);
            let rhs = ig(x) - ig(x0);
            assert!((lhs - rhs).abs() < 1e-8 * lhs.abs().max(1.0), "{kind} {which} at {x}: {lhs} vs {rhs}");
        }
    }
}

#[test]
fn metropolis_targets_are_slices_of_the_joint() {
    let prior = PriorSpec::default();
    for kind in ModelKind::ALL {
        let (md, psi) = toy(kind, 3, 3, &[5], 24);
        let target = |s: &ParamState| -> f64 {
            let ll = match kind {
                ModelKind::A1 | ModelKind::A3_1 | ModelKind::A3_2 => marginal_loglik(kind, s, &md).unwrap(),
                ModelKind::A2 => latent_loglik_a2(s, &md).unwrap(),
                _ => conditional_loglik(kind, s, &md, &prior).unwrap(),
            };
            ll + log_prior(kind, &prior, s)
        };
        let meta = stmodels::models::model_meta(kind);
        for &id in meta.mh {
            let x0 = psi.get(id).unwrap();
            let mut s1 = psi.clone();
            s1.set(id, x0 * 0.8).unwrap();
            let lhs = target(&s1) - target(&psi);
            let rhs = oracle::joint_log_density(kind, &s1, &md, &prior).unwrap()
                - oracle::joint_log_density(kind, &psi, &md, &prior).unwrap();
            assert!((lhs - rhs).abs() < 1e-8 * lhs.abs().max(1.0), "{kind} {id}: {lhs} vs {rhs}");
        }
    }
}

#[test]
fn inverse_gamma_draws_have_the_right_moments() {
    let mut rng = RngStream::new(5);
    let (a, b) = (6.0, 2.5);
    let x: Vec<f64> = (0..DRAWS).map(|_| sample_inv_gamma(a, b, &mut rng).unwrap()).collect();
    let mean = b / (a - 1.0);
    let var = b * b / ((a - 1.0).powi(2) * (a - 2.0));
    let m = x.iter().sum::<f64>() / DRAWS as f64;
    assert!((m - mean).abs() < MC_SE * (var / DRAWS as f64).sqrt(), "{m} vs {mean}");
}

#[test]
fn ffbs_b_draws_match_dense_posterior() {
    let prior = PriorSpec::default();
    let (md, psi) = toy(ModelKind::B, 3, 4, &[0, 4, 5], 25);
    let (mean, cov) = oracle::latent_posterior_b(&psi, &md, &prior).unwrap();
    let mut rng = RngStream::new(6);
    let draws: Vec<DVector<f64>> = (0..DRAWS).map(|_| ffbs_model_b(&psi, &md, &prior, &mut rng).unwrap()).collect();
    let z = moment_discrepancy(&draws, &mean, &cov, None);
    assert!(z < MC_SE, "max discrepancy {z} s.e.");
}

#[test]
fn ffbs_c_draws_match_dense_posterior() {
    let prior = PriorSpec::default();
    let (md, psi) = toy(ModelKind::C, 3, 4, &[1, 6, 7], 26);
    let (mean, cov) = oracle::latent_posterior_c(&psi, &md, &prior).unwrap();
    let mut rng = RngStream::new(7);
    let draws: Vec<DVector<f64>> = (0..DRAWS)
        .map(|_| {
            let y = ffbs_model_c(&psi, &md, &prior, &mut rng).unwrap();
            DVector::from_column_slice(y.as_slice())
        })
        .collect();
    let z = moment_discrepancy(&draws, &mean, &cov, None);
    assert!(z < MC_SE, "max discrepancy {z} s.e.");
}

#[test]
fn enbloc_dense_reference_matches_observed_data_posterior() {
    let (md, psi) = toy(ModelKind::A2, 3, 4, &[], 27);
    let p = psi.corr.as_separable().unwrap();
    let pair = separable_corr_matrix(p, &md.h, md.n_days()).unwrap();
    let z = DVector::from_iterator(12, md.ds.z_cells().iter().map(|v| v.unwrap()));
    let (m1, c1) =
        enbloc_conditional_dense(&pair, &md.trend_all(&psi.beta), &z, psi.sigma2_eps, p.sigma2_omega).unwrap();
    let (m2, c2) = oracle::latent_posterior_a2(&psi, &md).unwrap();
    assert!(max_rel_diff(&col(&m1), &col(&m2)) < 1e-8);
    assert!(max_rel_diff(&c1, &c2) < 1e-8);
}

#[test]
fn enbloc_draws_match_dense_posterior() {
    let (md, psi) = toy(ModelKind::A2, 3, 4, &[], 28);
    let p = psi.corr.as_separable().unwrap();
    let pair = separable_corr_matrix(p, &md.h, md.n_days()).unwrap();
    let eig = KronEigen::new(&pair).unwrap();
    let trend = md.trend_all(&psi.beta);
    let z = DVector::from_iterator(12, md.ds.z_cells().iter().map(|v| v.unwrap()));
    let (mean, cov) = oracle::latent_posterior_a2(&psi, &md).unwrap();
    let mut rng = RngStream::new(8);
    let draws: Vec<DVector<f64>> = (0..DRAWS)
        .map(|_| enbloc_draw(&eig, &trend, &z, psi.sigma2_eps, p.sigma2_omega, &mut rng).unwrap())
        .collect();
    let zmax = moment_discrepancy(&draws, &mean, &cov, None);
    assert!(zmax < MC_SE, "max discrepancy {zmax} s.e.");
}

#[test]
fn enbloc_chain_with_missing_cells_targets_the_observed_data_posterior() {
    // Imputation then joint draw leaves U | z_obs invariant; check the
    // chain's long-run moments with ESS-based standard errors.
    let (md, mut psi) = toy(ModelKind::A2, 3, 3, &[1, 5], 29);
    let (mean, cov) = oracle::latent_posterior_a2(&psi, &md).unwrap();
    let mut rng = RngStream::new(9);
    let mut draws = Vec::with_capacity(DRAWS);
    for it in 0..DRAWS + 500 {
        let u = enbloc_update_u(&psi, &md, &mut rng).unwrap();
        if it >= 500 {
            draws.push(u.clone());
        }
        psi.latent = LatentState::U(u);
    }
    let worst_ess = (0..mean.len())
        .map(|c| ess(&draws.iter().map(|u| u[c]).collect::<Vec<_>>()).unwrap())
        .fold(f64::INFINITY, f64::min);
    let z = moment_discrepancy(&draws, &mean, &cov, Some(worst_ess));
    assert!(z < MC_SE, "max discrepancy {z} s.e. (ess {worst_ess})");
}

#[test]
fn moment_check_rejects_a_slightly_wrong_reference() {
    let prior = PriorSpec::default();
    let (md, psi) = toy(ModelKind::B, 3, 4, &[], 30);
    let (mean, cov) = oracle::latent_posterior_b(&psi, &md, &prior).unwrap();
    let mut rng = RngStream::new(10);
    let draws: Vec<DVector<f64>> = (0..DRAWS).map(|_| ffbs_model_b(&psi, &md, &prior, &mut rng).unwrap()).collect();
    assert!(moment_discrepancy(&draws, &mean, &(&cov * 1.05), None) > MC_SE);
    let shifted = mean.add_scalar(0.05 * cov[(2, 2)].sqrt());
    assert!(moment_discrepancy(&draws, &shifted, &cov, None) > MC_SE);
}
