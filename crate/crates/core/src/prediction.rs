//! Posterior predictive draws at unmonitored sites.
//!
//! Each retained chain draw contributes one predictive draw per target,
//! sampled from the model's Gaussian conditional given that draw.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::covariance::{exp_corr, gneiting_corr, separable_corr_matrix, GneitingParams};
use crate::dataset::{Dataset, Scale, Site};
use crate::error::{Error, Result};
use crate::gaussmath::{chol_psd, clamp_variance, mvn_condition, CholeskyFactor};
use crate::inference::Chain;
use crate::models::{LatentState, ModelData, ModelKind, ParamState, PriorSpec};
use crate::rng::RngStream;

/// Smallest number of draws [`summarize_predictions`] accepts.
pub const MIN_SUMMARY_DRAWS: usize = 100;

/// A site-day at which to predict. Covariates must already be standardized
/// with the training record.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionTarget {
    pub site: Site,
    /// 1-based day within the training window.
    pub day: usize,
    pub covariates: DVector<f64>,
}

impl PredictionTarget {
    pub fn validate(&self, n_days: usize, k: usize) -> Result<()> {
        if self.day == 0 || self.day > n_days {
            return Err(Error::Domain(format!(
                "target day {} for site {} lies outside 1..={n_days}",
                self.day, self.site.id
            )));
        }
        if self.covariates.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "target at site {} has {} covariates, expected {k}",
                self.site.id,
                self.covariates.len()
            )));
        }
        Ok(())
    }

    fn t0(&self) -> usize {
        self.day - 1
    }

    fn distances(&self, md: &ModelData) -> Vec<f64> {
        md.ds.sites().iter().map(|s| s.distance_km(&self.site)).collect()
    }
}

/// One target per (site, day) of `ds`, in day-major order.
pub fn targets_from_dataset(ds: &Dataset) -> Vec<PredictionTarget> {
    (0..ds.n_days())
        .flat_map(|t| {
            (0..ds.n_sites()).map(move |i| PredictionTarget {
                site: ds.sites()[i].clone(),
                day: t + 1,
                covariates: DVector::from_column_slice(ds.x(i, t)),
            })
        })
        .collect()
}

/// Predictive draws of `z` (model scale) for one target.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveDraws {
    pub target: PredictionTarget,
    pub draws: Vec<f64>,
}

/// Predictive draws for every target, dispatching on the chain's model.
pub fn predict(
    chain: &Chain,
    md: &ModelData,
    prior: &PriorSpec,
    targets: &[PredictionTarget],
    rng: &RngStream,
) -> Result<Vec<PredictiveDraws>> {
    match chain.kind {
        ModelKind::A1 => predict_a1(chain, md, targets, rng),
        ModelKind::A2 => predict_a2(chain, md, targets, rng),
        ModelKind::A3_1 | ModelKind::A3_2 => predict_a3(chain, md, targets, rng),
        ModelKind::B => predict_b(chain, md, targets, rng),
        ModelKind::C => predict_c(chain, md, prior, targets, rng),
    }
}

/// Shared driver: draws outer, targets inner, one stream per target.
/// `per_draw` prepares whatever a draw shares across targets; `per_target`
/// returns one sample.
fn drive<S>(
    kind: &[ModelKind],
    chain: &Chain,
    md: &ModelData,
    targets: &[PredictionTarget],
    rng: &RngStream,
    mut per_draw: impl FnMut(&ParamState) -> Result<S>,
    mut per_target: impl FnMut(&ParamState, &S, usize, &PredictionTarget, &mut RngStream) -> Result<f64>,
) -> Result<Vec<PredictiveDraws>> {
    if !kind.contains(&chain.kind) {
        return Err(Error::Contract(format!("this predictor does not handle model {}", chain.kind)));
    }
    for t in targets {
        t.validate(md.n_days(), md.k())?;
    }
    let mut streams: Vec<RngStream> = (0..targets.len()).map(|j| rng.derive(j as u64)).collect();
    let mut out: Vec<PredictiveDraws> = targets
        .iter()
        .map(|t| PredictiveDraws { target: t.clone(), draws: Vec::with_capacity(chain.draws.len()) })
        .collect();
    for psi in &chain.draws {
        let shared = per_draw(psi)?;
        for (j, t) in targets.iter().enumerate() {
            let v = per_target(psi, &shared, j, t, &mut streams[j])?;
            out[j].draws.push(v);
        }
    }
    Ok(out)
}

fn normal<R: Rng + ?Sized>(mean: f64, var: f64, rng: &mut R) -> f64 {
    mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal)
}

fn trend(target: &PredictionTarget, beta: &DVector<f64>) -> f64 {
    target.covariates.dot(beta)
}

/// Day-`t₀` conditional of `z(s₀,t₀)` for A1 and B given pattern factors of
/// `Σ_{ω+ε}`. `shift` is `y(t₀)` for Model B.
fn daywise_conditional(
    psi: &ParamState,
    md: &ModelData,
    factors: &[CholeskyFactor],
    target: &PredictionTarget,
    shift: f64,
) -> Result<(f64, f64)> {
    let e = psi.corr.as_exp()?;
    let t0 = target.t0();
    let s22 = e.sigma2_omega + psi.sigma2_eps;
    let mu2 = trend(target, &psi.beta) + shift;
    let obs = &md.day_obs[t0];
    if obs.is_empty() {
        return Ok((mu2, s22));
    }
    let p = md
        .patterns
        .iter()
        .position(|p| p.days.contains(&t0))
        .ok_or_else(|| Error::Contract(format!("no missingness pattern covers day {t0}")))?;
    let h = target.distances(md);
    let s12 = DVector::from_iterator(
        obs.len(),
        obs.iter().map(|&i| e.sigma2_omega * exp_corr(e.theta, h[i]).unwrap_or(0.0)),
    );
    let mu1 = DVector::from_iterator(obs.len(), obs.iter().map(|&i| md.trend(i, t0, &psi.beta) + shift));
    mvn_condition(&mu1, mu2, &factors[p], &s12, s22, &md.z_day(t0))
}

fn exp_pattern_factors(md: &ModelData, psi: &ParamState) -> Result<Vec<CholeskyFactor>> {
    md.pattern_factors(&md.spatial_cov(psi.corr.as_exp()?, psi.sigma2_eps)?)
}

/// Mean and variance of `z(s₀,t₀)` under Model A1 given one parameter draw.
pub fn conditional_a1(psi: &ParamState, md: &ModelData, target: &PredictionTarget) -> Result<(f64, f64)> {
    daywise_conditional(psi, md, &exp_pattern_factors(md, psi)?, target, 0.0)
}

/// Mean and variance of `z(s₀,t₀)` under Model B given one draw of the
/// parameters and the latent path.
pub fn conditional_b(psi: &ParamState, md: &ModelData, target: &PredictionTarget) -> Result<(f64, f64)> {
    let y = b_path(psi)?;
    daywise_conditional(psi, md, &exp_pattern_factors(md, psi)?, target, y[target.day])
}

fn b_path(psi: &ParamState) -> Result<&DVector<f64>> {
    match &psi.latent {
        LatentState::YScalar(y) => Ok(y),
        _ => Err(Error::Contract("Model B prediction needs stored latent paths".into())),
    }
}

pub fn predict_a1(chain: &Chain, md: &ModelData, targets: &[PredictionTarget], rng: &RngStream) -> Result<Vec<PredictiveDraws>> {
    drive(
        &[ModelKind::A1],
        chain,
        md,
        targets,
        rng,
        |psi| exp_pattern_factors(md, psi),
        |psi, f, _, t, r| {
            let (m, v) = daywise_conditional(psi, md, f, t, 0.0)?;
            Ok(normal(m, v, r))
        },
    )
}

pub fn predict_b(chain: &Chain, md: &ModelData, targets: &[PredictionTarget], rng: &RngStream) -> Result<Vec<PredictiveDraws>> {
    drive(
        &[ModelKind::B],
        chain,
        md,
        targets,
        rng,
        |psi| exp_pattern_factors(md, psi),
        |psi, f, _, t, r| {
            let y = b_path(psi)?;
            let (m, v) = daywise_conditional(psi, md, f, t, y[t.day])?;
            Ok(normal(m, v, r))
        },
    )
}

/// Mean and variance of the latent `u(s₀,t₀)` under Model A2 given one draw
/// of the parameters and the field `U`. Add `σ²_ε` for `z`.
pub fn conditional_a2(psi: &ParamState, md: &ModelData, target: &PredictionTarget) -> Result<(f64, f64)> {
    let p = psi.corr.as_separable()?;
    let kf = separable_corr_matrix(p, &md.h, md.n_days())?.factor(md.max_jitter)?;
    a2_with(psi, md, &kf, target)
}

fn a2_with(
    psi: &ParamState,
    md: &ModelData,
    kf: &crate::gaussmath::KroneckerFactor,
    target: &PredictionTarget,
) -> Result<(f64, f64)> {
    let LatentState::U(u) = &psi.latent else {
        return Err(Error::Contract("Model A2 prediction needs stored latent fields".into()));
    };
    let p = psi.corr.as_separable()?;
    let (d, n) = (md.d(), md.n_days());
    let h = target.distances(md);
    let t0 = target.t0();
    // Correlation vector c = c_time ⊗ c_space, so Σ₁₂ = σ²_ω c.
    let c = DVector::from_fn(d * n, |g, _| {
        let (i, t) = (g % d, g / d);
        (-p.theta1 * (t as f64 - t0 as f64).abs()).exp() * (-p.theta2 * h[i]).exp()
    });
    let w = kf.solve(&c)?;
    let r = u - md.trend_all(&psi.beta);
    let mean = trend(target, &psi.beta) + w.dot(&r);
    let var = clamp_variance(p.sigma2_omega * (1.0 - w.dot(&c)), p.sigma2_omega)?;
    Ok((mean, var))
}

pub fn predict_a2(chain: &Chain, md: &ModelData, targets: &[PredictionTarget], rng: &RngStream) -> Result<Vec<PredictiveDraws>> {
    drive(
        &[ModelKind::A2],
        chain,
        md,
        targets,
        rng,
        |psi| separable_corr_matrix(psi.corr.as_separable()?, &md.h, md.n_days())?.factor(md.max_jitter),
        |psi, kf, _, t, r| {
            let (m, v) = a2_with(psi, md, kf, t)?;
            let u0 = normal(m, v, r);
            Ok(normal(u0, psi.sigma2_eps, r))
        },
    )
}

fn gneiting_s12(g: &GneitingParams, md: &ModelData, target: &PredictionTarget) -> Result<DVector<f64>> {
    let d = md.d();
    let h = target.distances(md);
    let t0 = target.t0() as f64;
    md.obs_cells
        .iter()
        .map(|&c| Ok(g.sigma2_omega * gneiting_corr(g, h[c % d], ((c / d) as f64 - t0).abs())?))
        .collect::<Result<Vec<_>>>()
        .map(DVector::from_vec)
}

fn a3_with(psi: &ParamState, md: &ModelData, f: &CholeskyFactor, target: &PredictionTarget) -> Result<(f64, f64)> {
    let g = psi.corr.as_gneiting()?;
    let d = md.d();
    let s12 = gneiting_s12(g, md, target)?;
    let mu1 = DVector::from_iterator(md.obs_cells.len(), md.obs_cells.iter().map(|&c| md.trend(c % d, c / d, &psi.beta)));
    let z = DVector::from_iterator(md.obs_cells.len(), md.obs_cells.iter().map(|&c| md.ds.z_cells()[c].unwrap()));
    mvn_condition(&mu1, trend(target, &psi.beta), f, &s12, g.sigma2_omega + psi.sigma2_eps, &z)
}

fn a3_factor(md: &ModelData, psi: &ParamState) -> Result<CholeskyFactor> {
    chol_psd(&md.gneiting_obs_cov(psi.corr.as_gneiting()?, psi.sigma2_eps)?, md.max_jitter)
}

/// Mean and variance of `z(s₀,t₀)` under A3-1 or A3-2 given one draw,
/// conditioning on every observed cell.
pub fn conditional_a3(psi: &ParamState, md: &ModelData, target: &PredictionTarget) -> Result<(f64, f64)> {
    a3_with(psi, md, &a3_factor(md, psi)?, target)
}

pub fn predict_a3(chain: &Chain, md: &ModelData, targets: &[PredictionTarget], rng: &RngStream) -> Result<Vec<PredictiveDraws>> {
    drive(
        &[ModelKind::A3_1, ModelKind::A3_2],
        chain,
        md,
        targets,
        rng,
        |psi| a3_factor(md, psi),
        |psi, f, _, t, r| {
            let (m, v) = a3_with(psi, md, f, t)?;
            Ok(normal(m, v, r))
        },
    )
}

/// Factor of the spatial correlation matrix with the weights `C⁻¹ c̃` for a
/// target site.
fn c_weights(f: &CholeskyFactor, theta: f64, h: &[f64]) -> (DVector<f64>, f64) {
    let c = DVector::from_iterator(h.len(), h.iter().map(|&x| (-theta * x).exp()));
    let w = f.solve(&c);
    let q = w.dot(&c);
    (w, q)
}

/// Mean and variance of `y(s₀,t)` under Model C given one draw, the state
/// field `Y` and the previous value `y(s₀,t−1)`. `t` is 1-based.
pub fn conditional_c_step(
    psi: &ParamState,
    md: &ModelData,
    site: &Site,
    t: usize,
    y_prev: f64,
) -> Result<(f64, f64)> {
    let e = psi.corr.as_exp()?;
    let f = chol_psd(&crate::covariance::spatial_corr_matrix(e.theta, &md.h)?, md.max_jitter)?;
    let h: Vec<f64> = md.ds.sites().iter().map(|s| s.distance_km(site)).collect();
    let (w, q) = c_weights(&f, e.theta, &h);
    c_step(psi, &w, q, t, y_prev)
}

fn c_step(psi: &ParamState, w: &DVector<f64>, q: f64, t: usize, y_prev: f64) -> Result<(f64, f64)> {
    let LatentState::YField(y) = &psi.latent else {
        return Err(Error::Contract("Model C prediction needs stored latent fields".into()));
    };
    let rho = psi.dynamics.ok_or_else(|| Error::Contract("Model C needs dynamics".into()))?.rho;
    let s2 = psi.sigma2_omega();
    let innov = y.column(t) - y.column(t - 1) * rho;
    let mean = rho * y_prev + w.dot(&innov);
    Ok((mean, clamp_variance(s2 * (1.0 - q), s2)?))
}

pub fn predict_c(
    chain: &Chain,
    md: &ModelData,
    prior: &PriorSpec,
    targets: &[PredictionTarget],
    rng: &RngStream,
) -> Result<Vec<PredictiveDraws>> {
    let hs: Vec<Vec<f64>> = targets.iter().map(|t| t.distances(md)).collect();
    drive(
        &[ModelKind::C],
        chain,
        md,
        targets,
        rng,
        |psi| {
            let e = psi.corr.as_exp()?;
            chol_psd(&crate::covariance::spatial_corr_matrix(e.theta, &md.h)?, md.max_jitter)
        },
        |psi, f, j, t, r| {
            let e = psi.corr.as_exp()?;
            let (w, q) = c_weights(f, e.theta, &hs[j]);
            let mut y0 = normal(0.0, prior.sigma2_c, r);
            for step in 1..=t.day {
                let (m, v) = c_step(psi, &w, q, step, y0)?;
                y0 = normal(m, v, r);
            }
            Ok(normal(trend(t, &psi.beta) + y0, psi.sigma2_eps, r))
        },
    )
}

/// Point and interval summary of a set of draws.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DrawSummary {
    pub mean: f64,
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Summaries of one target on the model scale and, for log-scale data, on
/// the concentration scale.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSummary {
    pub site_id: String,
    pub day: usize,
    pub model_scale: Scale,
    pub model: DrawSummary,
    pub concentration: Option<DrawSummary>,
}

impl TargetSummary {
    /// The summary used for validation indexes on the requested scale.
    pub fn on_scale(&self, concentration: bool) -> &DrawSummary {
        match (concentration, &self.concentration) {
            (true, Some(c)) => c,
            _ => &self.model,
        }
    }
}

/// Order statistic `⌈np⌉` (inverse empirical distribution function), so
/// summaries commute with monotone transforms.
fn order_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let k = ((n as f64 * p).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

fn summarize(draws: &[f64], level: f64) -> DrawSummary {
    let mut v = draws.to_vec();
    v.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    DrawSummary {
        mean: v.iter().sum::<f64>() / v.len() as f64,
        median: order_quantile(&v, 0.5),
        lo: order_quantile(&v, a),
        hi: order_quantile(&v, 1.0 - a),
    }
}

/// Mean, median and equal-tailed interval at `level`. Draws on the log
/// scale are also summarized after exponentiation.
pub fn summarize_predictions(pd: &PredictiveDraws, level: f64, scale: Scale) -> Result<TargetSummary> {
    if pd.draws.len() < MIN_SUMMARY_DRAWS {
        return Err(Error::Contract(format!(
            "{} predictive draws at site {} day {}; at least {MIN_SUMMARY_DRAWS} are needed",
            pd.draws.len(),
            pd.target.site.id,
            pd.target.day
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("interval level must lie in (0, 1), got {level}")));
    }
    let concentration = match scale {
        Scale::Log => Some(summarize(&pd.draws.iter().map(|v| v.exp()).collect::<Vec<_>>(), level)),
        Scale::Natural => None,
    };
    Ok(TargetSummary {
        site_id: pd.target.site.id.clone(),
        day: pd.target.day,
        model_scale: scale,
        model: summarize(&pd.draws, level),
        concentration,
    })
}

/// `site_id,day,draw_mean,draw_median,lo,hi,scale`, one row per target and
/// scale.
pub fn write_predictions_csv(path: &Path, rows: &[TargetSummary]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "site_id,day,draw_mean,draw_median,lo,hi,scale")?;
    for r in rows {
        let name = match r.model_scale {
            Scale::Log => "log",
            Scale::Natural => "natural",
        };
        let mut emit = |s: &DrawSummary, scale: &str| {
            writeln!(f, "{},{},{},{},{},{},{scale}", r.site_id, r.day, s.mean, s.median, s.lo, s.hi)
        };
        emit(&r.model, name)?;
        if let Some(c) = &r.concentration {
            emit(c, "concentration")?;
        }
    }
    Ok(())
}

/// Dense joint covariance `σ²_ω C + σ²_ε I` of A3 on all `dT` cells; a
/// reference for tests.
pub fn dense_gneiting_cov(g: &GneitingParams, sigma2_eps: f64, md: &ModelData) -> Result<DMatrix<f64>> {
    let n = md.d() * md.n_days();
    let c = crate::covariance::nonseparable_corr_matrix(g, &md.h, md.n_days(), md.max_dense_dim)?;
    Ok(c * g.sigma2_omega + DMatrix::identity(n, n) * sigma2_eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{DynamicsParams, ExpSpatialParams, GneitingFamily, SeparableParams};
    use crate::models::tests::toy_data;
    use crate::models::CorrParams;
    use approx::assert_abs_diff_eq;

    fn target(x: f64, y: f64, day: usize) -> PredictionTarget {
        PredictionTarget { site: Site::new("new", x, y, 0.0), day, covariates: DVector::from_vec(vec![1.0, 0.4]) }
    }

    fn exp_psi(theta: f64, s2eps: f64) -> ParamState {
        ParamState {
            beta: DVector::from_vec(vec![0.3, -0.2]),
            sigma2_eps: s2eps,
            corr: CorrParams::Exp(ExpSpatialParams { theta, sigma2_omega: 0.8 }),
            dynamics: None,
            latent: LatentState::None,
        }
    }

    #[test]
    fn a1_interpolates_at_monitored_site() {
        let md = toy_data(3, 3, &[]);
        let s = md.ds.sites()[1].clone();
        let t = PredictionTarget { site: s, day: 2, covariates: DVector::from_column_slice(md.ds.x(1, 1)) };
        let (m, v) = conditional_a1(&exp_psi(0.2, 1e-12), &md, &t).unwrap();
        assert_abs_diff_eq!(m, md.ds.z(1, 1).unwrap(), epsilon = 1e-8);
        assert!(v < 1e-8);
    }

    #[test]
    fn a1_far_site_has_no_spatial_information() {
        let md = toy_data(3, 3, &[]);
        let psi = exp_psi(0.9, 0.3);
        let (m, v) = conditional_a1(&psi, &md, &target(1e5, 1e5, 1)).unwrap();
        assert_abs_diff_eq!(m, 0.3 - 0.08, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 1.1, epsilon = 1e-12);
    }

    #[test]
    fn b_constant_in_space_shift() {
        let md = toy_data(3, 3, &[]);
        let mut psi = exp_psi(0.5, 0.3);
        psi.dynamics = Some(DynamicsParams { rho: 0.5, sigma2_eta: Some(0.2) });
        psi.latent = LatentState::YScalar(DVector::from_vec(vec![0.0, 0.7, -0.4, 0.1]));
        let far = [target(1e5, 0.0, 2), target(0.0, 1e5, 2)];
        let m: Vec<f64> = far.iter().map(|t| conditional_b(&psi, &md, t).unwrap().0).collect();
        assert_abs_diff_eq!(m[0], 0.22 - 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(m[0], m[1], epsilon = 1e-12);
    }

    #[test]
    fn a2_far_site_reverts_to_prior() {
        let md = toy_data(2, 3, &[]);
        let psi = ParamState {
            beta: DVector::from_vec(vec![0.3, -0.2]),
            sigma2_eps: 0.2,
            corr: CorrParams::Separable(SeparableParams { theta1: 0.7, theta2: 0.3, sigma2_omega: 0.9 }),
            dynamics: None,
            latent: LatentState::U(DVector::from_fn(6, |i, _| i as f64 * 0.1)),
        };
        let (m, v) = conditional_a2(&psi, &md, &target(1e6, 0.0, 2)).unwrap();
        assert_abs_diff_eq!(m, 0.22, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.9, epsilon = 1e-12);
    }

    #[test]
    fn a3_far_site_reverts_to_prior() {
        let md = toy_data(2, 3, &[1]);
        let psi = ParamState {
            beta: DVector::from_vec(vec![0.3, -0.2]),
            sigma2_eps: 0.2,
            corr: CorrParams::Gneiting(GneitingParams {
                a: 1.0,
                c: 1.0,
                alpha: 0.5,
                gamma: 0.5,
                family: GneitingFamily::A31 { b: 0.5 },
                sigma2_omega: 0.9,
            }),
            dynamics: None,
            latent: LatentState::None,
        };
        let (m, v) = conditional_a3(&psi, &md, &target(1e6, 0.0, 2)).unwrap();
        assert_abs_diff_eq!(m, 0.22, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 1.1, epsilon = 1e-12);
    }

    #[test]
    fn c_rho_zero_matches_innovation_kriging() {
        let md = toy_data(3, 2, &[]);
        let mut psi = exp_psi(0.4, 0.3);
        psi.dynamics = Some(DynamicsParams { rho: 0.0, sigma2_eta: None });
        let y = DMatrix::from_fn(3, 3, |i, t| (i as f64 - t as f64) * 0.3);
        psi.latent = LatentState::YField(y.clone());
        let site = Site::new("new", 1.0, 2.0, 0.0);
        let (m, v) = conditional_c_step(&psi, &md, &site, 2, 5.0).unwrap();
        let c = crate::covariance::spatial_corr_matrix(0.4, &md.h).unwrap();
        let f = chol_psd(&(c * 0.8), 1e-6).unwrap();
        let h: Vec<f64> = md.ds.sites().iter().map(|s| s.distance_km(&site)).collect();
        let s12 = DVector::from_iterator(3, h.iter().map(|x| 0.8 * (-0.4 * x).exp()));
        let (m2, v2) = mvn_condition(&DVector::zeros(3), 0.0, &f, &s12, 0.8, &y.column(2).clone_owned()).unwrap();
        assert_abs_diff_eq!(m, m2, epsilon = 1e-12);
        assert_abs_diff_eq!(v, v2, epsilon = 1e-12);
    }

    #[test]
    fn order_summaries_commute_with_exp() {
        let draws: Vec<f64> = (0..250).map(|i| ((i * 37 % 101) as f64 - 50.0) / 20.0).collect();
        let t = target(0.0, 0.0, 1);
        let s = summarize_predictions(&PredictiveDraws { target: t.clone(), draws }, 0.9, Scale::Log).unwrap();
        let c = s.concentration.unwrap();
        assert_eq!(c.median, s.model.median.exp());
        assert_eq!(c.lo, s.model.lo.exp());
        assert_eq!(c.hi, s.model.hi.exp());
        let flat = summarize_predictions(&PredictiveDraws { target: t.clone(), draws: vec![2.5; 100] }, 0.95, Scale::Natural).unwrap();
        assert_eq!((flat.model.lo, flat.model.hi), (2.5, 2.5));
        assert!(summarize_predictions(&PredictiveDraws { target: t, draws: vec![1.0; 99] }, 0.95, Scale::Log).is_err());
    }
}
