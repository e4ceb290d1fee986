//! MCMC for all six models.
//!
//! [`run_mcmc`] drives one chain: a sweep updates the latent states first
//! (FFBS or the joint field draw), then β, then the conjugate variances, then
//! each Metropolis parameter in the order listed by
//! [`model_meta`](crate::models::model_meta).

pub mod diagnostics;
pub mod enbloc;
pub mod ffbs;
pub mod gibbs;
pub mod mh;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{separable_corr_matrix, DynamicsParams, ExpSpatialParams, GneitingFamily, GneitingParams, SeparableParams};
use crate::error::{Error, Result};
use crate::gaussmath::{chol_psd, mvn_logpdf, CholeskyFactor};
use crate::models::{
    daywise_loglik_resid, latent_loglik_a2, pattern_residuals, latent_loglik_b, latent_loglik_c, model_meta, param_log_prior, CorrParams,
    LatentState, ModelData, ModelKind, ParamId, ParamState, PriorSpec,
};
use crate::rng::RngStream;

pub use diagnostics::{acf, diagnostics, ess, Diagnostics, ParamDiagnostics};
pub use enbloc::{enbloc_conditional_dense, enbloc_draw, enbloc_update_u, KronEigen};
pub use ffbs::{ffbs_model_b, ffbs_model_c};
pub use gibbs::{beta_conditional, beta_update, sample_inv_gamma, variance_conditional, variance_gibbs_update};
pub use mh::{mh_update, AdaptState, MhOutcome, Transform};

/// Run-length and adaptation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub n_chains: usize,
    /// Acceptance rate the step sizes are tuned toward.
    pub target_accept: f64,
    /// Iteration at which adaptation stops; defaults to `burn_in`.
    pub adapt_until: Option<usize>,
    /// Initial proposal standard deviation on the transformed scale.
    pub initial_step: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_iter: 2000,
            burn_in: 1000,
            thin: 1,
            seed: 1,
            n_chains: 1,
            target_accept: 0.44,
            adapt_until: None,
            initial_step: 0.5,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(Error::Config(format!(
                "burn_in ({}) must be smaller than n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 || self.n_chains == 0 {
            return Err(Error::Config("thin and n_chains must be at least 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!("target_accept must lie in (0, 1), got {}", self.target_accept)));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::Config(format!("initial_step must be positive, got {}", self.initial_step)));
        }
        if let Some(a) = self.adapt_until {
            if a > self.burn_in {
                return Err(Error::Config(format!(
                    "adapt_until ({a}) must not exceed burn_in ({})",
                    self.burn_in
                )));
            }
        }
        Ok(())
    }

    /// Number of draws a chain keeps.
    pub fn n_retained(&self) -> usize {
        (self.n_iter - self.burn_in).div_ceil(self.thin)
    }

    fn adapt_stop(&self) -> usize {
        self.adapt_until.unwrap_or(self.burn_in)
    }
}

/// Wall-clock cost of a chain.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainTiming {
    /// Mean seconds per sweep after burn-in.
    pub secs_per_iter: f64,
    pub total_secs: f64,
    /// Accumulated seconds per update block over the whole run.
    pub per_update: BTreeMap<String, f64>,
}


/// Retained draws of one chain.
#[derive(Clone, Debug)]
pub struct Chain {
    pub kind: ModelKind,
    pub covariate_names: Vec<String>,
    pub n_sites: usize,
    pub n_days: usize,
    pub draws: Vec<ParamState>,
    /// Post-adaptation acceptance rate of each Metropolis parameter.
    pub acceptance: Vec<(ParamId, f64)>,
    pub timing: ChainTiming,
}

impl Chain {
    /// Column names of the scalar parameters: `beta[<covariate>]`, then the
    /// model's parameters in canonical order.
    pub fn param_names(&self) -> Vec<String> {
        self.covariate_names
            .iter()
            .map(|n| format!("beta[{n}]"))
            .chain(self.kind.param_ids().iter().map(|p| p.name().to_string()))
            .collect()
    }

    /// Scalar parameter values of draw `i` in [`param_names`](Self::param_names) order.
    pub fn row(&self, i: usize) -> Vec<f64> {
        let s = &self.draws[i];
        s.beta
            .iter()
            .copied()
            .chain(self.kind.param_ids().iter().map(|&p| s.get(p).unwrap_or(f64::NAN)))
            .collect()
    }

    /// All draws of one named parameter.
    pub fn series(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.param_names().iter().position(|n| n == name)?;
        Some((0..self.draws.len()).map(|i| self.row(i)[j]).collect())
    }

    pub fn param_series(&self, id: ParamId) -> Vec<f64> {
        self.draws.iter().map(|s| s.get(id).unwrap_or(f64::NAN)).collect()
    }

    /// Names of the latent columns: `u_<site>_<day>` (day from 1) for A2,
    /// `y_<day>` for B and `y_<site>_<day>` for C (day from 0).
    pub fn latent_names(&self) -> Vec<String> {
        let (d, n) = (self.n_sites, self.n_days);
        match self.kind {
            ModelKind::A2 => (0..d * n).map(|c| format!("u_{}_{}", c % d, c / d + 1)).collect(),
            ModelKind::B => (0..=n).map(|t| format!("y_{t}")).collect(),
            ModelKind::C => (0..=n).flat_map(|t| (0..d).map(move |i| format!("y_{i}_{t}"))).collect(),
            _ => Vec::new(),
        }
    }

    fn latent_values(s: &ParamState) -> Vec<f64> {
        match &s.latent {
            LatentState::U(u) | LatentState::YScalar(u) => u.iter().copied().collect(),
            LatentState::YField(y) => y.iter().copied().collect(),
            LatentState::None => Vec::new(),
        }
    }

    /// Writes one row per retained draw. Latent states are appended when
    /// `with_latent` is set.
    pub fn write_csv(&self, path: &Path, with_latent: bool) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header = vec!["draw".to_string()];
        header.extend(self.param_names());
        if with_latent {
            header.extend(self.latent_names());
        }
        writeln!(f, "{}", header.join(","))?;
        for i in 0..self.draws.len() {
            let mut cells = vec![i.to_string()];
            cells.extend(self.row(i).iter().map(|v| v.to_string()));
            if with_latent {
                cells.extend(Self::latent_values(&self.draws[i]).iter().map(|v| v.to_string()));
            }
            writeln!(f, "{}", cells.join(","))?;
        }
        Ok(())
    }

    /// Reads a file written by [`write_csv`](Self::write_csv). Latent
    /// columns, when absent, are left at their initial values.
    pub fn read_csv(path: &Path, kind: ModelKind, md: &ModelData, prior: &PriorSpec) -> Result<Chain> {
        let template = initial_state(kind, md, prior)?;
        let mut chain = Chain {
            kind,
            covariate_names: md.ds.covariate_names().to_vec(),
            n_sites: md.d(),
            n_days: md.n_days(),
            draws: Vec::new(),
            acceptance: Vec::new(),
            timing: ChainTiming::default(),
        };
        let names = chain.param_names();
        let latent = chain.latent_names();
        let mut rdr = csv::Reader::from_path(path)?;
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let col = |n: &str| header.iter().position(|h| h == n);
        let scalar_cols = names
            .iter()
            .map(|n| col(n).ok_or_else(|| Error::Schema(format!("{}: missing column {n}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        let latent_cols: Option<Vec<usize>> = latent.iter().map(|n| col(n)).collect();
        let k = md.k();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |j: usize| -> Result<f64> {
                rec.get(j).unwrap_or("").trim().parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: r as u64 + 2,
                    msg: format!("column {}: {e}", header[j]),
                })
            };
            let mut s = template.clone();
            for (c, &j) in scalar_cols.iter().enumerate() {
                let v = num(j)?;
                if c < k {
                    s.beta[c] = v;
                } else {
                    s.set(kind.param_ids()[c - k], v)?;
                }
            }
            if let Some(cols) = &latent_cols {
                let vals = cols.iter().map(|&j| num(j)).collect::<Result<Vec<_>>>()?;
                match &mut s.latent {
                    LatentState::U(u) | LatentState::YScalar(u) => u.copy_from_slice(&vals),
                    LatentState::YField(y) => y.copy_from_slice(&vals),
                    LatentState::None => {}
                }
            }
            chain.draws.push(s);
        }
        Ok(chain)
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Default starting point: OLS β, the residual variance split evenly
/// between σ²_ε and σ²_ω, correlation 1/2 at the median inter-site
/// distance, and zero (or data-filled) latent states.
pub fn initial_state(kind: ModelKind, md: &ModelData, prior: &PriorSpec) -> Result<ParamState> {
    let (x, z) = gibbs::obs_design(md);
    let k = md.k();
    if z.len() < k {
        return Err(Error::Contract(format!("{} observations cannot identify {k} coefficients", z.len())));
    }
    let xtx = x.transpose() * &x + DMatrix::identity(k, k) * 1e-8;
    let beta = chol_psd(&xtx, md.max_jitter)?.solve(&(x.transpose() * &z));
    let resid = &z - &x * &beta;
    let s2 = (resid.norm_squared() / (z.len() - k).max(1) as f64).max(1e-3);
    let d = md.d();
    let h_med = median((0..d).flat_map(|i| (0..i).map(move |j| (i, j))).map(|(i, j)| md.h[(i, j)]).filter(|h| *h > 0.0).collect())
        .unwrap_or(1.0);
    let inside = |id: ParamId, v: f64| -> f64 {
        match prior.bounds(id) {
            Some((lo, hi)) => v.clamp(lo + 0.01 * (hi - lo), hi - 0.01 * (hi - lo)),
            None => v,
        }
    };
    let theta = inside(ParamId::Theta, std::f64::consts::LN_2 / h_med);
    let (s2eps, s2omega) = (s2 / 2.0, s2 / 2.0);
    let exp = CorrParams::Exp(ExpSpatialParams { theta, sigma2_omega: s2omega });
    let n = md.n_days();
    let gneiting = |family: GneitingFamily, c: f64| {
        CorrParams::Gneiting(GneitingParams {
            a: inside(ParamId::A, 1.0),
            c: inside(ParamId::C, c),
            alpha: inside(ParamId::Alpha, 0.5),
            gamma: inside(ParamId::Gamma, 0.5),
            family,
            sigma2_omega: s2omega,
        })
    };
    let (corr, dynamics, latent) = match kind {
        ModelKind::A1 => (exp, None, LatentState::None),
        ModelKind::A2 => {
            let trend = md.trend_all(&beta);
            let u = DVector::from_fn(d * n, |c, _| md.ds.z_cells()[c].unwrap_or(trend[c]));
            let sep = SeparableParams {
                theta1: inside(ParamId::Theta1, 1.0),
                theta2: inside(ParamId::Theta2, std::f64::consts::LN_2 / h_med),
                sigma2_omega: s2omega,
            };
            (CorrParams::Separable(sep), None, LatentState::U(u))
        }
        ModelKind::A3_1 => (
            gneiting(GneitingFamily::A31 { b: inside(ParamId::B, 0.5) }, std::f64::consts::LN_2 / h_med),
            None,
            LatentState::None,
        ),
        ModelKind::A3_2 => (
            gneiting(
                GneitingFamily::A32 { nu: inside(ParamId::Nu, 1.0), tau: inside(ParamId::Tau, 0.5) },
                1.0 / h_med,
            ),
            None,
            LatentState::None,
        ),
        ModelKind::B => (
            exp,
            Some(DynamicsParams { rho: inside(ParamId::Rho, 0.5), sigma2_eta: Some(s2 / 4.0) }),
            LatentState::YScalar(DVector::zeros(n + 1)),
        ),
        ModelKind::C => (
            exp,
            Some(DynamicsParams { rho: inside(ParamId::Rho, 0.5), sigma2_eta: None }),
            LatentState::YField(DMatrix::zeros(d, n + 1)),
        ),
    };
    let psi = ParamState { beta, sigma2_eps: s2eps, corr, dynamics, latent };
    psi.validate(kind, k, d, n)?;
    Ok(psi)
}

fn exp_factors(md: &ModelData, p: &ParamState) -> Result<Vec<CholeskyFactor>> {
    md.pattern_factors(&md.spatial_cov(p.corr.as_exp()?, p.sigma2_eps)?)
}

fn dense_factor(md: &ModelData, p: &ParamState) -> Result<CholeskyFactor> {
    chol_psd(&md.gneiting_obs_cov(p.corr.as_gneiting()?, p.sigma2_eps)?, md.max_jitter)
}

fn dense_loglik(md: &ModelData, z_obs: &DVector<f64>, beta: &DVector<f64>, f: &CholeskyFactor) -> Result<f64> {
    let d = md.d();
    let mu = DVector::from_iterator(md.obs_cells.len(), md.obs_cells.iter().map(|&c| md.trend(c % d, c / d, beta)));
    mvn_logpdf(z_obs, &mu, f)
}

fn y_scalar(psi: &ParamState) -> Result<&DVector<f64>> {
    match &psi.latent {
        LatentState::YScalar(y) => Ok(y),
        _ => Err(Error::Contract("Model B needs the scalar latent path".into())),
    }
}

struct Sampler<'a> {
    kind: ModelKind,
    md: &'a ModelData,
    prior: &'a PriorSpec,
    psi: ParamState,
    mh_ids: &'static [ParamId],
    adapt: Vec<AdaptState>,
    rng: RngStream,
    z_obs: DVector<f64>,
    /// Pattern factors of `Σ_{ω+ε}` (A1, B).
    factors: Option<Vec<CholeskyFactor>>,
    /// Observed-cell covariance factor (A3).
    dense: Option<CholeskyFactor>,
    timers: BTreeMap<String, f64>,
}

impl<'a> Sampler<'a> {
    fn timed<T>(&mut self, label: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f(self);
        *self.timers.entry(label.to_string()).or_default() += t0.elapsed().as_secs_f64();
        out
    }

    /// Metropolis update of `mh_ids[j]`. `eval` returns the likelihood part
    /// of the target at a proposed state together with anything worth
    /// caching; it is returned when the proposal is accepted.
    fn mh_step<C>(
        &mut self,
        j: usize,
        current_ll: f64,
        mut eval: impl FnMut(&ParamState) -> Result<(f64, C)>,
    ) -> Result<Option<(f64, C)>> {
        let id = self.mh_ids[j];
        let prior = self.prior;
        let x = self.psi.get(id).ok_or_else(|| Error::Contract(format!("state has no parameter {id}")))?;
        let transform = Transform::for_param(prior, id);
        let current = current_ll + param_log_prior(prior, id, x);
        let psi = &self.psi;
        let mut stash = None;
        let out = mh_update(
            x,
            current,
            transform,
            |xn| {
                let mut p = psi.clone();
                p.set(id, xn)?;
                let (ll, c) = eval(&p)?;
                stash = Some((ll, c));
                Ok(ll + param_log_prior(prior, id, xn))
            },
            &mut self.rng,
            &mut self.adapt[j],
        )?;
        if out.accepted {
            self.psi.set(id, out.value)?;
            Ok(stash)
        } else {
            Ok(None)
        }
    }

    fn update_beta(&mut self, g: gibbs::GlsTerms) -> Result<()> {
        let (mean, f) = gibbs::beta_posterior(&g, self.prior, self.md.max_jitter)?;
        self.psi.beta = gibbs::draw_beta(&mean, &f, &mut self.rng);
        Ok(())
    }

    fn gibbs_variance(&mut self, id: ParamId) -> Result<()> {
        let v = variance_gibbs_update(self.kind, id, &self.psi, self.md, self.prior, &mut self.rng)?;
        self.psi.set(id, v)
    }

    fn sweep(&mut self) -> Result<()> {
        let md = self.md;
        match self.kind {
            ModelKind::A1 => {
                if self.factors.is_none() {
                    self.factors = Some(exp_factors(md, &self.psi)?);
                }
                self.timed("beta", |s| {
                    let g = gibbs::gls_daywise(md, s.factors.as_ref().unwrap(), None);
                    s.update_beta(g)
                })?;
                self.timed("metropolis", |s| {
                    let resid = pattern_residuals(md, &s.psi.beta, None);
                    let mut ll = daywise_loglik_resid(md, &resid, s.factors.as_ref().unwrap());
                    for j in 0..s.mh_ids.len() {
                        let r = s.mh_step(j, ll, |p| {
                            let f = exp_factors(md, p)?;
                            Ok((daywise_loglik_resid(md, &resid, &f), f))
                        })?;
                        if let Some((l, f)) = r {
                            ll = l;
                            s.factors = Some(f);
                        }
                    }
                    Ok(())
                })
            }
            ModelKind::A3_1 | ModelKind::A3_2 => {
                if self.dense.is_none() {
                    self.dense = Some(dense_factor(md, &self.psi)?);
                }
                self.timed("beta", |s| {
                    let g = gibbs::gls_dense(md, s.dense.as_ref().unwrap());
                    s.update_beta(g)
                })?;
                self.timed("metropolis", |s| {
                    let z = s.z_obs.clone();
                    let mut ll = dense_loglik(md, &z, &s.psi.beta, s.dense.as_ref().unwrap())?;
                    for j in 0..s.mh_ids.len() {
                        let r = s.mh_step(j, ll, |p| {
                            let f = dense_factor(md, p)?;
                            Ok((dense_loglik(md, &z, &p.beta, &f)?, f))
                        })?;
                        if let Some((l, f)) = r {
                            ll = l;
                            s.dense = Some(f);
                        }
                    }
                    Ok(())
                })
            }
            ModelKind::A2 => {
                self.timed("latent", |s| {
                    let u = enbloc_update_u(&s.psi, md, &mut s.rng)?;
                    s.psi.latent = LatentState::U(u);
                    Ok(())
                })?;
                self.timed("beta", |s| {
                    let LatentState::U(u) = &s.psi.latent else { unreachable!() };
                    let p = s.psi.corr.as_separable()?;
                    let kf = separable_corr_matrix(p, &md.h, md.n_days())?.factor(md.max_jitter)?;
                    let g = gibbs::gls_kron(md, &kf, u, p.sigma2_omega)?;
                    s.update_beta(g)
                })?;
                self.timed("variance", |s| {
                    s.gibbs_variance(ParamId::Sigma2Omega)?;
                    s.gibbs_variance(ParamId::Sigma2Eps)
                })?;
                self.timed("metropolis", |s| {
                    let mut ll = latent_loglik_a2(&s.psi, md)?;
                    for j in 0..s.mh_ids.len() {
                        if let Some((l, ())) = s.mh_step(j, ll, |p| Ok((latent_loglik_a2(p, md)?, ())))? {
                            ll = l;
                        }
                    }
                    Ok(())
                })
            }
            ModelKind::B => {
                if self.factors.is_none() {
                    self.factors = Some(exp_factors(md, &self.psi)?);
                }
                self.timed("latent", |s| {
                    let y = ffbs::ffbs_b_with(&s.psi, md, s.prior, s.factors.as_ref().unwrap(), &mut s.rng)?;
                    s.psi.latent = LatentState::YScalar(y);
                    Ok(())
                })?;
                self.timed("beta", |s| {
                    let g = gibbs::gls_daywise(md, s.factors.as_ref().unwrap(), Some(y_scalar(&s.psi)?));
                    s.update_beta(g)
                })?;
                self.timed("variance", |s| s.gibbs_variance(ParamId::Sigma2Eta))?;
                self.timed("metropolis", |s| {
                    let y = y_scalar(&s.psi)?.clone();
                    let resid = pattern_residuals(md, &s.psi.beta, Some(&y));
                    let mut obs_ll = daywise_loglik_resid(md, &resid, s.factors.as_ref().unwrap());
                    let prior = s.prior;
                    for j in 0..s.mh_ids.len() {
                        if s.mh_ids[j] == ParamId::Rho {
                            let cur = latent_loglik_b(&s.psi, prior)?;
                            s.mh_step(j, cur, |p| Ok((latent_loglik_b(p, prior)?, ())))?;
                        } else {
                            let r = s.mh_step(j, obs_ll, |p| {
                                let f = exp_factors(md, p)?;
                                Ok((daywise_loglik_resid(md, &resid, &f), f))
                            })?;
                            if let Some((l, f)) = r {
                                obs_ll = l;
                                s.factors = Some(f);
                            }
                        }
                    }
                    Ok(())
                })
            }
            ModelKind::C => {
                self.timed("latent", |s| {
                    let y = ffbs_model_c(&s.psi, md, s.prior, &mut s.rng)?;
                    s.psi.latent = LatentState::YField(y);
                    Ok(())
                })?;
                self.timed("beta", |s| {
                    let LatentState::YField(y) = &s.psi.latent else { unreachable!() };
                    let g = gibbs::gls_independent(md, y, s.psi.sigma2_eps);
                    s.update_beta(g)
                })?;
                self.timed("variance", |s| {
                    s.gibbs_variance(ParamId::Sigma2Omega)?;
                    s.gibbs_variance(ParamId::Sigma2Eps)
                })?;
                self.timed("metropolis", |s| {
                    let prior = s.prior;
                    let mut ll = latent_loglik_c(&s.psi, md, prior)?;
                    for j in 0..s.mh_ids.len() {
                        if let Some((l, ())) = s.mh_step(j, ll, |p| Ok((latent_loglik_c(p, md, prior)?, ())))? {
                            ll = l;
                        }
                    }
                    Ok(())
                })
            }
        }
    }
}

/// Runs one chain from [`initial_state`].
pub fn run_mcmc(kind: ModelKind, md: &ModelData, prior: &PriorSpec, cfg: &McmcConfig, rng: RngStream) -> Result<Chain> {
    let init = initial_state(kind, md, prior)?;
    run_mcmc_from(kind, md, prior, cfg, init, rng)
}

/// Runs one chain from a given starting state.
pub fn run_mcmc_from(
    kind: ModelKind,
    md: &ModelData,
    prior: &PriorSpec,
    cfg: &McmcConfig,
    init: ParamState,
    rng: RngStream,
) -> Result<Chain> {
    cfg.validate()?;
    prior.validate()?;
    init.validate(kind, md.k(), md.d(), md.n_days())?;
    if md.obs_cells.is_empty() {
        return Err(Error::Contract("the dataset has no observations".into()));
    }
    let meta = model_meta(kind);
    let (_, z_obs) = gibbs::obs_design(md);
    let mut s = Sampler {
        kind,
        md,
        prior,
        psi: init,
        mh_ids: meta.mh,
        adapt: meta.mh.iter().map(|_| AdaptState::new(cfg.initial_step, cfg.target_accept)).collect(),
        rng,
        z_obs,
        factors: None,
        dense: None,
        timers: BTreeMap::new(),
    };
    let mut draws = Vec::with_capacity(cfg.n_retained());
    let start = Instant::now();
    let mut post_secs = 0.0;
    for it in 0..cfg.n_iter {
        if it == cfg.adapt_stop() {
            s.adapt.iter_mut().for_each(AdaptState::freeze);
        }
        let t0 = Instant::now();
        s.sweep().map_err(|e| Error::AtIteration { iter: it, source: Box::new(e) })?;
        if it >= cfg.burn_in {
            post_secs += t0.elapsed().as_secs_f64();
            if (it - cfg.burn_in) % cfg.thin == 0 {
                draws.push(s.psi.clone());
            }
        }
    }
    Ok(Chain {
        kind,
        covariate_names: md.ds.covariate_names().to_vec(),
        n_sites: md.d(),
        n_days: md.n_days(),
        draws,
        acceptance: meta.mh.iter().zip(&s.adapt).map(|(&id, a)| (id, a.acceptance_rate())).collect(),
        timing: ChainTiming {
            secs_per_iter: post_secs / (cfg.n_iter - cfg.burn_in) as f64,
            total_secs: start.elapsed().as_secs_f64(),
            per_update: s.timers,
        },
    })
}

/// Runs `cfg.n_chains` chains in parallel. Chain `c` uses the stream
/// `RngStream::new(cfg.seed).derive(c)`, so results do not depend on
/// scheduling.
pub fn run_chains(kind: ModelKind, md: &ModelData, prior: &PriorSpec, cfg: &McmcConfig) -> Result<Vec<Chain>> {
    cfg.validate()?;
    let base = RngStream::new(cfg.seed);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.n_chains)
            .map(|c| {
                let rng = base.derive(c as u64);
                scope.spawn(move || run_mcmc(kind, md, prior, cfg, rng))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Numerical("sampler thread panicked".into()))))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::tests::toy_data;

    fn short(n_iter: usize, burn_in: usize, thin: usize) -> McmcConfig {
        McmcConfig { n_iter, burn_in, thin, ..McmcConfig::default() }
    }

    #[test]
    fn retained_count_rounds_up() {
        assert_eq!(short(10, 3, 1).n_retained(), 7);
        assert_eq!(short(10, 3, 3).n_retained(), 3);
        assert_eq!(short(10, 4, 3).n_retained(), 2);
    }

    #[test]
    fn config_rejects_burn_in_past_end() {
        assert!(matches!(short(10, 10, 1).validate(), Err(Error::Config(_))));
        assert!(matches!(short(10, 2, 0).validate(), Err(Error::Config(_))));
        let c = McmcConfig { adapt_until: Some(5), ..short(10, 2, 1) };
        assert!(c.validate().is_err());
    }

    #[test]
    fn every_model_runs_and_is_reproducible() {
        let md = toy_data(3, 4, &[2, 7]);
        let prior = PriorSpec::default();
        let cfg = short(30, 10, 3);
        for kind in ModelKind::ALL {
            let a = run_mcmc(kind, &md, &prior, &cfg, RngStream::new(5)).unwrap();
            let b = run_mcmc(kind, &md, &prior, &cfg, RngStream::new(5)).unwrap();
            assert_eq!(a.draws.len(), 7, "{kind}");
            assert_eq!(a.draws, b.draws, "{kind}");
            for s in &a.draws {
                s.validate(kind, md.k(), md.d(), md.n_days()).unwrap();
            }
            assert_eq!(a.acceptance.len(), model_meta(kind).n_mh_params);
        }
    }

    #[test]
    fn chains_use_distinct_derived_streams() {
        let md = toy_data(3, 4, &[]);
        let cfg = McmcConfig { n_chains: 2, ..short(12, 2, 1) };
        let chains = run_chains(ModelKind::A1, &md, &PriorSpec::default(), &cfg).unwrap();
        assert_eq!(chains.len(), 2);
        assert_ne!(chains[0].draws, chains[1].draws);
        let solo = run_mcmc(ModelKind::A1, &md, &PriorSpec::default(), &cfg, RngStream::new(cfg.seed).derive(1)).unwrap();
        assert_eq!(solo.draws, chains[1].draws);
    }

    #[test]
    fn csv_round_trip_with_latent() {
        let md = toy_data(3, 4, &[5]);
        let prior = PriorSpec::default();
        let dir = tempfile::tempdir().unwrap();
        for kind in [ModelKind::A2, ModelKind::B, ModelKind::C, ModelKind::A3_2] {
            let chain = run_mcmc(kind, &md, &prior, &short(8, 2, 1), RngStream::new(1)).unwrap();
            let p = dir.path().join(format!("{kind}.csv"));
            chain.write_csv(&p, true).unwrap();
            let back = Chain::read_csv(&p, kind, &md, &prior).unwrap();
            assert_eq!(back.draws, chain.draws, "{kind}");
        }
    }

    #[test]
    fn initial_state_is_valid_for_every_model() {
        let md = toy_data(4, 5, &[0, 9]);
        for kind in ModelKind::ALL {
            let s = initial_state(kind, &md, &PriorSpec::default()).unwrap();
            assert!(log_prior_finite(kind, &s), "{kind}");
        }
    }

    fn log_prior_finite(kind: ModelKind, s: &ParamState) -> bool {
        crate::models::log_prior(kind, &PriorSpec::default(), s).is_finite()
    }
}
