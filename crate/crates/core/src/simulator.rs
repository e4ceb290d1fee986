//! Forward simulation from any of the six models.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::{
    nonseparable_corr_matrix, separable_corr_matrix, spatial_corr_matrix, DynamicsParams, ExpSpatialParams,
    GneitingFamily, GneitingParams, SeparableParams,
};
use crate::dataset::{Dataset, Scale, Site, INTERCEPT};
use crate::error::{Error, Result};
use crate::gaussmath::{chol_psd, std_normal_vec, KroneckerPair, DEFAULT_MAX_JITTER};
use crate::inference::{run_mcmc, Chain, McmcConfig};
use crate::models::{CorrParams, LatentState, ModelData, ModelKind, ParamState, PriorSpec, DEFAULT_MAX_DENSE_DIM};
use crate::rng::RngStream;

/// How the purely spatial term of Model B evolves over days.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BSpatialField {
    /// One field shared by every day.
    #[default]
    Static,
    /// A fresh field each day.
    Daily,
}

/// Sites, covariates and true parameters of a synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SimLayout {
    pub sites: Vec<Site>,
    pub n_days: usize,
    pub covariate_names: Vec<String>,
    /// Covariates in `(day, site, covariate)` order; column 0 is the
    /// intercept.
    pub x: Vec<f64>,
    pub truth: ParamState,
    /// Probability that a cell is removed.
    pub missing_rate: f64,
    pub b_field: BSpatialField,
    pub scale: Scale,
}

impl SimLayout {
    /// `d` sites uniform on a `width × height` km rectangle and `k − 1`
    /// standard-normal covariates next to the intercept.
    pub fn random<R: Rng + ?Sized>(
        d: usize,
        n_days: usize,
        k: usize,
        width_km: f64,
        height_km: f64,
        truth: ParamState,
        rng: &mut R,
    ) -> Result<Self> {
        if d == 0 || n_days == 0 || k == 0 {
            return Err(Error::Config(format!("layout needs d, T, k ≥ 1, got {d}, {n_days}, {k}")));
        }
        if !(width_km > 0.0 && height_km > 0.0) {
            return Err(Error::Config("layout rectangle must have positive sides".into()));
        }
        let sites = (0..d)
            .map(|i| Site::new(format!("S{:03}", i + 1), width_km * rng.random::<f64>(), height_km * rng.random::<f64>(), 0.0))
            .collect();
        let mut x = Vec::with_capacity(n_days * d * k);
        for _ in 0..n_days * d {
            x.push(1.0);
            for _ in 1..k {
                x.push(rng.sample(StandardNormal));
            }
        }
        let covariate_names = std::iter::once(INTERCEPT.to_string()).chain((1..k).map(|c| format!("x{c}"))).collect();
        Ok(SimLayout {
            sites,
            n_days,
            covariate_names,
            x,
            truth,
            missing_rate: 0.0,
            b_field: BSpatialField::Static,
            scale: Scale::Log,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        let k = self.covariate_names.len();
        if self.x.len() != self.n_days * self.n_sites() * k {
            return Err(Error::DimensionMismatch(format!(
                "layout has {} covariate values, expected {}",
                self.x.len(),
                self.n_days * self.n_sites() * k
            )));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::Config(format!("missing_rate must lie in [0, 1), got {}", self.missing_rate)));
        }
        let mut t = self.truth.clone();
        t.latent = template_latent(kind, self.n_sites(), self.n_days);
        // A noiseless simulation is allowed even though it cannot be fitted.
        if t.sigma2_eps == 0.0 {
            t.sigma2_eps = 1.0;
        }
        t.validate(kind, k, self.n_sites(), self.n_days)
    }

    fn trend(&self, i: usize, t: usize) -> f64 {
        let k = self.covariate_names.len();
        let row = &self.x[(t * self.n_sites() + i) * k..][..k];
        row.iter().zip(self.truth.beta.iter()).map(|(a, b)| a * b).sum()
    }
}

fn template_latent(kind: ModelKind, d: usize, n: usize) -> LatentState {
    match kind {
        ModelKind::A2 => LatentState::U(DVector::zeros(d * n)),
        ModelKind::B => LatentState::YScalar(DVector::zeros(n + 1)),
        ModelKind::C => LatentState::YField(DMatrix::zeros(d, n + 1)),
        _ => LatentState::None,
    }
}

/// A simulated dataset together with the values of the latent states.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub dataset: Dataset,
    /// True parameters with the simulated latent states filled in.
    pub truth: ParamState,
    /// Noise-free signal `u(s,t)` on all `dT` cells, global order.
    pub signal: DVector<f64>,
}

/// Draws a dataset from `kind` with the layout's true parameters.
pub fn simulate<R: Rng + ?Sized>(kind: ModelKind, layout: &SimLayout, rng: &mut R) -> Result<Dataset> {
    Ok(simulate_full(kind, layout, rng)?.dataset)
}

/// `σ L ξ` for a correlation matrix; zero when `σ² = 0`.
fn correlated<R: Rng + ?Sized>(c: &DMatrix<f64>, s2: f64, rng: &mut R) -> Result<DVector<f64>> {
    let xi = std_normal_vec(c.nrows(), rng);
    if s2 == 0.0 {
        return Ok(DVector::zeros(c.nrows()));
    }
    Ok(chol_psd(c, DEFAULT_MAX_JITTER)?.l() * xi * s2.sqrt())
}

/// Like [`simulate`], also returning the latent states and the signal.
pub fn simulate_full<R: Rng + ?Sized>(kind: ModelKind, layout: &SimLayout, rng: &mut R) -> Result<Simulation> {
    layout.validate(kind)?;
    let psi = &layout.truth;
    let d = layout.n_sites();
    let n = layout.n_days;
    let h = crate::dataset::spatial_distance_matrix(&layout.sites);
    let trend = DVector::from_fn(d * n, |c, _| layout.trend(c % d, c / d));
    let mut truth = psi.clone();
    let process = match kind {
        ModelKind::A1 => {
            let e = psi.corr.as_exp()?;
            let c = spatial_corr_matrix(e.theta, &h)?;
            let mut w = DVector::zeros(d * n);
            for t in 0..n {
                w.rows_mut(t * d, d).copy_from(&correlated(&c, e.sigma2_omega, rng)?);
            }
            w
        }
        ModelKind::A2 => {
            let p = psi.corr.as_separable()?;
            let pair = separable_corr_matrix(p, &h, n)?;
            let xi = std_normal_vec(d * n, rng);
            let w = if p.sigma2_omega == 0.0 {
                DVector::zeros(d * n)
            } else {
                let la = chol_psd(&pair.a, DEFAULT_MAX_JITTER)?.l().clone();
                let lb = chol_psd(&pair.b, DEFAULT_MAX_JITTER)?.l().clone();
                KroneckerPair::new(la, lb)?.matvec(&xi)? * p.sigma2_omega.sqrt()
            };
            truth.latent = LatentState::U(&trend + &w);
            w
        }
        ModelKind::A3_1 | ModelKind::A3_2 => {
            let g = psi.corr.as_gneiting()?;
            let c = nonseparable_corr_matrix(g, &h, n, DEFAULT_MAX_DENSE_DIM)?;
            correlated(&c, g.sigma2_omega, rng)?
        }
        ModelKind::B => {
            let e = psi.corr.as_exp()?;
            let dy = psi.dynamics.ok_or_else(|| Error::Contract("Model B needs dynamics".into()))?;
            let s2eta = dy.sigma2_eta.unwrap_or(0.0);
            let prior = PriorSpec::default();
            let mut y = DVector::zeros(n + 1);
            y[0] = prior.sigma2_b.sqrt() * rng.sample::<f64, _>(StandardNormal);
            for t in 1..=n {
                y[t] = dy.rho * y[t - 1] + s2eta.sqrt() * rng.sample::<f64, _>(StandardNormal);
            }
            let c = spatial_corr_matrix(e.theta, &h)?;
            let mut w = DVector::zeros(d * n);
            let fixed = correlated(&c, e.sigma2_omega, rng)?;
            for t in 0..n {
                let omega = match layout.b_field {
                    BSpatialField::Static => fixed.clone(),
                    BSpatialField::Daily if t == 0 => fixed.clone(),
                    BSpatialField::Daily => correlated(&c, e.sigma2_omega, rng)?,
                };
                w.rows_mut(t * d, d).copy_from(&omega.add_scalar(y[t + 1]));
            }
            truth.latent = LatentState::YScalar(y);
            w
        }
        ModelKind::C => {
            let e = psi.corr.as_exp()?;
            let dy = psi.dynamics.ok_or_else(|| Error::Contract("Model C needs dynamics".into()))?;
            let prior = PriorSpec::default();
            let c = spatial_corr_matrix(e.theta, &h)?;
            let mut y = DMatrix::zeros(d, n + 1);
            y.set_column(0, &(std_normal_vec(d, rng) * prior.sigma2_c.sqrt()));
            let mut w = DVector::zeros(d * n);
            for t in 1..=n {
                let next = y.column(t - 1) * dy.rho + correlated(&c, e.sigma2_omega, rng)?;
                y.set_column(t, &next);
                w.rows_mut((t - 1) * d, d).copy_from(&next);
            }
            truth.latent = LatentState::YField(y);
            w
        }
    };
    let signal = &trend + process;
    let sd = psi.sigma2_eps.sqrt();
    let mut z: Vec<Option<f64>> = signal.iter().map(|u| Some(u + sd * rng.sample::<f64, _>(StandardNormal))).collect();
    if layout.missing_rate > 0.0 {
        for v in z.iter_mut() {
            if rng.random::<f64>() < layout.missing_rate {
                *v = None;
            }
        }
    }
    let dataset = Dataset::new(
        layout.sites.clone(),
        n,
        layout.covariate_names.clone(),
        layout.x.clone(),
        z,
        layout.scale,
    )?;
    Ok(Simulation { dataset, truth, signal })
}

/// One draw of `(z(s₁,1), z(s₂,1+l))` for two sites `h` km apart under
/// Model B or C with zero trend, started from the stationary law. Used to
/// check the implied covariances.
pub fn simulate_lagged_pair<R: Rng + ?Sized>(
    kind: ModelKind,
    psi: &ParamState,
    h: f64,
    l: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let e = psi.corr.as_exp()?;
    let dy = psi.dynamics.ok_or_else(|| Error::Contract(format!("model {kind} has no dynamics")))?;
    let r = (-e.theta * h).exp();
    let so = e.sigma2_omega.sqrt();
    let pair_field = |rng: &mut R| {
        let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        (so * a, so * (r * a + (1.0 - r * r).max(0.0).sqrt() * b))
    };
    let (u1, u2) = match kind {
        ModelKind::B => {
            let s2eta = dy.sigma2_eta.ok_or_else(|| Error::Contract("Model B needs sigma2_eta".into()))?;
            let mut y = (s2eta / (1.0 - dy.rho * dy.rho)).sqrt() * rng.sample::<f64, _>(StandardNormal);
            let y1 = y;
            for _ in 0..l {
                y = dy.rho * y + s2eta.sqrt() * rng.sample::<f64, _>(StandardNormal);
            }
            let (w1, w2) = pair_field(rng);
            (y1 + w1, y + w2)
        }
        ModelKind::C => {
            let scale = (1.0 - dy.rho * dy.rho).sqrt();
            let (w1, w2) = pair_field(rng);
            let (mut y1, mut y2) = (w1 / scale, w2 / scale);
            let first = y1;
            for _ in 0..l {
                let (w1, w2) = pair_field(rng);
                y1 = dy.rho * y1 + w1;
                y2 = dy.rho * y2 + w2;
            }
            (first, y2)
        }
        _ => return Err(Error::Contract(format!("model {kind} has no lagged-pair simulator"))),
    };
    let se = psi.sigma2_eps.sqrt();
    let z1 = u1 + se * rng.sample::<f64, _>(StandardNormal);
    if h == 0.0 && l == 0 {
        return Ok((z1, z1));
    }
    Ok((z1, u2 + se * rng.sample::<f64, _>(StandardNormal)))
}

/// Desk-scale true parameters for `kind` with `k` coefficients.
pub fn default_truth(kind: ModelKind, k: usize) -> ParamState {
    let beta = DVector::from_fn(k, |c, _| match c {
        0 => 3.5,
        c if c % 2 == 1 => 0.3 / c as f64,
        c => -0.2 / c as f64,
    });
    let exp = |theta| CorrParams::Exp(ExpSpatialParams { theta, sigma2_omega: 0.3 });
    let g = |family| {
        CorrParams::Gneiting(GneitingParams { a: 0.5, c: 0.01, alpha: 0.7, gamma: 0.5, family, sigma2_omega: 0.3 })
    };
    let (corr, dynamics) = match kind {
        ModelKind::A1 => (exp(0.02), None),
        ModelKind::A2 => (
            CorrParams::Separable(SeparableParams { theta1: 0.5, theta2: 0.02, sigma2_omega: 0.3 }),
            None,
        ),
        ModelKind::A3_1 => (g(GneitingFamily::A31 { b: 0.5 }), None),
        ModelKind::A3_2 => (g(GneitingFamily::A32 { nu: 1.0, tau: 0.5 }), None),
        ModelKind::B => (exp(0.02), Some(DynamicsParams { rho: 0.8, sigma2_eta: Some(0.2) })),
        ModelKind::C => (exp(0.01), Some(DynamicsParams { rho: 0.6, sigma2_eta: None })),
    };
    ParamState { beta, sigma2_eps: 0.1, corr, dynamics, latent: LatentState::None }
}

/// Named scalar parameters: `beta[<covariate>]` then the model's
/// parameters in canonical order.
pub fn named_values(kind: ModelKind, covariate_names: &[String], psi: &ParamState) -> Vec<(String, f64)> {
    covariate_names
        .iter()
        .zip(psi.beta.iter())
        .map(|(n, b)| (format!("beta[{n}]"), *b))
        .chain(kind.param_ids().iter().map(|&p| (p.name().to_string(), psi.get(p).unwrap_or(f64::NAN))))
        .collect()
}

/// Posterior summary of one parameter against its true value.
#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryRow {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub covered: bool,
}

#[derive(Clone, Debug)]
pub struct RecoveryReport {
    pub rows: Vec<RecoveryRow>,
    pub chain: Chain,
    pub simulation: Simulation,
}

impl RecoveryReport {
    pub fn row(&self, name: &str) -> Option<&RecoveryRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn coverage(&self) -> f64 {
        self.rows.iter().filter(|r| r.covered).count() as f64 / self.rows.len() as f64
    }
}

/// Simulates from `kind`, fits the same model and checks every parameter
/// against its equal-tailed posterior interval at `level`.
pub fn recovery_experiment(
    kind: ModelKind,
    layout: &SimLayout,
    prior: &PriorSpec,
    cfg: &McmcConfig,
    level: f64,
    rng: &RngStream,
) -> Result<RecoveryReport> {
    let sim = simulate_full(kind, layout, &mut rng.derive(0))?;
    let md = ModelData::new(&sim.dataset);
    let chain = run_mcmc(kind, &md, prior, cfg, rng.derive(1))?;
    let a = (1.0 - level) / 2.0;
    let truth = named_values(kind, &layout.covariate_names, &layout.truth);
    let rows = truth
        .into_iter()
        .map(|(name, t)| {
            let s = chain.series(&name).unwrap_or_default();
            let mean = s.iter().sum::<f64>() / s.len().max(1) as f64;
            let lo = crate::evaluation::quantile(&s, a);
            let hi = crate::evaluation::quantile(&s, 1.0 - a);
            RecoveryRow { name, truth: t, mean, lo, hi, covered: lo <= t && t <= hi }
        })
        .collect();
    Ok(RecoveryReport { rows, chain, simulation: sim })
}
