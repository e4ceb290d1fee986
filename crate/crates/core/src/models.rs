//! Model catalogue: parameter inventories, priors, structural metadata and
//! log-likelihood kernels.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::covariance::{
    nonseparable_corr_matrix, separable_corr_matrix, spatial_corr_matrix, DynamicsParams,
    ExpSpatialParams, GneitingFamily, GneitingParams, SeparableParams,
};
use crate::dataset::{spatial_distance_matrix, Dataset};
use crate::error::{Error, Result};
use crate::gaussmath::{chol_psd, mvn_logpdf, CholeskyFactor, DEFAULT_MAX_JITTER};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[allow(non_camel_case_types)]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    A1,
    A2,
    A3_1,
    A3_2,
    B,
    C,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::A1,
        ModelKind::A2,
        ModelKind::A3_1,
        ModelKind::A3_2,
        ModelKind::B,
        ModelKind::C,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::A1 => "A1",
            ModelKind::A2 => "A2",
            ModelKind::A3_1 => "A3-1",
            ModelKind::A3_2 => "A3-2",
            ModelKind::B => "B",
            ModelKind::C => "C",
        }
    }

    /// Non-β parameters in canonical order.
    pub fn param_ids(self) -> &'static [ParamId] {
        use ParamId::*;
        match self {
            ModelKind::A1 => &[Sigma2Eps, Sigma2Omega, Theta],
            ModelKind::A2 => &[Sigma2Eps, Sigma2Omega, Theta1, Theta2],
            ModelKind::A3_1 => &[Sigma2Eps, Sigma2Omega, A, Alpha, B, C, Gamma],
            ModelKind::A3_2 => &[Sigma2Eps, Sigma2Omega, A, Alpha, C, Gamma, Nu, Tau],
            ModelKind::B => &[Sigma2Eps, Sigma2Omega, Theta, Rho, Sigma2Eta],
            ModelKind::C => &[Sigma2Eps, Sigma2Omega, Theta, Rho],
        }
    }

    pub fn is_gneiting(self) -> bool {
        matches!(self, ModelKind::A3_1 | ModelKind::A3_2)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('_', "-").as_str() {
            "A1" => Ok(ModelKind::A1),
            "A2" => Ok(ModelKind::A2),
            "A3-1" | "A31" => Ok(ModelKind::A3_1),
            "A3-2" | "A32" => Ok(ModelKind::A3_2),
            "B" => Ok(ModelKind::B),
            "C" => Ok(ModelKind::C),
            _ => Err(Error::Schema(format!(
                "unknown model `{s}` (expected one of A1, A2, A3-1, A3-2, B, C)"
            ))),
        }
    }
}

/// Scalar parameters other than β.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamId {
    Sigma2Eps,
    Sigma2Omega,
    Sigma2Eta,
    Theta,
    Theta1,
    Theta2,
    A,
    Alpha,
    B,
    C,
    Gamma,
    Nu,
    Tau,
    Rho,
}

impl ParamId {
    pub fn name(self) -> &'static str {
        match self {
            ParamId::Sigma2Eps => "sigma2_eps",
            ParamId::Sigma2Omega => "sigma2_omega",
            ParamId::Sigma2Eta => "sigma2_eta",
            ParamId::Theta => "theta",
            ParamId::Theta1 => "theta1",
            ParamId::Theta2 => "theta2",
            ParamId::A => "a",
            ParamId::Alpha => "alpha",
            ParamId::B => "b",
            ParamId::C => "c",
            ParamId::Gamma => "gamma",
            ParamId::Nu => "nu",
            ParamId::Tau => "tau",
            ParamId::Rho => "rho",
        }
    }

    pub fn is_variance(self) -> bool {
        matches!(self, ParamId::Sigma2Eps | ParamId::Sigma2Omega | ParamId::Sigma2Eta)
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CorrParams {
    Exp(ExpSpatialParams),
    Separable(SeparableParams),
    Gneiting(GneitingParams),
}

impl CorrParams {
    pub fn sigma2_omega(&self) -> f64 {
        match self {
            CorrParams::Exp(p) => p.sigma2_omega,
            CorrParams::Separable(p) => p.sigma2_omega,
            CorrParams::Gneiting(p) => p.sigma2_omega,
        }
    }

    pub fn as_exp(&self) -> Result<&ExpSpatialParams> {
        match self {
            CorrParams::Exp(p) => Ok(p),
            _ => Err(Error::Contract("expected exponential spatial parameters".into())),
        }
    }

    pub fn as_separable(&self) -> Result<&SeparableParams> {
        match self {
            CorrParams::Separable(p) => Ok(p),
            _ => Err(Error::Contract("expected separable parameters".into())),
        }
    }

    pub fn as_gneiting(&self) -> Result<&GneitingParams> {
        match self {
            CorrParams::Gneiting(p) => Ok(p),
            _ => Err(Error::Contract("expected Gneiting parameters".into())),
        }
    }
}

/// Latent process values carried by the state.
#[derive(Clone, Debug, PartialEq)]
pub enum LatentState {
    None,
    /// A2: the `dT` field in global order.
    U(DVector<f64>),
    /// B: `Y₀, …, Y_T`.
    YScalar(DVector<f64>),
    /// C: `d × (T+1)`, column `t` is `Y_t`.
    YField(DMatrix<f64>),
}

/// One full parameter assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamState {
    pub beta: DVector<f64>,
    pub sigma2_eps: f64,
    pub corr: CorrParams,
    pub dynamics: Option<DynamicsParams>,
    pub latent: LatentState,
}

impl ParamState {
    pub fn sigma2_omega(&self) -> f64 {
        self.corr.sigma2_omega()
    }

    pub fn get(&self, id: ParamId) -> Option<f64> {
        let g = self.corr.as_gneiting().ok();
        match (id, &self.corr) {
            (ParamId::Sigma2Eps, _) => Some(self.sigma2_eps),
            (ParamId::Sigma2Omega, c) => Some(c.sigma2_omega()),
            (ParamId::Sigma2Eta, _) => self.dynamics.and_then(|d| d.sigma2_eta),
            (ParamId::Rho, _) => self.dynamics.map(|d| d.rho),
            (ParamId::Theta, CorrParams::Exp(p)) => Some(p.theta),
            (ParamId::Theta1, CorrParams::Separable(p)) => Some(p.theta1),
            (ParamId::Theta2, CorrParams::Separable(p)) => Some(p.theta2),
            (ParamId::A, _) => g.map(|p| p.a),
            (ParamId::C, _) => g.map(|p| p.c),
            (ParamId::Alpha, _) => g.map(|p| p.alpha),
            (ParamId::Gamma, _) => g.map(|p| p.gamma),
            (ParamId::B, _) => match g.map(|p| p.family) {
                Some(GneitingFamily::A31 { b }) => Some(b),
                _ => None,
            },
            (ParamId::Nu, _) => match g.map(|p| p.family) {
                Some(GneitingFamily::A32 { nu, .. }) => Some(nu),
                _ => None,
            },
            (ParamId::Tau, _) => match g.map(|p| p.family) {
                Some(GneitingFamily::A32 { tau, .. }) => Some(tau),
                _ => None,
            },
            _ => None,
        }
    }

    pub fn set(&mut self, id: ParamId, v: f64) -> Result<()> {
        let missing = || Error::Contract(format!("state has no parameter {id}"));
        match id {
            ParamId::Sigma2Eps => self.sigma2_eps = v,
            ParamId::Sigma2Omega => match &mut self.corr {
                CorrParams::Exp(p) => p.sigma2_omega = v,
                CorrParams::Separable(p) => p.sigma2_omega = v,
                CorrParams::Gneiting(p) => p.sigma2_omega = v,
            },
            ParamId::Sigma2Eta => match &mut self.dynamics {
                Some(DynamicsParams { sigma2_eta: Some(s), .. }) => *s = v,
                _ => return Err(missing()),
            },
            ParamId::Rho => self.dynamics.as_mut().ok_or_else(missing)?.rho = v,
            ParamId::Theta => match &mut self.corr {
                CorrParams::Exp(p) => p.theta = v,
                _ => return Err(missing()),
            },
            ParamId::Theta1 | ParamId::Theta2 => match &mut self.corr {
                CorrParams::Separable(p) if id == ParamId::Theta1 => p.theta1 = v,
                CorrParams::Separable(p) => p.theta2 = v,
                _ => return Err(missing()),
            },
            _ => {
                let CorrParams::Gneiting(p) = &mut self.corr else {
                    return Err(missing());
                };
                match (id, &mut p.family) {
                    (ParamId::A, _) => p.a = v,
                    (ParamId::C, _) => p.c = v,
                    (ParamId::Alpha, _) => p.alpha = v,
                    (ParamId::Gamma, _) => p.gamma = v,
                    (ParamId::B, GneitingFamily::A31 { b }) => *b = v,
                    (ParamId::Nu, GneitingFamily::A32 { nu, .. }) => *nu = v,
                    (ParamId::Tau, GneitingFamily::A32 { tau, .. }) => *tau = v,
                    _ => return Err(missing()),
                }
            }
        }
        Ok(())
    }

    /// Checks ranges and that the parameter blocks match `kind` and the data
    /// dimensions.
    pub fn validate(&self, kind: ModelKind, k: usize, d: usize, n_days: usize) -> Result<()> {
        if self.beta.len() != k {
            return Err(Error::DimensionMismatch(format!("beta has {} entries, expected {k}", self.beta.len())));
        }
        if !(self.sigma2_eps > 0.0) {
            return Err(Error::Domain(format!("sigma2_eps must be positive, got {}", self.sigma2_eps)));
        }
        match (kind, &self.corr) {
            (ModelKind::A1 | ModelKind::B | ModelKind::C, CorrParams::Exp(p)) => p.validate()?,
            (ModelKind::A2, CorrParams::Separable(p)) => p.validate()?,
            (ModelKind::A3_1, CorrParams::Gneiting(p)) if matches!(p.family, GneitingFamily::A31 { .. }) => p.validate()?,
            (ModelKind::A3_2, CorrParams::Gneiting(p)) if matches!(p.family, GneitingFamily::A32 { .. }) => p.validate()?,
            _ => return Err(Error::Contract(format!("correlation parameters do not fit model {kind}"))),
        }
        match (kind, &self.dynamics) {
            (ModelKind::B, Some(dy)) if dy.sigma2_eta.is_some() => dy.validate()?,
            (ModelKind::C, Some(dy)) if dy.sigma2_eta.is_none() => dy.validate()?,
            (ModelKind::B | ModelKind::C, _) => {
                return Err(Error::Contract(format!("dynamics do not fit model {kind}")))
            }
            (_, None) => {}
            (_, Some(_)) => return Err(Error::Contract(format!("model {kind} has no dynamics"))),
        }
        let ok = match (kind, &self.latent) {
            (ModelKind::A2, LatentState::U(u)) => u.len() == d * n_days,
            (ModelKind::B, LatentState::YScalar(y)) => y.len() == n_days + 1,
            (ModelKind::C, LatentState::YField(y)) => y.nrows() == d && y.ncols() == n_days + 1,
            (ModelKind::A1 | ModelKind::A3_1 | ModelKind::A3_2, LatentState::None) => true,
            _ => false,
        };
        if !ok {
            return Err(Error::Contract(format!("latent state does not fit model {kind}")));
        }
        Ok(())
    }
}

/// Prior hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSpec {
    pub beta_var: f64,
    pub ig_shape: f64,
    pub ig_scale: f64,
    pub theta_range: (f64, f64),
    pub theta1_range: (f64, f64),
    pub theta2_range: (f64, f64),
    /// Range shared by α, b, γ and τ.
    pub gneiting_unit_range: (f64, f64),
    /// Range shared by a, c and ν.
    pub gneiting_scale_range: (f64, f64),
    pub rho_range: (f64, f64),
    /// Variance of the initial state `Y₀` of Model B (fixed).
    pub sigma2_b: f64,
    /// Variance of each component of the initial state of Model C (fixed).
    pub sigma2_c: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            beta_var: 100.0,
            ig_shape: 2.0,
            ig_scale: 1.0,
            theta_range: (0.0, 1.0),
            theta1_range: (0.3, 3.0),
            theta2_range: (0.0, 1.0),
            gneiting_unit_range: (0.0, 1.0),
            gneiting_scale_range: (0.0, 10.0),
            rho_range: (-1.0, 1.0),
            sigma2_b: 1.0,
            sigma2_c: 1.0,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("beta_var", self.beta_var),
            ("ig_shape", self.ig_shape),
            ("ig_scale", self.ig_scale),
            ("sigma2_b", self.sigma2_b),
            ("sigma2_c", self.sigma2_c),
        ];
        for (n, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Schema(format!("prior {n} must be positive, got {v}")));
            }
        }
        let ranges = [
            ("theta_range", self.theta_range, 0.0),
            ("theta1_range", self.theta1_range, 0.0),
            ("theta2_range", self.theta2_range, 0.0),
            ("gneiting_unit_range", self.gneiting_unit_range, 0.0),
            ("gneiting_scale_range", self.gneiting_scale_range, 0.0),
            ("rho_range", self.rho_range, -1.0),
        ];
        for (n, (lo, hi), floor) in ranges {
            if !(lo < hi && lo >= floor && hi.is_finite()) {
                return Err(Error::Schema(format!("prior {n} = ({lo}, {hi}) is not a valid interval")));
            }
        }
        if self.rho_range.1 > 1.0 || self.gneiting_unit_range.1 > 1.0 {
            return Err(Error::Schema("rho and unit-interval ranges must stay within their domains".into()));
        }
        Ok(())
    }

    /// Uniform support of a bounded parameter; `None` for variances.
    pub fn bounds(&self, id: ParamId) -> Option<(f64, f64)> {
        match id {
            ParamId::Sigma2Eps | ParamId::Sigma2Omega | ParamId::Sigma2Eta => None,
            ParamId::Theta => Some(self.theta_range),
            ParamId::Theta1 => Some(self.theta1_range),
            ParamId::Theta2 => Some(self.theta2_range),
            ParamId::Alpha | ParamId::B | ParamId::Gamma | ParamId::Tau => Some(self.gneiting_unit_range),
            ParamId::A | ParamId::C | ParamId::Nu => Some(self.gneiting_scale_range),
            ParamId::Rho => Some(self.rho_range),
        }
    }

    /// Log density of IG(shape, scale) at `x`.
    pub fn ig_logpdf(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        let (a, b) = (self.ig_shape, self.ig_scale);
        a * b.ln() - ln_gamma(a) - (a + 1.0) * x.ln() - b / x
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixSize {
    /// `d × d`
    Sites,
    /// `T × T`
    Days,
    /// `dT × dT`
    SiteDays,
}

impl MatrixSize {
    pub fn label(self) -> &'static str {
        match self {
            MatrixSize::Sites => "d x d",
            MatrixSize::Days => "T x T",
            MatrixSize::SiteDays => "dT x dT",
        }
    }
}

/// Structural description of a model's sampler.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelMeta {
    pub kind: ModelKind,
    pub n_params_excl_beta: usize,
    pub n_mh_params: usize,
    pub biggest_matrix: MatrixSize,
    pub needs_ffbs: bool,
    pub needs_enbloc: bool,
    /// Non-β parameters updated from conjugate full conditionals.
    pub gibbs: &'static [ParamId],
    /// Parameters updated by random-walk Metropolis.
    pub mh: &'static [ParamId],
}

pub fn model_meta(kind: ModelKind) -> ModelMeta {
    use ParamId::*;
    let (gibbs, mh, biggest, ffbs, enbloc): (&'static [ParamId], &'static [ParamId], _, _, _) = match kind {
        ModelKind::A1 => (&[], &[Sigma2Eps, Sigma2Omega, Theta], MatrixSize::Sites, false, false),
        ModelKind::A2 => (&[Sigma2Omega, Sigma2Eps], &[Theta1, Theta2], MatrixSize::Days, false, true),
        ModelKind::A3_1 => (&[], &[Sigma2Eps, Sigma2Omega, A, Alpha, B, C, Gamma], MatrixSize::SiteDays, false, false),
        ModelKind::A3_2 => (&[], &[Sigma2Eps, Sigma2Omega, A, Alpha, C, Gamma, Nu, Tau], MatrixSize::SiteDays, false, false),
        ModelKind::B => (&[Sigma2Eta], &[Sigma2Eps, Sigma2Omega, Theta, Rho], MatrixSize::Sites, true, false),
        ModelKind::C => (&[Sigma2Omega, Sigma2Eps], &[Theta, Rho], MatrixSize::Sites, true, false),
    };
    ModelMeta {
        kind,
        n_params_excl_beta: kind.param_ids().len(),
        n_mh_params: mh.len(),
        biggest_matrix: biggest,
        needs_ffbs: ffbs,
        needs_enbloc: enbloc,
        gibbs,
        mh,
    }
}

/// Sum of the prior log densities of β and every non-β parameter of
/// `kind`. Returns −∞ outside the supports.
pub fn log_prior(kind: ModelKind, prior: &PriorSpec, psi: &ParamState) -> f64 {
    let v = prior.beta_var;
    let mut lp: f64 = psi
        .beta
        .iter()
        .map(|b| -0.5 * (LN_2PI + v.ln() + b * b / v))
        .sum();
    for &id in kind.param_ids() {
        lp += param_log_prior(prior, id, psi.get(id).unwrap_or(f64::NAN));
    }
    lp
}

/// Prior log density of one non-β parameter.
pub fn param_log_prior(prior: &PriorSpec, id: ParamId, x: f64) -> f64 {
    match prior.bounds(id) {
        None => prior.ig_logpdf(x),
        Some((lo, hi)) if x > lo && x < hi => -(hi - lo).ln(),
        Some((lo, hi)) if id == ParamId::Tau && x == lo && lo == 0.0 && hi > 0.0 => -(hi - lo).ln(),
        Some(_) => f64::NEG_INFINITY,
    }
}

/// Cells sharing a set of observed sites.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MissingPattern {
    pub sites: Vec<usize>,
    pub days: Vec<usize>,
}

/// Observations and covariates of one pattern, one column (or block of
/// `k` columns) per day in `days` order.
#[derive(Clone, Debug)]
pub(crate) struct PatternBlock {
    /// `|sites| × |days|`.
    pub z: DMatrix<f64>,
    /// `|sites| × k|days|`; day `j` occupies columns `jk..(j+1)k`.
    pub x: DMatrix<f64>,
}

impl PatternBlock {
    fn new(ds: &Dataset, p: &MissingPattern) -> Self {
        let k = ds.n_covariates();
        PatternBlock {
            z: DMatrix::from_fn(p.sites.len(), p.days.len(), |r, j| ds.z(p.sites[r], p.days[j]).unwrap()),
            x: DMatrix::from_fn(p.sites.len(), k * p.days.len(), |r, c| ds.x(p.sites[r], p.days[c / k])[c % k]),
        }
    }

    /// `Z − Xβ − 1yᵀ` with `y` indexed by day (offset by one for `Y₀`).
    pub fn residuals(&self, p: &MissingPattern, beta: &DVector<f64>, shift: Option<&DVector<f64>>) -> DMatrix<f64> {
        let k = beta.len();
        let mut r = self.z.clone();
        for (j, &t) in p.days.iter().enumerate() {
            let mut col = r.column_mut(j);
            col -= self.x.columns(j * k, k) * beta;
            if let Some(y) = shift {
                col.add_scalar_mut(-y[t + 1]);
            }
        }
        r
    }
}

/// A dataset together with the quantities every kernel reuses.
#[derive(Clone, Debug)]
pub struct ModelData {
    pub ds: Dataset,
    /// Inter-site distances (km).
    pub h: DMatrix<f64>,
    /// Observed site indices per day.
    pub day_obs: Vec<Vec<usize>>,
    pub patterns: Vec<MissingPattern>,
    /// Observed cells in global order.
    pub obs_cells: Vec<usize>,
    pub max_jitter: f64,
    /// Largest dense matrix dimension the nonseparable kernels may build.
    pub max_dense_dim: usize,
    pub(crate) blocks: Vec<PatternBlock>,
}

/// Default dense-dimension budget.
pub const DEFAULT_MAX_DENSE_DIM: usize = 4000;

impl ModelData {
    pub fn new(ds: &Dataset) -> Self {
        let d = ds.n_sites();
        let day_obs: Vec<Vec<usize>> = (0..ds.n_days())
            .map(|t| (0..d).filter(|&i| ds.z(i, t).is_some()).collect())
            .collect();
        let mut patterns: Vec<MissingPattern> = Vec::new();
        for (t, sites) in day_obs.iter().enumerate() {
            if sites.is_empty() {
                continue;
            }
            match patterns.iter_mut().find(|p| &p.sites == sites) {
                Some(p) => p.days.push(t),
                None => patterns.push(MissingPattern { sites: sites.clone(), days: vec![t] }),
            }
        }
        let obs_cells = (0..ds.z_cells().len()).filter(|&c| ds.z_cells()[c].is_some()).collect();
        let blocks = patterns.iter().map(|p| PatternBlock::new(ds, p)).collect();
        ModelData {
            ds: ds.clone(),
            h: spatial_distance_matrix(ds.sites()),
            day_obs,
            patterns,
            obs_cells,
            max_jitter: DEFAULT_MAX_JITTER,
            max_dense_dim: DEFAULT_MAX_DENSE_DIM,
            blocks,
        }
    }

    pub fn d(&self) -> usize {
        self.ds.n_sites()
    }

    pub fn n_days(&self) -> usize {
        self.ds.n_days()
    }

    pub fn k(&self) -> usize {
        self.ds.n_covariates()
    }

    /// `x(i,t)ᵀ β`.
    pub fn trend(&self, i: usize, t: usize, beta: &DVector<f64>) -> f64 {
        self.ds.x(i, t).iter().zip(beta.iter()).map(|(a, b)| a * b).sum()
    }

    /// Trend over all `dT` cells in global order.
    pub fn trend_all(&self, beta: &DVector<f64>) -> DVector<f64> {
        let d = self.d();
        DVector::from_fn(d * self.n_days(), |c, _| self.trend(c % d, c / d, beta))
    }

    /// Observed values of day `t`, in `day_obs[t]` order.
    pub fn z_day(&self, t: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.day_obs[t].len(),
            self.day_obs[t].iter().map(|&i| self.ds.z(i, t).unwrap()),
        )
    }

    /// Rows of `X_t` for the observed sites of day `t`.
    pub fn x_day(&self, t: usize) -> DMatrix<f64> {
        let sites = &self.day_obs[t];
        let k = self.k();
        DMatrix::from_fn(sites.len(), k, |r, c| self.ds.x(sites[r], t)[c])
    }

    /// Sub-matrix on the given indices.
    pub fn sub(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
    }

    /// `σ²_ω exp(−θH) + σ²_ε I` on the full network.
    pub fn spatial_cov(&self, e: &ExpSpatialParams, sigma2_eps: f64) -> Result<DMatrix<f64>> {
        let mut s = spatial_corr_matrix(e.theta, &self.h)? * e.sigma2_omega;
        for i in 0..self.d() {
            s[(i, i)] += sigma2_eps;
        }
        Ok(s)
    }

    /// Factor of `Σ_{ω+ε}` restricted to every missingness pattern.
    pub fn pattern_factors(&self, full: &DMatrix<f64>) -> Result<Vec<CholeskyFactor>> {
        self.patterns
            .iter()
            .map(|p| chol_psd(&Self::sub(full, &p.sites), self.max_jitter))
            .collect()
    }

    /// Dense `σ²_ω C + σ²_ε I` of the nonseparable models on observed cells.
    pub fn gneiting_obs_cov(&self, g: &GneitingParams, sigma2_eps: f64) -> Result<DMatrix<f64>> {
        let c = nonseparable_corr_matrix(g, &self.h, self.n_days(), self.max_dense_dim)?;
        let n = self.obs_cells.len();
        let mut s = DMatrix::from_fn(n, n, |r, q| g.sigma2_omega * c[(self.obs_cells[r], self.obs_cells[q])]);
        for r in 0..n {
            s[(r, r)] += sigma2_eps;
        }
        Ok(s)
    }
}

/// Gaussian marginal log-likelihood of the models without latent states
/// (A1, A3-1, A3-2). Missing cells are dropped from the joint.
pub fn marginal_loglik(kind: ModelKind, psi: &ParamState, md: &ModelData) -> Result<f64> {
    match kind {
        ModelKind::A1 => {
            let e = psi.corr.as_exp()?;
            let full = md.spatial_cov(e, psi.sigma2_eps)?;
            let factors = md.pattern_factors(&full)?;
            daywise_loglik(md, &psi.beta, &factors, None)
        }
        ModelKind::A3_1 | ModelKind::A3_2 => {
            let g = psi.corr.as_gneiting()?;
            let s = md.gneiting_obs_cov(g, psi.sigma2_eps)?;
            let f = chol_psd(&s, md.max_jitter)?;
            let mean = md.trend_all(&psi.beta);
            let z = DVector::from_iterator(
                md.obs_cells.len(),
                md.obs_cells.iter().map(|&c| md.ds.z_cells()[c].unwrap()),
            );
            let mu = DVector::from_iterator(md.obs_cells.len(), md.obs_cells.iter().map(|&c| mean[c]));
            mvn_logpdf(&z, &mu, &f)
        }
        _ => Err(Error::Contract(format!("model {kind} has no marginal likelihood; use conditional_loglik"))),
    }
}

/// Σ_t log N(Z_t | X_t β + shift_t 1, Σ) with one factor per missingness
/// pattern.
pub(crate) fn daywise_loglik(
    md: &ModelData,
    beta: &DVector<f64>,
    factors: &[CholeskyFactor],
    shift: Option<&DVector<f64>>,
) -> Result<f64> {
    Ok(daywise_loglik_resid(md, &pattern_residuals(md, beta, shift), factors))
}

/// Residual matrices of every pattern, see [`PatternBlock::residuals`].
pub(crate) fn pattern_residuals(md: &ModelData, beta: &DVector<f64>, shift: Option<&DVector<f64>>) -> Vec<DMatrix<f64>> {
    md.patterns.iter().zip(&md.blocks).map(|(p, b)| b.residuals(p, beta, shift)).collect()
}

pub(crate) fn daywise_loglik_resid(md: &ModelData, resid: &[DMatrix<f64>], factors: &[CholeskyFactor]) -> f64 {
    let mut ll = 0.0;
    for ((p, r), f) in md.patterns.iter().zip(resid).zip(factors) {
        let n = (p.sites.len() * p.days.len()) as f64;
        ll -= 0.5 * (n * LN_2PI + p.days.len() as f64 * f.logdet() + f.whiten_mat(r).norm_squared());
    }
    ll
}

/// Observation part of the Model B joint: Σ_t log N(Z_t | X_tβ + Y_t 1, Σ_{ω+ε}).
pub fn obs_loglik_b(psi: &ParamState, md: &ModelData) -> Result<f64> {
    let LatentState::YScalar(y) = &psi.latent else {
        return Err(Error::Contract("Model B needs the scalar latent path".into()));
    };
    let full = md.spatial_cov(psi.corr.as_exp()?, psi.sigma2_eps)?;
    daywise_loglik(md, &psi.beta, &md.pattern_factors(&full)?, Some(y))
}

/// Latent part of the Model B joint: Y₀ prior plus the AR(1) transitions.
pub fn latent_loglik_b(psi: &ParamState, prior: &PriorSpec) -> Result<f64> {
    let LatentState::YScalar(y) = &psi.latent else {
        return Err(Error::Contract("Model B needs the scalar latent path".into()));
    };
    let dy = psi.dynamics.ok_or_else(|| Error::Contract("Model B needs dynamics".into()))?;
    let s2 = dy.sigma2_eta.ok_or_else(|| Error::Contract("Model B needs sigma2_eta".into()))?;
    let mut ll = norm_logpdf(y[0], 0.0, prior.sigma2_b);
    for t in 1..y.len() {
        ll += norm_logpdf(y[t], dy.rho * y[t - 1], s2);
    }
    Ok(ll)
}

/// Observation part of the Model C joint: independent N(x β + Y, σ²_ε) cells.
pub fn obs_loglik_c(psi: &ParamState, md: &ModelData) -> Result<f64> {
    let LatentState::YField(y) = &psi.latent else {
        return Err(Error::Contract("Model C needs the latent field".into()));
    };
    let mut ll = 0.0;
    for (t, sites) in md.day_obs.iter().enumerate() {
        for &i in sites {
            ll += norm_logpdf(md.ds.z(i, t).unwrap(), md.trend(i, t, &psi.beta) + y[(i, t + 1)], psi.sigma2_eps);
        }
    }
    Ok(ll)
}

/// Latent part of the Model C joint: N(0, σ²_C I) for Y₀ and
/// N(ρ Y_{t−1}, σ²_ω C_θ) transitions.
pub fn latent_loglik_c(psi: &ParamState, md: &ModelData, prior: &PriorSpec) -> Result<f64> {
    let LatentState::YField(y) = &psi.latent else {
        return Err(Error::Contract("Model C needs the latent field".into()));
    };
    let dy = psi.dynamics.ok_or_else(|| Error::Contract("Model C needs dynamics".into()))?;
    let e = psi.corr.as_exp()?;
    let w = chol_psd(&(spatial_corr_matrix(e.theta, &md.h)? * e.sigma2_omega), md.max_jitter)?;
    let d = md.d();
    let mut ll: f64 = y.column(0).iter().map(|v| norm_logpdf(*v, 0.0, prior.sigma2_c)).sum();
    let base = -0.5 * (d as f64 * LN_2PI + w.logdet());
    for t in 1..y.ncols() {
        let r = y.column(t) - y.column(t - 1) * dy.rho;
        ll += base - 0.5 * w.quad_form(&r);
    }
    Ok(ll)
}

/// Observation part of the Model A2 joint: N(z | u, σ²_ε) over observed cells.
pub fn obs_loglik_a2(psi: &ParamState, md: &ModelData) -> Result<f64> {
    let LatentState::U(u) = &psi.latent else {
        return Err(Error::Contract("Model A2 needs the latent field".into()));
    };
    Ok(md
        .obs_cells
        .iter()
        .map(|&c| norm_logpdf(md.ds.z_cells()[c].unwrap(), u[c], psi.sigma2_eps))
        .sum())
}

/// Latent part of the Model A2 joint: N(U | Xβ, σ²_ω C_θ1 ⊗ C_θ2).
pub fn latent_loglik_a2(psi: &ParamState, md: &ModelData) -> Result<f64> {
    let LatentState::U(u) = &psi.latent else {
        return Err(Error::Contract("Model A2 needs the latent field".into()));
    };
    let p = psi.corr.as_separable()?;
    let kf = separable_corr_matrix(p, &md.h, md.n_days())?.factor(md.max_jitter)?;
    let r = u - md.trend_all(&psi.beta);
    let n = r.len() as f64;
    let q = r.dot(&kf.solve(&r)?);
    Ok(-0.5 * (n * LN_2PI + n * p.sigma2_omega.ln() + kf.logdet() + q / p.sigma2_omega))
}

/// Joint log density of the data and the latent states given the parameters
/// (A2, B, C).
pub fn conditional_loglik(kind: ModelKind, psi: &ParamState, md: &ModelData, prior: &PriorSpec) -> Result<f64> {
    match kind {
        ModelKind::A2 => Ok(obs_loglik_a2(psi, md)? + latent_loglik_a2(psi, md)?),
        ModelKind::B => Ok(obs_loglik_b(psi, md)? + latent_loglik_b(psi, prior)?),
        ModelKind::C => Ok(obs_loglik_c(psi, md)? + latent_loglik_c(psi, md, prior)?),
        _ => Err(Error::Contract(format!("model {kind} has no latent state; use marginal_loglik"))),
    }
}

pub(crate) fn norm_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean) * (x - mean) / var)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dataset::{Scale, Site, INTERCEPT};
    use crate::gaussmath::mvn_logpdf;
    use approx::assert_abs_diff_eq;

    pub(crate) fn toy_data(d: usize, t: usize, missing: &[usize]) -> ModelData {
        let sites = (0..d).map(|i| Site::new(format!("s{i}"), 3.0 * i as f64, (i * i) as f64, 0.0)).collect();
        let mut x = Vec::new();
        let mut z = Vec::new();
        for tt in 0..t {
            for i in 0..d {
                x.extend_from_slice(&[1.0, ((i + 2 * tt) as f64).sin()]);
                let c = tt * d + i;
                z.push(if missing.contains(&c) { None } else { Some(((c * 7 % 5) as f64) * 0.3 - 0.4) });
            }
        }
        let ds = Dataset::new(sites, t, vec![INTERCEPT.into(), "w".into()], x, z, Scale::Log).unwrap();
        ModelData::new(&ds)
    }

    fn exp_state(theta: f64) -> ParamState {
        ParamState {
            beta: DVector::from_vec(vec![0.2, -0.3]),
            sigma2_eps: 0.4,
            corr: CorrParams::Exp(ExpSpatialParams { theta, sigma2_omega: 0.9 }),
            dynamics: None,
            latent: LatentState::None,
        }
    }

    #[test]
    fn table_seven_structure() {
        let rows: Vec<(usize, usize, MatrixSize)> = ModelKind::ALL
            .iter()
            .map(|&k| {
                let m = model_meta(k);
                (m.n_params_excl_beta, m.n_mh_params, m.biggest_matrix)
            })
            .collect();
        use MatrixSize::*;
        assert_eq!(
            rows,
            vec![(3, 3, Sites), (4, 2, Days), (7, 7, SiteDays), (8, 8, SiteDays), (5, 4, Sites), (4, 2, Sites)]
        );
        for k in ModelKind::ALL {
            let m = model_meta(k);
            assert_eq!(m.gibbs.len() + m.mh.len(), m.n_params_excl_beta);
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("A4".parse::<ModelKind>().is_err());
    }

    #[test]
    fn prior_values() {
        let p = PriorSpec::default();
        assert_eq!(param_log_prior(&p, ParamId::Theta, 0.5), 0.0);
        assert_eq!(param_log_prior(&p, ParamId::Theta, 1.5), f64::NEG_INFINITY);
        assert_abs_diff_eq!(param_log_prior(&p, ParamId::Sigma2Eps, 1.0), -1.0, epsilon = 1e-15);
        assert_eq!(param_log_prior(&p, ParamId::Sigma2Eps, -1.0), f64::NEG_INFINITY);
        assert_abs_diff_eq!(param_log_prior(&p, ParamId::Theta1, 1.0), -(2.7f64).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(param_log_prior(&p, ParamId::Rho, 0.2), -(2f64).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(param_log_prior(&p, ParamId::Nu, 3.0), -(10f64).ln(), epsilon = 1e-15);
        let lp = log_prior(ModelKind::A1, &p, &exp_state(0.5));
        assert!(lp.is_finite());
        assert_eq!(log_prior(ModelKind::A1, &p, &exp_state(1.5)), f64::NEG_INFINITY);
    }

    #[test]
    fn get_set_round_trip() {
        let mut s = ParamState {
            beta: DVector::zeros(1),
            sigma2_eps: 1.0,
            corr: CorrParams::Gneiting(GneitingParams {
                a: 1.0,
                c: 1.0,
                alpha: 0.5,
                gamma: 0.5,
                family: GneitingFamily::A32 { nu: 1.0, tau: 0.5 },
                sigma2_omega: 1.0,
            }),
            dynamics: None,
            latent: LatentState::None,
        };
        for (i, &id) in ModelKind::A3_2.param_ids().iter().enumerate() {
            let v = 0.1 + 0.05 * i as f64;
            s.set(id, v).unwrap();
            assert_eq!(s.get(id), Some(v));
        }
        assert!(s.set(ParamId::B, 0.3).is_err());
        assert_eq!(s.get(ParamId::Theta), None);
        s.validate(ModelKind::A3_2, 1, 1, 1).unwrap();
        assert!(s.validate(ModelKind::A3_1, 1, 1, 1).is_err());
    }

    #[test]
    fn scalar_marginal() {
        let sites = vec![Site::new("a", 0.0, 0.0, 0.0)];
        let ds = Dataset::new(sites, 1, vec![INTERCEPT.into()], vec![1.0], vec![Some(0.0)], Scale::Log).unwrap();
        let md = ModelData::new(&ds);
        let psi = ParamState {
            beta: DVector::zeros(1),
            sigma2_eps: 0.25,
            corr: CorrParams::Exp(ExpSpatialParams { theta: 0.1, sigma2_omega: 0.75 }),
            dynamics: None,
            latent: LatentState::None,
        };
        assert_abs_diff_eq!(marginal_loglik(ModelKind::A1, &psi, &md).unwrap(), -0.5 * LN_2PI, epsilon = 1e-15);
    }

    #[test]
    fn a1_independent_limit() {
        let md = toy_data(3, 4, &[2, 7]);
        let psi = exp_state(1e6);
        let ll = marginal_loglik(ModelKind::A1, &psi, &md).unwrap();
        let var = psi.sigma2_eps + psi.sigma2_omega();
        let want: f64 = md
            .obs_cells
            .iter()
            .map(|&c| norm_logpdf(md.ds.z_cells()[c].unwrap(), md.trend(c % 3, c / 3, &psi.beta), var))
            .sum();
        assert_abs_diff_eq!(ll, want, epsilon = 1e-10);
    }

    #[test]
    fn a3_matches_dense_bruteforce() {
        let md = toy_data(2, 2, &[]);
        let g = GneitingParams {
            a: 0.5,
            c: 0.3,
            alpha: 0.7,
            gamma: 0.4,
            family: GneitingFamily::A31 { b: 0.6 },
            sigma2_omega: 1.3,
        };
        let psi = ParamState {
            beta: DVector::from_vec(vec![0.1, 0.2]),
            sigma2_eps: 0.2,
            corr: CorrParams::Gneiting(g),
            dynamics: None,
            latent: LatentState::None,
        };
        let mut s = DMatrix::zeros(4, 4);
        let coords = |c: usize| (c % 2, c / 2);
        for r in 0..4 {
            for q in 0..4 {
                let ((i, t), (j, u)) = (coords(r), coords(q));
                s[(r, q)] = 1.3 * crate::covariance::gneiting_corr(&g, md.h[(i, j)], (t as f64 - u as f64).abs()).unwrap();
            }
            s[(r, r)] += 0.2;
        }
        let z = DVector::from_fn(4, |c, _| md.ds.z_cells()[c].unwrap());
        let mu = md.trend_all(&psi.beta);
        let want = mvn_logpdf(&z, &mu, &chol_psd(&s, 0.0).unwrap()).unwrap();
        assert_abs_diff_eq!(marginal_loglik(ModelKind::A3_1, &psi, &md).unwrap(), want, epsilon = 1e-10);
    }

    #[test]
    fn a1_invariant_to_day_permutation() {
        let md = toy_data(3, 4, &[]);
        let psi = exp_state(0.2);
        let ll = marginal_loglik(ModelKind::A1, &psi, &md).unwrap();
        // Reverse the days.
        let ds = &md.ds;
        let (d, t, k) = (3, 4, 2);
        let mut x = Vec::new();
        let mut z = Vec::new();
        for tt in (0..t).rev() {
            for i in 0..d {
                x.extend_from_slice(ds.x(i, tt));
                z.push(ds.z(i, tt));
            }
        }
        assert_eq!(x.len(), d * t * k);
        let rev = Dataset::new(ds.sites().to_vec(), t, ds.covariate_names().to_vec(), x, z, Scale::Log).unwrap();
        let ll2 = marginal_loglik(ModelKind::A1, &psi, &ModelData::new(&rev)).unwrap();
        assert_abs_diff_eq!(ll, ll2, epsilon = 1e-10);
    }

    #[test]
    fn b_degenerate_latent_matches_a1() {
        let md = toy_data(3, 3, &[4]);
        let mut psi = exp_state(0.3);
        let a1 = marginal_loglik(ModelKind::A1, &psi, &md).unwrap();
        psi.dynamics = Some(DynamicsParams { rho: 0.0, sigma2_eta: Some(1e-8) });
        psi.latent = LatentState::YScalar(DVector::zeros(4));
        let prior = PriorSpec::default();
        let b = conditional_loglik(ModelKind::B, &psi, &md, &prior).unwrap();
        let latent = latent_loglik_b(&psi, &prior).unwrap();
        assert_abs_diff_eq!(b - latent, a1, epsilon = 1e-10);
    }

    #[test]
    fn c_transition_unrolled() {
        let md = toy_data(2, 1, &[]);
        let psi = ParamState {
            beta: DVector::zeros(2),
            sigma2_eps: 0.3,
            corr: CorrParams::Exp(ExpSpatialParams { theta: 0.2, sigma2_omega: 0.7 }),
            dynamics: Some(DynamicsParams { rho: 0.6, sigma2_eta: None }),
            latent: LatentState::YField(DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.4])),
        };
        let prior = PriorSpec::default();
        let w = spatial_corr_matrix(0.2, &md.h).unwrap() * 0.7;
        let y0 = DVector::from_vec(vec![0.5, -0.2]);
        let y1 = DVector::from_vec(vec![0.1, 0.4]);
        let trans = mvn_logpdf(&y1, &(&y0 * 0.6), &chol_psd(&w, 0.0).unwrap()).unwrap();
        let init = norm_logpdf(0.5, 0.0, 1.0) + norm_logpdf(-0.2, 0.0, 1.0);
        assert_abs_diff_eq!(latent_loglik_c(&psi, &md, &prior).unwrap(), init + trans, epsilon = 1e-12);
    }

    #[test]
    fn a2_matches_dense_bruteforce() {
        let md = toy_data(2, 2, &[1]);
        let p = SeparableParams { theta1: 0.7, theta2: 0.2, sigma2_omega: 0.8 };
        let u = DVector::from_vec(vec![0.3, -0.1, 0.5, 0.2]);
        let psi = ParamState {
            beta: DVector::from_vec(vec![0.1, -0.2]),
            sigma2_eps: 0.3,
            corr: CorrParams::Separable(p),
            dynamics: None,
            latent: LatentState::U(u.clone()),
        };
        let dense = separable_corr_matrix(&p, &md.h, 2).unwrap().to_dense() * 0.8;
        let prior_part = mvn_logpdf(&u, &md.trend_all(&psi.beta), &chol_psd(&dense, 0.0).unwrap()).unwrap();
        let obs: f64 = [0usize, 2, 3]
            .iter()
            .map(|&c| norm_logpdf(md.ds.z_cells()[c].unwrap(), u[c], 0.3))
            .sum();
        let got = conditional_loglik(ModelKind::A2, &psi, &md, &PriorSpec::default()).unwrap();
        assert_abs_diff_eq!(got, prior_part + obs, epsilon = 1e-10);
    }

    #[test]
    fn patterns_group_days() {
        let md = toy_data(3, 4, &[1, 4, 11]);
        assert_eq!(md.patterns.len(), 3);
        let total: usize = md.patterns.iter().map(|p| p.days.len()).sum();
        assert_eq!(total, 4);
        assert_eq!(md.obs_cells.len(), 9);
    }
}
