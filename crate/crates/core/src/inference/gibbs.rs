//! Conjugate full conditionals: β and the variance parameters that keep an
//! inverse-gamma conditional.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::covariance::separable_corr_matrix;
use crate::error::{Error, Result};
use crate::gaussmath::{chol_psd, std_normal_vec, CholeskyFactor, KroneckerFactor};
use crate::models::{LatentState, ModelData, ModelKind, ParamId, ParamState, PriorSpec};

/// Accumulated `Xᵀ Σ⁻¹ X` and `Xᵀ Σ⁻¹ r`.
#[derive(Clone, Debug)]
pub(crate) struct GlsTerms {
    pub xtx: DMatrix<f64>,
    pub xtr: DVector<f64>,
}

impl GlsTerms {
    fn new(k: usize) -> Self {
        GlsTerms { xtx: DMatrix::zeros(k, k), xtr: DVector::zeros(k) }
    }

    fn add(&mut self, f: &CholeskyFactor, x: &DMatrix<f64>, r: &DVector<f64>) {
        let sx = f.solve_mat(x);
        self.xtx += x.transpose() * &sx;
        self.xtr += sx.transpose() * r;
    }
}

/// Day-by-day terms for A1 and B, one factor per missingness pattern.
/// `shift` holds `Y₀…Y_T` for Model B.
pub(crate) fn gls_daywise(md: &ModelData, factors: &[CholeskyFactor], shift: Option<&DVector<f64>>) -> GlsTerms {
    let k = md.k();
    let mut g = GlsTerms::new(k);
    let zero = DVector::zeros(k);
    for ((p, b), f) in md.patterns.iter().zip(&md.blocks).zip(factors) {
        let wx = f.whiten_mat(&b.x);
        let wr = f.whiten_mat(&b.residuals(p, &zero, shift));
        // Stack the whitened day blocks so one product covers every day.
        let n = p.sites.len();
        let y = DMatrix::from_fn(n * p.days.len(), k, |row, c| wx[(row % n, (row / n) * k + c)]);
        g.xtx += y.tr_mul(&y);
        g.xtr += y.tr_mul(&DVector::from_column_slice(wr.as_slice()));
    }
    g
}

/// Observed-cell design matrix and response in global order.
pub(crate) fn obs_design(md: &ModelData) -> (DMatrix<f64>, DVector<f64>) {
    let k = md.k();
    let d = md.d();
    let n = md.obs_cells.len();
    let x = DMatrix::from_fn(n, k, |r, c| {
        let cell = md.obs_cells[r];
        md.ds.x(cell % d, cell / d)[c]
    });
    let z = DVector::from_iterator(n, md.obs_cells.iter().map(|&c| md.ds.z_cells()[c].unwrap()));
    (x, z)
}

pub(crate) fn gls_dense(md: &ModelData, f: &CholeskyFactor) -> GlsTerms {
    let (x, z) = obs_design(md);
    let mut g = GlsTerms::new(md.k());
    g.add(f, &x, &z);
    g
}

pub(crate) fn gls_kron(md: &ModelData, kf: &KroneckerFactor, u: &DVector<f64>, sigma2_omega: f64) -> Result<GlsTerms> {
    let x = md.ds.design_matrix();
    let k = md.k();
    let mut sx = DMatrix::zeros(x.nrows(), k);
    for c in 0..k {
        sx.set_column(c, &kf.solve(&x.column(c).clone_owned())?);
    }
    Ok(GlsTerms {
        xtx: x.transpose() * &sx / sigma2_omega,
        xtr: sx.transpose() * u / sigma2_omega,
    })
}

pub(crate) fn gls_independent(md: &ModelData, y: &DMatrix<f64>, sigma2_eps: f64) -> GlsTerms {
    let (x, z) = obs_design(md);
    let d = md.d();
    let r = DVector::from_iterator(
        z.len(),
        md.obs_cells.iter().zip(z.iter()).map(|(&c, v)| v - y[(c % d, c / d + 1)]),
    );
    GlsTerms {
        xtx: x.transpose() * &x / sigma2_eps,
        xtr: x.transpose() * r / sigma2_eps,
    }
}

/// Precision-form posterior of β from accumulated GLS terms.
pub(crate) fn beta_posterior(g: &GlsTerms, prior: &PriorSpec, max_jitter: f64) -> Result<(DVector<f64>, CholeskyFactor)> {
    let k = g.xtr.len();
    let prec = &g.xtx + DMatrix::identity(k, k) / prior.beta_var;
    let f = chol_psd(&prec, max_jitter)?;
    let mean = f.solve(&g.xtr);
    Ok((mean, f))
}

pub(crate) fn draw_beta<R: Rng + ?Sized>(mean: &DVector<f64>, prec: &CholeskyFactor, rng: &mut R) -> DVector<f64> {
    let mut xi = std_normal_vec(mean.len(), rng);
    prec.l().tr_solve_lower_triangular_unchecked_mut(&mut xi);
    mean + xi
}

fn gls_terms(kind: ModelKind, psi: &ParamState, md: &ModelData) -> Result<GlsTerms> {
    match kind {
        ModelKind::A1 => {
            let full = md.spatial_cov(psi.corr.as_exp()?, psi.sigma2_eps)?;
            Ok(gls_daywise(md, &md.pattern_factors(&full)?, None))
        }
        ModelKind::B => {
            let LatentState::YScalar(y) = &psi.latent else {
                return Err(Error::Contract("Model B needs the scalar latent path".into()));
            };
            let full = md.spatial_cov(psi.corr.as_exp()?, psi.sigma2_eps)?;
            Ok(gls_daywise(md, &md.pattern_factors(&full)?, Some(y)))
        }
        ModelKind::A3_1 | ModelKind::A3_2 => {
            let s = md.gneiting_obs_cov(psi.corr.as_gneiting()?, psi.sigma2_eps)?;
            Ok(gls_dense(md, &chol_psd(&s, md.max_jitter)?))
        }
        ModelKind::A2 => {
            let LatentState::U(u) = &psi.latent else {
                return Err(Error::Contract("Model A2 needs the latent field".into()));
            };
            let p = psi.corr.as_separable()?;
            let kf = separable_corr_matrix(p, &md.h, md.n_days())?.factor(md.max_jitter)?;
            gls_kron(md, &kf, u, p.sigma2_omega)
        }
        ModelKind::C => {
            let LatentState::YField(y) = &psi.latent else {
                return Err(Error::Contract("Model C needs the latent field".into()));
            };
            Ok(gls_independent(md, y, psi.sigma2_eps))
        }
    }
}

/// Mean and covariance of the Gaussian full conditional of β.
pub fn beta_conditional(
    kind: ModelKind,
    psi: &ParamState,
    md: &ModelData,
    prior: &PriorSpec,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (mean, f) = beta_posterior(&gls_terms(kind, psi, md)?, prior, md.max_jitter)?;
    Ok((mean, f.inverse()))
}

/// One draw from the full conditional of β.
pub fn beta_update<R: Rng + ?Sized>(
    kind: ModelKind,
    psi: &ParamState,
    md: &ModelData,
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let (mean, f) = beta_posterior(&gls_terms(kind, psi, md)?, prior, md.max_jitter)?;
    Ok(draw_beta(&mean, &f, rng))
}

/// Shape and scale of the inverse-gamma full conditional of a variance.
///
/// Only the pairs with a conjugate conditional are accepted: σ²_ω and σ²_ε
/// for A2 and C, σ²_η for B.
pub fn variance_conditional(
    kind: ModelKind,
    which: ParamId,
    psi: &ParamState,
    md: &ModelData,
    prior: &PriorSpec,
) -> Result<(f64, f64)> {
    let (a, b) = (prior.ig_shape, prior.ig_scale);
    let d = md.d();
    let n_obs = md.obs_cells.len() as f64;
    match (kind, which, &psi.latent) {
        (ModelKind::A2, ParamId::Sigma2Omega, LatentState::U(u)) => {
            let p = psi.corr.as_separable()?;
            let kf = separable_corr_matrix(p, &md.h, md.n_days())?.factor(md.max_jitter)?;
            let r = u - md.trend_all(&psi.beta);
            let q = r.dot(&kf.solve(&r)?);
            Ok((a + r.len() as f64 / 2.0, b + 0.5 * q))
        }
        (ModelKind::A2, ParamId::Sigma2Eps, LatentState::U(u)) => {
            let ss: f64 = md
                .obs_cells
                .iter()
                .map(|&c| (md.ds.z_cells()[c].unwrap() - u[c]).powi(2))
                .sum();
            Ok((a + n_obs / 2.0, b + 0.5 * ss))
        }
        (ModelKind::B, ParamId::Sigma2Eta, LatentState::YScalar(y)) => {
            let rho = psi.dynamics.ok_or_else(|| Error::Contract("Model B needs dynamics".into()))?.rho;
            let ss: f64 = (1..y.len()).map(|t| (y[t] - rho * y[t - 1]).powi(2)).sum();
            Ok((a + (y.len() - 1) as f64 / 2.0, b + 0.5 * ss))
        }
        (ModelKind::C, ParamId::Sigma2Omega, LatentState::YField(y)) => {
            let rho = psi.dynamics.ok_or_else(|| Error::Contract("Model C needs dynamics".into()))?.rho;
            let e = psi.corr.as_exp()?;
            let f = chol_psd(&crate::covariance::spatial_corr_matrix(e.theta, &md.h)?, md.max_jitter)?;
            let mut q = 0.0;
            for t in 1..y.ncols() {
                q += f.quad_form(&(y.column(t) - y.column(t - 1) * rho));
            }
            Ok((a + (d * (y.ncols() - 1)) as f64 / 2.0, b + 0.5 * q))
        }
        (ModelKind::C, ParamId::Sigma2Eps, LatentState::YField(y)) => {
            let ss: f64 = md
                .obs_cells
                .iter()
                .map(|&c| {
                    let (i, t) = (c % d, c / d);
                    (md.ds.z(i, t).unwrap() - md.trend(i, t, &psi.beta) - y[(i, t + 1)]).powi(2)
                })
                .sum();
            Ok((a + n_obs / 2.0, b + 0.5 * ss))
        }
        _ => Err(Error::Contract(format!(
            "{which} has no conjugate update in model {kind}; it is sampled by Metropolis"
        ))),
    }
}

/// Draw from IG(shape, scale).
pub fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / scale).map_err(|e| Error::Numerical(format!("IG({shape}, {scale}): {e}")))?;
    Ok(1.0 / g.sample(rng))
}

/// One draw of a conjugate variance parameter.
pub fn variance_gibbs_update<R: Rng + ?Sized>(
    kind: ModelKind,
    which: ParamId,
    psi: &ParamState,
    md: &ModelData,
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<f64> {
    let (shape, scale) = variance_conditional(kind, which, psi, md, prior)?;
    sample_inv_gamma(shape, scale, rng)
}
