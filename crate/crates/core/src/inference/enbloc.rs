//! Joint update of the A2 latent field through the eigen-decomposition of
//! the Kronecker factors.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::covariance::separable_corr_matrix;
use crate::error::{Error, Result};
use crate::gaussmath::{std_normal_vec, KroneckerPair};
use crate::models::{LatentState, ModelData, ParamState};

/// Eigenvectors and eigenvalues of both Kronecker factors.
#[derive(Clone, Debug)]
pub struct KronEigen {
    pub v: KroneckerPair,
    pub lambda_a: DVector<f64>,
    pub lambda_b: DVector<f64>,
}

impl KronEigen {
    pub fn new(p: &KroneckerPair) -> Result<Self> {
        let ea = SymmetricEigen::new(p.a.clone());
        let eb = SymmetricEigen::new(p.b.clone());
        let floor = |l: DVector<f64>| -> Result<DVector<f64>> {
            let max = l.max();
            if l.min() < -1e-8 * max.max(1.0) {
                return Err(Error::NotPsd { max_jitter: 0.0 });
            }
            Ok(l.map(|x| x.max(1e-12 * max)))
        };
        Ok(KronEigen {
            v: KroneckerPair::new(ea.eigenvectors, eb.eigenvectors)?,
            lambda_a: floor(ea.eigenvalues)?,
            lambda_b: floor(eb.eigenvalues)?,
        })
    }

    /// Eigenvalue of `A ⊗ B` at global index `c`.
    pub fn lambda(&self, c: usize) -> f64 {
        let m = self.lambda_b.len();
        self.lambda_a[c / m] * self.lambda_b[c % m]
    }

    /// `(V_A ⊗ V_B)ᵀ x`.
    pub fn to_eigenbasis(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        KroneckerPair::new(self.v.a.transpose(), self.v.b.transpose())?.matvec(x)
    }

    /// `(V_A ⊗ V_B) x`.
    pub fn from_eigenbasis(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.v.matvec(x)
    }
}

/// Draw of `U` from its Gaussian full conditional given a complete data
/// vector `z` (missing cells already imputed).
///
/// Precision `σ_ε⁻² I + σ_ω⁻² (C_θ1 ⊗ C_θ2)⁻¹`, mean
/// `Xβ + Q⁻¹ (z − Xβ)/σ²_ε`.
pub fn enbloc_draw<R: Rng + ?Sized>(
    eig: &KronEigen,
    trend: &DVector<f64>,
    z: &DVector<f64>,
    sigma2_eps: f64,
    sigma2_omega: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let w = eig.to_eigenbasis(&(z - trend))?;
    let xi = std_normal_vec(w.len(), rng);
    let inner = DVector::from_fn(w.len(), |c, _| {
        let dprec = 1.0 / sigma2_eps + 1.0 / (sigma2_omega * eig.lambda(c));
        w[c] / (sigma2_eps * dprec) + xi[c] / dprec.sqrt()
    });
    Ok(trend + eig.from_eigenbasis(&inner)?)
}

/// Joint draw of the A2 latent field.
///
/// Missing cells are first imputed from `z ~ N(u, σ²_ε)` at the current `U`,
/// then `U` is drawn given the completed data.
pub fn enbloc_update_u<R: Rng + ?Sized>(psi: &ParamState, md: &ModelData, rng: &mut R) -> Result<DVector<f64>> {
    let LatentState::U(u) = &psi.latent else {
        return Err(Error::Contract("Model A2 needs the latent field".into()));
    };
    let p = psi.corr.as_separable()?;
    let eig = KronEigen::new(&separable_corr_matrix(p, &md.h, md.n_days())?)?;
    let z = complete_data(md, u, psi.sigma2_eps, rng);
    enbloc_draw(&eig, &md.trend_all(&psi.beta), &z, psi.sigma2_eps, p.sigma2_omega, rng)
}

pub(crate) fn complete_data<R: Rng + ?Sized>(md: &ModelData, u: &DVector<f64>, sigma2_eps: f64, rng: &mut R) -> DVector<f64> {
    let sd = sigma2_eps.sqrt();
    DVector::from_fn(u.len(), |c, _| match md.ds.z_cells()[c] {
        Some(v) => v,
        None => u[c] + sd * rng.sample::<f64, _>(rand_distr::StandardNormal),
    })
}

/// Dense full-conditional mean and covariance of `U` given complete data;
/// used to check the structured sampler.
pub fn enbloc_conditional_dense(
    pair: &KroneckerPair,
    trend: &DVector<f64>,
    z: &DVector<f64>,
    sigma2_eps: f64,
    sigma2_omega: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = trend.len();
    let cinv = pair
        .to_dense()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular prior covariance".into()))?;
    let prec = DMatrix::identity(n, n) / sigma2_eps + cinv / sigma2_omega;
    let cov = prec
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular posterior precision".into()))?;
    let mean = trend + &cov * (z - trend) / sigma2_eps;
    Ok((mean, cov))
}
