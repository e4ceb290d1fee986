//! Forward filtering, backward sampling of the latent temporal states of
//! Models B (scalar) and C (one state per site).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::covariance::spatial_corr_matrix;
use crate::error::{Error, Result};
use crate::gaussmath::{chol_psd, std_normal_vec, CholeskyFactor};
use crate::models::{ModelData, ParamState, PriorSpec};

/// Joint draw of `Y₀ … Y_T` for Model B.
pub fn ffbs_model_b<R: Rng + ?Sized>(
    psi: &ParamState,
    md: &ModelData,
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let full = md.spatial_cov(psi.corr.as_exp()?, psi.sigma2_eps)?;
    let factors = md.pattern_factors(&full)?;
    ffbs_b_with(psi, md, prior, &factors, rng)
}

pub(crate) fn ffbs_b_with<R: Rng + ?Sized>(
    psi: &ParamState,
    md: &ModelData,
    prior: &PriorSpec,
    factors: &[CholeskyFactor],
    rng: &mut R,
) -> Result<DVector<f64>> {
    let dy = psi.dynamics.ok_or_else(|| Error::Contract("Model B needs dynamics".into()))?;
    let s2eta = dy.sigma2_eta.ok_or_else(|| Error::Contract("Model B needs sigma2_eta".into()))?;
    let rho = dy.rho;
    let n = md.n_days();

    // Information contributed by each day: 1ᵀΣ⁻¹1 and 1ᵀΣ⁻¹r_t.
    let mut info = vec![(0.0, 0.0); n];
    for (p, f) in md.patterns.iter().zip(factors) {
        let w = f.solve(&DVector::from_element(p.sites.len(), 1.0));
        let q = w.sum();
        for &t in &p.days {
            let r = DVector::from_iterator(
                p.sites.len(),
                p.sites.iter().map(|&i| md.ds.z(i, t).unwrap() - md.trend(i, t, &psi.beta)),
            );
            info[t] = (q, w.dot(&r));
        }
    }

    let mut m = vec![0.0; n + 1];
    let mut c = vec![prior.sigma2_b; n + 1];
    let mut a = vec![0.0; n + 1];
    let mut rr = vec![0.0; n + 1];
    for t in 1..=n {
        a[t] = rho * m[t - 1];
        rr[t] = rho * rho * c[t - 1] + s2eta;
        let (q, g) = info[t - 1];
        if rr[t] > 0.0 {
            let prec = 1.0 / rr[t] + q;
            c[t] = 1.0 / prec;
            m[t] = c[t] * (a[t] / rr[t] + g);
        } else {
            c[t] = 0.0;
            m[t] = a[t];
        }
        if !(c[t] >= 0.0) {
            return Err(Error::Numerical(format!("filter variance {} at day {t}", c[t])));
        }
    }

    let mut y = DVector::zeros(n + 1);
    y[n] = m[n] + c[n].sqrt() * rng.sample::<f64, _>(StandardNormal);
    for t in (0..n).rev() {
        let (mean, var) = if rr[t + 1] > 0.0 {
            let gain = c[t] * rho / rr[t + 1];
            (m[t] + gain * (y[t + 1] - a[t + 1]), c[t] - gain * c[t] * rho)
        } else {
            // Deterministic dynamics: Y_{t+1} = ρ Y_t pins Y_t when ρ ≠ 0.
            if rho != 0.0 {
                (y[t + 1] / rho, 0.0)
            } else {
                (m[t], c[t])
            }
        };
        let var = crate::gaussmath::clamp_variance(var, c[t])?;
        y[t] = mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(y)
}

/// Joint draw of the `d × (T+1)` state field of Model C.
///
/// Uses the perturbation form of the simulation smoother: a path drawn
/// from the prior is corrected by the smoothed mean of the residual data,
/// which needs the filter gains but no backward factorizations.
pub fn ffbs_model_c<R: Rng + ?Sized>(
    psi: &ParamState,
    md: &ModelData,
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let dy = psi.dynamics.ok_or_else(|| Error::Contract("Model C needs dynamics".into()))?;
    let e = psi.corr.as_exp()?;
    let rho = dy.rho;
    let d = md.d();
    let n = md.n_days();
    let w = spatial_corr_matrix(e.theta, &md.h)? * e.sigma2_omega;
    let wf = chol_psd(&w, md.max_jitter)?;

    // Prior path and pseudo-observations.
    let sd_eps = psi.sigma2_eps.sqrt();
    let mut y_plus = DMatrix::zeros(d, n + 1);
    y_plus.set_column(0, &(std_normal_vec(d, rng) * prior.sigma2_c.sqrt()));
    for t in 1..=n {
        let eta = wf.l() * std_normal_vec(d, rng);
        let col = y_plus.column(t - 1) * rho + eta;
        y_plus.set_column(t, &col);
    }
    let resid: Vec<DVector<f64>> = (1..=n)
        .map(|t| {
            let obs = &md.day_obs[t - 1];
            DVector::from_iterator(
                obs.len(),
                obs.iter().map(|&i| {
                    let noise: f64 = rng.sample(StandardNormal);
                    md.ds.z(i, t - 1).unwrap() - md.trend(i, t - 1, &psi.beta) - y_plus[(i, t)] - sd_eps * noise
                }),
            )
        })
        .collect();

    // Covariance recursion with the filtered mean of the residual data.
    let mut m = DVector::zeros(d);
    let mut c = DMatrix::identity(d, d) * prior.sigma2_c;
    let mut ms: Vec<DVector<f64>> = Vec::with_capacity(n + 1);
    let mut gains: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    ms.push(m.clone());
    for t in 1..=n {
        let a = &m * rho;
        let mut r = &c * (rho * rho) + &w;
        symmetrize(&mut r);
        // Smoother gain J_{t−1} = ρ C_{t−1} R_t⁻¹.
        let rf = chol_psd(&r, md.max_jitter)?;
        gains.push(rf.solve_mat(&c).transpose() * rho);
        let obs = &md.day_obs[t - 1];
        if obs.is_empty() {
            m = a;
            c = r;
        } else {
            let no = obs.len();
            let mut s = DMatrix::from_fn(no, no, |i, j| r[(obs[i], obs[j])]);
            for i in 0..no {
                s[(i, i)] += psi.sigma2_eps;
            }
            let sf = chol_psd(&s, md.max_jitter)?;
            let r_o = DMatrix::from_fn(no, d, |i, j| r[(obs[i], j)]);
            // K = R Hᵀ S⁻¹, computed as (S⁻¹ H R)ᵀ.
            let k = sf.solve_mat(&r_o).transpose();
            let innov = &resid[t - 1] - DVector::from_iterator(no, obs.iter().map(|&i| a[i]));
            m = &a + &k * innov;
            c = &r - &k * r_o;
            symmetrize(&mut c);
        }
        ms.push(m.clone());
    }

    // Backward mean pass, then add the prior path back.
    let mut y = y_plus;
    let mut next = ms[n].clone();
    let col = y.column(n) + &next;
    y.set_column(n, &col);
    for t in (0..n).rev() {
        let mean = &ms[t] + &gains[t] * (&next - &ms[t] * rho);
        let col = y.column(t) + &mean;
        y.set_column(t, &col);
        next = mean;
    }
    Ok(y)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
