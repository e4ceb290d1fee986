//! Dense brute-force references for small instances.
//!
//! Every function here materializes the full joint covariance and conditions
//! on it directly, at a cost cubic in `dT`. The structured kernels in
//! [`inference`](crate::inference) and [`prediction`](crate::prediction)
//! are checked against these on toy problems.

use nalgebra::{DMatrix, DVector};

use crate::covariance::{exp_corr, gneiting_corr, nonseparable_corr_matrix, separable_corr_matrix, spatial_corr_matrix};
use crate::dataset::Site;
use crate::error::{Error, Result};
use crate::gaussmath::{chol_psd, mvn_logpdf};
use crate::models::{log_prior, LatentState, ModelData, ModelKind, ParamState, PriorSpec};
use crate::prediction::PredictionTarget;
use crate::rng::RngStream;
use crate::simulator::{default_truth, simulate_full, SimLayout};

fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular matrix in dense reference".into()))
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn sub_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

fn sub_mat(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

fn observed_z(md: &ModelData) -> DVector<f64> {
    DVector::from_iterator(md.obs_cells.len(), md.obs_cells.iter().map(|&c| md.ds.z_cells()[c].unwrap()))
}

/// A small problem simulated from `kind` (intercept plus one covariate)
/// with the listed global cells removed, and the generating state with its
/// latent values.
pub fn toy_problem(kind: ModelKind, d: usize, n_days: usize, missing: &[usize], seed: u64) -> Result<(ModelData, ParamState)> {
    let mut rng = RngStream::new(seed);
    let layout = SimLayout::random(d, n_days, 2, 60.0, 40.0, default_truth(kind, 2), &mut rng)?;
    let sim = simulate_full(kind, &layout, &mut rng)?;
    let mut z = sim.dataset.z_cells().to_vec();
    for &c in missing {
        *z.get_mut(c).ok_or_else(|| Error::Contract(format!("cell {c} out of range")))? = None;
    }
    let ds = sim.dataset.with_observations(z)?;
    Ok((ModelData::new(&ds), sim.truth))
}

/// Condition `N(μ, Σ)` on the coordinates `given` taking `values`; returns
/// the mean and covariance of the remaining coordinates `keep`.
pub fn gaussian_condition(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    keep: &[usize],
    given: &[usize],
    values: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let s22 = sub_mat(cov, given, given);
    let s12 = sub_mat(cov, keep, given);
    let k = &s12 * inverse(&s22)?;
    let m = sub_vec(mean, keep) + &k * (values - sub_vec(mean, given));
    let c = sub_mat(cov, keep, keep) - &k * s12.transpose();
    Ok((m, sym(c)))
}

/// Covariance of the dT cells given the parameters, integrating out every
/// latent process except the dynamic states of B and C.
pub fn cell_cov(kind: ModelKind, psi: &ParamState, md: &ModelData) -> Result<DMatrix<f64>> {
    let (d, n) = (md.d(), md.n_days());
    let mut s = match kind {
        ModelKind::A1 | ModelKind::B => {
            let e = psi.corr.as_exp()?;
            let c = spatial_corr_matrix(e.theta, &md.h)? * e.sigma2_omega;
            DMatrix::from_fn(d * n, d * n, |a, b| if a / d == b / d { c[(a % d, b % d)] } else { 0.0 })
        }
        ModelKind::A2 => {
            let p = psi.corr.as_separable()?;
            separable_corr_matrix(p, &md.h, n)?.to_dense() * p.sigma2_omega
        }
        ModelKind::A3_1 | ModelKind::A3_2 => {
            let g = psi.corr.as_gneiting()?;
            nonseparable_corr_matrix(g, &md.h, n, usize::MAX)? * g.sigma2_omega
        }
        ModelKind::C => DMatrix::zeros(d * n, d * n),
    };
    for a in 0..d * n {
        s[(a, a)] += psi.sigma2_eps;
    }
    Ok(s)
}

/// Mean of the dT cells given the parameters and, for B and C, the latent
/// states.
pub fn cell_mean(kind: ModelKind, psi: &ParamState, md: &ModelData) -> Result<DVector<f64>> {
    let d = md.d();
    let mut m = md.trend_all(&psi.beta);
    match (kind, &psi.latent) {
        (ModelKind::B, LatentState::YScalar(y)) => {
            for c in 0..m.len() {
                m[c] += y[c / d + 1];
            }
        }
        (ModelKind::C, LatentState::YField(y)) => {
            for c in 0..m.len() {
                m[c] += y[(c % d, c / d + 1)];
            }
        }
        (ModelKind::B | ModelKind::C, _) => {
            return Err(Error::Contract(format!("model {kind} needs its latent states")))
        }
        _ => {}
    }
    Ok(m)
}

/// Prior covariance of `Y₀ … Y_T` under Model B.
pub fn prior_cov_b(psi: &ParamState, n_days: usize, prior: &PriorSpec) -> Result<DMatrix<f64>> {
    let dy = psi.dynamics.ok_or_else(|| Error::Contract("Model B needs dynamics".into()))?;
    let s2 = dy.sigma2_eta.ok_or_else(|| Error::Contract("Model B needs sigma2_eta".into()))?;
    // Y = A e with e = (Y₀, η₁, …, η_T).
    let m = n_days + 1;
    let a = DMatrix::from_fn(m, m, |t, s| if s <= t { dy.rho.powi((t - s) as i32) } else { 0.0 });
    let e = DMatrix::from_diagonal(&DVector::from_fn(m, |s, _| if s == 0 { prior.sigma2_b } else { s2 }));
    Ok(sym(&a * e * a.transpose()))
}

/// Prior covariance of `vec(Y)` (column `t` stacked, index `t·d + i`)
/// under Model C.
pub fn prior_cov_c(psi: &ParamState, md: &ModelData, prior: &PriorSpec) -> Result<DMatrix<f64>> {
    let dy = psi.dynamics.ok_or_else(|| Error::Contract("Model C needs dynamics".into()))?;
    let e = psi.corr.as_exp()?;
    let d = md.d();
    let m = md.n_days() + 1;
    let w = spatial_corr_matrix(e.theta, &md.h)? * e.sigma2_omega;
    let innov = DMatrix::from_fn(d * m, d * m, |a, b| {
        let (ta, tb) = (a / d, b / d);
        match (ta == tb, ta) {
            (false, _) => 0.0,
            (true, 0) if a == b => prior.sigma2_c,
            (true, 0) => 0.0,
            (true, _) => w[(a % d, b % d)],
        }
    });
    let a = DMatrix::from_fn(d * m, d * m, |r, c| {
        let (tr, tc) = (r / d, c / d);
        if r % d == c % d && tc <= tr {
            dy.rho.powi((tr - tc) as i32)
        } else {
            0.0
        }
    });
    Ok(sym(&a * innov * a.transpose()))
}

/// Log joint density of the observed data, the latent states and the
/// parameters, built from dense Gaussian densities.
pub fn joint_log_density(kind: ModelKind, psi: &ParamState, md: &ModelData, prior: &PriorSpec) -> Result<f64> {
    let lp = log_prior(kind, prior, psi);
    let z = observed_z(md);
    let obs = &md.obs_cells;
    let ll = match kind {
        ModelKind::A1 | ModelKind::A3_1 | ModelKind::A3_2 | ModelKind::B => {
            let s = sub_mat(&cell_cov(kind, psi, md)?, obs, obs);
            let mu = sub_vec(&cell_mean(kind, psi, md)?, obs);
            let mut ll = mvn_logpdf(&z, &mu, &chol_psd(&s, 0.0)?)?;
            if let (ModelKind::B, LatentState::YScalar(y)) = (kind, &psi.latent) {
                let p = prior_cov_b(psi, md.n_days(), prior)?;
                ll += mvn_logpdf(y, &DVector::zeros(y.len()), &chol_psd(&p, 0.0)?)?;
            }
            ll
        }
        ModelKind::A2 => {
            let LatentState::U(u) = &psi.latent else {
                return Err(Error::Contract("Model A2 needs the latent field".into()));
            };
            let p = psi.corr.as_separable()?;
            let k = separable_corr_matrix(p, &md.h, md.n_days())?.to_dense() * p.sigma2_omega;
            let mut ll = mvn_logpdf(u, &md.trend_all(&psi.beta), &chol_psd(&k, 0.0)?)?;
            let noise = DMatrix::identity(obs.len(), obs.len()) * psi.sigma2_eps;
            ll += mvn_logpdf(&z, &sub_vec(u, obs), &chol_psd(&noise, 0.0)?)?;
            ll
        }
        ModelKind::C => {
            let LatentState::YField(y) = &psi.latent else {
                return Err(Error::Contract("Model C needs the latent field".into()));
            };
            let s = sub_mat(&cell_cov(kind, psi, md)?, obs, obs);
            let mu = sub_vec(&cell_mean(kind, psi, md)?, obs);
            let mut ll = mvn_logpdf(&z, &mu, &chol_psd(&s, 0.0)?)?;
            let vy = DVector::from_column_slice(y.as_slice());
            let p = prior_cov_c(psi, md, prior)?;
            ll += mvn_logpdf(&vy, &DVector::zeros(vy.len()), &chol_psd(&p, 0.0)?)?;
            ll
        }
    };
    Ok(ll + lp)
}

/// Mean and covariance of the full conditional of β.
///
/// For A2 the latent field plays the role of the data; for B and C the
/// latent states are held fixed.
pub fn beta_conditional(
    kind: ModelKind,
    psi: &ParamState,
    md: &ModelData,
    prior: &PriorSpec,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let x = md.ds.design_matrix();
    let k = md.k();
    let zero = ParamState { beta: DVector::zeros(k), ..psi.clone() };
    let (xs, r, s) = match kind {
        ModelKind::A2 => {
            let LatentState::U(u) = &psi.latent else {
                return Err(Error::Contract("Model A2 needs the latent field".into()));
            };
            let p = psi.corr.as_separable()?;
            let s = separable_corr_matrix(p, &md.h, md.n_days())?.to_dense() * p.sigma2_omega;
            (x, u.clone(), s)
        }
        _ => {
            let obs = &md.obs_cells;
            let offset = sub_vec(&cell_mean(kind, &zero, md)?, obs);
            let all: Vec<usize> = (0..k).collect();
            (sub_mat(&x, obs, &all), observed_z(md) - offset, sub_mat(&cell_cov(kind, psi, md)?, obs, obs))
        }
    };
    let si = inverse(&s)?;
    let prec = xs.transpose() * &si * &xs + DMatrix::identity(k, k) / prior.beta_var;
    let cov = sym(inverse(&prec)?);
    let mean = &cov * (xs.transpose() * si * r);
    Ok((mean, cov))
}

/// Posterior mean and covariance of `Y₀ … Y_T` under Model B.
pub fn latent_posterior_b(psi: &ParamState, md: &ModelData, prior: &PriorSpec) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = md.d();
    let m = md.n_days() + 1;
    let obs = &md.obs_cells;
    let h = DMatrix::from_fn(obs.len(), m, |r, t| if obs[r] / d + 1 == t { 1.0 } else { 0.0 });
    let p = prior_cov_b(psi, md.n_days(), prior)?;
    let r = sub_mat(&cell_cov(ModelKind::B, psi, md)?, obs, obs);
    let resid = observed_z(md) - sub_vec(&md.trend_all(&psi.beta), obs);
    linear_gaussian_posterior(&p, &h, &r, &resid)
}

/// Posterior mean and covariance of `vec(Y)` under Model C.
pub fn latent_posterior_c(psi: &ParamState, md: &ModelData, prior: &PriorSpec) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = md.d();
    let m = md.n_days() + 1;
    let obs = &md.obs_cells;
    let h = DMatrix::from_fn(obs.len(), d * m, |r, c| if obs[r] + d == c { 1.0 } else { 0.0 });
    let p = prior_cov_c(psi, md, prior)?;
    let r = DMatrix::identity(obs.len(), obs.len()) * psi.sigma2_eps;
    let resid = observed_z(md) - sub_vec(&md.trend_all(&psi.beta), obs);
    linear_gaussian_posterior(&p, &h, &r, &resid)
}

/// Posterior mean and covariance of the A2 field `U` given the observed
/// cells.
pub fn latent_posterior_a2(psi: &ParamState, md: &ModelData) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = psi.corr.as_separable()?;
    let n = md.d() * md.n_days();
    let obs = &md.obs_cells;
    let k = separable_corr_matrix(p, &md.h, md.n_days())?.to_dense() * p.sigma2_omega;
    let h = DMatrix::from_fn(obs.len(), n, |r, c| if obs[r] == c { 1.0 } else { 0.0 });
    let r = DMatrix::identity(obs.len(), obs.len()) * psi.sigma2_eps;
    let trend = md.trend_all(&psi.beta);
    let resid = observed_z(md) - sub_vec(&trend, obs);
    let (m, c) = linear_gaussian_posterior(&k, &h, &r, &resid)?;
    Ok((trend + m, c))
}

/// `x ~ N(0, P)`, `y = Hx + N(0, R)`: mean and covariance of `x | y`.
fn linear_gaussian_posterior(
    p: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let s = h * p * h.transpose() + r;
    let k = p * h.transpose() * inverse(&s)?;
    let mean = &k * y;
    let cov = p - &k * h * p;
    Ok((mean, sym(cov)))
}

/// Mean and variance of the target given one parameter draw, by dense
/// conditioning of the joint law of the observed cells and the target.
///
/// A1, A3 and B return the law of `z(s₀,t₀)`; A2 returns the law of
/// `u(s₀,t₀)` given the latent field.
pub fn predictive_conditional(
    kind: ModelKind,
    psi: &ParamState,
    md: &ModelData,
    target: &PredictionTarget,
) -> Result<(f64, f64)> {
    let d = md.d();
    let n = md.d() * md.n_days();
    let t0 = target.day - 1;
    let h: Vec<f64> = md.ds.sites().iter().map(|s| s.distance_km(&target.site)).collect();
    let mu0 = target.covariates.dot(&psi.beta);
    let (given, values, cov_all, mean_all, cross, var0) = match kind {
        ModelKind::A2 => {
            let LatentState::U(u) = &psi.latent else {
                return Err(Error::Contract("Model A2 needs the latent field".into()));
            };
            let p = psi.corr.as_separable()?;
            let cross = DVector::from_fn(n, |c, _| {
                p.sigma2_omega
                    * (-p.theta1 * ((c / d) as f64 - t0 as f64).abs()).exp()
                    * (-p.theta2 * h[c % d]).exp()
            });
            let k = separable_corr_matrix(p, &md.h, md.n_days())?.to_dense() * p.sigma2_omega;
            ((0..n).collect::<Vec<_>>(), u.clone(), k, md.trend_all(&psi.beta), cross, p.sigma2_omega)
        }
        _ => {
            let (cross, var0) = match kind {
                ModelKind::A1 | ModelKind::B => {
                    let e = psi.corr.as_exp()?;
                    let cross = DVector::from_fn(n, |c, _| {
                        if c / d == t0 {
                            e.sigma2_omega * exp_corr(e.theta, h[c % d]).unwrap()
                        } else {
                            0.0
                        }
                    });
                    (cross, e.sigma2_omega + psi.sigma2_eps)
                }
                ModelKind::A3_1 | ModelKind::A3_2 => {
                    let g = psi.corr.as_gneiting()?;
                    let cross = DVector::from_fn(n, |c, _| {
                        g.sigma2_omega * gneiting_corr(g, h[c % d], ((c / d) as f64 - t0 as f64).abs()).unwrap()
                    });
                    (cross, g.sigma2_omega + psi.sigma2_eps)
                }
                _ => return Err(Error::Contract("use c_step_conditional for Model C".into())),
            };
            (md.obs_cells.clone(), observed_z(md), cell_cov(kind, psi, md)?, cell_mean(kind, psi, md)?, cross, var0)
        }
    };
    let shift = match (kind, &psi.latent) {
        (ModelKind::B, LatentState::YScalar(y)) => y[t0 + 1],
        (ModelKind::B, _) => return Err(Error::Contract("Model B needs its latent path".into())),
        _ => 0.0,
    };
    // Joint of (cells, target) with the target last.
    let mut cov = DMatrix::zeros(n + 1, n + 1);
    cov.view_mut((0, 0), (n, n)).copy_from(&cov_all);
    for c in 0..n {
        cov[(c, n)] = cross[c];
        cov[(n, c)] = cross[c];
    }
    cov[(n, n)] = var0;
    let mut mean = DVector::zeros(n + 1);
    mean.rows_mut(0, n).copy_from(&mean_all);
    mean[n] = mu0 + shift;
    let (m, v) = gaussian_condition(&mean, &cov, &[n], &given, &values)?;
    Ok((m[0], v[(0, 0)]))
}

/// Law of `y(s₀,t)` under Model C given the whole latent field and
/// `y(s₀,t−1) = y_prev`, by dense conditioning of the joint law of
/// `(vec Y, y(s₀,t−1), y(s₀,t))`. `t` is 1-based.
pub fn c_step_conditional(
    psi: &ParamState,
    md: &ModelData,
    prior: &PriorSpec,
    site: &Site,
    t: usize,
    y_prev: f64,
) -> Result<(f64, f64)> {
    let LatentState::YField(y) = &psi.latent else {
        return Err(Error::Contract("Model C needs the latent field".into()));
    };
    let dy = psi.dynamics.ok_or_else(|| Error::Contract("Model C needs dynamics".into()))?;
    let e = psi.corr.as_exp()?;
    let d = md.d();
    let m = md.n_days() + 1;
    if t == 0 || t >= m {
        return Err(Error::Domain(format!("step {t} outside 1..={}", m - 1)));
    }
    // Innovations: the field's d·m values, then the target's m values.
    // Target column s of the innovations sits at d·m + s.
    let dd = d + 1;
    let mut sites: Vec<Site> = md.ds.sites().to_vec();
    sites.push(site.clone());
    let hh = crate::dataset::spatial_distance_matrix(&sites);
    let w = spatial_corr_matrix(e.theta, &hh)? * e.sigma2_omega;
    let nv = dd * m;
    let idx = |i: usize, s: usize| if i < d { s * d + i } else { d * m + s };
    let mut innov = DMatrix::zeros(nv, nv);
    for s in 0..m {
        for i in 0..dd {
            for j in 0..dd {
                innov[(idx(i, s), idx(j, s))] = match s {
                    0 if i == j => prior.sigma2_c,
                    0 => 0.0,
                    _ => w[(i, j)],
                };
            }
        }
    }
    let a = DMatrix::from_fn(nv, nv, |r, c| {
        let site_of = |x: usize| if x < d * m { x % d } else { d };
        let time_of = |x: usize| if x < d * m { x / d } else { x - d * m };
        if site_of(r) == site_of(c) && time_of(c) <= time_of(r) {
            dy.rho.powi((time_of(r) - time_of(c)) as i32)
        } else {
            0.0
        }
    });
    let cov = sym(&a * innov * a.transpose());
    let mut given: Vec<usize> = (0..d * m).collect();
    given.push(d * m + t - 1);
    let mut values = DVector::zeros(d * m + 1);
    values.rows_mut(0, d * m).copy_from(&DVector::from_column_slice(y.as_slice()));
    values[d * m] = y_prev;
    let (mm, v) = gaussian_condition(&DVector::zeros(nv), &cov, &[d * m + t], &given, &values)?;
    Ok((mm[0], v[(0, 0)]))
}

/// Largest standardized discrepancy, in Monte Carlo standard errors,
/// between the sample mean and covariance of `samples` and a reference
/// `N(mean, cov)`. `ess` overrides the sample count for correlated draws.
///
/// The standard error of each covariance entry is estimated from the
/// sample variance of the centered cross products.
pub fn moment_discrepancy(samples: &[DVector<f64>], mean: &DVector<f64>, cov: &DMatrix<f64>, ess: Option<f64>) -> f64 {
    let n = samples.len() as f64;
    let m = ess.unwrap_or(n);
    let p = mean.len();
    let mut worst: f64 = 0.0;
    let sm = samples.iter().fold(DVector::zeros(p), |a, s| a + s) / n;
    for i in 0..p {
        let se = (cov[(i, i)] / m).sqrt();
        worst = worst.max((sm[i] - mean[i]).abs() / se);
    }
    for i in 0..p {
        for j in i..p {
            let prods: Vec<f64> = samples.iter().map(|s| (s[i] - mean[i]) * (s[j] - mean[j])).collect();
            let c = prods.iter().sum::<f64>() / n;
            let v = prods.iter().map(|x| (x - c).powi(2)).sum::<f64>() / (n - 1.0);
            let se = (v / m).sqrt();
            if se > 0.0 {
                worst = worst.max((c - cov[(i, j)]).abs() / se);
            }
        }
    }
    worst
}

/// Largest absolute difference between two matrices, relative to the
/// larger of 1 and the reference entry.
pub fn max_rel_diff(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(reference.iter())
        .map(|(x, r)| (x - r).abs() / r.abs().max(1.0))
        .fold(0.0, f64::max)
}
