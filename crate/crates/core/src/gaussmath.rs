//! Dense Gaussian numerics: jittered Cholesky, Kronecker identities,
//! log-densities, conditioning and sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Default largest diagonal jitter tried by [`chol_psd`].
pub const DEFAULT_MAX_JITTER: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Lower-triangular factor of a symmetric positive-definite matrix plus the
/// diagonal jitter that was needed to obtain it.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    l: DMatrix<f64>,
    jitter: f64,
}

impl CholeskyFactor {
    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn jitter_applied(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn logdet(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// `L⁻¹ v`.
    pub fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        self.l.solve_lower_triangular_unchecked_mut(&mut out);
        out
    }

    /// `L⁻¹ M`.
    pub fn whiten_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        self.l.solve_lower_triangular_unchecked_mut(&mut out);
        out
    }

    /// `A⁻¹ v`.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        self.l.solve_lower_triangular_unchecked_mut(&mut out);
        self.l.tr_solve_lower_triangular_unchecked_mut(&mut out);
        out
    }

    /// `A⁻¹ M`.
    pub fn solve_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        self.l.solve_lower_triangular_unchecked_mut(&mut out);
        self.l.tr_solve_lower_triangular_unchecked_mut(&mut out);
        out
    }

    /// `vᵀ A⁻¹ v`.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        self.whiten(v).norm_squared()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve_mat(&DMatrix::identity(self.dim(), self.dim()))
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.l * self.l.transpose()
    }
}

/// Cholesky factorization of `A + jI` for the smallest `j` on the ladder
/// `0, 1e-10, 1e-8, 1e-6, …` not above `max_jitter` that succeeds.
pub fn chol_psd(a: &DMatrix<f64>, max_jitter: f64) -> Result<CholeskyFactor> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!("{}x{} matrix is not square", n, a.ncols())));
    }
    let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::Contract(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let mut jitter = 0.0;
    loop {
        let mut m = a.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(c) = nalgebra::Cholesky::new(m) {
            let l = c.unpack();
            if l.diagonal().iter().all(|v| *v > 0.0 && v.is_finite()) {
                return Ok(CholeskyFactor { l, jitter });
            }
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 100.0 };
        if jitter > max_jitter * (1.0 + 1e-12) {
            return Err(Error::NotPsd { max_jitter });
        }
    }
}

/// `A ⊗ B` with `A` (`n×n`) outer and `B` (`m×m`) inner, so element
/// `(t·m + i, s·m + j)` equals `A[t,s]·B[i,j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct KroneckerPair {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl KroneckerPair {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || !b.is_square() {
            return Err(Error::DimensionMismatch("Kronecker factors must be square".into()));
        }
        Ok(KroneckerPair { a, b })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows() * self.b.nrows()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.a.kronecker(&self.b)
    }

    /// `(A ⊗ B) v`.
    pub fn matvec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let (n, m) = (self.a.nrows(), self.b.nrows());
        let mm = as_block_matrix(v, m, n)?;
        Ok(flatten(&self.b * mm * self.a.transpose()))
    }

    pub fn factor(&self, max_jitter: f64) -> Result<KroneckerFactor> {
        Ok(KroneckerFactor {
            a: chol_psd(&self.a, max_jitter)?,
            b: chol_psd(&self.b, max_jitter)?,
        })
    }
}

fn as_block_matrix(v: &DVector<f64>, m: usize, n: usize) -> Result<DMatrix<f64>> {
    if v.len() != m * n {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} against a Kronecker operator of size {}",
            v.len(),
            m * n
        )));
    }
    Ok(DMatrix::from_column_slice(m, n, v.as_slice()))
}

fn flatten(m: DMatrix<f64>) -> DVector<f64> {
    let len = m.len();
    DVector::from_vec(m.reshape_generic(nalgebra::Dyn(len), nalgebra::Const::<1>).data.into())
}

/// Cholesky factors of both Kronecker factors.
#[derive(Clone, Debug)]
pub struct KroneckerFactor {
    pub a: CholeskyFactor,
    pub b: CholeskyFactor,
}

impl KroneckerFactor {
    pub fn logdet(&self) -> f64 {
        self.b.dim() as f64 * self.a.logdet() + self.a.dim() as f64 * self.b.logdet()
    }

    pub fn solve(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let mm = as_block_matrix(v, self.b.dim(), self.a.dim())?;
        // vec(B⁻¹ M A⁻¹), A symmetric.
        let left = self.b.solve_mat(&mm);
        let both = self.a.solve_mat(&left.transpose()).transpose();
        Ok(flatten(both))
    }
}

/// `log|A ⊗ B| = m·log|A| + n·log|B|`.
pub fn kron_logdet(p: &KroneckerPair, max_jitter: f64) -> Result<f64> {
    Ok(p.factor(max_jitter)?.logdet())
}

/// `(A ⊗ B)⁻¹ v` without forming the product.
pub fn kron_solve(p: &KroneckerPair, v: &DVector<f64>, max_jitter: f64) -> Result<DVector<f64>> {
    p.factor(max_jitter)?.solve(v)
}

/// Multivariate normal log-density.
pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &CholeskyFactor) -> Result<f64> {
    if x.len() != mean.len() || x.len() != cov.dim() {
        return Err(Error::DimensionMismatch(format!(
            "x {} / mean {} / cov {}",
            x.len(),
            mean.len(),
            cov.dim()
        )));
    }
    let r = x - mean;
    Ok(-0.5 * (x.len() as f64 * LN_2PI + cov.logdet() + cov.quad_form(&r)))
}

/// Mean and variance of a scalar `z₂` given `z₁ = obs` under the joint
/// `N((μ₁, μ₂), [[S11, S12], [S12ᵀ, S22]])`.
pub fn mvn_condition(
    mu1: &DVector<f64>,
    mu2: f64,
    s11: &CholeskyFactor,
    s12: &DVector<f64>,
    s22: f64,
    obs: &DVector<f64>,
) -> Result<(f64, f64)> {
    let n = s11.dim();
    if mu1.len() != n || s12.len() != n || obs.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "conditioning block of size {n} with mu1 {}, s12 {}, obs {}",
            mu1.len(),
            s12.len(),
            obs.len()
        )));
    }
    let w = s11.solve(s12);
    let mean = mu2 + w.dot(&(obs - mu1));
    let var = s22 - w.dot(s12);
    Ok((mean, clamp_variance(var, s22)?))
}

/// Clamps round-off negatives to zero and rejects anything larger.
pub fn clamp_variance(var: f64, reference: f64) -> Result<f64> {
    if var >= 0.0 {
        Ok(var)
    } else if var >= -1e-10 * reference.abs().max(1.0) {
        Ok(0.0)
    } else {
        Err(Error::Numerical(format!("negative conditional variance {var:e}")))
    }
}

/// `n` independent standard normal draws.
pub fn std_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// `mean + L ξ`, `ξ` standard normal.
pub fn sample_mvn<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &CholeskyFactor, rng: &mut R) -> DVector<f64> {
    let xi = std_normal_vec(mean.len(), rng);
    mean + cov.l() * xi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = RngStream::new(seed);
        let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        &g * g.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn chol_identity_and_hand_case() {
        let c = chol_psd(&DMatrix::identity(3, 3), 0.0).unwrap();
        assert_eq!(c.l(), &DMatrix::identity(3, 3));
        assert_eq!(c.jitter_applied(), 0.0);

        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let c = chol_psd(&a, 0.0).unwrap();
        assert_abs_diff_eq!(c.l()[(0, 0)], 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(c.l()[(1, 0)], 0.5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(c.l()[(1, 1)], 1.5f64.sqrt(), epsilon = 1e-15);
        assert_eq!(c.l()[(0, 1)], 0.0);
    }

    #[test]
    fn chol_negative_eigenvalue_fails() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-3, 2.0]));
        assert!(matches!(chol_psd(&a, 1e-6), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn chol_uses_jitter_on_singular_input() {
        let a = DMatrix::from_element(3, 3, 1.0);
        let c = chol_psd(&a, 1e-6).unwrap();
        assert!(c.jitter_applied() > 0.0);
        let again = chol_psd(&a, 1e-6).unwrap();
        assert_eq!(c.jitter_applied(), again.jitter_applied());
        let mut aj = a.clone();
        for i in 0..3 {
            aj[(i, i)] += c.jitter_applied();
        }
        assert!((c.reconstruct() - &aj).norm() <= 1e-8 * aj.norm());
    }

    #[test]
    fn chol_rejects_asymmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 2.0]);
        assert!(matches!(chol_psd(&a, 1e-6), Err(Error::Contract(_))));
    }

    #[test]
    fn kron_small_cases() {
        let p = KroneckerPair::new(DMatrix::identity(2, 2), DMatrix::identity(3, 3)).unwrap();
        assert_eq!(kron_logdet(&p, 0.0).unwrap(), 0.0);
        let v = DVector::from_fn(6, |i, _| i as f64 - 2.0);
        assert_eq!(kron_solve(&p, &v, 0.0).unwrap(), v);

        let p = KroneckerPair::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])),
            DMatrix::identity(3, 3),
        )
        .unwrap();
        assert_abs_diff_eq!(kron_logdet(&p, 0.0).unwrap(), 5.375_278_407_68, epsilon = 1e-10);
        assert!(kron_solve(&p, &DVector::zeros(5), 0.0).is_err());
    }

    #[test]
    fn kron_matches_dense() {
        let p = KroneckerPair::new(spd(3, 1), spd(4, 2)).unwrap();
        let dense = p.to_dense();
        let f = chol_psd(&dense, 0.0).unwrap();
        assert_abs_diff_eq!(kron_logdet(&p, 0.0).unwrap(), f.logdet(), epsilon = 1e-10);
        let v = DVector::from_fn(12, |i, _| (i as f64).sin());
        let x = kron_solve(&p, &v, 0.0).unwrap();
        assert!((&x - f.solve(&v)).norm() <= 1e-10 * x.norm());
        assert!((&dense * &x - &v).norm() <= 1e-8);
        assert!((p.matvec(&v).unwrap() - &dense * &v).norm() <= 1e-10);
    }

    #[test]
    fn logpdf_cases() {
        let id = chol_psd(&DMatrix::identity(4, 4), 0.0).unwrap();
        let m = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert_abs_diff_eq!(mvn_logpdf(&m, &m, &id).unwrap(), -2.0 * LN_2PI, epsilon = 1e-14);
        let one = chol_psd(&DMatrix::identity(1, 1), 0.0).unwrap();
        assert_abs_diff_eq!(
            mvn_logpdf(&DVector::from_element(1, 1.0), &DVector::zeros(1), &one).unwrap(),
            -0.5 - 0.5 * LN_2PI,
            epsilon = 1e-15
        );
        let a = spd(3, 9);
        let f = chol_psd(&a, 0.0).unwrap();
        let x = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let mu = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        let r = &x - &mu;
        let direct = -0.5 * (3.0 * LN_2PI + a.determinant().ln() + (r.transpose() * a.try_inverse().unwrap() * &r)[(0, 0)]);
        assert_abs_diff_eq!(mvn_logpdf(&x, &mu, &f).unwrap(), direct, epsilon = 1e-10);
        assert!(mvn_logpdf(&x, &DVector::zeros(2), &f).is_err());
    }

    #[test]
    fn condition_cases() {
        let s11 = chol_psd(&DMatrix::identity(1, 1), 0.0).unwrap();
        let (m, v) = mvn_condition(
            &DVector::zeros(1),
            0.0,
            &s11,
            &DVector::from_element(1, 0.5),
            1.0,
            &DVector::from_element(1, 1.0),
        )
        .unwrap();
        assert_abs_diff_eq!(m, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.75, epsilon = 1e-15);

        let s11 = chol_psd(&spd(3, 4), 0.0).unwrap();
        let mu1 = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let (m, v) = mvn_condition(&mu1, 7.0, &s11, &DVector::zeros(3), 2.5, &DVector::from_vec(vec![9.0, 9.0, 9.0])).unwrap();
        assert_eq!((m, v), (7.0, 2.5));
        let (m, _) = mvn_condition(&mu1, 7.0, &s11, &DVector::from_vec(vec![0.3, 0.1, 0.2]), 2.5, &mu1).unwrap();
        assert_abs_diff_eq!(m, 7.0, epsilon = 1e-15);
    }

    #[test]
    fn condition_clamps_round_off_only() {
        assert_eq!(clamp_variance(-1e-12, 1.0).unwrap(), 0.0);
        assert!(clamp_variance(-1e-6, 1.0).is_err());
    }

    #[test]
    fn conditional_moments_match_monte_carlo() {
        // Regress z2 on z1 draws from a bivariate normal with corr 0.5.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let f = chol_psd(&a, 0.0).unwrap();
        let mut rng = RngStream::new(5);
        let n = 200_000;
        let (mut sx, mut sy, mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let z = sample_mvn(&DVector::zeros(2), &f, &mut rng);
            sx += z[0];
            sy += z[1];
            sxx += z[0] * z[0];
            sxy += z[0] * z[1];
            syy += z[1] * z[1];
        }
        let nf = n as f64;
        let slope = (sxy - sx * sy / nf) / (sxx - sx * sx / nf);
        let intercept = (sy - slope * sx) / nf;
        let resid = (syy - sy * sy / nf) / nf - slope * slope * (sxx - sx * sx / nf) / nf;
        let s11 = chol_psd(&DMatrix::identity(1, 1), 0.0).unwrap();
        let (m, v) = mvn_condition(
            &DVector::zeros(1),
            0.0,
            &s11,
            &DVector::from_element(1, 0.5),
            1.0,
            &DVector::from_element(1, 1.0),
        )
        .unwrap();
        assert!((intercept + slope - m).abs() < 0.01);
        assert!((resid - v).abs() < 0.01);
    }

    #[test]
    fn sampling_is_reproducible_and_calibrated() {
        let id = chol_psd(&DMatrix::identity(3, 3), 0.0).unwrap();
        let a = sample_mvn(&DVector::zeros(3), &id, &mut RngStream::new(11));
        let b = sample_mvn(&DVector::zeros(3), &id, &mut RngStream::new(11));
        assert_eq!(a, b);

        let cov = spd(3, 21);
        let f = chol_psd(&cov, 0.0).unwrap();
        let mean = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let mut rng = RngStream::new(12);
        let n = 100_000;
        let draws: Vec<DVector<f64>> = (0..n).map(|_| sample_mvn(&mean, &f, &mut rng)).collect();
        let m = draws.iter().fold(DVector::zeros(3), |acc, d| acc + d) / n as f64;
        for i in 0..3 {
            let se = (cov[(i, i)] / n as f64).sqrt();
            assert!((m[i] - mean[i]).abs() < 4.0 * se);
        }
        let s = draws.iter().fold(DMatrix::zeros(3, 3), |acc, d| {
            let r = d - &m;
            acc + &r * r.transpose()
        }) / (n - 1) as f64;
        assert!((s - &cov).norm() <= 0.05 * cov.norm());
    }

    proptest! {
        #[test]
        fn kron_identities_match_dense(n in 1usize..7, m in 1usize..7, s1 in any::<u64>(), s2 in any::<u64>()) {
            let p = KroneckerPair::new(spd(n, s1), spd(m, s2)).unwrap();
            let dense = p.to_dense();
            let f = chol_psd(&dense, 0.0).unwrap();
            let ld = kron_logdet(&p, 0.0).unwrap();
            prop_assert!((ld - f.logdet()).abs() <= 1e-10 * f.logdet().abs().max(1.0));
            let v = DVector::from_fn(n * m, |i, _| ((i * 7 + 3) as f64).cos());
            let x = kron_solve(&p, &v, 0.0).unwrap();
            let y = f.solve(&v);
            prop_assert!((&x - &y).norm() <= 1e-9 * y.norm().max(1.0));
        }

        #[test]
        fn jitter_ladder_is_deterministic(seed in any::<u64>()) {
            let mut a = spd(4, seed);
            // Make it rank deficient.
            let col = a.column(0).clone_owned();
            a.set_column(3, &col);
            let row = a.row(0).clone_owned();
            a.set_row(3, &row);
            a[(3, 3)] = a[(0, 0)];
            let r1 = chol_psd(&a, 1e-2).map(|c| c.jitter_applied()).ok();
            let r2 = chol_psd(&a, 1e-2).map(|c| c.jitter_applied()).ok();
            prop_assert_eq!(r1, r2);
        }
    }
}
