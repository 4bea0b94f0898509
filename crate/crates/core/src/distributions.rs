//! Random variates and densities used by the samplers.
//!
//! All samplers take the random source explicitly; nothing here holds state
//! between calls.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Arguments of a Pólya-Gamma law `PG(b, c)` with integer shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyaGammaParams {
    shape_b: u32,
    tilt_c: f64,
}

impl PolyaGammaParams {
    pub fn new(shape_b: u32, tilt_c: f64) -> Result<Self> {
        if shape_b < 1 {
            return Err(Error::invalid("shape_b", shape_b));
        }
        if !tilt_c.is_finite() {
            return Err(Error::invalid("tilt_c", tilt_c));
        }
        Ok(Self { shape_b, tilt_c })
    }

    pub fn shape(&self) -> u32 {
        self.shape_b
    }

    pub fn tilt(&self) -> f64 {
        self.tilt_c
    }

    /// `E[PG(b, c)] = b / (2c) · tanh(c / 2)`, with the `c → 0` limit `b / 4`.
    pub fn mean(&self) -> f64 {
        let c = self.tilt_c.abs();
        let b = f64::from(self.shape_b);
        if c < 1e-6 {
            b * (0.25 - c * c / 48.0)
        } else {
            b / (2.0 * c) * (0.5 * c).tanh()
        }
    }
}

// Truncation point of the alternating-series sampler for J*(1, z).
const PG_TRUNC: f64 = 0.64;

/// Precomputed pieces of the J*(1, z) proposal for a fixed tilt.
struct JStarProposal {
    z: f64,
    fz: f64,
    // probability of proposing from the truncated exponential piece
    p_exp: f64,
}

impl JStarProposal {
    fn new(tilt_c: f64) -> Self {
        let z = 0.5 * tilt_c.abs();
        let fz = PI * PI / 8.0 + 0.5 * z * z;
        let t = PG_TRUNC;
        let b = (1.0 / t).sqrt() * (t * z - 1.0);
        let a = -(1.0 / t).sqrt() * (t * z + 1.0);
        let x0 = fz.ln() + fz * t;
        let xb = x0 - z + log_norm_cdf(b);
        let xa = x0 + z + log_norm_cdf(a);
        let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
        Self {
            z,
            fz,
            p_exp: 1.0 / (1.0 + q_over_p),
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let x = if rng.random::<f64>() < self.p_exp {
                let e: f64 = Exp1.sample(rng);
                PG_TRUNC + e / self.fz
            } else {
                truncated_inverse_gaussian(self.z, rng)
            };
            let mut s = series_coef(0, x);
            let y = rng.random::<f64>() * s;
            let mut n = 0u32;
            loop {
                n += 1;
                if n % 2 == 1 {
                    s -= series_coef(n, x);
                    if y <= s {
                        return 0.25 * x;
                    }
                } else {
                    s += series_coef(n, x);
                    if y > s {
                        break;
                    }
                }
            }
        }
    }
}

fn log_norm_cdf(x: f64) -> f64 {
    (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
}

// Piecewise coefficients a_n(x) of the J*(1) density series.
fn series_coef(n: u32, x: f64) -> f64 {
    let k = (f64::from(n) + 0.5) * PI;
    if x > PG_TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else if x > 0.0 {
        let h = f64::from(n) + 0.5;
        let expnt = -1.5 * ((0.5 * PI).ln() + x.ln()) + k.ln() - 2.0 * h * h / x;
        expnt.exp()
    } else {
        0.0
    }
}

// Inverse-Gaussian(1/z, 1) truncated to (0, PG_TRUNC).
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let t = PG_TRUNC;
    if z < 1.0 / t {
        loop {
            let (mut e1, mut e2): (f64, f64) = (Exp1.sample(rng), Exp1.sample(rng));
            while e1 * e1 > 2.0 * e2 / t {
                e1 = Exp1.sample(rng);
                e2 = Exp1.sample(rng);
            }
            let denom = 1.0 + e1 * t;
            let x = t / (denom * denom);
            let alpha = (-0.5 * z * z * x).exp();
            if rng.random::<f64>() <= alpha {
                return x;
            }
        }
    } else {
        let mu = 1.0 / z;
        loop {
            let n: f64 = StandardNormal.sample(rng);
            let y = n * n;
            let mu_y = mu * y;
            let mut x = mu + 0.5 * mu * mu_y - 0.5 * mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x <= t {
                return x;
            }
        }
    }
}

/// One draw from `PG(b, c)`: the exact alternating-series rejection sampler
/// for `PG(1, c)`, summed `b` times.
pub fn sample_polya_gamma<R: Rng + ?Sized>(params: PolyaGammaParams, rng: &mut R) -> f64 {
    let proposal = JStarProposal::new(params.tilt_c);
    (0..params.shape_b).map(|_| proposal.draw(rng)).sum()
}

/// Checked form of [`sample_polya_gamma`] for raw `(b, c)` arguments.
pub fn polya_gamma<R: Rng + ?Sized>(shape_b: u32, tilt_c: f64, rng: &mut R) -> Result<f64> {
    Ok(sample_polya_gamma(
        PolyaGammaParams::new(shape_b, tilt_c)?,
        rng,
    ))
}

/// `mean + L·u` with `u` standard normal. `lower` must be a Cholesky factor.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    lower: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let n = mean.len();
    if lower.nrows() != n || lower.ncols() != n {
        return Err(Error::Dimension(format!(
            "mean has length {n}, factor is {}x{}",
            lower.nrows(),
            lower.ncols()
        )));
    }
    if let Some(i) = (0..n).find(|&i| !(lower[(i, i)] > 0.0) || !lower[(i, i)].is_finite()) {
        return Err(Error::Factorization {
            what: "covariance factor",
            detail: format!("diagonal entry {i} is {}", lower[(i, i)]),
        });
    }
    let u: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    // only the lower triangle takes part
    let mut out = mean.clone();
    for j in 0..n {
        let uj = u[j];
        for i in j..n {
            out[i] += lower[(i, j)] * uj;
        }
    }
    Ok(out)
}

/// Draw with density proportional to `x^(-shape-1) exp(-rate / x)`.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0) || !shape.is_finite() {
        return Err(Error::invalid("shape", shape));
    }
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::invalid("rate", rate));
    }
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::invalid("gamma", e))?;
    Ok(1.0 / g.sample(rng))
}

/// Index drawn with probability proportional to `exp(logw[j])`.
pub fn sample_categorical_logweights<R: Rng + ?Sized>(logw: &[f64], rng: &mut R) -> Result<usize> {
    let mut buf = logw.to_vec();
    sample_categorical_in_place(&mut buf, rng)
}

/// Same law as [`sample_categorical_logweights`], overwriting `logw` with
/// the unnormalized weights `exp(logw - max)`.
pub fn sample_categorical_in_place<R: Rng + ?Sized>(
    logw: &mut [f64],
    rng: &mut R,
) -> Result<usize> {
    let mut max = f64::NEG_INFINITY;
    for &w in logw.iter() {
        if w.is_nan() || w == f64::INFINITY {
            return Err(Error::invalid("log-weight", w));
        }
        if w > max {
            max = w;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights { index: None });
    }
    let mut total = 0.0;
    for w in logw.iter_mut() {
        *w = (*w - max).exp();
        total += *w;
    }
    Ok(pick_cumulative(logw, total, rng))
}

/// Inverse-CDF pick from nonnegative weights summing to `total`.
pub(crate) fn pick_cumulative<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (j, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = j;
            if acc > u {
                return j;
            }
        }
    }
    last_positive
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Negative-binomial log mass with logit-linear predictor `psi`:
/// `log C(y+r-1, y) + y·psi - (y+r)·log(1+e^psi)`.
pub fn negbin_logpmf(y: u64, r: u32, psi: f64) -> f64 {
    let yf = y as f64;
    let rf = f64::from(r);
    ln_gamma(yf + rf) - ln_gamma(rf) - ln_gamma(yf + 1.0) + yf * psi - (yf + rf) * softplus(psi)
}

/// Standard normal log density.
#[inline]
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * PI * var).ln() + d * d / var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn pg_rejects_bad_params() {
        assert!(PolyaGammaParams::new(0, 1.0).is_err());
        assert!(PolyaGammaParams::new(1, f64::NAN).is_err());
        assert!(PolyaGammaParams::new(1, f64::INFINITY).is_err());
    }

    #[test]
    fn pg_closed_form_mean_limits() {
        let p = PolyaGammaParams::new(1, 0.0).unwrap();
        assert!((p.mean() - 0.25).abs() < 1e-15);
        let p = PolyaGammaParams::new(3, 1.7).unwrap();
        assert!((p.mean() - 3.0 / 3.4 * (0.85f64).tanh()).abs() < 1e-15);
    }

    #[test]
    fn pg_shape_additivity() {
        let mut rng = RandomSource::new(5, 0);
        let n = 40_000;
        let one: Vec<f64> = (0..n)
            .map(|_| polya_gamma(1, 1.3, &mut rng).unwrap())
            .collect();
        let two: Vec<f64> = (0..n)
            .map(|_| polya_gamma(2, 1.3, &mut rng).unwrap())
            .collect();
        let (m1, v1) = mean_var(&one);
        let (m2, v2) = mean_var(&two);
        let se = (v1 * 4.0 / n as f64 + v2 / n as f64).sqrt();
        assert!((m2 - 2.0 * m1).abs() < 4.0 * se);
    }

    #[test]
    fn pg_large_tilt_is_finite_and_positive() {
        let mut rng = RandomSource::new(1, 1);
        for &c in &[50.0, -200.0, 1e4] {
            for _ in 0..200 {
                let x = polya_gamma(3, c, &mut rng).unwrap();
                assert!(x.is_finite() && x > 0.0);
            }
        }
    }

    #[test]
    fn mvn_identity_variances() {
        let mut rng = RandomSource::new(2, 0);
        let mean = DVector::zeros(2);
        let l = DMatrix::identity(2, 2);
        let n = 100_000;
        let mut s = [0.0; 2];
        let mut ss = [0.0; 2];
        for _ in 0..n {
            let x = sample_mvn(&mean, &l, &mut rng).unwrap();
            for k in 0..2 {
                s[k] += x[k];
                ss[k] += x[k] * x[k];
            }
        }
        for k in 0..2 {
            let m = s[k] / n as f64;
            let v = ss[k] / n as f64 - m * m;
            // SE of a sample variance of N(0,1) is sqrt(2/n)
            assert!((v - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt(), "v = {v}");
        }
    }

    #[test]
    fn mvn_recovers_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let l = cov.clone().cholesky().unwrap().l();
        // direct product oracle
        let llt = &l * l.transpose();
        assert!((llt - &cov).abs().max() < 1e-12);
        let mean = DVector::from_vec(vec![1.0, 2.0]);
        let mut rng = RandomSource::new(3, 0);
        let n = 100_000;
        let draws: Vec<DVector<f64>> = (0..n)
            .map(|_| sample_mvn(&mean, &l, &mut rng).unwrap())
            .collect();
        let mut m = DVector::zeros(2);
        for d in &draws {
            m += d;
        }
        m /= n as f64;
        let mut c = DMatrix::zeros(2, 2);
        for d in &draws {
            let e = d - &m;
            c += &e * e.transpose();
        }
        c /= (n - 1) as f64;
        // var of a sample covariance entry is (s_ij^2 + s_ii s_jj)/n
        for i in 0..2 {
            for j in 0..2 {
                let se = ((cov[(i, j)].powi(2) + cov[(i, i)] * cov[(j, j)]) / n as f64).sqrt();
                assert!(
                    (c[(i, j)] - cov[(i, j)]).abs() < 4.0 * se,
                    "{i}{j}: {}",
                    c[(i, j)]
                );
            }
        }
        assert!((m[0] - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn mvn_degenerate_variance() {
        let mut rng = RandomSource::new(4, 0);
        let mean = DVector::from_vec(vec![5.0]);
        let l = DMatrix::from_element(1, 1, 1e-4);
        for _ in 0..100 {
            let x = sample_mvn(&mean, &l, &mut rng).unwrap();
            assert!((x[0] - 5.0).abs() < 1e-2);
        }
    }

    #[test]
    fn mvn_rejects_bad_factor() {
        let mut rng = RandomSource::new(4, 0);
        let mean = DVector::zeros(2);
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.0]);
        assert!(matches!(
            sample_mvn(&mean, &l, &mut rng),
            Err(Error::Factorization { .. })
        ));
    }

    #[test]
    fn inverse_gamma_moments() {
        let mut rng = RandomSource::new(6, 0);
        for &(shape, rate, expected) in &[(3.0, 2.0, 1.0), (2.0, 2.0, 2.0)] {
            let n = 100_000;
            let xs: Vec<f64> = (0..n)
                .map(|_| sample_inverse_gamma(shape, rate, &mut rng).unwrap())
                .collect();
            if shape > 2.0 {
                let (m, v) = mean_var(&xs);
                assert!((m - expected).abs() < 3.0 * (v / n as f64).sqrt());
            } else {
                // infinite variance at shape 2: compare medians with the
                // inverse-gamma median rate / Gamma(shape,1).median
                let mut s = xs.clone();
                s.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let med = s[n / 2];
                // Gamma(2,1) median = 1.678346990016661
                let target = rate / 1.678_346_990_016_661;
                assert!(
                    (med - target).abs() / target < 0.02,
                    "median {med} vs {target}"
                );
            }
        }
        assert!(sample_inverse_gamma(0.0, 1.0, &mut rng).is_err());
        assert!(sample_inverse_gamma(1.0, -1.0, &mut rng).is_err());
    }

    #[test]
    fn categorical_basic_laws() {
        let mut rng = RandomSource::new(8, 0);
        let n = 60_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_categorical_logweights(&[0.0, 0.0, 0.0], &mut rng).unwrap()] += 1;
        }
        for c in counts {
            let p = c as f64 / n as f64;
            assert!((p - 1.0 / 3.0).abs() < 4.0 * (2.0 / 9.0 / n as f64).sqrt());
        }
        for _ in 0..1000 {
            assert_eq!(
                sample_categorical_logweights(&[0.0, f64::NEG_INFINITY], &mut rng).unwrap(),
                0
            );
        }
        let shifted = [1.0f64.ln() + 1000.0, 3.0f64.ln() + 1000.0];
        let ones = (0..n)
            .filter(|_| sample_categorical_logweights(&shifted, &mut rng).unwrap() == 1)
            .count();
        let p = ones as f64 / n as f64;
        assert!((p - 0.75).abs() < 4.0 * (0.75 * 0.25 / n as f64).sqrt());
        assert!(matches!(
            sample_categorical_logweights(&[f64::NEG_INFINITY; 4], &mut rng),
            Err(Error::DegenerateWeights { .. })
        ));
    }

    #[test]
    fn negbin_examples() {
        assert!((negbin_logpmf(0, 1, 0.0) - 0.5f64.ln()).abs() < 1e-12);
        assert!((negbin_logpmf(2, 3, 0.0) - (6.0f64 / 32.0).ln()).abs() < 1e-12);
        let total: f64 = (0..=500).map(|y| negbin_logpmf(y, 5, 1.0).exp()).sum();
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
