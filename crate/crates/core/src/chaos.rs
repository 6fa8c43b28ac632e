//! Second-Wiener-chaos random variables `F = sum_i c_i (N_i^2 - 1)`.
//!
//! Every quantity is a functional of the eigenvalue sequence `c`:
//! cumulants `kappa_p = 2^{p-1} (p-1)! sum c^p`, and the centered iterated
//! Gamma operators `Gamma_j - E Gamma_j = sum_i 2^j c_i^{j+1} (N_i^2 - 1)`,
//! whose linear combinations have variances that are linear combinations of
//! cumulants.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, sample_blocks, stream_rng};
use crate::vg::{ChaosVgParams, VgParams};

/// Highest cumulant order exposed by [`SecondChaosElement::cumulant`].
///
/// Order 20 is the largest needed by the variance inequalities at `ell = 3`.
pub const MAX_CUMULANT_ORDER: usize = 24;

/// A finite-spectrum element of the second Wiener chaos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SecondChaosElement {
    eigenvalues: Vec<f64>,
}

impl TryFrom<Vec<f64>> for SecondChaosElement {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        SecondChaosElement::new(v)
    }
}

impl From<SecondChaosElement> for Vec<f64> {
    fn from(f: SecondChaosElement) -> Self {
        f.eigenvalues
    }
}

/// The cumulant-distance statistics between a chaos element and a VG target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MStatistic {
    /// `max_{l=2..6} |kappa_l(F) - kappa_l(Y)|`.
    pub m: f64,
    /// The same maximum with `l = 5` left out.
    pub m_prime: f64,
    /// Smallest order attaining `m` (ties within 1e-12 relative).
    pub argmax: usize,
    /// `kappa_l(F) - kappa_l(Y)` for `l = 2..6`.
    pub diffs: [f64; 5],
}

/// A variance value together with the sum of absolute cumulant terms that
/// produced it, which sets the scale of its rounding error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledValue {
    pub value: f64,
    pub scale: f64,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

impl SecondChaosElement {
    /// Validates a nonempty spectrum of finite, nonzero entries.
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::Precondition("spectrum must be nonempty".into()));
        }
        if let Some(bad) = eigenvalues.iter().find(|c| !c.is_finite() || **c == 0.0) {
            return Err(Error::Precondition(format!(
                "eigenvalues must be finite and nonzero, found {bad}"
            )));
        }
        Ok(SecondChaosElement { eigenvalues })
    }

    /// The spectrum `alpha` (r times), `-beta` (r times) of a VG law in the chaos.
    pub fn from_chaos_params(c: &ChaosVgParams) -> Self {
        let r = c.r as usize;
        let mut v = vec![c.alpha; r];
        v.extend(std::iter::repeat_n(-c.beta, r));
        SecondChaosElement { eigenvalues: v }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `sum_i c_i^p`.
    pub fn power_sum(&self, p: usize) -> f64 {
        self.eigenvalues.iter().map(|c| c.powi(p as i32)).sum()
    }

    /// `kappa_p = 2^{p-1} (p-1)! sum c^p` for `2 <= p <= MAX_CUMULANT_ORDER`.
    pub fn cumulant(&self, p: usize) -> Result<f64> {
        if !(2..=MAX_CUMULANT_ORDER).contains(&p) {
            return Err(Error::Precondition(format!(
                "cumulant order must lie in 2..={MAX_CUMULANT_ORDER}, got {p}"
            )));
        }
        Ok(self.cumulant_unchecked(p))
    }

    fn cumulant_unchecked(&self, p: usize) -> f64 {
        2f64.powi(p as i32 - 1) * factorial(p - 1) * self.power_sum(p)
    }

    /// `kappa_2 .. kappa_6`.
    pub fn cumulants_2_to_6(&self) -> [f64; 5] {
        std::array::from_fn(|i| self.cumulant_unchecked(i + 2))
    }

    /// Rescales the spectrum so that `kappa_2` equals `target`.
    pub fn rescaled_to_kappa2(&self, target: f64) -> Result<Self> {
        if !(target > 0.0) {
            return Err(Error::Precondition(format!("kappa2 target must be positive, got {target}")));
        }
        let s = (target / self.cumulant_unchecked(2)).sqrt();
        SecondChaosElement::new(self.eigenvalues.iter().map(|c| c * s).collect())
    }

    /// `E[Gamma_j(F)] = kappa_{j+1} / j!` for `j >= 1`, and `E[F] = 0`.
    pub fn gamma_mean(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            self.cumulant_unchecked(j + 1) / factorial(j)
        }
    }

    /// `E[Gamma_{l+2}(F) - 2 theta Gamma_{l+1}(F) - sigma^2 Gamma_l(F)]`.
    pub fn gamma_mixed_mean(&self, ell: usize, theta: f64, sigma: f64) -> f64 {
        self.gamma_mean(ell + 2) - 2.0 * theta * self.gamma_mean(ell + 1)
            - sigma * sigma * self.gamma_mean(ell)
    }

    /// `Var(sum_j a_j Gamma_j(F))` with `Gamma_0 = F`, computed from cumulants:
    /// `sum_{j,k} a_j a_k kappa_{j+k+2} / (j+k+1)!`.
    pub fn gamma_combo_variance(&self, coeffs: &[f64]) -> Result<ScaledValue> {
        if coeffs.is_empty() {
            return Ok(ScaledValue { value: 0.0, scale: 0.0 });
        }
        let top = 2 * (coeffs.len() - 1) + 2;
        if top > MAX_CUMULANT_ORDER {
            return Err(Error::Precondition(format!(
                "combination needs cumulant order {top} > {MAX_CUMULANT_ORDER}"
            )));
        }
        let mut value = 0.0;
        let mut scale = 0.0;
        for (j, aj) in coeffs.iter().enumerate() {
            for (k, ak) in coeffs.iter().enumerate() {
                if *aj == 0.0 || *ak == 0.0 {
                    continue;
                }
                let p = j + k + 2;
                let term = aj * ak * self.cumulant_unchecked(p) / factorial(p - 1);
                value += term;
                scale += term.abs();
            }
        }
        Ok(ScaledValue { value, scale })
    }

    /// Coefficients of `Gamma_{l+1} - 2 theta Gamma_l - sigma^2 Gamma_{l-1}`.
    fn lin_coeffs(ell: usize, theta: f64, sigma: f64) -> Vec<f64> {
        let mut a = vec![0.0; ell + 2];
        a[ell + 1] = 1.0;
        a[ell] = -2.0 * theta;
        a[ell - 1] = -sigma * sigma;
        a
    }

    /// `Var(Gamma_{l+1} - 2 theta Gamma_l - sigma^2 Gamma_{l-1})` as the
    /// five-term cumulant combination, with its rounding scale.
    pub fn gamma_lin_variance_scaled(&self, ell: usize, theta: f64, sigma: f64) -> Result<ScaledValue> {
        if ell == 0 {
            return Err(Error::Precondition("ell must be at least 1".into()));
        }
        self.gamma_combo_variance(&Self::lin_coeffs(ell, theta, sigma))
    }

    /// `Var(Gamma_{l+1} - 2 theta Gamma_l - sigma^2 Gamma_{l-1})`, clamped at zero
    /// within rounding; a clearly negative value is reported as an error.
    pub fn gamma_lin_variance(&self, ell: usize, theta: f64, sigma: f64) -> Result<f64> {
        let v = self.gamma_lin_variance_scaled(ell, theta, sigma)?;
        if v.value < -1e-12 * v.scale {
            return Err(Error::Numeric(format!(
                "variance combination is negative: {} (scale {})",
                v.value, v.scale
            )));
        }
        Ok(v.value.max(0.0))
    }

    /// Left side of the second variance estimate: the variance of
    /// `G_{2l+3} - 2 theta G_{2l+2} - sigma^2 G_{2l+1}` with
    /// `G_k = Gamma_k - 2 theta Gamma_{k-1} - sigma^2 Gamma_{k-2}`.
    pub fn nested_gamma_variance(&self, ell: usize, theta: f64, sigma: f64) -> Result<ScaledValue> {
        if ell == 0 {
            return Err(Error::Precondition("ell must be at least 1".into()));
        }
        let w = [1.0, -2.0 * theta, -sigma * sigma];
        let mut a = vec![0.0; 2 * ell + 4];
        for (i, wi) in w.iter().enumerate() {
            for (j, wj) in w.iter().enumerate() {
                a[2 * ell + 3 - i - j] += wi * wj;
            }
        }
        self.gamma_combo_variance(&a)
    }

    /// Cumulant distances `M` and `M'` to a centered VG target.
    pub fn m_statistic(&self, y: &VgParams) -> Result<MStatistic> {
        let ky = y.cumulants_2_to_6()?;
        let kf = self.cumulants_2_to_6();
        let diffs: [f64; 5] = std::array::from_fn(|i| kf[i] - ky[i]);
        let m = diffs.iter().fold(0.0f64, |a, d| a.max(d.abs()));
        let m_prime = diffs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 3)
            .fold(0.0f64, |a, (_, d)| a.max(d.abs()));
        let argmax = diffs
            .iter()
            .position(|d| d.abs() >= m * (1.0 - 1e-12))
            .map(|i| i + 2)
            .unwrap_or(2);
        Ok(MStatistic {
            m,
            m_prime,
            argmax,
            diffs,
        })
    }

    /// `n` i.i.d. draws of `sum_i c_i (N_i^2 - 1)`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let c = &self.eigenvalues;
        sample_blocks(n, seed, |rng, out| {
            for v in out.iter_mut() {
                let mut s = 0.0;
                for ci in c {
                    let z: f64 = StandardNormal.sample(rng);
                    s += ci * (z * z - 1.0);
                }
                *v = s;
            }
        })
    }

    /// Draws using the `k` largest eigenvalues exactly and a Gaussian of matching
    /// variance for the remainder. Cumulants of order >= 3 are affected only by
    /// `sum_{tail} c^p`, which the caller controls through `k`.
    pub fn sample_with_gaussian_tail(&self, n: usize, seed: u64, k: usize) -> Vec<f64> {
        if k >= self.len() {
            return self.sample(n, seed);
        }
        let mut sorted = self.eigenvalues.clone();
        sorted.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
        let head = sorted[..k].to_vec();
        let tail_sd = (2.0 * sorted[k..].iter().map(|c| c * c).sum::<f64>()).sqrt();
        sample_blocks(n, seed, move |rng, out| {
            for v in out.iter_mut() {
                let mut s = 0.0;
                for ci in &head {
                    let z: f64 = StandardNormal.sample(rng);
                    s += ci * (z * z - 1.0);
                }
                let z: f64 = StandardNormal.sample(rng);
                *v = s + tail_sd * z;
            }
        })
    }
}

/// A reproducible random spectrum: length uniform in `1..=max_len`, entries
/// uniform on `[-2, 2]` with zero excluded.
pub fn random_spectrum(seed: u64, index: u64, max_len: usize) -> SecondChaosElement {
    let mut rng = stream_rng(derive_seed(seed, index), 0);
    let len = rng.random_range(1..=max_len);
    let v = (0..len)
        .map(|_| loop {
            let x: f64 = rng.random_range(-2.0..2.0);
            if x != 0.0 {
                break x;
            }
        })
        .collect();
    SecondChaosElement { eigenvalues: v }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(v: &[f64]) -> SecondChaosElement {
        SecondChaosElement::new(v.to_vec()).unwrap()
    }

    /// Spectral oracle: centered Gamma_j has per-eigenvalue coefficient 2^j c^{j+1}.
    fn spectral_variance(f: &SecondChaosElement, coeffs: &[f64]) -> f64 {
        2.0 * f
            .eigenvalues()
            .iter()
            .map(|c| {
                let d: f64 = coeffs
                    .iter()
                    .enumerate()
                    .map(|(j, a)| a * 2f64.powi(j as i32) * c.powi(j as i32 + 1))
                    .sum();
                d * d
            })
            .sum::<f64>()
    }

    #[test]
    fn validation() {
        assert!(SecondChaosElement::new(vec![]).is_err());
        assert!(SecondChaosElement::new(vec![1.0, 0.0]).is_err());
        assert!(SecondChaosElement::new(vec![f64::NAN]).is_err());
        assert!(spec(&[1.0]).cumulant(1).is_err());
        assert!(spec(&[1.0]).cumulant(MAX_CUMULANT_ORDER + 1).is_err());
    }

    #[test]
    fn cumulant_examples() {
        let k: Vec<f64> = (2..=6).map(|p| spec(&[1.0]).cumulant(p).unwrap()).collect();
        assert_eq!(k, vec![2.0, 8.0, 48.0, 384.0, 3840.0]);
        let k = spec(&[0.5, -0.5]).cumulants_2_to_6();
        assert_eq!(k, [1.0, 0.0, 6.0, 0.0, 120.0]);
        let k = spec(&[0.6, -0.4]).cumulants_2_to_6();
        for (got, want) in k.iter().zip([1.04, 1.216, 7.4496, 25.92768, 194.88768]) {
            assert_relative_eq!(*got, want, max_relative = 1e-13);
        }
    }

    #[test]
    fn chaos_vg_round_trip() {
        for &(a, b, r) in &[(0.5, 0.5, 1u32), (1.0, 0.3, 3), (0.2, 0.9, 2)] {
            let c = ChaosVgParams::new(a, b, r).unwrap();
            let f = SecondChaosElement::from_chaos_params(&c);
            let y = VgParams::from_chaos_params(&c);
            let kf = f.cumulants_2_to_6();
            let ky = y.cumulants_2_to_6().unwrap();
            for i in 0..5 {
                assert_relative_eq!(kf[i], ky[i], max_relative = 1e-13, epsilon = 1e-14);
            }
            let m = f.m_statistic(&y).unwrap();
            assert!(m.m < 1e-12 * ky[4].abs().max(1.0));
        }
    }

    #[test]
    fn gamma_mixed_mean_examples() {
        let f = spec(&[0.6, -0.4]);
        assert_relative_eq!(f.gamma_mixed_mean(0, 0.0, 1.0), 0.608, max_relative = 1e-13);
        let c = ChaosVgParams::new(0.7, 0.2, 2).unwrap();
        let y = VgParams::from_chaos_params(&c);
        let fy = SecondChaosElement::from_chaos_params(&c);
        assert_relative_eq!(
            fy.gamma_mixed_mean(0, y.theta, y.sigma),
            y.r * y.theta * y.sigma * y.sigma,
            max_relative = 1e-12
        );
        for ell in 1..5 {
            assert!(fy.gamma_mixed_mean(ell, y.theta, y.sigma).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_lin_variance_examples() {
        let f = spec(&[0.6, -0.4]);
        let v = f.gamma_lin_variance(1, 0.0, 1.0).unwrap();
        let oracle: f64 = 2.0 * [0.6f64, -0.4].iter().map(|c| (4.0 * c.powi(3) - c).powi(2)).sum::<f64>();
        assert_relative_eq!(v, oracle, max_relative = 1e-12);
        assert_relative_eq!(v, 0.180_864, max_relative = 1e-12);
        assert_relative_eq!(spec(&[1.0]).gamma_lin_variance(1, 0.0, 0.0).unwrap(), 32.0, max_relative = 1e-13);
        let c = ChaosVgParams::new(0.8, 0.3, 2).unwrap();
        let y = VgParams::from_chaos_params(&c);
        let v = SecondChaosElement::from_chaos_params(&c)
            .gamma_lin_variance_scaled(1, y.theta, y.sigma)
            .unwrap();
        assert!(v.value.abs() <= 1e-12 * v.scale);
    }

    #[test]
    fn spectral_oracle_agreement() {
        for i in 0..200 {
            let f = random_spectrum(5, i, 10);
            for ell in 1..=3 {
                for &(t, s) in &[(0.0, 1.0), (0.4, 0.7), (-1.1, 1.5)] {
                    let v = f.gamma_lin_variance_scaled(ell, t, s).unwrap();
                    // per-eigenvalue coefficient 2^{l-1} c^l (4c^2 - 4 theta c - sigma^2)
                    let oracle: f64 = 2.0
                        * f.eigenvalues()
                            .iter()
                            .map(|c| {
                                let d = 2f64.powi(ell as i32 - 1)
                                    * c.powi(ell as i32)
                                    * (4.0 * c * c - 4.0 * t * c - s * s);
                                d * d
                            })
                            .sum::<f64>();
                    assert!(
                        (v.value - oracle).abs() <= 1e-12 * v.scale.max(oracle),
                        "ell {ell}: {} vs {oracle}",
                        v.value
                    );
                    let coeffs = SecondChaosElement::lin_coeffs(ell, t, s);
                    assert_relative_eq!(
                        spectral_variance(&f, &coeffs),
                        oracle,
                        max_relative = 1e-10,
                        epsilon = 1e-12 * v.scale
                    );
                }
            }
        }
    }

    #[test]
    fn nested_variance_matches_spectral_form() {
        for i in 0..100 {
            let f = random_spectrum(9, i, 6);
            for ell in 1..=3 {
                let (t, s) = (0.3, 0.9);
                let v = f.nested_gamma_variance(ell, t, s).unwrap();
                // per-eigenvalue coefficient 2^{2l-1} c^{2l} Q^2
                let oracle: f64 = 2.0
                    * f.eigenvalues()
                        .iter()
                        .map(|c| {
                            let q = 4.0 * c * c - 4.0 * t * c - s * s;
                            let d = 2f64.powi(2 * ell as i32 - 1) * c.powi(2 * ell as i32) * q * q;
                            d * d
                        })
                        .sum::<f64>();
                assert!((v.value - oracle).abs() <= 1e-11 * v.scale.max(oracle));
            }
        }
    }

    #[test]
    fn m_statistic_examples() {
        let y = VgParams::centered(1.0, 0.0, 1.0).unwrap();
        let m = spec(&[0.6, -0.4]).m_statistic(&y).unwrap();
        let want = [0.04, 1.216, 1.4496, 25.92768, 74.88768];
        for i in 0..5 {
            assert_relative_eq!(m.diffs[i], want[i], max_relative = 1e-12);
        }
        assert_relative_eq!(m.m, 74.88768, max_relative = 1e-13);
        assert_eq!(m.m, m.m_prime);
        assert_eq!(m.argmax, 6);
        let m = spec(&[0.9, 0.2, -0.2, -0.9]).m_statistic(&y).unwrap();
        assert_eq!(m.diffs[1], 0.0);
        assert_eq!(m.diffs[3], 0.0);
        assert_eq!(m.m, m.m_prime);
    }

    #[test]
    fn json_round_trip() {
        let f = spec(&[0.6, -0.4]);
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, "[0.6,-0.4]");
        let g: SecondChaosElement = serde_json::from_str(&s).unwrap();
        assert_eq!(f, g);
        assert!(serde_json::from_str::<SecondChaosElement>("[0.0]").is_err());
    }

    #[test]
    fn sampling_matches_cumulants() {
        let f = spec(&[0.6, -0.4]);
        let xs = f.sample(1_000_000, 1);
        let k = crate::rng::batched_cumulants(&xs, 20);
        let mean = crate::rng::batched_mean(&xs, 20);
        assert!(mean.value.abs() < 4.0 * mean.se);
        assert!((k[0].value - 1.04).abs() < 4.0 * k[0].se);
        let ys = f.sample_with_gaussian_tail(1000, 2, 5);
        assert_eq!(ys, f.sample(1000, 2));
    }
}
