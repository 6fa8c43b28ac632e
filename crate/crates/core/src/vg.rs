//! The Variance–Gamma law `VG(r, theta, sigma, mu)`.
//!
//! Density
//! `p(x) = e^{theta (x-mu)/sigma^2} / (sigma sqrt(pi) Gamma(r/2))
//!         * (|x-mu| / (2 sqrt(theta^2+sigma^2)))^{(r-1)/2}
//!         * K_{(r-1)/2}(sqrt(theta^2+sigma^2) |x-mu| / sigma^2)`,
//! and the centered family fixes `mu = -r theta` so that the mean is zero.

use num_complex::Complex64;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate_adaptive, integrate_endpoint_singular};
use crate::rng::sample_blocks;
use crate::special::{bessel_k_scaled, gamma_unchecked, ln_gamma_unchecked};

/// Parameters of a Variance–Gamma law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VgParams {
    pub r: f64,
    pub theta: f64,
    pub sigma: f64,
    pub mu: f64,
}

/// Parameters of a Variance–Gamma law that lives in the second chaos:
/// `r` copies each of the eigenvalues `alpha` and `-beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChaosVgParams {
    pub alpha: f64,
    pub beta: f64,
    pub r: u32,
}

impl ChaosVgParams {
    pub fn new(alpha: f64, beta: f64, r: u32) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0) || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::Precondition(format!(
                "alpha and beta must be positive, got ({alpha}, {beta})"
            )));
        }
        if r == 0 {
            return Err(Error::Precondition("multiplicity r must be at least 1".into()));
        }
        Ok(ChaosVgParams { alpha, beta, r })
    }

    pub fn theta(&self) -> f64 {
        self.alpha - self.beta
    }

    pub fn sigma(&self) -> f64 {
        2.0 * (self.alpha * self.beta).sqrt()
    }
}

/// Value of the density together with a flag for the singular point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityValue {
    pub value: f64,
    /// `true` when `x = mu` and `r <= 1`, where the density is infinite.
    pub singular: bool,
}

impl VgParams {
    /// A general (possibly non-centered) law.
    pub fn new(r: f64, theta: f64, sigma: f64, mu: f64) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Precondition(format!("r must be positive, got {r}")));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Precondition(format!("sigma must be positive, got {sigma}")));
        }
        if !theta.is_finite() || !mu.is_finite() {
            return Err(Error::Precondition("theta and mu must be finite".into()));
        }
        Ok(VgParams { r, theta, sigma, mu })
    }

    /// The centered law `VG_c(r, theta, sigma)` with `mu = -r theta`.
    pub fn centered(r: f64, theta: f64, sigma: f64) -> Result<Self> {
        Self::new(r, theta, sigma, -r * theta)
    }

    /// Dictionary from chaos eigenvalue data: `theta = alpha - beta`, `sigma = 2 sqrt(alpha beta)`.
    pub fn from_chaos_params(c: &ChaosVgParams) -> Self {
        let r = c.r as f64;
        let theta = c.theta();
        VgParams {
            r,
            theta,
            sigma: c.sigma(),
            mu: -r * theta,
        }
    }

    pub fn is_centered(&self) -> bool {
        self.mu == -self.r * self.theta
    }

    fn require_centered(&self, op: &str) -> Result<()> {
        if self.is_centered() {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "{op} requires a centered law (mu = -r theta), got mu = {}",
                self.mu
            )))
        }
    }

    /// Bessel order `(r-1)/2`.
    pub fn nu(&self) -> f64 {
        0.5 * (self.r - 1.0)
    }

    fn c(&self) -> f64 {
        self.theta.hypot(self.sigma)
    }

    /// Exponential decay rates of the right and left tails.
    pub fn tail_rates(&self) -> (f64, f64) {
        let s2 = self.sigma * self.sigma;
        let c = self.c();
        ((c - self.theta) / s2, (c + self.theta) / s2)
    }

    /// Density at `x`; infinite (and flagged) at `x = mu` when `r <= 1`.
    pub fn density(&self, x: f64) -> DensityValue {
        let d = x - self.mu;
        let nu = self.nu();
        let s2 = self.sigma * self.sigma;
        let c = self.c();
        if d == 0.0 {
            if self.r <= 1.0 {
                return DensityValue {
                    value: f64::INFINITY,
                    singular: true,
                };
            }
            // K_nu(z) ~ Gamma(nu)/2 (2/z)^nu as z -> 0
            let v = gamma_unchecked(nu) / (2.0 * self.sigma * std::f64::consts::PI.sqrt())
                / gamma_unchecked(0.5 * self.r)
                * (s2 / (c * c)).powf(nu);
            return DensityValue {
                value: v,
                singular: false,
            };
        }
        DensityValue {
            value: self.ln_density_off_center(d).exp(),
            singular: false,
        }
    }

    fn ln_density_off_center(&self, d: f64) -> f64 {
        let nu = self.nu();
        let s2 = self.sigma * self.sigma;
        let c = self.c();
        let ad = d.abs();
        let z = c * ad / s2;
        let k = bessel_k_scaled(nu.abs(), z).unwrap_or(f64::NAN);
        -(self.sigma * std::f64::consts::PI.sqrt()).ln() - ln_gamma_unchecked(0.5 * self.r)
            + self.theta * d / s2
            + nu * (ad / (2.0 * c)).ln()
            + k.ln()
            - z
    }

    /// `E[h(Y)]` by quadrature against the density, split at `mu`.
    pub fn expect<H: Fn(f64) -> f64>(&self, h: H) -> Result<f64> {
        let (rate_right, rate_left) = self.tail_rates();
        let mut total = 0.0;
        for (sign, rate) in [(1.0, rate_right), (-1.0, rate_left)] {
            let w = 1.0 / rate;
            let g = |u: f64| {
                if u == 0.0 {
                    return 0.0;
                }
                let d = sign * u;
                h(self.mu + d) * self.ln_density_off_center(d).exp()
            };
            // the density behaves like |x - mu|^{min(r-1, 0)} at the center
            let p = (self.r - 1.0).min(0.0);
            let mut side = integrate_endpoint_singular(g, 0.0, w, p, 1e-15, 1e-12)?;
            let n_panels = 80;
            for k in 1..n_panels {
                let a = k as f64 * w;
                side += integrate_adaptive(g, a, a + w, 1e-16, 1e-12, 30)?;
            }
            total += side;
        }
        Ok(total)
    }

    /// Cumulants `kappa_2 .. kappa_6` of the centered law.
    pub fn cumulants_2_to_6(&self) -> Result<[f64; 5]> {
        self.require_centered("cumulants_2_to_6")?;
        let (r, t, s) = (self.r, self.theta, self.sigma);
        let t2 = t * t;
        let s2 = s * s;
        Ok([
            r * (s2 + 2.0 * t2),
            2.0 * r * t * (3.0 * s2 + 4.0 * t2),
            6.0 * r * (s2 * s2 + 8.0 * s2 * t2 + 8.0 * t2 * t2),
            24.0 * r * t * (5.0 * s2 * s2 + 20.0 * s2 * t2 + 16.0 * t2 * t2),
            120.0 * r * (s2 + 2.0 * t2) * (s2 * s2 + 16.0 * s2 * t2 + 16.0 * t2 * t2),
        ])
    }

    /// The linear cumulant relation
    /// `k6/5! - 4 theta k5/4! + (4 theta^2 - 2 sigma^2) k4/3! + 4 theta sigma^2 k3/2! + sigma^4 k2`,
    /// returned as `(value, scale)` where `scale` is the sum of absolute terms.
    pub fn cumulant_identity_residual(&self) -> Result<(f64, f64)> {
        let k = self.cumulants_2_to_6()?;
        let (t, s2) = (self.theta, self.sigma * self.sigma);
        let terms = [
            k[4] / 120.0,
            -4.0 * t * k[3] / 24.0,
            (4.0 * t * t - 2.0 * s2) * k[2] / 6.0,
            4.0 * t * s2 * k[1] / 2.0,
            s2 * s2 * k[0],
        ];
        Ok((terms.iter().sum(), terms.iter().map(|v| v.abs()).sum()))
    }

    /// `n` i.i.d. draws `mu + theta G + sigma sqrt(G) N` with `G ~ Gamma(r/2, rate 1/2)`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let gamma = Gamma::new(0.5 * self.r, 2.0).expect("validated shape");
        let (mu, theta, sigma) = (self.mu, self.theta, self.sigma);
        sample_blocks(n, seed, |rng, out| {
            for v in out.iter_mut() {
                let g: f64 = gamma.sample(rng);
                let z: f64 = StandardNormal.sample(rng);
                *v = mu + theta * g + sigma * g.sqrt() * z;
            }
        })
    }

    /// `1/phi_Y(t)^2 = e^{2 i t theta r} (1 - 2 i theta t + sigma^2 t^2)^r` for the centered law.
    pub fn char_fn_inv_sq(&self, t: f64) -> Result<Complex64> {
        self.require_centered("char_fn_inv_sq")?;
        if t == 0.0 {
            return Ok(Complex64::new(1.0, 0.0));
        }
        let base = Complex64::new(1.0 + self.sigma * self.sigma * t * t, -2.0 * self.theta * t);
        let phase = Complex64::new(0.0, 2.0 * t * self.theta * self.r).exp();
        Ok(phase * base.powf(self.r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::batched_cumulants;
    use approx::assert_relative_eq;

    fn grid() -> Vec<VgParams> {
        let mut v = Vec::new();
        for &r in &[0.5, 1.0, 2.0, 5.0] {
            for &t in &[-1.0, 0.0, 1.0] {
                for &s in &[0.5, 1.0, 2.0] {
                    v.push(VgParams::centered(r, t, s).unwrap());
                }
            }
        }
        v
    }

    #[test]
    fn laplace_values() {
        let p = VgParams::new(2.0, 0.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(p.density(0.0).value, 0.5, max_relative = 1e-12);
        assert_relative_eq!(p.density(1.3).value, 0.5 * (-1.3f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(p.density(-1.3).value, 0.5 * (-1.3f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn singular_center_is_flagged() {
        let p = VgParams::centered(1.0, 0.0, 1.0).unwrap();
        let d = p.density(0.0);
        assert!(d.singular && d.value.is_infinite());
        let p = VgParams::centered(3.0, 0.5, 1.0).unwrap();
        let d = p.density(p.mu);
        assert!(!d.singular && d.value.is_finite());
        // continuity at the center when r > 1
        assert_relative_eq!(d.value, p.density(p.mu + 1e-9).value, max_relative = 1e-6);
    }

    #[test]
    fn density_normalizes_on_grid() {
        for p in grid() {
            let mass = p.expect(|_| 1.0).unwrap();
            assert!((mass - 1.0).abs() < 1e-6, "mass {mass} for {p:?}");
            let mean = p.expect(|x| x).unwrap();
            assert!(mean.abs() < 1e-6 * (1.0 + p.mu.abs()), "mean {mean} for {p:?}");
            let var = p.expect(|x| x * x).unwrap();
            let k = p.cumulants_2_to_6().unwrap();
            assert_relative_eq!(var, k[0], max_relative = 1e-6);
        }
    }

    #[test]
    fn density_symmetric_when_theta_zero() {
        let p = VgParams::new(1.7, 0.0, 1.3, 0.0).unwrap();
        for &x in &[0.1, 0.7, 3.0, 11.0] {
            assert_eq!(p.density(x).value, p.density(-x).value);
        }
    }

    #[test]
    fn cumulant_identity_on_grid() {
        for p in grid() {
            let (v, scale) = p.cumulant_identity_residual().unwrap();
            assert!(v.abs() <= 1e-12 * scale, "{v} vs {scale} for {p:?}");
            if p.theta == 0.0 {
                let k = p.cumulants_2_to_6().unwrap();
                assert_eq!(k[1], 0.0);
                assert_eq!(k[3], 0.0);
            }
        }
    }

    #[test]
    fn cumulant_examples() {
        let k = VgParams::centered(1.0, 0.0, 1.0).unwrap().cumulants_2_to_6().unwrap();
        assert_eq!(k, [1.0, 0.0, 6.0, 0.0, 120.0]);
        // sigma -> 0 limit matches chi-square: 2^{p-1}(p-1)!
        let k = VgParams::centered(1.0, 1.0, 1e-9).unwrap().cumulants_2_to_6().unwrap();
        for (got, want) in k.iter().zip([2.0, 8.0, 48.0, 384.0, 3840.0]) {
            assert_relative_eq!(*got, want, max_relative = 1e-12);
        }
        assert!(VgParams::new(1.0, 1.0, 1.0, 0.0).unwrap().cumulants_2_to_6().is_err());
    }

    #[test]
    fn cumulants_match_density_moments() {
        // independent route: raw moments of the density by quadrature
        let p = VgParams::centered(2.5, 0.4, 0.8).unwrap();
        let m: Vec<f64> = (2..=4).map(|k| p.expect(|x| x.powi(k)).unwrap()).collect();
        let k = p.cumulants_2_to_6().unwrap();
        assert_relative_eq!(m[0], k[0], max_relative = 1e-8);
        assert_relative_eq!(m[1], k[1], max_relative = 1e-8);
        assert_relative_eq!(m[2] - 3.0 * m[0] * m[0], k[2], max_relative = 1e-8);
    }

    #[test]
    fn chaos_dictionary() {
        let p = VgParams::from_chaos_params(&ChaosVgParams::new(0.5, 0.5, 1).unwrap());
        assert_eq!((p.r, p.theta, p.sigma, p.mu), (1.0, 0.0, 1.0, 0.0));
        let p = VgParams::from_chaos_params(&ChaosVgParams::new(1.0, 1.0, 3).unwrap());
        assert_eq!((p.r, p.theta, p.sigma), (3.0, 0.0, 2.0));
        assert!(p.is_centered());
        assert!(ChaosVgParams::new(0.0, 1.0, 1).is_err());
        assert!(ChaosVgParams::new(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn char_fn_values() {
        let p = VgParams::centered(1.0, 0.0, 1.0).unwrap();
        assert_eq!(p.char_fn_inv_sq(0.0).unwrap(), Complex64::new(1.0, 0.0));
        let v = p.char_fn_inv_sq(1.0).unwrap();
        assert_relative_eq!(v.re, 2.0, max_relative = 1e-14);
        assert!(v.im.abs() < 1e-14);
    }

    #[test]
    fn char_fn_matches_empirical() {
        let p = VgParams::centered(2.0, 0.5, 1.0).unwrap();
        let xs = p.sample(1_000_000, 11);
        for &t in &[0.3, 0.7, 1.2] {
            let (mut re, mut im) = (0.0, 0.0);
            for &x in &xs {
                re += (t * x).cos();
                im += (t * x).sin();
            }
            let n = xs.len() as f64;
            let phi2 = (re / n).powi(2) + (im / n).powi(2);
            let want = p.char_fn_inv_sq(t).unwrap().norm();
            assert_relative_eq!(1.0 / phi2, want, max_relative = 0.02);
        }
    }

    #[test]
    fn sample_moments() {
        let p = VgParams::centered(1.0, 0.0, 1.0).unwrap();
        let xs = p.sample(1_000_000, 3);
        let k = batched_cumulants(&xs, 20);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.004);
        assert!((k[0].value - 1.0).abs() < 0.02);
        let p = VgParams::centered(2.0, 0.5, 1.0).unwrap();
        let xs = p.sample(1_000_000, 4);
        let k = batched_cumulants(&xs, 20);
        assert!((k[1].value - 8.0).abs() < 4.0 * k[1].se, "{:?}", k[1]);
        assert_eq!(xs, p.sample(1_000_000, 4));
        assert!(p.sample(0, 4).is_empty());
    }
}
