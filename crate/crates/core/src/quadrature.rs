//! Deterministic quadrature building blocks: Gauss–Legendre rules and an
//! adaptive Gauss–Kronrod (7/15) integrator with a fixed, depth-first
//! subdivision order so results never depend on scheduling.

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Computes the `n`-point rule by Newton iteration on `P_n`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = 1.0;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
                }
                pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
                let dz = p1 / pp;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            let w = 2.0 / ((1.0 - z * z) * pp * pp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut s = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s += w * f(mid + half * x);
        }
        s * half
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, w * half))
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = fc * WGK[7];
    let mut rg = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        rk += WGK[j] * s;
        if j % 2 == 1 {
            rg += WG[j / 2] * s;
        }
    }
    (rk * h, ((rk - rg) * h).abs())
}

const ROUNDING_FLOOR: f64 = 50.0 * f64::EPSILON;

/// Adaptive Gauss–Kronrod integration of `f` over the finite interval `[a, b]`.
///
/// Returns an error if the requested tolerance `max(abs_tol, rel_tol*|I|)` is
/// not met within `max_depth` bisections. Subintervals whose error estimate is
/// at the rounding level of their own value are accepted, so unattainably
/// tight tolerances cannot trigger exhaustive subdivision.
pub fn integrate_adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_depth: usize,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (whole, err) = gk15(&mut f, a, b);
    if !whole.is_finite() {
        return Err(Error::Numeric(format!("non-finite integrand on [{a}, {b}]")));
    }
    let tol = abs_tol.max(rel_tol * whole.abs());
    if err <= tol {
        return Ok(whole);
    }
    let mut stack = vec![(a, b, whole, err, 0usize, tol)];
    let mut total = 0.0;
    let mut failed: Option<(f64, f64)> = None;
    while let Some((lo, hi, val, e, depth, t)) = stack.pop() {
        if e <= t || e <= ROUNDING_FLOOR * val.abs() || (hi - lo).abs() < 1e-15 * (1.0 + lo.abs()) {
            total += val;
            continue;
        }
        if depth >= max_depth {
            failed.get_or_insert((lo, hi));
            total += val;
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let left = gk15(&mut f, lo, mid);
        let right = gk15(&mut f, mid, hi);
        // push right first so the left half is refined first
        stack.push((mid, hi, right.0, right.1, depth + 1, 0.5 * t));
        stack.push((lo, mid, left.0, left.1, depth + 1, 0.5 * t));
    }
    if let Some((lo, hi)) = failed {
        return Err(Error::Numeric(format!(
            "adaptive quadrature did not converge near [{lo}, {hi}]"
        )));
    }
    if !total.is_finite() {
        return Err(Error::Numeric(format!("non-finite integral on [{a}, {b}]")));
    }
    Ok(total)
}

/// Integrates `f(x)` over `[a, a + L]` where `f` behaves like `(x - a)^p`
/// near `a` with `p > -1` (possibly times a logarithm), by the substitution
/// `x = a + L u^k` with `k = max(2, 2/(1+p))`, under which the transformed
/// integrand vanishes at `u = 0`.
pub fn integrate_endpoint_singular<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    len: f64,
    p: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64> {
    let k = (2.0 / (1.0 + p)).max(2.0);
    integrate_adaptive(
        |u| {
            if u <= 0.0 {
                return 0.0;
            }
            let x = a + len * u.powf(k);
            f(x) * len * k * u.powf(k - 1.0)
        },
        0.0,
        1.0,
        abs_tol,
        rel_tol,
        40,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_polynomial_exactness() {
        let gl = GaussLegendre::new(8);
        // exact for degree <= 15
        let v = gl.integrate(0.0, 2.0, |x| x.powi(15));
        assert_relative_eq!(v, 2f64.powi(16) / 16.0, max_relative = 1e-13);
        let w: f64 = gl.weights.iter().sum();
        assert_relative_eq!(w, 2.0, max_relative = 1e-14);
    }

    #[test]
    fn adaptive_smooth_and_kinked() {
        let v = integrate_adaptive(|x| x.exp(), 0.0, 1.0, 1e-14, 1e-13, 30).unwrap();
        assert_relative_eq!(v, 1f64.exp() - 1.0, max_relative = 1e-13);
        let v = integrate_adaptive(|x: f64| x.abs(), -1.0, 2.0, 1e-13, 1e-12, 50).unwrap();
        assert_relative_eq!(v, 2.5, max_relative = 1e-11);
    }

    #[test]
    fn endpoint_singular_beta_integral() {
        // int_0^1 t^{-0.6} (1-t)^{-0.8} dt = B(0.4, 0.2), split at 1/2
        let a = 0.4;
        let b = 0.2;
        let left = integrate_endpoint_singular(
            |t| t.powf(a - 1.0) * (1.0 - t).powf(b - 1.0),
            0.0,
            0.5,
            a - 1.0,
            1e-14,
            1e-12,
        )
        .unwrap();
        let right = integrate_endpoint_singular(
            |u| (1.0 - u).powf(a - 1.0) * u.powf(b - 1.0),
            0.0,
            0.5,
            b - 1.0,
            1e-14,
            1e-12,
        )
        .unwrap();
        assert_relative_eq!(
            left + right,
            crate::special::beta_fn(a, b).unwrap(),
            max_relative = 1e-10
        );
    }
}
