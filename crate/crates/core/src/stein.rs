//! Numerical solution of the centered Variance–Gamma Stein equation
//!
//! `sigma^2 (x + r theta) f'' + (sigma^2 r + 2 theta (x + r theta)) f' - x f = h(x) - E h(Y)`.
//!
//! In the shifted variable `z = x + r theta` (so that the singular point sits
//! at `z = 0`) the bounded solution has the two-sided Bessel representation,
//! for `z > 0`,
//!
//! `f = -(e^{-beta z} K_nu(alpha z) / (sigma^2 z^nu)) int_0^z e^{beta y} y^nu I_nu(alpha y) h~ dy
//!      -(e^{-beta z} I_nu(alpha z) / (sigma^2 z^nu)) int_z^inf e^{beta y} y^nu K_nu(alpha y) h~ dy`
//!
//! with `h~(y) = h(y - r theta) - E h(Y)` and the mirrored form for `z < 0`.
//! Both integrals are carried as exponentially damped running sums over the
//! grid, so that every quantity stays `O(1)` however far the window extends.
//! The panel rule is fixed (no adaptivity), which makes the solve an exactly
//! linear map of `h`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use crate::special::{bessel_i_scaled_signed, bessel_k_scaled_abs, gamma_unchecked};
use crate::vg::VgParams;

/// Node placement on the solve window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Spacing {
    Uniform,
    /// `x(t) = x_min + (x_max - x_min) (1 + tanh(s (2t - 1)) / tanh(s)) / 2`;
    /// nodes cluster toward the window edges, where `|x + r theta|` and hence
    /// the weight of `f''` in the equation is largest.
    TanhGraded { strength: f64 },
}

/// The solve window and its nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteinGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
    pub spacing: Spacing,
}

impl SteinGrid {
    pub fn new(x_min: f64, x_max: f64, n_points: usize, spacing: Spacing) -> Result<Self> {
        if !(x_min < 0.0 && 0.0 < x_max) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::Precondition(format!(
                "grid must satisfy x_min < 0 < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if n_points < 64 {
            return Err(Error::Precondition(format!(
                "grid needs at least 64 points, got {n_points}"
            )));
        }
        if let Spacing::TanhGraded { strength } = spacing {
            if !(strength > 0.0 && strength.is_finite()) {
                return Err(Error::Precondition(format!(
                    "tanh grading strength must be positive, got {strength}"
                )));
            }
        }
        Ok(SteinGrid {
            x_min,
            x_max,
            n_points,
            spacing,
        })
    }

    pub fn uniform(x_min: f64, x_max: f64, n_points: usize) -> Result<Self> {
        Self::new(x_min, x_max, n_points, Spacing::Uniform)
    }

    /// The same window with the spacing halved (`2n - 1` nodes, nested).
    pub fn refined(&self) -> Self {
        SteinGrid {
            n_points: 2 * self.n_points - 1,
            ..*self
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        let n = self.n_points;
        let span = self.x_max - self.x_min;
        (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                match self.spacing {
                    Spacing::Uniform => {
                        if i == n - 1 {
                            self.x_max
                        } else {
                            self.x_min + span * t
                        }
                    }
                    Spacing::TanhGraded { strength } => {
                        let u = (strength * (2.0 * t - 1.0)).tanh() / strength.tanh();
                        self.x_min + span * 0.5 * (1.0 + u)
                    }
                }
            })
            .collect()
    }
}

/// Built-in test functions for the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteinTestFn {
    X,
    X2,
    Tanh,
    Sin,
    Bump,
    Const,
}

impl SteinTestFn {
    pub const NAMES: [&'static str; 6] = ["x", "x2", "tanh", "sin", "bump", "const"];

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "x" => SteinTestFn::X,
            "x2" => SteinTestFn::X2,
            "tanh" => SteinTestFn::Tanh,
            "sin" => SteinTestFn::Sin,
            "bump" => SteinTestFn::Bump,
            "const" => SteinTestFn::Const,
            other => {
                return Err(Error::Config(format!(
                    "unknown test function '{other}'; available: {}",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            SteinTestFn::X => x,
            SteinTestFn::X2 => x * x,
            SteinTestFn::Tanh => x.tanh(),
            SteinTestFn::Sin => x.sin(),
            SteinTestFn::Bump => (-x * x).exp(),
            SteinTestFn::Const => 1.0,
        }
    }
}

/// A grid-sampled solution with derivative samples and residual diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteinSolution {
    pub grid: SteinGrid,
    pub x: Vec<f64>,
    pub f: Vec<f64>,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    /// Pointwise residual of the Stein equation (zero at the two end nodes,
    /// where no centered stencil exists).
    pub residual: Vec<f64>,
    /// Maximum absolute residual over interior nodes.
    pub residual_max: f64,
    /// `E h(Y)` as used in the centering of `h`.
    pub expectation: f64,
    /// Disagreement of the two one-sided representations at the singular point.
    pub center_gap: f64,
}

impl SteinSolution {
    /// CSV with columns `x,f,f1,f2,residual`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,f,f1,f2,residual\n");
        for i in 0..self.x.len() {
            let _ = writeln!(
                s,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                self.x[i], self.f[i], self.f1[i], self.f2[i], self.residual[i]
            );
        }
        s
    }
}

/// Gauss–Legendre points per panel.
const GL_POINTS: usize = 12;
/// Geometric levels used to resolve the algebraic behaviour at `z = 0`.
const CENTER_LEVELS: usize = 48;

/// Quadrature data along one half line `y > 0` (the mirrored side uses `y = -z`).
struct HalfLine {
    /// Solution nodes on this side, ascending, strictly positive.
    w: Vec<f64>,
    /// Quadrature points and weights for the panel ending at node `i`
    /// (`panels[0]` covers `[0, w_0]`), and the tail beyond the last node.
    panels: Vec<Vec<(f64, f64)>>,
    tail: Vec<(f64, f64)>,
    /// Left end of the tail: the last node, or the end of the lone center panel.
    tail_start: f64,
    /// Drift parameter on this side (`beta` on the right, `-beta` on the left).
    b: f64,
}

fn gl_points(gl: &GaussLegendre, lo: f64, hi: f64, max_width: f64, out: &mut Vec<(f64, f64)>) {
    let n_sub = (((hi - lo) / max_width).ceil() as usize).max(1);
    let step = (hi - lo) / n_sub as f64;
    for k in 0..n_sub {
        let a = lo + step * k as f64;
        let b = if k + 1 == n_sub { hi } else { a + step };
        out.extend(gl.mapped(a, b));
    }
}

/// Points on `[0, len]` for an integrand behaving like `y^p` (or `log y`) at 0:
/// substitution `y = len u^k` with geometric splitting in `u`.
fn center_points(gl: &GaussLegendre, len: f64, p: f64, out: &mut Vec<(f64, f64)>) {
    let k = (2.0 / (1.0 + p)).max(2.0);
    let mut hi = 1.0f64;
    for level in 0..=CENTER_LEVELS {
        let lo = if level == CENTER_LEVELS { 0.0 } else { 0.5 * hi };
        for (u, wu) in gl.mapped(lo, hi) {
            let y = len * u.powf(k);
            if y > 0.0 {
                out.push((y, wu * len * k * u.powf(k - 1.0)));
            }
        }
        hi = lo;
    }
}

impl HalfLine {
    fn new(w: Vec<f64>, alpha: f64, b: f64, nu: f64, gl: &GaussLegendre) -> Self {
        let rate = alpha + b.abs();
        let max_width = 0.5 / rate;
        let p = (2.0 * nu).min(0.0);
        let mut panels = Vec::with_capacity(w.len().max(1));
        let mut prev = 0.0;
        if w.is_empty() {
            // no nodes on this side: one center panel, the rest is tail
            let mut pts = Vec::new();
            center_points(gl, max_width, p, &mut pts);
            panels.push(pts);
            prev = max_width;
        }
        for &wi in &w {
            let mut pts = Vec::new();
            if prev == 0.0 {
                let c = wi.min(max_width);
                center_points(gl, c, p, &mut pts);
                if c < wi {
                    gl_points(gl, c, wi, max_width, &mut pts);
                }
            } else {
                // keep panels short relative to their distance from the center
                let width = max_width.min((0.5 * prev).max(max_width * 1e-3));
                gl_points(gl, prev, wi, width, &mut pts);
            }
            panels.push(pts);
            prev = wi;
        }
        // tail: integrand decays like exp(-(alpha - b)(y - prev)) times at most polynomial growth
        let decay = alpha - b;
        let len = 80.0 / decay;
        let mut tail = Vec::new();
        gl_points(gl, prev, prev + len, 0.5 / decay, &mut tail);
        HalfLine {
            w,
            panels,
            tail,
            tail_start: prev,
            b,
        }
    }
}

/// Per-side running integrals for a forcing `g` (evaluated at quadrature points).
struct SideIntegrals {
    /// `S(w_i) = int_0^{w_i} e^{-(alpha+b)(w_i - y)} y^nu Is(alpha y) g(y) dy`.
    s: Vec<f64>,
    /// `T(w_i) = int_{w_i}^inf e^{-(alpha-b)(y - w_i)} y^nu Ks(alpha y) g(y) dy`.
    t: Vec<f64>,
    /// `T(0)`.
    t0: f64,
}

struct PanelBessel {
    /// Per panel (and tail last): `(y, weight, y^nu Is(alpha y), y^nu Ks(alpha y))`.
    panels: Vec<Vec<(f64, f64, f64, f64)>>,
}

impl PanelBessel {
    fn new(side: &HalfLine, alpha: f64, nu: f64) -> Self {
        let eval = |pts: &Vec<(f64, f64)>| -> Vec<(f64, f64, f64, f64)> {
            pts.iter()
                .map(|&(y, wt)| {
                    let ay = alpha * y;
                    let yn = y.powf(nu);
                    (y, wt, yn * bessel_i_scaled_signed(nu, ay), yn * bessel_k_scaled_abs(nu, ay))
                })
                .collect()
        };
        let mut panels: Vec<Vec<(f64, f64, f64, f64)>> = side.panels.par_iter().map(eval).collect();
        panels.push(eval(&side.tail));
        PanelBessel { panels }
    }
}

fn side_integrals(side: &HalfLine, pb: &PanelBessel, g: &[Vec<f64>], alpha: f64) -> SideIntegrals {
    let m = side.w.len();
    let up = alpha + side.b;
    let down = alpha - side.b;
    let mut s = vec![0.0; m];
    let mut t = vec![0.0; m];
    let mut prev = 0.0;
    let mut acc = 0.0;
    for i in 0..m {
        let wi = side.w[i];
        let mut panel = 0.0;
        for (q, &(y, wt, iy, _)) in pb.panels[i].iter().enumerate() {
            panel += wt * (-up * (wi - y)).exp() * iy * g[i][q];
        }
        acc = acc * (-up * (wi - prev)).exp() + panel;
        s[i] = acc;
        prev = wi;
    }
    // backward sweep, starting from the tail beyond the last node (or the center panel)
    let last = pb.panels.len() - 1;
    let start = side.tail_start;
    let mut acc = 0.0;
    for (q, &(y, wt, _, ky)) in pb.panels[last].iter().enumerate() {
        acc += wt * (-down * (y - start)).exp() * ky * g[last][q];
    }
    let mut next = start;
    for i in (0..m).rev() {
        let wi = side.w[i];
        acc *= (-down * (next - wi)).exp();
        t[i] = acc;
        // add panel i (covering [w_{i-1}, w_i]) referenced to its left end
        let left = if i == 0 { 0.0 } else { side.w[i - 1] };
        let mut panel = 0.0;
        for (q, &(y, wt, _, ky)) in pb.panels[i].iter().enumerate() {
            panel += wt * (-down * (y - left)).exp() * ky * g[i][q];
        }
        acc = acc * (-down * (wi - left)).exp() + panel;
        next = left;
    }
    let t0 = if m > 0 {
        acc
    } else {
        // center panel [0, c] then the tail referenced at c
        let c = start;
        let mut panel = 0.0;
        for (q, &(y, wt, _, ky)) in pb.panels[0].iter().enumerate() {
            panel += wt * (-down * y).exp() * ky * g[0][q];
        }
        acc * (-down * c).exp() + panel
    };
    SideIntegrals { s, t, t0 }
}

/// Solves the Stein equation for `h` on `grid`.
pub fn solve<H>(p: &VgParams, h: H, grid: &SteinGrid) -> Result<SteinSolution>
where
    H: Fn(f64) -> f64 + Sync,
{
    if !p.is_centered() {
        return Err(Error::Precondition("Stein solver needs a centered VG law".into()));
    }
    let s2 = p.sigma * p.sigma;
    let alpha = p.theta.hypot(p.sigma) / s2;
    let beta = p.theta / s2;
    let nu = p.nu();
    let shift = p.r * p.theta;
    let x = grid.nodes();
    let z: Vec<f64> = x.iter().map(|xi| xi + shift).collect();
    let gl = GaussLegendre::new(GL_POINTS);

    let right_w: Vec<f64> = z.iter().copied().filter(|v| *v > 0.0).collect();
    let mut left_w: Vec<f64> = z.iter().copied().filter(|v| *v < 0.0).map(|v| -v).collect();
    left_w.reverse();
    let right = HalfLine::new(right_w, alpha, beta, nu, &gl);
    let left = HalfLine::new(left_w, alpha, -beta, nu, &gl);
    let pb_right = PanelBessel::new(&right, alpha, nu);
    let pb_left = PanelBessel::new(&left, alpha, nu);

    // forcing at the quadrature points, in the original x coordinate
    let eval_g = |pb: &PanelBessel, sign: f64| -> Vec<Vec<f64>> {
        pb.panels
            .iter()
            .map(|pts| pts.iter().map(|&(y, ..)| h(sign * y - shift)).collect())
            .collect()
    };
    let ones = |pb: &PanelBessel| -> Vec<Vec<f64>> {
        pb.panels.iter().map(|pts| vec![1.0; pts.len()]).collect()
    };
    let gh_r = eval_g(&pb_right, 1.0);
    let gh_l = eval_g(&pb_left, -1.0);
    let r_h = side_integrals(&right, &pb_right, &gh_r, alpha);
    let l_h = side_integrals(&left, &pb_left, &gh_l, alpha);
    let r_1 = side_integrals(&right, &pb_right, &ones(&pb_right), alpha);
    let l_1 = side_integrals(&left, &pb_left, &ones(&pb_left), alpha);
    // the weight e^{beta z}|z|^nu K_nu(alpha|z|) is proportional to the density in z
    let mass = r_1.t0 + l_1.t0;
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::Numeric(format!("density normalization failed: {mass}")));
    }
    let expectation = (r_h.t0 + l_h.t0) / mass;
    let combine = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(u, v)| u - expectation * v).collect()
    };
    let rs = combine(&r_h.s, &r_1.s);
    let rt = combine(&r_h.t, &r_1.t);
    let ls = combine(&l_h.s, &l_1.s);
    let lt = combine(&l_h.t, &l_1.t);
    let r_t0 = r_h.t0 - expectation * r_1.t0;
    let l_t0 = l_h.t0 - expectation * l_1.t0;
    let center_coef = (0.5 * alpha).powf(nu) / (s2 * gamma_unchecked(nu + 1.0));
    let f_center_right = -center_coef * r_t0;
    let f_center_left = center_coef * l_t0;
    let center_gap = (f_center_right - f_center_left).abs();

    let side_value = |w: f64, s: f64, t: f64| -> f64 {
        let aw = alpha * w;
        let wn = w.powf(-nu);
        (bessel_k_scaled_abs(nu, aw) * s + bessel_i_scaled_signed(nu, aw) * t) * wn / s2
    };
    let mut f = vec![0.0; x.len()];
    let n_left = left.w.len();
    let mut ir = 0usize;
    for (i, &zi) in z.iter().enumerate() {
        if zi > 0.0 {
            f[i] = -side_value(zi, rs[ir], rt[ir]);
            ir += 1;
        } else if zi < 0.0 {
            // left nodes were reversed: the node at -zi has index n_left - 1 - i
            let j = n_left - 1 - i;
            f[i] = side_value(-zi, ls[j], lt[j]);
        } else {
            f[i] = 0.5 * (f_center_right + f_center_left);
        }
    }
    if let Some(bad) = f.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite solution value at x = {}",
            x[bad]
        )));
    }
    let (f1, f2) = finite_differences(&x, &f);
    let residual: Vec<f64> = (0..x.len())
        .map(|i| {
            if i == 0 || i + 1 == x.len() {
                0.0
            } else {
                stein_operator(p, x[i], f[i], f1[i], f2[i]) - (h(x[i]) - expectation)
            }
        })
        .collect();
    let residual_max = residual.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    Ok(SteinSolution {
        grid: *grid,
        x,
        f,
        f1,
        f2,
        residual,
        residual_max,
        expectation,
        center_gap,
    })
}

/// `sigma^2 (x + r theta) f'' + (sigma^2 r + 2 theta (x + r theta)) f' - x f`.
pub fn stein_operator(p: &VgParams, x: f64, f: f64, f1: f64, f2: f64) -> f64 {
    let s2 = p.sigma * p.sigma;
    let z = x + p.r * p.theta;
    s2 * z * f2 + (s2 * p.r + 2.0 * p.theta * z) * f1 - x * f
}

/// Three-point derivatives on a nonuniform grid; one-sided at the ends.
pub fn finite_differences(x: &[f64], f: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    let stencil = |i0: usize, at: f64| -> ([f64; 3], [f64; 3]) {
        // Lagrange weights of the first and second derivative at `at` through x[i0..i0+3]
        let (a, b, c) = (x[i0], x[i0 + 1], x[i0 + 2]);
        let w1 = [
            ((at - b) + (at - c)) / ((a - b) * (a - c)),
            ((at - a) + (at - c)) / ((b - a) * (b - c)),
            ((at - a) + (at - b)) / ((c - a) * (c - b)),
        ];
        let w2 = [
            2.0 / ((a - b) * (a - c)),
            2.0 / ((b - a) * (b - c)),
            2.0 / ((c - a) * (c - b)),
        ];
        (w1, w2)
    };
    for i in 0..n {
        let i0 = i.saturating_sub(1).min(n - 3);
        let (w1, w2) = stencil(i0, x[i]);
        d1[i] = w1[0] * f[i0] + w1[1] * f[i0 + 1] + w1[2] * f[i0 + 2];
        d2[i] = w2[0] * f[i0] + w2[1] * f[i0 + 1] + w2[2] * f[i0 + 2];
    }
    (d1, d2)
}

/// Recomputes the maximum interior residual of `sol` from scratch, with the
/// centering constant obtained by independent quadrature against the density.
pub fn residual<H: Fn(f64) -> f64>(sol: &SteinSolution, p: &VgParams, h: H) -> Result<f64> {
    let eh = p.expect(&h)?;
    let (f1, f2) = finite_differences(&sol.x, &sol.f);
    let n = sol.x.len();
    Ok((1..n - 1)
        .map(|i| (stein_operator(p, sol.x[i], sol.f[i], f1[i], f2[i]) - (h(sol.x[i]) - eh)).abs())
        .fold(0.0, f64::max))
}

/// Explicit Malliavin–Stein constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MsConstants {
    pub c1: f64,
    pub c2: f64,
    /// `A_{r, theta, sigma}`.
    pub a_r: f64,
    /// `A_{r+1, theta, sigma}` (enters `C1`).
    pub a_r_plus_1: f64,
    /// `B_{r, theta, sigma}`.
    pub b_r: f64,
}

fn a_const(r: f64, theta: f64, sigma: f64) -> f64 {
    let q = 1.0 + theta * theta / (sigma * sigma);
    if r >= 2.0 {
        2.0 * std::f64::consts::PI.sqrt() / (2.0 * r - 1.0).sqrt() * q.powf(0.5 * r)
    } else {
        12.0 * gamma_unchecked(0.5 * r) * q
    }
}

/// `C1`, `C2 = C1/2` and the auxiliary constants `A`, `B`.
pub fn ms_constants(p: &VgParams) -> Result<MsConstants> {
    if !p.is_centered() {
        return Err(Error::Precondition("constants are defined for centered laws".into()));
    }
    let (r, t, s) = (p.r, p.theta, p.sigma);
    let ts = t * t / (s * s);
    let a_r = a_const(r, t, s);
    let a_r1 = a_const(r + 1.0, t, s);
    let b_r = 6.0
        + 2.0 * 2f64.sqrt() / r.sqrt()
        + 2.0 * (2.0 * std::f64::consts::PI * (r + 1.0)).sqrt() * t.abs() / s * (1.0 + ts).powf(0.5 * (r - 1.0))
        + 2.0 * ((2.0 * r).sqrt() + r) * a_r;
    let c1 = 1.0 / (s * s) * (2.0 / (r + 2.0) * a_r1) * (1.0 + (2.0 + ts * b_r));
    Ok(MsConstants {
        c1,
        c2: 0.5 * c1,
        a_r,
        a_r_plus_1: a_r1,
        b_r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> Vec<VgParams> {
        vec![
            VgParams::centered(1.0, 0.0, 1.0).unwrap(),
            VgParams::centered(2.0, 0.3, 1.0).unwrap(),
            VgParams::centered(4.0, -0.5, 2.0).unwrap(),
            VgParams::centered(0.6, 0.4, 0.8).unwrap(),
        ]
    }

    #[test]
    fn exact_solution_for_identity() {
        let grid = SteinGrid::uniform(-8.0, 8.0, 2048).unwrap();
        for p in params() {
            let sol = solve(&p, |x| x, &grid).unwrap();
            let err = sol.f.iter().fold(0.0f64, |a, v| a.max((v + 1.0).abs()));
            assert!(err < 1e-8, "{p:?}: max |f + 1| = {err}");
            assert!(sol.residual_max < 1e-6, "{p:?}: residual {}", sol.residual_max);
            assert!(sol.expectation.abs() < 1e-10);
        }
    }

    #[test]
    fn exact_solution_for_square() {
        let grid = SteinGrid::uniform(-8.0, 8.0, 2048).unwrap();
        for p in params() {
            let sol = solve(&p, |x| x * x, &grid).unwrap();
            let err = sol
                .x
                .iter()
                .zip(&sol.f)
                .fold(0.0f64, |a, (x, v)| a.max((v + x + 2.0 * p.theta).abs()));
            assert!(err < 1e-8, "{p:?}: max error {err}");
            assert!(sol.residual_max < 1e-6, "{p:?}: residual {}", sol.residual_max);
            let k2 = p.cumulants_2_to_6().unwrap()[0];
            assert_relative_eq!(sol.expectation, k2, max_relative = 1e-10);
        }
    }

    #[test]
    fn constant_gives_zero() {
        let grid = SteinGrid::uniform(-5.0, 5.0, 256).unwrap();
        let sol = solve(&VgParams::centered(2.0, 0.3, 1.0).unwrap(), |_| 3.5, &grid).unwrap();
        assert!(sol.f.iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn independent_residual_detects_corruption() {
        let p = VgParams::centered(1.0, 0.0, 1.0).unwrap();
        let grid = SteinGrid::uniform(-5.0, 5.0, 512).unwrap();
        let mut sol = solve(&p, |x| x, &grid).unwrap();
        assert!(residual(&sol, &p, |x| x).unwrap() < 1e-6);
        sol.f.iter_mut().for_each(|v| *v *= 2.0);
        assert!(residual(&sol, &p, |x| x).unwrap() > 0.1);
    }

    #[test]
    fn tanh_residual_and_convergence() {
        let p = VgParams::centered(2.0, 0.3, 1.0).unwrap();
        let coarse = SteinGrid::new(-8.0, 8.0, 2048, Spacing::TanhGraded { strength: 1.0 }).unwrap();
        let a = solve(&p, f64::tanh, &coarse).unwrap();
        assert!(a.residual_max <= 1e-4, "residual {}", a.residual_max);
        let uni = SteinGrid::uniform(-8.0, 8.0, 257).unwrap();
        let mut prev = solve(&p, f64::tanh, &uni).unwrap().residual_max;
        let mut g = uni;
        for _ in 0..2 {
            g = g.refined();
            let cur = solve(&p, f64::tanh, &g).unwrap().residual_max;
            assert!(prev / cur >= 3.5, "ratio {}", prev / cur);
            prev = cur;
        }
    }

    #[test]
    fn expectation_matches_density_quadrature() {
        for p in params() {
            let grid = SteinGrid::uniform(-6.0, 6.0, 300).unwrap();
            let sol = solve(&p, f64::sin, &grid).unwrap();
            let e = p.expect(f64::sin).unwrap();
            assert!((sol.expectation - e).abs() < 1e-10, "{} vs {e}", sol.expectation);
            assert!(sol.center_gap < 1e-10);
        }
    }

    #[test]
    fn linearity() {
        let p = VgParams::centered(2.0, 0.3, 1.0).unwrap();
        let grid = SteinGrid::uniform(-6.0, 6.0, 400).unwrap();
        let a = solve(&p, f64::tanh, &grid).unwrap();
        let b = solve(&p, f64::sin, &grid).unwrap();
        let c = solve(&p, |x| 2.0 * x.tanh() - 0.5 * x.sin(), &grid).unwrap();
        for i in 0..a.f.len() {
            assert!((c.f[i] - (2.0 * a.f[i] - 0.5 * b.f[i])).abs() < 1e-8);
        }
    }

    fn maxabs(v: &[f64]) -> f64 {
        v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
    }

    #[test]
    fn bounded_under_window_doubling() {
        let p = VgParams::centered(2.0, 0.3, 1.0).unwrap();
        let small = SteinGrid::uniform(-8.0, 8.0, 1025).unwrap();
        let large = SteinGrid::uniform(-16.0, 16.0, 2049).unwrap();
        for h in [f64::tanh as fn(f64) -> f64, f64::sin, |x: f64| (-x * x).exp()] {
            let a = solve(&p, h, &small).unwrap();
            let b = solve(&p, h, &large).unwrap();
            for (u, v) in [(&a.f, &b.f), (&a.f1, &b.f1), (&a.f2, &b.f2)] {
                let ratio = maxabs(v) / maxabs(u);
                assert!(ratio <= 1.05, "ratio {ratio}");
            }
        }
    }

    #[test]
    fn decays_for_bounded_h() {
        let p = VgParams::centered(1.0, 0.0, 1.0).unwrap();
        let grid = SteinGrid::uniform(-20.0, 20.0, 2001).unwrap();
        let sol = solve(&p, |x| (-x * x).exp(), &grid).unwrap();
        let tail_max = |v: &[f64], r: f64| {
            sol.x
                .iter()
                .zip(v)
                .filter(|(x, _)| x.abs() > r)
                .fold(0.0f64, |a, (_, y)| a.max(y.abs()))
        };
        for v in [&sol.f, &sol.f1] {
            let maxima: Vec<f64> = (1..=9).map(|k| tail_max(v, 2.0 * k as f64)).collect();
            assert!(maxima.windows(2).all(|w| w[1] < w[0]), "{maxima:?}");
            assert!(maxima[8] < 0.2 * maxima[0]);
        }
    }

    #[test]
    fn csv_layout() {
        let p = VgParams::centered(1.0, 0.0, 1.0).unwrap();
        let sol = solve(&p, |x| x, &SteinGrid::uniform(-2.0, 2.0, 64).unwrap()).unwrap();
        let csv = sol.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x,f,f1,f2,residual");
        assert_eq!(lines.len(), 65);
        assert!(SteinTestFn::from_name("cosh").is_err());
        assert_eq!(SteinTestFn::from_name("x2").unwrap().eval(3.0), 9.0);
    }

    #[test]
    fn shape_below_one() {
        // nu < 0: I of negative order enters the representation
        let p = VgParams::centered(0.5, -0.2, 1.2).unwrap();
        let sol = solve(&p, |x| x * x, &SteinGrid::uniform(-8.0, 8.0, 1024).unwrap()).unwrap();
        let err = sol
            .x
            .iter()
            .zip(&sol.f)
            .fold(0.0f64, |a, (x, v)| a.max((v + x + 2.0 * p.theta).abs()));
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constants_examples() {
        let p = VgParams::centered(2.0, 0.0, 1.0).unwrap();
        let c = ms_constants(&p).unwrap();
        assert_relative_eq!(c.a_r, 2.0 * std::f64::consts::PI.sqrt() / 3f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(c.a_r, 2.046_66, max_relative = 1e-5);
        assert_relative_eq!(c.c1, 2.378_00, max_relative = 1e-5);
        assert_relative_eq!(c.c2, 1.189_00, max_relative = 1e-5);
        for q in params() {
            let c = ms_constants(&q).unwrap();
            assert_eq!(c.c2, 0.5 * c.c1);
        }
        // r below 2 uses the Gamma-function branch
        let c = ms_constants(&VgParams::centered(1.0, 0.0, 1.0).unwrap()).unwrap();
        assert_relative_eq!(c.a_r, 12.0 * std::f64::consts::PI.sqrt(), max_relative = 1e-14);
    }
}
