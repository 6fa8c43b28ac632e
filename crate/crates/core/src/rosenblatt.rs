//! The generalized Rosenblatt variable `F = A I_2(f)` with kernel
//! `f(x1, x2) = (A/2) int_0^1 [(s-x1)_+^{g1} (s-x2)_+^{g2} + (s-x1)_+^{g2} (s-x2)_+^{g1}] ds`.
//!
//! Spectrum. Write `U_a g(s) = int (s-x)_+^{g_a} g(x) dx`, mapping `L^2(R)` to
//! `L^2[0,1]`. The contraction operator of `f` is `(A/2)(U_1* U_2 + U_2* U_1)`,
//! whose nonzero spectrum coincides with that of `A M G` on `L^2[0,1]^2`, where
//! `M = (1/2)[[0, I], [I, 0]]` and `G = [U_a U_b*]` has the explicit kernels
//! [`reduced_kernel`]. `G` is discretized by a piecewise-constant Galerkin
//! method on a graded mesh of `[0, 1]` with exact cell integrals.
//!
//! Independent oracle. `Tr((A M G)^p)` is a `p`-fold cyclic integral of
//! reduced kernels over `[0,1]^p`, estimated by randomized quasi-Monte Carlo.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{dh2_dictionary_lower, default_dictionary, empirical_w1_batched, rate_fit, six_moment_bound, RateFit};
use crate::chaos::SecondChaosElement;
use crate::error::{Error, Result};
use crate::qmc::Sobol;
use crate::quadrature::{integrate_adaptive, integrate_endpoint_singular, GaussLegendre};
use crate::rng::{batch_se, derive_seed, stream_rng, Estimate};
use crate::special::beta_fn;
use crate::vg::VgParams;

/// Relative cutoff below which discrete eigenvalues are dropped.
pub const TRIM_REL: f64 = 1e-10;

/// Relative gap between the discrete and exact raw second cumulant above
/// which a spectrum is flagged as under-resolved.
pub const REFINEMENT_WARN_REL: f64 = 0.05;

/// Eigenvalues kept exactly when sampling a discretized spectrum.
pub const SAMPLE_HEAD: usize = 64;

/// Exponents and discretization controls of a generalized Rosenblatt variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RosenblattSpec {
    pub gamma1: f64,
    pub gamma2: f64,
    /// Galerkin cells on `[0, 1]`.
    pub n_nodes: usize,
    /// Grading exponent `q` of the mesh `s(u) = u^q / (u^q + (1-u)^q)`; 1 is uniform.
    pub mesh: f64,
    /// Constant `A > 0` giving `E F^2 = 1` (exact closed form).
    pub normalization: f64,
}

/// Checks `(g1, g2)` lies in the open triangle: each in `(-1, -1/2)`, sum above `-3/2`.
pub fn check_exponents(g1: f64, g2: f64) -> Result<()> {
    let inside = |g: f64| g > -1.0 && g < -0.5;
    if !(inside(g1) && inside(g2) && g1 + g2 > -1.5) {
        return Err(Error::domain(
            "RosenblattSpec",
            format!("exponents ({g1}, {g2}) must satisfy -1 < g_i < -1/2 and g1 + g2 > -3/2"),
        ));
    }
    Ok(())
}

impl RosenblattSpec {
    pub const DEFAULT_NODES: usize = 800;
    pub const DEFAULT_MESH: f64 = 1.0;

    pub fn new(gamma1: f64, gamma2: f64, n_nodes: usize, mesh: f64) -> Result<Self> {
        check_exponents(gamma1, gamma2)?;
        if n_nodes < 4 {
            return Err(Error::Precondition(format!("n_nodes must be at least 4, got {n_nodes}")));
        }
        if !(1.0..=8.0).contains(&mesh) {
            return Err(Error::Precondition(format!("mesh exponent must lie in [1, 8], got {mesh}")));
        }
        let k2 = raw_kappa2(gamma1, gamma2)?;
        Ok(RosenblattSpec {
            gamma1,
            gamma2,
            n_nodes,
            mesh,
            normalization: 1.0 / k2.sqrt(),
        })
    }

    pub fn with_defaults(gamma1: f64, gamma2: f64) -> Result<Self> {
        Self::new(gamma1, gamma2, Self::DEFAULT_NODES, Self::DEFAULT_MESH)
    }

    fn gammas(&self) -> [f64; 2] {
        [self.gamma1, self.gamma2]
    }

    /// Cell boundaries of the graded mesh on `[0, 1]`.
    pub fn mesh_points(&self) -> Vec<f64> {
        let n = self.n_nodes;
        let q = self.mesh;
        (0..=n)
            .map(|k| {
                if k == 0 {
                    0.0
                } else if k == n {
                    1.0
                } else {
                    let u = k as f64 / n as f64;
                    let (a, b) = (u.powf(q), (1.0 - u).powf(q));
                    a / (a + b)
                }
            })
            .collect()
    }
}

/// `int_R (s-x)_+^{ga} (t-x)_+^{gb} dx` in closed form.
///
/// Returns `+inf` on the diagonal `s = t`, where the kernel has an integrable
/// singularity.
pub fn reduced_kernel(ga: f64, gb: f64, s: f64, t: f64) -> Result<f64> {
    let inside = |g: f64| g > -1.0 && g < -0.5;
    if !(inside(ga) && inside(gb) && ga + gb > -1.5) {
        return Err(Error::domain(
            "reduced_kernel",
            format!("need ga, gb in (-1, -1/2) with ga + gb > -3/2, got ({ga}, {gb})"),
        ));
    }
    if s == t {
        return Ok(f64::INFINITY);
    }
    let e = 1.0 + ga + gb;
    let (coef_pos, coef_neg) = kernel_coefficients(ga, gb)?;
    Ok(if s > t {
        coef_pos * (s - t).powf(e)
    } else {
        coef_neg * (t - s).powf(e)
    })
}

/// `(B(gb+1, -1-ga-gb), B(ga+1, -1-ga-gb))`, the coefficients for `s > t` and `s < t`.
fn kernel_coefficients(ga: f64, gb: f64) -> Result<(f64, f64)> {
    let c = -1.0 - ga - gb;
    Ok((beta_fn(gb + 1.0, c)?, beta_fn(ga + 1.0, c)?))
}

/// Exact `E F^2` for `A = 1`: `2 ||f||^2` with both Gram products integrated in
/// closed form, `int int_{[0,1]^2} |s-t|^q = 2/((q+1)(q+2))`.
pub fn raw_kappa2(g1: f64, g2: f64) -> Result<f64> {
    check_exponents(g1, g2)?;
    let q = 2.0 * (2.0 + g1 + g2) - 2.0;
    let square = 2.0 / ((q + 1.0) * (q + 2.0));
    let b11 = beta_fn(g1 + 1.0, -1.0 - 2.0 * g1)?;
    let b22 = beta_fn(g2 + 1.0, -1.0 - 2.0 * g2)?;
    let (p, m) = kernel_coefficients(g1, g2)?;
    // ||f||^2 = (1/4)(2 ||g12||^2 + 2 <g12, g21>)
    Ok(2.0 * 0.5 * (b11 * b22 + p * m) * square)
}

fn singular_exponent_check(x1: f64, x2: f64) -> Result<()> {
    if x1 > 1.0 || x2 > 1.0 || !x1.is_finite() || !x2.is_finite() {
        return Err(Error::domain("chaos_kernel", format!("need x1, x2 <= 1, got ({x1}, {x2})")));
    }
    if x1 == x2 && (0.0..1.0).contains(&x1) {
        return Err(Error::domain(
            "chaos_kernel",
            format!("kernel is infinite on the diagonal inside [0, 1) (x = {x1})"),
        ));
    }
    Ok(())
}

/// `g(x1, x2) = int_0^1 (s-x1)_+^{ga} (s-x2)_+^{gb} ds`.
///
/// Only `s > m = max(0, x1, x2)` contributes. The integrand is written in the
/// offset `t = s - m`, so a factor singular at `s = m` is evaluated as `t^g`
/// without cancellation.
fn s_integral(ga: f64, gb: f64, x1: f64, x2: f64) -> Result<f64> {
    let m = x1.max(x2).max(0.0);
    if m >= 1.0 {
        return Ok(0.0);
    }
    let (d1, d2) = (m - x1, m - x2);
    let f = |t: f64| (d1 + t).powf(ga) * (d2 + t).powf(gb);
    let len = 1.0 - m;
    let p = match (d1 == 0.0, d2 == 0.0) {
        (true, true) => ga + gb,
        (true, false) => ga,
        (false, true) => gb,
        (false, false) => 0.0,
    };
    let res = if p == 0.0 {
        integrate_adaptive(f, 0.0, len, 1e-15, 1e-12, 50)
    } else {
        integrate_endpoint_singular(f, 0.0, len, p, 1e-15, 1e-12)
    };
    res.map_err(|e| Error::Numeric(format!("chaos kernel s-integral at (x1, x2) = ({x1}, {x2}): {e}")))
}

/// The symmetrized, normalized kernel `(A/2)[g(x1,x2) + g(x2,x1)]`.
pub fn chaos_kernel(spec: &RosenblattSpec, x1: f64, x2: f64) -> Result<f64> {
    singular_exponent_check(x1, x2)?;
    let a = s_integral(spec.gamma1, spec.gamma2, x1, x2)?;
    let b = s_integral(spec.gamma1, spec.gamma2, x2, x1)?;
    // summing in a fixed order keeps the result exactly symmetric
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    Ok(0.5 * spec.normalization * (lo + hi))
}

/// `int_{cell i} int_{cell j} (s - t)_+^e dt ds` for cell `i` at or to the right of cell `j`.
struct CellIntegrator {
    rules: Vec<(usize, GaussLegendre)>,
}

impl CellIntegrator {
    fn new() -> Self {
        CellIntegrator {
            rules: [2usize, 3, 4, 6, 8, 12].iter().map(|&m| (m, GaussLegendre::new(m))).collect(),
        }
    }

    fn rule(&self, m: usize) -> &GaussLegendre {
        &self.rules.iter().find(|(k, _)| *k == m).expect("rule table").1
    }

    /// `s` in `[a1, a1 + h1]`, `t` in `[b2 - h2, b2]` with `gap = a1 - b2 >= 0`,
    /// or the same cell when `gap < 0` (then `h1 = h2`).
    fn integrate(&self, e: f64, gap: f64, h1: f64, h2: f64) -> f64 {
        let k = e + 2.0;
        let f2 = |d: f64| if d > 0.0 { d.powf(k) / ((e + 1.0) * k) } else { 0.0 };
        if gap < 0.0 {
            return f2(h1);
        }
        let hmax = h1.max(h2);
        if gap < hmax {
            return f2(gap + h1 + h2) - f2(gap + h1) - f2(gap + h2) + f2(gap);
        }
        // well separated: the integrand (gap + u + v)^e is analytic on a
        // neighbourhood of the cell pair, so a small tensor rule is exact to rounding
        let ratio = gap / hmax;
        let m = if ratio < 2.0 {
            12
        } else if ratio < 5.0 {
            8
        } else if ratio < 20.0 {
            6
        } else if ratio < 100.0 {
            4
        } else if ratio < 1000.0 {
            3
        } else {
            2
        };
        let gl = self.rule(m);
        let mut s = 0.0;
        for (u, wu) in gl.mapped(0.0, h1) {
            for (v, wv) in gl.mapped(0.0, h2) {
                s += wu * wv * (gap + u + v).powf(e);
            }
        }
        s
    }
}

/// Discretized spectrum of a generalized Rosenblatt variable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NystromSpectrum {
    pub element: SecondChaosElement,
    /// `2 sum c^2` before the rescale, with `A` from the exact normalization.
    pub kappa2_discrete: f64,
    /// Relative gap `|kappa2_discrete - 1|`; above [`REFINEMENT_WARN_REL`] the grid is too coarse.
    pub kappa2_rel_gap: f64,
    pub refinement_warning: bool,
    pub trimmed: usize,
}

fn gram_matrix(spec: &RosenblattSpec) -> Result<DMatrix<f64>> {
    let n = spec.n_nodes;
    let pts = spec.mesh_points();
    let h: Vec<f64> = pts.windows(2).map(|w| w[1] - w[0]).collect();
    if h.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Numeric("degenerate mesh cell; lower the mesh exponent or n_nodes".into()));
    }
    let g = spec.gammas();
    let mut coef = [[(0.0, 0.0); 2]; 2];
    let mut expo = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            coef[a][b] = kernel_coefficients(g[a], g[b])?;
            expo[a][b] = 1.0 + g[a] + g[b];
        }
    }
    let ci = CellIntegrator::new();
    // rows i of I_e(i, j) = int_i int_j (s-t)_+^e, for e in {e11, e22, e12}
    let exps = [expo[0][0], expo[1][1], expo[0][1]];
    let rows: Vec<Vec<[f64; 3]>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    std::array::from_fn(|k| {
                        if i == j {
                            ci.integrate(exps[k], -1.0, h[i], h[i])
                        } else if i > j {
                            ci.integrate(exps[k], pts[i] - pts[j + 1], h[i], h[j])
                        } else {
                            0.0
                        }
                    })
                })
                .collect()
        })
        .collect();
    let plus = |k: usize, i: usize, j: usize| if i >= j { rows[i][j][k] } else { 0.0 };
    let which = |a: usize, b: usize| if a == b { a } else { 2 };
    let mut gm = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for a in 0..2 {
        for b in 0..2 {
            let k = which(a, b);
            let (cp, cm) = coef[a][b];
            for i in 0..n {
                for j in 0..n {
                    let v = cp * plus(k, i, j) + cm * plus(k, j, i);
                    gm[(a * n + i, b * n + j)] = v / (h[i] * h[j]).sqrt();
                }
            }
        }
    }
    Ok(gm)
}

/// Eigenvalues of `A M G` on the Galerkin space, with `M = (1/2)[[0,I],[I,0]]`.
fn galerkin_eigenvalues(spec: &RosenblattSpec) -> Result<Vec<f64>> {
    let n = spec.n_nodes;
    let g = gram_matrix(spec)?;
    let scale = g.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    // G is a Gram matrix; a relative jitter at rounding level absorbs the
    // numerically semidefinite directions without moving the spectrum
    let mut factor = None;
    for k in 0..6 {
        let jitter = if k == 0 { 0.0 } else { scale * 1e-15 * 10f64.powi(k) };
        let mut gj = g.clone();
        for d in 0..2 * n {
            gj[(d, d)] += jitter;
        }
        if let Some(c) = gj.cholesky() {
            factor = Some(c.l());
            break;
        }
    }
    let l = factor.ok_or_else(|| Error::Numeric("Gram matrix is not numerically semidefinite".into()))?;
    let l1 = l.rows(0, n);
    let l2 = l.rows(n, n);
    let cross = l1.transpose() * l2;
    let b = (&cross + cross.transpose()) * (0.5 * spec.normalization);
    let ev = b.symmetric_eigenvalues();
    if ev.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("eigen-solver produced non-finite eigenvalues".into()));
    }
    Ok(ev.iter().copied().collect())
}

/// Discrete spectrum of `F` with `kappa_2 = 1`.
///
/// Eigenvalues carry the exact normalization `A`. Cells of width `h` resolve
/// the spectrum only down to `|c| ~ h^{1+g1+g2}`, and the unresolved tail
/// holds a share of `kappa_2` that decays slowly in `n_nodes` but contributes
/// negligibly to every higher cumulant. That missing share is restored as
/// `n_nodes` symmetric pairs `+-delta`, which leaves odd cumulants untouched
/// and shifts `kappa_p`, `p >= 4`, by `O(gap^2 / n_nodes)`. A discrete
/// `kappa_2` above 1 is instead removed by a rescale.
pub fn nystrom_spectrum(spec: &RosenblattSpec) -> Result<NystromSpectrum> {
    let ev = galerkin_eigenvalues(spec)?;
    let max = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if max == 0.0 {
        return Err(Error::Numeric("discrete spectrum vanished".into()));
    }
    let mut kept: Vec<f64> = ev.iter().copied().filter(|v| v.abs() >= TRIM_REL * max).collect();
    let trimmed = ev.len() - kept.len();
    kept.sort_by(|a, b| b.total_cmp(a));
    let kappa2_discrete = 2.0 * kept.iter().map(|c| c * c).sum::<f64>();
    let gap = 1.0 - kappa2_discrete;
    let element = if gap > 0.0 {
        let m = spec.n_nodes;
        let delta = (gap / (4.0 * m as f64)).sqrt();
        kept.extend((0..m).flat_map(|_| [delta, -delta]));
        SecondChaosElement::new(kept)?.rescaled_to_kappa2(1.0)?
    } else {
        SecondChaosElement::new(kept)?.rescaled_to_kappa2(1.0)?
    };
    Ok(NystromSpectrum {
        element,
        kappa2_discrete,
        kappa2_rel_gap: gap.abs(),
        refinement_warning: gap.abs() > REFINEMENT_WARN_REL,
        trimmed,
    })
}

/// Randomized QMC estimate of `kappa_p(F)` from the cyclic trace
/// `Tr((A M G)^p) = A^p 2^{-p} int_{[0,1]^p} Tr(prod_k H(s_k, s_{k+1})) ds`,
/// with `H(s,t)_{ab} = G_{a'b}(s,t)` (`a'` the other index) summing all `2^p`
/// symmetrization patterns. The standard error comes from
/// [`crate::bounds::N_BATCHES`] independent digital shifts.
pub fn cumulant_trace_mc(spec: &RosenblattSpec, p: usize, n_mc: usize, seed: u64) -> Result<Estimate> {
    if !(2..=6).contains(&p) {
        return Err(Error::domain("cumulant_trace_mc", format!("order must be in 2..=6, got {p}")));
    }
    let batches = crate::bounds::N_BATCHES;
    let per = n_mc / batches;
    if per < 16 {
        return Err(Error::Precondition(format!("n_mc must be at least {}", 16 * batches)));
    }
    let g = spec.gammas();
    let mut coef = [[(0.0, 0.0); 2]; 2];
    let mut expo = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            coef[a][b] = kernel_coefficients(g[a], g[b])?;
            expo[a][b] = 1.0 + g[a] + g[b];
        }
    }
    let pref = 2f64.powi(p as i32 - 1)
        * (1..p).map(|k| k as f64).product::<f64>()
        * (0.5 * spec.normalization).powi(p as i32);
    let means: Vec<f64> = (0..batches)
        .into_par_iter()
        .map(|b| {
            use rand::Rng;
            let mut rng = stream_rng(derive_seed(seed, p as u64), b as u64);
            let shift: Vec<u32> = (0..p).map(|_| rng.random::<u32>()).collect();
            let mut sob = Sobol::new(p, &shift).expect("dimension checked");
            let mut s = [0.0; 6];
            let mut acc = 0.0;
            for _ in 0..per {
                sob.next_into(&mut s[..p]);
                let mut prod = [[1.0, 0.0], [0.0, 1.0]];
                for k in 0..p {
                    let (u, v) = (s[k], s[(k + 1) % p]);
                    let d = (u - v).abs();
                    let mut h = [[0.0; 2]; 2];
                    for a in 0..2 {
                        let ap = 1 - a;
                        for bb in 0..2 {
                            let (cp, cm) = coef[ap][bb];
                            let c = if u > v { cp } else { cm };
                            h[a][bb] = c * d.powf(expo[ap][bb]);
                        }
                    }
                    prod = [
                        [
                            prod[0][0] * h[0][0] + prod[0][1] * h[1][0],
                            prod[0][0] * h[0][1] + prod[0][1] * h[1][1],
                        ],
                        [
                            prod[1][0] * h[0][0] + prod[1][1] * h[1][0],
                            prod[1][0] * h[0][1] + prod[1][1] * h[1][1],
                        ],
                    ];
                }
                acc += prod[0][0] + prod[1][1];
            }
            pref * acc / per as f64
        })
        .collect();
    Ok(Estimate {
        value: means.iter().sum::<f64>() / batches as f64,
        se: batch_se(&means),
    })
}

/// The limit parameters of the `rho` corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoCase {
    pub rho: f64,
    pub alpha_rho: f64,
    pub beta_rho: f64,
}

impl RhoCase {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::domain("RhoCase", format!("rho must lie in (0, 1), got {rho}")));
        }
        let a = 0.5 / rho.sqrt();
        let b = 1.0 / (rho + 1.0);
        let den = (0.5 / rho + 2.0 * b * b).sqrt();
        Ok(RhoCase {
            rho,
            alpha_rho: (a + b) / den,
            beta_rho: (a - b) / den,
        })
    }

    /// The exponent link `g2 = (g1 + 1/2)/rho - 1/2`.
    pub fn gamma2_for(&self, gamma1: f64) -> f64 {
        (gamma1 + 0.5) / self.rho - 0.5
    }
}

/// Which boundary corner the sweep approaches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "case")]
pub enum LimitCase {
    /// `g1 -> -1/2` with `g2` held fixed in `(-1, -1/2)`.
    A { gamma2: f64 },
    /// `g1 -> -1/2` along `g2 = (g1 + 1/2)/rho - 1/2`.
    B { rho: RhoCase },
}

impl LimitCase {
    pub fn gamma2_for(&self, gamma1: f64) -> f64 {
        match self {
            LimitCase::A { gamma2 } => *gamma2,
            LimitCase::B { rho } => rho.gamma2_for(gamma1),
        }
    }

    /// Spectrum of the limit law.
    pub fn target_spectrum(&self) -> Vec<f64> {
        match self {
            LimitCase::A { .. } => vec![0.5, -0.5],
            LimitCase::B { rho } => {
                let r = std::f64::consts::FRAC_1_SQRT_2;
                vec![rho.alpha_rho * r, -rho.beta_rho * r]
            }
        }
    }
}

/// The centered VG limit law of the corner.
pub fn target_vg(case: &LimitCase) -> Result<VgParams> {
    match case {
        LimitCase::A { .. } => VgParams::centered(1.0, 0.0, 1.0),
        LimitCase::B { rho } => VgParams::centered(
            1.0,
            (rho.alpha_rho - rho.beta_rho) / std::f64::consts::SQRT_2,
            (2.0 * rho.alpha_rho * rho.beta_rho).sqrt(),
        ),
    }
}

/// Sweep configuration for the rate experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateConfig {
    pub case: LimitCase,
    pub gamma1: Vec<f64>,
    pub n_nodes: usize,
    pub mesh: f64,
    /// Samples per point for the `W1` and dictionary estimates (0 skips them).
    pub n_mc: usize,
    pub seed: u64,
}

impl RateConfig {
    pub const DEFAULT_SWEEP: [f64; 5] = [-0.52, -0.53, -0.55, -0.58, -0.62];
    pub const DEFAULT_GAMMA2: f64 = -0.75;

    pub fn case_a(n_mc: usize, seed: u64) -> Self {
        RateConfig {
            case: LimitCase::A { gamma2: Self::DEFAULT_GAMMA2 },
            gamma1: Self::DEFAULT_SWEEP.to_vec(),
            n_nodes: RosenblattSpec::DEFAULT_NODES,
            mesh: RosenblattSpec::DEFAULT_MESH,
            n_mc,
            seed,
        }
    }

    pub fn case_b(rho: f64, n_mc: usize, seed: u64) -> Result<Self> {
        Ok(RateConfig {
            case: LimitCase::B { rho: RhoCase::new(rho)? },
            ..Self::case_a(n_mc, seed)
        })
    }

    /// Parses a flat `key = value` file (`#` starts a comment). Keys: `case`
    /// (`a` or `b`), `rho`, `gamma2` (case a), `gamma1` (comma list),
    /// `n_nodes`, `mesh`, `n_mc`, `seed`.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let k = k.trim().to_string();
            if map.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k}", no + 1)));
            }
        }
        const KNOWN: [&str; 8] = ["case", "rho", "gamma2", "gamma1", "n_nodes", "mesh", "n_mc", "seed"];
        if let Some(k) = map.keys().find(|k| !KNOWN.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key {k}; expected one of {KNOWN:?}")));
        }
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        let seed = num(
            "seed",
            map.get("seed").ok_or_else(|| Error::Config("missing key seed".into()))?,
        )?;
        let n_mc = map.get("n_mc").map(|v| num("n_mc", v)).transpose()?.unwrap_or(200_000);
        let mut cfg = match map.get("case").map(String::as_str) {
            Some("a") | None => {
                let mut c = Self::case_a(n_mc, seed);
                if let Some(g2) = map.get("gamma2") {
                    c.case = LimitCase::A { gamma2: num("gamma2", g2)? };
                }
                c
            }
            Some("b") => {
                let rho = num("rho", map.get("rho").ok_or_else(|| Error::Config("case b needs rho".into()))?)?;
                Self::case_b(rho, n_mc, seed)?
            }
            Some(other) => return Err(Error::Config(format!("case must be a or b, got {other}"))),
        };
        if let Some(list) = map.get("gamma1") {
            cfg.gamma1 = list
                .split(',')
                .map(|s| num("gamma1", s.trim()))
                .collect::<Result<Vec<f64>>>()?;
        }
        if let Some(v) = map.get("n_nodes") {
            cfg.n_nodes = num("n_nodes", v)?;
        }
        if let Some(v) = map.get("mesh") {
            cfg.mesh = num("mesh", v)?;
        }
        Ok(cfg)
    }

    /// Rejects sweeps with any point outside the triangle (listing all of them)
    /// or, in the `rho` corner, violating `g1 >= g2`.
    pub fn validate(&self) -> Result<()> {
        if self.gamma1.len() < 4 {
            return Err(Error::Precondition("the sweep needs at least 4 exponents".into()));
        }
        let bad: Vec<String> = self
            .gamma1
            .iter()
            .filter_map(|&g1| {
                let g2 = self.case.gamma2_for(g1);
                let ordered = !matches!(self.case, LimitCase::B { .. }) || g1 >= g2;
                (check_exponents(g1, g2).is_err() || !ordered).then(|| format!("({g1}, {g2})"))
            })
            .collect();
        if !bad.is_empty() {
            return Err(Error::domain("rate_experiment", format!("exponents outside the admissible region: {}", bad.join(", "))));
        }
        Ok(())
    }
}

/// One sweep point of the rate experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RosenblattRow {
    pub gamma1: f64,
    pub gamma2: f64,
    /// `-g1 - 1/2`.
    pub eps: f64,
    pub kappa: [f64; 5],
    pub kappa_diff: [f64; 5],
    pub m: f64,
    pub six_moment_bound: f64,
    pub top_eigenvalues: [f64; 2],
    /// Largest `|c|` beyond the two dominant eigenvalues.
    pub third_abs: f64,
    pub kappa2_rel_gap: f64,
    pub w1_hat: Option<f64>,
    pub w1_se: Option<f64>,
    pub dict_lower: Option<f64>,
    pub dict_se: Option<f64>,
    #[serde(skip)]
    pub spectrum: Vec<f64>,
}

/// Results of a sweep with fitted log-log slopes against `-g1 - 1/2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RosenblattRateResult {
    pub config: RateConfig,
    pub target: VgParams,
    pub rows: Vec<RosenblattRow>,
    pub slope_m: RateFit,
    /// Slopes of `|kappa_l(F) - kappa_l(Y)|` for `l = 3..6`.
    pub slope_kappa: [RateFit; 4],
    pub slope_six_moment_bound: RateFit,
}

impl RosenblattRateResult {
    /// One row per sweep point.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "gamma1,gamma2,eps,kappa2,kappa3,kappa4,kappa5,kappa6,diff3,diff4,diff5,diff6,M,six_moment_bound,c_top,c_bottom,c_third_abs,w1_hat,w1_se,dict_lower,dict_se\n",
        );
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
        for r in &self.rows {
            let mut cols = vec![r.gamma1, r.gamma2, r.eps];
            cols.extend(r.kappa);
            cols.extend(&r.kappa_diff[1..]);
            cols.extend([r.m, r.six_moment_bound, r.top_eigenvalues[0], r.top_eigenvalues[1], r.third_abs]);
            let mut line: Vec<String> = cols.iter().map(|v| format!("{v:.17e}")).collect();
            line.extend([opt(r.w1_hat), opt(r.w1_se), opt(r.dict_lower), opt(r.dict_se)]);
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }
}

/// Computes spectra, cumulant differences and distance estimates along the sweep.
pub fn rate_experiment(cfg: &RateConfig) -> Result<RosenblattRateResult> {
    cfg.validate()?;
    let target = target_vg(&cfg.case)?;
    let ky = target.cumulants_2_to_6()?;
    let dict = default_dictionary();
    let mut rows = Vec::with_capacity(cfg.gamma1.len());
    for (idx, &g1) in cfg.gamma1.iter().enumerate() {
        let g2 = cfg.case.gamma2_for(g1);
        let spec = RosenblattSpec::new(g1, g2, cfg.n_nodes, cfg.mesh)?;
        let ns = nystrom_spectrum(&spec)?;
        let f = &ns.element;
        let kf = f.cumulants_2_to_6();
        let ms = f.m_statistic(&target)?;
        let mut sorted = f.eigenvalues().to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let top = [sorted[0], *sorted.last().expect("nonempty")];
        let mut by_abs = sorted.clone();
        by_abs.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
        let (w1, dl) = if cfg.n_mc > 0 {
            let xs = f.sample_with_gaussian_tail(cfg.n_mc, derive_seed(cfg.seed, 2 * idx as u64), SAMPLE_HEAD);
            let ys = target.sample(cfg.n_mc, derive_seed(cfg.seed, 2 * idx as u64 + 1));
            (Some(empirical_w1_batched(&xs, &ys)?), Some(dh2_dictionary_lower(&xs, &target, &dict)?))
        } else {
            (None, None)
        };
        rows.push(RosenblattRow {
            gamma1: g1,
            gamma2: g2,
            eps: -g1 - 0.5,
            kappa: kf,
            kappa_diff: std::array::from_fn(|i| (kf[i] - ky[i]).abs()),
            m: ms.m,
            six_moment_bound: six_moment_bound(f, &target)?,
            top_eigenvalues: top,
            third_abs: by_abs.get(2).map(|c| c.abs()).unwrap_or(0.0),
            kappa2_rel_gap: ns.kappa2_rel_gap,
            w1_hat: w1.map(|w| w.value),
            w1_se: w1.map(|w| w.se),
            dict_lower: dl.as_ref().map(|d| d.value),
            dict_se: dl.as_ref().map(|d| d.se),
            spectrum: f.eigenvalues().to_vec(),
        });
    }
    let fit = |sel: &dyn Fn(&RosenblattRow) -> f64| rate_fit(&rows.iter().map(|r| (r.eps, sel(r))).collect::<Vec<_>>());
    Ok(RosenblattRateResult {
        slope_m: fit(&|r| r.m)?,
        slope_kappa: [
            fit(&|r| r.kappa_diff[1])?,
            fit(&|r| r.kappa_diff[2])?,
            fit(&|r| r.kappa_diff[3])?,
            fit(&|r| r.kappa_diff[4])?,
        ],
        slope_six_moment_bound: fit(&|r| r.six_moment_bound)?,
        config: cfg.clone(),
        target,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reduced_kernel_matches_x_integral() {
        // x-integral oracle: int_{-inf}^{t} (s-x)^{ga} (t-x)^{gb} dx with y = t - x,
        // split at y = 1 and mapped to (0, 1] by y = 1/u on the tail
        let (ga, gb) = (-0.6, -0.6);
        for &(s, t) in &[(1.0, 0.0), (0.7, 0.2), (0.3, 0.9)] {
            let (hi, lo, gh, gl) = if s > t { (s, t, ga, gb) } else { (t, s, gb, ga) };
            let d = hi - lo;
            let near = integrate_endpoint_singular(|y| (d + y).powf(gh) * y.powf(gl), 0.0, 1.0, gl, 1e-14, 1e-12).unwrap();
            let far = integrate_endpoint_singular(
                |u| (d + 1.0 / u).powf(gh) * (1.0 / u).powf(gl) / (u * u),
                0.0,
                1.0,
                -gh - gl - 2.0,
                1e-14,
                1e-12,
            )
            .unwrap();
            assert_relative_eq!(reduced_kernel(ga, gb, s, t).unwrap(), near + far, max_relative = 1e-9);
        }
        assert_relative_eq!(reduced_kernel(-0.6, -0.6, 1.0, 0.0).unwrap(), 6.838_1, max_relative = 1e-4);
    }

    #[test]
    fn reduced_kernel_symmetry_scaling_and_errors() {
        let k = |s, t| reduced_kernel(-0.55, -0.7, s, t).unwrap();
        assert_eq!(reduced_kernel(-0.6, -0.6, 0.2, 0.9).unwrap(), reduced_kernel(-0.6, -0.6, 0.9, 0.2).unwrap());
        // swapping the exponents is the same as swapping the arguments
        assert_relative_eq!(k(0.9, 0.2), reduced_kernel(-0.7, -0.55, 0.2, 0.9).unwrap(), max_relative = 1e-15);
        let e = 1.0 - 0.55 - 0.7;
        for &lam in &[0.1, 3.0, 17.0] {
            assert_relative_eq!(k(lam * 0.8, lam * 0.3), lam.powf(e) * k(0.8, 0.3), max_relative = 1e-12);
        }
        assert_eq!(k(0.4, 0.4), f64::INFINITY);
        assert!(reduced_kernel(-0.4, -0.6, 0.0, 1.0).is_err());
        assert!(reduced_kernel(-0.8, -0.8, 0.0, 1.0).is_err());
    }

    #[test]
    fn chaos_kernel_diagonal_closed_form() {
        let spec = RosenblattSpec::new(-0.55, -0.7, 50, 1.0).unwrap();
        let e = spec.gamma1 + spec.gamma2 + 1.0;
        for &x in &[-0.001f64, -0.3, -2.0, -40.0] {
            let want = ((1.0 - x).powf(e) - (-x).powf(e)) / e;
            let got = chaos_kernel(&spec, x, x).unwrap() / spec.normalization;
            assert_relative_eq!(got, want, max_relative = 1e-10);
        }
    }

    #[test]
    fn chaos_kernel_symmetry_decay_and_errors() {
        let spec = RosenblattSpec::new(-0.55, -0.9, 50, 1.0).unwrap();
        for &(a, b) in &[(-0.3, 0.4), (0.1, 0.6), (-5.0, -0.2), (0.95, -0.99)] {
            assert_eq!(chaos_kernel(&spec, a, b).unwrap(), chaos_kernel(&spec, b, a).unwrap());
        }
        // dominated by the slower tail |x|^{max(g1, g2)}
        let y = 0.3;
        let (x1, x2) = (-1e5, -1e6);
        let slope = (chaos_kernel(&spec, x2, y).unwrap() / chaos_kernel(&spec, x1, y).unwrap()).ln() / 10f64.ln();
        assert!((slope - spec.gamma1).abs() < 0.01, "{slope}");
        assert!(chaos_kernel(&spec, 1.5, 0.0).is_err());
        assert!(chaos_kernel(&spec, 0.5, 0.5).is_err());
        assert_eq!(chaos_kernel(&spec, 1.0, 0.2).unwrap(), 0.0);
    }

    #[test]
    fn spec_validation() {
        assert!(RosenblattSpec::with_defaults(-0.6, -0.6).is_ok());
        assert!(RosenblattSpec::with_defaults(-0.4, -0.6).is_err());
        assert!(RosenblattSpec::with_defaults(-0.8, -0.75).is_err());
        assert!(RosenblattSpec::with_defaults(-1.0, -0.51).is_err());
        assert!(RosenblattSpec::new(-0.6, -0.6, 2, 1.0).is_err());
        assert!(RosenblattSpec::new(-0.6, -0.6, 100, 0.5).is_err());
        let s = RosenblattSpec::new(-0.6, -0.6, 10, 3.0).unwrap();
        let p = s.mesh_points();
        assert_eq!((p[0], p[10]), (0.0, 1.0));
        assert!(p.windows(2).all(|w| w[1] > w[0]));
        assert_relative_eq!(p[5], 0.5, max_relative = 1e-15);
    }

    #[test]
    fn gram_matrix_is_symmetric() {
        let s = RosenblattSpec::new(-0.55, -0.7, 30, 2.0).unwrap();
        let g = gram_matrix(&s).unwrap();
        let asym = (&g - g.transpose()).abs().max();
        assert!(asym <= 1e-13 * g.abs().max(), "{asym}");
    }

    #[test]
    fn spectrum_normalized_and_grid_stable() {
        let s = RosenblattSpec::new(-0.6, -0.6, 200, 1.0).unwrap();
        let a = nystrom_spectrum(&s).unwrap();
        let k = a.element.cumulants_2_to_6();
        assert_relative_eq!(k[0], 1.0, max_relative = 1e-12);
        assert!(!a.refinement_warning && a.kappa2_discrete < 1.0);
        let b = nystrom_spectrum(&RosenblattSpec { n_nodes: 400, ..s }).unwrap();
        let kb = b.element.cumulants_2_to_6();
        assert!(((kb[2] - k[2]) / kb[2]).abs() < 1e-3);
        assert!(b.kappa2_rel_gap < a.kappa2_rel_gap);
    }

    #[test]
    fn spectrum_is_invariant_under_exponent_swap() {
        let a = nystrom_spectrum(&RosenblattSpec::new(-0.55, -0.7, 120, 1.0).unwrap()).unwrap();
        let b = nystrom_spectrum(&RosenblattSpec::new(-0.7, -0.55, 120, 1.0).unwrap()).unwrap();
        let (ka, kb) = (a.element.cumulants_2_to_6(), b.element.cumulants_2_to_6());
        for i in 0..5 {
            assert_relative_eq!(ka[i], kb[i], max_relative = 1e-8);
        }
    }

    #[test]
    fn trace_oracle_agrees_with_spectrum() {
        for &(g1, g2) in &[(-0.6, -0.6), (-0.58, -0.52)] {
            let s = RosenblattSpec::new(g1, g2, 200, 1.0).unwrap();
            let k = nystrom_spectrum(&s).unwrap().element.cumulants_2_to_6();
            for p in 2..=4 {
                let mc = cumulant_trace_mc(&s, p, 20 * 16384, 3).unwrap();
                let tol = (0.01 * k[p - 2].abs()).max(4.0 * mc.se);
                assert!((mc.value - k[p - 2]).abs() <= tol, "({g1}, {g2}) p={p}: {} vs {}", mc.value, k[p - 2]);
            }
        }
        let s = RosenblattSpec::with_defaults(-0.6, -0.6).unwrap();
        assert!(cumulant_trace_mc(&s, 7, 100_000, 1).is_err());
        assert!(cumulant_trace_mc(&s, 3, 10, 1).is_err());
    }

    #[test]
    fn trace_oracle_is_deterministic() {
        let s = RosenblattSpec::with_defaults(-0.6, -0.55).unwrap();
        let a = cumulant_trace_mc(&s, 3, 20 * 1024, 9).unwrap();
        let b = cumulant_trace_mc(&s, 3, 20 * 1024, 9).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.se.to_bits(), b.se.to_bits());
    }

    #[test]
    fn rho_case_values() {
        let c = RhoCase::new(0.5).unwrap();
        // reference values from a 30-digit evaluation of the closed forms
        assert!((c.alpha_rho - 0.999_567_005_500_192_5).abs() < 1e-14, "{}", c.alpha_rho);
        assert!((c.beta_rho - 0.029_424_505_354_860_57).abs() < 1e-14, "{}", c.beta_rho);
        for &rho in &[0.01, 0.2, 0.5, 0.9, 0.999] {
            let c = RhoCase::new(rho).unwrap();
            assert!((c.alpha_rho.powi(2) + c.beta_rho.powi(2) - 1.0).abs() < 1e-12);
            assert!(c.alpha_rho > c.beta_rho && c.beta_rho > 0.0);
        }
        assert!(RhoCase::new(1.5).is_err());
        assert!(RhoCase::new(0.0).is_err());
        assert_eq!(c.gamma2_for(-0.52), -0.54);
    }

    #[test]
    fn limit_targets() {
        let a = target_vg(&LimitCase::A { gamma2: -0.75 }).unwrap();
        assert_eq!((a.r, a.theta, a.sigma), (1.0, 0.0, 1.0));
        let b = LimitCase::B { rho: RhoCase::new(0.5).unwrap() };
        let y = target_vg(&b).unwrap();
        assert!((y.theta - 0.685_994_340_570_035_3).abs() < 1e-14);
        assert!((y.sigma - 0.242_535_625_036_332_97).abs() < 1e-14);
        assert_relative_eq!(y.cumulants_2_to_6().unwrap()[0], 1.0, max_relative = 1e-12);
        // the limit spectrum reproduces the limit law
        let f = SecondChaosElement::new(b.target_spectrum()).unwrap();
        assert!(f.m_statistic(&y).unwrap().m < 1e-12);
    }

    #[test]
    fn corner_limits_are_reached() {
        // rho corner: the two dominant eigenvalues approach alpha/sqrt2 and -beta/sqrt2
        let rho = RhoCase::new(0.5).unwrap();
        let g1 = -0.5001;
        let s = RosenblattSpec::new(g1, rho.gamma2_for(g1), 100, 1.0).unwrap();
        let e = nystrom_spectrum(&s).unwrap().element;
        let top = e.eigenvalues()[0];
        let bottom = e.eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((top - rho.alpha_rho * r).abs() < 1e-3 && (bottom + rho.beta_rho * r).abs() < 1e-3);
        // fixed-g2 corner: the third |eigenvalue| shrinks monotonically along the sweep
        let mut prev = f64::INFINITY;
        for g1 in [-0.51, -0.503, -0.501, -0.5003, -0.5001] {
            let s = RosenblattSpec::new(g1, -0.75, 100, 1.0).unwrap();
            let mut c = nystrom_spectrum(&s).unwrap().element.eigenvalues().to_vec();
            c.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
            assert!(c[2].abs() < prev);
            prev = c[2].abs();
        }
    }

    #[test]
    fn sweep_validation_lists_offenders() {
        let mut cfg = RateConfig::case_a(0, 1);
        cfg.gamma1 = vec![-0.52, -0.45, -0.53, -0.8];
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("-0.45") && msg.contains("-0.8") && !msg.contains("-0.53"), "{msg}");
        let mut cfg = RateConfig::case_b(0.5, 0, 1).unwrap();
        cfg.gamma1 = vec![-0.52, -0.53, -0.55, -0.8];
        assert!(cfg.validate().is_err());
        assert!(RateConfig::case_b(1.5, 0, 1).is_err());
    }

    #[test]
    fn kv_config_parsing() {
        let cfg = RateConfig::from_kv("# sweep\ncase = b\nrho = 0.5\ngamma1 = -0.52, -0.55,-0.6,-0.62\nn_nodes=300\nseed = 4 # trailing\n").unwrap();
        assert!(matches!(cfg.case, LimitCase::B { .. }));
        assert_eq!(cfg.gamma1, vec![-0.52, -0.55, -0.6, -0.62]);
        assert_eq!((cfg.n_nodes, cfg.seed, cfg.mesh), (300, 4, RosenblattSpec::DEFAULT_MESH));
        let a = RateConfig::from_kv("seed=1\ngamma2=-0.8").unwrap();
        assert_eq!(a.case, LimitCase::A { gamma2: -0.8 });
        for bad in ["case=a", "seed=1\nfoo=2", "seed=1\ncase=c", "seed=x", "seed=1\nseed=2", "seed 1", "seed=1\ncase=b"] {
            assert!(matches!(RateConfig::from_kv(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn rate_experiment_rows_and_csv() {
        let mut cfg = RateConfig::case_b(0.5, 4000, 2).unwrap();
        cfg.n_nodes = 60;
        let r = rate_experiment(&cfg).unwrap();
        assert_eq!(r.rows.len(), 5);
        for row in &r.rows {
            assert_relative_eq!(row.kappa[0], 1.0, max_relative = 1e-12);
            assert!(row.m >= row.kappa_diff[1..].iter().fold(0.0f64, |a, d| a.max(*d)) - 1e-12);
            assert!(row.w1_hat.is_some() && row.dict_lower.is_some());
        }
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.starts_with("gamma1,gamma2,eps,"));
        assert_eq!(csv.lines().nth(1).unwrap().split(',').count(), csv.lines().next().unwrap().split(',').count());
        let again = rate_experiment(&cfg).unwrap();
        assert_eq!(csv, again.to_csv());
    }
}
