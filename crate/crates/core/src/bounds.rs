//! Explicit Malliavin–Stein upper bounds, Monte Carlo distance estimates and
//! the rate experiment along an interpolating family of chaos elements.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::chaos::{MStatistic, SecondChaosElement};
use crate::error::{Error, Result};
use crate::rng::{batch_se, sample_blocks, Estimate};
use crate::stein::{ms_constants, MsConstants};
use crate::vg::VgParams;

/// Relative tolerance for the `E F^2 = E Y^2` precondition.
pub const KAPPA2_MATCH_TOL: f64 = 1e-9;

/// Number of batches behind every Monte Carlo standard error.
pub const N_BATCHES: usize = 20;

/// A test function with `|h'| <= 1` and `|h''| <= 1` on the whole line.
///
/// Certificates (each maximum is attained):
/// - `Sin{a}`: `h = s sin(a x)/a` with `s = min(1, 1/a)`; `|h'| <= s`, `|h''| <= a s`.
/// - `Cos{a}`: same bounds as `Sin`.
/// - `Tanh{a, b}`: `h = k tanh(a (x - b))/a` with `k = min(1, 1/(c a))`,
///   `c = 4/(3 sqrt 3) ~ 0.7698 = max |2 sech^2 tanh|`; `|h'| <= k`, `|h''| <= c a k`.
/// - `Bump{w, m}`: `h = q exp(-(x-m)^2/(2 w^2))` with `q = min(w e^{1/2}, w^2)`;
///   `|h'| <= q e^{-1/2}/w`, `|h''| <= q/w^2`.
/// - `LogCosh`: `h' = tanh`, `h'' = sech^2`.
/// - `SqrtOnePlusSquare`: `h' = x/sqrt(1+x^2)`, `h'' = (1+x^2)^{-3/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DictFn {
    Sin { a: f64 },
    Cos { a: f64 },
    Tanh { a: f64, b: f64 },
    Bump { w: f64, m: f64 },
    LogCosh,
    SqrtOnePlusSquare,
}

const TANH_CURVATURE: f64 = 0.769_800_358_919_501_2; // 4 / (3 sqrt 3)

impl DictFn {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            DictFn::Sin { a } => (a * x).sin() / a * 1f64.min(1.0 / a),
            DictFn::Cos { a } => (a * x).cos() / a * 1f64.min(1.0 / a),
            DictFn::Tanh { a, b } => (a * (x - b)).tanh() / a * 1f64.min(1.0 / (TANH_CURVATURE * a)),
            DictFn::Bump { w, m } => {
                let q = (w * 0.5f64.exp()).min(w * w);
                q * (-(x - m) * (x - m) / (2.0 * w * w)).exp()
            }
            DictFn::LogCosh => {
                // log cosh x = |x| + log1p(e^{-2|x|}) - log 2, stable for large |x|
                let ax = x.abs();
                ax + (-2.0 * ax).exp().ln_1p() - std::f64::consts::LN_2
            }
            DictFn::SqrtOnePlusSquare => x.hypot(1.0),
        }
    }

    /// Analytic sup-norms `(||h'||, ||h''||)`.
    pub fn derivative_bounds(&self) -> (f64, f64) {
        match *self {
            DictFn::Sin { a } | DictFn::Cos { a } => {
                let s = 1f64.min(1.0 / a);
                (s, a * s)
            }
            DictFn::Tanh { a, .. } => {
                let k = 1f64.min(1.0 / (TANH_CURVATURE * a));
                (k, TANH_CURVATURE * a * k)
            }
            DictFn::Bump { w, .. } => {
                let q = (w * 0.5f64.exp()).min(w * w);
                (q * (-0.5f64).exp() / w, q / (w * w))
            }
            DictFn::LogCosh | DictFn::SqrtOnePlusSquare => (1.0, 1.0),
        }
    }
}

/// The default dictionary used by reports and experiments.
pub fn default_dictionary() -> Vec<DictFn> {
    let mut d = Vec::new();
    for &a in &[0.25, 0.5, 1.0, 2.0] {
        d.push(DictFn::Sin { a });
        d.push(DictFn::Cos { a });
    }
    for &a in &[0.5, 1.0, 2.0] {
        for &b in &[-1.0, 0.0, 1.0] {
            d.push(DictFn::Tanh { a, b });
        }
    }
    for &w in &[0.5, 1.0, 2.0] {
        for &m in &[-1.0, 0.0, 1.0] {
            d.push(DictFn::Bump { w, m });
        }
    }
    d.push(DictFn::LogCosh);
    d.push(DictFn::SqrtOnePlusSquare);
    d
}

fn require_matched(f: &SecondChaosElement, y: &VgParams) -> Result<[f64; 5]> {
    let ky = y.cumulants_2_to_6()?;
    let kf2 = f.cumulants_2_to_6()[0];
    if (kf2 - ky[0]).abs() > KAPPA2_MATCH_TOL * ky[0] {
        return Err(Error::Precondition(format!(
            "kappa2 mismatch: F has {kf2}, target has {}; rescale the spectrum first",
            ky[0]
        )));
    }
    Ok(ky)
}

/// The explicit six-cumulant bound on `d_{H1}(F, Y)` for matched second moments.
pub fn six_moment_bound(f: &SecondChaosElement, y: &VgParams) -> Result<f64> {
    require_matched(f, y)?;
    let c = ms_constants(y)?;
    let m = f.m_statistic(y)?;
    Ok(six_moment_from_diffs(&m.diffs, y, &c))
}

fn six_moment_from_diffs(d: &[f64; 5], y: &VgParams, c: &MsConstants) -> f64 {
    let (t, s) = (y.theta, y.sigma);
    let root = |v: f64| v.abs().sqrt();
    c.c1 * (root(d[4]) / 120f64.sqrt()
        + 2.0 * (t.abs() / 24.0).sqrt() * root(d[3])
        + ((4.0 * t * t - 2.0 * s * s).abs() / 6.0).sqrt() * root(d[2])
        + s * (2.0 * t.abs()).sqrt() * root(d[1]))
        + 0.5 * c.c1 * d[1].abs()
}

/// Constant `C` of the single-statistic bound `C max(sqrt M, M)`.
///
/// Each of the four root terms is at most `C1 m sqrt M` and the linear third
/// cumulant term is at most `C1 m M`, with
/// `m = max{1/2, 2 sqrt(|theta|/4!), sqrt(|4 theta^2 - 2 sigma^2|/3!), sigma sqrt(2|theta|)}`;
/// hence `C = 5 C1 m` dominates the six-cumulant bound for every `M`.
pub fn clean_constant(y: &VgParams, c: &MsConstants) -> f64 {
    let (t, s) = (y.theta, y.sigma);
    let m = 0.5f64
        .max(2.0 * (t.abs() / 24.0).sqrt())
        .max(((4.0 * t * t - 2.0 * s * s).abs() / 6.0).sqrt())
        .max(s * (2.0 * t.abs()).sqrt());
    5.0 * c.c1 * m
}

/// `C max(sqrt M, M)`.
pub fn clean_bound(f: &SecondChaosElement, y: &VgParams) -> Result<f64> {
    require_matched(f, y)?;
    let c = ms_constants(y)?;
    let m = f.m_statistic(y)?.m;
    Ok(clean_constant(y, &c) * m.sqrt().max(m))
}

/// Sorted-coupling estimate `(1/n) sum |x_(i) - y_(i)|` of `W1`.
pub fn empirical_w1(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Precondition(format!(
            "sample lengths differ: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Precondition("need at least two samples".into()));
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    Ok(a.iter().zip(&b).map(|(u, v)| (u - v).abs()).sum::<f64>() / a.len() as f64)
}

/// `W1` estimate on the full samples with a standard error from equal batches.
pub fn empirical_w1_batched(xs: &[f64], ys: &[f64]) -> Result<Estimate> {
    let value = empirical_w1(xs, ys)?;
    let per = xs.len() / N_BATCHES;
    if per < 2 {
        return Ok(Estimate { value, se: f64::NAN });
    }
    let vals = (0..N_BATCHES)
        .map(|b| empirical_w1(&xs[b * per..(b + 1) * per], &ys[b * per..(b + 1) * per]))
        .collect::<Result<Vec<f64>>>()?;
    // a batch value estimates W1 from n/B points; its spread scales like 1/sqrt(n/B)
    Ok(Estimate {
        value,
        se: batch_se(&vals),
    })
}

/// Per-function detail of a dictionary lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DictTerm {
    pub func: DictFn,
    pub diff: f64,
    pub se: f64,
}

/// Lower estimate of `d_{H2}`: the largest `|mean h(xs) - E h(Y)|` over the dictionary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DictLower {
    pub value: f64,
    /// Standard error of the maximizing term.
    pub se: f64,
    pub max_se: f64,
    pub terms: Vec<DictTerm>,
}

fn mean_with_se(vals: impl Iterator<Item = f64>, n: usize) -> Estimate {
    let per = n / N_BATCHES;
    let mut sums = [0.0; N_BATCHES];
    let mut total = 0.0;
    for (i, v) in vals.enumerate() {
        total += v;
        if per > 0 && i < per * N_BATCHES {
            sums[i / per] += v;
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / per.max(1) as f64).collect();
    Estimate {
        value: total / n as f64,
        se: if per > 0 { batch_se(&means) } else { f64::NAN },
    }
}

fn summarize(terms: Vec<DictTerm>) -> DictLower {
    let best = terms
        .iter()
        .enumerate()
        .fold((0usize, -1.0f64), |acc, (i, t)| if t.diff.abs() > acc.1 { (i, t.diff.abs()) } else { acc });
    let max_se = terms.iter().fold(0.0f64, |a, t| a.max(t.se));
    DictLower {
        value: best.1.max(0.0),
        se: terms.get(best.0).map(|t| t.se).unwrap_or(0.0),
        max_se,
        terms,
    }
}

/// Dictionary lower bound with `E h(Y)` by quadrature against the density.
pub fn dh2_dictionary_lower(xs: &[f64], y: &VgParams, dict: &[DictFn]) -> Result<DictLower> {
    let mut terms = Vec::with_capacity(dict.len());
    for func in dict {
        let eh = y.expect(|x| func.eval(x))?;
        let est = mean_with_se(xs.iter().map(|&x| func.eval(x)), xs.len());
        terms.push(DictTerm {
            func: *func,
            diff: est.value - eh,
            se: est.se,
        });
    }
    Ok(summarize(terms))
}

/// Dictionary lower bound from coupled samples: `ys[i]` is an exact draw of
/// the target built from the same Gaussians as `xs[i]`, so
/// `mean(h(xs) - h(ys))` is unbiased for `E h(F) - E h(Y)` and its standard
/// error shrinks with the distance between the two spectra.
pub fn dh2_dictionary_lower_coupled(xs: &[f64], ys: &[f64], dict: &[DictFn]) -> Result<DictLower> {
    if xs.len() != ys.len() {
        return Err(Error::Precondition("coupled samples must have equal length".into()));
    }
    let terms = dict
        .iter()
        .map(|func| {
            let est = mean_with_se(
                xs.iter().zip(ys).map(|(&x, &y)| func.eval(x) - func.eval(y)),
                xs.len(),
            );
            DictTerm {
                func: *func,
                diff: est.value,
                se: est.se,
            }
        })
        .collect();
    Ok(summarize(terms))
}

/// Draws `(F, G)` for two spectra driven by the same Gaussians (the shorter
/// spectrum is padded with zeros).
pub fn sample_coupled(a: &[f64], b: &[f64], n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let len = a.len().max(b.len());
    let pad = |v: &[f64]| {
        let mut p = v.to_vec();
        p.resize(len, 0.0);
        p
    };
    let (pa, pb) = (pad(a), pad(b));
    let both = sample_blocks(2 * n, seed, |rng, out| {
        for pair in out.chunks_mut(2) {
            let (mut u, mut v) = (0.0, 0.0);
            for k in 0..len {
                let z: f64 = StandardNormal.sample(rng);
                let w = z * z - 1.0;
                u += pa[k] * w;
                v += pb[k] * w;
            }
            pair[0] = u;
            if pair.len() > 1 {
                pair[1] = v;
            }
        }
    });
    both.chunks(2).map(|p| (p[0], p[1])).unzip()
}

/// Log-log least squares fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares of `log y` on `log x`.
pub fn rate_fit(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 4 {
        return Err(Error::Precondition(format!(
            "rate fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    if let Some(p) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::Precondition(format!(
            "rate fit needs positive coordinates, got ({}, {})",
            p.0, p.1
        )));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(RateFit { slope, intercept, r2 })
}

/// All bound quantities for a pair `(F, Y)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub m: f64,
    pub m_prime: f64,
    pub m_argmax: usize,
    pub six_moment_bound: f64,
    pub clean_constant: f64,
    pub clean_bound: f64,
    pub w1_hat: f64,
    pub w1_se: f64,
    pub dh2_dictionary_lower: f64,
    pub dh2_se: f64,
    pub constants: MsConstants,
    /// Rows `l = 2..6`, columns `[kappa_l(F), kappa_l(Y)]`.
    pub cumulant_table: [[f64; 2]; 5],
    pub n_mc: usize,
    pub seed: u64,
}

/// Builds the full report; `F` must already match the target's second moment.
pub fn bound_report(f: &SecondChaosElement, y: &VgParams, n_mc: usize, seed: u64) -> Result<BoundReport> {
    let ky = require_matched(f, y)?;
    if n_mc < 2 * N_BATCHES {
        return Err(Error::Precondition(format!("n_mc must be at least {}", 2 * N_BATCHES)));
    }
    let c = ms_constants(y)?;
    let ms: MStatistic = f.m_statistic(y)?;
    let kf = f.cumulants_2_to_6();
    let xs = f.sample(n_mc, crate::rng::derive_seed(seed, 0));
    let ys = y.sample(n_mc, crate::rng::derive_seed(seed, 1));
    let w1 = empirical_w1_batched(&xs, &ys)?;
    let dict = dh2_dictionary_lower(&xs, y, &default_dictionary())?;
    let cc = clean_constant(y, &c);
    Ok(BoundReport {
        m: ms.m,
        m_prime: ms.m_prime,
        m_argmax: ms.argmax,
        six_moment_bound: six_moment_from_diffs(&ms.diffs, y, &c),
        clean_constant: cc,
        clean_bound: cc * ms.m.sqrt().max(ms.m),
        w1_hat: w1.value,
        w1_se: w1.se,
        dh2_dictionary_lower: dict.value,
        dh2_se: dict.se,
        constants: c,
        cumulant_table: std::array::from_fn(|i| [kf[i], ky[i]]),
        n_mc,
        seed,
    })
}

/// One point of the interpolation experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub t: f64,
    pub m: f64,
    pub w1_hat: f64,
    pub w1_se: f64,
    pub dict_lower: f64,
    pub dict_se: f64,
    pub six_moment_bound: f64,
}

/// Configuration of the interpolation experiment toward a chaos-type VG target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationConfig {
    /// Spectrum of the target (must reproduce the target's cumulants).
    pub target_spectrum: Vec<f64>,
    pub target: VgParams,
    /// Perturbation direction; the family is `(1-t) c_Y + t c_pert`, rescaled.
    pub perturbation: Vec<f64>,
    /// Exponents `k` of `t = 2^{-k}`.
    pub k_values: Vec<u32>,
    pub n_mc: usize,
    pub seed: u64,
}

impl InterpolationConfig {
    /// The reference family toward `VG_c(1, 0, 1)`: `c_Y = (1/2, -1/2)`,
    /// symmetric perturbation `(0.3, -0.3, 0.4, -0.4)`, `k = 1..7`.
    ///
    /// With a symmetric perturbation the odd cumulants stay matched and the
    /// first-order change of the even ones is a pure rescaling, so `M(F_t)`
    /// decays like `t^2`; the slopes are measured against `M`.
    pub fn reference(n_mc: usize, seed: u64) -> Self {
        InterpolationConfig {
            target_spectrum: vec![0.5, -0.5],
            target: VgParams::centered(1.0, 0.0, 1.0).expect("valid"),
            perturbation: vec![0.3, -0.3, 0.4, -0.4],
            k_values: (1..=7).collect(),
            n_mc,
            seed,
        }
    }
}

/// Result of the interpolation experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterpolationResult {
    pub rows: Vec<RateRow>,
    pub slope_dict_vs_m: RateFit,
    pub slope_bound_vs_m: RateFit,
    pub slope_w1_vs_m: RateFit,
}

impl InterpolationResult {
    /// CSV with columns `t,M,w1_hat,w1_se,dict_lower,dict_se,six_moment_bound`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,M,w1_hat,w1_se,dict_lower,dict_se,six_moment_bound\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                r.t, r.m, r.w1_hat, r.w1_se, r.dict_lower, r.dict_se, r.six_moment_bound
            ));
        }
        s
    }
}

/// Coefficients of the interpolating family member `F_t`, rescaled to the
/// target's `kappa_2`, position-aligned with the (zero-padded) target spectrum.
pub fn interpolated_coefficients(c_y: &[f64], c_pert: &[f64], t: f64, kappa2: f64) -> Vec<f64> {
    let len = c_y.len().max(c_pert.len());
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    let v: Vec<f64> = (0..len).map(|i| (1.0 - t) * at(c_y, i) + t * at(c_pert, i)).collect();
    let k2 = 2.0 * v.iter().map(|c| c * c).sum::<f64>();
    let s = (kappa2 / k2).sqrt();
    v.into_iter().map(|c| c * s).collect()
}

/// The interpolating family member `F_t` as a chaos element.
pub fn interpolated_element(c_y: &[f64], c_pert: &[f64], t: f64, kappa2: f64) -> Result<SecondChaosElement> {
    SecondChaosElement::new(
        interpolated_coefficients(c_y, c_pert, t, kappa2)
            .into_iter()
            .filter(|c| *c != 0.0)
            .collect(),
    )
}

/// Runs the interpolation experiment with coupled Monte Carlo estimates.
pub fn interpolation_experiment(cfg: &InterpolationConfig) -> Result<InterpolationResult> {
    let fy = SecondChaosElement::new(cfg.target_spectrum.clone())?;
    let my = fy.m_statistic(&cfg.target)?;
    let ky = cfg.target.cumulants_2_to_6()?;
    if my.m > 1e-10 * ky.iter().fold(1.0f64, |a, k| a.max(k.abs())) {
        return Err(Error::Precondition(
            "target spectrum does not reproduce the target cumulants".into(),
        ));
    }
    let c = ms_constants(&cfg.target)?;
    let dict = default_dictionary();
    let mut rows = Vec::with_capacity(cfg.k_values.len());
    for &k in &cfg.k_values {
        let t = 0.5f64.powi(k as i32);
        let raw = interpolated_coefficients(&cfg.target_spectrum, &cfg.perturbation, t, ky[0]);
        let f = interpolated_element(&cfg.target_spectrum, &cfg.perturbation, t, ky[0])?;
        let ms = f.m_statistic(&cfg.target)?;
        let (xs, ys) = sample_coupled(&raw, &cfg.target_spectrum, cfg.n_mc, crate::rng::derive_seed(cfg.seed, k as u64));
        let w1 = empirical_w1_batched(&xs, &ys)?;
        let d = dh2_dictionary_lower_coupled(&xs, &ys, &dict)?;
        rows.push(RateRow {
            t,
            m: ms.m,
            w1_hat: w1.value,
            w1_se: w1.se,
            dict_lower: d.value,
            dict_se: d.se,
            six_moment_bound: six_moment_from_diffs(&ms.diffs, &cfg.target, &c),
        });
    }
    let fit = |sel: fn(&RateRow) -> f64| rate_fit(&rows.iter().map(|r| (r.m, sel(r))).collect::<Vec<_>>());
    Ok(InterpolationResult {
        slope_dict_vs_m: fit(|r| r.dict_lower)?,
        slope_bound_vs_m: fit(|r| r.six_moment_bound)?,
        slope_w1_vs_m: fit(|r| r.w1_hat)?,
        rows,
    })
}
