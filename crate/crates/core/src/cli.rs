//! Command-line front end. Every command resolves its arguments into a
//! serializable configuration, runs deterministically from `(config, seed)`,
//! and emits a versioned JSON envelope plus optional CSV artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bounds::{bound_report, interpolation_experiment, InterpolationConfig};
use crate::chaos::SecondChaosElement;
use crate::error::{Error, Result};
use crate::rng::batched_cumulants;
use crate::rosenblatt::{rate_experiment, LimitCase, RateConfig, RhoCase, RosenblattSpec};
use crate::stein::{solve, Spacing, SteinGrid, SteinTestFn};
use crate::vg::VgParams;

/// Version of the JSON envelope layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "vgchaos",
    version,
    about = "Variance-Gamma approximation on the second Wiener chaos",
    args_override_self = true,
    allow_negative_numbers = true
)]
pub struct Cli {
    /// Directory receiving the JSON/CSV artifacts (stdout gets the summary).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Flat `key = value` file; keys are long flag names and override flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// What to print on stdout when `--out` is absent.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,

    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cumulants, the linear cumulant identity and an optional density table.
    VgInfo(VgInfoArgs),
    /// Exact and sampled cumulants of a finite spectrum.
    ChaosCumulants(ChaosArgs),
    /// Six-cumulant bounds and Monte Carlo distances for a spectrum and a target.
    BoundReport(BoundArgs),
    /// Numerical solution of the Stein equation for a built-in test function.
    SteinSolve(SteinArgs),
    /// Rate experiment for the generalized Rosenblatt variable.
    RosenblattRate(RateArgs),
}

#[derive(Debug, Clone, Copy, Args, Serialize)]
pub struct TargetArgs {
    #[arg(long)]
    pub r: f64,
    #[arg(long)]
    pub theta: f64,
    #[arg(long)]
    pub sigma: f64,
}

impl TargetArgs {
    fn params(&self) -> Result<VgParams> {
        VgParams::centered(self.r, self.theta, self.sigma)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct VgInfoArgs {
    #[command(flatten)]
    pub target: TargetArgs,
    /// Density table `start:stop:count`.
    #[arg(long, allow_hyphen_values = true)]
    pub density_grid: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SpectrumArgs {
    /// Comma-separated eigenvalues.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub spectrum: Option<Vec<f64>>,
    /// File with eigenvalues (JSON array, or numbers separated by commas or whitespace).
    #[arg(long)]
    pub spectrum_file: Option<PathBuf>,
}

impl SpectrumArgs {
    fn load(&self) -> Result<SecondChaosElement> {
        match (&self.spectrum, &self.spectrum_file) {
            (Some(v), None) => SecondChaosElement::new(v.clone()),
            (None, Some(p)) => SecondChaosElement::new(parse_spectrum_text(&std::fs::read_to_string(p)?)?),
            _ => Err(Error::Config("give exactly one of --spectrum or --spectrum-file".into())),
        }
    }
}

/// Parses a JSON array or a list of numbers separated by commas, whitespace or newlines (`#` comments allowed).
pub fn parse_spectrum_text(text: &str) -> Result<Vec<f64>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed).map_err(|e| Error::Config(format!("spectrum file: {e}")));
    }
    text.lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split(|c: char| c == ',' || c.is_whitespace()))
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| Error::Config(format!("spectrum file: cannot parse {t:?}"))))
        .collect()
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct ChaosArgs {
    #[command(flatten)]
    pub spectrum: SpectrumArgs,
    /// Highest exact cumulant order reported.
    #[arg(long, default_value_t = 6)]
    pub max_order: usize,
    /// Rescale the spectrum to this second cumulant first.
    #[arg(long)]
    pub kappa2: Option<f64>,
    /// Sample size for the Monte Carlo cumulant check (0 skips it).
    #[arg(long, default_value_t = 0)]
    pub n_mc: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct BoundArgs {
    #[command(flatten)]
    pub spectrum: SpectrumArgs,
    #[command(flatten)]
    pub target: TargetArgs,
    /// Rescale the spectrum to the target's second cumulant.
    #[arg(long)]
    pub rescale: bool,
    #[arg(long, default_value_t = 1_000_000)]
    pub n_mc: usize,
    #[arg(long)]
    pub seed: u64,
    /// Run the interpolation experiment from the target's chaos spectrum
    /// toward `--perturbation` instead of a single report (integer `r` only).
    #[arg(long)]
    pub sweep: bool,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [0.3, -0.3, 0.4, -0.4])]
    pub perturbation: Vec<f64>,
    /// The sweep uses `t = 2^{-k}` for `k = 1..=k_max`.
    #[arg(long, default_value_t = 7)]
    pub k_max: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpacingArg {
    Uniform,
    Tanh,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct SteinArgs {
    #[command(flatten)]
    pub target: TargetArgs,
    /// Test function: x, x2, tanh, sin, bump or const.
    #[arg(long)]
    pub h: String,
    #[arg(long, default_value_t = -8.0)]
    pub x_min: f64,
    #[arg(long, default_value_t = 8.0)]
    pub x_max: f64,
    #[arg(long, default_value_t = 2048)]
    pub n_points: usize,
    #[arg(long, value_enum, default_value_t = SpacingArg::Uniform)]
    pub spacing: SpacingArg,
    /// Clustering strength of the tanh spacing.
    #[arg(long, default_value_t = 2.0)]
    pub strength: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseArg {
    A,
    B,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(allow_negative_numbers = true)]
pub struct RateArgs {
    #[arg(long, value_enum, default_value_t = CaseArg::A)]
    pub case: CaseArg,
    /// Required for case b.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Fixed second exponent in case a.
    #[arg(long, default_value_t = RateConfig::DEFAULT_GAMMA2)]
    pub gamma2: f64,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = RateConfig::DEFAULT_SWEEP)]
    pub gamma1: Vec<f64>,
    #[arg(long, default_value_t = RosenblattSpec::DEFAULT_NODES)]
    pub n_nodes: usize,
    #[arg(long, default_value_t = RosenblattSpec::DEFAULT_MESH)]
    pub mesh: f64,
    /// Samples per sweep point for W1 and dictionary estimates (0 skips them).
    #[arg(long, default_value_t = 200_000)]
    pub n_mc: usize,
    #[arg(long)]
    pub seed: u64,
}

impl RateArgs {
    fn config(&self) -> Result<RateConfig> {
        let case = match self.case {
            CaseArg::A => LimitCase::A { gamma2: self.gamma2 },
            CaseArg::B => LimitCase::B {
                rho: RhoCase::new(
                    self.rho
                        .ok_or_else(|| Error::Config("case b needs --rho".into()))?,
                )?,
            },
        };
        Ok(RateConfig {
            case,
            gamma1: self.gamma1.clone(),
            n_nodes: self.n_nodes,
            mesh: self.mesh,
            n_mc: self.n_mc,
            seed: self.seed,
        })
    }
}

/// The standard wrapper around every JSON report.
#[derive(Debug, Serialize)]
pub struct Envelope<'a, C: Serialize, R: Serialize> {
    pub schema_version: u32,
    pub version: &'static str,
    pub command: &'static str,
    pub config_hash: String,
    pub config: &'a C,
    pub result: R,
}

/// Hex SHA-256 of the canonical JSON of `config` tagged with the command name.
pub fn config_hash<C: Serialize>(command: &str, config: &C) -> Result<String> {
    let body = serde_json::to_string(&(command, config))?;
    let digest = Sha256::digest(body.as_bytes());
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(s, "{b:02x}");
    }
    Ok(s)
}

/// The artifacts a command produced: the JSON envelope and named CSV files.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub json: String,
    /// `(file name, contents)`; the first entry is printed for `--format csv`.
    pub csv: Vec<(String, String)>,
    /// File name for the JSON envelope.
    pub json_name: &'static str,
}

fn envelope<C: Serialize, R: Serialize>(command: &'static str, config: &C, result: R) -> Result<String> {
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        version: crate::VERSION,
        command,
        config_hash: config_hash(command, config)?,
        config,
        result,
    };
    let mut s = serde_json::to_string_pretty(&env)?;
    s.push('\n');
    Ok(s)
}

/// Parses `start:stop:count` into `count` equally spaced points.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::Config(format!("density grid must be start:stop:count, got {spec:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n < 2 || !(b > a) {
        return Err(bad());
    }
    Ok((0..n).map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 }).collect())
}

#[derive(Serialize)]
struct VgInfoResult {
    params: VgParams,
    /// `kappa_2 .. kappa_6`.
    cumulants: [f64; 5],
    identity_residual: f64,
    identity_scale: f64,
    identity_ok: bool,
    tail_rates: (f64, f64),
    density_rows: usize,
}

fn cmd_vg_info(a: &VgInfoArgs) -> Result<Output> {
    let p = a.target.params()?;
    let k = p.cumulants_2_to_6()?;
    let (res, scale) = p.cumulant_identity_residual()?;
    let mut csv = Vec::new();
    if let Some(g) = &a.density_grid {
        let mut s = String::from("x,density,singular\n");
        for x in parse_grid(g)? {
            let d = p.density(x);
            let _ = writeln!(s, "{x:.17e},{:.17e},{}", d.value, d.singular);
        }
        csv.push(("density.csv".to_string(), s));
    }
    let result = VgInfoResult {
        params: p,
        cumulants: k,
        identity_residual: res,
        identity_scale: scale,
        identity_ok: res.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE),
        tail_rates: p.tail_rates(),
        density_rows: csv.first().map(|(_, s)| s.lines().count() - 1).unwrap_or(0),
    };
    Ok(Output {
        json: envelope("vg-info", a, result)?,
        csv,
        json_name: "vg_info.json",
    })
}

#[derive(Serialize)]
struct SampleCumulant {
    order: usize,
    exact: f64,
    sample: f64,
    se: f64,
    z: f64,
}

#[derive(Serialize)]
struct ChaosResult {
    spectrum_len: usize,
    /// `(order, kappa)` for `2..=max_order`.
    cumulants: Vec<(usize, f64)>,
    sample: Option<Vec<SampleCumulant>>,
}

fn cmd_chaos(a: &ChaosArgs) -> Result<Output> {
    let mut f = a.spectrum.load()?;
    if let Some(k2) = a.kappa2 {
        f = f.rescaled_to_kappa2(k2)?;
    }
    let cumulants = (2..=a.max_order).map(|p| Ok((p, f.cumulant(p)?))).collect::<Result<Vec<_>>>()?;
    let sample = if a.n_mc > 0 {
        let seed = a.seed.ok_or_else(|| Error::Config("--seed is required with --n-mc".into()))?;
        let xs = f.sample(a.n_mc, seed);
        let est = batched_cumulants(&xs, crate::bounds::N_BATCHES);
        let exact = f.cumulants_2_to_6();
        Some(
            (0..5)
                .map(|i| SampleCumulant {
                    order: i + 2,
                    exact: exact[i],
                    sample: est[i].value,
                    se: est[i].se,
                    z: (est[i].value - exact[i]) / est[i].se,
                })
                .collect(),
        )
    } else {
        None
    };
    let mut csv = String::from("order,kappa\n");
    for (p, k) in &cumulants {
        let _ = writeln!(csv, "{p},{k:.17e}");
    }
    Ok(Output {
        json: envelope(
            "chaos-cumulants",
            a,
            ChaosResult {
                spectrum_len: f.len(),
                cumulants,
                sample,
            },
        )?,
        csv: vec![("cumulants.csv".into(), csv)],
        json_name: "chaos_cumulants.json",
    })
}

/// Chaos spectrum `(alpha x r, -beta x r)` of a centered VG law with integer `r`.
pub fn chaos_spectrum_of(p: &VgParams) -> Result<Vec<f64>> {
    if p.r.fract() != 0.0 || p.r < 1.0 || p.r > 10_000.0 {
        return Err(Error::Precondition(format!(
            "the target has a finite chaos spectrum only for integer r >= 1, got {}",
            p.r
        )));
    }
    let c = (p.theta * p.theta + p.sigma * p.sigma).sqrt();
    let (alpha, beta) = (0.5 * (c + p.theta), 0.5 * (c - p.theta));
    let r = p.r as usize;
    let mut v = vec![alpha; r];
    if beta > 0.0 {
        v.extend(std::iter::repeat_n(-beta, r));
    }
    Ok(v)
}

fn cmd_bound(a: &BoundArgs) -> Result<Output> {
    let y = a.target.params()?;
    if a.sweep {
        let cfg = InterpolationConfig {
            target_spectrum: chaos_spectrum_of(&y)?,
            target: y,
            perturbation: a.perturbation.clone(),
            k_values: (1..=a.k_max).collect(),
            n_mc: a.n_mc,
            seed: a.seed,
        };
        let res = interpolation_experiment(&cfg)?;
        let csv = res.to_csv();
        return Ok(Output {
            json: envelope("bound-report", a, &res)?,
            csv: vec![("interpolation.csv".into(), csv)],
            json_name: "interpolation.json",
        });
    }
    let mut f = a.spectrum.load()?;
    if a.rescale {
        f = f.rescaled_to_kappa2(y.cumulants_2_to_6()?[0])?;
    }
    let rep = bound_report(&f, &y, a.n_mc, a.seed)?;
    Ok(Output {
        json: envelope("bound-report", a, &rep)?,
        csv: Vec::new(),
        json_name: "bound_report.json",
    })
}

#[derive(Serialize)]
struct SteinSummary {
    residual_max: f64,
    expectation: f64,
    center_gap: f64,
    n_points: usize,
    f_min: f64,
    f_max: f64,
}

fn cmd_stein(a: &SteinArgs) -> Result<Output> {
    let p = a.target.params()?;
    let h = SteinTestFn::from_name(&a.h)?;
    let spacing = match a.spacing {
        SpacingArg::Uniform => Spacing::Uniform,
        SpacingArg::Tanh => Spacing::TanhGraded { strength: a.strength },
    };
    let grid = SteinGrid::new(a.x_min, a.x_max, a.n_points, spacing)?;
    let sol = solve(&p, |x| h.eval(x), &grid)?;
    let summary = SteinSummary {
        residual_max: sol.residual_max,
        expectation: sol.expectation,
        center_gap: sol.center_gap,
        n_points: sol.x.len(),
        f_min: sol.f.iter().copied().fold(f64::INFINITY, f64::min),
        f_max: sol.f.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    Ok(Output {
        json: envelope("stein-solve", a, summary)?,
        csv: vec![("stein_solution.csv".into(), sol.to_csv())],
        json_name: "stein_summary.json",
    })
}

fn cmd_rate(a: &RateArgs) -> Result<Output> {
    let cfg = a.config()?;
    let res = rate_experiment(&cfg)?;
    let mut csv = vec![("rosenblatt_rate.csv".to_string(), res.to_csv())];
    for (i, row) in res.rows.iter().enumerate() {
        let mut s = String::from("index,eigenvalue\n");
        for (j, c) in row.spectrum.iter().enumerate() {
            let _ = writeln!(s, "{j},{c:.17e}");
        }
        csv.push((format!("spectrum_{i:02}.csv"), s));
    }
    Ok(Output {
        json: envelope("rosenblatt-rate", &cfg, &res)?,
        csv,
        json_name: "rosenblatt_rate.json",
    })
}

/// Runs a parsed command.
pub fn execute(cli: &Cli) -> Result<Output> {
    match &cli.command {
        Command::VgInfo(a) => cmd_vg_info(a),
        Command::ChaosCumulants(a) => cmd_chaos(a),
        Command::BoundReport(a) => cmd_bound(a),
        Command::SteinSolve(a) => cmd_stein(a),
        Command::RosenblattRate(a) => cmd_rate(a),
    }
}

/// Reads a flat `key = value` file into `--key value` arguments.
pub fn config_file_args(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{}:{}: expected key = value", path.display(), no + 1)))?;
        let key = k.trim().replace('_', "-");
        if matches!(key.as_str(), "config" | "out" | "threads" | "format") {
            return Err(Error::Config(format!("{}:{}: {key} cannot be set from a config file", path.display(), no + 1)));
        }
        let v = v.trim();
        out.push(format!("--{key}"));
        if v != "true" {
            out.push(v.to_string());
        }
    }
    Ok(out)
}

fn config_path(args: &[String]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

fn write_artifacts(dir: &Path, out: &Output) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(out.json_name), &out.json)?;
    for (name, body) in &out.csv {
        std::fs::write(dir.join(name), body)?;
    }
    Ok(())
}

/// Full entry point: parses `args` (including the program name), applies the
/// config file, runs, and writes artifacts. Returns the process exit code.
pub fn main_with_args(args: Vec<String>, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> i32 {
    let mut args = args;
    if let Some(p) = config_path(&args) {
        match config_file_args(&p) {
            Ok(extra) => args.extend(extra),
            Err(e) => {
                let _ = writeln!(stderr, "error: {e}");
                return e.exit_code();
            }
        }
    }
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(stdout, "{text}") } else { write!(stderr, "{text}") };
            return code;
        }
    };
    let computed = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(e) => Err(Error::Config(format!("cannot build thread pool: {e}"))),
        },
        None => execute(&cli),
    };
    let result = computed.and_then(|out| -> Result<()> {
        match &cli.out {
            Some(dir) => {
                write_artifacts(dir, &out)?;
                write!(stdout, "{}", out.json)?;
            }
            None => match cli.format {
                Format::Json => write!(stdout, "{}", out.json)?,
                Format::Csv => {
                    let (_, body) = out
                        .csv
                        .first()
                        .ok_or_else(|| Error::Config("this command has no CSV output; use --format json".into()))?;
                    write!(stdout, "{body}")?;
                }
            },
        }
        Ok(())
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
