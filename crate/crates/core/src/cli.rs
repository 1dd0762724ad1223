//! Command-line front end: configuration, persistence and reports.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{energy_report, energy_gradient, EnergyReport, NonlinearitySpec, ProblemParams};
use crate::grid::{build_grid, GridScheme, RadialGrid, RadialProfile};
use crate::identities::{
    decay_fit, degiorgi_sequence, dgms_check, existence_window, exact_from_f64, lebesgue_norm, moser_exponents,
    moser_ladder, nehari_from_report, parse_exact, pohozaev_from_report, CutoffField, DecayFit, DgmsRecord, Exact,
    HlsGrid, HlsRecord, MoserRecord, PohozaevReport,
};
use crate::riesz::{build_kernel, RieszOperator};
use crate::solver::{solve_ground_state, SeedProfile, Solution, SolveConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NONEXISTENCE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_CACHE: i32 = 4;
pub const EXIT_VIOLATION: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "choquard", version, about = "Radial ground states of the p-Laplacian Choquard equation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute a ground state and write the profile CSV and solution JSON.
    Solve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate every identity and estimate on a profile.
    Verify {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Apply the acceptance thresholds and exit with status 5 on violation.
        #[arg(long)]
        assert: bool,
        /// Report destination (defaults to output.verify_path, then stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Existence-window verdicts and solves over a range of q.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        q_min: String,
        #[arg(long, allow_hyphen_values = true)]
        q_max: String,
        #[arg(long)]
        steps: usize,
        /// CSV destination (defaults to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Critical exponents for (N, p, α).
    Info {
        #[arg(long = "N")]
        dim: u32,
        #[arg(long, allow_hyphen_values = true)]
        p: String,
        #[arg(long, allow_hyphen_values = true)]
        alpha: String,
    },
    /// Kernel, gradient and scaling oracles.
    Selftest {
        /// Directory for the kernel cache used by the potential oracle.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long, default_value = "2", allow_hyphen_values = true)]
        alpha: f64,
    },
}

/// A config number: a TOML integer, float, or a string such as `"5/3"`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Number {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Number {
    pub fn exact(&self) -> Result<Exact> {
        match self {
            Number::Int(i) => Ok(Exact::from_integer((*i).into())),
            Number::Float(x) => exact_from_f64(*x),
            Number::Text(s) => parse_exact(s),
        }
    }

    pub fn value(&self) -> Result<f64> {
        match self {
            Number::Int(i) => Ok(*i as f64),
            Number::Float(x) => Ok(*x),
            Number::Text(_) => Ok(self.exact()?.to_f64().unwrap_or(f64::NAN)),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    #[serde(rename = "N")]
    pub dim: u32,
    pub p: Number,
    pub alpha: Number,
    #[serde(default = "default_nonlinearity")]
    pub nonlinearity: String,
    pub q: Number,
}

fn default_nonlinearity() -> String {
    "power".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "R")]
    pub max_radius: f64,
    #[serde(rename = "M")]
    pub nodes: usize,
    #[serde(default)]
    pub scheme: Option<GridScheme>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub max_iter: Option<usize>,
    pub grad_tol: Option<f64>,
    pub step0: Option<f64>,
    pub backtrack: Option<f64>,
    /// `"gaussian"` (default) or `"file"`.
    pub seed: Option<String>,
    pub seed_width: Option<f64>,
    pub seed_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub k_values: Option<Vec<f64>>,
    pub moser_steps: Option<usize>,
    pub degiorgi_levels: Option<usize>,
    pub decay_window: Option<[f64; 2]>,
    pub r_exp: Option<f64>,
    pub hls_lambdas: Option<Vec<f64>>,
    pub hls_nodes: Option<usize>,
    pub hls_radius: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub profile_path: Option<PathBuf>,
    pub report_path: Option<PathBuf>,
    pub verify_path: Option<PathBuf>,
    pub kernel_cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub problem: ProblemSection,
    pub grid: GridSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone)]
pub struct VerifySettings {
    pub k_values: Vec<f64>,
    pub moser_steps: usize,
    pub degiorgi_levels: usize,
    pub decay_window: (f64, f64),
    pub r_exp: f64,
    pub hls_lambdas: Vec<f64>,
    pub hls_nodes: usize,
    pub hls_radius: f64,
}

/// Validated run configuration. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub params: ProblemParams,
    pub q_exact: Exact,
    pub p_exact: Exact,
    pub alpha_exact: Exact,
    pub max_radius: f64,
    pub nodes: usize,
    pub scheme: GridScheme,
    pub solver: SolveConfig,
    pub seed_path: Option<PathBuf>,
    pub verify: VerifySettings,
    pub profile_path: PathBuf,
    pub report_path: PathBuf,
    pub verify_path: Option<PathBuf>,
    pub kernel_cache: Option<PathBuf>,
}

fn line_of(text: &str, section: &str, key: &str) -> Option<usize> {
    let dotted = format!("{section}.{key}");
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        let Some((lhs, _)) = t.split_once('=') else { continue };
        let lhs = lhs.trim();
        if lhs == dotted || (current == section && lhs == key) {
            return Some(i + 1);
        }
    }
    None
}

fn config_error(path: &Path, text: &str, section: &str, key: &str, err: impl std::fmt::Display) -> Error {
    let message = match line_of(text, section, key) {
        Some(line) => format!("line {line}: {section}.{key}: {err}"),
        None => format!("{section}.{key}: {err}"),
    };
    Error::Parse { path: path.to_path_buf(), message }
}

fn default_k_values(max_radius: f64) -> Vec<f64> {
    let half = max_radius / 2.0;
    let mut ks: Vec<f64> = (1..).map(|e| 2f64.powi(e)).take_while(|&k| k < half).collect();
    ks.push(half);
    ks
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Parse { path: path.to_path_buf(), message: format!("cannot read config: {e}") })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<RunConfig> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string().trim_end().to_string(),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let err = |section: &str, key: &str, e: &dyn std::fmt::Display| config_error(path, text, section, key, e);

        let pr = &raw.problem;
        let p_exact = pr.p.exact().map_err(|e| err("problem", "p", &e))?;
        let alpha_exact = pr.alpha.exact().map_err(|e| err("problem", "alpha", &e))?;
        let q_exact = pr.q.exact().map_err(|e| err("problem", "q", &e))?;
        if pr.nonlinearity != "power" {
            return Err(err(
                "problem",
                "nonlinearity",
                &format!("unsupported kind '{}' (only \"power\" can be configured)", pr.nonlinearity),
            ));
        }
        let p = pr.p.value()?;
        let alpha = pr.alpha.value()?;
        let q = pr.q.value()?;
        let spec = NonlinearitySpec::power(q).map_err(|e| err("problem", "q", &e))?;
        let params = ProblemParams::new(pr.dim, p, alpha, spec).map_err(|e| {
            let key = match &e {
                Error::InvalidArgument(m) if m.contains("alpha") => "alpha",
                Error::InvalidArgument(m) if m.starts_with("p ") || m.contains(" p ") => "p",
                _ => "N",
            };
            err("problem", key, &e)
        })?;

        let g = &raw.grid;
        let scheme = g.scheme.unwrap_or(GridScheme::Uniform);
        if !(g.max_radius > 0.0 && g.max_radius.is_finite()) {
            return Err(err("grid", "R", &"must be positive"));
        }
        if g.nodes < 8 {
            return Err(err("grid", "M", &"must be at least 8"));
        }

        let s = &raw.solver;
        let defaults = SolveConfig::default();
        let seed_kind = s.seed.as_deref().unwrap_or("gaussian");
        let (seed, seed_path) = match seed_kind {
            "gaussian" => {
                let width = s.seed_width.unwrap_or(2.0);
                (SeedProfile::Gaussian { width }, None)
            }
            "file" => {
                let Some(sp) = &s.seed_path else {
                    return Err(err("solver", "seed", &"seed = \"file\" needs solver.seed_path"));
                };
                (SeedProfile::Custom { values: Vec::new() }, Some(resolve(sp)))
            }
            other => return Err(err("solver", "seed", &format!("unknown seed '{other}'"))),
        };
        let solver = SolveConfig {
            max_iter: s.max_iter.unwrap_or(defaults.max_iter),
            grad_tol: s.grad_tol.unwrap_or(defaults.grad_tol),
            step0: s.step0.unwrap_or(defaults.step0),
            backtrack: s.backtrack.unwrap_or(defaults.backtrack),
            seed,
        };
        if let Err(e) = solver.validate() {
            let key = ["max_iter", "grad_tol", "step0", "backtrack", "seed_width"]
                .into_iter()
                .find(|k| e.to_string().contains(k.trim_start_matches("seed_")))
                .unwrap_or("seed");
            return Err(err("solver", key, &e));
        }

        let v = &raw.verify;
        let verify = VerifySettings {
            k_values: v.k_values.clone().unwrap_or_else(|| default_k_values(g.max_radius)),
            moser_steps: v.moser_steps.unwrap_or(6),
            degiorgi_levels: v.degiorgi_levels.unwrap_or(50),
            decay_window: v.decay_window.map(|[a, b]| (a, b)).unwrap_or((0.4 * g.max_radius, 0.7 * g.max_radius)),
            r_exp: v.r_exp.unwrap_or(4.0),
            hls_lambdas: v.hls_lambdas.clone().unwrap_or_else(|| vec![1.0, 0.5, 2.0, 4.0]),
            hls_nodes: v.hls_nodes.unwrap_or(128),
            hls_radius: v.hls_radius.unwrap_or(8.0),
        };
        let half = g.max_radius / 2.0;
        if let Some(k) = verify.k_values.iter().find(|&&k| !(k > 0.0 && k <= half)) {
            return Err(err("verify", "k_values", &format!("k = {k} must lie in (0, R/2 = {half}]")));
        }
        let (ra, rb) = verify.decay_window;
        if !(ra < rb && rb <= 0.9 * g.max_radius) {
            return Err(err("verify", "decay_window", &format!("[{ra}, {rb}] must be nonempty and end by 0.9 R")));
        }
        if verify.moser_steps < 1 {
            return Err(err("verify", "moser_steps", &"must be at least 1"));
        }
        if !(verify.r_exp >= 1.0) {
            return Err(err("verify", "r_exp", &"must be at least 1"));
        }
        if verify.hls_nodes < 8 || !(verify.hls_radius > 0.0) {
            return Err(err("verify", "hls_nodes", &"HLS grid needs at least 8 nodes and a positive radius"));
        }
        if verify.hls_lambdas.is_empty() || verify.hls_lambdas.iter().any(|l| !(*l > 0.0)) {
            return Err(err("verify", "hls_lambdas", &"dilations must be positive"));
        }

        let o = &raw.output;
        Ok(RunConfig {
            params,
            q_exact,
            p_exact,
            alpha_exact,
            max_radius: g.max_radius,
            nodes: g.nodes,
            scheme,
            solver,
            seed_path,
            verify,
            profile_path: resolve(o.profile_path.as_deref().unwrap_or(Path::new("profile.csv"))),
            report_path: resolve(o.report_path.as_deref().unwrap_or(Path::new("solution.json"))),
            verify_path: o.verify_path.as_deref().map(resolve),
            kernel_cache: o.kernel_cache.as_deref().map(resolve),
        })
    }

    pub fn grid(&self) -> Result<Arc<RadialGrid>> {
        build_grid(self.max_radius, self.nodes, self.params.dim, self.scheme)
    }

    /// Kernel for the configured grid, through the cache directory when one
    /// is configured.
    pub fn operator(&self, grid: &Arc<RadialGrid>) -> Result<RieszOperator> {
        match &self.kernel_cache {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                RieszOperator::cached(dir, grid, self.params.alpha)
            }
            None => build_kernel(grid, self.params.alpha),
        }
    }

    fn solve_config(&self, grid: &Arc<RadialGrid>) -> Result<SolveConfig> {
        let mut config = self.solver.clone();
        if let Some(path) = &self.seed_path {
            let seed = RadialProfile::read_csv(path, grid.clone())?;
            config.seed = SeedProfile::Custom { values: seed.into_values() };
        }
        Ok(config)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolutionReport {
    pub converged: bool,
    pub iterations: usize,
    pub mu: f64,
    pub lambda: f64,
    pub t_grad: f64,
    pub t_mass: f64,
    pub d_nonlocal: f64,
    pub energy: f64,
    pub gradient_norm: f64,
}

impl SolutionReport {
    pub fn new(solution: &Solution) -> Self {
        let r = solution.report;
        SolutionReport {
            converged: solution.converged,
            iterations: solution.iterations,
            mu: solution.mu(),
            lambda: solution.lambda(),
            t_grad: r.t_grad,
            t_mass: r.t_mass,
            d_nonlocal: r.d_nonlocal,
            energy: r.energy,
            gradient_norm: solution.gradient_norm,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct WindowReport {
    pub q_lower: f64,
    pub q_upper: f64,
    pub admissible: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub energy: EnergyReport,
    pub pohozaev: PohozaevReport,
    pub nehari_residual: f64,
    pub window: WindowReport,
    pub dgms: Vec<DgmsRecord>,
    pub moser: Vec<MoserRecord>,
    pub degiorgi: Vec<f64>,
    pub decay: Option<DecayFit>,
    pub hls: Vec<HlsRecord>,
    pub warnings: Vec<String>,
}

fn window_report(config: &RunConfig) -> Result<WindowReport> {
    let v = existence_window(config.params.dim, &config.p_exact, &config.alpha_exact, &config.q_exact)?;
    Ok(WindowReport { q_lower: v.q_lower, q_upper: v.q_upper, admissible: v.admissible })
}

/// Exponent pair `r = t = 2N/(2N − μ)` for the diagonal HLS case.
pub fn hls_diagonal_exponent(dim: u32, mu: f64) -> f64 {
    let n = f64::from(dim);
    2.0 * n / (2.0 * n - mu)
}

pub fn verify_profile(u: &RadialProfile, config: &RunConfig, op: &RieszOperator) -> Result<VerifyReport> {
    let params = &config.params;
    let grid = u.grid();
    let settings = &config.verify;
    let mut warnings = Vec::new();

    let energy = energy_report(u, params, op)?;
    let pohozaev = pohozaev_from_report(&energy, params);
    let q = config.q_exact.to_f64().unwrap_or(f64::NAN);
    let nehari_residual = nehari_from_report(&energy, q);
    let window = window_report(config)?;
    let dgms = dgms_check(u, params, op, &CutoffField::default(), &settings.k_values)?;
    let moser = moser_ladder(u, grid, params, settings.moser_steps)?;

    let degiorgi = if u.is_zero() {
        vec![0.0; settings.degiorgi_levels + 1]
    } else {
        let norm = lebesgue_norm(u, settings.r_exp);
        let rho = (u.max_abs() / norm).max(1.0);
        degiorgi_sequence(u, grid, settings.r_exp, rho, settings.degiorgi_levels)?
    };

    let decay = if u.is_zero() {
        None
    } else {
        match decay_fit(u, grid, settings.decay_window) {
            Ok(fit) => Some(fit),
            Err(Error::InvalidArgument(m)) => {
                warnings.push(format!("decay fit skipped: {m}"));
                None
            }
            Err(e) => return Err(e),
        }
    };

    let mu = f64::from(params.dim) - params.alpha;
    let exponent = hls_diagonal_exponent(params.dim, mu);
    let base = HlsGrid {
        dim: params.dim,
        max_radius: settings.hls_radius,
        nodes: settings.hls_nodes,
        scheme: config.scheme,
    };
    let gauss = |r: f64| (-r * r).exp();
    let hls = crate::identities::hls_scaling_check(&gauss, &gauss, base, mu, exponent, exponent, &settings.hls_lambdas)?;

    Ok(VerifyReport { energy, pohozaev, nehari_residual, window, dgms, moser, degiorgi, decay, hls, warnings })
}

/// Acceptance thresholds applied by `verify --assert`.
pub fn assert_report(report: &VerifyReport, params: &ProblemParams) -> Vec<String> {
    let mut violations = Vec::new();
    let pohozaev_tol = if params.p == 2.0 { 1e-2 } else { 3e-2 };
    if !(report.pohozaev.rel_residual < pohozaev_tol) {
        violations.push(format!("pohozaev rel_residual {:e} ≥ {pohozaev_tol:e}", report.pohozaev.rel_residual));
    }
    let t = report.energy.kinetic_plus_mass();
    let nehari = if t == 0.0 { report.nehari_residual.abs() } else { report.nehari_residual.abs() / t };
    if !(nehari < 1e-6) {
        violations.push(format!("nehari residual / T {nehari:e} ≥ 1e-6"));
    }
    if let Some(last) = report.dgms.iter().max_by(|a, b| a.k.total_cmp(&b.k)) {
        if !(last.rel_limit_residual < 1e-2) {
            violations.push(format!("dgms limit residual {:e} at k = {} ≥ 1e-2", last.rel_limit_residual, last.k));
        }
    }
    for m in report.moser.iter().filter(|m| m.exponent > 1e3) {
        if !(m.rel_gap_to_max < 2e-2) {
            violations.push(format!("moser gap {:e} at ν = {} ≥ 2%", m.rel_gap_to_max, m.exponent));
        }
    }
    if report.degiorgi.windows(2).any(|w| w[1] > w[0]) {
        violations.push("De Giorgi sequence increases".into());
    }
    if report.degiorgi.len() > 50 && !(report.degiorgi[50] < 1e-12) {
        violations.push(format!("U_50 = {:e} ≥ 1e-12", report.degiorgi[50]));
    }
    if let Some(d) = report.decay {
        if !(d.r_squared > 0.99 && d.rate > 0.5) {
            violations.push(format!("decay fit rate {} r² {} (need > 0.5, > 0.99)", d.rate, d.r_squared));
        }
    }
    for h in &report.hls {
        if let Some(ratio) = h.ratio {
            if !((ratio - 1.0).abs() < 1e-6) {
                violations.push(format!("HLS ratio {ratio} at λ = {}", h.lambda));
            }
        }
    }
    violations
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub q: f64,
    pub admissible: bool,
    pub converged: bool,
    pub energy: Option<f64>,
    pub pohozaev_rel: Option<f64>,
}

/// `steps` evenly spaced exact values from `lo` to `hi` (`lo` alone for one step).
pub fn rational_linspace(lo: &Exact, hi: &Exact, steps: usize) -> Result<Vec<Exact>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    if !(lo < hi) {
        return Err(Error::InvalidArgument("q_min must be below q_max".into()));
    }
    if steps == 1 {
        return Ok(vec![lo.clone()]);
    }
    let span = (hi - lo) / Exact::from_integer((steps - 1).into());
    Ok((0..steps).map(|i| lo + &span * Exact::from_integer(i.into())).collect())
}

pub fn sweep(config: &RunConfig, qs: &[Exact], mut progress: impl FnMut(&SweepRow)) -> Result<Vec<SweepRow>> {
    let mut grid_op: Option<(Arc<RadialGrid>, RieszOperator)> = None;
    let mut rows = Vec::with_capacity(qs.len());
    for q_exact in qs {
        let q = q_exact.to_f64().unwrap_or(f64::NAN);
        let verdict = if q_exact > &Exact::from_integer(1.into()) {
            existence_window(config.params.dim, &config.p_exact, &config.alpha_exact, q_exact)?.admissible
        } else {
            false
        };
        let mut row = SweepRow { q, admissible: verdict, converged: false, energy: None, pohozaev_rel: None };
        if verdict {
            if grid_op.is_none() {
                let grid = config.grid()?;
                let op = config.operator(&grid)?;
                grid_op = Some((grid, op));
            }
            let (grid, op) = grid_op.as_ref().expect("kernel built above");
            let params = ProblemParams::new(config.params.dim, config.params.p, config.params.alpha, NonlinearitySpec::power(q)?)?;
            let solution = solve_ground_state(&params, grid, op, &config.solve_config(grid)?)?;
            row.converged = solution.converged;
            row.energy = Some(solution.report.energy);
            row.pohozaev_rel = Some(pohozaev_from_report(&solution.report, &params).rel_residual);
        }
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("q,admissible,converged,energy,pohozaev_rel\n");
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.q, r.admissible, r.converged, opt(r.energy), opt(r.pohozaev_rel));
    }
    out
}

pub fn info_table(dim: u32, p: &Exact, alpha: &Exact) -> Result<String> {
    let n = Exact::from_integer(dim.into());
    if !(p > &Exact::from_integer(1.into())) {
        return Err(Error::InvalidArgument("p must exceed 1".into()));
    }
    if !(&n > p) {
        return Err(Error::InvalidArgument(format!("N = {dim} must exceed p")));
    }
    if !(alpha > &Exact::zero() && alpha < &n) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, {dim})")));
    }
    let two = Exact::from_integer(2.into());
    let q_lower = (&n + alpha) * p / (&two * &n);
    let q_upper = (&n + alpha) * p / (&two * (&n - p));
    let p_star = &n * p / (&n - p);
    let q_alpha = &two * &n * p / (&n + alpha);
    let floor = &n - &two * p;
    let floor_pos = if floor > Exact::zero() { floor.clone() } else { Exact::zero() };
    let f = |x: &Exact| x.to_f64().unwrap_or(f64::NAN);

    let mut out = String::new();
    let _ = writeln!(out, "N        {dim}");
    let _ = writeln!(out, "p        {}", f(p));
    let _ = writeln!(out, "alpha    {}", f(alpha));
    let _ = writeln!(out, "q_lower  {:.4}  ({q_lower})", f(&q_lower));
    let _ = writeln!(out, "q_upper  {:.4}  ({q_upper})", f(&q_upper));
    let _ = writeln!(out, "p*       {:.4}  ({p_star})", f(&p_star));
    let _ = writeln!(out, "q_alpha  {:.4}  ({q_alpha})", f(&q_alpha));
    if alpha > &floor_pos {
        let _ = writeln!(out, "alpha > (N-2p)+ = {}: satisfied", f(&floor_pos));
    } else {
        let _ = writeln!(
            out,
            "warning: alpha <= N-2p = {}: restriction violated, moser ladder inadmissible",
            f(&floor)
        );
    }
    if p < &two {
        let _ = writeln!(out, "warning: p < 2 is outside the supported range");
    }
    debug_assert_eq!(moser_exponents(dim, f(p), f(alpha)).1, f(&p_star));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelftestCheck {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

fn check(name: &'static str, value: f64, threshold: f64) -> SelftestCheck {
    SelftestCheck { name, value, threshold, passed: value < threshold }
}

/// Unit-ball indicator potential against `(3 − r²)/6` inside and `1/(3r)` outside.
pub fn newtonian_ball_error(op: &RieszOperator) -> Result<f64> {
    let grid = op.grid();
    let indicator = grid.sample(|r| if r < 1.0 { 1.0 } else { 0.0 });
    let potential = op.apply(&indicator)?;
    Ok(grid
        .nodes()
        .iter()
        .zip(potential.values())
        .map(|(&r, &w)| {
            let exact = if r < 1.0 { (3.0 - r * r) / 6.0 } else { 1.0 / (3.0 * r) };
            ((w - exact) / exact).abs()
        })
        .fold(0.0, f64::max))
}

/// Worst normalized gap between the energy gradient and central differences
/// of the energy along a few fixed directions.
pub fn gradient_fd_error(params: &ProblemParams, op: &RieszOperator, eps: f64) -> Result<f64> {
    let grid = op.grid();
    let mut worst: f64 = 0.0;
    for (i, width) in [0.8, 1.3, 2.1].into_iter().enumerate() {
        let amp = 0.6 + 0.3 * i as f64;
        let u = grid.sample(|r| amp * (-(r / width).powi(2)).exp() * (1.0 + 0.2 * (r * (i as f64 + 1.0)).cos()));
        let phi = grid.sample(|r| (1.0 - 0.3 * r) * (-(r * r) / (1.0 + i as f64)).exp());
        let grad = energy_gradient(&u, params, op)?;
        let exact: f64 = grad.iter().zip(phi.values()).map(|(g, v)| g * v).sum();
        let shift = |s: f64| -> Result<f64> {
            let w: Vec<f64> = u.values().iter().zip(phi.values()).map(|(a, b)| a + s * b).collect();
            Ok(energy_report(&RadialProfile::new(grid.clone(), w)?, params, op)?.energy)
        };
        let fd = (shift(eps)? - shift(-eps)?) / (2.0 * eps);
        worst = worst.max((exact - fd).abs() / (1.0 + exact.abs()));
    }
    Ok(worst)
}

pub fn selftest(alpha: f64, cache_dir: Option<&Path>) -> Result<Vec<SelftestCheck>> {
    let dim = 3;
    let params = ProblemParams::power(dim, 2.0, alpha, 2.0)?;
    let mut checks = Vec::new();

    let grid = build_grid(8.0, 512, dim, GridScheme::Uniform)?;
    let newton = match cache_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            RieszOperator::cached(dir, &grid, 2.0)?
        }
        None => build_kernel(&grid, 2.0)?,
    };
    checks.push(check("newtonian potential of the unit ball (max rel err)", newtonian_ball_error(&newton)?, 1e-3));

    let small = build_grid(10.0, 96, dim, GridScheme::Uniform)?;
    let op = build_kernel(&small, alpha)?;
    checks.push(check("energy gradient vs central differences", gradient_fd_error(&params, &op, 1e-5)?, 1e-6));

    let mu = f64::from(dim) - alpha;
    let exponent = hls_diagonal_exponent(dim, mu);
    let base = HlsGrid { dim, max_radius: 8.0, nodes: 96, scheme: GridScheme::Uniform };
    let gauss = |r: f64| (-r * r).exp();
    let hls = crate::identities::hls_scaling_check(&gauss, &gauss, base, mu, exponent, exponent, &[1.0, 0.5, 2.0, 4.0])?;
    let spread = hls.iter().filter_map(|h| h.ratio).map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
    checks.push(check("HLS quotient dilation spread", spread, 1e-6));
    Ok(checks)
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Nonexistence { .. } => EXIT_NONEXISTENCE,
        Error::CacheCorrupt { .. } => EXIT_CACHE,
        _ => EXIT_INVALID,
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    fs::write(path, text + "\n")?;
    Ok(())
}

fn write_profile(path: &Path, profile: &RadialProfile) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    profile.write_csv(path)
}

fn cmd_solve(config_path: &Path, out: &mut dyn Write) -> Result<i32> {
    let config = RunConfig::load(config_path)?;
    let window = window_report(&config)?;
    if !window.admissible {
        return Err(Error::Nonexistence {
            q: config.params.nonlinearity.exponent().unwrap_or(f64::NAN),
            q_lower: window.q_lower,
            q_upper: window.q_upper,
        });
    }
    let grid = config.grid()?;
    let op = config.operator(&grid)?;
    let solution = solve_ground_state(&config.params, &grid, &op, &config.solve_config(&grid)?)?;
    write_profile(&config.profile_path, &solution.profile)?;
    let report = SolutionReport::new(&solution);
    write_json(&config.report_path, &report)?;
    writeln!(
        out,
        "{} after {} iterations: energy {} (t_grad {}, t_mass {}, d_nonlocal {})",
        if solution.converged { "converged" } else { "did not converge" },
        solution.iterations,
        report.energy,
        report.t_grad,
        report.t_mass,
        report.d_nonlocal
    )?;
    writeln!(out, "profile: {}", config.profile_path.display())?;
    writeln!(out, "report:  {}", config.report_path.display())?;
    Ok(if solution.converged { EXIT_OK } else { EXIT_DIVERGED })
}

fn cmd_verify(profile: &Path, config_path: &Path, assert: bool, dest: Option<&Path>, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let config = RunConfig::load(config_path)?;
    let grid = config.grid()?;
    let u = RadialProfile::read_csv(profile, grid.clone())?;
    let op = config.operator(&grid)?;
    let report = verify_profile(&u, &config, &op)?;
    for w in &report.warnings {
        writeln!(err, "warning: {w}")?;
    }
    match dest.map(Path::to_path_buf).or_else(|| config.verify_path.clone()) {
        Some(path) => {
            write_json(&path, &report)?;
            writeln!(out, "report: {}", path.display())?;
        }
        None => writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("reports serialize"))?,
    }
    if assert {
        let violations = assert_report(&report, &config.params);
        for v in &violations {
            writeln!(err, "violation: {v}")?;
        }
        if !violations.is_empty() {
            return Ok(EXIT_VIOLATION);
        }
    }
    Ok(EXIT_OK)
}

fn cmd_sweep(config_path: &Path, q_min: &str, q_max: &str, steps: usize, dest: Option<&Path>, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let config = RunConfig::load(config_path)?;
    let lo = parse_exact(q_min)?;
    let hi = parse_exact(q_max)?;
    let qs = if steps == 1 { vec![lo] } else { rational_linspace(&lo, &hi, steps)? };
    let rows = sweep(&config, &qs, |row| {
        let _ = writeln!(err, "q = {}: admissible {}, converged {}", row.q, row.admissible, row.converged);
    })?;
    let csv = sweep_csv(&rows);
    match dest {
        Some(path) => {
            fs::write(path, csv)?;
            writeln!(out, "sweep: {}", path.display())?;
        }
        None => write!(out, "{csv}")?,
    }
    Ok(EXIT_OK)
}

fn cmd_selftest(alpha: f64, cache_dir: Option<&Path>, out: &mut dyn Write) -> Result<i32> {
    let checks = selftest(alpha, cache_dir)?;
    let mut ok = true;
    for c in &checks {
        ok &= c.passed;
        writeln!(
            out,
            "{} {}: {:e} (threshold {:e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.threshold
        )?;
    }
    Ok(if ok { EXIT_OK } else { EXIT_VIOLATION })
}

/// Run a parsed command, returning the process exit status.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match &cli.command {
        Command::Solve { config } => cmd_solve(config, out),
        Command::Verify { profile, config, assert, out: dest } => cmd_verify(profile, config, *assert, dest.as_deref(), out, err),
        Command::Sweep { config, q_min, q_max, steps, out: dest } => cmd_sweep(config, q_min, q_max, *steps, dest.as_deref(), out, err),
        Command::Info { dim, p, alpha } => parse_exact(p)
            .and_then(|p| Ok((p, parse_exact(alpha)?)))
            .and_then(|(p, alpha)| info_table(*dim, &p, &alpha))
            .and_then(|table| {
                write!(out, "{table}")?;
                Ok(EXIT_OK)
            }),
        Command::Selftest { cache_dir, alpha } => cmd_selftest(*alpha, cache_dir.as_deref(), out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
