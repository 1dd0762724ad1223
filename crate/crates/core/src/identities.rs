//! Identity and estimate checks on radial profiles.

use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::functional::{energy_report, nonlocal_energy, require_power, EnergyReport, ProblemParams};
use crate::grid::{build_grid, same_grid, GridScheme, RadialGrid, RadialProfile};
use crate::riesz::{build_kernel, RieszOperator};

const TINY: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PohozaevReport {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub rel_residual: f64,
}

/// `((N−p)/p·t_grad + N/p·t_mass, (N+α)/2·d_nonlocal)`. Both the Pohozaev
/// report and the fibering slope at `t = 1` are `lhs − rhs` of this pair.
pub fn dilation_terms(report: &EnergyReport, params: &ProblemParams) -> (f64, f64) {
    let n = f64::from(params.dim);
    let p = params.p;
    let lhs = (n - p) / p * report.t_grad + n / p * report.t_mass;
    let rhs = (n + params.alpha) / 2.0 * report.d_nonlocal;
    (lhs, rhs)
}

pub fn pohozaev_from_report(report: &EnergyReport, params: &ProblemParams) -> PohozaevReport {
    let (lhs, rhs) = dilation_terms(report, params);
    let residual = lhs - rhs;
    PohozaevReport { lhs, rhs, residual, rel_residual: residual.abs() / lhs.max(rhs).max(TINY) }
}

pub fn pohozaev_report(u: &RadialProfile, params: &ProblemParams, op: &RieszOperator) -> Result<PohozaevReport> {
    Ok(pohozaev_from_report(&energy_report(u, params, op)?, params))
}

/// `t_grad + t_mass − q·d_nonlocal`, the weak form tested with `u` itself.
pub fn nehari_report(u: &RadialProfile, params: &ProblemParams, op: &RieszOperator) -> Result<f64> {
    let q = require_power(params)?;
    let r = energy_report(u, params, op)?;
    Ok(nehari_from_report(&r, q))
}

pub fn nehari_from_report(report: &EnergyReport, q: f64) -> f64 {
    report.t_grad + report.t_mass - q * report.d_nonlocal
}

/// Exact rational number used for the existence window.
pub type Exact = BigRational;

/// Parse `"5/3"`, `"2"`, `"-1.25"` or `"2.5e-1"` exactly.
pub fn parse_exact(text: &str) -> Result<Exact> {
    let text = text.trim();
    let bad = || Error::InvalidArgument(format!("'{text}' is not a rational number"));
    if let Some((num, den)) = text.split_once('/') {
        let num = parse_exact(num)?;
        let den = parse_exact(den)?;
        if den.is_zero() {
            return Err(bad());
        }
        return Ok(num / den);
    }
    let (mantissa, exponent) = match text.find(['e', 'E']) {
        Some(i) => (&text[..i], text[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (text, 0),
    };
    let (negative, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let all_digits = format!("{int_part}{frac_part}");
    let mut value = Exact::from_integer(BigInt::from_str(&all_digits).map_err(|_| bad())?);
    let shift = exponent - frac_part.len() as i32;
    let ten = Exact::from_integer(BigInt::from(10));
    let pow = num_traits::pow::pow(ten, shift.unsigned_abs() as usize);
    value = if shift >= 0 { value * pow } else { value / pow };
    Ok(if negative { -value } else { value })
}

/// Exact value of a binary float.
pub fn exact_from_f64(x: f64) -> Result<Exact> {
    Exact::from_float(x).ok_or_else(|| Error::InvalidArgument(format!("{x} is not finite")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowVerdict {
    pub q_lower: f64,
    pub q_upper: f64,
    /// Gradient share `a = qN/p − (N+α)/2`.
    pub a_coeff: f64,
    /// Mass share `b = (N+α)/2 − q(N−p)/p`.
    pub b_coeff: f64,
    pub admissible: bool,
}

/// Solve Pohozaev + Nehari for the gradient and mass shares `(a, b)` at unit
/// nonlocal term:
///
/// ```text
/// (N−p)/p·a + N/p·b = (N+α)/2,    a + b = q.
/// ```
///
/// A nontrivial solution needs `a > 0` and `b > 0`, which holds exactly for
/// `q_lower < q < q_upper`. Decided in exact rational arithmetic.
pub fn existence_window(dim: u32, p: &Exact, alpha: &Exact, q: &Exact) -> Result<WindowVerdict> {
    let n = Exact::from_integer(BigInt::from(dim));
    let zero = Exact::zero();
    let one = Exact::from_integer(BigInt::from(1));
    let two = Exact::from_integer(BigInt::from(2));
    if !(&n > p) {
        return invalid(format!("dimension N = {dim} must exceed p"));
    }
    if !(alpha > &zero && alpha < &n) {
        return invalid(format!("alpha must lie in (0, {dim})"));
    }
    if !(q > &one) {
        return invalid("q must exceed 1");
    }
    if p.is_negative() || p.is_zero() {
        return invalid("p must be positive");
    }
    let half_sum = (&n + alpha) / &two;
    let a = q * &n / p - &half_sum;
    let b = &half_sum - q * (&n - p) / p;
    let q_lower = (&n + alpha) * p / (&two * &n);
    let q_upper = (&n + alpha) * p / (&two * (&n - p));
    let f = |x: &Exact| x.to_f64().unwrap_or(f64::NAN);
    Ok(WindowVerdict {
        q_lower: f(&q_lower),
        q_upper: f(&q_upper),
        a_coeff: f(&a),
        b_coeff: f(&b),
        admissible: a > zero && b > zero,
    })
}

pub fn existence_window_f64(dim: u32, p: f64, alpha: f64, q: f64) -> Result<WindowVerdict> {
    existence_window(dim, &exact_from_f64(p)?, &exact_from_f64(alpha)?, &exact_from_f64(q)?)
}

/// C¹ cutoff `φ` with `φ ≡ 1` on `[0, 1]` and `φ ≡ 0` on `[2, ∞)`.
#[derive(Debug, Clone, Copy)]
pub struct CutoffField {
    phi: fn(f64) -> f64,
    dphi: fn(f64) -> f64,
}

impl Default for CutoffField {
    fn default() -> Self {
        Self::smoothstep()
    }
}

impl CutoffField {
    /// `φ(s) = 1 − (3τ² − 2τ³)` with `τ = s − 1` on `[1, 2]`.
    pub fn smoothstep() -> Self {
        fn phi(s: f64) -> f64 {
            if s <= 1.0 {
                1.0
            } else if s >= 2.0 {
                0.0
            } else {
                let t = s - 1.0;
                1.0 - t * t * (3.0 - 2.0 * t)
            }
        }
        fn dphi(s: f64) -> f64 {
            if s <= 1.0 || s >= 2.0 {
                0.0
            } else {
                let t = s - 1.0;
                -6.0 * t * (1.0 - t)
            }
        }
        CutoffField { phi, dphi }
    }

    /// Custom cutoff, checked on a sample grid for the support, range and
    /// continuity conditions.
    pub fn new(phi: fn(f64) -> f64, dphi: fn(f64) -> f64) -> Result<Self> {
        for i in 0..=400 {
            let s = 3.0 * f64::from(i) / 400.0;
            let v = phi(s);
            if !(0.0..=1.0).contains(&v) {
                return invalid(format!("cutoff leaves [0, 1] at s = {s}"));
            }
            if s <= 1.0 && v != 1.0 {
                return invalid(format!("cutoff must equal 1 on [0, 1], φ({s}) = {v}"));
            }
            if s >= 2.0 && v != 0.0 {
                return invalid(format!("cutoff must vanish on [2, ∞), φ({s}) = {v}"));
            }
            if !dphi(s).is_finite() {
                return invalid(format!("cutoff derivative not finite at s = {s}"));
            }
        }
        Ok(CutoffField { phi, dphi })
    }

    pub fn phi(&self, s: f64) -> f64 {
        (self.phi)(s)
    }

    pub fn dphi(&self, s: f64) -> f64 {
        (self.dphi)(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgmsRecord {
    pub k: f64,
    pub lhs_k: f64,
    pub mass_k: f64,
    pub nonlocal_k: f64,
    /// `lhs_k − (mass_k + nonlocal_k)`; zero for an exact solution.
    pub limit_residual: f64,
    /// `|limit_residual|` over the largest of the three terms.
    pub rel_limit_residual: f64,
    /// `|lhs_k − (1 − N/p)·t_grad|`.
    pub grad_limit_distance: f64,
    /// `|mass_k − N/p·t_mass|`.
    pub mass_limit_distance: f64,
    /// `|nonlocal_k + (N+α)/2·d_nonlocal|`.
    pub nonlocal_limit_distance: f64,
    /// Residual of the three limits, `(1 − N/p)t_grad − N/p·t_mass + (N+α)/2·d`:
    /// the negated Pohozaev defect with the nodal gradient.
    pub pohozaev_limit: f64,
}

/// Finite-`k` terms of the variational identity tested with the dilation
/// field `h(x) = φ(|x|/k) x`, reduced to radial quadratures (`s = r/k`):
///
/// ```text
/// lhs_k      = ∫ [φ + sφ'] |u'|^p − (1/p) ∫ [Nφ + sφ'] |u'|^p
/// mass_k     = −∫ φ r u' |u|^{p−2} u
/// nonlocal_k = ∫ φ r u' (I_α * F(u)) f(u)
/// ```
///
/// `k` may not exceed `R/2`, which keeps the cutoff's support inside the
/// computational ball.
pub fn dgms_check(
    u: &RadialProfile,
    params: &ProblemParams,
    op: &RieszOperator,
    cutoff: &CutoffField,
    k_values: &[f64],
) -> Result<Vec<DgmsRecord>> {
    if !same_grid(u.grid(), op.grid()) {
        return invalid("profile and Riesz operator live on different grids");
    }
    params.check_operator(op)?;
    let grid = u.grid();
    let max_k = grid.max_radius() / 2.0;
    if let Some(k) = k_values.iter().find(|&&k| !(k > 0.0 && k <= max_k)) {
        return invalid(format!("cutoff scale k = {k} must lie in (0, R/2 = {max_k}]"));
    }
    let n = f64::from(params.dim);
    let p = params.p;
    let du = grid.differentiate(u)?;
    let du = du.values();
    let uv = u.values();
    let (d_nonlocal, potential) = nonlocal_energy(u, params, op)?;
    let nl = &params.nonlinearity;

    let grad_p: Vec<f64> = du.iter().map(|d| d.abs().powf(p)).collect();
    let t_grad = grid.integrate(&grad_p)?;
    let t_mass = grid.integrate(&uv.iter().map(|v| v.abs().powf(p)).collect::<Vec<_>>())?;
    let grad_limit = (1.0 - n / p) * t_grad;
    let mass_limit = n / p * t_mass;
    let nonlocal_limit = -(n + params.alpha) / 2.0 * d_nonlocal;

    let mut records = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let mut lhs = Vec::with_capacity(uv.len());
        let mut mass = Vec::with_capacity(uv.len());
        let mut nonlocal = Vec::with_capacity(uv.len());
        for (i, &r) in grid.nodes().iter().enumerate() {
            let s = r / k;
            let phi = cutoff.phi(s);
            let sdphi = s * cutoff.dphi(s);
            lhs.push((phi + sdphi) * grad_p[i] - (n * phi + sdphi) * grad_p[i] / p);
            let drift = phi * r * du[i];
            mass.push(-drift * crate::functional::signed_pow(uv[i], p - 1.0));
            nonlocal.push(drift * potential[i] * nl.f(uv[i]));
        }
        let lhs_k = grid.integrate(&lhs)?;
        let mass_k = grid.integrate(&mass)?;
        let nonlocal_k = grid.integrate(&nonlocal)?;
        let limit_residual = lhs_k - (mass_k + nonlocal_k);
        let scale = lhs_k.abs().max(mass_k.abs()).max(nonlocal_k.abs()).max(TINY);
        records.push(DgmsRecord {
            k,
            lhs_k,
            mass_k,
            nonlocal_k,
            limit_residual,
            rel_limit_residual: if limit_residual == 0.0 { 0.0 } else { limit_residual.abs() / scale },
            grad_limit_distance: (lhs_k - grad_limit).abs(),
            mass_limit_distance: (mass_k - mass_limit).abs(),
            nonlocal_limit_distance: (nonlocal_k - nonlocal_limit).abs(),
            pohozaev_limit: grad_limit - mass_limit - nonlocal_limit,
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoserRecord {
    pub n: usize,
    pub exponent: f64,
    pub norm: f64,
    /// `|‖u‖_ν − max|u|| / max|u|` (zero for the zero profile).
    pub rel_gap_to_max: f64,
}

/// `(q_α, p*) = (2Np/(N+α), Np/(N−p))`.
pub fn moser_exponents(dim: u32, p: f64, alpha: f64) -> (f64, f64) {
    let n = f64::from(dim);
    (2.0 * n * p / (n + alpha), n * p / (n - p))
}

/// Weighted discrete `L^ν` norm, scaled by the maximum to avoid overflow.
pub fn lebesgue_norm(u: &RadialProfile, exponent: f64) -> f64 {
    let max = u.max_abs();
    if max == 0.0 {
        return 0.0;
    }
    let sum: f64 = u
        .values()
        .iter()
        .zip(u.grid().weights())
        .map(|(v, w)| w * (v.abs() / max).powf(exponent))
        .sum();
    max * sum.powf(1.0 / exponent)
}

/// Norms along the integrability ladder `ν_n = p*·(p*/q_α)^n`, `n = 0..=n_steps`.
pub fn moser_ladder(u: &RadialProfile, grid: &RadialGrid, params: &ProblemParams, n_steps: usize) -> Result<Vec<MoserRecord>> {
    if !same_grid(u.grid(), grid) {
        return invalid("profile lives on a different grid");
    }
    if n_steps < 1 {
        return invalid("ladder needs at least one step");
    }
    let n = f64::from(params.dim);
    if params.alpha <= n - 2.0 * params.p {
        return invalid(format!(
            "ladder does not ascend: alpha = {} ≤ N − 2p = {}",
            params.alpha,
            n - 2.0 * params.p
        ));
    }
    let (q_alpha, p_star) = moser_exponents(params.dim, params.p, params.alpha);
    let ratio = p_star / q_alpha;
    let max = u.max_abs();
    Ok((0..=n_steps)
        .map(|step| {
            let exponent = p_star * ratio.powi(step as i32);
            let norm = lebesgue_norm(u, exponent);
            let rel_gap_to_max = if max == 0.0 { 0.0 } else { (norm - max).abs() / max };
            MoserRecord { n: step, exponent, norm, rel_gap_to_max }
        })
        .collect())
}

/// Level-set energies `U_k = ‖w_k‖_r^r` of `w_0 = v⁺`,
/// `w_k = (v − 1 + 2^{−k})⁺` with `v = u / (ρ‖u‖_r)`, for `k = 0..=n_levels`.
pub fn degiorgi_sequence(u: &RadialProfile, grid: &RadialGrid, r_exp: f64, rho: f64, n_levels: usize) -> Result<Vec<f64>> {
    if !same_grid(u.grid(), grid) {
        return invalid("profile lives on a different grid");
    }
    if !(r_exp >= 1.0 && r_exp.is_finite()) {
        return invalid(format!("integrability exponent must be at least 1, got {r_exp}"));
    }
    if !(rho >= 1.0 && rho.is_finite()) {
        return invalid(format!("rho must be at least 1, got {rho}"));
    }
    let norm = lebesgue_norm(u, r_exp);
    if norm == 0.0 {
        return invalid("profile has zero L^r norm");
    }
    let scale = 1.0 / (rho * norm);
    let v: Vec<f64> = u.values().iter().map(|x| x * scale).collect();
    Ok((0..=n_levels)
        .map(|k| {
            let shift = if k == 0 { 0.0 } else { 1.0 - 0.5f64.powi(k as i32) };
            v.iter()
                .zip(grid.weights())
                .map(|(x, w)| w * (x - shift).max(0.0).powf(r_exp))
                .sum()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub amplitude: f64,
    pub r_squared: f64,
}

/// Least-squares fit `log u(r) ≈ log A − rate·r` over nodes in `[r_a, r_b]`.
pub fn decay_fit(u: &RadialProfile, grid: &RadialGrid, window: (f64, f64)) -> Result<DecayFit> {
    if !same_grid(u.grid(), grid) {
        return invalid("profile lives on a different grid");
    }
    let (ra, rb) = window;
    if !(ra < rb) {
        return invalid(format!("empty fit window [{ra}, {rb}]"));
    }
    if rb > 0.9 * grid.max_radius() {
        return invalid(format!("fit window must end by 0.9 R = {}", 0.9 * grid.max_radius()));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&r, &v) in grid.nodes().iter().zip(u.values()) {
        if r >= ra && r <= rb {
            if !(v > 0.0) {
                return invalid(format!("profile is not positive at r = {r}"));
            }
            xs.push(r);
            ys.push(v.ln());
        }
    }
    if xs.len() < 3 {
        return invalid("fit window holds fewer than 3 nodes");
    }
    let count = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / count;
    let my = ys.iter().sum::<f64>() / count;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(DecayFit { rate: -slope, amplitude: intercept.exp(), r_squared })
}

/// Base grid for the dilation check; the dilation by `λ` uses radius `R/λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HlsGrid {
    pub dim: u32,
    pub max_radius: f64,
    pub nodes: usize,
    pub scheme: GridScheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HlsRecord {
    pub lambda: f64,
    /// `B(f_λ, h_λ) / (‖f_λ‖_r ‖h_λ‖_t)`, `None` when a norm vanishes.
    pub quotient: Option<f64>,
    /// `quotient / quotient at the first λ`.
    pub ratio: Option<f64>,
}

/// Dilation behaviour of the HLS quotient
/// `Q(λ) = ∬ f_λ(x) h_λ(y) |x−y|^{−μ} / (‖f_λ‖_r ‖h_λ‖_t)` with
/// `f_λ(x) = f(λx)`. Under `1/r + μ/N + 1/t = 2` the quotient is invariant.
/// Dilated inputs are sampled analytically on the grid of radius `R/λ`.
pub fn hls_scaling_check(
    f: &dyn Fn(f64) -> f64,
    h: &dyn Fn(f64) -> f64,
    base: HlsGrid,
    mu: f64,
    r_exp: f64,
    t_exp: f64,
    lambdas: &[f64],
) -> Result<Vec<HlsRecord>> {
    let n = f64::from(base.dim);
    if !(mu > 0.0 && mu < n) {
        return invalid(format!("mu must lie in (0, {n}), got {mu}"));
    }
    if !(r_exp > 1.0 && t_exp > 1.0) {
        return invalid("HLS exponents must exceed 1");
    }
    if (1.0 / r_exp + mu / n + 1.0 / t_exp - 2.0).abs() > 1e-12 {
        return invalid(format!("exponents violate 1/r + μ/N + 1/t = 2 (r = {r_exp}, μ = {mu}, t = {t_exp})"));
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return invalid(format!("dilations must be positive, got {l}"));
    }
    let alpha = n - mu;
    let mut records: Vec<HlsRecord> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let grid = build_grid(base.max_radius / lambda, base.nodes, base.dim, base.scheme)?;
        let op = build_kernel(&grid, alpha)?;
        let fl = grid.sample(|r| f(lambda * r));
        let hl = grid.sample(|r| h(lambda * r));
        let nf = lebesgue_norm(&fl, r_exp);
        let nh = lebesgue_norm(&hl, t_exp);
        let quotient = if nf == 0.0 || nh == 0.0 {
            None
        } else {
            Some(op.bilinear(&hl, &fl)? / op.normalization() / (nf * nh))
        };
        let ratio = match (records.first().and_then(|r| r.quotient), quotient) {
            (Some(q0), Some(q)) => Some(q / q0),
            (None, Some(_)) if records.is_empty() => Some(1.0),
            _ => None,
        };
        records.push(HlsRecord { lambda, quotient, ratio });
    }
    Ok(records)
}
