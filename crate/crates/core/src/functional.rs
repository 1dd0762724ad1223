//! Problem parameters, the nonlinearity, the energy functional and the weak
//! form of the equation.
//!
//! The energy is `E(u) = (t_grad + t_mass)/p − d_nonlocal/2` with
//!
//! ```text
//! t_grad = ∫|∇u|^p,   t_mass = ∫|u|^p,   d_nonlocal = ∫(I_α * F(u)) F(u).
//! ```
//!
//! `t_grad` is evaluated on the grid's staggered face gradient, and
//! [`weak_residual`] is the exact directional derivative of this discrete
//! energy, so that critical points of the discrete energy are discrete weak
//! solutions.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{same_grid, RadialProfile};
use crate::riesz::RieszOperator;

type ScalarMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum NonlinearitySpec {
    /// `f(t) = |t|^{q-2} t`, `F(t) = |t|^q / q`.
    Power { q: f64 },
    /// User-supplied `f` and its primitive `F`.
    Custom { name: String, f: ScalarMap, primitive: ScalarMap },
}

impl fmt::Debug for NonlinearitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NonlinearitySpec::Power { q } => f.debug_struct("Power").field("q", q).finish(),
            NonlinearitySpec::Custom { name, .. } => f.debug_struct("Custom").field("name", name).finish(),
        }
    }
}

impl NonlinearitySpec {
    pub fn power(q: f64) -> Result<Self> {
        if !(q.is_finite() && q > 1.0) {
            return invalid(format!("power exponent must exceed 1, got {q}"));
        }
        Ok(NonlinearitySpec::Power { q })
    }

    /// Custom nonlinearity; `f(0) = 0` and `F(0) = 0` are required, and `F`
    /// must be even wherever `f` is odd at the sample points.
    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        primitive: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let name = name.into();
        if f(0.0) != 0.0 {
            return invalid(format!("custom nonlinearity '{name}' must vanish at 0"));
        }
        if primitive(0.0) != 0.0 {
            return invalid(format!("primitive of '{name}' must vanish at 0"));
        }
        for t in [1e-3, 0.1, 0.5, 1.0, 2.0, 10.0] {
            let odd = (f(-t) + f(t)).abs() <= 1e-12 * f(t).abs().max(1.0);
            let even = (primitive(-t) - primitive(t)).abs() <= 1e-12 * primitive(t).abs().max(1.0);
            if odd && !even {
                return invalid(format!("primitive of odd '{name}' is not even at t = {t}"));
            }
        }
        Ok(NonlinearitySpec::Custom { name, f: Arc::new(f), primitive: Arc::new(primitive) })
    }

    pub fn exponent(&self) -> Option<f64> {
        match self {
            NonlinearitySpec::Power { q } => Some(*q),
            NonlinearitySpec::Custom { .. } => None,
        }
    }

    #[inline]
    pub fn f(&self, t: f64) -> f64 {
        match self {
            NonlinearitySpec::Power { q } => signed_pow(t, q - 1.0),
            NonlinearitySpec::Custom { f, .. } => f(t),
        }
    }

    /// `F(t) = ∫_0^t f`.
    #[inline]
    pub fn primitive(&self, t: f64) -> f64 {
        match self {
            NonlinearitySpec::Power { q } => t.abs().powf(*q) / q,
            NonlinearitySpec::Custom { primitive, .. } => primitive(t),
        }
    }
}

/// `|t|^{e-1} t`, i.e. `sign(t) |t|^e`.
#[inline]
pub(crate) fn signed_pow(t: f64, e: f64) -> f64 {
    if e == 1.0 {
        t
    } else {
        t.signum() * t.abs().powf(e)
    }
}

#[derive(Debug, Clone)]
pub struct ProblemParams {
    pub dim: u32,
    pub p: f64,
    pub alpha: f64,
    pub nonlinearity: NonlinearitySpec,
}

impl ProblemParams {
    /// Checks `p ≥ 2`, `N > p` and `α ∈ ((N-2p)_+, N)`.
    pub fn new(dim: u32, p: f64, alpha: f64, nonlinearity: NonlinearitySpec) -> Result<Self> {
        let n = f64::from(dim);
        if !(p.is_finite() && p >= 2.0) {
            return invalid(format!("p must be at least 2, got {p}"));
        }
        if n <= p {
            return invalid(format!("dimension N = {dim} must exceed p = {p}"));
        }
        let floor = (n - 2.0 * p).max(0.0);
        if !(alpha > floor && alpha < n) {
            return invalid(format!("alpha must lie in ({floor}, {n}), got {alpha}"));
        }
        Ok(ProblemParams { dim, p, alpha, nonlinearity })
    }

    pub fn power(dim: u32, p: f64, alpha: f64, q: f64) -> Result<Self> {
        Self::new(dim, p, alpha, NonlinearitySpec::power(q)?)
    }

    pub fn exponents(&self) -> (f64, f64) {
        critical_exponents(self.dim, self.p, self.alpha).expect("validated parameters")
    }

    pub(crate) fn check_operator(&self, op: &RieszOperator) -> Result<()> {
        if op.alpha() != self.alpha || op.dim() != self.dim {
            return invalid(format!(
                "Riesz operator (N = {}, α = {}) does not match problem (N = {}, α = {})",
                op.dim(),
                op.alpha(),
                self.dim,
                self.alpha
            ));
        }
        Ok(())
    }
}

/// Lower and upper Hardy–Littlewood–Sobolev critical exponents
/// `((N+α)p/(2N), (N+α)p/(2(N−p)))`.
pub fn critical_exponents(dim: u32, p: f64, alpha: f64) -> Result<(f64, f64)> {
    let n = f64::from(dim);
    if n <= p {
        return invalid(format!("dimension N = {dim} must exceed p = {p}"));
    }
    if !(alpha > 0.0 && alpha < n) {
        return invalid(format!("alpha must lie in (0, {n}), got {alpha}"));
    }
    Ok(((n + alpha) * p / (2.0 * n), (n + alpha) * p / (2.0 * (n - p))))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthVerdict {
    pub f1_ok: bool,
    pub f2_ok: bool,
    /// Set when the verdict comes from sampling rather than from the
    /// exponent of a power nonlinearity.
    pub sampled: bool,
}

/// Small- and large-amplitude growth conditions on `f`:
/// `|f(t)| / |t|^{q_lower − 1} → 0` as `t → 0` and
/// `|f(t)| / |t|^{q_upper − 1}` bounded as `|t| → ∞`.
pub fn growth_check(spec: &NonlinearitySpec, dim: u32, p: f64, alpha: f64) -> Result<GrowthVerdict> {
    let (lo, hi) = critical_exponents(dim, p, alpha)?;
    Ok(match spec {
        NonlinearitySpec::Power { q } => GrowthVerdict { f1_ok: *q > lo, f2_ok: *q <= hi, sampled: false },
        NonlinearitySpec::Custom { f, .. } => {
            let ratio_small = |t: f64| f(t).abs().max(f(-t).abs()) / t.powf(lo - 1.0);
            let small: Vec<f64> = (2..=14).map(|k| ratio_small(10f64.powi(-k))).collect();
            let last = *small.last().unwrap();
            let first = small[0];
            let tail_monotone = small[small.len() - 4..].windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
            let f1_ok = last.is_finite() && tail_monotone && (last < 1e-8 || last < 0.5 * first);

            let ratio_large = |t: f64| f(t).abs().max(f(-t).abs()) / t.powf(hi - 1.0);
            let large: Vec<f64> = (1..=12).map(|k| ratio_large(10f64.powi(k))).collect();
            let head_max = large[..large.len() - 1].iter().cloned().fold(0.0, f64::max);
            let last = *large.last().unwrap();
            let f2_ok = last.is_finite() && last <= head_max * (1.0 + 1e-6) + 1e-300;
            GrowthVerdict { f1_ok, f2_ok, sampled: true }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub t_grad: f64,
    pub t_mass: f64,
    pub d_nonlocal: f64,
    pub energy: f64,
}

impl EnergyReport {
    pub fn kinetic_plus_mass(&self) -> f64 {
        self.t_grad + self.t_mass
    }
}

fn check_inputs(u: &RadialProfile, op: &RieszOperator) -> Result<()> {
    if !same_grid(u.grid(), op.grid()) {
        return invalid("profile and Riesz operator live on different grids");
    }
    Ok(())
}

/// Gradient, mass and nonlocal integrals of `u` and the energy they combine to.
pub fn energy_report(u: &RadialProfile, params: &ProblemParams, op: &RieszOperator) -> Result<EnergyReport> {
    check_inputs(u, op)?;
    params.check_operator(op)?;
    let grid = u.grid();
    let p = params.p;
    let gu = grid.face_gradient(u.values())?;
    let grad_p: Vec<f64> = gu.iter().map(|g| g.abs().powf(p)).collect();
    let t_grad = grid.integrate_faces(&grad_p)?;
    let mass_p: Vec<f64> = u.values().iter().map(|v| v.abs().powf(p)).collect();
    let t_mass = grid.integrate(&mass_p)?;
    let d_nonlocal = nonlocal_energy(u, params, op)?.0;
    Ok(EnergyReport { t_grad, t_mass, d_nonlocal, energy: (t_grad + t_mass) / p - 0.5 * d_nonlocal })
}

/// `(∫ (I_α * F(u)) F(u), I_α * F(u))`.
pub(crate) fn nonlocal_energy(u: &RadialProfile, params: &ProblemParams, op: &RieszOperator) -> Result<(f64, Vec<f64>)> {
    let big_f: Vec<f64> = u.values().iter().map(|&t| params.nonlinearity.primitive(t)).collect();
    let potential = op.apply_values(&big_f);
    let prod: Vec<f64> = potential.iter().zip(&big_f).map(|(a, b)| a * b).collect();
    Ok((u.grid().integrate(&prod)?, potential))
}

/// `∫|∇u|^{p−2}∇u·∇φ + ∫|u|^{p−2}uφ − ∫(I_α * F(u)) f(u) φ`.
pub fn weak_residual(u: &RadialProfile, params: &ProblemParams, op: &RieszOperator, phi: &RadialProfile) -> Result<f64> {
    if !u.same_grid_as(phi) {
        return invalid("test function lives on a different grid");
    }
    let grad = energy_gradient(u, params, op)?;
    Ok(grad.iter().zip(phi.values()).map(|(g, v)| g * v).sum())
}

/// Euclidean gradient of the discrete energy with respect to the nodal
/// values: `∂E/∂u_i`, so that `weak_residual(u, φ) = Σ_i ∂E/∂u_i φ_i`.
pub fn energy_gradient(u: &RadialProfile, params: &ProblemParams, op: &RieszOperator) -> Result<Vec<f64>> {
    check_inputs(u, op)?;
    params.check_operator(op)?;
    let grid = u.grid();
    let p = params.p;
    let gu = grid.face_gradient(u.values())?;
    let flux: Vec<f64> = gu
        .iter()
        .zip(grid.face_weights())
        .map(|(g, v)| v * signed_pow(*g, p - 1.0))
        .collect();
    let mut out = grid.face_gradient_adjoint(&flux)?;
    let (_, potential) = nonlocal_energy(u, params, op)?;
    for (i, o) in out.iter_mut().enumerate() {
        let t = u.values()[i];
        let w = grid.weights()[i];
        *o += w * (signed_pow(t, p - 1.0) - potential[i] * params.nonlinearity.f(t));
    }
    Ok(out)
}

pub(crate) fn require_power(params: &ProblemParams) -> Result<f64> {
    params
        .nonlinearity
        .exponent()
        .ok_or_else(|| Error::Unsupported("operation requires a power nonlinearity".into()))
}
