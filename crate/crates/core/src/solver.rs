//! Radial ground states for the power nonlinearity.
//!
//! The solver minimises `T(u) = t_grad + t_mass` on the constraint surface
//! `d_nonlocal(u) = 1`. `d_nonlocal` is homogeneous of degree `2q`, so the
//! surface is reached from any nonzero nonnegative profile by the rescaling
//! `u ↦ u / d_nonlocal(u)^{1/(2q)}`. Descent directions are tangent to the
//! surface and preconditioned by the (linearised) operator `−Δ_p + |u|^{p−2}`,
//! which keeps the iteration count roughly independent of the mesh.
//!
//! At a constrained minimiser `u*` the Euler–Lagrange equation reads
//! `−Δ_p u* + |u*|^{p−2}u* = μ (I_α * F(u*)) f(u*)` with `μ = T(u*)/q`, and
//! `v = μ^{1/(2q−p)} u*` solves the equation with unit coefficient.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::functional::{energy_report, nonlocal_energy, require_power, signed_pow, EnergyReport, ProblemParams};
use crate::grid::{same_grid, RadialGrid, RadialProfile};
use crate::identities::{dilation_terms, existence_window_f64};
use crate::riesz::RieszOperator;

/// Regularisation of `|u'|^{p−2}` inside descent directions only.
const GRADIENT_REGULARIZATION: f64 = 1e-12;
const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SeedProfile {
    /// `e^{−(r/width)²}`.
    Gaussian { width: f64 },
    /// Explicit nodal values (e.g. read from a profile CSV).
    Custom { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step0: f64,
    pub backtrack: f64,
    pub seed: SeedProfile,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            max_iter: 20_000,
            grad_tol: 1e-9,
            step0: 1.0,
            backtrack: 0.5,
            seed: SeedProfile::Gaussian { width: 2.0 },
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return invalid("max_iter must be at least 1");
        }
        if !(self.grad_tol > 0.0) {
            return invalid(format!("grad_tol must be positive, got {}", self.grad_tol));
        }
        if !(self.step0 > 0.0) {
            return invalid(format!("step0 must be positive, got {}", self.step0));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return invalid(format!("backtrack must lie in (0, 1), got {}", self.backtrack));
        }
        if let SeedProfile::Gaussian { width } = self.seed {
            if !(width > 0.0) {
                return invalid(format!("seed width must be positive, got {width}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    /// Rescaled profile solving the equation with unit coefficient.
    pub profile: RadialProfile,
    pub report: EnergyReport,
    /// Lagrange multiplier `T(u*)/q` of the constrained problem.
    pub multiplier: f64,
    /// `μ^{1/(2q−p)}`.
    pub rescale: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final constrained-gradient norm, relative to `1 + T`.
    pub gradient_norm: f64,
    /// `T` after every accepted step (constraint-normalised iterates).
    pub objective_history: Vec<f64>,
    /// Constrained minimiser `u*` before rescaling.
    pub normalized: RadialProfile,
}

impl Solution {
    pub fn mu(&self) -> f64 {
        self.multiplier
    }

    pub fn lambda(&self) -> f64 {
        self.rescale
    }
}

struct Problem<'a> {
    params: &'a ProblemParams,
    op: &'a RieszOperator,
    grid: &'a RadialGrid,
    p: f64,
    q: f64,
}

/// State of a constraint-normalised iterate.
struct Iterate {
    u: Vec<f64>,
    objective: f64,
}

impl Problem<'_> {
    fn profile(&self, values: Vec<f64>) -> RadialProfile {
        RadialProfile::new(self.op.grid().clone(), values).expect("iterates stay finite")
    }

    fn objective(&self, u: &[f64]) -> f64 {
        let gu = self.grid.face_gradient(u).expect("grid length");
        let grad: f64 = gu.iter().zip(self.grid.face_weights()).map(|(g, v)| v * g.abs().powf(self.p)).sum();
        let mass: f64 = u.iter().zip(self.grid.weights()).map(|(t, w)| w * t.abs().powf(self.p)).sum();
        grad + mass
    }

    /// Rescale onto `d_nonlocal = 1`; `None` for the zero profile.
    fn project(&self, mut u: Vec<f64>) -> Option<Iterate> {
        let (d, _) = nonlocal_energy(&self.profile(u.clone()), self.params, self.op).ok()?;
        if !(d > 0.0 && d.is_finite()) {
            return None;
        }
        let scale = d.powf(-1.0 / (2.0 * self.q));
        u.iter_mut().for_each(|v| *v *= scale);
        let objective = self.objective(&u);
        Some(Iterate { u, objective })
    }

    /// Euclidean gradients of `T` (optionally with regularised `|u'|^{p−2}`)
    /// and of `d_nonlocal`.
    fn gradients(&self, u: &[f64], regularize: bool) -> (Vec<f64>, Vec<f64>) {
        let p = self.p;
        let gu = self.grid.face_gradient(u).expect("grid length");
        let flux: Vec<f64> = gu
            .iter()
            .zip(self.grid.face_weights())
            .map(|(&g, v)| {
                let a = if regularize && p != 2.0 {
                    (g * g + GRADIENT_REGULARIZATION).powf((p - 2.0) / 2.0) * g
                } else {
                    signed_pow(g, p - 1.0)
                };
                p * v * a
            })
            .collect();
        let mut grad_t = self.grid.face_gradient_adjoint(&flux).expect("grid length");
        for ((g, t), w) in grad_t.iter_mut().zip(u).zip(self.grid.weights()) {
            *g += p * w * signed_pow(*t, p - 1.0);
        }
        let (_, potential) = nonlocal_energy(&self.profile(u.to_vec()), self.params, self.op).expect("matching grid");
        let nl = &self.params.nonlinearity;
        let grad_d = u
            .iter()
            .zip(self.grid.weights())
            .zip(&potential)
            .map(|((&t, w), pot)| 2.0 * w * pot * nl.f(t))
            .collect();
        (grad_t, grad_d)
    }

    /// Tridiagonal preconditioner `p(p−1)[Gᵀ diag(v a) G + diag(w c)]` with
    /// `a ≈ |u'|^{p−2}`, `c ≈ |u|^{p−2}` floored at a fraction of their
    /// maxima (exactly `2(−Δ + 1)` when `p = 2`).
    fn preconditioner(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = self.p;
        let scale = p * (p - 1.0).max(1.0);
        let (a, c): (Vec<f64>, Vec<f64>) = if p == 2.0 {
            (vec![1.0; u.len()], vec![1.0; u.len()])
        } else {
            let gu = self.grid.face_gradient(u).expect("grid length");
            let gmax = gu.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            let umax = u.iter().fold(0.0f64, |m, t| m.max(t.abs()));
            let floor_g = 1e-2 * gmax;
            let floor_u = 1e-2 * umax;
            (
                gu.iter().map(|g| g.abs().max(floor_g).powf(p - 2.0)).collect(),
                u.iter().map(|t| t.abs().max(floor_u).powf(p - 2.0)).collect(),
            )
        };
        let (mut diag, mut off) = self.grid.face_stiffness(&a).expect("grid length");
        for ((d, w), c) in diag.iter_mut().zip(self.grid.weights()).zip(&c) {
            *d = scale * (*d + w * c);
        }
        off.iter_mut().for_each(|o| *o *= scale);
        (diag, off)
    }
}

/// Thomas algorithm for a symmetric tridiagonal system.
fn solve_tridiagonal(diag: &[f64], off: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    c[0] = if n > 1 { off[0] / denom } else { 0.0 };
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - off[i - 1] * c[i - 1];
        if i + 1 < n {
            c[i] = off[i] / denom;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    d
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Constrained minimisation of `t_grad + t_mass` on `d_nonlocal = 1`,
/// followed by the rescaling that removes the Lagrange multiplier.
pub fn solve_ground_state(
    params: &ProblemParams,
    grid: &std::sync::Arc<RadialGrid>,
    op: &RieszOperator,
    config: &SolveConfig,
) -> Result<Solution> {
    config.validate()?;
    let q = require_power(params)?;
    params.check_operator(op)?;
    if !same_grid(op.grid(), grid) {
        return invalid("Riesz operator was built on a different grid");
    }
    let verdict = existence_window_f64(params.dim, params.p, params.alpha, q)?;
    if !verdict.admissible {
        return Err(Error::Nonexistence { q, q_lower: verdict.q_lower, q_upper: verdict.q_upper });
    }

    let seed: Vec<f64> = match &config.seed {
        SeedProfile::Gaussian { width } => grid.nodes().iter().map(|r| (-(r / width).powi(2)).exp()).collect(),
        SeedProfile::Custom { values } => {
            if values.len() != grid.len() {
                return invalid(format!("seed has {} values, grid has {} nodes", values.len(), grid.len()));
            }
            values.clone()
        }
    };
    if seed.iter().any(|v| !v.is_finite()) {
        return invalid("seed profile has non-finite values");
    }
    // negative excursions are clipped, so a seed with no positive part is zero
    let seed: Vec<f64> = seed.into_iter().map(|v| v.max(0.0)).collect();
    if seed.iter().all(|&v| v == 0.0) {
        return invalid("seed profile is zero");
    }

    let problem = Problem { params, op, grid, p: params.p, q };
    let mut state = problem.project(seed).ok_or_else(|| Error::InvalidArgument("seed profile is zero".into()))?;
    let mut step = config.step0;
    let mut history = vec![state.objective];
    let mut converged = false;
    let mut iterations = 0;
    let mut gradient_norm = f64::INFINITY;

    while iterations < config.max_iter {
        let (grad_t, grad_d) = problem.gradients(&state.u, true);

        // stopping test on the unregularised constrained gradient in L²(w)
        let exact_t = if params.p == 2.0 { grad_t.clone() } else { problem.gradients(&state.u, false).0 };
        let multiplier = dot(&exact_t, &state.u) / dot(&grad_d, &state.u);
        let residual: f64 = exact_t
            .iter()
            .zip(&grad_d)
            .zip(grid.weights())
            .map(|((gt, gd), w)| {
                let r = gt - multiplier * gd;
                r * r / w
            })
            .sum::<f64>()
            .sqrt();
        gradient_norm = residual / (1.0 + state.objective);
        if gradient_norm < config.grad_tol {
            converged = true;
            break;
        }

        let (diag, off) = problem.preconditioner(&state.u);
        let pre_t = solve_tridiagonal(&diag, &off, &grad_t);
        let pre_d = solve_tridiagonal(&diag, &off, &grad_d);
        let c = dot(&grad_d, &pre_t) / dot(&grad_d, &pre_d);
        let direction: Vec<f64> = pre_t.iter().zip(&pre_d).map(|(a, b)| -(a - c * b)).collect();
        let slope = dot(&grad_t, &direction);
        if !(slope < 0.0) {
            // tangent direction vanished: stationary to rounding
            converged = gradient_norm < config.grad_tol.sqrt();
            break;
        }

        let mut accepted = None;
        while step >= MIN_STEP {
            let trial: Vec<f64> = state.u.iter().zip(&direction).map(|(u, d)| (u + step * d).max(0.0)).collect();
            if let Some(next) = problem.project(trial) {
                if next.objective <= state.objective + ARMIJO * step * slope {
                    accepted = Some(next);
                    break;
                }
            }
            step *= config.backtrack;
        }
        iterations += 1;
        match accepted {
            Some(next) => {
                state = next;
                history.push(state.objective);
                step = (step / config.backtrack).min(config.step0 * 4.0);
            }
            None => break,
        }
    }

    let multiplier = state.objective / q;
    let rescale = multiplier.powf(1.0 / (2.0 * q - params.p));
    let normalized = problem.profile(state.u.clone());
    let profile = normalized.scaled(rescale);
    let report = energy_report(&profile, params, op)?;
    Ok(Solution {
        profile,
        report,
        multiplier,
        rescale,
        iterations,
        converged,
        gradient_norm,
        objective_history: history,
        normalized,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberingPoint {
    pub t: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fibering {
    pub points: Vec<FiberingPoint>,
    /// `d/dt E(u(·/t))` at `t = 1`.
    pub slope_at_one: f64,
}

/// Energies of the dilations `u_t(x) = u(x/t)`, from the change of variables
/// `E(u_t) = t^{N−p}/p·t_grad + t^N/p·t_mass − t^{N+α}/2·d_nonlocal`.
pub fn fibering_profile(u: &RadialProfile, params: &ProblemParams, op: &RieszOperator, t_values: &[f64]) -> Result<Fibering> {
    if let Some(t) = t_values.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return invalid(format!("dilation factors must be positive, got {t}"));
    }
    let report = energy_report(u, params, op)?;
    Ok(fibering_from_report(&report, params, t_values))
}

pub fn fibering_from_report(report: &EnergyReport, params: &ProblemParams, t_values: &[f64]) -> Fibering {
    let n = f64::from(params.dim);
    let p = params.p;
    let points = t_values
        .iter()
        .map(|&t| FiberingPoint {
            t,
            energy: if t == 1.0 {
                report.energy
            } else {
                t.powf(n - p) / p * report.t_grad + t.powf(n) / p * report.t_mass
                    - t.powf(n + params.alpha) / 2.0 * report.d_nonlocal
            },
        })
        .collect();
    let (lhs, rhs) = dilation_terms(report, params);
    Fibering { points, slope_at_one: lhs - rhs }
}
