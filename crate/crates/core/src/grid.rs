//! Radial grids, full-space quadrature of radial functions and radial
//! finite differences.
//!
//! Nodes sit at cell midpoints of a map `r(s)` from `[0, 1]` onto `[0, R]`
//! (`r = R s` for the uniform scheme, `r = R s^2` for the graded one), so the
//! origin is never a node. Node weights carry the full-space volume factor
//! `ω_{N-1} r^{N-1}`, making `Σ w_i g(r_i)` a second-order approximation of
//! `∫_{B_R} g(|x|) dx`.
//!
//! Besides the nodal derivative, the grid exposes a staggered "face" gradient:
//! face `k < M-1` sits halfway between nodes `k` and `k+1`, and the last face
//! sits at `R`, where the Dirichlet condition `u(R) = 0` is imposed by an odd
//! reflection. Energies built on face gradients give a compact, conservative
//! discrete p-Laplacian.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};

/// Surface area `ω_{N-1} = 2π^{N/2} / Γ(N/2)` of the unit sphere in `ℝ^N`.
pub fn sphere_area(dim: u32) -> f64 {
    let half = f64::from(dim) / 2.0;
    2.0 * std::f64::consts::PI.powf(half) / gamma(half)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridScheme {
    Uniform,
    Graded,
}

impl GridScheme {
    fn map(self, s: f64) -> (f64, f64) {
        match self {
            GridScheme::Uniform => (s, 1.0),
            GridScheme::Graded => (s * s, 2.0 * s),
        }
    }
}

impl fmt::Display for GridScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridScheme::Uniform => "uniform",
            GridScheme::Graded => "graded",
        })
    }
}

impl FromStr for GridScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(GridScheme::Uniform),
            "graded" => Ok(GridScheme::Graded),
            other => invalid(format!("unknown grid scheme '{other}' (expected uniform or graded)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    dim: u32,
    max_radius: f64,
    scheme: GridScheme,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    face_radii: Vec<f64>,
    face_spacing: Vec<f64>,
    face_weights: Vec<f64>,
}

/// Build a grid with `m` nodes on `(0, R)` for radial functions on `ℝ^N`.
pub fn build_grid(max_radius: f64, m: usize, dim: u32, scheme: GridScheme) -> Result<Arc<RadialGrid>> {
    RadialGrid::new(max_radius, m, dim, scheme).map(Arc::new)
}

impl RadialGrid {
    pub fn new(max_radius: f64, m: usize, dim: u32, scheme: GridScheme) -> Result<Self> {
        if !(max_radius.is_finite() && max_radius > 0.0) {
            return invalid(format!("grid radius must be positive, got {max_radius}"));
        }
        if m < 8 {
            return invalid(format!("grid needs at least 8 nodes, got {m}"));
        }
        if dim < 2 {
            return invalid(format!("dimension must be at least 2, got {dim}"));
        }

        let omega = sphere_area(dim);
        let ds = 1.0 / m as f64;
        let mut nodes = Vec::with_capacity(m);
        let mut weights = Vec::with_capacity(m);
        for i in 0..m {
            let s = (i as f64 + 0.5) * ds;
            let (x, dx) = scheme.map(s);
            let r = max_radius * x;
            nodes.push(r);
            weights.push(omega * r.powi(dim as i32 - 1) * max_radius * dx * ds);
        }

        let mut face_radii = Vec::with_capacity(m);
        let mut face_spacing = Vec::with_capacity(m);
        let mut face_weights = Vec::with_capacity(m);
        for k in 0..m {
            let (rho, spacing, width) = if k + 1 < m {
                let h = nodes[k + 1] - nodes[k];
                (0.5 * (nodes[k] + nodes[k + 1]), h, h)
            } else {
                // ghost node mirrored across R
                let gap = max_radius - nodes[k];
                (max_radius, 2.0 * gap, gap)
            };
            face_radii.push(rho);
            face_spacing.push(spacing);
            face_weights.push(omega * rho.powi(dim as i32 - 1) * width);
        }

        let grid = RadialGrid {
            dim,
            max_radius,
            scheme,
            nodes,
            weights,
            face_radii,
            face_spacing,
            face_weights,
        };
        debug_assert!(grid.nodes.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(grid.weights.iter().all(|&w| w > 0.0));
        Ok(grid)
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn max_radius(&self) -> f64 {
        self.max_radius
    }

    pub fn scheme(&self) -> GridScheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn face_radii(&self) -> &[f64] {
        &self.face_radii
    }

    pub fn face_weights(&self) -> &[f64] {
        &self.face_weights
    }

    /// Weighted sum `Σ w_i g_i`, the discrete `∫_{ℝ^N} g(|x|) dx`.
    pub fn integrate(&self, samples: &[f64]) -> Result<f64> {
        self.check_len(samples.len())?;
        Ok(self.weights.iter().zip(samples).map(|(w, g)| w * g).sum())
    }

    /// Sum over faces `Σ_f v_f y_f` for face-centred samples.
    pub fn integrate_faces(&self, samples: &[f64]) -> Result<f64> {
        self.check_len(samples.len())?;
        Ok(self.face_weights.iter().zip(samples).map(|(w, g)| w * g).sum())
    }

    /// Nodal derivative `u'(r_i)`: three-point Lagrange stencils, an even
    /// ghost `u(-r_1) = u(r_1)` at the origin side, and a one-sided stencil
    /// at the outer node. Exact for quadratics in the interior and at the
    /// outer node, and for even quadratics at the first node.
    pub fn differentiate(&self, u: &RadialProfile) -> Result<RadialProfile> {
        self.check_profile(u)?;
        let x = &self.nodes;
        let v = &u.values;
        let m = x.len();
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            let d = if i + 1 < m {
                let (xl, ul) = if i == 0 { (-x[0], v[0]) } else { (x[i - 1], v[i - 1]) };
                three_point(xl, x[i], x[i + 1], ul, v[i], v[i + 1], x[i])
            } else {
                three_point(x[m - 3], x[m - 2], x[m - 1], v[m - 3], v[m - 2], v[m - 1], x[m - 1])
            };
            out.push(d);
        }
        Ok(RadialProfile { grid: u.grid.clone(), values: out })
    }

    /// Staggered gradient `(u_{k+1} - u_k) / (r_{k+1} - r_k)` at each face,
    /// with `u_M = -u_{M-1}` on the reflected ghost node.
    pub fn face_gradient(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check_len(values.len())?;
        let m = values.len();
        let mut g = Vec::with_capacity(m);
        for k in 0..m {
            let next = if k + 1 < m { values[k + 1] } else { -values[k] };
            g.push((next - values[k]) / self.face_spacing[k]);
        }
        Ok(g)
    }

    /// Transpose of [`face_gradient`](Self::face_gradient): returns
    /// `Σ_f y_f ∂(Gu)_f/∂u_i` for every node `i`.
    pub fn face_gradient_adjoint(&self, face_values: &[f64]) -> Result<Vec<f64>> {
        self.check_len(face_values.len())?;
        let m = face_values.len();
        let mut out = vec![0.0; m];
        for k in 0..m {
            let y = face_values[k] / self.face_spacing[k];
            if k + 1 < m {
                out[k + 1] += y;
                out[k] -= y;
            } else {
                out[k] -= 2.0 * y;
            }
        }
        Ok(out)
    }

    /// Coefficients of the symmetric tridiagonal matrix `Gᵀ diag(v·a) G`
    /// for face coefficients `a`: returns `(diag, offdiag)` with
    /// `offdiag[k]` coupling nodes `k` and `k+1`.
    pub fn face_stiffness(&self, coeff: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_len(coeff.len())?;
        let m = coeff.len();
        let mut diag = vec![0.0; m];
        let mut off = vec![0.0; m - 1];
        for k in 0..m {
            let h = self.face_spacing[k];
            let c = self.face_weights[k] * coeff[k] / (h * h);
            if k + 1 < m {
                diag[k] += c;
                diag[k + 1] += c;
                off[k] -= c;
            } else {
                diag[k] += 4.0 * c;
            }
        }
        Ok((diag, off))
    }

    /// Sample a closed-form radial function at the nodes.
    pub fn sample(self: &Arc<Self>, f: impl Fn(f64) -> f64) -> RadialProfile {
        RadialProfile {
            grid: self.clone(),
            values: self.nodes.iter().map(|&r| f(r)).collect(),
        }
    }

    pub fn zeros(self: &Arc<Self>) -> RadialProfile {
        RadialProfile { grid: self.clone(), values: vec![0.0; self.len()] }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.nodes.len() {
            return invalid(format!("expected {} samples, got {len}", self.nodes.len()));
        }
        Ok(())
    }

    fn check_profile(&self, u: &RadialProfile) -> Result<()> {
        if !same_grid(&u.grid, self) {
            return invalid("profile lives on a different grid");
        }
        Ok(())
    }
}

fn three_point(x0: f64, x1: f64, x2: f64, u0: f64, u1: f64, u2: f64, at: f64) -> f64 {
    // derivative of the quadratic interpolant through (x0,u0),(x1,u1),(x2,u2)
    let l0 = (2.0 * at - x1 - x2) / ((x0 - x1) * (x0 - x2));
    let l1 = (2.0 * at - x0 - x2) / ((x1 - x0) * (x1 - x2));
    let l2 = (2.0 * at - x0 - x1) / ((x2 - x0) * (x2 - x1));
    l0 * u0 + l1 * u1 + l2 * u2
}

pub(crate) fn same_grid(a: &Arc<RadialGrid>, b: &RadialGrid) -> bool {
    std::ptr::eq(Arc::as_ptr(a), b) || **a == *b
}

/// A radial function sampled at the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    grid: Arc<RadialGrid>,
    values: Vec<f64>,
}

impl RadialProfile {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<f64>) -> Result<Self> {
        grid.check_len(values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("profile value at node {i} is not finite"));
        }
        Ok(RadialProfile { grid, values })
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RadialProfile {
        RadialProfile {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> RadialProfile {
        self.map(|v| factor * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn same_grid_as(&self, other: &RadialProfile) -> bool {
        same_grid(&self.grid, &other.grid)
    }

    /// Write the profile as CSV with header `r,u`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.values.len() * 40);
        out.push_str("r,u\n");
        for (r, u) in self.grid.nodes.iter().zip(&self.values) {
            out.push_str(&format!("{r},{u}\n"));
        }
        let mut file = fs::File::create(path)?;
        file.write_all(out.as_bytes())?;
        Ok(())
    }

    /// Read a CSV profile and attach it to `grid`. Radii must match the grid
    /// nodes to a relative `1e-12`.
    pub fn read_csv(path: &Path, grid: Arc<RadialGrid>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {line}: {message}"),
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == "r,u" => {}
            Some((_, header)) => return Err(parse_err(1, format!("expected header 'r,u', found '{header}'"))),
            None => return Err(parse_err(1, "empty file".into())),
        }
        let mut values = Vec::with_capacity(grid.len());
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let (r, u) = line
                .split_once(',')
                .ok_or_else(|| parse_err(lineno, "expected two comma-separated columns".into()))?;
            let r: f64 = r.trim().parse().map_err(|e| parse_err(lineno, format!("bad radius: {e}")))?;
            let u: f64 = u.trim().parse().map_err(|e| parse_err(lineno, format!("bad value: {e}")))?;
            let i = values.len();
            let Some(&node) = grid.nodes.get(i) else {
                return Err(parse_err(lineno, format!("more rows than the {} grid nodes", grid.len())));
            };
            if (r - node).abs() > 1e-12 * node.abs().max(1.0) {
                return Err(parse_err(lineno, format!("radius {r} does not match grid node {node}")));
            }
            values.push(u);
        }
        if values.len() != grid.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: format!("profile has {} rows, grid has {} nodes", values.len(), grid.len()),
            });
        }
        RadialProfile::new(grid, values)
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-14);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-13);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-13);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(RadialGrid::new(1.0, 7, 3, GridScheme::Uniform), Err(Error::InvalidArgument(_))));
        assert!(matches!(RadialGrid::new(0.0, 16, 3, GridScheme::Uniform), Err(Error::InvalidArgument(_))));
        assert!(matches!(RadialGrid::new(-1.0, 16, 3, GridScheme::Graded), Err(Error::InvalidArgument(_))));
        let g = RadialGrid::new(1.0, 8, 3, GridScheme::Uniform).unwrap();
        assert!(g.integrate(&[1.0; 7]).is_err());
    }

    #[test]
    fn node_layout() {
        for scheme in [GridScheme::Uniform, GridScheme::Graded] {
            let g = RadialGrid::new(3.0, 64, 3, scheme).unwrap();
            assert!(g.nodes()[0] > 0.0);
            assert!(*g.nodes().last().unwrap() <= 3.0);
            assert!(g.nodes().windows(2).all(|w| w[0] < w[1]));
            assert!(g.weights().iter().all(|&w| w > 0.0));
        }
        let g = RadialGrid::new(1.0, 10, 2, GridScheme::Uniform).unwrap();
        assert!((g.nodes()[0] - 0.05).abs() < 1e-15);
        // graded spacing grows outward
        let g = RadialGrid::new(1.0, 32, 3, GridScheme::Graded).unwrap();
        let n = g.nodes();
        assert!(n[1] - n[0] < n[31] - n[30]);
    }

    #[test]
    fn zero_integrand() {
        let g = RadialGrid::new(1.0, 8, 2, GridScheme::Uniform).unwrap();
        assert_eq!(g.integrate(&[0.0; 8]).unwrap(), 0.0);
    }

    #[test]
    fn ball_volume_converges() {
        let exact = 4.0 * PI / 3.0;
        for scheme in [GridScheme::Uniform, GridScheme::Graded] {
            let mut prev = f64::INFINITY;
            for m in [64, 128, 256, 512, 1024] {
                let g = RadialGrid::new(1.0, m, 3, scheme).unwrap();
                let err = (g.integrate(&vec![1.0; m]).unwrap() - exact).abs();
                assert!(err < prev);
                prev = err;
            }
            assert!(prev < 1e-5, "{scheme}: {prev}");
        }
    }

    #[test]
    fn gaussian_integral() {
        let g = build_grid(8.0, 512, 3, GridScheme::Uniform).unwrap();
        let u = g.sample(|r| (-r * r).exp());
        let val = g.integrate(u.values()).unwrap();
        assert!((val - PI.powf(1.5)).abs() < 1e-6, "{val}");
    }

    #[test]
    fn linear_integrand() {
        // 4π ∫_0^1 r^3 dr = π
        let g = build_grid(1.0, 512, 3, GridScheme::Uniform).unwrap();
        let u = g.sample(|r| r);
        assert!((g.integrate(u.values()).unwrap() - PI).abs() < 1e-5);
    }

    #[test]
    fn refinement_slope_second_order() {
        // g = r on the unit ball in N = 3; midpoint error ~ h^2
        for scheme in [GridScheme::Uniform, GridScheme::Graded] {
            let err = |m: usize| {
                let g = build_grid(1.0, m, 3, scheme).unwrap();
                (g.integrate(g.sample(|r| r).values()).unwrap() - PI).abs()
            };
            let slope = (err(128) / err(256)).log2();
            assert!(slope >= 1.9, "{scheme}: slope {slope}");
        }
    }

    #[test]
    fn derivative_of_constant_and_quadratic() {
        for scheme in [GridScheme::Uniform, GridScheme::Graded] {
            let g = build_grid(2.0, 40, 3, scheme).unwrap();
            let c = g.differentiate(&g.sample(|_| 3.5)).unwrap();
            assert!(c.values().iter().all(|d| d.abs() < 1e-12));
            let q = g.differentiate(&g.sample(|r| r * r)).unwrap();
            for (r, d) in g.nodes().iter().zip(q.values()) {
                assert!((d - 2.0 * r).abs() < 1e-12, "r={r}: {d}");
            }
        }
    }

    #[test]
    fn derivative_refinement() {
        // e^{-r} has a cusp as a radial function, so the even ghost at the
        // origin is only consistent away from the first node.
        let err = |m: usize| {
            let g = build_grid(4.0, m, 3, GridScheme::Uniform).unwrap();
            let d = g.differentiate(&g.sample(|r| (-r).exp())).unwrap();
            g.nodes()
                .iter()
                .zip(d.values())
                .skip(1)
                .map(|(r, d)| (d + (-r).exp()).abs())
                .fold(0.0, f64::max)
        };
        let slope = (err(128) / err(256)).log2();
        assert!(slope > 1.9, "slope {slope}");
    }

    #[test]
    fn face_gradient_adjoint_is_transpose() {
        let g = build_grid(3.0, 16, 3, GridScheme::Graded).unwrap();
        let u: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..16).map(|i| (i as f64 * 1.3).cos()).collect();
        let gu = g.face_gradient(&u).unwrap();
        let gty = g.face_gradient_adjoint(&y).unwrap();
        let lhs: f64 = gu.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.iter().zip(&gty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn face_stiffness_matches_quadratic_form() {
        let g = build_grid(3.0, 12, 3, GridScheme::Uniform).unwrap();
        let u: Vec<f64> = (0..12).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let coeff: Vec<f64> = (0..12).map(|i| 1.0 + 0.1 * i as f64).collect();
        let gu = g.face_gradient(&u).unwrap();
        let form: f64 = (0..12).map(|k| g.face_weights()[k] * coeff[k] * gu[k] * gu[k]).sum();
        let (d, o) = g.face_stiffness(&coeff).unwrap();
        let mut quad = 0.0;
        for i in 0..12 {
            quad += d[i] * u[i] * u[i];
            if i + 1 < 12 {
                quad += 2.0 * o[i] * u[i] * u[i + 1];
            }
        }
        assert!((form - quad).abs() < 1e-12 * form);
    }

    #[test]
    fn face_energy_converges() {
        // ∫|∇e^{-r^2}|^2 over ℝ^3 = 16π ∫ r^4 e^{-2r^2} dr = 3(π/2)^{3/2}
        let exact = 3.0 * (PI / 2.0).powf(1.5);
        let g = build_grid(8.0, 512, 3, GridScheme::Uniform).unwrap();
        let u = g.sample(|r| (-r * r).exp());
        let gu = g.face_gradient(u.values()).unwrap();
        let sq: Vec<f64> = gu.iter().map(|x| x * x).collect();
        let val = g.integrate_faces(&sq).unwrap();
        assert!((val - exact).abs() < 1e-4 * exact, "{val} vs {exact}");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.csv");
        let g = build_grid(5.0, 33, 3, GridScheme::Graded).unwrap();
        let u = g.sample(|r| (-r).exp() / 3.0);
        u.write_csv(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("r,u\n"));
        assert!(!text.contains('\r'));
        let back = RadialProfile::read_csv(&path, g.clone()).unwrap();
        assert_eq!(back.values(), u.values());

        let other = build_grid(5.0, 34, 3, GridScheme::Graded).unwrap();
        assert!(RadialProfile::read_csv(&path, other).is_err());
    }

    #[test]
    fn rejects_non_finite_values() {
        let g = build_grid(1.0, 8, 3, GridScheme::Uniform).unwrap();
        let mut v = vec![0.0; 8];
        v[3] = f64::NAN;
        assert!(RadialProfile::new(g, v).is_err());
    }
}
