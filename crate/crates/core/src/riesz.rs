//! The Riesz potential `I_α * g` restricted to radial `g`.
//!
//! For radial data the convolution collapses to a one-dimensional integral
//! against the sphere-averaged kernel
//!
//! ```text
//! K(r, s) = A_{N,α} (ω_{N-2}/ω_{N-1}) ∫_0^π sin^{N-2}θ (r² + s² - 2rs cosθ)^{-(N-α)/2} dθ
//! ```
//!
//! which is assembled once into a dense symmetric matrix. The θ-integrand is
//! nearly singular at θ = 0 when `r ≈ s`, so the rule uses panels graded
//! quadratically toward the origin, doubled per row until the row sum settles.

use std::fs;
use std::io::{Read as _, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::grid::{same_grid, sphere_area, GridScheme, RadialGrid, RadialProfile};
use crate::quad::gauss_legendre;

const INITIAL_PANELS: usize = 256;
const MAX_PANELS: usize = 16384;
const ROW_SUM_TOL: f64 = 1e-8;
const GAUSS_POINTS: usize = 3;

/// Normalisation `A_{N,α} = Γ((N-α)/2) / (Γ(α/2) π^{N/2} 2^α)` of the Riesz
/// kernel `I_α(x) = A_{N,α} |x|^{-(N-α)}`.
pub fn riesz_constant(dim: u32, alpha: f64) -> Result<f64> {
    check_alpha(dim, alpha)?;
    let n = f64::from(dim);
    Ok(gamma((n - alpha) / 2.0) / (gamma(alpha / 2.0) * std::f64::consts::PI.powf(n / 2.0) * 2f64.powf(alpha)))
}

fn check_alpha(dim: u32, alpha: f64) -> Result<()> {
    if dim < 2 {
        return invalid(format!("dimension must be at least 2, got {dim}"));
    }
    if !(alpha > 0.0 && alpha < f64::from(dim)) {
        return invalid(format!("alpha must lie in (0, {dim}), got {alpha}"));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RieszOperator {
    grid: Arc<RadialGrid>,
    alpha: f64,
    normalization: f64,
    kernel: Vec<f64>,
}

/// Assemble the dense radial Riesz kernel on `grid`.
pub fn build_kernel(grid: &Arc<RadialGrid>, alpha: f64) -> Result<RieszOperator> {
    let dim = grid.dim();
    let normalization = riesz_constant(dim, alpha)?;
    let angular = AngularKernel::new(dim, alpha, normalization);
    let nodes = grid.nodes();
    let weights = grid.weights();
    let m = nodes.len();

    // upper triangle, row by row
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| angular.upper_row(grid, i, nodes, weights))
        .collect();

    let mut kernel = vec![0.0; m * m];
    for (i, row) in rows.into_iter().enumerate() {
        for (offset, value) in row.into_iter().enumerate() {
            let j = i + offset;
            kernel[i * m + j] = value;
            kernel[j * m + i] = value;
        }
    }
    Ok(RieszOperator { grid: grid.clone(), alpha, normalization, kernel })
}

impl RieszOperator {
    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> u32 {
        self.grid.dim()
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.kernel[i * self.grid.len() + j]
    }

    /// `W_i = Σ_j w_j K_ij g_j`.
    pub fn apply(&self, g: &RadialProfile) -> Result<RadialProfile> {
        if !same_grid(g.grid(), &self.grid) {
            return invalid("profile and Riesz operator live on different grids");
        }
        let values = self.apply_values(g.values());
        Ok(RadialProfile::new(self.grid.clone(), values).expect("finite kernel maps finite data to finite data"))
    }

    pub(crate) fn apply_values(&self, g: &[f64]) -> Vec<f64> {
        let m = self.grid.len();
        debug_assert_eq!(g.len(), m);
        let wg: Vec<f64> = self.grid.weights().iter().zip(g).map(|(w, g)| w * g).collect();
        self.kernel
            .par_chunks(m)
            .map(|row| row.iter().zip(&wg).map(|(k, x)| k * x).sum())
            .collect()
    }

    /// `⟨I_α * g, h⟩ = ∫ (I_α * g) h`.
    pub fn bilinear(&self, g: &RadialProfile, h: &RadialProfile) -> Result<f64> {
        let w = self.apply(g)?;
        if !same_grid(h.grid(), &self.grid) {
            return invalid("profile and Riesz operator live on different grids");
        }
        let prod: Vec<f64> = w.values().iter().zip(h.values()).map(|(a, b)| a * b).collect();
        self.grid.integrate(&prod)
    }

    pub fn cache_key(&self) -> CacheKey {
        CacheKey::new(&self.grid, self.alpha)
    }

    /// Write the kernel to `dir`, under a file name derived from its key.
    pub fn save_cache(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let key = self.cache_key();
        let path = key.path_in(dir);
        let mut bytes = key.header_bytes();
        bytes.reserve(self.kernel.len() * 8 + 32);
        for v in &self.kernel {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&bytes);
        bytes.extend_from_slice(&digest);
        let tmp = path.with_extension("tmp");
        fs::File::create(&tmp)?.write_all(&bytes)?;
        fs::rename(&tmp, &path)?;
        Ok(path)
    }

    /// Load a cached kernel for `grid` and `alpha` from `dir`. Returns
    /// `Ok(None)` when no cache file exists and [`Error::CacheCorrupt`] when
    /// one exists but fails its checksum or does not match the key.
    pub fn load_cache(dir: &Path, grid: &Arc<RadialGrid>, alpha: f64) -> Result<Option<Self>> {
        let normalization = riesz_constant(grid.dim(), alpha)?;
        let key = CacheKey::new(grid, alpha);
        let path = key.path_in(dir);
        if !path.exists() {
            return Ok(None);
        }
        let mut bytes = Vec::new();
        fs::File::open(&path)?.read_to_end(&mut bytes)?;
        let corrupt = |reason: &str| Error::CacheCorrupt { path: path.clone(), reason: reason.to_owned() };

        let header = key.header_bytes();
        let m = grid.len();
        let expected = header.len() + m * m * 8 + 32;
        if bytes.len() != expected {
            return Err(corrupt("unexpected file length"));
        }
        let (body, digest) = bytes.split_at(expected - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        if body[..header.len()] != header[..] {
            return Err(corrupt("header does not match grid and alpha"));
        }
        let kernel = body[header.len()..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Some(RieszOperator { grid: grid.clone(), alpha, normalization, kernel }))
    }

    /// Load from `dir` if cached, otherwise assemble and store.
    pub fn cached(dir: &Path, grid: &Arc<RadialGrid>, alpha: f64) -> Result<Self> {
        if let Some(op) = Self::load_cache(dir, grid, alpha)? {
            return Ok(op);
        }
        let op = build_kernel(grid, alpha)?;
        op.save_cache(dir)?;
        Ok(op)
    }
}

/// Identity of a kernel: `(N, α, R, M, scheme)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheKey {
    pub dim: u32,
    pub alpha: f64,
    pub max_radius: f64,
    pub nodes: usize,
    pub scheme: GridScheme,
}

impl CacheKey {
    pub fn new(grid: &RadialGrid, alpha: f64) -> Self {
        CacheKey {
            dim: grid.dim(),
            alpha,
            max_radius: grid.max_radius(),
            nodes: grid.len(),
            scheme: grid.scheme(),
        }
    }

    fn header_bytes(&self) -> Vec<u8> {
        let mut h = Vec::with_capacity(40);
        h.extend_from_slice(b"RZK1");
        h.extend_from_slice(&self.dim.to_le_bytes());
        h.extend_from_slice(&self.alpha.to_bits().to_le_bytes());
        h.extend_from_slice(&self.max_radius.to_bits().to_le_bytes());
        h.extend_from_slice(&(self.nodes as u64).to_le_bytes());
        h.push(match self.scheme {
            GridScheme::Uniform => 0,
            GridScheme::Graded => 1,
        });
        h
    }

    pub fn path_in(&self, dir: &Path) -> PathBuf {
        let digest = Sha256::digest(self.header_bytes());
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        dir.join(format!("riesz-{hex}.bin"))
    }
}

/// Graded θ-rule for the sphere-averaged kernel.
struct AngularKernel {
    dim: u32,
    alpha: f64,
    exponent: f64,
    prefactor: f64,
    gauss: (Vec<f64>, Vec<f64>),
}

/// θ-quadrature nodes as `(1 − cos θ, weight · sin^{N-2} θ)`.
struct AngularRule {
    one_minus_cos: Vec<f64>,
    weight: Vec<f64>,
}

impl AngularKernel {
    fn new(dim: u32, alpha: f64, normalization: f64) -> Self {
        let ratio = sphere_area(dim - 1) / sphere_area(dim);
        AngularKernel {
            dim,
            alpha,
            exponent: (f64::from(dim) - alpha) / 2.0,
            prefactor: normalization * ratio,
            gauss: gauss_legendre(GAUSS_POINTS),
        }
    }

    fn rule(&self, panels: usize) -> AngularRule {
        let (x, w) = &self.gauss;
        let n = panels as f64;
        let mut one_minus_cos = Vec::with_capacity(panels * x.len());
        let mut weight = Vec::with_capacity(panels * x.len());
        for k in 0..panels {
            let a = std::f64::consts::PI * (k as f64 / n).powi(2);
            let b = std::f64::consts::PI * ((k + 1) as f64 / n).powi(2);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (xg, wg) in x.iter().zip(w) {
                let theta = mid + half * xg;
                let s = theta.sin();
                let half_sin = (0.5 * theta).sin();
                one_minus_cos.push(2.0 * half_sin * half_sin);
                weight.push(half * wg * s.powi(self.dim as i32 - 2));
            }
        }
        AngularRule { one_minus_cos, weight }
    }

    #[inline]
    fn inv_pow(&self, x: f64) -> f64 {
        let e = self.exponent;
        if e == 0.5 {
            1.0 / x.sqrt()
        } else if e == 1.0 {
            1.0 / x
        } else if e == 1.5 {
            1.0 / (x * x.sqrt())
        } else {
            x.powf(-e)
        }
    }

    /// Point value `K(r, s)` under `rule`.
    fn eval(&self, rule: &AngularRule, r: f64, s: f64) -> f64 {
        // |x-y|² = (r-s)² + 2rs(1 - cos θ), free of cancellation near r = s
        let gap = (r - s) * (r - s);
        let cross = 2.0 * r * s;
        let mut acc = 0.0;
        for (c, w) in rule.one_minus_cos.iter().zip(&rule.weight) {
            acc += w * self.inv_pow(gap + cross * c);
        }
        self.prefactor * acc
    }

    /// Diagonal entry. For α ≥ 2 the angular integrand stays bounded at
    /// `r = s` and the point rule is used; below that the point value is
    /// weakly singular (infinite for α ≤ 1), so the entry is replaced by the
    /// kernel averaged over the node's cell against the volume measure.
    fn diagonal(&self, rule: &AngularRule, grid: &RadialGrid, i: usize) -> f64 {
        let r = grid.nodes()[i];
        if self.alpha >= 2.0 {
            return self.eval(rule, r, r);
        }
        let faces = grid.face_radii();
        let lo = if i == 0 { 0.0 } else { faces[i - 1] };
        let hi = faces[i].min(grid.max_radius());
        // graded substitution s = r ± L t^g removes the |r-s|^{α-1} singularity
        let grade = (2.0 / self.alpha).ceil().max(2.0) as i32;
        let (x, w) = gauss_legendre(16);
        let dim = self.dim as i32;
        let mut acc = 0.0;
        let mut vol = 0.0;
        for (len, sign) in [(r - lo, -1.0), (hi - r, 1.0)] {
            for (xg, wg) in x.iter().zip(&w) {
                let t = 0.5 * (xg + 1.0);
                let s = r + sign * len * t.powi(grade);
                let jac = 0.5 * wg * len * f64::from(grade) * t.powi(grade - 1);
                let measure = jac * s.powi(dim - 1);
                acc += measure * self.eval(rule, r, s);
                vol += measure;
            }
        }
        acc / vol
    }

    /// Entries `K[i][j]` for `j ≥ i`, doubling the panel count until the
    /// weighted row sum changes by less than `ROW_SUM_TOL` (relative).
    fn upper_row(&self, grid: &RadialGrid, i: usize, nodes: &[f64], weights: &[f64]) -> Vec<f64> {
        let compute = |panels: usize| -> (Vec<f64>, f64) {
            let rule = self.rule(panels);
            let r = nodes[i];
            let mut row = Vec::with_capacity(nodes.len() - i);
            row.push(self.diagonal(&rule, grid, i));
            for &s in &nodes[i + 1..] {
                row.push(self.eval(&rule, r, s));
            }
            let sum = row.iter().zip(&weights[i..]).map(|(k, w)| k * w).sum();
            (row, sum)
        };
        let mut panels = INITIAL_PANELS;
        let (mut row, mut sum) = compute(panels);
        while panels < MAX_PANELS {
            panels *= 2;
            let (next, next_sum) = compute(panels);
            let settled = (next_sum - sum).abs() <= ROW_SUM_TOL * next_sum.abs();
            row = next;
            sum = next_sum;
            if settled {
                break;
            }
        }
        row
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use proptest::prelude::*;

    use super::*;
    use crate::grid::build_grid;

    /// Closed-form sphere average in N = 3 (α ≠ 1):
    /// `A/2 · ((r+s)^{α-1} - |r-s|^{α-1}) / ((α-1) r s)`.
    fn closed_form_n3(alpha: f64, r: f64, s: f64) -> f64 {
        let a = riesz_constant(3, alpha).unwrap();
        0.5 * a * ((r + s).powf(alpha - 1.0) - (r - s).abs().powf(alpha - 1.0)) / ((alpha - 1.0) * r * s)
    }

    #[test]
    fn constants() {
        assert!((riesz_constant(3, 2.0).unwrap() - 1.0 / (4.0 * PI)).abs() < 1e-15);
        assert!((riesz_constant(4, 2.0).unwrap() - 1.0 / (4.0 * PI * PI)).abs() < 1e-15);
        assert!(riesz_constant(3, 3.0).is_err());
        assert!(riesz_constant(3, 0.0).is_err());
        assert!(riesz_constant(3, -1.0).is_err());
        assert!(build_kernel(&build_grid(1.0, 8, 3, GridScheme::Uniform).unwrap(), 3.5).is_err());
    }

    #[test]
    fn angular_rule_matches_closed_form() {
        for alpha in [0.5, 1.5, 2.0, 2.5] {
            let k = AngularKernel::new(3, alpha, riesz_constant(3, alpha).unwrap());
            let rule = k.rule(1024);
            for (r, s) in [(1.0, 2.0), (0.3, 0.31), (5.0, 5.01), (2.0, 0.01)] {
                let got = k.eval(&rule, r, s);
                let want = closed_form_n3(alpha, r, s);
                assert!((got - want).abs() < 1e-6 * want, "α={alpha} r={r} s={s}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn kernel_matches_newtonian_form() {
        // α = 2, N = 3: K(r, s) = 1 / (4π max(r, s))
        let grid = build_grid(4.0, 64, 3, GridScheme::Uniform).unwrap();
        let op = build_kernel(&grid, 2.0).unwrap();
        let n = grid.nodes();
        for i in 0..64 {
            for j in 0..64 {
                let want = 1.0 / (4.0 * PI * n[i].max(n[j]));
                assert!((op.entry(i, j) - want).abs() < 1e-8 * want);
            }
        }
    }

    #[test]
    fn origin_row_limit() {
        // as r → 0 the sphere average tends to A s^{-(N-α)}
        let alpha = 1.3;
        let k = AngularKernel::new(4, alpha, riesz_constant(4, alpha).unwrap());
        let rule = k.rule(256);
        let a = riesz_constant(4, alpha).unwrap();
        for s in [0.5, 1.0, 3.0] {
            let got = k.eval(&rule, 1e-9, s);
            let want = a * s.powf(-(4.0 - alpha));
            assert!((got - want).abs() < 1e-7 * want);
        }
    }

    #[test]
    fn zero_maps_to_zero() {
        let grid = build_grid(3.0, 16, 3, GridScheme::Graded).unwrap();
        let op = build_kernel(&grid, 1.0).unwrap();
        let w = op.apply(&grid.zeros()).unwrap();
        assert!(w.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn entries_finite_symmetric_positive_for_small_alpha() {
        for (dim, alpha) in [(3, 0.5), (2, 1.0), (4, 0.8)] {
            let grid = build_grid(3.0, 24, dim, GridScheme::Uniform).unwrap();
            let op = build_kernel(&grid, alpha).unwrap();
            for i in 0..24 {
                for j in 0..24 {
                    let k = op.entry(i, j);
                    assert!(k.is_finite() && k > 0.0);
                    assert_eq!(k.to_bits(), op.entry(j, i).to_bits());
                }
            }
        }
    }

    #[test]
    fn cell_averaged_diagonal_matches_closed_form_average() {
        let alpha = 0.5;
        let grid = build_grid(2.0, 16, 3, GridScheme::Uniform).unwrap();
        let op = build_kernel(&grid, alpha).unwrap();
        let i = 7;
        let r = grid.nodes()[i];
        let h = 2.0 / 16.0;
        // fine midpoint average of the closed form over the cell, skipping s = r
        let n = 200_000;
        let (mut acc, mut vol) = (0.0, 0.0);
        for k in 0..n {
            let s = r - h / 2.0 + h * (k as f64 + 0.5) / n as f64;
            acc += closed_form_n3(alpha, r, s) * s * s;
            vol += s * s;
        }
        let want = acc / vol;
        assert!((op.entry(i, i) - want).abs() < 2e-3 * want, "{} vs {want}", op.entry(i, i));
    }

    #[test]
    fn gaussian_newtonian_potential() {
        // −ΔW = e^{-r²} in ℝ³ with W → 0: W = (√π/4) erf(r)/r
        let grid = build_grid(8.0, 512, 3, GridScheme::Uniform).unwrap();
        let op = build_kernel(&grid, 2.0).unwrap();
        let w = op.apply(&grid.sample(|r| (-r * r).exp())).unwrap();
        for (r, v) in grid.nodes().iter().zip(w.values()) {
            let want = PI.sqrt() / 4.0 * statrs::function::erf::erf(*r) / r;
            assert!((v - want).abs() < 1e-3 * want, "r={r}: {v} vs {want}");
        }
    }

    #[test]
    fn discrete_laplacian_inverts_newtonian_potential() {
        // smooth bump supported in r < 2: g = (1 - (r/2)^2)^4
        let grid = build_grid(6.0, 400, 3, GridScheme::Uniform).unwrap();
        let bump = |r: f64| if r < 2.0 { (1.0 - r * r / 4.0).powi(4) } else { 0.0 };
        let g = grid.sample(bump);
        let op = build_kernel(&grid, 2.0).unwrap();
        let w = op.apply(&g).unwrap();
        let n = grid.nodes();
        let h = n[1] - n[0];
        let wv = w.values();
        let mut worst: f64 = 0.0;
        for i in 1..300 {
            let lap = (wv[i + 1] - 2.0 * wv[i] + wv[i - 1]) / (h * h) + (wv[i + 1] - wv[i - 1]) / (h * n[i]);
            worst = worst.max((-lap - g.values()[i]).abs());
        }
        assert!(worst < 1e-2, "max residual {worst}");
    }

    #[test]
    fn graded_kernel_newtonian() {
        let grid = build_grid(8.0, 256, 3, GridScheme::Graded).unwrap();
        let op = build_kernel(&grid, 2.0).unwrap();
        let w = op.apply(&grid.sample(|r| (-r * r).exp())).unwrap();
        for (r, v) in grid.nodes().iter().zip(w.values()) {
            let want = PI.sqrt() / 4.0 * statrs::function::erf::erf(*r) / r;
            assert!((v - want).abs() < 2e-3 * want, "r={r}: {v} vs {want}");
        }
    }

    #[test]
    fn cache_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let grid = build_grid(3.0, 20, 3, GridScheme::Uniform).unwrap();
        let op = build_kernel(&grid, 1.5).unwrap();
        assert!(RieszOperator::load_cache(dir.path(), &grid, 1.5).unwrap().is_none());
        let path = op.save_cache(dir.path()).unwrap();
        let back = RieszOperator::load_cache(dir.path(), &grid, 1.5).unwrap().unwrap();
        assert!(op.kernel.iter().zip(&back.kernel).all(|(a, b)| a.to_bits() == b.to_bits()));

        let mut bytes = fs::read(&path).unwrap();
        bytes[100] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            RieszOperator::load_cache(dir.path(), &grid, 1.5),
            Err(Error::CacheCorrupt { .. })
        ));
        // a different key never collides with this file
        assert!(RieszOperator::load_cache(dir.path(), &grid, 1.25).unwrap().is_none());
    }

    fn small_op() -> &'static RieszOperator {
        use std::sync::OnceLock;
        static OP: OnceLock<RieszOperator> = OnceLock::new();
        OP.get_or_init(|| {
            let grid = build_grid(5.0, 40, 3, GridScheme::Uniform).unwrap();
            build_kernel(&grid, 1.5).unwrap()
        })
    }

    proptest! {
        #[test]
        fn bilinear_form_symmetric(g in prop::collection::vec(-2.0f64..2.0, 40),
                                   h in prop::collection::vec(-2.0f64..2.0, 40)) {
            let op = small_op();
            let g = RadialProfile::new(op.grid().clone(), g).unwrap();
            let h = RadialProfile::new(op.grid().clone(), h).unwrap();
            let a = op.bilinear(&g, &h).unwrap();
            let b = op.bilinear(&h, &g).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }

        #[test]
        fn positive_data_positive_potential(g in prop::collection::vec(0.0f64..3.0, 40)) {
            let op = small_op();
            let g = RadialProfile::new(op.grid().clone(), g).unwrap();
            prop_assert!(op.apply(&g).unwrap().values().iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn quadratic_form_nonnegative(g in prop::collection::vec(-2.0f64..2.0, 40)) {
            let op = small_op();
            let norm2: f64 = g.iter().map(|x| x * x).sum();
            let g = RadialProfile::new(op.grid().clone(), g).unwrap();
            let d = op.bilinear(&g, &g).unwrap();
            prop_assert!(d >= -1e-12 * norm2);
        }
    }
}
