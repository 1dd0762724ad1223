//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use choquard::cli::{sweep, RunConfig};
use choquard::functional::{energy_report, weak_residual, NonlinearitySpec, ProblemParams};
use choquard::grid::{build_grid, GridScheme, RadialGrid, RadialProfile};
use choquard::identities::{
    decay_fit, degiorgi_sequence, dgms_check, hls_scaling_check, lebesgue_norm, moser_ladder, nehari_report,
    parse_exact, pohozaev_report, CutoffField, HlsGrid,
};
use choquard::riesz::{build_kernel, RieszOperator};
use choquard::solver::{solve_ground_state, Solution, SolveConfig};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn ball_error(m: usize) -> f64 {
    let grid = build_grid(8.0, m, 3, GridScheme::Uniform).unwrap();
    let op = build_kernel(&grid, 2.0).unwrap();
    let indicator = grid.sample(|r| if r < 1.0 { 1.0 } else { 0.0 });
    let potential = op.apply(&indicator).unwrap();
    grid.nodes()
        .iter()
        .zip(potential.values())
        .map(|(&r, &w)| {
            let exact = if r < 1.0 { (3.0 - r * r) / 6.0 } else { 1.0 / (3.0 * r) };
            ((w - exact) / exact).abs()
        })
        .fold(0.0, f64::max)
}

fn riesz_oracle() -> Outcome {
    let start = Instant::now();
    let fine = ball_error(512);
    let elapsed = start.elapsed().as_secs_f64();
    let coarse = ball_error(256);
    let slope = (coarse / fine).log2();
    outcome(
        fine < 1e-3 && slope >= 1.5 && elapsed < 30.0,
        format!("max rel err {fine:.3e} at M=512 ({elapsed:.1}s), {coarse:.3e} at M=256, slope {slope:.2}"),
    )
}

fn random_profile(grid: &Arc<RadialGrid>, rng: &mut ChaCha8Rng, signed: bool) -> RadialProfile {
    let terms: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let a: f64 = rng.gen_range(0.2..1.5);
            let sign = if signed && rng.gen_bool(0.5) { -1.0 } else { 1.0 };
            (sign * a, rng.gen_range(0.5..3.0), rng.gen_range(0.0..2.0))
        })
        .collect();
    grid.sample(|r| terms.iter().map(|(a, w, k)| a * (-(r / w).powi(2)).exp() * (1.0 + 0.3 * (k * r).cos())).sum())
}

fn energy_along(u: &RadialProfile, phi: &RadialProfile, s: f64, params: &ProblemParams, op: &RieszOperator) -> f64 {
    let shifted = RadialProfile::new(
        u.grid().clone(),
        u.values().iter().zip(phi.values()).map(|(a, b)| a + s * b).collect(),
    )
    .unwrap();
    energy_report(&shifted, params, op).unwrap().energy
}

fn gradient_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut worst: f64 = 0.0;
    let mut slopes = Vec::new();
    for (dim, p, q) in [(3, 2.0, 2.0), (4, 3.0, 3.0)] {
        let params = ProblemParams::power(dim, p, 2.0, q).unwrap();
        let grid = build_grid(10.0, 64, dim, GridScheme::Uniform).unwrap();
        let op = build_kernel(&grid, 2.0).unwrap();
        for _ in 0..20 {
            let u = random_profile(&grid, &mut rng, false);
            let phi = random_profile(&grid, &mut rng, true);
            let value = weak_residual(&u, &params, &op, &phi).unwrap();
            let fd = |eps: f64| {
                (energy_along(&u, &phi, eps, &params, &op) - energy_along(&u, &phi, -eps, &params, &op)) / (2.0 * eps)
            };
            worst = worst.max((value - fd(1e-5)).abs() / (1.0 + value.abs()));
            let e1 = (value - fd(2e-2)).abs();
            let e2 = (value - fd(1e-2)).abs();
            slopes.push((e1 / e2).log2());
        }
    }
    let (lo, hi) = slopes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    outcome(
        worst < 1e-6 && lo > 1.8 && hi < 2.2,
        format!("worst normalized gap {worst:.2e} at eps=1e-5 over 40 profiles; eps-slopes in [{lo:.3}, {hi:.3}]"),
    )
}

struct GroundState {
    params: ProblemParams,
    op: RieszOperator,
    solution: Solution,
    seconds: f64,
}

fn ground_state(p: f64, q: f64, m: usize, op: Option<&RieszOperator>) -> GroundState {
    let params = ProblemParams::power(3, p, 2.0, q).unwrap();
    let start = Instant::now();
    let op = match op {
        Some(op) => op.clone(),
        None => {
            let grid = build_grid(20.0, m, 3, GridScheme::Uniform).unwrap();
            build_kernel(&grid, 2.0).unwrap()
        }
    };
    let solution = solve_ground_state(&params, op.grid(), &op, &SolveConfig::default()).unwrap();
    GroundState { params, op, solution, seconds: start.elapsed().as_secs_f64() }
}

fn identity_suite(coarse: &GroundState, fine: &GroundState) -> Outcome {
    let u = &coarse.solution.profile;
    let rel = pohozaev_report(u, &coarse.params, &coarse.op).unwrap().rel_residual;
    let rel_fine = pohozaev_report(&fine.solution.profile, &fine.params, &fine.op).unwrap().rel_residual;
    let t = energy_report(u, &coarse.params, &coarse.op).unwrap().kinetic_plus_mass();
    let nehari = nehari_report(u, &coarse.params, &coarse.op).unwrap().abs() / t;
    let k_max = u.grid().max_radius() / 2.0;
    let dgms = dgms_check(u, &coarse.params, &coarse.op, &CutoffField::default(), &[2.0, 4.0, 8.0, k_max]).unwrap();
    let last = dgms.last().unwrap();
    let distances: Vec<f64> = dgms.iter().map(|r| r.grad_limit_distance).collect();
    let monotone = distances.windows(2).skip(1).all(|w| w[1] < w[0]);
    let converged = coarse.solution.converged && fine.solution.converged;
    outcome(
        converged
            && coarse.seconds < 300.0
            && rel < 1e-2
            && rel_fine < rel
            && nehari < 1e-6
            && last.rel_limit_residual < 1e-2
            && monotone,
        format!(
            "converged in {} its ({:.1}s); pohozaev {rel:.2e} -> {rel_fine:.2e} (M=1024); nehari/T {nehari:.1e}; \
             dgms residual {:.2e} at k={k_max}, limit distances {:?}",
            coarse.solution.iterations,
            coarse.seconds,
            last.rel_limit_residual,
            distances.iter().map(|d| format!("{d:.1e}")).collect::<Vec<_>>()
        ),
    )
}

fn quasilinear(gs: &GroundState) -> Outcome {
    let rel = pohozaev_report(&gs.solution.profile, &gs.params, &gs.op).unwrap().rel_residual;
    outcome(
        gs.solution.converged && rel < 3e-2,
        format!("p=2.5 q=3: converged {} in {} its; pohozaev {rel:.2e}", gs.solution.converged, gs.solution.iterations),
    )
}

fn existence_window_sweep(dir: &Path) -> Outcome {
    let config_path = dir.join("window.toml");
    std::fs::write(&config_path, "[problem]\nN = 3\np = 2\nalpha = 2\nq = 2\n\n[grid]\nR = 20\nM = 128\n").unwrap();
    let config = RunConfig::load(&config_path).unwrap();
    let labels = ["1", "5/3", "2", "3", "5", "6"];
    let qs: Vec<_> = labels.iter().map(|s| parse_exact(s).unwrap()).collect();
    let rows = sweep(&config, &qs, |_| {}).unwrap();
    let admissible: Vec<&str> = labels.iter().zip(&rows).filter(|(_, r)| r.admissible).map(|(l, _)| *l).collect();
    let solved = rows.iter().filter(|r| r.admissible).all(|r| r.converged);
    let untouched = rows.iter().filter(|r| !r.admissible).all(|r| !r.converged && r.energy.is_none());
    outcome(
        admissible == ["2", "3"] && solved && untouched,
        format!("admissible q: {admissible:?}; admissible points solved {solved}; rejected points skipped {untouched}"),
    )
}

fn moser(gs: &GroundState) -> Outcome {
    let u = &gs.solution.profile;
    let ladder = moser_ladder(u, u.grid(), &gs.params, 8).unwrap();
    let high: Vec<_> = ladder.iter().filter(|r| r.exponent > 1e3).collect();
    let worst = high.iter().map(|r| r.rel_gap_to_max).fold(0.0, f64::max);
    let flat = ProblemParams { dim: 5, p: 2.0, alpha: 1.0, nonlinearity: NonlinearitySpec::power(2.0).unwrap() };
    let grid5 = build_grid(5.0, 16, 5, GridScheme::Uniform).unwrap();
    let rejected = moser_ladder(&grid5.sample(|r| (-r).exp()), &grid5, &flat, 3).is_err();
    outcome(
        !high.is_empty() && worst < 2e-2 && rejected,
        format!(
            "gap to max {worst:.2e} over exponents {:?}; alpha = N-2p rejected {rejected}",
            high.iter().map(|r| r.exponent).collect::<Vec<_>>()
        ),
    )
}

fn degiorgi(gs: &GroundState) -> Outcome {
    let u = &gs.solution.profile;
    let rho = (u.max_abs() / lebesgue_norm(u, 4.0)).max(1.0);
    let seq = degiorgi_sequence(u, u.grid(), 4.0, rho, 50).unwrap();
    let monotone = seq.windows(2).all(|w| w[1] <= w[0]);
    outcome(monotone && seq[50] < 1e-12, format!("rho {rho:.3}; U_0 {:.3e}, U_50 {:.3e}; nonincreasing {monotone}", seq[0], seq[50]))
}

fn decay(gs: &GroundState) -> Outcome {
    let u = &gs.solution.profile;
    let fit = decay_fit(u, u.grid(), (8.0, 14.0)).unwrap();
    outcome(fit.r_squared > 0.99 && fit.rate > 0.5, format!("rate {:.4}, r^2 {:.6}", fit.rate, fit.r_squared))
}

fn hls() -> Outcome {
    let base = HlsGrid { dim: 3, max_radius: 8.0, nodes: 256, scheme: GridScheme::Uniform };
    let gauss = |r: f64| (-r * r).exp();
    let records = hls_scaling_check(&gauss, &gauss, base, 1.0, 1.2, 1.2, &[1.0, 0.5, 2.0, 4.0]).unwrap();
    let spread = records.iter().map(|r| (r.ratio.unwrap() - 1.0).abs()).fold(0.0, f64::max);
    outcome(
        spread < 1e-6,
        format!("Q(1) = {:.6}; max |Q(lambda)/Q(1) - 1| = {spread:.2e}", records[0].quotient.unwrap()),
    )
}

fn round_trip(dir: &Path) -> Outcome {
    let bin = env!("CARGO_BIN_EXE_choquard");
    let config = dir.join("run.toml");
    std::fs::write(
        &config,
        "[problem]\nN = 3\np = 2\nalpha = 2\nq = 2\n\n[grid]\nR = 20\nM = 512\n\n\
         [output]\nprofile_path = \"profile.csv\"\nreport_path = \"solution.json\"\nkernel_cache = \"cache\"\n",
    )
    .unwrap();
    let solve = Command::new(bin).args(["solve", "--config"]).arg(&config).output().unwrap();
    let verify = Command::new(bin)
        .args(["verify", "--profile"])
        .arg(dir.join("profile.csv"))
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(dir.join("verify.json"))
        .output()
        .unwrap();
    if !solve.status.success() || !verify.status.success() {
        return outcome(false, format!("solve {:?}, verify {:?}", solve.status.code(), verify.status.code()));
    }
    let read = |name: &str| -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap()
    };
    let solution = read("solution.json");
    let report = read("verify.json");
    let keys = ["t_grad", "t_mass", "d_nonlocal", "energy"];
    let identical = keys.iter().all(|k| {
        let a = solution[k].as_f64().unwrap();
        let b = report["energy"][k].as_f64().unwrap();
        a.to_bits() == b.to_bits()
    });
    outcome(identical, format!("energy report fields bit-identical across solve -> verify: {identical}"))
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    results.push((1, "Riesz kernel vs unit-ball Newtonian potential", riesz_oracle()));
    results.push((2, "weak residual vs central differences of the energy", gradient_consistency()));

    let coarse = ground_state(2.0, 2.0, 512, None);
    let fine = ground_state(2.0, 2.0, 1024, None);
    results.push((3, "ground-state identity suite", identity_suite(&coarse, &fine)));
    drop(fine);
    let quasi = ground_state(2.5, 3.0, 512, Some(&coarse.op));
    results.push((4, "quasilinear ground state", quasilinear(&quasi)));
    results.push((5, "existence window sweep", existence_window_sweep(dir.path())));
    results.push((6, "Moser ladder", moser(&coarse)));
    results.push((7, "De Giorgi level sets", degiorgi(&coarse)));
    results.push((8, "exponential tail", decay(&coarse)));
    results.push((9, "HLS dilation invariance", hls()));
    results.push((10, "solve -> verify round trip", round_trip(dir.path())));

    let mut failed = 0;
    for (n, name, o) in &results {
        println!("criterion {n:>2} {} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.passed);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
