use nalgebra::DMatrix;
use sgdlab::decomposition::{decompose_linear, ou_stationary_covariance};
use sgdlab::doublewell::double_well_operator;
use sgdlab::fokker_planck::*;
use sgdlab::model_zoo::DoubleWellField;
use sgdlab::sde::{sde_integrate, NoiseMode, SdeConfig};
use sgdlab::IDENTITY2;

fn solve(op: &FpOperator, grid: GridSpec) -> DensityGrid {
    let ss = steady_state(op, DensityGrid::uniform(grid).unwrap(), &SteadyStateOptions::default()).unwrap();
    assert!(ss.converged, "rate {}", ss.rate);
    ss.density
}

/// Tracks `F(ρ_t)` against the computed steady state and returns the
/// largest single-step increase and the final KL.
fn free_energy_descent(op: &FpOperator, rho_ss: &DensityGrid, init: DensityGrid, steps: u64) -> (f64, f64) {
    let beta_inv = op.beta_inv;
    let phi = potential_from_density(rho_ss, beta_inv).unwrap();
    let dt = op.default_dt();
    let mut rho = init;
    let mut last = free_energy(&rho, &phi, beta_inv, rho_ss).unwrap();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..steps {
        op.step(&mut rho, dt).unwrap();
        let now = free_energy(&rho, &phi, beta_inv, rho_ss).unwrap();
        worst = worst.max(now.free_energy - last.free_energy);
        last = now;
    }
    (worst, last.kl_to_ss)
}

#[test]
fn free_energy_never_increases() {
    let grid = GridSpec::square(64, 2.5);
    let mut ops = vec![FpOperator::isotropic(grid, |p| [p[0], 2.0 * p[1]], 1.0).unwrap()];
    for lambda in [0.0, 0.5, 1.5] {
        ops.push(double_well_operator(lambda, grid, 1.0).unwrap());
    }
    for op in &ops {
        let rho_ss = solve(op, grid);
        for seed in 0..5 {
            let (worst, kl) = free_energy_descent(op, &rho_ss, DensityGrid::random(grid, seed).unwrap(), 4000);
            assert!(worst <= 1e-8, "free energy rose by {worst}");
            assert!(kl < 1e-3, "KL {kl}");
        }
    }
}

#[test]
fn mass_is_conserved_over_long_runs() {
    let grid = GridSpec::default();
    let op = double_well_operator(1.5, grid, 1.0).unwrap();
    let mut rho = DensityGrid::random(grid, 11).unwrap();
    op.evolve(&mut rho, op.default_dt(), 10_000).unwrap();
    assert!((rho.mass() - 1.0).abs() <= 1e-9, "mass {}", rho.mass());
}

#[test]
fn isotropic_steady_state_is_gibbs() {
    let grid = GridSpec::default();
    let field = DoubleWellField::new(0.0);
    let rho = solve(&double_well_operator(0.0, grid, 1.0).unwrap(), grid);
    let gibbs = DensityGrid::gibbs(grid, |p| field.potential(p), 1.0).unwrap();
    let l1 = rho.l1_distance(&gibbs).unwrap();
    assert!(l1 <= 0.02, "L1 {l1}");

    let f = |p: [f64; 2]| 0.5 * (p[0] * p[0] + 0.5 * p[0] * p[1] + 2.0 * p[1] * p[1]);
    let op = FpOperator::isotropic(grid, |p| [p[0] + 0.25 * p[1], 0.25 * p[0] + 2.0 * p[1]], 0.5).unwrap();
    let l1 = solve(&op, grid).l1_distance(&DensityGrid::gibbs(grid, f, 0.5).unwrap()).unwrap();
    assert!(l1 <= 0.02, "L1 {l1}");
}

#[test]
fn anisotropic_noise_breaks_gibbs() {
    // f = ½ xᵀFx with symmetric F; the noise alone makes Q non-zero.
    let f = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
    let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.2]);
    let dec = decompose_linear(&f, &d).unwrap();
    assert!(dec.q.amax() > 0.1, "Q = {}", dec.q);
    let beta_inv = 0.5;
    let grid = GridSpec::default();
    let op = FpOperator::new(
        grid,
        |p| [p[0] + 0.5 * p[1], 0.5 * p[0] + p[1]],
        |_| [[1.0, 0.0], [0.0, 0.2]],
        beta_inv,
    )
    .unwrap();
    let rho = solve(&op, grid);
    let gibbs = DensityGrid::gibbs(grid, |p| 0.5 * (p[0] * p[0] + p[0] * p[1] + p[1] * p[1]), beta_inv).unwrap();
    let l1 = rho.l1_distance(&gibbs).unwrap();
    assert!(l1 >= 0.05, "L1 {l1}");

    // The grid steady state has the Lyapunov covariance instead.
    let sigma = ou_stationary_covariance(&f, &d, beta_inv).unwrap();
    let c = rho.covariance();
    for (a, b) in [(0, 0), (0, 1), (1, 1)] {
        assert!((c[a][b] - sigma[(a, b)]).abs() < 0.01, "cov[{a}][{b}] {} vs {}", c[a][b], sigma[(a, b)]);
    }
}

#[test]
fn rotation_is_orthogonal_to_the_density_gradient() {
    // Radial Φ = ½|x|² with a rigid rotation j = ωJx: ∇·j = 0 and j·∇Φ = 0.
    // β⁻¹ keeps the density negligible at the walls, which block the current.
    let (omega, beta_inv) = (1.0, 0.25);
    let grid = GridSpec::default();
    let op = FpOperator::isotropic(grid, |p| [p[0] + omega * p[1], p[1] - omega * p[0]], beta_inv).unwrap();
    let rho = solve(&op, grid);
    let max = rho.values().iter().cloned().fold(0.0, f64::max);
    let (dx, dy) = (grid.dx(), grid.dy());
    let (mut total, mut count) = (0.0, 0usize);
    for j in 1..grid.ny - 1 {
        for i in 1..grid.nx - 1 {
            if rho.at(i, j) < 1e-3 * max {
                continue;
            }
            let p = grid.center(i, j);
            // ∇ ln ρ has the direction of ∇ρ and is exact for a quadratic Φ.
            let ln = |i: usize, j: usize| rho.at(i, j).ln();
            let g = [(ln(i + 1, j) - ln(i - 1, j)) / (2.0 * dx), (ln(i, j + 1) - ln(i, j - 1)) / (2.0 * dy)];
            let jv = [-omega * p[1], omega * p[0]];
            let norm = g[0].hypot(g[1]) * jv[0].hypot(jv[1]);
            if norm > 0.0 {
                total += (jv[0] * g[0] + jv[1] * g[1]).abs() / norm;
                count += 1;
            }
        }
    }
    let mean = total / count as f64;
    assert!(mean <= 1e-3, "mean |cos| {mean}");
}

#[test]
fn sde_occupancy_matches_the_grid() {
    let grid = GridSpec::default();
    let lambda = 0.5;
    let rho = solve(&double_well_operator(lambda, grid, 1.0).unwrap(), grid);
    let coarse = 16;
    let block = grid.nx / coarse;
    let mut expected = vec![0.0; coarse * coarse];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            expected[(j / block) * coarse + i / block] += rho.at(i, j) * grid.cell_area();
        }
    }

    let cfg = SdeConfig { beta_inv: 1.0, dt: 0.01, steps: 10_000_000, record_every: 1, seed: 5, burnin: 0 };
    let mut counts = vec![0u64; coarse * coarse];
    let field = DoubleWellField::new(lambda);
    sde_integrate(&field, &NoiseMode::Isotropic(1.0), &cfg, &[1.0, 0.0], 0, &mut |step, _, x| {
        if step > 0 {
            if let Some((i, j)) = grid.locate([x[0], x[1]]) {
                counts[(j / block) * coarse + i / block] += 1;
            }
        }
    })
    .unwrap();
    let inside: u64 = counts.iter().sum();
    let l1: f64 = counts.iter().zip(&expected).map(|(&c, e)| (c as f64 / inside as f64 - e).abs()).sum();
    assert!(l1 <= 0.1, "occupancy L1 {l1}");
}

#[test]
fn isotropic_operator_matches_identity_diffusion() {
    let grid = GridSpec::square(32, 2.0);
    let a = FpOperator::isotropic(grid, |p| [p[0], p[1]], 0.3).unwrap();
    let b = FpOperator::new(grid, |p| [p[0], p[1]], |_| IDENTITY2, 0.3).unwrap();
    let rho = DensityGrid::random(grid, 2).unwrap();
    assert_eq!(a.fluxes(rho.values()), b.fluxes(rho.values()));
}

