use sgdlab::doublewell::*;
use sgdlab::fokker_planck::GridSpec;

fn near(a: [f64; 2], b: [f64; 2], tol: f64) -> bool {
    (a[0] - b[0]).abs() <= tol && (a[1] - b[1]).abs() <= tol
}

#[test]
fn three_lambda_bundles() {
    let mut cfg = DoubleWellConfig { winding_paths: 0, ..Default::default() };
    cfg.sde.steps = 200_000;
    cfg.sde.record_every = 10;
    let bundles = run_double_well(&cfg).unwrap();
    assert_eq!(bundles.len(), 3);
    let cell = GridSpec::default().dx();

    let base = &bundles[0];
    assert_eq!(base.lambda, 0.0);
    assert!(base.steady.converged);
    assert_eq!(base.modes.modes.len(), 2);
    for (m, x) in base.modes.modes.iter().zip([-1.0, 1.0]) {
        assert!(near(*m, [x, 0.0], cell), "mode {m:?}");
    }
    // Without rotation the wells are both modes and zeros of ∇f.
    let wells: Vec<_> = base.modes.critical_points.iter().filter(|p| p[0].abs() > 0.5).collect();
    assert_eq!(wells.len(), 2);
    for (w, m) in wells.iter().zip(&base.modes.modes) {
        assert!(near(**w, *m, cell), "{w:?} vs {m:?}");
    }

    for b in &bundles[1..] {
        // Modes stay put while the zeros of ∇f move.
        assert_eq!(b.modes.modes.len(), 2);
        for (m, m0) in b.modes.modes.iter().zip(&base.modes.modes) {
            assert!(near(*m, *m0, cell), "λ {}: {m:?} vs {m0:?}", b.lambda);
        }
        assert!(b.l1_to_gibbs <= 0.02, "λ {}: {}", b.lambda, b.l1_to_gibbs);
    }
    let moved = bundles[1].modes.critical_points.iter().find(|p| p[0] > 0.5).unwrap();
    let shift = (moved[0] - 1.0).hypot(moved[1]);
    assert!(shift > cell, "shift {shift} vs cell {cell}");

    let inv = mode_invariance_check(&bundles[..2]).unwrap();
    assert!(inv.max_l1 <= 0.03, "{inv:?}");
    let inv = mode_invariance_check(&[bundles[0].clone(), bundles[2].clone()]).unwrap();
    assert!(inv.max_l1 <= 0.05, "{inv:?}");
    let same = mode_invariance_check(&[bundles[0].clone(), bundles[0].clone()]).unwrap();
    assert_eq!(same.max_l1, 0.0);

    // λ > 0 turns counterclockwise about the saddle.
    assert!(bundles[2].cycle.winding_number > 0.0, "{:?}", bundles[2].cycle);
    let summary = serde_json::to_string(&bundles[2].summary()).unwrap();
    assert!(summary.contains("\"lambda\":1.5"));
}

#[test]
fn rotation_winds_steadily() {
    let cfg = sgdlab::sde::SdeConfig { beta_inv: 1.0, dt: 1e-4, steps: 1_000_000, record_every: 1, seed: 3, burnin: 0 };
    let w = ensemble_winding(1.5, &cfg, [1.0, 0.0], 4).unwrap();
    assert!(w.turns.iter().all(|&t| t >= 5.0), "{:?}", w.turns);
}

#[test]
fn invalid_lambdas_are_rejected() {
    let cfg = DoubleWellConfig { lambdas: vec![], ..Default::default() };
    assert!(run_double_well(&cfg).is_err());
    let cfg = DoubleWellConfig { lambdas: vec![-1.0], ..Default::default() };
    assert!(run_double_well(&cfg).is_err());
}
