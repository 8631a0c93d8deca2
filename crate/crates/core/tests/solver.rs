use driftdecomp::dataset::{build_corpus, load_corpus, perturb_gaussian, save_corpus};
use driftdecomp::fokker_planck::{gaussian_density, solve_snapshots, steps_for, DriftSpec, FokkerPlanckSolver, SolverConfig};
use driftdecomp::grid::{centroid, quadrature, Grid2D};
use driftdecomp::oracle::benchmark;

fn standard_grid() -> Grid2D {
    Grid2D::square(4.0, 80).unwrap()
}

#[test]
fn gaussian_centroids() {
    let g = standard_grid();
    let f = gaussian_density(&g, (0.0, 0.0), 0.01).unwrap();
    assert!((quadrature(&f) - 1.0).abs() < 1e-14);
    let c = centroid(&f);
    assert!(c.0.abs() < 1e-12 && c.1.abs() < 1e-12);
    let c = centroid(&gaussian_density(&g, (2.0, 2.0), 0.01).unwrap());
    assert!((c.0 - 2.0).abs() < 1e-6 && (c.1 - 2.0).abs() < 1e-6, "{c:?}");
}

#[test]
fn centroid_follows_linear_moment_dynamics() {
    // d/dt mu = A mu for b = A x; checked with finite differences of snapshots
    let g = standard_grid();
    let ou = DriftSpec::linear("ou", [[-1.0, 0.0], [0.0, -1.0]]);
    let cfg = SolverConfig::new(1e-4, 2.0, 0.0);
    for mean in [(1.5, -0.5), (-1.0, 1.8), (0.3, 0.2)] {
        let f0 = gaussian_density(&g, mean, 0.01).unwrap();
        let (f1, f2) = solve_snapshots(&ou, cfg, &f0, 0.015, 0.016).unwrap();
        let (a, b) = (centroid(&f1), centroid(&f2));
        let rate = ((b.0 - a.0) / 0.001, (b.1 - a.1) / 0.001);
        let mid = ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0);
        let bound = g.dx() + cfg.dt;
        assert!((rate.0 + mid.0).abs() <= bound, "{rate:?} vs {mid:?}");
        assert!((rate.1 + mid.1).abs() <= bound, "{rate:?} vs {mid:?}");
    }
}

#[test]
fn vanishing_noise_runs_unchanged() {
    let g = standard_grid();
    let drift = benchmark("double-well").unwrap().drift_spec();
    let cfg = SolverConfig::new(1e-4, 0.0, 0.0);
    let f0 = gaussian_density(&g, (0.7, -1.2), 0.01).unwrap();
    let (f1, f2) = solve_snapshots(&drift, cfg, &f0, 0.015, 0.016).unwrap();
    for f in [&f1, &f2] {
        assert!((quadrature(f) - 1.0).abs() < 1e-12);
        assert!(f.min() >= -1e-14);
    }
    // transport without diffusion still moves the centroid along b
    let (a, b) = (centroid(&f1), centroid(&f2));
    assert!(b.0 != a.0 || b.1 != a.1);
}

#[test]
fn snapshot_step_counts() {
    assert_eq!(steps_for(0.015, 1e-4).unwrap(), 150);
    assert_eq!(steps_for(0.016, 1e-4).unwrap() - steps_for(0.015, 1e-4).unwrap(), 10);
    let g = Grid2D::square(4.0, 20).unwrap();
    let f0 = gaussian_density(&g, (0.0, 0.5), 0.3).unwrap();
    let (f1, f2) = solve_snapshots(&DriftSpec::zero(), SolverConfig::new(1e-4, 0.0, 0.0), &f0, 0.015, 0.016).unwrap();
    assert_eq!(f1, f0);
    assert_eq!(f2, f0);
    assert!(solve_snapshots(&DriftSpec::zero(), SolverConfig::new(1e-4, 0.0, 0.0), &f0, 0.016, 0.016).is_err());
}

#[test]
fn solver_advances_in_whole_steps() {
    let g = Grid2D::square(4.0, 30).unwrap();
    let drift = DriftSpec::linear("rot", [[-0.5, 1.0], [-1.0, -0.5]]);
    let solver = FokkerPlanckSolver::new(&g, &drift, SolverConfig::new(1e-3, 1.0, 0.05)).unwrap();
    let f0 = gaussian_density(&g, (1.0, 1.0), 0.1).unwrap();
    let run = solver.run(&f0).unwrap();
    let stepped = (0..50).try_fold(f0, |f, _| solver.step(&f)).unwrap();
    assert_eq!(run, stepped);
}

#[test]
fn full_size_corpus_is_normalised_and_round_trips() {
    let g = standard_grid();
    let drift = benchmark("double-well").unwrap().drift_spec();
    let corpus = build_corpus(&drift, SolverConfig::new(1e-4, 2.0, 0.0), 40, 3, &g, 0.015, 0.016).unwrap();
    assert_eq!(corpus.len(), 40);
    for p in &corpus.pairs {
        assert!((quadrature(&p.f1) - 1.0).abs() <= 1e-10);
        assert!((quadrature(&p.f2) - 1.0).abs() <= 1e-10);
    }
    let noisy = perturb_gaussian(&corpus, 0.1).unwrap();
    assert_eq!(noisy.noise_level, 0.1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    save_corpus(&noisy, &path).unwrap();
    assert_eq!(load_corpus(&path).unwrap(), noisy);
}
