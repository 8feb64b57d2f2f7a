use ramsey::experiments::{mc_cross_check, CrossCheckConfig};
use ramsey::hjb::{solve, GridSpec, SolverConfig};
use ramsey::model::{ModelParams, PowerUtility};
use ramsey::sde::SimConfig;

#[test]
fn solved_policy_matches_pde_and_beats_alternatives() {
    let p = ModelParams::from_mu(0.5, 0.1, 0.2, 0.05).unwrap();
    let u = PowerUtility::new(0.5).unwrap();
    let grid = GridSpec::new(1e-3, 1e3, 1024).unwrap();
    let vf = solve(&p, &u, f64::INFINITY, &grid, &SolverConfig::default()).unwrap();
    let cfg = CrossCheckConfig {
        sim: SimConfig::new(400.0, 1e-2, 2000, 7),
        allowance_paths: 500,
    };
    let rep = mc_cross_check(&p, &u, &vf, &[0.25, 1.0, 4.0], &cfg).unwrap();
    for row in &rep.rows {
        println!(
            "x0 {}: pde {:.4} mc {:.4} se {:.4} tol {:.4} tail {:.2e}",
            row.x0, row.pde, row.mc, row.stderr, row.tolerance, row.tail_bound
        );
        assert!(row.matches);
        assert!(row.tail_bound < 1e-3 * row.pde);
        assert!(row.suboptimal.iter().all(|s| s.below && s.mean < row.mc));
    }
    assert!(rep.passed);
}
