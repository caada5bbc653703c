//! The radial curvature formulas against a direct complex Hessian on ℂ².

mod common;

use common::{compare_with_oracle, oracle_ricci, SoftplusSum, ORACLE_TOL};

#[test]
fn oracle_base_eigenvalue_matches_closed_form() {
    for seed in 0..5 {
        let p = SoftplusSum::random(seed);
        for rho in [-6.0, -1.5, 0.0, 2.5, 7.0] {
            let (nb, _) = oracle_ricci(&p, rho);
            let exact = -p.g_prime(rho);
            assert!((nb - exact).abs() < 1e-8 * (1.0 + exact.abs()), "seed {seed} ρ {rho}: {nb} vs {exact}");
        }
    }
}

#[test]
fn volume_form_and_ricci_match_oracle() {
    for seed in 0..10 {
        let e = compare_with_oracle(seed, 512);
        assert!(e.log_det < ORACLE_TOL, "seed {seed}: log det error {:e}", e.log_det);
        assert!(e.ricci < ORACLE_TOL, "seed {seed}: ricci relative error {:e}", e.ricci);
    }
}
