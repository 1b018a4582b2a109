mod support;

use moctsvm::lp::{add_rows_and_resolve, solve_lp, KktResiduals, LpStatus, Row, Sense, DEFAULT_TOLERANCE};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::vertex::{random_feasible_lp, vertex_minimum};

#[test]
fn random_lps_match_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..300 {
        let p = random_feasible_lp(&mut rng);
        let sol = solve_lp(&p, DEFAULT_TOLERANCE);
        assert_eq!(sol.status, LpStatus::Optimal, "trial {trial}");
        let best = vertex_minimum(&p, 1e-9).expect("feasible by construction");
        assert!((sol.objective - best).abs() <= 1e-8 * (1.0 + best.abs()), "trial {trial}: {} vs {best}", sol.objective);
        let k = KktResiduals::compute(&p, &sol);
        assert!(k.primal <= 1e-7 && k.dual <= 1e-7 && k.complementarity <= 1e-7, "trial {trial}: {k:?}");
        assert!(k.duality_gap <= 1e-7 * (1.0 + sol.objective.abs()), "trial {trial}: {k:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn appended_rows_never_improve_and_match_cold(seed in any::<u64>(), shift in -1.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_feasible_lp(&mut rng);
        let first = solve_lp(&p, DEFAULT_TOLERANCE);
        prop_assert_eq!(first.status, LpStatus::Optimal);
        // A cut through the current optimum, shifted.
        let coeffs: Vec<(usize, f64)> = (0..p.num_vars()).map(|j| (j, 1.0)).collect();
        let act: f64 = first.x.iter().sum();
        let cut = Row::new(coeffs, Sense::Le, act + shift);
        let warm = add_rows_and_resolve(&p, &first, &[cut.clone()], DEFAULT_TOLERANCE);
        let mut full = p.clone();
        full.rows.push(cut);
        let cold = solve_lp(&full, DEFAULT_TOLERANCE);
        prop_assert_eq!(warm.status, cold.status);
        if warm.status == LpStatus::Optimal {
            prop_assert!(warm.objective >= first.objective - 1e-9);
            prop_assert!((warm.objective - cold.objective).abs() <= 1e-8 * (1.0 + cold.objective.abs()));
        }
    }
}
