//! Tangent cuts for `delta >= 1/2 |omega|^2`.

use crate::lp::{Row, Sense};

/// Tangent of `1/2 |omega|^2` at `omega_star` as a row over
/// `(delta, omega_1..omega_p)` with delta in column 0 and omega_j in column j.
/// Returned only if the point violates the epigraph by more than `tol`.
pub fn oa_separate(omega_star: &[f64], delta_star: f64, tol: f64) -> Option<Row> {
    let half_sq = 0.5 * omega_star.iter().map(|w| w * w).sum::<f64>();
    if half_sq <= delta_star + tol {
        return None;
    }
    let mut coeffs = Vec::with_capacity(omega_star.len() + 1);
    coeffs.push((0, 1.0));
    for (j, &w) in omega_star.iter().enumerate() {
        if w != 0.0 {
            coeffs.push((j + 1, -w));
        }
    }
    Some(Row::new(coeffs, Sense::Ge, -half_sq))
}

/// The same tangent with columns mapped onto a larger problem.
pub(crate) fn tangent_row(delta: usize, omega: &[usize], omega_star: &[f64]) -> Row {
    let half_sq = 0.5 * omega_star.iter().map(|w| w * w).sum::<f64>();
    let mut coeffs = Vec::with_capacity(omega.len() + 1);
    coeffs.push((delta, 1.0));
    for (&j, &w) in omega.iter().zip(omega_star) {
        if w != 0.0 {
            coeffs.push((j, -w));
        }
    }
    Row::new(coeffs, Sense::Ge, -half_sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cut_at_unit_point() {
        let row = oa_separate(&[1.0, 1.0], 0.0, 1e-9).unwrap();
        assert_eq!(row.coeffs, vec![(0, 1.0), (1, -1.0), (2, -1.0)]);
        assert_eq!(row.rhs, -1.0);
        assert_eq!(row.violation(&[0.0, 1.0, 1.0]), 1.0);
    }

    #[test]
    fn no_cut_at_origin_or_boundary() {
        assert!(oa_separate(&[0.0, 0.0], 0.0, 1e-9).is_none());
        assert!(oa_separate(&[0.0], 3.0, 1e-9).is_none());
        assert!(oa_separate(&[2.0, 0.0], 2.0, 1e-9).is_none());
    }

    proptest! {
        #[test]
        fn tangent_never_cuts_the_epigraph(
            star in proptest::collection::vec(-10.0f64..10.0, 1..5),
            point in proptest::collection::vec(-10.0f64..10.0, 5),
            slack in 0.0f64..5.0,
        ) {
            let p = star.len();
            let omega = &point[..p];
            let delta = 0.5 * omega.iter().map(|w| w * w).sum::<f64>() + slack;
            if let Some(row) = oa_separate(&star, -1.0, 0.0) {
                let mut x = vec![delta];
                x.extend_from_slice(omega);
                prop_assert!(row.violation(&x) <= 1e-9 * (1.0 + delta));
            }
        }

        #[test]
        fn returned_cut_separates_the_point(star in proptest::collection::vec(-10.0f64..10.0, 1..5), frac in 0.0f64..0.99) {
            let half = 0.5 * star.iter().map(|w| w * w).sum::<f64>();
            prop_assume!(half > 1e-3);
            let delta = frac * half;
            let row = oa_separate(&star, delta, 1e-12).unwrap();
            let mut x = vec![delta];
            x.extend_from_slice(&star);
            prop_assert!((row.violation(&x) - (half - delta)).abs() <= 1e-9 * (1.0 + half));
        }
    }
}
