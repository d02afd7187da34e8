//! Closed-form LDP levels claimed for the two mechanisms (binary groups).

use super::Budget;
use crate::error::{domain, Result};

/// Claimed LDP level of R: `max(eps1, eps2)`.
///
/// The exact audit in [`super::audit_r_exact`] reports a larger value for
/// most budgets with both components positive; both are kept side by side.
pub fn epsilon_of_r(budget: &Budget) -> f64 {
    budget.eps1.max(budget.eps2)
}

/// Claimed LDP level of L:
/// `max{eps2, ln(2/k) + eps2/2 - eps1, ln(k/2) + eps2/k + eps1}`.
pub fn epsilon_of_l(budget: &Budget) -> Result<f64> {
    let Budget { eps1, eps2, k } = *budget;
    if !(k > 0.0) {
        return Err(domain(format!("k must be positive, got {k}")));
    }
    let flipped_in = (2.0 / k).ln() + eps2 / 2.0 - eps1;
    let flipped_out = (k / 2.0).ln() + eps2 / k + eps1;
    Ok(eps2.max(flipped_in).max(flipped_out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(eps1: f64, eps2: f64, k: f64) -> Budget {
        Budget::new(eps1, eps2, k).unwrap()
    }

    #[test]
    fn r_examples() {
        assert_eq!(epsilon_of_r(&b(1.0, 2.0, 2.0)), 2.0);
        assert_eq!(epsilon_of_r(&b(0.0, 0.0, 2.0)), 0.0);
        assert_eq!(epsilon_of_r(&b(3.0, 0.5, 2.0)), 3.0);
    }

    #[test]
    fn l_examples() {
        assert_eq!(epsilon_of_l(&b(1.0, 2.0, 2.0)).unwrap(), 2.0);
        assert_eq!(epsilon_of_l(&b(0.0, 0.0, 2.0)).unwrap(), 0.0);
        let e = epsilon_of_l(&b(0.5, 1.0, 2.0 / 3.0)).unwrap();
        assert!((e - 3f64.ln()).abs() < 1e-12);
        assert!((e - 1.0986).abs() < 1e-4);
    }

    #[test]
    fn l_rejects_bad_k() {
        let bad = Budget {
            eps1: 1.0,
            eps2: 1.0,
            k: 0.0,
        };
        assert!(epsilon_of_l(&bad).is_err());
    }

    #[test]
    fn l_with_k2_reduces_to_two_terms() {
        for i in 0..=20 {
            for j in 0..=20 {
                let (eps1, eps2) = (0.25 * f64::from(i), 0.25 * f64::from(j));
                let e = epsilon_of_l(&b(eps1, eps2, 2.0)).unwrap();
                assert_eq!(e, eps2.max(eps2 / 2.0 + eps1));
            }
        }
    }
}
