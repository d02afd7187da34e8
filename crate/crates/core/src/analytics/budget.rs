//! Smallest total budget whose worst-case gap error is below `alpha` with a
//! given probability, via Chebyshev's inequality.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sweeps::balanced_sizes;
use super::{allocated_spec, chebyshev_alpha, mse_gap_upper, AllocationKind};
use crate::error::{domain, Error, Result};

pub const EPS_SEARCH_MIN: f64 = 1e-6;
pub const EPS_SEARCH_MAX: f64 = 1e4;
const MONOTONE_GRID: usize = 200;
const BISECTION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSolution {
    pub feasible: bool,
    /// Smallest total budget meeting the target, when feasible.
    pub eps: Option<f64>,
    pub alpha: f64,
    pub prob: f64,
    pub allocation: AllocationKind,
    pub sizes: [u64; 2],
}

impl BudgetSolution {
    /// Two-decimal rendering, `-` when infeasible.
    pub fn display_eps(&self) -> String {
        match self.eps {
            Some(e) => format!("{e:.2}"),
            None => "-".to_string(),
        }
    }
}

fn alpha_at(sizes: [u64; 2], kind: AllocationKind, eps: f64, prob: f64) -> Result<f64> {
    chebyshev_alpha(mse_gap_upper(sizes, &allocated_spec(kind, eps)?)?, prob)
}

fn check_monotone(sizes: [u64; 2], kind: AllocationKind) -> Result<()> {
    let (lo, hi) = (EPS_SEARCH_MIN.ln(), EPS_SEARCH_MAX.ln());
    let mut prev: Option<f64> = None;
    for i in 0..MONOTONE_GRID {
        let eps = (lo + (hi - lo) * i as f64 / (MONOTONE_GRID - 1) as f64).exp();
        let upper = mse_gap_upper(sizes, &allocated_spec(kind, eps)?)?;
        if let Some(p) = prev {
            if upper > p * (1.0 + 1e-12) {
                return Err(Error::NonMonotonic {
                    eps,
                    prev: p,
                    next: upper,
                });
            }
        }
        prev = Some(upper);
    }
    Ok(())
}

/// Minimum budget for two balanced groups of `total` clients.
pub fn min_budget(
    total: u64,
    alpha: f64,
    prob: f64,
    kind: AllocationKind,
) -> Result<BudgetSolution> {
    min_budget_for_sizes(balanced_sizes(total)?, alpha, prob, kind)
}

/// Minimum budget for explicit group sizes, using the worst-case `nu2`.
pub fn min_budget_for_sizes(
    sizes: [u64; 2],
    alpha: f64,
    prob: f64,
    kind: AllocationKind,
) -> Result<BudgetSolution> {
    if !(alpha > 0.0) {
        return Err(domain(format!("alpha must be positive, got {alpha}")));
    }
    check_monotone(sizes, kind)?;
    let solution = |eps: Option<f64>| BudgetSolution {
        feasible: eps.is_some(),
        eps,
        alpha,
        prob,
        allocation: kind,
        sizes,
    };

    // The worst-case error only shrinks with eps, so failing at the top of
    // the search range means the variance floor already violates the target.
    if alpha_at(sizes, kind, EPS_SEARCH_MAX, prob)? > alpha {
        return Ok(solution(None));
    }
    let mut lo = EPS_SEARCH_MIN;
    let mut hi = EPS_SEARCH_MAX;
    if alpha_at(sizes, kind, lo, prob)? <= alpha {
        return Ok(solution(Some(lo)));
    }
    while hi - lo > BISECTION_TOL * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if alpha_at(sizes, kind, mid, prob)? <= alpha {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(solution(Some(hi)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub total: u64,
    pub solution: BudgetSolution,
}

/// Minimum budgets over a grid, ordered by total, then allocation, then alpha.
pub fn budget_table(
    totals: &[u64],
    alphas: &[f64],
    prob: f64,
    kinds: &[AllocationKind],
) -> Result<Vec<BudgetRow>> {
    let cells: Vec<(u64, AllocationKind, f64)> = totals
        .iter()
        .flat_map(|&t| {
            kinds
                .iter()
                .flat_map(move |&k| alphas.iter().map(move |&a| (t, k, a)))
        })
        .collect();
    cells
        .par_iter()
        .map(|&(total, kind, alpha)| {
            Ok(BudgetRow {
                total,
                solution: min_budget(total, alpha, prob, kind)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eps(total: u64, alpha: f64, kind: AllocationKind) -> String {
        min_budget(total, alpha, 0.99, kind).unwrap().display_eps()
    }

    #[test]
    fn table_examples() {
        assert_eq!(eps(100_000, 0.1, AllocationKind::R), "1.86");
        assert_eq!(eps(100_000, 0.01, AllocationKind::R), "-");
        assert_eq!(eps(100_000, 0.01, AllocationKind::LOpt), "17.89");
        assert_eq!(eps(1_000_000_000, 1e-3, AllocationKind::LOpt), "2.56");
        assert_eq!(eps(10_000_000, 1e-2, AllocationKind::R), "1.86");
        assert_eq!(eps(1_000_000, 1e-1, AllocationKind::LOpt), "0.71");
    }

    #[test]
    fn solution_meets_target() {
        let sol = min_budget(1_000_000, 0.05, 0.99, AllocationKind::R).unwrap();
        let e = sol.eps.unwrap();
        assert!(alpha_at(sol.sizes, AllocationKind::R, e, 0.99).unwrap() <= 0.05);
        assert!(alpha_at(sol.sizes, AllocationKind::R, e * (1.0 - 1e-6), 0.99).unwrap() > 0.05);
    }

    #[test]
    fn monotone_in_clients_and_alpha() {
        for kind in [AllocationKind::R, AllocationKind::LOpt, AllocationKind::LK2] {
            let mut prev = f64::INFINITY;
            for p in 4..=9 {
                let sol = min_budget(10u64.pow(p), 0.1, 0.99, kind).unwrap();
                let e = sol.eps.unwrap_or(f64::INFINITY);
                assert!(e <= prev);
                prev = e;
            }
            let mut prev = 0.0;
            for alpha in [0.5, 0.1, 0.05, 0.01, 0.001] {
                let e = min_budget(10_000_000, alpha, 0.99, kind)
                    .unwrap()
                    .eps
                    .unwrap_or(f64::INFINITY);
                assert!(e >= prev);
                prev = e;
            }
        }
    }

    #[test]
    fn rejects_bad_targets() {
        assert!(min_budget(1000, 0.0, 0.99, AllocationKind::R).is_err());
        assert!(min_budget(1000, 0.1, 1.0, AllocationKind::R).is_err());
        assert!(min_budget(1, 0.1, 0.99, AllocationKind::R).is_err());
    }

    #[test]
    fn table_ordering() {
        let rows = budget_table(
            &[100_000, 1_000_000],
            &[0.1, 0.01],
            0.99,
            &[AllocationKind::R, AllocationKind::LOpt],
        )
        .unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows[0].total, 100_000);
        assert_eq!(rows[0].solution.allocation, AllocationKind::R);
        assert_eq!(rows[1].solution.alpha, 0.01);
        assert_eq!(rows[2].solution.allocation, AllocationKind::LOpt);
        assert_eq!(rows[4].total, 1_000_000);
    }
}
