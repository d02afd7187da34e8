//! Curves over budgets, group ratios and allocation grids.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    allocated_spec, mse_gap, mse_gap_upper, nu2_extremes, var_group, AllocationKind, GroupProfile,
    MseReport, PopulationProfile,
};
use crate::error::{domain, Error, Result};
use crate::mechanisms::{epsilon_of_l, Budget, MechanismKind, MechanismSpec};

/// Splits `total` clients into two groups, the first one rounded down.
pub fn balanced_sizes(total: u64) -> Result<[u64; 2]> {
    if total < 2 {
        return Err(domain(format!("need at least 2 clients, got {total}")));
    }
    Ok([total / 2, total - total / 2])
}

/// Sizes `n_G = K r / (1 + r)` and `K - n_G` for a group ratio `r = n_G / n_other`.
pub fn ratio_sizes(total: u64, ratio: f64) -> Result<[u64; 2]> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(domain(format!("group ratio must be positive, got {ratio}")));
    }
    if total < 2 {
        return Err(domain(format!("need at least 2 clients, got {total}")));
    }
    let n = (total as f64 * ratio / (1.0 + ratio)).round() as u64;
    let n = n.clamp(1, total - 1);
    Ok([n, total - n])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseSweepRow {
    pub eps: f64,
    pub allocation: AllocationKind,
    pub lower: f64,
    pub upper: f64,
}

/// Lower and upper gap-MSE bounds for each allocation and total budget.
pub fn mse_sweep(
    sizes: [u64; 2],
    eps_grid: &[f64],
    kinds: &[AllocationKind],
) -> Result<Vec<MseSweepRow>> {
    let pop = PopulationProfile::from_sizes(sizes, [0.0, 0.0])?;
    let cells: Vec<(AllocationKind, f64)> = kinds
        .iter()
        .flat_map(|&k| eps_grid.iter().map(move |&e| (k, e)))
        .collect();
    cells
        .par_iter()
        .map(|&(allocation, eps)| {
            let rep = mse_gap(&pop, &allocated_spec(allocation, eps)?)?;
            Ok(MseSweepRow {
                eps,
                allocation,
                lower: rep.lower,
                upper: rep.upper,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub ratio: f64,
    pub eps: f64,
    pub allocation: AllocationKind,
    pub n_group: u64,
    pub n_other: u64,
    pub upper: f64,
}

/// Upper-bound gap MSE for unbalanced groups.
pub fn ratio_sweep(
    total: u64,
    ratios: &[f64],
    eps_grid: &[f64],
    kind: AllocationKind,
) -> Result<Vec<RatioRow>> {
    let cells: Vec<(f64, f64)> = ratios
        .iter()
        .flat_map(|&r| eps_grid.iter().map(move |&e| (r, e)))
        .collect();
    cells
        .par_iter()
        .map(|&(ratio, eps)| {
            let sizes = ratio_sizes(total, ratio)?;
            let upper = mse_gap_upper(sizes, &allocated_spec(kind, eps)?)?;
            Ok(RatioRow {
                ratio,
                eps,
                allocation: kind,
                n_group: sizes[0],
                n_other: sizes[1],
                upper,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocGridRow {
    pub eps1: f64,
    pub eps2: f64,
    pub k: f64,
    pub upper: f64,
    pub claimed_eps: f64,
    /// The claimed level of L does not exceed `eps2`.
    pub feasible: bool,
}

/// Upper-bound gap MSE of L over an `(eps1, eps2)` grid at fixed `k`.
pub fn alloc_grid(
    sizes: [u64; 2],
    eps1_grid: &[f64],
    eps2_grid: &[f64],
    k: f64,
) -> Result<Vec<AllocGridRow>> {
    let cells: Vec<(f64, f64)> = eps1_grid
        .iter()
        .flat_map(|&a| eps2_grid.iter().map(move |&b| (a, b)))
        .collect();
    cells
        .par_iter()
        .map(|&(eps1, eps2)| {
            let budget = Budget::new(eps1, eps2, k)?;
            let upper = mse_gap_upper(sizes, &MechanismSpec::new(MechanismKind::L, budget))?;
            let claimed_eps = epsilon_of_l(&budget)?;
            Ok(AllocGridRow {
                eps1,
                eps2,
                k,
                upper,
                claimed_eps,
                feasible: claimed_eps <= eps2 * (1.0 + 1e-12),
            })
        })
        .collect()
}

/// Gap MSE when the estimator divides by estimated sizes `n_est` instead of
/// the true sizes.
///
/// Using `n_est` rescales a group estimator by `n / n_est`, so its variance
/// scales by `(n / n_est)^2` and it gains a bias `m (n / n_est - 1)`. The two
/// estimators stay uncorrelated, so the gap MSE is the sum of the scaled
/// variances plus the squared difference of the biases.
pub fn mse_misestimated_sizes(
    pop: &PopulationProfile,
    mech: &MechanismSpec,
    n_est: [f64; 2],
) -> Result<MseReport> {
    let total = pop.total();
    let mut scales = [0.0; 2];
    let mut biases = [0.0; 2];
    for (i, g) in pop.groups.iter().enumerate() {
        if !(n_est[i] > 0.0) {
            return Err(domain(format!(
                "estimated size must be positive, got {}",
                n_est[i]
            )));
        }
        let mean = g.mean.ok_or(Error::MissingMean(i))?;
        let scale = g.n as f64 / n_est[i];
        scales[i] = scale;
        biases[i] = mean * (scale - 1.0);
    }
    let bias_term = (biases[0] - biases[1]).powi(2);
    let (lo_nu2, hi_nu2) = nu2_extremes(mech.kind);
    let at = |nu2: Option<f64>| -> Result<f64> {
        let mut s = bias_term;
        for (i, g) in pop.groups.iter().enumerate() {
            let profile = match nu2 {
                Some(nu2) => GroupProfile {
                    nu2,
                    mean: None,
                    ..*g
                },
                None => *g,
            };
            s += scales[i] * scales[i] * var_group(&profile, total, mech)?;
        }
        Ok(s)
    };
    Ok(MseReport {
        point: at(None)?,
        lower: at(Some(lo_nu2))?,
        upper: at(Some(hi_nu2))?,
    })
}

/// Per-group MSE `(n/n_est)^2 Var + m^2 (n/n_est - 1)^2` of a scaled estimator.
pub fn misestimated_group_mse(
    profile: &GroupProfile,
    total: u64,
    mech: &MechanismSpec,
    n_est: f64,
) -> Result<f64> {
    let mean = profile.mean.ok_or(Error::MissingMean(0))?;
    let scale = profile.n as f64 / n_est;
    Ok(scale * scale * var_group(profile, total, mech)? + (mean * (scale - 1.0)).powi(2))
}
