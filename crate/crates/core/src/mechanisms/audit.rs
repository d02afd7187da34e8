//! Privacy-loss audits for binary groups.
//!
//! R has a finite output space, so its loss is found by enumerating every input
//! pair and output. L outputs a real value; its loss is searched on a grid of
//! outputs. In both cases the per-input values are restricted to {-1, 0, +1}:
//! the likelihood of every output is monotone in the input value, so the
//! extremes of the log ratio sit on those points.

use serde::{Deserialize, Serialize};

use super::{epsilon_of_l, epsilon_of_r, Budget, ClientRecord, PerturbedRecord};
use crate::error::{domain, Result};

const AUDIT_VALUES: [f64; 3] = [-1.0, 0.0, 1.0];
const GROUPS: [u32; 2] = [0, 1];

/// Pair of inputs and an output achieving the largest log likelihood ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditWitness {
    pub x0: ClientRecord,
    pub x1: ClientRecord,
    pub output: PerturbedRecord,
    /// Likelihood of `output` under `x0`.
    pub p0: f64,
    /// Likelihood of `output` under `x1`.
    pub p1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// Largest log likelihood ratio found.
    pub tight_eps: f64,
    /// The closed-form level claimed for the mechanism.
    pub claimed_eps: f64,
    pub witness: AuditWitness,
    /// Set when the grid maximum lies on the edge of the searched output range
    /// and exceeds every interior value, i.e. the supremum is still growing.
    pub boundary_attained: bool,
}

fn require_finite(budget: &Budget) -> Result<()> {
    budget.validate()?;
    if !budget.eps1.is_finite() || !budget.eps2.is_finite() {
        return Err(domain("audits need finite budgets"));
    }
    Ok(())
}

/// `ln(1 / (1 + e^-x))`, the log of a binary keep probability.
fn ln_keep(eps: f64) -> f64 {
    -(-eps).exp().ln_1p()
}

/// `ln(1 - 1 / (1 + e^-x))`.
fn ln_flip(eps: f64) -> f64 {
    -eps - (-eps).exp().ln_1p()
}

/// Exact audit of R by enumerating input pairs and all four outputs.
pub fn audit_r_exact(budget: &Budget) -> Result<AuditReport> {
    require_finite(budget)?;
    let ln_a = ln_keep(budget.eps1);
    let ln_1ma = ln_flip(budget.eps1);
    let ln_b = ln_keep(budget.eps2);
    let ln_1mb = ln_flip(budget.eps2);

    let log_likelihood = |x: &ClientRecord, y: &PerturbedRecord| -> f64 {
        if y.group != x.group {
            // The value was zeroed, so the reported sign is a fair coin.
            return ln_1ma - std::f64::consts::LN_2;
        }
        let t = x.value * y.value;
        let ln_value = if t > 0.0 {
            ln_b
        } else if t < 0.0 {
            ln_1mb
        } else {
            -std::f64::consts::LN_2
        };
        ln_a + ln_value
    };

    let inputs: Vec<ClientRecord> = GROUPS
        .iter()
        .flat_map(|&g| {
            AUDIT_VALUES
                .iter()
                .map(move |&v| ClientRecord { group: g, value: v })
        })
        .collect();
    let outputs: Vec<PerturbedRecord> = GROUPS
        .iter()
        .flat_map(|&g| {
            [-1.0, 1.0]
                .into_iter()
                .map(move |v| PerturbedRecord { group: g, value: v })
        })
        .collect();

    let mut best: Option<(f64, AuditWitness)> = None;
    for x0 in &inputs {
        for x1 in &inputs {
            for y in &outputs {
                let l0 = log_likelihood(x0, y);
                let l1 = log_likelihood(x1, y);
                let ratio = l0 - l1;
                if best.is_none_or(|(b, _)| ratio > b) {
                    let witness = AuditWitness {
                        x0: *x0,
                        x1: *x1,
                        output: *y,
                        p0: l0.exp(),
                        p1: l1.exp(),
                    };
                    best = Some((ratio, witness));
                }
            }
        }
    }
    let (tight_eps, witness) = best.expect("non-empty enumeration");
    Ok(AuditReport {
        tight_eps,
        claimed_eps: epsilon_of_r(budget),
        witness,
        boundary_attained: false,
    })
}

/// Grid audit of L over outputs `v'` in `[-out_range, out_range]`.
///
/// Likelihoods of Laplace outputs are densities divided by `eps2`, a factor
/// common to every output; this keeps them positive when `eps2 = 0`.
pub fn audit_l_grid(budget: &Budget, out_range: f64, grid_step: f64) -> Result<AuditReport> {
    require_finite(budget)?;
    if !(out_range > 0.0 && out_range.is_finite()) {
        return Err(domain(format!(
            "out_range must be positive, got {out_range}"
        )));
    }
    if !(grid_step > 0.0 && grid_step <= out_range) {
        return Err(domain(format!(
            "grid_step must be in (0, out_range], got {grid_step}"
        )));
    }
    let Budget { eps1, eps2, k } = *budget;
    let ln_a = ln_keep(eps1);
    let ln_1ma = ln_flip(eps1);

    let log_likelihood = |x: &ClientRecord, y: &PerturbedRecord| -> f64 {
        if y.group == x.group {
            ln_a - 4f64.ln() - eps2 * (y.value - x.value).abs() / 2.0
        } else {
            ln_1ma - (2.0 * k).ln() - eps2 * y.value.abs() / k
        }
    };

    let steps = (2.0 * out_range / grid_step).round() as u64;
    let point = |i: u64| {
        if i == steps {
            out_range
        } else {
            -out_range + i as f64 * grid_step
        }
    };

    let inputs: Vec<ClientRecord> = GROUPS
        .iter()
        .flat_map(|&g| {
            AUDIT_VALUES
                .iter()
                .map(move |&v| ClientRecord { group: g, value: v })
        })
        .collect();

    let mut edge: Option<(f64, AuditWitness)> = None;
    let mut interior: Option<(f64, AuditWitness)> = None;
    for i in 0..=steps {
        let slot = if i == 0 || i == steps {
            &mut edge
        } else {
            &mut interior
        };
        let v_out = point(i);
        for &g_out in &GROUPS {
            let y = PerturbedRecord {
                group: g_out,
                value: v_out,
            };
            for x0 in &inputs {
                let l0 = log_likelihood(x0, &y);
                for x1 in &inputs {
                    let l1 = log_likelihood(x1, &y);
                    let ratio = l0 - l1;
                    if slot.is_none_or(|(b, _)| ratio > b) {
                        let witness = AuditWitness {
                            x0: *x0,
                            x1: *x1,
                            output: y,
                            p0: l0.exp(),
                            p1: l1.exp(),
                        };
                        *slot = Some((ratio, witness));
                    }
                }
            }
        }
    }

    let edge = edge.expect("grid has endpoints");
    let (tight_eps, witness, boundary_attained) = match interior {
        Some(inner) => {
            let tol = 1e-9 * inner.0.abs().max(1.0);
            if edge.0 > inner.0 + tol {
                (edge.0, edge.1, true)
            } else {
                (inner.0.max(edge.0), inner.1, false)
            }
        }
        None => (edge.0, edge.1, false),
    };

    Ok(AuditReport {
        tight_eps,
        claimed_eps: epsilon_of_l(budget)?,
        witness,
        boundary_attained,
    })
}
