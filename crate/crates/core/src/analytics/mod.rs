//! Closed-form error analysis for binary groups.
//!
//! Group-mean variances (both estimators are unbiased, so these are MSEs):
//!
//! ```text
//! Var_L = (1/n) (nu2 e^-eps1 + (1 + e^-eps1) (8/eps2^2 + (K-n)/n * 2k^2/eps2^2 * e^-eps1))
//! Var_R = 1 / (a c^2 n) * (1 - a c^2 nu2 + (K-n)/n * (1-a)/a),   c = 2b - 1
//! ```
//!
//! The two group estimators are uncorrelated, so the gap MSE is the sum of
//! the group variances. `Var_L` grows with `nu2` and `Var_R` shrinks with it,
//! which fixes where each bound is attained over `nu2` in `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mechanisms::{Budget, MechanismKind, MechanismSpec};

mod budget;
mod sweeps;

pub use budget::{
    budget_table, min_budget, min_budget_for_sizes, BudgetRow, BudgetSolution, EPS_SEARCH_MAX,
    EPS_SEARCH_MIN,
};
pub use sweeps::{
    alloc_grid, balanced_sizes, misestimated_group_mse, mse_misestimated_sizes, mse_sweep,
    ratio_sizes, ratio_sweep, AllocGridRow, MseSweepRow, RatioRow,
};

/// Size and second moment of one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupProfile {
    pub n: u64,
    /// Mean of squared values, in `[0, 1]`.
    pub nu2: f64,
    /// Group mean; only the misestimated-size analysis needs it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
}

impl GroupProfile {
    pub fn new(n: u64, nu2: f64) -> Result<Self> {
        let p = Self { n, nu2, mean: None };
        p.validate()?;
        Ok(p)
    }

    pub fn with_mean(n: u64, nu2: f64, mean: f64) -> Result<Self> {
        let p = Self {
            n,
            nu2,
            mean: Some(mean),
        };
        p.validate()?;
        Ok(p)
    }

    /// Profile of a concrete list of values.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(domain("empty group"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let nu2 = (values.iter().map(|v| v * v).sum::<f64>() / n).min(1.0);
        // Guard the Cauchy-Schwarz check against rounding.
        let nu2 = nu2.max(mean * mean);
        Self::with_mean(values.len() as u64, nu2, mean)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(domain("group size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.nu2) {
            return Err(domain(format!("nu2 = {} outside [0, 1]", self.nu2)));
        }
        if let Some(m) = self.mean {
            if !(-1.0..=1.0).contains(&m) {
                return Err(domain(format!("mean {m} outside [-1, 1]")));
            }
            if m * m > self.nu2 * (1.0 + 1e-12) + 1e-15 {
                return Err(domain(format!(
                    "mean^2 = {} exceeds nu2 = {}",
                    m * m,
                    self.nu2
                )));
            }
        }
        Ok(())
    }

    /// Bounds over `nu2` ignore the mean, which may be incompatible with them.
    fn with_nu2(&self, nu2: f64) -> Self {
        Self {
            nu2,
            mean: None,
            ..*self
        }
    }
}

/// The two audited groups; the total client count is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationProfile {
    pub groups: [GroupProfile; 2],
}

impl PopulationProfile {
    pub fn new(a: GroupProfile, b: GroupProfile) -> Result<Self> {
        a.validate()?;
        b.validate()?;
        Ok(Self { groups: [a, b] })
    }

    pub fn from_sizes(sizes: [u64; 2], nu2: [f64; 2]) -> Result<Self> {
        Self::new(
            GroupProfile::new(sizes[0], nu2[0])?,
            GroupProfile::new(sizes[1], nu2[1])?,
        )
    }

    pub fn total(&self) -> u64 {
        self.groups[0].n + self.groups[1].n
    }

    pub fn sizes(&self) -> [u64; 2] {
        [self.groups[0].n, self.groups[1].n]
    }

    pub fn swapped(&self) -> Self {
        Self {
            groups: [self.groups[1], self.groups[0]],
        }
    }
}

/// Point MSE at the profile's `nu2` plus bounds over `nu2` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

fn check_sizes(profile: &GroupProfile, total: u64) -> Result<()> {
    profile.validate()?;
    if profile.n > total {
        return Err(domain(format!(
            "group size {} exceeds total {total}",
            profile.n
        )));
    }
    Ok(())
}

/// Variance of the L group-mean estimator.
pub fn var_group_l(profile: &GroupProfile, total: u64, budget: &Budget) -> Result<f64> {
    check_sizes(profile, total)?;
    budget.validate()?;
    if budget.eps2 == 0.0 {
        return Err(Error::DegenerateBudget(
            "L variance is infinite at eps2 = 0".into(),
        ));
    }
    let n = profile.n as f64;
    let others = (total - profile.n) as f64;
    let flip = (-budget.eps1).exp();
    let own_noise = 8.0 / (budget.eps2 * budget.eps2);
    let flipped_noise = 2.0 * budget.k * budget.k / (budget.eps2 * budget.eps2);
    Ok((profile.nu2 * flip + (1.0 + flip) * (own_noise + others / n * flipped_noise * flip)) / n)
}

/// Variance of the R group-mean estimator.
pub fn var_group_r(profile: &GroupProfile, total: u64, budget: &Budget) -> Result<f64> {
    check_sizes(profile, total)?;
    budget.validate()?;
    if budget.eps2 == 0.0 {
        return Err(Error::DegenerateBudget(
            "R estimator is undefined at eps2 = 0".into(),
        ));
    }
    let n = profile.n as f64;
    let others = (total - profile.n) as f64;
    let a = 1.0 / (1.0 + (-budget.eps1).exp());
    // 2b - 1 for b = e^x / (1 + e^x)
    let c = (budget.eps2 / 2.0).tanh();
    let ac2 = a * c * c;
    let flip_ratio = (-budget.eps1).exp();
    Ok((1.0 - ac2 * profile.nu2 + others / n * flip_ratio) / (ac2 * n))
}

pub fn var_group(profile: &GroupProfile, total: u64, mech: &MechanismSpec) -> Result<f64> {
    mech.require_binary()?;
    match mech.kind {
        MechanismKind::L => var_group_l(profile, total, &mech.budget),
        MechanismKind::R => var_group_r(profile, total, &mech.budget),
    }
}

/// The `nu2` at which a mechanism's group variance is smallest and largest.
pub fn nu2_extremes(kind: MechanismKind) -> (f64, f64) {
    match kind {
        MechanismKind::L => (0.0, 1.0),
        MechanismKind::R => (1.0, 0.0),
    }
}

/// Gap MSE report for a two-group population.
pub fn mse_gap(pop: &PopulationProfile, mech: &MechanismSpec) -> Result<MseReport> {
    let total = pop.total();
    let (lo_nu2, hi_nu2) = nu2_extremes(mech.kind);
    let sum_at = |f: &dyn Fn(&GroupProfile) -> GroupProfile| -> Result<f64> {
        let mut s = 0.0;
        for g in &pop.groups {
            s += var_group(&f(g), total, mech)?;
        }
        Ok(s)
    };
    Ok(MseReport {
        point: sum_at(&|g| *g)?,
        lower: sum_at(&|g| g.with_nu2(lo_nu2))?,
        upper: sum_at(&|g| g.with_nu2(hi_nu2))?,
    })
}

/// Worst-case gap MSE for the given group sizes.
pub fn mse_gap_upper(sizes: [u64; 2], mech: &MechanismSpec) -> Result<f64> {
    let pop = PopulationProfile::from_sizes(sizes, [0.0, 0.0])?;
    Ok(mse_gap(&pop, mech)?.upper)
}

/// Budget allocations for a total budget `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AllocationKind {
    /// R with `eps1 = eps2 = eps`.
    #[serde(rename = "r", alias = "R")]
    R,
    /// L with `k = 2`, `eps1 = eps/2`, `eps2 = eps`.
    #[serde(rename = "l-k2")]
    LK2,
    /// L with `eps2 = eps` and `k`, `eps1` maximizing the group budget.
    #[serde(rename = "l-opt")]
    LOpt,
}

impl AllocationKind {
    pub const ALL: [AllocationKind; 3] =
        [AllocationKind::R, AllocationKind::LK2, AllocationKind::LOpt];

    pub fn mechanism_kind(self) -> MechanismKind {
        match self {
            AllocationKind::R => MechanismKind::R,
            AllocationKind::LK2 | AllocationKind::LOpt => MechanismKind::L,
        }
    }

    /// The optimal allocation for a mechanism kind.
    pub fn optimal_for(kind: MechanismKind) -> Self {
        match kind {
            MechanismKind::R => AllocationKind::R,
            MechanismKind::L => AllocationKind::LOpt,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AllocationKind::R => "r",
            AllocationKind::LK2 => "l-k2",
            AllocationKind::LOpt => "l-opt",
        }
    }
}

impl std::fmt::Display for AllocationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AllocationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "r" | "r-opt" => Ok(AllocationKind::R),
            "l-k2" | "lk2" => Ok(AllocationKind::LK2),
            "l-opt" | "lopt" | "l" => Ok(AllocationKind::LOpt),
            other => Err(domain(format!("unknown allocation {other:?}"))),
        }
    }
}

/// Knee of the L_opt allocation.
pub const LOPT_KNEE: f64 = 2.0 / 3.0;

/// Splits a total budget according to `kind`.
pub fn allocate(kind: AllocationKind, total_eps: f64) -> Result<Budget> {
    if !(total_eps > 0.0) {
        return Err(domain(format!(
            "total budget must be positive, got {total_eps}"
        )));
    }
    let eps = total_eps;
    match kind {
        AllocationKind::R => Budget::new(eps, eps, 2.0),
        AllocationKind::LK2 => Budget::new(eps / 2.0, eps, 2.0),
        AllocationKind::LOpt => {
            if eps >= LOPT_KNEE {
                Budget::new((2.0 / eps).ln() + eps - 1.0, eps, eps)
            } else {
                Budget::new(3f64.ln() - eps / 2.0, eps, LOPT_KNEE)
            }
        }
    }
}

/// Mechanism instance for an allocation of `total_eps`.
pub fn allocated_spec(kind: AllocationKind, total_eps: f64) -> Result<MechanismSpec> {
    Ok(MechanismSpec::new(
        kind.mechanism_kind(),
        allocate(kind, total_eps)?,
    ))
}

/// Half-width `alpha` with `P(|error| >= alpha) <= 1 - prob` by Chebyshev.
pub fn chebyshev_alpha(variance: f64, prob: f64) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(domain(format!("probability must be in (0, 1), got {prob}")));
    }
    if !(variance >= 0.0) {
        return Err(domain(format!("variance must be >= 0, got {variance}")));
    }
    Ok((variance / (1.0 - prob)).sqrt())
}
