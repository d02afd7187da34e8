//! Client-side randomizers.
//!
//! Both mechanisms perturb the group with generalized randomized response and
//! zero the value of clients whose group flipped, so that those clients do not
//! contribute to the mean of the group they were reported into. They differ in
//! how the value is perturbed:
//!
//! * [`MechanismKind::R`] discretizes the value to a bit and applies binary
//!   randomized response, reporting `+1` or `-1`.
//! * [`MechanismKind::L`] adds Laplace noise of scale `2/eps2` to kept values
//!   and of scale `k/eps2` to flipped (zeroed) values.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

mod audit;
mod primitives;
mod privacy;

pub use audit::{audit_l_grid, audit_r_exact, AuditReport, AuditWitness};
pub use primitives::{grr_keep_prob, grr_perturb, harmony_discretize, laplace_sample};
pub use privacy::{epsilon_of_l, epsilon_of_r};

/// Budgets above this are treated as the no-perturbation limit of the GRR steps.
pub const DEFAULT_BUDGET_CAP: f64 = 50.0;
/// Default Laplace tuning parameter for flipped clients.
pub const DEFAULT_K: f64 = 2.0;
/// Default audit output half-range.
pub const DEFAULT_AUDIT_RANGE: f64 = 3.0;
/// Default audit grid step.
pub const DEFAULT_AUDIT_STEP: f64 = 1e-3;

fn default_k() -> f64 {
    DEFAULT_K
}

fn default_groups() -> u32 {
    2
}

fn default_cap() -> f64 {
    DEFAULT_BUDGET_CAP
}

/// Privacy parameters of a mechanism instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    /// Budget protecting the group.
    pub eps1: f64,
    /// Budget protecting the value.
    pub eps2: f64,
    /// Laplace scale multiplier for flipped clients (L only).
    #[serde(default = "default_k")]
    pub k: f64,
}

impl Budget {
    pub fn new(eps1: f64, eps2: f64, k: f64) -> Result<Self> {
        let b = Self { eps1, eps2, k };
        b.validate()?;
        Ok(b)
    }

    /// Budget with the default `k = 2`.
    pub fn with_default_k(eps1: f64, eps2: f64) -> Result<Self> {
        Self::new(eps1, eps2, DEFAULT_K)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps1.is_nan() || self.eps1 < 0.0 {
            return Err(domain(format!("eps1 must be >= 0, got {}", self.eps1)));
        }
        if self.eps2.is_nan() || self.eps2 < 0.0 {
            return Err(domain(format!("eps2 must be >= 0, got {}", self.eps2)));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(domain(format!(
                "k must be positive and finite, got {}",
                self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MechanismKind {
    #[serde(alias = "r")]
    R,
    #[serde(alias = "l")]
    L,
}

impl std::fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MechanismKind::R => "R",
            MechanismKind::L => "L",
        })
    }
}

/// A client's true `(group, value)` tuple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub group: u32,
    pub value: f64,
}

impl ClientRecord {
    pub fn new(group: u32, value: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&value) {
            return Err(domain(format!("value {value} outside [-1, 1]")));
        }
        Ok(Self { group, value })
    }
}

/// The tuple a client reports after randomization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbedRecord {
    pub group: u32,
    pub value: f64,
}

/// A mechanism instance: kind, budget and group arity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub kind: MechanismKind,
    pub budget: Budget,
    /// Number of group categories (the arity of the group GRR).
    #[serde(default = "default_groups")]
    pub groups: u32,
    /// Budgets above the cap make the corresponding GRR step the identity.
    #[serde(default = "default_cap")]
    pub cap: f64,
}

impl MechanismSpec {
    pub fn new(kind: MechanismKind, budget: Budget) -> Self {
        Self {
            kind,
            budget,
            groups: 2,
            cap: DEFAULT_BUDGET_CAP,
        }
    }

    pub fn r(eps1: f64, eps2: f64) -> Result<Self> {
        Ok(Self::new(
            MechanismKind::R,
            Budget::with_default_k(eps1, eps2)?,
        ))
    }

    pub fn l(eps1: f64, eps2: f64, k: f64) -> Result<Self> {
        Ok(Self::new(MechanismKind::L, Budget::new(eps1, eps2, k)?))
    }

    pub fn with_groups(mut self, groups: u32) -> Self {
        self.groups = groups;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.budget.validate()?;
        if self.groups < 2 {
            return Err(domain(format!(
                "need at least 2 groups, got {}",
                self.groups
            )));
        }
        if !(self.cap > 0.0) {
            return Err(domain(format!(
                "budget cap must be positive, got {}",
                self.cap
            )));
        }
        if self.kind == MechanismKind::L {
            if self.budget.eps2 == 0.0 {
                return Err(Error::DegenerateBudget(
                    "L needs eps2 > 0 for a finite Laplace scale".into(),
                ));
            }
            if self.budget.k > 2.0 {
                log::warn!("k = {} lies outside (0, 2]", self.budget.k);
            }
        }
        Ok(())
    }

    /// Group keep probability `a`.
    pub fn group_keep_prob(&self) -> f64 {
        let eps = self.budget.eps1;
        if eps > self.cap {
            1.0
        } else {
            grr_keep_prob(eps, self.groups).unwrap_or(f64::NAN)
        }
    }

    /// Value (bit) keep probability `b` of R.
    pub fn value_keep_prob(&self) -> f64 {
        let eps = self.budget.eps2;
        if eps > self.cap {
            1.0
        } else {
            grr_keep_prob(eps, 2).unwrap_or(f64::NAN)
        }
    }

    /// Laplace scale for clients whose group was kept.
    pub fn own_noise_scale(&self) -> f64 {
        2.0 / self.budget.eps2
    }

    /// Laplace scale for clients whose group flipped.
    pub fn flipped_noise_scale(&self) -> f64 {
        self.budget.k / self.budget.eps2
    }

    /// The overall LDP level claimed for this instance.
    pub fn claimed_epsilon(&self) -> Result<f64> {
        self.require_binary()?;
        match self.kind {
            MechanismKind::R => Ok(epsilon_of_r(&self.budget)),
            MechanismKind::L => epsilon_of_l(&self.budget),
        }
    }

    /// Audits the instance with the default grid for L.
    pub fn audit(&self) -> Result<AuditReport> {
        self.require_binary()?;
        match self.kind {
            MechanismKind::R => audit_r_exact(&self.budget),
            MechanismKind::L => audit_l_grid(&self.budget, DEFAULT_AUDIT_RANGE, DEFAULT_AUDIT_STEP),
        }
    }

    pub(crate) fn require_binary(&self) -> Result<()> {
        if self.groups != 2 {
            return Err(Error::UncertifiedArity(self.groups));
        }
        Ok(())
    }

    pub fn perturber(&self) -> Result<Perturber> {
        Perturber::new(self)
    }
}

/// A mechanism with its probabilities and noise scales precomputed.
#[derive(Debug, Clone, Copy)]
pub struct Perturber {
    kind: MechanismKind,
    groups: u32,
    keep_group: f64,
    keep_value: f64,
    own_scale: f64,
    flipped_scale: f64,
}

impl Perturber {
    pub fn new(spec: &MechanismSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            kind: spec.kind,
            groups: spec.groups,
            keep_group: spec.group_keep_prob(),
            keep_value: spec.value_keep_prob(),
            own_scale: spec.own_noise_scale(),
            flipped_scale: spec.flipped_noise_scale(),
        })
    }

    pub fn perturb<R: Rng + ?Sized>(
        &self,
        rec: &ClientRecord,
        rng: &mut R,
    ) -> Result<PerturbedRecord> {
        if !(-1.0..=1.0).contains(&rec.value) {
            return Err(domain(format!("value {} outside [-1, 1]", rec.value)));
        }
        let group = grr_perturb(rec.group, self.groups, self.keep_group, rng)?;
        let flipped = group != rec.group;
        let v = if flipped { 0.0 } else { rec.value };
        let value = match self.kind {
            MechanismKind::R => {
                let bit = u32::from(harmony_discretize(v, rng)?);
                let bit = grr_perturb(bit, 2, self.keep_value, rng)?;
                2.0 * f64::from(bit) - 1.0
            }
            MechanismKind::L => {
                let scale = if flipped {
                    self.flipped_scale
                } else {
                    self.own_scale
                };
                if scale > 0.0 {
                    v + laplace_sample(scale, rng)?
                } else {
                    v
                }
            }
        };
        Ok(PerturbedRecord { group, value })
    }
}

/// Applies R to one record. `groups` is the number of group categories.
pub fn perturb_r<R: Rng + ?Sized>(
    rec: &ClientRecord,
    budget: &Budget,
    groups: u32,
    rng: &mut R,
) -> Result<PerturbedRecord> {
    let spec = MechanismSpec::new(MechanismKind::R, *budget).with_groups(groups);
    Perturber::new(&spec)?.perturb(rec, rng)
}

/// Applies L to one record. `groups` is the number of group categories.
pub fn perturb_l<R: Rng + ?Sized>(
    rec: &ClientRecord,
    budget: &Budget,
    groups: u32,
    rng: &mut R,
) -> Result<PerturbedRecord> {
    let spec = MechanismSpec::new(MechanismKind::L, *budget).with_groups(groups);
    Perturber::new(&spec)?.perturb(rec, rng)
}
