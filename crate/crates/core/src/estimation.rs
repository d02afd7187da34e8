//! Unbiased group-mean and performance-gap estimators.
//!
//! The estimators divide by the true group size `n`, not by the number `n'`
//! of records reported into the group:
//!
//! * L: `sum(v') / (a n)`
//! * R: `sum(v') / (a (2b - 1) n)`

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mechanisms::{MechanismKind, MechanismSpec, PerturbedRecord};

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.compensation);
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Count and value sum of the records reported into one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupTally {
    pub group: u32,
    pub observed_count: u64,
    value_sum: CompensatedSum,
}

impl GroupTally {
    pub fn new(group: u32) -> Self {
        Self {
            group,
            observed_count: 0,
            value_sum: CompensatedSum::default(),
        }
    }

    #[inline]
    pub fn push(&mut self, value: f64) {
        self.observed_count += 1;
        self.value_sum.add(value);
    }

    pub fn merge(&mut self, other: &GroupTally) {
        debug_assert_eq!(self.group, other.group);
        self.observed_count += other.observed_count;
        self.value_sum.merge(&other.value_sum);
    }

    pub fn value_sum(&self) -> f64 {
        self.value_sum.value()
    }

    /// Multiplies every summed value by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            group: self.group,
            observed_count: self.observed_count,
            value_sum: CompensatedSum {
                sum: self.value_sum.sum * factor,
                compensation: self.value_sum.compensation * factor,
            },
        }
    }
}

/// Per-group tallies, keyed by reported group.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tallies {
    groups: BTreeMap<u32, GroupTally>,
}

impl Tallies {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, rec: &PerturbedRecord) {
        self.groups
            .entry(rec.group)
            .or_insert_with(|| GroupTally::new(rec.group))
            .push(rec.value);
    }

    pub fn merge(&mut self, other: &Tallies) {
        for (g, t) in &other.groups {
            self.groups
                .entry(*g)
                .or_insert_with(|| GroupTally::new(*g))
                .merge(t);
        }
    }

    pub fn get(&self, group: u32) -> Option<&GroupTally> {
        self.groups.get(&group)
    }

    pub fn insert(&mut self, tally: GroupTally) {
        self.groups.insert(tally.group, tally);
    }

    pub fn iter(&self) -> impl Iterator<Item = &GroupTally> {
        self.groups.values()
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

impl<'a> FromIterator<&'a PerturbedRecord> for Tallies {
    fn from_iter<I: IntoIterator<Item = &'a PerturbedRecord>>(iter: I) -> Self {
        let mut t = Tallies::new();
        for rec in iter {
            t.push(rec);
        }
        t
    }
}

/// Tallies a stream of perturbed records.
pub fn tally<'a, I>(records: I) -> Tallies
where
    I: IntoIterator<Item = &'a PerturbedRecord>,
{
    records.into_iter().collect()
}

/// The normalizer `a n` (L) or `a (2b - 1) n` (R).
pub fn estimator_denominator(n: u64, mech: &MechanismSpec) -> Result<f64> {
    if n == 0 {
        return Err(domain("group size must be positive"));
    }
    let a = mech.group_keep_prob();
    let denom = match mech.kind {
        MechanismKind::L => a * n as f64,
        MechanismKind::R => {
            if mech.budget.eps2 == 0.0 {
                return Err(Error::DegenerateBudget(
                    "R estimator is undefined at eps2 = 0 (2b - 1 = 0)".into(),
                ));
            }
            let c = 2.0 * mech.value_keep_prob() - 1.0;
            a * c * n as f64
        }
    };
    Ok(denom)
}

/// Unbiased estimate of a group mean from its tally and true size `n`.
pub fn estimate_group_mean(tally: &GroupTally, n: u64, mech: &MechanismSpec) -> Result<f64> {
    Ok(tally.value_sum() / estimator_denominator(n, mech)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub groups: [u32; 2],
    pub mean_a: f64,
    pub mean_b: f64,
    /// `|mean_a - mean_b|`.
    pub gap: f64,
    /// `mean_a - mean_b`.
    pub signed_diff: f64,
    pub mechanism: MechanismSpec,
    pub claimed_sizes: [u64; 2],
}

/// Estimates the gap between `groups[0]` and `groups[1]`.
///
/// Records reported into any other group are ignored. A group missing from
/// `tallies` is an error; a group with zero records estimates to 0.
pub fn estimate_gap(
    tallies: &Tallies,
    groups: [u32; 2],
    sizes: [u64; 2],
    mech: &MechanismSpec,
) -> Result<GapEstimate> {
    if groups[0] == groups[1] {
        return Err(domain("the two audited groups must differ"));
    }
    let mean = |i: usize| -> Result<f64> {
        let t = tallies
            .get(groups[i])
            .ok_or(Error::MissingGroup(groups[i]))?;
        estimate_group_mean(t, sizes[i], mech)
    };
    let mean_a = mean(0)?;
    let mean_b = mean(1)?;
    let signed_diff = mean_a - mean_b;
    Ok(GapEstimate {
        groups,
        mean_a,
        mean_b,
        gap: signed_diff.abs(),
        signed_diff,
        mechanism: *mech,
        claimed_sizes: sizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{Budget, ClientRecord};
    use crate::rng::CounterRng;
    use proptest::prelude::*;

    fn rec(group: u32, value: f64) -> PerturbedRecord {
        PerturbedRecord { group, value }
    }

    #[test]
    fn empty_tally() {
        assert!(tally(&[]).is_empty());
    }

    #[test]
    fn direct_count() {
        let t = tally(&[rec(0, 1.0), rec(0, -1.0), rec(1, 1.0)]);
        assert_eq!(t.len(), 2);
        assert_eq!(t.get(0).unwrap().observed_count, 2);
        assert_eq!(t.get(0).unwrap().value_sum(), 0.0);
        assert_eq!(t.get(1).unwrap().observed_count, 1);
        assert_eq!(t.get(1).unwrap().value_sum(), 1.0);
    }

    #[test]
    fn streaming_equals_batched_for_r_output() {
        let spec = crate::mechanisms::MechanismSpec::r(1.0, 1.0).unwrap();
        let p = spec.perturber().unwrap();
        let input = ClientRecord::new(0, 0.3).unwrap();
        let records: Vec<PerturbedRecord> = (0..1_000_000u64)
            .map(|i| {
                p.perturb(&input, &mut CounterRng::for_client(8, 0, i))
                    .unwrap()
            })
            .collect();
        let streaming = tally(&records);
        let mut batched = Tallies::new();
        for chunk in records.chunks(4096) {
            batched.merge(&tally(chunk));
        }
        assert_eq!(streaming, batched);
        for g in 0..2 {
            let (s, b) = (streaming.get(g).unwrap(), batched.get(g).unwrap());
            assert_eq!(s.value_sum().to_bits(), b.value_sum().to_bits());
        }
    }

    #[test]
    fn compensated_sum_recovers_cancellation() {
        let s: CompensatedSum = [1e16, 1.0, -1e16, 1.0].into_iter().collect();
        assert_eq!(s.value(), 2.0);
    }

    #[test]
    fn zero_sum_estimates_zero() {
        let spec = MechanismSpec::r(0.4, 2.0).unwrap();
        let t = GroupTally::new(0);
        assert_eq!(estimate_group_mean(&t, 10, &spec).unwrap(), 0.0);
        let spec = MechanismSpec::l(0.4, 2.0, 2.0).unwrap();
        assert_eq!(estimate_group_mean(&t, 10, &spec).unwrap(), 0.0);
    }

    #[test]
    fn r_at_zero_value_budget_is_degenerate() {
        let spec = MechanismSpec::r(1.0, 0.0).unwrap();
        let t = GroupTally::new(0);
        assert!(matches!(
            estimate_group_mean(&t, 10, &spec),
            Err(Error::DegenerateBudget(_))
        ));
        assert!(estimate_group_mean(&t, 0, &MechanismSpec::r(1.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn denominator_uses_claimed_size() {
        let spec = MechanismSpec::new(
            MechanismKind::L,
            Budget::new(f64::INFINITY, 1.0, 2.0).unwrap(),
        );
        let mut t = GroupTally::new(0);
        t.push(3.0);
        // One observed record, but the group has 6 members.
        assert_eq!(estimate_group_mean(&t, 6, &spec).unwrap(), 0.5);
    }

    #[test]
    fn gap_symmetric_and_missing_group() {
        let spec = MechanismSpec::r(1.0, 1.0).unwrap();
        let t = tally(&[rec(0, 1.0), rec(1, 1.0)]);
        let est = estimate_gap(&t, [0, 1], [5, 5], &spec).unwrap();
        assert_eq!(est.gap, 0.0);
        let t = tally(&[rec(0, 1.0)]);
        assert!(matches!(
            estimate_gap(&t, [0, 1], [5, 5], &spec),
            Err(Error::MissingGroup(1))
        ));
        let mut t = tally(&[rec(0, 1.0)]);
        t.insert(GroupTally::new(1));
        assert!(estimate_gap(&t, [0, 1], [5, 5], &spec).is_ok());
    }

    #[test]
    fn unperturbed_gap_matches_reported_tprs() {
        // Means 0.8901 and 0.7177 in the unperturbed limit.
        let spec = MechanismSpec::l(f64::INFINITY, f64::INFINITY, 2.0).unwrap();
        let mut a = GroupTally::new(0);
        let mut b = GroupTally::new(1);
        for _ in 0..10_000 {
            a.push(0.8901);
            b.push(0.7177);
        }
        let mut t = Tallies::new();
        t.insert(a);
        t.insert(b);
        let est = estimate_gap(&t, [0, 1], [10_000, 10_000], &spec).unwrap();
        assert!((est.gap - 0.1724).abs() < 1e-9);
        assert!((est.gap - 0.1733).abs() <= 0.001);
        assert!(est.signed_diff > 0.0);
    }

    #[test]
    fn other_groups_are_ignored() {
        let spec = MechanismSpec::r(1.0, 1.0).unwrap().with_groups(3);
        let t = tally(&[rec(0, 1.0), rec(1, -1.0), rec(2, 1.0), rec(2, 1.0)]);
        let est = estimate_gap(&t, [0, 1], [2, 2], &spec).unwrap();
        let d = estimator_denominator(2, &spec).unwrap();
        assert_eq!(est.mean_a, 1.0 / d);
        assert_eq!(est.mean_b, -1.0 / d);
    }

    proptest! {
        #[test]
        fn doubling_values_doubles_estimate(
            values in proptest::collection::vec(-5.0f64..5.0, 1..50),
            eps1 in 0.0f64..5.0,
            eps2 in 0.01f64..5.0,
        ) {
            let spec = MechanismSpec::r(eps1, eps2).unwrap();
            let mut t = GroupTally::new(0);
            let mut t2 = GroupTally::new(0);
            for v in &values {
                t.push(*v);
                t2.push(2.0 * v);
            }
            let n = values.len() as u64;
            let m = estimate_group_mean(&t, n, &spec).unwrap();
            let m2 = estimate_group_mean(&t2, n, &spec).unwrap();
            prop_assert!((m2 - 2.0 * m).abs() <= 1e-12 * m.abs().max(1.0));
            prop_assert_eq!(estimate_group_mean(&t.scaled(2.0), n, &spec).unwrap(), 2.0 * m);
        }

        #[test]
        fn tally_is_order_independent(
            mut values in proptest::collection::vec(-10.0f64..10.0, 0..200),
        ) {
            let recs: Vec<_> = values.iter().enumerate().map(|(i, v)| rec((i % 2) as u32, *v)).collect();
            let forward = tally(&recs);
            values.reverse();
            let rev: Vec<_> = recs.iter().rev().copied().collect();
            let backward = tally(&rev);
            for g in 0..2u32 {
                match (forward.get(g), backward.get(g)) {
                    (Some(a), Some(b)) => {
                        prop_assert_eq!(a.observed_count, b.observed_count);
                        let scale = a.value_sum().abs().max(1.0);
                        prop_assert!((a.value_sum() - b.value_sum()).abs() <= 1e-12 * scale);
                    }
                    (None, None) => {}
                    _ => prop_assert!(false),
                }
            }
        }
    }
}
