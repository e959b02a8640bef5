//! Completely randomized assignments and the experimenter's view of the data.
//!
//! Treatment indices are 0-based internally (`0` is `z_1`); files and
//! reports use 1-based indices.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::design::n_treatments;
use crate::error::{Error, Result};
use crate::population::PotentialOutcomeTable;

/// Recorded in reports so seeded runs can be replayed.
pub const RNG_ALGORITHM: &str =
    "ChaCha8Rng (rand_chacha 0.3, seed_from_u64); Fisher-Yates shuffle (rand 0.8 SliceRandom)";

/// Largest number of assignments [`enumerate_assignments`] will walk.
pub const ENUMERATION_LIMIT: u64 = 10_000_000;

/// Group sizes `n_1, ..., n_{2^K}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct GroupSizes(Vec<usize>);

impl GroupSizes {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() || !sizes.len().is_power_of_two() || sizes.len() < 2 {
            return Err(Error::group_sizes(format!(
                "need 2^K entries with K >= 1, got {}",
                sizes.len()
            )));
        }
        if sizes.iter().sum::<usize>() == 0 {
            return Err(Error::group_sizes("total number of units is zero"));
        }
        Ok(Self(sizes))
    }

    /// Like [`GroupSizes::new`] but also checks the length against `k`.
    pub fn for_design(k: u32, sizes: Vec<usize>) -> Result<Self> {
        let expected = n_treatments(k);
        if sizes.len() != expected {
            return Err(Error::group_sizes(format!(
                "n-vector length {} != 2^K = {expected}",
                sizes.len()
            )));
        }
        Self::new(sizes)
    }

    pub fn balanced(k: u32, replicates: usize) -> Result<Self> {
        Self::for_design(k, vec![replicates; n_treatments(k)])
    }

    pub fn k(&self) -> u32 {
        self.0.len().trailing_zeros()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn get(&self, j: usize) -> usize {
        self.0[j]
    }

    /// The common replicate count, if all groups are the same size.
    pub fn common_size(&self) -> Option<usize> {
        let first = self.0[0];
        self.0.iter().all(|&n| n == first).then_some(first)
    }

    /// First group with fewer than `min` units.
    pub fn first_below(&self, min: usize) -> Option<(usize, usize)> {
        self.0
            .iter()
            .enumerate()
            .find(|(_, &n)| n < min)
            .map(|(j, &n)| (j, n))
    }

    pub(crate) fn require_at_least(&self, min: usize, reason: &'static str) -> Result<()> {
        match self.first_below(min) {
            Some((group, 0)) => Err(Error::EmptyGroup { group: group + 1 }),
            Some((group, size)) => Err(Error::TooFewReplicates {
                group: group + 1,
                size,
                reason,
            }),
            None => Ok(()),
        }
    }

    /// Multinomial coefficient `N! / prod(n_j!)`, or `None` on overflow.
    pub fn assignment_count(&self) -> Option<u128> {
        let mut count: u128 = 1;
        let mut placed: u128 = 0;
        for &n in &self.0 {
            // Running product of binomials C(placed + i, i); each step stays integral.
            for i in 1..=n as u128 {
                placed += 1;
                count = count.checked_mul(placed)? / i;
            }
        }
        Some(count)
    }

    /// Whether `N >= 2^(K+1)`, the recommended minimum experiment size.
    pub fn meets_size_recommendation(&self) -> bool {
        self.total() >= 2 * self.len()
    }
}

impl fmt::Display for GroupSizes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for GroupSizes {
    type Err = Error;

    /// Parses `n1,n2,...`.
    fn from_str(s: &str) -> Result<Self> {
        let sizes = s
            .split(',')
            .map(|part| {
                part.trim().parse::<usize>().map_err(|_| {
                    Error::group_sizes(format!("'{}' is not a non-negative integer", part.trim()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sizes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    k: u32,
    treatment_of: Vec<usize>,
    group_sizes: GroupSizes,
}

impl Assignment {
    /// Builds an assignment from per-unit 0-based treatment indices.
    pub fn from_treatments(k: u32, treatment_of: Vec<usize>) -> Result<Self> {
        let j = n_treatments(k);
        let mut sizes = vec![0usize; j];
        for (unit, &t) in treatment_of.iter().enumerate() {
            if t >= j {
                return Err(Error::dimension(format!(
                    "unit {unit} has treatment index {t}, expected < {j}"
                )));
            }
            sizes[t] += 1;
        }
        Ok(Self {
            k,
            treatment_of,
            group_sizes: GroupSizes::for_design(k, sizes)?,
        })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn n_units(&self) -> usize {
        self.treatment_of.len()
    }

    pub fn treatment_of(&self) -> &[usize] {
        &self.treatment_of
    }

    pub fn group_sizes(&self) -> &GroupSizes {
        &self.group_sizes
    }
}

/// Draws a completely randomized assignment with the given group sizes.
///
/// A seeded Fisher-Yates permutation of the units is cut into consecutive
/// blocks of sizes `n_1, n_2, ...`; every partition is equally likely.
pub fn draw_assignment(sizes: &GroupSizes, seed: u64) -> Assignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_assignment_with(sizes, &mut rng)
}

pub fn draw_assignment_with<R: rand::Rng + ?Sized>(sizes: &GroupSizes, rng: &mut R) -> Assignment {
    let n = sizes.total();
    let mut units: Vec<usize> = (0..n).collect();
    units.shuffle(rng);
    let mut treatment_of = vec![0usize; n];
    let mut start = 0;
    for (j, &nj) in sizes.as_slice().iter().enumerate() {
        for &unit in &units[start..start + nj] {
            treatment_of[unit] = j;
        }
        start += nj;
    }
    Assignment {
        k: sizes.k(),
        treatment_of,
        group_sizes: sizes.clone(),
    }
}

/// Every assignment with the given group sizes, in lexicographic order of
/// the treatment vector.
pub fn enumerate_assignments(sizes: &GroupSizes) -> Result<Assignments> {
    let count = sizes.assignment_count();
    match count {
        Some(c) if c <= u128::from(ENUMERATION_LIMIT) => {}
        _ => {
            return Err(Error::EnumerationTooLarge {
                count: count.map_or_else(|| "more than 2^128".to_owned(), |c| c.to_string()),
                limit: ENUMERATION_LIMIT,
            })
        }
    }
    let first: Vec<usize> = sizes
        .as_slice()
        .iter()
        .enumerate()
        .flat_map(|(j, &n)| std::iter::repeat_n(j, n))
        .collect();
    Ok(Assignments {
        sizes: sizes.clone(),
        next: Some(first),
        remaining: count.unwrap_or(0) as u64,
    })
}

/// Iterator returned by [`enumerate_assignments`].
#[derive(Debug, Clone)]
pub struct Assignments {
    sizes: GroupSizes,
    next: Option<Vec<usize>>,
    remaining: u64,
}

impl Assignments {
    pub fn total(&self) -> u64 {
        self.remaining
    }
}

/// Advances `v` to the next multiset permutation in lexicographic order.
fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let Some(i) = (0..v.len() - 1).rev().find(|&i| v[i] < v[i + 1]) else {
        return false;
    };
    let j = (i + 1..v.len()).rev().find(|&j| v[j] > v[i]).unwrap();
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}

impl Iterator for Assignments {
    type Item = Assignment;

    fn next(&mut self) -> Option<Assignment> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        if next_permutation(&mut succ) {
            self.next = Some(succ);
        }
        self.remaining = self.remaining.saturating_sub(1);
        Some(Assignment {
            k: self.sizes.k(),
            treatment_of: current,
            group_sizes: self.sizes.clone(),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let r = self.remaining as usize;
        (r, Some(r))
    }
}

impl ExactSizeIterator for Assignments {}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObservedRecord {
    /// 1-based unit id.
    pub unit: usize,
    /// 0-based treatment index.
    pub treatment: usize,
    pub outcome: f64,
}

/// What the experimenter sees: each unit's treatment and single observed outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedData {
    k: u32,
    records: Vec<ObservedRecord>,
    group_sizes: Vec<usize>,
}

impl ObservedData {
    pub fn new(k: u32, records: Vec<ObservedRecord>) -> Result<Self> {
        let j = n_treatments(k);
        if records.is_empty() {
            return Err(Error::dimension("observed data has no records"));
        }
        let mut group_sizes = vec![0usize; j];
        for r in &records {
            if r.treatment >= j {
                return Err(Error::dimension(format!(
                    "unit {} has treatment index {}, expected 1..={j}",
                    r.unit,
                    r.treatment + 1
                )));
            }
            if !r.outcome.is_finite() {
                return Err(Error::NonFinite {
                    value: r.outcome,
                    location: format!("outcome of unit {}", r.unit),
                });
            }
            group_sizes[r.treatment] += 1;
        }
        Ok(Self {
            k,
            records,
            group_sizes,
        })
    }

    /// Convenience constructor from `(treatment, outcome)` pairs; units are numbered from 1.
    pub fn from_pairs(k: u32, pairs: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let records = pairs
            .into_iter()
            .enumerate()
            .map(|(i, (treatment, outcome))| ObservedRecord {
                unit: i + 1,
                treatment,
                outcome,
            })
            .collect();
        Self::new(k, records)
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn n_units(&self) -> usize {
        self.records.len()
    }

    pub fn n_treatments(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn records(&self) -> &[ObservedRecord] {
        &self.records
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.outcome).collect()
    }

    /// Per-group counts; may contain zeros.
    pub fn group_counts(&self) -> &[usize] {
        &self.group_sizes
    }

    pub fn group_sizes(&self) -> Result<GroupSizes> {
        GroupSizes::for_design(self.k, self.group_sizes.clone())
    }

    pub(crate) fn require_replicates(&self, min: usize, reason: &'static str) -> Result<()> {
        self.group_sizes()?.require_at_least(min, reason)
    }

    /// Outcomes grouped by treatment, in record order.
    pub fn groups(&self) -> Vec<Vec<f64>> {
        let mut groups = vec![Vec::new(); self.group_sizes.len()];
        for r in &self.records {
            groups[r.treatment].push(r.outcome);
        }
        groups
    }

    /// Same data with every outcome mapped through `f`.
    pub fn map_outcomes(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let records = self
            .records
            .iter()
            .map(|r| ObservedRecord {
                outcome: f(r.outcome),
                ..*r
            })
            .collect();
        Self::new(self.k, records)
    }
}

/// Reveals `Y_i(z_j)` for each unit's assigned treatment and nothing else.
pub fn observe(table: &PotentialOutcomeTable, a: &Assignment) -> Result<ObservedData> {
    if table.k() != a.k() || table.n_units() != a.n_units() {
        return Err(Error::dimension(format!(
            "table has K={}, N={} but assignment has K={}, N={}",
            table.k(),
            table.n_units(),
            a.k(),
            a.n_units()
        )));
    }
    let records = a
        .treatment_of()
        .iter()
        .enumerate()
        .map(|(i, &t)| ObservedRecord {
            unit: i + 1,
            treatment: t,
            outcome: table.value(i, t),
        })
        .collect();
    ObservedData::new(a.k(), records)
}

pub fn group_means(obs: &ObservedData) -> Result<Vec<f64>> {
    obs.require_replicates(1, "group mean needs at least one unit")?;
    Ok(obs.groups().iter().map(|g| crate::stats::mean(g)).collect())
}

/// `s^2(z_j)` with divisor `n_j - 1`.
pub fn group_sample_variances(obs: &ObservedData) -> Result<Vec<f64>> {
    obs.require_replicates(2, "Neymanian variance needs two replicates")?;
    Ok(obs
        .groups()
        .iter()
        .map(|g| {
            let m = crate::stats::mean(g);
            let ss: crate::stats::CompensatedSum = g.iter().map(|y| (y - m) * (y - m)).collect();
            ss.value() / (g.len() - 1) as f64
        })
        .collect())
}
