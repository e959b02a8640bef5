//! The 2^K model matrix `H`.
//!
//! Factors take levels -1 and +1. Column 0 of `H` is the null effect (all
//! ones), columns 1..=K are the main effects and the remaining columns are
//! interactions, grouped by order and ordered lexicographically on the
//! sorted factor indices within an order. Row `j` (0-based) of the main-effect
//! block is the treatment combination `z_{j+1}`; row 0 is all -1 and the last
//! row is all +1.
//!
//! ```
//! use factorial_ri::design::{build_model_matrix, check_orthogonality};
//!
//! let h = build_model_matrix(2).unwrap();
//! assert_eq!(h.row(0), &[1, -1, -1, 1]);
//! assert!(check_orthogonality(&h));
//! ```

use std::fmt;

use itertools::Itertools;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest supported number of factors.
///
/// Entries are stored densely, so memory grows as 4^K bytes.
pub const MAX_FACTORS: u32 = 16;

fn check_k(k: u32) -> Result<()> {
    if (1..=MAX_FACTORS).contains(&k) {
        Ok(())
    } else {
        Err(Error::FactorCount { k, max: MAX_FACTORS })
    }
}

/// Number of treatment combinations, 2^K.
pub fn n_treatments(k: u32) -> usize {
    1usize << k
}

/// A factorial effect identified by the (sorted, 1-based) factors it involves.
/// The empty set is the null effect.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EffectLabel {
    factors: Vec<u32>,
}

impl EffectLabel {
    pub fn null() -> Self {
        Self {
            factors: Vec::new(),
        }
    }

    pub fn new(mut factors: Vec<u32>) -> Self {
        factors.sort_unstable();
        factors.dedup();
        Self { factors }
    }

    pub fn factors(&self) -> &[u32] {
        &self.factors
    }

    /// 0 for the null effect, 1 for main effects, 2 for two-way interactions, ...
    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn is_null(&self) -> bool {
        self.factors.is_empty()
    }
}

/// `null`, `1`, `2`, `1:2`, ...
impl fmt::Display for EffectLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.factors.is_empty() {
            f.write_str("null")
        } else {
            write!(f, "{}", self.factors.iter().join(":"))
        }
    }
}

impl Serialize for EffectLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// Effect labels in canonical column order.
pub fn effect_labels(k: u32) -> Result<Vec<EffectLabel>> {
    check_k(k)?;
    let mut labels = Vec::with_capacity(n_treatments(k));
    labels.push(EffectLabel::null());
    for size in 1..=k as usize {
        labels.extend((1..=k).combinations(size).map(EffectLabel::new));
    }
    Ok(labels)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TreatmentCombination {
    /// 1-based index `j` of `z_j`.
    pub index: usize,
    pub levels: Vec<i8>,
}

/// Level of `factor` (1-based) in treatment row `row` (0-based).
///
/// Main-effect column `factor` is made of blocks of 2^(K-factor) copies of -1
/// followed by the same number of +1, so the level is read off bit
/// `K - factor` of the row index.
fn level(k: u32, row: usize, factor: u32) -> i8 {
    if (row >> (k - factor)) & 1 == 1 {
        1
    } else {
        -1
    }
}

pub fn treatment_combinations(k: u32) -> Result<Vec<TreatmentCombination>> {
    check_k(k)?;
    Ok((0..n_treatments(k))
        .map(|row| TreatmentCombination {
            index: row + 1,
            levels: (1..=k).map(|f| level(k, row, f)).collect(),
        })
        .collect())
}

/// 0-based treatment index whose combination equals `levels`.
pub fn treatment_index(levels: &[i8]) -> Option<usize> {
    let mut index = 0usize;
    for &l in levels {
        index <<= 1;
        match l {
            1 => index |= 1,
            -1 => {}
            _ => return None,
        }
    }
    Some(index)
}

/// Square ±1 model matrix, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelMatrix {
    k: u32,
    dim: usize,
    entries: Vec<i8>,
    labels: Vec<EffectLabel>,
}

pub fn build_model_matrix(k: u32) -> Result<ModelMatrix> {
    let labels = effect_labels(k)?;
    let dim = n_treatments(k);
    let main: Vec<Vec<i8>> = (1..=k)
        .map(|f| (0..dim).map(|row| level(k, row, f)).collect())
        .collect();
    let mut entries = vec![0i8; dim * dim];
    for (col, label) in labels.iter().enumerate() {
        for row in 0..dim {
            entries[row * dim + col] = label
                .factors()
                .iter()
                .map(|&f| main[f as usize - 1][row])
                .product();
        }
    }
    Ok(ModelMatrix {
        k,
        dim,
        entries,
        labels,
    })
}

impl ModelMatrix {
    /// Wraps raw row-major entries. Entries must be ±1; no orthogonality is
    /// implied, see [`check_orthogonality`].
    pub fn from_entries(k: u32, entries: Vec<i8>) -> Result<Self> {
        let labels = effect_labels(k)?;
        let dim = n_treatments(k);
        if entries.len() != dim * dim {
            return Err(Error::dimension(format!(
                "expected {} entries for K={k}, got {}",
                dim * dim,
                entries.len()
            )));
        }
        if let Some(pos) = entries.iter().position(|&e| e != 1 && e != -1) {
            return Err(Error::dimension(format!(
                "entry ({}, {}) is {}, expected -1 or +1",
                pos / dim,
                pos % dim,
                entries[pos]
            )));
        }
        Ok(Self {
            k,
            dim,
            entries,
            labels,
        })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[i8] {
        &self.entries
    }

    pub fn labels(&self) -> &[EffectLabel] {
        &self.labels
    }

    pub fn entry(&self, row: usize, col: usize) -> i8 {
        self.entries[row * self.dim + col]
    }

    /// Row `j` (0-based), i.e. `h̃_j` as used for treatment `z_{j+1}`.
    pub fn row(&self, j: usize) -> &[i8] {
        &self.entries[j * self.dim..(j + 1) * self.dim]
    }

    pub fn row_f64(&self, j: usize) -> Vec<f64> {
        self.row(j).iter().map(|&e| f64::from(e)).collect()
    }

    pub fn column(&self, col: usize) -> Vec<i8> {
        (0..self.dim).map(|row| self.entry(row, col)).collect()
    }

    /// Scale 2^-(K-1) applied to contrasts of potential outcomes.
    pub fn effect_scale(&self) -> f64 {
        2.0 / self.dim as f64
    }

    /// `2^-(K-1) H' y` for a vector `y` indexed by treatment.
    pub fn contrast(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.dim, "contrast input has wrong length");
        let scale = self.effect_scale();
        (0..self.dim)
            .map(|col| {
                let s: f64 = y
                    .iter()
                    .enumerate()
                    .map(|(row, v)| f64::from(self.entry(row, col)) * v)
                    .sum();
                scale * s
            })
            .collect()
    }
}

fn pack_bits(dim: usize, negative: impl Fn(usize) -> bool) -> Vec<u64> {
    let mut words = vec![0u64; dim.div_ceil(64)];
    for i in 0..dim {
        if negative(i) {
            words[i / 64] |= 1 << (i % 64);
        }
    }
    words
}

/// `dim - 2 * (number of sign disagreements)`, exact for ±1 vectors.
fn signed_dot(dim: usize, a: &[u64], b: &[u64]) -> i64 {
    let disagreements: u32 = a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum();
    dim as i64 - 2 * i64::from(disagreements)
}

fn gram_is_scaled_identity(dim: usize, vectors: &[Vec<u64>]) -> bool {
    let n = dim as i64;
    (0..vectors.len()).all(|a| {
        (a..vectors.len()).all(|b| {
            let expected = if a == b { n } else { 0 };
            signed_dot(dim, &vectors[a], &vectors[b]) == expected
        })
    })
}

/// True iff `H H' = H' H = 2^K I` holds exactly.
///
/// The products are evaluated in integer arithmetic on sign-packed rows and
/// columns. Any entry outside {-1, +1} makes the check fail.
pub fn check_orthogonality(m: &ModelMatrix) -> bool {
    let dim = m.dim;
    if m.entries.len() != dim * dim || m.entries.iter().any(|&e| e != 1 && e != -1) {
        return false;
    }
    let rows: Vec<Vec<u64>> = (0..dim)
        .map(|r| pack_bits(dim, |c| m.entry(r, c) < 0))
        .collect();
    let cols: Vec<Vec<u64>> = (0..dim)
        .map(|c| pack_bits(dim, |r| m.entry(r, c) < 0))
        .collect();
    gram_is_scaled_identity(dim, &rows) && gram_is_scaled_identity(dim, &cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integer_product(m: &ModelMatrix, transpose_first: bool) -> Vec<i64> {
        let d = m.dim();
        let mut out = vec![0i64; d * d];
        for a in 0..d {
            for b in 0..d {
                out[a * d + b] = (0..d)
                    .map(|i| {
                        let (x, y) = if transpose_first {
                            (m.entry(i, a), m.entry(i, b))
                        } else {
                            (m.entry(a, i), m.entry(b, i))
                        };
                        i64::from(x) * i64::from(y)
                    })
                    .sum();
            }
        }
        out
    }

    #[test]
    fn k2_matches_worked_example() {
        let h = build_model_matrix(2).unwrap();
        assert_eq!(h.row(0), &[1, -1, -1, 1]);
        assert_eq!(h.row(1), &[1, -1, 1, -1]);
        assert_eq!(h.row(2), &[1, 1, -1, -1]);
        assert_eq!(h.row(3), &[1, 1, 1, 1]);
    }

    #[test]
    fn k1_rows() {
        let h = build_model_matrix(1).unwrap();
        assert_eq!(h.row(0), &[1, -1]);
        assert_eq!(h.row(1), &[1, 1]);
    }

    #[test]
    fn k3_three_way_interaction() {
        let h = build_model_matrix(3).unwrap();
        assert_eq!(h.column(7), vec![-1, 1, 1, -1, 1, -1, -1, 1]);
    }

    #[test]
    fn labels_canonical_order() {
        let names = |k| {
            effect_labels(k)
                .unwrap()
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
        };
        assert_eq!(names(1), ["null", "1"]);
        assert_eq!(names(2), ["null", "1", "2", "1:2"]);
        assert_eq!(
            names(3),
            ["null", "1", "2", "3", "1:2", "1:3", "2:3", "1:2:3"]
        );
    }

    #[test]
    fn treatment_combinations_follow_rows() {
        let z = treatment_combinations(2).unwrap();
        let levels: Vec<_> = z.iter().map(|t| t.levels.clone()).collect();
        assert_eq!(levels, vec![vec![-1, -1], vec![-1, 1], vec![1, -1], vec![1, 1]]);
        assert_eq!(z[0].index, 1);
        assert_eq!(treatment_combinations(1).unwrap()[1].levels, vec![1]);
        assert_eq!(treatment_combinations(3).unwrap()[4].levels, vec![1, -1, -1]);
        for t in treatment_combinations(4).unwrap() {
            assert_eq!(treatment_index(&t.levels), Some(t.index - 1));
        }
        assert_eq!(treatment_index(&[1, 0]), None);
    }

    #[test]
    fn k_out_of_range() {
        assert!(matches!(
            build_model_matrix(0),
            Err(Error::FactorCount { k: 0, max: 16 })
        ));
        assert!(build_model_matrix(17).is_err());
        assert!(effect_labels(0).is_err());
        assert!(treatment_combinations(20).is_err());
    }

    #[test]
    fn orthogonality_detects_flip() {
        let h = build_model_matrix(2).unwrap();
        assert!(check_orthogonality(&h));
        let mut entries = h.entries().to_vec();
        entries[5] = -entries[5];
        let flipped = ModelMatrix::from_entries(2, entries).unwrap();
        assert!(!check_orthogonality(&flipped));
        assert!(check_orthogonality(&build_model_matrix(6).unwrap()));
    }

    #[test]
    fn from_entries_validates() {
        assert!(ModelMatrix::from_entries(1, vec![1, 1, 1]).is_err());
        assert!(ModelMatrix::from_entries(1, vec![1, 0, 1, 1]).is_err());
    }

    #[test]
    fn packed_check_agrees_with_naive_products() {
        for k in 1..=5 {
            let h = build_model_matrix(k).unwrap();
            let d = h.dim() as i64;
            for transpose_first in [false, true] {
                let p = integer_product(&h, transpose_first);
                for a in 0..h.dim() {
                    for b in 0..h.dim() {
                        let expected = if a == b { d } else { 0 };
                        assert_eq!(p[a * h.dim() + b], expected);
                    }
                }
            }
        }
    }

    #[test]
    fn structural_invariants() {
        for k in 1..=6 {
            let h = build_model_matrix(k).unwrap();
            let d = h.dim();
            assert!(h.column(0).iter().all(|&e| e == 1));
            for c in 1..d {
                assert_eq!(h.column(c).iter().map(|&e| i32::from(e)).sum::<i32>(), 0);
            }
            for (c, label) in h.labels().iter().enumerate() {
                for r in 0..d {
                    let product: i8 = label
                        .factors()
                        .iter()
                        .map(|&f| h.entry(r, f as usize))
                        .product();
                    assert_eq!(h.entry(r, c), product);
                }
            }
            assert!(h.row(0)[1..=k as usize].iter().all(|&e| e == -1));
            assert!(h.row(d - 1).iter().all(|&e| e == 1));
            assert_eq!(h, build_model_matrix(k).unwrap());
        }
    }
}
