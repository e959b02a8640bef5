//! The finite population of potential outcomes and the unobservable
//! quantities derived from it.
//!
//! Every second moment here uses the divisor `N - 1`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::assignment::GroupSizes;
use crate::design::{build_model_matrix, n_treatments, ModelMatrix};
use crate::error::{Error, Result};
use crate::stats::{CompensatedMatrix, CompensatedSum};

/// `N x 2^K` table with entry `(i, j) = Y_i(z_{j+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomeTable {
    k: u32,
    values: DMatrix<f64>,
}

impl PotentialOutcomeTable {
    pub fn from_rows(k: u32, rows: Vec<Vec<f64>>) -> Result<Self> {
        let j = n_treatments(k);
        if rows.is_empty() {
            return Err(Error::dimension("potential-outcome table has no units"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != j {
                return Err(Error::dimension(format!(
                    "unit {} has {} potential outcomes, expected 2^K = {j}",
                    i + 1,
                    row.len()
                )));
            }
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    value: row[c],
                    location: format!("unit {}, treatment {}", i + 1, c + 1),
                });
            }
        }
        let n = rows.len();
        let values = DMatrix::from_fn(n, j, |i, c| rows[i][c]);
        Ok(Self { k, values })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn n_units(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_treatments(&self) -> usize {
        self.values.ncols()
    }

    pub fn value(&self, unit: usize, treatment: usize) -> f64 {
        self.values[(unit, treatment)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn unit_row(&self, unit: usize) -> Vec<f64> {
        self.values.row(unit).iter().copied().collect()
    }

    /// `Ybar(z_j)` for every treatment.
    pub fn treatment_means(&self) -> Vec<f64> {
        self.values
            .column_iter()
            .map(|c| c.iter().copied().collect::<CompensatedSum>().value() / c.len() as f64)
            .collect()
    }

    /// Whether `N >= 2^(K+1)`.
    pub fn meets_size_recommendation(&self) -> bool {
        self.n_units() >= 2 * self.n_treatments()
    }

    /// Table with every potential outcome mapped through `f`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let rows = (0..self.n_units())
            .map(|i| self.unit_row(i).into_iter().map(&f).collect())
            .collect();
        Self::from_rows(self.k, rows)
    }

    fn model(&self) -> ModelMatrix {
        build_model_matrix(self.k).expect("table K validated on construction")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectScope {
    /// 0-based unit index.
    Unit(usize),
    Population,
}

/// Factorial effects in canonical label order. Component 0 is twice the
/// mean outcome and carries no causal interpretation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectVector {
    pub values: Vec<f64>,
    pub scope: EffectScope,
}

/// `tau_i = 2^-(K-1) H' Y_i` for the 0-based unit `unit`.
pub fn unit_effects(table: &PotentialOutcomeTable, unit: usize) -> Result<EffectVector> {
    if unit >= table.n_units() {
        return Err(Error::UnitIndex {
            index: unit,
            len: table.n_units(),
        });
    }
    Ok(EffectVector {
        values: table.model().contrast(&table.unit_row(unit)),
        scope: EffectScope::Unit(unit),
    })
}

fn all_unit_effects(table: &PotentialOutcomeTable, model: &ModelMatrix) -> Vec<Vec<f64>> {
    (0..table.n_units())
        .map(|i| model.contrast(&table.unit_row(i)))
        .collect()
}

/// `tau = 2^-(K-1) H' Ybar`.
pub fn population_effects(table: &PotentialOutcomeTable) -> EffectVector {
    EffectVector {
        values: table.model().contrast(&table.treatment_means()),
        scope: EffectScope::Population,
    }
}

/// Population effects as the average of unit effect vectors.
pub fn population_effects_from_units(table: &PotentialOutcomeTable) -> EffectVector {
    let model = table.model();
    let units = all_unit_effects(table, &model);
    let n = units.len() as f64;
    let values = (0..model.dim())
        .map(|c| units.iter().map(|t| t[c]).collect::<CompensatedSum>().value() / n)
        .collect();
    EffectVector {
        values,
        scope: EffectScope::Population,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationMoments {
    /// `S^2(z_j)`.
    pub group_variances: Vec<f64>,
    /// `S(z_j, z_j')`, with `S^2(z_j)` on the diagonal.
    pub group_covariances: DMatrix<f64>,
}

pub fn population_moments(table: &PotentialOutcomeTable) -> Result<PopulationMoments> {
    let n = table.n_units();
    if n < 2 {
        return Err(Error::TooFewUnits(n));
    }
    let means = table.treatment_means();
    let j = table.n_treatments();
    let mut acc = CompensatedMatrix::zeros(j, j);
    for i in 0..n {
        let centered: Vec<f64> = table
            .unit_row(i)
            .iter()
            .zip(&means)
            .map(|(y, m)| y - m)
            .collect();
        acc.add_outer(&centered);
    }
    let group_covariances = acc.scaled(1.0 / (n - 1) as f64);
    Ok(PopulationMoments {
        group_variances: group_covariances.diagonal().iter().copied().collect(),
        group_covariances,
    })
}

/// `(N(N-1))^-1 sum_i (tau_i - tau)(tau_i - tau)'`, the bias of the
/// Neymanian covariance estimator.
pub fn neymanian_bias(table: &PotentialOutcomeTable) -> Result<DMatrix<f64>> {
    let n = table.n_units();
    if n < 2 {
        return Err(Error::TooFewUnits(n));
    }
    let model = table.model();
    let tau = population_effects(table).values;
    let mut acc = CompensatedMatrix::zeros(model.dim(), model.dim());
    for unit in all_unit_effects(table, &model) {
        let d: Vec<f64> = unit.iter().zip(&tau).map(|(a, b)| a - b).collect();
        acc.add_outer(&d);
    }
    Ok(acc.scaled(1.0 / (n as f64 * (n - 1) as f64)))
}

/// Exact randomization covariance of the randomization estimator under
/// complete randomization with group sizes `sizes`:
///
/// `4^-(K-1) sum_j n_j^-1 h_j' h_j S^2(z_j) - (N(N-1))^-1 sum_i (tau_i - tau)(tau_i - tau)'`.
pub fn true_sampling_covariance(
    table: &PotentialOutcomeTable,
    sizes: &GroupSizes,
) -> Result<DMatrix<f64>> {
    if sizes.len() != table.n_treatments() {
        return Err(Error::group_sizes(format!(
            "n-vector length {} != 2^K = {}",
            sizes.len(),
            table.n_treatments()
        )));
    }
    if sizes.total() != table.n_units() {
        return Err(Error::group_sizes(format!(
            "group sizes sum to {} but the table has N = {} units",
            sizes.total(),
            table.n_units()
        )));
    }
    sizes.require_at_least(1, "sampling covariance needs every group non-empty")?;
    let moments = population_moments(table)?;
    let model = table.model();
    let scale = model.effect_scale() * model.effect_scale();
    let mut first = DMatrix::zeros(model.dim(), model.dim());
    for (j, s2) in moments.group_variances.iter().enumerate() {
        first += outer_row(&model, j) * (scale * s2 / sizes.get(j) as f64);
    }
    Ok(first - neymanian_bias(table)?)
}

/// `h_j' h_j` for 0-based row `j` of the model matrix.
pub(crate) fn outer_row(model: &ModelMatrix, j: usize) -> DMatrix<f64> {
    let row = model.row(j);
    DMatrix::from_fn(model.dim(), model.dim(), |a, b| {
        f64::from(row[a]) * f64::from(row[b])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn k1_table() -> PotentialOutcomeTable {
        PotentialOutcomeTable::from_rows(
            1,
            vec![
                vec![1.0, 2.0],
                vec![2.0, 4.0],
                vec![3.0, 6.0],
                vec![4.0, 8.0],
            ],
        )
        .unwrap()
    }

    #[test]
    fn unit_effects_examples() {
        let t = PotentialOutcomeTable::from_rows(1, vec![vec![3.0, 5.0]]).unwrap();
        assert_eq!(unit_effects(&t, 0).unwrap().values, vec![8.0, 2.0]);

        let c = 2.5;
        let t = PotentialOutcomeTable::from_rows(2, vec![vec![c; 4]]).unwrap();
        assert_eq!(unit_effects(&t, 0).unwrap().values, vec![5.0, 0.0, 0.0, 0.0]);

        let t = PotentialOutcomeTable::from_rows(2, vec![vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        assert_eq!(unit_effects(&t, 0).unwrap().values, vec![5.0, 2.0, 1.0, 0.0]);
        assert!(matches!(
            unit_effects(&t, 1),
            Err(Error::UnitIndex { index: 1, len: 1 })
        ));
    }

    #[test]
    fn population_effect_examples() {
        assert_eq!(population_effects(&k1_table()).values, vec![7.5, 2.5]);

        let t = PotentialOutcomeTable::from_rows(
            2,
            vec![vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0, 8.0]],
        )
        .unwrap();
        assert_eq!(unit_effects(&t, 1).unwrap().values, vec![13.0, 2.0, 1.0, 0.0]);
        assert_eq!(population_effects(&t).values, vec![9.0, 2.0, 1.0, 0.0]);
        assert_eq!(population_effects_from_units(&t).values, vec![9.0, 2.0, 1.0, 0.0]);

        let same = PotentialOutcomeTable::from_rows(2, vec![vec![1.0, 4.0, 0.0, 2.0]; 5]).unwrap();
        assert_eq!(
            population_effects(&same).values,
            unit_effects(&same, 3).unwrap().values
        );
    }

    #[test]
    fn moments_examples() {
        let m = population_moments(&k1_table()).unwrap();
        assert_relative_eq!(m.group_variances[0], 5.0 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(m.group_covariances[(0, 1)], 10.0 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(m.group_covariances[(1, 0)], 10.0 / 3.0, max_relative = 1e-14);

        let constant = PotentialOutcomeTable::from_rows(1, vec![vec![2.0, 1.0]; 3]).unwrap();
        assert_eq!(population_moments(&constant).unwrap().group_variances, vec![0.0, 0.0]);

        let one = PotentialOutcomeTable::from_rows(1, vec![vec![2.0, 1.0]]).unwrap();
        assert!(matches!(population_moments(&one), Err(Error::TooFewUnits(1))));
    }

    #[test]
    fn identical_units_have_zero_covariance() {
        let t = PotentialOutcomeTable::from_rows(2, vec![vec![1.0, 4.0, 0.0, 2.0]; 8]).unwrap();
        let sizes = GroupSizes::new(vec![2, 2, 2, 2]).unwrap();
        let cov = true_sampling_covariance(&t, &sizes).unwrap();
        assert!(cov.iter().all(|&v| v == 0.0));
        assert!(neymanian_bias(&t).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_shifts_only_bias_the_null_component() {
        // Y_i(z_j) = a_i + c_j: every non-null contrast is shared, so only the
        // (0, 0) entry of the bias matrix is non-zero.
        let base = [0.0, 1.5, -2.0, 4.0];
        let rows = (0..8)
            .map(|i| base.iter().map(|c| c + i as f64 * 0.75).collect())
            .collect();
        let t = PotentialOutcomeTable::from_rows(2, rows).unwrap();
        let bias = neymanian_bias(&t).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                if (r, c) == (0, 0) {
                    assert!(bias[(r, c)] > 0.0);
                } else {
                    assert!(bias[(r, c)].abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sampling_covariance_validates_sizes() {
        let t = k1_table();
        assert!(true_sampling_covariance(&t, &GroupSizes::new(vec![2, 3]).unwrap()).is_err());
        assert!(true_sampling_covariance(&t, &GroupSizes::new(vec![4, 0]).unwrap()).is_err());
        assert!(
            true_sampling_covariance(&t, &GroupSizes::new(vec![1, 1, 1, 1]).unwrap()).is_err()
        );
        let cov = true_sampling_covariance(&t, &GroupSizes::new(vec![2, 2]).unwrap()).unwrap();
        assert!(crate::stats::is_symmetric(&cov));
    }

    #[test]
    fn table_validation() {
        assert!(PotentialOutcomeTable::from_rows(1, vec![]).is_err());
        assert!(PotentialOutcomeTable::from_rows(1, vec![vec![1.0]]).is_err());
        assert!(PotentialOutcomeTable::from_rows(1, vec![vec![1.0, f64::INFINITY]]).is_err());
    }
}
