//! Certification of the estimator identities on concrete data.
//!
//! Two kinds of evidence are produced:
//!
//! - equivalence checks on a single observed data set (randomization vs.
//!   regression point estimates and covariances, leverages, residuals, the
//!   balanced-design homoscedastic reduction);
//! - an exact oracle that walks every assignment of a potential-outcome table
//!   and compares the randomization distribution of the estimator with its
//!   closed-form mean, covariance and the Neymanian bias.
//!
//! All reductions are ordered sequential folds so reports are byte-stable.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::assignment::{
    draw_assignment_with, enumerate_assignments, observe, GroupSizes, ObservedData, RNG_ALGORITHM,
};
use crate::design::{build_model_matrix, n_treatments};
use crate::error::{Error, Result};
use crate::estimators::{
    balanced_covariance, cov_he, cov_hw, estimate_ri, fit_ols, neymanian_covariance, ri_effects,
};
use crate::population::{
    neymanian_bias, outer_row, population_effects, true_sampling_covariance, EffectVector,
    PotentialOutcomeTable,
};
use crate::stats::{
    matrix_rows, max_abs_diff, max_abs_diff_diagonal, max_abs_diff_matrix, CompensatedMatrix,
    CompensatedSum,
};

pub const POINT_TOLERANCE: f64 = 1e-10;
pub const COVARIANCE_TOLERANCE: f64 = 1e-10;
pub const LEVERAGE_TOLERANCE: f64 = 1e-12;
pub const XTX_IDENTITY_TOLERANCE: f64 = 1e-12;
pub const RESIDUAL_TOLERANCE: f64 = 1e-12;
pub const BALANCED_TOLERANCE: f64 = 1e-12;
pub const ORACLE_MEAN_TOLERANCE: f64 = 1e-10;
pub const ORACLE_COVARIANCE_TOLERANCE: f64 = 1e-9;
pub const CONSERVATIVE_TOLERANCE: f64 = 1e-10;

pub const CHECK_POINT: &str = "point_equivalence";
pub const CHECK_COVARIANCE: &str = "covariance_equivalence";
pub const CHECK_LEVERAGE: &str = "leverage";
pub const CHECK_XTX: &str = "xtx_inverse_sandwich";
pub const CHECK_RESIDUAL: &str = "residual_identity";
pub const CHECK_BALANCED_HE: &str = "balanced_homoscedastic_diagonal";
pub const CHECK_BALANCED_FORM: &str = "balanced_closed_form";
pub const CHECK_UNBIASED: &str = "oracle_unbiasedness";
pub const CHECK_SAMPLING_COV: &str = "oracle_sampling_covariance";
pub const CHECK_BIAS: &str = "oracle_neymanian_bias";
pub const CHECK_CONSERVATIVE: &str = "oracle_conservative_diagonal";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub discrepancy: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckResult {
    pub fn new(name: &str, discrepancy: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_owned(),
            discrepancy,
            tolerance,
            // NaN never passes.
            pass: discrepancy <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InstanceSummary {
    pub k: u32,
    pub n_units: usize,
    pub group_sizes: Vec<usize>,
    pub fingerprint: String,
}

impl InstanceSummary {
    pub fn of(obs: &ObservedData) -> Self {
        Self {
            k: obs.k(),
            n_units: obs.n_units(),
            group_sizes: obs.group_counts().to_vec(),
            fingerprint: fingerprint(obs),
        }
    }
}

/// SHA-256 over K and every record's unit, treatment and outcome bits.
pub fn fingerprint(obs: &ObservedData) -> String {
    let mut h = Sha256::new();
    h.update(obs.k().to_le_bytes());
    for r in obs.records() {
        h.update((r.unit as u64).to_le_bytes());
        h.update((r.treatment as u64).to_le_bytes());
        h.update(r.outcome.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub instance: usize,
    pub check: String,
    pub discrepancy: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    /// One entry per check; in aggregated reports the discrepancy is the worst seen.
    pub checks: Vec<CheckResult>,
    pub instances: Vec<InstanceSummary>,
    pub failures: Vec<Failure>,
}

impl EquivalenceReport {
    pub fn empty() -> Self {
        Self {
            checks: Vec::new(),
            instances: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass) && self.failures.is_empty()
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Folds a single-instance result into this aggregate.
    fn absorb(&mut self, instance: usize, summary: InstanceSummary, checks: Vec<CheckResult>) {
        for c in checks {
            if !c.pass {
                self.failures.push(Failure {
                    instance,
                    check: c.name.clone(),
                    discrepancy: c.discrepancy,
                    tolerance: c.tolerance,
                });
            }
            match self.checks.iter_mut().find(|a| a.name == c.name) {
                Some(agg) => {
                    // NaN is sticky.
                    if c.discrepancy > agg.discrepancy || c.discrepancy.is_nan() {
                        agg.discrepancy = c.discrepancy;
                    }
                    agg.pass &= c.pass;
                }
                None => self.checks.push(c),
            }
        }
        self.instances.push(summary);
    }
}

/// Randomization vs. OLS point estimates. Works with single-replicate groups.
pub fn check_point_equivalence(obs: &ObservedData, tol: f64) -> Result<CheckResult> {
    let ri = ri_effects(obs)?;
    let ols = fit_ols(obs)?.effects();
    Ok(CheckResult::new(CHECK_POINT, max_abs_diff(&ri, &ols), tol))
}

/// Neymanian vs. HC2 covariance, entrywise.
pub fn check_cov_equivalence(obs: &ObservedData, tol: f64) -> Result<CheckResult> {
    let ney = estimate_ri(obs)?.covariance;
    let fit = fit_ols(obs)?;
    let hw = cov_hw(&fit, obs)?;
    Ok(CheckResult::new(
        CHECK_COVARIANCE,
        max_abs_diff_matrix(&ney, &hw),
        tol,
    ))
}

/// Every leverage equals `1/n_j` and they sum to `2^K`.
pub fn check_leverages(obs: &ObservedData, tol: f64) -> Result<CheckResult> {
    let fit = fit_ols(obs)?;
    let per_unit = fit
        .leverages
        .iter()
        .zip(&fit.design.treatments)
        .map(|(h, &t)| (h - 1.0 / fit.group_sizes.get(t) as f64).abs())
        .fold(0.0, f64::max);
    let total: CompensatedSum = fit.leverages.iter().copied().collect();
    let trace = (total.value() - n_treatments(obs.k()) as f64).abs();
    Ok(CheckResult::new(CHECK_LEVERAGE, per_unit.max(trace), tol))
}

/// `(X'X)^-1 h_j' h_j (X'X)^-1 = (4^K n_j^2)^-1 h_j' h_j` for every `j`, and
/// the closed-form inverse times the directly multiplied `X'X` is `I`.
pub fn check_xtx_identities(obs: &ObservedData, tol: f64) -> Result<CheckResult> {
    let fit = fit_ols(obs)?;
    let model = build_model_matrix(obs.k())?;
    let inv = &fit.xtx_inverse;
    let d = model.dim();
    let mut worst = max_abs_diff_matrix(&(fit.design.xtx() * inv), &DMatrix::identity(d, d));
    for j in 0..d {
        let outer = outer_row(&model, j);
        let lhs = inv * &outer * inv;
        let nj = fit.group_sizes.get(j) as f64;
        let rhs = outer / ((d * d) as f64 * nj * nj);
        worst = worst.max(max_abs_diff_matrix(&lhs, &rhs));
    }
    Ok(CheckResult::new(CHECK_XTX, worst, tol))
}

/// Group-mean residuals agree with `Y - X beta_hat`.
pub fn check_residual_identity(obs: &ObservedData, tol: f64) -> Result<CheckResult> {
    let fit = fit_ols(obs)?;
    Ok(CheckResult::new(
        CHECK_RESIDUAL,
        max_abs_diff(&fit.residuals, &fit.residuals_from_matrix(obs)),
        tol,
    ))
}

/// Diagonal of the homoscedastic covariance vs. diagonal of HC2 in a balanced
/// design. Off-diagonal entries are not compared.
pub fn check_balanced_he(obs: &ObservedData, tol: f64) -> Result<CheckResult> {
    let sizes = obs.group_sizes()?;
    if sizes.common_size().is_none() {
        return Err(Error::Unbalanced {
            sizes: sizes.as_slice().to_vec(),
        });
    }
    let fit = fit_ols(obs)?;
    let he = cov_he(&fit, obs)?;
    let hw = cov_hw(&fit, obs)?;
    Ok(CheckResult::new(
        CHECK_BALANCED_HE,
        max_abs_diff_diagonal(&he, &hw),
        tol,
    ))
}

/// Balanced closed form against HC2, entrywise.
pub fn check_balanced_form(obs: &ObservedData, tol: f64) -> Result<CheckResult> {
    let bal = balanced_covariance(obs)?;
    let fit = fit_ols(obs)?;
    let hw = cov_hw(&fit, obs)?;
    Ok(CheckResult::new(
        CHECK_BALANCED_FORM,
        max_abs_diff_matrix(&bal, &hw),
        tol,
    ))
}

/// Full-matrix discrepancy between the homoscedastic and HC2 covariances,
/// for any design with `n_j >= 2`.
pub fn he_hw_discrepancy(obs: &ObservedData) -> Result<f64> {
    let fit = fit_ols(obs)?;
    Ok(max_abs_diff_matrix(&cov_he(&fit, obs)?, &cov_hw(&fit, obs)?))
}

/// Runs every checker applicable to `obs` at the default tolerances.
pub fn check_instance(obs: &ObservedData) -> Result<Vec<CheckResult>> {
    let mut checks = vec![check_point_equivalence(obs, POINT_TOLERANCE)?];
    let sizes = obs.group_sizes()?;
    if sizes.first_below(2).is_none() {
        checks.push(check_cov_equivalence(obs, COVARIANCE_TOLERANCE)?);
    }
    checks.push(check_leverages(obs, LEVERAGE_TOLERANCE)?);
    checks.push(check_xtx_identities(obs, XTX_IDENTITY_TOLERANCE)?);
    checks.push(check_residual_identity(obs, RESIDUAL_TOLERANCE)?);
    if sizes.common_size().is_some_and(|r| r >= 2) {
        checks.push(check_balanced_he(obs, BALANCED_TOLERANCE)?);
        checks.push(check_balanced_form(obs, BALANCED_TOLERANCE)?);
    }
    Ok(checks)
}

/// Single-instance report.
pub fn verify_observed(obs: &ObservedData) -> Result<EquivalenceReport> {
    let mut report = EquivalenceReport::empty();
    report.absorb(0, InstanceSummary::of(obs), check_instance(obs)?);
    Ok(report)
}

fn serialize_rows<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    matrix_rows(m).serialize(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub k: u32,
    pub n_units: usize,
    pub group_sizes: GroupSizes,
    pub assignment_count: u64,
    pub population_effects: EffectVector,
    pub mean_estimate: EffectVector,
    #[serde(serialize_with = "serialize_rows")]
    pub empirical_covariance: DMatrix<f64>,
    #[serde(serialize_with = "serialize_rows")]
    pub true_covariance: DMatrix<f64>,
    #[serde(serialize_with = "serialize_rows")]
    pub mean_neymanian_covariance: DMatrix<f64>,
    #[serde(serialize_with = "serialize_rows")]
    pub bias: DMatrix<f64>,
    /// Smallest diagonal entry of `mean Neymanian - true covariance`.
    pub min_bias_diagonal: f64,
    pub discrepancies: Vec<CheckResult>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.discrepancies.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.discrepancies.iter().find(|c| c.name == name)
    }
}

/// Exhaustive randomization oracle.
///
/// Walks every assignment with group sizes `sizes` and checks that the
/// randomization estimator is unbiased for the population effects, that its
/// covariance over assignments (divisor = assignment count) equals the closed
/// form, and that the mean Neymanian covariance exceeds it by exactly the bias
/// matrix.
pub fn run_oracle(table: &PotentialOutcomeTable, sizes: &GroupSizes) -> Result<OracleReport> {
    if sizes.len() != table.n_treatments() || sizes.total() != table.n_units() {
        return Err(Error::group_sizes(format!(
            "group sizes {sizes} do not match a table with 2^K = {} treatments and N = {} units",
            table.n_treatments(),
            table.n_units()
        )));
    }
    sizes.require_at_least(2, "Neymanian variance needs two replicates")?;
    let d = table.n_treatments();

    let mut effect_sums = vec![CompensatedSum::new(); d];
    let mut ney_sum = CompensatedMatrix::zeros(d, d);
    let mut count = 0u64;
    for a in enumerate_assignments(sizes)? {
        let obs = observe(table, &a)?;
        for (acc, v) in effect_sums.iter_mut().zip(ri_effects(&obs)?) {
            acc.add(v);
        }
        ney_sum.add(&neymanian_covariance(&obs)?);
        count += 1;
    }
    let n = count as f64;
    let mean: Vec<f64> = effect_sums.iter().map(|s| s.value() / n).collect();
    let mean_ney = ney_sum.scaled(1.0 / n);

    // Second pass for a centred covariance.
    let mut spread = CompensatedMatrix::zeros(d, d);
    for a in enumerate_assignments(sizes)? {
        let obs = observe(table, &a)?;
        let centred: Vec<f64> = ri_effects(&obs)?
            .iter()
            .zip(&mean)
            .map(|(x, m)| x - m)
            .collect();
        spread.add_outer(&centred);
    }
    let empirical = spread.scaled(1.0 / n);

    let tau = population_effects(table);
    let true_cov = true_sampling_covariance(table, sizes)?;
    let bias = neymanian_bias(table)?;
    let excess = &mean_ney - &true_cov;
    let min_bias_diagonal = excess.diagonal().iter().copied().fold(f64::INFINITY, f64::min);

    let discrepancies = vec![
        CheckResult::new(
            CHECK_UNBIASED,
            max_abs_diff(&mean, &tau.values),
            ORACLE_MEAN_TOLERANCE,
        ),
        CheckResult::new(
            CHECK_SAMPLING_COV,
            max_abs_diff_matrix(&empirical, &true_cov),
            ORACLE_COVARIANCE_TOLERANCE,
        ),
        CheckResult::new(
            CHECK_BIAS,
            max_abs_diff_matrix(&excess, &bias),
            ORACLE_COVARIANCE_TOLERANCE,
        ),
        CheckResult::new(
            CHECK_CONSERVATIVE,
            (-min_bias_diagonal).max(0.0),
            CONSERVATIVE_TOLERANCE,
        ),
    ];

    Ok(OracleReport {
        k: table.k(),
        n_units: table.n_units(),
        group_sizes: sizes.clone(),
        assignment_count: count,
        population_effects: tau.clone(),
        mean_estimate: EffectVector {
            values: mean,
            scope: tau.scope,
        },
        empirical_covariance: empirical,
        true_covariance: true_cov,
        mean_neymanian_covariance: mean_ney,
        bias,
        min_bias_diagonal,
        discrepancies,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeDistribution {
    /// Integers uniform on `[-9, 9]`.
    Integer,
    /// Reals uniform on `[-9, 9)`.
    Continuous,
}

impl OutcomeDistribution {
    fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            OutcomeDistribution::Integer => f64::from(rng.gen_range(-9i32..=9)),
            OutcomeDistribution::Continuous => rng.gen_range(-9.0..9.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupSizeSampler {
    /// Each `n_j` uniform on `[min, max]`.
    Unbalanced { min: usize, max: usize },
    /// A common replicate count drawn uniformly from the list.
    Balanced { replicates: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuzzConfig {
    pub k_max: u32,
    pub instances: usize,
    pub seed: u64,
    pub outcomes: OutcomeDistribution,
    pub group_sizes: GroupSizeSampler,
}

impl FuzzConfig {
    pub const K_MAX_LIMIT: u32 = 4;

    /// Unbalanced designs with `n_j` in `[2, 6]` and integer outcomes.
    pub fn unbalanced(k_max: u32, instances: usize, seed: u64) -> Self {
        Self {
            k_max,
            instances,
            seed,
            outcomes: OutcomeDistribution::Integer,
            group_sizes: GroupSizeSampler::Unbalanced { min: 2, max: 6 },
        }
    }

    pub fn balanced(k_max: u32, replicates: Vec<usize>, instances: usize, seed: u64) -> Self {
        Self {
            k_max,
            instances,
            seed,
            outcomes: OutcomeDistribution::Integer,
            group_sizes: GroupSizeSampler::Balanced { replicates },
        }
    }

    fn validate(&self) -> Result<()> {
        if !(1..=Self::K_MAX_LIMIT).contains(&self.k_max) {
            return Err(Error::FactorCount {
                k: self.k_max,
                max: Self::K_MAX_LIMIT,
            });
        }
        match &self.group_sizes {
            GroupSizeSampler::Unbalanced { min, max } if *min < 2 || min > max => Err(
                Error::group_sizes(format!("fuzz group-size range [{min}, {max}] must have min >= 2")),
            ),
            GroupSizeSampler::Balanced { replicates }
                if replicates.is_empty() || replicates.iter().any(|&r| r < 2) =>
            {
                Err(Error::group_sizes(
                    "fuzz replicate counts must be non-empty and >= 2",
                ))
            }
            _ => Ok(()),
        }
    }
}

/// One fuzzed experiment: a random population, a random assignment and the
/// resulting observed data.
#[derive(Debug, Clone)]
pub struct FuzzInstance {
    pub table: PotentialOutcomeTable,
    pub sizes: GroupSizes,
    pub observed: ObservedData,
}

/// Generates fuzz instances deterministically from the config's seed.
pub fn fuzz_instances(config: &FuzzConfig) -> Result<Vec<FuzzInstance>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.instances)
        .map(|_| {
            let k = rng.gen_range(1..=config.k_max);
            let j = n_treatments(k);
            let sizes = match &config.group_sizes {
                GroupSizeSampler::Unbalanced { min, max } => {
                    (0..j).map(|_| rng.gen_range(*min..=*max)).collect()
                }
                GroupSizeSampler::Balanced { replicates } => {
                    vec![replicates[rng.gen_range(0..replicates.len())]; j]
                }
            };
            let sizes = GroupSizes::for_design(k, sizes)?;
            let rows = (0..sizes.total())
                .map(|_| (0..j).map(|_| config.outcomes.sample(&mut rng)).collect())
                .collect();
            let table = PotentialOutcomeTable::from_rows(k, rows)?;
            let assignment = draw_assignment_with(&sizes, &mut rng);
            let observed = observe(&table, &assignment)?;
            Ok(FuzzInstance {
                table,
                sizes,
                observed,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuzzReport {
    pub config: FuzzConfig,
    pub rng: &'static str,
    pub passed: bool,
    #[serde(flatten)]
    pub report: EquivalenceReport,
}

/// Runs every applicable checker on `config.instances` fuzzed experiments and
/// aggregates the worst discrepancy per check.
pub fn fuzz_suite(config: &FuzzConfig) -> Result<FuzzReport> {
    let mut report = EquivalenceReport::empty();
    for (i, inst) in fuzz_instances(config)?.iter().enumerate() {
        let checks = check_instance(&inst.observed)?;
        report.absorb(i, InstanceSummary::of(&inst.observed), checks);
    }
    Ok(FuzzReport {
        config: config.clone(),
        rng: RNG_ALGORITHM,
        passed: report.passed(),
        report,
    })
}
