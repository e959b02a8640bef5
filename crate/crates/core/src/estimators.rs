//! Point and covariance estimators computed from observed data.
//!
//! `(X'X)^-1` is never obtained from a general solver. The rows of `H` are
//! eigenvectors of `X'X = sum_j n_j h_j' h_j` with eigenvalues `2^K n_j`, so
//! the inverse is `4^-K sum_j n_j^-1 h_j' h_j` in closed form.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::assignment::{group_means, group_sample_variances, GroupSizes, ObservedData};
use crate::design::{build_model_matrix, EffectLabel, ModelMatrix};
use crate::error::{Error, Result};
use crate::population::outer_row;
use crate::stats::normal_quantile;

const REPLICATE_REASON: &str = "Neymanian variance needs two replicates";
const HC2_REASON: &str = "HC2 undefined with one replicate";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    Neymanian,
    HuberWhite,
    Homoscedastic,
    True,
}

impl CovarianceKind {
    pub fn name(self) -> &'static str {
        match self {
            CovarianceKind::Neymanian => "neymanian",
            CovarianceKind::HuberWhite => "huber_white",
            CovarianceKind::Homoscedastic => "homoscedastic",
            CovarianceKind::True => "true",
        }
    }

    /// Whether the variance estimates are conservative under complete randomization.
    pub fn is_conservative(self) -> bool {
        matches!(self, CovarianceKind::Neymanian | CovarianceKind::HuberWhite)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectEstimate {
    pub k: u32,
    pub effects: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub covariance_kind: CovarianceKind,
    pub group_sizes: GroupSizes,
}

impl EffectEstimate {
    pub fn standard_errors(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

fn model_for(obs: &ObservedData) -> ModelMatrix {
    build_model_matrix(obs.k()).expect("observed data K validated on construction")
}

/// `2^-(K-1) H' Ybar_obs`; requires every group to be non-empty.
pub fn ri_effects(obs: &ObservedData) -> Result<Vec<f64>> {
    let means = group_means(obs)?;
    Ok(model_for(obs).contrast(&means))
}

/// `4^-(K-1) sum_j n_j^-1 h_j' h_j s^2(z_j)`.
pub fn neymanian_covariance(obs: &ObservedData) -> Result<DMatrix<f64>> {
    let s2 = group_sample_variances(obs)?;
    let model = model_for(obs);
    let sizes = obs.group_counts();
    let scale = model.effect_scale() * model.effect_scale();
    let mut cov = DMatrix::zeros(model.dim(), model.dim());
    for (j, v) in s2.iter().enumerate() {
        cov += outer_row(&model, j) * (scale * v / sizes[j] as f64);
    }
    Ok(cov)
}

/// Randomization-based estimate with the Neymanian covariance.
pub fn estimate_ri(obs: &ObservedData) -> Result<EffectEstimate> {
    obs.require_replicates(2, REPLICATE_REASON)?;
    Ok(EffectEstimate {
        k: obs.k(),
        effects: ri_effects(obs)?,
        covariance: neymanian_covariance(obs)?,
        covariance_kind: CovarianceKind::Neymanian,
        group_sizes: obs.group_sizes()?,
    })
}

/// Design matrix with row `i` equal to the model-matrix row of unit `i`'s treatment.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionMatrix {
    pub k: u32,
    pub rows: DMatrix<f64>,
    pub treatments: Vec<usize>,
}

impl RegressionMatrix {
    /// `X'X` by direct multiplication.
    pub fn xtx(&self) -> DMatrix<f64> {
        self.rows.tr_mul(&self.rows)
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.rows.row(i).transpose()
    }
}

/// Rows follow unit order; no sorting by treatment is needed.
pub fn build_regression_matrix(obs: &ObservedData) -> RegressionMatrix {
    let model = model_for(obs);
    let treatments: Vec<usize> = obs.records().iter().map(|r| r.treatment).collect();
    let rows = DMatrix::from_fn(treatments.len(), model.dim(), |i, c| {
        f64::from(model.entry(treatments[i], c))
    });
    RegressionMatrix {
        k: obs.k(),
        rows,
        treatments,
    }
}

/// Closed-form `(X'X)^-1 = 4^-K sum_j n_j^-1 h_j' h_j`.
pub fn xtx_inverse(sizes: &GroupSizes, model: &ModelMatrix) -> Result<DMatrix<f64>> {
    if sizes.len() != model.dim() {
        return Err(Error::group_sizes(format!(
            "n-vector length {} != 2^K = {}",
            sizes.len(),
            model.dim()
        )));
    }
    if let Some((j, _)) = sizes.first_below(1) {
        return Err(Error::group_sizes(format!(
            "group {} is empty, so X'X is singular",
            j + 1
        )));
    }
    let scale = 1.0 / (model.dim() * model.dim()) as f64;
    let mut inv = DMatrix::zeros(model.dim(), model.dim());
    for j in 0..model.dim() {
        inv += outer_row(model, j) * (scale / sizes.get(j) as f64);
    }
    Ok(inv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    /// `beta_hat`; effects are `2 * beta_hat`.
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub leverages: Vec<f64>,
    pub xtx_inverse: DMatrix<f64>,
    pub design: RegressionMatrix,
    pub group_sizes: GroupSizes,
}

impl OlsFit {
    pub fn effects(&self) -> Vec<f64> {
        self.coefficients.iter().map(|b| 2.0 * b).collect()
    }

    /// Residuals as `Y - X beta_hat`, without the group-mean shortcut.
    pub fn residuals_from_matrix(&self, obs: &ObservedData) -> Vec<f64> {
        let beta = DVector::from_column_slice(&self.coefficients);
        let fitted = &self.design.rows * beta;
        obs.outcomes()
            .iter()
            .zip(fitted.iter())
            .map(|(y, f)| y - f)
            .collect()
    }

    pub fn n_units(&self) -> usize {
        self.residuals.len()
    }
}

/// Ordinary least squares of the observed outcomes on the regression matrix.
///
/// Residuals use the identity `e_i = Y_i - Ybar_obs(z_j(i))`; leverages are
/// the quadratic forms `x_i (X'X)^-1 x_i'`.
pub fn fit_ols(obs: &ObservedData) -> Result<OlsFit> {
    let sizes = obs.group_sizes()?;
    sizes.require_at_least(1, "OLS needs every group non-empty")?;
    let model = model_for(obs);
    let inv = xtx_inverse(&sizes, &model)?;
    let design = build_regression_matrix(obs);

    let y = DVector::from_vec(obs.outcomes());
    let xty = design.rows.tr_mul(&y);
    let beta = &inv * xty;

    let means = group_means(obs)?;
    let residuals: Vec<f64> = obs
        .records()
        .iter()
        .map(|r| r.outcome - means[r.treatment])
        .collect();

    let group_leverage: Vec<f64> = (0..model.dim())
        .map(|j| {
            let h = DVector::from_iterator(model.dim(), model.row(j).iter().map(|&e| f64::from(e)));
            (h.transpose() * &inv * &h)[(0, 0)]
        })
        .collect();
    let leverages = design.treatments.iter().map(|&t| group_leverage[t]).collect();

    let fit = OlsFit {
        coefficients: beta.iter().copied().collect(),
        residuals,
        leverages,
        xtx_inverse: inv,
        design,
        group_sizes: sizes,
    };
    debug_assert!(
        crate::stats::max_abs_diff(&fit.residuals, &fit.residuals_from_matrix(obs))
            <= 1e-9 * (1.0 + obs.outcomes().iter().fold(0.0f64, |m, y| m.max(y.abs())))
    );
    Ok(fit)
}

fn check_fit_matches(fit: &OlsFit, obs: &ObservedData) -> Result<()> {
    if fit.n_units() != obs.n_units() || fit.design.k != obs.k() {
        return Err(Error::dimension(format!(
            "fit has N={}, K={} but data has N={}, K={}",
            fit.n_units(),
            fit.design.k,
            obs.n_units(),
            obs.k()
        )));
    }
    Ok(())
}

/// Amended Huber-White (HC2) covariance of `2 beta_hat`:
///
/// `4N (X'X)^-1 [N^-1 sum_i x_i' x_i e_i^2 / (1 - h_i)] (X'X)^-1`.
pub fn cov_hw(fit: &OlsFit, obs: &ObservedData) -> Result<DMatrix<f64>> {
    check_fit_matches(fit, obs)?;
    fit.group_sizes.require_at_least(2, HC2_REASON)?;
    if let Some(i) = fit.leverages.iter().position(|&h| h >= 1.0) {
        let t = fit.design.treatments[i];
        return Err(Error::TooFewReplicates {
            group: t + 1,
            size: fit.group_sizes.get(t),
            reason: HC2_REASON,
        });
    }
    let n = fit.n_units() as f64;
    let p = fit.xtx_inverse.nrows();
    let mut meat = DMatrix::zeros(p, p);
    for i in 0..fit.n_units() {
        let x = fit.design.row(i);
        let w = fit.residuals[i] * fit.residuals[i] / (1.0 - fit.leverages[i]);
        meat += (&x * x.transpose()) * w;
    }
    meat /= n;
    Ok(&fit.xtx_inverse * meat * &fit.xtx_inverse * (4.0 * n))
}

/// Homoscedastic covariance `4 sigma_hat^2 (X'X)^-1` with
/// `sigma_hat^2 = (N - 2^K)^-1 sum_i e_i^2`.
pub fn cov_he(fit: &OlsFit, obs: &ObservedData) -> Result<DMatrix<f64>> {
    check_fit_matches(fit, obs)?;
    let p = fit.xtx_inverse.nrows();
    let n = fit.n_units();
    if n <= p {
        return Err(Error::NoResidualDf {
            n_units: n,
            params: p,
        });
    }
    fit.group_sizes.require_at_least(2, REPLICATE_REASON)?;
    let rss: f64 = fit.residuals.iter().map(|e| e * e).sum();
    let sigma2 = rss / (n - p) as f64;
    Ok(&fit.xtx_inverse * (4.0 * sigma2))
}

/// `(4^(K-1) r)^-1 sum_j h_j' h_j s^2(z_j)` for a balanced design with `r`
/// replicates per treatment.
pub fn balanced_covariance(obs: &ObservedData) -> Result<DMatrix<f64>> {
    let sizes = obs.group_sizes()?;
    let Some(r) = sizes.common_size() else {
        return Err(Error::Unbalanced {
            sizes: sizes.as_slice().to_vec(),
        });
    };
    sizes.require_at_least(2, REPLICATE_REASON)?;
    let s2 = group_sample_variances(obs)?;
    let model = model_for(obs);
    let scale = model.effect_scale() * model.effect_scale() / r as f64;
    let mut cov = DMatrix::zeros(model.dim(), model.dim());
    for (j, v) in s2.iter().enumerate() {
        cov += outer_row(&model, j) * (scale * v);
    }
    Ok(cov)
}

/// OLS effects paired with the covariance of the requested kind.
pub fn estimate_ols(obs: &ObservedData, kind: CovarianceKind) -> Result<EffectEstimate> {
    let fit = fit_ols(obs)?;
    let covariance = match kind {
        CovarianceKind::HuberWhite => cov_hw(&fit, obs)?,
        CovarianceKind::Homoscedastic => cov_he(&fit, obs)?,
        CovarianceKind::Neymanian => neymanian_covariance(obs)?,
        CovarianceKind::True => {
            return Err(Error::dimension(
                "the true covariance needs the full potential-outcome table",
            ))
        }
    };
    Ok(EffectEstimate {
        k: obs.k(),
        effects: fit.effects(),
        covariance,
        covariance_kind: kind,
        group_sizes: fit.group_sizes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Interval {
    pub label: EffectLabel,
    pub point: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
    pub conservative: bool,
}

/// Normal-approximation intervals `tau_hat_j +- z_{1-alpha/2} sqrt(cov_jj)`.
pub fn confidence_intervals(est: &EffectEstimate, alpha: f64) -> Result<Vec<Interval>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Alpha(alpha));
    }
    let labels = crate::design::effect_labels(est.k)?;
    let z = normal_quantile(1.0 - alpha / 2.0);
    let diag = est.covariance.diagonal();
    if let Some(j) = diag.iter().position(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::NonFinite {
            value: diag[j],
            location: format!("covariance diagonal entry {j} (must be >= 0)"),
        });
    }
    Ok(labels
        .into_iter()
        .zip(&est.effects)
        .zip(diag.iter())
        .map(|((label, &point), &var)| {
            let se = var.sqrt();
            Interval {
                label,
                point,
                std_error: se,
                lower: point - z * se,
                upper: point + z * se,
                conservative: est.covariance_kind.is_conservative(),
            }
        })
        .collect())
}
