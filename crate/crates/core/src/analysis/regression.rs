//! Beta regression by maximum likelihood with Wald inference.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::likelihood::BetaLikelihood;
use super::optim::{self, max_abs, BfgsOptions};
use super::special::{logistic, logit, two_sided_p};
use super::AnalysisError;
use crate::corpus::PartyLayout;

/// Gradient max-norm below which a fit counts as converged.
pub const CONVERGENCE_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 500;
/// Rows per free parameter below which a fit carries a warning.
pub const MIN_ROWS_PER_PARAMETER: usize = 10;

/// Clamps to `[0, 1]` and maps `y ↦ (y(N−1) + 0.5) / N`, `N = y.len()`.
pub fn smooth_proportions(y_raw: &[f64]) -> Vec<f64> {
    let n = y_raw.len() as f64;
    y_raw
        .iter()
        .map(|&y| (y.clamp(0.0, 1.0) * (n - 1.0) + 0.5) / n)
        .collect()
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Named design matrix; column 0 is normally the intercept.
#[derive(Debug, Clone)]
pub struct Design {
    pub names: Vec<String>,
    pub symbols: Vec<String>,
    pub matrix: DMatrix<f64>,
}

impl Design {
    pub fn from_rows(
        columns: Vec<(String, String)>,
        rows: &[Vec<f64>],
    ) -> Result<Self, AnalysisError> {
        let p = columns.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(AnalysisError::Argument(format!(
                "design row has {} entries, expected {p}",
                bad.len()
            )));
        }
        let matrix = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        let (names, symbols) = columns.into_iter().unzip();
        Ok(Self {
            names,
            symbols,
            matrix,
        })
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    /// Errors with the names of columns that are linear combinations of
    /// earlier columns (or identically zero).
    pub fn check_rank(&self) -> Result<(), AnalysisError> {
        let mut basis: Vec<DVector<f64>> = Vec::new();
        let mut dependent = Vec::new();
        for j in 0..self.ncols() {
            let col = self.matrix.column(j).into_owned();
            let norm = col.norm();
            let mut r = col.clone();
            // two passes of modified Gram-Schmidt for stability
            for _ in 0..2 {
                for q in &basis {
                    let c = q.dot(&r);
                    r.axpy(-c, q, 1.0);
                }
            }
            let rn = r.norm();
            if norm == 0.0 || rn <= 1e-9 * norm {
                dependent.push(self.names[j].clone());
            } else {
                basis.push(r / rn);
            }
        }
        if dependent.is_empty() {
            Ok(())
        } else {
            Err(AnalysisError::RankDeficient { columns: dependent })
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub symbol: String,
    pub estimate: f64,
    #[serde(with = "nan_as_null")]
    pub std_error: f64,
    #[serde(with = "nan_as_null")]
    pub z: f64,
    #[serde(with = "nan_as_null")]
    pub p_value: f64,
    pub stars: String,
}

impl Coefficient {
    fn new(name: &str, symbol: &str, estimate: f64, std_error: f64) -> Self {
        let z = estimate / std_error;
        let p_value = if z.is_finite() { two_sided_p(z) } else { f64::NAN };
        Self {
            name: name.to_string(),
            symbol: symbol.to_string(),
            estimate,
            std_error,
            z,
            p_value,
            stars: if p_value.is_finite() {
                stars(p_value).to_string()
            } else {
                String::new()
            },
        }
    }

    pub fn significant(&self, level: f64) -> bool {
        self.p_value < level
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    OrderBias,
    PartyBias,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    /// Mean-model coefficients in design column order.
    pub coefficients: Vec<Coefficient>,
    /// φ on its natural scale; its standard error comes from the delta method.
    pub precision: Coefficient,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_max_abs: f64,
    pub information_positive_definite: bool,
    pub n_obs: usize,
    /// Covariance of `(β, ln φ)`; empty when the information is singular.
    pub covariance: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub party_layout: Option<PartyLayout>,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Log-likelihood at the start point and after each accepted step.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

impl RegressionFit {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.estimate).collect()
    }

    pub fn phi(&self) -> f64 {
        self.precision.estimate
    }

    /// Coefficient rows followed by the precision row.
    pub fn table_rows(&self) -> Vec<&Coefficient> {
        self.coefficients
            .iter()
            .chain(std::iter::once(&self.precision))
            .collect()
    }
}

fn start_point(x: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let n = x.nrows();
    let p = x.ncols();
    let z = DVector::from_iterator(n, y.iter().map(|&v| logit(v)));
    let beta = x
        .clone()
        .svd(true, true)
        .solve(&z, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(p));
    let fitted = x * &beta;
    let dof = (n as f64 - p as f64).max(1.0);
    let sigma2 = (&z - &fitted).norm_squared() / dof;
    let mut acc = 0.0;
    for i in 0..n {
        let mu = logistic(fitted[i]);
        let v = mu * (1.0 - mu);
        // delta-method variance of y around μ
        acc += v / (sigma2 * v * v) - 1.0;
    }
    let phi0 = acc / n as f64;
    let phi0 = if phi0.is_finite() && phi0 > 0.1 {
        phi0.min(1e6)
    } else {
        1.0
    };
    beta.iter().copied().chain(std::iter::once(phi0.ln())).collect()
}

/// Relative size of `ℓ` differences that are indistinguishable from rounding.
pub const LOGLIK_RESOLUTION: f64 = 1e-12;

/// Newton steps from the quasi-Newton end point. Close to the optimum the
/// remaining gain in `ℓ` is below its rounding noise, so a step is accepted when
/// it shrinks the gradient and `ℓ` does not fall by more than that noise.
fn newton_polish(lik: &BetaLikelihood, theta: &mut Vec<f64>, ll: &mut f64, trace: &mut Vec<f64>) {
    let mut g = lik.gradient(theta);
    for _ in 0..8 {
        let gmax = max_abs(&g);
        if gmax < CONVERGENCE_TOL * 1e-3 {
            return;
        }
        let info = -lik.hessian(theta);
        let Some(chol) = info.cholesky() else { return };
        let step = chol.solve(&DVector::from_column_slice(&g));
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let v = lik.value(&cand);
            let floor = *ll - LOGLIK_RESOLUTION * ll.abs().max(1.0);
            if v.is_finite() && v >= floor {
                let gc = lik.gradient(&cand);
                if max_abs(&gc) < gmax {
                    *theta = cand;
                    *ll = v;
                    trace.push(v);
                    g = gc;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return;
        }
    }
}

/// Fits `logit μ = Xβ` to raw scores; responses are smoothed first.
pub fn fit_design(
    y_raw: &[f64],
    design: &Design,
    options: FitOptions,
) -> Result<RegressionFit, AnalysisError> {
    let n = y_raw.len();
    let p = design.ncols();
    if n != design.nrows() {
        return Err(AnalysisError::Argument(format!(
            "{n} responses for {} design rows",
            design.nrows()
        )));
    }
    if n <= p + 1 {
        return Err(AnalysisError::Argument(format!(
            "{n} observations cannot identify {} parameters",
            p + 1
        )));
    }
    if let Some(bad) = y_raw.iter().find(|v| !v.is_finite()) {
        return Err(AnalysisError::Argument(format!("non-finite response {bad}")));
    }
    design.check_rank()?;

    let mut warnings = Vec::new();
    if n < MIN_ROWS_PER_PARAMETER * (p + 1) {
        warnings.push(format!(
            "{n} observations for {} parameters (fewer than {MIN_ROWS_PER_PARAMETER} per parameter)",
            p + 1
        ));
    }
    let y = smooth_proportions(y_raw);
    let lik = BetaLikelihood::new(&design.matrix, &y);
    let theta0 = start_point(&design.matrix, &y);
    // inverse observed information at the start point, when it is usable
    let h0 = (-lik.hessian(&theta0))
        .cholesky()
        .map(|c| c.inverse())
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .map(|m| m.row_iter().map(|r| r.iter().copied().collect()).collect());
    let result = optim::minimize_preconditioned(
        |t| {
            let (v, g) = lik.value_and_gradient(t);
            (-v, g.into_iter().map(|x| -x).collect())
        },
        &theta0,
        h0,
        BfgsOptions {
            max_iter: options.max_iter,
            ..BfgsOptions::default()
        },
    );
    let mut theta = result.x;
    let mut ll = -result.f;
    let mut trace: Vec<f64> = result.trace.iter().map(|f| -f).collect();
    if ll.is_finite() {
        newton_polish(&lik, &mut theta, &mut ll, &mut trace);
    }
    let grad = lik.gradient(&theta);
    let gmax = max_abs(&grad);

    let info = -lik.hessian(&theta);
    let covariance = info.clone().cholesky().map(|c| c.inverse());
    let information_pd = covariance.is_some();
    let converged = ll.is_finite() && gmax < CONVERGENCE_TOL && information_pd;
    if !converged {
        warnings.push(format!(
            "optimizer did not converge after {} iterations (gradient max-norm {gmax:.3e}{})",
            result.iterations,
            if information_pd {
                ""
            } else {
                ", information not positive definite"
            }
        ));
    }
    let se = |k: usize| match &covariance {
        Some(c) if c[(k, k)] > 0.0 => c[(k, k)].sqrt(),
        _ => f64::NAN,
    };
    let coefficients = (0..p)
        .map(|j| Coefficient::new(&design.names[j], &design.symbols[j], theta[j], se(j)))
        .collect();
    let phi = theta[p].exp();
    let precision = Coefficient::new("Precision", "φ", phi, phi * se(p));
    Ok(RegressionFit {
        kind: ModelKind::Custom,
        model: None,
        method: None,
        coefficients,
        precision,
        log_likelihood: ll,
        converged,
        iterations: result.iterations,
        gradient_max_abs: gmax,
        information_positive_definite: information_pd,
        n_obs: n,
        covariance: covariance
            .map(|c| c.row_iter().map(|r| r.iter().copied().collect()).collect())
            .unwrap_or_default(),
        party_layout: None,
        warnings,
        trace,
    })
}
