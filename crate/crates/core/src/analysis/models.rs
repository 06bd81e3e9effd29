//! Order-bias and party-bias models over per-intervention score records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::regression::{fit_design, Design, FitOptions, ModelKind, RegressionFit};
use super::special::logistic;
use super::AnalysisError;
use crate::corpus::{party_design, PartyLayout};
use crate::pipeline::Method;

/// Minimum observations for a party to keep its own dummy.
pub const MIN_PARTY_OBS: usize = 5;
pub const Z_95: f64 = 1.96;

/// One row of `scores.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub debate_id: String,
    pub method: Method,
    pub model: String,
    pub order_k: u32,
    pub n: u32,
    pub relative_order: f64,
    pub party_group: String,
    pub speaker_id: String,
    #[serde(rename = "P")]
    pub precision: f64,
    #[serde(rename = "R")]
    pub recall: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
    #[serde(rename = "C")]
    pub compression: f64,
    #[serde(rename = "Dr")]
    pub decompression: f64,
    pub found: bool,
}

/// One regression observation. `y` is the raw score; smoothing happens per fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRow {
    pub y: f64,
    pub x: f64,
    pub x2: f64,
    /// Indicators for hierarchical, grouped, prompted (default is all zero).
    pub method_dummies: [f64; 3],
    pub party_dummies: Vec<f64>,
    /// Reserved; fits are unweighted.
    pub weight: Option<f64>,
}

impl ObservationRow {
    pub fn new(y: f64, x: f64) -> Self {
        Self {
            y,
            x,
            x2: x * x,
            method_dummies: [0.0; 3],
            party_dummies: Vec::new(),
            weight: None,
        }
    }
}

/// Methods carrying a dummy, in column order.
pub const DUMMY_METHODS: [Method; 3] = [Method::Hierarchical, Method::Grouped, Method::Prompted];

pub fn method_dummies(method: Method) -> [f64; 3] {
    let mut d = [0.0; 3];
    if let Some(i) = DUMMY_METHODS.iter().position(|m| *m == method) {
        d[i] = 1.0;
    }
    d
}

fn method_word(m: Method) -> &'static str {
    match m {
        Method::Hierarchical => "Hierarchical",
        Method::Grouped => "Grouped",
        Method::Prompted => "Prompted",
        Method::Default => "Default",
    }
}

fn method_letter(m: Method) -> &'static str {
    match m {
        Method::Hierarchical => "H",
        Method::Grouped => "G",
        Method::Prompted => "P",
        Method::Default => "D",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegressionSpec {
    OrderBias,
    PartyBias { layout: PartyLayout },
}

impl RegressionSpec {
    /// `(label, symbol)` per design column.
    pub fn columns(&self) -> Vec<(String, String)> {
        let mut cols = vec![
            ("Intercept".to_string(), "β0".to_string()),
            ("Linear speaker order".to_string(), "β1".to_string()),
            ("Quadratic speaker order".to_string(), "β2".to_string()),
        ];
        match self {
            RegressionSpec::OrderBias => {
                for m in DUMMY_METHODS {
                    cols.push((method_word(m).into(), format!("γ_{}", method_letter(m))));
                }
                for m in DUMMY_METHODS {
                    cols.push((
                        format!("Order × {}", method_word(m)),
                        format!("δ_{}", method_letter(m)),
                    ));
                }
                for m in DUMMY_METHODS {
                    cols.push((
                        format!("Order² × {}", method_word(m)),
                        format!("θ_{}", method_letter(m)),
                    ));
                }
            }
            RegressionSpec::PartyBias { layout } => {
                for (j, party) in layout.columns.iter().enumerate() {
                    cols.push((format!("Party: {party}"), format!("β{}", 3 + j)));
                }
            }
        }
        cols
    }

    pub fn design_row(&self, row: &ObservationRow) -> Vec<f64> {
        let mut v = vec![1.0, row.x, row.x2];
        match self {
            RegressionSpec::OrderBias => {
                v.extend_from_slice(&row.method_dummies);
                v.extend(row.method_dummies.iter().map(|d| d * row.x));
                v.extend(row.method_dummies.iter().map(|d| d * row.x2));
            }
            RegressionSpec::PartyBias { .. } => v.extend_from_slice(&row.party_dummies),
        }
        v
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            RegressionSpec::OrderBias => ModelKind::OrderBias,
            RegressionSpec::PartyBias { .. } => ModelKind::PartyBias,
        }
    }
}

pub fn fit_beta_regression(
    rows: &[ObservationRow],
    spec: &RegressionSpec,
    options: FitOptions,
) -> Result<RegressionFit, AnalysisError> {
    for r in rows {
        if r.method_dummies.iter().sum::<f64>() > 1.0 || r.party_dummies.iter().sum::<f64>() > 1.0
        {
            return Err(AnalysisError::Argument(
                "observation sets more than one dummy in a block".into(),
            ));
        }
    }
    let design_rows: Vec<Vec<f64>> = rows.iter().map(|r| spec.design_row(r)).collect();
    let design = Design::from_rows(spec.columns(), &design_rows)?;
    let y: Vec<f64> = rows.iter().map(|r| r.y).collect();
    let mut fit = fit_design(&y, &design, options)?;
    fit.kind = spec.kind();
    if let RegressionSpec::PartyBias { layout } = spec {
        fit.party_layout = Some(layout.clone());
    }
    Ok(fit)
}

/// Pools all debates and methods of one generator model; default is the
/// reference method and order is uncentered (`x = k/n`).
pub fn order_bias_model(
    records: &[ScoreRecord],
    model: &str,
    options: FitOptions,
) -> Result<RegressionFit, AnalysisError> {
    let subset: Vec<&ScoreRecord> = records.iter().filter(|r| r.model == model).collect();
    let missing: Vec<String> = Method::ALL
        .iter()
        .filter(|m| !subset.iter().any(|r| r.method == **m))
        .map(|m| m.as_str().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(AnalysisError::MissingMethods {
            model: model.to_string(),
            methods: missing,
        });
    }
    let rows: Vec<ObservationRow> = subset
        .iter()
        .map(|r| ObservationRow {
            method_dummies: method_dummies(r.method),
            ..ObservationRow::new(r.f1, r.relative_order)
        })
        .collect();
    let mut fit = fit_beta_regression(&rows, &RegressionSpec::OrderBias, options)?;
    fit.model = Some(model.to_string());
    Ok(fit)
}

/// One fit per (model, method) with centered order (`x = k/n − 0.5`) and party
/// dummies. Parties with fewer than [`MIN_PARTY_OBS`] rows are dropped.
pub fn party_bias_model(
    records: &[ScoreRecord],
    model: &str,
    method: Method,
    reference: Option<&str>,
    options: FitOptions,
) -> Result<RegressionFit, AnalysisError> {
    let subset: Vec<&ScoreRecord> = records
        .iter()
        .filter(|r| r.model == model && r.method == method)
        .collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &subset {
        *counts.entry(r.party_group.as_str()).or_default() += 1;
    }
    let mut warnings = Vec::new();
    for (party, c) in &counts {
        if *c < MIN_PARTY_OBS {
            let msg = format!(
                "party {party} has {c} observation(s) (< {MIN_PARTY_OBS}); its rows were dropped"
            );
            log::warn!("{model}/{method}: {msg}");
            warnings.push(msg);
        }
    }
    let kept: Vec<&ScoreRecord> = subset
        .into_iter()
        .filter(|r| counts[r.party_group.as_str()] >= MIN_PARTY_OBS)
        .collect();
    let layout = party_design(kept.iter().map(|r| r.party_group.as_str()), reference)
        .map_err(|e| AnalysisError::Argument(format!("{model}/{method}: {e}")))?;
    let rows = kept
        .iter()
        .map(|r| {
            Ok(ObservationRow {
                party_dummies: layout
                    .dummies(&r.party_group)
                    .map_err(|e| AnalysisError::Argument(e.to_string()))?,
                ..ObservationRow::new(r.f1, r.relative_order - 0.5)
            })
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    let mut fit = fit_beta_regression(&rows, &RegressionSpec::PartyBias { layout }, options)?;
    fit.model = Some(model.to_string());
    fit.method = Some(method.as_str().to_string());
    warnings.append(&mut fit.warnings);
    fit.warnings = warnings;
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalMean {
    pub group: String,
    pub mu_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Linear predictor and its standard error.
    pub eta: f64,
    pub se_eta: f64,
}

impl MarginalMean {
    /// 95% interval built on the logit scale and mapped back.
    pub fn from_linear_predictor(group: &str, eta: f64, se_eta: f64) -> Self {
        Self {
            group: group.to_string(),
            mu_hat: logistic(eta),
            ci_low: logistic(eta - Z_95 * se_eta),
            ci_high: logistic(eta + Z_95 * se_eta),
            eta,
            se_eta,
        }
    }
}

/// Predicted fidelity at mid-debate (`x = 0`) for every party of a party-bias fit.
pub fn marginal_means(fit: &RegressionFit) -> Result<Vec<MarginalMean>, AnalysisError> {
    if fit.kind != ModelKind::PartyBias {
        return Err(AnalysisError::Refused(
            "marginal means need a party-bias fit".into(),
        ));
    }
    if !fit.converged || fit.covariance.is_empty() {
        return Err(AnalysisError::Refused(
            "marginal means need a converged fit".into(),
        ));
    }
    let layout = fit
        .party_layout
        .as_ref()
        .ok_or_else(|| AnalysisError::Refused("fit carries no party layout".into()))?;
    let v = &fit.covariance;
    let b0 = fit.coefficients[0].estimate;
    let mut out = vec![MarginalMean::from_linear_predictor(
        &layout.reference,
        b0,
        v[0][0].sqrt(),
    )];
    for (j, party) in layout.columns.iter().enumerate() {
        let g = 3 + j;
        let eta = b0 + fit.coefficients[g].estimate;
        let var = v[0][0] + v[g][g] + 2.0 * v[0][g];
        out.push(MarginalMean::from_linear_predictor(party, eta, var.max(0.0).sqrt()));
    }
    Ok(out)
}

/// Predicted mean fidelity per method along `grid` (uncentered order).
pub fn order_curve(
    fit: &RegressionFit,
    grid: &[f64],
) -> Result<Vec<(Method, f64, f64)>, AnalysisError> {
    if fit.kind != ModelKind::OrderBias {
        return Err(AnalysisError::Refused(
            "order curve needs an order-bias fit".into(),
        ));
    }
    let b = fit.estimates();
    let mut out = Vec::new();
    for method in Method::ALL {
        let d = method_dummies(method);
        for &x in grid {
            let mut eta = b[0] + b[1] * x + b[2] * x * x;
            for k in 0..3 {
                eta += d[k] * (b[3 + k] + b[6 + k] * x + b[9 + k] * x * x);
            }
            out.push((method, x, logistic(eta)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_bias_columns() {
        let cols = RegressionSpec::OrderBias.columns();
        let names: Vec<&str> = cols.iter().map(|c| c.0.as_str()).collect();
        assert_eq!(
            names,
            [
                "Intercept",
                "Linear speaker order",
                "Quadratic speaker order",
                "Hierarchical",
                "Grouped",
                "Prompted",
                "Order × Hierarchical",
                "Order × Grouped",
                "Order × Prompted",
                "Order² × Hierarchical",
                "Order² × Grouped",
                "Order² × Prompted",
            ]
        );
        let row = ObservationRow {
            method_dummies: method_dummies(Method::Grouped),
            ..ObservationRow::new(0.3, 0.5)
        };
        assert_eq!(
            RegressionSpec::OrderBias.design_row(&row),
            [1.0, 0.5, 0.25, 0.0, 1.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.25, 0.0]
        );
    }

    #[test]
    fn party_columns_skip_reference() {
        let layout = PartyLayout {
            reference: "EPP".into(),
            columns: vec!["Greens".into(), "S&D".into()],
        };
        let spec = RegressionSpec::PartyBias { layout };
        let names: Vec<String> = spec.columns().into_iter().map(|c| c.0).collect();
        assert_eq!(names[3..], ["Party: Greens", "Party: S&D"]);
        assert!(!names.iter().any(|n| n.contains("EPP")));
    }

    #[test]
    fn marginal_mean_closed_form() {
        let m = MarginalMean::from_linear_predictor("A", -1.1, 0.1);
        let l = |e: f64| 1.0 / (1.0 + (-e).exp());
        assert!((m.mu_hat - l(-1.1)).abs() < 1e-15);
        assert!((m.mu_hat - 0.2497).abs() < 1e-4);
        assert!((m.ci_low - l(-1.296)).abs() < 1e-15);
        assert!((m.ci_high - l(-0.904)).abs() < 1e-15);
        assert!(m.ci_low <= m.mu_hat && m.mu_hat <= m.ci_high);
    }
}
