//! Report tables built from `scores.csv` and the fitted models.

use std::fs;

use dbb_core::RegressionFit;
use serde::Serialize;

use crate::error::CliError;
use crate::layout::read_json;
use crate::run::{column_means, group_by_model_method, write_csv, AnalyseSelection, Run};

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    model: &'a str,
    method: &'a str,
    #[serde(rename = "F1")]
    f1: f64,
    #[serde(rename = "C_Ratio")]
    c_ratio: f64,
    #[serde(rename = "D_Ratio")]
    d_ratio: f64,
    n: usize,
}

#[derive(Debug, Serialize)]
struct CoefficientRow<'a> {
    model: &'a str,
    method: &'a str,
    kind: &'a str,
    term: &'a str,
    symbol: &'a str,
    estimate: f64,
    std_error: f64,
    z: f64,
    p_value: f64,
    stars: &'a str,
}

/// Estimate with stars and the standard error in parentheses.
pub fn table_cell(estimate: f64, stars: &str, std_error: f64) -> String {
    if std_error.is_finite() {
        format!("{estimate:.3}{stars} ({std_error:.3})")
    } else {
        format!("{estimate:.3}{stars}")
    }
}

fn kind_label(fit: &RegressionFit) -> &'static str {
    match fit.kind {
        dbb_core::ModelKind::OrderBias => "order-bias",
        dbb_core::ModelKind::PartyBias => "party-bias",
        dbb_core::ModelKind::Custom => "custom",
    }
}

/// Writes `report/`. Refused for runs that were never scored; runs the
/// analysis first when it is missing.
pub fn write_report(run: &mut Run) -> Result<Vec<String>, CliError> {
    if !run.manifest.is_complete("score") {
        return Err(CliError::Refused(format!(
            "run {} has not been scored",
            run.config.run_id
        )));
    }
    if !run.manifest.is_complete("analyse") {
        run.analyse(false, AnalyseSelection::all())?;
    }
    let dir = run.layout.report_dir();
    let records = run.read_scores()?;
    let mut written = Vec::new();

    let mut w = csv::Writer::from_writer(Vec::new());
    for ((model, method), rows) in group_by_model_method(&records) {
        let (f1, c, dr) = column_means(&rows);
        w.serialize(SummaryRow {
            model: &model,
            method: method.label(),
            f1,
            c_ratio: c,
            d_ratio: dr,
            n: rows.len(),
        })
        .map_err(|e| CliError::stage("report", e))?;
    }
    write_csv(&dir.join("summary_table.csv"), w, "report")?;
    written.push("summary_table.csv".to_string());

    let mut models: Vec<String> = records.iter().map(|r| r.model.clone()).collect();
    models.sort_unstable();
    models.dedup();
    let mut fits: Vec<RegressionFit> = Vec::new();
    let mut order_fits: Vec<(String, RegressionFit)> = Vec::new();
    for model in &models {
        let mdir = run.layout.model_analysis_dir(model);
        let order = mdir.join("order_bias.json");
        if order.exists() {
            let fit: RegressionFit = read_json(&order, "report")?;
            order_fits.push((model.clone(), fit.clone()));
            fits.push(fit);
        }
        for method in run.methods() {
            let p = mdir.join(format!("party_bias_{}.json", method.as_str()));
            if p.exists() {
                fits.push(read_json(&p, "report")?);
            }
        }
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    for fit in &fits {
        let model = fit.model.as_deref().unwrap_or("");
        let method = fit.method.as_deref().unwrap_or("");
        for c in fit.table_rows() {
            w.serialize(CoefficientRow {
                model,
                method,
                kind: kind_label(fit),
                term: &c.name,
                symbol: &c.symbol,
                estimate: c.estimate,
                std_error: c.std_error,
                z: c.z,
                p_value: c.p_value,
                stars: &c.stars,
            })
            .map_err(|e| CliError::stage("report", e))?;
        }
    }
    write_csv(&dir.join("coefficients.csv"), w, "report")?;
    written.push("coefficients.csv".to_string());

    if let Some((_, first)) = order_fits.first() {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["term".to_string(), "symbol".to_string()];
        header.extend(order_fits.iter().map(|(m, _)| m.clone()));
        w.write_record(&header).map_err(|e| CliError::stage("report", e))?;
        for (i, c) in first.table_rows().iter().enumerate() {
            let mut row = vec![c.name.clone(), c.symbol.clone()];
            for (_, fit) in &order_fits {
                let cell = fit.table_rows()[i];
                row.push(table_cell(cell.estimate, &cell.stars, cell.std_error));
            }
            w.write_record(&row).map_err(|e| CliError::stage("report", e))?;
        }
        write_csv(&dir.join("order_bias_table.csv"), w, "report")?;
        written.push("order_bias_table.csv".to_string());
    }

    for name in ["marginal_means.csv", "order_curve.csv"] {
        let src = run.layout.analysis_dir().join(name);
        if src.exists() {
            let bytes = fs::read(&src).map_err(|e| CliError::stage("report", e))?;
            crate::manifest::write_atomic(&dir.join(name), &bytes)
                .map_err(|e| CliError::stage("report", e))?;
            written.push(name.to_string());
        }
    }
    Ok(written)
}
