//! Agreement between reconstructor backends on a sample of interventions.

use std::collections::BTreeMap;

use dbb_core::analysis::{pearson, reconstructor_precision_check, AnalysisError};
use dbb_core::metrics::intervention_fidelity;
use dbb_core::{Method, Pipeline};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::layout::write_json;
use crate::run::{reconstruct_or_mark_failed, write_csv, Run};

pub const MIN_COMMON: usize = 3;

#[derive(Debug, Clone)]
pub struct ValidationRequest {
    pub backends: Vec<String>,
    pub method: Method,
    /// Interventions to sample; all of them when `None`.
    pub sample: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledIntervention {
    pub debate_id: String,
    pub order_k: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub method: Method,
    pub seed: u64,
    pub backends: Vec<String>,
    /// Interventions every backend scored, in corpus order.
    pub interventions: Vec<SampledIntervention>,
    /// F1 per backend over `interventions`, in `backends` order.
    pub f1: Vec<Vec<f64>>,
    /// Pairwise Pearson correlation; `None` where a score vector is constant.
    pub pearson: Vec<Vec<Option<f64>>>,
    /// Mean precision of each backend's reconstructions against the debate summary.
    pub mean_precision: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_off_diagonal: Option<f64>,
}

#[derive(Debug, Serialize)]
struct PearsonRow<'a> {
    backend_a: &'a str,
    backend_b: &'a str,
    r: Option<f64>,
}

pub fn validate_reconstructors(run: &Run, request: &ValidationRequest) -> Result<ValidationReport, CliError> {
    if request.backends.len() < 2 {
        return Err(CliError::Refused(
            "reconstructor validation needs at least two backends".into(),
        ));
    }
    for b in &request.backends {
        if run.gateway.config(b).is_err() {
            return Err(CliError::Config(format!("unknown backend `{b}`")));
        }
        if b == &run.config.roles.generator && run.config.backends[b].is_live() {
            log::warn!("backend {b} also generated the summaries");
        }
    }
    let gen_key = format!("generate.{}", request.method.as_str());
    if !run.manifest.is_complete("summarise") || !run.manifest.is_complete(&gen_key) {
        return Err(CliError::Refused(format!(
            "validation needs completed summarise and {gen_key} stages"
        )));
    }
    let debates = run.debates()?;
    let all: Vec<(usize, usize)> = debates
        .iter()
        .enumerate()
        .flat_map(|(d, debate)| (0..debate.n()).map(move |i| (d, i)))
        .collect();
    let mut picked: Vec<(usize, usize)> = match request.sample {
        Some(k) if k < all.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
            sample(&mut rng, all.len(), k)
                .into_iter()
                .map(|i| all[i])
                .collect()
        }
        _ => all,
    };
    picked.sort_unstable();

    let originals: Vec<_> = debates
        .iter()
        .map(|d| run.load_summaries(d))
        .collect::<Result<Vec<_>, _>>()?;
    let summaries: Vec<_> = debates
        .iter()
        .map(|d| run.load_debate_summary(request.method, d))
        .collect::<Result<Vec<_>, _>>()?;
    let provider = run
        .config
        .embedding
        .build()
        .map_err(|e| CliError::stage("validate", e))?;
    let provider = provider.as_ref();
    let baseline = run.config.embedding.baseline;
    let pipeline = Pipeline::new(&run.gateway, &run.prompts);

    // (f1, precision) per distinct backend and picked item; None when the reply failed
    let mut distinct: Vec<&String> = request.backends.iter().collect();
    distinct.sort();
    distinct.dedup();
    let mut scored: BTreeMap<&str, Vec<Option<(f64, f64)>>> = BTreeMap::new();
    for b in distinct {
        let column = run.pool().install(|| {
            picked
            .par_iter()
            .map(|&(d, i)| {
                let iv = &debates[d].interventions[i];
                let out = reconstruct_or_mark_failed(&pipeline, &summaries[d], iv, b)
                    .map_err(|e| CliError::stage("validate", e))?;
                if out.structured.failed.is_some() {
                    return Ok(None);
                }
                let f1 = intervention_fidelity(&originals[d][i], &out.structured, provider, baseline)
                    .map_err(|e| CliError::stage("validate", e))?
                    .f1;
                let precision = reconstructor_precision_check(
                    &summaries[d].text,
                    &[out.structured.render()],
                    provider,
                )
                .map_err(|e| CliError::stage("validate", e))?;
                Ok(Some((f1, precision)))
            })
            .collect::<Result<Vec<_>, CliError>>()
        })?;
        scored.insert(b.as_str(), column);
    }

    let common: Vec<usize> = (0..picked.len())
        .filter(|&j| scored.values().all(|col| col[j].is_some()))
        .collect();
    if common.len() < MIN_COMMON {
        return Err(CliError::Refused(format!(
            "only {} intervention(s) were scored by every backend; at least {MIN_COMMON} are needed",
            common.len()
        )));
    }
    let column = |b: &str, pick: fn((f64, f64)) -> f64| -> Vec<f64> {
        common
            .iter()
            .map(|&j| pick(scored[b][j].expect("common items are scored")))
            .collect()
    };
    let f1: Vec<Vec<f64>> = request
        .backends
        .iter()
        .map(|b| column(b, |s| s.0))
        .collect();
    let mean_precision: Vec<f64> = request
        .backends
        .iter()
        .map(|b| {
            let p = column(b, |s| s.1);
            p.iter().sum::<f64>() / p.len() as f64
        })
        .collect();
    let k = request.backends.len();
    let mut matrix = vec![vec![None; k]; k];
    for a in 0..k {
        for b in 0..k {
            matrix[a][b] = match pearson(&f1[a], &f1[b]) {
                Ok(r) => Some(r),
                Err(AnalysisError::UndefinedCorrelation) => None,
                Err(e) => return Err(CliError::stage("validate", e)),
            };
        }
    }
    if matrix.iter().flatten().any(Option::is_none) {
        log::warn!("some reconstructor produced constant scores; its correlations are undefined");
    }
    let min_off_diagonal = (0..k)
        .flat_map(|a| (0..k).filter(move |&b| b != a).map(move |b| (a, b)))
        .filter_map(|(a, b)| matrix[a][b])
        .reduce(f64::min);
    Ok(ValidationReport {
        method: request.method,
        seed: request.seed,
        backends: request.backends.clone(),
        interventions: common
            .iter()
            .map(|&j| {
                let (d, i) = picked[j];
                SampledIntervention {
                    debate_id: debates[d].debate_id.clone(),
                    order_k: debates[d].interventions[i].order_index,
                }
            })
            .collect(),
        f1,
        pearson: matrix,
        mean_precision,
        min_off_diagonal,
    })
}

/// Writes `validation/reconstructor_validation.json` and `validation/pearson.csv`.
pub fn write_validation(run: &Run, report: &ValidationReport) -> Result<(), CliError> {
    let dir = run.layout.validation_dir();
    write_json(&dir.join("reconstructor_validation.json"), report, "validate")?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for (a, row) in report.pearson.iter().enumerate() {
        for (b, r) in row.iter().enumerate() {
            w.serialize(PearsonRow {
                backend_a: &report.backends[a],
                backend_b: &report.backends[b],
                r: *r,
            })
            .map_err(|e| CliError::stage("validate", e))?;
        }
    }
    write_csv(&dir.join("pearson.csv"), w, "validate")
}
