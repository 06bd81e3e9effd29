//! Staged, resumable execution of a run.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use dbb_core::analysis::{
    marginal_means, order_bias_model, order_curve, party_bias_model, FitOptions,
};
use dbb_core::corpus::{ingest_debates, relative_order, write_corpus};
use dbb_core::metrics::{intervention_fidelity, ratios};
use dbb_core::pipeline::ReconstructionOutput;
use dbb_core::{
    Debate, DebateSummary, Gateway, Method, Pipeline, PipelineError, PromptSet, ScoreRecord,
    StructuredSummary,
};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::layout::{count_json, file_safe, json_bytes, read_json, write_json, RunLayout};
use crate::manifest::{remove_stale_temps, write_atomic, RunManifest};

/// `<stage>:<n>`: exit the process right after the n-th item of a stage is
/// persisted, as if it had been killed. Used by the resume tests.
pub const ABORT_ENV: &str = "DBB_ABORT_AFTER";
pub const ABORT_EXIT_CODE: i32 = 130;

pub const ORDER_CURVE_STEPS: usize = 20;

pub fn stage_keys(methods: &[Method]) -> Vec<String> {
    let mut keys = vec!["ingest".to_string(), "summarise".to_string()];
    keys.extend(methods.iter().map(|m| format!("generate.{}", m.as_str())));
    keys.extend(methods.iter().map(|m| format!("reconstruct.{}", m.as_str())));
    keys.push("score".into());
    keys.push("analyse".into());
    keys
}

fn parse_abort(value: &str) -> Option<(String, usize)> {
    let (stage, n) = value.rsplit_once(':')?;
    Some((stage.to_string(), n.parse().ok()?))
}

fn pipeline_error(stage: &str, e: PipelineError) -> CliError {
    CliError::stage(stage, e)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnalyseSelection {
    pub order_bias: bool,
    pub party_bias: bool,
}

impl AnalyseSelection {
    pub fn all() -> Self {
        Self {
            order_bias: true,
            party_bias: true,
        }
    }
}

#[derive(Debug, Serialize)]
struct MarginalMeanRow<'a> {
    model: &'a str,
    method: &'a str,
    party: &'a str,
    mu_hat: f64,
    ci_low: f64,
    ci_high: f64,
    eta: f64,
    se_eta: f64,
}

#[derive(Debug, Serialize)]
struct OrderCurveRow<'a> {
    model: &'a str,
    method: &'a str,
    x: f64,
    mu: f64,
}

pub struct Run {
    pub layout: RunLayout,
    pub config: RunConfig,
    pub prompts: PromptSet,
    pub gateway: Gateway,
    pub manifest: RunManifest,
    pool: rayon::ThreadPool,
    abort: Option<(String, usize)>,
}

fn build_gateway(config: &RunConfig, runs_dir: &Path) -> Result<Gateway, CliError> {
    let cache = config
        .cache_dir
        .clone()
        .unwrap_or_else(|| runs_dir.join("cache"));
    let mut gateway = Gateway::new(Some(cache));
    for (name, backend) in &config.backends {
        gateway
            .add_backend(name, backend.clone())
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(gateway)
}

impl Run {
    fn assemble(
        layout: RunLayout,
        config: RunConfig,
        prompts: PromptSet,
        manifest: RunManifest,
        runs_dir: &Path,
    ) -> Result<Self, CliError> {
        let gateway = build_gateway(&config, runs_dir)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.limits.workers)
            .build()
            .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
        let abort = std::env::var(ABORT_ENV).ok().and_then(|v| parse_abort(&v));
        Ok(Self {
            layout,
            config,
            prompts,
            gateway,
            manifest,
            pool,
            abort,
        })
    }

    /// Opens the run directory for `config`, creating it if needed. An
    /// existing run with a different config hash is refused unless `fresh`,
    /// which deletes it first. `fresh` always starts from an empty directory.
    pub fn create(config: RunConfig, runs_dir: &Path, fresh: bool) -> Result<Self, CliError> {
        let prompts = config.prompts()?;
        let corpus_bytes = fs::read(&config.corpus.path).map_err(|e| {
            CliError::Config(format!(
                "cannot read corpus {}: {e}",
                config.corpus.path.display()
            ))
        })?;
        let hash = config.hash(&prompts, &corpus_bytes);
        let layout = RunLayout::new(runs_dir, &config.run_id);
        let existing = RunManifest::load(&layout.root)?;
        let manifest = match existing {
            Some(m) if !fresh && m.config_hash == hash => m,
            Some(m) if !fresh => {
                return Err(CliError::Refused(format!(
                    "run {} exists with config hash {}, current config hashes to {hash}; \
                     use a new run_id or --fresh",
                    config.run_id, m.config_hash
                )))
            }
            _ => {
                if fresh && layout.root.exists() {
                    fs::remove_dir_all(&layout.root)
                        .map_err(|e| CliError::stage("ingest", format!("cannot clear run: {e}")))?;
                }
                RunManifest::new(&config.run_id, &hash, &stage_keys(&config.ordered_methods()))
            }
        };
        let mut run = Self::assemble(layout, config, prompts, manifest, runs_dir)?;
        write_json(&run.layout.config(), &run.config, "ingest")?;
        run.manifest.save(&run.layout.root)?;
        Ok(run)
    }

    /// Opens an existing run by id.
    pub fn open(runs_dir: &Path, run_id: &str) -> Result<Self, CliError> {
        let layout = RunLayout::new(runs_dir, run_id);
        let manifest = RunManifest::load(&layout.root)?
            .ok_or_else(|| CliError::Refused(format!("no run {run_id} under {}", runs_dir.display())))?;
        let text = fs::read_to_string(layout.config())
            .map_err(|e| CliError::Refused(format!("run {run_id} has no readable config: {e}")))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("stored config of {run_id}: {e}")))?;
        config.validate()?;
        let prompts = config.prompts()?;
        Self::assemble(layout, config, prompts, manifest, runs_dir)
    }

    pub fn pool(&self) -> &rayon::ThreadPool {
        &self.pool
    }

    pub fn methods(&self) -> Vec<Method> {
        self.config.ordered_methods()
    }

    pub fn debates(&self) -> Result<Vec<Debate>, CliError> {
        ingest_debates(&self.layout.corpus(), self.config.corpus.cap)
            .map_err(|e| CliError::stage("ingest", e))
    }

    /// Artifacts of a stage currently on disk.
    pub fn disk_count(&self, key: &str) -> usize {
        let l = &self.layout;
        match key.split_once('.') {
            Some(("generate", m)) => m
                .parse::<Method>()
                .map(|m| count_json(&l.summaries_dir(m)))
                .unwrap_or(0),
            Some(("reconstruct", m)) => m
                .parse::<Method>()
                .map(|m| count_json(&l.reconstructions_dir(m)))
                .unwrap_or(0),
            _ => match key {
                "ingest" => fs::read_to_string(l.corpus())
                    .map(|t| t.lines().filter(|x| !x.trim().is_empty()).count())
                    .unwrap_or(0),
                "summarise" => count_json(&l.interventions_dir()),
                "score" => fs::read_to_string(l.scores())
                    .map(|t| t.lines().count().saturating_sub(1))
                    .unwrap_or(0),
                "analyse" => count_json(&l.analysis_dir()),
                _ => 0,
            },
        }
    }

    /// Runs `body` unless the stage is complete with its artifacts intact.
    /// The manifest count is always taken from disk.
    fn stage<F>(&mut self, key: &str, force: bool, body: F) -> Result<(), CliError>
    where
        F: FnOnce(&Self) -> Result<Vec<String>, CliError>,
    {
        if !force
            && self.manifest.is_complete(key)
            && self.manifest.record(key).count == self.disk_count(key)
        {
            log::info!("{key}: complete, skipped");
            return Ok(());
        }
        log::info!("{key}: running");
        self.manifest.start(key);
        self.manifest.save(&self.layout.root)?;
        let outcome = body(self);
        let count = self.disk_count(key);
        match outcome {
            Ok(notes) => {
                self.manifest.complete(key, count, notes);
                self.manifest.save(&self.layout.root)?;
                log::info!("{key}: {count} artifact(s)");
                Ok(())
            }
            Err(e) => {
                self.manifest.set_count(key, count);
                self.manifest.save(&self.layout.root)?;
                Err(e)
            }
        }
    }

    fn abort_check(&self, stage: &str, persisted: usize) {
        if let Some((s, n)) = &self.abort {
            if s == stage && persisted >= *n {
                eprintln!("{ABORT_ENV}: stopping after {persisted} item(s) of {stage}");
                std::process::exit(ABORT_EXIT_CODE);
            }
        }
    }

    /// Produces every missing item artifact on the worker pool. Existing
    /// files are kept as they are.
    fn persist_items<T, P, W>(&self, stage: &str, items: &[T], path: P, work: W) -> Result<(), CliError>
    where
        T: Sync,
        P: Fn(&T) -> PathBuf + Sync,
        W: Fn(&T) -> Result<Vec<u8>, CliError> + Sync,
    {
        let persisted = AtomicUsize::new(0);
        self.pool.install(|| {
            items.par_iter().try_for_each(|item| {
                let target = path(item);
                if target.exists() {
                    return Ok(());
                }
                let bytes = work(item)?;
                write_atomic(&target, &bytes)
                    .map_err(|e| CliError::stage(stage, format!("{}: {e}", target.display())))?;
                self.abort_check(stage, persisted.fetch_add(1, Ordering::SeqCst) + 1);
                Ok(())
            })
        })
    }

    /// Executes every stage in order, skipping completed ones.
    pub fn execute(&mut self) -> Result<(), CliError> {
        let swept = remove_stale_temps(&self.layout.root).map_err(|e| CliError::stage("ingest", e))?;
        if swept > 0 {
            log::info!("removed {swept} partial file(s) of an interrupted run");
        }
        self.stage("ingest", false, |run| run.ingest())?;
        self.stage("summarise", false, |run| run.summarise())?;
        for m in self.methods() {
            self.stage(&format!("generate.{}", m.as_str()), false, |run| run.generate(m))?;
        }
        for m in self.methods() {
            self.stage(&format!("reconstruct.{}", m.as_str()), false, |run| run.reconstruct(m))?;
        }
        self.score(false)?;
        self.analyse(false, AnalyseSelection::all())
    }

    fn ingest(&self) -> Result<Vec<String>, CliError> {
        let c = &self.config.corpus;
        let mut debates =
            ingest_debates(&c.path, c.cap).map_err(|e| CliError::stage("ingest", e))?;
        let mut notes = Vec::new();
        if let Some(k) = c.sample {
            if k < debates.len() {
                let mut rng = ChaCha8Rng::seed_from_u64(c.sample_seed);
                let mut keep = sample(&mut rng, debates.len(), k).into_vec();
                keep.sort_unstable();
                let keep: HashSet<usize> = keep.into_iter().collect();
                debates = debates
                    .into_iter()
                    .enumerate()
                    .filter(|(i, _)| keep.contains(i))
                    .map(|(_, d)| d)
                    .collect();
                notes.push(format!("sampled {k} debates with seed {}", c.sample_seed));
            }
        }
        if debates.is_empty() {
            return Err(CliError::stage("ingest", "corpus has no debates"));
        }
        let mut names = HashSet::new();
        for d in &debates {
            if !names.insert(file_safe(&d.debate_id)) {
                return Err(CliError::stage(
                    "ingest",
                    format!("debate id {} collides with another after file-name mapping", d.debate_id),
                ));
            }
        }
        write_atomic(&self.layout.corpus(), write_corpus(&debates).as_bytes())
            .map_err(|e| CliError::stage("ingest", e))?;
        Ok(notes)
    }

    fn summarise(&self) -> Result<Vec<String>, CliError> {
        let debates = self.debates()?;
        let items: Vec<(usize, usize)> = debates
            .iter()
            .enumerate()
            .flat_map(|(d, debate)| (0..debate.n()).map(move |i| (d, i)))
            .collect();
        let pipeline = Pipeline::new(&self.gateway, &self.prompts);
        let backend = &self.config.roles.summariser;
        self.persist_items(
            "summarise",
            &items,
            |&(d, i)| {
                let iv = &debates[d].interventions[i];
                self.layout.intervention(&iv.debate_id, iv.order_index)
            },
            |&(d, i)| {
                let s = pipeline
                    .summarise_or_mark_failed(&debates[d], &debates[d].interventions[i], backend)
                    .map_err(|e| pipeline_error("summarise", e))?;
                Ok(json_bytes(&s))
            },
        )?;
        let failed = self.load_all_summaries(&debates)?
            .iter()
            .flatten()
            .filter(|s| s.failed.is_some())
            .count();
        Ok(if failed > 0 {
            vec![format!("{failed} intervention summary(ies) marked failed")]
        } else {
            Vec::new()
        })
    }

    pub fn load_summaries(&self, debate: &Debate) -> Result<Vec<StructuredSummary>, CliError> {
        debate
            .interventions
            .iter()
            .map(|iv| read_json(&self.layout.intervention(&debate.debate_id, iv.order_index), "summarise"))
            .collect()
    }

    fn load_all_summaries(&self, debates: &[Debate]) -> Result<Vec<Vec<StructuredSummary>>, CliError> {
        debates.iter().map(|d| self.load_summaries(d)).collect()
    }

    pub fn load_debate_summary(&self, method: Method, debate: &Debate) -> Result<DebateSummary, CliError> {
        read_json(
            &self.layout.summary(method, &debate.debate_id),
            &format!("generate.{}", method.as_str()),
        )
    }

    fn generate(&self, method: Method) -> Result<Vec<String>, CliError> {
        let stage = format!("generate.{}", method.as_str());
        let debates = self.debates()?;
        let pipeline = Pipeline::new(&self.gateway, &self.prompts);
        let backend = &self.config.roles.generator;
        self.persist_items(
            &stage,
            &debates,
            |d| self.layout.summary(method, &d.debate_id),
            |d| {
                let sums = self.load_summaries(d)?;
                let out = pipeline
                    .generate(method, d, &sums, backend)
                    .map_err(|e| pipeline_error(&stage, e))?;
                Ok(json_bytes(&out))
            },
        )?;
        Ok(Vec::new())
    }

    fn reconstruct(&self, method: Method) -> Result<Vec<String>, CliError> {
        let stage = format!("reconstruct.{}", method.as_str());
        let debates = self.debates()?;
        let summaries: Vec<DebateSummary> = debates
            .iter()
            .map(|d| self.load_debate_summary(method, d))
            .collect::<Result<_, _>>()?;
        let items: Vec<(usize, usize)> = debates
            .iter()
            .enumerate()
            .flat_map(|(d, debate)| (0..debate.n()).map(move |i| (d, i)))
            .collect();
        let pipeline = Pipeline::new(&self.gateway, &self.prompts);
        let backend = &self.config.roles.reconstructor;
        self.persist_items(
            &stage,
            &items,
            |&(d, i)| {
                let iv = &debates[d].interventions[i];
                self.layout.reconstruction(method, &iv.debate_id, iv.order_index)
            },
            |&(d, i)| {
                let iv = &debates[d].interventions[i];
                let out = reconstruct_or_mark_failed(&pipeline, &summaries[d], iv, backend)
                    .map_err(|e| pipeline_error(&stage, e))?;
                Ok(json_bytes(&out))
            },
        )?;
        Ok(Vec::new())
    }

    pub fn load_reconstruction(
        &self,
        method: Method,
        debate: &Debate,
        k: u32,
    ) -> Result<ReconstructionOutput, CliError> {
        read_json(
            &self.layout.reconstruction(method, &debate.debate_id, k),
            &format!("reconstruct.{}", method.as_str()),
        )
    }

    fn require_complete(&self, keys: &[String], what: &str) -> Result<(), CliError> {
        for k in keys {
            if !self.manifest.is_complete(k) {
                return Err(CliError::Refused(format!("{what} needs stage {k} to be complete")));
            }
        }
        Ok(())
    }

    /// Scores every reconstruction and writes `scores.csv`. Later stages are
    /// redone when `force` is set.
    pub fn score(&mut self, force: bool) -> Result<(), CliError> {
        let needed: Vec<String> = self
            .methods()
            .iter()
            .map(|m| format!("reconstruct.{}", m.as_str()))
            .collect();
        self.require_complete(&needed, "scoring")?;
        self.stage("score", force, |run| run.write_scores())?;
        if force {
            self.analyse(true, AnalyseSelection::all())?;
        }
        Ok(())
    }

    fn write_scores(&self) -> Result<Vec<String>, CliError> {
        let debates = self.debates()?;
        let originals = self.load_all_summaries(&debates)?;
        let provider = self
            .config
            .embedding
            .build()
            .map_err(|e| CliError::stage("score", e))?;
        let baseline = self.config.embedding.baseline;
        let model = self.config.generator_model().to_string();
        let tasks: Vec<(Method, usize)> = self
            .methods()
            .into_iter()
            .flat_map(|m| (0..debates.len()).map(move |d| (m, d)))
            .collect();
        let provider = provider.as_ref();
        let blocks: Vec<Vec<ScoreRecord>> = self.pool.install(|| {
            tasks
                .par_iter()
                .map(|&(method, d)| {
                    let debate = &debates[d];
                    let summary = self.load_debate_summary(method, debate)?;
                    let recons: Vec<ReconstructionOutput> = debate
                        .interventions
                        .iter()
                        .map(|iv| self.load_reconstruction(method, debate, iv.order_index))
                        .collect::<Result<_, _>>()?;
                    let report = ratios(
                        &summary,
                        &originals[d],
                        recons.iter().map(|r| &r.structured),
                    );
                    let n = debate.n();
                    debate
                        .interventions
                        .iter()
                        .zip(&originals[d])
                        .zip(&recons)
                        .map(|((iv, orig), rec)| {
                            let score = intervention_fidelity(orig, &rec.structured, provider, baseline)
                                .map_err(|e| CliError::stage("score", e))?;
                            let order = relative_order(iv.order_index as usize, n)
                                .map_err(|e| CliError::stage("score", e))?;
                            Ok(ScoreRecord {
                                debate_id: debate.debate_id.clone(),
                                method,
                                model: model.clone(),
                                order_k: iv.order_index,
                                n: n as u32,
                                relative_order: order.relative,
                                party_group: iv.speaker.party_group.clone(),
                                speaker_id: iv.speaker.speaker_id.clone(),
                                precision: score.precision,
                                recall: score.recall,
                                f1: score.f1,
                                compression: report.compression_ratio,
                                decompression: report.decompression_ratio,
                                found: rec.found,
                            })
                        })
                        .collect::<Result<Vec<_>, CliError>>()
                })
                .collect::<Result<Vec<_>, CliError>>()
        })?;
        let records: Vec<ScoreRecord> = blocks.into_iter().flatten().collect();
        write_atomic(&self.layout.scores(), &scores_csv(&records)?)
            .map_err(|e| CliError::stage("score", e))?;
        let missing = records.iter().filter(|r| !r.found).count();
        Ok(if missing > 0 {
            vec![format!("{missing} reconstruction(s) did not find their speaker")]
        } else {
            Vec::new()
        })
    }

    pub fn read_scores(&self) -> Result<Vec<ScoreRecord>, CliError> {
        read_scores(&self.layout.scores())
    }

    /// Fits the bias models and writes their JSON plus the plot-ready CSVs.
    pub fn analyse(&mut self, force: bool, selection: AnalyseSelection) -> Result<(), CliError> {
        if !self.manifest.is_complete("score") {
            return Err(CliError::Refused("analysis needs a scored run".into()));
        }
        self.stage("analyse", force, |run| run.fit_models(selection))
    }

    fn fit_models(&self, selection: AnalyseSelection) -> Result<Vec<String>, CliError> {
        let records = self.read_scores()?;
        let options = FitOptions {
            max_iter: self.config.regression.max_iter,
        };
        let reference = self.config.regression.reference_party.as_deref();
        let alpha = self.config.regression.alpha;
        let mut models: Vec<&str> = records.iter().map(|r| r.model.as_str()).collect();
        models.sort_unstable();
        models.dedup();
        let dir = self.layout.analysis_dir();
        if selection.order_bias && selection.party_bias && dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| CliError::stage("analyse", e))?;
        }
        let mut notes = Vec::new();
        let mut curve_rows = Vec::new();
        let mut mean_rows = Vec::new();
        let grid: Vec<f64> = (0..=ORDER_CURVE_STEPS)
            .map(|i| i as f64 / ORDER_CURVE_STEPS as f64)
            .collect();
        let mut note = |msg: String| {
            log::warn!("{msg}");
            notes.push(msg);
        };
        for &model in &models {
            let model_dir = self.layout.model_analysis_dir(model);
            if selection.order_bias {
                match order_bias_model(&records, model, options) {
                    Ok(fit) => {
                        write_json(&model_dir.join("order_bias.json"), &fit, "analyse")?;
                        let significant = fit.coefficients[1..]
                            .iter()
                            .filter(|c| c.significant(alpha))
                            .count();
                        log::info!("{model}: order bias fit, {significant} term(s) with p < {alpha}");
                        if !fit.converged {
                            note(format!("{model}: order-bias fit did not converge"));
                        }
                        for w in &fit.warnings {
                            note(format!("{model}/order-bias: {w}"));
                        }
                        match order_curve(&fit, &grid) {
                            Ok(points) => curve_rows.extend(points.into_iter().map(|(m, x, mu)| {
                                (model.to_string(), m, x, mu)
                            })),
                            Err(e) => note(format!("{model}: order curve: {e}")),
                        }
                    }
                    Err(e) => note(format!("{model}: order-bias model skipped: {e}")),
                }
            }
            if selection.party_bias {
                for method in self.methods() {
                    match party_bias_model(&records, model, method, reference, options) {
                        Ok(fit) => {
                            write_json(
                                &model_dir.join(format!("party_bias_{}.json", method.as_str())),
                                &fit,
                                "analyse",
                            )?;
                            for w in &fit.warnings {
                                note(format!("{model}/{method}/party-bias: {w}"));
                            }
                            match marginal_means(&fit) {
                                Ok(means) => mean_rows.extend(
                                    means.into_iter().map(|mm| (model.to_string(), method, mm)),
                                ),
                                Err(e) => note(format!("{model}/{method}: marginal means skipped: {e}")),
                            }
                        }
                        Err(e) => note(format!("{model}/{method}: party-bias model skipped: {e}")),
                    }
                }
            }
        }
        if selection.order_bias {
            let mut w = csv::Writer::from_writer(Vec::new());
            for (model, m, x, mu) in &curve_rows {
                w.serialize(OrderCurveRow {
                    model,
                    method: m.as_str(),
                    x: *x,
                    mu: *mu,
                })
                .map_err(|e| CliError::stage("analyse", e))?;
            }
            write_csv(&dir.join("order_curve.csv"), w, "analyse")?;
        }
        if selection.party_bias {
            let mut w = csv::Writer::from_writer(Vec::new());
            for (model, m, mm) in &mean_rows {
                w.serialize(MarginalMeanRow {
                    model,
                    method: m.as_str(),
                    party: &mm.group,
                    mu_hat: mm.mu_hat,
                    ci_low: mm.ci_low,
                    ci_high: mm.ci_high,
                    eta: mm.eta,
                    se_eta: mm.se_eta,
                })
                .map_err(|e| CliError::stage("analyse", e))?;
            }
            write_csv(&dir.join("marginal_means.csv"), w, "analyse")?;
        }
        Ok(notes)
    }

    /// Per-backend gateway counters, one line each.
    pub fn counter_lines(&self) -> Vec<String> {
        self.gateway
            .backend_names()
            .filter_map(|name| {
                self.gateway.counters(name).ok().map(|c| {
                    format!(
                        "backend {name}: requests={} live={} cache_hits={} retries={} failures={}",
                        c.requests, c.live, c.cache_hits, c.retries, c.failures
                    )
                })
            })
            .collect()
    }
}

/// Parse failures become a failed, not-found reconstruction; transport
/// errors propagate.
pub fn reconstruct_or_mark_failed(
    pipeline: &Pipeline<'_>,
    summary: &DebateSummary,
    iv: &dbb_core::Intervention,
    backend: &str,
) -> Result<ReconstructionOutput, PipelineError> {
    match pipeline.reconstruct_intervention(summary, &iv.speaker, iv.order_index, backend) {
        Ok(r) => Ok(r),
        Err(e @ (PipelineError::Stage { .. } | PipelineError::Input(_))) => {
            log::error!("{e}");
            Ok(ReconstructionOutput::failed(&iv.speaker, iv.order_index, e.to_string()))
        }
        Err(e) => Err(e),
    }
}

pub fn scores_csv(records: &[ScoreRecord]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(|e| CliError::stage("score", e))?;
    }
    w.into_inner().map_err(|e| CliError::stage("score", e.to_string()))
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>, CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Refused(format!("cannot read {}: {e}", path.display())))?;
    reader
        .deserialize()
        .collect::<Result<Vec<ScoreRecord>, _>>()
        .map_err(|e| CliError::stage("score", format!("{}: {e}", path.display())))
}

pub fn write_csv(path: &Path, w: csv::Writer<Vec<u8>>, stage: &str) -> Result<(), CliError> {
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::stage(stage, e.to_string()))?;
    write_atomic(path, &bytes).map_err(|e| CliError::stage(stage, format!("{}: {e}", path.display())))
}

/// Mean of each column in file order; shared by the report and its tests.
pub fn column_means(records: &[&ScoreRecord]) -> (f64, f64, f64) {
    let n = records.len() as f64;
    let (mut f1, mut c, mut dr) = (0.0, 0.0, 0.0);
    for r in records {
        f1 += r.f1;
        c += r.compression;
        dr += r.decompression;
    }
    (f1 / n, c / n, dr / n)
}

pub fn group_by_model_method(records: &[ScoreRecord]) -> BTreeMap<(String, Method), Vec<&ScoreRecord>> {
    let mut out: BTreeMap<(String, Method), Vec<&ScoreRecord>> = BTreeMap::new();
    for r in records {
        out.entry((r.model.clone(), r.method)).or_default().push(r);
    }
    out
}
