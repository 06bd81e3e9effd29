use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dbb_cli::manifest::{RunManifest, StageStatus};
use dbb_cli::run::{column_means, read_scores, ABORT_ENV, ABORT_EXIT_CODE};
use dbb_cli::validate::ValidationReport;
use dbb_core::Method;

const BIN: &str = env!("CARGO_BIN_EXE_dbb");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Fixture config with its corpus path made absolute and `edit` applied.
fn config(dir: &Path, edit: impl Fn(String) -> String) -> PathBuf {
    let text = fs::read_to_string(fixture("mock.toml")).unwrap().replace(
        "path = \"corpus.jsonl\"",
        &format!("path = {:?}", fixture("corpus.jsonl").display().to_string()),
    );
    let path = dir.join("run.toml");
    fs::write(&path, edit(text)).unwrap();
    path
}

fn dbb(runs: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.arg("--runs-dir").arg(runs).args(args).env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run_ok(runs: &Path, cfg: &Path) -> Output {
    let o = dbb(runs, &["run", "-c", cfg.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    o
}

/// Every file of a run except the manifest, whose timestamps differ.
fn artifacts(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.file_name().unwrap() != "manifest.json" {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn assert_same(a: &BTreeMap<PathBuf, Vec<u8>>, b: &BTreeMap<PathBuf, Vec<u8>>, ctx: &str) {
    let keys_a: Vec<_> = a.keys().collect();
    let keys_b: Vec<_> = b.keys().collect();
    assert_eq!(keys_a, keys_b, "{ctx}");
    let differing: Vec<_> = a.iter().filter(|(k, v)| b[*k] != **v).map(|(k, _)| k).collect();
    assert!(differing.is_empty(), "{ctx}: {differing:?}");
}

/// `live=` count summed over the printed backend counter lines.
fn live_calls(out: &str) -> u64 {
    out.lines()
        .filter(|l| l.starts_with("backend "))
        .map(|l| {
            l.split_whitespace()
                .find_map(|w| w.strip_prefix("live="))
                .unwrap()
                .parse::<u64>()
                .unwrap()
        })
        .sum()
}

fn assert_manifest_matches_disk(root: &Path) {
    let m = RunManifest::load(root).unwrap().unwrap();
    let count = |dir: &str| {
        walkdir_json(&root.join(dir))
    };
    assert_eq!(m.record("ingest").count, 3);
    assert_eq!(m.record("summarise").count, count("interventions"));
    for method in Method::ALL {
        let s = method.as_str();
        assert_eq!(m.record(&format!("generate.{s}")).count, count(&format!("summaries/{s}")));
        assert_eq!(
            m.record(&format!("reconstruct.{s}")).count,
            count(&format!("reconstructions/{s}"))
        );
    }
    let rows = fs::read_to_string(root.join("scores.csv")).unwrap().lines().count() - 1;
    assert_eq!(m.record("score").count, rows);
    assert_eq!(m.record("analyse").count, count("analysis"));
}

fn walkdir_json(dir: &Path) -> usize {
    let Ok(rd) = fs::read_dir(dir) else { return 0 };
    rd.map(|e| e.unwrap().path())
        .map(|p| {
            if p.is_dir() {
                walkdir_json(&p)
            } else {
                usize::from(p.extension().is_some_and(|x| x == "json"))
            }
        })
        .sum()
}

#[test]
fn fixture_run_produces_72_rows_and_consistent_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), |t| t);
    let runs = dir.path().join("runs");
    run_ok(&runs, &cfg);
    let root = runs.join("fixture");
    let rows = read_scores(&root.join("scores.csv")).unwrap();
    assert_eq!(rows.len(), 3 * 4 * 6);
    let m = RunManifest::load(&root).unwrap().unwrap();
    assert!(m.stages.values().all(|s| s.status == StageStatus::Complete));
    assert_eq!(m.record("summarise").count, 18);
    assert_eq!(m.record("generate.hierarchical").count, 3);
    assert_eq!(m.record("reconstruct.prompted").count, 18);
    assert_eq!(m.record("score").count, 72);
    assert_manifest_matches_disk(&root);
    for f in ["summary_table.csv", "coefficients.csv", "order_bias_table.csv", "marginal_means.csv", "order_curve.csv"] {
        assert!(root.join("report").join(f).exists(), "{f}");
    }
    let hier: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("summaries/hierarchical/agri-2024-03.json")).unwrap()).unwrap();
    assert_eq!(hier["intermediate"].as_object().unwrap().len(), 4);
}

#[test]
fn rerun_makes_no_live_calls_and_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), |t| t);
    let runs = dir.path().join("runs");
    let first = run_ok(&runs, &cfg);
    assert!(live_calls(&stdout(&first)) > 0);
    let before = artifacts(&runs.join("fixture"));

    let again = run_ok(&runs, &cfg);
    assert_eq!(live_calls(&stdout(&again)), 0);
    assert_same(&artifacts(&runs.join("fixture")), &before, "rerun");

    // a fresh run directory is rebuilt entirely from the response cache
    let o = dbb(&runs, &["run", "--fresh", "-c", cfg.to_str().unwrap()], &[]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(live_calls(&out), 0);
    assert!(out.contains("cache_hits=72"), "{out}");
    assert_same(&artifacts(&runs.join("fixture")), &before, "rerun");
}

#[test]
fn independent_fresh_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = config(a.path(), |t| t);
    run_ok(&a.path().join("runs"), &cfg);
    run_ok(&b.path().join("runs"), &cfg);
    let ra = a.path().join("runs/fixture");
    let rb = b.path().join("runs/fixture");
    assert_eq!(fs::read(ra.join("scores.csv")).unwrap(), fs::read(rb.join("scores.csv")).unwrap());
    let fa = artifacts(&ra.join("analysis"));
    assert_eq!(fa.len(), 7);
    assert_same(&fa, &artifacts(&rb.join("analysis")), "analysis");
}

#[test]
fn resume_after_interrupt_matches_uninterrupted_run() {
    let base = tempfile::tempdir().unwrap();
    let cfg = config(base.path(), |t| t);
    let reference_runs = base.path().join("reference");
    run_ok(&reference_runs, &cfg);
    let reference = artifacts(&reference_runs.join("fixture"));

    for point in ["summarise:5", "generate.hierarchical:1", "reconstruct.grouped:7", "generate.default:2"] {
        let runs = base.path().join(point.replace([':', '.'], "_"));
        let o = dbb(&runs, &["run", "-c", cfg.to_str().unwrap()], &[(ABORT_ENV, point)]);
        assert_eq!(o.status.code(), Some(ABORT_EXIT_CODE), "{point}");
        assert!(!runs.join("fixture/scores.csv").exists());
        let m = RunManifest::load(&runs.join("fixture")).unwrap().unwrap();
        let stage = point.split(':').next().unwrap();
        assert_eq!(m.record(stage).status, StageStatus::Running, "{point}");

        run_ok(&runs, &cfg);
        assert_same(&artifacts(&runs.join("fixture")), &reference, point);
        assert_manifest_matches_disk(&runs.join("fixture"));
    }
}

#[test]
fn report_means_match_scores_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), |t| t);
    let runs = dir.path().join("runs");
    run_ok(&runs, &cfg);
    let root = runs.join("fixture");
    let o = dbb(&runs, &["report", "fixture"], &[]);
    assert!(o.status.success());

    // independent recount straight from the CSV text
    let text = fs::read_to_string(root.join("scores.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (mi, fi, ci, di) = (col("method"), col("F1"), col("C"), col("Dr"));
    let mut sums: BTreeMap<String, (f64, f64, f64, usize)> = BTreeMap::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let e = sums.entry(f[mi].to_string()).or_default();
        e.0 += f[fi].parse::<f64>().unwrap();
        e.1 += f[ci].parse::<f64>().unwrap();
        e.2 += f[di].parse::<f64>().unwrap();
        e.3 += 1;
    }
    let table = fs::read_to_string(root.join("report/summary_table.csv")).unwrap();
    let mut rows = table.lines();
    assert_eq!(rows.next().unwrap(), "model,method,F1,C_Ratio,D_Ratio,n");
    let mut labels = Vec::new();
    for line in rows {
        let f: Vec<&str> = line.split(',').collect();
        labels.push(f[1].to_string());
        let key = f[1].parse::<Method>().unwrap().as_str().to_string();
        let (s1, s2, s3, n) = sums[&key];
        let n_f = n as f64;
        assert_eq!(f[2].parse::<f64>().unwrap().to_bits(), (s1 / n_f).to_bits());
        assert_eq!(f[3].parse::<f64>().unwrap().to_bits(), (s2 / n_f).to_bits());
        assert_eq!(f[4].parse::<f64>().unwrap().to_bits(), (s3 / n_f).to_bits());
        assert_eq!(f[5], n.to_string());
    }
    assert_eq!(labels, ["Default", "Grouped", "Hierarchical", "Prompt"]);

    let recs = read_scores(&root.join("scores.csv")).unwrap();
    let grouped: Vec<_> = recs.iter().filter(|r| r.method == Method::Grouped).collect();
    let (f1, _, _) = column_means(&grouped);
    assert_eq!(f1.to_bits(), (sums["grouped"].0 / 18.0).to_bits());
}

#[test]
fn method_subset_limits_tables_and_skips_order_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), |t| {
        t.replace("run_id = \"fixture\"", "run_id = \"subset\"\nmethods = [\"prompted\", \"default\"]")
    });
    let runs = dir.path().join("runs");
    run_ok(&runs, &cfg);
    let root = runs.join("subset");
    assert_eq!(read_scores(&root.join("scores.csv")).unwrap().len(), 36);
    let table = fs::read_to_string(root.join("report/summary_table.csv")).unwrap();
    let labels: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(labels, ["Default", "Prompt"]);
    assert!(!root.join("analysis/mock-writer/order_bias.json").exists());
    assert!(!root.join("report/order_bias_table.csv").exists());
    assert!(root.join("analysis/mock-writer/party_bias_prompted.json").exists());
    let m = RunManifest::load(&root).unwrap().unwrap();
    assert!(m.record("analyse").notes.iter().any(|n| n.contains("order-bias model skipped")));
    assert!(!m.stages.contains_key("generate.grouped"));

    let o = dbb(&runs, &["analyze", "subset", "--order-bias"], &[]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn changed_config_is_refused_without_fresh() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    let cfg = config(dir.path(), |t| t);
    run_ok(&runs, &cfg);
    let m0 = RunManifest::load(&runs.join("fixture")).unwrap().unwrap();
    for edit in [
        |t: String| t.replace("seed = 11", "seed = 12"),
        |t: String| t.replace("run_id = \"fixture\"", "run_id = \"fixture\"\nmethods = [\"default\"]"),
        |t: String| t.replace("dimension = 256", "dimension = 128"),
    ] {
        let cfg = config(dir.path(), edit);
        let o = dbb(&runs, &["run", "-c", cfg.to_str().unwrap()], &[]);
        assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(RunManifest::load(&runs.join("fixture")).unwrap().unwrap(), m0);
    }
    // worker count is not part of the hash
    let cfg = config(dir.path(), |t| t.replace("workers = 4", "workers = 1"));
    run_ok(&runs, &cfg);
    let cfg = config(dir.path(), |t| t.replace("seed = 11", "seed = 12"));
    let o = dbb(&runs, &["run", "--fresh", "-c", cfg.to_str().unwrap()], &[]);
    assert!(o.status.success());
    assert_ne!(RunManifest::load(&runs.join("fixture")).unwrap().unwrap().config_hash, m0.config_hash);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    let bad = config(dir.path(), |t| t.replace("[limits]", "[limits]\nthreads = 2"));
    assert_eq!(dbb(&runs, &["run", "-c", bad.to_str().unwrap()], &[]).status.code(), Some(2));
    let same = config(dir.path(), |t| t.replace("reconstructor = \"reader\"", "reconstructor = \"ghost\""));
    assert_eq!(dbb(&runs, &["run", "-c", same.to_str().unwrap()], &[]).status.code(), Some(2));

    let corpus = dir.path().join("broken.jsonl");
    fs::write(&corpus, "{\"debate_id\": \"x\", \"interventions\": [{\"order\": 2}]}\n").unwrap();
    let broken = config(dir.path(), |t| {
        t.replace(&fixture("corpus.jsonl").display().to_string(), &corpus.display().to_string())
    });
    let o = dbb(&runs, &["run", "-c", broken.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(3));
    let m = RunManifest::load(&runs.join("fixture")).unwrap().unwrap();
    assert_eq!(m.record("ingest").status, StageStatus::Running);
    assert_eq!(m.record("ingest").count, 0);

    assert_eq!(dbb(&runs, &["report", "missing"], &[]).status.code(), Some(4));

    let partial = dir.path().join("partial");
    let cfg = config(dir.path(), |t| t);
    let o = dbb(&partial, &["run", "-c", cfg.to_str().unwrap()], &[(ABORT_ENV, "summarise:2")]);
    assert_eq!(o.status.code(), Some(ABORT_EXIT_CODE));
    assert_eq!(dbb(&partial, &["report", "fixture"], &[]).status.code(), Some(4));
    assert_eq!(dbb(&partial, &["score", "fixture"], &[]).status.code(), Some(4));
    assert_eq!(dbb(&partial, &["analyze", "fixture"], &[]).status.code(), Some(4));
}

#[test]
fn score_force_rewrites_identical_scores() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    run_ok(&runs, &config(dir.path(), |t| t));
    let root = runs.join("fixture");
    let before = artifacts(&root);
    let o = dbb(&runs, &["score", "fixture", "--force"], &[]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("72 score rows"));
    assert_same(&artifacts(&root), &before, "rescore");
    assert_manifest_matches_disk(&root);
}

#[test]
fn validation_matrix_is_symmetric_with_unit_diagonal() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    run_ok(&runs, &config(dir.path(), |t| t));
    let o = dbb(
        &runs,
        &["validate-reconstructor", "fixture", "--backends", "reader,reader2", "--sample", "12", "--seed", "3"],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let path = runs.join("fixture/validation/reconstructor_validation.json");
    let report: ValidationReport = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(report.interventions.len(), 12);
    assert_eq!(report.pearson.len(), 2);
    for a in 0..2 {
        assert_eq!(report.pearson[a].len(), 2);
        assert_eq!(report.pearson[a][a], Some(1.0));
        for b in 0..2 {
            assert_eq!(report.pearson[a][b], report.pearson[b][a]);
        }
    }
    assert!(report.mean_precision.iter().all(|p| *p > 0.0 && *p <= 1.0 + 1e-12));
    let csv = fs::read_to_string(runs.join("fixture/validation/pearson.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);

    let o = dbb(&runs, &["validate-reconstructor", "fixture", "--backends", "reader2,reader2"], &[]);
    assert!(o.status.success());
    let report: ValidationReport = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(report.pearson[0][1], Some(1.0));
    assert_eq!(report.interventions.len(), 18);

    let single = dbb(&runs, &["validate-reconstructor", "fixture", "--backends", "reader"], &[]);
    assert_eq!(single.status.code(), Some(4));
    let tiny = dbb(&runs, &["validate-reconstructor", "fixture", "--backends", "reader,reader2", "--sample", "2"], &[]);
    assert_eq!(tiny.status.code(), Some(4));
    let unknown = dbb(&runs, &["validate-reconstructor", "fixture", "--backends", "reader,nobody"], &[]);
    assert_eq!(unknown.status.code(), Some(2));
}
