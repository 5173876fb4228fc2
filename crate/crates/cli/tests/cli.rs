use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use fedfap_cli::{
    cmd_compare, cmd_extract, cmd_preprocess, cmd_run, cmd_synth, read_country_scores, read_history, read_sweep,
    sha256_file, ExperimentManifest, COUNTRY_FIGURE_FILE, HISTORY_FILE, MANIFEST_FILE, METRICS_FILE, SWEEP_FIGURE_FILE,
};
use fedfap_core::cohort::default_cohort;
use fedfap_core::metrics::figures::ComparisonTable;
use fedfap_core::metrics::MetricsReport;
use fedfap_core::sensing::events::{write_modality_csv, Payload, SensorEvent};
use fedfap_core::sensing::registry::Modality;
use fedfap_core::sensing::table::{write_reports_csv, Report};
use fedfap_core::sensing::FeatureTable;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fedfap"))
}

fn write(path: &Path, text: &str) -> PathBuf {
    fs::write(path, text).unwrap();
    path.to_path_buf()
}

/// A cohort small enough to train in seconds.
fn small_spec(dir: &Path) -> PathBuf {
    write(&dir.join("spec.toml"), &default_cohort().scaled(0.02).to_toml_string().unwrap())
}

fn quick_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    write(&dir.join(name), &format!("seed = 3\n{body}\n[fed]\nepochs = 1\nrounds = 2\nbatch_size = 32\n"))
}

/// synth → preprocess on the small cohort; returns (raw, preprocessed).
fn prepared(tmp: &TempDir) -> (PathBuf, PathBuf) {
    let raw = tmp.path().join("raw");
    let pre = tmp.path().join("pre");
    cmd_synth(Some(&small_spec(tmp.path())), &raw, Some(7)).unwrap();
    cmd_preprocess(None, &raw, &pre, Some(3)).unwrap();
    (raw, pre)
}

#[test]
fn default_synth_writes_six_countries_with_reference_sizes() {
    let tmp = TempDir::new().unwrap();
    let manifest = cmd_synth(None, tmp.path(), None).unwrap();
    for c in &default_cohort().countries {
        let table =
            FeatureTable::read_csv(fs::File::open(tmp.path().join(format!("{}.csv", c.code))).unwrap()).unwrap();
        assert_eq!(table.n_rows(), c.instances, "{}", c.code);
    }
    assert_eq!(manifest.outputs.len(), 7);
    assert_eq!(ExperimentManifest::read(&tmp.path().join(MANIFEST_FILE)).unwrap(), manifest);
}

#[test]
fn repeated_synth_gives_identical_hashes() {
    let tmp = TempDir::new().unwrap();
    let spec = small_spec(tmp.path());
    let a = cmd_synth(Some(&spec), &tmp.path().join("a"), Some(1)).unwrap();
    let b = cmd_synth(Some(&spec), &tmp.path().join("b"), Some(1)).unwrap();
    let hashes = |m: &ExperimentManifest| m.outputs.iter().map(|o| o.sha256.clone()).collect::<Vec<_>>();
    assert_eq!(hashes(&a), hashes(&b));
    let c = cmd_synth(Some(&spec), &tmp.path().join("c"), Some(2)).unwrap();
    assert_ne!(hashes(&a), hashes(&c));
}

#[test]
fn missing_spec_file_exits_two_with_a_diagnostic() {
    let tmp = TempDir::new().unwrap();
    let out = bin().args(["synth", "--config", "no/such/spec.toml", "--out"]).arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("spec.toml"));
}

#[test]
fn invalid_spec_names_the_offending_key() {
    let tmp = TempDir::new().unwrap();
    let mut spec = default_cohort().scaled(0.02);
    spec.countries[1].instances = 3;
    let path = write(&tmp.path().join("bad.toml"), &spec.to_toml_string().unwrap());
    let err = cmd_synth(Some(&path), &tmp.path().join("out"), None).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("countries[DK].instances"), "{err}");
}

#[test]
fn unknown_aggregator_exits_two_naming_the_key() {
    let tmp = TempDir::new().unwrap();
    let (_, pre) = prepared(&tmp);
    let cfg = write(&tmp.path().join("bad.toml"), "[fed]\naggregator = \"fedsgd\"\n");
    let out = bin()
        .arg("run")
        .arg("--config")
        .arg(&cfg)
        .arg("--data")
        .arg(&pre)
        .arg("--out")
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fed.aggregator"));
}

#[test]
fn missing_data_is_a_runtime_failure() {
    let tmp = TempDir::new().unwrap();
    let out = bin().arg("run").arg("--data").arg(tmp.path()).arg("--out").arg(tmp.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn every_run_artifact_reads_back() {
    let tmp = TempDir::new().unwrap();
    let (_, pre) = prepared(&tmp);
    let out = tmp.path().join("run");
    let cfg = quick_config(tmp.path(), "run.toml", "");
    let run = cmd_run(Some(&cfg), &pre, &out, None).unwrap();
    let metrics = MetricsReport::read(&out.join(METRICS_FILE)).unwrap();
    assert_eq!(&metrics, run.reports.last().unwrap());
    assert_eq!(metrics.countries.len(), 6);
    let history = read_history(&out.join(HISTORY_FILE)).unwrap();
    // One loss row per client per round per fold.
    assert_eq!(history.len(), 6 * 2 * 5);
    assert_eq!(read_country_scores(&out.join(COUNTRY_FIGURE_FILE)).unwrap().len(), 7);
    assert_eq!(read_sweep(&out.join(SWEEP_FIGURE_FILE)).unwrap().len(), 1);
    let manifest = ExperimentManifest::read(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.config_sha256.unwrap(), sha256_file(&cfg).unwrap());
    for o in &manifest.outputs {
        assert_eq!(sha256_file(Path::new(&o.path)).unwrap(), o.sha256);
    }
    for input in &manifest.inputs {
        assert!(Path::new(&input.path).starts_with(&pre));
    }
}

#[test]
fn centralized_run_writes_the_same_artifacts() {
    let tmp = TempDir::new().unwrap();
    let (_, pre) = prepared(&tmp);
    let out = tmp.path().join("run");
    cmd_run(Some(&quick_config(tmp.path(), "c.toml", "method = \"logreg\"")), &pre, &out, None).unwrap();
    assert!(read_history(&out.join(HISTORY_FILE)).unwrap().is_empty());
    assert_eq!(MetricsReport::read(&out.join(METRICS_FILE)).unwrap().countries.len(), 6);
}

#[test]
fn sweep_mode_gives_five_report_rows() {
    let tmp = TempDir::new().unwrap();
    let raw = tmp.path().join("raw");
    let pre = tmp.path().join("pre");
    let mut spec = default_cohort().scaled(0.02);
    spec.countries.truncate(2);
    cmd_synth(Some(&write(&tmp.path().join("s.toml"), &spec.to_toml_string().unwrap())), &raw, None).unwrap();
    cmd_preprocess(None, &raw, &pre, None).unwrap();
    let cfg = write(&tmp.path().join("sweep.toml"), "sweep = true\nmethod = \"fedper\"\n[fed]\nbatch_size = 128\n");
    let out = tmp.path().join("run");
    let run = cmd_run(Some(&cfg), &pre, &out, None).unwrap();
    let pairs: Vec<_> = run.reports.iter().map(|r| (r.local_epochs.unwrap(), r.rounds.unwrap())).collect();
    assert_eq!(pairs, vec![(5, 5), (5, 10), (10, 10), (10, 20), (10, 50)]);
    assert_eq!(read_sweep(&out.join(SWEEP_FIGURE_FILE)).unwrap().len(), 5);
    for (e, r) in pairs {
        assert!(out.join(format!("metrics_e{e}_r{r}.json")).is_file());
    }
}

#[test]
fn fold_count_mismatch_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let (_, pre) = prepared(&tmp);
    let cfg = quick_config(tmp.path(), "f.toml", "folds = 3");
    let err = cmd_run(Some(&cfg), &pre, &tmp.path().join("o"), None).err().unwrap();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn compare_reports_deltas_and_rejects_mixed_schemas() {
    let tmp = TempDir::new().unwrap();
    let (_, pre) = prepared(&tmp);
    let fap = tmp.path().join("fap");
    let per = tmp.path().join("per");
    cmd_run(Some(&quick_config(tmp.path(), "a.toml", "")), &pre, &fap, None).unwrap();
    cmd_run(Some(&quick_config(tmp.path(), "b.toml", "method = \"fedper\"")), &pre, &per, None).unwrap();
    let fap_json = fap.join(METRICS_FILE);

    let same = cmd_compare(&[fap_json.clone(), fap_json.clone()], &tmp.path().join("same.csv")).unwrap();
    for (country, _) in &same.rows {
        assert_eq!(same.delta(country, 1), Some(0.0), "{country}");
    }

    let out_csv = tmp.path().join("cmp/table.csv");
    let table = cmd_compare(&[fap_json.clone(), per.join(METRICS_FILE)], &out_csv).unwrap();
    let read = ComparisonTable::read_csv(fs::File::open(&out_csv).unwrap()).unwrap();
    assert_eq!(read.methods, table.methods);
    let header = fs::read_to_string(&out_csv).unwrap().lines().next().unwrap().to_string();
    assert!(header.contains("delta:"), "{header}");
    for (country, _) in &table.rows {
        assert!(table.delta(country, 1).is_some(), "{country}");
    }

    let bumped = fs::read_to_string(&fap_json).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 2");
    let old = write(&tmp.path().join("v2.json"), &bumped);
    let out =
        bin().arg("compare").arg(&fap_json).arg(&old).arg("--out").arg(tmp.path().join("x.csv")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema"));
}

#[test]
fn extract_builds_one_table_per_client_directory() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("logs");
    for (client, users) in [("AA", 2), ("BB", 1)] {
        let dir = data.join(client);
        fs::create_dir_all(&dir).unwrap();
        let mut reports = Vec::new();
        let mut events = Vec::new();
        for u in 0..users {
            let user = format!("{client}{u}");
            for k in 0..3i64 {
                let t = 10_000_000 * (k + 1);
                reports.push(Report { user_id: user.clone(), timestamp: t, label: k + 1 });
                for s in 0..5 {
                    events.push(SensorEvent::new(&user, t - 60_000 * s, Payload::Screen { on: s % 2 == 0 }));
                    events.push(SensorEvent::new(&user, t + 1_000 * s, Payload::StepCounter(100.0 * s as f64)));
                }
            }
        }
        write_reports_csv(&reports, fs::File::create(dir.join("reports.csv")).unwrap()).unwrap();
        for m in [Modality::Screen, Modality::StepCounter] {
            write_modality_csv(m, &events, fs::File::create(dir.join(format!("{}.csv", m.name()))).unwrap()).unwrap();
        }
    }
    let out = tmp.path().join("features");
    let manifest = cmd_extract(&data, &out, None).unwrap();
    assert_eq!(manifest.inputs.len(), 2);
    let a = FeatureTable::read_csv(fs::File::open(out.join("AA.csv")).unwrap()).unwrap();
    let b = FeatureTable::read_csv(fs::File::open(out.join("BB.csv")).unwrap()).unwrap();
    assert_eq!((a.n_rows(), b.n_rows()), (6, 3));
    // A single client directory works too, and the extracted table feeds preprocess.
    let single = tmp.path().join("single");
    cmd_extract(&data.join("AA"), &single, Some(30 * 60_000)).unwrap();
    assert!(single.join("AA.csv").is_file());
}

#[test]
fn binary_run_prints_the_overall_auroc() {
    let tmp = TempDir::new().unwrap();
    let (_, pre) = prepared(&tmp);
    let cfg = quick_config(tmp.path(), "q.toml", "");
    let out = bin()
        .args(["--threads", "1", "run", "--config"])
        .arg(&cfg)
        .arg("--data")
        .arg(&pre)
        .arg("--out")
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("macro AUROC"));
}
