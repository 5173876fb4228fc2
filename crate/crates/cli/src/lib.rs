//! Experiment workbench commands: synthesize cohorts, extract window features, preprocess,
//! run federated or centralized evaluations and compare reports.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or schema error.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fedfap_core::cohort::{default_cohort, CohortSpec};
use fedfap_core::config::{Experiment, ExperimentConfig, SWEEP_GRID};
use fedfap_core::fed::RunConfig;
use fedfap_core::metrics::figures::{
    country_score_rows, read_rows, sweep_rows, write_rows, ComparisonTable, CountryScoreRow, SweepRow,
};
use fedfap_core::metrics::{evaluate_centralized, evaluate_federated_with, EvalOptions, FoldHistory, MetricsReport};
use fedfap_core::pipeline::prune::write_missingness_csv;
use fedfap_core::pipeline::{plan_folds, preprocess, ClientDataset, FoldPlan};
use fedfap_core::sensing::events::read_event_dir;
use fedfap_core::sensing::extract::DEFAULT_HALF_WIDTH_MS;
use fedfap_core::sensing::table::read_reports_csv;
use fedfap_core::sensing::{build_feature_table, FeatureTable};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const COUNTRY_FIGURE_FILE: &str = "figure_country_scores.csv";
pub const SWEEP_FIGURE_FILE: &str = "figure_sweep.csv";
pub const REPORTS_FILE: &str = "reports.csv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] fedfap_core::Error),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(fedfap_core::Error::Config(_) | fedfap_core::Error::Schema(_)) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub tool_version: String,
    pub command: String,
    pub config_path: Option<String>,
    pub config_sha256: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Wall-clock milliseconds per stage.
    pub timings_ms: BTreeMap<String, u64>,
}

impl ExperimentManifest {
    fn new(command: &str, config: Option<&Path>, seed: Option<u64>) -> CliResult<Self> {
        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_path: config.map(|p| p.display().to_string()),
            config_sha256: config.map(sha256_file).transpose()?,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings_ms: BTreeMap::new(),
        })
    }

    fn digest(path: &Path) -> CliResult<FileDigest> {
        Ok(FileDigest { path: path.display().to_string(), sha256: sha256_file(path)? })
    }

    fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.push(Self::digest(path)?);
        Ok(())
    }

    fn output(&mut self, path: &Path) -> CliResult<()> {
        self.outputs.push(Self::digest(path)?);
        Ok(())
    }

    fn time(&mut self, stage: &str, start: Instant) {
        self.timings_ms.insert(stage.to_string(), start.elapsed().as_millis() as u64);
    }

    fn write(&self, out_dir: &Path) -> CliResult<PathBuf> {
        let path = out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(fedfap_core::Error::from)?;
        fs::write(&path, text + "\n").map_err(io_err(&path))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text).map_err(fedfap_core::Error::from)?)
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(io_err(path))
}

/// `*.csv` feature tables in `dir` keyed by file stem, excluding companion files.
fn country_tables(dir: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if let Some(stem) = name.strip_suffix(".csv") {
            if !stem.contains('.') && !stem.starts_with("figure_") && name != HISTORY_FILE && name != REPORTS_FILE {
                out.push((stem.to_string(), path));
            }
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(CliError::Runtime(format!("no country feature tables (*.csv) in {}", dir.display())));
    }
    Ok(out)
}

/// Writes one raw feature table per country, plus the resolved spec and a manifest.
pub fn cmd_synth(spec_path: Option<&Path>, out_dir: &Path, seed: Option<u64>) -> CliResult<ExperimentManifest> {
    let start = Instant::now();
    let mut spec = match spec_path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read cohort spec {}: {e}", p.display())))?;
            CohortSpec::from_toml_str(&text)?
        }
        None => default_cohort(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let mut manifest = ExperimentManifest::new("synth", spec_path, Some(spec.seed))?;
    ensure_dir(out_dir)?;
    let cohort = spec.generate()?;
    manifest.time("generate", start);
    let spec_out = out_dir.join("cohort.toml");
    fs::write(&spec_out, spec.to_toml_string()?).map_err(io_err(&spec_out))?;
    manifest.output(&spec_out)?;
    for c in &cohort {
        let path = out_dir.join(format!("{}.csv", c.code));
        c.table.write_csv(create(&path)?)?;
        manifest.output(&path)?;
    }
    manifest.time("total", start);
    manifest.write(out_dir)?;
    Ok(manifest)
}

/// Extracts window features from raw event logs. `data_dir` is either one client directory
/// (holding `reports.csv` and `{modality}.csv` files) or a directory of such directories.
pub fn cmd_extract(data_dir: &Path, out_dir: &Path, half_width_ms: Option<i64>) -> CliResult<ExperimentManifest> {
    let start = Instant::now();
    let half = half_width_ms.unwrap_or(DEFAULT_HALF_WIDTH_MS);
    let mut sources: Vec<(String, PathBuf)> = Vec::new();
    if data_dir.join(REPORTS_FILE).is_file() {
        let name = data_dir.file_name().and_then(|n| n.to_str()).unwrap_or("client").to_string();
        sources.push((name, data_dir.to_path_buf()));
    } else {
        for entry in fs::read_dir(data_dir).map_err(io_err(data_dir))? {
            let path = entry.map_err(io_err(data_dir))?.path();
            if path.join(REPORTS_FILE).is_file() {
                sources.push((path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string(), path));
            }
        }
        sources.sort();
    }
    if sources.is_empty() {
        return Err(CliError::Runtime(format!("no {REPORTS_FILE} found under {}", data_dir.display())));
    }
    let mut manifest = ExperimentManifest::new("extract", None, None)?;
    ensure_dir(out_dir)?;
    for (name, dir) in sources {
        let reports_path = dir.join(REPORTS_FILE);
        manifest.input(&reports_path)?;
        let reports = read_reports_csv(open(&reports_path)?)?;
        let events: Vec<_> = read_event_dir(&dir)?.into_values().flatten().collect();
        let table = build_feature_table(&events, &reports, half)?;
        let path = out_dir.join(format!("{name}.csv"));
        table.write_csv(create(&path)?)?;
        manifest.output(&path)?;
    }
    manifest.time("total", start);
    manifest.write(out_dir)?;
    Ok(manifest)
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<ExperimentConfig> {
    let cfg = match path {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::from_toml_str("")?,
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

/// Prunes, imputes and fold-plans every raw table in `data_dir`. Writes `{CC}.csv`
/// (imputed, labels 1..3), `{CC}.missingness.csv` and `{CC}.folds.json`.
pub fn cmd_preprocess(
    config: Option<&Path>,
    data_dir: &Path,
    out_dir: &Path,
    seed: Option<u64>,
) -> CliResult<ExperimentManifest> {
    let start = Instant::now();
    let cfg = load_config(config, seed)?;
    let mut manifest = ExperimentManifest::new("preprocess", config, Some(cfg.run.seed))?;
    ensure_dir(out_dir)?;
    for (code, path) in country_tables(data_dir)? {
        manifest.input(&path)?;
        let raw = FeatureTable::read_csv(open(&path)?)?;
        let pre = preprocess(&code, &raw, &cfg.preprocess)?;
        let plan = plan_folds(&pre.dataset.participant_ids, &pre.dataset.y, cfg.folds, cfg.run.seed)?;
        let table_path = out_dir.join(format!("{code}.csv"));
        pre.imputed.write_csv(create(&table_path)?)?;
        let miss_path = out_dir.join(format!("{code}.missingness.csv"));
        write_missingness_csv(&pre.missingness, create(&miss_path)?)?;
        let plan_path = out_dir.join(format!("{code}.folds.json"));
        plan.write_json(create(&plan_path)?)?;
        for p in [&table_path, &miss_path, &plan_path] {
            manifest.output(p)?;
        }
    }
    manifest.time("total", start);
    manifest.write(out_dir)?;
    Ok(manifest)
}

/// Preprocessed clients and their fold plans, in country order.
pub fn load_preprocessed(data_dir: &Path) -> CliResult<(Vec<ClientDataset>, Vec<FoldPlan>, Vec<PathBuf>)> {
    let mut clients = Vec::new();
    let mut plans = Vec::new();
    let mut inputs = Vec::new();
    for (code, path) in country_tables(data_dir)? {
        let table = FeatureTable::read_csv(open(&path)?)?;
        clients.push(ClientDataset::from_table(&code, &table)?);
        let plan_path = data_dir.join(format!("{code}.folds.json"));
        plans.push(FoldPlan::read_json(open(&plan_path)?)?);
        inputs.push(path);
        inputs.push(plan_path);
    }
    Ok((clients, plans, inputs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub local_epochs: usize,
    pub fold: usize,
    pub round: usize,
    pub client: String,
    pub loss: f64,
}

pub struct RunOutputs {
    pub manifest: ExperimentManifest,
    pub reports: Vec<MetricsReport>,
}

/// Runs the configured evaluation. Writes `metrics.json` (the last report), one
/// `metrics_e{E}_r{R}.json` per sweep pair, `history.csv` and the figure CSVs.
pub fn cmd_run(config: Option<&Path>, data_dir: &Path, out_dir: &Path, seed: Option<u64>) -> CliResult<RunOutputs> {
    let start = Instant::now();
    let cfg = load_config(config, seed)?;
    let mut manifest = ExperimentManifest::new("run", config, Some(cfg.run.seed))?;
    let (clients, plans, inputs) = load_preprocessed(data_dir)?;
    for p in &inputs {
        manifest.input(p)?;
    }
    if let Some(p) = plans.iter().find(|p| p.n_folds != cfg.folds) {
        return Err(CliError::Config(format!(
            "folds = {} but the data was planned with {} folds",
            cfg.folds, p.n_folds
        )));
    }
    manifest.time("load", start);
    ensure_dir(out_dir)?;
    let echo = cfg.echo();
    let mut reports = Vec::new();
    let mut history: Vec<HistoryRow> = Vec::new();
    let train_start = Instant::now();
    match cfg.experiment {
        Experiment::Federated(method) => {
            // Pairs sharing an epoch count come from one trajectory scored at several rounds.
            let pairs: Vec<(usize, usize)> =
                if cfg.sweep { SWEEP_GRID.to_vec() } else { vec![(cfg.run.local_epochs, cfg.run.rounds)] };
            let mut by_epochs: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (e, r) in pairs {
                by_epochs.entry(e).or_default().push(r);
            }
            for (epochs, rounds) in by_epochs {
                let run =
                    RunConfig { local_epochs: epochs, rounds: *rounds.iter().max().expect("non-empty"), ..cfg.run };
                let opts = EvalOptions { folds: None, report_rounds: rounds, config_echo: echo.clone() };
                let eval = evaluate_federated_with(&run, &method, &clients, &plans, &opts)?;
                reports.extend(eval.reports.into_iter().map(|(_, r)| r));
                history.extend(eval.history.into_iter().map(|FoldHistory { fold, record }| HistoryRow {
                    local_epochs: epochs,
                    fold,
                    round: record.round,
                    client: record.client,
                    loss: record.loss,
                }));
            }
        }
        Experiment::Centralized(kind) => {
            let opts = EvalOptions { config_echo: echo, ..EvalOptions::default() };
            reports.push(evaluate_centralized(kind, cfg.targets.as_deref(), &clients, &plans, cfg.run.seed, &opts)?);
        }
    }
    manifest.time("evaluate", train_start);
    let last = reports.last().expect("at least one report");
    let metrics_path = out_dir.join(METRICS_FILE);
    last.write(&metrics_path)?;
    manifest.output(&metrics_path)?;
    if cfg.sweep {
        for r in &reports {
            let p = out_dir.join(format!("metrics_e{}_r{}.json", r.local_epochs.unwrap_or(0), r.rounds.unwrap_or(0)));
            r.write(&p)?;
            manifest.output(&p)?;
        }
    }
    let history_path = out_dir.join(HISTORY_FILE);
    write_history(&history, &history_path)?;
    manifest.output(&history_path)?;
    let country_path = out_dir.join(COUNTRY_FIGURE_FILE);
    write_rows(&country_score_rows(&reports), create(&country_path)?)?;
    manifest.output(&country_path)?;
    let sweep_path = out_dir.join(SWEEP_FIGURE_FILE);
    write_rows(&sweep_rows(&reports), create(&sweep_path)?)?;
    manifest.output(&sweep_path)?;
    manifest.time("total", start);
    manifest.write(out_dir)?;
    Ok(RunOutputs { manifest, reports })
}

fn write_history(rows: &[HistoryRow], path: &Path) -> CliResult<()> {
    if rows.is_empty() {
        // Centralized runs have no rounds; keep the header so the file still parses.
        fs::write(path, "local_epochs,fold,round,client,loss\n").map_err(io_err(path))?;
        return Ok(());
    }
    write_rows(rows, create(path)?)?;
    Ok(())
}

pub fn read_history(path: &Path) -> CliResult<Vec<HistoryRow>> {
    Ok(read_rows(open(path)?)?)
}

pub fn read_country_scores(path: &Path) -> CliResult<Vec<CountryScoreRow>> {
    Ok(read_rows(open(path)?)?)
}

pub fn read_sweep(path: &Path) -> CliResult<Vec<SweepRow>> {
    Ok(read_rows(open(path)?)?)
}

/// Aligns reports per country and writes AUROC and delta columns to `out_file`.
pub fn cmd_compare(reports: &[PathBuf], out_file: &Path) -> CliResult<ComparisonTable> {
    let loaded = reports.iter().map(|p| MetricsReport::read(p)).collect::<Result<Vec<_>, _>>()?;
    let table = ComparisonTable::build(&loaded)?;
    if let Some(parent) = out_file.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    table.write_csv(create(out_file)?)?;
    Ok(table)
}
