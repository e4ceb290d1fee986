//! The five subcommands. Each writes into `cfg.out` and records a
//! `manifest.json` there.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use stmodels::evaluation::{comparison_report, residual_diagnostics, write_indexes_csv, ModelOutcome, StationIndexRow};
use stmodels::inference::diagnostics;
use stmodels::prediction::write_predictions_csv;
use stmodels::simulator::named_values;
use stmodels::ModelKind;

use crate::config::RunConfig;
use crate::pipeline::{self, Fit, Prepared};
use crate::CliError;

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_sha256: String,
    models: Vec<String>,
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    let s = serde_json::to_string_pretty(v).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(path, s + "\n").map_err(stmodels::Error::from)?;
    Ok(())
}

fn start(command: &str, cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out).map_err(stmodels::Error::from)?;
    let models = match command {
        "simulate" => vec![cfg.simulation.model.clone()],
        _ => cfg.model_kinds()?.iter().map(|k| k.name().to_string()).collect(),
    };
    write_json(
        &cfg.out.join("manifest.json"),
        &Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            config_sha256: sha256_hex(&cfg.canonical()),
            models,
        },
    )
}

#[derive(Serialize, Default)]
struct TimingEntry {
    estimation_secs_per_iter: Option<f64>,
    prediction_secs_per_iter: Option<f64>,
    total_secs: Option<f64>,
}

#[derive(Serialize)]
struct Truth {
    model: String,
    n_sites: usize,
    n_days: usize,
    missing_cells: usize,
    params: BTreeMap<String, f64>,
}

/// Writes `sites.csv`, `observations.csv`, `covariates.csv` and
/// `truth.json`.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<(), CliError> {
    start("simulate", cfg)?;
    let (ds, sim, layout) = pipeline::simulate_dataset(cfg)?;
    pipeline::write_tables(&ds, &cfg.out)?;
    let kind = cfg.simulation_kind()?;
    let truth = Truth {
        model: kind.name().into(),
        n_sites: ds.n_sites(),
        n_days: ds.n_days(),
        missing_cells: ds.n_missing(),
        params: named_values(kind, &layout.covariate_names, &sim.truth).into_iter().collect(),
    };
    write_json(&cfg.out.join("truth.json"), &truth)
}

fn write_fit(fit: &Fit, cfg: &RunConfig) -> Result<(), CliError> {
    for (chain, name) in fit.chains.iter().zip(fit.chain_file_names()) {
        chain.write_csv(&cfg.out.join(name), cfg.write_latent)?;
    }
    diagnostics(&fit.pooled()).write_summary_csv(&cfg.out.join(format!("diagnostics_{}.csv", fit.kind)))?;
    Ok(())
}

fn fit_all(cfg: &RunConfig, p: &Prepared) -> Result<Vec<Fit>, CliError> {
    let mut fits = Vec::new();
    for kind in cfg.model_kinds()? {
        let f = pipeline::fit(kind, p, cfg).map_err(|e| e.for_model(kind))?;
        write_fit(&f, cfg)?;
        fits.push(f);
    }
    Ok(fits)
}

fn write_timing(cfg: &RunConfig, entries: BTreeMap<String, TimingEntry>) -> Result<(), CliError> {
    write_json(&cfg.out.join("timing.json"), &entries)
}

fn estimation_entry(f: &Fit) -> TimingEntry {
    TimingEntry {
        estimation_secs_per_iter: Some(f.secs_per_iter()),
        prediction_secs_per_iter: None,
        total_secs: Some(f.chains.iter().map(|c| c.timing.total_secs).sum()),
    }
}

/// Fits every requested model on the training stations and writes chains,
/// diagnostics and `timing.json`.
pub fn cmd_fit(cfg: &RunConfig) -> Result<(), CliError> {
    start("fit", cfg)?;
    let p = pipeline::prepare(cfg)?;
    let fits = fit_all(cfg, &p)?;
    write_timing(cfg, fits.iter().map(|f| (f.kind.name().to_string(), estimation_entry(f))).collect())
}

/// Fits and writes `predictions_<model>.csv` at the configured targets (or
/// the held-out stations).
pub fn cmd_predict(cfg: &RunConfig) -> Result<(), CliError> {
    start("predict", cfg)?;
    let p = pipeline::prepare(cfg)?;
    let targets = match &cfg.prediction.targets {
        Some(path) => pipeline::read_targets(path, &p)?,
        None => pipeline::validation_targets(&p)?,
    };
    let mut timing = BTreeMap::new();
    for f in fit_all(cfg, &p)? {
        let pred = pipeline::predict_targets(&f, &p, cfg, &targets).map_err(|e| e.for_model(f.kind))?;
        write_predictions_csv(&cfg.out.join(format!("predictions_{}.csv", f.kind)), &pred.summaries)?;
        let mut e = estimation_entry(&f);
        e.prediction_secs_per_iter = Some(pred.secs_per_iter);
        timing.insert(f.kind.name().to_string(), e);
    }
    write_timing(cfg, timing)
}

/// Outcome of the full pipeline for one model.
struct Validated {
    rows: Vec<StationIndexRow>,
    timing: TimingEntry,
}

fn validate_model(kind: ModelKind, cfg: &RunConfig, p: &Prepared) -> Result<Validated, CliError> {
    let targets = pipeline::validation_targets(p)?;
    let f = pipeline::fit(kind, p, cfg)?;
    write_fit(&f, cfg)?;
    let pred = pipeline::predict_targets(&f, p, cfg, &targets)?;
    write_predictions_csv(&cfg.out.join(format!("predictions_{kind}.csv")), &pred.summaries)?;
    let rows = pipeline::validation_indexes(p, &pred, cfg.index_scale)?;
    let mut timing = estimation_entry(&f);
    timing.prediction_secs_per_iter = Some(pred.secs_per_iter);
    Ok(Validated { rows, timing })
}

fn write_residual_diagnostics(cfg: &RunConfig, p: &Prepared) -> Result<(), CliError> {
    let r = residual_diagnostics(&p.train.ds)?;
    r.write_cloud_csv(&cfg.out.join("diagnostics_cloud.csv"))?;
    r.write_acf_csv(&cfg.out.join("diagnostics_acf.csv"))?;
    Ok(())
}

/// Predicts every held-out station-day and writes `indexes.csv`.
pub fn cmd_validate(cfg: &RunConfig) -> Result<(), CliError> {
    start("validate", cfg)?;
    let p = pipeline::prepare(cfg)?;
    pipeline::validation_targets(&p)?;
    write_residual_diagnostics(cfg, &p)?;
    let mut tables = Vec::new();
    let mut timing = BTreeMap::new();
    for kind in cfg.model_kinds()? {
        let v = validate_model(kind, cfg, &p).map_err(|e| e.for_model(kind))?;
        tables.push((kind, v.rows));
        timing.insert(kind.name().to_string(), v.timing);
    }
    write_indexes_csv(&cfg.out.join("indexes.csv"), &tables)?;
    write_timing(cfg, timing)
}

/// Runs the validation pipeline for every model and writes `report.csv` and
/// `report.txt`. A model that fails is reported as such; the command fails
/// only when no model finishes.
pub fn cmd_compare(cfg: &RunConfig) -> Result<(), CliError> {
    start("compare", cfg)?;
    let p = pipeline::prepare(cfg)?;
    pipeline::validation_targets(&p)?;
    write_residual_diagnostics(cfg, &p)?;
    let mut outcomes = Vec::new();
    let mut timing = BTreeMap::new();
    let mut first_failure = None;
    for kind in cfg.model_kinds()? {
        match validate_model(kind, cfg, &p) {
            Ok(v) => {
                outcomes.push(ModelOutcome {
                    kind,
                    estimation_secs_per_iter: v.timing.estimation_secs_per_iter,
                    prediction_secs_per_iter: v.timing.prediction_secs_per_iter,
                    indexes: Ok(v.rows),
                });
                timing.insert(kind.name().to_string(), v.timing);
            }
            Err(e) => {
                let e = e.for_model(kind);
                eprintln!("warning: {e}");
                outcomes.push(ModelOutcome {
                    kind,
                    estimation_secs_per_iter: None,
                    prediction_secs_per_iter: None,
                    indexes: Err(e.to_string()),
                });
                timing.insert(kind.name().to_string(), TimingEntry::default());
                first_failure.get_or_insert(e);
            }
        }
    }
    let report = comparison_report(&outcomes, cfg.level, cfg.index_scale.name());
    report.write_csv(&cfg.out.join("report.csv"), cfg.report_timing)?;
    report.write_text(&cfg.out.join("report.txt"), cfg.report_timing)?;
    report.write_indexes_csv(&cfg.out.join("indexes.csv"))?;
    write_timing(cfg, timing)?;
    match first_failure {
        Some(e) if outcomes.iter().all(|o| o.indexes.is_err()) => Err(e),
        _ => Ok(()),
    }
}
