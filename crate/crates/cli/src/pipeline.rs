//! Data preparation, fitting, prediction and validation shared by the
//! subcommands.

use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use stmodels::dataset::{
    load_dataset, log_transform, split_validation, standardize, write_dataset, Dataset, Scale, Site,
    StandardizationRecord,
};
use stmodels::evaluation::{station_indexes, StationIndexRow};
use stmodels::inference::{run_chains, Chain};
use stmodels::models::ModelData;
use stmodels::prediction::{predict, summarize_predictions, targets_from_dataset, PredictionTarget, TargetSummary};
use stmodels::simulator::{default_truth, simulate_full, SimLayout, Simulation};
use stmodels::{ModelKind, RngStream};

use crate::config::{IndexScale, RunConfig};
use crate::CliError;

/// Stream labels derived from the run seed.
const LAYOUT_STREAM: u64 = 1;
const SIMULATION_STREAM: u64 = 2;
const PREDICTION_STREAM: u64 = 100;

/// Draws the synthetic dataset described by the configuration. Observations
/// are returned on the concentration scale, exactly as `simulate` writes
/// them.
pub fn simulate_dataset(cfg: &RunConfig) -> Result<(Dataset, Simulation, SimLayout), CliError> {
    let s = &cfg.simulation;
    let kind = cfg.simulation_kind()?;
    let root = RngStream::new(cfg.seed);
    let mut truth = default_truth(kind, s.n_covariates.max(1));
    if let Some(beta) = &s.beta {
        if beta.len() != s.n_covariates {
            return Err(CliError::Config(format!(
                "simulation.beta has {} values, n_covariates is {}",
                beta.len(),
                s.n_covariates
            )));
        }
        truth.beta = DVector::from_column_slice(beta);
    }
    for (name, &v) in &s.params {
        let id = kind
            .param_ids()
            .iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| CliError::Config(format!("model {kind} has no parameter `{name}`")))?;
        truth.set(*id, v)?;
    }
    let mut layout = SimLayout::random(
        s.n_sites,
        s.n_days,
        s.n_covariates,
        s.width_km,
        s.height_km,
        truth,
        &mut root.derive(LAYOUT_STREAM),
    )?;
    layout.missing_rate = s.missing_rate;
    layout.b_field = s.b_field;
    let sim = simulate_full(kind, &layout, &mut root.derive(SIMULATION_STREAM))?;
    let ds = to_concentration(&sim.dataset)?;
    Ok((ds, sim, layout))
}

fn to_concentration(ds: &Dataset) -> Result<Dataset, CliError> {
    if ds.scale() == Scale::Natural {
        return Ok(ds.clone());
    }
    let z = ds.z_cells().iter().map(|v| v.map(f64::exp)).collect();
    Ok(Dataset::new(
        ds.sites().to_vec(),
        ds.n_days(),
        ds.covariate_names().to_vec(),
        ds.x_cells().to_vec(),
        z,
        Scale::Natural,
    )?)
}

/// Writes the dataset tables into `dir`.
pub fn write_tables(ds: &Dataset, dir: &Path) -> Result<(), CliError> {
    write_dataset(ds, dir)?;
    Ok(())
}

/// Training and validation data ready for the samplers.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// Training stations, log scale, standardized covariates.
    pub train: ModelData,
    /// Held-out stations, log scale, covariates standardized with the
    /// training record.
    pub validation: Option<Dataset>,
    pub record: StandardizationRecord,
}

/// Loads (or simulates) the data, log-transforms it, splits off the
/// validation stations and standardizes the covariates.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    let raw = match &cfg.data {
        Some(d) => load_dataset(&d.sites, &d.observations, &d.covariates, cfg.missing_cap)?,
        None => {
            let (ds, _, _) = simulate_dataset(cfg)?;
            ds.check_missing_cap(cfg.missing_cap)?;
            ds
        }
    };
    let logged = log_transform(&raw)?;
    let ids = holdout_ids(cfg, &logged)?;
    let (train, validation) = if ids.is_empty() {
        (logged, None)
    } else {
        let (t, v) = split_validation(&logged, &ids)?;
        (t, Some(v))
    };
    let (train, record) = standardize(&train)?;
    let validation = validation.map(|v| record.apply(&v)).transpose()?;
    let mut md = ModelData::new(&train);
    md.max_dense_dim = cfg.max_dense_dim;
    Ok(Prepared { train: md, validation, record })
}

fn holdout_ids(cfg: &RunConfig, ds: &Dataset) -> Result<Vec<String>, CliError> {
    let v = &cfg.validation;
    if !v.holdout.is_empty() {
        return Ok(v.holdout.clone());
    }
    let d = ds.n_sites();
    if v.n_holdout + 2 > d {
        return Err(CliError::Config(format!(
            "validation.n_holdout = {} leaves fewer than two of {d} stations for training",
            v.n_holdout
        )));
    }
    Ok(ds.sites()[d - v.n_holdout..].iter().map(|s| s.id.clone()).collect())
}

/// Fitted chains of one model.
#[derive(Clone, Debug)]
pub struct Fit {
    pub kind: ModelKind,
    pub chains: Vec<Chain>,
}

impl Fit {
    /// Estimation seconds per iteration, averaged over chains.
    pub fn secs_per_iter(&self) -> f64 {
        self.chains.iter().map(|c| c.timing.secs_per_iter).sum::<f64>() / self.chains.len() as f64
    }

    /// All retained draws pooled across chains.
    pub fn pooled(&self) -> Chain {
        let mut c = self.chains[0].clone();
        for other in &self.chains[1..] {
            c.draws.extend(other.draws.iter().cloned());
        }
        c
    }

    /// Chain file names: `chain_<model>.csv`, or one per chain with a
    /// numeric suffix.
    pub fn chain_file_names(&self) -> Vec<String> {
        if self.chains.len() == 1 {
            vec![format!("chain_{}.csv", self.kind)]
        } else {
            (1..=self.chains.len()).map(|c| format!("chain_{}_{c}.csv", self.kind)).collect()
        }
    }
}

pub fn fit(kind: ModelKind, p: &Prepared, cfg: &RunConfig) -> Result<Fit, CliError> {
    let chains = run_chains(kind, &p.train, &cfg.prior, &cfg.mcmc_config())?;
    Ok(Fit { kind, chains })
}

/// Predictive summaries of one model plus the prediction cost.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub summaries: Vec<TargetSummary>,
    pub secs_per_iter: f64,
}

fn model_index(kind: ModelKind) -> u64 {
    ModelKind::ALL.iter().position(|&k| k == kind).unwrap_or(0) as u64
}

pub fn predict_targets(
    fit: &Fit,
    p: &Prepared,
    cfg: &RunConfig,
    targets: &[PredictionTarget],
) -> Result<Prediction, CliError> {
    let chain = fit.pooled();
    let rng = RngStream::new(cfg.seed).derive(PREDICTION_STREAM + model_index(fit.kind));
    let start = Instant::now();
    let draws = predict(&chain, &p.train, &cfg.prior, targets, &rng)?;
    let secs = start.elapsed().as_secs_f64();
    let summaries = draws
        .iter()
        .map(|d| summarize_predictions(d, cfg.level, Scale::Log))
        .collect::<stmodels::Result<Vec<_>>>()?;
    Ok(Prediction { summaries, secs_per_iter: secs / chain.draws.len().max(1) as f64 })
}

/// One target per held-out (station, day).
pub fn validation_targets(p: &Prepared) -> Result<Vec<PredictionTarget>, CliError> {
    let v = p
        .validation
        .as_ref()
        .ok_or_else(|| CliError::Config("no validation stations: set validation.holdout or n_holdout".into()))?;
    Ok(targets_from_dataset(v))
}

/// Station indexes at the held-out stations from predictions made at
/// [`validation_targets`].
pub fn validation_indexes(
    p: &Prepared,
    pred: &Prediction,
    scale: IndexScale,
) -> Result<Vec<StationIndexRow>, CliError> {
    let v = p
        .validation
        .as_ref()
        .ok_or_else(|| CliError::Config("no validation stations".into()))?;
    let d = v.n_sites();
    let concentration = scale == IndexScale::Concentration;
    let mut rows = Vec::with_capacity(d);
    for (i, site) in v.sites().iter().enumerate() {
        let observed: Vec<Option<f64>> = (0..v.n_days())
            .map(|t| v.z(i, t).map(|z| if concentration { z.exp() } else { z }))
            .collect();
        let predicted: Vec<_> = (0..v.n_days())
            .map(|t| *pred.summaries[t * d + i].on_scale(concentration))
            .collect();
        rows.push(station_indexes(&site.id, &observed, &predicted)?);
    }
    Ok(rows)
}

/// Reads a targets CSV: `site_id,utmx_km,utmy_km,altitude_m,day` followed
/// by the raw covariates named as in the training data.
pub fn read_targets(path: &Path, p: &Prepared) -> Result<Vec<PredictionTarget>, CliError> {
    let names = p.train.ds.covariate_names();
    let mut rdr = csv::Reader::from_path(path).map_err(stmodels::Error::from)?;
    let header: Vec<String> = rdr.headers().map_err(stmodels::Error::from)?.iter().map(|h| h.trim().to_string()).collect();
    let mut want = vec!["site_id", "utmx_km", "utmy_km", "altitude_m", "day"];
    want.extend(names[1..].iter().map(String::as_str));
    if header != want {
        return Err(stmodels::Error::Schema(format!(
            "{}: expected header `{}`, found `{}`",
            path.display(),
            want.join(","),
            header.join(",")
        ))
        .into());
    }
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(stmodels::Error::from)?;
        let line = r as u64 + 2;
        let num = |j: usize| -> Result<f64, CliError> {
            rec.get(j).unwrap_or("").trim().parse::<f64>().map_err(|e| {
                stmodels::Error::Parse { path: path.to_path_buf(), line, msg: format!("column {}: {e}", want[j]) }.into()
            })
        };
        let day = rec.get(4).unwrap_or("").trim().parse::<usize>().map_err(|e| stmodels::Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("column day: {e}"),
        })?;
        let mut row = vec![1.0];
        for j in 5..want.len() {
            row.push(num(j)?);
        }
        let t = PredictionTarget {
            site: Site::new(rec.get(0).unwrap_or("").trim(), num(1)?, num(2)?, num(3)?),
            day,
            covariates: DVector::from_vec(p.record.apply_row(&row)),
        };
        t.validate(p.train.n_days(), p.train.k())?;
        out.push(t);
    }
    Ok(out)
}
