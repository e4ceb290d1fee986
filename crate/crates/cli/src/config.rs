//! Run configuration read from a TOML file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stmodels::inference::McmcConfig;
use stmodels::simulator::BSpatialField;
use stmodels::{ModelKind, PriorSpec};

use crate::CliError;

/// Scale on which validation indexes are computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexScale {
    Log,
    #[default]
    Concentration,
}

impl IndexScale {
    pub fn name(self) -> &'static str {
        match self {
            IndexScale::Log => "log",
            IndexScale::Concentration => "concentration",
        }
    }
}

/// Paths of the three input tables. Relative paths are resolved against
/// the directory of the configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub sites: PathBuf,
    pub observations: PathBuf,
    pub covariates: PathBuf,
}

/// Synthetic dataset used when no `[data]` section is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Generating model.
    pub model: String,
    pub n_sites: usize,
    pub n_days: usize,
    /// Coefficients including the intercept.
    pub n_covariates: usize,
    pub width_km: f64,
    pub height_km: f64,
    pub missing_rate: f64,
    pub b_field: BSpatialField,
    /// Overrides the default coefficients.
    pub beta: Option<Vec<f64>>,
    /// Overrides of individual true parameters by name (`theta`, `rho`, ...).
    pub params: BTreeMap<String, f64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            model: "A1".into(),
            n_sites: 10,
            n_days: 50,
            n_covariates: 3,
            width_km: 100.0,
            height_km: 80.0,
            missing_rate: 0.0,
            b_field: BSpatialField::Static,
            beta: None,
            params: BTreeMap::new(),
        }
    }
}

/// Held-out validation stations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    /// Explicit station ids. When empty, the last `n_holdout` stations are
    /// held out.
    pub holdout: Vec<String>,
    pub n_holdout: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig { holdout: Vec::new(), n_holdout: 3 }
    }
}

/// Sampler settings; the seed comes from the top-level `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSection {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub target_accept: f64,
    pub adapt_until: Option<usize>,
    pub initial_step: f64,
}

impl Default for McmcSection {
    fn default() -> Self {
        let d = McmcConfig::default();
        McmcSection {
            n_iter: d.n_iter,
            burn_in: d.burn_in,
            thin: d.thin,
            n_chains: d.n_chains,
            target_accept: d.target_accept,
            adapt_until: d.adapt_until,
            initial_step: d.initial_step,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictionConfig {
    /// CSV of prediction targets: `site_id,utmx_km,utmy_km,altitude_m,day`
    /// followed by the raw covariates. Without it, `predict` targets the
    /// held-out stations.
    pub targets: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub models: Vec<String>,
    pub seed: u64,
    pub out: PathBuf,
    /// Nominal level of credible and predictive intervals.
    pub level: f64,
    pub index_scale: IndexScale,
    /// Largest tolerated fraction of missing days per station.
    pub missing_cap: f64,
    /// Largest dense matrix the nonseparable models may build.
    pub max_dense_dim: usize,
    /// Append latent states to chain files.
    pub write_latent: bool,
    /// Include wall-clock columns in `report.csv` and `report.txt`.
    pub report_timing: bool,
    pub data: Option<DataConfig>,
    pub simulation: SimulationConfig,
    pub validation: ValidationConfig,
    pub mcmc: McmcSection,
    pub prior: PriorSpec,
    pub prediction: PredictionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            models: ModelKind::ALL.iter().map(|k| k.name().to_string()).collect(),
            seed: 1,
            out: PathBuf::from("out"),
            level: 0.95,
            index_scale: IndexScale::Concentration,
            missing_cap: stmodels::dataset::DEFAULT_MISSING_CAP,
            max_dense_dim: stmodels::models::DEFAULT_MAX_DENSE_DIM,
            write_latent: false,
            report_timing: false,
            data: None,
            simulation: SimulationConfig::default(),
            validation: ValidationConfig::default(),
            mcmc: McmcSection::default(),
            prior: PriorSpec::default(),
            prediction: PredictionConfig::default(),
        }
    }
}

/// Values given on the command line, which take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub models: Option<Vec<ModelKind>>,
    pub iters: Option<usize>,
    pub burnin: Option<usize>,
    pub thin: Option<usize>,
}

impl RunConfig {
    /// Parses a configuration file and resolves its relative paths.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            e => e,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = &mut self.data {
            fix(&mut d.sites);
            fix(&mut d.observations);
            fix(&mut d.covariates);
        }
        if let Some(t) = &mut self.prediction.targets {
            fix(t);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(m) = &o.models {
            self.models = m.iter().map(|k| k.name().to_string()).collect();
        }
        if let Some(n) = o.iters {
            self.mcmc.n_iter = n;
        }
        if let Some(n) = o.burnin {
            self.mcmc.burn_in = n;
        }
        if let Some(n) = o.thin {
            self.mcmc.thin = n;
        }
    }

    /// Requested models, deduplicated, in request order.
    pub fn model_kinds(&self) -> Result<Vec<ModelKind>, CliError> {
        let mut out = Vec::new();
        for m in &self.models {
            let k: ModelKind = m.parse().map_err(|e: stmodels::Error| CliError::Config(e.to_string()))?;
            if !out.contains(&k) {
                out.push(k);
            }
        }
        if out.is_empty() {
            return Err(CliError::Config("no models requested".into()));
        }
        Ok(out)
    }

    pub fn simulation_kind(&self) -> Result<ModelKind, CliError> {
        self.simulation
            .model
            .parse()
            .map_err(|e: stmodels::Error| CliError::Config(format!("simulation.model: {e}")))
    }

    pub fn mcmc_config(&self) -> McmcConfig {
        McmcConfig {
            n_iter: self.mcmc.n_iter,
            burn_in: self.mcmc.burn_in,
            thin: self.mcmc.thin,
            seed: self.seed,
            n_chains: self.mcmc.n_chains,
            target_accept: self.mcmc.target_accept,
            adapt_until: self.mcmc.adapt_until,
            initial_step: self.mcmc.initial_step,
        }
    }

    /// Checks everything that can be checked before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.model_kinds()?;
        self.mcmc_config().validate()?;
        self.prior.validate()?;
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CliError::Config(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if !(0.0..=1.0).contains(&self.missing_cap) {
            return Err(CliError::Config(format!("missing_cap must lie in [0, 1], got {}", self.missing_cap)));
        }
        match &self.data {
            Some(d) => {
                for p in [&d.sites, &d.observations, &d.covariates] {
                    if !p.is_file() {
                        return Err(CliError::Config(format!("input file {} does not exist", p.display())));
                    }
                }
            }
            None => {
                self.simulation_kind()?;
                let s = &self.simulation;
                if !(0.0..1.0).contains(&s.missing_rate) {
                    return Err(CliError::Config(format!(
                        "simulation.missing_rate must lie in [0, 1), got {}",
                        s.missing_rate
                    )));
                }
            }
        }
        if let Some(t) = &self.prediction.targets {
            if !t.is_file() {
                return Err(CliError::Config(format!("targets file {} does not exist", t.display())));
            }
        }
        Ok(())
    }

    /// Canonical serialization, hashed into the run manifest. The output
    /// directory is left out so that identical runs hash identically
    /// wherever they write.
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        toml::to_string(&c).unwrap_or_default()
    }
}
