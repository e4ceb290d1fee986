//! Monitoring-network data: sites, daily observations, covariates.
//!
//! Observations and covariates are laid out day-major: the cell for site `i`
//! (0-based) on day `t` (0-based) lives at `t * d + i`. The same ordering is
//! used for every stacked `dT` vector in the crate.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the fraction of missing days per station.
pub const DEFAULT_MISSING_CAP: f64 = 0.20;

/// Name given to the implicit constant covariate.
pub const INTERCEPT: &str = "intercept";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub id: String,
    /// UTM easting in km.
    pub x_km: f64,
    /// UTM northing in km.
    pub y_km: f64,
    pub altitude_m: f64,
}

impl Site {
    pub fn new(id: impl Into<String>, x_km: f64, y_km: f64, altitude_m: f64) -> Self {
        Site {
            id: id.into(),
            x_km,
            y_km,
            altitude_m,
        }
    }

    pub fn distance_km(&self, other: &Site) -> f64 {
        (self.x_km - other.x_km).hypot(self.y_km - other.y_km)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Log,
    Natural,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    sites: Vec<Site>,
    n_days: usize,
    covariate_names: Vec<String>,
    x: Vec<f64>,
    z: Vec<Option<f64>>,
    scale: Scale,
}

impl Dataset {
    /// Builds a dataset from day-major arrays.
    ///
    /// `x` holds `d * T * k` values ordered `(t, i, c)`; `z` holds `d * T`
    /// cells ordered `(t, i)`. `covariate_names[0]` must be the intercept and
    /// the corresponding column of `x` must be identically one.
    pub fn new(
        sites: Vec<Site>,
        n_days: usize,
        covariate_names: Vec<String>,
        x: Vec<f64>,
        z: Vec<Option<f64>>,
        scale: Scale,
    ) -> Result<Self> {
        let d = sites.len();
        let k = covariate_names.len();
        if n_days == 0 {
            return Err(Error::Schema("dataset needs at least one day".into()));
        }
        if k == 0 || covariate_names[0] != INTERCEPT {
            return Err(Error::Schema(format!(
                "first covariate must be `{INTERCEPT}`"
            )));
        }
        if x.len() != d * n_days * k {
            return Err(Error::DimensionMismatch(format!(
                "covariate array has {} values, expected {}",
                x.len(),
                d * n_days * k
            )));
        }
        if z.len() != d * n_days {
            return Err(Error::DimensionMismatch(format!(
                "observation array has {} cells, expected {}",
                z.len(),
                d * n_days
            )));
        }
        if x.chunks(k).any(|row| row[0] != 1.0) {
            return Err(Error::Schema("intercept column must be 1".into()));
        }
        let mut seen = HashSet::new();
        for s in &sites {
            if !s.x_km.is_finite() || !s.y_km.is_finite() || !s.altitude_m.is_finite() {
                return Err(Error::Schema(format!("site {} has non-finite coordinates", s.id)));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Schema(format!("duplicate site id {}", s.id)));
            }
        }
        Ok(Dataset {
            sites,
            n_days,
            covariate_names,
            x,
            z,
            scale,
        })
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    #[inline]
    pub fn cell(&self, site: usize, day: usize) -> usize {
        day * self.sites.len() + site
    }

    /// Observation at `(site, day)`, both 0-based.
    #[inline]
    pub fn z(&self, site: usize, day: usize) -> Option<f64> {
        self.z[self.cell(site, day)]
    }

    /// Covariate vector at `(site, day)`, both 0-based.
    #[inline]
    pub fn x(&self, site: usize, day: usize) -> &[f64] {
        let k = self.n_covariates();
        let c = self.cell(site, day);
        &self.x[c * k..(c + 1) * k]
    }

    /// All observations in global (day-major) order.
    pub fn z_cells(&self) -> &[Option<f64>] {
        &self.z
    }

    pub fn x_cells(&self) -> &[f64] {
        &self.x
    }

    pub fn n_observed(&self) -> usize {
        self.z.iter().filter(|v| v.is_some()).count()
    }

    pub fn n_missing(&self) -> usize {
        self.z.len() - self.n_observed()
    }

    pub fn missing_fraction(&self, site: usize) -> f64 {
        let miss = (0..self.n_days).filter(|&t| self.z(site, t).is_none()).count();
        miss as f64 / self.n_days as f64
    }

    /// Rejects the dataset if any station exceeds the missing-data cap.
    pub fn check_missing_cap(&self, cap: f64) -> Result<()> {
        for (i, s) in self.sites.iter().enumerate() {
            let f = self.missing_fraction(i);
            if f > cap {
                return Err(Error::MissingCap {
                    site: s.id.clone(),
                    fraction: f,
                    cap,
                });
            }
        }
        Ok(())
    }

    pub fn site_index(&self, id: &str) -> Option<usize> {
        self.sites.iter().position(|s| s.id == id)
    }

    /// Dense `(d*T) x k` design matrix in global order.
    pub fn design_matrix(&self) -> DMatrix<f64> {
        let k = self.n_covariates();
        DMatrix::from_row_slice(self.z.len(), k, &self.x)
    }

    /// Day-`t` design matrix (`d x k`).
    pub fn day_design(&self, day: usize) -> DMatrix<f64> {
        let k = self.n_covariates();
        let d = self.n_sites();
        DMatrix::from_row_slice(d, k, &self.x[day * d * k..(day + 1) * d * k])
    }

    /// Restriction to a subset of sites, in the given order.
    pub fn subset_sites(&self, keep: &[usize]) -> Dataset {
        let k = self.n_covariates();
        let mut x = Vec::with_capacity(keep.len() * self.n_days * k);
        let mut z = Vec::with_capacity(keep.len() * self.n_days);
        for t in 0..self.n_days {
            for &i in keep {
                x.extend_from_slice(self.x(i, t));
                z.push(self.z(i, t));
            }
        }
        Dataset {
            sites: keep.iter().map(|&i| self.sites[i].clone()).collect(),
            n_days: self.n_days,
            covariate_names: self.covariate_names.clone(),
            x,
            z,
            scale: self.scale,
        }
    }

    /// Copy with some observations replaced (used by the simulator's
    /// missingness injection and by tests).
    pub fn with_observations(&self, z: Vec<Option<f64>>) -> Result<Dataset> {
        if z.len() != self.z.len() {
            return Err(Error::DimensionMismatch("observation count".into()));
        }
        Ok(Dataset { z, ..self.clone() })
    }
}

fn parse_f64(field: &str, path: &Path, line: u64, what: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("bad {what} `{field}`: {e}"),
    })
}

fn parse_day(field: &str, path: &Path, line: u64) -> Result<usize> {
    let day: usize = field.trim().parse().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("bad day `{field}`: {e}"),
    })?;
    if day == 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: "days are 1-based".into(),
        });
    }
    Ok(day)
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?)
}

fn expect_header(path: &Path, got: &csv::StringRecord, want: &[&str]) -> Result<()> {
    if got.len() < want.len() || want.iter().zip(got.iter()).any(|(w, g)| *w != g) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("header must start with `{}`", want.join(",")),
        });
    }
    Ok(())
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn field_count_error(path: &Path, line: u64, want: usize, got: usize) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("expected {want} fields, found {got}"),
    }
}

/// Reads `sites.csv`, `observations.csv` and `covariates.csv`.
///
/// The number of days is taken from the covariates file, which must contain
/// every `(site, day)` pair. Absent observation rows (or empty / `NA` values)
/// are missing. Stations whose missing fraction exceeds `missing_cap` are
/// rejected.
pub fn load_dataset(
    sites_path: &Path,
    observations_path: &Path,
    covariates_path: &Path,
    missing_cap: f64,
) -> Result<Dataset> {
    let mut rdr = reader(sites_path)?;
    expect_header(sites_path, rdr.headers()?, &["id", "utmx_km", "utmy_km", "altitude_m"])?;
    let mut sites = Vec::new();
    let mut site_ix: HashMap<String, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() != 4 {
            return Err(field_count_error(sites_path, line, 4, rec.len()));
        }
        let id = rec[0].to_string();
        if site_ix.contains_key(&id) {
            return Err(Error::Schema(format!(
                "{}:{line}: duplicate site id {id}",
                sites_path.display()
            )));
        }
        let x = parse_f64(&rec[1], sites_path, line, "utmx_km")?;
        let y = parse_f64(&rec[2], sites_path, line, "utmy_km")?;
        let alt = parse_f64(&rec[3], sites_path, line, "altitude_m")?;
        site_ix.insert(id.clone(), sites.len());
        sites.push(Site::new(id, x, y, alt));
    }
    if sites.is_empty() {
        return Err(Error::Schema("no sites".into()));
    }
    let d = sites.len();

    let mut rdr = reader(covariates_path)?;
    let header = rdr.headers()?.clone();
    expect_header(covariates_path, &header, &["site_id", "day"])?;
    let mut names = vec![INTERCEPT.to_string()];
    names.extend(header.iter().skip(2).map(str::to_string));
    let k = names.len();
    let mut cov_rows: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let mut max_day = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() != k + 1 {
            return Err(field_count_error(covariates_path, line, k + 1, rec.len()));
        }
        let i = *site_ix.get(&rec[0]).ok_or_else(|| {
            Error::Reference(format!(
                "{}:{line}: unknown site id {}",
                covariates_path.display(),
                &rec[0]
            ))
        })?;
        let day = parse_day(&rec[1], covariates_path, line)?;
        let mut row = Vec::with_capacity(k);
        row.push(1.0);
        for (c, f) in rec.iter().skip(2).enumerate() {
            row.push(parse_f64(f, covariates_path, line, &names[c + 1])?);
        }
        if cov_rows.insert((i, day), row).is_some() {
            return Err(Error::Schema(format!(
                "{}:{line}: duplicate (site, day) ({}, {day})",
                covariates_path.display(),
                &rec[0]
            )));
        }
        max_day = max_day.max(day);
    }
    let n_days = max_day;
    if n_days == 0 {
        return Err(Error::Schema("covariates file has no rows".into()));
    }
    let mut x = Vec::with_capacity(d * n_days * k);
    for t in 1..=n_days {
        for (i, s) in sites.iter().enumerate() {
            let row = cov_rows.get(&(i, t)).ok_or_else(|| {
                Error::Schema(format!("covariates missing for site {} day {t}", s.id))
            })?;
            x.extend_from_slice(row);
        }
    }

    let mut rdr = reader(observations_path)?;
    expect_header(observations_path, rdr.headers()?, &["site_id", "day", "value"])?;
    let mut z = vec![None; d * n_days];
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() != 3 {
            return Err(field_count_error(observations_path, line, 3, rec.len()));
        }
        let i = *site_ix.get(&rec[0]).ok_or_else(|| {
            Error::Reference(format!(
                "{}:{line}: unknown site id {}",
                observations_path.display(),
                &rec[0]
            ))
        })?;
        let day = parse_day(&rec[1], observations_path, line)?;
        if day > n_days {
            return Err(Error::Reference(format!(
                "{}:{line}: day {day} outside the covariate window 1..={n_days}",
                observations_path.display()
            )));
        }
        if !seen.insert((i, day)) {
            return Err(Error::Schema(format!(
                "{}:{line}: duplicate (site, day) ({}, {day})",
                observations_path.display(),
                &rec[0]
            )));
        }
        let v = rec[2].trim();
        if v.is_empty() || v.eq_ignore_ascii_case("na") {
            continue;
        }
        z[(day - 1) * d + i] = Some(parse_f64(v, observations_path, line, "value")?);
    }

    let ds = Dataset::new(sites, n_days, names, x, z, Scale::Natural)?;
    ds.check_missing_cap(missing_cap)?;
    Ok(ds)
}

/// Writes the three CSV files `load_dataset` reads.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("sites.csv"))?;
    w.write_record(["id", "utmx_km", "utmy_km", "altitude_m"])?;
    for s in ds.sites() {
        w.write_record([
            s.id.clone(),
            s.x_km.to_string(),
            s.y_km.to_string(),
            s.altitude_m.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("observations.csv"))?;
    w.write_record(["site_id", "day", "value"])?;
    for (i, s) in ds.sites().iter().enumerate() {
        for t in 0..ds.n_days() {
            if let Some(v) = ds.z(i, t) {
                w.write_record([s.id.clone(), (t + 1).to_string(), v.to_string()])?;
            }
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("covariates.csv"))?;
    let mut header = vec!["site_id".to_string(), "day".to_string()];
    header.extend(ds.covariate_names().iter().skip(1).cloned());
    w.write_record(&header)?;
    for (i, s) in ds.sites().iter().enumerate() {
        for t in 0..ds.n_days() {
            let mut row = vec![s.id.clone(), (t + 1).to_string()];
            row.extend(ds.x(i, t).iter().skip(1).map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Natural log of every present observation.
pub fn log_transform(ds: &Dataset) -> Result<Dataset> {
    if ds.scale != Scale::Natural {
        return Err(Error::Domain("dataset is already on the log scale".into()));
    }
    let d = ds.n_sites();
    let mut z = Vec::with_capacity(ds.z.len());
    for (c, v) in ds.z.iter().enumerate() {
        z.push(match *v {
            Some(v) if v > 0.0 => Some(v.ln()),
            Some(v) => {
                return Err(Error::Domain(format!(
                    "non-positive observation {v} at site {} day {}",
                    ds.sites[c % d].id,
                    c / d + 1
                )))
            }
            None => None,
        });
    }
    Ok(Dataset {
        z,
        scale: Scale::Log,
        ..ds.clone()
    })
}

/// Per-covariate centering and scaling used for standardization. Column 0
/// (the intercept) is never touched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationRecord {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl StandardizationRecord {
    /// Standardizes a full covariate row (intercept first).
    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        let mut out = row.to_vec();
        for c in 1..out.len() {
            out[c] = (out[c] - self.means[c - 1]) / self.sds[c - 1];
        }
        out
    }

    pub fn invert_row(&self, row: &[f64]) -> Vec<f64> {
        let mut out = row.to_vec();
        for c in 1..out.len() {
            out[c] = out[c] * self.sds[c - 1] + self.means[c - 1];
        }
        out
    }

    /// Applies the stored statistics to another dataset with the same
    /// covariate layout (e.g. validation sites).
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        self.map(ds, |r| self.apply_row(r))
    }

    pub fn invert(&self, ds: &Dataset) -> Result<Dataset> {
        self.map(ds, |r| self.invert_row(r))
    }

    fn map(&self, ds: &Dataset, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Dataset> {
        if ds.covariate_names[1..] != self.names[..] {
            return Err(Error::Schema("covariate names do not match the record".into()));
        }
        let k = ds.n_covariates();
        let x = ds.x.chunks(k).flat_map(f).collect();
        Ok(Dataset { x, ..ds.clone() })
    }
}

/// Centers and scales every non-intercept covariate to mean 0 and sample
/// standard deviation 1 (divisor `n - 1`) over all cells.
pub fn standardize(ds: &Dataset) -> Result<(Dataset, StandardizationRecord)> {
    let k = ds.n_covariates();
    let n = ds.x.len() / k;
    if n < 2 && k > 1 {
        return Err(Error::Contract("standardization needs at least two cells".into()));
    }
    let mut means = Vec::with_capacity(k - 1);
    let mut sds = Vec::with_capacity(k - 1);
    for c in 1..k {
        let col = ds.x.chunks(k).map(|r| r[c]);
        let mean = col.clone().sum::<f64>() / n as f64;
        let var = col.map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let sd = var.sqrt();
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::DegenerateCovariate(ds.covariate_names[c].clone()));
        }
        means.push(mean);
        sds.push(sd);
    }
    let rec = StandardizationRecord {
        names: ds.covariate_names[1..].to_vec(),
        means,
        sds,
    };
    Ok((rec.apply(ds)?, rec))
}

/// Euclidean distances in km between all pairs of sites.
pub fn spatial_distance_matrix(sites: &[Site]) -> DMatrix<f64> {
    let d = sites.len();
    let mut h = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..i {
            let v = sites[i].distance_km(&sites[j]);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

/// Splits off the listed sites for validation. Both halves keep the full
/// covariate record.
pub fn split_validation(ds: &Dataset, holdout_ids: &[String]) -> Result<(Dataset, Dataset)> {
    let mut hold = Vec::with_capacity(holdout_ids.len());
    for id in holdout_ids {
        let i = ds
            .site_index(id)
            .ok_or_else(|| Error::Reference(format!("unknown holdout site {id}")))?;
        if !hold.contains(&i) {
            hold.push(i);
        }
    }
    let train: Vec<usize> = (0..ds.n_sites()).filter(|i| !hold.contains(i)).collect();
    if train.len() < 2 {
        return Err(Error::Contract(format!(
            "holdout leaves {} training sites, need at least 2",
            train.len()
        )));
    }
    Ok((ds.subset_sites(&train), ds.subset_sites(&hold)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::io::Write;

    fn toy(d: usize, t: usize) -> Dataset {
        let sites = (0..d)
            .map(|i| Site::new(format!("s{i}"), i as f64, 2.0 * i as f64, 100.0))
            .collect();
        let mut x = Vec::new();
        let mut z = Vec::new();
        for tt in 0..t {
            for i in 0..d {
                x.extend_from_slice(&[1.0, (i + tt) as f64, (i * tt) as f64 + 0.5 * i as f64]);
                z.push(Some(10.0 + (i * 3 + tt) as f64));
            }
        }
        Dataset::new(
            sites,
            t,
            vec![INTERCEPT.into(), "a".into(), "b".into()],
            x,
            z,
            Scale::Natural,
        )
        .unwrap()
    }

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    fn files(dir: &Path, obs: &str) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
        let s = write(dir, "sites.csv", "id,utmx_km,utmy_km,altitude_m\nA,0,0,10\nB,3,4,20\n");
        let o = write(dir, "observations.csv", obs);
        let c = write(
            dir,
            "covariates.csv",
            "site_id,day,temp\nA,1,1.0\nA,2,2.0\nA,3,3.0\nB,1,4.0\nB,2,5.0\nB,3,6.5\n",
        );
        (s, o, c)
    }

    const FULL: &str = "site_id,day,value\nA,1,10\nA,2,11\nA,3,12\nB,1,20\nB,2,21\nB,3,22\n";

    #[test]
    fn loads_complete_grid() {
        let dir = tempfile::tempdir().unwrap();
        let (s, o, c) = files(dir.path(), FULL);
        let ds = load_dataset(&s, &o, &c, DEFAULT_MISSING_CAP).unwrap();
        assert_eq!(ds.n_sites(), 2);
        assert_eq!(ds.n_days(), 3);
        assert_eq!(ds.n_missing(), 0);
        assert_eq!(ds.z(1, 2), Some(22.0));
        assert_eq!(ds.x(1, 2), &[1.0, 6.5]);
    }

    #[test]
    fn absent_row_is_missing() {
        let dir = tempfile::tempdir().unwrap();
        let obs = "site_id,day,value\nA,1,10\nA,2,11\nA,3,12\nB,1,20\nB,3,22\n";
        let (s, o, c) = files(dir.path(), obs);
        let ds = load_dataset(&s, &o, &c, 0.5).unwrap();
        assert_eq!(ds.z(1, 1), None);
        assert_eq!(ds.n_missing(), 1);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (s, o, c) = files(dir.path(), "site_id,day,value\nA,1,10\nA,x,11\n");
        match load_dataset(&s, &o, &c, 1.0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let (s, o, c) = files(dir.path(), "site_id,day,value\nA,1,10\nA,1,11\n");
        assert!(matches!(load_dataset(&s, &o, &c, 1.0), Err(Error::Schema(_))));
        let (s, o, c) = files(dir.path(), "site_id,day,value\nZ,1,10\n");
        assert!(matches!(load_dataset(&s, &o, &c, 1.0), Err(Error::Reference(_))));
    }

    #[test]
    fn missing_cap_rejects_21_percent() {
        // 100 days, station B misses 21 of them.
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "sites.csv", "id,utmx_km,utmy_km,altitude_m\nA,0,0,1\nB,1,1,1\n");
        let mut cov = String::from("site_id,day,w\n");
        let mut obs = String::from("site_id,day,value\n");
        for t in 1..=100 {
            cov += &format!("A,{t},{t}\nB,{t},{}\n", t * 2);
            obs += &format!("A,{t},5\n");
            if t > 21 {
                obs += &format!("B,{t},6\n");
            }
        }
        let c = write(dir.path(), "covariates.csv", &cov);
        let o = write(dir.path(), "observations.csv", &obs);
        match load_dataset(&s, &o, &c, DEFAULT_MISSING_CAP) {
            Err(Error::MissingCap { site, fraction, .. }) => {
                assert_eq!(site, "B");
                assert_abs_diff_eq!(fraction, 0.21, epsilon = 1e-12);
            }
            other => panic!("expected cap error, got {other:?}"),
        }
        assert!(load_dataset(&s, &o, &c, 0.25).is_ok());
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = toy(3, 4);
        let mut z = ds.z_cells().to_vec();
        z[5] = None;
        ds = ds.with_observations(z).unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(
            &dir.path().join("sites.csv"),
            &dir.path().join("observations.csv"),
            &dir.path().join("covariates.csv"),
            1.0,
        )
        .unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn log_transform_values() {
        let ds = toy(1, 1).with_observations(vec![Some(49.4)]).unwrap();
        let l = log_transform(&ds).unwrap();
        assert_abs_diff_eq!(l.z(0, 0).unwrap(), 3.900, epsilon = 5e-4);
        let one = toy(1, 1).with_observations(vec![Some(1.0)]).unwrap();
        assert_eq!(log_transform(&one).unwrap().z(0, 0), Some(0.0));
        let bad = toy(2, 1).with_observations(vec![Some(1.0), Some(0.0)]).unwrap();
        assert!(matches!(log_transform(&bad), Err(Error::Domain(m)) if m.contains("s1")));
        assert!(log_transform(&log_transform(&one).unwrap()).is_err());
    }

    #[test]
    fn log_round_trip_and_missing_preserved() {
        let mut ds = toy(3, 3);
        let mut z = ds.z_cells().to_vec();
        z[4] = None;
        ds = ds.with_observations(z).unwrap();
        let l = log_transform(&ds).unwrap();
        assert_eq!(l.n_missing(), 1);
        for (a, b) in ds.z_cells().iter().zip(l.z_cells()) {
            if let (Some(a), Some(b)) = (a, b) {
                assert!((b.exp() - a).abs() <= 1e-12 * a);
            }
        }
        let (s, _) = standardize(&l).unwrap();
        assert_eq!(s.n_missing(), 1);
    }

    #[test]
    fn standardize_column() {
        // Single covariate column (1, 2, 3) -> (-1, 0, 1) with the n-1 divisor.
        let sites = vec![Site::new("a", 0.0, 0.0, 0.0)];
        let ds = Dataset::new(
            sites,
            3,
            vec![INTERCEPT.into(), "w".into()],
            vec![1.0, 1.0, 1.0, 2.0, 1.0, 3.0],
            vec![Some(1.0); 3],
            Scale::Natural,
        )
        .unwrap();
        let (s, rec) = standardize(&ds).unwrap();
        let col: Vec<f64> = (0..3).map(|t| s.x(0, t)[1]).collect();
        for (a, b) in col.iter().zip([-1.0, 0.0, 1.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert!((0..3).all(|t| s.x(0, t)[0] == 1.0));
        assert_eq!(rec.means, vec![2.0]);
        assert_eq!(rec.sds, vec![1.0]);
    }

    #[test]
    fn standardize_record_reuse_and_inverse() {
        let ds = toy(4, 5);
        let (s, rec) = standardize(&ds).unwrap();
        let again = rec.apply(&ds).unwrap();
        for (a, b) in s.x_cells().iter().zip(again.x_cells()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
        let back = rec.invert(&s).unwrap();
        for (a, b) in ds.x_cells().iter().zip(back.x_cells()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
        }
        let k = s.n_covariates();
        let n = s.x_cells().len() / k;
        for c in 1..k {
            let m: f64 = s.x_cells().chunks(k).map(|r| r[c]).sum::<f64>() / n as f64;
            let v: f64 = s.x_cells().chunks(k).map(|r| (r[c] - m).powi(2)).sum::<f64>()
                / (n - 1) as f64;
            assert_abs_diff_eq!(m, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_variance_covariate_rejected() {
        let sites = vec![Site::new("a", 0.0, 0.0, 0.0)];
        let ds = Dataset::new(
            sites,
            2,
            vec![INTERCEPT.into(), "flat".into()],
            vec![1.0, 0.3, 1.0, 0.3],
            vec![Some(1.0); 2],
            Scale::Natural,
        )
        .unwrap();
        assert!(matches!(standardize(&ds), Err(Error::DegenerateCovariate(n)) if n == "flat"));
    }

    #[test]
    fn distances() {
        let h = spatial_distance_matrix(&[Site::new("a", 0.0, 0.0, 0.0), Site::new("b", 3.0, 4.0, 0.0)]);
        assert_eq!(h[(0, 1)], 5.0);
        assert_eq!(h[(1, 0)], 5.0);
        assert_eq!(h[(0, 0)], 0.0);
        let one = spatial_distance_matrix(&[Site::new("a", 1.0, 1.0, 0.0)]);
        assert_eq!(one, DMatrix::zeros(1, 1));
    }

    #[test]
    fn split_partitions_sites() {
        let ds = toy(34, 2);
        let ids: Vec<String> = (24..34).map(|i| format!("s{i}")).collect();
        let (train, hold) = split_validation(&ds, &ids).unwrap();
        assert_eq!((train.n_sites(), hold.n_sites()), (24, 10));
        let a: HashSet<_> = train.sites().iter().map(|s| &s.id).collect();
        assert!(hold.sites().iter().all(|s| !a.contains(&s.id)));
        assert_eq!(hold.x(0, 1), ds.x(24, 1));

        let (same, empty) = split_validation(&ds, &[]).unwrap();
        assert_eq!(same, ds);
        assert_eq!(empty.n_sites(), 0);

        assert!(matches!(
            split_validation(&ds, &["nope".to_string()]),
            Err(Error::Reference(_))
        ));
        let small = toy(2, 1);
        assert!(split_validation(&small, &["s0".to_string()]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn distance_matrix_is_a_metric(coords in proptest::collection::vec((-200.0f64..200.0, -200.0f64..200.0), 2..20)) {
            let sites: Vec<Site> = coords.iter().enumerate()
                .map(|(i, &(x, y))| Site::new(i.to_string(), x, y, 0.0)).collect();
            let h = spatial_distance_matrix(&sites);
            let d = sites.len();
            for i in 0..d {
                proptest::prop_assert_eq!(h[(i, i)], 0.0);
                for j in 0..d {
                    proptest::prop_assert_eq!(h[(i, j)], h[(j, i)]);
                    proptest::prop_assert!(h[(i, j)] >= 0.0);
                    for l in 0..d {
                        proptest::prop_assert!(h[(i, j)] <= h[(i, l)] + h[(l, j)] + 1e-9);
                    }
                }
            }
        }
    }
}
