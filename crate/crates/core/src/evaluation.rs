//! Validation indexes, model ranking and residual diagnostics.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::models::{model_meta, ModelKind, ModelMeta};
use crate::prediction::DrawSummary;

/// Identifier of the star rule, written into every report header.
pub const STAR_RULE_VERSION: &str = "stars-v1 (median-rank tertiles over six indexes)";

/// Largest lag of the residual autocorrelation table.
pub const RESIDUAL_ACF_MAX_LAG: usize = 20;

/// Quantile with linear interpolation between order statistics
/// (type 7). NaN for an empty slice.
pub fn quantile(x: &[f64], p: f64) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

fn check_pair(observed: &[f64], predicted: &[f64], positive: bool) -> Result<()> {
    if observed.len() != predicted.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} observed against {} predicted values",
            observed.len(),
            predicted.len()
        )));
    }
    if observed.is_empty() {
        return Err(Error::Domain("no day has both an observation and a prediction".into()));
    }
    if positive {
        if let Some(v) = observed.iter().chain(predicted).find(|v| !(**v > 0.0)) {
            return Err(Error::Domain(format!("index needs positive values, got {v}")));
        }
    }
    Ok(())
}

/// Normalized mean bias factor.
pub fn nmbf(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(observed, predicted, true)?;
    let so: f64 = observed.iter().sum();
    let sp: f64 = predicted.iter().sum();
    Ok(if sp >= so { sp / so - 1.0 } else { 1.0 - so / sp })
}

fn kt(o: f64, p: f64) -> f64 {
    (-(p / o).ln().abs()).exp()
}

/// Weighted normalized mean root ratio.
pub fn wnnr(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(observed, predicted, true)?;
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(predicted) {
        let s = o / mean;
        let k = kt(o, p);
        num += s * s * (1.0 - k) * (1.0 - k);
        den += s * k;
    }
    Ok(num / den)
}

/// Normalized mean root ratio.
pub fn nnr(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(observed, predicted, true)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(predicted) {
        let k = kt(o, p);
        num += (1.0 - k) * (1.0 - k);
        den += k;
    }
    Ok(num / den)
}

/// RMSE of the point predictions, their Pearson correlation with the
/// observations, and the share of observations inside `[lo, hi]`.
pub fn rmse_corr_coverage(observed: &[f64], mean: &[f64], lo: &[f64], hi: &[f64]) -> Result<(f64, f64, f64)> {
    check_pair(observed, mean, false)?;
    check_pair(observed, lo, false)?;
    check_pair(observed, hi, false)?;
    let n = observed.len() as f64;
    if observed.len() < 2 {
        return Err(Error::Domain("correlation needs at least two days".into()));
    }
    let rmse = (observed.iter().zip(mean).map(|(o, p)| (o - p).powi(2)).sum::<f64>() / n).sqrt();
    let mo = observed.iter().sum::<f64>() / n;
    let mp = mean.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (o, p) in observed.iter().zip(mean) {
        sxy += (o - mo) * (p - mp);
        sxx += (o - mo).powi(2);
        syy += (p - mp).powi(2);
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::Domain("correlation is undefined for a constant series".into()));
    }
    let corr = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let inside = observed
        .iter()
        .zip(lo.iter().zip(hi))
        .filter(|(o, (l, h))| **l <= **o && **o <= **h)
        .count();
    Ok((rmse, corr, inside as f64 / n))
}

/// Validation indexes of one station.
#[derive(Clone, Debug, PartialEq)]
pub struct StationIndexRow {
    pub site_id: String,
    /// Days entering the indexes.
    pub n_used: usize,
    /// Days dropped because the observation was missing.
    pub n_missing: usize,
    pub nmbf: f64,
    pub wnnr: f64,
    pub nnr: f64,
    pub rmse: f64,
    pub corr: f64,
    pub coverage: f64,
}

/// Indexes of one station from its observations (missing as `None`) and
/// the predictive summaries of the same days.
pub fn station_indexes(site_id: &str, observed: &[Option<f64>], predicted: &[DrawSummary]) -> Result<StationIndexRow> {
    if observed.len() != predicted.len() {
        return Err(Error::DimensionMismatch(format!(
            "station {site_id}: {} observations against {} predictions",
            observed.len(),
            predicted.len()
        )));
    }
    let (mut o, mut m, mut lo, mut hi) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (z, s) in observed.iter().zip(predicted) {
        if let Some(z) = z {
            o.push(*z);
            m.push(s.mean);
            lo.push(s.lo);
            hi.push(s.hi);
        }
    }
    let wrap = |e: Error| Error::Domain(format!("station {site_id}: {e}"));
    let (rmse, corr, coverage) = rmse_corr_coverage(&o, &m, &lo, &hi).map_err(wrap)?;
    Ok(StationIndexRow {
        site_id: site_id.to_string(),
        n_used: o.len(),
        n_missing: observed.len() - o.len(),
        nmbf: nmbf(&o, &m).map_err(wrap)?,
        wnnr: wnnr(&o, &m).map_err(wrap)?,
        nnr: nnr(&o, &m).map_err(wrap)?,
        rmse,
        corr,
        coverage,
    })
}

/// The six indexes in ranking orientation: smaller is better.
fn oriented(r: &StationIndexRow, nominal: f64) -> [f64; 6] {
    [r.nmbf.abs(), r.wnnr, r.nnr, r.rmse, -r.corr, (r.coverage - nominal).abs()]
}

/// Stars for each model.
///
/// Per index the models are ranked on the median over stations (|NMBF|,
/// WNNR, NNR and RMSE ascending, correlation descending, distance of the
/// coverage from `nominal` ascending), tied medians sharing the better
/// rank. With `p` the number of models whose mean rank is strictly
/// smaller, a model gets 3 stars if `3p < M`, 2 if `3p < 2M`, else 1.
pub fn star_rating(tables: &[(String, Vec<StationIndexRow>)], nominal: f64) -> Vec<(String, u8)> {
    let m = tables.len();
    let medians: Vec<[f64; 6]> = tables
        .iter()
        .map(|(_, rows)| {
            let mut out = [0.0; 6];
            for (j, o) in out.iter_mut().enumerate() {
                let v: Vec<f64> = rows.iter().map(|r| oriented(r, nominal)[j]).collect();
                *o = quantile(&v, 0.5);
            }
            out
        })
        .collect();
    let mean_rank: Vec<f64> = (0..m)
        .map(|a| {
            (0..6)
                .map(|j| 1 + (0..m).filter(|&b| medians[b][j] < medians[a][j]).count())
                .sum::<usize>() as f64
                / 6.0
        })
        .collect();
    tables
        .iter()
        .enumerate()
        .map(|(a, (name, _))| {
            let p = (0..m).filter(|&b| mean_rank[b] < mean_rank[a]).count();
            let stars = if 3 * p < m {
                3
            } else if 3 * p < 2 * m {
                2
            } else {
                1
            };
            (name.clone(), stars)
        })
        .collect()
}

/// Median and quartiles of one index over stations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndexSummary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

pub const INDEX_NAMES: [&str; 6] = ["nmbf", "wnnr", "nnr", "rmse", "corr", "coverage"];

pub fn summarize_indexes(rows: &[StationIndexRow]) -> [IndexSummary; 6] {
    let cols: [Vec<f64>; 6] = [
        rows.iter().map(|r| r.nmbf).collect(),
        rows.iter().map(|r| r.wnnr).collect(),
        rows.iter().map(|r| r.nnr).collect(),
        rows.iter().map(|r| r.rmse).collect(),
        rows.iter().map(|r| r.corr).collect(),
        rows.iter().map(|r| r.coverage).collect(),
    ];
    cols.map(|c| IndexSummary { median: quantile(&c, 0.5), q1: quantile(&c, 0.25), q3: quantile(&c, 0.75) })
}

/// Everything known about one model when the report is assembled.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutcome {
    pub kind: ModelKind,
    pub estimation_secs_per_iter: Option<f64>,
    pub prediction_secs_per_iter: Option<f64>,
    /// Station indexes, or the reason the model did not finish.
    pub indexes: std::result::Result<Vec<StationIndexRow>, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub meta: ModelMeta,
    pub estimation_secs_per_iter: Option<f64>,
    pub prediction_secs_per_iter: Option<f64>,
    pub summary: Option<[IndexSummary; 6]>,
    pub stars: Option<u8>,
    pub failure: Option<String>,
}

/// Table of structural properties, cost and prediction quality per model.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub level: f64,
    /// Scale the indexes were computed on.
    pub scale: String,
    pub rows: Vec<ReportRow>,
    pub station_tables: Vec<(ModelKind, Vec<StationIndexRow>)>,
}

/// Assembles the report; stars are computed over the models that finished.
pub fn comparison_report(outcomes: &[ModelOutcome], level: f64, scale: &str) -> ComparisonReport {
    let done: Vec<(String, Vec<StationIndexRow>)> = outcomes
        .iter()
        .filter_map(|o| o.indexes.as_ref().ok().map(|r| (o.kind.name().to_string(), r.clone())))
        .collect();
    let stars = star_rating(&done, level);
    let rows = outcomes
        .iter()
        .map(|o| ReportRow {
            meta: model_meta(o.kind),
            estimation_secs_per_iter: o.estimation_secs_per_iter,
            prediction_secs_per_iter: o.prediction_secs_per_iter,
            summary: o.indexes.as_ref().ok().map(|r| summarize_indexes(r)),
            stars: stars.iter().find(|(n, _)| n == o.kind.name()).map(|(_, s)| *s),
            failure: o.indexes.as_ref().err().cloned(),
        })
        .collect();
    ComparisonReport {
        level,
        scale: scale.to_string(),
        rows,
        station_tables: outcomes
            .iter()
            .filter_map(|o| o.indexes.as_ref().ok().map(|r| (o.kind, r.clone())))
            .collect(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

impl ComparisonReport {
    /// `report.csv`. Timing columns are included only on request so that
    /// reruns stay byte-identical.
    pub fn write_csv(&self, path: &Path, with_timing: bool) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header = vec!["model", "n_params", "n_mh", "biggest_matrix"].into_iter().map(String::from).collect::<Vec<_>>();
        if with_timing {
            header.push("estimation_s_per_iter".into());
            header.push("prediction_s_per_iter".into());
        }
        for n in INDEX_NAMES {
            for s in ["median", "q1", "q3"] {
                header.push(format!("{n}_{s}"));
            }
        }
        header.push("stars".into());
        header.push("status".into());
        writeln!(f, "{}", header.join(","))?;
        for r in &self.rows {
            let mut cells = vec![
                r.meta.kind.name().to_string(),
                r.meta.n_params_excl_beta.to_string(),
                r.meta.n_mh_params.to_string(),
                r.meta.biggest_matrix.label().to_string(),
            ];
            if with_timing {
                cells.push(opt(r.estimation_secs_per_iter));
                cells.push(opt(r.prediction_secs_per_iter));
            }
            for j in 0..6 {
                let s = r.summary.map(|s| s[j]);
                cells.push(opt(s.map(|s| s.median)));
                cells.push(opt(s.map(|s| s.q1)));
                cells.push(opt(s.map(|s| s.q3)));
            }
            cells.push(r.stars.map_or(String::new(), |s| s.to_string()));
            cells.push(match &r.failure {
                None => "ok".into(),
                Some(m) => format!("\"failed: {}\"", m.replace('"', "'")),
            });
            writeln!(f, "{}", cells.join(","))?;
        }
        Ok(())
    }

    /// Human-readable rendering of the report.
    pub fn to_text(&self, with_timing: bool) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Model comparison");
        let _ = writeln!(s, "star rule: {STAR_RULE_VERSION}");
        let _ = writeln!(s, "interval level: {}; index scale: {}", self.level, self.scale);
        let _ = writeln!(s);
        let _ = write!(s, "{:<6} {:>8} {:>5} {:>9}", "model", "params", "MH", "biggest");
        if with_timing {
            let _ = write!(s, " {:>12} {:>12}", "est s/iter", "pred s/iter");
        }
        for n in INDEX_NAMES {
            let _ = write!(s, " {n:>9}");
        }
        let _ = writeln!(s, " {:>5}", "stars");
        for r in &self.rows {
            let _ = write!(
                s,
                "{:<6} {:>8} {:>5} {:>9}",
                r.meta.kind.name(),
                r.meta.n_params_excl_beta,
                r.meta.n_mh_params,
                r.meta.biggest_matrix.label()
            );
            if with_timing {
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3e}"));
                let _ = write!(s, " {:>12} {:>12}", fmt(r.estimation_secs_per_iter), fmt(r.prediction_secs_per_iter));
            }
            match (&r.summary, &r.failure) {
                (Some(sm), _) => {
                    for x in sm {
                        let _ = write!(s, " {:>9.4}", x.median);
                    }
                    let stars = r.stars.map_or(String::new(), |n| "*".repeat(n as usize));
                    let _ = writeln!(s, " {stars:>5}");
                }
                (None, Some(m)) => {
                    let _ = writeln!(s, "  failed: {m}");
                }
                (None, None) => {
                    let _ = writeln!(s);
                }
            }
        }
        s
    }

    pub fn write_text(&self, path: &Path, with_timing: bool) -> Result<()> {
        std::fs::write(path, self.to_text(with_timing))?;
        Ok(())
    }

    /// `indexes.csv`: one row per model and station.
    pub fn write_indexes_csv(&self, path: &Path) -> Result<()> {
        write_indexes_csv(path, &self.station_tables)
    }
}

/// `model,site_id,n_used,n_missing,nmbf,wnnr,nnr,rmse,corr,coverage`
pub fn write_indexes_csv(path: &Path, tables: &[(ModelKind, Vec<StationIndexRow>)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "model,site_id,n_used,n_missing,nmbf,wnnr,nnr,rmse,corr,coverage")?;
    for (kind, rows) in tables {
        for r in rows {
            writeln!(
                f,
                "{kind},{},{},{},{},{},{},{},{},{}",
                r.site_id, r.n_used, r.n_missing, r.nmbf, r.wnnr, r.nnr, r.rmse, r.corr, r.coverage
            )?;
        }
    }
    Ok(())
}

/// Pooled least-squares fit on the observed cells. Returns the
/// coefficients and the residual sum of squares, or a numerical error when
/// the design is rank deficient.
pub fn pooled_ols(x: &DMatrix<f64>, z: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let xtx = x.transpose() * x;
    let eig = SymmetricEigen::new(xtx.clone());
    let max = eig.eigenvalues.max();
    if !(eig.eigenvalues.min() > 1e-10 * max.max(f64::MIN_POSITIVE)) {
        return Err(Error::Numerical("design matrix is rank deficient".into()));
    }
    let beta = xtx
        .cholesky()
        .ok_or_else(|| Error::Numerical("design matrix is rank deficient".into()))?
        .solve(&(x.transpose() * z));
    let rss = (z - x * &beta).norm_squared();
    Ok((beta, rss))
}

fn observed_design(ds: &Dataset, cols: &[usize]) -> (DMatrix<f64>, DVector<f64>, Vec<usize>) {
    let cells: Vec<usize> = (0..ds.z_cells().len()).filter(|&c| ds.z_cells()[c].is_some()).collect();
    let d = ds.n_sites();
    let x = DMatrix::from_fn(cells.len(), cols.len(), |r, j| ds.x(cells[r] % d, cells[r] / d)[cols[j]]);
    let z = DVector::from_iterator(cells.len(), cells.iter().map(|&c| ds.z_cells()[c].unwrap()));
    (x, z, cells)
}

/// One pair of stations in the residual correlation cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct CloudPoint {
    pub site_a: String,
    pub site_b: String,
    pub distance_km: f64,
    pub corr: f64,
    /// LOWESS fit of the cloud at this distance.
    pub smooth: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualDiagnostics {
    pub beta: DVector<f64>,
    pub cloud: Vec<CloudPoint>,
    /// Residual autocorrelations per station, lags `0..=20`.
    pub acf: Vec<(String, Vec<f64>)>,
}

/// Locally weighted linear regression with tricube weights and
/// `iterations` bisquare robustness passes, evaluated at every `x`.
pub fn lowess(x: &[f64], y: &[f64], frac: f64, iterations: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let r = ((frac * n as f64).ceil() as usize).clamp(2.min(n), n);
    let mut robust = vec![1.0; n];
    let mut fit = vec![0.0; n];
    for pass in 0..=iterations {
        for i in 0..n {
            let mut dist: Vec<f64> = x.iter().map(|xj| (xj - x[i]).abs()).collect();
            dist.sort_by(f64::total_cmp);
            let h = dist[r - 1].max(1e-12);
            let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in 0..n {
                let u = (x[j] - x[i]).abs() / h;
                let w = if u < 1.0 { (1.0 - u.powi(3)).powi(3) } else { 0.0 } * robust[j];
                sw += w;
                sx += w * x[j];
                sy += w * y[j];
                sxx += w * x[j] * x[j];
                sxy += w * x[j] * y[j];
            }
            fit[i] = if sw <= 0.0 {
                y[i]
            } else {
                let (mx, my) = (sx / sw, sy / sw);
                let vx = sxx / sw - mx * mx;
                if vx > 1e-12 * (1.0 + mx * mx) {
                    my + (sxy / sw - mx * my) / vx * (x[i] - mx)
                } else {
                    my
                }
            };
        }
        if pass < iterations {
            let res: Vec<f64> = (0..n).map(|i| (y[i] - fit[i]).abs()).collect();
            let s = 6.0 * quantile(&res, 0.5);
            if s <= 0.0 {
                break;
            }
            for i in 0..n {
                let u = res[i] / s;
                robust[i] = if u < 1.0 { (1.0 - u * u).powi(2) } else { 0.0 };
            }
        }
    }
    fit
}

/// Autocorrelation of a series with gaps: the mean and variance use the
/// present values, lag products use the days where both ends are present.
pub fn acf_with_gaps(x: &[Option<f64>], max_lag: usize) -> Vec<f64> {
    let present: Vec<f64> = x.iter().flatten().copied().collect();
    let n = present.len() as f64;
    if present.is_empty() {
        return Vec::new();
    }
    let m = present.iter().sum::<f64>() / n;
    let c0 = present.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    if !(c0 > 0.0) {
        return Vec::new();
    }
    (0..=max_lag.min(x.len().saturating_sub(1)))
        .map(|k| {
            let ck: f64 = (0..x.len() - k)
                .filter_map(|t| Some((x[t]? - m) * (x[t + k]? - m)))
                .sum::<f64>()
                / n;
            ck / c0
        })
        .collect()
}

/// Pooled OLS of `z` on all covariates, then the residual correlation
/// cloud between station pairs and per-station residual autocorrelations.
pub fn residual_diagnostics(ds: &Dataset) -> Result<ResidualDiagnostics> {
    let cols: Vec<usize> = (0..ds.n_covariates()).collect();
    let (x, z, cells) = observed_design(ds, &cols);
    let (beta, _) = pooled_ols(&x, &z)?;
    let fitted = &x * &beta;
    let (d, n) = (ds.n_sites(), ds.n_days());
    let mut res: Vec<Vec<Option<f64>>> = vec![vec![None; n]; d];
    for (r, &c) in cells.iter().enumerate() {
        res[c % d][c / d] = Some(z[r] - fitted[r]);
    }
    let mut cloud = Vec::new();
    for a in 0..d {
        for b in a + 1..d {
            let pairs: Vec<(f64, f64)> = (0..n).filter_map(|t| Some((res[a][t]?, res[b][t]?))).collect();
            if pairs.len() < 3 {
                continue;
            }
            let m = pairs.len() as f64;
            let (ma, mb) = (pairs.iter().map(|p| p.0).sum::<f64>() / m, pairs.iter().map(|p| p.1).sum::<f64>() / m);
            let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
            for (u, v) in &pairs {
                sab += (u - ma) * (v - mb);
                saa += (u - ma).powi(2);
                sbb += (v - mb).powi(2);
            }
            if saa > 0.0 && sbb > 0.0 {
                cloud.push(CloudPoint {
                    site_a: ds.sites()[a].id.clone(),
                    site_b: ds.sites()[b].id.clone(),
                    distance_km: ds.sites()[a].distance_km(&ds.sites()[b]),
                    corr: sab / (saa * sbb).sqrt(),
                    smooth: f64::NAN,
                });
            }
        }
    }
    let xs: Vec<f64> = cloud.iter().map(|p| p.distance_km).collect();
    let ys: Vec<f64> = cloud.iter().map(|p| p.corr).collect();
    for (p, s) in cloud.iter_mut().zip(lowess(&xs, &ys, 2.0 / 3.0, 2)) {
        p.smooth = s;
    }
    let acf = (0..d)
        .map(|i| (ds.sites()[i].id.clone(), acf_with_gaps(&res[i], RESIDUAL_ACF_MAX_LAG)))
        .collect();
    Ok(ResidualDiagnostics { beta, cloud, acf })
}

impl ResidualDiagnostics {
    /// `site_a,site_b,distance_km,corr,lowess`
    pub fn write_cloud_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "site_a,site_b,distance_km,corr,lowess")?;
        for p in &self.cloud {
            writeln!(f, "{},{},{},{},{}", p.site_a, p.site_b, p.distance_km, p.corr, p.smooth)?;
        }
        Ok(())
    }

    /// `site_id,lag,acf`
    pub fn write_acf_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "site_id,lag,acf")?;
        for (id, a) in &self.acf {
            for (k, v) in a.iter().enumerate() {
                writeln!(f, "{id},{k},{v}")?;
            }
        }
        Ok(())
    }

    /// Median of the lag-`k` residual autocorrelation over stations.
    pub fn median_acf(&self, k: usize) -> f64 {
        let v: Vec<f64> = self.acf.iter().filter_map(|(_, a)| a.get(k).copied()).collect();
        quantile(&v, 0.5)
    }
}

/// AIC of one candidate covariate set, or the reason it was skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct AicEntry {
    /// Covariates besides the intercept.
    pub covariates: Vec<String>,
    pub aic: std::result::Result<f64, String>,
}

/// Ranks candidate covariate sets by the AIC of a pooled i.i.d. Gaussian
/// regression. Every candidate includes the intercept; `p` counts the
/// coefficients plus the error variance. Rank-deficient candidates are
/// kept at the end with the reason.
pub fn aic_screen(ds: &Dataset, candidates: &[Vec<String>]) -> Result<Vec<AicEntry>> {
    let mut out = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let mut cols = vec![0];
        for name in cand {
            let j = ds
                .covariate_names()
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::Reference(format!("unknown covariate `{name}`")))?;
            if !cols.contains(&j) {
                cols.push(j);
            }
        }
        let (x, z, _) = observed_design(ds, &cols);
        let n = z.len() as f64;
        let aic = pooled_ols(&x, &z).map(|(_, rss)| {
            let loglik = -0.5 * n * ((2.0 * std::f64::consts::PI * rss / n).ln() + 1.0);
            2.0 * (cols.len() + 1) as f64 - 2.0 * loglik
        });
        out.push(AicEntry {
            covariates: cols[1..].iter().map(|&j| ds.covariate_names()[j].clone()).collect(),
            aic: aic.map_err(|e| e.to_string()),
        });
    }
    out.sort_by(|a, b| match (&a.aic, &b.aic) {
        (Ok(x), Ok(y)) => x.total_cmp(y),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => std::cmp::Ordering::Equal,
    });
    Ok(out)
}
