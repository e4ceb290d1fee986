//! Chain diagnostics: autocorrelation, effective sample size, acceptance.

use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::inference::Chain;

/// Largest lag reported in the autocorrelation tables.
pub const ACF_MAX_LAG: usize = 50;

/// Sample autocorrelation at lags `0..=max_lag` (biased estimator,
/// normalized by the lag-0 autocovariance). Empty for a constant series.
pub fn acf(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let m = x.iter().sum::<f64>() / n as f64;
    let c0 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
    if !(c0 > 0.0) {
        return Vec::new();
    }
    (0..=max_lag.min(n - 1))
        .map(|k| {
            let ck: f64 = (0..n - k).map(|t| (x[t] - m) * (x[t + k] - m)).sum::<f64>() / n as f64;
            ck / c0
        })
        .collect()
}

/// Effective sample size by Geyer's initial positive sequence. `None` when
/// the series is constant.
pub fn ess(x: &[f64]) -> Option<f64> {
    let n = x.len();
    let r = acf(x, n.saturating_sub(1));
    if r.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < r.len() {
        let g = r[2 * m] + r[2 * m + 1];
        if g <= 0.0 {
            break;
        }
        let g = g.min(prev);
        sum += g;
        prev = g;
        m += 1;
    }
    let tau = (-1.0 + 2.0 * sum).max(1.0 / n as f64);
    Some(n as f64 / tau)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamDiagnostics {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    /// Lags `0..=50`; empty for a constant series.
    pub acf: Vec<f64>,
    pub ess: Option<f64>,
    pub acceptance: Option<f64>,
}

impl ParamDiagnostics {
    pub fn degenerate(&self) -> bool {
        self.ess.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub params: Vec<ParamDiagnostics>,
}

/// Per-parameter summaries of a chain.
pub fn diagnostics(chain: &Chain) -> Diagnostics {
    let names = chain.param_names();
    let params = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let x: Vec<f64> = (0..chain.draws.len()).map(|i| chain.row(i)[j]).collect();
            let n = x.len().max(1) as f64;
            let mean = x.iter().sum::<f64>() / n;
            let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
            let acceptance = chain
                .acceptance
                .iter()
                .find(|(id, _)| id.name() == name)
                .map(|(_, r)| *r);
            ParamDiagnostics {
                name: name.clone(),
                mean,
                sd,
                q025: crate::evaluation::quantile(&x, 0.025),
                q975: crate::evaluation::quantile(&x, 0.975),
                acf: acf(&x, ACF_MAX_LAG),
                ess: ess(&x),
                acceptance,
            }
        })
        .collect();
    Diagnostics { params }
}

impl Diagnostics {
    pub fn get(&self, name: &str) -> Option<&ParamDiagnostics> {
        self.params.iter().find(|p| p.name == name)
    }

    /// `param,mean,sd,q025,q975,ess,degenerate,acceptance`
    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "param,mean,sd,q025,q975,ess,degenerate,acceptance")?;
        for p in &self.params {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{}",
                p.name,
                p.mean,
                p.sd,
                p.q025,
                p.q975,
                p.ess.map_or(String::new(), |v| v.to_string()),
                p.degenerate(),
                p.acceptance.map_or(String::new(), |v| v.to_string())
            )?;
        }
        Ok(())
    }

    /// `param,lag,acf`
    pub fn write_acf_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "param,lag,acf")?;
        for p in &self.params {
            for (k, v) in p.acf.iter().enumerate() {
                writeln!(f, "{},{k},{v}", p.name)?;
            }
        }
        Ok(())
    }
}
