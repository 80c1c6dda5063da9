//! Seeded Monte Carlo studies: generate, fit and score replicates.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FitConfig, PenaltyMode};
use crate::error::{Error, Result};
use crate::estimator::fit;
use crate::init::InitConfig;
use crate::io::{format_value, write_rows};
use crate::metrics::{evaluate, EvalReport};
use crate::rng::SeedStream;
use crate::simlab::{generate, Contamination, GroundTruth, ScenarioSpec};

/// Fitting variant compared in a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Unpenalized fit only.
    Pen0,
    /// Unpenalized fit followed by the penalized phase.
    Penb,
}

impl Method {
    pub fn penalty_mode(self) -> PenaltyMode {
        match self {
            Method::Pen0 => PenaltyMode::None,
            Method::Penb => PenaltyMode::Auto,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Pen0 => "pen0",
            Method::Penb => "penb",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pen0" => Ok(Method::Pen0),
            "penb" => Ok(Method::Penb),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

/// Outlier mechanism selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OutlierKind {
    Standard,
    Extreme,
    Structural(f64),
}

impl OutlierKind {
    pub fn contamination(self) -> Contamination {
        match self {
            OutlierKind::Standard => Contamination::standard(),
            OutlierKind::Extreme => Contamination::extreme(),
            OutlierKind::Structural(gamma) => Contamination::Structural { gamma },
        }
    }
}

impl fmt::Display for OutlierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutlierKind::Standard => f.write_str("standard"),
            OutlierKind::Extreme => f.write_str("extreme"),
            OutlierKind::Structural(gamma) => write!(f, "structural:{gamma}"),
        }
    }
}

impl FromStr for OutlierKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(OutlierKind::Standard),
            "extreme" => Ok(OutlierKind::Extreme),
            _ => {
                let gamma = s
                    .strip_prefix("structural:")
                    .and_then(|g| g.parse::<f64>().ok())
                    .filter(|g| g.is_finite() && *g >= 0.0)
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown outlier kind {s:?}")))?;
                Ok(OutlierKind::Structural(gamma))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    /// Scenario label written to the output tables.
    pub label: String,
    pub scenario: ScenarioSpec,
    /// Contamination levels in percent.
    pub pct_out: Vec<u32>,
    pub outliers: OutlierKind,
    pub missing_rate: f64,
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub seed: u64,
    pub jobs: usize,
    /// Template for every fit; `penalty_mode` and `seed` are set per task.
    pub fit: FitConfig,
    pub init: InitConfig,
    /// Derive the initialization trimming levels from each nonzero
    /// contamination level instead of `init.alpha_true`.
    pub init_from_level: bool,
    /// Record wall time per fit. Off by default so output is reproducible.
    pub timing: bool,
}

impl StudyConfig {
    pub fn check(&self) -> Result<()> {
        if self.replicates == 0 || self.jobs == 0 {
            return Err(Error::InvalidConfig("replicates and jobs must be positive".into()));
        }
        if self.methods.is_empty() || self.pct_out.is_empty() {
            return Err(Error::InvalidConfig("at least one method and contamination level are required".into()));
        }
        if self.fit.g != self.scenario.g {
            return Err(Error::InvalidConfig(format!("fit G = {} differs from scenario G = {}", self.fit.g, self.scenario.g)));
        }
        for &pct in &self.pct_out {
            self.spec_for(pct).check()?;
            self.init_for(pct).check()?;
        }
        self.fit.check()
    }

    /// Initialization settings at one contamination level.
    pub fn init_for(&self, pct: u32) -> InitConfig {
        if !self.init_from_level || pct == 0 {
            return self.init.clone();
        }
        InitConfig::from_alpha(f64::from(pct) / 100.0).with_effort_of(&self.init)
    }

    /// Scenario at one contamination level.
    pub fn spec_for(&self, pct: u32) -> ScenarioSpec {
        let mut spec = self.scenario.clone().with_contamination(self.outliers.contamination(), f64::from(pct) / 100.0);
        if pct == 0 {
            spec.contamination = Contamination::None;
        }
        spec.missing_rate = self.missing_rate;
        spec
    }
}

#[derive(Debug, Clone)]
pub struct StudyRow {
    pub scenario: String,
    pub pct_out: u32,
    pub outlier_kind: String,
    pub method: Method,
    pub replicate: usize,
    /// Absent when generation or fitting failed.
    pub report: Option<EvalReport>,
    pub error: Option<String>,
    pub seconds: Option<f64>,
}

/// Runs every (level, replicate, method) task on a pool of `cfg.jobs`
/// threads. Each replicate's data and fit seeds depend only on the study
/// seed, the level and the replicate index, so the rows do not depend on
/// the number of threads. Methods share the replicate's data.
pub fn run_study(cfg: &StudyConfig) -> Result<Vec<StudyRow>> {
    cfg.check()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let tasks: Vec<(u32, usize)> =
        cfg.pct_out.iter().flat_map(|&pct| (0..cfg.replicates).map(move |r| (pct, r))).collect();
    let mut rows: Vec<StudyRow> =
        pool.install(|| tasks.par_iter().flat_map_iter(|&(pct, r)| run_replicate(cfg, replicate_stream(cfg, pct, r), pct, r)).collect());
    rows.sort_by_key(|r| (r.pct_out, r.replicate, r.method));
    Ok(rows)
}

fn replicate_stream(cfg: &StudyConfig, pct: u32, replicate: usize) -> SeedStream {
    SeedStream::new(cfg.seed).child(u64::from(pct)).child(replicate as u64)
}

/// The synthetic data set a study fits at one level and replicate.
pub fn replicate_truth(cfg: &StudyConfig, pct: u32, replicate: usize) -> Result<GroundTruth> {
    generate(&cfg.spec_for(pct), replicate_stream(cfg, pct, replicate).child(0))
}

fn run_replicate(cfg: &StudyConfig, stream: SeedStream, pct: u32, replicate: usize) -> Vec<StudyRow> {
    let truth = replicate_truth(cfg, pct, replicate);
    cfg.methods
        .iter()
        .map(|&method| {
            let mut row = StudyRow {
                scenario: cfg.label.clone(),
                pct_out: pct,
                outlier_kind: if pct == 0 { "none".into() } else { cfg.outliers.to_string() },
                method,
                replicate,
                report: None,
                error: None,
                seconds: None,
            };
            let outcome = truth.as_ref().map_err(|e| e.to_string()).and_then(|truth| {
                let data = truth.dataset().map_err(|e| e.to_string())?;
                let fit_cfg = FitConfig { penalty_mode: method.penalty_mode(), seed: stream.child(1).seed(), ..cfg.fit.clone() };
                let start = Instant::now();
                let result = fit(&data, &fit_cfg, &cfg.init_for(pct)).map_err(|e| e.to_string())?;
                let seconds = start.elapsed().as_secs_f64();
                let report = evaluate(&result, truth).map_err(|e| e.to_string())?;
                Ok((report, seconds))
            });
            match outcome {
                Ok((report, seconds)) => {
                    row.report = Some(report);
                    row.seconds = cfg.timing.then_some(seconds);
                }
                Err(e) => row.error = Some(e),
            }
            row
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(format_value).unwrap_or_default()
}

fn header(prefix: &[&str], g: usize) -> Vec<String> {
    let mut h: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    h.extend(["mr", "ari", "tp_pct", "fp_pct", "mae", "rmse"].map(String::from));
    h.extend((1..=g).map(|k| format!("mse_mu_{k}")));
    h.extend((1..=g).map(|k| format!("kl_sigma_{k}")));
    h.push("seconds".into());
    h
}

/// Metric values in output column order; absent entries stay empty.
fn metric_values(r: &EvalReport) -> Vec<Option<f64>> {
    let mut v = vec![Some(r.mr), Some(r.ari), r.tp_pct, Some(r.fp_pct), Some(r.mae_imputation), Some(r.rmse_imputation)];
    v.extend(r.mse_means.iter().map(|&x| Some(x)));
    v.extend(r.kl_covs.iter().map(|&x| Some(x)));
    v
}

/// One row per replicate and method.
pub fn write_results<W: Write>(w: W, g: usize, rows: &[StudyRow]) -> Result<()> {
    let headers = header(&["scenario", "pct_out", "outlier_kind", "method", "replicate"], g);
    let records = rows.iter().map(|row| {
        let mut rec = vec![row.scenario.clone(), row.pct_out.to_string(), row.outlier_kind.clone(), row.method.to_string(), row.replicate.to_string()];
        match &row.report {
            Some(r) => rec.extend(metric_values(r).into_iter().map(opt)),
            None => rec.extend(std::iter::repeat_n(String::new(), 6 + 2 * g)),
        }
        rec.push(opt(row.seconds));
        rec
    });
    write_rows(w, &headers, records)
}

/// Column means over successful replicates per (scenario, level, outlier
/// kind, method), with the number of contributing replicates.
pub fn write_summary<W: Write>(w: W, g: usize, rows: &[StudyRow]) -> Result<()> {
    let headers = header(&["scenario", "pct_out", "outlier_kind", "method", "n_samples"], g);
    let mut groups: BTreeMap<(String, u32, String, Method), Vec<&StudyRow>> = BTreeMap::new();
    for row in rows {
        groups.entry((row.scenario.clone(), row.pct_out, row.outlier_kind.clone(), row.method)).or_default().push(row);
    }
    let width = 6 + 2 * g;
    let records = groups.into_iter().map(|((scenario, pct, kind, method), members)| {
        let reports: Vec<Vec<Option<f64>>> = members.iter().filter_map(|r| r.report.as_ref()).map(metric_values).collect();
        let mut rec = vec![scenario, pct.to_string(), kind, method.to_string(), reports.len().to_string()];
        for c in 0..width {
            rec.push(opt(mean(reports.iter().map(|v| v[c]))));
        }
        rec.push(opt(mean(members.iter().map(|r| r.seconds))));
        rec
    });
    write_rows(w, &headers, records)
}

/// Mean of the present values, in input order.
fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Mean of one metric per (level, method) over successful rows.
pub fn mean_metric(rows: &[StudyRow], pct: u32, method: Method, metric: impl Fn(&EvalReport) -> Option<f64>) -> Option<f64> {
    mean(rows.iter().filter(|r| r.pct_out == pct && r.method == method).filter_map(|r| r.report.as_ref()).map(metric))
}
