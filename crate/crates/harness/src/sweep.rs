//! Equal-error rate as one experiment parameter varies.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentSpec;
use crate::error::{HarnessError, Result};
use crate::experiment::{run_trials, TrialSet};
use crate::roc::{binomial_ci95, roc_curve, RocCurve};

/// One line of the summary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub equal_error: f64,
    /// Half-width of the 95% interval on `equal_error`.
    pub ci95: f64,
}

/// Equal-error summary of one trial set.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSummary {
    /// `None` when the trials hold no active or no inactive user.
    pub roc: Option<RocCurve>,
    pub equal_error: f64,
    pub ci95: f64,
    pub actives: usize,
    pub inactives: usize,
}

impl ErrorSummary {
    /// The interval treats the equal-error rate as a binomial proportion
    /// over the active users, the smaller of the two populations.
    pub fn from_trials(set: &TrialSet, threshold_count: usize) -> Result<Self> {
        let (actives, inactives) = (set.active_count(), set.inactive_count());
        if actives == 0 || inactives == 0 {
            return Ok(Self {
                roc: None,
                equal_error: f64::NAN,
                ci95: f64::NAN,
                actives,
                inactives,
            });
        }
        let roc = roc_curve(set.scored(), threshold_count)?;
        let rate = roc.equal_error.rate;
        Ok(Self {
            equal_error: rate,
            ci95: binomial_ci95(rate, actives.min(inactives)),
            roc: Some(roc),
            actives,
            inactives,
        })
    }

    /// `lo <= x <= hi` for the 95% interval `[lo, hi]`.
    pub fn interval(&self) -> (f64, f64) {
        (self.equal_error - self.ci95, self.equal_error + self.ci95)
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub row: SweepRow,
    pub summary: ErrorSummary,
    pub trials: TrialSet,
}

/// Flattens a TOML document into `dotted.key -> value`.
fn flatten(prefix: &str, value: &toml::Value, out: &mut BTreeMap<String, toml::Value>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn differing_keys(specs: &[(String, ExperimentSpec)]) -> Vec<String> {
    let flat: Vec<BTreeMap<String, toml::Value>> = specs
        .iter()
        .map(|(_, s)| {
            let mut s = s.clone();
            s.run.sweep = None;
            let mut m = BTreeMap::new();
            flatten("", &toml::Value::try_from(&s).expect("specs serialize"), &mut m);
            m
        })
        .collect();
    let mut keys: Vec<String> = flat.iter().flat_map(|m| m.keys().cloned()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter(|k| flat.iter().any(|m| m.get(k) != flat[0].get(k)))
        .collect()
}

/// Runs every labelled spec and summarizes each. The specs may differ in
/// at most one setting.
pub fn equal_error_sweep(specs: &[(String, ExperimentSpec)]) -> Result<Vec<SweepPoint>> {
    let differ = differing_keys(specs);
    if differ.len() > 1 {
        return Err(HarnessError::Usage(format!(
            "swept specs differ in more than one setting: {}",
            differ.join(", ")
        )));
    }
    specs
        .iter()
        .map(|(label, spec)| {
            let trials = run_trials(spec)?;
            let summary = ErrorSummary::from_trials(&trials, spec.run.threshold_count)?;
            Ok(SweepPoint {
                row: SweepRow {
                    param: label.clone(),
                    equal_error: summary.equal_error,
                    ci95: summary.ci95,
                },
                summary,
                trials,
            })
        })
        .collect()
}

/// Labelled specs for `spec.run.sweep`, or the spec alone labelled
/// `baseline`.
pub fn expand(spec: &ExperimentSpec) -> Result<Vec<(String, ExperimentSpec)>> {
    match &spec.run.sweep {
        None => Ok(vec![("baseline".to_string(), spec.clone())]),
        Some(sweep) => sweep
            .values
            .iter()
            .map(|&v| Ok((format!("{}={v}", sweep.param), spec.with_param(&sweep.param, v)?)))
            .collect(),
    }
}

pub fn write_summary<W: Write>(rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_summary(rows: &[SweepRow], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_summary(rows, std::io::BufWriter::new(file)).map_err(|e| HarnessError::csv(path, e))
}

pub fn load_summary(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| HarnessError::csv(path, e))
}
