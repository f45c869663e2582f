//! Dataset directories: one simulated trial on disk.
//!
//! * `meta`: TOML with `[system]` (every system setting, `seed` being the
//!   master seed), `[trial]` and `[knowledge]`.
//! * `pilots.csv`: L rows of 2N numbers, real and imaginary parts
//!   interleaved.
//! * `Y_<k>.csv` for each AP `k`: L rows of 2M numbers, interleaved.
//! * `truth.csv`: `user,active,beta_0,…` with the true effective gains.
//! * `knowledge.csv`: `user,beta_0,…` with the gains a knowledge-based
//!   detector is given.
//!
//! Gains and signals are in units of the receiver noise power. Numbers are
//! written in shortest round-trip form, so reading a dataset back yields
//! bit-identical values.

use std::path::{Path, PathBuf};

use cfdetect::covbase::CovKnowledge;
use cfdetect::linalg::{CMatrix, LinkMatrix};
use cfdetect::simkit::SystemConfig;
use cfdetect::{Complex, PilotMatrix, ReceivedSignals};
use serde::{Deserialize, Serialize};

use crate::config::PerturbationSettings;
use crate::error::{HarnessError, Result};
use crate::experiment::{trial_seed, Trial};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialMeta {
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeMeta {
    pub pathloss_error_db: f64,
    pub noise_error_std_dbm: f64,
    /// True received noise variance.
    pub noise_power: f64,
    /// Noise variance handed to knowledge-based detectors.
    pub assumed_noise_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub system: SystemConfig,
    pub trial: TrialMeta,
    pub knowledge: KnowledgeMeta,
}

impl DatasetMeta {
    /// Seed the trial was drawn from; detectors seed their start from it.
    pub fn trial_seed(&self) -> u64 {
        trial_seed(self.system.seed, self.trial.index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub pilots: PilotMatrix,
    pub signals: ReceivedSignals,
    pub truth: Vec<bool>,
    pub effective_beta: LinkMatrix<f64>,
    pub known_beta: LinkMatrix<f64>,
}

impl Dataset {
    pub fn from_trial(trial: &Trial, perturbation: &PerturbationSettings) -> Self {
        Self {
            meta: DatasetMeta {
                system: trial.config.clone(),
                trial: TrialMeta { index: trial.index },
                knowledge: KnowledgeMeta {
                    pathloss_error_db: perturbation.pathloss_error_db,
                    noise_error_std_dbm: perturbation.noise_error_std_dbm,
                    noise_power: trial.scenario.noise_power,
                    assumed_noise_power: trial.knowledge.assumed_noise_power,
                },
            },
            pilots: trial.pilots.clone(),
            signals: trial.signals.clone(),
            truth: trial.truth().to_vec(),
            effective_beta: trial.scenario.effective_beta.clone(),
            known_beta: trial.knowledge.effective_beta.clone(),
        }
    }

    pub fn knowledge(&self) -> CovKnowledge<f64> {
        CovKnowledge {
            beta: self.known_beta.clone(),
            noise_var: self.meta.knowledge.assumed_noise_power,
            pilots: self.pilots.clone(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let meta_path = dir.join("meta");
        let meta = toml::to_string(&self.meta)
            .map_err(|e| HarnessError::format(&meta_path, format!("cannot encode metadata: {e}")))?;
        std::fs::write(&meta_path, meta).map_err(|e| HarnessError::io(&meta_path, e))?;

        let (l, n) = (self.pilots.len(), self.pilots.users());
        let pilot_rows = (0..l).map(|r| (0..n).map(|c| self.pilots.column(c)[r]).collect::<Vec<_>>());
        write_complex_rows(&dir.join("pilots.csv"), pilot_rows)?;
        for (k, y) in self.signals.y.iter().enumerate() {
            write_complex_rows(
                &dir.join(format!("Y_{k}.csv")),
                (0..y.rows()).map(|r| y.row(r).to_vec()),
            )?;
        }

        let k_aps = self.effective_beta.aps();
        let beta_cols = (0..k_aps).map(|k| format!("beta_{k}"));
        let truth_header: Vec<String> = ["user".into(), "active".into()]
            .into_iter()
            .chain(beta_cols.clone())
            .collect();
        let truth_rows = (0..n).map(|u| {
            [u.to_string(), u8::from(self.truth[u]).to_string()]
                .into_iter()
                .chain(self.effective_beta.user_column(u).map(|b| b.to_string()))
                .collect()
        });
        write_table(&dir.join("truth.csv"), &truth_header, truth_rows)?;
        let known_header: Vec<String> = std::iter::once("user".to_string()).chain(beta_cols).collect();
        let known_rows = (0..n).map(|u| {
            std::iter::once(u.to_string())
                .chain(self.known_beta.user_column(u).map(|b| b.to_string()))
                .collect()
        });
        write_table(&dir.join("knowledge.csv"), &known_header, known_rows)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| HarnessError::io(&meta_path, e))?;
        let meta: DatasetMeta = toml::from_str(&text).map_err(|source| HarnessError::Toml {
            path: meta_path.clone(),
            source,
        })?;
        meta.system.validate()?;
        let sys = &meta.system;
        let (k_aps, m, n, l) = (sys.aps, sys.antennas, sys.users, sys.pilot_len);

        let pilots_path = dir.join("pilots.csv");
        let rows = read_complex_rows(&pilots_path, l, n)?;
        let columns = (0..n).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
        let pilots = PilotMatrix::from_columns(columns)?;

        let y = (0..k_aps)
            .map(|k| {
                let path = dir.join(format!("Y_{k}.csv"));
                let rows = read_complex_rows(&path, l, m)?;
                Ok(CMatrix::from_vec(l, m, rows.into_iter().flatten().collect())?)
            })
            .collect::<Result<Vec<_>>>()?;
        let signals = ReceivedSignals {
            y,
            noise_power: meta.knowledge.noise_power,
        };
        signals.check_against(&pilots)?;

        let truth_path = dir.join("truth.csv");
        let truth_rows = read_table(&truth_path, 2 + k_aps, n)?;
        let mut truth = Vec::with_capacity(n);
        let mut effective_beta = LinkMatrix::filled(k_aps, n, 0.0);
        for (u, row) in truth_rows.iter().enumerate() {
            check_user(&truth_path, u, &row[0])?;
            truth.push(match row[1].as_str() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(HarnessError::format(
                        &truth_path,
                        format!("activity bit `{other}` for user {u}"),
                    ))
                }
            });
            for k in 0..k_aps {
                effective_beta[(k, u)] = parse_number(&truth_path, &row[2 + k])?;
            }
        }
        let known_path = dir.join("knowledge.csv");
        let known_rows = read_table(&known_path, 1 + k_aps, n)?;
        let mut known_beta = LinkMatrix::filled(k_aps, n, 0.0);
        for (u, row) in known_rows.iter().enumerate() {
            check_user(&known_path, u, &row[0])?;
            for k in 0..k_aps {
                known_beta[(k, u)] = parse_number(&known_path, &row[1 + k])?;
            }
        }
        Ok(Self {
            meta,
            pilots,
            signals,
            truth,
            effective_beta,
            known_beta,
        })
    }
}

fn check_user(path: &Path, expected: usize, field: &str) -> Result<()> {
    if field.parse::<usize>().ok() == Some(expected) {
        Ok(())
    } else {
        Err(HarnessError::format(
            path,
            format!("row {expected} is labelled user `{field}`"),
        ))
    }
}

fn parse_number(path: &Path, field: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| HarnessError::format(path, format!("`{field}` is not a number")))
}

fn write_complex_rows(path: &PathBuf, rows: impl Iterator<Item = Vec<Complex>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| HarnessError::csv(path, e))?;
    for row in rows {
        let fields = row.iter().flat_map(|z| [z.re.to_string(), z.im.to_string()]);
        w.write_record(fields).map_err(|e| HarnessError::csv(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn read_complex_rows(path: &Path, rows: usize, cols: usize) -> Result<Vec<Vec<Complex>>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| HarnessError::csv(path, e))?;
    let mut out = Vec::with_capacity(rows);
    for record in r.records() {
        let record = record.map_err(|e| HarnessError::csv(path, e))?;
        if record.len() != 2 * cols {
            return Err(HarnessError::format(
                path,
                format!("row {} has {} fields, expected {}", out.len(), record.len(), 2 * cols),
            ));
        }
        let values = record
            .iter()
            .map(|f| parse_number(path, f))
            .collect::<Result<Vec<f64>>>()?;
        out.push(values.chunks(2).map(|p| Complex::new(p[0], p[1])).collect());
    }
    if out.len() != rows {
        return Err(HarnessError::format(
            path,
            format!("{} rows, expected {rows}", out.len()),
        ));
    }
    Ok(out)
}

fn write_table(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    w.write_record(header).map_err(|e| HarnessError::csv(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| HarnessError::csv(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn read_table(path: &Path, cols: usize, rows: usize) -> Result<Vec<Vec<String>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    let header = r.headers().map_err(|e| HarnessError::csv(path, e))?;
    if header.len() != cols {
        return Err(HarnessError::format(
            path,
            format!("{} columns, expected {cols}", header.len()),
        ));
    }
    let out: Vec<Vec<String>> = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| HarnessError::csv(path, e))?;
    if out.len() != rows {
        return Err(HarnessError::format(
            path,
            format!("{} rows, expected {rows}", out.len()),
        ));
    }
    Ok(out)
}
