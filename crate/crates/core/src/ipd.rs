//! Individual-participant data: combined rows from a collection of
//! trials (study labels 1..m) and a covariate-only sample from the
//! target population (study label 0).
//!
//! A dataset is immutable once built; estimators share it freely
//! across threads.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense index of a treatment label in the dataset's arm registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArmId(pub usize);

/// One subject: a trial participant (treatment and outcome observed)
/// or a member of the target sample (covariates only).
#[derive(Debug, Clone, PartialEq)]
pub struct IpdRecord {
    pub subject_id: String,
    /// Study label; 0 is the target population.
    pub study: usize,
    /// True for trial participants, false for target members.
    pub r_flag: bool,
    pub treatment: Option<ArmId>,
    pub outcome: Option<f64>,
    pub covariates: Vec<f64>,
}

/// Validated dataset with index lists for fast subsetting.
#[derive(Debug, Clone)]
pub struct IpdDataset {
    records: Vec<IpdRecord>,
    arms: Vec<String>,
    m: usize,
    d: usize,
    n_per_study: Vec<usize>,
    target_rows: Vec<usize>,
    study_rows: Vec<Vec<usize>>,
    arm_rows: Vec<Vec<Vec<usize>>>,
}

impl PartialEq for IpdDataset {
    fn eq(&self, other: &Self) -> bool {
        if self.records.len() != other.records.len() || self.m != other.m || self.d != other.d {
            return false;
        }
        self.records.iter().zip(&other.records).all(|(a, b)| {
            let arm_a = a.treatment.map(|ArmId(i)| self.arms[i].as_str());
            let arm_b = b.treatment.map(|ArmId(i)| other.arms[i].as_str());
            a.subject_id == b.subject_id
                && a.study == b.study
                && a.r_flag == b.r_flag
                && a.outcome == b.outcome
                && a.covariates == b.covariates
                && arm_a == arm_b
        })
    }
}

impl IpdDataset {
    /// Validate records and build the dataset. Records keep their
    /// given order; all row indices below refer to that order.
    pub fn from_records(records: Vec<IpdRecord>, arms: Vec<String>) -> Result<IpdDataset> {
        let d = match records.first() {
            Some(r) => r.covariates.len(),
            None => return Err(Error::EmptyTarget),
        };
        let mut m = 0usize;
        for (i, rec) in records.iter().enumerate() {
            let row = i + 1;
            if rec.covariates.len() != d {
                return Err(Error::InconsistentDimension {
                    row,
                    expected: d,
                    found: rec.covariates.len(),
                });
            }
            for (j, x) in rec.covariates.iter().enumerate() {
                if !x.is_finite() {
                    return Err(Error::InvalidField {
                        row,
                        column: format!("x{}", j + 1),
                        message: "covariate is not a finite number".into(),
                    });
                }
            }
            if rec.study == 0 {
                if rec.r_flag {
                    return Err(Error::InconsistentRFlag { row });
                }
                if rec.treatment.is_some() {
                    return Err(Error::TargetWithOutcome {
                        row,
                        field: "a treatment".into(),
                    });
                }
                if rec.outcome.is_some() {
                    return Err(Error::TargetWithOutcome {
                        row,
                        field: "an outcome".into(),
                    });
                }
            } else {
                if !rec.r_flag {
                    return Err(Error::InconsistentRFlag { row });
                }
                if rec.treatment.is_none() {
                    return Err(Error::TrialMissingField {
                        row,
                        field: "treatment".into(),
                    });
                }
                match rec.outcome {
                    None => {
                        return Err(Error::TrialMissingField {
                            row,
                            field: "outcome".into(),
                        })
                    }
                    Some(y) if !y.is_finite() => {
                        return Err(Error::InvalidField {
                            row,
                            column: "outcome".into(),
                            message: "outcome is not a finite number".into(),
                        })
                    }
                    _ => {}
                }
                m = m.max(rec.study);
            }
        }
        if m == 0 {
            return Err(Error::EmptyStudy { study: 1 });
        }

        let mut n_per_study = vec![0usize; m + 1];
        let mut target_rows = Vec::new();
        let mut study_rows = vec![Vec::new(); m];
        let mut arm_rows = vec![vec![Vec::new(); arms.len()]; m];
        for (i, rec) in records.iter().enumerate() {
            n_per_study[rec.study] += 1;
            if rec.study == 0 {
                target_rows.push(i);
            } else {
                study_rows[rec.study - 1].push(i);
                let ArmId(a) = rec.treatment.expect("validated above");
                if a >= arms.len() {
                    return Err(Error::UnknownArm {
                        arm: format!("#{a}"),
                    });
                }
                arm_rows[rec.study - 1][a].push(i);
            }
        }
        if target_rows.is_empty() {
            return Err(Error::EmptyTarget);
        }
        for (s, n) in n_per_study.iter().enumerate().skip(1) {
            if *n < 2 {
                return Err(Error::EmptyStudy { study: s });
            }
        }
        // Every arm observed anywhere must be present in every trial
        // (positivity proxy; the estimand is undefined otherwise).
        for s in 1..=m {
            for (a, label) in arms.iter().enumerate() {
                if arm_rows[s - 1][a].is_empty() {
                    return Err(Error::MissingArm {
                        study: s,
                        arm: label.clone(),
                    });
                }
            }
        }

        Ok(IpdDataset {
            records,
            arms,
            m,
            d,
            n_per_study,
            target_rows,
            study_rows,
            arm_rows,
        })
    }

    pub fn records(&self) -> &[IpdRecord] {
        &self.records
    }

    /// Number of trials.
    pub fn num_studies(&self) -> usize {
        self.m
    }

    /// Covariate dimension.
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Total record count across target and trials.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_target(&self) -> usize {
        self.target_rows.len()
    }

    pub fn n_per_study(&self) -> &[usize] {
        &self.n_per_study
    }

    /// Treatment labels in registry order.
    pub fn arm_labels(&self) -> &[String] {
        &self.arms
    }

    pub fn arm_id(&self, label: &str) -> Result<ArmId> {
        self.arms
            .iter()
            .position(|a| a == label)
            .map(ArmId)
            .ok_or_else(|| Error::UnknownArm { arm: label.into() })
    }

    pub fn arm_label(&self, arm: ArmId) -> &str {
        &self.arms[arm.0]
    }

    /// Row indices of the target sample, in record order.
    pub fn target_rows(&self) -> &[usize] {
        &self.target_rows
    }

    /// Row indices of trial `study` (all arms), in record order.
    pub fn study_rows(&self, study: usize) -> Result<&[usize]> {
        if study == 0 || study > self.m {
            return Err(Error::UnknownStudy { study });
        }
        Ok(&self.study_rows[study - 1])
    }

    /// Row-index lists for all trials, indexed by study - 1.
    pub fn all_study_rows(&self) -> &[Vec<usize>] {
        &self.study_rows
    }

    /// Row indices of trial `study` restricted to `arm`.
    pub fn arm_rows(&self, study: usize, arm: ArmId) -> Result<&[usize]> {
        if study == 0 || study > self.m {
            return Err(Error::UnknownStudy { study });
        }
        Ok(&self.arm_rows[study - 1][arm.0])
    }

    /// Records of trial `study` in `arm`, plus the target sample.
    /// Both sides preserve record order and are disjoint by label.
    pub fn split(&self, study: usize, arm: &str) -> Result<(Vec<&IpdRecord>, Vec<&IpdRecord>)> {
        let arm = self.arm_id(arm)?;
        let arm_side = self
            .arm_rows(study, arm)?
            .iter()
            .map(|&i| &self.records[i])
            .collect();
        let target_side = self.target_rows.iter().map(|&i| &self.records[i]).collect();
        Ok((arm_side, target_side))
    }

    /// Write the dataset back out in the canonical CSV schema.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = vec![
            "subject_id".to_string(),
            "study".into(),
            "r".into(),
            "treatment".into(),
            "outcome".into(),
        ];
        for j in 1..=self.d {
            header.push(format!("x{j}"));
        }
        writer.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for rec in &self.records {
            row.clear();
            row.push(rec.subject_id.clone());
            row.push(rec.study.to_string());
            row.push(u8::from(rec.r_flag).to_string());
            row.push(
                rec.treatment
                    .map(|a| self.arms[a.0].clone())
                    .unwrap_or_default(),
            );
            row.push(rec.outcome.map(|y| y.to_string()).unwrap_or_default());
            for x in &rec.covariates {
                row.push(x.to_string());
            }
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Column mapping for CSV ingestion. A JSON sidecar with these fields
/// renames columns; anything omitted keeps its default name.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub subject_id: String,
    pub study: String,
    pub r: String,
    pub treatment: String,
    pub outcome: String,
    /// Covariate column names in order. Empty means autodetect
    /// `x1..xd` from the header.
    pub covariates: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            subject_id: "subject_id".into(),
            study: "study".into(),
            r: "r".into(),
            treatment: "treatment".into(),
            outcome: "outcome".into(),
            covariates: Vec::new(),
        }
    }
}

impl CsvSchema {
    pub fn from_json_file(path: &Path) -> Result<CsvSchema> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Load and validate an IPD file. Missing treatment/outcome cells are
/// expected (and required) on target rows.
pub fn load_ipd(path: &Path, schema: Option<&CsvSchema>) -> Result<IpdDataset> {
    let default_schema = CsvSchema::default();
    let schema = schema.unwrap_or(&default_schema);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();

    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn { name: name.into() })
    };
    let c_id = col(&schema.subject_id)?;
    let c_study = col(&schema.study)?;
    let c_r = col(&schema.r)?;
    let c_treat = col(&schema.treatment)?;
    let c_outcome = col(&schema.outcome)?;

    let c_covs: Vec<(String, usize)> = if schema.covariates.is_empty() {
        // Autodetect x1, x2, ... contiguously from 1.
        let mut found = Vec::new();
        for j in 1.. {
            let name = format!("x{j}");
            match headers.iter().position(|h| h == &name) {
                Some(idx) => found.push((name, idx)),
                None => break,
            }
        }
        if found.is_empty() {
            return Err(Error::MissingColumn { name: "x1".into() });
        }
        found
    } else {
        schema
            .covariates
            .iter()
            .map(|name| col(name).map(|idx| (name.clone(), idx)))
            .collect::<Result<Vec<_>>>()?
    };

    let mut arms: Vec<String> = Vec::new();
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let get = |idx: usize| row.get(idx).unwrap_or("").trim();

        let study: usize = get(c_study).parse().map_err(|_| Error::InvalidField {
            row: row_no,
            column: schema.study.clone(),
            message: format!("expected a non-negative integer, got `{}`", get(c_study)),
        })?;
        let r_flag = match get(c_r) {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::InvalidField {
                    row: row_no,
                    column: schema.r.clone(),
                    message: format!("expected 0 or 1, got `{other}`"),
                })
            }
        };
        let treatment = match get(c_treat) {
            "" => None,
            label => {
                let id = match arms.iter().position(|a| a == label) {
                    Some(idx) => idx,
                    None => {
                        arms.push(label.to_string());
                        arms.len() - 1
                    }
                };
                Some(ArmId(id))
            }
        };
        let outcome = match get(c_outcome) {
            "" => None,
            text => Some(text.parse::<f64>().map_err(|_| Error::InvalidField {
                row: row_no,
                column: schema.outcome.clone(),
                message: format!("expected a number, got `{text}`"),
            })?),
        };
        let covariates = c_covs
            .iter()
            .map(|(name, idx)| {
                get(*idx).parse::<f64>().map_err(|_| Error::InvalidField {
                    row: row_no,
                    column: name.clone(),
                    message: format!("expected a number, got `{}`", get(*idx)),
                })
            })
            .collect::<Result<Vec<f64>>>()?;

        records.push(IpdRecord {
            subject_id: get(c_id).to_string(),
            study,
            r_flag,
            treatment,
            outcome,
            covariates,
        });
    }
    IpdDataset::from_records(records, arms)
}

/// Treatment labels observed across the dataset, sorted.
pub fn observed_arms(dataset: &IpdDataset) -> BTreeSet<&str> {
    dataset.arm_labels().iter().map(|s| s.as_str()).collect()
}
