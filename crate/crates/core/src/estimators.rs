//! Transported mean potential outcomes.
//!
//! For trial s, arm a, and target population 0, all three estimators
//! target `E[ E[Y | X, S=s, A=a] | R=0 ]`:
//!
//! - OM: average a fitted outcome regression over the target sample.
//! - IPW: weight trial outcomes by `1/e_a(X) * p_0(X)/p_s(X)`.
//! - AIPW: OM plus an inverse-odds-weighted residual correction.
//!
//! The pooled estimate for a hypothetical new trial is the unweighted
//! mean of the per-study estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipd::{ArmId, IpdDataset};
use crate::nuisance::{
    clip_probability, fit_multinomial, logistic_fit, LinearFit, MultinomialModel,
};

/// Estimation method for a transported mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Om,
    Ipw,
    Aipw,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Om => write!(f, "om"),
            Method::Ipw => write!(f, "ipw"),
            Method::Aipw => write!(f, "aipw"),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Method> {
        match s {
            "om" => Ok(Method::Om),
            "ipw" => Ok(Method::Ipw),
            "aipw" => Ok(Method::Aipw),
            other => Err(Error::InvalidConfig(format!(
                "unknown method `{other}` (expected om, ipw, or aipw)"
            ))),
        }
    }
}

/// How P(S=s | X) enters the IPW/AIPW weight ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyMembershipFit {
    /// Logistic fit of target-vs-trial-s on the union of the two
    /// samples; the fitted odds equal p_0/p_s on that union.
    #[default]
    Pairwise,
    /// One softmax model over study labels 0..m.
    Multinomial,
}

/// How P(A=a | X, S=s) is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreatmentModel {
    /// Empirical arm fraction within the trial (known randomization).
    #[default]
    Empirical,
    /// Logistic fit of arm membership on covariates within the trial.
    Fitted,
}

/// Estimator options; defaults match the displayed estimators.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// Normalize IPW weights by their sum instead of the target count.
    pub hajek: bool,
    /// Use the (g - Y) residual sign in the AIPW correction instead of
    /// the default (Y - g).
    pub flip_aipw_residual: bool,
    pub study_membership: StudyMembershipFit,
    pub treatment_model: TreatmentModel,
}

/// A transported mean for one (study, arm) cell.
#[derive(Debug, Clone, Serialize)]
pub struct TransportEstimate {
    pub study: usize,
    pub arm: String,
    pub method: Method,
    pub value: f64,
    pub n_target: usize,
    pub n_arm: usize,
    /// Number of probability predictions clipped while forming weights.
    pub clipped_weights: usize,
}

/// Mean of the per-study transported estimates: the estimate for a
/// new trial recruited from the target population.
#[derive(Debug, Clone, Serialize)]
pub struct PooledEstimate {
    pub arm: String,
    pub method: Method,
    pub value: f64,
    pub per_study: Vec<TransportEstimate>,
}

/// Row-index view of a dataset: the target sample plus one index list
/// per trial. Bootstrap replicates substitute resampled lists.
#[derive(Debug, Clone)]
pub struct RowSets<'a> {
    pub target: &'a [usize],
    pub studies: &'a [Vec<usize>],
}

impl<'a> RowSets<'a> {
    pub fn from_dataset(data: &'a IpdDataset) -> RowSets<'a> {
        RowSets {
            target: data.target_rows(),
            studies: data.all_study_rows(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PsiParts {
    pub value: f64,
    pub n_arm: usize,
    pub clipped: usize,
}

pub(crate) fn arm_subrows(data: &IpdDataset, rows: &[usize], arm: ArmId) -> Vec<usize> {
    rows.iter()
        .copied()
        .filter(|&i| data.records()[i].treatment == Some(arm))
        .collect()
}

/// OLS outcome fit on the given trial rows restricted to one arm.
pub(crate) fn fit_arm_outcome(
    data: &IpdDataset,
    trial_rows: &[usize],
    arm: ArmId,
) -> Result<(LinearFit, Vec<usize>)> {
    let arm_rows = arm_subrows(data, trial_rows, arm);
    let records = data.records();
    let x: Vec<&[f64]> = arm_rows
        .iter()
        .map(|&i| records[i].covariates.as_slice())
        .collect();
    let y: Vec<f64> = arm_rows
        .iter()
        .map(|&i| records[i].outcome.expect("trial record"))
        .collect();
    let fit = crate::nuisance::ols_fit(&x, &y)?;
    Ok((fit, arm_rows))
}

/// Mean prediction of `fit` over the target rows.
pub(crate) fn target_mean_prediction(
    data: &IpdDataset,
    target: &[usize],
    fit: &LinearFit,
) -> Result<f64> {
    let records = data.records();
    let mut acc = 0.0;
    for &i in target {
        acc += fit.predict(&records[i].covariates)?;
    }
    Ok(acc / target.len() as f64)
}

/// Inverse-probability weight `p_0(X)/p_s(X) / e_a(X)` for every
/// arm-a row of the trial, with clipped probabilities.
pub(crate) fn ipw_weights(
    data: &IpdDataset,
    study: usize,
    rows: &RowSets,
    arm: ArmId,
    cfg: &EstimatorConfig,
    shared_membership: Option<&MultinomialModel>,
) -> Result<(Vec<usize>, Vec<f64>, usize)> {
    let records = data.records();
    let trial_rows: &[usize] = &rows.studies[study - 1];
    let target = rows.target;
    let arm_rows = arm_subrows(data, trial_rows, arm);
    if arm_rows.is_empty() {
        return Err(Error::AllWeightsZero);
    }
    let mut clipped = 0usize;

    // Membership odds p_0(X)/p_s(X).
    let odds: Vec<f64> = match (cfg.study_membership, shared_membership) {
        (StudyMembershipFit::Multinomial, model) => {
            let fitted;
            let model = match model {
                Some(m) => m,
                None => {
                    fitted = fit_membership_multinomial_rows(data, rows)?;
                    &fitted
                }
            };
            arm_rows
                .iter()
                .map(|&i| {
                    let probs = model.predict(&records[i].covariates)?;
                    let p0 = clip_probability(probs[0], &mut clipped);
                    let ps = clip_probability(probs[study], &mut clipped);
                    Ok(p0 / ps)
                })
                .collect::<Result<Vec<f64>>>()?
        }
        (StudyMembershipFit::Pairwise, _) => {
            // Target (label 1) vs trial s (label 0) on their union;
            // the fitted odds p/(1-p) equal p_0/p_s there.
            let mut x: Vec<&[f64]> = Vec::with_capacity(target.len() + trial_rows.len());
            let mut y: Vec<f64> = Vec::with_capacity(x.capacity());
            for &i in target {
                x.push(&records[i].covariates);
                y.push(1.0);
            }
            for &i in trial_rows {
                x.push(&records[i].covariates);
                y.push(0.0);
            }
            let (beta, _) = logistic_fit(&x, &y)?;
            arm_rows
                .iter()
                .map(|&i| {
                    let cov = &records[i].covariates;
                    let mut eta = beta[0];
                    for (b, xi) in beta[1..].iter().zip(cov.iter()) {
                        eta += b * xi;
                    }
                    let p = clip_probability(1.0 / (1.0 + (-eta).exp()), &mut clipped);
                    p / (1.0 - p)
                })
                .collect()
        }
    };

    // Treatment probability e_a(X).
    let e: Vec<f64> = match cfg.treatment_model {
        TreatmentModel::Empirical => {
            let share = arm_rows.len() as f64 / trial_rows.len() as f64;
            let share = clip_probability(share, &mut clipped);
            vec![share; arm_rows.len()]
        }
        TreatmentModel::Fitted => {
            let x: Vec<&[f64]> = trial_rows
                .iter()
                .map(|&i| records[i].covariates.as_slice())
                .collect();
            let y: Vec<f64> = trial_rows
                .iter()
                .map(|&i| f64::from(records[i].treatment == Some(arm)))
                .collect();
            let (beta, _) = logistic_fit(&x, &y)?;
            arm_rows
                .iter()
                .map(|&i| {
                    let cov = &records[i].covariates;
                    let mut eta = beta[0];
                    for (b, xi) in beta[1..].iter().zip(cov.iter()) {
                        eta += b * xi;
                    }
                    clip_probability(1.0 / (1.0 + (-eta).exp()), &mut clipped)
                })
                .collect()
        }
    };

    let weights: Vec<f64> = odds.iter().zip(&e).map(|(w, e)| w / e).collect();
    Ok((arm_rows, weights, clipped))
}

/// Fit the multinomial membership model over resampled row sets.
pub(crate) fn fit_membership_multinomial_rows(
    data: &IpdDataset,
    rows: &RowSets,
) -> Result<MultinomialModel> {
    let records = data.records();
    let mut x: Vec<&[f64]> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for &i in rows.target {
        x.push(&records[i].covariates);
        labels.push(0);
    }
    for (s_idx, trial) in rows.studies.iter().enumerate() {
        for &i in trial {
            x.push(&records[i].covariates);
            labels.push(s_idx + 1);
        }
    }
    fit_multinomial(&x, &labels, rows.studies.len())
}

/// Transported mean for one study/arm over the given row sets.
pub(crate) fn psi_on(
    data: &IpdDataset,
    method: Method,
    study: usize,
    rows: &RowSets,
    arm: ArmId,
    cfg: &EstimatorConfig,
    shared_membership: Option<&MultinomialModel>,
) -> Result<PsiParts> {
    let trial_rows = &rows.studies[study - 1];
    let records = data.records();
    match method {
        Method::Om => {
            let (fit, arm_rows) = fit_arm_outcome(data, trial_rows, arm)?;
            let value = target_mean_prediction(data, rows.target, &fit)?;
            Ok(PsiParts {
                value,
                n_arm: arm_rows.len(),
                clipped: 0,
            })
        }
        Method::Ipw => {
            let (arm_rows, weights, clipped) =
                ipw_weights(data, study, rows, arm, cfg, shared_membership)?;
            let numerator: f64 = arm_rows
                .iter()
                .zip(&weights)
                .map(|(&i, w)| w * records[i].outcome.expect("trial record"))
                .sum();
            let denominator = if cfg.hajek {
                let total: f64 = weights.iter().sum();
                if total == 0.0 {
                    return Err(Error::AllWeightsZero);
                }
                total
            } else {
                rows.target.len() as f64
            };
            Ok(PsiParts {
                value: numerator / denominator,
                n_arm: arm_rows.len(),
                clipped,
            })
        }
        Method::Aipw => {
            let (fit, _) = fit_arm_outcome(data, trial_rows, arm)?;
            let om_value = target_mean_prediction(data, rows.target, &fit)?;
            let (arm_rows, weights, clipped) =
                ipw_weights(data, study, rows, arm, cfg, shared_membership)?;
            let mut correction = 0.0;
            for (&i, w) in arm_rows.iter().zip(&weights) {
                let rec = &records[i];
                let residual = rec.outcome.expect("trial record") - fit.predict(&rec.covariates)?;
                let residual = if cfg.flip_aipw_residual {
                    -residual
                } else {
                    residual
                };
                correction += w * residual;
            }
            correction /= rows.target.len() as f64;
            Ok(PsiParts {
                value: om_value + correction,
                n_arm: arm_rows.len(),
                clipped,
            })
        }
    }
}

/// Per-study transported means over the given row sets, in study
/// order. Errors carry the offending study and arm.
pub(crate) fn pooled_on(
    data: &IpdDataset,
    method: Method,
    rows: &RowSets,
    arm: ArmId,
    cfg: &EstimatorConfig,
) -> Result<Vec<PsiParts>> {
    let shared = match (method, cfg.study_membership) {
        (Method::Ipw | Method::Aipw, StudyMembershipFit::Multinomial) => {
            Some(fit_membership_multinomial_rows(data, rows)?)
        }
        _ => None,
    };
    let label = data.arm_label(arm).to_string();
    (1..=rows.studies.len())
        .map(|s| {
            psi_on(data, method, s, rows, arm, cfg, shared.as_ref())
                .map_err(|e| e.in_study_arm(s, &label))
        })
        .collect()
}

fn make_estimate(
    data: &IpdDataset,
    study: usize,
    arm_label: &str,
    method: Method,
    parts: PsiParts,
) -> TransportEstimate {
    TransportEstimate {
        study,
        arm: arm_label.to_string(),
        method,
        value: parts.value,
        n_target: data.n_target(),
        n_arm: parts.n_arm,
        clipped_weights: parts.clipped,
    }
}

/// Outcome-model (standardization) estimate of the transported mean.
pub fn estimate_psi_om(
    data: &IpdDataset,
    study: usize,
    arm: &str,
    cfg: &EstimatorConfig,
) -> Result<TransportEstimate> {
    estimate_psi(data, study, arm, Method::Om, cfg)
}

/// Inverse-probability-weighting estimate of the transported mean.
pub fn estimate_psi_ipw(
    data: &IpdDataset,
    study: usize,
    arm: &str,
    cfg: &EstimatorConfig,
) -> Result<TransportEstimate> {
    estimate_psi(data, study, arm, Method::Ipw, cfg)
}

/// Augmented (doubly robust) estimate of the transported mean.
pub fn estimate_psi_aipw(
    data: &IpdDataset,
    study: usize,
    arm: &str,
    cfg: &EstimatorConfig,
) -> Result<TransportEstimate> {
    estimate_psi(data, study, arm, Method::Aipw, cfg)
}

/// Transported mean for one study/arm by the requested method.
pub fn estimate_psi(
    data: &IpdDataset,
    study: usize,
    arm: &str,
    method: Method,
    cfg: &EstimatorConfig,
) -> Result<TransportEstimate> {
    data.study_rows(study)?;
    let arm_id = data.arm_id(arm)?;
    let rows = RowSets::from_dataset(data);
    let parts = psi_on(data, method, study, &rows, arm_id, cfg, None)
        .map_err(|e| e.in_study_arm(study, arm))?;
    Ok(make_estimate(data, study, arm, method, parts))
}

/// Pooled new-trial estimate: the exact arithmetic mean of the
/// per-study transported means.
pub fn estimate_pooled(
    data: &IpdDataset,
    arm: &str,
    method: Method,
    cfg: &EstimatorConfig,
) -> Result<PooledEstimate> {
    let arm_id = data.arm_id(arm)?;
    let rows = RowSets::from_dataset(data);
    let parts = pooled_on(data, method, &rows, arm_id, cfg)?;
    let per_study: Vec<TransportEstimate> = parts
        .into_iter()
        .enumerate()
        .map(|(idx, p)| make_estimate(data, idx + 1, arm, method, p))
        .collect();
    let value = per_study.iter().map(|e| e.value).sum::<f64>() / per_study.len() as f64;
    Ok(PooledEstimate {
        arm: arm.to_string(),
        method,
        value,
        per_study,
    })
}

/// Difference of pooled new-trial estimates between two arms.
pub fn estimate_contrast(
    data: &IpdDataset,
    arm_a: &str,
    arm_b: &str,
    method: Method,
    cfg: &EstimatorConfig,
) -> Result<f64> {
    let a = estimate_pooled(data, arm_a, method, cfg)?;
    let b = estimate_pooled(data, arm_b, method, cfg)?;
    Ok(a.value - b.value)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::ipd::{IpdDataset, IpdRecord};

    pub(crate) fn record(
        id: &str,
        study: usize,
        treatment: Option<usize>,
        outcome: Option<f64>,
        covariates: Vec<f64>,
    ) -> IpdRecord {
        IpdRecord {
            subject_id: id.into(),
            study,
            r_flag: study != 0,
            treatment: treatment.map(ArmId),
            outcome,
            covariates,
        }
    }

    /// Dataset whose trial outcomes are exactly 0.5 + 0.5 * sum(x).
    fn linear_dataset(target_xs: &[Vec<f64>]) -> IpdDataset {
        let mut records = Vec::new();
        for (i, x) in target_xs.iter().enumerate() {
            records.push(record(&format!("t{i}"), 0, None, None, x.clone()));
        }
        let trial_xs: Vec<Vec<f64>> = vec![
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 2.0, 3.0],
            vec![-1.0, 0.5, 0.25],
        ];
        for (i, x) in trial_xs.iter().enumerate() {
            let y = 0.5 + 0.5 * (x[0] + x[1] + x[2]);
            for (arm, tag) in [(0usize, "a"), (1usize, "b")] {
                records.push(record(
                    &format!("s1-{i}-{tag}"),
                    1,
                    Some(arm),
                    Some(y),
                    x.clone(),
                ));
            }
        }
        IpdDataset::from_records(records, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn om_averages_linear_predictor_over_target() {
        // Hand value: target {(0,0,0), (2,2,2)} under g(x) = 0.5 + 0.5*sum
        // gives (0.5 + 3.5) / 2 = 2.
        let ds = linear_dataset(&[vec![0.0, 0.0, 0.0], vec![2.0, 2.0, 2.0]]);
        let est = estimate_psi_om(&ds, 1, "a", &EstimatorConfig::default()).unwrap();
        assert!((est.value - 2.0).abs() < 1e-10, "value = {}", est.value);
        assert_eq!(est.n_target, 2);
        assert_eq!(est.n_arm, 6);
    }

    #[test]
    fn om_constant_outcome_returns_constant() {
        let mut records = vec![
            record("t0", 0, None, None, vec![5.0, -3.0, 1.0]),
            record("t1", 0, None, None, vec![0.0, 100.0, 2.0]),
        ];
        let trial_xs = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 2.0, 3.0],
        ];
        for (i, x) in trial_xs.iter().enumerate() {
            for (arm, tag) in [(0usize, "a"), (1usize, "b")] {
                records.push(record(
                    &format!("s1-{i}-{tag}"),
                    1,
                    Some(arm),
                    Some(7.25),
                    x.to_vec(),
                ));
            }
        }
        let ds = IpdDataset::from_records(records, vec!["a".into(), "b".into()]).unwrap();
        let est = estimate_psi_om(&ds, 1, "a", &EstimatorConfig::default()).unwrap();
        assert!((est.value - 7.25).abs() < 1e-9);
    }

    #[test]
    fn ipw_is_zero_when_outcomes_are_zero() {
        // Overlapping covariate supports so the membership fit is well
        // posed; the estimator is linear in Y, so all-zero outcomes
        // give exactly zero.
        let mut records = Vec::new();
        for i in 0..20 {
            records.push(record(
                &format!("t{i}"),
                0,
                None,
                None,
                vec![i as f64 * 0.1, ((i * 7) % 5) as f64 * 0.3],
            ));
        }
        for i in 0..20 {
            records.push(record(
                &format!("s1-{i}"),
                1,
                Some(i % 2),
                Some(0.0),
                vec![i as f64 * 0.11, ((i * 3) % 5) as f64 * 0.29],
            ));
        }
        let ds = IpdDataset::from_records(records, vec!["a".into(), "b".into()]).unwrap();
        let est = estimate_psi_ipw(&ds, 1, "a", &EstimatorConfig::default()).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn aipw_equals_om_when_residuals_vanish() {
        let ds = linear_dataset(&[vec![0.5, 0.5, 0.5], vec![1.0, 0.0, 2.0]]);
        let cfg = EstimatorConfig::default();
        let om = estimate_psi_om(&ds, 1, "a", &cfg).unwrap();
        let aipw = estimate_psi_aipw(&ds, 1, "a", &cfg).unwrap();
        assert!(
            (om.value - aipw.value).abs() < 1e-9,
            "om = {}, aipw = {}",
            om.value,
            aipw.value
        );
    }

    /// Arm-a rows built so the OLS fit is exactly zero: orthogonal
    /// design with outcomes orthogonal to every design column.
    fn zero_fit_dataset() -> IpdDataset {
        let xs = [
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ];
        let ys = [1.0, 1.0, -1.0, -1.0, 0.0, 0.0];
        let mut records = Vec::new();
        for i in 0..10 {
            records.push(record(
                &format!("t{i}"),
                0,
                None,
                None,
                vec![0.1 * i as f64, 0.2, -0.1],
            ));
        }
        for (i, (x, y)) in xs.iter().zip(ys).enumerate() {
            records.push(record(&format!("s1a{i}"), 1, Some(0), Some(y), x.to_vec()));
        }
        for (i, x) in xs.iter().enumerate() {
            records.push(record(
                &format!("s1b{i}"),
                1,
                Some(1),
                Some(1.0),
                x.to_vec(),
            ));
        }
        IpdDataset::from_records(records, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn aipw_reduces_to_ipw_when_fit_is_zero() {
        let ds = zero_fit_dataset();
        let cfg = EstimatorConfig::default();
        let om = estimate_psi_om(&ds, 1, "a", &cfg).unwrap();
        assert!(om.value.abs() < 1e-12, "fit not zero: {}", om.value);
        let ipw = estimate_psi_ipw(&ds, 1, "a", &cfg).unwrap();
        let aipw = estimate_psi_aipw(&ds, 1, "a", &cfg).unwrap();
        assert!((aipw.value - ipw.value).abs() < 1e-12);
    }

    #[test]
    fn aipw_flip_negates_correction() {
        let ds = zero_fit_dataset();
        let cfg = EstimatorConfig::default();
        let flipped = EstimatorConfig {
            flip_aipw_residual: true,
            ..cfg
        };
        let om = estimate_psi_om(&ds, 1, "a", &cfg).unwrap().value;
        let a = estimate_psi_aipw(&ds, 1, "a", &cfg).unwrap().value;
        let b = estimate_psi_aipw(&ds, 1, "a", &flipped).unwrap().value;
        assert!(((a - om) + (b - om)).abs() < 1e-12);
    }

    /// Three trials whose constant outcomes pin the per-study values.
    fn constant_trials(values: &[f64]) -> IpdDataset {
        let mut records = Vec::new();
        for i in 0..4 {
            records.push(record(
                &format!("t{i}"),
                0,
                None,
                None,
                vec![i as f64, 1.0, -1.0],
            ));
        }
        let xs = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
        ];
        for (s, &v) in values.iter().enumerate() {
            for (i, x) in xs.iter().enumerate() {
                for (arm, tag) in [(0usize, "a"), (1usize, "b")] {
                    records.push(record(
                        &format!("s{}-{i}-{tag}", s + 1),
                        s + 1,
                        Some(arm),
                        Some(if arm == 0 { v } else { v - 0.5 }),
                        x.to_vec(),
                    ));
                }
            }
        }
        IpdDataset::from_records(records, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn pooled_is_exact_mean_of_per_study() {
        let ds = constant_trials(&[1.0, 2.0, 3.0]);
        let pooled = estimate_pooled(&ds, "a", Method::Om, &EstimatorConfig::default()).unwrap();
        assert_eq!(pooled.per_study.len(), 3);
        let mean = pooled.per_study.iter().map(|e| e.value).sum::<f64>() / 3.0;
        assert_eq!(pooled.value, mean);
        assert!((pooled.value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn pooled_single_study_equals_psi() {
        let ds = constant_trials(&[4.5]);
        let cfg = EstimatorConfig::default();
        let pooled = estimate_pooled(&ds, "a", Method::Om, &cfg).unwrap();
        let single = estimate_psi_om(&ds, 1, "a", &cfg).unwrap();
        assert_eq!(pooled.value, single.value);
    }

    #[test]
    fn contrast_of_same_arm_is_zero() {
        let ds = constant_trials(&[1.0, 2.0]);
        let cfg = EstimatorConfig::default();
        let c = estimate_contrast(&ds, "a", "a", Method::Om, &cfg).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn contrast_subtracts_pooled_values() {
        // Arm b outcomes are arm a minus 0.5 in every trial.
        let ds = constant_trials(&[2.5, 2.5]);
        let cfg = EstimatorConfig::default();
        let c = estimate_contrast(&ds, "a", "b", Method::Om, &cfg).unwrap();
        assert!((c - 0.5).abs() < 1e-9);
    }

    #[test]
    fn unknown_arm_is_rejected() {
        let ds = constant_trials(&[1.0, 2.0]);
        let cfg = EstimatorConfig::default();
        assert!(matches!(
            estimate_contrast(&ds, "a", "zzz", Method::Om, &cfg),
            Err(Error::UnknownArm { .. })
        ));
    }

    #[test]
    fn om_is_invariant_to_row_permutation() {
        let ds = constant_trials(&[1.0, 2.0, 3.0]);
        let cfg = EstimatorConfig::default();
        let baseline = estimate_psi_om(&ds, 2, "a", &cfg).unwrap().value;
        // Rebuild with records reversed.
        let mut records = ds.records().to_vec();
        records.reverse();
        let labels = ds.arm_labels().to_vec();
        let shuffled = IpdDataset::from_records(records, labels).unwrap();
        let permuted = estimate_psi_om(&shuffled, 2, "a", &cfg).unwrap().value;
        assert!((baseline - permuted).abs() < 1e-12);
    }

    #[test]
    fn study_errors_carry_context() {
        // Trial 2 has collinear covariates; OM estimation must name it.
        let mut records = Vec::new();
        for i in 0..4 {
            records.push(record(&format!("t{i}"), 0, None, None, vec![i as f64, 1.0]));
        }
        let xs = [[0.0, 0.0], [1.0, 0.5], [2.0, 1.3], [3.0, 0.1], [0.5, 0.9]];
        for (i, x) in xs.iter().enumerate() {
            for arm in [0usize, 1] {
                records.push(record(
                    &format!("s1-{i}-{arm}"),
                    1,
                    Some(arm),
                    Some(i as f64),
                    x.to_vec(),
                ));
            }
        }
        for i in 0..5 {
            for arm in [0usize, 1] {
                let x = i as f64;
                records.push(record(
                    &format!("s2-{i}-{arm}"),
                    2,
                    Some(arm),
                    Some(i as f64),
                    vec![x, 2.0 * x],
                ));
            }
        }
        let ds = IpdDataset::from_records(records, vec!["a".into(), "b".into()]).unwrap();
        match estimate_pooled(&ds, "a", Method::Om, &EstimatorConfig::default()) {
            Err(Error::StudyArm { study: 2, .. }) => {}
            other => panic!("expected StudyArm error for study 2, got {other:?}"),
        }
    }
}
