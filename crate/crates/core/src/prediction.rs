//! Prediction intervals for the mean potential outcome in a new,
//! unobserved trial recruited from the target population.
//!
//! Three procedures:
//! - a t interval centered at the pooled estimate with scale
//!   `sqrt(gamma_hat^2 + Var(pooled))` and m - 2 degrees of freedom;
//! - a leave-one-out simple bootstrap that re-estimates everything on
//!   resampled data in each replicate;
//! - a wild bootstrap that replaces each resample-and-re-estimate with
//!   a multiplier perturbation of the estimate through its influence
//!   function (outcome-model estimator only).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dist::{normal_quantile, t_quantile};
use crate::error::{Error, Result};
use crate::estimators::{
    fit_arm_outcome, psi_on, EstimatorConfig, Method, PooledEstimate, RowSets,
};
use crate::exec;
use crate::heterogeneity::HeterogeneityEstimate;
use crate::ipd::{ArmId, IpdDataset};
use crate::linalg::{solve_spd, Mat};
use crate::rng::{resample, stream, DOMAIN_PSI_BOOT, DOMAIN_SIMPLE_BOOT, DOMAIN_WILD_BOOT};

/// Interval procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntervalMethod {
    #[serde(rename = "mom")]
    Mom,
    #[serde(rename = "simple")]
    SimpleBootstrap,
    #[serde(rename = "wild")]
    WildBootstrap,
}

impl std::fmt::Display for IntervalMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IntervalMethod::Mom => write!(f, "mom"),
            IntervalMethod::SimpleBootstrap => write!(f, "simple"),
            IntervalMethod::WildBootstrap => write!(f, "wild"),
        }
    }
}

/// How an interval is read off a set of bootstrap draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Construction {
    Quantile,
    Normal,
}

impl std::fmt::Display for Construction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Construction::Quantile => write!(f, "quantile"),
            Construction::Normal => write!(f, "normal"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictionInterval {
    pub center: f64,
    pub lower: f64,
    pub upper: f64,
    pub method: IntervalMethod,
    pub construction: Construction,
    pub level: f64,
    pub b_reps: usize,
}

/// Bootstrap replicate values, with failed replicates counted rather
/// than recorded.
#[derive(Debug, Clone, Serialize)]
pub struct BootstrapDraws {
    pub values: Vec<f64>,
    pub seed: u64,
    pub failures: usize,
}

impl BootstrapDraws {
    fn from_outcomes(outcomes: Vec<Result<f64>>, seed: u64) -> Result<BootstrapDraws> {
        let total = outcomes.len();
        let mut values = Vec::with_capacity(total);
        let mut failures = 0usize;
        for outcome in outcomes {
            match outcome {
                Ok(v) if v.is_finite() => values.push(v),
                _ => failures += 1,
            }
        }
        if failures * 10 > total {
            return Err(Error::TooManyFailures { failures, total });
        }
        Ok(BootstrapDraws {
            values,
            seed,
            failures,
        })
    }
}

/// Multiplier law for the wild bootstrap. `Zero` turns every
/// perturbation off; it exists to validate the machinery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultiplierLaw {
    #[default]
    Normal,
    Rademacher,
    Zero,
}

impl MultiplierLaw {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            MultiplierLaw::Normal => rng.sample(StandardNormal),
            MultiplierLaw::Rademacher => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            MultiplierLaw::Zero => 0.0,
        }
    }
}

/// t interval for the new-trial mean:
/// `center +/- t_{m-2} * sqrt(gamma_hat^2 + var_pooled)`.
pub fn mom_interval(
    pooled: &PooledEstimate,
    gamma: &HeterogeneityEstimate,
    var_pooled: f64,
    level: f64,
) -> Result<PredictionInterval> {
    let m = pooled.per_study.len();
    if m < 3 {
        return Err(Error::TooFewStudies {
            found: m,
            required: 3,
        });
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "level must be in (0,1), got {level}"
        )));
    }
    if var_pooled < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "var_pooled must be nonnegative, got {var_pooled}"
        )));
    }
    let t = t_quantile(0.5 + level / 2.0, (m - 2) as f64);
    let half = t * (gamma.gamma_hat_sq + var_pooled).sqrt();
    Ok(PredictionInterval {
        center: pooled.value,
        lower: pooled.value - half,
        upper: pooled.value + half,
        method: IntervalMethod::Mom,
        construction: Construction::Normal,
        level,
        b_reps: 0,
    })
}

/// Row sets for one bootstrap step: the target is always resampled,
/// trials only where `resample_study` says so (the rest keep their
/// original rows, which only matters for shared membership fits).
fn step_rows<R: Rng>(
    data: &IpdDataset,
    rng: &mut R,
    resample_study: impl Fn(usize) -> bool,
) -> (Vec<Vec<usize>>, Vec<usize>) {
    let studies: Vec<Vec<usize>> = (1..=data.num_studies())
        .map(|s| {
            let rows = data.study_rows(s).expect("validated study");
            if resample_study(s) {
                resample(rng, rows, rows.len())
            } else {
                rows.to_vec()
            }
        })
        .collect();
    let target = resample(rng, data.target_rows(), data.n_target());
    (studies, target)
}

#[allow(clippy::too_many_arguments)]
fn step_psi(
    data: &IpdDataset,
    method: Method,
    study: usize,
    studies: &[Vec<usize>],
    target: &[usize],
    arm: ArmId,
    cfg: &EstimatorConfig,
    shared: Option<&crate::nuisance::MultinomialModel>,
) -> Result<f64> {
    let rows = RowSets { target, studies };
    Ok(psi_on(data, method, study, &rows, arm, cfg, shared)?.value)
}

fn step_membership(
    data: &IpdDataset,
    method: Method,
    cfg: &EstimatorConfig,
    studies: &[Vec<usize>],
    target: &[usize],
) -> Result<Option<crate::nuisance::MultinomialModel>> {
    use crate::estimators::StudyMembershipFit;
    match (method, cfg.study_membership) {
        (Method::Ipw | Method::Aipw, StudyMembershipFit::Multinomial) => {
            let rows = RowSets { target, studies };
            Ok(Some(crate::estimators::fit_membership_multinomial_rows(
                data, &rows,
            )?))
        }
        _ => Ok(None),
    }
}

#[derive(Debug, Clone, Copy)]
#[allow(dead_code)]
pub(crate) struct SimpleTrace {
    pub s_b: usize,
    /// Re-estimate of the held-out study (step 2).
    pub mu_holdout: f64,
    /// Leave-one-out mean over the other studies (step 3).
    pub mu_rest: f64,
    /// Fresh full-data pooled estimate (step 5).
    pub mu_full: f64,
    pub value: f64,
}

pub(crate) fn simple_replicate(
    data: &IpdDataset,
    arm: ArmId,
    method: Method,
    cfg: &EstimatorConfig,
    seed: u64,
    b: usize,
) -> Result<SimpleTrace> {
    let m = data.num_studies();
    let mut rng = stream(seed, &[DOMAIN_SIMPLE_BOOT, b as u64]);

    // (1) Hold out one study uniformly at random.
    let s_b = rng.gen_range(1..=m);

    // (2) Resample the held-out trial and the target; re-estimate it.
    let (studies, target) = step_rows(data, &mut rng, |s| s == s_b);
    let shared = step_membership(data, method, cfg, &studies, &target)?;
    let mu_holdout = step_psi(
        data,
        method,
        s_b,
        &studies,
        &target,
        arm,
        cfg,
        shared.as_ref(),
    )?;

    // (3) Resample the remaining trials and a fresh target sample;
    // average their re-estimates.
    let (studies, target) = step_rows(data, &mut rng, |s| s != s_b);
    let shared = step_membership(data, method, cfg, &studies, &target)?;
    let mut acc = 0.0;
    for s in 1..=m {
        if s != s_b {
            acc += step_psi(
                data,
                method,
                s,
                &studies,
                &target,
                arm,
                cfg,
                shared.as_ref(),
            )?;
        }
    }
    let mu_rest = acc / (m - 1) as f64;

    // (4) Prediction error for the held-out study.
    let delta = mu_rest - mu_holdout;

    // (5) Fresh resample of everything; shift the pooled estimate by
    // the prediction error.
    let (studies, target) = step_rows(data, &mut rng, |_| true);
    let shared = step_membership(data, method, cfg, &studies, &target)?;
    let mut acc = 0.0;
    for s in 1..=m {
        acc += step_psi(
            data,
            method,
            s,
            &studies,
            &target,
            arm,
            cfg,
            shared.as_ref(),
        )?;
    }
    let mu_full = acc / m as f64;

    Ok(SimpleTrace {
        s_b,
        mu_holdout,
        mu_rest,
        mu_full,
        value: mu_full - delta,
    })
}

/// Leave-one-out simple bootstrap: B replicates of the five-step
/// procedure, each on its own random stream.
pub fn simple_bootstrap_predict(
    data: &IpdDataset,
    arm: &str,
    method: Method,
    b: usize,
    seed: u64,
    cfg: &EstimatorConfig,
) -> Result<BootstrapDraws> {
    if b < 1 {
        return Err(Error::InvalidConfig("need at least 1 replicate".into()));
    }
    if data.num_studies() < 2 {
        return Err(Error::TooFewStudies {
            found: data.num_studies(),
            required: 2,
        });
    }
    let arm_id = data.arm_id(arm)?;
    let outcomes = exec::map_indexed(b, |i| {
        simple_replicate(data, arm_id, method, cfg, seed, i).map(|t| t.value)
    });
    BootstrapDraws::from_outcomes(outcomes, seed)
}

/// Influence-function pieces for the OM transported mean of one study.
#[derive(Debug, Clone)]
pub(crate) struct IfPack {
    pub psi: f64,
    /// Contributions for target rows, aligned with `data.target_rows()`.
    pub target_contrib: Vec<f64>,
    /// Arm-a rows of the trial and their contributions.
    pub trial_rows: Vec<usize>,
    pub trial_contrib: Vec<f64>,
}

/// Build the influence contributions of the OM estimate for (study,
/// arm). Target rows carry the centered prediction, scaled by n/n0;
/// trial rows carry the OLS-projected residual term, scaled by n/n_sa,
/// so both pieces are exactly mean zero.
pub(crate) fn if_pack(data: &IpdDataset, study: usize, arm: ArmId) -> Result<IfPack> {
    let trial_rows_all = data.study_rows(study)?;
    let (fit, arm_rows) = fit_arm_outcome(data, trial_rows_all, arm)?;
    let records = data.records();
    let target = data.target_rows();
    let n = data.len() as f64;
    let n0 = target.len() as f64;
    let n_sa = arm_rows.len() as f64;
    let d = data.dim();
    let p = d + 1;

    // psi and the centered target part.
    let preds: Vec<f64> = target
        .iter()
        .map(|&i| fit.predict(&records[i].covariates))
        .collect::<Result<Vec<f64>>>()?;
    let psi = preds.iter().sum::<f64>() / n0;
    let target_contrib: Vec<f64> = preds.iter().map(|g| (n / n0) * (g - psi)).collect();

    // Mean design vector of the target (with intercept).
    let mut xbar = vec![0.0; p];
    xbar[0] = 1.0;
    for &i in target {
        for (j, x) in records[i].covariates.iter().enumerate() {
            xbar[j + 1] += x;
        }
    }
    for v in xbar[1..].iter_mut() {
        *v /= n0;
    }

    // Gram matrix of the arm design, normalized by n_sa.
    let mut gram = Mat::zeros(p, p);
    for &i in &arm_rows {
        let cov = &records[i].covariates;
        for j in 0..p {
            let xj = if j == 0 { 1.0 } else { cov[j - 1] };
            for k in j..p {
                let xk = if k == 0 { 1.0 } else { cov[k - 1] };
                gram[(j, k)] += xj * xk;
            }
        }
    }
    for j in 0..p {
        for k in j..p {
            let v = gram[(j, k)] / n_sa;
            gram[(j, k)] = v;
            gram[(k, j)] = v;
        }
    }
    let q = solve_spd(&gram, &xbar)?;

    let trial_contrib: Vec<f64> = arm_rows
        .iter()
        .map(|&i| {
            let rec = &records[i];
            let mut h = q[0];
            for (qj, x) in q[1..].iter().zip(&rec.covariates) {
                h += qj * x;
            }
            let residual = rec.outcome.expect("trial record") - fit.predict(&rec.covariates)?;
            Ok((n / n_sa) * h * residual)
        })
        .collect::<Result<Vec<f64>>>()?;

    Ok(IfPack {
        psi,
        target_contrib,
        trial_rows: arm_rows,
        trial_contrib,
    })
}

/// Influence contributions of every record to the OM transported mean
/// for (study, arm); rows outside the target and outside the trial's
/// arm receive zero.
pub fn if_contributions(data: &IpdDataset, study: usize, arm: &str) -> Result<Vec<f64>> {
    let arm_id = data.arm_id(arm)?;
    let pack = if_pack(data, study, arm_id).map_err(|e| e.in_study_arm(study, arm))?;
    let mut out = vec![0.0; data.len()];
    for (&i, &v) in data.target_rows().iter().zip(&pack.target_contrib) {
        out[i] = v;
    }
    for (&i, &v) in pack.trial_rows.iter().zip(&pack.trial_contrib) {
        out[i] = v;
    }
    Ok(out)
}

/// One multiplier draw per record with a nonzero contribution, in a
/// fixed order: target rows first, then each trial's arm rows.
struct Multipliers {
    target: Vec<f64>,
    trials: Vec<Vec<f64>>,
}

fn draw_multipliers<R: Rng>(
    rng: &mut R,
    packs: &[IfPack],
    n0: usize,
    law: MultiplierLaw,
) -> Multipliers {
    let target = (0..n0).map(|_| law.sample(rng)).collect();
    let trials = packs
        .iter()
        .map(|p| (0..p.trial_rows.len()).map(|_| law.sample(rng)).collect())
        .collect();
    Multipliers { target, trials }
}

fn perturb(pack: &IfPack, xi: &Multipliers, study_idx: usize, n: f64) -> f64 {
    let mut acc = 0.0;
    for (phi, x) in pack.target_contrib.iter().zip(&xi.target) {
        acc += phi * x;
    }
    for (phi, x) in pack.trial_contrib.iter().zip(&xi.trials[study_idx]) {
        acc += phi * x;
    }
    pack.psi + acc / n
}

/// Wild bootstrap for the OM estimator: the five-step skeleton with
/// every resample-and-re-estimate replaced by a multiplier
/// perturbation through the influence function. Target multipliers
/// are shared across studies within a step, mirroring the shared
/// target resample of the simple bootstrap.
pub fn wild_bootstrap_predict(
    data: &IpdDataset,
    arm: &str,
    b: usize,
    seed: u64,
    law: MultiplierLaw,
) -> Result<BootstrapDraws> {
    if b < 1 {
        return Err(Error::InvalidConfig("need at least 1 replicate".into()));
    }
    let m = data.num_studies();
    if m < 2 {
        return Err(Error::TooFewStudies {
            found: m,
            required: 2,
        });
    }
    let arm_id = data.arm_id(arm)?;
    let packs: Vec<IfPack> = (1..=m)
        .map(|s| if_pack(data, s, arm_id).map_err(|e| e.in_study_arm(s, arm)))
        .collect::<Result<Vec<IfPack>>>()?;
    let n = data.len() as f64;
    let n0 = data.n_target();

    let outcomes = exec::map_indexed(b, |i| -> Result<f64> {
        let mut rng = stream(seed, &[DOMAIN_WILD_BOOT, i as u64]);
        let s_b = rng.gen_range(1..=m);

        // (2) perturb the held-out study.
        let xi = draw_multipliers(&mut rng, &packs, n0, law);
        let mu_holdout = perturb(&packs[s_b - 1], &xi, s_b - 1, n);

        // (3) perturb the rest with fresh multipliers; shared target
        // multipliers correlate the studies like a shared resample.
        let xi = draw_multipliers(&mut rng, &packs, n0, law);
        let mut acc = 0.0;
        for s in 1..=m {
            if s != s_b {
                acc += perturb(&packs[s - 1], &xi, s - 1, n);
            }
        }
        let mu_rest = acc / (m - 1) as f64;

        // (4) + (5)
        let delta = mu_rest - mu_holdout;
        let xi = draw_multipliers(&mut rng, &packs, n0, law);
        let mut acc = 0.0;
        for s in 1..=m {
            acc += perturb(&packs[s - 1], &xi, s - 1, n);
        }
        let mu_full = acc / m as f64;
        Ok(mu_full - delta)
    });
    BootstrapDraws::from_outcomes(outcomes, seed)
}

/// Interval from bootstrap draws, by empirical quantiles (linear
/// interpolation at rank (B+1)p, clamped to [1, B]) or by the normal
/// approximation `mean +/- z * sd`.
pub fn interval_from_draws(
    draws: &BootstrapDraws,
    construction: Construction,
    level: f64,
) -> Result<PredictionInterval> {
    let b = draws.values.len();
    if b < 10 {
        return Err(Error::TooFewDraws {
            found: b,
            required: 10,
        });
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "level must be in (0,1), got {level}"
        )));
    }
    let mean = draws.values.iter().sum::<f64>() / b as f64;
    let (lower, upper) = match construction {
        Construction::Quantile => {
            let mut sorted = draws.values.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let alpha = 1.0 - level;
            (
                sample_quantile(&sorted, alpha / 2.0),
                sample_quantile(&sorted, 1.0 - alpha / 2.0),
            )
        }
        Construction::Normal => {
            let var = draws.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
            let z = normal_quantile(0.5 + level / 2.0);
            let half = z * var.sqrt();
            (mean - half, mean + half)
        }
    };
    Ok(PredictionInterval {
        center: mean,
        lower,
        upper,
        method: IntervalMethod::SimpleBootstrap,
        construction,
        level,
        b_reps: b + draws.failures,
    })
}

/// Linear interpolation between order statistics at rank (B+1)p.
fn sample_quantile(sorted: &[f64], p: f64) -> f64 {
    let b = sorted.len();
    let rank = ((b + 1) as f64 * p).clamp(1.0, b as f64);
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo >= b {
        sorted[b - 1]
    } else {
        sorted[lo - 1] + frac * (sorted[lo.min(b - 1)] - sorted[lo - 1])
    }
}

/// Bootstrap variance of the per-study transported mean, resampling
/// the trial and the target jointly in each replicate.
pub fn bootstrap_psi_variance(
    data: &IpdDataset,
    study: usize,
    arm: &str,
    method: Method,
    b: usize,
    seed: u64,
    cfg: &EstimatorConfig,
) -> Result<f64> {
    if b < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 replicates, got {b}"
        )));
    }
    data.study_rows(study)?;
    let arm_id = data.arm_id(arm)?;
    let outcomes = exec::map_indexed(b, |i| -> Result<f64> {
        let mut rng = stream(seed, &[DOMAIN_PSI_BOOT, study as u64, i as u64]);
        let (studies, target) = step_rows(data, &mut rng, |s| s == study);
        let shared = step_membership(data, method, cfg, &studies, &target)?;
        step_psi(
            data,
            method,
            study,
            &studies,
            &target,
            arm_id,
            cfg,
            shared.as_ref(),
        )
    });
    let draws = BootstrapDraws::from_outcomes(outcomes, seed)?;
    let used = draws.values.len();
    let mean = draws.values.iter().sum::<f64>() / used as f64;
    Ok(draws.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (used - 1) as f64)
}
