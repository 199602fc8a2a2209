//! Synthetic data generation and coverage experiments.
//!
//! Each trial draws covariates from a trivariate normal whose mean
//! sits on an equally spaced grid over [0, 1.5]; the target population
//! mean is (1, 1, 1). Outcomes are linear in the covariates with unit
//! normal noise plus a study/arm-specific shift drawn from a chosen
//! heterogeneity law. Under that recipe the new-trial truth is
//! 2 + delta_0 for a fresh draw delta_0.

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Exp, Pareto, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{estimate_pooled, EstimatorConfig, Method};
use crate::exec;
use crate::heterogeneity::{estimate_gamma_squared, joint_bootstrap, CorrelatedEstimates};
use crate::ipd::{ArmId, IpdDataset, IpdRecord};
use crate::linalg::{cholesky, Mat};
use crate::prediction::{
    interval_from_draws, mom_interval, simple_bootstrap_predict, wild_bootstrap_predict,
    Construction, MultiplierLaw, PredictionInterval,
};
use crate::rng::{derive, stream, DOMAIN_DGP};

pub const COVARIATE_DIM: usize = 3;
pub const OUTCOME_BETA: [f64; 4] = [0.5, 0.5, 0.5, 0.5];
pub const TARGET_MEAN: [f64; 3] = [1.0, 1.0, 1.0];
/// Arm labels used by generated datasets: "a" is the active arm whose
/// transported mean the experiments track.
pub const ARM_LABELS: [&str; 2] = ["a", "b"];

/// Distribution of the study/arm-specific outcome shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law", content = "params")]
pub enum DeltaLaw {
    /// Uniform on [-2, 2].
    Uniform2,
    /// Standard normal.
    StdNormal,
    /// Exponential(1) - 1 (mean zero).
    ExpCentered,
    /// Pareto with the given scale and shape; `centered` subtracts the
    /// analytic mean shape*scale/(shape-1).
    Pareto {
        scale: f64,
        shape: f64,
        centered: bool,
    },
    /// Fixed value; for validation runs.
    Degenerate(f64),
}

impl DeltaLaw {
    /// Grid default: scale 1, shape 3 (mean 1.5), uncentered.
    pub fn pareto_default(centered: bool) -> DeltaLaw {
        DeltaLaw::Pareto {
            scale: 1.0,
            shape: 3.0,
            centered,
        }
    }

    pub fn label(&self) -> String {
        match self {
            DeltaLaw::Uniform2 => "uniform".into(),
            DeltaLaw::StdNormal => "normal".into(),
            DeltaLaw::ExpCentered => "exponential".into(),
            DeltaLaw::Pareto {
                centered: false, ..
            } => "pareto".into(),
            DeltaLaw::Pareto { centered: true, .. } => "pareto_centered".into(),
            DeltaLaw::Degenerate(_) => "degenerate".into(),
        }
    }

    fn stream_id(&self) -> u64 {
        match self {
            DeltaLaw::Uniform2 => 1,
            DeltaLaw::StdNormal => 2,
            DeltaLaw::ExpCentered => 3,
            DeltaLaw::Pareto { centered, .. } => 4 + u64::from(*centered),
            DeltaLaw::Degenerate(_) => 6,
        }
    }
}

/// One draw from a heterogeneity law.
pub fn delta_sample<R: Rng>(law: DeltaLaw, rng: &mut R) -> f64 {
    match law {
        DeltaLaw::Uniform2 => Uniform::new_inclusive(-2.0, 2.0).sample(rng),
        DeltaLaw::StdNormal => rng.sample(StandardNormal),
        DeltaLaw::ExpCentered => Exp::new(1.0).expect("valid rate").sample(rng) - 1.0,
        DeltaLaw::Pareto {
            scale,
            shape,
            centered,
        } => {
            let draw = Pareto::new(scale, shape)
                .expect("valid parameters")
                .sample(rng);
            if centered {
                draw - shape * scale / (shape - 1.0)
            } else {
                draw
            }
        }
        DeltaLaw::Degenerate(v) => v,
    }
}

/// Configuration of one simulation scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub m: usize,
    pub delta_law: DeltaLaw,
    pub n_s: usize,
    pub n_0: usize,
    pub reps: usize,
    pub b_reps: usize,
    pub level: f64,
    pub seed: u64,
    /// Mean shift added to arm "a" outcomes (0 on the standard grid;
    /// used by treatment-contrast checks).
    #[serde(default)]
    pub arm_shift: f64,
}

impl Scenario {
    /// Grid defaults: 100 participants per trial, a target sample of
    /// 1000, level 0.95.
    pub fn new(m: usize, delta_law: DeltaLaw, reps: usize, b_reps: usize, seed: u64) -> Scenario {
        Scenario {
            m,
            delta_law,
            n_s: 100,
            n_0: 1000,
            reps,
            b_reps,
            level: 0.95,
            seed,
            arm_shift: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidConfig(format!(
                "scenario needs m >= 2 trials, got {}",
                self.m
            )));
        }
        if self.reps < 1 {
            return Err(Error::InvalidConfig("scenario needs reps >= 1".into()));
        }
        if self.n_s < 8 || self.n_0 < 2 {
            return Err(Error::InvalidConfig(
                "scenario needs n_s >= 8 and n_0 >= 2".into(),
            ));
        }
        if !(0.0 < self.level && self.level < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "level must be in (0,1), got {}",
                self.level
            )));
        }
        Ok(())
    }

    /// Master seed for one replication, mixing the scenario identity
    /// so different grid cells do not share streams.
    pub fn rep_master(&self, rep_index: usize) -> u64 {
        derive(
            self.seed,
            &[
                DOMAIN_DGP,
                self.m as u64,
                self.delta_law.stream_id(),
                rep_index as u64,
            ],
        )
    }
}

/// Equally spaced per-study covariate means over [0, 1.5].
pub fn study_mean_values(m: usize) -> Vec<f64> {
    (0..m)
        .map(|s| 1.5 * s as f64 / (m - 1).max(1) as f64)
        .collect()
}

fn covariate_cholesky() -> Mat {
    let sigma = Mat::from_rows(&[
        vec![1.0, 0.5, 0.5],
        vec![0.5, 1.0, 0.5],
        vec![0.5, 0.5, 1.0],
    ]);
    cholesky(&sigma).expect("fixed covariance is positive definite")
}

fn mvn_draw<R: Rng>(rng: &mut R, mean: &[f64; 3], chol: &Mat) -> Vec<f64> {
    let z: [f64; 3] = [
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    ];
    (0..3)
        .map(|i| {
            let mut acc = mean[i];
            for (j, zj) in z.iter().enumerate().take(i + 1) {
                acc += chol[(i, j)] * zj;
            }
            acc
        })
        .collect()
}

/// Per-study shifts drawn for one replication, for arms "a" and "b".
#[allow(dead_code)]
pub(crate) struct DgpTrace {
    pub deltas: Vec<(f64, f64)>,
    pub delta_new_trial: f64,
}

pub(crate) fn gen_dataset_trace(
    scenario: &Scenario,
    rep_index: usize,
) -> Result<(IpdDataset, f64, DgpTrace)> {
    scenario.validate()?;
    let mut rng = stream(
        scenario.seed,
        &[
            DOMAIN_DGP,
            scenario.m as u64,
            scenario.delta_law.stream_id(),
            rep_index as u64,
        ],
    );
    let chol = covariate_cholesky();
    let means = study_mean_values(scenario.m);

    // Study/arm shifts, then the fresh new-trial draw for arm "a".
    let deltas: Vec<(f64, f64)> = (0..scenario.m)
        .map(|_| {
            (
                delta_sample(scenario.delta_law, &mut rng),
                delta_sample(scenario.delta_law, &mut rng),
            )
        })
        .collect();
    let delta_new_trial = delta_sample(scenario.delta_law, &mut rng);
    let truth = 2.0 + scenario.arm_shift + delta_new_trial;

    let mut records = Vec::with_capacity(scenario.n_0 + scenario.m * scenario.n_s);
    for i in 0..scenario.n_0 {
        records.push(IpdRecord {
            subject_id: format!("t-{i}"),
            study: 0,
            r_flag: false,
            treatment: None,
            outcome: None,
            covariates: mvn_draw(&mut rng, &TARGET_MEAN, &chol),
        });
    }
    for (s_idx, (delta_a, delta_b)) in deltas.iter().enumerate() {
        let mu = [means[s_idx], means[s_idx], means[s_idx]];
        // 1:1 randomization with an exact split.
        let mut assignment: Vec<usize> = (0..scenario.n_s)
            .map(|i| usize::from(i >= scenario.n_s.div_ceil(2)))
            .collect();
        assignment.shuffle(&mut rng);
        for (i, &arm) in assignment.iter().enumerate() {
            let covariates = mvn_draw(&mut rng, &mu, &chol);
            let noise: f64 = rng.sample(StandardNormal);
            let delta = if arm == 0 { *delta_a } else { *delta_b };
            let shift = if arm == 0 { scenario.arm_shift } else { 0.0 };
            let linear: f64 = OUTCOME_BETA[0]
                + covariates
                    .iter()
                    .zip(&OUTCOME_BETA[1..])
                    .map(|(x, b)| x * b)
                    .sum::<f64>();
            records.push(IpdRecord {
                subject_id: format!("s{}-{i}", s_idx + 1),
                study: s_idx + 1,
                r_flag: true,
                treatment: Some(ArmId(arm)),
                outcome: Some(linear + delta + shift + noise),
                covariates,
            });
        }
    }
    let dataset =
        IpdDataset::from_records(records, ARM_LABELS.iter().map(|s| s.to_string()).collect())?;
    Ok((
        dataset,
        truth,
        DgpTrace {
            deltas,
            delta_new_trial,
        },
    ))
}

/// Generate one replication: the combined dataset and the realized
/// new-trial truth for arm "a".
pub fn gen_dataset(scenario: &Scenario, rep_index: usize) -> Result<(IpdDataset, f64)> {
    let (dataset, truth, _) = gen_dataset_trace(scenario, rep_index)?;
    Ok((dataset, truth))
}

/// Interval procedure requested from a coverage run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MethodSpec {
    Mom,
    Simple(Construction),
    Wild(Construction),
}

impl MethodSpec {
    pub fn labels(&self) -> (String, String) {
        match self {
            MethodSpec::Mom => ("mom".into(), "normal".into()),
            MethodSpec::Simple(c) => ("simple".into(), c.to_string()),
            MethodSpec::Wild(c) => ("wild".into(), c.to_string()),
        }
    }

    /// The full set: MoM plus both constructions of both bootstraps.
    pub fn all() -> Vec<MethodSpec> {
        vec![
            MethodSpec::Mom,
            MethodSpec::Simple(Construction::Quantile),
            MethodSpec::Simple(Construction::Normal),
            MethodSpec::Wild(Construction::Quantile),
            MethodSpec::Wild(Construction::Normal),
        ]
    }
}

impl std::str::FromStr for MethodSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<MethodSpec> {
        match s {
            "mom" => Ok(MethodSpec::Mom),
            "simple" | "simple-quantile" => Ok(MethodSpec::Simple(Construction::Quantile)),
            "simple-normal" => Ok(MethodSpec::Simple(Construction::Normal)),
            "wild" | "wild-quantile" => Ok(MethodSpec::Wild(Construction::Quantile)),
            "wild-normal" => Ok(MethodSpec::Wild(Construction::Normal)),
            other => Err(Error::InvalidConfig(format!(
                "unknown interval method `{other}`"
            ))),
        }
    }
}

/// Monte Carlo coverage of one interval procedure in one scenario.
#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub scenario: Scenario,
    pub method: String,
    pub construction: String,
    pub coverage: f64,
    pub mean_width: f64,
    pub mc_se: f64,
    pub failures: usize,
}

/// A group of intervals computed together on one replication, tagged
/// with (method, construction) labels.
pub type IntervalGroup<'a> =
    dyn Fn(&IpdDataset, u64) -> Result<Vec<((String, String), PredictionInterval)>> + Sync + 'a;

/// Labels plus the boxed builder producing their intervals.
type LabeledGroup<'a> = (Vec<(String, String)>, Box<IntervalGroup<'a>>);

/// Coverage evaluation over custom interval builders. Each builder
/// sees the replication's dataset and its derived master seed; a
/// builder error counts as a failure for every label it produces.
pub fn run_scenario_with(
    scenario: &Scenario,
    groups: &[(Vec<(String, String)>, &IntervalGroup)],
) -> Result<Vec<CoverageReport>> {
    scenario.validate()?;
    if groups.is_empty() {
        return Err(Error::InvalidConfig("no interval methods requested".into()));
    }

    type GroupOutcome = std::result::Result<Vec<((String, String), (bool, f64))>, ()>;
    type RepOutcome = Vec<GroupOutcome>;
    let rep_results: Vec<RepOutcome> = exec::map_indexed(scenario.reps, |rep| {
        let generated = gen_dataset(scenario, rep);
        let rep_master = scenario.rep_master(rep);
        groups
            .iter()
            .map(|(_, builder)| match &generated {
                Ok((dataset, truth)) => builder(dataset, rep_master)
                    .map(|intervals| {
                        intervals
                            .into_iter()
                            .map(|(labels, iv)| {
                                let contains = iv.lower <= *truth && *truth <= iv.upper;
                                (labels, (contains, iv.upper - iv.lower))
                            })
                            .collect()
                    })
                    .map_err(|_| ()),
                Err(_) => Err(()),
            })
            .collect()
    });

    // Tally in replication order.
    let mut order: Vec<(String, String)> = Vec::new();
    for (labels, _) in groups {
        for l in labels {
            if !order.contains(l) {
                order.push(l.clone());
            }
        }
    }
    let mut hits = vec![0usize; order.len()];
    let mut widths = vec![0.0f64; order.len()];
    let mut fails = vec![0usize; order.len()];
    for rep in &rep_results {
        for (g, outcome) in rep.iter().enumerate() {
            match outcome {
                Ok(items) => {
                    for (labels, (contains, width)) in items {
                        let idx = order.iter().position(|l| l == labels).expect("known label");
                        if *contains {
                            hits[idx] += 1;
                        }
                        widths[idx] += width;
                    }
                }
                Err(()) => {
                    for l in &groups[g].0 {
                        let idx = order.iter().position(|x| x == l).expect("known label");
                        fails[idx] += 1;
                    }
                }
            }
        }
    }

    let mut reports = Vec::with_capacity(order.len());
    for (idx, (method, construction)) in order.iter().enumerate() {
        let failures = fails[idx];
        if failures * 10 > scenario.reps {
            return Err(Error::TooManyFailures {
                failures,
                total: scenario.reps,
            });
        }
        let used = scenario.reps - failures;
        let coverage = hits[idx] as f64 / used as f64;
        reports.push(CoverageReport {
            scenario: scenario.clone(),
            method: method.clone(),
            construction: construction.clone(),
            coverage,
            mean_width: widths[idx] / used as f64,
            mc_se: (coverage * (1.0 - coverage) / scenario.reps as f64).sqrt(),
            failures,
        });
    }
    Ok(reports)
}

// Stream domains hung off the per-replication master seed.
const REP_COV: u64 = 11;
const REP_SIMPLE: u64 = 12;
const REP_WILD: u64 = 13;

/// Coverage experiment for the standard interval procedures. Each
/// replication generates a dataset, estimates the pooled OM mean, and
/// checks whether each requested interval contains the realized truth.
pub fn run_scenario(scenario: &Scenario, methods: &[MethodSpec]) -> Result<Vec<CoverageReport>> {
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no interval methods requested".into()));
    }
    // Duplicate requests would double-tally into one label.
    let mut methods: Vec<MethodSpec> = methods.to_vec();
    let mut seen = Vec::new();
    methods.retain(|m| {
        if seen.contains(m) {
            false
        } else {
            seen.push(*m);
            true
        }
    });
    let level = scenario.level;
    let b = scenario.b_reps;
    let cfg = EstimatorConfig::default();

    let want_mom = methods.contains(&MethodSpec::Mom);
    let simple_constructions: Vec<Construction> = methods
        .iter()
        .filter_map(|m| match m {
            MethodSpec::Simple(c) => Some(*c),
            _ => None,
        })
        .collect();
    let wild_constructions: Vec<Construction> = methods
        .iter()
        .filter_map(|m| match m {
            MethodSpec::Wild(c) => Some(*c),
            _ => None,
        })
        .collect();

    let mut groups: Vec<LabeledGroup> = Vec::new();
    if want_mom {
        let labels = vec![MethodSpec::Mom.labels()];
        let l = labels.clone();
        groups.push((
            labels,
            Box::new(move |data: &IpdDataset, rep_master: u64| {
                let pooled = estimate_pooled(data, "a", Method::Om, &cfg)?;
                let boot = joint_bootstrap(
                    data,
                    "a",
                    Method::Om,
                    &cfg,
                    b,
                    derive(rep_master, &[REP_COV]),
                )?;
                let mu: Vec<f64> = pooled.per_study.iter().map(|e| e.value).collect();
                let est = CorrelatedEstimates::with_equal_weights(mu, boot.cov)?;
                let gamma = estimate_gamma_squared(&est)?;
                let iv = mom_interval(&pooled, &gamma, boot.var_pooled, level)?;
                Ok(vec![(l[0].clone(), iv)])
            }),
        ));
    }
    if !simple_constructions.is_empty() {
        let labels: Vec<(String, String)> = simple_constructions
            .iter()
            .map(|c| MethodSpec::Simple(*c).labels())
            .collect();
        let cs = simple_constructions.clone();
        let ls = labels.clone();
        groups.push((
            labels,
            Box::new(move |data: &IpdDataset, rep_master: u64| {
                let draws = simple_bootstrap_predict(
                    data,
                    "a",
                    Method::Om,
                    b,
                    derive(rep_master, &[REP_SIMPLE]),
                    &cfg,
                )?;
                cs.iter()
                    .zip(ls.iter())
                    .map(|(c, l)| Ok((l.clone(), interval_from_draws(&draws, *c, level)?)))
                    .collect()
            }),
        ));
    }
    if !wild_constructions.is_empty() {
        let labels: Vec<(String, String)> = wild_constructions
            .iter()
            .map(|c| MethodSpec::Wild(*c).labels())
            .collect();
        let cs = wild_constructions.clone();
        let ls = labels.clone();
        groups.push((
            labels,
            Box::new(move |data: &IpdDataset, rep_master: u64| {
                let draws = wild_bootstrap_predict(
                    data,
                    "a",
                    b,
                    derive(rep_master, &[REP_WILD]),
                    MultiplierLaw::Normal,
                )?;
                cs.iter()
                    .zip(ls.iter())
                    .map(|(c, l)| {
                        let mut iv = interval_from_draws(&draws, *c, level)?;
                        iv.method = crate::prediction::IntervalMethod::WildBootstrap;
                        Ok((l.clone(), iv))
                    })
                    .collect()
            }),
        ));
    }

    let group_refs: Vec<(Vec<(String, String)>, &IntervalGroup)> = groups
        .iter()
        .map(|(labels, b)| (labels.clone(), b.as_ref() as &IntervalGroup))
        .collect();
    run_scenario_with(scenario, &group_refs)
}

/// The full grid: every m in {5, 10, 15, 30, 50} crossed with every
/// heterogeneity law.
pub fn grid_scenarios(reps: usize, b_reps: usize, seed: u64) -> Vec<Scenario> {
    let laws = [
        DeltaLaw::Uniform2,
        DeltaLaw::StdNormal,
        DeltaLaw::ExpCentered,
        DeltaLaw::pareto_default(false),
    ];
    let mut scenarios = Vec::with_capacity(20);
    for law in laws {
        for m in [5usize, 10, 15, 30, 50] {
            scenarios.push(Scenario::new(m, law, reps, b_reps, seed));
        }
    }
    scenarios
}
