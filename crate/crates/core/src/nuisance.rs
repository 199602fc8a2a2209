//! Nuisance models consumed by every estimator: outcome regressions
//! g_s_a(X) = E[Y | X, S=s, A=a], membership probabilities for the
//! target population and for each trial, and within-trial treatment
//! probabilities.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ipd::IpdRecord;
use crate::linalg::{lstsq, solve_spd, Mat};

/// Relative pivot tolerance for declaring a design matrix rank
/// deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Probability predictions are clipped into this range before they
/// enter any weight denominator.
pub const CLIP_LO: f64 = 0.01;
pub const CLIP_HI: f64 = 0.99;

/// Clip a probability into `[CLIP_LO, CLIP_HI]`, counting the event.
#[inline]
pub fn clip_probability(p: f64, clipped: &mut usize) -> f64 {
    if p < CLIP_LO {
        *clipped += 1;
        CLIP_LO
    } else if p > CLIP_HI {
        *clipped += 1;
        CLIP_HI
    } else {
        p
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitDiagnostics {
    pub residual_variance: f64,
    pub rank: usize,
}

/// Least-squares fit of outcome on covariates: an intercept plus one
/// slope per covariate.
#[derive(Debug, Clone)]
pub struct LinearFit {
    /// Intercept followed by `d` slopes.
    pub coefficients: Vec<f64>,
    pub residual_variance: f64,
    pub rank: usize,
}

impl LinearFit {
    /// Intercept + dot(slopes, x).
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() + 1 != self.coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coefficients.len() - 1,
                found: x.len(),
            });
        }
        let mut acc = self.coefficients[0];
        for (b, xi) in self.coefficients[1..].iter().zip(x) {
            acc += b * xi;
        }
        Ok(acc)
    }
}

/// Fit ordinary least squares of `y` on an intercept and the rows of
/// `x` (one covariate vector per observation).
pub fn ols_fit(x: &[&[f64]], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    assert_eq!(y.len(), n);
    let d = x.first().map_or(0, |r| r.len());
    let p = d + 1;
    if n < d + 2 {
        return Err(Error::InsufficientRows {
            found: n,
            required: d + 2,
        });
    }
    let mut design = Mat::zeros(n, p);
    for (i, row) in x.iter().enumerate() {
        design[(i, 0)] = 1.0;
        design.row_mut(i)[1..].copy_from_slice(row);
    }
    let fit = lstsq(&design, y, RANK_TOL)?;
    let dof = (n - p) as f64;
    Ok(LinearFit {
        coefficients: fit.coefficients,
        residual_variance: fit.rss / dof,
        rank: fit.rank,
    })
}

/// Fitted outcome regression for one (study, arm) cell.
#[derive(Debug, Clone)]
pub struct OutcomeModel {
    pub study: usize,
    pub arm: String,
    pub fit: LinearFit,
}

impl OutcomeModel {
    /// Fit on an arm subsample (rows with S = study and A = arm).
    pub fn fit(rows: &[&IpdRecord], study: usize, arm: &str) -> Result<OutcomeModel> {
        let x: Vec<&[f64]> = rows.iter().map(|r| r.covariates.as_slice()).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| r.outcome.expect("validated trial record"))
            .collect();
        Ok(OutcomeModel {
            study,
            arm: arm.to_string(),
            fit: ols_fit(&x, &y)?,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.fit.predict(x)
    }

    pub fn diagnostics(&self) -> FitDiagnostics {
        FitDiagnostics {
            residual_variance: self.fit.residual_variance,
            rank: self.fit.rank,
        }
    }
}

/// What a probability model estimates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ProbabilityKind {
    /// P(R = 0 | X): target membership.
    TargetMembership,
    /// P(S = s | X) against the target, fit on the union of trial `s`
    /// and the target sample.
    StudyMembership { study: usize },
    /// P(A = a | X, S = s) within a trial.
    Treatment { study: usize, arm: String },
}

/// Maximum-likelihood logistic model: P(label = 1 | x) with an
/// intercept and one coefficient per covariate.
#[derive(Debug, Clone)]
pub struct ProbabilityModel {
    pub kind: ProbabilityKind,
    pub coefficients: Vec<f64>,
    pub iterations: usize,
}

impl ProbabilityModel {
    /// Raw predicted probability, strictly inside (0, 1).
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() + 1 != self.coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coefficients.len() - 1,
                found: x.len(),
            });
        }
        let mut eta = self.coefficients[0];
        for (b, xi) in self.coefficients[1..].iter().zip(x) {
            eta += b * xi;
        }
        Ok(sigmoid(eta))
    }
}

/// Fit a logistic model where `positives` are labelled 1 and
/// `negatives` 0.
pub fn fit_probability_model(
    positives: &[&IpdRecord],
    negatives: &[&IpdRecord],
    kind: ProbabilityKind,
) -> Result<ProbabilityModel> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::EmptyClass);
    }
    let mut x: Vec<&[f64]> = Vec::with_capacity(positives.len() + negatives.len());
    let mut y: Vec<f64> = Vec::with_capacity(x.capacity());
    for r in positives {
        x.push(&r.covariates);
        y.push(1.0);
    }
    for r in negatives {
        x.push(&r.covariates);
        y.push(0.0);
    }
    let (coefficients, iterations) = logistic_fit(&x, &y)?;
    Ok(ProbabilityModel {
        kind,
        coefficients,
        iterations,
    })
}

#[inline]
fn sigmoid(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

#[inline]
fn log1p_exp(eta: f64) -> f64 {
    // log(1 + e^eta), stable in both tails.
    if eta > 30.0 {
        eta
    } else if eta < -30.0 {
        eta.exp()
    } else {
        eta.exp().ln_1p()
    }
}

const LOGISTIC_SCORE_TOL: f64 = 1e-8;
const LOGISTIC_MAX_ITER: usize = 100;
const LOGISTIC_NORM_LIMIT: f64 = 1e4;

/// Damped Newton iterations for the logistic log-likelihood. Converged
/// when every component of the score drops below `1e-8`; declared
/// separable when the coefficient norm exceeds `1e4` or the iteration
/// cap is hit.
pub fn logistic_fit(x: &[&[f64]], y: &[f64]) -> Result<(Vec<f64>, usize)> {
    let d = x.first().map_or(0, |r| r.len());
    let p = d + 1;
    let design: Vec<Vec<f64>> = x
        .iter()
        .map(|row| {
            let mut v = Vec::with_capacity(p);
            v.push(1.0);
            v.extend_from_slice(row);
            v
        })
        .collect();

    let loglik = |beta: &[f64]| -> f64 {
        let mut ll = 0.0;
        for (row, yi) in design.iter().zip(y) {
            let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
            ll += yi * eta - log1p_exp(eta);
        }
        ll
    };

    let mut beta = vec![0.0; p];
    let mut ll = loglik(&beta);
    for iter in 1..=LOGISTIC_MAX_ITER {
        let mut score = vec![0.0; p];
        let mut hessian = Mat::zeros(p, p);
        for (row, yi) in design.iter().zip(y) {
            let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let pi = sigmoid(eta);
            let w = pi * (1.0 - pi);
            let resid = yi - pi;
            for j in 0..p {
                score[j] += row[j] * resid;
                for k in j..p {
                    hessian[(j, k)] += w * row[j] * row[k];
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                hessian[(j, k)] = hessian[(k, j)];
            }
        }
        if score.iter().all(|s| s.abs() < LOGISTIC_SCORE_TOL) {
            // The score also vanishes when the classes are perfectly
            // separated and every probability has saturated at its
            // label; that is a diverging fit, not a converged one.
            let saturated = design.iter().zip(y).all(|(row, yi)| {
                let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
                (yi - sigmoid(eta)).abs() < 1e-6
            });
            if saturated {
                return Err(Error::Separable);
            }
            return Ok((beta, iter - 1));
        }
        let step = solve_spd(&hessian, &score).map_err(|_| Error::Separable)?;

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let cand_ll = loglik(&candidate);
            // Accept anything that does not decrease the likelihood by
            // more than its own rounding noise.
            if cand_ll >= ll - 1e-9 * (1.0 + ll.abs()) {
                beta = candidate;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::Separable);
        }
        let norm: f64 = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        if norm > LOGISTIC_NORM_LIMIT {
            return Err(Error::Separable);
        }
    }
    Err(Error::Separable)
}

/// Multinomial (softmax) membership model over study labels
/// 0, 1, ..., m with class 0 as the baseline. Exposed behind a config
/// flag as an alternative to pairwise trial-vs-target fits.
#[derive(Debug, Clone)]
pub struct MultinomialModel {
    /// Coefficient vector (intercept first) for each class 1..=k.
    pub coefficients: Vec<Vec<f64>>,
    pub iterations: usize,
}

impl MultinomialModel {
    /// Class probabilities (P(class 0 | x), ..., P(class k | x)).
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let k = self.coefficients.len();
        let mut etas = Vec::with_capacity(k + 1);
        etas.push(0.0);
        for beta in &self.coefficients {
            if x.len() + 1 != beta.len() {
                return Err(Error::DimensionMismatch {
                    expected: beta.len() - 1,
                    found: x.len(),
                });
            }
            let mut eta = beta[0];
            for (b, xi) in beta[1..].iter().zip(x) {
                eta += b * xi;
            }
            etas.push(eta);
        }
        let max = etas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = etas.iter().map(|e| (e - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / total).collect())
    }
}

/// Fit a softmax regression of class labels 0..=k on covariates by
/// damped Newton, mirroring the binary solver's tolerances.
pub fn fit_multinomial(x: &[&[f64]], labels: &[usize], k: usize) -> Result<MultinomialModel> {
    assert_eq!(labels.len(), x.len());
    let d = x.first().map_or(0, |r| r.len());
    let p = d + 1;
    let dim = k * p;
    for class in 0..=k {
        if !labels.contains(&class) {
            return Err(Error::EmptyClass);
        }
    }
    let design: Vec<Vec<f64>> = x
        .iter()
        .map(|row| {
            let mut v = Vec::with_capacity(p);
            v.push(1.0);
            v.extend_from_slice(row);
            v
        })
        .collect();

    let class_probs = |theta: &[f64], row: &[f64]| -> Vec<f64> {
        let mut etas = Vec::with_capacity(k + 1);
        etas.push(0.0);
        for c in 0..k {
            let beta = &theta[c * p..(c + 1) * p];
            etas.push(row.iter().zip(beta).map(|(a, b)| a * b).sum());
        }
        let max = etas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = etas.iter().map(|e| (e - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    };
    let loglik = |theta: &[f64]| -> f64 {
        design
            .iter()
            .zip(labels)
            .map(|(row, &l)| class_probs(theta, row)[l].max(1e-300).ln())
            .sum()
    };

    let mut theta = vec![0.0; dim];
    let mut ll = loglik(&theta);
    for iter in 1..=LOGISTIC_MAX_ITER {
        let mut score = vec![0.0; dim];
        let mut hessian = Mat::zeros(dim, dim);
        for (row, &label) in design.iter().zip(labels) {
            let probs = class_probs(&theta, row);
            for c in 0..k {
                let resid = f64::from(label == c + 1) - probs[c + 1];
                for j in 0..p {
                    score[c * p + j] += row[j] * resid;
                }
                for c2 in c..k {
                    let w = probs[c + 1] * (f64::from(c == c2) - probs[c2 + 1]);
                    for j in 0..p {
                        for j2 in 0..p {
                            let a = c * p + j;
                            let b = c2 * p + j2;
                            if b >= a {
                                hessian[(a, b)] -= w * row[j] * row[j2];
                            }
                        }
                    }
                }
            }
        }
        // The loop above accumulates -H; flip and mirror.
        for a in 0..dim {
            for b in a..dim {
                let v = -hessian[(a, b)];
                hessian[(a, b)] = v;
                hessian[(b, a)] = v;
            }
        }
        if score.iter().all(|s| s.abs() < LOGISTIC_SCORE_TOL) {
            let coefficients = (0..k).map(|c| theta[c * p..(c + 1) * p].to_vec()).collect();
            return Ok(MultinomialModel {
                coefficients,
                iterations: iter - 1,
            });
        }
        let step = solve_spd(&hessian, &score).map_err(|_| Error::Separable)?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate: Vec<f64> = theta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let cand_ll = loglik(&candidate);
            if cand_ll >= ll - 1e-9 * (1.0 + ll.abs()) {
                theta = candidate;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::Separable);
        }
        let norm: f64 = theta.iter().map(|b| b * b).sum::<f64>().sqrt();
        if norm > LOGISTIC_NORM_LIMIT {
            return Err(Error::Separable);
        }
    }
    Err(Error::Separable)
}
