//! Bootstrap and Monte-Carlo GMSE estimators.
//!
//! Both are product features (report columns) and test oracles. Replicates
//! are embarrassingly parallel; every replicate derives its own RNG from the
//! plan seed and a counter, and replicate results are combined in replicate
//! order, so worker count never changes the output.

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::model::{
    fit_with_categories, predict_totals_from, Coefficients, FitOptions, FittedModel,
    ProbabilityMatrix,
};
use crate::register::{DomainSpec, Register};
use crate::rng::{replicate_rng, StreamTag};
use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

/// Replication counts and seeding for bootstrap (B) and Monte Carlo (G, M).
#[derive(Debug, Clone)]
pub struct ResamplingPlan {
    pub bootstrap_replicates: usize,
    pub design_replicates: usize,
    pub model_replicates: usize,
    pub seed: u64,
    /// Worker count the caller configured; recorded for reporting only, the
    /// results never depend on it.
    pub workers: Option<usize>,
}

impl Default for ResamplingPlan {
    fn default() -> Self {
        Self {
            bootstrap_replicates: 1000,
            design_replicates: 100,
            model_replicates: 100,
            seed: 0,
            workers: None,
        }
    }
}

/// What the bootstrap squared deviations are taken around.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BootstrapCentre {
    /// `(theta*_b - theta_hat)^2`: error about the original-sample estimate.
    OriginalEstimate,
    /// `(theta*_b - mean_b theta*)^2`: plain replicate variance, kept for
    /// sensitivity analysis.
    ReplicateMean,
}

#[derive(Debug, Clone, Copy)]
pub struct ReplicateSummary {
    pub requested: usize,
    pub dropped: usize,
}

fn check_drop_rate(summary: ReplicateSummary) -> Result<()> {
    if summary.dropped * 20 > summary.requested {
        return Err(Error::TooManyDropped {
            dropped: summary.dropped,
            requested: summary.requested,
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BootstrapResult {
    /// Row per domain, column per category.
    pub gmse: Array2<f64>,
    /// Original-sample totals the deviations are centred on.
    pub theta_hat: Array2<f64>,
    pub replicates: ReplicateSummary,
}

impl BootstrapResult {
    pub fn cv(&self, d: usize, k: usize) -> Option<f64> {
        let t = self.theta_hat[[d, k]];
        (t > 0.0).then(|| self.gmse[[d, k]].sqrt() / t)
    }
}

/// Non-parametric bootstrap: B resamples of the n sampled units with
/// replacement, each refitted and pushed through mass imputation.
/// Nonconvergent replicates are dropped and counted; more than 5% dropped is
/// an error.
pub fn bootstrap_gmse(
    register: &Register,
    design: &DesignMatrix,
    model: &FittedModel,
    fit_options: &FitOptions,
    domains: &[DomainSpec],
    plan: &ResamplingPlan,
    centre: BootstrapCentre,
) -> Result<BootstrapResult> {
    let b = plan.bootstrap_replicates;
    if b == 0 {
        return Err(Error::Scenario("bootstrap_replicates must be >= 1".into()));
    }
    let n_units = register.n_units();
    let k = register.schema().outcome_categories();
    let d = domains.len();
    let sampled_idx: Vec<usize> =
        (0..n_units).filter(|&i| register.sampled()[i]).collect();
    let n = sampled_idx.len();
    let y = register.observed_outcome();

    let mut theta_hat = Array2::<f64>::zeros((d, k));
    for (di, dom) in domains.iter().enumerate() {
        let t = predict_totals_from(&model.fitted_probabilities, dom);
        for (kk, &v) in t.iter().enumerate() {
            theta_hat[[di, kk]] = v;
        }
    }

    let replicate_totals: Vec<Option<Array2<f64>>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(plan.seed, StreamTag::Bootstrap, rep as u64);
            // multiplicities of the with-replacement resample as fit weights
            let mut weights = vec![0.0f64; n_units];
            for _ in 0..n {
                let pick = sampled_idx[rng.random_range(0..n)];
                weights[pick] += 1.0;
            }
            let refit = fit_with_categories(
                design,
                y,
                &weights,
                fit_options,
                Some(&model.coefficients),
                k,
            );
            match refit {
                Ok(m) if m.converged => {
                    let mut t = Array2::<f64>::zeros((d, k));
                    for (di, dom) in domains.iter().enumerate() {
                        let tot = predict_totals_from(&m.fitted_probabilities, dom);
                        for (kk, &v) in tot.iter().enumerate() {
                            t[[di, kk]] = v;
                        }
                    }
                    Some(t)
                }
                _ => None,
            }
        })
        .collect();

    let kept: Vec<&Array2<f64>> = replicate_totals.iter().flatten().collect();
    let summary = ReplicateSummary { requested: b, dropped: b - kept.len() };
    check_drop_rate(summary)?;
    let b_eff = kept.len() as f64;

    let centre_matrix = match centre {
        BootstrapCentre::OriginalEstimate => theta_hat.clone(),
        BootstrapCentre::ReplicateMean => {
            let mut mean = Array2::<f64>::zeros((d, k));
            for t in &kept {
                mean += *t;
            }
            mean / b_eff
        }
    };
    let mut gmse = Array2::<f64>::zeros((d, k));
    for t in &kept {
        for di in 0..d {
            for kk in 0..k {
                let dev = t[[di, kk]] - centre_matrix[[di, kk]];
                gmse[[di, kk]] += dev * dev;
            }
        }
    }
    gmse /= b_eff;
    Ok(BootstrapResult { gmse, theta_hat, replicates: summary })
}

#[derive(Debug, Clone)]
pub struct McResult {
    pub gmse: Array2<f64>,
    /// True expected totals `sum_d gamma p`, the CV denominator.
    pub expected: Array2<f64>,
    pub replicates: ReplicateSummary,
}

impl McResult {
    pub fn cv(&self, d: usize, k: usize) -> Option<f64> {
        let t = self.expected[[d, k]];
        (t > 0.0).then(|| self.gmse[[d, k]].sqrt() / t)
    }
}

/// Monte-Carlo benchmark of the true GMSE on simulated registers: G design
/// replicates (fresh sample membership), each with M model replicates (fresh
/// outcomes from the true probabilities), every replicate refitted from
/// scratch at the true coefficients and squared against the true expected
/// totals.
pub fn mc_oracle(
    design: &DesignMatrix,
    pi: &[f64],
    true_probabilities: &ProbabilityMatrix,
    true_beta: &Coefficients,
    domains: &[DomainSpec],
    plan: &ResamplingPlan,
    fit_options: &FitOptions,
) -> Result<McResult> {
    let g = plan.design_replicates;
    let m = plan.model_replicates;
    if g == 0 || m == 0 {
        return Err(Error::Scenario("design/model replicate counts must be >= 1".into()));
    }
    let n_units = design.n_rows();
    if pi.len() != n_units || true_probabilities.n_units() != n_units {
        return Err(Error::Dimension("pi / truth length != design rows".into()));
    }
    let k = true_beta.categories();
    let d = domains.len();

    let mut expected = Array2::<f64>::zeros((d, k));
    for (di, dom) in domains.iter().enumerate() {
        let t = predict_totals_from(true_probabilities, dom);
        for (kk, &v) in t.iter().enumerate() {
            expected[[di, kk]] = v;
        }
    }

    // sample memberships per design replicate
    let memberships: Vec<Vec<usize>> = (0..g)
        .map(|gi| {
            let mut rng = replicate_rng(plan.seed, StreamTag::McDesign, gi as u64);
            (0..n_units).filter(|&i| rng.random::<f64>() < pi[i]).collect()
        })
        .collect();

    let tasks: Vec<(usize, usize)> =
        (0..g).flat_map(|gi| (0..m).map(move |mi| (gi, mi))).collect();
    let squared: Vec<Option<Array2<f64>>> = tasks
        .par_iter()
        .map(|&(gi, mi)| {
            let sampled = &memberships[gi];
            if sampled.is_empty() {
                return None;
            }
            let mut rng =
                replicate_rng(plan.seed, StreamTag::McModel, (gi * m + mi) as u64);
            // outcomes are only needed where the replicate sampled
            let mut y: Vec<Option<u16>> = vec![None; n_units];
            let mut weights = vec![0.0f64; n_units];
            for &i in sampled {
                let p_row = true_probabilities.row(i);
                let u: f64 = rng.random();
                let mut cum = 0.0;
                let mut cat = p_row.len() - 1;
                for (c, &pv) in p_row.iter().enumerate() {
                    cum += pv;
                    if u < cum {
                        cat = c;
                        break;
                    }
                }
                y[i] = Some(cat as u16);
                weights[i] = 1.0;
            }
            let refit =
                fit_with_categories(design, &y, &weights, fit_options, Some(true_beta), k);
            match refit {
                Ok(model) if model.converged => {
                    let mut sq = Array2::<f64>::zeros((d, k));
                    for (di, dom) in domains.iter().enumerate() {
                        let tot = predict_totals_from(&model.fitted_probabilities, dom);
                        for (kk, &v) in tot.iter().enumerate() {
                            let dev = v - expected[[di, kk]];
                            sq[[di, kk]] = dev * dev;
                        }
                    }
                    Some(sq)
                }
                _ => None,
            }
        })
        .collect();

    let requested = g * m;
    let dropped = squared.iter().filter(|s| s.is_none()).count();
    let summary = ReplicateSummary { requested, dropped };
    check_drop_rate(summary)?;

    // nested means: average over surviving model replicates within each
    // design replicate, then over design replicates with survivors
    let mut gmse = Array2::<f64>::zeros((d, k));
    let mut g_kept = 0usize;
    for gi in 0..g {
        let mut inner = Array2::<f64>::zeros((d, k));
        let mut m_kept = 0usize;
        for mi in 0..m {
            if let Some(sq) = &squared[gi * m + mi] {
                inner += sq;
                m_kept += 1;
            }
        }
        if m_kept > 0 {
            gmse = gmse + inner / m_kept as f64;
            g_kept += 1;
        }
    }
    if g_kept == 0 {
        return Err(Error::TooManyDropped { dropped, requested });
    }
    gmse /= g_kept as f64;
    Ok(McResult { gmse, expected, replicates: summary })
}
