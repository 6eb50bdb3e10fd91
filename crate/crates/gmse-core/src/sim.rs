//! Simulation harness: synthetic registers drawn from published covariate
//! marginals and fixed true coefficients, plus the three-estimator
//! comparison study.

use crate::design::build_design_matrix_from_columns;
use crate::error::{Error, Result};
use crate::linear::{cv, CacheOptions, PluginCache};
use crate::model::{
    fit_with_categories, probabilities, Coefficients, FitOptions, ProbabilityMatrix,
};
use crate::register::{Column, Register};
use crate::resampling::{
    bootstrap_gmse, mc_oracle, BootstrapCentre, ResamplingPlan,
};
use crate::rng::{derive_seed, replicate_rng, StreamTag};
use crate::schema::{Covariate, CovariateKind, CovariateSchema, Role};
use rand::Rng;
use serde::Deserialize;

/// One simulated covariate: its coding, marginal distribution and role.
#[derive(Debug, Clone)]
pub struct SimCovariate {
    pub covariate: Covariate,
    pub marginal: Vec<f64>,
}

/// Replication counts for the study: S finite populations, each validated
/// with the resampling plan.
#[derive(Debug, Clone)]
pub struct ReplicationSettings {
    pub populations: usize,
    pub plan: ResamplingPlan,
}

/// Everything needed to regenerate a synthetic register.
#[derive(Debug, Clone)]
pub struct SimulationScenario {
    pub name: String,
    pub n_units: usize,
    pub sampling_rate: f64,
    pub covariates: Vec<SimCovariate>,
    pub true_beta: Coefficients,
    pub replication: ReplicationSettings,
    pub seed: u64,
}

impl SimulationScenario {
    pub fn schema(&self) -> Result<CovariateSchema> {
        CovariateSchema::new(
            self.covariates.iter().map(|c| c.covariate.clone()).collect(),
            self.true_beta.categories(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 {
            return Err(Error::Scenario("n_units must be positive".into()));
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(Error::Scenario("sampling_rate must lie in (0,1]".into()));
        }
        for c in &self.covariates {
            let levels = c.covariate.level_count();
            if c.marginal.len() != levels {
                return Err(Error::Scenario(format!(
                    "covariate '{}': marginal has {} entries for {} levels",
                    c.covariate.name,
                    c.marginal.len(),
                    levels
                )));
            }
            if c.marginal.iter().any(|&p| p < 0.0) {
                return Err(Error::Scenario(format!(
                    "covariate '{}': negative marginal probability",
                    c.covariate.name
                )));
            }
            let s: f64 = c.marginal.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Scenario(format!(
                    "covariate '{}': marginal sums to {s}, expected 1",
                    c.covariate.name
                )));
            }
        }
        let schema = self.schema()?;
        if schema.design_width() != self.true_beta.design_width() {
            return Err(Error::Scenario(format!(
                "true coefficients have {} terms but the schema produces {} design columns",
                self.true_beta.design_width(),
                schema.design_width()
            )));
        }
        if self.replication.populations == 0 {
            return Err(Error::Scenario("replication.populations must be >= 1".into()));
        }
        Ok(())
    }

    /// Loads a scenario file (TOML) and its coefficient table, which is a
    /// CSV path relative to the scenario file. Term names in the CSV must
    /// match the design columns the scenario's schema generates.
    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw: RawScenario = toml::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Scenario(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| std::path::Path::new("."));
        let coeff_path = base.join(&raw.coefficients_csv);
        let (true_beta, terms) =
            Coefficients::from_csv(std::fs::File::open(&coeff_path).map_err(|e| {
                Error::Scenario(format!("coefficients csv {}: {e}", coeff_path.display()))
            })?)?;
        let scenario = raw.build(true_beta)?;
        scenario.validate()?;
        // cross-check the coefficient rows against the design columns
        let schema = scenario.schema()?;
        let expected = design_column_names(&schema);
        if terms != expected {
            return Err(Error::Scenario(format!(
                "coefficient terms {terms:?} do not match design columns {expected:?}"
            )));
        }
        Ok(scenario)
    }
}

fn design_column_names(schema: &CovariateSchema) -> Vec<String> {
    let mut names = vec!["intercept".to_string()];
    for cov in schema.predictors() {
        match &cov.kind {
            CovariateKind::Categorical { levels, reference } => {
                for level in levels {
                    if level != reference {
                        names.push(format!("{}::{}", cov.name, level));
                    }
                }
            }
            CovariateKind::Binary { .. } => names.push(cov.name.clone()),
        }
    }
    names
}

#[derive(Deserialize)]
struct RawScenario {
    name: String,
    n_units: usize,
    sampling_rate: f64,
    seed: u64,
    coefficients_csv: String,
    #[serde(rename = "covariate")]
    covariates: Vec<RawSimCovariate>,
    replication: RawReplication,
}

#[derive(Deserialize)]
struct RawSimCovariate {
    name: String,
    kind: String,
    #[serde(default)]
    levels: Option<Vec<String>>,
    #[serde(default)]
    reference: Option<String>,
    #[serde(default)]
    labels: Option<Vec<String>>,
    marginal: Vec<f64>,
    role: String,
}

#[derive(Deserialize)]
struct RawReplication {
    populations: usize,
    bootstrap_replicates: usize,
    design_replicates: usize,
    model_replicates: usize,
}

impl RawScenario {
    fn build(self, true_beta: Coefficients) -> Result<SimulationScenario> {
        let mut covariates = Vec::new();
        for rc in self.covariates {
            let role = match rc.role.as_str() {
                "predictor" => Role::Predictor,
                "external_domain" => Role::ExternalDomain,
                "identifier" => Role::Identifier,
                other => return Err(Error::Scenario(format!("unknown role '{other}'"))),
            };
            let kind = match rc.kind.as_str() {
                "categorical" => {
                    let levels = rc
                        .levels
                        .ok_or_else(|| Error::Scenario(format!("'{}' missing levels", rc.name)))?;
                    let reference = rc.reference.unwrap_or_else(|| levels[0].clone());
                    CovariateKind::Categorical { levels, reference }
                }
                "binary" => {
                    let labels = match rc.labels {
                        Some(l) if l.len() == 2 => Some([l[0].clone(), l[1].clone()]),
                        Some(_) => {
                            return Err(Error::Scenario(format!(
                                "'{}' labels must have 2 entries",
                                rc.name
                            )))
                        }
                        None => None,
                    };
                    CovariateKind::Binary { labels }
                }
                other => return Err(Error::Scenario(format!("unknown kind '{other}'"))),
            };
            covariates.push(SimCovariate {
                covariate: Covariate { name: rc.name, kind, role },
                marginal: rc.marginal,
            });
        }
        Ok(SimulationScenario {
            name: self.name,
            n_units: self.n_units,
            sampling_rate: self.sampling_rate,
            covariates,
            true_beta,
            replication: ReplicationSettings {
                populations: self.replication.populations,
                plan: ResamplingPlan {
                    bootstrap_replicates: self.replication.bootstrap_replicates,
                    design_replicates: self.replication.design_replicates,
                    model_replicates: self.replication.model_replicates,
                    seed: self.seed,
                    workers: None,
                },
            },
            seed: self.seed,
        })
    }
}

/// The model-side truth of a generated register, kept out of the `Register`
/// itself so nothing downstream can read it by accident. Only the MC oracle
/// takes it as input.
#[derive(Debug, Clone)]
pub struct SimulationTruth {
    pub probabilities: ProbabilityMatrix,
    pub outcomes: Vec<u16>,
    pub beta: Coefficients,
}

fn draw_categorical(rng: &mut impl Rng, marginal: &[f64]) -> u16 {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (c, &p) in marginal.iter().enumerate() {
        cum += p;
        if u < cum {
            return c as u16;
        }
    }
    (marginal.len() - 1) as u16
}

/// Draws one register: covariates from their marginals, membership from
/// Bernoulli(rate), outcomes from the true model. Observed outcomes are
/// exposed only for sampled units; the full outcome vector and probabilities
/// go into the sealed truth.
pub fn generate_register(
    scenario: &SimulationScenario,
    seed: u64,
) -> Result<(Register, SimulationTruth)> {
    scenario.validate()?;
    let n = scenario.n_units;
    let schema = scenario.schema()?;

    let mut cov_rng = replicate_rng(seed, StreamTag::Covariates, 0);
    let mut columns: Vec<Vec<u16>> = vec![Vec::with_capacity(n); scenario.covariates.len()];
    for _ in 0..n {
        for (ci, c) in scenario.covariates.iter().enumerate() {
            columns[ci].push(draw_categorical(&mut cov_rng, &c.marginal));
        }
    }
    let columns: Vec<Column> = columns.into_iter().map(Column::from_codes).collect();

    let design = build_design_matrix_from_columns(&schema, &columns, n)?;
    let p_true = probabilities(&design, &scenario.true_beta)?;

    let mut sample_rng = replicate_rng(seed, StreamTag::SampleMembership, 0);
    let sampled: Vec<bool> = (0..n).map(|_| sample_rng.random::<f64>() < scenario.sampling_rate).collect();
    if !sampled.iter().any(|&s| s) {
        return Err(Error::Scenario("realised sample is empty; increase n or rate".into()));
    }

    let mut outcome_rng = replicate_rng(seed, StreamTag::Outcomes, 0);
    let mut outcomes = Vec::with_capacity(n);
    for i in 0..n {
        outcomes.push(draw_categorical(&mut outcome_rng, p_true.row(i)));
    }
    let observed: Vec<Option<u16>> =
        (0..n).map(|i| sampled[i].then_some(outcomes[i])).collect();

    let register = Register::new(
        schema,
        (1..=n).map(|i| format!("u{i}")).collect(),
        columns,
        sampled,
        vec![scenario.sampling_rate; n],
        observed,
    )?;
    let truth = SimulationTruth {
        probabilities: p_true,
        outcomes,
        beta: scenario.true_beta.clone(),
    };
    Ok((register, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Linearised,
    Bootstrap,
    MonteCarlo,
}

impl Estimator {
    pub fn label(&self) -> &'static str {
        match self {
            Estimator::Linearised => "lin",
            Estimator::Bootstrap => "boot",
            Estimator::MonteCarlo => "mc",
        }
    }
}

/// Which estimators a study run computes.
#[derive(Debug, Clone, Copy)]
pub struct StudySelection {
    pub linearised: bool,
    pub bootstrap: bool,
    pub monte_carlo: bool,
}

impl Default for StudySelection {
    fn default() -> Self {
        Self { linearised: true, bootstrap: true, monte_carlo: true }
    }
}

/// One (replicate, category, estimator) observation of the study.
#[derive(Debug, Clone)]
pub struct StudyRow {
    pub replicate: usize,
    pub category: usize,
    pub estimator: Estimator,
    pub theta_hat: f64,
    pub gmse: f64,
    pub cv: Option<f64>,
}

/// Per (estimator, category) quartiles of the CV across replicates.
#[derive(Debug, Clone)]
pub struct StudySummary {
    pub estimator: Estimator,
    pub category: usize,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
    pub summary: Vec<StudySummary>,
}

/// Runs the S-replicate comparison on the full register domain: per
/// replicate one fresh population, one fit, and the selected estimators.
pub fn run_comparison(
    scenario: &SimulationScenario,
    selection: StudySelection,
    fit_options: &FitOptions,
) -> Result<StudyReport> {
    scenario.validate()?;
    let k = scenario.true_beta.categories();
    let s_total = scenario.replication.populations;
    let mut rows = Vec::new();
    for s in 0..s_total {
        let rep_seed = derive_seed(scenario.seed, StreamTag::Study, s as u64);
        let (register, truth) = generate_register(scenario, rep_seed)?;
        let design = crate::design::build_design_matrix(&register)?;
        let full = register.full_domain();
        let model = fit_with_categories(
            &design,
            register.observed_outcome(),
            &register.lambda_weights(),
            fit_options,
            None,
            k,
        )?;
        let mut plan = scenario.replication.plan.clone();
        plan.seed = rep_seed;

        if selection.linearised {
            let cache = PluginCache::build(&model, &register, &design, &CacheOptions::default())?;
            let gmse = cache.gmse_lin(&full)?;
            let theta = cache.theta_hat(&full);
            for kk in 0..k {
                rows.push(StudyRow {
                    replicate: s,
                    category: kk + 1,
                    estimator: Estimator::Linearised,
                    theta_hat: theta[kk],
                    gmse: gmse[kk],
                    cv: cv(theta[kk], gmse[kk]).ok(),
                });
            }
        }
        if selection.bootstrap {
            let boot = bootstrap_gmse(
                &register,
                &design,
                &model,
                fit_options,
                std::slice::from_ref(&full),
                &plan,
                BootstrapCentre::OriginalEstimate,
            )?;
            for kk in 0..k {
                rows.push(StudyRow {
                    replicate: s,
                    category: kk + 1,
                    estimator: Estimator::Bootstrap,
                    theta_hat: boot.theta_hat[[0, kk]],
                    gmse: boot.gmse[[0, kk]],
                    cv: boot.cv(0, kk),
                });
            }
        }
        if selection.monte_carlo {
            let mc = mc_oracle(
                &design,
                register.inclusion_prob(),
                &truth.probabilities,
                &truth.beta,
                std::slice::from_ref(&full),
                &plan,
                fit_options,
            )?;
            for kk in 0..k {
                rows.push(StudyRow {
                    replicate: s,
                    category: kk + 1,
                    estimator: Estimator::MonteCarlo,
                    theta_hat: mc.expected[[0, kk]],
                    gmse: mc.gmse[[0, kk]],
                    cv: mc.cv(0, kk),
                });
            }
        }
    }
    let summary = summarise(&rows, k);
    Ok(StudyReport { rows, summary })
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

fn summarise(rows: &[StudyRow], k: usize) -> Vec<StudySummary> {
    let mut out = Vec::new();
    for est in [Estimator::Linearised, Estimator::Bootstrap, Estimator::MonteCarlo] {
        for cat in 1..=k {
            let mut cvs: Vec<f64> = rows
                .iter()
                .filter(|r| r.estimator == est && r.category == cat)
                .filter_map(|r| r.cv)
                .collect();
            if cvs.is_empty() {
                continue;
            }
            cvs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out.push(StudySummary {
                estimator: est,
                category: cat,
                q25: quantile(&cvs, 0.25),
                median: quantile(&cvs, 0.5),
                q75: quantile(&cvs, 0.75),
            });
        }
    }
    out
}
