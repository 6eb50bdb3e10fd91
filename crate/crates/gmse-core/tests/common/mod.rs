//! Shared helpers for the integration tests: compact synthetic registers
//! with dummy-coded covariates and model-generated outcomes.

#![allow(dead_code)]

use gmse_core::model::{probabilities, Coefficients};
use gmse_core::register::{Column, Register};
use gmse_core::schema::{Covariate, CovariateKind, CovariateSchema, Role};
use gmse_core::{build_design_matrix, DesignMatrix};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Covariate blueprint: number of levels (2 = binary dummy, otherwise
/// categorical with reference level dropped).
#[derive(Clone, Copy)]
pub struct CovSpec {
    pub levels: usize,
    pub role: Role,
}

impl CovSpec {
    pub fn predictor(levels: usize) -> Self {
        Self { levels, role: Role::Predictor }
    }

    pub fn external(levels: usize) -> Self {
        Self { levels, role: Role::ExternalDomain }
    }
}

pub fn schema_from_specs(specs: &[CovSpec], categories: usize) -> CovariateSchema {
    let covs = specs
        .iter()
        .enumerate()
        .map(|(i, s)| Covariate {
            name: format!("c{i}"),
            kind: if s.levels == 2 {
                CovariateKind::Binary { labels: None }
            } else {
                CovariateKind::Categorical {
                    levels: (1..=s.levels).map(|l| l.to_string()).collect(),
                    reference: "1".to_string(),
                }
            },
            role: s.role,
        })
        .collect();
    CovariateSchema::new(covs, categories).unwrap()
}

/// Coefficients with entries drawn uniformly from [-scale, scale].
pub fn random_beta(rng: &mut ChaCha8Rng, categories: usize, width: usize, scale: f64) -> Coefficients {
    let free = Array2::from_shape_fn((categories - 1, width), |_| {
        (rng.random::<f64>() * 2.0 - 1.0) * scale
    });
    Coefficients::from_free(free).unwrap()
}

pub struct Instance {
    pub register: Register,
    pub design: DesignMatrix,
    pub beta: Coefficients,
}

/// Random register: covariates uniform over their levels, outcomes drawn
/// from the model at `beta`, membership Bernoulli(rate). Redraws categories
/// until every one is observed so fits are well posed.
pub fn random_instance(
    seed: u64,
    n: usize,
    categories: usize,
    specs: &[CovSpec],
    beta_scale: f64,
    rate: f64,
) -> Instance {
    let mut r = rng(seed);
    let schema = schema_from_specs(specs, categories);
    let columns: Vec<Column> = specs
        .iter()
        .map(|s| {
            Column::from_codes(
                (0..n).map(|_| r.random_range(0..s.levels) as u16).collect(),
            )
        })
        .collect();
    let design =
        gmse_core::build_design_matrix_from_columns(&schema, &columns, n).unwrap();
    let beta = random_beta(&mut r, categories, schema.design_width(), beta_scale);
    let p = probabilities(&design, &beta).unwrap();

    'redraw: loop {
        let mut sampled: Vec<bool> = (0..n).map(|_| r.random::<f64>() < rate).collect();
        if !sampled.iter().any(|&s| s) {
            sampled[0] = true;
        }
        let outcomes: Vec<u16> = (0..n)
            .map(|i| {
                let u: f64 = r.random();
                let row = p.row(i);
                let mut cum = 0.0;
                for (c, &pv) in row.iter().enumerate() {
                    cum += pv;
                    if u < cum {
                        return c as u16;
                    }
                }
                (categories - 1) as u16
            })
            .collect();
        let mut seen = vec![false; categories];
        for i in 0..n {
            if sampled[i] {
                seen[outcomes[i] as usize] = true;
            }
        }
        if seen.iter().any(|&s| !s) {
            continue 'redraw;
        }
        let observed: Vec<Option<u16>> =
            (0..n).map(|i| sampled[i].then_some(outcomes[i])).collect();
        let register = Register::new(
            schema.clone(),
            (0..n).map(|i| format!("u{i}")).collect(),
            columns.clone(),
            sampled,
            vec![rate; n],
            observed,
        )
        .unwrap();
        let design = build_design_matrix(&register).unwrap();
        return Instance { register, design, beta };
    }
}

pub fn assert_rel_close(a: f64, b: f64, tol: f64, what: &str) {
    let denom = a.abs().max(b.abs()).max(1e-300);
    assert!(
        (a - b).abs() / denom <= tol,
        "{what}: {a} vs {b} (rel diff {:.3e} > {tol:.1e})",
        (a - b).abs() / denom
    );
}

pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-300))
        .fold(0.0, f64::max)
}

/// Largest |a - b| / max(scale, |a|, |b|) over two matrices.
pub fn max_rel_diff_mat(a: &Array2<f64>, b: &Array2<f64>, floor: f64) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
