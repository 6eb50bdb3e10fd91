//! Runtime self-tests behind the `check` CLI subcommand: derivative
//! identities by central differences and the standard-vs-Kronecker
//! formulation equivalence on random instances.

use crate::design::build_design_matrix_from_columns;
use crate::error::Result;
use crate::kronecker::KroneckerWorkspace;
use crate::linear::{CacheOptions, PluginCache};
use crate::model::{
    log_likelihood, probabilities, score, Coefficients, FitOptions, FittedModel,
};
use crate::register::{Column, DomainKind, DomainSpec, Register};
use crate::rng::{replicate_rng, StreamTag};
use crate::schema::{Covariate, CovariateKind, CovariateSchema, Role};
use ndarray::Array2;
use rand::Rng;

struct RandomInstance {
    register: Register,
    design: crate::design::DesignMatrix,
    beta: Coefficients,
    domains: Vec<DomainSpec>,
}

fn random_instance(seed: u64, idx: u64) -> Result<RandomInstance> {
    let mut r = replicate_rng(seed, StreamTag::Instance, idx);
    let n = r.random_range(50..=2_000usize);
    let k = r.random_range(2..=8usize);
    let d_levels = r.random_range(1..=10usize);
    // covariates: one binary plus a categorical sized to keep J <= 14
    let cat_levels = r.random_range(2..=8usize);
    let covs = vec![
        Covariate {
            name: "b0".into(),
            kind: CovariateKind::Binary { labels: None },
            role: Role::Predictor,
        },
        Covariate {
            name: "c0".into(),
            kind: CovariateKind::Categorical {
                levels: (1..=cat_levels).map(|l| l.to_string()).collect(),
                reference: "1".into(),
            },
            role: Role::Predictor,
        },
        Covariate {
            name: "dom".into(),
            kind: CovariateKind::Categorical {
                levels: (1..=d_levels.max(2)).map(|l| l.to_string()).collect(),
                reference: "1".into(),
            },
            role: Role::ExternalDomain,
        },
    ];
    let schema = CovariateSchema::new(covs, k)?;
    let columns = vec![
        Column::from_codes((0..n).map(|_| r.random_range(0..2) as u16).collect()),
        Column::from_codes((0..n).map(|_| r.random_range(0..cat_levels) as u16).collect()),
        Column::from_codes((0..n).map(|_| r.random_range(0..d_levels.max(2)) as u16).collect()),
    ];
    let design = build_design_matrix_from_columns(&schema, &columns, n)?;
    let j = design.n_cols();
    let beta = Coefficients::from_free(Array2::from_shape_fn((k - 1, j), |_| {
        (r.random::<f64>() * 2.0 - 1.0) * 1.2
    }))?;
    let p = probabilities(&design, &beta)?;
    let rate = 0.1 + 0.4 * r.random::<f64>();
    let mut sampled: Vec<bool> = (0..n).map(|_| r.random::<f64>() < rate).collect();
    sampled[0] = true;
    let observed: Vec<Option<u16>> = (0..n)
        .map(|i| {
            if !sampled[i] {
                return None;
            }
            let u: f64 = r.random();
            let row = p.row(i);
            let mut cum = 0.0;
            for (c, &pv) in row.iter().enumerate() {
                cum += pv;
                if u < cum {
                    return Some(c as u16);
                }
            }
            Some((k - 1) as u16)
        })
        .collect();
    let register = Register::new(
        schema,
        (0..n).map(|i| format!("u{i}")).collect(),
        columns,
        sampled,
        vec![rate; n],
        observed,
    )?;
    let mut domains = vec![register.full_domain()];
    domains.extend(register.domain_partition("dom")?);
    Ok(RandomInstance { register, design, beta, domains })
}

/// Runs every self-check, reporting via `report(name, passed, detail)`.
pub fn run(
    instances: usize,
    seed: u64,
    report: &mut dyn FnMut(&str, bool, String),
) -> Result<()> {
    // derivative checks on one moderate instance
    let inst = random_instance(seed, 1_000)?;
    let y = inst.register.observed_outcome();
    let w = inst.register.lambda_weights();
    let g = score(&inst.design, y, &w, &inst.beta)?;
    let (km1, j) = inst.beta.free().dim();
    let step = 1e-6;
    let mut worst = 0.0f64;
    for k in 0..km1 {
        for c in 0..j {
            let mut up = inst.beta.free().clone();
            up[[k, c]] += step;
            let mut dn = inst.beta.free().clone();
            dn[[k, c]] -= step;
            let fd = (log_likelihood(&inst.design, y, &w, &Coefficients::from_free(up)?)?
                - log_likelihood(&inst.design, y, &w, &Coefficients::from_free(dn)?)?)
                / (2.0 * step);
            let rel = (g[k * j + c] - fd).abs() / g[k * j + c].abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    report("score-vs-loglik finite difference", worst <= 1e-5, format!("max rel {worst:.2e}"));

    let a = crate::model::hessian(&inst.design, &w, &inst.beta)?;
    let h = km1 * j;
    let mut worst_h = 0.0f64;
    for col in 0..h {
        let (k, c) = (col / j, col % j);
        let mut up = inst.beta.free().clone();
        up[[k, c]] += step;
        let mut dn = inst.beta.free().clone();
        dn[[k, c]] -= step;
        let gu = score(&inst.design, y, &w, &Coefficients::from_free(up)?)?;
        let gd = score(&inst.design, y, &w, &Coefficients::from_free(dn)?)?;
        for row in 0..h {
            let fd = (gu[row] - gd[row]) / (2.0 * step);
            let rel = (a[[row, col]] - fd).abs() / a[[row, col]].abs().max(fd.abs()).max(1e-6);
            worst_h = worst_h.max(rel);
        }
    }
    report("hessian-vs-score finite difference", worst_h <= 1e-5, format!("max rel {worst_h:.2e}"));

    let p = probabilities(&inst.design, &inst.beta)?;
    let k_total = inst.beta.categories();
    let mut worst_f = 0.0f64;
    for unit in 0..4.min(inst.design.n_rows()) {
        let f = crate::linear::f_matrix_row(inst.design.row(unit), p.row(unit));
        for l in 0..km1 {
            for c in 0..j {
                let mut up = inst.beta.free().clone();
                up[[l, c]] += step;
                let mut dn = inst.beta.free().clone();
                dn[[l, c]] -= step;
                let pu = probabilities(&inst.design, &Coefficients::from_free(up)?)?;
                let pd = probabilities(&inst.design, &Coefficients::from_free(dn)?)?;
                for target in 0..k_total {
                    let fd = (pu.row(unit)[target] - pd.row(unit)[target]) / (2.0 * step);
                    let rel = (f[[target, l * j + c]] - fd).abs()
                        / f[[target, l * j + c]].abs().max(fd.abs()).max(1.0);
                    worst_f = worst_f.max(rel);
                }
            }
        }
    }
    report("F-block-vs-probability finite difference", worst_f <= 1e-6, format!("max rel {worst_f:.2e}"));

    // formulation equivalence across random instances
    let mut worst_eq = 0.0f64;
    let mut worst_block = 0.0f64;
    for idx in 0..instances {
        let inst = random_instance(seed, idx as u64)?;
        let model = FittedModel {
            coefficients: inst.beta.clone(),
            fitted_probabilities: probabilities(&inst.design, &inst.beta)?,
            iterations: 0,
            final_score_norm: 0.0,
            ridge_used: 0.0,
            converged: true,
        };
        let cache =
            PluginCache::build(&model, &inst.register, &inst.design, &CacheOptions::default())?;
        let ws = KroneckerWorkspace::build(
            &inst.design,
            &inst.beta,
            inst.register.inclusion_prob(),
            None,
        )?;
        let kf = ws.gmse(&inst.domains)?;
        for (d, dom) in inst.domains.iter().enumerate() {
            let std_vals = cache.gmse_lin(dom)?;
            for (kk, &sv) in std_vals.iter().enumerate() {
                let rel = (sv - kf[[d, kk]]).abs() / sv.abs().max(kf[[d, kk]].abs()).max(1e-300);
                worst_eq = worst_eq.max(rel);
            }
        }
        let n = inst.design.n_rows();
        for bs in [n, (n / 2).max(1), 173] {
            let ws_b = KroneckerWorkspace::build(
                &inst.design,
                &inst.beta,
                inst.register.inclusion_prob(),
                Some(bs),
            )?;
            let kf_b = ws_b.gmse(&inst.domains)?;
            for (x, yv) in kf.iter().zip(kf_b.iter()) {
                let rel = (x - yv).abs() / x.abs().max(yv.abs()).max(1e-300);
                worst_block = worst_block.max(rel);
            }
        }
        let _ = (DomainKind::FullRegister, &inst.register);
    }
    report(
        &format!("formulation equivalence ({instances} instances)"),
        worst_eq <= 1e-8,
        format!("max rel {worst_eq:.2e}"),
    );
    report(
        "block-sum invariance {N, N/2, 173}",
        worst_block <= 1e-10,
        format!("max rel {worst_block:.2e}"),
    );

    // fit smoke: the optimum satisfies the first-order condition
    let opts = FitOptions::default();
    let model = crate::model::fit_with_categories(
        &inst.design,
        y,
        &w,
        &opts,
        None,
        inst.beta.categories(),
    );
    match model {
        Ok(m) => {
            let ok = m.converged && m.final_score_norm <= 1e-8 * inst.register.n_sampled() as f64;
            report(
                "score at MLE below 1e-8 * n",
                ok,
                format!("score norm {:.2e} after {} iterations", m.final_score_norm, m.iterations),
            );
        }
        Err(e) => report("score at MLE below 1e-8 * n", false, format!("fit failed: {e}")),
    }
    Ok(())
}
