//! Analytic derivatives against finite-difference oracles, plus the closed
//! forms the multinomial model must satisfy.

mod common;

use common::*;
use gmse_core::model::{
    fit, hessian, log_likelihood, predict_totals, probabilities, score, Coefficients, FitOptions,
};
use gmse_core::schema::Role;
use gmse_core::{build_design_matrix_from_columns, linalg, DesignMatrix};
use ndarray::{array, Array2};
use rand::Rng;

fn simple_design(rows: Vec<Vec<f64>>) -> DesignMatrix {
    let n = rows.len();
    let j = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    DesignMatrix::from_parts(
        Array2::from_shape_vec((n, j), flat).unwrap(),
        (0..j).map(|c| format!("x{c}")).collect(),
    )
    .unwrap()
}

#[test]
fn zero_coefficients_give_uniform_probabilities() {
    let inst = random_instance(1, 50, 4, &[CovSpec::predictor(3), CovSpec::predictor(2)], 1.0, 0.5);
    let beta = Coefficients::zeros(4, inst.design.n_cols());
    let p = probabilities(&inst.design, &beta).unwrap();
    for i in 0..50 {
        for &v in p.row(i) {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }
}

#[test]
fn binary_logistic_identity() {
    let x = simple_design(vec![vec![1.0]]);
    let half = probabilities(&x, &Coefficients::from_free(array![[0.0]]).unwrap()).unwrap();
    assert_eq!(half.row(0), &[0.5, 0.5]);
    let lifted =
        probabilities(&x, &Coefficients::from_free(array![[3.0f64.ln()]]).unwrap()).unwrap();
    assert!((lifted.row(0)[0] - 0.75).abs() < 1e-15);
    assert!((lifted.row(0)[1] - 0.25).abs() < 1e-15);
}

#[test]
fn published_coefficient_row_matches_plain_evaluation() {
    // A unit with age 70+, female, Italian citizenship, 2011 education
    // level 3, pushed through the shipped coefficient table. The oracle is a
    // literal, unstabilised transcription of the category-probability
    // formula.
    let (beta, terms) = Coefficients::from_csv(
        std::fs::File::open(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../scenarios/table2_coefficients.csv"
        ))
        .unwrap(),
    )
    .unwrap();
    assert_eq!(terms.len(), 14);
    assert_eq!(beta.categories(), 8);
    let mut x = vec![0.0; 14];
    x[0] = 1.0; // intercept
    x[4] = 1.0; // age::70+
    x[5] = 1.0; // gender = Female
    x[6] = 1.0; // citizenship = Italian
    x[8] = 1.0; // edu2011::3
    let design = simple_design(vec![x.clone()]);
    let p = probabilities(&design, &beta).unwrap();
    let row = p.row(0);
    assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);

    let expanded = beta.expanded();
    let mut exps = [0.0f64; 8];
    for k in 0..7 {
        let eta: f64 = (0..14).map(|j| x[j] * expanded[[k, j]]).sum();
        exps[k] = eta.exp();
    }
    exps[7] = 1.0;
    let denom: f64 = exps.iter().sum();
    let oracle: Vec<f64> = exps.iter().map(|e| e / denom).collect();
    for k in 0..8 {
        assert_rel_close(row[k], oracle[k], 1e-12, &format!("category {}", k + 1));
    }
    let modal = (0..8).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
    let oracle_modal =
        (0..8).max_by(|&a, &b| oracle[a].partial_cmp(&oracle[b]).unwrap()).unwrap();
    assert_eq!(modal, oracle_modal);
}

#[test]
fn loglik_at_zero_is_minus_n_log_k() {
    let inst = random_instance(7, 120, 3, &[CovSpec::predictor(2), CovSpec::predictor(4)], 0.8, 0.4);
    let n = inst.register.n_sampled() as f64;
    let beta = Coefficients::zeros(3, inst.design.n_cols());
    let ll = log_likelihood(
        &inst.design,
        inst.register.observed_outcome(),
        &inst.register.lambda_weights(),
        &beta,
    )
    .unwrap();
    assert_rel_close(ll, -n * 3.0f64.ln(), 1e-12, "loglik at zero");
}

#[test]
fn doubling_a_units_weight_doubles_its_contribution() {
    let x = simple_design(vec![vec![1.0, 0.5], vec![1.0, -0.3]]);
    let y = vec![Some(0u16), Some(1u16)];
    let beta = Coefficients::from_free(array![[0.4, -0.2]]).unwrap();
    let base = log_likelihood(&x, &y, &[1.0, 0.0], &beta).unwrap();
    let doubled = log_likelihood(&x, &y, &[2.0, 0.0], &beta).unwrap();
    assert_rel_close(doubled, 2.0 * base, 1e-14, "additivity");
}

#[test]
fn loglik_equals_sum_of_observed_log_probabilities() {
    let inst = random_instance(11, 60, 4, &[CovSpec::predictor(3), CovSpec::predictor(2)], 1.2, 0.5);
    let y = inst.register.observed_outcome();
    let w = inst.register.lambda_weights();
    let ll = log_likelihood(&inst.design, y, &w, &inst.beta).unwrap();
    let p = probabilities(&inst.design, &inst.beta).unwrap();
    let mut oracle = 0.0;
    for i in 0..60 {
        if w[i] > 0.0 {
            oracle += w[i] * p.row(i)[y[i].unwrap() as usize].ln();
        }
    }
    assert_rel_close(ll, oracle, 1e-12, "observed log-prob sum");
}

#[test]
fn single_unit_score_closed_form() {
    // one sampled unit, K=2, J=1, x=1, y = category 1, beta = 0
    let x = simple_design(vec![vec![1.0]]);
    let g = score(&x, &[Some(0)], &[1.0], &Coefficients::from_free(array![[0.0]]).unwrap()).unwrap();
    assert_eq!(g.len(), 1);
    assert!((g[0] - 0.5).abs() < 1e-15);
}

#[test]
fn score_matches_finite_difference_of_loglik() {
    let inst = random_instance(21, 20, 3, &[CovSpec::predictor(2), CovSpec::predictor(3)], 0.7, 1.0);
    let y = inst.register.observed_outcome();
    let w = inst.register.lambda_weights();
    let g = score(&inst.design, y, &w, &inst.beta).unwrap();
    let (km1, j) = inst.beta.free().dim();
    let step = 1e-6;
    for k in 0..km1 {
        for c in 0..j {
            let mut up = inst.beta.free().clone();
            up[[k, c]] += step;
            let mut dn = inst.beta.free().clone();
            dn[[k, c]] -= step;
            let fd = (log_likelihood(&inst.design, y, &w, &Coefficients::from_free(up).unwrap())
                .unwrap()
                - log_likelihood(&inst.design, y, &w, &Coefficients::from_free(dn).unwrap())
                    .unwrap())
                / (2.0 * step);
            assert_rel_close(g[k * j + c], fd, 1e-5, &format!("score ({k},{c})"));
        }
    }
}

#[test]
fn hessian_matches_finite_difference_of_score() {
    let inst = random_instance(23, 20, 3, &[CovSpec::predictor(2), CovSpec::predictor(2)], 0.6, 1.0);
    let y = inst.register.observed_outcome();
    let w = inst.register.lambda_weights();
    let a = hessian(&inst.design, &w, &inst.beta).unwrap();
    let (km1, j) = inst.beta.free().dim();
    let h = km1 * j;
    let step = 1e-6;
    for col in 0..h {
        let (k, c) = (col / j, col % j);
        let mut up = inst.beta.free().clone();
        up[[k, c]] += step;
        let mut dn = inst.beta.free().clone();
        dn[[k, c]] -= step;
        let gu = score(&inst.design, y, &w, &Coefficients::from_free(up).unwrap()).unwrap();
        let gd = score(&inst.design, y, &w, &Coefficients::from_free(dn).unwrap()).unwrap();
        for row in 0..h {
            let fd = (gu[row] - gd[row]) / (2.0 * step);
            let denom = a[[row, col]].abs().max(fd.abs()).max(1e-8);
            assert!(
                (a[[row, col]] - fd).abs() / denom <= 1e-5,
                "hessian ({row},{col}): {} vs fd {fd}",
                a[[row, col]]
            );
        }
    }
}

#[test]
fn hessian_zero_weights_and_k2_reduction() {
    let inst = random_instance(29, 15, 2, &[CovSpec::predictor(2), CovSpec::predictor(2)], 0.5, 1.0);
    let zero = hessian(&inst.design, &vec![0.0; 15], &inst.beta).unwrap();
    assert!(zero.iter().all(|&v| v == 0.0));
    // K=2 block formula collapses to the classical logistic Hessian
    let w = inst.register.lambda_weights();
    let a = hessian(&inst.design, &w, &inst.beta).unwrap();
    let p = probabilities(&inst.design, &inst.beta).unwrap();
    let j = inst.design.n_cols();
    let mut oracle = Array2::<f64>::zeros((j, j));
    for i in 0..15 {
        let pi = p.row(i)[0];
        let x = inst.design.row(i);
        for a_ in 0..j {
            for b in 0..j {
                oracle[[a_, b]] -= w[i] * x[a_] * x[b] * pi * (1.0 - pi);
            }
        }
    }
    assert!(max_rel_diff_mat(&a, &oracle, 1e-12) < 1e-12);
}

#[test]
fn hessian_is_concave_on_nondegenerate_data() {
    let inst = random_instance(31, 80, 4, &[CovSpec::predictor(3), CovSpec::predictor(2)], 1.0, 1.0);
    let a = hessian(&inst.design, &inst.register.lambda_weights(), &inst.beta).unwrap();
    let (eig, _) = linalg::jacobi_eigh(&a);
    assert!(eig.iter().all(|&e| e <= 1e-10), "eigenvalues {eig:?}");
}

#[test]
fn fit_recovers_known_coefficients_within_joint_error() {
    // census-style fit: N = n = 2000, K = 3, J = 3
    let inst = random_instance(37, 2000, 3, &[CovSpec::predictor(2), CovSpec::predictor(2)], 0.8, 1.0);
    let y = inst.register.observed_outcome();
    let w = inst.register.lambda_weights();
    let model = fit(&inst.design, y, &w, &FitOptions::default()).unwrap();
    assert!(model.converged);
    assert!(model.final_score_norm <= 1e-8 * 2000.0);
    // marginal three-sigma check per coordinate from the observed information
    let info = hessian(&inst.design, &w, &model.coefficients).unwrap().mapv(|v| -v);
    let l = linalg::cholesky(&info).unwrap();
    let h = info.nrows();
    let j = inst.design.n_cols();
    for idx in 0..h {
        let mut e = ndarray::Array1::<f64>::zeros(h);
        e[idx] = 1.0;
        let col = linalg::cholesky_solve_vec(&l, &e);
        let se = col[idx].sqrt();
        let (k, c) = (idx / j, idx % j);
        let err = (model.coefficients.free()[[k, c]] - inst.beta.free()[[k, c]]).abs();
        assert!(
            err <= 3.0 * se + 1e-6,
            "coefficient ({k},{c}) off by {err:.4} (3se = {:.4})",
            3.0 * se
        );
    }
}

#[test]
fn balanced_coin_gives_zero_intercept() {
    let x = simple_design((0..100).map(|_| vec![1.0]).collect());
    let y: Vec<Option<u16>> = (0..100).map(|i| Some((i % 2) as u16)).collect();
    let model = fit(&x, &y, &vec![1.0; 100], &FitOptions::default()).unwrap();
    assert!(model.coefficients.free()[[0, 0]].abs() < 1e-8);
}

#[test]
fn refit_on_modal_outcomes_converges() {
    let inst = random_instance(41, 400, 3, &[CovSpec::predictor(3)], 0.9, 1.0);
    let w = inst.register.lambda_weights();
    let first = fit(&inst.design, inst.register.observed_outcome(), &w, &FitOptions::default()).unwrap();
    let modal: Vec<Option<u16>> = (0..400)
        .map(|i| {
            let row = first.fitted_probabilities.row(i);
            let m = (0..3).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
            Some(m as u16)
        })
        .collect();
    // every category must survive the modal collapse for the refit
    let mut seen = [false; 3];
    for y in modal.iter().flatten() {
        seen[*y as usize] = true;
    }
    if seen.iter().all(|&s| s) {
        let second = fit(&inst.design, &modal, &w, &FitOptions::default()).unwrap();
        assert!(second.converged);
    }
}

#[test]
fn missing_category_is_reported_as_separation() {
    let x = simple_design(vec![vec![1.0], vec![1.0], vec![1.0]]);
    let y = vec![Some(0u16), Some(0), Some(2)];
    let err = gmse_core::fit_with_categories(&x, &y, &[1.0, 1.0, 1.0], &FitOptions::default(), None, 3)
        .unwrap_err();
    match err {
        gmse_core::Error::CategoriesAbsent { categories } => assert_eq!(categories, vec![2]),
        other => panic!("expected CategoriesAbsent, got {other}"),
    }
}

#[test]
fn baseline_relabelling_leaves_probabilities_unchanged() {
    let inst = random_instance(43, 300, 4, &[CovSpec::predictor(3), CovSpec::predictor(2)], 0.8, 1.0);
    let w = inst.register.lambda_weights();
    let y = inst.register.observed_outcome().to_vec();
    let direct = fit(&inst.design, &y, &w, &FitOptions::default()).unwrap();
    // swap categories 1 and K, refit, swap back
    let k = 4u16;
    let swapped: Vec<Option<u16>> = y
        .iter()
        .map(|o| {
            o.map(|c| match c {
                0 => k - 1,
                c if c == k - 1 => 0,
                c => c,
            })
        })
        .collect();
    let relabelled = fit(&inst.design, &swapped, &w, &FitOptions::default()).unwrap();
    for i in 0..300 {
        let a = direct.fitted_probabilities.row(i);
        let b = relabelled.fitted_probabilities.row(i);
        assert!((a[0] - b[3]).abs() < 1e-8);
        assert!((a[3] - b[0]).abs() < 1e-8);
        assert!((a[1] - b[1]).abs() < 1e-8);
        assert!((a[2] - b[2]).abs() < 1e-8);
    }
}

#[test]
fn predicted_totals_partition_over_external_domains() {
    let inst = random_instance(
        47,
        1500,
        3,
        &[CovSpec::predictor(3), CovSpec::predictor(2), CovSpec::external(9)],
        0.7,
        0.3,
    );
    let w = inst.register.lambda_weights();
    let model = fit(&inst.design, inst.register.observed_outcome(), &w, &FitOptions::default()).unwrap();
    let full = predict_totals(&model, &inst.register.full_domain());
    assert_rel_close(full.iter().sum::<f64>(), 1500.0, 1e-10, "totals sum to N");
    let parts = inst.register.domain_partition("c2").unwrap();
    assert_eq!(parts.len(), 9);
    assert!(parts.iter().all(|d| d.kind == gmse_core::DomainKind::External));
    let mut acc = vec![0.0; 3];
    for d in &parts {
        let t = predict_totals(&model, d);
        for (a, v) in acc.iter_mut().zip(t) {
            *a += v;
        }
    }
    for kk in 0..3 {
        assert_rel_close(acc[kk], full[kk], 1e-10, "partition additivity");
    }
    // empty domain predicts a zero vector
    let empty = inst.register.domain_vector("c2", "no-such-level").unwrap();
    assert!(empty.is_empty());
    assert_eq!(predict_totals(&model, &empty), vec![0.0, 0.0, 0.0]);
}

#[test]
fn coefficients_csv_round_trip() {
    let mut r = rng(55);
    let beta = random_beta(&mut r, 5, 7, 2.0);
    let terms: Vec<String> = (0..7).map(|i| format!("t{i}")).collect();
    let mut buf = Vec::new();
    beta.to_csv(&terms, &mut buf).unwrap();
    let (back, terms2) = Coefficients::from_csv(&buf[..]).unwrap();
    assert_eq!(terms, terms2);
    assert_eq!(beta.free(), back.free());
}

#[test]
fn design_columns_align_with_schema_order() {
    // deterministic column order: intercept, predictors in schema order,
    // levels in declared order minus reference
    let schema = schema_from_specs(&[CovSpec::predictor(3), CovSpec::predictor(2)], 3);
    let columns = vec![
        gmse_core::register::Column::from_codes(vec![2, 0]),
        gmse_core::register::Column::from_codes(vec![1, 0]),
    ];
    let d = build_design_matrix_from_columns(&schema, &columns, 2).unwrap();
    assert_eq!(
        d.column_names(),
        &["intercept".to_string(), "c0::2".into(), "c0::3".into(), "c1".into()]
    );
    assert_eq!(d.row(0), &[1.0, 0.0, 1.0, 1.0]);
    assert_eq!(d.row(1), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn schema_role_external_builds_no_design_column() {
    let schema = schema_from_specs(&[CovSpec::predictor(2), CovSpec::external(5)], 3);
    assert_eq!(schema.design_width(), 2);
    assert_eq!(schema.predictors().count(), 1);
    assert_eq!(schema.covariates().iter().filter(|c| c.role == Role::ExternalDomain).count(), 1);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Row-stochasticity of the stabilised probabilities under random
        /// coefficients, including large ones.
        #[test]
        fn probability_rows_sum_to_one(seed in 0u64..10_000, scale in 0.1f64..20.0) {
            let mut r = rng(seed);
            let x = simple_design(
                (0..30)
                    .map(|_| vec![1.0, r.random_range(0..2) as f64, r.random_range(0..2) as f64])
                    .collect(),
            );
            let beta = random_beta(&mut r, 4, 3, scale);
            let p = probabilities(&x, &beta).unwrap();
            for i in 0..30 {
                let s: f64 = p.row(i).iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
                prop_assert!(p.row(i).iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }

        /// Score components vanish at the fitted optimum.
        #[test]
        fn score_small_at_mle(seed in 0u64..500) {
            let inst = random_instance(seed, 250, 3, &[CovSpec::predictor(2), CovSpec::predictor(2)], 0.6, 1.0);
            let w = inst.register.lambda_weights();
            let model = fit(&inst.design, inst.register.observed_outcome(), &w, &FitOptions::default()).unwrap();
            if model.converged {
                let g = score(&inst.design, inst.register.observed_outcome(), &w, &model.coefficients).unwrap();
                let norm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                prop_assert!(norm <= 1e-8 * 250.0);
            }
        }
    }
}
