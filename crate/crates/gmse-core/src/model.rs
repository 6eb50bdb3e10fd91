//! Multinomial logistic model with the last category as baseline:
//! probabilities, log-likelihood, score, Hessian, Newton fitting and
//! register-wide prediction of category totals.

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::parallel::Reduction;
use crate::register::DomainSpec;
use ndarray::{Array1, Array2};
use std::io::{Read, Write};

/// Free coefficient block: rows are the K-1 non-baseline categories, columns
/// the design terms. Category K is pinned to the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    free: Array2<f64>,
}

impl Coefficients {
    pub fn from_free(free: Array2<f64>) -> Result<Self> {
        if free.nrows() == 0 {
            return Err(Error::Dimension("need at least one free category".into()));
        }
        if free.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dimension("coefficients must be finite".into()));
        }
        Ok(Self { free })
    }

    pub fn zeros(categories: usize, design_width: usize) -> Self {
        Self { free: Array2::zeros((categories - 1, design_width)) }
    }

    pub fn categories(&self) -> usize {
        self.free.nrows() + 1
    }

    pub fn design_width(&self) -> usize {
        self.free.ncols()
    }

    pub fn free(&self) -> &Array2<f64> {
        &self.free
    }

    /// K x J matrix with the baseline row of zeros appended.
    pub fn expanded(&self) -> Array2<f64> {
        let (km1, j) = self.free.dim();
        let mut out = Array2::zeros((km1 + 1, j));
        out.slice_mut(ndarray::s![..km1, ..]).assign(&self.free);
        out
    }

    pub fn from_expanded(expanded: Array2<f64>) -> Result<Self> {
        let k = expanded.nrows();
        if k < 2 {
            return Err(Error::Dimension("need at least 2 categories".into()));
        }
        if expanded.row(k - 1).iter().any(|&v| v != 0.0) {
            return Err(Error::Dimension("baseline row must be zero".into()));
        }
        Self::from_free(expanded.slice(ndarray::s![..k - 1, ..]).to_owned())
    }

    /// Writes the coefficient table: one row per design term, one column per
    /// category, the baseline column present and zero.
    pub fn to_csv<W: Write>(&self, term_names: &[String], writer: W) -> Result<()> {
        let (km1, j) = self.free.dim();
        if term_names.len() != j {
            return Err(Error::Dimension("term names do not match design width".into()));
        }
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["term".to_string()];
        header.extend((1..=km1 + 1).map(|k| format!("cat_{k}")));
        w.write_record(&header)?;
        for t in 0..j {
            let mut rec = vec![term_names[t].clone()];
            for k in 0..km1 {
                rec.push(format!("{}", self.free[[k, t]]));
            }
            rec.push("0".into());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the table written by [`Coefficients::to_csv`]; returns the
    /// coefficients together with the term names.
    pub fn from_csv<R: Read>(reader: R) -> Result<(Self, Vec<String>)> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 3 || headers.get(0) != Some("term") {
            return Err(Error::Dimension("coefficient CSV must start with a 'term' column".into()));
        }
        let k = headers.len() - 1;
        let mut terms = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            terms.push(rec.get(0).unwrap_or("").to_string());
            let mut row = Vec::with_capacity(k);
            for c in 1..=k {
                let raw = rec.get(c).unwrap_or("");
                row.push(raw.parse::<f64>().map_err(|_| {
                    Error::Dimension(format!("bad coefficient '{raw}' in row '{}'", terms.last().unwrap()))
                })?);
            }
            rows.push(row);
        }
        let j = rows.len();
        if j == 0 {
            return Err(Error::Dimension("coefficient CSV has no rows".into()));
        }
        let mut expanded = Array2::zeros((k, j));
        for (t, row) in rows.iter().enumerate() {
            for (cat, &v) in row.iter().enumerate() {
                expanded[[cat, t]] = v;
            }
        }
        Ok((Self::from_expanded(expanded)?, terms))
    }
}

/// N x K matrix of category probabilities.
#[derive(Debug, Clone)]
pub struct ProbabilityMatrix {
    p: Array2<f64>,
}

impl ProbabilityMatrix {
    /// Wraps an N x K matrix, enforcing the row-stochasticity invariant.
    pub fn from_array(p: Array2<f64>) -> Result<Self> {
        let m = Self { p };
        m.validate()?;
        Ok(m)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.p
    }

    pub fn n_units(&self) -> usize {
        self.p.nrows()
    }

    pub fn categories(&self) -> usize {
        self.p.ncols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.p.ncols();
        &self.p.as_slice().expect("row-major")[i * k..(i + 1) * k]
    }

    /// Checks the type invariants: entries in (0,1) and row sums within
    /// `1e-12` of one.
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.n_units() {
            let row = self.row(i);
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::Dimension(format!("probability row {i} sums to {s}")));
            }
            if row.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
                return Err(Error::Dimension(format!("probability row {i} has entries outside (0,1)")));
            }
        }
        Ok(())
    }
}

/// Writes the probability row for one design row into `out` (length K),
/// stabilised by subtracting the max linear predictor (baseline included).
#[inline]
fn probability_row(x_row: &[f64], free: &Array2<f64>, out: &mut [f64]) -> std::result::Result<(), usize> {
    let km1 = free.nrows();
    let j = free.ncols();
    let fs = free.as_slice().expect("row-major");
    let mut m = 0.0f64; // baseline eta = 0
    for k in 0..km1 {
        let mut eta = 0.0;
        let brow = &fs[k * j..(k + 1) * j];
        for (xv, bv) in x_row.iter().zip(brow) {
            eta += xv * bv;
        }
        if !eta.is_finite() {
            return Err(k);
        }
        out[k] = eta;
        if eta > m {
            m = eta;
        }
    }
    let mut denom = (-m).exp(); // baseline term
    for k in 0..km1 {
        let e = (out[k] - m).exp();
        out[k] = e;
        denom += e;
    }
    out[km1] = (-m).exp();
    for v in out.iter_mut() {
        *v /= denom;
    }
    Ok(())
}

/// Fitted probabilities for every design row.
pub fn probabilities(x: &DesignMatrix, beta: &Coefficients) -> Result<ProbabilityMatrix> {
    if x.n_cols() != beta.design_width() {
        return Err(Error::Dimension(format!(
            "design has {} columns, coefficients expect {}",
            x.n_cols(),
            beta.design_width()
        )));
    }
    let n = x.n_rows();
    let k = beta.categories();
    let mut p = Array2::<f64>::zeros((n, k));
    {
        let ps = p.as_slice_mut().expect("row-major");
        use rayon::prelude::*;
        let errs: Vec<Option<(usize, usize)>> = ps
            .par_chunks_mut(k)
            .enumerate()
            .map(|(i, out)| match probability_row(x.row(i), beta.free(), out) {
                Ok(()) => None,
                Err(cat) => Some((i, cat)),
            })
            .collect();
        if let Some((unit, category)) = errs.into_iter().flatten().next() {
            return Err(Error::NonFinitePredictor { unit: unit + 1, category: category + 1 });
        }
    }
    Ok(ProbabilityMatrix { p })
}

fn active_units(y: &[Option<u16>], weights: &[f64]) -> Result<Vec<(usize, usize, f64)>> {
    if y.len() != weights.len() {
        return Err(Error::Dimension("outcomes and weights differ in length".into()));
    }
    let mut act = Vec::new();
    for i in 0..y.len() {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        if w < 0.0 || !w.is_finite() {
            return Err(Error::Dimension(format!("negative or non-finite weight at row {i}")));
        }
        match y[i] {
            Some(cat) => act.push((i, cat as usize, w)),
            None => {
                return Err(Error::Dimension(format!("row {i} has positive weight but no outcome")))
            }
        }
    }
    Ok(act)
}

/// Weighted multinomial log-likelihood; rows with zero weight contribute
/// exactly zero.
pub fn log_likelihood(
    x: &DesignMatrix,
    y: &[Option<u16>],
    weights: &[f64],
    beta: &Coefficients,
) -> Result<f64> {
    let active = active_units(y, weights)?;
    Ok(loglik_active(x, &active, beta.free()))
}

fn loglik_active(x: &DesignMatrix, active: &[(usize, usize, f64)], free: &Array2<f64>) -> f64 {
    let km1 = free.nrows();
    let j = free.ncols();
    let fs = free.as_slice().expect("row-major");
    let mut ll = 0.0;
    let mut etas = vec![0.0f64; km1];
    for &(i, cat, w) in active {
        let x_row = x.row(i);
        let mut m = 0.0f64;
        for k in 0..km1 {
            let mut eta = 0.0;
            let brow = &fs[k * j..(k + 1) * j];
            for (xv, bv) in x_row.iter().zip(brow) {
                eta += xv * bv;
            }
            etas[k] = eta;
            if eta > m {
                m = eta;
            }
        }
        let mut denom = (-m).exp();
        for k in 0..km1 {
            denom += (etas[k] - m).exp();
        }
        let eta_obs = if cat < km1 { etas[cat] } else { 0.0 };
        ll += w * (eta_obs - m - denom.ln());
    }
    ll
}

/// Score vector of the weighted log-likelihood, laid out category-major:
/// component (k, j) sits at `k * J + j`, k = 1..K-1.
pub fn score(
    x: &DesignMatrix,
    y: &[Option<u16>],
    weights: &[f64],
    beta: &Coefficients,
) -> Result<Array1<f64>> {
    let active = active_units(y, weights)?;
    let p = probabilities(x, beta)?;
    Ok(score_active(x, &active, &p, beta.categories()))
}

fn score_active(
    x: &DesignMatrix,
    active: &[(usize, usize, f64)],
    p: &ProbabilityMatrix,
    categories: usize,
) -> Array1<f64> {
    let km1 = categories - 1;
    let j = x.n_cols();
    let mut g = Array1::<f64>::zeros(km1 * j);
    let gs = g.as_slice_mut().expect("contiguous");
    for &(i, cat, w) in active {
        let x_row = x.row(i);
        let p_row = p.row(i);
        for k in 0..km1 {
            let resid = w * (if cat == k { 1.0 } else { 0.0 } - p_row[k]);
            if resid == 0.0 {
                continue;
            }
            let block = &mut gs[k * j..(k + 1) * j];
            for (gv, xv) in block.iter_mut().zip(x_row) {
                *gv += resid * xv;
            }
        }
    }
    g
}

/// `sum_i w_i Xdot_i Sigma_{Y_i} Xdot_i^T` over the free categories: the
/// multinomial information matrix at the given probabilities. The Hessian of
/// the log-likelihood is its negative.
pub fn information_matrix(
    x: &DesignMatrix,
    weights: &[f64],
    p: &ProbabilityMatrix,
    reduction: Reduction,
) -> Array2<f64> {
    let n = x.n_rows();
    let j = x.n_cols();
    let km1 = p.categories() - 1;
    let h = km1 * j;
    let flat = reduction.map_reduce(
        n,
        || vec![0.0f64; h * h],
        |range, acc| {
            let mut xx = vec![0.0f64; j * j];
            for i in range {
                let w = weights[i];
                if w == 0.0 {
                    continue;
                }
                let x_row = x.row(i);
                for a in 0..j {
                    let xa = x_row[a];
                    if xa == 0.0 {
                        for b in a..j {
                            xx[a * j + b] = 0.0;
                        }
                        continue;
                    }
                    for b in a..j {
                        xx[a * j + b] = xa * x_row[b];
                    }
                }
                let p_row = p.row(i);
                for k in 0..km1 {
                    let pk = p_row[k];
                    if pk == 0.0 {
                        continue;
                    }
                    for l in k..km1 {
                        let s = if l == k { pk * (1.0 - pk) } else { -pk * p_row[l] };
                        let c = w * s;
                        if c == 0.0 {
                            continue;
                        }
                        // upper triangle of the (k,l) block
                        for a in 0..j {
                            let row_off = (k * j + a) * h + l * j;
                            for b in a..j {
                                acc[row_off + b] += c * xx[a * j + b];
                            }
                        }
                    }
                }
            }
        },
        |tot, part| {
            for (t, v) in tot.iter_mut().zip(part) {
                *t += v;
            }
        },
    );
    let mut m = Array2::from_shape_vec((h, h), flat).expect("shape");
    // mirror within-block lower triangles, then lower blocks
    for k in 0..km1 {
        for l in k..km1 {
            for a in 0..j {
                for b in a + 1..j {
                    let v = m[[k * j + a, l * j + b]];
                    m[[k * j + b, l * j + a]] = v;
                }
            }
        }
    }
    for k in 0..km1 {
        for l in 0..k {
            for a in 0..j {
                for b in 0..j {
                    m[[k * j + a, l * j + b]] = m[[l * j + b, k * j + a]];
                }
            }
        }
    }
    m
}

/// Hessian of the weighted log-likelihood at `beta`. Accepts either realised
/// sample membership (fitting) or inclusion probabilities (the plug-in form)
/// as weights.
pub fn hessian(x: &DesignMatrix, weights: &[f64], beta: &Coefficients) -> Result<Array2<f64>> {
    if weights.len() != x.n_rows() {
        return Err(Error::Dimension("weights length != design rows".into()));
    }
    if weights.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
        return Err(Error::Dimension("hessian weights must lie in [0,1]".into()));
    }
    let p = probabilities(x, beta)?;
    let mut info = information_matrix(x, weights, &p, Reduction::default());
    info.mapv_inplace(|v| -v);
    Ok(info)
}

/// Options for Newton-Raphson fitting.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Convergence when the score max-norm falls below `tol * sum(weights)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Ridge added to the negated Hessian when its Cholesky fails.
    pub ridge: f64,
    pub reduction: Reduction,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100, ridge: 1e-8, reduction: Reduction::default() }
    }
}

/// A fitted model: coefficients, mass-imputed probabilities for every
/// register unit, and convergence diagnostics.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub coefficients: Coefficients,
    pub fitted_probabilities: ProbabilityMatrix,
    pub iterations: usize,
    pub final_score_norm: f64,
    pub ridge_used: f64,
    pub converged: bool,
}

/// Maximum-likelihood fit by Newton-Raphson with step halving.
///
/// `weights` is the realised sample membership (0/1) or, for resampling,
/// nonnegative replication counts. Probabilities are imputed for all rows of
/// `x`, sampled or not.
pub fn fit(
    x: &DesignMatrix,
    y: &[Option<u16>],
    weights: &[f64],
    options: &FitOptions,
) -> Result<FittedModel> {
    fit_from(x, y, weights, options, None)
}

/// As [`fit`] but starting Newton from `start` (used to warm-start replicate
/// refits; the optimum is unchanged).
pub fn fit_from(
    x: &DesignMatrix,
    y: &[Option<u16>],
    weights: &[f64],
    options: &FitOptions,
    start: Option<&Coefficients>,
) -> Result<FittedModel> {
    let active = active_units(y, weights)?;
    if active.is_empty() {
        return Err(Error::Register("no units with positive weight".into()));
    }
    // K comes from the warm start when given; otherwise from the largest
    // observed category (fitting requires every category present anyway).
    let categories = match start {
        Some(b) => b.categories(),
        None => active.iter().map(|&(_, c, _)| c).max().unwrap() + 1,
    };
    fit_with_categories(x, y, weights, options, start, categories)
}

/// As [`fit_from`] with the category count given explicitly (the register
/// knows K even when the realised sample lacks a category).
pub fn fit_with_categories(
    x: &DesignMatrix,
    y: &[Option<u16>],
    weights: &[f64],
    options: &FitOptions,
    start: Option<&Coefficients>,
    categories: usize,
) -> Result<FittedModel> {
    let active = active_units(y, weights)?;
    if active.is_empty() {
        return Err(Error::Register("no units with positive weight".into()));
    }
    let mut present = vec![false; categories];
    let mut n_eff = 0.0;
    for &(_, cat, w) in &active {
        if cat >= categories {
            return Err(Error::Dimension(format!("outcome {} exceeds {categories} categories", cat + 1)));
        }
        present[cat] = true;
        n_eff += w;
    }
    let absent: Vec<usize> = present
        .iter()
        .enumerate()
        .filter(|(_, &p)| !p)
        .map(|(k, _)| k + 1)
        .collect();
    if !absent.is_empty() {
        return Err(Error::CategoriesAbsent { categories: absent });
    }

    let j = x.n_cols();
    let mut beta = match start {
        Some(b) => {
            if b.design_width() != j || b.categories() != categories {
                return Err(Error::Dimension("warm start has wrong shape".into()));
            }
            b.clone()
        }
        None => Coefficients::zeros(categories, j),
    };
    let tol_abs = options.tol * n_eff;
    let mut ll = loglik_active(x, &active, beta.free());
    if !ll.is_finite() {
        return Err(Error::Dimension("log-likelihood not finite at start".into()));
    }
    let mut ridge_used = 0.0f64;
    let mut steps = 0usize;
    let mut score_norm = f64::INFINITY;
    let mut converged = false;
    for _ in 0..options.max_iter {
        let p = probabilities_active(x, &active, &beta)?;
        let g = score_active_subset(x, &active, &p, categories);
        score_norm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if score_norm <= tol_abs {
            converged = true;
            break;
        }
        let info = information_matrix_active(x, &active, &p, categories, options.reduction);
        let (l, delta) = factor_with_ridge(&info, options.ridge)?;
        if delta > ridge_used {
            ridge_used = delta;
            log::warn!("fit: singular Hessian, ridge {delta:.1e} applied");
        }
        let direction = linalg::cholesky_solve_vec(&l, &g);
        // step-halving line search on the log-likelihood
        let mut alpha = 1.0f64;
        let mut accepted = false;
        for _ in 0..40 {
            let mut cand = beta.free().clone();
            for (k, c) in cand.iter_mut().enumerate() {
                *c += alpha * direction[k];
            }
            let cand = Coefficients::from_free(cand)?;
            let ll_cand = loglik_active(x, &active, cand.free());
            if ll_cand.is_finite() && ll_cand >= ll - 1e-12 {
                beta = cand;
                ll = ll_cand;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        steps += 1;
    }
    if !converged {
        // score norm at the final iterate
        let p = probabilities_active(x, &active, &beta)?;
        let g = score_active_subset(x, &active, &p, categories);
        score_norm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        converged = score_norm <= tol_abs;
        if !converged {
            log::warn!(
                "fit: no convergence after {steps} Newton steps (score norm {score_norm:.3e}, tolerance {tol_abs:.3e})"
            );
        }
    }
    let fitted = probabilities(x, &beta)?;
    Ok(FittedModel {
        coefficients: beta,
        fitted_probabilities: fitted,
        iterations: steps,
        final_score_norm: score_norm,
        ridge_used,
        converged,
    })
}

/// Probabilities only for the active rows, keyed by active index.
struct ActiveProbs {
    p: Vec<f64>,
    k: usize,
}

impl ActiveProbs {
    fn row(&self, a: usize) -> &[f64] {
        &self.p[a * self.k..(a + 1) * self.k]
    }
}

fn probabilities_active(
    x: &DesignMatrix,
    active: &[(usize, usize, f64)],
    beta: &Coefficients,
) -> Result<ActiveProbs> {
    let k = beta.categories();
    let mut p = vec![0.0f64; active.len() * k];
    for (a, &(i, _, _)) in active.iter().enumerate() {
        probability_row(x.row(i), beta.free(), &mut p[a * k..(a + 1) * k])
            .map_err(|cat| Error::NonFinitePredictor { unit: i + 1, category: cat + 1 })?;
    }
    Ok(ActiveProbs { p, k })
}

fn score_active_subset(
    x: &DesignMatrix,
    active: &[(usize, usize, f64)],
    p: &ActiveProbs,
    categories: usize,
) -> Array1<f64> {
    let km1 = categories - 1;
    let j = x.n_cols();
    let mut g = Array1::<f64>::zeros(km1 * j);
    let gs = g.as_slice_mut().expect("contiguous");
    for (a, &(i, cat, w)) in active.iter().enumerate() {
        let x_row = x.row(i);
        let p_row = p.row(a);
        for k in 0..km1 {
            let resid = w * (if cat == k { 1.0 } else { 0.0 } - p_row[k]);
            if resid == 0.0 {
                continue;
            }
            let block = &mut gs[k * j..(k + 1) * j];
            for (gv, xv) in block.iter_mut().zip(x_row) {
                *gv += resid * xv;
            }
        }
    }
    g
}

fn information_matrix_active(
    x: &DesignMatrix,
    active: &[(usize, usize, f64)],
    p: &ActiveProbs,
    categories: usize,
    reduction: Reduction,
) -> Array2<f64> {
    let j = x.n_cols();
    let km1 = categories - 1;
    let h = km1 * j;
    let flat = reduction.map_reduce(
        active.len(),
        || vec![0.0f64; h * h],
        |range, acc| {
            let mut xx = vec![0.0f64; j * j];
            for a in range {
                let (i, _, w) = active[a];
                let x_row = x.row(i);
                for c in 0..j {
                    let xc = x_row[c];
                    for b in c..j {
                        xx[c * j + b] = xc * x_row[b];
                    }
                }
                let p_row = p.row(a);
                for k in 0..km1 {
                    let pk = p_row[k];
                    for l in k..km1 {
                        let s = if l == k { pk * (1.0 - pk) } else { -pk * p_row[l] };
                        let c = w * s;
                        if c == 0.0 {
                            continue;
                        }
                        for aa in 0..j {
                            let row_off = (k * j + aa) * h + l * j;
                            for b in aa..j {
                                acc[row_off + b] += c * xx[aa * j + b];
                            }
                        }
                    }
                }
            }
        },
        |tot, part| {
            for (t, v) in tot.iter_mut().zip(part) {
                *t += v;
            }
        },
    );
    let mut m = Array2::from_shape_vec((h, h), flat).expect("shape");
    for k in 0..km1 {
        for l in k..km1 {
            for a in 0..j {
                for b in a + 1..j {
                    let v = m[[k * j + a, l * j + b]];
                    m[[k * j + b, l * j + a]] = v;
                }
            }
        }
    }
    for k in 0..km1 {
        for l in 0..k {
            for a in 0..j {
                for b in 0..j {
                    m[[k * j + a, l * j + b]] = m[[l * j + b, k * j + a]];
                }
            }
        }
    }
    m
}

/// Cholesky of `info`, retrying with an escalating ridge when it fails.
/// Returns the factor and the ridge actually applied (0 when none).
pub(crate) fn factor_with_ridge(info: &Array2<f64>, ridge: f64) -> Result<(Array2<f64>, f64)> {
    if let Some(l) = linalg::cholesky(info) {
        return Ok((l, 0.0));
    }
    let h = info.nrows();
    let mut delta = ridge.max(f64::MIN_POSITIVE);
    for _ in 0..7 {
        let mut bumped = info.clone();
        for d in 0..h {
            bumped[[d, d]] += delta;
        }
        if let Some(l) = linalg::cholesky(&bumped) {
            return Ok((l, delta));
        }
        delta *= 10.0;
    }
    Err(Error::NotPositiveDefinite)
}

/// Mass-imputation totals: `theta_k = sum_{i in d} p_ik`.
pub fn predict_totals(model: &FittedModel, domain: &DomainSpec) -> Vec<f64> {
    predict_totals_from(&model.fitted_probabilities, domain)
}

pub fn predict_totals_from(p: &ProbabilityMatrix, domain: &DomainSpec) -> Vec<f64> {
    let k = p.categories();
    let mut theta = vec![0.0f64; k];
    for i in 0..p.n_units() {
        if domain.contains(i) {
            let row = p.row(i);
            for (t, &v) in theta.iter_mut().zip(row) {
                *t += v;
            }
        }
    }
    theta
}
