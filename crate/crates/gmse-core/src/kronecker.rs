//! Kronecker-form GMSE engine.
//!
//! Works in the stacked cell space of T = N*K (unit, category) pairs: the
//! covariate matrix `Xdot` has row `x_i  (x) e_k` restricted to the free
//! parameters, the probability vector and the derivative matrix `Delta` live
//! per cell, and a 0/1 selector column per (domain, category) turns one
//! sandwich product into all D*K results at once. Rather than materialising
//! the T x H matrices, all products use the known block structure, organised
//! as a block sum over unit ranges; partial blocks are summed before the
//! final sandwich, so the block size only changes floating-point grouping.
//!
//! This module is a deliberate second implementation of the linearised GMSE:
//! it shares no assembly or factorisation code with the summation-form
//! engine and is used to cross-check it.

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Coefficients;
use crate::parallel::DEFAULT_CHUNK;
use crate::register::DomainSpec;
use ndarray::{Array1, Array2};
use rayon::prelude::*;

/// Cell probabilities as a T-vector, cell (i,k) at index `i*K + k`.
/// `e = exp(Xdot beta)` with the baseline cell forced to `exp(0)`, divided by
/// the per-unit total; stabilised by the per-unit max linear predictor.
pub fn kf_probabilities(design: &DesignMatrix, beta: &Coefficients) -> Result<Vec<f64>> {
    let n = design.n_rows();
    let j = design.n_cols();
    if j != beta.design_width() {
        return Err(Error::Dimension("design width != coefficient width".into()));
    }
    let k = beta.categories();
    let expanded = beta.expanded(); // K x J, baseline row zero
    let es = expanded.as_slice().expect("row-major");
    let mut p = vec![0.0f64; n * k];
    let chunks: Vec<usize> = (0..n).step_by(DEFAULT_CHUNK).collect();
    let errs: Vec<Option<(usize, usize)>> = p
        .par_chunks_mut(DEFAULT_CHUNK * k)
        .zip(chunks)
        .map(|(slab, lo)| {
            let hi = (lo + DEFAULT_CHUNK).min(n);
            for i in lo..hi {
                let x_row = design.row(i);
                let cells = &mut slab[(i - lo) * k..(i - lo + 1) * k];
                let mut m = 0.0f64;
                for (c, cell) in cells.iter_mut().enumerate() {
                    let mut eta = 0.0;
                    let brow = &es[c * j..(c + 1) * j];
                    for (xv, bv) in x_row.iter().zip(brow) {
                        eta += xv * bv;
                    }
                    if !eta.is_finite() {
                        return Some((i, c));
                    }
                    *cell = eta;
                    if eta > m {
                        m = eta;
                    }
                }
                let mut d_plus = 0.0;
                for cell in cells.iter_mut() {
                    *cell = (*cell - m).exp();
                    d_plus += *cell;
                }
                for cell in cells.iter_mut() {
                    *cell /= d_plus;
                }
            }
            None
        })
        .collect();
    if let Some((i, c)) = errs.into_iter().flatten().next() {
        return Err(Error::NonFinitePredictor { unit: i + 1, category: c + 1 });
    }
    Ok(p)
}

/// `Gamma' y_hat`: totals for every (domain, category) pair simultaneously.
pub fn kf_totals(p_cells: &[f64], categories: usize, domains: &[DomainSpec]) -> Array2<f64> {
    let n = p_cells.len() / categories;
    let mut out = Array2::<f64>::zeros((domains.len(), categories));
    for (d, dom) in domains.iter().enumerate() {
        for i in 0..n {
            if dom.contains(i) {
                let cells = &p_cells[i * categories..(i + 1) * categories];
                for (kk, &v) in cells.iter().enumerate() {
                    out[[d, kk]] += v;
                }
            }
        }
    }
    out
}

/// Estimating-equation vector `G' lambda_dot` over the free parameters.
pub fn kf_score(
    design: &DesignMatrix,
    y: &[Option<u16>],
    weights: &[f64],
    beta: &Coefficients,
) -> Result<Array1<f64>> {
    let n = design.n_rows();
    if y.len() != n || weights.len() != n {
        return Err(Error::Dimension("outcome/weight length != design rows".into()));
    }
    let k = beta.categories();
    let j = design.n_cols();
    let h = (k - 1) * j;
    let p = kf_probabilities(design, beta)?;
    let mut g = Array1::<f64>::zeros(h);
    let gs = g.as_slice_mut().expect("contiguous");
    for i in 0..n {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let cat = match y[i] {
            Some(c) => c as usize,
            None => return Err(Error::Dimension(format!("row {i} weighted but outcome missing"))),
        };
        let x_row = design.row(i);
        let cells = &p[i * k..(i + 1) * k];
        // baseline cells map to the zero row of Xdot and drop out
        for c in 0..k - 1 {
            let r = w * (if cat == c { 1.0 } else { 0.0 } - cells[c]);
            if r == 0.0 {
                continue;
            }
            let block = &mut gs[c * j..(c + 1) * j];
            for (gv, &xv) in block.iter_mut().zip(x_row) {
                *gv += r * xv;
            }
        }
    }
    Ok(g)
}

/// `-(Xdot' W Delta)`: the Hessian over the free parameters with per-unit
/// weights (realised membership or inclusion probabilities).
pub fn kf_hessian(design: &DesignMatrix, weights: &[f64], beta: &Coefficients) -> Result<Array2<f64>> {
    let p = kf_probabilities(design, beta)?;
    Ok(kf_information(design, weights, &p, beta.categories(), DEFAULT_CHUNK).mapv_into(|v| -v))
}

/// `Xdot' W Delta` assembled cell-wise from the Kronecker structure.
fn kf_information(
    design: &DesignMatrix,
    weights: &[f64],
    p_cells: &[f64],
    categories: usize,
    block_size: usize,
) -> Array2<f64> {
    let n = design.n_rows();
    let j = design.n_cols();
    let km1 = categories - 1;
    let h = km1 * j;
    let blocks: Vec<std::ops::Range<usize>> = (0..n)
        .step_by(block_size.max(1))
        .map(|lo| lo..(lo + block_size.max(1)).min(n))
        .collect();
    let partials: Vec<Vec<f64>> = blocks
        .into_par_iter()
        .map(|range| {
            let mut acc = vec![0.0f64; h * h];
            for i in range {
                let w = weights[i];
                if w == 0.0 {
                    continue;
                }
                let x_row = design.row(i);
                let cells = &p_cells[i * categories..(i + 1) * categories];
                // cell (i,m) holds Delta row x_j' p_m (delta_ml - p_l);
                // Xdot row of that cell selects parameter block m.
                for m in 0..km1 {
                    let pm = cells[m];
                    for l in 0..km1 {
                        let c = w * pm * (if m == l { 1.0 } else { 0.0 } - cells[l]);
                        if c == 0.0 {
                            continue;
                        }
                        for a in 0..j {
                            let xa = x_row[a];
                            if xa == 0.0 {
                                continue;
                            }
                            let row_off = (m * j + a) * h + l * j;
                            let ca = c * xa;
                            for b in 0..j {
                                acc[row_off + b] += ca * x_row[b];
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0f64; h * h];
    for part in partials {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    Array2::from_shape_vec((h, h), total).expect("shape")
}

/// Cell-space quantities reusable across domain queries.
pub struct KroneckerWorkspace<'a> {
    design: &'a DesignMatrix,
    pi: &'a [f64],
    p_cells: Vec<f64>,
    categories: usize,
    block_size: usize,
}

impl<'a> KroneckerWorkspace<'a> {
    pub fn build(
        design: &'a DesignMatrix,
        beta: &Coefficients,
        pi: &'a [f64],
        block_size: Option<usize>,
    ) -> Result<Self> {
        if pi.len() != design.n_rows() {
            return Err(Error::Dimension("pi length != design rows".into()));
        }
        let p_cells = kf_probabilities(design, beta)?;
        Ok(Self {
            design,
            pi,
            p_cells,
            categories: beta.categories(),
            block_size: block_size.unwrap_or(DEFAULT_CHUNK),
        })
    }

    pub fn p_cells(&self) -> &[f64] {
        &self.p_cells
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    /// Linearised GMSE for every (domain, category) pair in one pass.
    ///
    /// Per unit block the selector product `Gamma' Delta`, the middle sum
    /// `sum pi_i Xdot_i Sigma_i Xdot_i'` and `-Abar` are accumulated; block
    /// partials are summed in block order before the single sandwich
    /// `diag(V M V')`, which is evaluated row-wise so the (D*K)^2 matrix is
    /// never stored.
    pub fn gmse(&self, domains: &[DomainSpec]) -> Result<Array2<f64>> {
        let n = self.design.n_rows();
        let j = self.design.n_cols();
        let k = self.categories;
        let km1 = k - 1;
        let h = km1 * j;
        let dk = domains.len() * k;
        for dom in domains {
            if dom.len_units() != n {
                return Err(Error::Dimension("domain length != register size".into()));
            }
        }
        let blocks: Vec<std::ops::Range<usize>> = (0..n)
            .step_by(self.block_size.max(1))
            .map(|lo| lo..(lo + self.block_size.max(1)).min(n))
            .collect();
        struct Partial {
            v: Vec<f64>,    // (D*K) x H selector-aggregated Delta rows
            meat: Vec<f64>, // H x H middle sum
            info: Vec<f64>, // H x H  (-Abar)
        }
        let partials: Vec<Partial> = blocks
            .into_par_iter()
            .map(|range| {
                let mut part = Partial {
                    v: vec![0.0f64; dk * h],
                    meat: vec![0.0f64; h * h],
                    info: vec![0.0f64; h * h],
                };
                for i in range {
                    let x_row = self.design.row(i);
                    let cells = &self.p_cells[i * k..(i + 1) * k];
                    let w = self.pi[i];
                    // Delta rows of this unit feed every selected (d, cat)
                    for (d, dom) in domains.iter().enumerate() {
                        if !dom.contains(i) {
                            continue;
                        }
                        for cat in 0..k {
                            let pc = cells[cat];
                            if pc == 0.0 {
                                continue;
                            }
                            let vrow = &mut part.v[(d * k + cat) * h..(d * k + cat + 1) * h];
                            for l in 0..km1 {
                                let c = pc * (if l == cat { 1.0 } else { 0.0 } - cells[l]);
                                if c == 0.0 {
                                    continue;
                                }
                                let seg = &mut vrow[l * j..(l + 1) * j];
                                for (vv, &xv) in seg.iter_mut().zip(x_row) {
                                    *vv += c * xv;
                                }
                            }
                        }
                    }
                    if w == 0.0 {
                        continue;
                    }
                    // meat and -Abar share the free-basis Sigma_i structure
                    for m in 0..km1 {
                        let pm = cells[m];
                        for l in 0..km1 {
                            let s = pm * (if m == l { 1.0 } else { 0.0 } - cells[l]);
                            let c = w * s;
                            if c == 0.0 {
                                continue;
                            }
                            for a in 0..j {
                                let xa = x_row[a];
                                if xa == 0.0 {
                                    continue;
                                }
                                let ca = c * xa;
                                let row_off = (m * j + a) * h + l * j;
                                for b in 0..j {
                                    let val = ca * x_row[b];
                                    part.meat[row_off + b] += val;
                                    part.info[row_off + b] += val;
                                }
                            }
                        }
                    }
                }
                part
            })
            .collect();
        let mut v = vec![0.0f64; dk * h];
        let mut meat = vec![0.0f64; h * h];
        let mut info = vec![0.0f64; h * h];
        for part in partials {
            for (t, x) in v.iter_mut().zip(part.v) {
                *t += x;
            }
            for (t, x) in meat.iter_mut().zip(part.meat) {
                *t += x;
            }
            for (t, x) in info.iter_mut().zip(part.info) {
                *t += x;
            }
        }
        let info = Array2::from_shape_vec((h, h), info).expect("shape");
        let meat = Array2::from_shape_vec((h, h), meat).expect("shape");
        // M = (-Abar)^{-1} S (-Abar)^{-1} via this engine's own solver.
        let half = linalg::gauss_solve(&info, &meat).ok_or(Error::NotPositiveDefinite)?;
        let middle = linalg::gauss_solve(&info, &half.t().to_owned())
            .ok_or(Error::NotPositiveDefinite)?;
        let mut out = Array2::<f64>::zeros((domains.len(), k));
        for d in 0..domains.len() {
            for cat in 0..k {
                let vrow = &v[(d * k + cat) * h..(d * k + cat + 1) * h];
                // w = M v ; gmse = v . w
                let mut q = 0.0;
                let mut scale = 0.0;
                for a in 0..h {
                    let va = vrow[a];
                    if va == 0.0 {
                        continue;
                    }
                    let mut dot = 0.0;
                    let mut dot_abs = 0.0;
                    for b in 0..h {
                        let m = middle[[a, b]];
                        dot += m * vrow[b];
                        dot_abs += m.abs() * vrow[b].abs();
                    }
                    q += va * dot;
                    scale += va.abs() * dot_abs;
                }
                if q < 0.0 {
                    if q >= -1e-9 * scale.max(f64::MIN_POSITIVE) {
                        q = 0.0;
                    } else {
                        return Err(Error::NegativeGmse { category: cat + 1, value: q });
                    }
                }
                out[[d, cat]] = q;
            }
        }
        Ok(out)
    }
}
