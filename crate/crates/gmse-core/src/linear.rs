//! Linearised GMSE in summation form.
//!
//! One cache build per fitted model gives `gamma' F_k M F_k' gamma` for any
//! domain without touching the sampled outcomes again: the middle matrix
//! `M = Abar^{-1} (sum_i pi_i Xdot_i Sigma_{Y_i} Xdot_i') Abar^{-T}` is
//! domain-free, and a domain enters only through the aggregated derivative
//! rows `v_k = sum_{i in d} F_k(i)`.

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{information_matrix, FittedModel, ProbabilityMatrix};
use crate::parallel::Reduction;
use crate::register::{DomainSpec, Register};
use ndarray::{Array1, Array2};

/// Derivative block of the category probabilities of one unit with respect
/// to every free coefficient: entry `(k, l*J+j)` is `x_j p_k (delta_kl - p_l)`.
pub fn f_matrix_row(x_row: &[f64], p_row: &[f64]) -> Array2<f64> {
    let j = x_row.len();
    let k = p_row.len();
    let h = (k - 1) * j;
    let mut f = Array2::<f64>::zeros((k, h));
    for target in 0..k {
        let pk = p_row[target];
        for l in 0..k - 1 {
            let c = pk * (if l == target { 1.0 } else { 0.0 } - p_row[l]);
            for (jj, &xv) in x_row.iter().enumerate() {
                f[[target, l * j + jj]] = c * xv;
            }
        }
    }
    f
}

/// Per-unit outcome covariance in the free-category basis; fills the
/// `(K-1) x (K-1)` row-major buffer. The default is the multinomial
/// covariance `diag(p) - p p'`; models with dependent outcomes can plug in
/// their own estimate here.
pub type UnitCovariance<'a> = dyn Fn(usize, &[f64], &mut [f64]) + Sync + 'a;

fn multinomial_covariance(_unit: usize, p_row: &[f64], out: &mut [f64]) {
    let km1 = p_row.len() - 1;
    for k in 0..km1 {
        for l in 0..km1 {
            out[k * km1 + l] = p_row[k] * (if k == l { 1.0 } else { 0.0 } - p_row[l]);
        }
    }
}

#[derive(Debug, Clone)]
pub struct CacheOptions {
    pub ridge: f64,
    /// Build even when the fit did not converge.
    pub allow_nonconverged: bool,
    pub reduction: Reduction,
}

impl Default for CacheOptions {
    fn default() -> Self {
        Self { ridge: 1e-8, allow_nonconverged: false, reduction: Reduction::default() }
    }
}

/// Numerical fallbacks taken while building a cache.
#[derive(Debug, Clone, Copy, Default)]
pub struct CacheFlags {
    pub ridge_used: f64,
    pub pseudo_inverse: bool,
}

impl CacheFlags {
    pub fn any(&self) -> bool {
        self.ridge_used > 0.0 || self.pseudo_inverse
    }
}

enum SpdSolver {
    Chol(Array2<f64>),
    Pinv(Array2<f64>),
}

impl SpdSolver {
    fn solve_mat(&self, b: &Array2<f64>) -> Array2<f64> {
        match self {
            SpdSolver::Chol(l) => linalg::cholesky_solve_mat(l, b),
            SpdSolver::Pinv(p) => p.dot(b),
        }
    }
}

/// Factorisation of `-Abar` plus the domain-free middle matrix, reusable
/// across arbitrary domain queries.
pub struct PluginCache {
    middle: Array2<f64>,
    design: DesignMatrix,
    probabilities: ProbabilityMatrix,
    categories: usize,
    reduction: Reduction,
    pub flags: CacheFlags,
}

impl PluginCache {
    /// Builds the cache with the multinomial outcome covariance.
    pub fn build(
        model: &FittedModel,
        register: &Register,
        design: &DesignMatrix,
        options: &CacheOptions,
    ) -> Result<Self> {
        Self::build_with_covariance(model, register, design, options, None)
    }

    /// As [`PluginCache::build`] with a custom per-unit outcome covariance
    /// in place of `diag(p) - p p'`.
    pub fn build_with_covariance(
        model: &FittedModel,
        register: &Register,
        design: &DesignMatrix,
        options: &CacheOptions,
        covariance: Option<&UnitCovariance>,
    ) -> Result<Self> {
        if !model.converged && !options.allow_nonconverged {
            return Err(Error::NonConvergedModel);
        }
        let n = design.n_rows();
        if register.n_units() != n || model.fitted_probabilities.n_units() != n {
            return Err(Error::Dimension("model, register and design disagree on N".into()));
        }
        let pi = register.inclusion_prob();
        let p = &model.fitted_probabilities;
        let k = p.categories();
        let j = design.n_cols();
        let h = (k - 1) * j;

        // -Abar: information matrix with pi weights at the fitted p.
        let info = information_matrix(design, pi, p, options.reduction);
        let mut flags = CacheFlags::default();
        let solver = match linalg::cholesky(&info) {
            Some(l) => SpdSolver::Chol(l),
            None => {
                let mut solved = None;
                let mut delta = options.ridge.max(f64::MIN_POSITIVE);
                for _ in 0..7 {
                    let mut bumped = info.clone();
                    for d in 0..h {
                        bumped[[d, d]] += delta;
                    }
                    if let Some(l) = linalg::cholesky(&bumped) {
                        solved = Some((l, delta));
                        break;
                    }
                    delta *= 10.0;
                }
                match solved {
                    Some((l, delta)) => {
                        flags.ridge_used = delta;
                        log::warn!("plugin cache: -Abar not positive definite, ridge {delta:.1e} applied");
                        SpdSolver::Chol(l)
                    }
                    None => {
                        flags.pseudo_inverse = true;
                        log::warn!("plugin cache: ridge retries failed, falling back to pseudo-inverse");
                        SpdSolver::Pinv(linalg::pinv_sym(&info, 1e-12))
                    }
                }
            }
        };

        // Middle term sum_i pi_i Xdot_i Sigma_{Y_i} Xdot_i' in the free basis.
        let cov = covariance.unwrap_or(&multinomial_covariance);
        let km1 = k - 1;
        let meat_flat = options.reduction.map_reduce(
            n,
            || vec![0.0f64; h * h],
            |range, acc| {
                let mut sigma = vec![0.0f64; km1 * km1];
                let mut xx = vec![0.0f64; j * j];
                for i in range {
                    let w = pi[i];
                    if w == 0.0 {
                        continue;
                    }
                    let x_row = design.row(i);
                    for a in 0..j {
                        let xa = x_row[a];
                        for b in 0..j {
                            xx[a * j + b] = xa * x_row[b];
                        }
                    }
                    cov(i, p.row(i), &mut sigma);
                    for kk in 0..km1 {
                        for ll in 0..km1 {
                            let c = w * sigma[kk * km1 + ll];
                            if c == 0.0 {
                                continue;
                            }
                            for a in 0..j {
                                let row_off = (kk * j + a) * h + ll * j;
                                for b in 0..j {
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
        let meat = Array2::from_shape_vec((h, h), meat_flat).expect("shape");

        // M = info^{-1} S info^{-1} with one factorisation.
        let half = solver.solve_mat(&meat);
        let middle_raw = solver.solve_mat(&half.t().to_owned());
        let mut middle = Array2::<f64>::zeros((h, h));
        for a in 0..h {
            for b in 0..h {
                middle[[a, b]] = 0.5 * (middle_raw[[a, b]] + middle_raw[[b, a]]);
            }
        }

        Ok(Self {
            middle,
            design: design.clone(),
            probabilities: p.clone(),
            categories: k,
            reduction: options.reduction,
            flags,
        })
    }

    pub fn middle(&self) -> &Array2<f64> {
        &self.middle
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn probabilities(&self) -> &ProbabilityMatrix {
        &self.probabilities
    }

    /// Domain-aggregated derivative rows: `v_k = sum_{i in d}` (k-th row of
    /// the unit's F block), for all K categories at once.
    pub fn aggregated_f_rows(&self, domain: &DomainSpec) -> Result<Array2<f64>> {
        let n = self.design.n_rows();
        if domain.len_units() != n {
            return Err(Error::Dimension("domain length != register size".into()));
        }
        let k = self.categories;
        let km1 = k - 1;
        let j = self.design.n_cols();
        let h = km1 * j;
        let flat = self.reduction.map_reduce(
            n,
            || vec![0.0f64; k * h],
            |range, acc| {
                for i in range {
                    if !domain.contains(i) {
                        continue;
                    }
                    let x_row = self.design.row(i);
                    let p_row = self.probabilities.row(i);
                    for target in 0..k {
                        let pk = p_row[target];
                        if pk == 0.0 {
                            continue;
                        }
                        let vrow = &mut acc[target * h..(target + 1) * h];
                        for l in 0..km1 {
                            let c = pk * (if l == target { 1.0 } else { 0.0 } - p_row[l]);
                            if c == 0.0 {
                                continue;
                            }
                            let block = &mut vrow[l * j..(l + 1) * j];
                            for (vv, &xv) in block.iter_mut().zip(x_row) {
                                *vv += c * xv;
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
        Ok(Array2::from_shape_vec((k, h), flat).expect("shape"))
    }

    /// Linearised GMSE for every category of one domain.
    pub fn gmse_lin(&self, domain: &DomainSpec) -> Result<Vec<f64>> {
        let v = self.aggregated_f_rows(domain)?;
        let mut out = Vec::with_capacity(self.categories);
        for target in 0..self.categories {
            let vk = v.row(target);
            let mvk = self.middle.dot(&vk);
            let q = vk.dot(&mvk);
            out.push(self.clamp_nonnegative(target, q, &vk.to_owned())?);
        }
        Ok(out)
    }

    fn clamp_nonnegative(&self, category: usize, q: f64, vk: &Array1<f64>) -> Result<f64> {
        if q >= 0.0 {
            return Ok(q);
        }
        // cancellation scale: |v|' |M| |v|
        let h = vk.len();
        let mut scale = 0.0;
        for a in 0..h {
            let va = vk[a].abs();
            if va == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for b in 0..h {
                row += self.middle[[a, b]].abs() * vk[b].abs();
            }
            scale += va * row;
        }
        if q >= -1e-9 * scale.max(f64::MIN_POSITIVE) {
            log::warn!(
                "gmse_lin: category {} clamped from {q:.3e} to 0 (floating-point cancellation)",
                category + 1
            );
            Ok(0.0)
        } else {
            Err(Error::NegativeGmse { category: category + 1, value: q })
        }
    }

    /// GMSE of the multinomial-draw predictor: the linearised value plus the
    /// closed-form extra term `sum_{i in d} p_ik (1 - p_ik)`.
    pub fn gmse_draw_variant(&self, domain: &DomainSpec) -> Result<Vec<f64>> {
        let lin = self.gmse_lin(domain)?;
        let extra = self.draw_extra_term(domain);
        Ok(lin.iter().zip(extra).map(|(&l, e)| l + e).collect())
    }

    /// The exact extra variance of drawing outcomes from the fitted
    /// multinomial instead of imputing probabilities.
    pub fn draw_extra_term(&self, domain: &DomainSpec) -> Vec<f64> {
        let k = self.categories;
        let mut extra = vec![0.0f64; k];
        for i in 0..self.probabilities.n_units() {
            if domain.contains(i) {
                let p_row = self.probabilities.row(i);
                for (e, &pv) in extra.iter_mut().zip(p_row) {
                    *e += pv * (1.0 - pv);
                }
            }
        }
        extra
    }

    /// Mass-imputation totals from the cached probabilities.
    pub fn theta_hat(&self, domain: &DomainSpec) -> Vec<f64> {
        crate::model::predict_totals_from(&self.probabilities, domain)
    }
}

/// Coefficient of variation `sqrt(gmse) / theta`, as a fraction.
pub fn cv(theta: f64, gmse: f64) -> Result<f64> {
    if theta <= 0.0 {
        return Err(Error::CvUndefined);
    }
    if gmse < 0.0 {
        return Err(Error::NegativeGmse { category: 0, value: gmse });
    }
    Ok(gmse.sqrt() / theta)
}

/// Cumulated GMSE over categories: the exact sum of the K individual errors.
pub fn cumulated_gmse(per_category: &[f64]) -> f64 {
    per_category.iter().sum()
}
