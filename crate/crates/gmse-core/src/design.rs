//! Dummy-coded design matrix: intercept, then predictors in schema order,
//! then levels in declared order with the reference dropped.

use crate::error::{Error, Result};
use crate::register::Register;
use crate::schema::CovariateKind;
use ndarray::Array2;

#[derive(Debug, Clone)]
pub struct DesignMatrix {
    x: Array2<f64>,
    column_names: Vec<String>,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.ncols()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.x
    }

    /// Row as a contiguous slice (row-major storage).
    pub fn row(&self, i: usize) -> &[f64] {
        let j = self.x.ncols();
        &self.x.as_slice().expect("row-major")[i * j..(i + 1) * j]
    }

    pub fn from_parts(x: Array2<f64>, column_names: Vec<String>) -> Result<Self> {
        if x.ncols() != column_names.len() {
            return Err(Error::Dimension("column names do not match matrix width".into()));
        }
        Ok(Self { x, column_names })
    }
}

/// Builds the design matrix for a register's predictor covariates.
pub fn build_design_matrix(register: &Register) -> Result<DesignMatrix> {
    build_design_matrix_from_columns(register.schema(), register.columns(), register.n_units())
}

/// As [`build_design_matrix`] but from raw columns, so callers can code
/// covariates before the outcomes exist.
pub fn build_design_matrix_from_columns(
    schema: &crate::schema::CovariateSchema,
    columns: &[crate::register::Column],
    n: usize,
) -> Result<DesignMatrix> {
    if n == 0 {
        return Err(Error::EmptyRegister);
    }
    if columns.len() != schema.covariates().len() {
        return Err(Error::Dimension("columns do not match schema".into()));
    }
    let j = schema.design_width();
    let mut names = Vec::with_capacity(j);
    names.push("intercept".to_string());
    // (covariate index, code mapped to this column) for each dummy column
    let mut dummy_sources: Vec<(usize, u16)> = Vec::with_capacity(j - 1);
    for (ci, cov) in schema.covariates().iter().enumerate() {
        if !matches!(cov.role, crate::schema::Role::Predictor) {
            continue;
        }
        match &cov.kind {
            CovariateKind::Categorical { levels, reference } => {
                for (li, level) in levels.iter().enumerate() {
                    if level == reference {
                        continue;
                    }
                    names.push(format!("{}::{}", cov.name, level));
                    dummy_sources.push((ci, li as u16));
                }
            }
            CovariateKind::Binary { .. } => {
                names.push(cov.name.clone());
                dummy_sources.push((ci, 1));
            }
        }
    }
    debug_assert_eq!(names.len(), j);
    let mut x = Array2::<f64>::zeros((n, j));
    {
        let xs = x.as_slice_mut().expect("row-major");
        for i in 0..n {
            xs[i * j] = 1.0;
            for (d, &(ci, code)) in dummy_sources.iter().enumerate() {
                if columns[ci].codes()[i] == code {
                    xs[i * j + 1 + d] = 1.0;
                }
            }
        }
    }
    DesignMatrix::from_parts(x, names)
}
