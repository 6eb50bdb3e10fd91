//! Unit-level register: covariate columns, sample membership, inclusion
//! probabilities, observed outcomes and domain algebra.

use crate::error::{Error, Result};
use crate::schema::{CovariateSchema, Role};
use ndarray::ArrayView2;
use std::io::{Read, Write};

/// One covariate column stored as level codes.
#[derive(Debug, Clone)]
pub struct Column {
    codes: Vec<u16>,
}

impl Column {
    pub fn from_codes(codes: Vec<u16>) -> Self {
        Self { codes }
    }

    pub fn codes(&self) -> &[u16] {
        &self.codes
    }
}

/// Finite-population register. Row order is the canonical unit index.
#[derive(Debug, Clone)]
pub struct Register {
    schema: CovariateSchema,
    unit_ids: Vec<String>,
    columns: Vec<Column>,
    sampled: Vec<bool>,
    inclusion_prob: Vec<f64>,
    observed_outcome: Vec<Option<u16>>,
}

impl Register {
    /// Builds a register and checks its invariants: at least one sampled
    /// unit, inclusion probabilities in (0,1], outcomes present exactly for
    /// sampled units, and every code within its column's level set.
    pub fn new(
        schema: CovariateSchema,
        unit_ids: Vec<String>,
        columns: Vec<Column>,
        sampled: Vec<bool>,
        inclusion_prob: Vec<f64>,
        observed_outcome: Vec<Option<u16>>,
    ) -> Result<Self> {
        let n = unit_ids.len();
        if n == 0 {
            return Err(Error::EmptyRegister);
        }
        if columns.len() != schema.covariates().len() {
            return Err(Error::Register(format!(
                "expected {} covariate columns, got {}",
                schema.covariates().len(),
                columns.len()
            )));
        }
        for (c, cov) in columns.iter().zip(schema.covariates()) {
            if c.codes.len() != n {
                return Err(Error::Register(format!("column '{}' has wrong length", cov.name)));
            }
            let max = cov.level_count() as u16;
            if let Some(pos) = c.codes.iter().position(|&v| v >= max) {
                return Err(Error::UnknownLevel {
                    row: pos + 1,
                    column: cov.name.clone(),
                    level: c.codes[pos].to_string(),
                });
            }
        }
        if sampled.len() != n || inclusion_prob.len() != n || observed_outcome.len() != n {
            return Err(Error::Register("per-unit vectors have inconsistent lengths".into()));
        }
        if !sampled.iter().any(|&s| s) {
            return Err(Error::Register("no sampled units".into()));
        }
        for (i, &p) in inclusion_prob.iter().enumerate() {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Register(format!(
                    "inclusion probability {p} out of (0,1] at row {}",
                    i + 1
                )));
            }
        }
        let k = schema.outcome_categories() as u16;
        for (i, (&s, o)) in sampled.iter().zip(&observed_outcome).enumerate() {
            match (s, o) {
                (true, Some(y)) if *y < k => {}
                (true, Some(y)) => {
                    return Err(Error::Register(format!(
                        "outcome {} out of 1..{k} at row {}",
                        y + 1,
                        i + 1
                    )))
                }
                (true, None) => {
                    return Err(Error::Register(format!("sampled row {} has no outcome", i + 1)))
                }
                (false, Some(_)) => {
                    return Err(Error::Register(format!(
                        "non-sampled row {} carries an outcome",
                        i + 1
                    )))
                }
                (false, None) => {}
            }
        }
        Ok(Self { schema, unit_ids, columns, sampled, inclusion_prob, observed_outcome })
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_sampled(&self) -> usize {
        self.sampled.iter().filter(|&&s| s).count()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn sampled(&self) -> &[bool] {
        &self.sampled
    }

    /// Sample membership as 0/1 weights.
    pub fn lambda_weights(&self) -> Vec<f64> {
        self.sampled.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect()
    }

    pub fn inclusion_prob(&self) -> &[f64] {
        &self.inclusion_prob
    }

    pub fn observed_outcome(&self) -> &[Option<u16>] {
        &self.observed_outcome
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.schema.index_of(name).map(|i| &self.columns[i])
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    /// Membership vector for `column == level`.
    ///
    /// The domain is internal when the column is a model predictor, external
    /// otherwise. A level absent from the column's declared set yields an
    /// empty domain carrying a warning rather than an error.
    pub fn domain_vector(&self, column: &str, level: &str) -> Result<DomainSpec> {
        let cov = self
            .schema
            .get(column)
            .ok_or_else(|| Error::UnknownDomainColumn(column.to_string()))?;
        let kind = match cov.role {
            Role::Predictor => DomainKind::Internal,
            _ => DomainKind::External,
        };
        let name = format!("{column}={level}");
        match cov.code(level) {
            Some(code) => {
                let col = self.column(column).expect("column exists");
                let membership: Vec<bool> = col.codes.iter().map(|&c| c == code).collect();
                let warning = if membership.iter().any(|&m| m) {
                    None
                } else {
                    Some(format!("domain '{name}' has no members"))
                };
                Ok(DomainSpec { name, membership, kind, warning })
            }
            None => Ok(DomainSpec {
                membership: vec![false; self.n_units()],
                kind,
                warning: Some(format!("level '{level}' absent from column '{column}'")),
                name,
            }),
        }
    }

    /// The all-ones domain.
    pub fn full_domain(&self) -> DomainSpec {
        DomainSpec {
            name: "full".into(),
            membership: vec![true; self.n_units()],
            kind: DomainKind::FullRegister,
            warning: None,
        }
    }

    /// One domain per declared level of `column`; the specs partition the
    /// register.
    pub fn domain_partition(&self, column: &str) -> Result<Vec<DomainSpec>> {
        let cov = self
            .schema
            .get(column)
            .ok_or_else(|| Error::UnknownDomainColumn(column.to_string()))?;
        (0..cov.level_count())
            .map(|code| self.domain_vector(column, &cov.label(code as u16)))
            .collect()
    }

    /// Sampled units per (category, domain): the `n_kd` column of reports.
    pub fn sampled_category_counts(&self, domain: &DomainSpec) -> Vec<usize> {
        let k = self.schema.outcome_categories();
        let mut counts = vec![0usize; k];
        for i in 0..self.n_units() {
            if self.sampled[i] && domain.contains(i) {
                if let Some(y) = self.observed_outcome[i] {
                    counts[y as usize] += 1;
                }
            }
        }
        counts
    }

    /// Reads the register CSV: `unit_id`, one column per schema covariate,
    /// `sampled`, `pi`, `outcome` (1..K, empty when sampled=0).
    pub fn from_csv<R: Read>(reader: R, schema: &CovariateSchema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Register(format!("missing CSV column '{name}'")))
        };
        let id_idx = find("unit_id")?;
        let sampled_idx = find("sampled")?;
        let pi_idx = find("pi")?;
        let outcome_idx = find("outcome")?;
        let cov_idx: Vec<usize> =
            schema.covariates().iter().map(|c| find(&c.name)).collect::<Result<_>>()?;

        let mut unit_ids = Vec::new();
        let mut columns: Vec<Vec<u16>> = vec![Vec::new(); schema.covariates().len()];
        let mut sampled = Vec::new();
        let mut pi = Vec::new();
        let mut outcome = Vec::new();
        for (row0, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = row0 + 1;
            unit_ids.push(rec.get(id_idx).unwrap_or("").to_string());
            for (ci, cov) in schema.covariates().iter().enumerate() {
                let raw = rec.get(cov_idx[ci]).unwrap_or("");
                match cov.code(raw) {
                    Some(code) => columns[ci].push(code),
                    None => {
                        return Err(Error::UnknownLevel {
                            row,
                            column: cov.name.clone(),
                            level: raw.to_string(),
                        })
                    }
                }
            }
            let s = match rec.get(sampled_idx).unwrap_or("") {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::BadCell {
                        row,
                        column: "sampled".into(),
                        message: format!("expected 0/1, got '{other}'"),
                    })
                }
            };
            sampled.push(s);
            let p: f64 = rec.get(pi_idx).unwrap_or("").parse().map_err(|_| Error::BadCell {
                row,
                column: "pi".into(),
                message: format!("not a number: '{}'", rec.get(pi_idx).unwrap_or("")),
            })?;
            pi.push(p);
            let oraw = rec.get(outcome_idx).unwrap_or("");
            if oraw.is_empty() {
                outcome.push(None);
            } else {
                let y: usize = oraw.parse().map_err(|_| Error::BadCell {
                    row,
                    column: "outcome".into(),
                    message: format!("not an integer: '{oraw}'"),
                })?;
                if y < 1 || y > schema.outcome_categories() {
                    return Err(Error::BadCell {
                        row,
                        column: "outcome".into(),
                        message: format!("outcome {y} out of 1..{}", schema.outcome_categories()),
                    });
                }
                outcome.push(Some((y - 1) as u16));
            }
        }
        Register::new(
            schema.clone(),
            unit_ids,
            columns.into_iter().map(|codes| Column { codes }).collect(),
            sampled,
            pi,
            outcome,
        )
    }

    pub fn from_csv_file(path: impl AsRef<std::path::Path>, schema: &CovariateSchema) -> Result<Self> {
        Self::from_csv(std::fs::File::open(path)?, schema)
    }

    /// Writes the register back in the same CSV layout; lossless for all
    /// declared columns.
    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["unit_id".to_string()];
        header.extend(self.schema.covariates().iter().map(|c| c.name.clone()));
        header.extend(["sampled".to_string(), "pi".to_string(), "outcome".to_string()]);
        w.write_record(&header)?;
        for i in 0..self.n_units() {
            let mut rec = vec![self.unit_ids[i].clone()];
            for (col, cov) in self.columns.iter().zip(self.schema.covariates()) {
                rec.push(cov.label(col.codes[i]));
            }
            rec.push(if self.sampled[i] { "1".into() } else { "0".into() });
            rec.push(format!("{}", self.inclusion_prob[i]));
            rec.push(match self.observed_outcome[i] {
                Some(y) => (y + 1).to_string(),
                None => String::new(),
            });
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    FullRegister,
    Internal,
    External,
}

/// Subpopulation membership vector.
#[derive(Debug, Clone)]
pub struct DomainSpec {
    pub name: String,
    membership: Vec<bool>,
    pub kind: DomainKind,
    pub warning: Option<String>,
}

impl DomainSpec {
    pub fn from_membership(name: impl Into<String>, membership: Vec<bool>, kind: DomainKind) -> Self {
        let warning = if membership.iter().any(|&m| m) { None } else { Some("empty domain".into()) };
        Self { name: name.into(), membership, kind, warning }
    }

    pub fn contains(&self, unit: usize) -> bool {
        self.membership[unit]
    }

    pub fn membership(&self) -> &[bool] {
        &self.membership
    }

    pub fn len_units(&self) -> usize {
        self.membership.len()
    }

    pub fn size(&self) -> usize {
        self.membership.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.size() == 0
    }
}

/// Domain totals of a one-hot outcome matrix: `theta_k = sum_i gamma_i Y_ik`.
pub fn population_total(domain: &DomainSpec, outcomes: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    let (n, k) = outcomes.dim();
    if n != domain.len_units() {
        return Err(Error::Dimension(format!(
            "outcome rows {n} != domain length {}",
            domain.len_units()
        )));
    }
    for i in 0..n {
        let row = outcomes.row(i);
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != k - 1 {
            return Err(Error::Dimension(format!("outcome row {} is not one-hot", i + 1)));
        }
    }
    let mut theta = vec![0.0; k];
    for i in 0..n {
        if domain.contains(i) {
            for (kk, t) in theta.iter_mut().enumerate() {
                *t += outcomes[[i, kk]];
            }
        }
    }
    Ok(theta)
}
