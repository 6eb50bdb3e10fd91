//! Covariate schema: which register columns exist, how they are coded and
//! what role they play (model predictor, external domain, identifier).

use crate::error::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq)]
pub enum CovariateKind {
    /// Coded as dummies with the reference level dropped.
    Categorical { levels: Vec<String>, reference: String },
    /// Stored as 0/1; optional display labels for the two values.
    Binary { labels: Option<[String; 2]> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Predictor,
    ExternalDomain,
    Identifier,
}

#[derive(Debug, Clone)]
pub struct Covariate {
    pub name: String,
    pub kind: CovariateKind,
    pub role: Role,
}

impl Covariate {
    /// Number of distinct values the column can take.
    pub fn level_count(&self) -> usize {
        match &self.kind {
            CovariateKind::Categorical { levels, .. } => levels.len(),
            CovariateKind::Binary { .. } => 2,
        }
    }

    /// Label for a stored code, as written to CSV.
    pub fn label(&self, code: u16) -> String {
        match &self.kind {
            CovariateKind::Categorical { levels, .. } => levels[code as usize].clone(),
            CovariateKind::Binary { labels: Some(l) } => l[code as usize].clone(),
            CovariateKind::Binary { labels: None } => code.to_string(),
        }
    }

    /// Code for a CSV cell value.
    pub fn code(&self, value: &str) -> Option<u16> {
        match &self.kind {
            CovariateKind::Categorical { levels, .. } => {
                levels.iter().position(|l| l == value).map(|p| p as u16)
            }
            CovariateKind::Binary { labels } => {
                if let Some(l) = labels {
                    if let Some(p) = l.iter().position(|x| x == value) {
                        return Some(p as u16);
                    }
                }
                match value {
                    "0" => Some(0),
                    "1" => Some(1),
                    _ => None,
                }
            }
        }
    }
}

/// Declares every covariate column of a register plus the outcome cardinality.
#[derive(Debug, Clone)]
pub struct CovariateSchema {
    covariates: Vec<Covariate>,
    outcome_categories: usize,
}

impl CovariateSchema {
    pub fn new(covariates: Vec<Covariate>, outcome_categories: usize) -> Result<Self> {
        if outcome_categories < 2 {
            return Err(Error::Schema("need at least 2 outcome categories".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &covariates {
            if !seen.insert(c.name.clone()) {
                return Err(Error::Schema(format!("duplicate covariate name '{}'", c.name)));
            }
            match &c.kind {
                CovariateKind::Categorical { levels, reference } => {
                    if levels.len() < 2 {
                        return Err(Error::Schema(format!(
                            "categorical '{}' needs at least 2 levels",
                            c.name
                        )));
                    }
                    let mut lv = std::collections::HashSet::new();
                    for l in levels {
                        if !lv.insert(l) {
                            return Err(Error::Schema(format!(
                                "categorical '{}' has duplicate level '{l}'",
                                c.name
                            )));
                        }
                    }
                    if !levels.contains(reference) {
                        return Err(Error::Schema(format!(
                            "categorical '{}': reference '{reference}' is not a declared level",
                            c.name
                        )));
                    }
                }
                CovariateKind::Binary { labels: Some(l) } => {
                    if l[0] == l[1] {
                        return Err(Error::Schema(format!(
                            "binary '{}' has identical labels",
                            c.name
                        )));
                    }
                }
                CovariateKind::Binary { labels: None } => {}
            }
        }
        Ok(Self { covariates, outcome_categories })
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn outcome_categories(&self) -> usize {
        self.outcome_categories
    }

    pub fn predictors(&self) -> impl Iterator<Item = &Covariate> {
        self.covariates.iter().filter(|c| c.role == Role::Predictor)
    }

    pub fn get(&self, name: &str) -> Option<&Covariate> {
        self.covariates.iter().find(|c| c.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c.name == name)
    }

    /// Design-matrix width: intercept + (levels-1) per categorical predictor
    /// + 1 per binary predictor.
    pub fn design_width(&self) -> usize {
        1 + self
            .predictors()
            .map(|c| match &c.kind {
                CovariateKind::Categorical { levels, .. } => levels.len() - 1,
                CovariateKind::Binary { .. } => 1,
            })
            .sum::<usize>()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawSchema =
            toml::from_str(text).map_err(|e| Error::Schema(format!("schema parse: {e}")))?;
        raw.build()
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Renders the schema in the same TOML layout `from_toml_str` accepts.
    pub fn to_toml_string(&self) -> String {
        use std::fmt::Write;
        let quote = |s: &str| format!("{:?}", s);
        let mut out = String::new();
        let _ = writeln!(out, "outcome_categories = {}", self.outcome_categories);
        for c in &self.covariates {
            let _ = writeln!(out, "\n[[covariate]]");
            let _ = writeln!(out, "name = {}", quote(&c.name));
            match &c.kind {
                CovariateKind::Categorical { levels, reference } => {
                    let _ = writeln!(out, "kind = \"categorical\"");
                    let lv: Vec<String> = levels.iter().map(|l| quote(l)).collect();
                    let _ = writeln!(out, "levels = [{}]", lv.join(", "));
                    let _ = writeln!(out, "reference = {}", quote(reference));
                }
                CovariateKind::Binary { labels } => {
                    let _ = writeln!(out, "kind = \"binary\"");
                    if let Some(l) = labels {
                        let _ = writeln!(out, "labels = [{}, {}]", quote(&l[0]), quote(&l[1]));
                    }
                }
            }
            let role = match c.role {
                Role::Predictor => "predictor",
                Role::ExternalDomain => "external_domain",
                Role::Identifier => "identifier",
            };
            let _ = writeln!(out, "role = {}", quote(role));
        }
        out
    }
}

#[derive(Deserialize)]
struct RawSchema {
    outcome_categories: usize,
    #[serde(default, rename = "covariate")]
    covariates: Vec<RawCovariate>,
}

#[derive(Deserialize)]
struct RawCovariate {
    name: String,
    kind: String,
    #[serde(default)]
    levels: Option<Vec<String>>,
    #[serde(default)]
    reference: Option<String>,
    #[serde(default)]
    labels: Option<Vec<String>>,
    role: String,
}

impl RawSchema {
    fn build(self) -> Result<CovariateSchema> {
        let mut covs = Vec::new();
        for rc in self.covariates {
            let role = match rc.role.as_str() {
                "predictor" => Role::Predictor,
                "external_domain" => Role::ExternalDomain,
                "identifier" => Role::Identifier,
                other => {
                    return Err(Error::Schema(format!(
                        "covariate '{}': unknown role '{other}'",
                        rc.name
                    )))
                }
            };
            let kind = match rc.kind.as_str() {
                "categorical" => {
                    let levels = rc.levels.ok_or_else(|| {
                        Error::Schema(format!("categorical '{}' missing levels", rc.name))
                    })?;
                    let reference = match rc.reference {
                        Some(r) => r,
                        // Default reference is the first declared level.
                        None => levels
                            .first()
                            .cloned()
                            .ok_or_else(|| Error::Schema(format!("categorical '{}' has no levels", rc.name)))?,
                    };
                    CovariateKind::Categorical { levels, reference }
                }
                "binary" => {
                    let labels = match rc.labels {
                        Some(l) if l.len() == 2 => Some([l[0].clone(), l[1].clone()]),
                        Some(_) => {
                            return Err(Error::Schema(format!(
                                "binary '{}' labels must have exactly 2 entries",
                                rc.name
                            )))
                        }
                        None => None,
                    };
                    CovariateKind::Binary { labels }
                }
                other => {
                    return Err(Error::Schema(format!(
                        "covariate '{}': unknown kind '{other}'",
                        rc.name
                    )))
                }
            };
            covs.push(Covariate { name: rc.name, kind, role });
        }
        CovariateSchema::new(covs, self.outcome_categories)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
outcome_categories = 8

[[covariate]]
name = "age"
kind = "categorical"
levels = ["-28", "29-39", "40-49", "50-69", "70+"]
role = "predictor"

[[covariate]]
name = "gender"
kind = "binary"
labels = ["Male", "Female"]
role = "predictor"

[[covariate]]
name = "citizenship"
kind = "binary"
labels = ["Foreign", "Italian"]
role = "predictor"

[[covariate]]
name = "edu2011"
kind = "categorical"
levels = ["1", "2", "3", "4", "5", "6", "7", "8"]
role = "predictor"

[[covariate]]
name = "province"
kind = "categorical"
levels = ["1", "2", "3", "4", "5", "6", "7", "8", "9"]
role = "external_domain"
"#;

    #[test]
    fn design_width_matches_dummy_coding() {
        let s = CovariateSchema::from_toml_str(SAMPLE).unwrap();
        // 1 + 4 + 1 + 1 + 7 = 14 model columns; the external domain adds none.
        assert_eq!(s.design_width(), 14);
        assert_eq!(s.outcome_categories(), 8);
    }

    #[test]
    fn default_reference_is_first_level() {
        let s = CovariateSchema::from_toml_str(SAMPLE).unwrap();
        match &s.get("age").unwrap().kind {
            CovariateKind::Categorical { reference, .. } => assert_eq!(reference, "-28"),
            _ => panic!("age must be categorical"),
        }
    }

    #[test]
    fn toml_render_round_trips() {
        let s = CovariateSchema::from_toml_str(SAMPLE).unwrap();
        let back = CovariateSchema::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(back.design_width(), s.design_width());
        assert_eq!(back.outcome_categories(), s.outcome_categories());
        for (a, b) in s.covariates().iter().zip(back.covariates()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.kind, b.kind);
            assert!(a.role == b.role);
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let cov = |n: &str| Covariate {
            name: n.into(),
            kind: CovariateKind::Binary { labels: None },
            role: Role::Predictor,
        };
        let err = CovariateSchema::new(vec![cov("x"), cov("x")], 3).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn unknown_reference_rejected() {
        let c = Covariate {
            name: "a".into(),
            kind: CovariateKind::Categorical {
                levels: vec!["1".into(), "2".into()],
                reference: "9".into(),
            },
            role: Role::Predictor,
        };
        assert!(CovariateSchema::new(vec![c], 2).is_err());
    }
}
