//! Report assembly and CSV emission.
//!
//! All CSVs are stable-ordered (domain in request order, then category) and
//! locale-independent; CV values are written as fractions, percent
//! formatting is for console output only.

use crate::error::Result;
use crate::linear::{cumulated_gmse, cv, PluginCache};
use crate::register::{DomainSpec, Register};
use crate::resampling::{BootstrapResult, McResult};
use crate::sim::{StudyReport, StudyRow, StudySummary};
use std::io::Write;

/// One (domain, category) line of the GMSE report.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub domain: String,
    pub category: usize,
    pub theta_hat: f64,
    pub n_kd: usize,
    pub gmse_lin: f64,
    pub cv: Option<f64>,
    pub gmse_draw: Option<f64>,
    pub gmse_boot: Option<f64>,
    pub cv_boot: Option<f64>,
    pub gmse_mc: Option<f64>,
    pub cv_mc: Option<f64>,
    pub warning: Option<String>,
}

/// Builds the per-(domain, category) rows from a cache. `draw_variant`
/// additionally fills the multinomial-draw column.
pub fn build_report(
    register: &Register,
    cache: &PluginCache,
    domains: &[DomainSpec],
    draw_variant: bool,
) -> Result<Vec<ReportRow>> {
    let k = cache.categories();
    let mut rows = Vec::with_capacity(domains.len() * k);
    for dom in domains {
        let theta = cache.theta_hat(dom);
        let gmse = cache.gmse_lin(dom)?;
        let draw = if draw_variant { Some(cache.gmse_draw_variant(dom)?) } else { None };
        let n_kd = register.sampled_category_counts(dom);
        for kk in 0..k {
            let mut warning = dom.warning.clone();
            let cv_val = match cv(theta[kk], gmse[kk]) {
                Ok(v) => Some(v),
                Err(_) => {
                    warning.get_or_insert_with(|| "CV undefined on empty/null total".into());
                    None
                }
            };
            if cv_val.is_some() && n_kd[kk] == 0 {
                warning.get_or_insert_with(|| "no sampled support".into());
            }
            rows.push(ReportRow {
                domain: dom.name.clone(),
                category: kk + 1,
                theta_hat: theta[kk],
                n_kd: n_kd[kk],
                gmse_lin: gmse[kk],
                cv: cv_val,
                gmse_draw: draw.as_ref().map(|d| d[kk]),
                gmse_boot: None,
                cv_boot: None,
                gmse_mc: None,
                cv_mc: None,
                warning,
            });
        }
    }
    Ok(rows)
}

/// Fills the bootstrap columns; `rows` must come from [`build_report`] with
/// the same domain order.
pub fn attach_bootstrap(rows: &mut [ReportRow], domains: &[DomainSpec], boot: &BootstrapResult) {
    let k = boot.gmse.ncols();
    for (d, _dom) in domains.iter().enumerate() {
        for kk in 0..k {
            let row = &mut rows[d * k + kk];
            row.gmse_boot = Some(boot.gmse[[d, kk]]);
            row.cv_boot = boot.cv(d, kk);
        }
    }
}

/// Fills the Monte-Carlo columns.
pub fn attach_mc(rows: &mut [ReportRow], domains: &[DomainSpec], mc: &McResult) {
    let k = mc.gmse.ncols();
    for (d, _dom) in domains.iter().enumerate() {
        for kk in 0..k {
            let row = &mut rows[d * k + kk];
            row.gmse_mc = Some(mc.gmse[[d, kk]]);
            row.cv_mc = mc.cv(d, kk);
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Writes the report CSV. After each domain's K category rows one
/// `cumulated` row carries the exact sum of its per-category GMSE values.
pub fn write_report_csv<W: Write>(rows: &[ReportRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "domain", "category", "theta_hat", "n_kd", "gmse_lin", "cv", "gmse_draw", "gmse_boot",
        "cv_boot", "gmse_mc", "cv_mc",
    ])?;
    let mut d = 0;
    while d < rows.len() {
        let domain = &rows[d].domain;
        let end = rows[d..].iter().take_while(|r| &r.domain == domain).count() + d;
        let mut theta_sum = 0.0;
        let mut n_sum = 0usize;
        for row in &rows[d..end] {
            w.write_record([
                row.domain.clone(),
                row.category.to_string(),
                format!("{}", row.theta_hat),
                row.n_kd.to_string(),
                format!("{}", row.gmse_lin),
                opt(row.cv),
                opt(row.gmse_draw),
                opt(row.gmse_boot),
                opt(row.cv_boot),
                opt(row.gmse_mc),
                opt(row.cv_mc),
            ])?;
            theta_sum += row.theta_hat;
            n_sum += row.n_kd;
        }
        let cum = cumulated_gmse(
            &rows[d..end].iter().map(|r| r.gmse_lin).collect::<Vec<_>>(),
        );
        w.write_record([
            domain.clone(),
            "cumulated".to_string(),
            format!("{theta_sum}"),
            n_sum.to_string(),
            format!("{cum}"),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
        d = end;
    }
    w.flush()?;
    Ok(())
}

/// Plot-ready CV against sampled class size per (domain, category).
pub fn write_plot_data_csv<W: Write>(rows: &[ReportRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["domain", "category", "n_kd", "theta_hat", "cv"])?;
    for row in rows {
        w.write_record([
            row.domain.clone(),
            row.category.to_string(),
            row.n_kd.to_string(),
            format!("{}", row.theta_hat),
            opt(row.cv),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Tidy study CSV: one row per (replicate, category, estimator).
pub fn write_study_csv<W: Write>(report: &StudyReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["replicate", "category", "estimator", "theta_hat", "gmse", "cv"])?;
    for StudyRow { replicate, category, estimator, theta_hat, gmse, cv } in &report.rows {
        w.write_record([
            replicate.to_string(),
            category.to_string(),
            estimator.label().to_string(),
            format!("{theta_hat}"),
            format!("{gmse}"),
            opt(*cv),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// CV quartiles per (estimator, category), box-plot ready.
pub fn write_study_summary_csv<W: Write>(report: &StudyReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["estimator", "category", "cv_q25", "cv_median", "cv_q75"])?;
    for StudySummary { estimator, category, q25, median, q75 } in &report.summary {
        w.write_record([
            estimator.label().to_string(),
            category.to_string(),
            format!("{q25}"),
            format!("{median}"),
            format!("{q75}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}
