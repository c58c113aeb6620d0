use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{mae, spearman_rho};
use super::{Estimator, Method};
use crate::data::{Manifest, MiniDataset};
use crate::error::{Error, Result};
use crate::eval::dataset_f1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub method: String,
    pub dataset_id: String,
    pub family: Option<String>,
    pub group: Option<String>,
    pub actual_f1: f64,
    pub estimated_f1: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodAggregate {
    pub method: String,
    pub datasets: usize,
    pub mae: f64,
    pub rho: f64,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodFailure {
    pub method: String,
    pub dataset_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub manifest_fingerprint: String,
    pub seed: Option<u64>,
    /// Artifact name to content digest.
    pub artifact_fingerprints: BTreeMap<String, String>,
    pub methods: Vec<String>,
    /// Sorted by method (in `methods` order), then dataset id.
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<MethodAggregate>,
    pub failures: Vec<MethodFailure>,
}

fn aggregate(method: &str, rows: &[&ReportRow]) -> Result<MethodAggregate> {
    let actual: Vec<f64> = rows.iter().map(|r| r.actual_f1).collect();
    let estimated: Vec<f64> = rows.iter().map(|r| r.estimated_f1).collect();
    let mut flags = Vec::new();
    let rho = if rows.len() < 2 {
        flags.push("single_dataset".to_owned());
        0.0
    } else {
        let s = spearman_rho(&actual, &estimated)?;
        if s.constant {
            flags.push("constant_vector".to_owned());
        }
        s.rho
    };
    Ok(MethodAggregate {
        method: method.to_owned(),
        datasets: rows.len(),
        // Mean of the stored per-row errors, so the aggregate recomputes
        // exactly from the rows.
        mae: rows.iter().map(|r| r.abs_error).sum::<f64>() / rows.len() as f64,
        rho,
        flags,
    })
    .and_then(|a| {
        debug_assert!((a.mae - mae(&actual, &estimated)?).abs() < 1e-12);
        Ok(a)
    })
}

/// Scores every estimator on every target mini-dataset. An estimator that
/// fails on any dataset is reported as a failure and contributes no rows.
/// Results do not depend on the order of `targets`.
pub fn run_benchmark(targets: &[MiniDataset], estimators: &[&dyn Estimator], manifest: &Manifest) -> Result<EvalReport> {
    if targets.is_empty() {
        return Err(Error::Empty("target mini-datasets"));
    }
    let mut order: Vec<&MiniDataset> = targets.iter().collect();
    order.sort_by(|a, b| a.dataset_id.cmp(&b.dataset_id));
    if let Some(w) = order.windows(2).find(|w| w[0].dataset_id == w[1].dataset_id) {
        return Err(Error::Consistency(format!("duplicate target dataset id `{}`", w[0].dataset_id)));
    }
    let actual = order
        .par_iter()
        .map(|d| dataset_f1(d, manifest).map(|s| s.f1))
        .collect::<Result<Vec<f64>>>()?;

    let mut report = EvalReport {
        manifest_fingerprint: manifest.fingerprint(),
        seed: None,
        artifact_fingerprints: BTreeMap::new(),
        methods: Vec::new(),
        rows: Vec::new(),
        aggregates: Vec::new(),
        failures: Vec::new(),
    };
    for est in estimators {
        let name = est.name().to_owned();
        report.methods.push(name.clone());
        let estimates: Vec<Result<f64>> = order.par_iter().map(|d| est.estimate(d)).collect();
        let mut rows = Vec::with_capacity(order.len());
        let mut failure = None;
        for ((d, &a), e) in order.iter().zip(&actual).zip(estimates) {
            match e {
                Ok(e) if e.is_finite() && (0.0..=1.0).contains(&e) => rows.push(ReportRow {
                    method: name.clone(),
                    dataset_id: d.dataset_id.clone(),
                    family: d.family.clone(),
                    group: d.group.clone(),
                    actual_f1: a,
                    estimated_f1: e,
                    abs_error: (a - e).abs(),
                }),
                Ok(e) => {
                    failure = Some((d, format!("estimate {e} outside [0, 1]")));
                    break;
                }
                Err(err) => {
                    failure = Some((d, err.to_string()));
                    break;
                }
            }
        }
        match failure {
            Some((d, message)) => {
                log::warn!("{name} failed on `{}`: {message}", d.dataset_id);
                report.failures.push(MethodFailure {
                    method: name,
                    dataset_id: Some(d.dataset_id.clone()),
                    message,
                });
            }
            None => {
                report.aggregates.push(aggregate(&name, &rows.iter().collect::<Vec<_>>())?);
                report.rows.extend(rows);
            }
        }
    }
    report.verify()?;
    Ok(report)
}

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

impl EvalReport {
    pub fn aggregate(&self, method: &str) -> Option<&MethodAggregate> {
        self.aggregates.iter().find(|a| a.method == method)
    }

    pub fn has_failures(&self) -> bool {
        !self.failures.is_empty()
    }

    /// Recomputes every aggregate from the rows.
    pub fn verify(&self) -> Result<()> {
        for agg in &self.aggregates {
            let rows: Vec<&ReportRow> = self.rows.iter().filter(|r| r.method == agg.method).collect();
            if rows.len() != agg.datasets {
                return Err(Error::Consistency(format!("row count mismatch for `{}`", agg.method)));
            }
            let actual: Vec<f64> = rows.iter().map(|r| r.actual_f1).collect();
            let estimated: Vec<f64> = rows.iter().map(|r| r.estimated_f1).collect();
            if (mae(&actual, &estimated)? - agg.mae).abs() > 1e-12 {
                return Err(Error::Consistency(format!("MAE of `{}` does not match its rows", agg.method)));
            }
            if rows.len() >= 2 && (spearman_rho(&actual, &estimated)?.rho - agg.rho).abs() > 1e-12 {
                return Err(Error::Consistency(format!("rho of `{}` does not match its rows", agg.method)));
            }
            if !(-1.0..=1.0).contains(&agg.rho) {
                return Err(Error::Consistency(format!("rho of `{}` outside [-1, 1]", agg.method)));
            }
        }
        Ok(())
    }

    /// Per-row CSV: `method,dataset_id,actual_f1,estimated_f1,abs_error`.
    pub fn rows_csv(&self) -> Result<String> {
        self.verify()?;
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Consistency(format!("CSV encoding failed: {e}"));
        w.write_record(["method", "dataset_id", "actual_f1", "estimated_f1", "abs_error"])
            .map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.method.as_str(),
                &r.dataset_id,
                &fmt_f(r.actual_f1),
                &fmt_f(r.estimated_f1),
                &fmt_f(r.abs_error),
            ])
            .map_err(io)?;
        }
        Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("UTF-8 input"))
    }

    /// Aggregate CSV: `method,mae,rho,flags`. Failed methods get empty
    /// metrics and an `error:` flag.
    pub fn aggregates_csv(&self) -> Result<String> {
        self.verify()?;
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Consistency(format!("CSV encoding failed: {e}"));
        w.write_record(["method", "mae", "rho", "flags"]).map_err(io)?;
        for m in &self.methods {
            if let Some(a) = self.aggregate(m) {
                w.write_record([m.as_str(), &fmt_f(a.mae), &fmt_f(a.rho), &a.flags.join(";")])
                    .map_err(io)?;
            }
            for f in self.failures.iter().filter(|f| &f.method == m) {
                w.write_record([m.as_str(), "", "", &format!("error: {}", f.message)])
                    .map_err(io)?;
            }
        }
        Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("UTF-8 input"))
    }

    pub fn to_json(&self) -> Result<String> {
        self.verify()?;
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Text table with one row per target family, grouped, followed by the
    /// group averages, two overall averages and the pooled metrics:
    ///
    /// - `All Avg (rows)` averages every family row;
    /// - `All Avg (groups)` averages the group averages;
    /// - `Pooled` scores all target mini-datasets together.
    ///
    /// A family with fewer than two mini-datasets has no rank correlation
    /// (`-`); constant estimates are marked `*`.
    pub fn table(&self) -> Result<String> {
        self.verify()?;
        let methods: Vec<&str> = self
            .methods
            .iter()
            .filter(|m| self.aggregate(m).is_some())
            .map(String::as_str)
            .collect();
        let mut families: BTreeMap<(String, String), ()> = BTreeMap::new();
        for r in &self.rows {
            families.insert((r.group.clone().unwrap_or_default(), family_of(r)), ());
        }
        let groups: BTreeSet<String> = families.keys().map(|(g, _)| g.clone()).collect();

        type Cell = (f64, Option<(f64, bool)>);
        let cell = |method: &str, keep: &dyn Fn(&ReportRow) -> bool| -> Result<Cell> {
            let rows: Vec<&ReportRow> = self.rows.iter().filter(|r| r.method == method && keep(r)).collect();
            let a = aggregate(method, &rows)?;
            let rho = (rows.len() >= 2).then(|| (a.rho, a.flags.iter().any(|f| f == "constant_vector")));
            Ok((a.mae, rho))
        };
        let mean_cells = |cells: &[Cell]| -> Cell {
            let mae = cells.iter().map(|c| c.0).sum::<f64>() / cells.len() as f64;
            let rhos: Vec<f64> = cells.iter().filter_map(|c| c.1.map(|r| r.0)).collect();
            let rho = (!rhos.is_empty()).then(|| (rhos.iter().sum::<f64>() / rhos.len() as f64, false));
            (mae, rho)
        };

        let label_w = families
            .keys()
            .map(|(_, f)| f.len() + 2)
            .chain(groups.iter().map(|g| g.len() + 6))
            .chain([18])
            .max()
            .unwrap_or(18);
        let col_w = methods.iter().map(|m| label(m).len()).max().unwrap_or(5).max(6) + 2;
        let mut out = String::new();
        let section = col_w * methods.len();
        let _ = writeln!(out, "{:label_w$}{:<section$}{}", "", "MAE (lower is better)", "rho (higher is better)");
        let _ = write!(out, "{:label_w$}", "");
        for _ in 0..2 {
            for m in &methods {
                let _ = write!(out, "{:>col_w$}", label(m));
            }
        }
        out.push('\n');
        let rule = "-".repeat(label_w + 2 * section);
        let _ = writeln!(out, "{rule}");

        let line = |out: &mut String, name: &str, cells: &[Cell]| {
            let _ = write!(out, "{name:label_w$}");
            for c in cells {
                let _ = write!(out, "{:>col_w$.3}", c.0);
            }
            for c in cells {
                let text = match c.1 {
                    None => "-".to_owned(),
                    Some((r, true)) => format!("{r:.3}*"),
                    Some((r, false)) => format!("{r:.3}"),
                };
                let _ = write!(out, "{text:>col_w$}");
            }
            out.push('\n');
        };

        let mut family_cells: Vec<Vec<Cell>> = Vec::new();
        let mut group_cells: Vec<Vec<Cell>> = Vec::new();
        for g in &groups {
            let mut in_group: Vec<Vec<Cell>> = Vec::new();
            for (_, fam) in families.keys().filter(|(fg, _)| fg == g) {
                let cells = methods
                    .iter()
                    .map(|m| cell(m, &|r| r.group.as_deref().unwrap_or("") == g && &family_of(r) == fam))
                    .collect::<Result<Vec<_>>>()?;
                line(&mut out, &format!("  {fam}"), &cells);
                in_group.push(cells);
            }
            let avg: Vec<Cell> = (0..methods.len())
                .map(|k| mean_cells(&in_group.iter().map(|c| c[k]).collect::<Vec<_>>()))
                .collect();
            let name = if g.is_empty() { "(ungrouped)".to_owned() } else { g.clone() };
            line(&mut out, &format!("{name} Avg"), &avg);
            let _ = writeln!(out, "{rule}");
            family_cells.extend(in_group);
            group_cells.push(avg);
        }
        let over = |rows: &[Vec<Cell>]| -> Vec<Cell> {
            (0..methods.len())
                .map(|k| mean_cells(&rows.iter().map(|c| c[k]).collect::<Vec<_>>()))
                .collect()
        };
        line(&mut out, "All Avg (rows)", &over(&family_cells));
        line(&mut out, "All Avg (groups)", &over(&group_cells));
        let pooled = methods
            .iter()
            .map(|m| cell(m, &|_| true))
            .collect::<Result<Vec<_>>>()?;
        line(&mut out, "Pooled", &pooled);
        for f in &self.failures {
            let _ = writeln!(out, "{} failed: {}", label(&f.method), f.message);
        }
        Ok(out)
    }
}

fn family_of(r: &ReportRow) -> String {
    r.family.clone().unwrap_or_else(|| "(none)".to_owned())
}

fn label(method: &str) -> String {
    method
        .parse::<Method>()
        .map(|m| m.label().to_owned())
        .unwrap_or_else(|_| method.to_owned())
}
