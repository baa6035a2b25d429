//! Per-(scenario, method) statistics of run records.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

use super::models::Method;
use super::plan::RunRecord;

/// Quantile with linear interpolation between order statistics
/// (`h = (n − 1) p`). `sorted` must be ascending and nonempty.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub method: String,
    pub runs: usize,
    pub failures: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub min: f64,
    pub max: f64,
}

/// Test-MSPE statistics grouped by scenario (first-appearance order) and
/// method (roster order). Failed runs are counted but excluded from the
/// statistics; a group with no successful run gets NaN statistics.
pub fn summarize(records: &[RunRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to summarize".into()));
    }
    let mut scenarios: Vec<&str> = Vec::new();
    for r in records {
        if !scenarios.contains(&r.scenario.as_str()) {
            scenarios.push(&r.scenario);
        }
    }
    let mut rows = Vec::new();
    for sc in scenarios {
        for method in Method::ALL {
            let group: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.scenario == sc && r.method == method)
                .collect();
            if group.is_empty() {
                continue;
            }
            let mut v: Vec<f64> = group.iter().filter(|r| r.is_ok()).map(|r| r.test_mspe).collect();
            v.sort_by(f64::total_cmp);
            let failures = group.len() - v.len();
            let stat = |p: f64| if v.is_empty() { f64::NAN } else { quantile(&v, p) };
            let (q1, q3) = (stat(0.25), stat(0.75));
            rows.push(SummaryRow {
                scenario: sc.to_string(),
                method: method.name().to_string(),
                runs: group.len(),
                failures,
                median: stat(0.5),
                q1,
                q3,
                iqr: q3 - q1,
                min: stat(0.0),
                max: stat(1.0),
            });
        }
    }
    Ok(rows)
}

/// Looks up the median test MSPE of one group.
pub fn median_of(rows: &[SummaryRow], scenario: &str, method: Method) -> Option<f64> {
    rows.iter()
        .find(|r| r.scenario == scenario && r.method == method.name())
        .map(|r| r.median)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

/// Columns: scenario, method, runs, failures, median, q1, q3, iqr, min, max.
pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["scenario", "method", "runs", "failures", "median", "q1", "q3", "iqr", "min", "max"])
        .map_err(|e| csv_error(path, e))?;
    for r in rows {
        let f = |v: f64| format!("{v:?}");
        w.write_record([
            r.scenario.clone(),
            r.method.clone(),
            r.runs.to_string(),
            r.failures.to_string(),
            f(r.median),
            f(r.q1),
            f(r.q3),
            f(r.iqr),
            f(r.min),
            f(r.max),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Long format for boxplots: scenario, method, repetition, test_mspe
/// (successful runs only).
pub fn write_boxplot_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["scenario", "method", "repetition", "test_mspe"])
        .map_err(|e| csv_error(path, e))?;
    for r in records.iter().filter(|r| r.is_ok()) {
        w.write_record([
            r.scenario.clone(),
            r.method.name().to_string(),
            r.repetition.to_string(),
            format!("{:?}", r.test_mspe),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    fn rec(method: Method, scenario: &str, rep: usize, mspe: f64) -> RunRecord {
        RunRecord {
            method,
            scenario: scenario.into(),
            repetition: rep,
            seed: rep as u64,
            learning_rate: 1e-3,
            epochs: 1,
            train_mspe: mspe,
            test_mspe: mspe,
            wall_clock_s: 0.1,
            loss_trace: vec![1.0],
            error: None,
        }
    }

    #[test]
    fn single_record() {
        let rows = summarize(&[rec(Method::Inva, "s", 0, 2.5)]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].median, 2.5);
        assert_eq!(rows[0].iqr, 0.0);
    }

    #[test]
    fn one_to_five() {
        let recs: Vec<RunRecord> = [3.0, 1.0, 5.0, 2.0, 4.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| rec(Method::Inva, "s", i, v))
            .collect();
        let rows = summarize(&recs).unwrap();
        assert_eq!(rows[0].median, 3.0);
        assert_eq!(rows[0].iqr, 2.0);
        assert_eq!((rows[0].min, rows[0].max), (1.0, 5.0));
    }

    #[test]
    fn groups_in_stable_order_and_failures_counted() {
        let mut failed = rec(Method::Inva, "b", 1, f64::NAN);
        failed.error = Some("boom".into());
        let recs = vec![
            rec(Method::VaeX1, "b", 0, 1.0),
            rec(Method::Inva, "b", 0, 2.0),
            failed,
            rec(Method::Inva, "a", 0, 3.0),
        ];
        let rows = summarize(&recs).unwrap();
        let keys: Vec<(&str, &str)> = rows.iter().map(|r| (r.scenario.as_str(), r.method.as_str())).collect();
        assert_eq!(keys, [("b", "inva"), ("b", "vae_x1"), ("a", "inva")]);
        assert_eq!((rows[0].runs, rows[0].failures, rows[0].median), (2, 1, 2.0));
    }

    #[test]
    fn empty_is_an_error() {
        assert!(summarize(&[]).is_err());
    }

    proptest! {
        #[test]
        fn quantiles_are_ordered(mut v in proptest::collection::vec(-1e6f64..1e6, 1..40)) {
            v.sort_by(f64::total_cmp);
            let (a, b, c) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
            prop_assert!(v[0] <= a && a <= b && b <= c && c <= v[v.len() - 1]);
        }
    }
}
