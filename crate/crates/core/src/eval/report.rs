use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::distance::to_io;
use super::loocv::Method;
use super::metrics::ErrorBoundReport;
use crate::error::{Error, Result};

/// `held_out_device` value of the rows averaged across devices.
pub const MEAN_ROW_DEVICE: &str = "mean";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoocvRow {
    pub held_out_device: String,
    pub method: Method,
    pub k_adapt: usize,
    /// `None` when the method failed; `error` then says why.
    pub report: Option<ErrorBoundReport>,
    pub error: Option<String>,
    /// Devices whose samples formed the initial set. Empty for mean rows and
    /// for methods that use no initial set.
    pub train_devices: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoocvReport {
    pub rows: Vec<LoocvRow>,
    pub mean: Vec<LoocvRow>,
}

impl LoocvReport {
    /// Appends one mean row per `(method, k)` in first-appearance order.
    /// Failed rows are left out of the average.
    pub(crate) fn finish(&mut self) {
        let mut keys: Vec<(Method, usize)> = Vec::new();
        for r in &self.rows {
            if !keys.contains(&(r.method, r.k_adapt)) {
                keys.push((r.method, r.k_adapt));
            }
        }
        self.mean = keys
            .into_iter()
            .map(|(method, k)| {
                let ok: Vec<&ErrorBoundReport> = self
                    .rows
                    .iter()
                    .filter(|r| r.method == method && r.k_adapt == k)
                    .filter_map(|r| r.report.as_ref())
                    .collect();
                let avg = |f: fn(&ErrorBoundReport) -> f64| {
                    ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
                };
                let report = (!ok.is_empty()).then(|| ErrorBoundReport {
                    acc_1pct: avg(|r| r.acc_1pct),
                    acc_5pct: avg(|r| r.acc_5pct),
                    acc_10pct: avg(|r| r.acc_10pct),
                    n_eval: ok.iter().map(|r| r.n_eval).sum(),
                });
                LoocvRow {
                    held_out_device: MEAN_ROW_DEVICE.into(),
                    method,
                    k_adapt: k,
                    error: report.is_none().then(|| "every device failed".to_string()),
                    report,
                    train_devices: Vec::new(),
                }
            })
            .collect();
    }

    /// The mean row for `(method, k)`, if present and successful.
    pub fn mean_for(&self, method: Method, k: usize) -> Option<&ErrorBoundReport> {
        self.mean
            .iter()
            .find(|r| r.method == method && r.k_adapt == k)
            .and_then(|r| r.report.as_ref())
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Per-device rows followed by mean rows. Failed rows leave the metric
    /// columns empty.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "held_out_device",
            "method",
            "k_adapt",
            "acc_1pct",
            "acc_5pct",
            "acc_10pct",
            "n_eval",
        ])
        .map_err(to_io)?;
        for r in self.rows.iter().chain(&self.mean) {
            let metrics = match &r.report {
                Some(e) => [
                    e.acc_1pct.to_string(),
                    e.acc_5pct.to_string(),
                    e.acc_10pct.to_string(),
                    e.n_eval.to_string(),
                ],
                None => Default::default(),
            };
            let mut rec = vec![
                r.held_out_device.clone(),
                r.method.name().to_string(),
                r.k_adapt.to_string(),
            ];
            rec.extend(metrics);
            w.write_record(&rec).map_err(to_io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Usage(format!(
                "unknown report format `{other}` (expected csv or json)"
            ))),
        }
    }
}

pub fn emit_report(report: &LoocvReport, format: &str, path: &Path) -> Result<()> {
    let text = match format.parse::<ReportFormat>()? {
        ReportFormat::Csv => report.to_csv_string()?,
        ReportFormat::Json => report.to_json_string()?,
    };
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(dev: &str, method: Method, k: usize, acc: f64) -> LoocvRow {
        LoocvRow {
            held_out_device: dev.into(),
            method,
            k_adapt: k,
            report: Some(ErrorBoundReport {
                acc_1pct: acc / 4.0,
                acc_5pct: acc / 2.0,
                acc_10pct: acc,
                n_eval: 10,
            }),
            error: None,
            train_devices: vec!["x".into()],
        }
    }

    fn sample() -> LoocvReport {
        let mut r = LoocvReport {
            rows: vec![
                row("a", Method::Maple, 3, 0.9),
                row("b", Method::Maple, 3, 0.7),
                row("a", Method::Lut, 0, 0.1),
                LoocvRow {
                    report: None,
                    error: Some("boom".into()),
                    ..row("b", Method::Lut, 0, 0.0)
                },
            ],
            mean: Vec::new(),
        };
        r.finish();
        r
    }

    #[test]
    fn mean_rows() {
        let r = sample();
        assert_eq!(r.mean.len(), 2);
        assert_eq!(r.mean_for(Method::Maple, 3).unwrap().acc_10pct, (0.9 + 0.7) / 2.0);
        assert_eq!(r.mean_for(Method::Lut, 0).unwrap().acc_10pct, 0.1);
    }

    #[test]
    fn json_round_trip() {
        let r = sample();
        assert_eq!(LoocvReport::from_json_str(&r.to_json_string().unwrap()).unwrap(), r);
    }

    #[test]
    fn csv_layout() {
        let text = sample().to_csv_string().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "held_out_device,method,k_adapt,acc_1pct,acc_5pct,acc_10pct,n_eval"
        );
        assert_eq!(lines.len(), 1 + 4 + 2);
        assert_eq!(lines[4], "b,lut,0,,,,");
    }

    #[test]
    fn unknown_format() {
        let dir = tempfile::tempdir().unwrap();
        let err = emit_report(&sample(), "xml", &dir.path().join("r")).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }
}
