//! Result rows and the CSV / JSON report files.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::CellKey;
use crate::attribution::Sign;
use crate::metrics::{Degenerate, Hemisphere, MetricsReport};
use crate::{Error, Result};

pub const CSV_HEADER: &str = "rhythm,dataset,model,optimizer,train_acc,val_acc,test_acc,precision,recall,specificity,f1,roc_auc,efficient_class,shap_sign,epochs,preprocessing_s,train_s,inference_s,shap_s";

/// Wall-clock seconds per phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub preprocessing_s: f64,
    pub train_s: f64,
    pub inference_s: f64,
    pub shap_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub key: CellKey,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    /// Test-split metrics.
    pub metrics: MetricsReport,
    pub efficient_class: Hemisphere,
    /// Sign of the top-ranked attribution; `None` when attribution was skipped.
    pub shap_sign: Option<Sign>,
    pub epochs: usize,
    pub timings: Timings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub key: CellKey,
    pub error: String,
}

/// Rows keyed by cell, kept sorted by key.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<RunResult>,
    pub failures: Vec<CellFailure>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::invalid(format!("unknown report format {s:?} (csv, json)"))),
        }
    }
}

impl ReportFormat {
    /// Picks the format from a file extension, CSV unless it is `.json`.
    pub fn for_path(path: &Path) -> Self {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            ReportFormat::Json
        } else {
            ReportFormat::Csv
        }
    }
}

impl ResultTable {
    /// Builds a table, rejecting duplicate keys.
    pub fn new(mut rows: Vec<RunResult>, mut failures: Vec<CellFailure>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for key in rows.iter().map(|r| r.key).chain(failures.iter().map(|f| f.key)) {
            if !seen.insert(key) {
                return Err(Error::invalid(format!("duplicate result for {key}")));
            }
        }
        rows.sort_by_key(|r| r.key);
        failures.sort_by_key(|f| f.key);
        Ok(Self { rows, failures })
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty() && self.failures.is_empty()
    }

    /// Union of several tables; a key present twice is an error.
    pub fn merge(tables: Vec<ResultTable>) -> Result<Self> {
        let (mut rows, mut failures) = (Vec::new(), Vec::new());
        for t in tables {
            rows.extend(t.rows);
            failures.extend(t.failures);
        }
        Self::new(rows, failures)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let m = &r.metrics;
            let t = &r.timings;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.2},{:.2},{:.2},{:.2}\n",
                r.key.band,
                r.key.dataset,
                r.key.model,
                r.key.optimizer,
                r.train_acc,
                r.val_acc,
                r.test_acc,
                m.precision,
                m.recall,
                m.specificity,
                m.f1,
                m.roc_auc,
                r.efficient_class,
                r.shap_sign.map_or_else(|| "NA".to_string(), |s| s.to_string()),
                r.epochs,
                t.preprocessing_s,
                t.train_s,
                t.inference_s,
                t.shap_s,
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Parses a CSV report. The file has no degenerate-metric columns, so
    /// every flag comes back clear, and it lists no failures.
    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header.join(",") != CSV_HEADER {
            return Err(Error::Format {
                file: path.to_path_buf(),
                line: 1,
                msg: "unexpected report header".into(),
            });
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let fail = |msg: String| Error::Format {
                file: path.to_path_buf(),
                line,
                msg,
            };
            let field = |c: usize| rec.get(c).unwrap_or_default();
            let num = |c: usize| -> Result<f64> {
                field(c)
                    .parse()
                    .map_err(|_| fail(format!("column {} is not a number: {:?}", c + 1, field(c))))
            };
            let parsed = |e: Error| fail(e.to_string());
            let key = CellKey {
                band: field(0).parse().map_err(parsed)?,
                dataset: field(1).parse().map_err(parsed)?,
                model: field(2).parse().map_err(parsed)?,
                optimizer: field(3).parse().map_err(parsed)?,
            };
            let efficient_class = match field(12) {
                "L" => Hemisphere::Left,
                "R" => Hemisphere::Right,
                other => return Err(fail(format!("efficient_class {other:?} is not L or R"))),
            };
            let shap_sign = match field(13) {
                "+ve" => Some(Sign::Positive),
                "-ve" => Some(Sign::Negative),
                "NA" => None,
                other => return Err(fail(format!("shap_sign {other:?} is not +ve, -ve or NA"))),
            };
            rows.push(RunResult {
                key,
                train_acc: num(4)?,
                val_acc: num(5)?,
                test_acc: num(6)?,
                metrics: MetricsReport {
                    precision: num(7)?,
                    recall: num(8)?,
                    specificity: num(9)?,
                    f1: num(10)?,
                    accuracy: num(6)?,
                    roc_auc: num(11)?,
                    degenerate: Degenerate::default(),
                },
                efficient_class,
                shap_sign,
                epochs: field(14)
                    .parse()
                    .map_err(|_| fail(format!("epochs {:?} is not an integer", field(14))))?,
                timings: Timings {
                    preprocessing_s: num(15)?,
                    train_s: num(16)?,
                    inference_s: num(17)?,
                    shap_s: num(18)?,
                },
            });
        }
        Self::new(rows, Vec::new())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: ResultTable = serde_json::from_str(text)?;
        Self::new(t.rows, t.failures)
    }

    /// Reads a report, choosing the parser by extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match ReportFormat::for_path(path) {
            ReportFormat::Csv => Self::from_csv(&text, path),
            ReportFormat::Json => Self::from_json(&text),
        }
    }

    /// Writes the report; an empty table is refused.
    pub fn emit(&self, format: ReportFormat, path: &Path) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid("refusing to write an empty report"));
        }
        let text = match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => self.to_json()?,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Best test ROC AUC per (rhythm, dataset), with the cell that reached it.
    pub fn max_auc_summary(&self) -> String {
        let mut out = String::from("rhythm,dataset,model,optimizer,roc_auc\n");
        let mut i = 0;
        while i < self.rows.len() {
            let k = self.rows[i].key;
            let group: Vec<&RunResult> = self.rows[i..]
                .iter()
                .take_while(|r| r.key.band == k.band && r.key.dataset == k.dataset)
                .collect();
            i += group.len();
            let best = group
                .iter()
                .copied()
                .reduce(|a, b| if b.metrics.roc_auc > a.metrics.roc_auc { b } else { a })
                .expect("groups are non-empty");
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                k.band, k.dataset, best.key.model, best.key.optimizer, best.metrics.roc_auc
            ));
        }
        out
    }
}
