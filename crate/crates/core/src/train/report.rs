use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::{ClassifierReport, SimilarityRow, TagMetrics};
use super::metrics::ClassMetrics;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub class_names: Vec<String>,
    pub classification: Vec<TagMetrics>,
    pub detection: Option<ClassMetrics>,
    pub similarity: Vec<SimilarityRow>,
}

impl MetricsReport {
    pub fn new(model: impl Into<String>, class_names: &[&str], classifier: ClassifierReport) -> Self {
        MetricsReport {
            model: model.into(),
            class_names: class_names.iter().map(|s| s.to_string()).collect(),
            classification: classifier.rows,
            detection: None,
            similarity: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// Rows per attack tag: accuracy, then sensitivity and specificity per class.
pub fn classification_csv(rows: &[TagMetrics], class_names: &[String]) -> String {
    let mut out = String::from("attack,records,accuracy");
    for n in class_names {
        let _ = write!(out, ",sensitivity_{n}");
    }
    for n in class_names {
        let _ = write!(out, ",specificity_{n}");
    }
    out.push('\n');
    for r in rows {
        let m = &r.metrics;
        let _ = write!(out, "{},{},{}", r.attack, m.total, m.accuracy);
        for v in m.sensitivity.iter().chain(&m.specificity) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn similarity_csv(rows: &[SimilarityRow]) -> String {
    let mut out = String::from("attack,records,mse,ssim,xcorr,nrmse\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.attack, r.records, r.mse, r.ssim, r.xcorr, r.nrmse);
    }
    out
}
