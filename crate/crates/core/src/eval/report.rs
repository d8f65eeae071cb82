use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{Head, PredictionBundle};
use crate::labels::SceneClass;
use crate::train::cross_entropy;

/// Bumped whenever the JSON layout changes.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadMetrics {
    pub head: Head,
    pub accuracy: f64,
    /// Mean cross-entropy with probabilities clamped to `[1e-7, 1 - 1e-7]`.
    pub log_loss: f64,
    /// Per-class accuracy; `None` for classes without examples.
    pub class_accuracy: Vec<Option<f64>>,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub n_examples: usize,
    pub class_names: Vec<String>,
    pub class_counts: Vec<u64>,
    pub heads: Vec<HeadMetrics>,
}

impl EvalReport {
    /// Aggregates clip-level predictions. Every head present in all bundles
    /// is scored; argmax ties go to the lowest class index.
    pub fn from_predictions(predictions: &[PredictionBundle], labels: &[usize], n_classes: usize) -> Result<Self> {
        if predictions.is_empty() || predictions.len() != labels.len() {
            return Err(Error::Config(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::Config(format!("label {y} outside {n_classes} classes")));
        }
        let heads: Vec<Head> = Head::ALL
            .into_iter()
            .filter(|h| predictions.iter().all(|p| p.get(*h).is_some_and(|v| v.len() == n_classes)))
            .collect();
        if heads.is_empty() {
            return Err(Error::MissingHead("any".into()));
        }
        let mut class_counts = vec![0u64; n_classes];
        for &y in labels {
            class_counts[y] += 1;
        }
        let heads = heads
            .into_iter()
            .map(|head| {
                let probs: Vec<Vec<f64>> = predictions.iter().map(|p| p.get(head).unwrap().to_vec()).collect();
                let mut confusion = vec![vec![0u64; n_classes]; n_classes];
                let mut correct = 0u64;
                for (p, &y) in probs.iter().zip(labels) {
                    let pred = avscene_autodiff::argmax(p);
                    confusion[y][pred] += 1;
                    correct += (pred == y) as u64;
                }
                let class_accuracy = (0..n_classes)
                    .map(|c| (class_counts[c] > 0).then(|| confusion[c][c] as f64 / class_counts[c] as f64))
                    .collect();
                HeadMetrics {
                    head,
                    accuracy: correct as f64 / labels.len() as f64,
                    log_loss: cross_entropy(&probs, labels),
                    class_accuracy,
                    confusion,
                }
            })
            .collect();
        let class_names = (0..n_classes)
            .map(|c| SceneClass::from_index(c).map_or_else(|| format!("class_{c}"), |s| s.name().to_string()))
            .collect();
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            n_examples: labels.len(),
            class_names,
            class_counts,
            heads,
        })
    }

    pub fn head(&self, head: Head) -> Option<&HeadMetrics> {
        self.heads.iter().find(|h| h.head == head)
    }

    pub fn accuracy(&self, head: Head) -> Option<f64> {
        self.head(head).map(|h| h.accuracy)
    }

    /// Accuracy of `head` restricted to the given classes.
    pub fn accuracy_on(&self, head: Head, classes: &[usize]) -> Option<f64> {
        let h = self.head(head)?;
        let correct: u64 = classes.iter().map(|&c| h.confusion[c][c]).sum();
        let total: u64 = classes.iter().map(|&c| self.class_counts[c]).sum();
        (total > 0).then(|| correct as f64 / total as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "report schema version {} is not supported (expected {REPORT_SCHEMA_VERSION})",
                report.schema_version
            )));
        }
        Ok(report)
    }

    /// Long-format CSV `section,head,row,col,value` holding every field;
    /// [`EvalReport::from_csv`] reads it back exactly.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["section", "head", "row", "col", "value"])?;
        w.write_record(["meta", "", "schema_version", "", &self.schema_version.to_string()])?;
        w.write_record(["meta", "", "n_examples", "", &self.n_examples.to_string()])?;
        for (name, count) in self.class_names.iter().zip(&self.class_counts) {
            w.write_record(["class_count", "", name, "", &count.to_string()])?;
        }
        for h in &self.heads {
            let head = h.head.name();
            w.write_record(["summary", head, "accuracy", "", &h.accuracy.to_string()])?;
            w.write_record(["summary", head, "log_loss", "", &h.log_loss.to_string()])?;
            for (name, acc) in self.class_names.iter().zip(&h.class_accuracy) {
                let v = acc.map_or(String::new(), |a| a.to_string());
                w.write_record(["class_accuracy", head, name, "", &v])?;
            }
            for (t, row) in h.confusion.iter().enumerate() {
                for (p, n) in row.iter().enumerate() {
                    w.write_record(["confusion", head, &self.class_names[t], &self.class_names[p], &n.to_string()])?;
                }
            }
        }
        finish(w)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let bad = |m: String| Error::Config(format!("report CSV: {m}"));
        let mut report = EvalReport {
            schema_version: 0,
            n_examples: 0,
            class_names: Vec::new(),
            class_counts: Vec::new(),
            heads: Vec::new(),
        };
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
        let int = |s: &str| s.parse::<u64>().map_err(|e| bad(format!("`{s}`: {e}")));
        for rec in reader.records() {
            let rec = rec?;
            let (section, head, row, col, value) = (&rec[0], &rec[1], &rec[2], &rec[3], &rec[4]);
            let class = |name: &str, names: &[String]| {
                names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| bad(format!("unknown class `{name}`")))
            };
            match section {
                "meta" if row == "schema_version" => report.schema_version = int(value)? as u32,
                "meta" if row == "n_examples" => report.n_examples = int(value)? as usize,
                "class_count" => {
                    report.class_names.push(row.to_string());
                    report.class_counts.push(int(value)?);
                }
                "summary" | "class_accuracy" | "confusion" => {
                    let head: Head = head.parse().map_err(bad)?;
                    let n = report.class_names.len();
                    if report.heads.last().is_none_or(|h| h.head != head) {
                        report.heads.push(HeadMetrics {
                            head,
                            accuracy: 0.0,
                            log_loss: 0.0,
                            class_accuracy: vec![None; n],
                            confusion: vec![vec![0; n]; n],
                        });
                    }
                    let names = report.class_names.clone();
                    let h = report.heads.last_mut().unwrap();
                    match (section, row) {
                        ("summary", "accuracy") => h.accuracy = num(value)?,
                        ("summary", "log_loss") => h.log_loss = num(value)?,
                        ("class_accuracy", _) => {
                            h.class_accuracy[class(row, &names)?] = if value.is_empty() { None } else { Some(num(value)?) }
                        }
                        ("confusion", _) => h.confusion[class(row, &names)?][class(col, &names)?] = int(value)?,
                        _ => return Err(bad(format!("unknown summary field `{row}`"))),
                    }
                }
                _ => return Err(bad(format!("unknown row `{section},{row}`"))),
            }
        }
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(bad(format!("schema version {} is not supported", report.schema_version)));
        }
        Ok(report)
    }

    /// Class rows by head columns, plus a mean row.
    pub fn class_accuracy_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["class".to_string()];
        header.extend(self.heads.iter().map(|h| h.head.name().to_string()));
        w.write_record(&header)?;
        for (c, name) in self.class_names.iter().enumerate() {
            let mut row = vec![name.clone()];
            row.extend(self.heads.iter().map(|h| h.class_accuracy[c].map_or(String::new(), |a| a.to_string())));
            w.write_record(&row)?;
        }
        let mut mean = vec!["mean".to_string()];
        mean.extend(self.heads.iter().map(|h| mean_class_accuracy(h).to_string()));
        w.write_record(&mean)?;
        finish(w)
    }

    /// Confusion counts of one head: true classes as rows, predictions as
    /// columns, with a row total.
    pub fn confusion_csv(&self, head: Head) -> Result<String> {
        let h = self.head(head).ok_or_else(|| Error::MissingHead(head.name().into()))?;
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(self.class_names.iter().cloned());
        header.push("total".into());
        w.write_record(&header)?;
        for (name, row) in self.class_names.iter().zip(&h.confusion) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(u64::to_string));
            rec.push(row.iter().sum::<u64>().to_string());
            w.write_record(&rec)?;
        }
        finish(w)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "examples: {}", self.n_examples).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "{:<10} {:>9} {:>9}", "head", "accuracy", "log-loss").unwrap();
        for h in &self.heads {
            writeln!(s, "{:<10} {:>9.4} {:>9.4}", h.head.name(), h.accuracy, h.log_loss).unwrap();
        }
        writeln!(s).unwrap();
        write!(s, "{:<18}", "class").unwrap();
        for h in &self.heads {
            write!(s, " {:>8}", h.head.name()).unwrap();
        }
        writeln!(s).unwrap();
        for (c, name) in self.class_names.iter().enumerate() {
            write!(s, "{name:<18}").unwrap();
            for h in &self.heads {
                match h.class_accuracy[c] {
                    Some(a) => write!(s, " {a:>8.4}").unwrap(),
                    None => write!(s, " {:>8}", "-").unwrap(),
                }
            }
            writeln!(s).unwrap();
        }
        write!(s, "{:<18}", "mean").unwrap();
        for h in &self.heads {
            write!(s, " {:>8.4}", mean_class_accuracy(h)).unwrap();
        }
        writeln!(s).unwrap();
        s
    }
}

/// Mean over classes that have examples.
fn mean_class_accuracy(h: &HeadMetrics) -> f64 {
    let present: Vec<f64> = h.class_accuracy.iter().flatten().copied().collect();
    present.iter().sum::<f64>() / present.len().max(1) as f64
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format `{other}` (expected text, csv or json)")),
        }
    }
}

/// Writes the report into `dir` and returns the files created:
/// `report.txt`; `report.csv`, `class_accuracy.csv` and
/// `confusion_<head>.csv`; or `report.json`.
pub fn render(report: &EvalReport, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = vec![];
    match format {
        ReportFormat::Text => files.push(("report.txt".to_string(), report.to_text())),
        ReportFormat::Json => files.push(("report.json".to_string(), report.to_json()?)),
        ReportFormat::Csv => {
            files.push(("report.csv".to_string(), report.to_csv()?));
            files.push(("class_accuracy.csv".to_string(), report.class_accuracy_csv()?));
            for h in &report.heads {
                files.push((format!("confusion_{}.csv", h.head.name()), report.confusion_csv(h.head)?));
            }
        }
    }
    files
        .into_iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
