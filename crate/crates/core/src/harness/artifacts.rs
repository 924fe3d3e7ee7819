//! On-disk forms of trained models, histories, results and embeddings.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::train::{History, TrainedModel};

pub const MODEL_FORMAT: &str = "proxy-debias-model/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub config_hash: String,
    pub feature_dim: usize,
    /// Coupling probabilities of the data the model was trained on.
    pub rho: Vec<f64>,
    pub model: TrainedModel,
}

impl ModelFile {
    pub fn new(model: TrainedModel, config_hash: String, rho: Vec<f64>) -> Self {
        ModelFile {
            format: MODEL_FORMAT.to_string(),
            config_hash,
            feature_dim: model.params.input_dim(),
            rho,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("model serialises");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Config(format!(
                "{}: unsupported model format {:?}",
                path.display(),
                file.format
            )));
        }
        if file.feature_dim != file.model.params.input_dim() {
            return Err(Error::Config(format!(
                "{}: header feature_dim {} disagrees with the stored weights",
                path.display(),
                file.feature_dim
            )));
        }
        file.model.validate()?;
        Ok(file)
    }

    /// Refuses a test set whose shape the model cannot score.
    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.feature_dim() != self.feature_dim {
            return Err(Error::Config(format!(
                "model expects {} features, dataset has {}",
                self.feature_dim,
                ds.feature_dim()
            )));
        }
        if ds.num_bias() < self.model.bank.num_attributes() {
            return Err(Error::Config(format!(
                "model has proxies for {} bias attributes, dataset labels only {}",
                self.model.bank.num_attributes(),
                ds.num_bias()
            )));
        }
        Ok(())
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().from_writer(BufWriter::new(file)))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

pub fn save_history(history: &History, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let map = |e| csv_err(path, e);
    w.write_record(["epoch", "target_loss", "enhancement_loss", "train_accuracy"])
        .map_err(map)?;
    for r in &history.epochs {
        w.write_record([
            r.epoch.to_string(),
            r.target_loss.to_string(),
            r.enhancement_loss.map(|v| v.to_string()).unwrap_or_default(),
            r.train_accuracy.to_string(),
        ])
        .map_err(map)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One evaluated trial. Metric vectors hold one entry per bias attribute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub mode: String,
    pub seed: u64,
    pub rho: Vec<f64>,
    pub proxy_dim: usize,
    pub config_hash: String,
    pub metrics: Option<MetricsReport>,
    pub wall_time_seconds: f64,
    pub error: Option<String>,
}

impl ResultRecord {
    pub fn accuracy(&self) -> Option<f64> {
        self.metrics.as_ref().map(|m| m.accuracy)
    }

    pub fn equalodds(&self, k: usize) -> Option<f64> {
        self.metrics.as_ref().and_then(|m| m.equalodds.get(k).copied())
    }

    pub fn counter_p(&self, k: usize) -> Option<f64> {
        self.metrics.as_ref().and_then(|m| m.counter_p.get(k).copied())
    }
}

pub fn results_header(num_bias: usize) -> Vec<String> {
    let mut h = vec!["mode".to_string(), "seed".to_string()];
    h.extend((0..num_bias).map(|k| format!("rho{}", k)));
    h.push("proxy_dim".into());
    h.push("accuracy".into());
    h.extend((0..num_bias).map(|k| format!("equalodds{}", k)));
    for name in [
        "equal_opportunity0",
        "statistical_parity0",
        "counter_p0",
        "wall_time_seconds",
        "error",
    ] {
        h.push(name.into());
    }
    h
}

/// Results table with a fixed header; rows are written in the given order.
pub fn save_results(records: &[ResultRecord], num_bias: usize, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let map = |e| csv_err(path, e);
    w.write_record(results_header(num_bias)).map_err(map)?;
    for r in records {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let m = r.metrics.as_ref();
        let mut row = vec![r.mode.clone(), r.seed.to_string()];
        row.extend((0..num_bias).map(|k| opt(r.rho.get(k).copied())));
        row.push(r.proxy_dim.to_string());
        row.push(opt(r.accuracy()));
        row.extend((0..num_bias).map(|k| opt(r.equalodds(k))));
        row.push(opt(m.and_then(|m| m.equal_opportunity.first().copied())));
        row.push(opt(m.and_then(|m| m.statistical_parity.first().copied())));
        row.push(opt(r.counter_p(0)));
        row.push(r.wall_time_seconds.to_string());
        row.push(r.error.clone().unwrap_or_default());
        w.write_record(&row).map_err(map)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a results table back into `(header, rows)` of raw strings.
pub fn read_results(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().from_reader(file);
    let header = r
        .headers()
        .map_err(|e| Error::parse(1, e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::parse(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        rows.push(rec.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

pub fn save_predictions(predictions: &[usize], targets: &[usize], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "index,prediction,target").map_err(io)?;
    for (i, (p, t)) in predictions.iter().zip(targets).enumerate() {
        writeln!(w, "{},{},{}", i, p, t).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Penultimate features with the target and bias labels appended.
pub fn save_embeddings(features: &crate::numeric::Tensor, ds: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header: Vec<String> = (0..features.cols()).map(|j| format!("e{}", j)).collect();
    header.push("t".into());
    header.extend((0..ds.num_bias()).map(|k| format!("b{}", k)));
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    let mut line = String::new();
    for i in 0..ds.len() {
        line.clear();
        let mut fields: Vec<String> = features.row(i).iter().map(|v| v.to_string()).collect();
        fields.push(ds.targets[i].to_string());
        fields.extend(ds.bias.iter().map(|c| c[i].to_string()));
        line.push_str(&fields.join(","));
        writeln!(w, "{}", line).map_err(io)?;
    }
    w.flush().map_err(io)
}
