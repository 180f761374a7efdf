//! Run directories: CSV tables, dataset files and the provenance manifest.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use onlab::data::{Dataset, SplitDataset};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Serialize)]
struct OutputFile {
    file: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    command: &'a str,
    config_hash: String,
    seed: u64,
    config: &'a ExperimentConfig,
    outputs: Vec<OutputFile>,
    summary: &'a BTreeMap<String, serde_json::Value>,
    notes: &'a [String],
}

/// Output directory of one command invocation. Files are recorded as they
/// are written and listed, with their digests, in `manifest.json`.
pub struct RunDir {
    root: PathBuf,
    files: Vec<String>,
    pub summary: BTreeMap<String, serde_json::Value>,
    pub notes: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new(), summary: BTreeMap::new(), notes: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes a CSV with the given header and one serialized record per row.
    pub fn write_csv<R: Serialize>(&mut self, name: &str, header: &[&str], rows: &[R]) -> Result<(), CliError> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
        w.write_record(header)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.summary.insert(key.to_string(), serde_json::to_value(value).expect("serializable summary"));
    }

    pub fn finish(self, command: &str, cfg: &ExperimentConfig) -> Result<(), CliError> {
        let mut outputs = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let path = self.path(name);
            let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
            outputs.push(OutputFile { file: name.clone(), sha256: format!("{:x}", Sha256::digest(&bytes)) });
        }
        let manifest = Manifest {
            tool: "onlab",
            version: env!("CARGO_PKG_VERSION"),
            core_version: onlab::VERSION,
            command,
            config_hash: cfg.hash(),
            seed: cfg.seed,
            config: cfg,
            outputs,
            summary: &self.summary,
            notes: &self.notes,
        };
        let path = self.path("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| io_err(&path, e))
    }
}

/// Writes `split,label,x0,…` rows for every split.
pub fn write_dataset(run: &mut RunDir, name: &str, data: &SplitDataset) -> Result<(), CliError> {
    let dim = data.train.dim();
    let path = run.path(name);
    let file = File::create(&path).map_err(|e| io_err(&path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["split".to_string(), "label".to_string()];
    header.extend((0..dim).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for (tag, split) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
        for (x, y) in split.inputs.iter().zip(&split.labels) {
            let mut rec = vec![tag.to_string(), y.to_string()];
            // Debug formatting is the shortest text that parses back to the same value.
            rec.extend(x.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    run.files.push(name.to_string());
    Ok(())
}

/// Reads a dataset written by [`write_dataset`]; the class count is one more
/// than the largest label.
pub fn read_dataset(path: &Path) -> Result<SplitDataset, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let header = r.headers()?.clone();
    if header.get(0) != Some("split") || header.get(1) != Some("label") || header.len() < 3 {
        return Err(CliError::Config(format!("{}: expected a split,label,x0,... header", path.display())));
    }
    let mut parts: [(Vec<Vec<f64>>, Vec<usize>); 3] = Default::default();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let malformed = |what: &str| CliError::Config(format!("{}: row {}: {what}", path.display(), line + 2));
        let slot = match &rec[0] {
            "train" => 0,
            "val" => 1,
            "test" => 2,
            other => return Err(malformed(&format!("unknown split `{other}`"))),
        };
        let label: usize = rec[1].parse().map_err(|_| malformed("label is not a class index"))?;
        let x = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>().map_err(|_| malformed("non-numeric feature")))
            .collect::<Result<Vec<_>, _>>()?;
        parts[slot].0.push(x);
        parts[slot].1.push(label);
    }
    let classes = parts.iter().flat_map(|p| p.1.iter()).max().map_or(0, |m| m + 1);
    let mut splits = parts.into_iter().map(|(inputs, labels)| Dataset::new(inputs, labels, classes));
    Ok(SplitDataset {
        train: splits.next().expect("three splits")?,
        val: splits.next().expect("three splits")?,
        test: splits.next().expect("three splits")?,
    })
}

pub fn write_network_file(run: &mut RunDir, name: &str, net: &onlab::Network) -> Result<(), CliError> {
    let mut buf = Vec::new();
    onlab::network::write_network(net, &mut buf)?;
    run.write_bytes(name, &buf)
}

pub fn read_network_file(path: &Path) -> Result<onlab::Network, CliError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    Ok(onlab::network::read_network(std::io::BufReader::new(file))?)
}
