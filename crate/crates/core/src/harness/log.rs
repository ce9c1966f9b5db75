use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    /// End-of-epoch evaluation on the training contexts.
    Epoch,
    /// One optimizer update.
    Update,
    /// End-of-epoch evaluation on the special (validation) batch.
    Special,
    /// Special batch evaluated right after it was trained on.
    Inject,
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run_id: String,
    pub kind: RecordKind,
    /// Epoch (1-based) or update (1-based) number.
    pub index: u64,
    #[serde(rename = "M")]
    pub m: Option<f64>,
    pub ppl_val: Option<f64>,
    pub per_pos: Option<BTreeMap<String, [f64; 2]>>,
    #[serde(rename = "mean_L")]
    pub mean_l: Option<f64>,
    #[serde(rename = "mean_L_token")]
    pub mean_l_token: Option<f64>,
    pub tokens_processed: u64,
    pub wall_time: Option<f64>,
    pub epoch: u64,
    pub loss: Option<f64>,
    pub lr: Option<f64>,
    pub batch: Option<u64>,
}

impl MetricRecord {
    pub fn new(run_id: &str, kind: RecordKind, index: u64, epoch: u64, tokens_processed: u64) -> Self {
        MetricRecord {
            run_id: run_id.to_string(),
            kind,
            index,
            m: None,
            ppl_val: None,
            per_pos: None,
            mean_l: None,
            mean_l_token: None,
            tokens_processed,
            wall_time: None,
            epoch,
            loss: None,
            lr: None,
            batch: None,
        }
    }
}

/// Append-only JSONL writer; every record is flushed as a complete line.
pub struct MetricLog {
    path: PathBuf,
    file: File,
}

impl MetricLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(MetricLog {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append_to(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .append(true)
            .create(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(MetricLog {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn write(&mut self, rec: &MetricRecord) -> Result<()> {
        let mut line = serde_json::to_string(rec)?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    /// Rewrites the log keeping the records accepted by `keep`.
    pub fn truncate(path: &Path, keep: impl Fn(&MetricRecord) -> bool) -> Result<Vec<MetricRecord>> {
        let kept: Vec<MetricRecord> = read_records(path)?.into_iter().filter(|r| keep(r)).collect();
        let mut log = MetricLog::create(path)?;
        for r in &kept {
            log.write(r)?;
        }
        Ok(kept)
    }
}

/// Reads every complete line; a torn final line (no newline) is ignored.
pub fn read_records(path: &Path) -> Result<Vec<MetricRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).split(b'\n') {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        match serde_json::from_slice(&line) {
            Ok(r) => out.push(r),
            Err(e) if e.is_eof() => break,
            Err(e) => return Err(Error::Input(format!("{}: bad metric record: {e}", path.display()))),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_keys() {
        let mut r = MetricRecord::new("run-1", RecordKind::Epoch, 3, 3, 100);
        r.m = Some(0.5);
        r.per_pos = Some(BTreeMap::from([("NOUN".to_string(), [0.5, 0.25])]));
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for k in [
            "run_id",
            "kind",
            "index",
            "M",
            "ppl_val",
            "per_pos",
            "mean_L",
            "tokens_processed",
            "wall_time",
        ] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert_eq!(v["kind"], "epoch");
        assert_eq!(v["per_pos"]["NOUN"][1], 0.25);
    }

    #[test]
    fn write_read_truncate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut log = MetricLog::create(&path).unwrap();
        for i in 1..=4 {
            log.write(&MetricRecord::new("r", RecordKind::Update, i, 1, i * 10))
                .unwrap();
        }
        drop(log);
        std::fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .unwrap()
            .write_all(b"{\"run_id\":\"r\",\"ki")
            .unwrap();
        assert_eq!(read_records(&path).unwrap().len(), 4);
        let kept = MetricLog::truncate(&path, |r| r.index <= 2).unwrap();
        assert_eq!(kept.len(), 2);
        assert_eq!(read_records(&path).unwrap(), kept);
    }
}
