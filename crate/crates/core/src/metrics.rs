//! Metrics CSV: one row per layer per evaluation.
//!
//! Header: `iteration,layer,test_ll_nats,dbn_bound_nats,swap_rate_pair_1,…,
//! swap_rate_pair_{M-1},learning_rate,seconds`. Layers are numbered from 1.
//! Absent values are empty fields. Floats use the shortest representation that
//! round-trips.

use std::fs::{File, OpenOptions};
use std::io::{Seek, SeekFrom};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub layer: usize,
    pub test_ll_nats: Option<f64>,
    pub dbn_bound_nats: Option<f64>,
    pub swap_rates: Vec<Option<f64>>,
    pub learning_rate: f64,
    pub seconds: f64,
}

pub fn header(n_pairs: usize) -> Vec<String> {
    let mut h: Vec<String> = ["iteration", "layer", "test_ll_nats", "dbn_bound_nats"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=n_pairs).map(|k| format!("swap_rate_pair_{k}")));
    h.push("learning_rate".into());
    h.push("seconds".into());
    h
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl MetricsRow {
    fn record(&self) -> Vec<String> {
        let mut r = vec![
            self.iteration.to_string(),
            self.layer.to_string(),
            opt(self.test_ll_nats),
            opt(self.dbn_bound_nats),
        ];
        r.extend(self.swap_rates.iter().map(|&x| opt(x)));
        r.push(self.learning_rate.to_string());
        r.push(self.seconds.to_string());
        r
    }

    fn parse(record: &csv::StringRecord, n_pairs: usize, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if record.len() != n_pairs + 6 {
            return Err(bad(format!("row has {} fields, expected {}", record.len(), n_pairs + 6)));
        }
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse()
                .map_err(|_| bad(format!("field {} is not a number: {:?}", i + 1, &record[i])))
        };
        let maybe = |i: usize| -> Result<Option<f64>> {
            if record[i].is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        let int = |i: usize| -> Result<u64> {
            record[i]
                .parse()
                .map_err(|_| bad(format!("field {} is not an integer: {:?}", i + 1, &record[i])))
        };
        Ok(MetricsRow {
            iteration: int(0)?,
            layer: int(1)? as usize,
            test_ll_nats: maybe(2)?,
            dbn_bound_nats: maybe(3)?,
            swap_rates: (0..n_pairs).map(|k| maybe(4 + k)).collect::<Result<_>>()?,
            learning_rate: num(4 + n_pairs)?,
            seconds: num(5 + n_pairs)?,
        })
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Format {
            path: path.to_path_buf(),
            reason: format!("{other:?}"),
        },
    }
}

/// Appending CSV writer; every row is flushed as it is written.
pub struct MetricsWriter {
    path: PathBuf,
    n_pairs: usize,
    writer: csv::Writer<File>,
}

impl MetricsWriter {
    /// Creates `path` with a header, or appends to it after checking its header.
    pub fn open(path: &Path, n_pairs: usize) -> Result<Self> {
        let exists = path.metadata().map(|m| m.len() > 0).unwrap_or(false);
        if exists {
            let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
            let found: Vec<String> = reader
                .headers()
                .map_err(|e| csv_error(path, e))?
                .iter()
                .map(str::to_string)
                .collect();
            if found != header(n_pairs) {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    reason: format!("header {found:?} does not match {:?}", header(n_pairs)),
                });
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        file.seek(SeekFrom::End(0)).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if !exists {
            writer.write_record(header(n_pairs)).map_err(|e| csv_error(path, e))?;
            writer.flush().map_err(|e| Error::io(path, e))?;
        }
        Ok(MetricsWriter {
            path: path.to_path_buf(),
            n_pairs,
            writer,
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        if row.swap_rates.len() != self.n_pairs {
            return Err(Error::InvalidParameter(format!(
                "row has {} swap rates, file has {} pairs",
                row.swap_rates.len(),
                self.n_pairs
            )));
        }
        self.writer
            .write_record(row.record())
            .map_err(|e| csv_error(&self.path, e))?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Writes a complete file, replacing any existing one.
pub fn write_metrics(path: &Path, n_pairs: usize, rows: &[MetricsRow]) -> Result<()> {
    if path.exists() {
        std::fs::remove_file(path).map_err(|e| Error::io(path, e))?;
    }
    let mut w = MetricsWriter::open(path, n_pairs)?;
    rows.iter().try_for_each(|r| w.write(r))
}

/// Reads a metrics file. Returns the number of swap pairs and the rows.
pub fn read_metrics(path: &Path) -> Result<(usize, Vec<MetricsRow>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let found: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if found.len() < 6 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "header too short".into(),
        });
    }
    let n_pairs = found.len() - 6;
    if found != header(n_pairs) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("unexpected header {found:?}"),
        });
    }
    let rows = reader
        .records()
        .map(|r| {
            let r = r.map_err(|e| csv_error(path, e))?;
            MetricsRow::parse(&r, n_pairs, path)
        })
        .collect::<Result<_>>()?;
    Ok((n_pairs, rows))
}

/// Drops every row past `iteration`, as when resuming from a checkpoint taken there.
pub fn truncate_metrics(path: &Path, iteration: u64) -> Result<()> {
    let (n_pairs, rows) = read_metrics(path)?;
    let kept: Vec<_> = rows.into_iter().filter(|r| r.iteration <= iteration).collect();
    write_metrics(path, n_pairs, &kept)
}
