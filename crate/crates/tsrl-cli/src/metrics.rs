//! Per-episode training metrics as CSV.
//!
//! The schema is fixed: `step,episode,episode_return,loss_mean,epsilon,wall_seconds`.
//! Floats are written with Rust's shortest round-trip formatting so identical
//! runs produce identical bytes; `wall_seconds` is the only column expected to
//! differ between repeats.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use tsrl_core::agent::MetricsRow;
use tsrl_core::error::Error;
use tsrl_core::Result;

pub const HEADER: &str = "step,episode,episode_return,loss_mean,epsilon,wall_seconds";

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{}", v)
    }
}

fn file_err(path: &Path, e: std::io::Error) -> Error {
    Error::External(format!("{}: {}", path.display(), e))
}

/// Line-buffered CSV writer; each row is flushed so partial runs stay readable.
pub struct MetricsWriter {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| file_err(path, e))?;
        let mut writer = MetricsWriter { out: BufWriter::new(file), path: path.to_path_buf() };
        writer.write_line(HEADER)?;
        Ok(writer)
    }

    fn write_line(&mut self, line: &str) -> Result<()> {
        self.out
            .write_all(line.as_bytes())
            .and_then(|_| self.out.write_all(b"\n"))
            .and_then(|_| self.out.flush())
            .map_err(|e| file_err(&self.path, e))
    }

    pub fn write_row(&mut self, row: &MetricsRow) -> Result<()> {
        let line = format!(
            "{},{},{},{},{},{}",
            row.step,
            row.episode,
            fmt_f64(row.episode_return),
            fmt_f64(row.loss_mean),
            fmt_f64(row.epsilon),
            fmt_f64(row.wall_seconds),
        );
        self.write_line(&line)
    }
}

/// A parsed metrics.csv.
#[derive(Clone, Debug)]
pub struct MetricsFile {
    pub rows: Vec<MetricsRow>,
}

impl MetricsFile {
    pub fn episode_returns(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.episode_return).collect()
    }
}

fn parse_field<T: std::str::FromStr>(field: &str, name: &str, path: &Path, line_no: usize) -> Result<T> {
    field.parse::<T>().map_err(|_| {
        Error::External(format!(
            "{} line {}: bad {} value {:?}",
            path.display(),
            line_no,
            name,
            field
        ))
    })
}

pub fn read_metrics(path: &Path) -> Result<MetricsFile> {
    let text = std::fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == HEADER => {}
        Some((_, header)) => {
            return Err(Error::External(format!(
                "{}: unexpected header {:?}",
                path.display(),
                header
            )));
        }
        None => return Err(Error::External(format!("{}: empty file", path.display()))),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::External(format!(
                "{} line {}: expected 6 fields, got {}",
                path.display(),
                line_no,
                fields.len()
            )));
        }
        rows.push(MetricsRow {
            step: parse_field(fields[0], "step", path, line_no)?,
            episode: parse_field(fields[1], "episode", path, line_no)?,
            episode_return: parse_field(fields[2], "episode_return", path, line_no)?,
            loss_mean: parse_field(fields[3], "loss_mean", path, line_no)?,
            epsilon: parse_field(fields[4], "epsilon", path, line_no)?,
            wall_seconds: parse_field(fields[5], "wall_seconds", path, line_no)?,
        });
    }
    Ok(MetricsFile { rows })
}
