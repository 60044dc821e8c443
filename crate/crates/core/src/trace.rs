//! CSV traces and JSON summaries.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::engine::{RunSummary, TraceRecord};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}, line {line}: {msg}")]
    Malformed { path: PathBuf, line: usize, msg: String },
}

/// Column names for a team of `n` UAVs. The target is agent 0.
pub fn csv_header(n: usize) -> Vec<String> {
    let mut h: Vec<String> = ["k", "t", "px_0", "py_0", "vx_0", "vy_0"].iter().map(|s| s.to_string()).collect();
    for i in 1..=n {
        h.extend([format!("px_{i}"), format!("py_{i}"), format!("vx_{i}"), format!("vy_{i}")]);
    }
    for i in 1..=n {
        h.extend([format!("phx_{i}0"), format!("phy_{i}0")]);
    }
    h.extend((1..=n).map(|i| format!("theta_{i}")));
    h.extend(["e_t", "max_ep", "max_ptilde", "max_p0tilde", "v0tilde"].iter().map(|s| s.to_string()));
    h.extend((1..=n).map(|i| format!("vis_{i}")));
    h
}

/// `printf("%.9g")`.
pub fn format_g9(v: f64) -> String {
    const PREC: i32 = 9;
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !v.is_finite() {
        return if v.is_nan() { "nan".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{:.*e}", (PREC - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..PREC).contains(&exp) {
        let fixed = format!("{:.*}", (PREC - 1 - exp) as usize, v);
        strip_zeros(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip_zeros(mantissa), exp.abs())
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn csv_row(r: &TraceRecord) -> String {
    let mut cells = vec![r.k.to_string(), format_g9(r.t)];
    let mut push = |v: f64| cells.push(format_g9(v));
    push(r.target.p.x);
    push(r.target.p.y);
    push(r.target.v.x);
    push(r.target.v.y);
    for s in &r.uavs {
        push(s.p.x);
        push(s.p.y);
        push(s.v.x);
        push(s.v.y);
    }
    for x in &r.estimates {
        push(x[0]);
        push(x[1]);
    }
    for &th in &r.theta {
        push(th);
    }
    let m = &r.metrics;
    for v in [m.e_t, m.max_ep, m.max_ptilde, m.max_p0tilde, m.v0tilde] {
        push(v);
    }
    cells.extend(r.visible.iter().map(|&b| if b { "1" } else { "0" }.to_string()));
    cells.join(",")
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> TraceError + '_ {
    move |source| TraceError::Io { path: path.to_path_buf(), source }
}

pub fn write_trace(records: &[TraceRecord], n: usize, path: &Path) -> Result<(), TraceError> {
    let err = io_err(path);
    let mut w = BufWriter::new(File::create(path).map_err(&err)?);
    writeln!(w, "{}", csv_header(n).join(",")).map_err(&err)?;
    for r in records {
        writeln!(w, "{}", csv_row(r)).map_err(&err)?;
    }
    w.flush().map_err(&err)
}

/// Streams rows to a CSV file as the run produces them.
pub struct TraceWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl TraceWriter {
    pub fn create(path: &Path, n: usize) -> Result<Self, TraceError> {
        let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
        writeln!(out, "{}", csv_header(n).join(",")).map_err(io_err(path))?;
        Ok(Self { path: path.to_path_buf(), out })
    }

    pub fn write(&mut self, r: &TraceRecord) -> Result<(), TraceError> {
        writeln!(self.out, "{}", csv_row(r)).map_err(io_err(&self.path))
    }

    pub fn finish(mut self) -> Result<(), TraceError> {
        self.out.flush().map_err(io_err(&self.path))
    }
}

/// A parsed CSV trace.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTrace {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTrace {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }
}

pub fn read_trace(path: &Path) -> Result<CsvTrace, TraceError> {
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut lines = reader.lines();
    let malformed = |line: usize, msg: String| TraceError::Malformed { path: path.to_path_buf(), line, msg };
    let header: Vec<String> = match lines.next() {
        Some(l) => l.map_err(io_err(path))?.split(',').map(str::to_string).collect(),
        None => return Err(malformed(1, "empty file".into())),
    };
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line.map_err(io_err(path))?;
        let row: Vec<f64> = line
            .split(',')
            .map(|c| c.parse::<f64>().map_err(|_| malformed(idx + 2, format!("`{c}` is not a number"))))
            .collect::<Result<_, _>>()?;
        if row.len() != header.len() {
            return Err(malformed(idx + 2, format!("{} cells, header has {}", row.len(), header.len())));
        }
        rows.push(row);
    }
    Ok(CsvTrace { header, rows })
}

pub fn write_summary(summary: &RunSummary, path: &Path) -> Result<(), TraceError> {
    let json = serde_json::to_string_pretty(summary).map_err(|source| TraceError::Json { path: path.to_path_buf(), source })?;
    std::fs::write(path, json + "\n").map_err(io_err(path))
}

pub fn read_summary(path: &Path) -> Result<serde_json::Value, TraceError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| TraceError::Json { path: path.to_path_buf(), source })
}
