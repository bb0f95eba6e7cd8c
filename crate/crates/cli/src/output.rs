//! The output directory: tables (CSV or JSON), KSUP1 dumps and JSON
//! summaries, all written atomically and recorded for the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use ksup::csvfmt::{fmt_f64, write_table};
use ksup::dump::{write_atomic, write_dump, DumpManifest};
use ksup::Matrix;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<i64> for Cell {
    fn from(x: i64) -> Self {
        Cell::Int(x)
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Float)
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_owned())
    }
}

/// Long-format table with a fixed header.
pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn csv_bytes(&self) -> Result<Vec<u8>> {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|c| match c {
                        Cell::Int(i) => i.to_string(),
                        Cell::Float(x) => fmt_f64(*x),
                        Cell::Text(s) => s.clone(),
                        Cell::Empty => String::new(),
                    })
                    .collect()
            })
            .collect();
        let mut buf = Vec::new();
        write_table(&mut buf, &self.header, &rows)?;
        Ok(buf)
    }

    fn json_value(&self) -> Value {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let obj = self
                    .header
                    .iter()
                    .zip(r)
                    .map(|(h, c)| {
                        let v = match c {
                            Cell::Int(i) => Value::from(*i),
                            Cell::Float(x) => Value::from(*x),
                            Cell::Text(s) => Value::from(s.as_str()),
                            Cell::Empty => Value::Null,
                        };
                        (h.to_string(), v)
                    })
                    .collect();
                Value::Object(obj)
            })
            .collect();
        Value::Array(rows)
    }
}

pub struct OutDir {
    root: PathBuf,
    format: Format,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path, format: Format) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("cannot create output directory {}", root.display()))?;
        Ok(Self {
            root: root.to_owned(),
            format,
            written: Vec::new(),
        })
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    fn record(&mut self, name: &str) -> Result<PathBuf> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        self.written.push(name.to_owned());
        Ok(path)
    }

    /// Writes `stem.csv` or `stem.json` according to `--format`.
    pub fn table(&mut self, stem: &str, table: &Table) -> Result<()> {
        let (name, bytes) = match self.format {
            Format::Csv => (format!("{stem}.csv"), table.csv_bytes()?),
            Format::Json => (format!("{stem}.json"), pretty(&table.json_value())?),
        };
        let path = self.record(&name)?;
        write_atomic(&path, &bytes).with_context(|| format!("writing {}", path.display()))
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let path = self.record(name)?;
        write_atomic(&path, &pretty(value)?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.record(name)?;
        write_atomic(&path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
    }

    pub fn dump(&mut self, name: &str, m: &Matrix, manifest: &DumpManifest) -> Result<()> {
        let path = self.record(name)?;
        write_dump(&path, m, manifest).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(format!("{name}.json"));
        Ok(())
    }
}

pub fn pretty(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}
