use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.to_string(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Sections of `report.json`, CSV tables and log lines. Everything is kept in
/// insertion or key order so emitting twice gives identical bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportBundle {
    pub sections: BTreeMap<String, serde_json::Value>,
    pub tables: Vec<Table>,
    pub log: Vec<String>,
}

pub const NORM_TABLE_HEADER: [&str; 9] =
    ["resolution", "operator", "domain", "codomain", "estimate", "probe_count", "skipped", "argmax_probe", "drift_percent"];

impl Default for ReportBundle {
    fn default() -> Self {
        Self::new()
    }
}

impl ReportBundle {
    /// Starts with an empty `norm_reports` table.
    pub fn new() -> Self {
        Self { sections: BTreeMap::new(), tables: vec![Table::new("norm_reports", &NORM_TABLE_HEADER)], log: Vec::new() }
    }

    pub fn section<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.sections.insert(name.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn table_mut(&mut self, name: &str, header: &[&str]) -> &mut Table {
        if let Some(i) = self.tables.iter().position(|t| t.name == name) {
            return &mut self.tables[i];
        }
        self.tables.push(Table::new(name, header));
        self.tables.last_mut().unwrap()
    }

    pub fn log(&mut self, line: impl Into<String>) {
        self.log.push(line.into());
    }

    pub fn merge(&mut self, other: ReportBundle) {
        self.sections.extend(other.sections);
        for t in other.tables {
            let dst = self.table_mut(&t.name, &t.header.iter().map(String::as_str).collect::<Vec<_>>());
            dst.rows.extend(t.rows);
        }
        self.log.extend(other.log);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.sections)? + "\n")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportPaths {
    pub report: PathBuf,
    pub tables: Vec<PathBuf>,
    pub log: PathBuf,
}

/// Writes `report.json`, `tables/<name>.csv` and `log.txt` under `dir`.
pub fn emit_reports(bundle: &ReportBundle, dir: &Path) -> Result<ReportPaths> {
    let tables_dir = dir.join("tables");
    std::fs::create_dir_all(&tables_dir)?;
    let report = dir.join("report.json");
    std::fs::write(&report, bundle.to_json()?)?;
    let mut tables = Vec::new();
    for t in &bundle.tables {
        let path = tables_dir.join(format!("{}.csv", t.name));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&t.header)?;
        for row in &t.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        tables.push(path);
    }
    let log = dir.join("log.txt");
    let mut text = bundle.log.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    std::fs::write(&log, text)?;
    Ok(ReportPaths { report, tables, log })
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}
