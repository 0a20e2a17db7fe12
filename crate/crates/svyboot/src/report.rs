//! Report rendering. Every command produces a typed, serializable report for
//! JSON and a [`Document`] view of the same numbers for text and CSV.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::error::{AppError, AppResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Text,
    Csv,
}

/// Scalar cell of a rendered table.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Int(u64),
    Bool(bool),
    Str(String),
    Null,
}

impl Value {
    pub fn opt(v: Option<f64>) -> Self {
        v.map_or(Value::Null, Value::Num)
    }

    /// Shortest representation that parses back to the same value; matches
    /// the JSON rendering.
    pub fn render(&self) -> String {
        match self {
            Value::Num(v) if v.is_finite() => format!("{v:?}"),
            Value::Num(_) | Value::Null => "null".into(),
            Value::Int(v) => v.to_string(),
            Value::Bool(b) => b.to_string(),
            Value::Str(s) => s.clone(),
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Num(v)
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as u64)
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Int(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Str(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(title: &str, columns: &[&str]) -> Self {
        Self { title: title.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Flat view of a report: header fields, then tables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Document {
    pub fields: Vec<(String, Value)>,
    pub tables: Vec<Table>,
}

impl Document {
    pub fn field(&mut self, key: &str, v: impl Into<Value>) {
        self.fields.push((key.to_string(), v.into()));
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let width = self.fields.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in &self.fields {
            let _ = writeln!(out, "{k:<width$}  {}", v.render());
        }
        for t in &self.tables {
            out.push('\n');
            let _ = writeln!(out, "{}", t.title);
            let cells: Vec<Vec<String>> = t.rows.iter().map(|r| r.iter().map(Value::render).collect()).collect();
            let widths: Vec<usize> = (0..t.columns.len())
                .map(|c| cells.iter().map(|r| r[c].len()).chain([t.columns[c].len()]).max().unwrap_or(0))
                .collect();
            let line = |row: &[String]| {
                let mut s = String::new();
                for (c, cell) in row.iter().enumerate() {
                    if c == 0 {
                        let _ = write!(s, "{cell:<w$}", w = widths[c]);
                    } else {
                        let _ = write!(s, "  {cell:>w$}", w = widths[c]);
                    }
                }
                s.trim_end().to_string()
            };
            let _ = writeln!(out, "{}", line(&t.columns));
            for row in &cells {
                let _ = writeln!(out, "{}", line(row));
            }
        }
        out
    }

    /// Header fields become `# key,value` comment lines; each table is a
    /// `# table,<title>` line followed by its header and rows.
    pub fn render_csv(&self) -> AppResult<String> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
        for (k, v) in &self.fields {
            w.write_record([format!("# {k}"), v.render()])?;
        }
        for t in &self.tables {
            w.write_record(["# table".to_string(), t.title.clone()])?;
            w.write_record(&t.columns)?;
            for row in &t.rows {
                w.write_record(row.iter().map(Value::render))?;
            }
        }
        let bytes = w.into_inner().map_err(|e| AppError::data(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| AppError::data(e.to_string()))
    }
}

/// Envelope shared by all reports.
#[derive(Debug, Clone, Serialize)]
pub struct Report<C: Serialize, R: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub master_seed: u64,
    pub config: C,
    pub results: R,
}

impl<C: Serialize, R: Serialize> Report<C, R> {
    pub fn new(command: &'static str, master_seed: u64, config: C, results: R) -> Self {
        Self { tool: "svyboot", version: VERSION, command, master_seed, config, results }
    }

    /// Header fields common to every text/CSV rendering, followed by the
    /// flattened configuration.
    pub fn header(&self) -> AppResult<Document> {
        let mut doc = Document::default();
        doc.field("tool", self.tool);
        doc.field("version", self.version);
        doc.field("command", self.command);
        doc.field("master_seed", self.master_seed);
        let config = serde_json::to_value(&self.config).map_err(|e| AppError::data(e.to_string()))?;
        flatten("config", &config, &mut doc.fields);
        Ok(doc)
    }
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, Value)>) {
    use serde_json::Value as J;
    match v {
        J::Object(map) => {
            for (k, v) in map {
                flatten(&format!("{prefix}.{k}"), v, out);
            }
        }
        J::Array(items) => {
            let joined = items
                .iter()
                .map(|i| match i {
                    J::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(";");
            out.push((prefix.to_string(), Value::Str(joined)));
        }
        J::Null => out.push((prefix.to_string(), Value::Null)),
        J::Bool(b) => out.push((prefix.to_string(), Value::Bool(*b))),
        J::Number(n) => out.push((
            prefix.to_string(),
            match (n.as_u64(), n.as_f64()) {
                (Some(u), _) => Value::Int(u),
                (None, Some(f)) => Value::Num(f),
                _ => Value::Str(n.to_string()),
            },
        )),
        J::String(s) => out.push((prefix.to_string(), Value::Str(s.clone()))),
    }
}

/// Writes `report` in `format`; `doc` is the text/CSV view of its results.
pub fn emit<C: Serialize, R: Serialize>(
    report: &Report<C, R>,
    tables: Vec<Table>,
    format: Format,
    out: &mut dyn Write,
) -> AppResult<()> {
    let text = match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report).map_err(|e| AppError::data(e.to_string()))?;
            s.push('\n');
            s
        }
        Format::Text | Format::Csv => {
            let mut doc = report.header()?;
            doc.tables = tables;
            if format == Format::Text {
                doc.render_text()
            } else {
                doc.render_csv()?
            }
        }
    };
    out.write_all(text.as_bytes()).map_err(|e| AppError::data(format!("writing report: {e}")))
}
