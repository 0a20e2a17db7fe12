//! CSV ingestion and replicate-weight output.
//!
//! Replicate weights travel as columns `<prefix>1 .. <prefix>B` next to the
//! unit data, either in the input file or in a separate file with the same
//! row order.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use svyboot_core::bootstrap::BootstrapWeightMatrix;
use svyboot_core::data::{CategoricalVar, DesignKind, SurveyDataset, UnitRecord};

use crate::error::{AppError, AppResult};

/// Raw CSV contents: header plus string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn from_reader<R: Read>(reader: R) -> AppResult<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if headers.is_empty() || headers.iter().all(String::is_empty) {
            return Err(AppError::data("missing header row"));
        }
        let mut seen = HashMap::new();
        for (i, h) in headers.iter().enumerate() {
            if let Some(j) = seen.insert(h.as_str(), i) {
                return Err(AppError::data(format!("duplicate column '{h}' (columns {} and {})", j + 1, i + 1)));
            }
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| match e.kind() {
                csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                    AppError::data(format!("row {}: ragged row with {len} fields, expected {expected_len}", i + 1))
                }
                _ => AppError::from(e),
            })?;
            rows.push(rec.iter().map(|c| c.trim().to_string()).collect());
        }
        Ok(Self { headers, rows })
    }

    pub fn read(path: &Path) -> AppResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| AppError::data(format!("{}: {e}", path.display())))?;
        Self::from_reader(std::io::BufReader::new(file)).map_err(|e| e.context(path.display()))
    }

    pub fn column(&self, name: &str) -> AppResult<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| AppError::data(format!("missing column '{name}'")))
    }

    fn number(&self, row: usize, col: usize) -> AppResult<f64> {
        let cell = &self.rows[row][col];
        if cell.is_empty() {
            return Err(AppError::data(format!("row {}: missing value in column '{}'", row + 1, self.headers[col])));
        }
        cell.parse::<f64>().map_err(|_| {
            AppError::data(format!("row {}: non-numeric value '{cell}' in column '{}'", row + 1, self.headers[col]))
        })
    }

    fn label(&self, row: usize, col: usize) -> AppResult<&str> {
        let cell = &self.rows[row][col];
        if cell.is_empty() {
            return Err(AppError::data(format!("row {}: missing value in column '{}'", row + 1, self.headers[col])));
        }
        Ok(cell)
    }

    /// Replicate-weight columns `<prefix><b>` ordered by `b`; `b` must run over `1..=B`.
    pub fn replicate_columns(&self, prefix: &str) -> AppResult<Vec<usize>> {
        let mut found: Vec<(usize, usize)> = Vec::new();
        for (col, h) in self.headers.iter().enumerate() {
            if let Some(rest) = h.strip_prefix(prefix) {
                if let Ok(b) = rest.parse::<usize>() {
                    found.push((b, col));
                }
            }
        }
        found.sort_unstable();
        for (expected, &(b, _)) in (1..).zip(&found) {
            if b != expected {
                return Err(AppError::data(format!("replicate-weight columns skip {prefix}{expected}")));
            }
        }
        Ok(found.into_iter().map(|(_, c)| c).collect())
    }

    /// Parses the replicate-weight columns into a matrix (`None` when absent).
    pub fn replicate_weights(&self, prefix: &str, design: DesignKind) -> AppResult<Option<BootstrapWeightMatrix>> {
        let cols = self.replicate_columns(prefix)?;
        if cols.is_empty() {
            return Ok(None);
        }
        let mut columns = Vec::with_capacity(cols.len());
        for &c in &cols {
            let col = (0..self.rows.len()).map(|r| self.number(r, c)).collect::<AppResult<Vec<f64>>>()?;
            if let Some(r) = col.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(AppError::data(format!(
                    "row {}: replicate weight in column '{}' must be finite and nonnegative",
                    r + 1,
                    self.headers[c]
                )));
            }
            columns.push(col);
        }
        Ok(Some(BootstrapWeightMatrix::from_columns(self.rows.len(), columns, 0, design)?))
    }

    /// Writes the table with `matrix` as replicate-weight columns, replacing
    /// any existing columns with the same prefix.
    pub fn write_with_weights<W: Write>(&self, out: W, matrix: &BootstrapWeightMatrix, prefix: &str) -> AppResult<()> {
        if matrix.rows() != self.rows.len() {
            return Err(AppError::data(format!(
                "replicate matrix has {} rows, table has {}",
                matrix.rows(),
                self.rows.len()
            )));
        }
        let drop = self.replicate_columns(prefix)?;
        let keep: Vec<usize> = (0..self.headers.len()).filter(|c| !drop.contains(c)).collect();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = keep.iter().map(|&c| self.headers[c].clone()).collect();
        header.extend((1..=matrix.replicates()).map(|b| format!("{prefix}{b}")));
        w.write_record(&header)?;
        for (i, row) in self.rows.iter().enumerate() {
            let mut rec: Vec<String> = keep.iter().map(|&c| row[c].clone()).collect();
            rec.extend((0..matrix.replicates()).map(|b| format_weight(matrix.get(i, b))));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| AppError::data(e.to_string()))
    }
}

/// Shortest decimal string that parses back to exactly `v` (at most 17
/// significant digits).
pub fn format_weight(v: f64) -> String {
    format!("{v:?}")
}

/// A categorical column with an optional declared level order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CategorySpec {
    pub column: String,
    pub levels: Option<Vec<String>>,
}

/// Column mapping from a CSV file to a [`SurveyDataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub response: Option<String>,
    pub covariates: Vec<String>,
    pub weight: String,
    pub stratum: Option<String>,
    pub cluster: Option<String>,
    pub cluster_size: Option<String>,
    pub categorical: Vec<CategorySpec>,
    pub bw_prefix: String,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            response: None,
            covariates: Vec::new(),
            weight: "w".into(),
            stratum: None,
            cluster: None,
            cluster_size: None,
            categorical: Vec::new(),
            bw_prefix: "bw_".into(),
        }
    }
}

/// Design metadata the file itself cannot carry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignInfo {
    pub design: DesignKind,
    /// Known `N`; defaults to the rounded weight total.
    pub population_size: Option<u64>,
    pub population_clusters: Option<u64>,
}

/// Dense codes in first-appearance order (or the declared order).
fn encode(table: &CsvTable, col: usize, declared: Option<&[String]>) -> AppResult<(Vec<u32>, Vec<String>)> {
    let mut levels: Vec<String> = declared.map(<[String]>::to_vec).unwrap_or_default();
    let mut index: HashMap<String, u32> = levels.iter().enumerate().map(|(i, l)| (l.clone(), i as u32)).collect();
    if index.len() != levels.len() {
        return Err(AppError::usage(format!("duplicate level in declared order for '{}'", table.headers[col])));
    }
    let mut codes = Vec::with_capacity(table.rows.len());
    for r in 0..table.rows.len() {
        let label = table.label(r, col)?;
        let code = match index.get(label) {
            Some(&c) => c,
            None if declared.is_some() => {
                return Err(AppError::data(format!(
                    "row {}: level '{label}' of '{}' is not among the declared levels",
                    r + 1,
                    table.headers[col]
                )))
            }
            None => {
                let c = levels.len() as u32;
                levels.push(label.to_string());
                index.insert(label.to_string(), c);
                c
            }
        };
        codes.push(code);
    }
    Ok((codes, levels))
}

/// Builds and validates a dataset; replicate-weight columns, if present, are attached.
pub fn dataset_from_table(table: &CsvTable, schema: &Schema, info: DesignInfo) -> AppResult<SurveyDataset> {
    let n = table.rows.len();
    if n == 0 {
        return Err(AppError::data("no data rows"));
    }
    let y_col = schema.response.as_deref().map(|c| table.column(c)).transpose()?;
    let x_cols = schema.covariates.iter().map(|c| table.column(c)).collect::<AppResult<Vec<_>>>()?;
    let w_col = table.column(&schema.weight)?;
    let s_col = schema.stratum.as_deref().map(|c| table.column(c)).transpose()?;
    let c_col = schema.cluster.as_deref().map(|c| table.column(c)).transpose()?;
    let m_col = schema.cluster_size.as_deref().map(|c| table.column(c)).transpose()?;

    let strata = s_col.map(|c| encode(table, c, None)).transpose()?;
    let clusters = c_col.map(|c| encode(table, c, None)).transpose()?;
    let mut categorical = Vec::with_capacity(schema.categorical.len());
    let mut category_codes = Vec::with_capacity(schema.categorical.len());
    for spec in &schema.categorical {
        let col = table.column(&spec.column)?;
        let (codes, levels) = encode(table, col, spec.levels.as_deref())?;
        categorical.push(CategoricalVar { name: spec.column.clone(), levels });
        category_codes.push(codes);
    }

    let mut units = Vec::with_capacity(n);
    for r in 0..n {
        let y = y_col.map(|c| table.number(r, c)).transpose()?.unwrap_or(0.0);
        let x = x_cols.iter().map(|&c| table.number(r, c)).collect::<AppResult<Vec<_>>>()?;
        let weight = table.number(r, w_col)?;
        if !(weight > 0.0) {
            return Err(AppError::data(format!("row {}: weight must be positive, got {weight}", r + 1)));
        }
        let mut u = UnitRecord::new(y, x, weight);
        u.stratum = strata.as_ref().map(|(codes, _)| codes[r]);
        u.cluster = clusters.as_ref().map(|(codes, _)| codes[r]);
        if let Some(c) = m_col {
            let m = table.number(r, c)?;
            if !(m >= 1.0 && m.fract() == 0.0) {
                return Err(AppError::data(format!("row {}: cluster size must be a positive integer, got {m}", r + 1)));
            }
            u.cluster_size = Some(m as u64);
        }
        u.categories = category_codes.iter().map(|codes| codes[r]).collect();
        units.push(u);
    }

    let population_size = match info.population_size {
        Some(size) => size,
        None => {
            let total: f64 = units.iter().map(|u| u.weight).sum();
            log::info!("population size not given; using the rounded weight total {}", total.round());
            total.round().max(1.0) as u64
        }
    };
    let mut builder = SurveyDataset::builder(units, population_size, info.design)
        .covariate_names(schema.covariates.clone())
        .categorical(categorical);
    if let Some(c) = info.population_clusters {
        builder = builder.population_clusters(c);
    }
    let data = builder.build().map_err(|e| AppError::data(e.to_string()))?;
    match table.replicate_weights(&schema.bw_prefix, info.design)? {
        Some(m) => Ok(data.attach_weights(m)?),
        None => Ok(data),
    }
}

/// Attaches replicate weights read from a separate file with matching rows.
pub fn attach_weight_file(data: SurveyDataset, table: &CsvTable, prefix: &str) -> AppResult<SurveyDataset> {
    let matrix = table
        .replicate_weights(prefix, data.design())?
        .ok_or_else(|| AppError::data(format!("no '{prefix}1..' replicate-weight columns found")))?;
    if matrix.rows() != data.len() {
        return Err(AppError::data(format!(
            "replicate-weight file has {} rows, data has {}",
            matrix.rows(),
            data.len()
        )));
    }
    Ok(data.attach_weights(matrix)?)
}
