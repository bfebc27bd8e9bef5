//! CSV observation/reference files and the shipped synthetic data sets.
//!
//! Files have an optional block of `#` comment lines, a header row naming
//! the columns, then one row per observation or draw.

use std::io::Write;
use std::path::Path;

use super::ModelError;

/// Header plus numeric rows of a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvMatrix {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvMatrix {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let comments = text
            .lines()
            .take_while(|l| l.starts_with('#'))
            .map(|l| l.trim_start_matches('#').trim().to_string())
            .collect();
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| ModelError::Data(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect::<Vec<_>>();
        let mut rows = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| ModelError::Data(e.to_string()))?;
            let row = rec
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| {
                        ModelError::Data(format!("row {}: {f:?} is not a number", line + 1))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            if row.len() != header.len() {
                return Err(ModelError::Data(format!(
                    "row {} has {} fields, header has {}",
                    line + 1,
                    row.len(),
                    header.len()
                )));
            }
            rows.push(row);
        }
        Ok(Self { comments, header, rows })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            out.push_str("# ");
            out.push_str(c);
            out.push('\n');
        }
        out.push_str(&self.header.join(","));
        out.push('\n');
        for r in &self.rows {
            let fields: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn read_matrix_csv(path: &Path) -> Result<CsvMatrix, ModelError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ModelError::Data(format!("{}: {e}", path.display())))?;
    CsvMatrix::parse(&text)
}

/// Writes the file atomically (temporary file in the same directory, then rename).
pub fn write_matrix_csv(path: &Path, m: &CsvMatrix) -> Result<(), ModelError> {
    let io = |e: std::io::Error| ModelError::Data(format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(m.render().as_bytes()).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

const SEIR_OBSERVED: &str = include_str!("../../data/seir_observed.csv");
const SLCP_OBSERVED: &str = include_str!("../../data/slcp_observed.csv");
const MG1_OBSERVED: &str = include_str!("../../data/mg1_observed.csv");

pub(super) fn seir_observed() -> Result<Vec<f64>, ModelError> {
    let m = CsvMatrix::parse(SEIR_OBSERVED)?;
    Ok(m.rows.iter().map(|r| r[1]).collect())
}

pub(super) fn slcp_observed() -> Result<Vec<f64>, ModelError> {
    Ok(CsvMatrix::parse(SLCP_OBSERVED)?.rows.into_iter().flatten().collect())
}

pub(super) fn mg1_observed() -> Result<Vec<f64>, ModelError> {
    Ok(CsvMatrix::parse(MG1_OBSERVED)?.rows.into_iter().flatten().collect())
}
