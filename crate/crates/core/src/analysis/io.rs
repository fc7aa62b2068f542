//! CSV data and schema files.
//!
//! A schema file declares one variable per line:
//!
//! ```text
//! # comments and blank lines are ignored
//! age        = continuous
//! victims    = count, link=log
//! suicide    = binary, domain=outcome
//! ```

use std::path::Path;

use crate::error::{QmgmError, Result};
use crate::model::{Dataset, Link, VariableKind, VariableSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub variables: Vec<VariableSpec>,
    /// Optional grouping tag per variable, used for colouring exports.
    pub domains: Vec<Option<String>>,
}

impl Schema {
    pub fn position(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn from_specs(variables: Vec<VariableSpec>) -> Self {
        let domains = vec![None; variables.len()];
        Self { variables, domains }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (v, d) in self.variables.iter().zip(&self.domains) {
            out.push_str(&format!("{} = {}", v.name, v.kind.as_str()));
            if v.link != v.kind.default_link() {
                out.push_str(&format!(", link={}", v.link.as_str()));
            }
            if let Some(d) = d {
                out.push_str(&format!(", domain={d}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn parse_schema(text: &str) -> Result<Schema> {
    let mut variables: Vec<VariableSpec> = Vec::new();
    let mut domains = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| QmgmError::Schema { line: ln + 1, message };
        let (name, rest) = line.split_once('=').ok_or_else(|| err("expected `name = kind`".into()))?;
        let name = name.trim();
        if name.is_empty() {
            return Err(err("empty variable name".into()));
        }
        if variables.iter().any(|v| v.name == name) {
            return Err(err(format!("duplicate variable `{name}`")));
        }
        let mut parts = rest.split(',').map(str::trim);
        let kind_s = parts.next().unwrap_or("");
        let kind = VariableKind::parse(kind_s).ok_or_else(|| err(format!("unknown kind `{kind_s}`")))?;
        let mut spec = VariableSpec::new(name, kind);
        let mut domain = None;
        for opt in parts {
            let (k, v) = opt.split_once('=').ok_or_else(|| err(format!("expected key=value, got `{opt}`")))?;
            match k.trim() {
                "link" => {
                    let link = Link::parse(v.trim()).ok_or_else(|| err(format!("unknown link `{}`", v.trim())))?;
                    spec = spec.with_link(link).map_err(|e| err(e.to_string()))?;
                }
                "domain" => domain = Some(v.trim().to_string()),
                other => return Err(err(format!("unknown option `{other}`"))),
            }
        }
        variables.push(spec);
        domains.push(domain);
    }
    if variables.is_empty() {
        return Err(QmgmError::Schema { line: 0, message: "schema declares no variables".into() });
    }
    Ok(Schema { variables, domains })
}

pub fn load_schema(path: &Path) -> Result<Schema> {
    parse_schema(&std::fs::read_to_string(path)?)
}

/// Reads a CSV whose header names exactly the schema's variables, in any
/// order. Columns come back in schema order. Cells equal to `missing_token`
/// (after trimming) are masked and hold a 0.0 placeholder.
pub fn read_csv<R: std::io::Read>(reader: R, schema: &Schema, missing_token: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let mut order = Vec::with_capacity(header.len());
    for h in header.iter() {
        let h = h.trim();
        let pos = schema.position(h).ok_or_else(|| QmgmError::UnknownColumn(h.to_string()))?;
        if order.contains(&pos) {
            return Err(QmgmError::Document(format!("column `{h}` appears twice in the header")));
        }
        order.push(pos);
    }
    if let Some(v) = schema.variables.iter().enumerate().find(|(j, _)| !order.contains(j)) {
        return Err(QmgmError::MissingColumn(v.1.name.clone()));
    }
    let p = schema.variables.len();
    let mut columns = vec![Vec::new(); p];
    let mut mask = vec![Vec::new(); p];
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        if rec.len() != order.len() {
            return Err(QmgmError::Cell {
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", order.len(), rec.len()),
            });
        }
        for (cell, &j) in rec.iter().zip(&order) {
            let cell = cell.trim();
            if cell == missing_token {
                columns[j].push(0.0);
                mask[j].push(true);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| QmgmError::Cell {
                row,
                column: schema.variables[j].name.clone(),
                message: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(QmgmError::Cell {
                    row,
                    column: schema.variables[j].name.clone(),
                    message: format!("`{cell}` is not finite"),
                });
            }
            columns[j].push(v);
            mask[j].push(false);
        }
    }
    Dataset::with_missing(schema.variables.clone(), columns, mask)
}

pub fn load_csv(path: &Path, schema_path: &Path, missing_token: &str) -> Result<Dataset> {
    let schema = load_schema(schema_path)?;
    read_csv(std::fs::File::open(path)?, &schema, missing_token)
}

/// Writes values in schema order with masked cells as `missing_token`.
/// Floats use the shortest representation that parses back exactly.
pub fn write_csv<W: std::io::Write>(dataset: &Dataset, writer: W, missing_token: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(dataset.schema().iter().map(|v| v.name.as_str()))?;
    for i in 0..dataset.n() {
        let rec: Vec<String> = (0..dataset.p())
            .map(|j| {
                if dataset.is_missing(i, j) {
                    missing_token.to_string()
                } else {
                    format!("{}", dataset.value(i, j))
                }
            })
            .collect();
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(dataset: &Dataset, path: &Path, missing_token: &str) -> Result<()> {
    write_csv(dataset, std::fs::File::create(path)?, missing_token)
}
