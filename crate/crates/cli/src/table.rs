//! Flat string tables with a CSV form and a JSON mirror.
//!
//! Numbers are stored as their shortest round-trip decimal form, so writing
//! a table and reading it back reconstructs it exactly, from either format.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::{Map, Number, Value};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Cell for a float; empty when absent.
pub fn num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.columns.len() {
            bail!("row has {} cells, table has {} columns", row.len(), self.columns.len());
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .with_context(|| format!("missing column '{name}'"))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(&self.columns)?;
        for r in &self.rows {
            wr.write_record(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let columns: Vec<String> = rd.headers()?.iter().map(String::from).collect();
        let mut t = Table::new(columns);
        for rec in rd.records() {
            t.push(rec?.iter().map(String::from).collect())?;
        }
        Ok(t)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf)?)
    }

    /// `{"columns": [...], "rows": [{column: value}, ...]}`. Integer and
    /// finite float cells become JSON numbers, empty cells `null`.
    pub fn to_json(&self) -> Value {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let obj: Map<String, Value> = self
                    .columns
                    .iter()
                    .zip(r)
                    .map(|(c, v)| (c.clone(), cell_to_json(v)))
                    .collect();
                Value::Object(obj)
            })
            .collect();
        serde_json::json!({ "columns": self.columns, "rows": Value::Array(rows) })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let columns: Vec<String> = serde_json::from_value(v.get("columns").cloned().context("missing 'columns'")?)?;
        let rows = v.get("rows").and_then(Value::as_array).context("missing 'rows'")?;
        let mut t = Table::new(columns);
        for row in rows {
            let obj = row.as_object().context("row is not an object")?;
            if obj.len() != t.columns.len() {
                bail!("row has {} fields, table has {} columns", obj.len(), t.columns.len());
            }
            let cells = t
                .columns
                .iter()
                .map(|c| obj.get(c).with_context(|| format!("row lacks '{c}'")).and_then(json_to_cell))
                .collect::<Result<Vec<_>>>()?;
            t.push(cells)?;
        }
        Ok(t)
    }

    /// Writes `path` as CSV and the JSON mirror next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        self.write_csv(std::io::BufWriter::new(f))?;
        let json = serde_json::to_string_pretty(&self.to_json())? + "\n";
        std::fs::write(json_path(path), json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        Self::read_csv(f).with_context(|| format!("reading {}", path.display()))
    }
}

pub fn json_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn cell_to_json(cell: &str) -> Value {
    if cell.is_empty() {
        return Value::Null;
    }
    if let Ok(i) = cell.parse::<i64>() {
        if i.to_string() == cell {
            return Value::Number(i.into());
        }
    }
    if let Ok(u) = cell.parse::<u64>() {
        if u.to_string() == cell {
            return Value::Number(u.into());
        }
    }
    if let Ok(x) = cell.parse::<f64>() {
        if x.is_finite() && x.to_string() == cell {
            if let Some(n) = Number::from_f64(x) {
                return Value::Number(n);
            }
        }
    }
    Value::String(cell.to_string())
}

fn json_to_cell(v: &Value) -> Result<String> {
    Ok(match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.to_string()
            } else if let Some(u) = n.as_u64() {
                u.to_string()
            } else {
                n.as_f64().context("non-finite number")?.to_string()
            }
        }
        other => bail!("unexpected JSON cell {other}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quoting_survives() {
        let mut t = Table::new(["a", "b"]);
        t.push(vec!["x,y".into(), "say \"hi\"".into()]).unwrap();
        t.push(vec![String::new(), "NaN".into()]).unwrap();
        let back = Table::read_csv(t.to_csv_string().unwrap().as_bytes()).unwrap();
        assert_eq!(back, t);
        assert_eq!(Table::from_json(&t.to_json()).unwrap(), t);
    }

    #[test]
    fn numbers_become_json_numbers() {
        let mut t = Table::new(["x", "y", "z"]);
        t.push(vec![num(Some(0.5)), "3".into(), num(None)]).unwrap();
        let j = t.to_json();
        assert_eq!(j["rows"][0]["x"], serde_json::json!(0.5));
        assert_eq!(j["rows"][0]["y"], serde_json::json!(3));
        assert!(j["rows"][0]["z"].is_null());
    }

    #[test]
    fn ragged_rows_rejected() {
        let mut t = Table::new(["a"]);
        assert!(t.push(vec![]).is_err());
    }
}
