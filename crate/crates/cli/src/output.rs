use std::io::Write;

use serde_json::{Map, Number, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    /// Comma-delimited tables with `#` comment lines for the config echo.
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Bool(bool),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<Option<String>> for Cell {
    fn from(v: Option<String>) -> Self {
        v.map_or(Cell::Empty, Cell::Text)
    }
}

/// Ten significant digits, fixed notation for moderate magnitudes.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.9e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..10).contains(&exp) {
        let decimals = (9 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn cell_text(c: &Cell) -> String {
    match c {
        Cell::Num(v) => fmt_num(*v),
        Cell::Int(v) => v.to_string(),
        Cell::Bool(v) => v.to_string(),
        Cell::Text(s) => s.clone(),
        Cell::Empty => String::new(),
    }
}

fn cell_json(c: &Cell) -> Value {
    match c {
        Cell::Num(v) => fmt_num(*v)
            .parse::<f64>()
            .ok()
            .and_then(Number::from_f64)
            .map_or(Value::Null, Value::Number),
        Cell::Int(v) => Value::from(*v),
        Cell::Bool(v) => Value::Bool(*v),
        Cell::Text(s) => Value::String(s.clone()),
        Cell::Empty => Value::Null,
    }
}

/// Long-format table; column names carry units.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len(), "row width for table {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// Everything a command produced, ready to serialize.
#[derive(Debug, Clone)]
pub struct Report {
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub tables: Vec<Table>,
}

impl Report {
    pub fn config_line(&self) -> String {
        let seed = self.seed.map_or("none".to_string(), |s| s.to_string());
        format!("# tefield {} seed={seed} config={}", self.command, self.config)
    }

    pub fn write(&self, format: Format, out: &mut dyn Write) -> Result<(), CliError> {
        let io = |e: std::io::Error| CliError::Data(format!("writing output: {e}"));
        match format {
            Format::Csv => {
                writeln!(out, "{}", self.config_line()).map_err(io)?;
                for (i, t) in self.tables.iter().enumerate() {
                    if i > 0 {
                        writeln!(out).map_err(io)?;
                    }
                    writeln!(out, "# table: {}", t.name).map_err(io)?;
                    let mut w = csv::Writer::from_writer(Vec::new());
                    let csv_err = |e: csv::Error| CliError::Data(format!("writing output: {e}"));
                    w.write_record(&t.columns).map_err(csv_err)?;
                    for row in &t.rows {
                        w.write_record(row.iter().map(cell_text)).map_err(csv_err)?;
                    }
                    let bytes = w.into_inner().map_err(|e| CliError::Data(format!("writing output: {e}")))?;
                    out.write_all(&bytes).map_err(io)?;
                }
            }
            Format::Json => {
                let mut tables = Map::new();
                for t in &self.tables {
                    let rows: Vec<Value> = t
                        .rows
                        .iter()
                        .map(|row| {
                            let obj: Map<String, Value> =
                                t.columns.iter().cloned().zip(row.iter().map(cell_json)).collect();
                            Value::Object(obj)
                        })
                        .collect();
                    tables.insert(t.name.clone(), Value::Array(rows));
                }
                let doc = serde_json::json!({
                    "command": self.command,
                    "seed": self.seed,
                    "config": self.config,
                    "tables": tables,
                });
                serde_json::to_writer_pretty(&mut *out, &doc).map_err(|e| CliError::Data(format!("writing output: {e}")))?;
                writeln!(out).map_err(io)?;
            }
        }
        Ok(())
    }
}
