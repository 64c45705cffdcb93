use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// How a metric is compared with its bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `value <= bound + margin`
    AtMost,
    /// `value >= bound - margin`
    AtLeast,
    /// `|value - bound| <= margin`
    Within,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::AtMost => "at_most",
            Relation::AtLeast => "at_least",
            Relation::Within => "within",
        })
    }
}

/// One checked quantity. The bound is fixed before any sampling happens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub relation: Relation,
    pub value: f64,
    pub bound: f64,
    pub margin: f64,
    pub pass: bool,
}

impl MetricRow {
    pub fn new(metric: impl Into<String>, relation: Relation, value: f64, bound: f64, margin: f64) -> Self {
        let pass = match relation {
            Relation::AtMost => value <= bound + margin,
            Relation::AtLeast => value >= bound - margin,
            Relation::Within => (value - bound).abs() <= margin,
        };
        MetricRow {
            metric: metric.into(),
            relation,
            value,
            bound,
            margin,
            pass,
        }
    }

    pub fn at_most(metric: impl Into<String>, value: f64, bound: f64, margin: f64) -> Self {
        MetricRow::new(metric, Relation::AtMost, value, bound, margin)
    }

    pub fn at_least(metric: impl Into<String>, value: f64, bound: f64, margin: f64) -> Self {
        MetricRow::new(metric, Relation::AtLeast, value, bound, margin)
    }

    pub fn within(metric: impl Into<String>, value: f64, bound: f64, margin: f64) -> Self {
        MetricRow::new(metric, Relation::Within, value, bound, margin)
    }

    /// `lo <= value <= hi`, stored as a `Within` row around the midpoint.
    pub fn in_range(metric: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        MetricRow::new(metric, Relation::Within, value, (lo + hi) / 2.0, (hi - lo) / 2.0)
    }
}

/// Output format for reports and tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Jsonl,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "jsonl" => Ok(OutputFormat::Jsonl),
            other => Err(Error::Config(format!("unknown format {other:?}"))),
        }
    }
}

/// A rectangular table of JSON scalars with named columns.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl DataTable {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        DataTable {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row width does not match columns");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Values of one column, in row order.
    pub fn column(&self, name: &str) -> Option<Vec<&Value>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| &r[idx]).collect())
    }

    pub fn write<W: Write>(&self, writer: W, format: OutputFormat) -> Result<()> {
        match format {
            OutputFormat::Csv => self.write_csv(writer),
            OutputFormat::Jsonl => self.write_jsonl(writer),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(cell_text))?;
        }
        w.flush()?;
        Ok(())
    }

    /// One JSON object per row, keys in column order.
    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        for row in &self.rows {
            let obj: serde_json::Map<String, Value> = self
                .columns
                .iter()
                .cloned()
                .zip(row.iter().cloned())
                .collect();
            serde_json::to_writer(&mut writer, &obj)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn cell_text(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Result of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    /// The configuration the run used, echoed back.
    pub config: Value,
    pub trials: u64,
    pub rows: Vec<MetricRow>,
    /// Per-item data behind the metrics, when the experiment produces any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<DataTable>,
    /// Checks that did not apply to the input, e.g. `c_{j,q} = 0`.
    pub skipped: u64,
    /// Excluded from serialization so outputs stay byte-identical across runs.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl ExperimentReport {
    pub fn new(name: impl Into<String>, config: &impl Serialize, trials: u64) -> Result<Self> {
        Ok(ExperimentReport {
            name: name.into(),
            config: serde_json::to_value(config)?,
            trials,
            rows: Vec::new(),
            table: None,
            skipped: 0,
            wall_time: Duration::ZERO,
        })
    }

    pub fn push(&mut self, row: MetricRow) {
        self.rows.push(row);
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &MetricRow> {
        self.rows.iter().filter(|r| !r.pass)
    }

    pub fn row(&self, metric: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    /// Rows whose metric name starts with `prefix`.
    pub fn rows_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a MetricRow> + 'a {
        self.rows.iter().filter(move |r| r.metric.starts_with(prefix))
    }

    pub fn rows_table(&self) -> DataTable {
        let mut table = DataTable::new(["metric", "relation", "value", "bound", "margin", "pass"]);
        for r in &self.rows {
            table.push(vec![
                Value::from(r.metric.clone()),
                Value::from(r.relation.to_string()),
                json_f64(r.value),
                json_f64(r.bound),
                json_f64(r.margin),
                Value::from(r.pass),
            ]);
        }
        table
    }

    pub fn write_rows<W: Write>(&self, writer: W, format: OutputFormat) -> Result<()> {
        self.rows_table().write(writer, format)
    }

    pub fn summary(&self) -> String {
        let passed = self.rows.iter().filter(|r| r.pass).count();
        format!(
            "{}: {passed}/{} checks passed ({} trials, {} skipped, {:.2?})",
            self.name,
            self.rows.len(),
            self.trials,
            self.skipped,
            self.wall_time
        )
    }
}

/// Finite floats as JSON numbers, non-finite ones as strings (`"inf"`, `"NaN"`).
pub fn json_f64(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or_else(|| Value::from(x.to_string()), Value::Number)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relations() {
        assert!(MetricRow::at_most("a", 1.0, 0.9, 0.1).pass);
        assert!(!MetricRow::at_most("a", 1.01, 0.9, 0.1).pass);
        assert!(MetricRow::at_least("b", 0.8, 0.9, 0.1).pass);
        assert!(!MetricRow::within("c", 0.5, 0.3, 0.1).pass);
        let r = MetricRow::in_range("d", 0.4, 0.35, 0.65);
        assert!(r.pass);
        assert!(!MetricRow::in_range("d", 0.7, 0.35, 0.65).pass);
        assert!(!MetricRow::at_most("nan", f64::NAN, 1.0, 0.0).pass);
    }

    #[test]
    fn table_formats() {
        let mut t = DataTable::new(["alpha", "label", "ratio"]);
        t.push(vec![Value::from(0.5), Value::from("x,y"), json_f64(f64::INFINITY)]);
        let mut csv = Vec::new();
        t.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "alpha,label,ratio\n0.5,\"x,y\",inf\n");
        let mut jsonl = Vec::new();
        t.write_jsonl(&mut jsonl).unwrap();
        assert_eq!(
            String::from_utf8(jsonl).unwrap(),
            "{\"alpha\":0.5,\"label\":\"x,y\",\"ratio\":\"inf\"}\n"
        );
        assert_eq!(t.column("alpha").unwrap(), vec![&Value::from(0.5)]);
    }

    #[test]
    fn report_serialization_omits_wall_time() {
        let mut r = ExperimentReport::new("demo", &serde_json::json!({"k": 1}), 10).unwrap();
        r.wall_time = Duration::from_secs(3);
        r.push(MetricRow::at_most("m", 0.0, 1.0, 0.0));
        let text = serde_json::to_string(&r).unwrap();
        assert!(!text.contains("wall"));
        assert!(r.all_pass());
        let mut out = Vec::new();
        r.write_rows(&mut out, OutputFormat::Csv).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "metric,relation,value,bound,margin,pass\nm,at_most,0.0,1.0,0.0,true\n"
        );
    }

    #[test]
    fn format_parsing() {
        assert_eq!("csv".parse::<OutputFormat>().unwrap(), OutputFormat::Csv);
        assert!("xml".parse::<OutputFormat>().is_err());
    }
}
