use clap::ValueEnum;
use mixvit::analysis::Table;
use serde_json::{Map, Value};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Markdown,
    Csv,
    /// One JSON object per row.
    Jsonl,
}

fn cell(v: &str) -> Value {
    if v.is_empty() {
        return Value::Null;
    }
    match v.parse::<f64>() {
        Ok(f) if f.is_finite() => {
            serde_json::Number::from_f64(f).map_or_else(|| Value::String(v.into()), Value::Number)
        }
        _ => Value::String(v.into()),
    }
}

pub fn render(tables: &[Table], format: Format) -> String {
    let mut out = String::new();
    for (i, t) in tables.iter().enumerate() {
        match format {
            Format::Markdown => {
                if i > 0 {
                    out.push('\n');
                }
                out.push_str(&t.to_markdown());
            }
            Format::Csv => {
                if i > 0 {
                    out.push('\n');
                }
                out.push_str(&t.to_csv());
            }
            Format::Jsonl => {
                for row in &t.rows {
                    let mut obj = Map::new();
                    obj.insert("table".into(), Value::String(t.title.clone()));
                    for (h, v) in t.headers.iter().zip(row) {
                        obj.insert(h.clone(), cell(v));
                    }
                    out.push_str(&Value::Object(obj).to_string());
                    out.push('\n');
                }
            }
        }
    }
    out
}
