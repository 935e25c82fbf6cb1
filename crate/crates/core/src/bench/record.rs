use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Header of the latency CSV; the order is fixed.
pub const CSV_HEADER: [&str; 10] = [
    "target",
    "kind",
    "c_in",
    "c_out",
    "h",
    "w",
    "batch",
    "latency_ms",
    "source",
    "env",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "measured-local")]
    MeasuredLocal,
    #[serde(rename = "imported")]
    Imported,
}

/// One latency of a whole batch forward call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    /// Block kind for block targets, preset name for models.
    pub target: String,
    /// Block kind, or `model`.
    pub kind: String,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub batch: usize,
    pub latency_ms: f64,
    pub source: Source,
    /// Device, runtime and batch notes.
    pub env: String,
}

impl LatencyRecord {
    pub fn problems(&self) -> Option<String> {
        if !(self.latency_ms > 0.0 && self.latency_ms.is_finite()) {
            Some(format!("latency must be positive, got {}", self.latency_ms))
        } else if self.batch == 0 {
            Some("batch must be at least 1".into())
        } else {
            None
        }
    }
}

pub fn read_latency_csv(reader: impl Read) -> Result<Vec<LatencyRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Csv {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    if headers.iter().map(str::trim).ne(CSV_HEADER) {
        return Err(Error::Csv {
            line: 1,
            msg: format!("header must be `{}`", CSV_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Csv {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let rec: LatencyRecord = row.deserialize(Some(&headers)).map_err(|e| Error::Csv {
            line,
            msg: e.to_string(),
        })?;
        if let Some(msg) = rec.problems() {
            return Err(Error::Csv { line, msg });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_latency_csv(records: &[LatencyRecord], writer: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(CSV_HEADER).map_err(csv_io)?;
    for r in records {
        w.serialize(r).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn import_latency_csv(path: impl AsRef<Path>) -> Result<Vec<LatencyRecord>> {
    read_latency_csv(std::fs::File::open(path)?)
}

pub fn export_latency_csv(records: &[LatencyRecord], path: impl AsRef<Path>) -> Result<()> {
    write_latency_csv(records, std::fs::File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "target,kind,c_in,c_out,h,w,batch,latency_ms,source,env\n\
        bottleneck,bottleneck,256,256,56,56,16,0.58,imported,gpu\n";

    #[test]
    fn parses_and_round_trips() {
        let recs = read_latency_csv(SAMPLE.as_bytes()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].source, Source::Imported);
        let mut out = Vec::new();
        write_latency_csv(&recs, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), SAMPLE);
    }

    #[test]
    fn bad_rows_report_their_line() {
        let bad = SAMPLE.replace("0.58", "-1");
        assert!(matches!(
            read_latency_csv(bad.as_bytes()),
            Err(Error::Csv { line: 2, .. })
        ));
        let bad = format!("{SAMPLE}x,y,1,1\n");
        assert!(matches!(
            read_latency_csv(bad.as_bytes()),
            Err(Error::Csv { line: 3, .. })
        ));
        let bad = SAMPLE.replace("imported", "guessed");
        assert!(matches!(
            read_latency_csv(bad.as_bytes()),
            Err(Error::Csv { line: 2, .. })
        ));
        assert!(read_latency_csv("a,b\n".as_bytes()).is_err());
    }
}
