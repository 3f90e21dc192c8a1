//! File writers. Every file carries the tool version and the config hash;
//! floats are written in shortest round-trip form.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub const TOOL: &str = "sellopt";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self {
            tool: TOOL,
            version: VERSION,
            config_hash: config_hash.into(),
        }
    }

    /// `# sellopt <version> config <hash>`.
    pub fn comment(&self) -> String {
        format!("# {} {} config {}", self.tool, self.version, self.config_hash)
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    provenance: &'a Provenance,
    data: &'a T,
}

/// `{"provenance": …, "data": …}`, pretty printed. Non-finite floats become null.
pub fn write_json<T: Serialize>(path: &Path, provenance: &Provenance, data: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &Envelope { provenance, data })?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// A CSV file of serialisable rows, preceded by one `#` provenance line.
pub fn write_csv<T: Serialize>(path: &Path, provenance: &Provenance, rows: &[T]) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "{}", provenance.comment())?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// CSV with an explicit header and pre-formatted cells.
pub fn write_csv_records(path: &Path, provenance: &Provenance, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "{}", provenance.comment())?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Two whitespace-separated columns with `#` comment lines on top.
pub fn write_plot(path: &Path, provenance: &Provenance, columns: (&str, &str), points: &[(f64, f64)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", provenance.comment())?;
    writeln!(w, "# {} {}", columns.0, columns.1)?;
    for (x, y) in points {
        writeln!(w, "{} {}", x, y)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest round-trip decimal form.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        x: f64,
        flag: bool,
    }

    #[test]
    fn csv_floats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let x = 0.1 + 0.2;
        write_csv(&p, &Provenance::new("abc"), &[Row { x, flag: true }]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# sellopt "));
        assert_eq!(lines.next().unwrap(), "x,flag");
        let cell = lines.next().unwrap().split(',').next().unwrap().to_string();
        assert_eq!(cell.parse::<f64>().unwrap(), x);
    }

    #[test]
    fn json_embeds_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.json");
        write_json(&p, &Provenance::new("abc"), &vec![1.5, f64::NAN]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(v["provenance"]["config_hash"], "abc");
        assert_eq!(v["data"][0], 1.5);
        assert!(v["data"][1].is_null());
    }
}
