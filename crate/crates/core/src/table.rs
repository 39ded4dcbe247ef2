//! Tab-separated result tables with a single header row.
//!
//! Numbers are written in Rust's shortest round-trip form so a table read
//! back parses to the exact same values, and writing is byte-deterministic.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Round-trip text form of a float.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x}")
    }
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Table { header: header.iter().map(|s| s.as_ref().to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::data(format!("row has {} fields, header has {}", row.len(), self.header.len())));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::data(format!("table has no column '{name}'")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<&str>> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn column_f64(&self, name: &str) -> Result<Vec<f64>> {
        self.column(name)?
            .into_iter()
            .map(|v| v.parse::<f64>().map_err(|_| Error::data(format!("column '{name}': '{v}' is not a number"))))
            .collect()
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().delimiter(b'\t').quote_style(csv::QuoteStyle::Necessary).from_writer(w);
        wr.write_record(&self.header)?;
        for r in &self.rows {
            wr.write_record(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_string_tsv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::data(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().delimiter(b'\t').has_headers(true).comment(Some(b'#')).from_reader(r);
        let header = rd.headers()?.iter().map(str::to_string).collect();
        let mut t = Table { header, rows: Vec::new() };
        for rec in rd.records() {
            t.push(rec?.iter().map(str::to_string).collect())?;
        }
        Ok(t)
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let f = std::fs::File::open(path)?;
        Self::read_from(f).map_err(|e| Error::Parse { path: path.display().to_string(), msg: e.to_string() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut t = Table::new(&["name", "x"]);
        t.push(vec!["a".into(), fmt_f64(0.1 + 0.2)]).unwrap();
        t.push(vec!["b".into(), fmt_f64(f64::NAN)]).unwrap();
        let text = t.to_string_tsv().unwrap();
        assert_eq!(text, "name\tx\na\t0.30000000000000004\nb\tNaN\n");
        let back = Table::read_from(text.as_bytes()).unwrap();
        assert_eq!(back, t);
        let xs = back.column_f64("x").unwrap();
        assert_eq!(xs[0], 0.1 + 0.2);
        assert!(xs[1].is_nan());
        assert!(back.column("y").is_err());
        assert!(t.push(vec!["only one".into()]).is_err());
    }
}
