use std::fs;
use std::io::Write;
use std::path::Path;

use super::fmt_f64;
use crate::diagnostics::DiagnosticsRecord;
use crate::error::{KsnsError, Result};

/// Writes the header and one row per record, 17 significant digits.
pub fn write_csv<W: Write>(records: &[DiagnosticsRecord], w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    let csv_err = |e: csv::Error| KsnsError::Format(e.to_string());
    wr.write_record(DiagnosticsRecord::columns()).map_err(csv_err)?;
    for r in records {
        wr.write_record(r.values().iter().map(|v| fmt_f64(*v))).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// Parses a diagnostics CSV; the header must match exactly.
pub fn read_csv(text: &str) -> Result<Vec<DiagnosticsRecord>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let mut rows = rd.records();
    let header = rows
        .next()
        .ok_or_else(|| KsnsError::Format("empty diagnostics file".into()))?
        .map_err(|e| KsnsError::Format(e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != DiagnosticsRecord::HEADER {
        return Err(KsnsError::Format("diagnostics header does not match".into()));
    }
    let mut out = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for (k, row) in rows.enumerate() {
        let row = row.map_err(|e| KsnsError::Format(e.to_string()))?;
        let line = k + 2;
        if row.len() != 17 {
            return Err(KsnsError::Format(format!("line {line}: expected 17 columns, got {}", row.len())));
        }
        let mut v = [0.0; 17];
        for (slot, s) in v.iter_mut().zip(row.iter()) {
            *slot = s
                .trim()
                .parse()
                .map_err(|_| KsnsError::Format(format!("line {line}: `{s}` is not a number")))?;
        }
        if !(v[0] >= last_t) {
            return Err(KsnsError::Format(format!("line {line}: time is not monotone")));
        }
        last_t = v[0];
        out.push(DiagnosticsRecord::from_values(&v));
    }
    Ok(out)
}

/// One `<column>.dat` file of `t value` lines per diagnostic.
pub fn write_plot_data(dir: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (k, name) in DiagnosticsRecord::columns().into_iter().enumerate().skip(1) {
        let mut text = String::with_capacity(records.len() * 48);
        for r in records {
            let v = r.values();
            text.push_str(&fmt_f64(v[0]));
            text.push(' ');
            text.push_str(&fmt_f64(v[k]));
            text.push('\n');
        }
        fs::write(dir.join(format!("{name}.dat")), text)?;
    }
    Ok(())
}
