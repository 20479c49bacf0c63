//! Locale-independent CSV helpers shared by every table writer.
//!
//! Numbers are written with Rust's shortest round-trip formatting (period
//! decimal separator), records end in LF, and column order is whatever the
//! caller passes, so identical inputs give byte-identical files.

use std::io::{Read, Write};

pub fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

pub fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input)
}

/// `NA` for NaN, `Inf`/`-Inf` for infinities, shortest round-trip otherwise.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "NA".to_owned()
    } else if x.is_infinite() {
        if x > 0.0 {
            "Inf".to_owned()
        } else {
            "-Inf".to_owned()
        }
    } else if x == 0.0 {
        // Collapse -0 so sign noise never changes a file.
        "0".to_owned()
    } else {
        format!("{x}")
    }
}

pub fn parse_num(s: &str) -> Option<f64> {
    match s {
        "NA" | "" => Some(f64::NAN),
        "Inf" => Some(f64::INFINITY),
        "-Inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_else(|| "NA".to_owned())
}
