//! CSV formatting: comma separated, `.` decimal point, 12 significant digits.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{HdbError, Result};

/// `%.12g`-style formatting. Non-finite input is rejected by callers, so it
/// is printed as-is only for diagnostics.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.11e}");
    let (mant, exp) = sci.split_once('e').expect("exponent in scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..12).contains(&exp) {
        let mant = trim_zeros(mant);
        return format!("{mant}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    let decimals = (11 - exp) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Empty cell for missing values.
pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

/// Coefficient vector as one cell, space separated.
pub fn fmt_coeffs(c: &[f64]) -> String {
    c.iter().map(|&x| fmt_num(x)).collect::<Vec<_>>().join(" ")
}

/// Free text made safe for a cell.
pub fn fmt_text(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

/// Accumulates rows with a fixed column count.
#[derive(Debug, Clone)]
pub struct CsvTable {
    columns: usize,
    text: String,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        let mut text = String::new();
        let _ = writeln!(text, "{}", header.join(","));
        CsvTable {
            columns: header.len(),
            text,
        }
    }

    pub fn push(&mut self, cells: Vec<String>) {
        assert_eq!(cells.len(), self.columns, "row width must match the header");
        let _ = writeln!(self.text, "{}", cells.join(","));
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

/// Writes `content` via a temporary file next to `path`; on failure no
/// partial file is left behind.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let mut tmp = PathBuf::from(path);
    let name = path.file_name().ok_or_else(|| {
        HdbError::Config(format!("output path {} has no file name", path.display()))
    })?;
    tmp.set_file_name(format!(".{}.partial", name.to_string_lossy()));
    let res = std::fs::write(&tmp, content).and_then(|_| std::fs::rename(&tmp, path));
    if let Err(e) = res {
        let _ = std::fs::remove_file(&tmp);
        return Err(HdbError::Io(format!("{}: {e}", path.display())));
    }
    Ok(())
}
