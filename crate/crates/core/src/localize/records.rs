//! Line-delimited prediction and ground-truth records:
//! `image_id class_id confidence [x1 y1 x2 y2]`, numbers with six significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::BBox;
use crate::error::{Error, Result};

pub const RECORDS_HEADER: &str = "# slidenet-records v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub image_id: String,
    pub class_id: usize,
    pub confidence: f64,
    pub bbox: Option<BBox>,
}

/// C-style `%g` with six significant digits.
pub fn format_g6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

pub fn format_records(records: &[Record]) -> String {
    let mut out = String::from(RECORDS_HEADER);
    out.push('\n');
    for r in records {
        write!(out, "{} {} {}", r.image_id, r.class_id, format_g6(r.confidence)).expect("string write");
        if let Some(b) = r.bbox {
            for v in [b.x1, b.y1, b.x2, b.y2] {
                write!(out, " {}", format_g6(v as f64)).expect("string write");
            }
        }
        out.push('\n');
    }
    out
}

pub fn parse_records(text: &str, path: &Path) -> Result<Vec<Record>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            if i == 0 && line.starts_with("# slidenet-records") && line != RECORDS_HEADER {
                return Err(err(1, format!("unsupported records version `{line}`")));
            }
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 && f.len() != 7 {
            return Err(err(i + 1, format!("expected 3 or 7 fields, found {}", f.len())));
        }
        let class_id = f[1]
            .parse::<usize>()
            .map_err(|_| err(i + 1, format!("bad class id `{}`", f[1])))?;
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(i + 1, format!("bad number `{s}`")))
        };
        let confidence = num(f[2])?;
        let bbox = if f.len() == 7 {
            let v = [num(f[3])?, num(f[4])?, num(f[5])?, num(f[6])?];
            if v[0] > v[2] || v[1] > v[3] {
                return Err(err(i + 1, "box edges out of order".into()));
            }
            Some(BBox::new(v[0] as f32, v[1] as f32, v[2] as f32, v[3] as f32))
        } else {
            None
        };
        out.push(Record {
            image_id: f[0].to_string(),
            class_id,
            confidence,
            bbox,
        });
    }
    Ok(out)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let text = fs::read_to_string(path.as_ref())?;
    parse_records(&text, path.as_ref())
}

pub fn write_records(path: impl AsRef<Path>, records: &[Record]) -> Result<()> {
    fs::write(path, format_records(records))?;
    Ok(())
}
