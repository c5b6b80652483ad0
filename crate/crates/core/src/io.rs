//! CSV helpers shared by the scenario, replay and calibration interfaces.

use std::path::Path;

use crate::error::{Error, Result};
use crate::mapping::TendonCommand;

/// Formats `v` with 9 significant digits, `%.9g` style.
pub fn fmt_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.8e}");
    let exp: i32 = sci
        .rsplit_once('e')
        .and_then(|(_, e)| e.parse().ok())
        .expect("scientific formatting");
    if (-5..9).contains(&exp) {
        let fixed = format!("{:.*}", (8 - exp) as usize, v);
        let trimmed = if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.')
        } else {
            fixed.as_str()
        };
        if trimmed == "-0" {
            "0".into()
        } else {
            trimmed.to_string()
        }
    } else {
        let (mant, e) = sci.split_once('e').expect("scientific formatting");
        let mant = if mant.contains('.') {
            mant.trim_end_matches('0').trim_end_matches('.')
        } else {
            mant
        };
        format!("{mant}e{e}")
    }
}

pub(crate) fn parse_fields(rec: &csv::StringRecord, expected: usize, row: usize) -> Result<Vec<f64>> {
    if rec.len() != expected {
        return Err(Error::MalformedRow {
            row,
            message: format!("expected {expected} fields, found {}", rec.len()),
        });
    }
    rec.iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::MalformedRow {
                    row,
                    message: format!("'{f}' is not a finite number"),
                })
        })
        .collect()
}

pub const COMMAND_HEADER: [&str; 4] = ["us_mm_s", "tau1_N", "tau2_N", "tau3_N"];

/// Parses a tendon command sequence, one command per control step.
pub fn parse_commands_csv(text: &str) -> Result<Vec<TendonCommand>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::MalformedRow {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != COMMAND_HEADER {
        return Err(Error::MalformedRow {
            row: 1,
            message: format!("expected header {}", COMMAND_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::MalformedRow {
            row,
            message: e.to_string(),
        })?;
        let v = parse_fields(&rec, 4, row)?;
        if v[1..].iter().any(|&t| t < 0.0) {
            return Err(Error::MalformedRow {
                row,
                message: "tendon tensions must be nonnegative".into(),
            });
        }
        out.push(TendonCommand::new(v[0], [v[1], v[2], v[3]]));
    }
    Ok(out)
}

pub fn read_commands_csv(path: &Path) -> Result<Vec<TendonCommand>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_commands_csv(&text)
}

pub fn commands_to_csv(commands: &[TendonCommand]) -> String {
    let mut out = COMMAND_HEADER.join(",");
    out.push('\n');
    for c in commands {
        let fields = [c.speed, c.tau[0], c.tau[1], c.tau[2]].map(fmt_sig9);
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::Io {
                path: parent.display().to_string(),
                message: e.to_string(),
            })?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
