//! Impression log files.
//!
//! Format: UTF-8 text. Header line `sample_id,field0:C0,...,fieldF:CF,
//! y_click,y_conv,y_pv_conv` where `Ci` is the category cardinality of field
//! i. One record per line with the same shape, `fieldi:cat` carrying the
//! category id and `y_conv` one of `0`, `1`, `?` (unknown, unclicked).

use std::fs;
use std::path::Path;

use cvrkit_core::datagen::{ConvLabel, Dataset, ImpressionRecord};

use super::parse_err;
use crate::error::CliError;

pub fn write_log_file(dataset: &Dataset, path: &Path) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str("sample_id");
    for (i, c) in dataset.field_cardinalities.iter().enumerate() {
        out.push_str(&format!(",field{i}:{c}"));
    }
    out.push_str(",y_click,y_conv,y_pv_conv\n");
    for r in &dataset.records {
        out.push_str(&r.sample_id.to_string());
        for (i, cat) in r.features.iter().enumerate() {
            out.push_str(&format!(",field{i}:{cat}"));
        }
        let conv = match r.y_conv {
            ConvLabel::Zero => "0",
            ConvLabel::One => "1",
            ConvLabel::Unknown => "?",
        };
        out.push_str(&format!(",{},{},{}\n", r.y_click, conv, r.y_pv_conv));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_log_file(path: &Path) -> Result<Dataset, CliError> {
    let text = fs::read_to_string(path)?;
    let p = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(&p, 1, "empty file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 5 || cols[0] != "sample_id" {
        return Err(parse_err(&p, 1, "malformed header"));
    }
    let n_fields = cols.len() - 4;
    let mut cards = Vec::with_capacity(n_fields);
    for (i, col) in cols[1..1 + n_fields].iter().enumerate() {
        let want = format!("field{i}:");
        let c = col
            .strip_prefix(&want)
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&c| c > 0)
            .ok_or_else(|| parse_err(&p, 1, format!("bad header field {col:?}")))?;
        cards.push(c);
    }
    if cols[cols.len() - 3..] != ["y_click", "y_conv", "y_pv_conv"] {
        return Err(parse_err(&p, 1, "malformed label columns in header"));
    }

    let mut records = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != n_fields + 4 {
            return Err(parse_err(
                &p,
                lineno,
                format!("expected {} columns, got {}", n_fields + 4, parts.len()),
            ));
        }
        let sample_id: u64 = parts[0]
            .parse()
            .map_err(|_| parse_err(&p, lineno, format!("bad sample_id {:?}", parts[0])))?;
        let mut features = Vec::with_capacity(n_fields);
        for (i, tok) in parts[1..1 + n_fields].iter().enumerate() {
            let want = format!("field{i}:");
            let cat: u32 = tok
                .strip_prefix(&want)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| parse_err(&p, lineno, format!("bad feature token {tok:?}")))?;
            if cat as usize >= cards[i] {
                return Err(parse_err(
                    &p,
                    lineno,
                    format!("category {cat} out of range for field{i} (cardinality {})", cards[i]),
                ));
            }
            features.push(cat);
        }
        let y_click = parse_bit(parts[n_fields + 1], &p, lineno, "y_click")?;
        let y_conv = match parts[n_fields + 2] {
            "0" => ConvLabel::Zero,
            "1" => ConvLabel::One,
            "?" => ConvLabel::Unknown,
            other => return Err(parse_err(&p, lineno, format!("bad y_conv {other:?}"))),
        };
        let y_pv_conv = parse_bit(parts[n_fields + 3], &p, lineno, "y_pv_conv")?;
        let record = ImpressionRecord {
            sample_id,
            features,
            y_click,
            y_conv,
            y_pv_conv,
        };
        if !record.labels_consistent() {
            return Err(parse_err(&p, lineno, "inconsistent click/conversion labels"));
        }
        records.push(record);
    }
    Ok(Dataset {
        records,
        field_cardinalities: cards,
        oracle_id: None,
    })
}

fn parse_bit(s: &str, path: &str, line: usize, name: &str) -> Result<u8, CliError> {
    match s {
        "0" => Ok(0),
        "1" => Ok(1),
        _ => Err(parse_err(path, line, format!("bad {name} {s:?}"))),
    }
}
