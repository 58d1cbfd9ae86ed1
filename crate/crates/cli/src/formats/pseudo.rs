//! Pseudo-label files: header plus `sample_id,p_pos,p_neg[,mc_variance]`
//! lines. Probabilities use shortest round-trip decimal formatting, which
//! reparses to the identical f64.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use cvrkit_core::datagen::Dataset;
use cvrkit_core::teacher::PseudoLabeledRecord;

use super::parse_err;
use crate::error::CliError;

/// One parsed line; features are rejoined from a dataset by sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoEntry {
    pub sample_id: u64,
    pub p_conv: [f64; 2],
    pub mc_variance: Option<f64>,
}

pub fn write_pseudo_file(labels: &[PseudoLabeledRecord], path: &Path) -> Result<(), CliError> {
    let with_variance = labels.iter().any(|l| l.mc_variance.is_some());
    let mut out = String::from(if with_variance {
        "sample_id,p_pos,p_neg,mc_variance\n"
    } else {
        "sample_id,p_pos,p_neg\n"
    });
    for l in labels {
        out.push_str(&format!(
            "{},{},{}",
            l.record.sample_id, l.p_conv[0], l.p_conv[1]
        ));
        if with_variance {
            out.push_str(&format!(",{}", l.mc_variance.unwrap_or(0.0)));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_pseudo_file(path: &Path) -> Result<Vec<PseudoEntry>, CliError> {
    let text = fs::read_to_string(path)?;
    let p = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(&p, 1, "empty file"))?;
    let with_variance = match header {
        "sample_id,p_pos,p_neg" => false,
        "sample_id,p_pos,p_neg,mc_variance" => true,
        _ => return Err(parse_err(&p, 1, "malformed header")),
    };
    let want = if with_variance { 4 } else { 3 };
    let mut entries = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != want {
            return Err(parse_err(&p, lineno, "wrong column count"));
        }
        let sample_id: u64 = parts[0]
            .parse()
            .map_err(|_| parse_err(&p, lineno, "bad sample_id"))?;
        let pf = |s: &str| -> Result<f64, CliError> {
            s.parse()
                .map_err(|_| parse_err(&p, lineno, format!("bad number {s:?}")))
        };
        let p_pos = pf(parts[1])?;
        let p_neg = pf(parts[2])?;
        if !(0.0..=1.0).contains(&p_pos) || (p_pos + p_neg - 1.0).abs() > 1e-9 {
            return Err(parse_err(&p, lineno, "soft label must sum to 1"));
        }
        let mc_variance = if with_variance {
            Some(pf(parts[3])?)
        } else {
            None
        };
        entries.push(PseudoEntry {
            sample_id,
            p_conv: [p_pos, p_neg],
            mc_variance,
        });
    }
    Ok(entries)
}

/// Rejoin parsed entries with their records from the unclicked pool.
pub fn join_pseudo(
    entries: &[PseudoEntry],
    d_unclick: &Dataset,
) -> Result<Vec<PseudoLabeledRecord>, CliError> {
    let by_id: BTreeMap<u64, usize> = d_unclick
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.sample_id, i))
        .collect();
    entries
        .iter()
        .map(|e| {
            let &i = by_id.get(&e.sample_id).ok_or_else(|| {
                CliError::Data(format!(
                    "pseudo label for unknown sample id {}",
                    e.sample_id
                ))
            })?;
            Ok(PseudoLabeledRecord {
                record: d_unclick.records[i].clone(),
                p_conv: e.p_conv,
                mc_variance: e.mc_variance,
            })
        })
        .collect()
}
