//! Oracle-world files: the hidden ground-truth parameters of a synthetic
//! dataset, stored with bit-exact hex floats.

use std::fs;
use std::path::Path;

use cvrkit_core::datagen::{OracleParts, OracleWorld};

use super::{hex_f64, parse_err, parse_hex_f64};
use crate::error::CliError;

const MAGIC: &str = "cvrkit-oracle v2";

pub fn write_oracle(oracle: &OracleWorld, path: &Path) -> Result<(), CliError> {
    let parts = oracle.parts();
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("world_id {}\n", parts.world_id));
    out.push_str(&format!("correlation {}\n", hex_f64(parts.correlation)));
    out.push_str(&format!("ctr_intercept {}\n", hex_f64(parts.ctr_intercept)));
    out.push_str(&format!("cvr_intercept {}\n", hex_f64(parts.cvr_intercept)));
    for (name, offsets) in [
        ("field_offsets", &parts.field_offsets),
        ("pair_offsets", &parts.pair_offsets),
        ("pair_strides", &parts.pair_strides),
    ] {
        out.push_str(name);
        for o in offsets {
            out.push_str(&format!(" {o}"));
        }
        out.push('\n');
    }
    for (name, w) in [
        ("ctr_weights", &parts.ctr_weights),
        ("cvr_weights", &parts.cvr_weights),
        ("ctr_pair_weights", &parts.ctr_pair_weights),
        ("cvr_pair_weights", &parts.cvr_pair_weights),
    ] {
        out.push_str(name);
        for v in w {
            out.push(' ');
            out.push_str(&hex_f64(*v));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_oracle(path: &Path) -> Result<OracleWorld, CliError> {
    let text = fs::read_to_string(path)?;
    let p = path.display().to_string();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let expect = |pair: Option<(usize, &str)>, name: &str| -> Result<(usize, String), CliError> {
        let (n, line) = pair.ok_or_else(|| parse_err(&p, 0, format!("missing {name} line")))?;
        let rest = line
            .strip_prefix(name)
            .ok_or_else(|| parse_err(&p, n, format!("expected {name} line")))?;
        Ok((n, rest.trim().to_string()))
    };
    let (n, magic) = lines
        .next()
        .ok_or_else(|| parse_err(&p, 1, "empty file"))?;
    if magic != MAGIC {
        return Err(parse_err(&p, n, "not an oracle file"));
    }
    let (n, wid) = expect(lines.next(), "world_id")?;
    let world_id: u64 = wid
        .parse()
        .map_err(|_| parse_err(&p, n, "bad world_id"))?;
    let (n, corr) = expect(lines.next(), "correlation")?;
    let correlation = parse_hex_f64(&corr, &p, n)?;
    let (n, cb) = expect(lines.next(), "ctr_intercept")?;
    let ctr_intercept = parse_hex_f64(&cb, &p, n)?;
    let (n, vb) = expect(lines.next(), "cvr_intercept")?;
    let cvr_intercept = parse_hex_f64(&vb, &p, n)?;
    let mut index_rows = Vec::new();
    for name in ["field_offsets", "pair_offsets", "pair_strides"] {
        let (n, offs) = expect(lines.next(), name)?;
        let vals: Vec<usize> = offs
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| parse_err(&p, n, "bad offset")))
            .collect::<Result<_, _>>()?;
        index_rows.push(vals);
    }
    let pair_strides = index_rows.pop().unwrap();
    let pair_offsets = index_rows.pop().unwrap();
    let field_offsets = index_rows.pop().unwrap();
    let mut weights = Vec::new();
    for name in [
        "ctr_weights",
        "cvr_weights",
        "ctr_pair_weights",
        "cvr_pair_weights",
    ] {
        let (n, w) = expect(lines.next(), name)?;
        let vals: Vec<f64> = w
            .split_whitespace()
            .map(|s| parse_hex_f64(s, &p, n))
            .collect::<Result<_, _>>()?;
        weights.push(vals);
    }
    let cvr_pair_weights = weights.pop().unwrap();
    let ctr_pair_weights = weights.pop().unwrap();
    let cvr_weights = weights.pop().unwrap();
    let ctr_weights = weights.pop().unwrap();
    Ok(OracleWorld::from_parts(OracleParts {
        ctr_weights,
        cvr_weights,
        ctr_pair_weights,
        cvr_pair_weights,
        ctr_intercept,
        cvr_intercept,
        field_offsets,
        pair_offsets,
        pair_strides,
        correlation,
        world_id,
    }))
}
