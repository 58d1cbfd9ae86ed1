//! Parameter checkpoints: versioned text container holding the model name,
//! field cardinalities, the resolved model-config TOML, and every parameter
//! tensor as hex-encoded IEEE-754 bits (bit-exact round trip).

use std::fs;
use std::path::Path;

use cvrkit_core::nn::{Params, Tensor};

use super::{hex_f64, parse_err, parse_hex_f64};
use crate::error::CliError;

const MAGIC: &str = "cvrkit-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: String,
    pub field_cardinalities: Vec<usize>,
    /// Resolved model-config TOML snapshot.
    pub config_toml: String,
    /// (rows, cols, values) per tensor, in arena order.
    pub tensors: Vec<(usize, usize, Vec<f64>)>,
}

impl Checkpoint {
    pub fn from_params(
        model: &str,
        field_cardinalities: &[usize],
        config_toml: &str,
        params: &Params,
    ) -> Self {
        Checkpoint {
            model: model.to_string(),
            field_cardinalities: field_cardinalities.to_vec(),
            config_toml: config_toml.to_string(),
            tensors: params
                .tensors()
                .iter()
                .map(|t| (t.rows, t.cols, t.values.clone()))
                .collect(),
        }
    }

    /// Copy stored values into a freshly built model's arena.
    pub fn restore_into(&self, params: &mut Params) -> Result<(), CliError> {
        if params.len() != self.tensors.len() {
            return Err(CliError::Data(format!(
                "checkpoint has {} tensors, model expects {}",
                self.tensors.len(),
                params.len()
            )));
        }
        for (t, (rows, cols, values)) in params.tensors_mut().iter_mut().zip(&self.tensors) {
            if t.rows != *rows || t.cols != *cols {
                return Err(CliError::Data(format!(
                    "checkpoint tensor shape {}x{} does not match model {}x{}",
                    rows, cols, t.rows, t.cols
                )));
            }
            t.values.clone_from(values);
        }
        Ok(())
    }

    /// Arena rebuilt from the stored tensors alone.
    pub fn to_params(&self) -> Params {
        let mut p = Params::new();
        for (rows, cols, values) in &self.tensors {
            p.alloc(Tensor::from_values(*rows, *cols, values.clone()));
        }
        p
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("model {}\n", ckpt.model));
    out.push_str("cards");
    for c in &ckpt.field_cardinalities {
        out.push_str(&format!(" {c}"));
    }
    out.push('\n');
    out.push_str(&format!(
        "config {} lines\n{}",
        ckpt.config_toml.lines().count(),
        ckpt.config_toml
    ));
    if !ckpt.config_toml.is_empty() && !ckpt.config_toml.ends_with('\n') {
        out.push('\n');
    }
    out.push_str(&format!("tensors {}\n", ckpt.tensors.len()));
    for (rows, cols, values) in &ckpt.tensors {
        out.push_str(&format!("tensor {rows} {cols}"));
        for v in values {
            out.push(' ');
            out.push_str(&hex_f64(*v));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let text = fs::read_to_string(path)?;
    let p = path.display().to_string();
    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0usize;
    let mut next = |expect_prefix: Option<&str>| -> Result<(usize, String), CliError> {
        let lineno = i + 1;
        let line = *lines
            .get(i)
            .ok_or_else(|| parse_err(&p, lineno, "unexpected end of file"))?;
        i += 1;
        match expect_prefix {
            Some(pre) => {
                let rest = line
                    .strip_prefix(pre)
                    .ok_or_else(|| parse_err(&p, lineno, format!("expected {pre:?} line")))?;
                Ok((lineno, rest.trim_start().to_string()))
            }
            None => Ok((lineno, line.to_string())),
        }
    };

    let (n, magic) = next(None)?;
    if magic != MAGIC {
        return Err(parse_err(&p, n, "not a checkpoint file"));
    }
    let (_, model) = next(Some("model"))?;
    let (n, cards_s) = next(Some("cards"))?;
    let field_cardinalities: Vec<usize> = cards_s
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| parse_err(&p, n, "bad cardinality")))
        .collect::<Result<_, _>>()?;
    let (n, cfg_header) = next(Some("config"))?;
    let n_cfg: usize = cfg_header
        .strip_suffix(" lines")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(&p, n, "bad config header"))?;
    let mut config_toml = String::new();
    for _ in 0..n_cfg {
        let (_, line) = next(None)?;
        config_toml.push_str(&line);
        config_toml.push('\n');
    }
    let (n, tensors_s) = next(Some("tensors"))?;
    let n_tensors: usize = tensors_s
        .parse()
        .map_err(|_| parse_err(&p, n, "bad tensor count"))?;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let (lineno, body) = next(Some("tensor"))?;
        let mut toks = body.split_whitespace();
        let rows: usize = toks
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(&p, lineno, "bad tensor rows"))?;
        let cols: usize = toks
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(&p, lineno, "bad tensor cols"))?;
        let values: Vec<f64> = toks
            .map(|s| parse_hex_f64(s, &p, lineno))
            .collect::<Result<_, _>>()?;
        if values.len() != rows * cols {
            return Err(parse_err(
                &p,
                lineno,
                format!("tensor expects {} values, got {}", rows * cols, values.len()),
            ));
        }
        tensors.push((rows, cols, values));
    }
    Ok(Checkpoint {
        model,
        field_cardinalities,
        config_toml,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = Checkpoint {
            model: "joint".to_string(),
            field_cardinalities: vec![5, 9],
            config_toml: "gamma = 0.2\nalpha = 0.5\n".to_string(),
            tensors: vec![
                (2, 3, vec![0.1, -2.5e-17, f64::MIN_POSITIVE, 3.0, 0.0, -0.0]),
                (1, 1, vec![1.0 / 3.0]),
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        write_checkpoint(&ckpt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.model, ckpt.model);
        assert_eq!(loaded.config_toml, ckpt.config_toml);
        assert_eq!(loaded.field_cardinalities, ckpt.field_cardinalities);
        for (a, b) in loaded.tensors.iter().zip(&ckpt.tensors) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1, b.1);
            let bits_a: Vec<u64> = a.2.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.2.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn shape_mismatch_on_restore_is_an_error() {
        let ckpt = Checkpoint {
            model: "joint".to_string(),
            field_cardinalities: vec![2],
            config_toml: String::new(),
            tensors: vec![(1, 2, vec![1.0, 2.0])],
        };
        let mut params = Params::new();
        params.alloc(Tensor::zeros(2, 2));
        assert!(ckpt.restore_into(&mut params).is_err());
    }
}
