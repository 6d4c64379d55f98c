//! Checkpoint files.
//!
//! Both encodings share a text header of `key=value` lines opened by
//! `sanode-checkpoint` and closed by `end`. The binary encoding follows it with the
//! parameters (canonical order: per neuron `W, A1 row-major, A2, B` for SA fields,
//! per step and neuron `w, a, b` for vanilla ones) and then the loss history, all
//! little-endian `f64`. The text encoding writes the same arrays one value per
//! line with 17 significant digits, after `[params]` and `[history]` markers.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Checkpoint, TrainConfig};
use crate::error::{Error, Result};
use crate::nets::{Model, ModelKind, SaParams, VanillaParams};
use crate::ode::TimeGrid;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "sanode-checkpoint";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointFormat {
    Binary,
    Text,
}

impl CheckpointFormat {
    fn name(self) -> &'static str {
        match self {
            CheckpointFormat::Binary => "binary",
            CheckpointFormat::Text => "text",
        }
    }
}

fn header(c: &Checkpoint, format: CheckpointFormat, n_params: usize) -> String {
    let mut lines = vec![
        MAGIC.to_string(),
        format!("version={CHECKPOINT_VERSION}"),
        format!("encoding={}", format.name()),
        format!("dim={}", c.model.dim()),
    ];
    if let Model::Vanilla(p) = &c.model {
        let g = p.grid();
        lines.push(format!("grid.t0={}", g.t0()));
        lines.push(format!("grid.t1={}", g.t1()));
        lines.push(format!("grid.steps={}", g.steps()));
    }
    lines.extend(c.config.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}")));
    lines.push(format!("fingerprint={}", c.fingerprint));
    lines.push(format!("epoch={}", c.epoch));
    lines.push(format!("params={n_params}"));
    lines.push(format!("history={}", c.history.len()));
    lines.push("end".into());
    let mut s = lines.join("\n");
    s.push('\n');
    s
}

pub fn encode_checkpoint(c: &Checkpoint, format: CheckpointFormat) -> Vec<u8> {
    let params = c.model.to_canonical();
    let mut out = header(c, format, params.len()).into_bytes();
    match format {
        CheckpointFormat::Binary => {
            for v in params.iter().chain(&c.history) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        CheckpointFormat::Text => {
            let mut body = String::from("[params]\n");
            for v in &params {
                body.push_str(&format!("{v:.16e}\n"));
            }
            body.push_str("[history]\n");
            for v in &c.history {
                body.push_str(&format!("{v:.16e}\n"));
            }
            out.extend_from_slice(body.as_bytes());
        }
    }
    out
}

pub fn save_checkpoint(c: &Checkpoint, path: &Path, format: CheckpointFormat) -> Result<()> {
    fs::write(path, encode_checkpoint(c, format)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Splits off the header lines up to and including `end`; returns them and the
/// byte offset of the payload.
fn split_header<'a>(bytes: &'a [u8], path: &Path) -> Result<(Vec<&'a str>, usize)> {
    let mut lines = Vec::new();
    let mut pos = 0;
    loop {
        let nl = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::corrupt(path, "checkpoint header is truncated"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + nl])
            .map_err(|_| Error::corrupt(path, "checkpoint header is not UTF-8"))?;
        pos += nl + 1;
        if line == "end" {
            return Ok((lines, pos));
        }
        lines.push(line);
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let corrupt = |r: String| Error::corrupt(path, r);
    let (lines, payload_at) = split_header(bytes, path)?;
    if lines.first() != Some(&MAGIC) {
        return Err(corrupt("not a checkpoint file".into()));
    }
    let map: BTreeMap<String, String> = lines[1..]
        .iter()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let get = |k: &str| map.get(k).ok_or_else(|| corrupt(format!("header lacks `{k}`")));
    fn num<T: std::str::FromStr>(v: &str, k: &str, path: &Path) -> Result<T> {
        v.parse()
            .map_err(|_| Error::corrupt(path, format!("bad `{k}` value `{v}`")))
    }
    let version: u32 = num(get("version")?, "version", path)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let config = TrainConfig::from_map(&map).map_err(|e| corrupt(e.to_string()))?;
    let dim: usize = num(get("dim")?, "dim", path)?;
    let n_params: usize = num(get("params")?, "params", path)?;
    let n_history: usize = num(get("history")?, "history", path)?;
    let payload = &bytes[payload_at..];
    let values = match get("encoding")?.as_str() {
        "binary" => {
            if payload.len() != (n_params + n_history) * 8 {
                return Err(corrupt(format!(
                    "payload has {} bytes, header implies {}",
                    payload.len(),
                    (n_params + n_history) * 8
                )));
            }
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect::<Vec<_>>()
        }
        "text" => parse_text_body(payload, n_params, n_history, path)?,
        other => return Err(corrupt(format!("unknown encoding `{other}`"))),
    };
    let (params, history) = values.split_at(n_params);
    let model = match config.model {
        ModelKind::Sa => {
            let mut p = SaParams::from_canonical(config.width, dim, config.activation, params)
                .map_err(|e| corrupt(e.to_string()))?;
            p.set_autonomous(config.autonomous);
            Model::Sa(p)
        }
        ModelKind::Vanilla => {
            let grid = TimeGrid::new(
                num(get("grid.t0")?, "grid.t0", path)?,
                num(get("grid.t1")?, "grid.t1", path)?,
                num(get("grid.steps")?, "grid.steps", path)?,
            )
            .map_err(|e| corrupt(e.to_string()))?;
            Model::Vanilla(
                VanillaParams::from_canonical(config.width, dim, grid, config.activation, params)
                    .map_err(|e| corrupt(e.to_string()))?,
            )
        }
    };
    Ok(Checkpoint {
        config,
        model,
        fingerprint: get("fingerprint")?.clone(),
        epoch: num(get("epoch")?, "epoch", path)?,
        history: history.to_vec(),
    })
}

fn parse_text_body(payload: &[u8], n_params: usize, n_history: usize, path: &Path) -> Result<Vec<f64>> {
    let text = std::str::from_utf8(payload).map_err(|_| Error::corrupt(path, "text body is not UTF-8"))?;
    // Every value line is newline-terminated, so a cut inside the last number is visible.
    if !text.ends_with('\n') {
        return Err(Error::corrupt(path, "text body is truncated"));
    }
    let mut lines = text.lines();
    let mut values = Vec::with_capacity(n_params + n_history);
    for (marker, count) in [("[params]", n_params), ("[history]", n_history)] {
        if lines.next() != Some(marker) {
            return Err(Error::corrupt(path, format!("missing `{marker}` section")));
        }
        for i in 0..count {
            let line = lines
                .next()
                .ok_or_else(|| Error::corrupt(path, format!("{marker} ends after {i} of {count} values")))?;
            values.push(
                line.trim()
                    .parse()
                    .map_err(|_| Error::corrupt(path, format!("bad number `{line}` in {marker}")))?,
            );
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(Error::corrupt(path, "trailing data after the history section"));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Activation;

    fn sample(kind: ModelKind) -> Checkpoint {
        let config = TrainConfig {
            model: kind,
            width: 3,
            activation: Activation::Sigmoid,
            ..TrainConfig::default()
        };
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        Checkpoint {
            model: config.init_model(2, grid).unwrap(),
            config,
            fingerprint: "ab".repeat(32),
            epoch: 3,
            history: vec![1.5, 0.1 + 0.2, 1e-300],
        }
    }

    #[test]
    fn round_trips_bit_exactly() {
        for kind in [ModelKind::Sa, ModelKind::Vanilla] {
            let c = sample(kind);
            for f in [CheckpointFormat::Binary, CheckpointFormat::Text] {
                let back = decode_checkpoint(&encode_checkpoint(&c, f), Path::new("x")).unwrap();
                assert_eq!(back, c, "{kind} {f:?}");
            }
        }
    }

    #[test]
    fn truncation_and_version_errors() {
        let c = sample(ModelKind::Sa);
        for f in [CheckpointFormat::Binary, CheckpointFormat::Text] {
            let bytes = encode_checkpoint(&c, f);
            for cut in [bytes.len() - 1, bytes.len() / 2, 10] {
                let r = decode_checkpoint(&bytes[..cut], Path::new("x"));
                assert!(matches!(r, Err(Error::Corrupt { .. })), "{f:?} cut {cut}");
            }
        }
        let text = String::from_utf8(encode_checkpoint(&c, CheckpointFormat::Text)).unwrap();
        let v2 = text.replace("version=1", "version=7");
        assert!(matches!(
            decode_checkpoint(v2.as_bytes(), Path::new("x")),
            Err(Error::Version { found: 7, .. })
        ));
    }
}
