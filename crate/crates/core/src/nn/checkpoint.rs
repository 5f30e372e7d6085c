//! Plain-text network checkpoints.
//!
//! ```text
//! powerwall-rl-checkpoint 1
//! network actor 3
//! layer 4 64 tanh
//! w <64 * 4 values, row-major>
//! b <64 values>
//! ...
//! end
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so a load gives back
//! bit-identical parameters.

use std::fmt::Write as _;

use super::{Activation, DenseLayer, Mlp};

pub const MAGIC: &str = "powerwall-rl-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (missing `{MAGIC}` header)")]
    NotACheckpoint,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("network `{0}` not found in checkpoint")]
    MissingNetwork(String),
}

/// Serializes named networks.
pub fn encode(networks: &[(&str, &Mlp)]) -> String {
    let mut out = format!("{MAGIC} {VERSION}\n");
    for (name, net) in networks {
        let _ = writeln!(out, "network {name} {}", net.layers().len());
        for l in net.layers() {
            let _ = writeln!(
                out,
                "layer {} {} {}",
                l.inputs,
                l.outputs,
                l.activation.as_str()
            );
            out.push('w');
            for v in &l.weights {
                let _ = write!(out, " {v}");
            }
            out.push_str("\nb");
            for v in &l.biases {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out.push_str("end\n");
    }
    out
}

/// Parses every network in a checkpoint, preserving order.
pub fn decode(text: &str) -> Result<Vec<(String, Mlp)>, CheckpointError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let err = |line: usize, msg: &str| CheckpointError::Parse {
        line,
        msg: msg.to_string(),
    };

    let (_, header) = lines.next().ok_or(CheckpointError::NotACheckpoint)?;
    let mut head = header.split_whitespace();
    if head.next() != Some(MAGIC) {
        return Err(CheckpointError::NotACheckpoint);
    }
    let version: u32 = head
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| err(1, "missing version"))?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }

    let mut networks = Vec::new();
    while let Some((ln, line)) = lines.next() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let (name, count) = match parts.as_slice() {
            ["network", name, count] => (
                name.to_string(),
                count
                    .parse::<usize>()
                    .map_err(|_| err(ln, "bad layer count"))?,
            ),
            _ => return Err(err(ln, "expected `network <name> <layers>`")),
        };
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, line) = lines.next().ok_or_else(|| err(ln, "truncated network"))?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            let (inputs, outputs, activation) = match parts.as_slice() {
                ["layer", i, o, a] => {
                    let i: usize = i.parse().map_err(|_| err(ln, "bad input size"))?;
                    let o: usize = o.parse().map_err(|_| err(ln, "bad output size"))?;
                    let a = match *a {
                        "tanh" => Activation::Tanh,
                        "identity" => Activation::Identity,
                        _ => return Err(err(ln, "unknown activation")),
                    };
                    (i, o, a)
                }
                _ => return Err(err(ln, "expected `layer <in> <out> <activation>`")),
            };
            let mut values = |tag: &str, n: usize| -> Result<Vec<f64>, CheckpointError> {
                let (ln, line) = lines.next().ok_or_else(|| err(ln, "truncated layer"))?;
                let mut it = line.split_whitespace();
                if it.next() != Some(tag) {
                    return Err(err(ln, &format!("expected `{tag}` row")));
                }
                let vals = it
                    .map(|v| v.parse::<f64>().map_err(|_| err(ln, "bad number")))
                    .collect::<Result<Vec<_>, _>>()?;
                if vals.len() != n {
                    return Err(err(
                        ln,
                        &format!("expected {n} values, found {}", vals.len()),
                    ));
                }
                Ok(vals)
            };
            let weights = values("w", inputs * outputs)?;
            let biases = values("b", outputs)?;
            layers.push(DenseLayer {
                inputs,
                outputs,
                weights,
                biases,
                activation,
            });
        }
        match lines.next() {
            Some((_, "end")) => {}
            Some((ln, _)) => return Err(err(ln, "expected `end`")),
            None => return Err(err(ln, "missing `end`")),
        }
        let net = Mlp::from_layers(layers).map_err(|e| err(ln, &e.to_string()))?;
        networks.push((name, net));
    }
    Ok(networks)
}

/// Pulls one named network out of a decoded checkpoint.
pub fn take(networks: &mut Vec<(String, Mlp)>, name: &str) -> Result<Mlp, CheckpointError> {
    let pos = networks
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| CheckpointError::MissingNetwork(name.to_string()))?;
    Ok(networks.remove(pos).1)
}
