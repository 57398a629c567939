//! Parametric KV-cache byte model.
//!
//! Bytes held by decode state: a constant `weight_bytes` plus the per-token
//! key/value footprint times the number of cached tokens. Activation and
//! workspace memory are not modelled.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{simulate, SimConfig, SimResult, Strategy};
use crate::error::{Error, Result};
use crate::trace::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvModel {
    pub layers: u64,
    /// Grouped key/value heads, not attention heads.
    pub kv_heads: u64,
    pub head_dim: u64,
    pub bytes_per_element: u64,
    pub weight_bytes: u64,
    pub prompt_len: u64,
}

impl KvModel {
    pub fn new(layers: u64, kv_heads: u64, head_dim: u64, bytes_per_element: u64) -> Self {
        KvModel {
            layers,
            kv_heads,
            head_dim,
            bytes_per_element,
            weight_bytes: 0,
            prompt_len: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("layers", self.layers),
            ("kv_heads", self.kv_heads),
            ("head_dim", self.head_dim),
            ("bytes_per_element", self.bytes_per_element),
        ] {
            if value == 0 {
                return Err(Error::config(field, "must be >= 1"));
            }
        }
        if self
            .layers
            .checked_mul(self.kv_heads)
            .and_then(|v| v.checked_mul(self.head_dim))
            .and_then(|v| v.checked_mul(self.bytes_per_element))
            .and_then(|v| v.checked_mul(2))
            .is_none()
        {
            return Err(Error::config("layers", "bytes per token overflow"));
        }
        Ok(())
    }

    /// Parses `key=value` lines. Blank lines and `#` comments are ignored;
    /// `weight_bytes` and `prompt_len` default to 0.
    pub fn parse(text: &str) -> Result<Self> {
        let mut fields: [Option<u64>; 6] = [None; 6];
        const KEYS: [&str; 6] = [
            "layers",
            "kv_heads",
            "head_dim",
            "bytes_per_element",
            "weight_bytes",
            "prompt_len",
        ];
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected key=value, got `{line}`"),
            })?;
            let key = key.trim();
            let slot = KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| Error::config(key.to_string(), "unknown model config key"))?;
            let value = value.trim().parse::<u64>().map_err(|e| {
                Error::config(key.to_string(), format!("not a nonnegative integer: {e}"))
            })?;
            if fields[slot].replace(value).is_some() {
                return Err(Error::config(key.to_string(), "given more than once"));
            }
        }
        let required =
            |i: usize| fields[i].ok_or_else(|| Error::config(KEYS[i], "missing from model config"));
        let model = KvModel {
            layers: required(0)?,
            kv_heads: required(1)?,
            head_dim: required(2)?,
            bytes_per_element: required(3)?,
            weight_bytes: fields[4].unwrap_or(0),
            prompt_len: fields[5].unwrap_or(0),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_config(&self) -> String {
        format!(
            "layers={}\nkv_heads={}\nhead_dim={}\nbytes_per_element={}\nweight_bytes={}\nprompt_len={}\n",
            self.layers, self.kv_heads, self.head_dim, self.bytes_per_element, self.weight_bytes, self.prompt_len
        )
    }
}

/// `2 · layers · kv_heads · head_dim · bytes_per_element`.
pub fn kv_bytes_per_token(model: &KvModel) -> u64 {
    2 * model.layers * model.kv_heads * model.head_dim * model.bytes_per_element
}

/// Peak decode-state bytes of a simulation. The prompt's KV is shared and
/// already counted once in `peak_kv_tokens`.
pub fn peak_bytes(result: &SimResult, model: &KvModel) -> Result<u128> {
    if result.prompt_len != model.prompt_len {
        return Err(Error::config(
            "prompt_len",
            format!(
                "model says {} but the simulation used {}",
                model.prompt_len, result.prompt_len
            ),
        ));
    }
    Ok(model.weight_bytes as u128
        + kv_bytes_per_token(model) as u128 * result.peak_kv_tokens as u128)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScalingRow {
    pub group_size: usize,
    pub micro_size: usize,
    pub strategy: Strategy,
    pub peak_bytes: u128,
}

/// Full versus naive peak bytes for every `(G, g)` pair with `g` dividing `G`.
/// `make_trace` supplies the trace for a group size.
pub fn scaling_report(
    mut make_trace: impl FnMut(usize) -> Result<Trace>,
    model: &KvModel,
    group_sizes: &[usize],
    micro_sizes: &[usize],
) -> Result<Vec<ScalingRow>> {
    model.validate()?;
    if group_sizes.is_empty() || micro_sizes.is_empty() {
        return Err(Error::config(
            "group_sizes",
            "need at least one group size and one micro size",
        ));
    }
    let mut rows = Vec::new();
    for &group_size in group_sizes {
        let trace = make_trace(group_size)?;
        for &micro_size in micro_sizes {
            if micro_size == 0 || group_size % micro_size != 0 {
                return Err(Error::config(
                    "micro_sizes",
                    format!("micro size {micro_size} does not divide group size {group_size}"),
                ));
            }
            for strategy in [Strategy::Full, Strategy::Naive] {
                let result = simulate(&trace, &SimConfig::new(strategy, group_size, micro_size))?;
                rows.push(ScalingRow {
                    group_size,
                    micro_size,
                    strategy,
                    peak_bytes: peak_bytes(&result, model)?,
                });
            }
        }
    }
    Ok(rows)
}

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut out = String::from("G,g,strategy,peak_bytes\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.group_size, r.micro_size, r.strategy, r.peak_bytes
        );
    }
    out
}



#[cfg(test)]
mod golden {
    use super::*;

    #[test]
    fn qwen_like_report_on_golden_trace() {
        let trace =
            Trace::from_csv(include_str!("../tests/golden/lognormal_5_0.6_n32_s42.csv")).unwrap();
        let rows = scaling_report(
            |g| trace.truncated(g),
            &KvModel::new(28, 8, 128, 2),
            &[8, 16, 32],
            &[1, 2, 4],
        )
        .unwrap();
        assert_eq!(
            scaling_csv(&rows),
            include_str!("../tests/golden/memory_qwen_like_s42.csv")
        );
    }
}
