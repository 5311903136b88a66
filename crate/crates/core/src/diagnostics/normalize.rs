use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clip bound for z-scores before mapping them onto `[0, 1]`.
pub const Z_CLIP: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    MinMax,
    /// z-score clipped to `±Z_CLIP`, then mapped linearly onto `[0, 1]`.
    ZScoreClipped,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::MinMax => "min-max",
            Normalization::ZScoreClipped => "z-score-clipped",
        })
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min-max" => Ok(Normalization::MinMax),
            "z-score-clipped" => Ok(Normalization::ZScoreClipped),
            _ => Err(Error::invalid(format!(
                "normalization must be min-max or z-score-clipped, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedProfile {
    pub values: Vec<f64>,
    /// Set when every input was equal; `values` is then all zeros.
    pub degenerate: bool,
}

pub fn normalize_profile(values: &[f64], method: Normalization) -> Result<NormalizedProfile> {
    if values.is_empty() {
        return Err(Error::invalid("cannot normalize an empty profile"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("profile contains non-finite values"));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Ok(NormalizedProfile {
            values: vec![0.0; values.len()],
            degenerate: true,
        });
    }
    let out = match method {
        Normalization::MinMax => values.iter().map(|v| (v - min) / (max - min)).collect(),
        Normalization::ZScoreClipped => {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            values
                .iter()
                .map(|v| (((v - mean) / sd).clamp(-Z_CLIP, Z_CLIP) + Z_CLIP) / (2.0 * Z_CLIP))
                .collect()
        }
    };
    Ok(NormalizedProfile {
        values: out,
        degenerate: false,
    })
}
