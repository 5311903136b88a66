use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A split ratio held as an exact fraction, so `2/3` of 28 layers rounds to
/// 19 rather than the 18 that `0.66` gives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    num: u64,
    den: u64,
}

impl Fraction {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if den == 0 || num == 0 || num >= den {
            return Err(Error::invalid(format!("split fraction {num}/{den} must lie strictly between 0 and 1")));
        }
        let g = gcd(num, den);
        Ok(Fraction { num: num / g, den: den / g })
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `round(r * n)` half-up, clamped to `[1, n - 1]`.
    pub fn split_layer(self, n_layers: usize) -> usize {
        let n = n_layers as u128;
        let (num, den) = (self.num as u128, self.den as u128);
        let rounded = ((2 * num * n + den) / (2 * den)) as usize;
        rounded.clamp(1, n_layers.saturating_sub(1).max(1))
    }

    pub fn defaults() -> Vec<Fraction> {
        vec![Fraction { num: 1, den: 3 }, Fraction { num: 1, den: 2 }, Fraction { num: 2, den: 3 }]
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Fraction {
    type Err = Error;

    /// Accepts `a/b` or a plain decimal such as `0.66`, both read exactly.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::invalid(format!("cannot read {s:?} as a fraction"));
        if let Some((a, b)) = s.split_once('/') {
            let num = a.trim().parse().map_err(|_| bad())?;
            let den = b.trim().parse().map_err(|_| bad())?;
            return Fraction::new(num, den);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 18 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let den = 10u64.pow(frac.len() as u32);
        let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        let num = int.checked_mul(den).and_then(|v| v.checked_add(frac)).ok_or_else(bad)?;
        Fraction::new(num, den)
    }
}

impl Serialize for Fraction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses a comma-separated fraction list such as `1/3,1/2,2/3`.
pub fn parse_fractions(s: &str) -> Result<Vec<Fraction>> {
    let out = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Fraction>>>()?;
    if out.is_empty() {
        return Err(Error::invalid("no split fractions given"));
    }
    Ok(out)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `mean LS[1..=b] + mean TP[b+1..=N] - mean TP[1..=b] - mean LS[b+1..=N]`
/// over layer profiles indexed from layer 1. Grouped as two differences so
/// that swapping the profiles negates the result exactly.
pub fn boundary_score(tp_hat: &[f64], ls_hat: &[f64], b: usize) -> Result<f64> {
    let n = tp_hat.len();
    if ls_hat.len() != n {
        return Err(Error::invalid(format!("profile lengths differ: {n} vs {}", ls_hat.len())));
    }
    if n < 2 || b < 1 || b >= n {
        return Err(Error::invalid(format!("split layer {b} outside 1..={}", n.saturating_sub(1))));
    }
    let shallow = mean(&ls_hat[..b]) - mean(&tp_hat[..b]);
    let deep = mean(&tp_hat[b..]) - mean(&ls_hat[b..]);
    Ok(shallow + deep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryScan {
    pub fractions: Vec<Fraction>,
    pub split_layers: Vec<usize>,
    pub scores: Vec<f64>,
    pub tp_hat: Vec<f64>,
    pub ls_hat: Vec<f64>,
}

impl BoundaryScan {
    /// Rows of `(fraction, split layer, score)`.
    pub fn rows(&self) -> impl Iterator<Item = (Fraction, usize, f64)> + '_ {
        self.fractions
            .iter()
            .zip(&self.split_layers)
            .zip(&self.scores)
            .map(|((f, b), s)| (*f, *b, *s))
    }
}

/// Scores the split `b = round(r * N)` for every fraction `r`.
pub fn scan_boundaries(tp_hat: &[f64], ls_hat: &[f64], fractions: &[Fraction]) -> Result<BoundaryScan> {
    let n = tp_hat.len();
    let split_layers: Vec<usize> = fractions.iter().map(|f| f.split_layer(n)).collect();
    let scores = split_layers
        .iter()
        .map(|&b| boundary_score(tp_hat, ls_hat, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundaryScan {
        fractions: fractions.to_vec(),
        split_layers,
        scores,
        tp_hat: tp_hat.to_vec(),
        ls_hat: ls_hat.to_vec(),
    })
}

/// Layer-indexed profile from per-sample curves over layers `2..=N`: the
/// sample mean at each layer, with layer 1 (which has no predecessor) set
/// to zero.
pub fn layer_profile(curves: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = curves.first().ok_or_else(|| Error::invalid("no per-sample curves"))?;
    if curves.iter().any(|c| c.len() != first.len()) {
        return Err(Error::invalid("per-sample curves differ in length"));
    }
    let mut out = vec![0.0; first.len() + 1];
    for (j, slot) in out.iter_mut().skip(1).enumerate() {
        *slot = curves.iter().map(|c| c[j]).sum::<f64>() / curves.len() as f64;
    }
    Ok(out)
}
