use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMatrix {
    /// 1-based group labels, one per row.
    pub groups: Vec<usize>,
    /// 1-based layer index of each column.
    pub layers: Vec<usize>,
    pub values: Vec<Vec<f64>>,
}

impl HeatmapMatrix {
    pub fn shape(&self) -> (usize, usize) {
        (self.groups.len(), self.layers.len())
    }

    /// `ln(1 + v)` of every cell, for display.
    pub fn log1p_values(&self) -> Vec<Vec<f64>> {
        self.values
            .iter()
            .map(|row| row.iter().map(|v| v.ln_1p()).collect())
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }
}

/// Row `g` is the elementwise mean of the profiles whose group label is `g`,
/// for labels `1..=n_groups`. Columns are labelled from `first_layer`.
pub fn group_heatmap(
    profiles: &[Vec<f64>],
    group_ids: &[usize],
    n_groups: usize,
    first_layer: usize,
) -> Result<HeatmapMatrix> {
    if profiles.len() != group_ids.len() {
        return Err(Error::invalid(format!(
            "{} profiles but {} group labels",
            profiles.len(),
            group_ids.len()
        )));
    }
    let width = profiles.first().map(Vec::len).ok_or_else(|| Error::invalid("no profiles"))?;
    if profiles.iter().any(|p| p.len() != width) {
        return Err(Error::invalid("profiles differ in length"));
    }
    let mut sums = vec![vec![0.0; width]; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (p, &g) in profiles.iter().zip(group_ids) {
        if g == 0 || g > n_groups {
            return Err(Error::invalid(format!("group label {g} outside 1..={n_groups}")));
        }
        counts[g - 1] += 1;
        for (s, v) in sums[g - 1].iter_mut().zip(p) {
            *s += v;
        }
    }
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("group {} is empty", g + 1)));
    }
    let values = sums
        .into_iter()
        .zip(&counts)
        .map(|(row, &c)| row.into_iter().map(|s| s / c as f64).collect())
        .collect();
    Ok(HeatmapMatrix {
        groups: (1..=n_groups).collect(),
        layers: (first_layer..first_layer + width).collect(),
        values,
    })
}
