use serde::{Deserialize, Serialize};

/// Per-layer trainability assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezePlan {
    /// `trainable[l - 1]` for layer `l`.
    pub trainable: Vec<bool>,
    pub embeddings_trainable: bool,
    pub lm_head_trainable: bool,
}

impl FreezePlan {
    pub fn all_trainable(n_layers: usize) -> Self {
        Self {
            trainable: vec![true; n_layers],
            embeddings_trainable: true,
            lm_head_trainable: true,
        }
    }

    pub fn all_frozen(n_layers: usize) -> Self {
        Self {
            trainable: vec![false; n_layers],
            embeddings_trainable: false,
            lm_head_trainable: false,
        }
    }

    /// Layers `1..=split` get `shallow`, layers `split+1..=N` get `deep`.
    /// Embeddings and head follow the shallow side.
    pub fn split(n_layers: usize, split: usize, shallow: bool, deep: bool) -> Self {
        Self {
            trainable: (0..n_layers).map(|l| if l < split { shallow } else { deep }).collect(),
            embeddings_trainable: shallow,
            lm_head_trainable: shallow,
        }
    }

    /// 1-based indices of frozen layers.
    pub fn frozen_layers(&self) -> Vec<usize> {
        self.trainable
            .iter()
            .enumerate()
            .filter(|(_, t)| !**t)
            .map(|(i, _)| i + 1)
            .collect()
    }

    pub fn trainable_layers(&self) -> Vec<usize> {
        self.trainable
            .iter()
            .enumerate()
            .filter(|(_, t)| **t)
            .map(|(i, _)| i + 1)
            .collect()
    }
}
