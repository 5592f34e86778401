use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{label_intensity, Label};

/// One packet: magnitude-CFR features plus ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Snapshot or packet index, used for time ordering.
    pub snapshot: u64,
    pub features: Vec<f64>,
    pub count: usize,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    Ingested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub gamma: usize,
    pub receivers: usize,
    pub provenance: Provenance,
}

impl Dataset {
    /// Checks the dataset invariants: non-empty, constant finite feature width,
    /// labels consistent with counts and `gamma`.
    pub fn new(samples: Vec<Sample>, gamma: usize, receivers: usize, provenance: Provenance) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Data("dataset is empty".into()))?;
        let width = first.features.len();
        if width == 0 {
            return Err(Error::Data("samples have no features".into()));
        }
        for s in &samples {
            if s.features.len() != width {
                return Err(Error::Shape {
                    expected: width,
                    got: s.features.len(),
                });
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("non-finite feature in snapshot {}", s.snapshot)));
            }
            if s.label != label_intensity(s.count, gamma) {
                return Err(Error::Data(format!(
                    "label of snapshot {} disagrees with count {} and gamma {gamma}",
                    s.snapshot, s.count
                )));
            }
        }
        Ok(Dataset {
            samples,
            gamma,
            receivers,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.samples.first().map_or(0, |s| s.features.len())
    }

    /// Same features, labels recomputed for a new threshold.
    pub fn relabel(&self, gamma: usize) -> Dataset {
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                label: label_intensity(s.count, gamma),
                ..s.clone()
            })
            .collect();
        Dataset {
            samples,
            gamma,
            ..*self
        }
    }

    /// Keeps only the feature blocks of the given receivers (in that order).
    pub fn select_receivers(&self, receivers: &[usize]) -> Result<Dataset> {
        let width = self.n_features();
        if self.receivers == 0 || width % self.receivers != 0 {
            return Err(Error::Data(format!(
                "{width} features do not split into {} receivers",
                self.receivers
            )));
        }
        let block = width / self.receivers;
        if let Some(&bad) = receivers.iter().find(|&&r| r >= self.receivers) {
            return Err(Error::Parameter(format!(
                "receiver {bad} not present ({} receivers)",
                self.receivers
            )));
        }
        if receivers.is_empty() {
            return Err(Error::Parameter("no receivers selected".into()));
        }
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                features: receivers
                    .iter()
                    .flat_map(|&r| s.features[r * block..(r + 1) * block].iter().copied())
                    .collect(),
                ..s.clone()
            })
            .collect();
        Ok(Dataset {
            samples,
            receivers: receivers.len(),
            ..*self
        })
    }

    /// Median of the ground-truth counts (lower middle for even sizes).
    pub fn median_count(&self) -> usize {
        let mut c: Vec<usize> = self.samples.iter().map(|s| s.count).collect();
        c.sort_unstable();
        c[(c.len() - 1) / 2]
    }
}
