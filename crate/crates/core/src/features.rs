//! Binary spike-feature vectors from pooled spikes, and per-class spike
//! attribution statistics.

use ndarray::Array2;

use crate::encoder::SpikeTensor;
use crate::error::{Error, Result};
use crate::snncore::{run_inference, ConvLayerState, PoolConfig};

/// Flattened binary pooled-spike vector with its class label.
///
/// Flattening is map-major then row-major: bit index
/// `map * (Hp * Wp) + row * Wp + col`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVector {
    pub bits: Vec<u8>,
    pub label: u8,
}

impl FeatureVector {
    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    /// Spike count per map, given the per-map cell count.
    pub fn map_popcounts(&self, cells_per_map: usize) -> Vec<u64> {
        self.bits
            .chunks(cells_per_map)
            .map(|chunk| chunk.iter().filter(|&&b| b != 0).count() as u64)
            .collect()
    }
}

/// Run one encoded image through the fixed-weight conv/pool pass and flatten
/// the time-summed pooled spikes into a binary feature vector.
///
/// Requires `pool.accumulate == false`: the fire-once pooling rule is what
/// makes the time-summed tensor binary.
pub fn extract_feature_vector(
    input: &SpikeTensor,
    label: u8,
    state: &ConvLayerState,
    pool: &PoolConfig,
) -> Result<FeatureVector> {
    if pool.accumulate {
        return Err(Error::ConfigInvalid(
            "binary feature vectors need pool accumulate off (fire-once pooling)".into(),
        ));
    }
    let pooled = run_inference(state, input, pool)?;
    Ok(flatten_pooled(&pooled, label))
}

/// Sum a pooled spike tensor over time and flatten map-major row-major.
pub fn flatten_pooled(pooled: &SpikeTensor, label: u8) -> FeatureVector {
    let summed = pooled.time_summed();
    debug_assert!(summed.iter().all(|&s| s <= 1), "pooled spikes must be at most one per neuron");
    let bits = summed.iter().map(|&s| (s > 0) as u8).collect();
    FeatureVector { bits, label }
}

/// `maps x num_classes` matrix of pooled-spike counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSpikeMatrix {
    pub counts: Array2<u64>,
}

impl ClassSpikeMatrix {
    pub fn new(maps: usize, num_classes: usize) -> Self {
        ClassSpikeMatrix { counts: Array2::zeros((maps, num_classes)) }
    }

    /// Add one image's per-map spike counts to its class column.
    pub fn record(&mut self, map_counts: &[u64], class: usize) -> Result<()> {
        if map_counts.len() != self.counts.dim().0 {
            return Err(Error::LengthMismatch {
                left: map_counts.len(),
                right: self.counts.dim().0,
            });
        }
        if class >= self.counts.dim().1 {
            return Err(Error::LabelOutOfRange { label: class, num_classes: self.counts.dim().1 });
        }
        for (m, &c) in map_counts.iter().enumerate() {
            self.counts[[m, class]] += c;
        }
        Ok(())
    }

    /// Merge a partial tally produced by another worker.
    pub fn merge(&mut self, other: &ClassSpikeMatrix) -> Result<()> {
        if self.counts.dim() != other.counts.dim() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.counts.dim(),
                other.counts.dim()
            )));
        }
        self.counts += &other.counts;
        Ok(())
    }

    /// For each map, the class that drove the most spikes (ties: lowest
    /// class), or none for silent maps.
    pub fn dominant_class_per_map(&self) -> Vec<Option<usize>> {
        self.counts
            .rows()
            .into_iter()
            .map(|row| {
                let (mut best, mut best_count) = (None, 0u64);
                for (c, &n) in row.iter().enumerate() {
                    if n > best_count {
                        best = Some(c);
                        best_count = n;
                    }
                }
                best
            })
            .collect()
    }

    pub fn total_for_class(&self, class: usize) -> u64 {
        self.counts.column(class).sum()
    }

    /// CSV with one row per map: `map,count_class0,...,count_classN`.
    pub fn to_csv(&self) -> String {
        let (maps, classes) = self.counts.dim();
        let mut out = String::from("map");
        for c in 0..classes {
            out.push_str(&format!(",class_{c}"));
        }
        out.push('\n');
        for m in 0..maps {
            out.push_str(&m.to_string());
            for c in 0..classes {
                out.push_str(&format!(",{}", self.counts[[m, c]]));
            }
            out.push('\n');
        }
        out
    }
}

/// Tally pooled spikes per map per class over a set of feature vectors.
pub fn spikes_per_map_per_class(
    features: &[FeatureVector],
    maps: usize,
    cells_per_map: usize,
    num_classes: usize,
) -> Result<ClassSpikeMatrix> {
    let mut matrix = ClassSpikeMatrix::new(maps, num_classes);
    for f in features {
        if f.bits.len() != maps * cells_per_map {
            return Err(Error::LengthMismatch {
                left: f.bits.len(),
                right: maps * cells_per_map,
            });
        }
        matrix.record(&f.map_popcounts(cells_per_map), f.label as usize)?;
    }
    Ok(matrix)
}
