//! The microlens depth network.
//!
//! A from-scratch tensor engine (forward and analytic backward passes) runs
//! a small encoder / MLP-bottleneck / decoder architecture over flower-stack
//! batches. Supervision is a masked MSE: ground truth exists only at the
//! centroid pixel of each stack's output map, so the mask selects that one
//! pixel per item. Training uses Adam; everything is seeded and bitwise
//! reproducible.

mod adam;
mod layer;
mod network;
mod persist;
mod tensor;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use layer::{ConvSpec, FcSpec, Layer, LayerCache, LayerGrads, Mode, TransposedConvSpec};
pub use network::{microlens_depth_network, Initializer, Network};
pub use persist::{load_weights, network_to_records, records_to_network, save_weights};
pub use tensor::{Scalar, Tensor4};
pub use train::{
    masked_mse, masked_mse_grad, predict_sparse, train, TrainConfig, TrainOutcome,
};

use std::collections::HashMap;
use std::fmt;

use crate::hexgrid::AxialCoord;

/// Errors from network construction, execution and training.
#[derive(Debug, Clone, PartialEq)]
pub enum NetError {
    ShapeMismatch { detail: String },
    /// Masked loss over an all-zero mask is undefined.
    EmptyMask,
    /// No training stack has a matching ground-truth depth.
    NoTrainingData,
    /// A weight file does not match the target architecture.
    WeightMismatch { detail: String },
}

impl NetError {
    pub(crate) fn shape(detail: impl Into<String>) -> Self {
        NetError::ShapeMismatch { detail: detail.into() }
    }
}

impl fmt::Display for NetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetError::ShapeMismatch { detail } => write!(f, "shape mismatch: {detail}"),
            NetError::EmptyMask => write!(f, "masked loss is undefined for an all-zero mask"),
            NetError::NoTrainingData => write!(f, "no training stack has ground-truth depth"),
            NetError::WeightMismatch { detail } => write!(f, "weight file mismatch: {detail}"),
        }
    }
}

impl std::error::Error for NetError {}

/// Where a sparse depth map came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthSource {
    Predicted,
    StereoGt,
    Raytrix,
}

impl DepthSource {
    pub fn as_str(self) -> &'static str {
        match self {
            DepthSource::Predicted => "predicted",
            DepthSource::StereoGt => "stereo-gt",
            DepthSource::Raytrix => "raytrix",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "predicted" => Some(DepthSource::Predicted),
            "stereo-gt" => Some(DepthSource::StereoGt),
            "raytrix" => Some(DepthSource::Raytrix),
            _ => None,
        }
    }
}

/// One metric depth sample anchored at a microlens centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSample {
    pub coord: AxialCoord,
    /// Centroid pixel position in the plenoptic (central view) frame.
    pub position: (f64, f64),
    pub depth_m: f64,
}

/// Sparse metric depth anchored at microlens centroids, in deterministic
/// sample order.
///
/// Construction requires finite depths and unique lens coordinates.
/// Positivity is enforced where depths are consumed metrically (disparity
/// conversion, evaluation), not at construction, so raw network predictions
/// can be represented.
#[derive(Debug, Clone)]
pub struct SparseDepthMap {
    source: DepthSource,
    samples: Vec<SparseSample>,
    index: HashMap<AxialCoord, usize>,
}

impl SparseDepthMap {
    pub fn new(source: DepthSource, samples: Vec<SparseSample>) -> Self {
        let mut index = HashMap::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            assert!(s.depth_m.is_finite(), "depth samples must be finite");
            let previous = index.insert(s.coord, i);
            assert!(previous.is_none(), "duplicate lens coordinate {}", s.coord);
        }
        SparseDepthMap { source, samples, index }
    }

    pub fn source(&self) -> DepthSource {
        self.source
    }

    pub fn samples(&self) -> &[SparseSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, coord: AxialCoord) -> Option<&SparseSample> {
        self.index.get(&coord).map(|&i| &self.samples[i])
    }
}
