//! Single-shot dense metric depth from focused plenoptic cameras.
//!
//! A focused plenoptic camera captures the scene through a hexagonal
//! microlens array, so a single exposure already contains calibrated
//! multi-view information at microlens scale. This crate turns one such
//! capture into a dense metric depth map:
//!
//! 1. [`hexgrid`] – parametric model of the microlens lattice: centroid
//!    computation, axial coordinates for the interlaced rows, ring queries.
//! 2. [`plenoptic`] – raw image handling: debayering, microlens cropping,
//!    flower-stack assembly and the weak-texture filter.
//! 3. [`net`] – the microlens depth network: a small convolutional
//!    encoder/MLP/decoder trained with a masked MSE loss that regresses one
//!    metric depth value per flower stack.
//! 4. [`align`] – robust scale/offset alignment (Theil-Sen, RANSAC, Huber,
//!    SGD-Huber) of an externally produced dense relative-disparity map to
//!    the sparse metric depths, and fusion into dense metric depth.
//! 5. [`stereo`] – ground-truth generation from a calibrated stereo pair:
//!    undistortion, rectification, semi-global matching, triangulation and
//!    reprojection onto the plenoptic camera pose.
//! 6. [`metrics`] – the depth evaluation suite (MSE, RMSE, MARE, MSRE,
//!    delta accuracies, bad-pixel ratio).
//! 7. [`synth`] – synthetic plenoptic + stereo scenes with closed-form
//!    ground truth, used to verify every stage without camera hardware.
//! 8. [`cli`] / [`io`] – the command surface, pipeline configuration and
//!    the on-disk formats (PGM/PPM/PFM, stack archives, weight files).
//!
//! The `lfdepth` binary exposes one subcommand per pipeline stage; see the
//! README for a synthetic end-to-end walkthrough.

pub mod align;
pub mod cli;
pub mod hexgrid;
pub mod io;
pub mod metrics;
pub mod net;
pub mod plenoptic;
pub mod stereo;
pub mod synth;

pub use align::{DepthMap, DisparityMap, LinearScaleModel};
pub use hexgrid::{AxialCoord, GridCalibration, MicrolensGrid};
pub use net::SparseDepthMap;
pub use plenoptic::{FlowerStack, FlowerStackBatch, RawBayerImage, RgbImage};
pub use stereo::{CameraIntrinsics, StereoRig};
