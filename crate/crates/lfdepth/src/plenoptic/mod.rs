//! Plenoptic image handling: debayering, microlens cropping, flower-stack
//! assembly, and the weak-texture filter.
//!
//! A *flower stack* piles the crop of a central microlens with the crops of
//! its six ring-1 neighbors: seven RGB patches stacked into 21 channels.
//! Stacks are only built when every crop lies fully inside the image;
//! otherwise the lens is discarded, which is what reduces a full lattice to
//! the usable stack count.

mod image;

pub use image::{debayer, BayerPattern, DebayerError, RawBayerImage, RgbImage};

use std::collections::HashSet;
use std::fmt;

use crate::hexgrid::{AxialCoord, MicrolensGrid, RING1_OFFSETS};
use crate::net::SparseDepthMap;

/// Default crop side length in pixels.
pub const DEFAULT_CROP_SIZE: usize = 23;
/// Microlens images per stack: the center plus its six ring-1 neighbors.
pub const LENSES_PER_STACK: usize = 7;
/// Stack channel count (seven RGB crops).
pub const STACK_CHANNELS: usize = 3 * LENSES_PER_STACK;

/// Errors from cropping, stacking and filtering.
#[derive(Debug, Clone, PartialEq)]
pub enum PlenopticError {
    /// The crop window extends past the image border.
    OutOfBounds { centroid: (f64, f64), size: usize },
    /// The requested lens is not part of the grid.
    UnknownLens(AxialCoord),
    /// Sparse depths and stacks must be keyed by the same lens set.
    MismatchedKeys(AxialCoord),
}

impl fmt::Display for PlenopticError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlenopticError::OutOfBounds { centroid, size } => write!(
                f,
                "{size}x{size} crop at centroid ({:.2}, {:.2}) exceeds the image bounds",
                centroid.0, centroid.1
            ),
            PlenopticError::UnknownLens(a) => write!(f, "lens {a} is not in the grid"),
            PlenopticError::MismatchedKeys(a) => {
                write!(f, "sparse depth at {a} has no matching flower stack")
            }
        }
    }
}

impl std::error::Error for PlenopticError {}

/// One microlens crop: planar `3 x size x size` values.
#[derive(Debug, Clone, PartialEq)]
pub struct MicrolensPatch {
    pub size: usize,
    pub data: Vec<f32>,
}

/// Crops a `size x size` window centered at the nearest-integer pixel of
/// `centroid_px`. No subpixel resampling: windows are bit-reproducible.
pub fn crop_microlens(
    img: &RgbImage,
    centroid_px: (f64, f64),
    size: usize,
) -> Result<MicrolensPatch, PlenopticError> {
    let half = (size as i64 - 1) / 2;
    let cx = centroid_px.0.round() as i64;
    let cy = centroid_px.1.round() as i64;
    let x0 = cx - half;
    let y0 = cy - half;
    if x0 < 0
        || y0 < 0
        || x0 + size as i64 > img.width() as i64
        || y0 + size as i64 > img.height() as i64
    {
        return Err(PlenopticError::OutOfBounds { centroid: centroid_px, size });
    }
    let mut data = Vec::with_capacity(3 * size * size);
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                data.push(img.get(c, (x0 as usize) + x, (y0 as usize) + y));
            }
        }
    }
    Ok(MicrolensPatch { size, data })
}

/// A stacked microlens neighborhood: 21 channels of `size x size` pixels.
///
/// Channel layout: channels 0..3 are the central crop's RGB, followed by the
/// six ring-1 neighbors in the fixed counter-clockwise-from-east order, RGB
/// each.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowerStack {
    pub center: AxialCoord,
    pub centroid_px: (f64, f64),
    pub size: usize,
    /// Planar values, length `STACK_CHANNELS * size * size`.
    pub channels: Vec<f32>,
}

impl FlowerStack {
    /// View of one crop's 3 channels (0 = center, 1..=6 = ring neighbors).
    pub fn crop(&self, lens: usize) -> &[f32] {
        let plane = self.size * self.size;
        &self.channels[lens * 3 * plane..(lens + 1) * 3 * plane]
    }
}

/// Builds the flower stack for the lens at `a`, or `None` when any of the
/// seven crops leaves the image or a ring-1 neighbor is missing from the
/// grid (the stack is then discarded).
pub fn build_flower_stack(
    img: &RgbImage,
    grid: &MicrolensGrid,
    a: AxialCoord,
    size: usize,
) -> Result<Option<FlowerStack>, PlenopticError> {
    let center_px = grid
        .centroid_of(a)
        .ok_or(PlenopticError::UnknownLens(a))?;

    let mut channels = Vec::with_capacity(STACK_CHANNELS * size * size);
    match crop_microlens(img, center_px, size) {
        Ok(patch) => channels.extend_from_slice(&patch.data),
        Err(PlenopticError::OutOfBounds { .. }) => return Ok(None),
        Err(e) => return Err(e),
    }
    for offset in RING1_OFFSETS {
        let n = AxialCoord::new(a.q + offset.q, a.r + offset.r);
        let Some(npx) = grid.centroid_of(n) else {
            return Ok(None);
        };
        match crop_microlens(img, npx, size) {
            Ok(patch) => channels.extend_from_slice(&patch.data),
            Err(PlenopticError::OutOfBounds { .. }) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    Ok(Some(FlowerStack { center: a, centroid_px: center_px, size, channels }))
}

/// Builds every surviving flower stack of the grid, in lens order.
pub fn extract_stacks(
    img: &RgbImage,
    grid: &MicrolensGrid,
    size: usize,
) -> Result<Vec<FlowerStack>, PlenopticError> {
    let mut stacks = Vec::new();
    for &(a, _) in grid.lenses() {
        if let Some(stack) = build_flower_stack(img, grid, a, size)? {
            stacks.push(stack);
        }
    }
    Ok(stacks)
}

/// A batch of flower stacks as one dense `(N, C, H, W)` tensor payload plus
/// per-item lens identity.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowerStackBatch {
    pub count: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Row-major `(n, c, h, w)` values.
    pub data: Vec<f32>,
    pub coords: Vec<AxialCoord>,
    pub centroids: Vec<(f64, f64)>,
}

impl FlowerStackBatch {
    pub fn from_stacks(stacks: &[FlowerStack]) -> Self {
        assert!(!stacks.is_empty(), "batch requires at least one stack");
        let size = stacks[0].size;
        let mut data = Vec::with_capacity(stacks.len() * STACK_CHANNELS * size * size);
        let mut coords = Vec::with_capacity(stacks.len());
        let mut centroids = Vec::with_capacity(stacks.len());
        for stack in stacks {
            assert_eq!(stack.size, size, "all stacks in a batch must share one size");
            data.extend_from_slice(&stack.channels);
            coords.push(stack.center);
            centroids.push(stack.centroid_px);
        }
        FlowerStackBatch {
            count: stacks.len(),
            channels: STACK_CHANNELS,
            height: size,
            width: size,
            data,
            coords,
            centroids,
        }
    }

    /// Values of one stack, planar `(c, h, w)`.
    pub fn item(&self, n: usize) -> &[f32] {
        let len = self.channels * self.height * self.width;
        &self.data[n * len..(n + 1) * len]
    }

    /// Rebuilds the individual stacks (the inverse of [`from_stacks`]).
    ///
    /// [`from_stacks`]: FlowerStackBatch::from_stacks
    pub fn to_stacks(&self) -> Vec<FlowerStack> {
        (0..self.count)
            .map(|i| FlowerStack {
                center: self.coords[i],
                centroid_px: self.centroids[i],
                size: self.height,
                channels: self.item(i).to_vec(),
            })
            .collect()
    }
}

/// Mean Sobel gradient magnitude over the grayscale central crop.
///
/// Grayscale is the channel mean; the 3x3 Sobel pair runs over interior
/// pixels only (no padding) and the magnitudes are averaged. Flat patches
/// score 0, and adding a constant to every pixel leaves the score unchanged.
pub fn texture_score(stack: &FlowerStack) -> f64 {
    let s = stack.size;
    let plane = s * s;
    let mut gray = vec![0.0f64; plane];
    for c in 0..3 {
        for (g, &v) in gray.iter_mut().zip(&stack.channels[c * plane..(c + 1) * plane]) {
            *g += v as f64 / 3.0;
        }
    }
    if s < 3 {
        return 0.0;
    }
    let mut sum = 0.0;
    for y in 1..s - 1 {
        for x in 1..s - 1 {
            let at = |dx: i64, dy: i64| gray[(y as i64 + dy) as usize * s + (x as i64 + dx) as usize];
            let gx = -at(-1, -1) + at(1, -1) - 2.0 * at(-1, 0) + 2.0 * at(1, 0) - at(-1, 1) + at(1, 1);
            let gy = -at(-1, -1) - 2.0 * at(0, -1) - at(1, -1) + at(-1, 1) + 2.0 * at(0, 1) + at(1, 1);
            sum += (gx * gx + gy * gy).sqrt();
        }
    }
    sum / ((s - 2) * (s - 2)) as f64
}

/// Keeps exactly the sparse samples whose stack texture score reaches
/// `threshold`. Depths and stacks must be aligned by lens coordinate.
pub fn filter_sparse_depth(
    depths: &SparseDepthMap,
    stacks: &[FlowerStack],
    threshold: f64,
) -> Result<SparseDepthMap, PlenopticError> {
    let scored: HashSet<AxialCoord> = stacks
        .iter()
        .filter(|s| texture_score(s) >= threshold)
        .map(|s| s.center)
        .collect();
    let known: HashSet<AxialCoord> = stacks.iter().map(|s| s.center).collect();
    let mut kept = Vec::new();
    for sample in depths.samples() {
        if !known.contains(&sample.coord) {
            return Err(PlenopticError::MismatchedKeys(sample.coord));
        }
        if scored.contains(&sample.coord) {
            kept.push(sample.clone());
        }
    }
    Ok(SparseDepthMap::new(depths.source(), kept))
}
