//! Synthetic plenoptic and stereo scenes with closed-form ground truth.
//!
//! Scenes are stacks of textured fronto-parallel planes. The same
//! world-anchored procedural texture feeds every camera, so stereo and
//! microlens correspondences are geometrically exact:
//!
//! - each microlens renders the scene through its own pinhole at the lens
//!   position (z = 0 plane), so adjacent crops of a plane at depth `z` are
//!   shifted by `baseline * focal_px / z` pixels;
//! - the stereo pair renders through two rectified pinholes separated by
//!   the rig baseline, so a plane's ideal disparity is `f * B / z`;
//! - the central view is orthographic with the same pixel-to-world scale as
//!   the lens lattice, so dense maps align with centroid positions exactly.

use crate::align::{DepthMap, DisparityFrame, DisparityMap};
use crate::hexgrid::MicrolensGrid;
use crate::net::{DepthSource, SparseDepthMap, SparseSample};
use crate::plenoptic::{BayerPattern, RawBayerImage, RgbImage};
use crate::stereo::StereoRig;

/// One textured fronto-parallel plane.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSpec {
    pub depth_m: f64,
    pub texture_seed: u64,
    /// World-space extent `(x0, x1, y0, y1)` in meters; `None` covers the
    /// whole plane.
    pub extent: Option<(f64, f64, f64, f64)>,
    /// Texture contrast in [0, 1]; 0 renders a flat mid-gray plane.
    pub contrast: f64,
}

impl PlaneSpec {
    pub fn full(depth_m: f64, texture_seed: u64) -> Self {
        PlaneSpec { depth_m, texture_seed, extent: None, contrast: 1.0 }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match self.extent {
            None => true,
            Some((x0, x1, y0, y1)) => x >= x0 && x < x1 && y >= y0 && y < y1,
        }
    }
}

/// Orthographic world/sensor mapping of the plenoptic central view: pixel
/// `p` corresponds to the world column `(p - origin) * meters_per_px`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentralView {
    pub origin_px: (f64, f64),
    pub meters_per_px: f64,
}

impl CentralView {
    pub fn world_of(&self, px: f64, py: f64) -> (f64, f64) {
        (
            (px - self.origin_px.0) * self.meters_per_px,
            (py - self.origin_px.1) * self.meters_per_px,
        )
    }
}

/// A synthetic scene plus the projection parameters shared by its cameras.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    /// Depth-ordered resolution happens per ray: the nearest covering plane
    /// wins.
    pub planes: Vec<PlaneSpec>,
    pub view: CentralView,
    /// Focal length of each microlens pinhole, in pixels.
    pub microlens_focal_px: f64,
    /// Base texture frequency in cycles per meter.
    pub noise_frequency: f64,
}

impl SyntheticScene {
    pub fn validate(&self) {
        assert!(!self.planes.is_empty(), "scene needs at least one plane");
        assert!(self.planes.iter().all(|p| p.depth_m > 0.0), "plane depths must be positive");
        assert!(self.view.meters_per_px > 0.0);
        assert!(self.microlens_focal_px > 0.0);
    }

    /// Nearest plane hit of the ray from `(ox, oy, 0)` with direction
    /// `(dx, dy, 1)`; returns depth and color.
    fn trace(&self, ox: f64, oy: f64, dx: f64, dy: f64) -> Option<(f64, [f32; 3])> {
        let mut best: Option<(f64, &PlaneSpec, f64, f64)> = None;
        for plane in &self.planes {
            let z = plane.depth_m;
            let x = ox + dx * z;
            let y = oy + dy * z;
            if plane.contains(x, y) && best.map_or(true, |(bz, _, _, _)| z < bz) {
                best = Some((z, plane, x, y));
            }
        }
        best.map(|(z, plane, x, y)| (z, self.shade(plane, x, y)))
    }

    /// Depth along the straight-down ray at world `(x, y)`.
    fn depth_at(&self, x: f64, y: f64) -> Option<f64> {
        self.planes
            .iter()
            .filter(|p| p.contains(x, y))
            .map(|p| p.depth_m)
            .fold(None, |acc, z| Some(acc.map_or(z, |a: f64| a.min(z))))
    }

    fn shade(&self, plane: &PlaneSpec, x: f64, y: f64) -> [f32; 3] {
        let mut rgb = [0.0f32; 3];
        for (c, v) in rgb.iter_mut().enumerate() {
            let t = fractal_noise(
                plane.texture_seed ^ (c as u64 + 1).wrapping_mul(0xA24B_1F3C_9D57_E681),
                x * self.noise_frequency,
                y * self.noise_frequency,
            );
            *v = (0.5 + (t - 0.5) * plane.contrast).clamp(0.0, 1.0) as f32;
        }
        rgb
    }
}

/// SplitMix64-style lattice hash to [0, 1).
fn hash2(seed: u64, ix: i64, iy: i64) -> f64 {
    let mut h = seed
        .wrapping_add((ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F));
    h ^= h >> 30;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= h >> 31;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smoothstep-interpolated value noise.
fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let sx = fx * fx * (3.0 - 2.0 * fx);
    let sy = fy * fy * (3.0 - 2.0 * fy);
    let (ix, iy) = (x0 as i64, y0 as i64);
    let v00 = hash2(seed, ix, iy);
    let v10 = hash2(seed, ix + 1, iy);
    let v01 = hash2(seed, ix, iy + 1);
    let v11 = hash2(seed, ix + 1, iy + 1);
    let a = v00 + (v10 - v00) * sx;
    let b = v01 + (v11 - v01) * sx;
    a + (b - a) * sy
}

/// Two-octave value noise in [0, 1].
fn fractal_noise(seed: u64, x: f64, y: f64) -> f64 {
    (value_noise(seed, x, y) * 2.0 / 3.0) + (value_noise(seed ^ 0x51ED, x * 2.0, y * 2.0) / 3.0)
}

fn quantize(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16
}

/// Mosaics a per-pixel RGB sampler into a raw Bayer frame.
fn mosaic<F: FnMut(usize, usize) -> [f32; 3]>(
    width: usize,
    height: usize,
    pattern: BayerPattern,
    mut sample: F,
) -> RawBayerImage {
    let mut samples = vec![0u16; width * height];
    for y in 0..height {
        for x in 0..width {
            let rgb = sample(x, y);
            let channel = bayer_channel(pattern, x, y);
            samples[y * width + x] = quantize(rgb[channel]);
        }
    }
    RawBayerImage::new(width, height, pattern, samples)
}

fn bayer_channel(pattern: BayerPattern, x: usize, y: usize) -> usize {
    const R: usize = 0;
    const G: usize = 1;
    const B: usize = 2;
    let tile = match pattern {
        BayerPattern::Rggb => [[R, G], [G, B]],
        BayerPattern::Bggr => [[B, G], [G, R]],
        BayerPattern::Grbg => [[G, R], [B, G]],
        BayerPattern::Gbrg => [[G, B], [R, G]],
    };
    tile[y % 2][x % 2]
}

/// Renders the plenoptic sensor image and the exact per-lens depth map.
///
/// Every sensor pixel is assigned to its nearest microlens and rendered
/// through that lens's pinhole at the lens world position; the exact depth
/// of each lens's optical-axis ray becomes the sparse ground truth.
pub fn render_plenoptic(
    scene: &SyntheticScene,
    grid: &MicrolensGrid,
    pattern: BayerPattern,
) -> (RawBayerImage, SparseDepthMap) {
    scene.validate();
    let calib = grid.calibration();
    let (w, h) = (calib.sensor_width, calib.sensor_height);

    // Nearest-lens assignment by bounded splatting around each centroid.
    let radius = calib.pitch.ceil() as i64 + 1;
    let mut owner = vec![usize::MAX; w * h];
    let mut best_d2 = vec![f64::INFINITY; w * h];
    for (li, &(_, (cx, cy))) in grid.lenses().iter().enumerate() {
        let x0 = ((cx.round() as i64) - radius).max(0);
        let x1 = ((cx.round() as i64) + radius + 1).min(w as i64);
        let y0 = ((cy.round() as i64) - radius).max(0);
        let y1 = ((cy.round() as i64) + radius + 1).min(h as i64);
        for y in y0..y1 {
            for x in x0..x1 {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let i = y as usize * w + x as usize;
                if d2 < best_d2[i] {
                    best_d2[i] = d2;
                    owner[i] = li;
                }
            }
        }
    }

    let f = scene.microlens_focal_px;
    let raw = mosaic(w, h, pattern, |x, y| {
        let li = owner[y * w + x];
        if li == usize::MAX {
            return [0.0; 3];
        }
        let (_, (cx, cy)) = grid.lenses()[li];
        let (wx, wy) = scene.view.world_of(cx, cy);
        let dx = (x as f64 - cx) / f;
        let dy = (y as f64 - cy) / f;
        scene.trace(wx, wy, dx, dy).map_or([0.0; 3], |(_, rgb)| rgb)
    });

    let mut samples = Vec::with_capacity(grid.len());
    for &(coord, (cx, cy)) in grid.lenses() {
        let (wx, wy) = scene.view.world_of(cx, cy);
        if let Some(z) = scene.depth_at(wx, wy) {
            samples.push(SparseSample { coord, position: (cx, cy), depth_m: z });
        }
    }
    (raw, SparseDepthMap::new(DepthSource::StereoGt, samples))
}

/// Renders a rectified stereo pair (left camera at the world origin, right
/// offset by the rig baseline along +x) plus the exact left depth map.
pub fn render_stereo(
    scene: &SyntheticScene,
    rig: &StereoRig,
    width: usize,
    height: usize,
    pattern: BayerPattern,
) -> (RawBayerImage, RawBayerImage, DepthMap) {
    scene.validate();
    let f = rig.rectified.focal_px;
    let (cx, cy) = (rig.rectified.cx, rig.rectified.cy);
    let baseline = rig.rectified.baseline_m;

    let left = mosaic(width, height, pattern, |x, y| {
        let dx = (x as f64 - cx) / f;
        let dy = (y as f64 - cy) / f;
        scene.trace(0.0, 0.0, dx, dy).map_or([0.0; 3], |(_, rgb)| rgb)
    });
    let right = mosaic(width, height, pattern, |x, y| {
        let dx = (x as f64 - cx) / f;
        let dy = (y as f64 - cy) / f;
        scene.trace(baseline, 0.0, dx, dy).map_or([0.0; 3], |(_, rgb)| rgb)
    });

    let mut depth = DepthMap::new_invalid(width, height);
    for y in 0..height {
        for x in 0..width {
            let dx = (x as f64 - cx) / f;
            let dy = (y as f64 - cy) / f;
            if let Some((z, _)) = scene.trace(0.0, 0.0, dx, dy) {
                depth.set(x, y, z);
            }
        }
    }
    (left, right, depth)
}

/// The exact dense depth of the central (orthographic) view.
pub fn exact_central_depth(scene: &SyntheticScene, width: usize, height: usize) -> DepthMap {
    scene.validate();
    let mut depth = DepthMap::new_invalid(width, height);
    for y in 0..height {
        for x in 0..width {
            let (wx, wy) = scene.view.world_of(x as f64, y as f64);
            if let Some(z) = scene.depth_at(wx, wy) {
                depth.set(x, y, z);
            }
        }
    }
    depth
}

/// A dense relative-disparity map whose correct alignment is exactly
/// `(m_star, b_star)`: per pixel `x = (f*B/z - b_star) / m_star`.
pub fn render_relative_disparity(
    scene: &SyntheticScene,
    m_star: f64,
    b_star: f64,
    rig: &StereoRig,
    width: usize,
    height: usize,
) -> DisparityMap {
    assert!(m_star != 0.0, "m_star must be nonzero");
    scene.validate();
    let fb = rig.rectified.focal_px * rig.rectified.baseline_m;
    let mut out = DisparityMap::new_invalid(width, height, DisparityFrame::Relative);
    for y in 0..height {
        for x in 0..width {
            let (wx, wy) = scene.view.world_of(x as f64, y as f64);
            if let Some(z) = scene.depth_at(wx, wy) {
                out.set(x, y, (fb / z - b_star) / m_star);
            }
        }
    }
    out
}

/// Renders the plenoptic image as RGB (identical geometry to
/// [`render_plenoptic`] before mosaicking); convenient for tests that want
/// to bypass debayering noise.
pub fn render_plenoptic_rgb(scene: &SyntheticScene, grid: &MicrolensGrid) -> RgbImage {
    scene.validate();
    let calib = grid.calibration();
    let (w, h) = (calib.sensor_width, calib.sensor_height);
    let radius = calib.pitch.ceil() as i64 + 1;
    let mut owner = vec![usize::MAX; w * h];
    let mut best_d2 = vec![f64::INFINITY; w * h];
    for (li, &(_, (cx, cy))) in grid.lenses().iter().enumerate() {
        let x0 = ((cx.round() as i64) - radius).max(0);
        let x1 = ((cx.round() as i64) + radius + 1).min(w as i64);
        let y0 = ((cy.round() as i64) - radius).max(0);
        let y1 = ((cy.round() as i64) + radius + 1).min(h as i64);
        for y in y0..y1 {
            for x in x0..x1 {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let i = y as usize * w + x as usize;
                if d2 < best_d2[i] {
                    best_d2[i] = d2;
                    owner[i] = li;
                }
            }
        }
    }
    let f = scene.microlens_focal_px;
    let mut img = RgbImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let li = owner[y * w + x];
            if li == usize::MAX {
                continue;
            }
            let (_, (cx, cy)) = grid.lenses()[li];
            let (wx, wy) = scene.view.world_of(cx, cy);
            let dx = (x as f64 - cx) / f;
            let dy = (y as f64 - cy) / f;
            if let Some((_, rgb)) = scene.trace(wx, wy, dx, dy) {
                for (c, v) in rgb.into_iter().enumerate() {
                    img.set(c, x, y, v);
                }
            }
        }
    }
    img
}
