//! Parametric model of the hexagonal microlens array.
//!
//! The microlens pattern is stored in a dual coordinate system: integer
//! axial coordinates `(q, r)` index the lattice with its interlaced rows,
//! and real-valued pixel coordinates locate each centroid on the sensor.
//! Axial coordinates make neighbor-ring queries O(ring) and give every lens
//! a stable identity independent of sensor placement.

use std::collections::HashMap;
use std::fmt;

/// Lattice orientation. The default is pointy-top, which matches the
/// interlaced-row appearance of the microlens pattern; flat-top is provided
/// as a configuration switch for arrays mounted in the rotated convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Orientation {
    #[default]
    PointyTop,
    FlatTop,
}

impl Orientation {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pointy" => Some(Orientation::PointyTop),
            "flat" => Some(Orientation::FlatTop),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Orientation::PointyTop => "pointy",
            Orientation::FlatTop => "flat",
        }
    }
}

/// 2D calibration of the microlens pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCalibration {
    /// Pixel coordinates of the reference microlens centroid (axial (0, 0)).
    pub origin: (f64, f64),
    /// Center-to-center microlens spacing in pixels.
    pub pitch: f64,
    /// Lattice rotation in radians, applied about the origin.
    pub rotation: f64,
    /// Lattice extent: rows are enumerated along `r`, columns along `q`.
    pub rows: usize,
    pub cols: usize,
    /// Sensor dimensions in pixels.
    pub sensor_width: usize,
    pub sensor_height: usize,
    pub orientation: Orientation,
}

impl GridCalibration {
    /// Validates the calibration invariants.
    pub fn validate(&self) -> Result<(), HexGridError> {
        if !(self.pitch > 0.0) || !self.pitch.is_finite() {
            return Err(HexGridError::InvalidCalibration("pitch must be positive and finite"));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(HexGridError::InvalidCalibration("rows and cols must be at least 1"));
        }
        if self.sensor_width == 0 || self.sensor_height == 0 {
            return Err(HexGridError::InvalidCalibration("sensor dimensions must be at least 1"));
        }
        Ok(())
    }
}

/// Axial hex coordinates for the interlaced-row lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AxialCoord {
    pub q: i32,
    pub r: i32,
}

impl AxialCoord {
    pub const fn new(q: i32, r: i32) -> Self {
        AxialCoord { q, r }
    }
}

impl fmt::Display for AxialCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.q, self.r)
    }
}

/// The six axial neighbor offsets, counter-clockwise starting east. This
/// order fixes the flower-stack channel layout, so it must not change.
pub const RING1_OFFSETS: [AxialCoord; 6] = [
    AxialCoord::new(1, 0),
    AxialCoord::new(1, -1),
    AxialCoord::new(0, -1),
    AxialCoord::new(-1, 0),
    AxialCoord::new(-1, 1),
    AxialCoord::new(0, 1),
];

/// Which lenses of the enumerated lattice are kept by [`build_grid_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KeepPolicy {
    /// Keep lenses whose centroid lies inside the sensor rectangle.
    CentroidInside,
    /// Keep lenses whose full crop window of the given side length fits
    /// inside the sensor (window centered at the nearest-integer centroid).
    CropFits(usize),
}

/// Errors from grid construction and queries.
#[derive(Debug, Clone, PartialEq)]
pub enum HexGridError {
    InvalidCalibration(&'static str),
    /// No lens of the enumerated lattice survived the keep policy.
    EmptyGrid,
    /// The queried axial coordinate is not part of the grid.
    UnknownLens(AxialCoord),
}

impl fmt::Display for HexGridError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HexGridError::InvalidCalibration(msg) => write!(f, "invalid calibration: {msg}"),
            HexGridError::EmptyGrid => write!(f, "no microlens lies inside the sensor"),
            HexGridError::UnknownLens(a) => write!(f, "lens {a} is not in the grid"),
        }
    }
}

impl std::error::Error for HexGridError {}

/// Computes the centroid pixel position of the lens at axial coordinate `a`.
///
/// Pointy-top basis: `origin + R(rotation) * pitch * (q + r/2, r*sqrt(3)/2)`.
/// Flat-top swaps the roles of the axes so that all neighbor distances stay
/// equal to `pitch`.
pub fn centroid(calib: &GridCalibration, a: AxialCoord) -> (f64, f64) {
    let q = a.q as f64;
    let r = a.r as f64;
    let (ux, uy) = match calib.orientation {
        Orientation::PointyTop => (q + r * 0.5, r * SQRT3_OVER_2),
        Orientation::FlatTop => (q * SQRT3_OVER_2, q * 0.5 + r),
    };
    let (sin, cos) = calib.rotation.sin_cos();
    let x = calib.pitch * (cos * ux - sin * uy);
    let y = calib.pitch * (sin * ux + cos * uy);
    (calib.origin.0 + x, calib.origin.1 + y)
}

const SQRT3_OVER_2: f64 = 0.866_025_403_784_438_6;

/// The microlens grid: calibration plus the surviving lenses in
/// deterministic row-major lattice order.
#[derive(Debug, Clone)]
pub struct MicrolensGrid {
    calibration: GridCalibration,
    lenses: Vec<(AxialCoord, (f64, f64))>,
    index: HashMap<AxialCoord, usize>,
}

impl MicrolensGrid {
    pub fn calibration(&self) -> &GridCalibration {
        &self.calibration
    }

    /// Lenses in row-major lattice order.
    pub fn lenses(&self) -> &[(AxialCoord, (f64, f64))] {
        &self.lenses
    }

    pub fn len(&self) -> usize {
        self.lenses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lenses.is_empty()
    }

    pub fn contains(&self, a: AxialCoord) -> bool {
        self.index.contains_key(&a)
    }

    /// Centroid position of the lens at `a`, if present.
    pub fn centroid_of(&self, a: AxialCoord) -> Option<(f64, f64)> {
        self.index.get(&a).map(|&i| self.lenses[i].1)
    }
}

/// Builds the grid keeping lenses whose centroid is inside the sensor.
pub fn build_grid(calib: &GridCalibration) -> Result<MicrolensGrid, HexGridError> {
    build_grid_with(calib, KeepPolicy::CentroidInside)
}

/// Builds the grid with an explicit keep policy.
///
/// The lattice is enumerated row-major over `rows x cols` in the interlaced
/// offset layout: row `r` holds axial coordinates `(col - r/2, r)` (integer
/// division), so the enumerated region is roughly rectangular on the sensor.
pub fn build_grid_with(
    calib: &GridCalibration,
    policy: KeepPolicy,
) -> Result<MicrolensGrid, HexGridError> {
    calib.validate()?;
    let mut lenses = Vec::new();
    let mut index = HashMap::new();
    for row in 0..calib.rows as i32 {
        for col in 0..calib.cols as i32 {
            let a = AxialCoord::new(col - row.div_euclid(2), row);
            let c = centroid(calib, a);
            let keep = match policy {
                KeepPolicy::CentroidInside => centroid_inside(calib, c),
                KeepPolicy::CropFits(size) => {
                    crop_fits(c, size, calib.sensor_width, calib.sensor_height)
                }
            };
            if keep {
                index.insert(a, lenses.len());
                lenses.push((a, c));
            }
        }
    }
    if lenses.is_empty() {
        return Err(HexGridError::EmptyGrid);
    }
    Ok(MicrolensGrid {
        calibration: calib.clone(),
        lenses,
        index,
    })
}

fn centroid_inside(calib: &GridCalibration, c: (f64, f64)) -> bool {
    c.0 >= 0.0 && c.0 < calib.sensor_width as f64 && c.1 >= 0.0 && c.1 < calib.sensor_height as f64
}

/// True when a `size x size` window centered at the nearest-integer pixel of
/// `c` lies fully inside a `width x height` image.
pub fn crop_fits(c: (f64, f64), size: usize, width: usize, height: usize) -> bool {
    let half = (size as i64 - 1) / 2;
    let cx = c.0.round() as i64;
    let cy = c.1.round() as i64;
    cx - half >= 0
        && cy - half >= 0
        && cx - half + size as i64 - 1 < width as i64
        && cy - half + size as i64 - 1 < height as i64
}

/// Returns the axial coordinates of the `ring`-th hex ring around `a` that
/// are present in the grid, counter-clockwise starting east.
///
/// Ring 1 visits the offsets of [`RING1_OFFSETS`] in order; ring `k` walks
/// the 6k lattice sites at hex distance `k`.
pub fn ring_neighbors(
    grid: &MicrolensGrid,
    a: AxialCoord,
    ring: u32,
) -> Result<Vec<AxialCoord>, HexGridError> {
    assert!(ring >= 1, "ring must be at least 1");
    if !grid.contains(a) {
        return Err(HexGridError::UnknownLens(a));
    }
    let k = ring as i32;
    let mut out = Vec::with_capacity(6 * ring as usize);
    for side in 0..6usize {
        let corner = RING1_OFFSETS[side];
        let step = RING1_OFFSETS[(side + 2) % 6];
        for i in 0..k {
            let c = AxialCoord::new(
                a.q + corner.q * k + step.q * i,
                a.r + corner.r * k + step.r * i,
            );
            if grid.contains(c) {
                out.push(c);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_calib(rows: usize, cols: usize) -> GridCalibration {
        GridCalibration {
            origin: (100.0, 100.0),
            pitch: 23.0,
            rotation: 0.0,
            rows,
            cols,
            sensor_width: 400,
            sensor_height: 400,
            orientation: Orientation::PointyTop,
        }
    }

    #[test]
    fn centroid_identity_and_axis_steps() {
        let calib = test_calib(4, 4);
        assert_eq!(centroid(&calib, AxialCoord::new(0, 0)), (100.0, 100.0));
        let (x, y) = centroid(&calib, AxialCoord::new(1, 0));
        assert!((x - 123.0).abs() < 1e-12 && (y - 100.0).abs() < 1e-12);
        // One step along r: (pitch/2, pitch*sqrt(3)/2).
        let (x, y) = centroid(&calib, AxialCoord::new(0, 1));
        assert!((x - 111.5).abs() < 1e-12);
        assert!((y - (100.0 + 23.0 * 3.0f64.sqrt() / 2.0)).abs() < 1e-12);
        assert!((y - 119.9186).abs() < 1e-4);
    }

    #[test]
    fn centroid_rotation_equivariance() {
        // Rotating the calibration by theta rotates every centroid about the
        // origin by theta.
        let theta = 0.37;
        let mut calib = test_calib(6, 6);
        let mut rotated = calib.clone();
        rotated.rotation = theta;
        calib.rotation = 0.0;
        let (sin, cos) = theta.sin_cos();
        for q in -3..3 {
            for r in -3..3 {
                let a = AxialCoord::new(q, r);
                let (x0, y0) = centroid(&calib, a);
                let (dx, dy) = (x0 - 100.0, y0 - 100.0);
                let expect = (100.0 + cos * dx - sin * dy, 100.0 + sin * dx + cos * dy);
                let got = centroid(&rotated, a);
                assert!((got.0 - expect.0).abs() < 1e-9);
                assert!((got.1 - expect.1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn build_grid_single_lens_and_empty() {
        let mut calib = test_calib(1, 1);
        calib.origin = (200.0, 200.0);
        let grid = build_grid(&calib).unwrap();
        assert_eq!(grid.len(), 1);

        calib.origin = (5000.0, 5000.0);
        assert!(matches!(build_grid(&calib), Err(HexGridError::EmptyGrid)));
    }

    #[test]
    fn build_grid_is_deterministic() {
        let calib = test_calib(8, 8);
        let a = build_grid(&calib).unwrap();
        let b = build_grid(&calib).unwrap();
        assert_eq!(a.lenses(), b.lenses());
    }

    #[test]
    fn ring1_neighbors_have_pitch_distance_for_any_rotation() {
        for &rot in &[0.0, 0.2, -1.1] {
            for &orientation in &[Orientation::PointyTop, Orientation::FlatTop] {
                let mut calib = test_calib(9, 9);
                calib.origin = (200.0, 200.0);
                calib.rotation = rot;
                calib.orientation = orientation;
                let grid = build_grid(&calib).unwrap();
                // Pick an interior lens: all 6 neighbors present.
                let center = grid
                    .lenses()
                    .iter()
                    .map(|&(a, _)| a)
                    .find(|&a| RING1_OFFSETS.iter().all(|o| {
                        grid.contains(AxialCoord::new(a.q + o.q, a.r + o.r))
                    }))
                    .expect("interior lens");
                let neighbors = ring_neighbors(&grid, center, 1).unwrap();
                assert_eq!(neighbors.len(), 6);
                let (cx, cy) = grid.centroid_of(center).unwrap();
                for n in neighbors {
                    let (nx, ny) = grid.centroid_of(n).unwrap();
                    let d = ((nx - cx).powi(2) + (ny - cy).powi(2)).sqrt();
                    assert!((d - calib.pitch).abs() < 1e-6, "distance {d}");
                }
            }
        }
    }

    #[test]
    fn ring1_order_is_fixed() {
        let mut calib = test_calib(9, 9);
        calib.origin = (200.0, 200.0);
        let grid = build_grid(&calib).unwrap();
        let a = AxialCoord::new(2, 4); // row 4, col 4: interior
        assert!(grid.contains(a));
        let neighbors = ring_neighbors(&grid, a, 1).unwrap();
        let expect: Vec<AxialCoord> = RING1_OFFSETS
            .iter()
            .map(|o| AxialCoord::new(a.q + o.q, a.r + o.r))
            .collect();
        assert_eq!(neighbors, expect);
    }

    #[test]
    fn corner_lens_has_fewer_neighbors() {
        let calib = test_calib(3, 3);
        let grid = build_grid(&calib).unwrap();
        let corner = grid.lenses()[0].0;
        let neighbors = ring_neighbors(&grid, corner, 1).unwrap();
        assert!(neighbors.len() < 6, "got {}", neighbors.len());
    }

    #[test]
    fn ring2_has_12_coordinates_matching_brute_force() {
        let mut calib = test_calib(11, 11);
        calib.origin = (200.0, 200.0);
        let grid = build_grid(&calib).unwrap();
        let a = AxialCoord::new(3, 5);
        assert!(grid.contains(a));
        let ring2 = ring_neighbors(&grid, a, 2).unwrap();
        assert_eq!(ring2.len(), 12);
        // Brute-force oracle: hex distance computed via cube coordinates.
        let hex_dist = |b: AxialCoord| {
            let dq = (b.q - a.q).abs();
            let dr = (b.r - a.r).abs();
            let ds = (b.q + b.r - a.q - a.r).abs();
            (dq + dr + ds) / 2
        };
        let mut brute: Vec<AxialCoord> = grid
            .lenses()
            .iter()
            .map(|&(c, _)| c)
            .filter(|&c| hex_dist(c) == 2)
            .collect();
        let mut got = ring2.clone();
        brute.sort();
        got.sort();
        assert_eq!(got, brute);
    }

    #[test]
    fn ring1_symmetry_for_interior_pairs() {
        let mut calib = test_calib(9, 9);
        calib.origin = (200.0, 200.0);
        let grid = build_grid(&calib).unwrap();
        for &(a, _) in grid.lenses() {
            for b in ring_neighbors(&grid, a, 1).unwrap() {
                let back = ring_neighbors(&grid, b, 1).unwrap();
                assert!(back.contains(&a), "{b} does not list {a}");
            }
        }
    }

    #[test]
    fn unknown_lens_is_rejected() {
        let calib = test_calib(3, 3);
        let grid = build_grid(&calib).unwrap();
        let err = ring_neighbors(&grid, AxialCoord::new(99, 99), 1).unwrap_err();
        assert_eq!(err, HexGridError::UnknownLens(AxialCoord::new(99, 99)));
    }

    #[test]
    fn full_sensor_lattice_count() {
        // A 2048x2048 sensor at pitch 23.42 px holds 101 interlaced rows of
        // 88/87 lenses: 8,837 microlenses total.
        let calib = GridCalibration {
            origin: (5.0, -5.0),
            pitch: 23.42,
            rotation: 0.0,
            rows: 102,
            cols: 88,
            sensor_width: 2048,
            sensor_height: 2048,
            orientation: Orientation::PointyTop,
        };
        let grid = build_grid(&calib).unwrap();
        assert_eq!(grid.len(), 8_837);
    }

    #[test]
    fn crop_fits_boundary_cases() {
        assert!(crop_fits((11.0, 11.0), 23, 23, 23));
        assert!(!crop_fits((10.4, 11.0), 23, 23, 23));
        assert!(!crop_fits((11.0, 11.6), 23, 23, 23));
    }
}
