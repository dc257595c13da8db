//! Raw Bayer frames and normalized RGB images.

use std::fmt;

/// Bayer color-filter layouts, named by the 2x2 tile starting at (0, 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BayerPattern {
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

impl BayerPattern {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RGGB" => Some(BayerPattern::Rggb),
            "BGGR" => Some(BayerPattern::Bggr),
            "GRBG" => Some(BayerPattern::Grbg),
            "GBRG" => Some(BayerPattern::Gbrg),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BayerPattern::Rggb => "RGGB",
            BayerPattern::Bggr => "BGGR",
            BayerPattern::Grbg => "GRBG",
            BayerPattern::Gbrg => "GBRG",
        }
    }

    /// Color channel (0=R, 1=G, 2=B) sampled at pixel (x, y).
    #[inline]
    fn channel_at(self, x: usize, y: usize) -> usize {
        const R: usize = 0;
        const G: usize = 1;
        const B: usize = 2;
        let tile = match self {
            BayerPattern::Rggb => [[R, G], [G, B]],
            BayerPattern::Bggr => [[B, G], [G, R]],
            BayerPattern::Grbg => [[G, R], [B, G]],
            BayerPattern::Gbrg => [[G, B], [R, G]],
        };
        tile[y % 2][x % 2]
    }
}

/// A raw 16-bit Bayer mosaic straight off the sensor.
#[derive(Debug, Clone)]
pub struct RawBayerImage {
    pub width: usize,
    pub height: usize,
    pub pattern: BayerPattern,
    /// Row-major samples, length `width * height`.
    pub samples: Vec<u16>,
}

impl RawBayerImage {
    pub fn new(width: usize, height: usize, pattern: BayerPattern, samples: Vec<u16>) -> Self {
        assert_eq!(samples.len(), width * height, "sample count must match dimensions");
        RawBayerImage { width, height, pattern, samples }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f64 {
        self.samples[y * self.width + x] as f64
    }
}

/// A 3-channel image with values normalized to [0, 1], stored planar
/// (channel-major, then row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        RgbImage { width, height, data: vec![0.0; 3 * width * height] }
    }

    /// Builds from planar data, validating the [0, 1] range invariant.
    pub fn from_planar(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), 3 * width * height, "data length must be 3*w*h");
        assert!(
            data.iter().all(|v| (0.0..=1.0).contains(v)),
            "RGB values must lie in [0, 1]"
        );
        RgbImage { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, channel: usize, x: usize, y: usize) -> f32 {
        self.data[(channel * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, x: usize, y: usize, value: f32) {
        self.data[(channel * self.height + y) * self.width + x] = value;
    }

    /// Planar channel slice.
    pub fn channel(&self, channel: usize) -> &[f32] {
        &self.data[channel * self.width * self.height..(channel + 1) * self.width * self.height]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Luma as the plain channel mean, row-major.
    pub fn to_luma(&self) -> Vec<f32> {
        let n = self.width * self.height;
        let mut luma = vec![0.0f32; n];
        for c in 0..3 {
            for (l, &v) in luma.iter_mut().zip(self.channel(c)) {
                *l += v / 3.0;
            }
        }
        luma
    }

    /// Quantizes to interleaved 8-bit RGB for PPM output.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.width * self.height * 3];
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..3 {
                    out[(y * self.width + x) * 3 + c] =
                        (self.get(c, x, y) * 255.0).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        out
    }
}

/// Errors from raw-image processing.
#[derive(Debug, Clone, PartialEq)]
pub enum DebayerError {
    /// Demosaicing requires even dimensions so the 2x2 tile pattern is whole.
    OddDimensions { width: usize, height: usize },
}

impl fmt::Display for DebayerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DebayerError::OddDimensions { width, height } => {
                write!(f, "debayer requires even dimensions, got {width}x{height}")
            }
        }
    }
}

impl std::error::Error for DebayerError {}

/// Bilinear demosaicing of a raw Bayer frame into a normalized RGB image.
///
/// Measured samples are kept at their sites; missing channels are the mean
/// of the nearest measured neighbors (cross for green, axis pairs at green
/// sites, diagonals for the opposite color). Borders replicate.
pub fn debayer(raw: &RawBayerImage) -> Result<RgbImage, DebayerError> {
    if raw.width % 2 != 0 || raw.height % 2 != 0 {
        return Err(DebayerError::OddDimensions { width: raw.width, height: raw.height });
    }
    let (w, h) = (raw.width, raw.height);
    let clamp_at = |x: i64, y: i64| -> f64 {
        let cx = x.clamp(0, w as i64 - 1) as usize;
        let cy = y.clamp(0, h as i64 - 1) as usize;
        raw.at(cx, cy)
    };
    let mut img = RgbImage::zeros(w, h);
    let scale = 1.0 / 65535.0;
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as i64, y as i64);
            let v = raw.at(x, y);
            let cross =
                (clamp_at(xi - 1, yi) + clamp_at(xi + 1, yi) + clamp_at(xi, yi - 1) + clamp_at(xi, yi + 1)) / 4.0;
            let diag = (clamp_at(xi - 1, yi - 1)
                + clamp_at(xi + 1, yi - 1)
                + clamp_at(xi - 1, yi + 1)
                + clamp_at(xi + 1, yi + 1))
                / 4.0;
            let horiz = (clamp_at(xi - 1, yi) + clamp_at(xi + 1, yi)) / 2.0;
            let vert = (clamp_at(xi, yi - 1) + clamp_at(xi, yi + 1)) / 2.0;

            let (r, g, b) = match raw.pattern.channel_at(x, y) {
                0 => (v, cross, diag),
                2 => (diag, cross, v),
                _ => {
                    // Green site: the horizontal neighbors carry whichever of
                    // R/B shares this row.
                    if raw.pattern.channel_at(x + 1, y) == 0 {
                        (horiz, v, vert)
                    } else {
                        (vert, v, horiz)
                    }
                }
            };
            img.set(0, x, y, (r * scale) as f32);
            img.set(1, x, y, (g * scale) as f32);
            img.set(2, x, y, (b * scale) as f32);
        }
    }
    Ok(img)
}
