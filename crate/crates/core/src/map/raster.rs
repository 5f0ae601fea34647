use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Square grayscale top-view map of a scene.
///
/// Row 0 is the northern edge (largest y); column 0 the western edge.
#[derive(Debug, Clone, PartialEq)]
pub struct MapRaster {
    size: usize,
    pixels: Vec<f64>,
    meters_per_pixel: f64,
    center: [f64; 2],
}

impl MapRaster {
    pub fn new(size: usize, pixels: Vec<f64>, meters_per_pixel: f64, center: [f64; 2]) -> Result<Self> {
        if pixels.len() != size * size {
            return Err(Error::Shape(format!(
                "{size}x{size} raster needs {} pixels, got {}",
                size * size,
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("raster intensities must lie in [0, 1]".into()));
        }
        if !(meters_per_pixel > 0.0) || !center.iter().all(|c| c.is_finite()) {
            return Err(Error::Config("raster scale must be positive and center finite".into()));
        }
        Ok(MapRaster {
            size,
            pixels,
            meters_per_pixel,
            center,
        })
    }

    pub fn blank(size: usize, meters_per_pixel: f64, center: [f64; 2]) -> Self {
        MapRaster {
            size,
            pixels: vec![0.0; size * size],
            meters_per_pixel,
            center,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn meters_per_pixel(&self) -> f64 {
        self.meters_per_pixel
    }

    pub fn center(&self) -> [f64; 2] {
        self.center
    }

    /// Half the side length in meters.
    pub fn half_extent(&self) -> f64 {
        self.size as f64 * self.meters_per_pixel / 2.0
    }

    pub fn pixel(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.size + col]
    }

    /// World coordinates of a pixel center.
    pub fn pixel_center(&self, row: usize, col: usize) -> [f64; 2] {
        let half = self.size as f64 / 2.0;
        [
            self.center[0] + (col as f64 + 0.5 - half) * self.meters_per_pixel,
            self.center[1] + (half - row as f64 - 0.5) * self.meters_per_pixel,
        ]
    }

    /// Sets every pixel within `radius` meters of `point` to `value` (max-blended).
    pub fn stamp_disk(&mut self, point: [f64; 2], radius: f64, value: f64) {
        let value = value.clamp(0.0, 1.0);
        let half = self.size as f64 / 2.0;
        let mpp = self.meters_per_pixel;
        let col_of = |x: f64| (x - self.center[0]) / mpp + half - 0.5;
        let row_of = |y: f64| half - (y - self.center[1]) / mpp - 0.5;
        let span = |a: f64, b: f64| -> Option<(usize, usize)> {
            let lo = a.min(b).floor().max(0.0);
            let hi = a.max(b).ceil().min(self.size as f64 - 1.0);
            (lo <= hi).then_some((lo as usize, hi as usize))
        };
        let Some((c0, c1)) = span(col_of(point[0] - radius), col_of(point[0] + radius)) else {
            return;
        };
        let Some((r0, r1)) = span(row_of(point[1] + radius), row_of(point[1] - radius)) else {
            return;
        };
        for row in r0..=r1 {
            for col in c0..=c1 {
                let c = self.pixel_center(row, col);
                let d2 = (c[0] - point[0]).powi(2) + (c[1] - point[1]).powi(2);
                if d2 <= radius * radius {
                    let p = &mut self.pixels[row * self.size + col];
                    *p = p.max(value);
                }
            }
        }
    }

    /// Rounds intensities to the 8-bit grid used on disk.
    pub fn quantize(&mut self) {
        for p in &mut self.pixels {
            *p = (*p * 255.0).round() / 255.0;
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|p| (p * 255.0).round() as u8).collect()
    }

    /// Writes `<path>` as binary PGM and `<path>.meta` next to it.
    ///
    /// Intensities are quantized to 1/255, so only rasters built from
    /// 8-bit values survive a round trip unchanged.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        write!(f, "P5\n{} {}\n255\n", self.size, self.size)?;
        f.write_all(&self.to_bytes())?;
        fs::write(
            meta_path(path),
            format!("{}\n{}\n{}\n", self.meters_per_pixel, self.center[0], self.center[1]),
        )?;
        Ok(())
    }
}

/// Sidecar metadata path: `maps/s1.pgm` -> `maps/s1.meta`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Reads the next whitespace-delimited PGM header token, skipping comments.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

fn parse_pgm(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let mut pos = 0;
    if header_token(bytes, &mut pos) != Some(b"P5".as_slice()) {
        return Err(format_err(path, "missing P5 magic"));
    }
    let mut number = |what: &str| -> Result<usize> {
        header_token(bytes, &mut pos)
            .and_then(|t| std::str::from_utf8(t).ok())
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(path, format!("bad {what}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("max value")?;
    if maxval != 255 {
        return Err(format_err(path, format!("max value {maxval}, expected 255")));
    }
    // exactly one whitespace byte separates the header from the raster
    let data = &bytes[(pos + 1).min(bytes.len())..];
    if data.len() != width * height {
        return Err(format_err(
            path,
            format!("expected {} raster bytes, found {}", width * height, data.len()),
        ));
    }
    Ok((width, height, data.iter().map(|&b| f64::from(b) / 255.0).collect()))
}

fn parse_meta(path: &Path) -> Result<(f64, [f64; 2])> {
    let meta = meta_path(path);
    let err = |message: String| Error::Metadata {
        path: meta.clone(),
        message,
    };
    let text = fs::read_to_string(&meta).map_err(|e| err(e.to_string()))?;
    let values: Vec<f64> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .take(3)
        .map(|l| l.trim().parse::<f64>().map_err(|e| err(format!("{l:?}: {e}"))))
        .collect::<Result<_>>()?;
    if values.len() != 3 {
        return Err(err(format!("expected 3 lines, found {}", values.len())));
    }
    if !(values[0] > 0.0) {
        return Err(err("meters-per-pixel must be positive".into()));
    }
    Ok((values[0], [values[1], values[2]]))
}

/// Loads a square P5 raster and its `.meta` sidecar.
pub fn load_raster(path: &Path) -> Result<MapRaster> {
    let bytes = fs::read(path)?;
    let (width, height, pixels) = parse_pgm(path, &bytes)?;
    if width != height {
        return Err(format_err(path, format!("raster must be square, got {width}x{height}")));
    }
    let (mpp, center) = parse_meta(path)?;
    MapRaster::new(width, pixels, mpp, center)
}
