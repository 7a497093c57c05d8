//! Bilinear sampling of multi-channel grids.
//!
//! Pixel convention, shared by texture and feature sampling: integer
//! coordinates `(x, y)` sit on texel centers, `x` indexes columns, `y` rows,
//! origin at the top-left texel. Coordinates are clamped to
//! `[0, w−1] × [0, h−1]`; the clamped direction has zero gradient.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

const RAW_MAGIC: &[u8; 4] = b"FWGD";
const RAW_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleCoord {
    pub x: f64,
    pub y: f64,
}

impl SampleCoord {
    pub const fn new(x: f64, y: f64) -> Self {
        SampleCoord { x, y }
    }
}

/// Interpolation footprint of one coordinate along one axis.
#[derive(Debug, Clone, Copy)]
struct Axis {
    i0: usize,
    i1: usize,
    t: f64,
    /// false when the coordinate was clamped (outside the grid).
    inside: bool,
}

#[inline]
fn axis(v: f64, n: usize) -> Axis {
    let max = (n - 1) as f64;
    let inside = (0.0..=max).contains(&v);
    let c = v.clamp(0.0, max);
    if n == 1 {
        return Axis {
            i0: 0,
            i1: 0,
            t: 0.0,
            inside: false,
        };
    }
    let i0 = (c.floor() as usize).min(n - 2);
    Axis {
        i0,
        i1: i0 + 1,
        t: c - i0 as f64,
        inside,
    }
}

impl Grid2D {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        check_len("grid data", width * height * channels, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("grid has non-finite entries".into()));
        }
        Ok(Grid2D {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Grid2D::new(width, height, channels, vec![0.0; width * height * channels])
            .expect("positive dimensions")
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Grid2D {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.index(row, col, ch)]
    }

    #[inline]
    pub fn texel(&self, row: usize, col: usize) -> &[f64] {
        let i = self.index(row, col, 0);
        &self.data[i..i + self.channels]
    }

    /// Samples one coordinate into `out` (length = channels).
    pub fn sample_into(&self, c: SampleCoord, out: &mut [f64]) {
        let ax = axis(c.x, self.width);
        let ay = axis(c.y, self.height);
        let (w00, w01) = ((1.0 - ax.t) * (1.0 - ay.t), ax.t * (1.0 - ay.t));
        let (w10, w11) = ((1.0 - ax.t) * ay.t, ax.t * ay.t);
        let t00 = self.texel(ay.i0, ax.i0);
        let t01 = self.texel(ay.i0, ax.i1);
        let t10 = self.texel(ay.i1, ax.i0);
        let t11 = self.texel(ay.i1, ax.i1);
        for (k, o) in out.iter_mut().enumerate() {
            *o = w00 * t00[k] + w01 * t01[k] + w10 * t10[k] + w11 * t11[k];
        }
    }

    /// Gradient of `dl_do · sample(c)` w.r.t. the coordinate.
    pub fn coord_grad(&self, c: SampleCoord, dl_do: &[f64]) -> Vector2<f64> {
        let ax = axis(c.x, self.width);
        let ay = axis(c.y, self.height);
        let t00 = self.texel(ay.i0, ax.i0);
        let t01 = self.texel(ay.i0, ax.i1);
        let t10 = self.texel(ay.i1, ax.i0);
        let t11 = self.texel(ay.i1, ax.i1);
        let mut g = Vector2::zeros();
        for k in 0..self.channels {
            let dx = (1.0 - ay.t) * (t01[k] - t00[k]) + ay.t * (t11[k] - t10[k]);
            let dy = (1.0 - ax.t) * (t10[k] - t00[k]) + ax.t * (t11[k] - t01[k]);
            g.x += dl_do[k] * dx;
            g.y += dl_do[k] * dy;
        }
        if !ax.inside {
            g.x = 0.0;
        }
        if !ay.inside {
            g.y = 0.0;
        }
        g
    }

    /// Scatters `dl_do` for one sample back onto the texels it read.
    pub fn accumulate_grid_grad(&self, c: SampleCoord, dl_do: &[f64], grad: &mut [f64]) {
        let ax = axis(c.x, self.width);
        let ay = axis(c.y, self.height);
        let taps = [
            (ay.i0, ax.i0, (1.0 - ax.t) * (1.0 - ay.t)),
            (ay.i0, ax.i1, ax.t * (1.0 - ay.t)),
            (ay.i1, ax.i0, (1.0 - ax.t) * ay.t),
            (ay.i1, ax.i1, ax.t * ay.t),
        ];
        for (r, col, w) in taps {
            if w == 0.0 {
                continue;
            }
            let base = self.index(r, col, 0);
            for k in 0..self.channels {
                grad[base + k] += w * dl_do[k];
            }
        }
    }

    /// Loads an 8-bit PNG; values are scaled to `[0, 1]`, one channel per
    /// color component.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path.as_ref())?;
        let mut decoder = png::Decoder::new(BufReader::new(file));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::Image(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Image("PNG too large".into()))?;
        let mut buf = vec![0u8; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Image(e.to_string()))?;
        let channels = info.color_type.samples();
        let n = info.width as usize * info.height as usize * channels;
        let data = buf[..n].iter().map(|&b| b as f64 / 255.0).collect();
        Grid2D::new(info.width as usize, info.height as usize, channels, data)
    }

    /// Writes a 1- or 3-channel grid as an 8-bit PNG, clamping to `[0, 1]`.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let color = match self.channels {
            1 => png::ColorType::Grayscale,
            2 => png::ColorType::GrayscaleAlpha,
            3 => png::ColorType::Rgb,
            4 => png::ColorType::Rgba,
            c => return Err(Error::Image(format!("cannot write {c}-channel PNG"))),
        };
        let file = BufWriter::new(File::create(path.as_ref())?);
        let mut enc = png::Encoder::new(file, self.width as u32, self.height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Image(e.to_string()))?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        writer
            .write_image_data(&bytes)
            .map_err(|e| Error::Image(e.to_string()))?;
        Ok(())
    }

    /// Raw container: magic `FWGD`, u32 version, u32 width, height, channels
    /// (little endian), then the data as little-endian f64 in (row, col, ch)
    /// order.
    pub fn write_raw<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(RAW_MAGIC)?;
        for v in [
            RAW_VERSION,
            self.width as u32,
            self.height as u32,
            self.channels as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_raw<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != RAW_MAGIC {
            return Err(Error::InvalidArgument("not a raw grid container".into()));
        }
        let mut u = [0u8; 4];
        let mut next = || -> Result<u32> {
            r.read_exact(&mut u)?;
            Ok(u32::from_le_bytes(u))
        };
        let version = next()?;
        if version != RAW_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported raw grid version {version}"
            )));
        }
        let (w, h, c) = (next()? as usize, next()? as usize, next()? as usize);
        let n = w
            .checked_mul(h)
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| Error::InvalidArgument("raw grid too large".into()))?;
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Grid2D::new(w, h, c, data)
    }
}

pub fn sample_bilinear(grid: &Grid2D, coords: &[SampleCoord]) -> Vec<Vec<f64>> {
    coords
        .iter()
        .map(|&c| {
            let mut out = vec![0.0; grid.channels()];
            grid.sample_into(c, &mut out);
            out
        })
        .collect()
}

pub fn grad_wrt_coords(
    grid: &Grid2D,
    coords: &[SampleCoord],
    dl_do: &[Vec<f64>],
) -> Result<Vec<Vector2<f64>>> {
    check_len("upstream gradient", coords.len(), dl_do.len())?;
    coords
        .iter()
        .zip(dl_do)
        .map(|(&c, g)| {
            check_len("upstream channels", grid.channels(), g.len())?;
            Ok(grid.coord_grad(c, g))
        })
        .collect()
}

/// Gradient w.r.t. the grid values, in the grid's data layout.
pub fn grad_wrt_grid(grid: &Grid2D, coords: &[SampleCoord], dl_do: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_len("upstream gradient", coords.len(), dl_do.len())?;
    let mut grad = vec![0.0; grid.data().len()];
    for (&c, g) in coords.iter().zip(dl_do) {
        check_len("upstream channels", grid.channels(), g.len())?;
        grid.accumulate_grid_grad(c, g, &mut grad);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Grid2D {
        Grid2D::from_fn(5, 4, 2, |r, c, ch| if ch == 0 { c as f64 } else { (r * 10 + c) as f64 })
    }

    #[test]
    fn integer_coordinate_reads_texel() {
        let g = ramp();
        let s = sample_bilinear(&g, &[SampleCoord::new(2.0, 3.0)]);
        assert_eq!(s[0], g.texel(3, 2).to_vec());
    }

    #[test]
    fn horizontal_midpoint() {
        let g = Grid2D::new(2, 1, 1, vec![0.25, 1.75]).unwrap();
        let s = sample_bilinear(&g, &[SampleCoord::new(0.5, 0.0)]);
        assert_eq!(s[0][0], 1.0);
    }

    #[test]
    fn clamps_outside() {
        let g = ramp();
        let s = sample_bilinear(&g, &[SampleCoord::new(-3.0, 10.0), SampleCoord::new(9.0, -1.0)]);
        assert_eq!(s[0], g.texel(3, 0).to_vec());
        assert_eq!(s[1], g.texel(0, 4).to_vec());
        let gr = grad_wrt_coords(&g, &[SampleCoord::new(-3.0, 1.5)], &[vec![1.0, 1.0]]).unwrap();
        assert_eq!(gr[0].x, 0.0);
        assert_eq!(gr[0].y, 10.0);
    }

    #[test]
    fn constant_grid_has_no_coordinate_gradient() {
        let g = Grid2D::from_fn(6, 6, 3, |_, _, _| 0.4);
        let gr = grad_wrt_coords(&g, &[SampleCoord::new(2.3, 4.1)], &[vec![1.0, -2.0, 0.5]]).unwrap();
        assert_eq!(gr[0], Vector2::zeros());
    }

    #[test]
    fn linear_ramp_gradient() {
        let g = Grid2D::from_fn(8, 8, 1, |_, c, _| c as f64);
        let gr = grad_wrt_coords(&g, &[SampleCoord::new(3.3, 2.6)], &[vec![1.0]]).unwrap();
        assert!((gr[0] - Vector2::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn single_texel_grid() {
        let g = Grid2D::new(1, 1, 1, vec![0.7]).unwrap();
        let s = sample_bilinear(&g, &[SampleCoord::new(0.4, -0.2)]);
        assert_eq!(s[0][0], 0.7);
        assert_eq!(g.coord_grad(SampleCoord::new(0.4, 0.0), &[1.0]), Vector2::zeros());
    }

    #[test]
    fn grid_grad_weights_sum_to_upstream() {
        let g = ramp();
        let grad = grad_wrt_grid(&g, &[SampleCoord::new(1.25, 2.5)], &[vec![2.0, 0.0]]).unwrap();
        let total: f64 = grad.iter().sum();
        assert!((total - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Grid2D::new(0, 1, 1, vec![]).is_err());
        assert!(Grid2D::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Grid2D::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(grad_wrt_coords(&ramp(), &[SampleCoord::new(0., 0.)], &[]).is_err());
    }

    #[test]
    fn raw_and_png_round_trip() {
        let g = ramp();
        let mut buf = Vec::new();
        g.write_raw(&mut buf).unwrap();
        assert_eq!(Grid2D::read_raw(&buf[..]).unwrap(), g);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let img = Grid2D::from_fn(7, 3, 1, |r, c, _| ((r * 7 + c) * 10) as f64 / 255.0);
        img.save_png(&path).unwrap();
        let back = Grid2D::load_png(&path).unwrap();
        assert_eq!((back.width(), back.height(), back.channels()), (7, 3, 1));
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
