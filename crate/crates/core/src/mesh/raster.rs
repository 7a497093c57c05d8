//! Minimal triangle rasterizer over pixel centers.
//!
//! Depth is carried as inverse depth `s = 1 / depth`, which is affine in
//! screen space for planar triangles; larger `s` is nearer.

pub(crate) const EMPTY: u32 = u32::MAX;

pub(crate) struct DepthBuffer {
    pub width: usize,
    pub height: usize,
    pub s: Vec<f64>,
    pub tri: Vec<u32>,
}

impl DepthBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        DepthBuffer {
            width,
            height,
            s: vec![f64::NEG_INFINITY; width * height],
            tri: vec![EMPTY; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f64, u32) {
        let i = y * self.width + x;
        (self.s[i], self.tri[i])
    }

    /// Rasterizes one triangle given screen positions and inverse depths.
    /// Pixel `(i, j)` has its center at `(i, j)`; edges are inclusive.
    pub fn draw(&mut self, id: u32, v: [(f64, f64, f64); 3]) {
        let [(x0, y0, s0), (x1, y1, s1), (x2, y2, s2)] = v;
        let area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0);
        if !(area.abs() > 1e-14) {
            return;
        }
        let xmin = x0.min(x1).min(x2).ceil().max(0.0);
        let ymin = y0.min(y1).min(y2).ceil().max(0.0);
        let xmax = x0.max(x1).max(x2).floor().min(self.width as f64 - 1.0);
        let ymax = y0.max(y1).max(y2).floor().min(self.height as f64 - 1.0);
        if xmin > xmax || ymin > ymax {
            return;
        }
        let inv = 1.0 / area;
        let slack = -1e-9;
        for py in ymin as usize..=ymax as usize {
            let y = py as f64;
            for px in xmin as usize..=xmax as usize {
                let x = px as f64;
                let b0 = ((x1 - x) * (y2 - y) - (x2 - x) * (y1 - y)) * inv;
                let b1 = ((x2 - x) * (y0 - y) - (x0 - x) * (y2 - y)) * inv;
                let b2 = 1.0 - b0 - b1;
                if b0 < slack || b1 < slack || b2 < slack {
                    continue;
                }
                let s = b0 * s0 + b1 * s1 + b2 * s2;
                let i = py * self.width + px;
                if s > self.s[i] {
                    self.s[i] = s;
                    self.tri[i] = id;
                }
            }
        }
    }
}
