//! Dense layers, same-padded convolutions and tanh, with manual backward
//! passes. Feature maps are stored row-major as (row, col, channel).

use super::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<Real>,
}

impl Tensor {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Tensor {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    #[inline]
    pub fn idx(&self, r: usize, col: usize, ch: usize) -> usize {
        (r * self.w + col) * self.c + ch
    }
}

/// Square kernel `k` (odd), padding `k / 2`, weights laid out as
/// `[out][ky][kx][in]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

impl Conv {
    pub fn n_weights(&self) -> usize {
        self.cout * self.k * self.k * self.cin
    }

    pub fn out_size(&self, n: usize) -> usize {
        (n - 1) / self.stride + 1
    }

    /// Input coordinate read by output `o` through tap `t`, if inside.
    #[inline]
    fn tap(&self, o: usize, t: usize, n: usize) -> Option<usize> {
        let i = (o * self.stride + t) as isize - (self.k / 2) as isize;
        (i >= 0 && (i as usize) < n).then_some(i as usize)
    }

    pub fn forward(&self, x: &Tensor, w: &[Real], b: &[Real]) -> Tensor {
        debug_assert_eq!(x.c, self.cin);
        let mut y = Tensor::zeros(self.out_size(x.h), self.out_size(x.w), self.cout);
        let kk = self.k * self.k * self.cin;
        for oy in 0..y.h {
            for ox in 0..y.w {
                let out = y.idx(oy, ox, 0);
                y.data[out..out + self.cout].copy_from_slice(b);
                for ky in 0..self.k {
                    let Some(iy) = self.tap(oy, ky, x.h) else { continue };
                    for kx in 0..self.k {
                        let Some(ix) = self.tap(ox, kx, x.w) else { continue };
                        let xin = &x.data[x.idx(iy, ix, 0)..][..self.cin];
                        let woff = (ky * self.k + kx) * self.cin;
                        for o in 0..self.cout {
                            let wk = &w[o * kk + woff..][..self.cin];
                            let mut acc = 0.0;
                            for i in 0..self.cin {
                                acc += wk[i] * xin[i];
                            }
                            y.data[out + o] += acc;
                        }
                    }
                }
            }
        }
        y
    }

    /// Accumulates weight and bias gradients; writes the input gradient
    /// into `dx` when given.
    pub fn backward(
        &self,
        x: &Tensor,
        w: &[Real],
        dy: &Tensor,
        dw: &mut [Real],
        db: &mut [Real],
        mut dx: Option<&mut Tensor>,
    ) {
        let kk = self.k * self.k * self.cin;
        if let Some(dx) = dx.as_deref_mut() {
            dx.data.iter_mut().for_each(|v| *v = 0.0);
        }
        for oy in 0..dy.h {
            for ox in 0..dy.w {
                let g = &dy.data[dy.idx(oy, ox, 0)..][..self.cout];
                for o in 0..self.cout {
                    db[o] += g[o];
                }
                for ky in 0..self.k {
                    let Some(iy) = self.tap(oy, ky, x.h) else { continue };
                    for kx in 0..self.k {
                        let Some(ix) = self.tap(ox, kx, x.w) else { continue };
                        let xo = x.idx(iy, ix, 0);
                        let woff = (ky * self.k + kx) * self.cin;
                        for o in 0..self.cout {
                            let go = g[o];
                            if go == 0.0 {
                                continue;
                            }
                            let base = o * kk + woff;
                            for i in 0..self.cin {
                                dw[base + i] += go * x.data[xo + i];
                            }
                            if let Some(dx) = dx.as_deref_mut() {
                                for i in 0..self.cin {
                                    dx.data[xo + i] += go * w[base + i];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `y = W x + b` with `W` laid out `[out][in]`.
pub fn dense_forward(w: &[Real], b: &[Real], x: &[Real], y: &mut [Real]) {
    let n = x.len();
    for (o, yo) in y.iter_mut().enumerate() {
        let row = &w[o * n..][..n];
        *yo = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<Real>();
    }
}

pub fn dense_backward(
    w: &[Real],
    x: &[Real],
    dy: &[Real],
    dw: &mut [Real],
    db: &mut [Real],
    dx: Option<&mut [Real]>,
) {
    let n = x.len();
    for (o, &g) in dy.iter().enumerate() {
        db[o] += g;
        if g == 0.0 {
            continue;
        }
        for (d, xi) in dw[o * n..][..n].iter_mut().zip(x) {
            *d += g * xi;
        }
    }
    if let Some(dx) = dx {
        for (i, d) in dx.iter_mut().enumerate() {
            *d = dy.iter().enumerate().map(|(o, g)| g * w[o * n + i]).sum();
        }
    }
}

pub fn tanh_inplace(v: &mut [Real]) {
    v.iter_mut().for_each(|x| *x = x.tanh());
}

/// `dy ← dy · (1 − y²)` where `y` is the tanh output.
pub fn tanh_backward(y: &[Real], dy: &mut [Real]) {
    for (g, t) in dy.iter_mut().zip(y) {
        *g *= 1.0 - t * t;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_matches_direct_sum() {
        let c = Conv {
            cin: 2,
            cout: 3,
            k: 3,
            stride: 2,
        };
        let mut x = Tensor::zeros(5, 4, 2);
        x.data.iter_mut().enumerate().for_each(|(i, v)| *v = (i as Real * 0.37).sin());
        let w: Vec<Real> = (0..c.n_weights()).map(|i| (i as Real * 0.11).cos()).collect();
        let b = [0.1, -0.2, 0.3];
        let y = c.forward(&x, &w, &b);
        assert_eq!((y.h, y.w, y.c), (3, 2, 3));
        for oy in 0..y.h {
            for ox in 0..y.w {
                for o in 0..3 {
                    let mut acc = b[o];
                    for ky in 0..3isize {
                        for kx in 0..3isize {
                            let iy = oy as isize * 2 + ky - 1;
                            let ix = ox as isize * 2 + kx - 1;
                            if iy < 0 || ix < 0 || iy >= 5 || ix >= 4 {
                                continue;
                            }
                            for i in 0..2 {
                                acc += w[o * 18 + (ky * 3 + kx) as usize * 2 + i]
                                    * x.data[x.idx(iy as usize, ix as usize, i)];
                            }
                        }
                    }
                    assert!((y.data[y.idx(oy, ox, o)] - acc).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <dy, conv(x)> - <dy, b> is bilinear in (w, x): check both adjoints.
        let c = Conv {
            cin: 3,
            cout: 2,
            k: 3,
            stride: 1,
        };
        let mut x = Tensor::zeros(4, 4, 3);
        x.data.iter_mut().enumerate().for_each(|(i, v)| *v = (i as Real * 0.7).sin());
        let w: Vec<Real> = (0..c.n_weights()).map(|i| (i as Real * 0.3).cos()).collect();
        let zero = [0.0; 2];
        let y = c.forward(&x, &w, &zero);
        let mut dy = Tensor::zeros(y.h, y.w, y.c);
        dy.data.iter_mut().enumerate().for_each(|(i, v)| *v = (i as Real * 1.3).cos());
        let ip: Real = y.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
        let mut dw = vec![0.0; w.len()];
        let mut db = [0.0; 2];
        let mut dx = Tensor::zeros(4, 4, 3);
        c.backward(&x, &w, &dy, &mut dw, &mut db, Some(&mut dx));
        let via_w: Real = dw.iter().zip(&w).map(|(a, b)| a * b).sum();
        let via_x: Real = dx.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
        assert!((via_w - ip).abs() < 1e-4 * ip.abs().max(1.0));
        assert!((via_x - ip).abs() < 1e-4 * ip.abs().max(1.0));
    }
}
