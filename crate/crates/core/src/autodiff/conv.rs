//! im2col lowering for stride-1 square convolutions.

use super::Scalar;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.height + 2 * self.pad + 1 - self.kernel
    }

    pub fn out_w(&self) -> usize {
        self.width + 2 * self.pad + 1 - self.kernel
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// 1x1 kernels without padding read the input directly.
    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.pad == 0
    }
}

pub(crate) fn im2col<T: Scalar>(x: &[T], g: ConvGeom, col: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let cols = oh * ow;
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..oh {
                    let iy = oy as isize + ki as isize - g.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.height as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = ox as isize + kj as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

pub(crate) fn col2im_add<T: Scalar>(col: &[T], g: ConvGeom, dx: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let cols = oh * ow;
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..oh {
                    let iy = oy as isize + ki as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..ow {
                        let ix = ox as isize + kj as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            line[ix as usize] = line[ix as usize] + src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}
