//! im2col helpers for strided 2-D convolutions on `N × C × H × W` batches.

/// Geometry of a square-kernel convolution from `(channels, height, width)`
/// to its strided output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Rows of the column matrix: `channels · kernel²`.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    /// Columns of the column matrix: number of output positions.
    pub fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }

    pub fn is_valid(&self) -> bool {
        self.kernel > 0
            && self.stride > 0
            && self.height + 2 * self.padding >= self.kernel
            && self.width + 2 * self.padding >= self.kernel
    }

    #[inline]
    fn source(&self, c: usize, ki: usize, kj: usize, oh: usize, ow: usize) -> Option<usize> {
        let ih = (oh * self.stride + ki) as isize - self.padding as isize;
        let iw = (ow * self.stride + kj) as isize - self.padding as isize;
        if ih < 0 || iw < 0 || ih as usize >= self.height || iw as usize >= self.width {
            None
        } else {
            Some((c * self.height + ih as usize) * self.width + iw as usize)
        }
    }

    /// Unfold one image (`channels·height·width`) into `patch_len × positions`.
    pub fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        let (oh_n, ow_n) = (self.out_height(), self.out_width());
        let p = oh_n * ow_n;
        for c in 0..self.channels {
            for ki in 0..self.kernel {
                for kj in 0..self.kernel {
                    let row = (c * self.kernel + ki) * self.kernel + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oh in 0..oh_n {
                        for ow in 0..ow_n {
                            dst[oh * ow_n + ow] = match self.source(c, ki, kj, oh, ow) {
                                Some(i) => image[i],
                                None => 0.0,
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-add columns into an image.
    pub fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        let (oh_n, ow_n) = (self.out_height(), self.out_width());
        let p = oh_n * ow_n;
        for c in 0..self.channels {
            for ki in 0..self.kernel {
                for kj in 0..self.kernel {
                    let row = (c * self.kernel + ki) * self.kernel + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oh in 0..oh_n {
                        for ow in 0..ow_n {
                            if let Some(i) = self.source(c, ki, kj, oh, ow) {
                                image[i] += src[oh * ow_n + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}
