//! Single-channel 2-D convolutions as dense matrices.

use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    /// (height, width) of the input image.
    pub input: (usize, usize),
    pub stride: (usize, usize),
    /// Zero padding added on each side.
    pub padding: (usize, usize),
}

impl ConvGeometry {
    pub fn output_shape(&self, kernel: (usize, usize)) -> Result<(usize, usize)> {
        let (h, w) = self.input;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        let (kh, kw) = kernel;
        if sh == 0 || sw == 0 {
            return Err(Error::GeometryError("stride must be positive".into()));
        }
        if kh == 0 || kw == 0 || h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::GeometryError(format!(
                "kernel {kh}x{kw} does not fit padded input {}x{}",
                h + 2 * ph,
                w + 2 * pw
            )));
        }
        Ok(((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1))
    }
}

/// Matrix `T` with `T · vec(image) = vec(kernel ⋆ image)` for cross-correlation
/// with zero padding. Images are flattened row-major.
pub fn conv_to_toeplitz(kernel: &Mat, geom: &ConvGeometry) -> Result<Mat> {
    let (kh, kw) = kernel.shape();
    let (oh, ow) = geom.output_shape((kh, kw))?;
    let (h, w) = geom.input;
    let mut t = Mat::zeros(oh * ow, h * w);
    for oi in 0..oh {
        for oj in 0..ow {
            let row = t.row_mut(oi * ow + oj);
            for a in 0..kh {
                for b in 0..kw {
                    let i = (oi * geom.stride.0 + a) as isize - geom.padding.0 as isize;
                    let j = (oj * geom.stride.1 + b) as isize - geom.padding.1 as isize;
                    if i >= 0 && j >= 0 && (i as usize) < h && (j as usize) < w {
                        row[i as usize * w + j as usize] += kernel[(a, b)];
                    }
                }
            }
        }
    }
    Ok(t)
}
