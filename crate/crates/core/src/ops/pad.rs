//! Spatial padding for full-image inference.
//!
//! Three downsamplings require H and W divisible by 8; evaluation pads
//! images up to the next multiple and crops predictions back. These are
//! inference-only helpers and record no gradients.

use serde::{Deserialize, Serialize};

use crate::error::{AvError, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingMode {
    /// Mirror rows/columns about the border (no edge duplication).
    #[default]
    Reflect,
    Zero,
}

/// Round `v` up to the next multiple of `m`.
pub fn next_multiple(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

/// Pad an NCHW tensor on the bottom/right so H and W become multiples of
/// `multiple`. Returns the padded tensor and the original (h, w).
pub fn pad_nchw<E: Element>(
    input: &Tensor<E>,
    multiple: usize,
    mode: PaddingMode,
) -> Result<(Tensor<E>, (usize, usize))> {
    let shape = input.shape();
    if shape.len() != 4 {
        return Err(AvError::arg(format!(
            "pad_nchw expects NCHW input, got {shape:?}"
        )));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let nh = next_multiple(h, multiple);
    let nw = next_multiple(w, multiple);
    if (nh, nw) == (h, w) {
        return Ok((input.detach(), (h, w)));
    }
    let data = input.data();
    let mut out = vec![E::zero(); n * c * nh * nw];
    for plane in 0..n * c {
        let src = &data[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * nh * nw..(plane + 1) * nh * nw];
        for y in 0..nh {
            let sy = match mode {
                PaddingMode::Reflect => reflect_index(y, h),
                PaddingMode::Zero => {
                    if y >= h {
                        for slot in dst[y * nw..(y + 1) * nw].iter_mut() {
                            *slot = E::zero();
                        }
                        continue;
                    }
                    y
                }
            };
            for x in 0..nw {
                let v = match mode {
                    PaddingMode::Reflect => src[sy * w + reflect_index(x, w)],
                    PaddingMode::Zero => {
                        if x >= w {
                            E::zero()
                        } else {
                            src[sy * w + x]
                        }
                    }
                };
                dst[y * nw + x] = v;
            }
        }
    }
    Ok((Tensor::new(vec![n, c, nh, nw], out)?, (h, w)))
}

/// Crop an NCHW tensor back to `(h, w)` from the top-left corner.
pub fn crop_nchw<E: Element>(input: &Tensor<E>, h: usize, w: usize) -> Result<Tensor<E>> {
    let shape = input.shape();
    if shape.len() != 4 {
        return Err(AvError::arg(format!(
            "crop_nchw expects NCHW input, got {shape:?}"
        )));
    }
    let (n, c, ph, pw) = (shape[0], shape[1], shape[2], shape[3]);
    if h > ph || w > pw {
        return Err(AvError::arg(format!(
            "crop_nchw: target {h}x{w} exceeds input {ph}x{pw}"
        )));
    }
    if (h, w) == (ph, pw) {
        return Ok(input.detach());
    }
    let data = input.data();
    let mut out = vec![E::zero(); n * c * h * w];
    for plane in 0..n * c {
        for y in 0..h {
            let src = plane * ph * pw + y * pw;
            let dst = plane * h * w + y * w;
            out[dst..dst + w].copy_from_slice(&data[src..src + w]);
        }
    }
    Tensor::new(vec![n, c, h, w], out)
}

/// Mirror `i` into `[0, len)` without repeating the border pixel,
/// bouncing for arbitrarily deep padding.
fn reflect_index(i: usize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let m = i % period;
    if m < len {
        m
    } else {
        period - m
    }
}
