//! Max pooling and nearest-neighbor upsampling.

use crate::error::{AvError, Result};
use crate::tensor::{debug_check_finite, Element, GradTape, Step, Tensor};

/// Max pooling over square windows. Padding cells never win the max;
/// ties resolve to the first element in scan order (ky, then kx). The
/// gradient routes to the winning input position.
pub fn maxpool2d<E: Element>(
    tape: &GradTape<E>,
    input: &Tensor<E>,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor<E>> {
    let shape = input.shape();
    if shape.len() != 4 {
        return Err(AvError::arg(format!(
            "maxpool2d expects NCHW input, got {shape:?}"
        )));
    }
    if kernel == 0 || stride == 0 {
        return Err(AvError::arg("maxpool2d: kernel and stride must be positive"));
    }
    if pad >= kernel {
        return Err(AvError::arg(format!(
            "maxpool2d: pad {pad} must be smaller than kernel {kernel}"
        )));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if h + 2 * pad < kernel || w + 2 * pad < kernel {
        return Err(AvError::arg(format!(
            "maxpool2d: window {kernel} does not fit input {h}x{w} with pad {pad}"
        )));
    }
    let oh = (h + 2 * pad - kernel) / stride + 1;
    let ow = (w + 2 * pad - kernel) / stride + 1;

    let data = input.data();
    let mut out = vec![E::zero(); n * c * oh * ow];
    let mut argmax = vec![0usize; n * c * oh * ow];
    let mut out_idx = 0;
    for img in 0..n {
        for ch in 0..c {
            let plane_base = (img * c + ch) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best: Option<(E, usize)> = None;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let flat = plane_base + iy as usize * w + ix as usize;
                            let v = data[flat];
                            // Strict > keeps the first occurrence on ties.
                            if best.is_none_or(|(bv, _)| v > bv) {
                                best = Some((v, flat));
                            }
                        }
                    }
                    let (v, flat) = best.expect("window always contains a real cell");
                    out[out_idx] = v;
                    argmax[out_idx] = flat;
                    out_idx += 1;
                }
            }
        }
    }
    debug_check_finite(&out, "maxpool2d");

    let node = tape.push(
        vec![tape.register_input(input)],
        Step::MaxPool {
            argmax,
            in_len: input.numel(),
        },
    );
    Ok(Tensor::from_op(vec![n, c, oh, ow], out, node))
}

/// Replicate each pixel into a 2x2 block; the backward pass sums the
/// four replicated gradients.
pub fn upsample_nearest2x<E: Element>(tape: &GradTape<E>, input: &Tensor<E>) -> Result<Tensor<E>> {
    let shape = input.shape();
    if shape.len() != 4 {
        return Err(AvError::arg(format!(
            "upsample_nearest2x expects NCHW input, got {shape:?}"
        )));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let data = input.data();
    let mut out = vec![E::zero(); n * c * 4 * h * w];
    let ow = 2 * w;
    for plane in 0..n * c {
        let src = &data[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        for y in 0..h {
            for x in 0..w {
                let v = src[y * w + x];
                let base = 2 * y * ow + 2 * x;
                dst[base] = v;
                dst[base + 1] = v;
                dst[base + ow] = v;
                dst[base + ow + 1] = v;
            }
        }
    }
    let node = tape.push(
        vec![tape.register_input(input)],
        Step::Upsample2x {
            in_shape: [n, c, h, w],
        },
    );
    Ok(Tensor::from_op(vec![n, c, 2 * h, 2 * w], out, node))
}

pub(crate) fn upsample2x_backward<E: Element>(grad_out: &[E], in_shape: [usize; 4]) -> Vec<E> {
    let [n, c, h, w] = in_shape;
    let ow = 2 * w;
    let mut g = vec![E::zero(); n * c * h * w];
    for plane in 0..n * c {
        let src = &grad_out[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        let dst = &mut g[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let base = 2 * y * ow + 2 * x;
                dst[y * w + x] = src[base] + src[base + 1] + src[base + ow] + src[base + ow + 1];
            }
        }
    }
    g
}
