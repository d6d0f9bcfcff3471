//! 2D convolution with stride and dilation, via im2col + matmul.
//!
//! Dilation spreads the kernel taps `d` pixels apart, widening the
//! receptive field without extra parameters; padding is explicit and
//! out-of-range taps read as zero. The im2col patch order is
//! `(channel, ky, kx)` ascending, so the dilation-1 result is
//! bit-identical to a direct nested-loop convolution summed in that
//! same order.


use serde::{Deserialize, Serialize};

use super::linalg;
use crate::error::{AvError, Result};
use crate::tensor::{debug_check_finite, Element, GradTape, Step, Tensor};

/// Keep im2col tiles at most this many elements; large images are
/// processed in output-row chunks.
const TILE_ELEMS: usize = 2_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl Conv2dSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        dilation: usize,
        pad_h: usize,
        pad_w: usize,
    ) -> Result<Self> {
        let spec = Conv2dSpec {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            dilation,
            pad_h,
            pad_w,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Stride-1 spec whose padding preserves spatial size:
    /// `pad = dilation * (k - 1) / 2` per axis, odd kernels only.
    pub fn same(
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        dilation: usize,
    ) -> Result<Self> {
        if kernel_h.is_multiple_of(2) || kernel_w.is_multiple_of(2) {
            return Err(AvError::arg(format!(
                "same-padding requires odd kernel sizes, got {kernel_h}x{kernel_w}"
            )));
        }
        Conv2dSpec::new(
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            1,
            dilation,
            dilation * (kernel_h - 1) / 2,
            dilation * (kernel_w - 1) / 2,
        )
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("kernel_h", self.kernel_h),
            ("kernel_w", self.kernel_w),
            ("stride", self.stride),
            ("dilation", self.dilation),
        ] {
            if v == 0 {
                return Err(AvError::arg(format!("conv2d spec: {name} must be positive")));
            }
        }
        Ok(())
    }

    /// Closed-form output size per axis:
    /// `floor((in + 2*pad - dilation*(k-1) - 1) / stride) + 1`, which must
    /// be at least 1 (the dilated kernel has to fit the padded input).
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |inp: usize, k: usize, pad: usize| -> Result<usize> {
            let span = inp as isize + 2 * pad as isize
                - (self.dilation * (k - 1)) as isize
                - 1;
            if span < 0 {
                return Err(AvError::arg(format!(
                    "conv2d: dilated kernel extent {} exceeds padded input extent {} \
                     (input {}, pad {}, kernel {}, dilation {})",
                    self.dilation * (k - 1) + 1,
                    inp + 2 * pad,
                    inp,
                    pad,
                    k,
                    self.dilation
                )));
            }
            Ok(span as usize / self.stride + 1)
        };
        Ok((
            axis(h, self.kernel_h, self.pad_h)?,
            axis(w, self.kernel_w, self.pad_w)?,
        ))
    }

    /// Trainable parameter count: weights plus bias.
    pub fn param_count(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels * self.out_channels + self.out_channels
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1
            && self.kernel_w == 1
            && self.stride == 1
            && self.pad_h == 0
            && self.pad_w == 0
    }
}

/// out[n,o,y,x] = bias[o] + sum_{c,i,j} input[n,c, y*s + i*d - pad_h, x*s + j*d - pad_w] * weight[o,c,i,j]
pub fn conv2d<E: Element>(
    tape: &GradTape<E>,
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    spec: &Conv2dSpec,
) -> Result<Tensor<E>> {
    let ishape = input.shape();
    if ishape.len() != 4 {
        return Err(AvError::arg(format!(
            "conv2d expects NCHW input, got shape {ishape:?}"
        )));
    }
    let (n, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    if c != spec.in_channels {
        return Err(AvError::arg(format!(
            "conv2d: input has {c} channels but spec expects {}",
            spec.in_channels
        )));
    }
    let expected_w = [spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w];
    if weight.shape() != expected_w {
        return Err(AvError::shape("conv2d weight", weight.shape(), &expected_w));
    }
    if bias.shape() != [spec.out_channels] {
        return Err(AvError::shape("conv2d bias", bias.shape(), &[spec.out_channels]));
    }
    let (oh, ow) = spec.output_hw(h, w)?;

    let o = spec.out_channels;
    let ckk = spec.patch_len();
    let mut out = vec![E::zero(); n * o * oh * ow];
    let wdata = weight.data();
    let bdata = bias.data();
    let in_plane = h * w;
    let out_plane = oh * ow;

    for img in 0..n {
        let in_img = &input.data()[img * c * in_plane..(img + 1) * c * in_plane];
        let out_img = &mut out[img * o * out_plane..(img + 1) * o * out_plane];
        if spec.is_pointwise() {
            // 1x1 stride-1: the patch matrix is the input itself.
            for (oc, chunk) in out_img.chunks_mut(out_plane).enumerate() {
                chunk.fill(bdata[oc]);
            }
            linalg::matmul_acc(wdata, in_img, o, ckk, out_plane, out_img);
            continue;
        }
        let rows_per_tile = (TILE_ELEMS / (ckk * ow).max(1)).clamp(1, oh);
        let mut cols = vec![E::zero(); ckk * rows_per_tile * ow];
        let mut tile_out = vec![E::zero(); o * rows_per_tile * ow];
        let mut y0 = 0;
        while y0 < oh {
            let rows = rows_per_tile.min(oh - y0);
            let t = rows * ow;
            im2col_rows(in_img, c, h, w, spec, ow, y0, rows, &mut cols[..ckk * t]);
            for oc in 0..o {
                tile_out[oc * t..(oc + 1) * t].fill(bdata[oc]);
            }
            linalg::matmul_acc(wdata, &cols[..ckk * t], o, ckk, t, &mut tile_out[..o * t]);
            for oc in 0..o {
                out_img[oc * out_plane + y0 * ow..oc * out_plane + (y0 + rows) * ow]
                    .copy_from_slice(&tile_out[oc * t..(oc + 1) * t]);
            }
            y0 += rows;
        }
    }
    debug_check_finite(&out, "conv2d");

    let node = tape.push(
        vec![
            tape.register_input(input),
            tape.register_input(weight),
            tape.register_input(bias),
        ],
        Step::Conv2d {
            input: input.data_arc(),
            weight: weight.data_arc(),
            spec: *spec,
            in_shape: [n, c, h, w],
            out_hw: (oh, ow),
        },
    );
    Ok(Tensor::from_op(vec![n, o, oh, ow], out, node))
}

/// Fill `cols` with patches for output rows `[y0, y0+rows)`.
/// Layout: `cols[(c*kh + ky)*kw + kx][r*ow + x]`, row-major.
#[allow(clippy::too_many_arguments)]
fn im2col_rows<E: Element>(
    in_img: &[E],
    c: usize,
    h: usize,
    w: usize,
    spec: &Conv2dSpec,
    ow: usize,
    y0: usize,
    rows: usize,
    cols: &mut [E],
) {
    let t = rows * ow;
    let (kh, kw, s, d) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.dilation);
    for ch in 0..c {
        let plane = &in_img[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut cols[((ch * kh + ky) * kw + kx) * t..][..t];
                for r in 0..rows {
                    let iy = ((y0 + r) * s + ky * d) as isize - spec.pad_h as isize;
                    let dst = &mut row[r * ow..(r + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(E::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (x, slot) in dst.iter_mut().enumerate() {
                        let ix = (x * s + kx * d) as isize - spec.pad_w as isize;
                        *slot = if ix < 0 || ix >= w as isize {
                            E::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add a patch-gradient matrix back onto the input image.
#[allow(clippy::too_many_arguments)]
fn col2im_rows<E: Element>(
    colgrad: &[E],
    c: usize,
    h: usize,
    w: usize,
    spec: &Conv2dSpec,
    ow: usize,
    y0: usize,
    rows: usize,
    d_img: &mut [E],
) {
    let t = rows * ow;
    let (kh, kw, s, d) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.dilation);
    for ch in 0..c {
        let plane = &mut d_img[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &colgrad[((ch * kh + ky) * kw + kx) * t..][..t];
                for r in 0..rows {
                    let iy = ((y0 + r) * s + ky * d) as isize - spec.pad_h as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (x, &g) in row[r * ow..(r + 1) * ow].iter().enumerate() {
                        let ix = (x * s + kx * d) as isize - spec.pad_w as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::type_complexity)]
pub(crate) fn conv2d_backward<E: Element>(
    grad_out: &[E],
    input: &[E],
    weight: &[E],
    spec: &Conv2dSpec,
    in_shape: [usize; 4],
    out_hw: (usize, usize),
    need: [bool; 3],
) -> (Option<Vec<E>>, Option<Vec<E>>, Option<Vec<E>>) {
    let [n, c, h, w] = in_shape;
    let (oh, ow) = out_hw;
    let o = spec.out_channels;
    let ckk = spec.patch_len();
    let in_plane = h * w;
    let out_plane = oh * ow;

    let mut d_input = need[0].then(|| vec![E::zero(); n * c * in_plane]);
    let mut d_weight = need[1].then(|| vec![E::zero(); o * ckk]);
    let mut d_bias = need[2].then(|| vec![E::zero(); o]);

    if let Some(db) = d_bias.as_mut() {
        for img in 0..n {
            for oc in 0..o {
                let g = &grad_out[(img * o + oc) * out_plane..][..out_plane];
                let mut acc = E::zero();
                for &v in g {
                    acc += v;
                }
                db[oc] += acc;
            }
        }
    }

    if d_input.is_none() && d_weight.is_none() {
        return (d_input, d_weight, d_bias);
    }

    let w_t = d_input
        .is_some()
        .then(|| linalg::transpose(weight, o, ckk));

    for img in 0..n {
        let g_img = &grad_out[img * o * out_plane..(img + 1) * o * out_plane];
        let in_img = &input[img * c * in_plane..(img + 1) * c * in_plane];

        if spec.is_pointwise() {
            if let Some(dw) = d_weight.as_mut() {
                let tile = linalg::matmul_nt(g_img, in_img, o, out_plane, ckk);
                for (a, b) in dw.iter_mut().zip(tile) {
                    *a += b;
                }
            }
            if let Some(di) = d_input.as_mut() {
                let d_img = &mut di[img * c * in_plane..(img + 1) * c * in_plane];
                linalg::matmul_acc(w_t.as_ref().unwrap(), g_img, ckk, o, out_plane, d_img);
            }
            continue;
        }

        let rows_per_tile = (TILE_ELEMS / (ckk * ow).max(1)).clamp(1, oh);
        let mut cols = vec![E::zero(); ckk * rows_per_tile * ow];
        let mut g_tile = vec![E::zero(); o * rows_per_tile * ow];
        let mut y0 = 0;
        while y0 < oh {
            let rows = rows_per_tile.min(oh - y0);
            let t = rows * ow;
            for oc in 0..o {
                g_tile[oc * t..(oc + 1) * t].copy_from_slice(
                    &g_img[oc * out_plane + y0 * ow..oc * out_plane + (y0 + rows) * ow],
                );
            }
            if let Some(dw) = d_weight.as_mut() {
                im2col_rows(in_img, c, h, w, spec, ow, y0, rows, &mut cols[..ckk * t]);
                let tile = linalg::matmul_nt(&g_tile[..o * t], &cols[..ckk * t], o, t, ckk);
                for (a, b) in dw.iter_mut().zip(tile) {
                    *a += b;
                }
            }
            if let Some(di) = d_input.as_mut() {
                let mut colgrad = vec![E::zero(); ckk * t];
                linalg::matmul_acc(
                    w_t.as_ref().unwrap(),
                    &g_tile[..o * t],
                    ckk,
                    o,
                    t,
                    &mut colgrad,
                );
                let d_img = &mut di[img * c * in_plane..(img + 1) * c * in_plane];
                col2im_rows(&colgrad, c, h, w, spec, ow, y0, rows, d_img);
            }
            y0 += rows;
        }
    }
    (d_input, d_weight, d_bias)
}
