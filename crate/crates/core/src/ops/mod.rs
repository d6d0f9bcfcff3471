//! Neural-network layer primitives with forward semantics, gradient
//! support and exact shape contracts.
//!
//! Every op takes the active [`GradTape`] as its first argument and
//! records a backward node when the tape is enabled and at least one
//! input participates in the gradient. With `GradTape::disabled()` the
//! same functions run as plain array math.

pub mod conv;
pub mod dropout;
pub(crate) mod linalg;
pub mod loss;
pub mod norm;
pub mod pad;
pub mod pool;

pub use conv::{conv2d, Conv2dSpec};
pub use dropout::dropout;
pub use loss::{softmax_channels, weighted_cross_entropy};
pub use norm::{batchnorm2d, BatchNorm2d};
pub use pad::{crop_nchw, pad_nchw, PaddingMode};
pub use pool::{maxpool2d, upsample_nearest2x};

use crate::error::{AvError, Result};
use crate::tensor::{debug_check_finite, Element, GradTape, Step, Tensor};

/// Forward execution mode. Train mode enables dropout (seeded for
/// reproducibility) and batch statistics in normalization layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train { dropout_seed: u64 },
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

fn same_shape<E: Element>(op: &str, a: &Tensor<E>, b: &Tensor<E>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(AvError::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// Elementwise sum of two equal-shaped tensors.
pub fn add<E: Element>(tape: &GradTape<E>, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    same_shape("add", a, b)?;
    let data: Vec<E> = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    debug_check_finite(&data, "add");
    let node = tape.push(
        vec![tape.register_input(a), tape.register_input(b)],
        Step::Add,
    );
    Ok(Tensor::from_op(a.shape().to_vec(), data, node))
}

/// Elementwise difference `a - b`.
pub fn sub<E: Element>(tape: &GradTape<E>, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    same_shape("sub", a, b)?;
    let data: Vec<E> = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
    debug_check_finite(&data, "sub");
    let node = tape.push(
        vec![tape.register_input(a), tape.register_input(b)],
        Step::Sub,
    );
    Ok(Tensor::from_op(a.shape().to_vec(), data, node))
}

/// Elementwise product of two equal-shaped tensors.
pub fn mul<E: Element>(tape: &GradTape<E>, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    same_shape("mul", a, b)?;
    let data: Vec<E> = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    debug_check_finite(&data, "mul");
    let node = tape.push(
        vec![tape.register_input(a), tape.register_input(b)],
        Step::Mul {
            a: a.data_arc(),
            b: b.data_arc(),
        },
    );
    Ok(Tensor::from_op(a.shape().to_vec(), data, node))
}

/// Add a scalar to every element.
pub fn add_scalar<E: Element>(tape: &GradTape<E>, a: &Tensor<E>, s: E) -> Result<Tensor<E>> {
    let data: Vec<E> = a.data().iter().map(|&x| x + s).collect();
    debug_check_finite(&data, "add_scalar");
    let node = tape.push(vec![tape.register_input(a)], Step::AddScalar);
    Ok(Tensor::from_op(a.shape().to_vec(), data, node))
}

/// Multiply every element by a scalar.
pub fn mul_scalar<E: Element>(tape: &GradTape<E>, a: &Tensor<E>, s: E) -> Result<Tensor<E>> {
    let data: Vec<E> = a.data().iter().map(|&x| x * s).collect();
    debug_check_finite(&data, "mul_scalar");
    let node = tape.push(vec![tape.register_input(a)], Step::MulScalar { factor: s });
    Ok(Tensor::from_op(a.shape().to_vec(), data, node))
}

/// Rectified linear unit, elementwise.
pub fn relu<E: Element>(tape: &GradTape<E>, a: &Tensor<E>) -> Result<Tensor<E>> {
    let data: Vec<E> = a
        .data()
        .iter()
        .map(|&x| if x > E::zero() { x } else { E::zero() })
        .collect();
    let node = tape.push(
        vec![tape.register_input(a)],
        Step::Relu {
            input: a.data_arc(),
        },
    );
    Ok(Tensor::from_op(a.shape().to_vec(), data, node))
}

/// Sum of all elements; returns a `[1]`-shaped tensor.
pub fn sum<E: Element>(tape: &GradTape<E>, a: &Tensor<E>) -> Result<Tensor<E>> {
    let mut acc = E::zero();
    for &v in a.data() {
        acc += v;
    }
    debug_check_finite(std::slice::from_ref(&acc), "sum");
    let node = tape.push(
        vec![tape.register_input(a)],
        Step::Sum { in_len: a.numel() },
    );
    Ok(Tensor::from_op(vec![1], vec![acc], node))
}

/// Channel concatenation of NCHW tensors with equal N, H, W.
pub fn concat_channels<E: Element>(tape: &GradTape<E>, inputs: &[&Tensor<E>]) -> Result<Tensor<E>> {
    if inputs.is_empty() {
        return Err(AvError::arg("concat_channels: empty input list"));
    }
    let first = inputs[0].shape();
    if first.len() != 4 {
        return Err(AvError::arg(format!(
            "concat_channels expects rank-4 NCHW tensors, got {first:?}"
        )));
    }
    let (n, h, w) = (first[0], first[2], first[3]);
    let mut channels = Vec::with_capacity(inputs.len());
    for t in inputs {
        let s = t.shape();
        if s.len() != 4 || s[0] != n || s[2] != h || s[3] != w {
            return Err(AvError::shape("concat_channels", first, s));
        }
        channels.push(s[1]);
    }
    let total_c: usize = channels.iter().sum();
    let plane = h * w;
    let mut data = vec![E::zero(); n * total_c * plane];
    for img in 0..n {
        let mut offset_c = 0;
        for (t, &ci) in inputs.iter().zip(&channels) {
            let src = img * ci * plane;
            let dst = (img * total_c + offset_c) * plane;
            data[dst..dst + ci * plane].copy_from_slice(&t.data()[src..src + ci * plane]);
            offset_c += ci;
        }
    }
    let node = tape.push(
        inputs.iter().map(|t| tape.register_input(t)).collect(),
        Step::ConcatChannels {
            channels,
            batch: n,
            hw: (h, w),
        },
    );
    Ok(Tensor::from_op(vec![n, total_c, h, w], data, node))
}
