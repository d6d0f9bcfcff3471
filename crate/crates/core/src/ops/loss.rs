//! Per-pixel softmax head and class-weighted cross-entropy.

use crate::data::labels::{ClassBatch, IGNORE};
use crate::error::{AvError, Result};
use crate::tensor::{debug_check_finite, Element, GradTape, Step, Tensor};

/// Probability floor inside the log; keeps the loss finite on saturated
/// predictions.
pub const PROB_FLOOR: f64 = 1e-12;

/// Per-pixel softmax over the channel axis of an NKHW tensor, computed
/// with max-subtraction for stability.
pub fn softmax_channels<E: Element>(tape: &GradTape<E>, input: &Tensor<E>) -> Result<Tensor<E>> {
    let shape = input.shape();
    if shape.len() != 4 {
        return Err(AvError::arg(format!(
            "softmax_channels expects NKHW input, got {shape:?}"
        )));
    }
    let (n, k, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if k < 2 {
        return Err(AvError::arg(format!(
            "softmax_channels needs at least 2 channels, got {k}"
        )));
    }
    let plane = h * w;
    let data = input.data();
    let mut out = vec![E::zero(); data.len()];
    for img in 0..n {
        let base = img * k * plane;
        for pix in 0..plane {
            let mut m = data[base + pix];
            for ch in 1..k {
                let v = data[base + ch * plane + pix];
                if v > m {
                    m = v;
                }
            }
            let mut denom = E::zero();
            for ch in 0..k {
                let e = (data[base + ch * plane + pix] - m).exp();
                out[base + ch * plane + pix] = e;
                denom += e;
            }
            for ch in 0..k {
                out[base + ch * plane + pix] /= denom;
            }
        }
    }
    debug_check_finite(&out, "softmax_channels");

    let probs = std::sync::Arc::new(out.clone());
    let node = tape.push(
        vec![tape.register_input(input)],
        Step::SoftmaxChannels {
            probs,
            shape: [n, k, h, w],
        },
    );
    Ok(Tensor::from_op(shape.to_vec(), out, node))
}

pub(crate) fn softmax_backward<E: Element>(
    grad_out: &[E],
    probs: &[E],
    shape: [usize; 4],
) -> Vec<E> {
    let [n, k, h, w] = shape;
    let plane = h * w;
    let mut g = vec![E::zero(); grad_out.len()];
    for img in 0..n {
        let base = img * k * plane;
        for pix in 0..plane {
            let mut dot = E::zero();
            for ch in 0..k {
                let i = base + ch * plane + pix;
                dot += grad_out[i] * probs[i];
            }
            for ch in 0..k {
                let i = base + ch * plane + pix;
                g[i] = probs[i] * (grad_out[i] - dot);
            }
        }
    }
    g
}

/// Weighted cross-entropy over per-pixel class probabilities:
///
/// `loss = sum_p w(p) * (-log max(probs[target(p)], 1e-12)) / sum_p w(p)`
///
/// Pixels labelled [`IGNORE`] contribute to neither sum. Normalizing by
/// total weight rather than pixel count keeps the class-weight scheme in
/// control of relative, not absolute, gradient scale.
pub fn weighted_cross_entropy<E: Element>(
    tape: &GradTape<E>,
    probs: &Tensor<E>,
    target: &ClassBatch,
    weight_map: &Tensor<E>,
) -> Result<Tensor<E>> {
    let shape = probs.shape();
    if shape.len() != 4 {
        return Err(AvError::arg(format!(
            "weighted_cross_entropy expects NKHW probabilities, got {shape:?}"
        )));
    }
    let (n, k, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if (target.batch, target.height, target.width) != (n, h, w) {
        return Err(AvError::shape(
            "weighted_cross_entropy target",
            shape,
            &[target.batch, target.height, target.width],
        ));
    }
    let expected_w = [n, 1, h, w];
    if weight_map.shape() != expected_w {
        return Err(AvError::shape(
            "weighted_cross_entropy weight map",
            weight_map.shape(),
            &expected_w,
        ));
    }

    let plane = h * w;
    let p = probs.data();
    let wdata = weight_map.data();
    let floor = E::of_f64(PROB_FLOOR);

    let mut total_weight = E::zero();
    let mut loss_acc = E::zero();
    for img in 0..n {
        let base = img * k * plane;
        for pix in 0..plane {
            let t = target.data[img * plane + pix];
            if t == IGNORE {
                continue;
            }
            if usize::from(t) >= k {
                return Err(AvError::arg(format!(
                    "weighted_cross_entropy: target class {t} out of range for {k} channels"
                )));
            }
            let weight = wdata[img * plane + pix];
            if weight < E::zero() {
                return Err(AvError::arg("weighted_cross_entropy: negative weight"));
            }
            let pt = p[base + usize::from(t) * plane + pix];
            let clamped = if pt > floor { pt } else { floor };
            loss_acc += weight * -clamped.ln();
            total_weight += weight;
        }
    }
    if total_weight == E::zero() {
        return Err(AvError::arg(
            "weighted_cross_entropy: empty effective pixel set (all pixels ignored or zero-weight)",
        ));
    }
    let loss = loss_acc / total_weight;
    debug_check_finite(std::slice::from_ref(&loss), "weighted_cross_entropy");

    let node = tape.push(
        vec![tape.register_input(probs)],
        Step::WeightedCrossEntropy {
            probs: probs.data_arc(),
            shape: [n, k, h, w],
            targets: std::sync::Arc::new(target.data.clone()),
            weights: weight_map.data_arc(),
            total_weight,
        },
    );
    Ok(Tensor::from_op(vec![1], vec![loss], node))
}

pub(crate) fn weighted_ce_backward<E: Element>(
    grad_scalar: E,
    probs: &[E],
    shape: [usize; 4],
    targets: &[u8],
    weights: &[E],
    total_weight: E,
) -> Vec<E> {
    let [n, k, h, w] = shape;
    let plane = h * w;
    let floor = E::of_f64(PROB_FLOOR);
    let mut g = vec![E::zero(); probs.len()];
    for img in 0..n {
        let base = img * k * plane;
        for pix in 0..plane {
            let t = targets[img * plane + pix];
            if t == IGNORE {
                continue;
            }
            let weight = weights[img * plane + pix];
            let i = base + usize::from(t) * plane + pix;
            let pt = probs[i];
            if pt > floor {
                // d/dp of -w*ln(p)/W
                g[i] = -grad_scalar * weight / (total_weight * pt);
            }
        }
    }
    g
}
