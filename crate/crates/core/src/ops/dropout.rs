//! Inverted dropout: survivors are scaled by 1/(1-rate) at train time so
//! eval mode is exactly the identity.

use super::Mode;
use crate::error::{AvError, Result};
use crate::tensor::{Element, GradTape, Step, Tensor};
use crate::util::unit_f64;

/// Zero each element with probability `rate` (train mode only), scaling
/// survivors by `1/(1-rate)`. The mask is a pure function of
/// `(rng_seed, element index)`, so results are reproducible and
/// independent of evaluation order.
pub fn dropout<E: Element>(
    tape: &GradTape<E>,
    input: &Tensor<E>,
    rate: f64,
    mode: Mode,
    rng_seed: u64,
) -> Result<Tensor<E>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(AvError::arg(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    if !mode.is_train() || rate == 0.0 {
        return Ok(input.clone());
    }
    let scale = E::of_f64(1.0 / (1.0 - rate));
    let mut mask = vec![E::zero(); input.numel()];
    let mut data = vec![E::zero(); input.numel()];
    for (i, (&x, m)) in input.data().iter().zip(mask.iter_mut()).enumerate() {
        if unit_f64(rng_seed, i as u64) >= rate {
            *m = scale;
            data[i] = x * scale;
        }
    }
    let node = tape.push(vec![tape.register_input(input)], Step::Dropout { mask });
    Ok(Tensor::from_op(input.shape().to_vec(), data, node))
}
