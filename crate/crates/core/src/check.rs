//! Finite-difference gradient checking.
//!
//! The analytic gradient comes from a recorded backward pass; the
//! numeric one from central differences on the sum of the function's
//! output. Non-scalar outputs are reduced with a plain sum, so the two
//! routes measure the same directional derivatives.

use crate::error::Result;
use crate::ops;
use crate::tensor::{Element, GradTape, Tensor};

/// A differentiable tensor function under test.
pub trait TensorFn<E: Element>: Fn(&GradTape<E>, &Tensor<E>) -> Result<Tensor<E>> {}
impl<E: Element, F: Fn(&GradTape<E>, &Tensor<E>) -> Result<Tensor<E>>> TensorFn<E> for F {}

/// Max relative error between the recorded gradient of `sum(f(x))` and
/// central finite differences, over every element of `x`.
pub fn finite_diff_check<E: Element, F: TensorFn<E>>(
    f: &F,
    x: &Tensor<E>,
    epsilon: f64,
) -> Result<f64> {
    let all: Vec<usize> = (0..x.numel()).collect();
    finite_diff_check_at(f, x, epsilon, &all)
}

/// Same, probing only the given flat indices (for large inputs).
pub fn finite_diff_check_at<E: Element, F: TensorFn<E>>(
    f: &F,
    x: &Tensor<E>,
    epsilon: f64,
    indices: &[usize],
) -> Result<f64> {
    let analytic = analytic_grad(f, x)?;

    let mut max_rel = 0.0f64;
    for &i in indices {
        let numeric = central_difference(f, x, i, epsilon)?;
        let a = analytic[i].as_f64();
        let denom = (a.abs() + numeric.abs()).max(1e-8);
        max_rel = max_rel.max((a - numeric).abs() / denom);
    }
    Ok(max_rel)
}

/// Gradient of `sum(f(x))` via the tape. Missing gradients (f constant
/// in x) read as zeros.
pub fn analytic_grad<E: Element, F: TensorFn<E>>(f: &F, x: &Tensor<E>) -> Result<Vec<E>> {
    let tape = GradTape::new();
    let leaf = Tensor::param(x.shape().to_vec(), x.data().to_vec())?;
    let y = f(&tape, &leaf)?;
    let scalar = if y.numel() == 1 {
        y
    } else {
        ops::sum(&tape, &y)?
    };
    tape.backward(&scalar)?;
    Ok(leaf
        .take_grad()
        .unwrap_or_else(|| vec![E::zero(); x.numel()]))
}

fn central_difference<E: Element, F: TensorFn<E>>(
    f: &F,
    x: &Tensor<E>,
    index: usize,
    epsilon: f64,
) -> Result<f64> {
    let eps = E::of_f64(epsilon);
    let plus = eval_sum(f, x, index, eps)?;
    let minus = eval_sum(f, x, index, -eps)?;
    Ok((plus - minus) / (2.0 * epsilon))
}

fn eval_sum<E: Element, F: TensorFn<E>>(
    f: &F,
    x: &Tensor<E>,
    index: usize,
    delta: E,
) -> Result<f64> {
    let mut data = x.data().to_vec();
    data[index] += delta;
    let probe = Tensor::new(x.shape().to_vec(), data)?;
    let tape = GradTape::disabled();
    let y = f(&tape, &probe)?;
    let mut acc = 0.0f64;
    for &v in y.data() {
        acc += v.as_f64();
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_zero_error_on_dyadic_inputs() {
        // Dyadic values and a power-of-two epsilon make (x+e)-(x-e) exact,
        // so both routes yield exactly 1.
        let x = Tensor::<f64>::new(vec![3], vec![1.0, 2.0, 4.0]).unwrap();
        let f = |_: &GradTape<f64>, t: &Tensor<f64>| Ok(t.clone());
        let err = finite_diff_check(&f, &x, 2.0f64.powi(-16)).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn sum_of_squares_matches_closed_form_gradient() {
        let x = Tensor::<f64>::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let f = |tape: &GradTape<f64>, t: &Tensor<f64>| ops::mul(tape, t, t);
        // Closed-form gradient is 2x; central differences on a quadratic
        // are exact up to rounding.
        let err = finite_diff_check(&f, &x, 1e-5).unwrap();
        assert!(err < 1e-7, "max relative error {err}");
        let g = analytic_grad(&f, &x).unwrap();
        assert_eq!(g, vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn random_five_op_graphs_match_finite_differences() {
        // Build random graphs of elementwise ops with fan-out and check
        // the recorded gradients against central differences.
        use rand::Rng;
        use rand::SeedableRng;
        let eps = 1e-5;
        for seed in 0..10u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 6;
            let x = Tensor::<f64>::new(
                vec![n],
                (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
            )
            .unwrap();
            let consts: Vec<Tensor<f64>> = (0..5)
                .map(|_| {
                    Tensor::new(vec![n], (0..n).map(|_| rng.random_range(-2.0..2.0)).collect())
                        .unwrap()
                })
                .collect();
            let op_choices: Vec<u8> = (0..5).map(|_| rng.random_range(0..5)).collect();
            let scalars: Vec<f64> = (0..5).map(|_| rng.random_range(-1.5..1.5)).collect();
            let f = |tape: &GradTape<f64>, t: &Tensor<f64>| {
                let mut values = vec![t.clone()];
                for (i, &op) in op_choices.iter().enumerate() {
                    let prev = values.last().unwrap().clone();
                    // Re-use an earlier value sometimes: fan-out paths.
                    let other = values[i / 2].clone();
                    let next = match op {
                        0 => ops::add(tape, &prev, &other)?,
                        1 => ops::sub(tape, &prev, &consts[i])?,
                        2 => ops::mul(tape, &prev, &other)?,
                        3 => ops::mul_scalar(tape, &prev, scalars[i])?,
                        _ => ops::relu(tape, &prev)?,
                    };
                    values.push(next);
                }
                Ok(values.pop().unwrap())
            };
            let err = finite_diff_check(&f, &x, eps).unwrap();
            assert!(err < 1e-4, "seed {seed}: max relative error {err}");
        }
    }

    #[test]
    fn conv_with_random_kernel_passes() {
        use crate::ops::conv::{conv2d, Conv2dSpec};
        let mut state = 0x12345u64;
        let mut next = move || {
            state = crate::util::mix64(state);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let x =
            Tensor::<f64>::new(vec![1, 2, 5, 5], (0..50).map(|_| next()).collect()).unwrap();
        let w =
            Tensor::<f64>::new(vec![3, 2, 3, 3], (0..54).map(|_| next()).collect()).unwrap();
        let b = Tensor::<f64>::new(vec![3], vec![0.1, -0.2, 0.3]).unwrap();
        let spec = Conv2dSpec::same(2, 3, 3, 3, 1).unwrap();
        let f = move |tape: &GradTape<f64>, t: &Tensor<f64>| conv2d(tape, t, &w, &b, &spec);
        let err = finite_diff_check(&f, &x, 1e-5).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }
}
