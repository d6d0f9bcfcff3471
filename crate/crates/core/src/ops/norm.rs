//! Batch normalization over NCHW feature maps.

use std::sync::Mutex;

use super::Mode;
use crate::error::{AvError, Result};
use crate::tensor::{debug_check_finite, Element, GradTape, Step, Tensor};

/// Per-channel batch normalization state: learned scale/shift plus
/// running statistics for eval mode. Running stats live behind a mutex
/// so a frozen model can run eval-mode forward from several threads;
/// train-mode updates must still be serialized by the single training
/// loop that owns the model.
pub struct BatchNorm2d<E: Element> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    running: Mutex<RunningStats<E>>,
    pub momentum: f64,
    pub epsilon: f64,
    channels: usize,
}

#[derive(Clone)]
struct RunningStats<E> {
    mean: Vec<E>,
    var: Vec<E>,
}

impl<E: Element> BatchNorm2d<E> {
    /// Fresh state: gamma = 1, beta = 0, running mean 0 / variance 1.
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Tensor::param(vec![channels], vec![E::one(); channels])
                .expect("shape matches data"),
            beta: Tensor::param(vec![channels], vec![E::zero(); channels])
                .expect("shape matches data"),
            running: Mutex::new(RunningStats {
                mean: vec![E::zero(); channels],
                var: vec![E::one(); channels],
            }),
            momentum: 0.1,
            epsilon: 1e-5,
            channels,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn running_stats(&self) -> (Vec<E>, Vec<E>) {
        let s = self.running.lock().expect("bn lock poisoned");
        (s.mean.clone(), s.var.clone())
    }

    pub fn set_running_stats(&self, mean: Vec<E>, var: Vec<E>) -> Result<()> {
        if mean.len() != self.channels || var.len() != self.channels {
            return Err(AvError::arg(format!(
                "batchnorm running stats length {}/{} does not match {} channels",
                mean.len(),
                var.len(),
                self.channels
            )));
        }
        let mut s = self.running.lock().expect("bn lock poisoned");
        s.mean = mean;
        s.var = var;
        Ok(())
    }
}

/// Train mode normalizes with batch statistics (biased variance over
/// N*H*W per channel) and folds them into the running stats; eval mode
/// reads the running stats only.
pub fn batchnorm2d<E: Element>(
    tape: &GradTape<E>,
    input: &Tensor<E>,
    state: &BatchNorm2d<E>,
    mode: Mode,
) -> Result<Tensor<E>> {
    let shape = input.shape();
    if shape.len() != 4 {
        return Err(AvError::arg(format!(
            "batchnorm2d expects NCHW input, got {shape:?}"
        )));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if c != state.channels {
        return Err(AvError::arg(format!(
            "batchnorm2d: input has {c} channels, state has {}",
            state.channels
        )));
    }
    if mode.is_train() {
        batchnorm_train(tape, input, state, [n, c, h, w])
    } else {
        batchnorm_eval(tape, input, state, [n, c, h, w])
    }
}

fn batchnorm_train<E: Element>(
    tape: &GradTape<E>,
    input: &Tensor<E>,
    state: &BatchNorm2d<E>,
    shape: [usize; 4],
) -> Result<Tensor<E>> {
    let [n, c, h, w] = shape;
    let m = n * h * w;
    if m < 2 {
        return Err(AvError::arg(
            "batchnorm2d train mode needs at least 2 elements per channel \
             (variance is undefined otherwise)",
        ));
    }
    let data = input.data();
    let plane = h * w;
    let m_e = E::of_f64(m as f64);

    let mut mean = vec![E::zero(); c];
    let mut var = vec![E::zero(); c];
    for ch in 0..c {
        let mut acc = E::zero();
        for img in 0..n {
            let base = (img * c + ch) * plane;
            for &v in &data[base..base + plane] {
                acc += v;
            }
        }
        mean[ch] = acc / m_e;
        let mu = mean[ch];
        let mut sq = E::zero();
        for img in 0..n {
            let base = (img * c + ch) * plane;
            for &v in &data[base..base + plane] {
                let d = v - mu;
                sq += d * d;
            }
        }
        var[ch] = sq / m_e;
    }

    let eps = E::of_f64(state.epsilon);
    let inv_std: Vec<E> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();

    let gamma = state.gamma.data();
    let beta = state.beta.data();
    let mut xhat = vec![E::zero(); data.len()];
    let mut out = vec![E::zero(); data.len()];
    for img in 0..n {
        for ch in 0..c {
            let base = (img * c + ch) * plane;
            let (mu, istd, g, b) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for i in base..base + plane {
                let xh = (data[i] - mu) * istd;
                xhat[i] = xh;
                out[i] = xh * g + b;
            }
        }
    }
    debug_check_finite(&out, "batchnorm2d");

    {
        let mut running = state.running.lock().expect("bn lock poisoned");
        let mom = E::of_f64(state.momentum);
        let keep = E::one() - mom;
        for ch in 0..c {
            running.mean[ch] = keep * running.mean[ch] + mom * mean[ch];
            running.var[ch] = keep * running.var[ch] + mom * var[ch];
        }
    }

    let node = tape.push(
        vec![
            tape.register_input(input),
            tape.register_input(&state.gamma),
            tape.register_input(&state.beta),
        ],
        Step::BatchNormTrain {
            xhat,
            inv_std,
            gamma: state.gamma.data_arc(),
            shape,
        },
    );
    Ok(Tensor::from_op(shape.to_vec(), out, node))
}

fn batchnorm_eval<E: Element>(
    tape: &GradTape<E>,
    input: &Tensor<E>,
    state: &BatchNorm2d<E>,
    shape: [usize; 4],
) -> Result<Tensor<E>> {
    let [n, c, h, w] = shape;
    let plane = h * w;
    let eps = E::of_f64(state.epsilon);
    let (mean, var) = {
        let s = state.running.lock().expect("bn lock poisoned");
        (s.mean.clone(), s.var.clone())
    };
    let inv_std: Vec<E> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();

    let data = input.data();
    let gamma = state.gamma.data();
    let beta = state.beta.data();
    let mut out = vec![E::zero(); data.len()];
    for img in 0..n {
        for ch in 0..c {
            let base = (img * c + ch) * plane;
            let (mu, istd, g, b) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for i in base..base + plane {
                out[i] = (data[i] - mu) * istd * g + b;
            }
        }
    }
    debug_check_finite(&out, "batchnorm2d");

    let node = tape.push(
        vec![
            tape.register_input(input),
            tape.register_input(&state.gamma),
            tape.register_input(&state.beta),
        ],
        Step::BatchNormEval {
            input: input.data_arc(),
            mean,
            inv_std,
            gamma: state.gamma.data_arc(),
            shape,
        },
    );
    Ok(Tensor::from_op(shape.to_vec(), out, node))
}

/// VJP through train-mode batch statistics:
/// dx = gamma*istd * (g - mean(g) - xhat * mean(g*xhat)) per channel.
#[allow(clippy::type_complexity)]
pub(crate) fn batchnorm_train_backward<E: Element>(
    grad_out: &[E],
    xhat: &[E],
    inv_std: &[E],
    gamma: &[E],
    shape: [usize; 4],
    need: [bool; 3],
) -> (Option<Vec<E>>, Option<Vec<E>>, Option<Vec<E>>) {
    let [n, c, h, w] = shape;
    let plane = h * w;
    let m = E::of_f64((n * plane) as f64);

    let mut sum_g = vec![E::zero(); c];
    let mut sum_gx = vec![E::zero(); c];
    for img in 0..n {
        for ch in 0..c {
            let base = (img * c + ch) * plane;
            for i in base..base + plane {
                sum_g[ch] += grad_out[i];
                sum_gx[ch] += grad_out[i] * xhat[i];
            }
        }
    }

    let d_input = need[0].then(|| {
        let mut g = vec![E::zero(); grad_out.len()];
        for img in 0..n {
            for ch in 0..c {
                let base = (img * c + ch) * plane;
                let scale = gamma[ch] * inv_std[ch];
                let mg = sum_g[ch] / m;
                let mgx = sum_gx[ch] / m;
                for i in base..base + plane {
                    g[i] = scale * (grad_out[i] - mg - xhat[i] * mgx);
                }
            }
        }
        g
    });
    let d_gamma = need[1].then(|| sum_gx.clone());
    let d_beta = need[2].then(|| sum_g.clone());
    (d_input, d_gamma, d_beta)
}

/// VJP through the frozen (eval) affine read of running stats.
#[allow(clippy::type_complexity)]
pub(crate) fn batchnorm_eval_backward<E: Element>(
    grad_out: &[E],
    input: &[E],
    mean: &[E],
    inv_std: &[E],
    gamma: &[E],
    shape: [usize; 4],
    need: [bool; 3],
) -> (Option<Vec<E>>, Option<Vec<E>>, Option<Vec<E>>) {
    let [n, c, h, w] = shape;
    let plane = h * w;

    let d_input = need[0].then(|| {
        let mut g = vec![E::zero(); grad_out.len()];
        for img in 0..n {
            for ch in 0..c {
                let base = (img * c + ch) * plane;
                let a = gamma[ch] * inv_std[ch];
                for i in base..base + plane {
                    g[i] = grad_out[i] * a;
                }
            }
        }
        g
    });
    let d_gamma = need[1].then(|| {
        let mut g = vec![E::zero(); c];
        for img in 0..n {
            for ch in 0..c {
                let base = (img * c + ch) * plane;
                for i in base..base + plane {
                    g[ch] += grad_out[i] * (input[i] - mean[ch]) * inv_std[ch];
                }
            }
        }
        g
    });
    let d_beta = need[2].then(|| {
        let mut g = vec![E::zero(); c];
        for img in 0..n {
            for (ch, slot) in g.iter_mut().enumerate() {
                let base = (img * c + ch) * plane;
                for &go in &grad_out[base..base + plane] {
                    *slot += go;
                }
            }
        }
        g
    });
    (d_input, d_gamma, d_beta)
}
