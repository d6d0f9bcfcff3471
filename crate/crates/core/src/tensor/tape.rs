//! Wengert tape for reverse-mode automatic differentiation.
//!
//! Ops record one node per output while a recording tape is in scope.
//! Nodes are stored in forward order, which is already a topological
//! order; [`GradTape::backward`] walks them exactly once in reverse,
//! accumulating vector-Jacobian products. Leaf tensors with gradient
//! slots receive their totals at the end of the pass.
//!
//! A tape is confined to one thread and one backward pass; calling
//! [`GradTape::backward`] a second time without re-recording is an error.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::{Element, GradCell, TapeSlot, Tensor};
use crate::error::{AvError, Result};
use crate::ops::conv::Conv2dSpec;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Saved context for one recorded operation, consumed during backward.
pub(crate) enum Step<E: Element> {
    Leaf,
    Add,
    Sub,
    Mul {
        a: Arc<Vec<E>>,
        b: Arc<Vec<E>>,
    },
    AddScalar,
    MulScalar {
        factor: E,
    },
    Relu {
        input: Arc<Vec<E>>,
    },
    Sum {
        in_len: usize,
    },
    Conv2d {
        input: Arc<Vec<E>>,
        weight: Arc<Vec<E>>,
        spec: Conv2dSpec,
        in_shape: [usize; 4],
        out_hw: (usize, usize),
    },
    MaxPool {
        argmax: Vec<usize>,
        in_len: usize,
    },
    Upsample2x {
        in_shape: [usize; 4],
    },
    BatchNormTrain {
        xhat: Vec<E>,
        inv_std: Vec<E>,
        gamma: Arc<Vec<E>>,
        shape: [usize; 4],
    },
    BatchNormEval {
        input: Arc<Vec<E>>,
        mean: Vec<E>,
        inv_std: Vec<E>,
        gamma: Arc<Vec<E>>,
        shape: [usize; 4],
    },
    Dropout {
        mask: Vec<E>,
    },
    ConcatChannels {
        channels: Vec<usize>,
        batch: usize,
        hw: (usize, usize),
    },
    SoftmaxChannels {
        probs: Arc<Vec<E>>,
        shape: [usize; 4],
    },
    WeightedCrossEntropy {
        probs: Arc<Vec<E>>,
        shape: [usize; 4],
        targets: Arc<Vec<u8>>,
        weights: Arc<Vec<E>>,
        total_weight: E,
    },
}

struct Node<E: Element> {
    /// Tape positions of the op inputs; `None` marks an input that needs
    /// no gradient (constant), letting the step skip that VJP.
    inputs: Vec<Option<usize>>,
    step: Step<E>,
}

struct TapeInner<E: Element> {
    nodes: Vec<Node<E>>,
    sinks: Vec<(usize, GradCell<E>)>,
    consumed: bool,
}

/// Dynamically recorded computation graph.
pub struct GradTape<E: Element> {
    id: u64,
    enabled: bool,
    inner: RefCell<TapeInner<E>>,
}

impl<E: Element> GradTape<E> {
    /// A recording tape for one forward/backward round.
    pub fn new() -> Self {
        GradTape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            enabled: true,
            inner: RefCell::new(TapeInner {
                nodes: Vec::new(),
                sinks: Vec::new(),
                consumed: false,
            }),
        }
    }

    /// A tape that records nothing; use for inference.
    pub fn disabled() -> Self {
        GradTape {
            id: 0,
            enabled: false,
            inner: RefCell::new(TapeInner {
                nodes: Vec::new(),
                sinks: Vec::new(),
                consumed: false,
            }),
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    /// Resolve an op input to a tape position, registering leaf tensors
    /// on first use. Returns `None` for constants (nothing upstream wants
    /// a gradient) and when the tape is disabled.
    pub(crate) fn register_input(&self, t: &Tensor<E>) -> Option<usize> {
        if !self.enabled {
            return None;
        }
        if let Some(slot) = t.node {
            if slot.tape == self.id {
                return Some(slot.node);
            }
        }
        let cell = t.grad_cell()?;
        let mut inner = self.inner.borrow_mut();
        let idx = inner.nodes.len();
        inner.nodes.push(Node {
            inputs: Vec::new(),
            step: Step::Leaf,
        });
        inner.sinks.push((idx, Arc::clone(cell)));
        Some(idx)
    }

    /// Record an op node. Skipped (returns `None`) when disabled or when
    /// no input can receive a gradient — the output is then a constant.
    pub(crate) fn push(&self, inputs: Vec<Option<usize>>, step: Step<E>) -> Option<TapeSlot> {
        if !self.enabled || inputs.iter().all(Option::is_none) {
            return None;
        }
        let mut inner = self.inner.borrow_mut();
        let idx = inner.nodes.len();
        inner.nodes.push(Node { inputs, step });
        Some(TapeSlot {
            tape: self.id,
            node: idx,
        })
    }

    /// Reverse pass from a scalar loss. Populates the gradient slot of
    /// every reachable leaf tensor that requires a gradient; accumulation
    /// across fan-out (and across backward calls) is additive.
    pub fn backward(&self, loss: &Tensor<E>) -> Result<()> {
        if !self.enabled {
            return Err(AvError::Autodiff(
                "backward called on a disabled tape".into(),
            ));
        }
        if loss.numel() != 1 {
            return Err(AvError::Autodiff(format!(
                "loss must be scalar-shaped ([1] or []), got {:?}",
                loss.shape()
            )));
        }
        let loss_node = match loss.node {
            Some(slot) if slot.tape == self.id => slot.node,
            _ => {
                return Err(AvError::Autodiff(
                    "loss is not an output recorded on this tape".into(),
                ))
            }
        };

        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(AvError::Autodiff(
                "graph already consumed by a previous backward; re-record the forward pass".into(),
            ));
        }
        inner.consumed = true;

        let n = inner.nodes.len();
        let mut grads: Vec<Option<Vec<E>>> = (0..n).map(|_| None).collect();
        grads[loss_node] = Some(vec![E::one()]);

        for i in (0..n).rev() {
            if matches!(inner.nodes[i].step, Step::Leaf) {
                continue; // leaf grads are drained into sinks below
            }
            let grad_out = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &inner.nodes[i];
            let input_grads = run_step(&node.step, &grad_out, &node.inputs);
            for (slot, grad) in node.inputs.iter().zip(input_grads) {
                if let (Some(idx), Some(g)) = (slot, grad) {
                    accumulate(&mut grads[*idx], g);
                }
            }
        }

        for (node_idx, cell) in &inner.sinks {
            if let Some(g) = grads[*node_idx].take() {
                let mut slot = cell.lock().expect("grad lock poisoned");
                match slot.as_mut() {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(g) {
                            *a += b;
                        }
                    }
                    None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}

impl<E: Element> Default for GradTape<E> {
    fn default() -> Self {
        GradTape::new()
    }
}

fn accumulate<E: Element>(slot: &mut Option<Vec<E>>, g: Vec<E>) {
    match slot.as_mut() {
        Some(acc) => {
            debug_assert_eq!(acc.len(), g.len());
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

/// Compute per-input gradients for one op. `needs[i]` mirrors whether the
/// i-th input slot is live; dead inputs may return `None` to skip work.
fn run_step<E: Element>(
    step: &Step<E>,
    grad_out: &[E],
    inputs: &[Option<usize>],
) -> Vec<Option<Vec<E>>> {
    let need = |i: usize| inputs.get(i).is_some_and(Option::is_some);
    match step {
        Step::Leaf => Vec::new(),
        Step::Add => vec![
            need(0).then(|| grad_out.to_vec()),
            need(1).then(|| grad_out.to_vec()),
        ],
        Step::Sub => vec![
            need(0).then(|| grad_out.to_vec()),
            need(1).then(|| grad_out.iter().map(|&g| -g).collect()),
        ],
        Step::Mul { a, b } => vec![
            need(0).then(|| grad_out.iter().zip(b.iter()).map(|(&g, &v)| g * v).collect()),
            need(1).then(|| grad_out.iter().zip(a.iter()).map(|(&g, &v)| g * v).collect()),
        ],
        Step::AddScalar => vec![need(0).then(|| grad_out.to_vec())],
        Step::MulScalar { factor } => {
            vec![need(0).then(|| grad_out.iter().map(|&g| g * *factor).collect())]
        }
        Step::Relu { input } => vec![need(0).then(|| {
            grad_out
                .iter()
                .zip(input.iter())
                .map(|(&g, &x)| if x > E::zero() { g } else { E::zero() })
                .collect()
        })],
        Step::Sum { in_len } => vec![need(0).then(|| vec![grad_out[0]; *in_len])],
        Step::Conv2d {
            input,
            weight,
            spec,
            in_shape,
            out_hw,
        } => {
            let (gi, gw, gb) = crate::ops::conv::conv2d_backward(
                grad_out,
                input,
                weight,
                spec,
                *in_shape,
                *out_hw,
                [need(0), need(1), need(2)],
            );
            vec![gi, gw, gb]
        }
        Step::MaxPool { argmax, in_len } => vec![need(0).then(|| {
            let mut g = vec![E::zero(); *in_len];
            for (out_idx, &src) in argmax.iter().enumerate() {
                g[src] += grad_out[out_idx];
            }
            g
        })],
        Step::Upsample2x { in_shape } => vec![need(0).then(|| {
            crate::ops::pool::upsample2x_backward(grad_out, *in_shape)
        })],
        Step::BatchNormTrain {
            xhat,
            inv_std,
            gamma,
            shape,
        } => {
            let (gi, gg, gb) = crate::ops::norm::batchnorm_train_backward(
                grad_out,
                xhat,
                inv_std,
                gamma,
                *shape,
                [need(0), need(1), need(2)],
            );
            vec![gi, gg, gb]
        }
        Step::BatchNormEval {
            input,
            mean,
            inv_std,
            gamma,
            shape,
        } => {
            let (gi, gg, gb) = crate::ops::norm::batchnorm_eval_backward(
                grad_out,
                input,
                mean,
                inv_std,
                gamma,
                *shape,
                [need(0), need(1), need(2)],
            );
            vec![gi, gg, gb]
        }
        Step::Dropout { mask } => vec![need(0).then(|| {
            grad_out
                .iter()
                .zip(mask.iter())
                .map(|(&g, &m)| g * m)
                .collect()
        })],
        Step::ConcatChannels { channels, batch, hw } => {
            let (h, w) = *hw;
            let plane = h * w;
            let total_c: usize = channels.iter().sum();
            let mut out: Vec<Option<Vec<E>>> = Vec::with_capacity(channels.len());
            let mut offset_c = 0;
            for (i, &ci) in channels.iter().enumerate() {
                if need(i) {
                    let mut g = vec![E::zero(); batch * ci * plane];
                    for n in 0..*batch {
                        let src = (n * total_c + offset_c) * plane;
                        let dst = n * ci * plane;
                        g[dst..dst + ci * plane]
                            .copy_from_slice(&grad_out[src..src + ci * plane]);
                    }
                    out.push(Some(g));
                } else {
                    out.push(None);
                }
                offset_c += ci;
            }
            out
        }
        Step::SoftmaxChannels { probs, shape } => vec![need(0).then(|| {
            crate::ops::loss::softmax_backward(grad_out, probs, *shape)
        })],
        Step::WeightedCrossEntropy {
            probs,
            shape,
            targets,
            weights,
            total_weight,
        } => vec![need(0).then(|| {
            crate::ops::loss::weighted_ce_backward(
                grad_out[0],
                probs,
                *shape,
                targets,
                weights,
                *total_weight,
            )
        })],
    }
}
