//! Dense tensors with optional gradient tracking.
//!
//! A [`Tensor`] is a shape plus a flat row-major buffer (NCHW order for
//! image data). Values are immutable after construction; the only
//! mutation paths are gradient population during a backward pass and
//! [`Tensor::data_mut`], which copy-on-writes shared storage (used by the
//! optimizer between recorded graphs).
//!
//! Training runs at `f32`; gradient checks and oracle tests instantiate
//! the same code at `f64`.

mod tape;

pub use tape::GradTape;
pub(crate) use tape::Step;

use std::fmt;
use std::sync::{Arc, Mutex};

use num_traits::Float;

use crate::error::{AvError, Result};

/// Element dtypes understood by the checkpoint format.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    U8 = 0,
    F32 = 1,
    F64 = 2,
    I64 = 3,
    U64 = 4,
}

impl Dtype {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Dtype> {
        match code {
            0 => Some(Dtype::U8),
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            3 => Some(Dtype::I64),
            4 => Some(Dtype::U64),
            _ => None,
        }
    }

    pub fn byte_size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::F32 => 4,
            Dtype::F64 | Dtype::I64 | Dtype::U64 => 8,
        }
    }
}

/// Scalar element of a tensor. Implemented for `f32` and `f64`.
pub trait Element:
    Copy
    + Send
    + Sync
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Float
    + num_traits::NumAssignOps
    + std::iter::Sum
    + 'static
{
    const DTYPE: Dtype;

    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn of_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("f32 needs 4 bytes"))
    }
}

impl Element for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn of_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("f64 needs 8 bytes"))
    }
}

/// Shared gradient slot. All clones of a leaf tensor see the same slot;
/// backward accumulates into it additively and the optimizer drains it.
pub(crate) type GradCell<E> = Arc<Mutex<Option<Vec<E>>>>;

/// Position of an op output on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct TapeSlot {
    pub tape: u64,
    pub node: usize,
}

/// Dense N-dimensional array, row-major, with optional gradient tracking.
#[derive(Clone)]
pub struct Tensor<E: Element> {
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
    grad: Option<GradCell<E>>,
    pub(crate) node: Option<TapeSlot>,
}

impl<E: Element> Tensor<E> {
    /// Build a tensor, validating that the shape matches the data length.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<E>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(AvError::arg(format!(
                "tensor shape {:?} implies {} elements but data has {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            grad: None,
            node: None,
        })
    }

    /// Leaf tensor that receives gradients during backward passes.
    pub fn param(shape: impl Into<Vec<usize>>, data: Vec<E>) -> Result<Self> {
        let mut t = Tensor::new(shape, data)?;
        t.grad = Some(Arc::new(Mutex::new(None)));
        Ok(t)
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![E::zero(); numel]),
            grad: None,
            node: None,
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: E) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![value; numel]),
            grad: None,
            node: None,
        }
    }

    pub fn scalar(value: E) -> Self {
        Tensor {
            shape: vec![1],
            data: Arc::new(vec![value]),
            grad: None,
            node: None,
        }
    }

    /// Op-output constructor: shape is trusted, node links into a tape.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<E>, node: Option<TapeSlot>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data: Arc::new(data),
            grad: None,
            node,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    /// Mutable access to the underlying buffer (copy-on-write when the
    /// storage is shared). Detaches the tensor from any recorded graph:
    /// a mutated value no longer corresponds to the recorded output.
    pub fn data_mut(&mut self) -> &mut [E] {
        self.node = None;
        let vec: &mut Vec<E> = Arc::make_mut(&mut self.data);
        vec.as_mut_slice()
    }

    /// Row-major element lookup by multi-dimensional index.
    pub fn at(&self, index: &[usize]) -> E {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(self.shape.iter()).enumerate() {
            assert!(ix < dim, "index {ix} out of bounds for axis {i} (dim {dim})");
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    pub fn requires_grad(&self) -> bool {
        self.grad.is_some()
    }

    /// Copy of the accumulated gradient, if any backward pass reached
    /// this tensor since the last drain.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.grad
            .as_ref()
            .and_then(|cell| cell.lock().expect("grad lock poisoned").clone())
    }

    /// Remove and return the accumulated gradient.
    pub fn take_grad(&self) -> Option<Vec<E>> {
        self.grad
            .as_ref()
            .and_then(|cell| cell.lock().expect("grad lock poisoned").take())
    }

    pub fn zero_grad(&self) {
        if let Some(cell) = &self.grad {
            *cell.lock().expect("grad lock poisoned") = None;
        }
    }

    pub(crate) fn grad_cell(&self) -> Option<&GradCell<E>> {
        self.grad.as_ref()
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<E>> {
        Arc::clone(&self.data)
    }

    /// Same values, no grad tracking and no graph link.
    pub fn detach(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            grad: None,
            node: None,
        }
    }

    /// Convert the element type; the result is a fresh constant leaf.
    pub fn cast<T: Element>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| T::of_f64(v.as_f64())).collect()),
            grad: None,
            node: None,
        }
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head: Vec<&E> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad())
            .field("head", &head)
            .finish()
    }
}

/// Debug-mode finiteness check run after every forward op.
#[inline]
pub(crate) fn debug_check_finite<E: Element>(data: &[E], op: &str) {
    if cfg!(debug_assertions) {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            panic!("{op}: non-finite output at flat index {i}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_length_must_agree() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        let err = Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(err.to_string().contains("6"));
    }

    #[test]
    fn at_indexes_row_major() {
        let t = Tensor::new(vec![2, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t.at(&[0, 0]), 0.0);
        assert_eq!(t.at(&[1, 2]), 5.0);
    }

    #[test]
    fn grad_cell_shared_across_clones() {
        let p = Tensor::<f64>::param(vec![2], vec![1.0, 2.0]).unwrap();
        let q = p.clone();
        assert!(p.grad().is_none());
        // Simulate a backward sink.
        *p.grad_cell().unwrap().lock().unwrap() = Some(vec![3.0, 4.0]);
        assert_eq!(q.grad().unwrap(), vec![3.0, 4.0]);
        assert_eq!(q.take_grad().unwrap(), vec![3.0, 4.0]);
        assert!(p.grad().is_none());
    }

    #[test]
    fn cast_round_trips_f32_through_f64() {
        let t = Tensor::<f32>::new(vec![3], vec![0.1, -2.5, 7.25]).unwrap();
        let back: Tensor<f32> = t.cast::<f64>().cast();
        assert_eq!(t.data(), back.data());
    }
}
