use super::NnError;
use crate::scalar::Real;

/// Dense `(N, C, D, H, W)` tensor, W fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 5],
    data: Vec<T>,
    /// Gradient of the last backward pass, when this tensor was a leaf.
    pub grad: Option<Vec<T>>,
    pub requires_grad: bool,
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: [usize; 5], data: Vec<T>) -> Result<Self, NnError> {
        let n = numel(shape);
        if data.len() != n {
            return Err(NnError::ShapeMismatch(format!(
                "data length {} does not match shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: [usize; 5]) -> Self {
        Self {
            shape,
            data: vec![T::zero(); numel(shape)],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn full(shape: [usize; 5], v: T) -> Self {
        Self {
            shape,
            data: vec![v; numel(shape)],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(v: T) -> Self {
        Self::full([1; 5], v)
    }

    /// Marks the tensor as a trainable leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    /// Spatial extent `(D, H, W)`.
    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[2], self.shape[3], self.shape[4]]
    }

    /// Concatenates tensors along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self, NnError> {
        let first = items
            .first()
            .ok_or_else(|| NnError::ShapeMismatch("cannot stack zero tensors".into()))?;
        let [_, c, d, h, w] = first.shape;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        let mut n = 0;
        for t in items {
            let [tn, tc, td, th, tw] = t.shape;
            if [tc, td, th, tw] != [c, d, h, w] {
                return Err(NnError::ShapeMismatch(format!(
                    "stack: {:?} vs {:?}",
                    t.shape, first.shape
                )));
            }
            n += tn;
            data.extend_from_slice(&t.data);
        }
        Self::from_vec([n, c, d, h, w], data)
    }

    /// Batch item `i` as an `(1, C, D, H, W)` tensor.
    pub fn batch_item(&self, i: usize) -> Self {
        let per = self.numel() / self.shape[0];
        let mut shape = self.shape;
        shape[0] = 1;
        Self::from_vec(shape, self.data[i * per..(i + 1) * per].to_vec()).expect("slice matches")
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            grad: None,
            requires_grad: self.requires_grad,
        }
    }
}

pub fn numel(shape: [usize; 5]) -> usize {
    shape.iter().product()
}
