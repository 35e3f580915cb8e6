//! Dense row-major tensor used by every layer.

use super::Scalar;

/// Row-major tensor of up to four dimensions; (N,C,H,W) for activations,
/// degenerate shapes like (N,K) or (C,) for matrices and vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![T::zero(); numel] }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![value; numel] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// (N,C,H,W) view of the shape; panics if the tensor is not rank 4.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        self.try_dims4().unwrap()
    }

    /// (rows, cols) view of the shape; panics if the tensor is not rank 2.
    pub fn dims2(&self) -> (usize, usize) {
        self.try_dims2().unwrap()
    }

    pub fn try_dims4(&self) -> Result<(usize, usize, usize, usize), String> {
        if self.shape.len() != 4 {
            return Err(format!("expected rank-4 tensor, got shape {:?}", self.shape));
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    pub fn try_dims2(&self) -> Result<(usize, usize), String> {
        if self.shape.len() != 2 {
            return Err(format!("expected rank-2 tensor, got shape {:?}", self.shape));
        }
        Ok((self.shape[0], self.shape[1]))
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

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshape(mut self, shape: Vec<usize>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: T) {
        self.data.fill(value);
    }

    /// Element-wise conversion into another scalar type (f32 ↔ f64).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect())
    }
}
