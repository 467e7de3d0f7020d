use std::fmt::Debug;

use num_traits::Float;

use crate::{NnError, Result};

/// Maximum number of axes a [`Tensor`] may carry.
pub const MAX_RANK: usize = 4;

/// Floating point element type of a tensor.
///
/// Networks are stored in `f32`; gradient checks run the same code in `f64`.
pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major dense array with at most [`MAX_RANK`] axes.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F = f32> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(shape.len() <= MAX_RANK, "rank {} exceeds {MAX_RANK}", shape.len());
        Self {
            shape: shape.to_vec(),
            data: vec![F::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        if shape.len() > MAX_RANK {
            return Err(NnError::Shape(format!("rank {} exceeds {MAX_RANK}", shape.len())));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NnError::Shape(format!("shape {shape:?} holds {n} values, got {}", data.len())));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn from_f64_slice(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| F::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// Number of elements per index of the leading axis.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[F] {
        let r = self.row_len();
        &self.data[i * r..(i + 1) * r]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.len() > MAX_RANK {
            return Err(NnError::Shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(F, F) -> F) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(NnError::Shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: F) -> Self {
        self.map(|v| v * s)
    }

    /// `a * self + b * other`, elementwise.
    pub fn lincomb(&self, a: F, other: &Self, b: F) -> Result<Self> {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn sum_sq_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    /// Concatenate along axis 1 (the channel axis).
    pub fn concat_channels(&self, other: &Self) -> Result<Self> {
        if self.rank() < 2 || self.rank() != other.rank() || self.shape[0] != other.shape[0] || self.shape[2..] != other.shape[2..] {
            return Err(NnError::Shape(format!("cannot concat {:?} with {:?} on channels", self.shape, other.shape)));
        }
        let n = self.shape[0];
        let (ra, rb) = (self.row_len(), other.row_len());
        let mut data = Vec::with_capacity(self.numel() + other.numel());
        for i in 0..n {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        let mut shape = self.shape.clone();
        shape[1] += other.shape[1];
        debug_assert_eq!(data.len(), n * (ra + rb));
        Ok(Self { shape, data })
    }

    /// Select `len` consecutive indices of the leading axis starting at `start`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Self> {
        let n = *self.shape.first().unwrap_or(&0);
        if start + len > n {
            return Err(NnError::Shape(format!("rows {start}..{} out of range for leading extent {n}", start + len)));
        }
        let r = self.row_len();
        let mut shape = self.shape.clone();
        shape[0] = len;
        Ok(Self {
            shape,
            data: self.data[start * r..(start + len) * r].to_vec(),
        })
    }

    /// Concatenate tensors along the leading axis.
    pub fn stack_rows(parts: &[Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| NnError::Shape("cannot stack zero tensors".into()))?;
        let mut shape = first.shape.clone();
        shape[0] = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape[1..] != first.shape[1..] {
                return Err(NnError::Shape(format!("cannot stack {:?} onto {:?}", p.shape, first.shape)));
            }
            shape[0] += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Self { shape, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec(&[1, 1, 1, 1, 1], vec![0.0]).is_err());
        assert_eq!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).unwrap().numel(), 6);
    }

    #[test]
    fn concat_channels_interleaves_rows() {
        let a = Tensor::<f32>::from_vec(&[2, 1, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2, 2, 2], vec![5., 6., 7., 8., 9., 10., 11., 12.]).unwrap();
        let c = a.concat_channels(&b).unwrap();
        assert_eq!(c.shape(), &[2, 3, 2]);
        assert_eq!(c.data(), &[1., 2., 5., 6., 7., 8., 3., 4., 9., 10., 11., 12.]);
    }

    #[test]
    fn slice_and_stack_round_trip() {
        let t = Tensor::<f32>::from_vec(&[4, 2], (0..8).map(|v| v as f32).collect()).unwrap();
        let parts = vec![t.slice_rows(0, 1).unwrap(), t.slice_rows(1, 3).unwrap()];
        assert_eq!(Tensor::stack_rows(&parts).unwrap(), t);
        assert!(t.slice_rows(3, 2).is_err());
    }
}
