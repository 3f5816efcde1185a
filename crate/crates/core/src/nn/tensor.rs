use crate::error::{Error, Result};
use crate::num::Real;

/// Dense `[batch, channel, height, width]` tensor.
///
/// Fully connected activations use `[batch, features, 1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    pub shape: [usize; 4],
    pub data: Vec<S>,
}

impl<S: Real> Tensor<S> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![S::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::Shape(format!("{} values for shape {shape:?}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.plane()
    }

    pub fn item(&self, b: usize) -> &[S] {
        let n = self.item_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn debug_check(&self, what: &str) {
        debug_assert!(self.all_finite(), "non-finite values after {what}");
    }

    /// Channel concatenation of two tensors with equal batch and plane.
    pub fn concat(a: &Self, b: &Self) -> Result<Self> {
        if a.shape[0] != b.shape[0] || a.shape[2..] != b.shape[2..] {
            return Err(Error::Shape(format!("cannot concat {:?} and {:?}", a.shape, b.shape)));
        }
        let shape = [a.shape[0], a.shape[1] + b.shape[1], a.shape[2], a.shape[3]];
        let mut data = Vec::with_capacity(shape.iter().product());
        for i in 0..a.batch() {
            data.extend_from_slice(a.item(i));
            data.extend_from_slice(b.item(i));
        }
        Ok(Tensor { shape, data })
    }

    /// Inverse of [`Tensor::concat`]: splits off the first `ca` channels.
    pub fn split(&self, ca: usize) -> (Self, Self) {
        let [bn, c, h, w] = self.shape;
        let p = h * w;
        let mut a = Tensor::zeros([bn, ca, h, w]);
        let mut b = Tensor::zeros([bn, c - ca, h, w]);
        for i in 0..bn {
            let item = self.item(i);
            a.data[i * ca * p..(i + 1) * ca * p].copy_from_slice(&item[..ca * p]);
            b.data[i * (c - ca) * p..(i + 1) * (c - ca) * p].copy_from_slice(&item[ca * p..]);
        }
        (a, b)
    }
}
