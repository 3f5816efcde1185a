use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::num::Real;

/// Name and shape of one stored tensor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Index of a trainable tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Index of a non-trainable buffer (batch-norm running statistics).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BufferId(pub usize);

/// Trainable parameters and buffers, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S> {
    pub specs: Vec<ParamSpec>,
    pub values: Vec<Vec<S>>,
    pub buffer_specs: Vec<ParamSpec>,
    pub buffers: Vec<Vec<S>>,
}

/// Gradient buffers shaped like [`ParamStore::values`].
pub type Grads<S> = Vec<Vec<S>>;

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            specs: Vec::new(),
            values: Vec::new(),
            buffer_specs: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn add(&mut self, name: String, shape: Vec<usize>, values: Vec<S>) -> ParamId {
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        self.specs.push(ParamSpec { name, shape });
        self.values.push(values);
        ParamId(self.values.len() - 1)
    }

    pub fn add_buffer(&mut self, name: String, shape: Vec<usize>, values: Vec<S>) -> BufferId {
        self.buffer_specs.push(ParamSpec { name, shape });
        self.buffers.push(values);
        BufferId(self.buffers.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &[S] {
        &self.values[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &[S] {
        &self.buffers[id.0]
    }

    pub fn zero_grads(&self) -> Grads<S> {
        self.values.iter().map(|v| vec![S::zero(); v.len()]).collect()
    }

    /// Number of trainable scalars.
    pub fn count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn cast<T: Real>(&self) -> ParamStore<T> {
        let conv = |vs: &Vec<Vec<S>>| vs.iter().map(|v| v.iter().map(|x| T::of(x.to_f64v())).collect()).collect();
        ParamStore {
            specs: self.specs.clone(),
            values: conv(&self.values),
            buffer_specs: self.buffer_specs.clone(),
            buffers: conv(&self.buffers),
        }
    }
}

/// Kaiming-uniform draw with ReLU gain: `U(-b, b)`, `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<S: Real, R: Rng + ?Sized>(rng: &mut R, n: usize, fan_in: usize) -> Vec<S> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| S::of(rng.random_range(-bound..bound))).collect()
}
