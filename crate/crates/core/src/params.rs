//! Named trainable tensors with gradient and Adam moment slots.

use std::collections::HashMap;

use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::{Matrix, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("parameter `{0}` already exists")]
    Duplicate(String),
    #[error("unknown parameter `{0}`")]
    Unknown(String),
    #[error("parameter `{name}`: expected shape {expected:?}, got {actual:?}")]
    Shape {
        name: String,
        expected: (usize, usize),
        actual: (usize, usize),
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry<T: Scalar = f32> {
    pub name: String,
    pub value: Matrix<T>,
    pub grad: Matrix<T>,
    pub m: Matrix<T>,
    pub v: Matrix<T>,
}

/// Insertion-ordered parameter collection. Iteration order is the
/// registration order, which keeps checkpoints and updates deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Scalar = f32> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Matrix<T>) -> Result<ParamId, ParamError> {
        if self.index.contains_key(name) {
            return Err(ParamError::Duplicate(name.to_string()));
        }
        let (r, c) = value.shape();
        let id = self.entries.len();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            grad: Matrix::zeros(r, c),
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
        });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    /// Weight of shape `fan_in × fan_out` drawn from
    /// `U(-sqrt(1/fan_in), +sqrt(1/fan_in))`.
    pub fn add_weight(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut Rng,
    ) -> Result<ParamId, ParamError> {
        let bound = (1.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::of(rng.uniform(-bound, bound)))
            .collect();
        let value = Matrix::from_vec(fan_in, fan_out, data).expect("length matches");
        self.add(name, value)
    }

    /// Zero bias row of width `n`.
    pub fn add_bias(&mut self, name: &str, n: usize) -> Result<ParamId, ParamError> {
        self.add(name, Matrix::zeros(1, n))
    }

    pub fn id(&self, name: &str) -> Result<ParamId, ParamError> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| ParamError::Unknown(name.to_string()))
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry<T> {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix<T> {
        &self.entries[id.0].grad
    }

    /// Replaces a value, keeping the registered shape.
    pub fn set_value(&mut self, id: ParamId, value: Matrix<T>) -> Result<(), ParamError> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(ParamError::Shape {
                name: e.name.clone(),
                expected: e.value.shape(),
                actual: value.shape(),
            });
        }
        e.value = value;
        Ok(())
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Matrix<T>) {
        let e = &mut self.entries[id.0];
        for (a, &b) in e.grad.data_mut().iter_mut().zip(g.data()) {
            *a = *a + b;
        }
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    /// Copy of the values (moments and grads reset) in another precision.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for e in &self.entries {
            out.add(&e.name, e.value.cast()).expect("names already unique");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_unique_and_shapes_tracked() {
        let mut s = ParamStore::<f32>::new();
        let mut rng = Rng::new(1);
        let w = s.add_weight("w", 3, 2, &mut rng).unwrap();
        assert_eq!(s.add_bias("w", 2), Err(ParamError::Duplicate("w".into())));
        assert_eq!(s.grad(w).shape(), (3, 2));
        assert_eq!(s.entry(w).m.shape(), (3, 2));
        assert!(s.set_value(w, Matrix::zeros(2, 3)).is_err());
        let bound = (1.0f32 / 3.0).sqrt();
        assert!(s.value(w).data().iter().all(|x| x.abs() <= bound));
    }
}
