use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, NamedMatrix};
use crate::scalar::Scalar;

/// Handle to a registered parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Matrix<T>,
    pub grad: Matrix<T>,
}

/// Flat registry of trainable matrices with gradient storage.
///
/// Names are unique and every gradient has the shape of its value.
#[derive(Debug, Clone, Default)]
pub struct ParameterTape<T = f64> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, ParamId>,
    grads_ready: bool,
}

impl<T: Scalar> ParameterTape<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
            grads_ready: false,
        }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Matrix<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.entries.len());
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.entries.push(ParamEntry {
            name: name.clone(),
            value,
            grad,
        });
        self.index.insert(name, id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
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

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.entries[id.0].grad
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    /// True once a backward pass has populated the gradients.
    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }

    pub(crate) fn mark_grads_ready(&mut self) {
        self.grads_ready = true;
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(T::zero());
        }
    }

    /// Same names and values in another scalar type; gradients are zeroed.
    pub fn cast<U: Scalar>(&self) -> ParameterTape<U> {
        ParameterTape {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    grad: Matrix::zeros(e.value.rows(), e.value.cols()),
                })
                .collect(),
            index: self.index.clone(),
            grads_ready: false,
        }
    }

    pub fn to_named(&self) -> Vec<NamedMatrix> {
        self.entries.iter().map(|e| e.value.to_named(&e.name)).collect()
    }

    /// Overwrite values from serialized matrices. Every registered
    /// parameter must be present with a matching shape.
    pub fn load_named(&mut self, matrices: &[NamedMatrix]) -> Result<()> {
        let by_name: HashMap<&str, &NamedMatrix> =
            matrices.iter().map(|m| (m.name.as_str(), m)).collect();
        for e in &mut self.entries {
            let m = by_name
                .get(e.name.as_str())
                .ok_or_else(|| Error::invalid(format!("missing parameter {:?}", e.name)))?;
            if (m.rows, m.cols) != e.value.shape() {
                return Err(Error::invalid(format!(
                    "parameter {:?}: expected {}x{}, found {}x{}",
                    e.name,
                    e.value.rows(),
                    e.value.cols(),
                    m.rows,
                    m.cols
                )));
            }
            e.value = m.to_matrix()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut tape = ParameterTape::<f64>::new();
        tape.register("w", Matrix::zeros(2, 2)).unwrap();
        assert!(tape.register("w", Matrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn grads_match_value_shape() {
        let mut tape = ParameterTape::<f64>::new();
        let id = tape.register("w", Matrix::zeros(3, 2)).unwrap();
        assert_eq!(tape.grad(id).shape(), (3, 2));
        assert!(!tape.grads_ready());
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let mut tape = ParameterTape::<f64>::new();
        tape.register("w", Matrix::zeros(2, 2)).unwrap();
        let bad = Matrix::<f64>::zeros(3, 2).to_named("w");
        assert!(tape.load_named(&[bad]).is_err());
    }
}
