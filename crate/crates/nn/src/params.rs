//! Named parameter storage shared between models, the optimizer and
//! checkpoints.

use std::sync::Arc;

use rand::{Rng, RngCore};

use crate::error::{NnError, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, uniquely named parameters.
///
/// Values are reference counted so a forward graph can borrow them without
/// copying; the optimizer gets exclusive access again once graphs are dropped.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Arc<Tensor<T>>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(Arc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn shared(&self, id: ParamId) -> Arc<Tensor<T>> {
        Arc::clone(&self.values[id.0])
    }

    /// Mutable access; clones the tensor first if a graph still holds it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().map(|v| v.as_ref()))
    }

    /// Total number of scalars across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|v| Arc::new(v.cast())).collect(),
        }
    }

    /// Overwrites every parameter with the same-named tensor from `other`.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(NnError::CheckpointMismatch(format!(
                "expected {} parameters, found {}",
                self.len(),
                other.len()
            )));
        }
        for i in 0..self.names.len() {
            let src = other.id_of(&self.names[i]).ok_or_else(|| {
                NnError::CheckpointMismatch(format!("missing parameter {}", self.names[i]))
            })?;
            let value = other.get(src);
            if value.shape() != self.values[i].shape() {
                return Err(NnError::CheckpointMismatch(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    self.names[i],
                    value.shape(),
                    self.values[i].shape()
                )));
            }
            self.values[i] = Arc::new(value.clone());
        }
        Ok(())
    }
}

/// Creates parameters under a dotted name prefix.
pub struct ParamBuilder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut dyn RngCore,
    prefix: String,
}

impl<'a, T: Real> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut dyn RngCore) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    /// Builder for a nested scope, e.g. `enc.0.attn`.
    pub fn scope(&mut self, name: &str) -> ParamBuilder<'_, T> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    /// Uniform in ±1/sqrt(fan_in), where fan_in is the row count.
    pub fn uniform_fan_in(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let bound = 1.0 / (rows.max(1) as f64).sqrt();
        self.uniform(name, rows, cols, bound)
    }

    pub fn uniform(&mut self, name: &str, rows: usize, cols: usize, bound: f64) -> ParamId {
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(rows, cols, |_, _| {
            T::from_f64_lossy(rng.gen_range(-bound..=bound))
        });
        self.store.add(self.full_name(name), t)
    }

    pub fn constant(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> ParamId {
        let t = Tensor::full(rows, cols, T::from_f64_lossy(value));
        self.store.add(self.full_name(name), t)
    }
}
