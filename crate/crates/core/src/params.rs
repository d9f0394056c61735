use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::{Error, Result, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
    /// Batch-norm running statistics; saved with the model, never trained.
    RunningStat,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        self != ParamKind::RunningStat
    }

    /// Batch-norm affine parameters are exempt from weight decay.
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight | ParamKind::Bias)
    }
}

#[derive(Clone, Debug)]
struct Entry<T> {
    name: String,
    kind: ParamKind,
    value: Tensor<T>,
}

/// Named parameter registry. Names are unique and ordering is insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, kind: ParamKind, value: Tensor<T>) -> ParamId {
        assert!(
            self.find(name).is_none(),
            "duplicate parameter name {name}"
        );
        self.entries.push(Entry {
            name: name.to_string(),
            kind,
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Uniform in `[-bound, bound)`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        kind: ParamKind,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> ParamId {
        let value = Tensor::uniform(shape, -bound, bound, rng);
        self.add(name, kind, value)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entries[id.0].kind
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.kind(id).trainable()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind.trainable())
            .map(|e| e.value.len())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    kind: e.kind,
                    value: e.value.cast(),
                })
                .collect(),
        }
    }

    /// Replaces every value by name. Names must match exactly in both directions.
    pub fn load_named(&mut self, values: Vec<(String, Tensor<T>)>) -> Result<()> {
        let unknown: Vec<String> = values
            .iter()
            .filter(|(n, _)| self.find(n).is_none())
            .map(|(n, _)| n.clone())
            .collect();
        if !unknown.is_empty() {
            return Err(Error::UnknownParams(unknown));
        }
        let missing: Vec<String> = self
            .entries
            .iter()
            .filter(|e| !values.iter().any(|(n, _)| *n == e.name))
            .map(|e| e.name.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingParams(missing));
        }
        for (name, value) in values {
            let id = self.find(&name).expect("checked above");
            if value.shape() != self.value(id).shape() {
                return Err(Error::shape("load_named", self.value(id).shape(), value.shape()));
            }
            *self.value_mut(id) = value;
        }
        Ok(())
    }
}
