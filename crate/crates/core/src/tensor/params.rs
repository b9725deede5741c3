use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::graph::Gradients;
use super::Tensor;
use crate::error::{shape_err, Error, Result};

static NEXT_TAG: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    /// Updated by the optimizer; receives gradients.
    Trainable,
    /// State such as batch-norm running statistics.
    Buffer,
}

/// Identifies one entry of one store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamKey {
    pub(crate) store: u64,
    pub(crate) index: usize,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub kind: ParamKind,
    /// Accumulated gradient; `None` until a backward pass reaches the entry.
    pub grad: Option<Tensor>,
}

impl Param {
    pub fn requires_grad(&self) -> bool {
        self.kind == ParamKind::Trainable
    }
}

/// Ordered, named parameter container. Clones share the tag of the original,
/// so gradients computed against a copy apply to either.
#[derive(Debug, Clone)]
pub struct ParamStore {
    tag: u64,
    entries: Vec<Param>,
    index: HashMap<String, usize>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            tag: NEXT_TAG.fetch_add(1, Ordering::Relaxed),
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor, kind: ParamKind) -> Result<ParamKey> {
        if self.index.contains_key(name) {
            return Err(Error::BadConfig(format!("duplicate parameter `{name}`")));
        }
        let index = self.entries.len();
        self.entries.push(Param {
            name: name.to_string(),
            value,
            kind,
            grad: None,
        });
        self.index.insert(name.to_string(), index);
        Ok(ParamKey {
            store: self.tag,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| Error::BadConfig(format!("no parameter `{name}`")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::BadConfig(format!("no parameter `{name}`")))?;
        Ok(&mut self.entries[i].value)
    }

    /// Replaces a value, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self.value_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(shape_err(format!(
                "`{name}`: {:?} vs {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn key(&self, name: &str) -> Result<ParamKey> {
        self.index
            .get(name)
            .map(|&index| ParamKey {
                store: self.tag,
                index,
            })
            .ok_or_else(|| Error::BadConfig(format!("no parameter `{name}`")))
    }

    pub(crate) fn entry(&self, key: ParamKey) -> Option<&Param> {
        (key.store == self.tag).then(|| &self.entries[key.index])
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|p| p.requires_grad())
            .map(|p| p.value.len())
            .sum()
    }

    /// Adds the gradients belonging to this store into the grad buffers.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (key, g) in grads.params() {
            if key.store != self.tag {
                continue;
            }
            let p = &mut self.entries[key.index];
            if !p.requires_grad() {
                continue;
            }
            match p.grad.as_mut() {
                Some(buf) => buf
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(a, b)| *a += b),
                None => p.grad = Some(g.clone()),
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.entries {
            p.grad = None;
        }
    }

    /// True when no entry holds a gradient buffer.
    pub fn grads_empty(&self) -> bool {
        self.entries.iter().all(|p| p.grad.is_none())
    }
}
