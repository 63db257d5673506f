use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use crate::error::{config_err, Result};
use crate::tensor::Tensor;

/// Named parameter tensors. Immutable once built and cheap to share.
#[derive(Debug, Default)]
pub struct WeightStore {
    tensors: BTreeMap<String, Arc<Tensor>>,
    reads: Option<Mutex<BTreeSet<String>>>,
}

impl Clone for WeightStore {
    fn clone(&self) -> Self {
        Self {
            tensors: self.tensors.clone(),
            reads: None,
        }
    }
}

impl PartialEq for WeightStore {
    fn eq(&self, other: &Self) -> bool {
        self.tensors == other.tensors
    }
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Option<Arc<Tensor>> {
        self.tensors.insert(name.into(), Arc::new(tensor))
    }

    pub fn get(&self, name: &str) -> Result<Arc<Tensor>> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| config_err!("weight store has no tensor named {name:?}"))?;
        if let Some(reads) = &self.reads {
            reads.lock().unwrap().insert(name.to_string());
        }
        Ok(Arc::clone(t))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Tensors in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v.as_ref()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Starts recording which names are fetched through [`WeightStore::get`].
    pub fn track_reads(mut self) -> Self {
        self.reads = Some(Mutex::new(BTreeSet::new()));
        self
    }

    pub fn reads(&self) -> BTreeSet<String> {
        self.reads
            .as_ref()
            .map(|r| r.lock().unwrap().clone())
            .unwrap_or_default()
    }

    pub fn scope(&self, prefix: impl Into<String>) -> Scope<'_> {
        Scope {
            store: self,
            prefix: prefix.into(),
        }
    }
}

/// Dotted-path view into a [`WeightStore`].
#[derive(Clone)]
pub struct Scope<'a> {
    store: &'a WeightStore,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn get(&self, name: &str) -> Result<Arc<Tensor>> {
        self.store.get(&join(&self.prefix, name))
    }

    pub fn sub(&self, name: impl std::fmt::Display) -> Scope<'a> {
        Scope {
            store: self.store,
            prefix: join(&self.prefix, &name.to_string()),
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    /// Fetches a tensor and checks its shape.
    pub fn get_shaped(&self, name: &str, shape: &[usize]) -> Result<Arc<Tensor>> {
        let t = self.get(name)?;
        if t.shape() != shape {
            return Err(config_err!(
                "tensor {:?} has shape {:?}, expected {shape:?}",
                join(&self.prefix, name),
                t.shape()
            ));
        }
        Ok(t)
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
