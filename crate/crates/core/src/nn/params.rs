//! Named parameter storage, tape binding, and checkpoint I/O.
//!
//! A [`ParamSet`] owns every tensor a model needs: trainable weights plus
//! non-trainable buffers (batch norm running statistics, fixed layer
//! constants). Entries keep insertion order, which makes optimizer sweeps
//! and checkpoints deterministic.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{read_vtns, write_vtns, Element, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs;
use std::path::Path;

#[derive(Clone)]
pub struct ParamEntry<E: Element> {
    pub name: String,
    pub tensor: Tensor<E>,
    pub trainable: bool,
}

#[derive(Clone)]
pub struct ParamSet<E: Element> {
    entries: Vec<ParamEntry<E>>,
    index: HashMap<String, usize>,
}

impl<E: Element> Default for ParamSet<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> ParamSet<E> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<E>, trainable: bool) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, tensor, trainable });
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<E>> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].tensor)
            .ok_or_else(|| Error::invalid("param_get", format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<E>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].tensor),
            None => Err(Error::invalid("param_get", format!("unknown parameter {name}"))),
        }
    }

    pub fn entries(&self) -> &[ParamEntry<E>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<E>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across trainable entries.
    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.tensor.numel()).sum()
    }

    /// Copy every tensor onto a tape; trainable entries become grad-bearing
    /// leaves, buffers become constants.
    pub fn bind(&self, tape: &mut Tape<E>) -> Bound {
        let mut map = HashMap::with_capacity(self.entries.len());
        for e in &self.entries {
            let var = if e.trainable { tape.param(e.tensor.clone()) } else { tape.constant(e.tensor.clone()) };
            map.insert(e.name.clone(), var);
        }
        Bound { map }
    }

    /// Convert storage element type (f32 training set → f64 for checking).
    pub fn cast<T: Element>(&self) -> ParamSet<T> {
        let mut out = ParamSet::new();
        for e in &self.entries {
            out.insert(e.name.clone(), e.tensor.cast::<T>(), e.trainable);
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = CheckpointIndex { version: 1, entries: Vec::with_capacity(self.entries.len()) };
        for (i, e) in self.entries.iter().enumerate() {
            let file = format!("p{i:04}.vtns");
            write_vtns(&dir.join(&file), &e.tensor)?;
            manifest.entries.push(IndexEntry { name: e.name.clone(), file, trainable: e.trainable });
        }
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(dir.join("index.json"), json).map_err(|e| Error::io(dir, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index_path = dir.join("index.json");
        let json = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let manifest: CheckpointIndex = serde_json::from_str(&json)
            .map_err(|e| Error::Checkpoint(format!("bad index.json in {}: {e}", dir.display())))?;
        if manifest.version != 1 {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", manifest.version)));
        }
        let mut out = ParamSet::new();
        for entry in manifest.entries {
            let t = read_vtns(&dir.join(&entry.file))?;
            let tensor: Tensor<E> = match E::DTYPE {
                crate::tensor::Dtype::F32 => t.into_f32().cast(),
                crate::tensor::Dtype::F64 => t.into_f64().cast(),
            };
            out.insert(entry.name, tensor, entry.trainable);
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointIndex {
    version: u32,
    entries: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    file: String,
    trainable: bool,
}

/// Name → tape variable mapping produced by [`ParamSet::bind`].
pub struct Bound {
    map: HashMap<String, Var>,
}

impl Bound {
    /// Assemble a binding directly from (name, var) pairs. Gradient checks
    /// use this to hand a layer parameters that live as externally created
    /// tape leaves instead of going through a [`ParamSet`].
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Bound {
        Bound { map: pairs.into_iter().collect() }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.map
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid("bound_var", format!("parameter {name} not bound")))
    }
}
