use std::collections::HashMap;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;

use crate::Scalar;

use super::{Gradients, NnError, Tape, Tensor, Var};

/// Named trainable tensors in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

/// `U(−a, a)` with `a = √(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| T::of(rng.gen_range(-a..=a))).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Inserts or replaces `name`.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.entries[i].1 = value,
            None => {
                self.index.insert(name.clone(), self.entries.len());
                self.entries.push((name, value));
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
            index: self.index.clone(),
        }
    }

    /// Records every parameter on `tape` as a trainable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self.entries.iter().map(|(_, t)| tape.param(t.clone())).collect(),
            index: self.index.clone(),
        }
    }

    /// Writes `index.json` (name → shape) and one little-endian `f32` file per tensor.
    pub fn save(&self, dir: &Path) -> Result<(), NnError> {
        let io = |e: std::io::Error| NnError::Io(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        let mut index: IndexMap<&str, &[usize]> = IndexMap::new();
        for (name, t) in &self.entries {
            index.insert(name, t.shape());
            let bytes: Vec<u8> = t
                .data()
                .iter()
                .flat_map(|v| (v.wide() as f32).to_le_bytes())
                .collect();
            fs::write(dir.join(format!("{name}.bin")), bytes).map_err(io)?;
        }
        let json = serde_json::to_string_pretty(&index).expect("index serializes");
        fs::write(dir.join("index.json"), json).map_err(io)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, NnError> {
        let read = |p: &Path| fs::read(p).map_err(|e| NnError::Io(format!("{}: {e}", p.display())));
        let text = read(&dir.join("index.json"))?;
        let index: IndexMap<String, Vec<usize>> =
            serde_json::from_slice(&text).map_err(|e| NnError::Checkpoint(format!("index.json: {e}")))?;
        let mut store = ParamStore::new();
        for (name, shape) in index {
            let bytes = read(&dir.join(format!("{name}.bin")))?;
            let expected = shape.iter().product::<usize>() * 4;
            if bytes.len() != expected {
                return Err(NnError::Checkpoint(format!(
                    "{name}.bin has {} bytes, expected {expected}",
                    bytes.len()
                )));
            }
            let data = bytes
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect();
            store.insert(name, Tensor::new(shape, data)?);
        }
        Ok(store)
    }
}

/// Parameters of a [`ParamStore`] recorded on a tape.
pub struct Bound<'t, T> {
    vars: Vec<Var<'t, T>>,
    index: HashMap<String, usize>,
}

impl<'t, T: Scalar> Bound<'t, T> {
    pub fn get(&self, name: &str) -> Result<Var<'t, T>, NnError> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }

    /// Gradients in store order.
    pub fn gradients(&self, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.vars.iter().map(|&v| grads.get(v)).collect()
    }
}
