use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::ops::Index;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Format tag written into every parameter file.
pub const PARAM_FORMAT: &str = "outfitgen-params/v1";

/// Handle to a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named learnable tensors in insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

/// Tape handles for every parameter of a set, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable tensor. Panics on duplicate names (construction bug).
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|id| &self.tensors[id.0])
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    /// Records every parameter as a leaf; gradients flow to those marked `requires_grad`.
    pub fn bind(&self, tape: &mut Tape) -> Result<Bound> {
        self.tensors.iter().map(|t| tape.leaf(t)).collect::<Result<_>>().map(Bound)
    }

    /// Records every parameter as a constant.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Result<Bound> {
        self.tensors
            .iter()
            .map(|t| {
                let (r, c) = t.dims2()?;
                tape.constant(r, c, t.data.clone())
            })
            .collect::<Result<_>>()
            .map(Bound)
    }

    /// Adds the tape gradients of each bound parameter into its `grad` buffer.
    pub fn accumulate(&mut self, bound: &Bound, grads: &Gradients) -> Result<()> {
        for (tensor, var) in self.tensors.iter_mut().zip(&bound.0) {
            if let Some(g) = grads.get(*var) {
                tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.tensors.iter_mut().for_each(|t| t.set_requires_grad(requires_grad));
    }

    /// SHA-256 over names, shapes and value bits.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, t) in self.iter() {
            hasher.update(name.as_bytes());
            for d in t.shape() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn to_file(&self, meta: serde_json::Value) -> ParamFile {
        ParamFile {
            format: PARAM_FORMAT.to_string(),
            meta,
            params: self
                .iter()
                .map(|(name, t)| {
                    (
                        name.to_string(),
                        TensorRecord {
                            shape: t.shape().to_vec(),
                            values: t.data().to_vec(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Overwrites values from `file`. Names and shapes must match exactly.
    pub fn load_values(&mut self, file: &ParamFile) -> Result<()> {
        if file.params.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, file has {}",
                self.tensors.len(),
                file.params.len()
            )));
        }
        for (name, tensor) in self.names.iter().zip(self.tensors.iter_mut()) {
            let record = file
                .params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if record.shape != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: shape {:?} does not match model shape {:?}",
                    record.shape,
                    tensor.shape()
                )));
            }
            if record.values.len() != tensor.numel() {
                return Err(Error::Checkpoint(format!("{name}: wrong value count")));
            }
            tensor.data_mut().copy_from_slice(&record.values);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// On-disk parameter checkpoint: `{format, meta, params: {name → {shape, values}}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    pub format: String,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub params: BTreeMap<String, TensorRecord>,
}

impl ParamFile {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let writer = BufWriter::new(File::create(path)?);
        serde_json::to_writer(writer, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let file: ParamFile = serde_json::from_reader(reader)?;
        if file.format != PARAM_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format tag {:?} (expected {PARAM_FORMAT:?})",
                file.format
            )));
        }
        Ok(file)
    }
}
