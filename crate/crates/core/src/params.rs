//! Named parameter table and its binding onto a tape.

use std::collections::HashMap;

use crate::error::{NcsrError, Result};
use crate::numerics::{Rng, Shape, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered table of named tensors. Order of registration is the order of
/// serialization and of optimizer state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter `{name}`");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        self.values[id.0].expect_shape("ParamStore::set", value.shape())?;
        self.values[id.0] = value;
        Ok(())
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Replace all values from `(name, tensor)` pairs with identical names and
    /// shapes, e.g. when loading a checkpoint.
    pub fn load_named(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        if entries.len() != self.values.len() {
            return Err(NcsrError::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.values.len(),
                entries.len()
            )));
        }
        for (name, t) in entries {
            let id = self
                .lookup(&name)
                .ok_or_else(|| NcsrError::Checkpoint(format!("unknown tensor `{name}`")))?;
            if self.get(id).shape() != t.shape() {
                return Err(NcsrError::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    self.get(id).shape()
                )));
            }
            self.values[id.0] = t;
        }
        Ok(())
    }

    /// Put every parameter on the tape. Trainable bindings create gradient
    /// leaves, inference bindings create constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .values
            .iter()
            .map(|v| {
                if trainable {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                }
            })
            .collect();
        Bound {
            vars,
            ddi: false,
            ddi_values: Vec::new(),
        }
    }
}

/// Parameters bound to one tape.
///
/// With `ddi` set, layers that support data-dependent initialization compute
/// their initial values from the activations they see, substitute them for
/// the bound variable, and record them in `ddi_values`.
#[derive(Debug)]
pub struct Bound {
    vars: Vec<Var>,
    pub ddi: bool,
    pub ddi_values: Vec<(ParamId, Tensor)>,
}

impl Bound {
    #[inline]
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn replace(&mut self, id: ParamId, var: Var) {
        self.vars[id.0] = var;
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Deterministic per-name initialization stream, independent of any
/// user-supplied seed.
pub fn name_stream(name: &str) -> Rng {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    Rng::seed_from_u64(h)
}

/// Normal(0, 1/fan_in) weights scaled by `gain`, drawn from the parameter's
/// name stream.
pub fn fan_in_normal(name: &str, shape: Shape, gain: f64) -> Tensor {
    let fan_in = (shape[1] * shape[2] * shape[3]).max(1) as f64;
    name_stream(name)
        .gaussian(shape, gain / fan_in.sqrt())
        .expect("non-negative sigma")
}
