//! Named, grouped parameter storage and its binding onto a tape.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub group: String,
    pub name: String,
    pub value: Tensor,
}

/// Flat list of parameters in declaration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, group: &str, name: &str, value: Tensor) -> ParamId {
        self.entries.push(ParamEntry {
            group: group.to_string(),
            name: name.to_string(),
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Adds a `[rows x cols]` matrix drawn uniformly from the Glorot range.
    pub fn add_glorot(&mut self, group: &str, name: &str, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
        let limit = (6.0 / (rows + cols).max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
        self.add(group, name, Tensor::new(vec![rows, cols], data).expect("glorot shape"))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|e| &mut e.value)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Group names in first-appearance order.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.group) {
                out.push(e.group.clone());
            }
        }
        out
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Replaces every value, checking shapes.
    pub fn set_values(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.entries.len() {
            return Err(Error::Shape(format!("{} values for {} parameters", values.len(), self.entries.len())));
        }
        for (e, v) in self.entries.iter_mut().zip(values) {
            if e.value.shape() != v.shape() {
                return Err(Error::dim("set_values", e.value.shape(), v.shape()));
            }
            e.value = v;
        }
        Ok(())
    }

    /// Records every parameter on `tape`; tracked leaves when `track` is set.
    pub fn bind<'t>(&self, tape: &'t Tape, track: bool) -> Bound<'t> {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                if track {
                    tape.leaf(e.value.clone())
                } else {
                    tape.constant(e.value.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters recorded on one tape.
#[derive(Debug, Clone)]
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    /// Gradients in store order; parameters off the loss path get zeros.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|v| grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(&v.shape())))
            .collect()
    }
}
