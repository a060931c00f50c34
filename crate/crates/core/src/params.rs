//! Named parameter traversal and tape binding.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{Gradients, Tape, Tensor, Var};

/// A model component that owns named tensors.
pub trait Parameters {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>);
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>);

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.params("", &mut out);
        out.into_iter().map(|(n, t)| (n, t.clone())).collect()
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.params_mut("", &mut out);
        out
    }

    fn num_scalars(&self) -> usize {
        let mut out = Vec::new();
        self.params("", &mut out);
        out.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Overwrites every tensor from `source`; names and shapes must match.
    fn load_from(&mut self, source: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, slot) in self.named_tensors_mut() {
            let t = source
                .get(&name)
                .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))?;
            if t.numel() != slot.numel() || t.cols() != slot.cols() {
                return Err(Error::Shape {
                    op: "load",
                    lhs: slot.dims().to_vec(),
                    rhs: t.dims().to_vec(),
                });
            }
            *slot = t.clone();
        }
        Ok(())
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Places parameters on a tape and remembers which ones are trainable.
#[derive(Debug, Default)]
pub struct Binder {
    trainable: Vec<(String, Var)>,
}

impl Binder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, tape: &mut Tape, name: String, t: &Tensor, trainable: bool) -> Var {
        let v = tape.leaf(t.clone(), trainable);
        if trainable {
            self.trainable.push((name, v));
        }
        v
    }

    pub fn trainable(&self) -> &[(String, Var)] {
        &self.trainable
    }

    /// Gradients keyed by parameter name. Trainable parameters the output
    /// does not depend on get an explicit zero gradient.
    pub fn gradients(&self, tape: &Tape, grads: &mut Gradients) -> BTreeMap<String, Tensor> {
        self.trainable
            .iter()
            .map(|(name, v)| {
                let g = grads
                    .take(*v)
                    .unwrap_or_else(|| Tensor::zeros(tape.value(*v).dims()));
                (name.clone(), g)
            })
            .collect()
    }
}
