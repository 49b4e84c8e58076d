use std::collections::BTreeMap;
use std::ops::Index;

use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightMap(BTreeMap<String, Tensor>);

impl WeightMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.0.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.0.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.0.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.0.keys().map(String::as_str).collect()
    }

    /// Total scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.0.values().map(Tensor::len).sum()
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        Self(
            self.0
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
                .collect(),
        )
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|(k, t)| (k.clone(), t.map(|v| v * factor))).collect())
    }

    /// Errors unless `other` has exactly the same names and shapes.
    pub fn check_compatible(&self, other: &WeightMap) -> Result<()> {
        if self.0.len() != other.0.len() {
            return Err(Error::invalid(format!(
                "weight maps differ in size: {} vs {}",
                self.0.len(),
                other.0.len()
            )));
        }
        for ((ka, ta), (kb, tb)) in self.0.iter().zip(&other.0) {
            if ka != kb {
                return Err(Error::invalid(format!("weight name mismatch: {ka} vs {kb}")));
            }
            if ta.shape() != tb.shape() {
                return Err(Error::Shape {
                    op: "weights",
                    lhs: ta.shape().to_vec(),
                    rhs: tb.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and the exact bit patterns of every value.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (k, t) in &self.0 {
            h.update(k.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.0.values().all(Tensor::is_finite)
    }

    /// Puts every tensor on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> BoundWeights {
        BoundWeights(
            self.0
                .iter()
                .map(|(k, t)| (k.clone(), tape.leaf(t.clone(), requires_grad)))
                .collect(),
        )
    }
}

/// Weight names mapped to their leaves on one tape.
#[derive(Clone, Debug)]
pub struct BoundWeights(BTreeMap<String, Var>);

impl BoundWeights {
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.0.iter()
    }

    /// Collects the gradient of every bound weight after backward.
    pub fn gradients(&self, tape: &Tape) -> Result<WeightMap> {
        let mut out = WeightMap::new();
        for (k, v) in &self.0 {
            let g = tape
                .grad(*v)
                .ok_or_else(|| Error::Backward(format!("no gradient for {k}")))?;
            out.insert(k.clone(), g);
        }
        Ok(out)
    }
}

impl Index<&str> for BoundWeights {
    type Output = Var;

    fn index(&self, name: &str) -> &Var {
        self.0
            .get(name)
            .unwrap_or_else(|| panic!("weight `{name}` is not bound"))
    }
}
