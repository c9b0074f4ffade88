//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records one forward pass. Parameters enter through
//! [`Tape::param`], which snapshots the current value from a [`ParamStore`].
//! After [`Tape::backward`] the tape is spent; build a new one for the next
//! step.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

type ParamKey = (u64, usize);

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

/// Gradient rule of a recorded operation.
///
/// `inputs` are the values the op consumed, `output` is what it produced and
/// `grad` is dLoss/dOutput. Return one entry per input; entries for inputs
/// with `needs[i] == false` may be `None`.
pub trait Backward {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &[f32],
        needs: &[bool],
    ) -> Vec<Option<Vec<f32>>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    op: Option<Box<dyn Backward>>,
    requires_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamKey, Var>,
    consumed: bool,
    nonfinite: Option<String>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            consumed: false,
            nonfinite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Vec::new(), None, false)
    }

    /// A differentiable input that is not owned by any store.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_node(value, Vec::new(), None, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let key = (store.uid, id.0);
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let t = store.get(id);
        let value = Tensor::from_parts(t.shape().to_vec(), t.data().to_vec());
        let v = self.push_node(value, Vec::new(), None, t.requires_grad);
        self.params.insert(key, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an op. The backward rule is dropped when no input needs a gradient.
    pub fn push<B: Backward + 'static>(&mut self, value: Tensor, inputs: Vec<Var>, op: B) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        if cfg!(debug_assertions) && self.nonfinite.is_none() && !value.is_finite() {
            self.nonfinite = Some(op.name().to_string());
        }
        let op: Option<Box<dyn Backward>> = if requires_grad {
            Some(Box::new(op))
        } else {
            None
        };
        self.push_node(value, inputs, op, requires_grad)
    }

    fn push_node(
        &mut self,
        value: Tensor,
        inputs: Vec<Var>,
        op: Option<Box<dyn Backward>>,
        requires_grad: bool,
    ) -> Var {
        self.nodes.push(Node {
            value,
            inputs,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// First op that produced NaN/Inf (debug builds only).
    pub fn nonfinite_op(&self) -> Option<&str> {
        self.nonfinite.as_deref()
    }

    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let shape = self.nodes[loss.0].value.shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        if let Some(op) = &self.nonfinite {
            return Err(Error::NonFinite { op: op.clone() });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if let Some(op) = &node.op {
                let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let needs: Vec<bool> = node
                    .inputs
                    .iter()
                    .map(|v| self.nodes[v.0].requires_grad)
                    .collect();
                let input_grads = op.backward(&inputs, &node.value, &grad, &needs);
                debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", op.name());
                for ((v, g), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                    let Some(g) = g else { continue };
                    if !need {
                        continue;
                    }
                    debug_assert_eq!(g.len(), self.nodes[v.0].value.len(), "{}", op.name());
                    match &mut grads[v.0] {
                        Some(acc) => super::kernels::add_assign(acc, &g),
                        slot => *slot = Some(g),
                    }
                }
            }
            // leaves keep their gradient
            if node.op.is_none() && node.requires_grad {
                grads[idx] = Some(grad);
            }
        }
        Ok(Gradients {
            by_var: grads,
            params: std::mem::take(&mut self.params),
        })
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    by_var: Vec<Option<Vec<f32>>>,
    params: HashMap<ParamKey, Var>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&[f32]> {
        self.by_var.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn of_param(&self, store: &ParamStore, id: ParamId) -> Option<&[f32]> {
        self.params.get(&(store.uid, id.0)).and_then(|&v| self.of(v))
    }
}

/// Named trainable tensors of one model.
#[derive(Debug)]
pub struct ParamStore {
    uid: u64,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        Self {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            names: self.names.clone(),
            tensors: self.tensors.clone(),
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor.with_grad());
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|t| t.requires_grad)
            .map(Tensor::len)
            .sum()
    }

    /// Stores each parameter's gradient from `grads` (zeros when unreached).
    pub fn absorb(&mut self, grads: &Gradients) {
        for i in 0..self.tensors.len() {
            let g = grads
                .of_param(self, ParamId(i))
                .map(<[f32]>::to_vec)
                .unwrap_or_else(|| vec![0.0; self.tensors[i].len()]);
            self.tensors[i].grad = Some(g);
        }
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad = None;
        }
    }

    pub fn snapshot(&self) -> Vec<Tensor> {
        self.tensors
            .iter()
            .map(|t| Tensor::from_parts(t.shape().to_vec(), t.data().to_vec()))
            .collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) {
        assert_eq!(snapshot.len(), self.tensors.len());
        for (dst, src) in self.tensors.iter_mut().zip(snapshot) {
            dst.data_mut().copy_from_slice(src.data());
        }
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }
}
