//! Operation tape for reverse-mode differentiation.
//!
//! Every operation whose inputs include a tracked tensor appends one node to
//! the tape of that tensor. A node holds the tape ids of its tracked inputs
//! and a closure mapping the output gradient to input gradients. Nodes are
//! appended in evaluation order, so a reverse sweep over the node list is a
//! valid reverse topological order and visits each node once.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Maps the output gradient to one optional gradient per recorded input.
/// `needs[i]` tells whether input `i` is tracked; untracked inputs may be
/// answered with `None`.
pub(crate) type BackwardFn<S> = Box<dyn Fn(&[S], &[bool]) -> Vec<Option<Vec<S>>> + Send + Sync>;

struct Node<S: Scalar> {
    inputs: Vec<Option<usize>>,
    numel: usize,
    backward: Option<BackwardFn<S>>,
}

struct TapeState<S: Scalar> {
    nodes: Vec<Node<S>>,
    generation: u64,
    consumed: bool,
}

/// Append-only record of the operations of one training step.
#[derive(Clone)]
pub struct Tape<S: Scalar> {
    state: Arc<Mutex<TapeState<S>>>,
}

#[derive(Clone)]
pub(crate) struct Track<S: Scalar> {
    pub(crate) tape: Tape<S>,
    pub(crate) id: usize,
    pub(crate) generation: u64,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> std::fmt::Debug for Tape<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let st = self.lock();
        f.debug_struct("Tape")
            .field("nodes", &st.nodes.len())
            .field("generation", &st.generation)
            .field("consumed", &st.consumed)
            .finish()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            state: Arc::new(Mutex::new(TapeState {
                nodes: Vec::new(),
                generation: 0,
                consumed: false,
            })),
        }
    }

    fn lock(&self) -> MutexGuard<'_, TapeState<S>> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub(crate) fn same(&self, other: &Tape<S>) -> bool {
        Arc::ptr_eq(&self.state, &other.state)
    }

    /// Registers `t` as a differentiation target and returns a tracked handle
    /// sharing its buffer.
    pub fn leaf(&self, t: &Tensor<S>) -> Tensor<S> {
        let mut st = self.lock();
        let id = st.nodes.len();
        st.nodes.push(Node {
            inputs: Vec::new(),
            numel: t.numel(),
            backward: None,
        });
        let track = Track {
            tape: self.clone(),
            id,
            generation: st.generation,
        };
        t.detach().with_track(track)
    }

    pub fn len(&self) -> usize {
        self.lock().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every recorded node. Tensors recorded before the reset become
    /// stale and can no longer take part in differentiation.
    pub fn reset(&self) {
        let mut st = self.lock();
        st.nodes.clear();
        st.generation += 1;
        st.consumed = false;
    }

    pub(crate) fn push(
        &self,
        inputs: Vec<Option<(usize, u64)>>,
        numel: usize,
        backward: BackwardFn<S>,
    ) -> Track<S> {
        let mut st = self.lock();
        let generation = st.generation;
        let inputs = inputs
            .into_iter()
            .map(|i| {
                i.map(|(id, g)| {
                    assert_eq!(g, generation, "operation uses a tensor from a reset tape");
                    id
                })
            })
            .collect();
        let id = st.nodes.len();
        st.nodes.push(Node {
            inputs,
            numel,
            backward: Some(backward),
        });
        Track {
            tape: self.clone(),
            id,
            generation: st.generation,
        }
    }

    pub(crate) fn backward_from(&self, root: &Track<S>) -> Result<Gradients<S>> {
        let mut st = self.lock();
        if root.generation != st.generation {
            return Err(TensorError::StaleTape);
        }
        if st.consumed {
            return Err(TensorError::AlreadyBackpropagated);
        }
        st.consumed = true;
        let n = root.id + 1;
        let mut grads: Vec<Option<Vec<S>>> = Vec::with_capacity(n);
        grads.resize_with(n, || None);
        grads[root.id] = Some(vec![S::one()]);
        let mut leaves = HashMap::new();
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &st.nodes[i];
            let Some(f) = node.backward.as_ref() else {
                leaves.insert(i, g);
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let parts = f(&g, &needs);
            debug_assert_eq!(parts.len(), node.inputs.len());
            for (input, part) in node.inputs.iter().zip(parts) {
                let (Some(pid), Some(part)) = (input, part) else { continue };
                debug_assert_eq!(part.len(), st.nodes[*pid].numel);
                match &mut grads[*pid] {
                    Some(acc) => {
                        for (a, p) in acc.iter_mut().zip(&part) {
                            *a += *p;
                        }
                    }
                    slot @ None => *slot = Some(part),
                }
            }
        }
        Ok(Gradients {
            generation: st.generation,
            tape: self.clone(),
            grads: leaves,
        })
    }
}

/// Gradients of a scalar loss with respect to the leaves of a tape.
pub struct Gradients<S: Scalar> {
    tape: Tape<S>,
    generation: u64,
    grads: HashMap<usize, Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient for a leaf tensor. `None` when `t` is untracked, belongs to a
    /// different tape, or did not influence the loss.
    pub fn get(&self, t: &Tensor<S>) -> Option<Tensor<S>> {
        let track = t.track.as_ref()?;
        if !track.tape.same(&self.tape) || track.generation != self.generation {
            return None;
        }
        let g = self.grads.get(&track.id)?;
        Some(Tensor::from_parts(t.shape().to_vec(), g.clone()))
    }

    /// Like [`get`](Self::get) but yields zeros for leaves that did not
    /// influence the loss.
    pub fn get_or_zeros(&self, t: &Tensor<S>) -> Tensor<S> {
        self.get(t)
            .unwrap_or_else(|| Tensor::zeros(t.shape()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Builds the output tensor of an operation and, when any input is tracked,
/// appends the node that differentiates it.
pub(crate) fn record<S, F>(inputs: &[&Tensor<S>], shape: Vec<usize>, data: Vec<S>, backward: F) -> Tensor<S>
where
    S: Scalar,
    F: Fn(&[S], &[bool]) -> Vec<Option<Vec<S>>> + Send + Sync + 'static,
{
    record_shared(inputs, shape, Arc::new(data), backward)
}

pub(crate) fn record_shared<S, F>(
    inputs: &[&Tensor<S>],
    shape: Vec<usize>,
    data: Arc<Vec<S>>,
    backward: F,
) -> Tensor<S>
where
    S: Scalar,
    F: Fn(&[S], &[bool]) -> Vec<Option<Vec<S>>> + Send + Sync + 'static,
{
    let out = Tensor::from_shared(shape, data);
    let mut tape: Option<&Tape<S>> = None;
    for t in inputs {
        if let Some(tr) = &t.track {
            match tape {
                None => tape = Some(&tr.tape),
                Some(existing) => assert!(
                    existing.same(&tr.tape),
                    "operation mixes tensors recorded on different tapes"
                ),
            }
        }
    }
    let Some(tape) = tape else { return out };
    let ids = inputs
        .iter()
        .map(|t| t.track.as_ref().map(|tr| (tr.id, tr.generation)))
        .collect();
    let track = tape.push(ids, out.numel(), Box::new(backward));
    out.with_track(track)
}
