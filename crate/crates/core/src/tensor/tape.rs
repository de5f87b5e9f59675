use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// `(grad_out, inputs, output) -> grad per input`, each shaped like its input.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    requires_grad: bool,
    is_leaf: bool,
    backward: Option<BackwardFn>,
}

/// Ordered record of operations. Single owner; one backward pass per recording.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.len())
            .field("consumed", &self.consumed)
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, vec![], true, true, None)
    }

    /// Registers an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, vec![], false, true, None)
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

    /// Value detached from the graph as a fresh constant.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    fn push(
        &mut self,
        value: Tensor,
        parents: Vec<usize>,
        requires_grad: bool,
        is_leaf: bool,
        backward: Option<BackwardFn>,
    ) -> Var {
        self.nodes.push(Node {
            value,
            parents,
            requires_grad,
            is_leaf,
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records the result of an operation. The backward rule is kept only when
    /// some input requires a gradient.
    pub(crate) fn record<F>(
        &mut self,
        op: &'static str,
        value: Tensor,
        parents: &[Var],
        backward: F,
    ) -> Result<Var>
    where
        F: Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Tensor> + 'static,
    {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let backward: Option<BackwardFn> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        Ok(self.push(
            value,
            parents.iter().map(|p| p.0).collect(),
            requires_grad,
            false,
            backward,
        ))
    }

    /// Reverse pass from `root`, seeded with ones. Consumes the recording:
    /// a second call fails with [`Error::TapeConsumed`].
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(Tensor::full(self.nodes[root.0].value.shape().to_vec(), 1.0));
        }

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let parent_grads = backward(&g, &inputs, &node.value);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                if !self.nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), self.nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
        }

        for (node, g) in self.nodes.iter_mut().zip(grads.iter_mut()) {
            node.backward = None;
            if !(node.is_leaf && node.requires_grad) {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }
}

/// Leaf gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf; `None` when the leaf did not influence the root.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, or zeros shaped like `like` when it was unreached.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
