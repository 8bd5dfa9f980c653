//! The recording tape and the `Var` handle.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use crate::tensor::Tensor;

/// Backward rule: given the output gradient, the parent values and the
/// output value, return one optional gradient per parent.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[Rc<Tensor>], &Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
    is_leaf: bool,
}

/// Records every operation applied to its `Var`s so that gradients can be
/// replayed in reverse order.
///
/// A tape is single-use: build it, run a forward pass, call
/// [`Tape::backward`] once, drop it.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    value_bytes: Cell<usize>,
}

/// A handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), value_bytes: Cell::new(0) }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_node(value, Vec::new(), None, false, true)
    }

    /// A trainable leaf; its gradient is reported by [`Tape::backward`].
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_node(value, Vec::new(), None, true, true)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bytes held by every recorded value.
    pub fn value_bytes(&self) -> usize {
        self.value_bytes.get()
    }

    fn push_node(
        &self,
        value: Tensor,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
        requires_grad: bool,
        is_leaf: bool,
    ) -> Var<'_> {
        self.value_bytes.set(self.value_bytes.get() + value.nbytes());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), parents, backward, requires_grad, is_leaf });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Records an operation result. The backward rule is dropped when no
    /// parent requires a gradient.
    pub(crate) fn record<F>(&self, value: Tensor, parents: &[Var<'_>], backward: F) -> Var<'_>
    where
        F: Fn(&Tensor, &[Rc<Tensor>], &Tensor) -> Vec<Option<Tensor>> + 'static,
    {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        let ids = parents.iter().map(|p| p.id).collect();
        let bw: Option<BackwardFn> = if requires_grad { Some(Box::new(backward)) } else { None };
        self.push_node(value, ids, bw, requires_grad, false)
    }

    pub(crate) fn value_rc(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse-mode sweep from a scalar `root`.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        assert!(std::ptr::eq(root.tape, self), "root belongs to another tape");
        let nodes = self.nodes.borrow();
        let root_val = &nodes[root.id].value;
        assert_eq!(root_val.numel(), 1, "backward root must be a scalar");

        let mut grads: Vec<Option<Tensor>> = (0..=root.id).map(|_| None).collect();
        grads[root.id] = Some(Tensor::full(root_val.shape().to_vec(), 1.0));
        let mut live = root_val.nbytes();
        let mut peak = live;
        let mut leaves = HashMap::new();

        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Some(bw) = &node.backward {
                let pvals: Vec<Rc<Tensor>> =
                    node.parents.iter().map(|&p| nodes[p].value.clone()).collect();
                let pgrads = bw(&g, &pvals, &node.value);
                debug_assert_eq!(pgrads.len(), node.parents.len());
                for (&p, pg) in node.parents.iter().zip(pgrads) {
                    let Some(pg) = pg else { continue };
                    if !nodes[p].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "gradient shape mismatch");
                    match &mut grads[p] {
                        Some(acc) => acc.add_assign(&pg),
                        slot @ None => {
                            live += pg.nbytes();
                            *slot = Some(pg);
                        }
                    }
                }
            }
            peak = peak.max(live);
            if node.is_leaf && node.requires_grad {
                leaves.insert(id, g);
            } else {
                live -= g.nbytes();
            }
        }
        Gradients { by_id: leaves, peak_grad_bytes: peak }
    }
}

/// Gradients of the backward root with respect to every trainable leaf.
#[derive(Debug)]
pub struct Gradients {
    by_id: HashMap<usize, Tensor>,
    peak_grad_bytes: usize,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.by_id.get(&var.id)
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.by_id.remove(&var.id)
    }

    /// Largest number of gradient bytes alive at once during the sweep.
    pub fn peak_grad_bytes(&self) -> usize {
        self.peak_grad_bytes
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// A cheap shared handle to this node's value.
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_rc(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }
}
