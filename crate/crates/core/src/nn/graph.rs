//! Minimal reverse-mode tape over [`Tensor`].
//!
//! Nodes are appended in evaluation order, so node ids are already a
//! topological order and the backward pass is a single reverse sweep.
//! With `track = false` the graph evaluates forward only: no parents, no
//! backward closures, and fused ops skip their stashes.

use super::tensor::{Elem, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// Per-op reverse rule. `backward` returns one gradient per parent (None
/// for parents that do not require grad).
pub trait Backward<E: Elem>: Send + Sync {
    fn backward(&self, ctx: &BackCtx<'_, E>) -> Vec<Option<Tensor<E>>>;
}

pub struct BackCtx<'a, E: Elem> {
    pub parents: Vec<&'a Tensor<E>>,
    pub needs: Vec<bool>,
    pub output: &'a Tensor<E>,
    pub grad: &'a Tensor<E>,
}

struct Node<E: Elem> {
    value: Tensor<E>,
    parents: Vec<NodeId>,
    op: Option<Box<dyn Backward<E>>>,
    requires_grad: bool,
}

pub struct Graph<E: Elem> {
    nodes: Vec<Node<E>>,
    track: bool,
}

impl<E: Elem> Graph<E> {
    pub fn new(track: bool) -> Self {
        Self { nodes: Vec::new(), track }
    }

    pub fn track(&self) -> bool {
        self.track
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop all nodes, keeping the allocation for reuse across sampler steps.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// Differentiable leaf (parameter or input under test).
    pub fn leaf(&mut self, value: Tensor<E>) -> NodeId {
        self.push_node(value, Vec::new(), None, true)
    }

    /// Non-differentiable leaf (data, targets, precomputed tables).
    pub fn constant(&mut self, value: Tensor<E>) -> NodeId {
        self.push_node(value, Vec::new(), None, false)
    }

    /// Append an op result. Parent list and backward closure are dropped when
    /// the graph is not tracking.
    pub fn push(&mut self, value: Tensor<E>, parents: Vec<NodeId>, op: Box<dyn Backward<E>>) -> NodeId {
        if !self.track {
            return self.push_node(value, Vec::new(), None, false);
        }
        let requires = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        if !requires {
            return self.push_node(value, Vec::new(), None, false);
        }
        self.push_node(value, parents, Some(op), true)
    }

    fn push_node(
        &mut self,
        value: Tensor<E>,
        parents: Vec<NodeId>,
        op: Option<Box<dyn Backward<E>>>,
        requires_grad: bool,
    ) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, parents, op, requires_grad });
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    /// Reverse sweep from a scalar root. Panics if the graph is not tracking.
    pub fn backward(&self, root: NodeId) -> Gradients<E> {
        assert!(self.track, "backward on a non-tracking graph");
        let root_node = &self.nodes[root.0];
        assert!(root_node.value.is_scalar(), "backward root must be scalar, got {:?}", root_node.value.shape());
        let mut grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(E::ONE));

        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            let Some(op) = node.op.as_ref() else { continue };
            let Some(gout) = grads[id].clone() else { continue };
            let ctx = BackCtx {
                parents: node.parents.iter().map(|p| &self.nodes[p.0].value).collect(),
                needs: node.parents.iter().map(|p| self.nodes[p.0].requires_grad).collect(),
                output: &node.value,
                grad: &gout,
            };
            let pgrads = op.backward(&ctx);
            debug_assert_eq!(pgrads.len(), node.parents.len());
            for (parent, pg) in node.parents.iter().zip(pgrads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(
                    pg.shape(),
                    self.nodes[parent.0].value.shape(),
                    "gradient shape mismatch for parent {parent:?}"
                );
                match &mut grads[parent.0] {
                    Some(acc) => {
                        let dst = acc.data_mut();
                        for (d, s) in dst.iter_mut().zip(pg.data()) {
                            *d += *s;
                        }
                    }
                    slot => *slot = Some(pg),
                }
            }
            // The output grad of this node is no longer needed.
            grads[id] = None;
        }
        Gradients { grads }
    }
}

pub struct Gradients<E: Elem> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Elem> Gradients<E> {
    /// Gradient of the root w.r.t. the node, zero tensor if it never received one.
    pub fn get(&self, id: NodeId, like: &Tensor<E>) -> Tensor<E> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(like.shape().to_vec()),
        }
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<E>> {
        self.grads[id.0].take()
    }
}
