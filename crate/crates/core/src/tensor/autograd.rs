//! Reverse sweep over the recorded graph.

use std::collections::{HashMap, HashSet};

use super::{GradModeGuard, Tensor};
use crate::error::{Error, Result};

/// The recorded operations reachable from one output, in reverse
/// topological order (each node precedes every node it was computed from).
pub struct Tape {
    nodes: Vec<Tensor>,
}

impl Tape {
    /// Collects every recorded op node that `root` depends on.
    pub fn record(root: &Tensor) -> Tape {
        let mut seen = HashSet::new();
        let mut nodes = Vec::new();
        let mut stack = vec![root.clone()];
        while let Some(t) = stack.pop() {
            if !t.grad_enabled() || !seen.insert(t.id()) {
                continue;
            }
            let has_op = t.with_op(|op| {
                if let Some(op) = op {
                    stack.extend(op.inputs().into_iter().cloned());
                    true
                } else {
                    false
                }
            });
            if has_op {
                nodes.push(t);
            }
        }
        // Ids are handed out in creation order, so descending id is a valid
        // reverse topological order.
        nodes.sort_by(|a, b| b.id().cmp(&a.id()));
        Tape { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node ids in visiting order.
    pub fn ids(&self) -> Vec<u64> {
        self.nodes.iter().map(Tensor::id).collect()
    }

    /// Op names in visiting order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes
            .iter()
            .map(|t| t.with_op(|op| op.map_or("leaf", |o| o.name())))
            .collect()
    }

    /// Propagates `seed` (the gradient of some scalar w.r.t. `root`) through
    /// the tape. Returns gradients keyed by node id for every reached node.
    /// Gradients of ids in `keep` stay in the map even for interior nodes.
    fn sweep(
        &self,
        root: &Tensor,
        seed: Tensor,
        create_graph: bool,
        keep: &HashSet<u64>,
    ) -> Result<HashMap<u64, Tensor>> {
        let _mode = GradModeGuard::set(create_graph);
        let mut grads: HashMap<u64, Tensor> = HashMap::new();
        grads.insert(root.id(), seed);
        for node in &self.nodes {
            let g = if keep.contains(&node.id()) {
                grads.get(&node.id()).cloned()
            } else {
                grads.remove(&node.id())
            };
            let Some(g) = g else {
                continue;
            };
            let parts = node.with_op(|op| match op {
                Some(op) => {
                    let inputs: Vec<Tensor> = op.inputs().into_iter().cloned().collect();
                    op.vjp(&g, create_graph).map(|gs| Some((inputs, gs)))
                }
                None => Ok(None),
            })?;
            let Some((inputs, gs)) = parts else {
                // Op already consumed by an earlier backward; treat as a leaf.
                grads.insert(node.id(), g);
                continue;
            };
            for (input, gi) in inputs.iter().zip(gs) {
                let Some(gi) = gi else { continue };
                if !input.grad_enabled() {
                    continue;
                }
                let acc = match grads.remove(&input.id()) {
                    Some(prev) => prev.add(&gi)?,
                    None => gi,
                };
                grads.insert(input.id(), acc);
            }
        }
        Ok(grads)
    }
}

fn check_scalar(loss: &Tensor) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::NonScalarLoss(loss.shape().to_vec()));
    }
    Ok(())
}

/// Accumulates d(loss)/d(leaf) into every grad-enabled leaf reachable from
/// `loss`, then clears the recorded ops so the graph can be freed.
pub fn backward(loss: &Tensor) -> Result<()> {
    check_scalar(loss)?;
    if !loss.grad_enabled() {
        return Err(Error::invalid(
            "backward",
            "loss does not depend on any grad-enabled tensor",
        ));
    }
    let tape = Tape::record(loss);
    let seed = Tensor::ones(loss.shape());
    let grads = tape.sweep(loss, seed, false, &HashSet::new())?;
    let mut leaves = Vec::new();
    collect_leaves(loss, &mut leaves);
    for leaf in leaves {
        if let Some(g) = grads.get(&leaf.id()) {
            leaf.accumulate_grad(g.data());
        }
    }
    for node in &tape.nodes {
        drop(node.take_op());
    }
    Ok(())
}

fn collect_leaves(root: &Tensor, out: &mut Vec<Tensor>) {
    let mut seen = HashSet::new();
    let mut stack = vec![root.clone()];
    while let Some(t) = stack.pop() {
        if !t.grad_enabled() || !seen.insert(t.id()) {
            continue;
        }
        let is_leaf = t.with_op(|op| match op {
            Some(op) => {
                stack.extend(op.inputs().into_iter().cloned());
                false
            }
            None => true,
        });
        if is_leaf {
            out.push(t);
        }
    }
}

/// Gradients of `sum(output)` with respect to each of `inputs`, returned as
/// tensors without touching the leaves' accumulated grads or the graph.
/// With `create_graph` the returned tensors are themselves differentiable.
pub fn grad(output: &Tensor, inputs: &[Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    let tape = Tape::record(output);
    let seed = Tensor::ones(output.shape());
    let grads = if output.grad_enabled() {
        let keep = inputs.iter().map(Tensor::id).collect();
        tape.sweep(output, seed, create_graph, &keep)?
    } else {
        HashMap::new()
    };
    Ok(inputs
        .iter()
        .map(|x| {
            grads
                .get(&x.id())
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(x.shape()))
        })
        .collect())
}
