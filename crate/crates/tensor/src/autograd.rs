use std::collections::HashSet;

use crate::buffer::Buffer;
use crate::error::{Result, TensorError};
use crate::tensor::{Kind, Tensor};

impl Tensor {
    /// Reverse-mode pass from a scalar loss.
    ///
    /// Gradients accumulate into every reachable parameter. The graph is
    /// consumed as it is walked, so intermediate activations are freed as
    /// soon as their last consumer has run; a second call on the same loss
    /// returns [`TensorError::GraphReleased`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        match self.0.kind {
            Kind::Constant => {
                return Err(TensorError::contract(
                    "backward",
                    "loss does not depend on any parameter",
                ))
            }
            Kind::Parameter => {
                self.accumulate_grad(Buffer::from_vec(vec![1.0]));
                return Ok(());
            }
            Kind::Intermediate => {
                if self.0.node.borrow().is_none() {
                    return Err(TensorError::GraphReleased);
                }
            }
        }

        let mut order = topological_order(self);
        *self.0.grad.borrow_mut() = Some(Buffer::from_vec(vec![1.0]));

        // `order` lists inputs before consumers; popping walks from the loss.
        while let Some(t) = order.pop() {
            let Some(node) = t.0.node.borrow_mut().take() else {
                continue;
            };
            let Some(grad) = t.0.grad.borrow_mut().take() else {
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(Tensor::requires_grad).collect();
            let grads = (node.backward)(&grad, &needs);
            drop(grad);
            debug_assert_eq!(grads.len(), node.inputs.len());
            for ((input, g), need) in node.inputs.iter().zip(grads).zip(needs) {
                if let (Some(g), true) = (g, need) {
                    debug_assert_eq!(g.len(), input.numel());
                    input.accumulate_grad(g);
                }
            }
        }
        Ok(())
    }
}

/// Post-order over recorded intermediates reachable from `root`.
fn topological_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    let mut stack = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !seen.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(node) = t.0.node.borrow().as_ref() {
            for input in &node.inputs {
                if input.0.kind == Kind::Intermediate && !seen.contains(&input.id()) {
                    stack.push((input.clone(), false));
                }
            }
        }
    }
    order
}
