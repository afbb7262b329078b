//! Frozen (eval-mode) forward passes without gradient tracking.

use gonogo_tensor::{Graph, Mode, Network, Tensor};

use crate::error::Result;

/// Output of layer `last` (or the final layer) in eval mode.
pub fn forward_eval(net: &Network, x: &Tensor, last: Option<usize>) -> Result<Tensor> {
    let mut g = Graph::<f32>::new();
    let p = net.bind(&mut g, false);
    let xv = g.input(x.clone());
    let acts = net.forward(&mut g, &p, xv, Mode::Eval, last)?;
    Ok(g.value(acts.last()).clone())
}
