//! Per-sample distances used by the inversion losses and the scores.

use gonogo_tensor::{Graph, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    /// Root mean square over elements.
    #[default]
    Rms,
    /// Euclidean norm.
    L2,
}

/// `‖mask ∘ (a − b)‖` for every sample of a batch, as an `[N]` node.
///
/// `mask` must have the per-sample shape of `a`. Without a mask the
/// difference is used as is, which equals an all-ones mask bit for bit.
pub fn distance<T: Scalar>(
    g: &mut Graph<T>,
    a: Var,
    b: Var,
    mask: Option<&Tensor>,
    norm: Norm,
) -> Result<Var> {
    let mut diff = g.sub(a, b)?;
    if let Some(m) = mask {
        let mv = g.input(m.cast());
        diff = g.mul_broadcast(diff, mv)?;
    }
    let sq = g.square(diff)?;
    let per_sample = match norm {
        Norm::Rms => g.mean_rows(sq)?,
        Norm::L2 => g.sum_rows(sq)?,
    };
    Ok(g.sqrt(per_sample)?)
}

/// `(1 − λ)·r + λ·d` elementwise.
pub fn blend<T: Scalar>(g: &mut Graph<T>, r: Var, d: Var, lambda: f32) -> Result<Var> {
    let lambda = f64::from(lambda);
    let wr = g.scale(r, T::lit(1.0 - lambda))?;
    let wd = g.scale(d, T::lit(lambda))?;
    Ok(g.add(wr, wd)?)
}

/// Plain-number version of [`distance`] over batches.
pub fn distance_values(a: &Tensor, b: &Tensor, mask: Option<&Tensor>, norm: Norm) -> Result<Vec<f32>> {
    let mut g = Graph::<f32>::new();
    let (av, bv) = (g.input(a.clone()), g.input(b.clone()));
    let d = distance(&mut g, av, bv, mask, norm)?;
    Ok(g.value(d).data().to_vec())
}
