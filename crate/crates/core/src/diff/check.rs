use super::{Graph, NodeId, Tensor};
use crate::error::Result;

/// Worst discrepancy inside one named input block.
#[derive(Clone, Debug)]
pub struct BlockReport {
    pub name: String,
    pub max_abs_diff: f64,
    pub scale: f64,
    pub rel: f64,
}

#[derive(Clone, Debug)]
pub struct FdReport {
    pub blocks: Vec<BlockReport>,
    pub tol: f64,
}

impl FdReport {
    pub fn max_rel(&self) -> f64 {
        self.blocks.iter().fold(0.0, |m, b| m.max(b.rel))
    }

    pub fn passed(&self) -> bool {
        self.max_rel() <= self.tol
    }
}

/// Compare tape gradients of a scalar function against central differences.
///
/// `f` receives a fresh graph and one leaf per input block and must return
/// the scalar output node. The relative discrepancy of a block is the largest
/// absolute difference divided by the largest gradient magnitude in that
/// block (analytic or numeric).
pub fn finite_difference_check<F>(
    f: F,
    inputs: &[(String, Tensor)],
    h: f64,
    tol: f64,
) -> Result<FdReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<_> = values.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &ids)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let ids: Vec<_> = inputs.iter().map(|(_, t)| g.leaf(t.clone())).collect();
    let out = f(&mut g, &ids)?;
    let grads = g.backward(out)?;

    let mut values: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut blocks = Vec::with_capacity(inputs.len());
    for (b, (name, _)) in inputs.iter().enumerate() {
        let analytic = grads.wrt(ids[b]);
        let mut max_abs_diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..values[b].len() {
            let orig = values[b].data()[i];
            values[b].data_mut()[i] = orig + h;
            let up = eval(&values)?;
            values[b].data_mut()[i] = orig - h;
            let down = eval(&values)?;
            values[b].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            max_abs_diff = max_abs_diff.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
        let rel = if scale > 0.0 { max_abs_diff / scale } else { max_abs_diff };
        blocks.push(BlockReport {
            name: name.clone(),
            max_abs_diff,
            scale,
            rel,
        });
    }
    Ok(FdReport { blocks, tol })
}
