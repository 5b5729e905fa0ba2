//! Elementwise evaluation of the active subgraph and its reverse pass.

use super::{LossGenome, SourceRef};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reduced loss together with ∂loss/∂ŷ.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Tensor,
}

struct Trace {
    active: Vec<bool>,
    values: Vec<Vec<f64>>,
}

impl LossGenome {
    fn check_inputs(y: &Tensor, yhat: &Tensor) -> Result<()> {
        if y.shape() != yhat.shape() {
            return Err(Error::Shape(format!("y {:?} vs ŷ {:?}", y.shape(), yhat.shape())));
        }
        Ok(())
    }

    fn trace(&self, y: &Tensor, yhat: &Tensor) -> Result<Trace> {
        Self::check_inputs(y, yhat)?;
        let active = self.active_mask();
        let n = y.len();
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        for i in 0..=self.root {
            if !active[i] {
                continue;
            }
            let node = self.nodes[i];
            let out = {
                let src = |s: SourceRef| -> &[f64] {
                    match s {
                        SourceRef::Y => y.data(),
                        SourceRef::YHat => yhat.data(),
                        SourceRef::Node(j) => &values[j],
                    }
                };
                let a = src(node.in_a);
                match node.in_b {
                    None => a.iter().map(|&x| node.op.value(x, 0.0)).collect::<Vec<_>>(),
                    Some(b) => {
                        let b = src(b);
                        (0..n).map(|k| node.op.value(a[k], b[k])).collect()
                    }
                }
            };
            values[i] = out;
        }
        if let Some(position) = values[self.root].iter().position(|v| !v.is_finite()) {
            return Err(Error::DegenerateLoss { what: "loss value", position });
        }
        Ok(Trace { active, values })
    }

    /// Per-element value of the root node (before sign and reduction).
    pub fn forward(&self, y: &Tensor, yhat: &Tensor) -> Result<Tensor> {
        let mut trace = self.trace(y, yhat)?;
        let out = std::mem::take(&mut trace.values[self.root]);
        Tensor::new(y.shape().to_vec(), out)
    }

    /// Mean over all elements, times the sign gene.
    pub fn reduce(&self, t: &Tensor) -> f64 {
        if t.is_empty() {
            return 0.0;
        }
        self.sign.value() * t.data().iter().sum::<f64>() / t.len() as f64
    }

    /// ∂(reduced loss)/∂ŷ at every position.
    pub fn backward(&self, y: &Tensor, yhat: &Tensor) -> Result<Tensor> {
        Ok(self.loss_and_grad(y, yhat)?.grad)
    }

    /// Forward, reduce and backward in one traversal.
    pub fn loss_and_grad(&self, y: &Tensor, yhat: &Tensor) -> Result<LossGrad> {
        let trace = self.trace(y, yhat)?;
        let n = y.len();
        let root_vals = &trace.values[self.root];
        let loss = if n == 0 {
            0.0
        } else {
            self.sign.value() * root_vals.iter().sum::<f64>() / n as f64
        };

        let mut grad = vec![0.0; n];
        let mut adjoint: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        adjoint[self.root] = vec![if n == 0 { 0.0 } else { self.sign.value() / n as f64 }; n];
        for i in (0..=self.root).rev() {
            if !trace.active[i] {
                continue;
            }
            let adj = std::mem::take(&mut adjoint[i]);
            if adj.is_empty() {
                continue;
            }
            let node = self.nodes[i];
            let read = |s: SourceRef| -> &[f64] {
                match s {
                    SourceRef::Y => y.data(),
                    SourceRef::YHat => yhat.data(),
                    SourceRef::Node(j) => &trace.values[j],
                }
            };
            let a = read(node.in_a);
            let b = node.in_b.map(read);
            let mut da = vec![0.0; n];
            let mut db = vec![0.0; if b.is_some() { n } else { 0 }];
            for k in 0..n {
                let p = node.op.partials(a[k], b.map_or(0.0, |b| b[k]));
                da[k] = adj[k] * p[0];
                if let Some(slot) = db.get_mut(k) {
                    *slot = adj[k] * p[1];
                }
            }
            let mut scatter = |src: SourceRef, d: Vec<f64>| match src {
                SourceRef::Y => {}
                SourceRef::YHat => grad.iter_mut().zip(&d).for_each(|(g, v)| *g += v),
                SourceRef::Node(j) => {
                    if adjoint[j].is_empty() {
                        adjoint[j] = d;
                    } else {
                        adjoint[j].iter_mut().zip(&d).for_each(|(g, v)| *g += v);
                    }
                }
            };
            scatter(node.in_a, da);
            if let Some(src) = node.in_b {
                scatter(src, db);
            }
        }
        if let Some(position) = grad.iter().position(|v| !v.is_finite()) {
            return Err(Error::DegenerateLoss { what: "gradient", position });
        }
        if !loss.is_finite() {
            return Err(Error::DegenerateLoss { what: "reduced loss", position: 0 });
        }
        Ok(LossGrad { loss, grad: Tensor::new(y.shape().to_vec(), grad)? })
    }
}
