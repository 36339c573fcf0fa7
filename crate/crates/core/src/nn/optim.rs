use serde::{Deserialize, Serialize};

use super::{DenseNet, GradientBundle};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Velocity buffers for momentum SGD, shaped like the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Momentum<S> {
    weights: Vec<Vec<S>>,
    biases: Vec<Vec<S>>,
}

impl<S: Scalar> Momentum<S> {
    pub fn zeros_like(net: &DenseNet<S>) -> Self {
        let g = GradientBundle::zeros_like(net);
        Self {
            weights: g.weights,
            biases: g.biases,
        }
    }
}

/// One momentum SGD step with L2 weight decay (PyTorch convention):
///
/// ```text
/// g' = g + wd * w
/// v  = momentum * v + g'
/// w  = w - lr * v
/// ```
pub fn sgd_step<S: Scalar>(
    net: &mut DenseNet<S>,
    grads: &GradientBundle<S>,
    velocity: &mut Momentum<S>,
    config: &SgdConfig,
) -> Result<()> {
    if !(config.lr > 0.0) {
        return Err(Error::param("lr", "learning rate must be positive"));
    }
    let lr = S::lit(config.lr);
    let mu = S::lit(config.momentum);
    let wd = S::lit(config.weight_decay);
    for (li, layer) in net.layers_mut().iter_mut().enumerate() {
        let params = [
            (&mut layer.weights, &grads.weights[li], &mut velocity.weights[li]),
            (&mut layer.biases, &grads.biases[li], &mut velocity.biases[li]),
        ];
        for (p, g, v) in params {
            for ((w, &gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                let step = gi + wd * *w;
                *vi = mu * *vi + step;
                *w -= lr * *vi;
            }
        }
    }
    Ok(())
}
