//! Weighted loss compositions over a [`DenseNet`] and their exact gradients.
//!
//! A [`LossSpec`] is a list of weighted terms, each carrying its own inputs.
//! [`evaluate`] computes values with forward passes only; [`backward`]
//! computes the same values and the analytic parameter gradient. Each term
//! is a mean over its own samples, so an empty term contributes zero.

use crate::error::{Error, Result};
use crate::geometry::spade::{spade_loss, spade_loss_grad};
use crate::nn::loss::{
    cross_entropy, cross_entropy_grad, energy, energy_grad, gce_grad, gce_loss, soft_cross_entropy,
    soft_cross_entropy_grad, softmax, softmax_backward, softmax_mse, softmax_mse_grad,
};
use crate::nn::{DenseNet, GradientBundle};
use crate::scalar::Scalar;
use crate::ssl::{contrastive_loss, contrastive_loss_grad, prior_kl, prior_kl_grad};

/// Where a set of points enters the network.
#[derive(Clone, Debug, PartialEq)]
pub enum Points<S> {
    /// Raw inputs, passed through the extractor.
    Inputs(Vec<Vec<S>>),
    /// Feature vectors, fed straight to a head.
    Features(Vec<Vec<S>>),
}

impl<S> Points<S> {
    fn len(&self) -> usize {
        match self {
            Points::Inputs(v) | Points::Features(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LossTerm<S> {
    CrossEntropy {
        inputs: Vec<Vec<S>>,
        labels: Vec<usize>,
    },
    Gce {
        inputs: Vec<Vec<S>>,
        labels: Vec<usize>,
        q: S,
    },
    SoftCrossEntropy {
        inputs: Vec<Vec<S>>,
        targets: Vec<Vec<S>>,
    },
    SoftmaxMse {
        inputs: Vec<Vec<S>>,
        targets: Vec<Vec<S>>,
    },
    /// KL from the uniform prior to the batch-mean prediction.
    PriorKl { inputs: Vec<Vec<S>> },
    /// Views of the same sample adjacent; uses the projector head.
    Contrastive { views: Vec<Vec<S>>, delta: S },
    /// Energy margin: `clean` pushed low, `outliers` (features) pushed high.
    Spade {
        clean: Points<S>,
        outliers: Vec<Vec<S>>,
        temperature: S,
    },
}

impl<S> LossTerm<S> {
    pub fn name(&self) -> &'static str {
        match self {
            LossTerm::CrossEntropy { .. } => "ce",
            LossTerm::Gce { .. } => "gce",
            LossTerm::SoftCrossEntropy { .. } => "l_x",
            LossTerm::SoftmaxMse { .. } => "l_u",
            LossTerm::PriorKl { .. } => "l_reg",
            LossTerm::Contrastive { .. } => "l_cl",
            LossTerm::Spade { .. } => "l_spade",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedTerm<S> {
    pub weight: S,
    pub term: LossTerm<S>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossSpec<S> {
    pub terms: Vec<WeightedTerm<S>>,
}

impl<S: Scalar> LossSpec<S> {
    pub fn new() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn single(term: LossTerm<S>) -> Self {
        Self::new().with(S::one(), term)
    }

    pub fn with(mut self, weight: S, term: LossTerm<S>) -> Self {
        self.terms.push(WeightedTerm { weight, term });
        self
    }
}

/// Unweighted value of every term plus the weighted total.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown<S> {
    pub terms: Vec<(&'static str, S)>,
    pub total: S,
}

impl<S: Scalar> LossBreakdown<S> {
    pub fn get(&self, name: &str) -> Option<S> {
        self.terms.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }
}

fn mean<S: Scalar>(values: impl Iterator<Item = S>, n: usize) -> S {
    if n == 0 {
        S::zero()
    } else {
        values.sum::<S>() / S::from_usize_lossy(n)
    }
}

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

fn logits_of<S: Scalar>(net: &DenseNet<S>, inputs: &[Vec<S>]) -> Result<Vec<Vec<S>>> {
    inputs.iter().map(|x| net.forward_logits(x)).collect()
}

fn point_energies<S: Scalar>(net: &DenseNet<S>, points: &Points<S>, t: S) -> Result<Vec<S>> {
    match points {
        Points::Inputs(xs) => xs
            .iter()
            .map(|x| Ok(energy(&net.forward_logits(x)?, t)))
            .collect(),
        Points::Features(zs) => zs
            .iter()
            .map(|z| Ok(energy(&net.head_logits(z)?, t)))
            .collect(),
    }
}

fn term_value<S: Scalar>(net: &DenseNet<S>, term: &LossTerm<S>) -> Result<S> {
    Ok(match term {
        LossTerm::CrossEntropy { inputs, labels } => {
            check_len("term labels", inputs.len(), labels.len())?;
            let logits = logits_of(net, inputs)?;
            mean(
                logits.iter().zip(labels).map(|(l, &y)| cross_entropy(&softmax(l), y)),
                inputs.len(),
            )
        }
        LossTerm::Gce { inputs, labels, q } => {
            check_len("term labels", inputs.len(), labels.len())?;
            let mut vals = Vec::with_capacity(inputs.len());
            for (x, &y) in inputs.iter().zip(labels) {
                vals.push(gce_loss(&softmax(&net.forward_logits(x)?), y, *q)?);
            }
            mean(vals.into_iter(), inputs.len())
        }
        LossTerm::SoftCrossEntropy { inputs, targets } => {
            check_len("term targets", inputs.len(), targets.len())?;
            let logits = logits_of(net, inputs)?;
            mean(
                logits
                    .iter()
                    .zip(targets)
                    .map(|(l, t)| soft_cross_entropy(&softmax(l), t)),
                inputs.len(),
            )
        }
        LossTerm::SoftmaxMse { inputs, targets } => {
            check_len("term targets", inputs.len(), targets.len())?;
            let logits = logits_of(net, inputs)?;
            mean(
                logits
                    .iter()
                    .zip(targets)
                    .map(|(l, t)| softmax_mse(&softmax(l), t)),
                inputs.len(),
            )
        }
        LossTerm::PriorKl { inputs } => {
            let probs: Vec<Vec<S>> = logits_of(net, inputs)?.iter().map(|l| softmax(l)).collect();
            prior_kl(&probs)
        }
        LossTerm::Contrastive { views, delta } => {
            let projs = views
                .iter()
                .map(|x| Ok(net.forward_projection(x)?.vector))
                .collect::<Result<Vec<_>>>()?;
            contrastive_loss(&projs, *delta)?
        }
        LossTerm::Spade {
            clean,
            outliers,
            temperature,
        } => {
            let ce = point_energies(net, clean, *temperature)?;
            let oe = point_energies(net, &Points::Features(outliers.clone()), *temperature)?;
            spade_loss(&ce, &oe)
        }
    })
}

/// Forward-only evaluation of every term.
pub fn evaluate<S: Scalar>(net: &DenseNet<S>, spec: &LossSpec<S>) -> Result<LossBreakdown<S>> {
    let mut terms = Vec::with_capacity(spec.terms.len());
    let mut total = S::zero();
    for wt in &spec.terms {
        let v = term_value(net, &wt.term)?;
        total += wt.weight * v;
        terms.push((wt.term.name(), v));
    }
    Ok(LossBreakdown { terms, total })
}

/// Backpropagates `d_logits` for one input through classifier and extractor.
fn push_through_logits<S: Scalar>(
    net: &DenseNet<S>,
    x: &[S],
    grad_fn: impl FnOnce(&[S]) -> Result<(S, Vec<S>)>,
    scale: S,
    grads: &mut GradientBundle<S>,
) -> Result<S> {
    let ft = net.trace_features(x)?;
    let ct = net.trace_classifier(ft.output())?;
    let (v, mut d) = grad_fn(ct.output())?;
    for g in &mut d {
        *g *= scale;
    }
    let dz = net.backprop_classifier(&ct, &d, grads);
    net.backprop_extractor(&ft, &dz, grads);
    Ok(v)
}

fn term_backward<S: Scalar>(
    net: &DenseNet<S>,
    term: &LossTerm<S>,
    weight: S,
    grads: &mut GradientBundle<S>,
) -> Result<S> {
    let per = |n: usize| {
        if n == 0 {
            S::zero()
        } else {
            weight / S::from_usize_lossy(n)
        }
    };
    match term {
        LossTerm::CrossEntropy { inputs, labels } => {
            check_len("term labels", inputs.len(), labels.len())?;
            let scale = per(inputs.len());
            let mut vals = Vec::with_capacity(inputs.len());
            for (x, &y) in inputs.iter().zip(labels) {
                vals.push(push_through_logits(
                    net,
                    x,
                    |l| Ok(cross_entropy_grad(l, y)),
                    scale,
                    grads,
                )?);
            }
            Ok(mean(vals.into_iter(), inputs.len()))
        }
        LossTerm::Gce { inputs, labels, q } => {
            check_len("term labels", inputs.len(), labels.len())?;
            let scale = per(inputs.len());
            let mut vals = Vec::with_capacity(inputs.len());
            for (x, &y) in inputs.iter().zip(labels) {
                vals.push(push_through_logits(net, x, |l| gce_grad(l, y, *q), scale, grads)?);
            }
            Ok(mean(vals.into_iter(), inputs.len()))
        }
        LossTerm::SoftCrossEntropy { inputs, targets } => {
            check_len("term targets", inputs.len(), targets.len())?;
            let scale = per(inputs.len());
            let mut vals = Vec::with_capacity(inputs.len());
            for (x, t) in inputs.iter().zip(targets) {
                vals.push(push_through_logits(
                    net,
                    x,
                    |l| Ok(soft_cross_entropy_grad(l, t)),
                    scale,
                    grads,
                )?);
            }
            Ok(mean(vals.into_iter(), inputs.len()))
        }
        LossTerm::SoftmaxMse { inputs, targets } => {
            check_len("term targets", inputs.len(), targets.len())?;
            let scale = per(inputs.len());
            let mut vals = Vec::with_capacity(inputs.len());
            for (x, t) in inputs.iter().zip(targets) {
                vals.push(push_through_logits(
                    net,
                    x,
                    |l| Ok(softmax_mse_grad(l, t)),
                    scale,
                    grads,
                )?);
            }
            Ok(mean(vals.into_iter(), inputs.len()))
        }
        LossTerm::PriorKl { inputs } => {
            let traces = inputs
                .iter()
                .map(|x| {
                    let ft = net.trace_features(x)?;
                    let ct = net.trace_classifier(ft.output())?;
                    Ok((ft, ct))
                })
                .collect::<Result<Vec<_>>>()?;
            let probs: Vec<Vec<S>> = traces.iter().map(|(_, ct)| softmax(ct.output())).collect();
            let (v, d_probs) = prior_kl_grad(&probs);
            for (((ft, ct), p), dp) in traces.iter().zip(&probs).zip(&d_probs) {
                let d: Vec<S> = softmax_backward(p, dp).into_iter().map(|g| g * weight).collect();
                let dz = net.backprop_classifier(ct, &d, grads);
                net.backprop_extractor(ft, &dz, grads);
            }
            Ok(v)
        }
        LossTerm::Contrastive { views, delta } => {
            let traces = views
                .iter()
                .map(|x| {
                    let ft = net.trace_features(x)?;
                    let pt = net.trace_projector(ft.output())?;
                    Ok((ft, pt))
                })
                .collect::<Result<Vec<_>>>()?;
            let projs: Vec<Vec<S>> = traces
                .iter()
                .map(|(_, pt)| pt.projection().vector.clone())
                .collect();
            let (v, d_units) = contrastive_loss_grad(&projs, *delta)?;
            for ((ft, pt), du) in traces.iter().zip(&d_units) {
                let du: Vec<S> = du.iter().map(|&g| g * weight).collect();
                let dz = net.backprop_projector(pt, &du, grads);
                net.backprop_extractor(ft, &dz, grads);
            }
            Ok(v)
        }
        LossTerm::Spade {
            clean,
            outliers,
            temperature,
        } => {
            let t = *temperature;
            // (optional extractor trace, classifier trace) per clean point
            let mut clean_traces = Vec::with_capacity(clean.len());
            match clean {
                Points::Inputs(xs) => {
                    for x in xs {
                        let ft = net.trace_features(x)?;
                        let ct = net.trace_classifier(ft.output())?;
                        clean_traces.push((Some(ft), ct));
                    }
                }
                Points::Features(zs) => {
                    for z in zs {
                        clean_traces.push((None, net.trace_classifier(z)?));
                    }
                }
            }
            let outlier_traces = outliers
                .iter()
                .map(|z| net.trace_classifier(z))
                .collect::<Result<Vec<_>>>()?;
            let ce: Vec<S> = clean_traces.iter().map(|(_, ct)| energy(ct.output(), t)).collect();
            let oe: Vec<S> = outlier_traces.iter().map(|ct| energy(ct.output(), t)).collect();
            let (v, dc, d_o) = spade_loss_grad(&ce, &oe);
            for ((ft, ct), &de) in clean_traces.iter().zip(&dc) {
                let (_, de_dl) = energy_grad(ct.output(), t);
                let d: Vec<S> = de_dl.into_iter().map(|g| g * de * weight).collect();
                let dz = net.backprop_classifier(ct, &d, grads);
                if let Some(ft) = ft {
                    net.backprop_extractor(ft, &dz, grads);
                }
            }
            for (ct, &de) in outlier_traces.iter().zip(&d_o) {
                let (_, de_dl) = energy_grad(ct.output(), t);
                let d: Vec<S> = de_dl.into_iter().map(|g| g * de * weight).collect();
                net.backprop_classifier(ct, &d, grads);
            }
            Ok(v)
        }
    }
}

/// Analytic gradient of the weighted sum of all terms.
///
/// `batch` is only used to label a non-finite loss error.
pub fn backward<S: Scalar>(
    net: &DenseNet<S>,
    spec: &LossSpec<S>,
    batch: usize,
) -> Result<(GradientBundle<S>, LossBreakdown<S>)> {
    let mut grads = GradientBundle::zeros_like(net);
    let mut terms = Vec::with_capacity(spec.terms.len());
    let mut total = S::zero();
    for wt in &spec.terms {
        let v = term_backward(net, &wt.term, wt.weight, &mut grads)?;
        if !v.is_finite() || !grads.is_finite() {
            return Err(Error::NonFinite {
                term: wt.term.name().to_string(),
                batch,
            });
        }
        total += wt.weight * v;
        terms.push((wt.term.name(), v));
    }
    grads.loss = total;
    Ok((grads, LossBreakdown { terms, total }))
}
