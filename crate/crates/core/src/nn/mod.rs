//! Dense feed-forward network with a shared feature extractor and two heads.
//!
//! The layer list is split in three consecutive segments:
//!
//! ```text
//! [ extractor h ... | classifier f ... | projector g ... ]
//!   input -> d        d -> K             d -> p (L2-normalized)
//! ```
//!
//! Both heads read the extractor output. Gradients are computed analytically
//! by replaying a [`FeatureTrace`] / [`PathTrace`] recorded during the forward
//! pass.

pub mod loss;
mod optim;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{l2_norm, Scalar};

pub use optim::{sgd_step, Momentum, SgdConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Relu => x.max(S::zero()),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative<S: Scalar>(self, pre: S) -> S {
        match self {
            Activation::Relu => {
                if pre > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Identity => S::one(),
        }
    }
}

/// Fully connected layer, `y = act(W x + b)` with `W` stored row-major (`n_out x n_in`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer<S> {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<S>,
    pub biases: Vec<S>,
    pub activation: Activation,
}

impl<S: Scalar> DenseLayer<S> {
    pub fn new(
        n_in: usize,
        n_out: usize,
        weights: Vec<S>,
        biases: Vec<S>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.len() != n_in * n_out {
            return Err(Error::Dimension {
                context: "layer weights",
                expected: n_in * n_out,
                got: weights.len(),
            });
        }
        if biases.len() != n_out {
            return Err(Error::Dimension {
                context: "layer biases",
                expected: n_out,
                got: biases.len(),
            });
        }
        Ok(Self {
            n_in,
            n_out,
            weights,
            biases,
            activation,
        })
    }

    pub fn zeros(n_in: usize, n_out: usize, activation: Activation) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![S::zero(); n_in * n_out],
            biases: vec![S::zero(); n_out],
            activation,
        }
    }

    /// Symmetric uniform init in `[-1/sqrt(n_in), 1/sqrt(n_in)]` for weights and biases.
    pub fn init_uniform<R: Rng + ?Sized>(
        n_in: usize,
        n_out: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        let mut draw = || S::lit(rng.random_range(-bound..bound));
        let weights = (0..n_in * n_out).map(|_| draw()).collect();
        let biases = (0..n_out).map(|_| draw()).collect();
        Self {
            n_in,
            n_out,
            weights,
            biases,
            activation,
        }
    }

    fn pre_activation(&self, x: &[S]) -> Vec<S> {
        self.weights
            .chunks_exact(self.n_in)
            .zip(&self.biases)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi))
            .collect()
    }

    pub fn forward(&self, x: &[S]) -> Vec<S> {
        let mut out = self.pre_activation(x);
        for v in &mut out {
            *v = self.activation.apply(*v);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// Layer widths for building a network with [`DenseNet::init`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetShape {
    pub input: usize,
    /// Widths of the ReLU extractor layers; the last one is the feature dimension `d`.
    pub extractor: Vec<usize>,
    /// Hidden ReLU widths of the classifier head (empty = linear head).
    #[serde(default)]
    pub classifier_hidden: Vec<usize>,
    pub classes: usize,
    /// Widths of the projector head; the last layer is linear. Empty = normalize features directly.
    pub projector: Vec<usize>,
}

impl NetShape {
    pub fn new(input: usize, classes: usize) -> Self {
        Self {
            input,
            extractor: vec![64, 64],
            classifier_hidden: Vec::new(),
            classes,
            projector: vec![32],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNet<S> {
    layers: Vec<DenseLayer<S>>,
    extractor_len: usize,
    classifier_len: usize,
}

/// Unit-norm projection. `degenerate` marks the zero-vector fallback to `e_1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection<S> {
    pub vector: Vec<S>,
    pub degenerate: bool,
}

/// Forward record of a run through a contiguous block of layers.
#[derive(Clone, Debug)]
pub struct PathTrace<S> {
    inputs: Vec<Vec<S>>,
    pre: Vec<Vec<S>>,
    output: Vec<S>,
}

impl<S> PathTrace<S> {
    pub fn output(&self) -> &[S] {
        &self.output
    }
}

/// Extractor trace; `output()` is the feature vector `z = h(x)`.
pub type FeatureTrace<S> = PathTrace<S>;

#[derive(Clone, Debug)]
pub struct ProjectionTrace<S> {
    path: PathTrace<S>,
    norm: S,
    projection: Projection<S>,
}

impl<S> ProjectionTrace<S> {
    pub fn projection(&self) -> &Projection<S> {
        &self.projection
    }
}

/// Parameter gradients mirroring the layer list of a [`DenseNet`], plus the loss value.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle<S> {
    pub weights: Vec<Vec<S>>,
    pub biases: Vec<Vec<S>>,
    pub loss: S,
}

impl<S: Scalar> GradientBundle<S> {
    pub fn zeros_like(net: &DenseNet<S>) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| vec![S::zero(); l.weights.len()])
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| vec![S::zero(); l.biases.len()])
                .collect(),
            loss: S::zero(),
        }
    }

    /// Flattened in the same order as [`DenseNet::parameter`].
    pub fn flatten(&self) -> Vec<S> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn scale(&mut self, factor: S) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            for g in v {
                *g *= factor;
            }
        }
        self.loss *= factor;
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self
            .weights
            .iter_mut()
            .zip(&other.weights)
            .chain(self.biases.iter_mut().zip(&other.biases))
        {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.loss += other.loss;
    }

    pub fn is_finite(&self) -> bool {
        self.loss.is_finite()
            && self
                .weights
                .iter()
                .chain(&self.biases)
                .all(|v| v.iter().all(|g| g.is_finite()))
    }
}

impl<S: Scalar> DenseNet<S> {
    /// Assembles a network from an explicit layer list.
    ///
    /// `layers[..extractor_len]` form the extractor, the next `classifier_len`
    /// layers the classifier head, and the rest the projector head.
    pub fn from_layers(
        layers: Vec<DenseLayer<S>>,
        extractor_len: usize,
        classifier_len: usize,
    ) -> Result<Self> {
        if extractor_len == 0 || classifier_len == 0 {
            return Err(Error::param(
                "layers",
                "extractor and classifier need at least one layer each",
            ));
        }
        if extractor_len + classifier_len > layers.len() {
            return Err(Error::param("layers", "split indices exceed layer count"));
        }
        let net = Self {
            layers,
            extractor_len,
            classifier_len,
        };
        let check_chain = |seg: &[DenseLayer<S>], start: usize| -> Result<()> {
            let mut width = start;
            for l in seg {
                if l.n_in != width {
                    return Err(Error::Dimension {
                        context: "consecutive layers",
                        expected: width,
                        got: l.n_in,
                    });
                }
                width = l.n_out;
            }
            Ok(())
        };
        let input = net.layers[0].n_in;
        check_chain(net.extractor(), input)?;
        let d = net.feature_dim();
        check_chain(net.classifier(), d)?;
        check_chain(net.projector(), d)?;
        Ok(net)
    }

    pub fn init<R: Rng + ?Sized>(shape: &NetShape, rng: &mut R) -> Result<Self> {
        if shape.extractor.is_empty() {
            return Err(Error::param("extractor", "needs at least one layer"));
        }
        if shape.classes < 2 {
            return Err(Error::param("classes", "need at least two classes"));
        }
        if shape.input == 0 || shape.extractor.iter().chain(&shape.projector).any(|&w| w == 0) {
            return Err(Error::param("shape", "layer widths must be positive"));
        }
        let mut layers = Vec::new();
        let mut width = shape.input;
        for &w in &shape.extractor {
            layers.push(DenseLayer::init_uniform(width, w, Activation::Relu, rng));
            width = w;
        }
        let d = width;
        let mut push_head = |hidden: &[usize], out: usize, layers: &mut Vec<DenseLayer<S>>| {
            let mut width = d;
            for &w in hidden {
                layers.push(DenseLayer::init_uniform(width, w, Activation::Relu, rng));
                width = w;
            }
            layers.push(DenseLayer::init_uniform(width, out, Activation::Identity, rng));
            hidden.len() + 1
        };
        let classifier_len = push_head(&shape.classifier_hidden, shape.classes, &mut layers);
        if let Some((&last, hidden)) = shape.projector.split_last() {
            push_head(hidden, last, &mut layers);
        }
        Self::from_layers(layers, shape.extractor.len(), classifier_len)
    }

    pub fn layers(&self) -> &[DenseLayer<S>] {
        &self.layers
    }

    pub fn extractor(&self) -> &[DenseLayer<S>] {
        &self.layers[..self.extractor_len]
    }

    pub fn classifier(&self) -> &[DenseLayer<S>] {
        &self.layers[self.extractor_len..self.extractor_len + self.classifier_len]
    }

    pub fn projector(&self) -> &[DenseLayer<S>] {
        &self.layers[self.extractor_len + self.classifier_len..]
    }

    fn classifier_range(&self) -> std::ops::Range<usize> {
        self.extractor_len..self.extractor_len + self.classifier_len
    }

    fn projector_range(&self) -> std::ops::Range<usize> {
        self.extractor_len + self.classifier_len..self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    /// Extractor output width `d`.
    pub fn feature_dim(&self) -> usize {
        self.layers[self.extractor_len - 1].n_out
    }

    pub fn classes(&self) -> usize {
        self.layers[self.extractor_len + self.classifier_len - 1].n_out
    }

    pub fn projection_dim(&self) -> usize {
        self.projector()
            .last()
            .map_or(self.feature_dim(), |l| l.n_out)
    }

    fn check_input(&self, x: &[S]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                context: "network input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_features(&self, z: &[S]) -> Result<()> {
        if z.len() != self.feature_dim() {
            return Err(Error::Dimension {
                context: "feature vector",
                expected: self.feature_dim(),
                got: z.len(),
            });
        }
        Ok(())
    }

    pub fn forward_features(&self, x: &[S]) -> Result<Vec<S>> {
        self.check_input(x)?;
        Ok(run(self.extractor(), x))
    }

    /// Classifier head applied to a feature vector.
    pub fn head_logits(&self, z: &[S]) -> Result<Vec<S>> {
        self.check_features(z)?;
        Ok(run(self.classifier(), z))
    }

    pub fn forward_logits(&self, x: &[S]) -> Result<Vec<S>> {
        let z = self.forward_features(x)?;
        Ok(run(self.classifier(), &z))
    }

    pub fn forward_projection(&self, x: &[S]) -> Result<Projection<S>> {
        let z = self.forward_features(x)?;
        Ok(normalize(run(self.projector(), &z)))
    }

    pub fn trace_features(&self, x: &[S]) -> Result<FeatureTrace<S>> {
        self.check_input(x)?;
        Ok(trace(self.extractor(), x))
    }

    pub fn trace_classifier(&self, z: &[S]) -> Result<PathTrace<S>> {
        self.check_features(z)?;
        Ok(trace(self.classifier(), z))
    }

    pub fn trace_projector(&self, z: &[S]) -> Result<ProjectionTrace<S>> {
        self.check_features(z)?;
        let path = trace(self.projector(), z);
        let norm = l2_norm(&path.output);
        let projection = normalize(path.output.clone());
        Ok(ProjectionTrace {
            path,
            norm,
            projection,
        })
    }

    /// Accumulates classifier-head gradients for `d_logits` and returns `dL/dz`.
    pub fn backprop_classifier(
        &self,
        trace: &PathTrace<S>,
        d_logits: &[S],
        grads: &mut GradientBundle<S>,
    ) -> Vec<S> {
        let range = self.classifier_range();
        backprop(&self.layers[range.clone()], range.start, trace, d_logits, grads)
    }

    /// Accumulates projector gradients for `dL/d(unit projection)` and returns `dL/dz`.
    pub fn backprop_projector(
        &self,
        trace: &ProjectionTrace<S>,
        d_unit: &[S],
        grads: &mut GradientBundle<S>,
    ) -> Vec<S> {
        if trace.projection.degenerate {
            return vec![S::zero(); self.feature_dim()];
        }
        // d(u/|u|)/du = (I - e e^T) / |u|
        let e = &trace.projection.vector;
        let along: S = e.iter().zip(d_unit).map(|(&a, &b)| a * b).sum();
        let d_pre: Vec<S> = e
            .iter()
            .zip(d_unit)
            .map(|(&ei, &gi)| (gi - ei * along) / trace.norm)
            .collect();
        let range = self.projector_range();
        backprop(&self.layers[range.clone()], range.start, &trace.path, &d_pre, grads)
    }

    pub fn backprop_extractor(
        &self,
        trace: &FeatureTrace<S>,
        d_features: &[S],
        grads: &mut GradientBundle<S>,
    ) {
        backprop(self.extractor(), 0, trace, d_features, grads);
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::parameter_count).sum()
    }

    fn locate(&self, mut index: usize) -> (usize, bool, usize) {
        for (li, l) in self.layers.iter().enumerate() {
            if index < l.weights.len() {
                return (li, true, index);
            }
            index -= l.weights.len();
            if index < l.biases.len() {
                return (li, false, index);
            }
            index -= l.biases.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter by flat index (per layer: weights row-major, then biases).
    pub fn parameter(&self, index: usize) -> S {
        let (li, is_w, i) = self.locate(index);
        let l = &self.layers[li];
        if is_w {
            l.weights[i]
        } else {
            l.biases[i]
        }
    }

    pub fn set_parameter(&mut self, index: usize, value: S) {
        let (li, is_w, i) = self.locate(index);
        let l = &mut self.layers[li];
        if is_w {
            l.weights[i] = value;
        } else {
            l.biases[i] = value;
        }
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer<S>] {
        &mut self.layers
    }
}

fn run<S: Scalar>(layers: &[DenseLayer<S>], x: &[S]) -> Vec<S> {
    let mut cur = x.to_vec();
    for l in layers {
        cur = l.forward(&cur);
    }
    cur
}

fn trace<S: Scalar>(layers: &[DenseLayer<S>], x: &[S]) -> PathTrace<S> {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut cur = x.to_vec();
    for l in layers {
        let p = l.pre_activation(&cur);
        let out = p.iter().map(|&v| l.activation.apply(v)).collect();
        inputs.push(cur);
        pre.push(p);
        cur = out;
    }
    PathTrace {
        inputs,
        pre,
        output: cur,
    }
}

fn backprop<S: Scalar>(
    layers: &[DenseLayer<S>],
    offset: usize,
    trace: &PathTrace<S>,
    d_out: &[S],
    grads: &mut GradientBundle<S>,
) -> Vec<S> {
    let mut upstream = d_out.to_vec();
    for (li, l) in layers.iter().enumerate().rev() {
        let input = &trace.inputs[li];
        let d_pre: Vec<S> = upstream
            .iter()
            .zip(&trace.pre[li])
            .map(|(&g, &p)| g * l.activation.derivative(p))
            .collect();
        let gw = &mut grads.weights[offset + li];
        let gb = &mut grads.biases[offset + li];
        let mut d_in = vec![S::zero(); l.n_in];
        for (o, &dp) in d_pre.iter().enumerate() {
            if dp == S::zero() {
                continue;
            }
            gb[o] += dp;
            let row = &l.weights[o * l.n_in..(o + 1) * l.n_in];
            let grow = &mut gw[o * l.n_in..(o + 1) * l.n_in];
            for i in 0..l.n_in {
                grow[i] += dp * input[i];
                d_in[i] += dp * row[i];
            }
        }
        upstream = d_in;
    }
    upstream
}

/// L2-normalizes `u`; a zero vector falls back to the first basis vector.
pub fn normalize<S: Scalar>(mut u: Vec<S>) -> Projection<S> {
    let norm = l2_norm(&u);
    if norm > S::zero() && norm.is_finite() {
        for v in &mut u {
            *v /= norm;
        }
        Projection {
            vector: u,
            degenerate: false,
        }
    } else {
        log::debug!("zero-norm projection, falling back to e_1");
        let mut e = vec![S::zero(); u.len()];
        if let Some(first) = e.first_mut() {
            *first = S::one();
        }
        Projection {
            vector: e,
            degenerate: true,
        }
    }
}
