//! Shared helpers for the integration suites.
#![allow(dead_code)]

use lnl_core::nn::{Activation, DenseLayer, DenseNet, NetShape};
use lnl_core::objective::{backward, evaluate, LossSpec, LossTerm, Points};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-4;
pub const GRADIENT_CASES: u64 = 140;

pub const LOSS_KINDS: [&str; 7] = ["ce", "gce", "mse", "l_reg", "l_cl", "l_spade", "l_total"];

#[derive(Debug)]
pub struct GradientCase {
    pub seed: u64,
    pub loss: &'static str,
    pub parameters: usize,
    /// Coordinates whose difference stencil crosses a ReLU kink; left out of the comparison.
    pub kinked: usize,
    pub rel_error: f64,
    pub abs_error: f64,
}

impl GradientCase {
    pub fn passes(&self) -> bool {
        self.rel_error <= FD_TOL
    }
}

fn rows(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-scale..scale)).collect()).collect()
}

fn simplex(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let e: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0_f64..2.0).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

fn term(kind: &str, rng: &mut ChaCha8Rng, shape: &NetShape) -> LossTerm<f64> {
    let n = rng.random_range(2..7);
    let (d, k) = (shape.input, shape.classes);
    let labels = |rng: &mut ChaCha8Rng| (0..n).map(|_| rng.random_range(0..k)).collect::<Vec<_>>();
    match kind {
        "ce" => LossTerm::CrossEntropy { inputs: rows(rng, n, d, 1.5), labels: labels(rng) },
        "gce" => LossTerm::Gce { inputs: rows(rng, n, d, 1.5), labels: labels(rng), q: rng.random_range(0.2..1.0) },
        "mse" => LossTerm::SoftmaxMse { inputs: rows(rng, n, d, 1.5), targets: simplex(rng, n, k) },
        "l_x" => LossTerm::SoftCrossEntropy { inputs: rows(rng, n, d, 1.5), targets: simplex(rng, n, k) },
        "l_reg" => LossTerm::PriorKl { inputs: rows(rng, n, d, 1.5) },
        "l_cl" => LossTerm::Contrastive { views: rows(rng, 2 * (n / 2).max(1), d, 1.5), delta: rng.random_range(0.2..1.0) },
        "l_spade" => {
            let feat_dim = *shape.extractor.last().unwrap();
            let clean = if rng.random_bool(0.5) {
                Points::Inputs(rows(rng, n, d, 1.5))
            } else {
                Points::Features(rows(rng, n, feat_dim, 1.0).into_iter().map(|r| r.into_iter().map(f64::abs).collect()).collect())
            };
            let m = rng.random_range(1..6);
            let outliers = rows(rng, m, feat_dim, 1.0).into_iter().map(|r| r.into_iter().map(f64::abs).collect()).collect();
            LossTerm::Spade { clean, outliers, temperature: rng.random_range(0.5..2.0) }
        }
        other => panic!("unknown loss {other}"),
    }
}

fn spec(kind: &str, rng: &mut ChaCha8Rng, shape: &NetShape) -> LossSpec<f64> {
    if kind != "l_total" {
        return LossSpec::single(term(kind, rng, shape));
    }
    let mut s = LossSpec::new();
    for (name, w) in [("l_x", 1.0), ("mse", 30.0), ("l_reg", 1.0), ("l_cl", 1.0), ("l_spade", 0.1)] {
        let w = w * rng.random_range(0.5..1.5);
        s = s.with(w, term(name, rng, shape));
    }
    s
}

fn signs_through(layers: &[DenseLayer<f64>], x: &[f64], out: &mut Vec<bool>) -> Vec<f64> {
    let mut h = x.to_vec();
    for l in layers {
        let mut next = Vec::with_capacity(l.n_out);
        for o in 0..l.n_out {
            let pre = l.biases[o] + (0..l.n_in).map(|i| l.weights[o * l.n_in + i] * h[i]).sum::<f64>();
            if l.activation == Activation::Relu {
                out.push(pre > 0.0);
                next.push(pre.max(0.0));
            } else {
                next.push(pre);
            }
        }
        h = next;
    }
    h
}

/// ReLU on/off pattern over every path the spec evaluates.
fn relu_pattern(net: &DenseNet<f64>, spec: &LossSpec<f64>) -> Vec<bool> {
    let mut out = Vec::new();
    let through_head = |x: &[f64], from_input: bool, projector: bool, out: &mut Vec<bool>| {
        let z = if from_input { signs_through(net.extractor(), x, out) } else { x.to_vec() };
        let head = if projector { net.projector() } else { net.classifier() };
        signs_through(head, &z, out);
    };
    for wt in &spec.terms {
        match &wt.term {
            LossTerm::CrossEntropy { inputs, .. }
            | LossTerm::Gce { inputs, .. }
            | LossTerm::SoftCrossEntropy { inputs, .. }
            | LossTerm::SoftmaxMse { inputs, .. }
            | LossTerm::PriorKl { inputs } => inputs.iter().for_each(|x| through_head(x, true, false, &mut out)),
            LossTerm::Contrastive { views, .. } => views.iter().for_each(|x| through_head(x, true, true, &mut out)),
            LossTerm::Spade { clean, outliers, .. } => {
                match clean {
                    Points::Inputs(xs) => xs.iter().for_each(|x| through_head(x, true, false, &mut out)),
                    Points::Features(zs) => zs.iter().for_each(|z| through_head(z, false, false, &mut out)),
                }
                outliers.iter().for_each(|z| through_head(z, false, false, &mut out));
            }
        }
    }
    out
}

/// Analytic gradient against central differences for one seeded random configuration.
pub fn gradient_case(seed: u64) -> GradientCase {
    let loss = LOSS_KINDS[(seed % LOSS_KINDS.len() as u64) as usize];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = NetShape {
        input: rng.random_range(2..6),
        extractor: (0..rng.random_range(1..3)).map(|_| rng.random_range(3..8)).collect(),
        classifier_hidden: if rng.random_bool(0.3) { vec![rng.random_range(2..5)] } else { vec![] },
        classes: rng.random_range(2..6),
        projector: (0..rng.random_range(0..3)).map(|_| rng.random_range(2..6)).collect(),
    };
    let mut net = DenseNet::<f64>::init(&shape, &mut rng).unwrap();
    let spec = spec(loss, &mut rng, &shape);
    let (grads, _) = backward(&net, &spec, 0).unwrap();
    let analytic = grads.flatten();
    let base = relu_pattern(&net, &spec);
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut kinked = vec![false; analytic.len()];
    for i in 0..net.parameter_count() {
        let p = net.parameter(i);
        net.set_parameter(i, p + FD_STEP);
        let up = evaluate(&net, &spec).unwrap().total;
        kinked[i] |= relu_pattern(&net, &spec) != base;
        net.set_parameter(i, p - FD_STEP);
        let down = evaluate(&net, &spec).unwrap().total;
        kinked[i] |= relu_pattern(&net, &spec) != base;
        net.set_parameter(i, p);
        numeric.push((up - down) / (2.0 * FD_STEP));
    }
    let analytic: Vec<f64> = analytic.iter().zip(&kinked).map(|(&a, &k)| if k { 0.0 } else { a }).collect();
    let numeric: Vec<f64> = numeric.iter().zip(&kinked).map(|(&n, &k)| if k { 0.0 } else { n }).collect();
    let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = norm(&analytic).max(norm(&numeric));
    // an exactly flat loss (e.g. saturated margin) has no meaningful relative error
    let rel_error = if scale < 1e-9 { diff } else { diff / scale };
    let kinked = kinked.iter().filter(|&&k| k).count();
    GradientCase { seed, loss, parameters: analytic.len(), kinked, rel_error, abs_error: diff }
}
