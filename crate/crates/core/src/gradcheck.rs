//! Analytic gradients against central finite differences, per component.

use serde::Serialize;

use crate::aggregators::{AggregatorKind, MultiAggregator, DEFAULT_STD_EPSILON};
use crate::error::Result;
use crate::graph::{batch_graphs, build_graph, TemporalBipartiteGraph};
use crate::layer::{Activation, HegLayer};
use crate::numerics::{derive_seed, finite_diff_gradient, relative_error, seeded_rng, unit_f64, Matrix};
use crate::pooling::{PoolingHead, PoolingMode};
use crate::synth::{generate_video, SynthSpec, SynthTask};
use crate::train::{Classifier, TrainConfig};

pub const FD_STEP: f64 = 1e-5;
pub const PASS_THRESHOLD: f64 = 1e-4;

/// Both gradients below this norm count as agreeing. Covers parameters whose
/// gradient is structurally zero, where the difference quotient is pure
/// rounding noise.
pub const ZERO_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentCheck {
    pub component: String,
    pub max_relative_error: f64,
}

impl ComponentCheck {
    pub fn passed(&self) -> bool {
        self.max_relative_error < PASS_THRESHOLD
    }
}

/// Relative error with the [`ZERO_FLOOR`] exemption.
pub fn gradient_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    if analytic.frobenius_norm() < ZERO_FLOOR && numeric.frobenius_norm() < ZERO_FLOOR {
        0.0
    } else {
        relative_error(analytic, numeric)
    }
}

fn uniform_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = seeded_rng(seed);
    let data = (0..rows * cols).map(|_| unit_f64(&mut rng) * 2.0 - 1.0).collect();
    Matrix::from_vec(rows, cols, data).expect("shape matches data")
}

fn dot(a: &Matrix, b: &Matrix) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Seeded graph of three sampled frames with two objects each and tie-free
/// continuous features.
pub fn fixture_graph(feature_dim: usize, seed: u64) -> Result<TemporalBipartiteGraph> {
    let spec = SynthSpec {
        num_videos: 1,
        frames_per_video: 3,
        min_objects: 2,
        max_objects: 2,
        feature_dim,
        task: SynthTask::SkewCoded,
        seed,
    };
    let video = generate_video(&spec, 1)?;
    let g = build_graph(&video.sequence, &video.features, 1)?;
    let n = g.features().rows();
    g.with_features(uniform_matrix(n, feature_dim, derive_seed(seed, 99)).map(|v| 2.0 * v))
}

fn check_matrices(pairs: &[(Matrix, Matrix)]) -> f64 {
    pairs.iter().map(|(a, n)| gradient_error(a, n)).fold(0.0, f64::max)
}

fn aggregator_check(kinds: &[AggregatorKind], seed: u64) -> Result<f64> {
    let agg = MultiAggregator::new(kinds, 8, 8, DEFAULT_STD_EPSILON, derive_seed(seed, 1))?;
    let x = uniform_matrix(5, 8, derive_seed(seed, 2));
    let up = uniform_matrix(1, 8, derive_seed(seed, 3));
    let loss = |a: &MultiAggregator, x: &Matrix| dot(&a.multi_aggregate(x).expect("aggregate").0, &up);
    let (_, trace) = agg.multi_aggregate(&x)?;
    let (dx, dw, db) = agg.multi_aggregate_backward(&trace, &up)?;
    let nx = finite_diff_gradient(|m| loss(&agg, m), &x, FD_STEP)?;
    let with = |w: Option<&Matrix>, b: Option<&Matrix>| {
        let mut a = agg.clone();
        if let Some(w) = w {
            a.w_proj = w.clone();
        }
        if let Some(b) = b {
            a.b_proj = b.clone();
        }
        a
    };
    let nw = finite_diff_gradient(|m| loss(&with(Some(m), None), &x), &agg.w_proj, FD_STEP)?;
    let nb = finite_diff_gradient(|m| loss(&with(None, Some(m)), &x), &agg.b_proj, FD_STEP)?;
    Ok(check_matrices(&[(dx, nx), (dw, nw), (db, nb)]))
}

fn layer_check(g: &TemporalBipartiteGraph, seed: u64) -> Result<f64> {
    let f = g.feature_dim();
    let layer = HegLayer::new(&AggregatorKind::ALL, f, f / 2, Activation::Relu, DEFAULT_STD_EPSILON, derive_seed(seed, 4))?;
    let up = uniform_matrix(g.features().rows(), f / 2, derive_seed(seed, 5));
    let loss = |l: &HegLayer, x: &Matrix| dot(&l.forward(g, x).expect("forward").0, &up);
    let (_, trace) = layer.forward(g, g.features())?;
    let (dx, grads) = layer.backward(&trace, &up)?;
    let mut pairs = vec![(dx, finite_diff_gradient(|m| loss(&layer, m), g.features(), FD_STEP)?)];
    for (i, grad) in grads.into_vec().into_iter().enumerate() {
        let value = layer.parameters()[i].1.clone();
        let num = finite_diff_gradient(
            |m| {
                let mut l = layer.clone();
                *l.parameters_mut()[i] = m.clone();
                loss(&l, g.features())
            },
            &value,
            FD_STEP,
        )?;
        pairs.push((grad, num));
    }
    Ok(check_matrices(&pairs))
}

fn pooling_check(mode: PoolingMode, seed: u64) -> Result<f64> {
    let head = PoolingHead::new(mode, 8, 3, derive_seed(seed, 6))?;
    let x = uniform_matrix(7, 8, derive_seed(seed, 7));
    let membership = [0, 0, 1, 0, 1, 1, 1];
    let up = uniform_matrix(2, 8, derive_seed(seed, 8));
    let loss = |h: &PoolingHead, x: &Matrix| dot(&h.pool(x, &membership, 2).expect("pool").0, &up);
    let (_, trace) = head.pool(&x, &membership, 2)?;
    let (dx, dw, db) = head.pool_backward(&trace, &up)?;
    let nx = finite_diff_gradient(|m| loss(&head, m), &x, FD_STEP)?;
    let nw = finite_diff_gradient(|m| loss(&PoolingHead { w_gate: m.clone(), ..head.clone() }, &x), &head.w_gate, FD_STEP)?;
    let nb = finite_diff_gradient(|m| loss(&PoolingHead { b_gate: m.clone(), ..head.clone() }, &x), &head.b_gate, FD_STEP)?;
    Ok(check_matrices(&[(dx, nx), (dw, nw), (db, nb)]))
}

/// Every parameter of the full classifier (two layers with all five
/// aggregators, attention pooling, classifier) under the cross-entropy loss.
pub fn classifier_check(g: &TemporalBipartiteGraph, seed: u64) -> Result<f64> {
    let config = TrainConfig { seed, num_classes: Some(3), ..TrainConfig::default() };
    let clf = Classifier::new(&config, g.feature_dim(), 3)?;
    let batch = batch_graphs([g])?;
    let (_, grads) = clf.loss_and_gradients(&batch)?;
    let mut pairs = Vec::with_capacity(grads.len());
    for (i, grad) in grads.into_iter().enumerate() {
        let value = clf.parameters()[i].1.clone();
        let num = finite_diff_gradient(
            |m| {
                let mut c = clf.clone();
                *c.parameters_mut()[i] = m.clone();
                c.loss_and_gradients(&batch).map(|(l, _)| l).unwrap_or(f64::NAN)
            },
            &value,
            FD_STEP,
        )?;
        pairs.push((grad, num));
    }
    Ok(check_matrices(&pairs))
}

/// Runs every component check on seeded fixtures.
pub fn run(seed: u64) -> Result<Vec<ComponentCheck>> {
    let g = fixture_graph(8, seed)?;
    let mut out = Vec::new();
    let mut push = |component: String, err: f64| out.push(ComponentCheck { component, max_relative_error: err });
    for kind in AggregatorKind::ALL {
        push(format!("aggregator {kind}"), aggregator_check(&[kind], seed)?);
    }
    push("multi-aggregation".into(), aggregator_check(&AggregatorKind::ALL, seed)?);
    push("layer".into(), layer_check(&g, seed)?);
    for mode in PoolingMode::ALL {
        push(format!("pooling {mode}"), pooling_check(mode, seed)?);
    }
    push("full model".into(), classifier_check(&g, seed)?);
    Ok(out)
}
