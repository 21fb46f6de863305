//! Message-passing layer with separate root and neighbor transforms, and the
//! two-layer model with an optional width bottleneck.
//!
//! For node `p` with neighbors `N(p)`:
//!
//! ```text
//! x'_p = act( x_p · W_root + Ψ(X[N(p)]) · W_neigh + b_neigh )
//! ```
//!
//! where `Ψ` is a [`MultiAggregator`]. Rows are features, so every product is
//! a row vector times a matrix. A node without neighbors gets only the root
//! term: the neighbor term and its bias are both dropped.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregators::{AggregationTrace, AggregatorKind, MultiAggregator};
use crate::error::{HegError, Result};
use crate::graph::Neighborhoods;
use crate::numerics::{derive_seed, xavier_init, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::None => v,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::None => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = HegError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "none" | "identity" => Ok(Activation::None),
            other => Err(HegError::Domain(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HegLayer {
    /// `F × F'`
    pub w_root: Matrix,
    /// `F^a × F'`
    pub w_neigh: Matrix,
    /// `1 × F'`
    pub b_neigh: Matrix,
    pub aggregator: MultiAggregator,
    pub activation: Activation,
}

/// Gradients of one layer's parameters, same order as
/// [`HegLayer::parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub w_root: Matrix,
    pub w_neigh: Matrix,
    pub b_neigh: Matrix,
    pub w_proj: Matrix,
    pub b_proj: Matrix,
}

impl LayerGrads {
    pub fn into_vec(self) -> Vec<Matrix> {
        vec![self.w_root, self.w_neigh, self.b_neigh, self.w_proj, self.b_proj]
    }
}

/// Cached forward state of one layer.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    input: Matrix,
    /// Nodes that have at least one neighbor, ascending.
    nodes: Vec<usize>,
    neighbor_lists: Vec<Vec<usize>>,
    stats: Vec<AggregationTrace>,
    /// Concatenated statistics of `nodes`, one row each.
    concat: Matrix,
    /// Projected aggregates `concat · W_proj + b_proj`.
    aggregated: Matrix,
    pre_activation: Matrix,
}

impl HegLayer {
    /// Xavier weights, zero biases. The aggregator keeps the input width
    /// (`F^a = F`).
    pub fn new(
        kinds: &[AggregatorKind],
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        std_epsilon: f64,
        seed: u64,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(HegError::Domain(format!(
                "layer widths must be positive, got {in_dim} -> {out_dim}"
            )));
        }
        let aggregator = MultiAggregator::new(kinds, in_dim, in_dim, std_epsilon, derive_seed(seed, 0))?;
        Ok(Self {
            w_root: xavier_init(in_dim, out_dim, derive_seed(seed, 1)),
            w_neigh: xavier_init(in_dim, out_dim, derive_seed(seed, 2)),
            b_neigh: Matrix::zeros(1, out_dim),
            aggregator,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.w_root.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w_root.cols()
    }

    /// Checks the shape relations between the parameter matrices.
    pub fn validate(&self) -> Result<()> {
        let (f, fo) = self.w_root.shape();
        let fa = self.aggregator.out_dim();
        if self.aggregator.in_dim() != f {
            return Err(HegError::Dimension(format!(
                "aggregator reads width {}, root transform reads {f}",
                self.aggregator.in_dim()
            )));
        }
        if self.w_neigh.shape() != (fa, fo) || self.b_neigh.shape() != (1, fo) {
            return Err(HegError::Dimension(format!(
                "neighbor transform {}x{} / bias {}x{} do not fit {fa} -> {fo}",
                self.w_neigh.rows(),
                self.w_neigh.cols(),
                self.b_neigh.rows(),
                self.b_neigh.cols()
            )));
        }
        Ok(())
    }

    /// `(name, matrix, is_weight)` in a fixed order.
    pub fn parameters(&self) -> [(&'static str, &Matrix, bool); 5] {
        [
            ("w_root", &self.w_root, true),
            ("w_neigh", &self.w_neigh, true),
            ("b_neigh", &self.b_neigh, false),
            ("w_proj", &self.aggregator.w_proj, true),
            ("b_proj", &self.aggregator.b_proj, false),
        ]
    }

    pub fn parameters_mut(&mut self) -> [&mut Matrix; 5] {
        [
            &mut self.w_root,
            &mut self.w_neigh,
            &mut self.b_neigh,
            &mut self.aggregator.w_proj,
            &mut self.aggregator.b_proj,
        ]
    }

    pub fn forward(&self, g: &impl Neighborhoods, x: &Matrix) -> Result<(Matrix, LayerTrace)> {
        if x.cols() != self.in_dim() {
            return Err(HegError::Dimension(format!(
                "layer input has width {}, layer expects {}",
                x.cols(),
                self.in_dim()
            )));
        }
        if x.rows() != g.node_count() {
            return Err(HegError::Dimension(format!(
                "{} feature rows for a graph of {} nodes",
                x.rows(),
                g.node_count()
            )));
        }
        let nodes: Vec<usize> = (0..g.node_count())
            .filter(|&p| !g.neighbor_slice(p).is_empty())
            .collect();
        let neighbor_lists: Vec<Vec<usize>> = nodes.iter().map(|&p| g.neighbor_slice(p).to_vec()).collect();
        let stats = neighbor_lists
            .par_iter()
            .map(|list| self.aggregator.statistics(&x.select_rows(list)))
            .collect::<Result<Vec<_>>>()?;
        let width = self.aggregator.w_proj.rows();
        let mut concat_data = Vec::with_capacity(nodes.len() * width);
        for s in &stats {
            concat_data.extend_from_slice(s.concat());
        }
        let concat = Matrix::from_vec(nodes.len(), width, concat_data)?;
        let mut aggregated = concat.matmul(&self.aggregator.w_proj)?;
        aggregated.add_row_broadcast(&self.aggregator.b_proj)?;
        let mut neighbor_term = aggregated.matmul(&self.w_neigh)?;
        neighbor_term.add_row_broadcast(&self.b_neigh)?;

        let mut pre_activation = x.matmul(&self.w_root)?;
        for (i, &p) in nodes.iter().enumerate() {
            for (d, v) in pre_activation.row_mut(p).iter_mut().zip(neighbor_term.row(i)) {
                *d += v;
            }
        }
        let act = self.activation;
        let out = pre_activation.map(|v| act.apply(v));
        Ok((
            out,
            LayerTrace {
                input: x.clone(),
                nodes,
                neighbor_lists,
                stats,
                concat,
                aggregated,
                pre_activation,
            },
        ))
    }

    /// Returns the gradient with respect to the layer input and every
    /// parameter.
    pub fn backward(&self, trace: &LayerTrace, grad_out: &Matrix) -> Result<(Matrix, LayerGrads)> {
        if grad_out.shape() != trace.pre_activation.shape() || trace.input.cols() != self.in_dim() {
            return Err(HegError::Internal(format!(
                "layer trace ({}x{} -> {}x{}) does not match gradient {}x{} / layer {} -> {}",
                trace.input.rows(),
                trace.input.cols(),
                trace.pre_activation.rows(),
                trace.pre_activation.cols(),
                grad_out.rows(),
                grad_out.cols(),
                self.in_dim(),
                self.out_dim()
            )));
        }
        let mut d_pre = grad_out.clone();
        for (d, &pre) in d_pre.data_mut().iter_mut().zip(trace.pre_activation.data()) {
            *d *= self.activation.derivative(pre);
        }

        let grad_w_root = trace.input.t_matmul(&d_pre)?;
        let mut grad_x = d_pre.matmul_t(&self.w_root)?;

        let d_neighbor = d_pre.select_rows(&trace.nodes);
        let grad_w_neigh = trace.aggregated.t_matmul(&d_neighbor)?;
        let grad_b_neigh = d_neighbor.sum_rows();
        let d_aggregated = d_neighbor.matmul_t(&self.w_neigh)?;
        let grad_w_proj = trace.concat.t_matmul(&d_aggregated)?;
        let grad_b_proj = d_aggregated.sum_rows();
        let d_concat = d_aggregated.matmul_t(&self.aggregator.w_proj)?;

        let per_node = trace
            .stats
            .par_iter()
            .enumerate()
            .map(|(i, s)| self.aggregator.statistics_backward(s, d_concat.row(i)))
            .collect::<Result<Vec<_>>>()?;
        // scatter in node order so the reduction order is fixed
        for (grads, list) in per_node.iter().zip(&trace.neighbor_lists) {
            for (r, &q) in list.iter().enumerate() {
                for (d, v) in grad_x.row_mut(q).iter_mut().zip(grads.row(r)) {
                    *d += v;
                }
            }
        }
        Ok((
            grad_x,
            LayerGrads {
                w_root: grad_w_root,
                w_neigh: grad_w_neigh,
                b_neigh: grad_b_neigh,
                w_proj: grad_w_proj,
                b_proj: grad_b_proj,
            },
        ))
    }
}

/// Shape of the two-layer stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_dim: usize,
    pub kinds: Vec<AggregatorKind>,
    /// Halve the width between the layers (`F → ⌊F/2⌋ → F`).
    pub compression: bool,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub std_epsilon: f64,
}

impl ModelConfig {
    pub fn hidden_dim(&self) -> usize {
        if self.compression {
            self.in_dim / 2
        } else {
            self.in_dim
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HegModel {
    pub layer1: HegLayer,
    pub layer2: HegLayer,
    pub compression: bool,
}

#[derive(Debug, Clone)]
pub struct ModelTrace {
    layer1: LayerTrace,
    layer2: LayerTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub layer1: LayerGrads,
    pub layer2: LayerGrads,
}

impl HegModel {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let hidden = config.hidden_dim();
        if hidden == 0 {
            return Err(HegError::Domain(format!(
                "input width {} is too small for the bottleneck",
                config.in_dim
            )));
        }
        let layer1 = HegLayer::new(
            &config.kinds,
            config.in_dim,
            hidden,
            config.hidden_activation,
            config.std_epsilon,
            derive_seed(seed, 11),
        )?;
        let layer2 = HegLayer::new(
            &config.kinds,
            hidden,
            config.in_dim,
            config.output_activation,
            config.std_epsilon,
            derive_seed(seed, 12),
        )?;
        Ok(Self {
            layer1,
            layer2,
            compression: config.compression,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layer1.in_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layer1.out_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layer2.out_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.layer1.validate()?;
        self.layer2.validate()?;
        if self.layer2.in_dim() != self.layer1.out_dim() {
            return Err(HegError::Dimension(format!(
                "layer 1 emits width {}, layer 2 reads {}",
                self.layer1.out_dim(),
                self.layer2.in_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, g: &impl Neighborhoods, x: &Matrix) -> Result<(Matrix, ModelTrace)> {
        let (h, t1) = self.layer1.forward(g, x)?;
        let (out, t2) = self.layer2.forward(g, &h)?;
        Ok((out, ModelTrace { layer1: t1, layer2: t2 }))
    }

    pub fn backward(&self, trace: &ModelTrace, grad_out: &Matrix) -> Result<(Matrix, ModelGrads)> {
        let (dh, g2) = self.layer2.backward(&trace.layer2, grad_out)?;
        let (dx, g1) = self.layer1.backward(&trace.layer1, &dh)?;
        Ok((dx, ModelGrads { layer1: g1, layer2: g2 }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{batch_graphs, TemporalBipartiteGraph, NodeOrigin};
    use crate::numerics::{finite_diff_gradient, relative_error, seeded_rng, unit_f64};

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = seeded_rng(seed);
        let data = (0..rows * cols).map(|_| unit_f64(&mut rng) * 2.0 - 1.0).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    /// Complete bipartite links between consecutive partitions of the given sizes.
    fn graph(counts: &[usize], features: Matrix) -> TemporalBipartiteGraph {
        let mut origins = Vec::new();
        let mut partitions = Vec::new();
        for (i, &k) in counts.iter().enumerate() {
            let mut part = Vec::new();
            for o in 0..k {
                part.push(origins.len());
                origins.push(NodeOrigin { frame_position: i, frame_index: i, object_id: o as u64 });
            }
            partitions.push(part);
        }
        let mut edges = Vec::new();
        for w in partitions.windows(2) {
            for &u in &w[0] {
                for &v in &w[1] {
                    edges.push((u, v));
                    edges.push((v, u));
                }
            }
        }
        TemporalBipartiteGraph::from_parts(features, origins, edges, partitions, 0).unwrap()
    }

    fn zeroed(mut layer: HegLayer) -> HegLayer {
        for p in layer.parameters_mut() {
            *p = Matrix::zeros(p.rows(), p.cols());
        }
        layer
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let g = graph(&[2, 3], random_matrix(5, 4, 1));
        let layer = zeroed(HegLayer::new(&AggregatorKind::ALL, 4, 3, Activation::None, 1e-5, 0).unwrap());
        let (out, _) = layer.forward(&g, g.features()).unwrap();
        assert_eq!(out, Matrix::zeros(5, 3));
    }

    #[test]
    fn isolated_node_keeps_only_root_term() {
        let x = random_matrix(1, 3, 2);
        let g = graph(&[1], x.clone());
        let mut layer = HegLayer::new(&[AggregatorKind::Mean], 3, 3, Activation::None, 1e-5, 0).unwrap();
        layer.w_root = Matrix::identity(3);
        layer.b_neigh = Matrix::filled(1, 3, 5.0);
        let (out, _) = layer.forward(&g, &x).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn hand_computed_three_node_update() {
        // |X| = (1, 2): node 0 sees {1, 2}; nodes 1 and 2 each see {0}
        let x = Matrix::from_rows(&[[1.0], [2.0], [4.0]]);
        let g = graph(&[1, 2], x.clone());
        let agg = MultiAggregator::from_parts(
            &[AggregatorKind::Mean],
            Matrix::from_rows(&[[0.5]]),
            Matrix::from_rows(&[[0.25]]),
            1e-5,
        )
        .unwrap();
        let layer = HegLayer {
            w_root: Matrix::from_rows(&[[2.0]]),
            w_neigh: Matrix::from_rows(&[[3.0]]),
            b_neigh: Matrix::from_rows(&[[-1.0]]),
            aggregator: agg,
            activation: Activation::None,
        };
        let (out, _) = layer.forward(&g, &x).unwrap();
        // node 0: 2·1 + 3·(0.5·3 + 0.25) − 1 = 6.25
        // node 1: 2·2 + 3·(0.5·1 + 0.25) − 1 = 5.25
        // node 2: 2·4 + 3·(0.5·1 + 0.25) − 1 = 9.25
        assert_eq!(out, Matrix::from_rows(&[[6.25], [5.25], [9.25]]));

        let relu = HegLayer { activation: Activation::Relu, w_root: Matrix::from_rows(&[[-5.0]]), ..layer };
        let (out, _) = relu.forward(&g, &x).unwrap();
        assert_eq!(out, Matrix::from_rows(&[[0.0], [0.0], [0.0]]));
    }

    #[test]
    fn width_mismatch_rejected() {
        let g = graph(&[2, 1], random_matrix(3, 4, 1));
        let layer = HegLayer::new(&[AggregatorKind::Mean], 5, 3, Activation::None, 1e-5, 0).unwrap();
        assert!(matches!(layer.forward(&g, g.features()), Err(HegError::Dimension(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let g = graph(&[2, 3, 1], random_matrix(6, 4, 3));
        let layer = HegLayer::new(&AggregatorKind::ALL, 4, 3, Activation::Relu, 1e-5, 4).unwrap();
        let (_, trace) = layer.forward(&g, g.features()).unwrap();
        let (dx, grads) = layer.backward(&trace, &Matrix::zeros(6, 3)).unwrap();
        assert_eq!(dx.max_abs(), 0.0);
        assert!(grads.into_vec().iter().all(|m| m.max_abs() == 0.0));
    }

    #[test]
    fn single_node_identity_backward() {
        let x = random_matrix(1, 3, 2);
        let g = graph(&[1], x.clone());
        let mut layer = HegLayer::new(&[AggregatorKind::Mean], 3, 3, Activation::None, 1e-5, 0).unwrap();
        layer.w_root = Matrix::identity(3);
        let (_, trace) = layer.forward(&g, &x).unwrap();
        let up = random_matrix(1, 3, 9);
        let (dx, _) = layer.backward(&trace, &up).unwrap();
        assert_eq!(dx, up);
    }

    #[test]
    fn mismatched_trace_rejected() {
        let g = graph(&[2, 1], random_matrix(3, 4, 1));
        let layer = HegLayer::new(&[AggregatorKind::Mean], 4, 3, Activation::None, 1e-5, 0).unwrap();
        let (_, trace) = layer.forward(&g, g.features()).unwrap();
        assert!(matches!(layer.backward(&trace, &Matrix::zeros(3, 2)), Err(HegError::Internal(_))));
    }

    fn weighted_sum(m: &Matrix, w: &Matrix) -> f64 {
        m.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn layer_backward_matches_finite_differences() {
        let x = random_matrix(6, 4, 21);
        let g = graph(&[2, 3, 1], x.clone());
        let layer = HegLayer::new(&AggregatorKind::ALL, 4, 3, Activation::Relu, 1e-5, 22).unwrap();
        let up = random_matrix(6, 3, 23);
        let loss = |l: &HegLayer, x: &Matrix| weighted_sum(&l.forward(&g, x).unwrap().0, &up);
        let (_, trace) = layer.forward(&g, &x).unwrap();
        let (dx, grads) = layer.backward(&trace, &up).unwrap();
        let num = finite_diff_gradient(|m| loss(&layer, m), &x, 1e-5).unwrap();
        assert!(relative_error(&dx, &num) < 1e-5);
        for (i, analytic) in grads.into_vec().into_iter().enumerate() {
            let base = layer.parameters()[i].1.clone();
            let num = finite_diff_gradient(
                |m| {
                    let mut l = layer.clone();
                    *l.parameters_mut()[i] = m.clone();
                    loss(&l, &x)
                },
                &base,
                1e-5,
            )
            .unwrap();
            let err = relative_error(&analytic, &num);
            assert!(err < 1e-5, "{} relative error {err}", layer.parameters()[i].0);
        }
    }

    #[test]
    fn model_widths_follow_bottleneck_switch() {
        let mut cfg = ModelConfig {
            in_dim: 1024,
            kinds: vec![AggregatorKind::Mean],
            compression: true,
            hidden_activation: Activation::Relu,
            output_activation: Activation::None,
            std_epsilon: 1e-5,
        };
        let m = HegModel::new(&cfg, 1).unwrap();
        assert_eq!((m.in_dim(), m.hidden_dim(), m.out_dim()), (1024, 512, 1024));
        cfg.compression = false;
        let m = HegModel::new(&cfg, 1).unwrap();
        assert_eq!((m.in_dim(), m.hidden_dim(), m.out_dim()), (1024, 1024, 1024));
        cfg.compression = true;
        cfg.in_dim = 2048;
        assert_eq!(HegModel::new(&cfg, 1).unwrap().hidden_dim(), 1024);
        cfg.in_dim = 7;
        assert_eq!(HegModel::new(&cfg, 1).unwrap().hidden_dim(), 3);
        cfg.in_dim = 1;
        assert!(HegModel::new(&cfg, 1).is_err());
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_embeddings() {
        // the std guard ε would otherwise leak sqrt(ε) through the projection
        let cfg = ModelConfig {
            in_dim: 4,
            kinds: AggregatorKind::ALL.to_vec(),
            compression: true,
            hidden_activation: Activation::Relu,
            output_activation: Activation::None,
            std_epsilon: 0.0,
        };
        let m = HegModel::new(&cfg, 3).unwrap();
        let g = graph(&[2, 2], Matrix::zeros(4, 4));
        let (out, _) = m.forward(&g, g.features()).unwrap();
        assert_eq!(out.max_abs(), 0.0);
    }

    #[test]
    fn batched_forward_equals_separate_forwards() {
        let cfg = ModelConfig {
            in_dim: 4,
            kinds: AggregatorKind::ALL.to_vec(),
            compression: true,
            hidden_activation: Activation::Relu,
            output_activation: Activation::None,
            std_epsilon: 1e-5,
        };
        let m = HegModel::new(&cfg, 5).unwrap();
        let a = graph(&[2, 1], random_matrix(3, 4, 1));
        let b = graph(&[1, 3, 2], random_matrix(6, 4, 2));
        let batch = batch_graphs([&a, &b]).unwrap();
        let (joint, _) = m.forward(&batch, batch.features()).unwrap();
        let (oa, _) = m.forward(&a, a.features()).unwrap();
        let (ob, _) = m.forward(&b, b.features()).unwrap();
        for r in 0..3 {
            assert_eq!(joint.row(r), oa.row(r));
        }
        for r in 0..6 {
            assert_eq!(joint.row(r + 3), ob.row(r));
        }
    }
}
