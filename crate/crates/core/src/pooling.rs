//! Graph readout and classification head.
//!
//! The attention readout gates every node embedding feature by feature:
//!
//! ```text
//! G       = softmax over the graph's nodes, per column, of (X̂ · W_gate + b_gate)
//! pooled  = Σ_nodes G ⊙ X̂
//! ```
//!
//! The plain mean, sum and max readouts are kept for comparison. Pooled rows
//! go through one affine map and a softmax to give class probabilities.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{HegError, Result};
use crate::numerics::{derive_seed, softmax_over_rows, xavier_init, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    Attention,
    Mean,
    Sum,
    Max,
}

impl PoolingMode {
    pub const ALL: [PoolingMode; 4] = [
        PoolingMode::Mean,
        PoolingMode::Sum,
        PoolingMode::Max,
        PoolingMode::Attention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PoolingMode::Attention => "attention",
            PoolingMode::Mean => "mean",
            PoolingMode::Sum => "sum",
            PoolingMode::Max => "max",
        }
    }
}

impl fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PoolingMode {
    type Err = HegError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "attention" | "gated" | "feature_gated_attention" => Ok(PoolingMode::Attention),
            "mean" | "global_mean" => Ok(PoolingMode::Mean),
            "sum" | "global_sum" => Ok(PoolingMode::Sum),
            "max" | "global_max" => Ok(PoolingMode::Max),
            other => Err(HegError::Domain(format!("unknown pooling mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolingHead {
    pub mode: PoolingMode,
    /// `F̂ × F̂`, attention mode only.
    pub w_gate: Matrix,
    /// `1 × F̂`, attention mode only.
    pub b_gate: Matrix,
    /// `F̂ × classes`
    pub w_cls: Matrix,
    /// `1 × classes`
    pub b_cls: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub w_gate: Matrix,
    pub b_gate: Matrix,
    pub w_cls: Matrix,
    pub b_cls: Matrix,
}

impl HeadGrads {
    pub fn into_vec(self) -> Vec<Matrix> {
        vec![self.w_gate, self.b_gate, self.w_cls, self.b_cls]
    }
}

/// Forward state of [`PoolingHead::pool`].
#[derive(Debug, Clone)]
pub struct PoolTrace {
    embeddings: Matrix,
    groups: Vec<Vec<usize>>,
    /// Per-node gate values (attention mode).
    gates: Option<Matrix>,
    /// Winning node per graph and feature (max mode).
    argmax: Option<Vec<Vec<usize>>>,
}

impl PoolTrace {
    pub fn gates(&self) -> Option<&Matrix> {
        self.gates.as_ref()
    }

    /// Node indices of each graph.
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }
}

/// Node lists per graph, in node order. Every graph must own a node.
pub fn group_nodes(membership: &[usize], graph_count: usize) -> Result<Vec<Vec<usize>>> {
    let mut groups = vec![Vec::new(); graph_count];
    for (node, &k) in membership.iter().enumerate() {
        groups
            .get_mut(k)
            .ok_or_else(|| {
                HegError::Domain(format!(
                    "node {node} belongs to graph {k}, but the batch has {graph_count} graphs"
                ))
            })?
            .push(node);
    }
    if let Some(k) = groups.iter().position(Vec::is_empty) {
        return Err(HegError::Domain(format!("graph {k} has no nodes to pool")));
    }
    Ok(groups)
}

impl PoolingHead {
    pub fn new(mode: PoolingMode, width: usize, classes: usize, seed: u64) -> Result<Self> {
        if width == 0 || classes < 2 {
            return Err(HegError::Domain(format!(
                "head needs a positive width and at least two classes, got width {width}, {classes} classes"
            )));
        }
        Ok(Self {
            mode,
            w_gate: xavier_init(width, width, derive_seed(seed, 21)),
            b_gate: Matrix::zeros(1, width),
            w_cls: xavier_init(width, classes, derive_seed(seed, 22)),
            b_cls: Matrix::zeros(1, classes),
        })
    }

    pub fn width(&self) -> usize {
        self.w_cls.rows()
    }

    pub fn classes(&self) -> usize {
        self.w_cls.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.width();
        let c = self.classes();
        if self.w_gate.shape() != (f, f) || self.b_gate.shape() != (1, f) || self.b_cls.shape() != (1, c) {
            return Err(HegError::Dimension(format!(
                "head parameters inconsistent with width {f} and {c} classes"
            )));
        }
        Ok(())
    }

    pub fn parameters(&self) -> [(&'static str, &Matrix, bool); 4] {
        [
            ("w_gate", &self.w_gate, true),
            ("b_gate", &self.b_gate, false),
            ("w_cls", &self.w_cls, true),
            ("b_cls", &self.b_cls, false),
        ]
    }

    pub fn parameters_mut(&mut self) -> [&mut Matrix; 4] {
        [&mut self.w_gate, &mut self.b_gate, &mut self.w_cls, &mut self.b_cls]
    }

    /// One pooled row per graph.
    pub fn pool(&self, embeddings: &Matrix, membership: &[usize], graph_count: usize) -> Result<(Matrix, PoolTrace)> {
        let f = embeddings.cols();
        if f != self.width() {
            return Err(HegError::Dimension(format!(
                "embeddings have width {f}, head expects {}",
                self.width()
            )));
        }
        if membership.len() != embeddings.rows() {
            return Err(HegError::Dimension(format!(
                "{} membership entries for {} nodes",
                membership.len(),
                embeddings.rows()
            )));
        }
        let groups = group_nodes(membership, graph_count)?;
        let mut pooled = Matrix::zeros(graph_count, f);
        let mut gates = None;
        let mut argmax = None;
        match self.mode {
            PoolingMode::Mean | PoolingMode::Sum => {
                for (k, nodes) in groups.iter().enumerate() {
                    let out = pooled.row_mut(k);
                    for &p in nodes {
                        for (o, v) in out.iter_mut().zip(embeddings.row(p)) {
                            *o += v;
                        }
                    }
                    if self.mode == PoolingMode::Mean {
                        let n = nodes.len() as f64;
                        out.iter_mut().for_each(|o| *o /= n);
                    }
                }
            }
            PoolingMode::Max => {
                let mut winners = Vec::with_capacity(graph_count);
                for (k, nodes) in groups.iter().enumerate() {
                    let mut best = vec![nodes[0]; f];
                    for &p in &nodes[1..] {
                        for (c, b) in best.iter_mut().enumerate() {
                            // strict: first maximal node wins ties
                            if embeddings.get(p, c) > embeddings.get(*b, c) {
                                *b = p;
                            }
                        }
                    }
                    for (c, &b) in best.iter().enumerate() {
                        pooled.set(k, c, embeddings.get(b, c));
                    }
                    winners.push(best);
                }
                argmax = Some(winners);
            }
            PoolingMode::Attention => {
                let mut logits = embeddings.matmul(&self.w_gate)?;
                logits.add_row_broadcast(&self.b_gate)?;
                let mut g = Matrix::zeros(embeddings.rows(), f);
                for (k, nodes) in groups.iter().enumerate() {
                    let s = softmax_over_rows(&logits.select_rows(nodes))?;
                    let out = pooled.row_mut(k);
                    for (i, &p) in nodes.iter().enumerate() {
                        g.row_mut(p).copy_from_slice(s.row(i));
                        for ((o, gate), v) in out.iter_mut().zip(s.row(i)).zip(embeddings.row(p)) {
                            *o += gate * v;
                        }
                    }
                }
                gates = Some(g);
            }
        }
        Ok((
            pooled,
            PoolTrace {
                embeddings: embeddings.clone(),
                groups,
                gates,
                argmax,
            },
        ))
    }

    /// Gradient of the pooled rows with respect to the embeddings and the gate
    /// parameters (zero outside attention mode).
    pub fn pool_backward(&self, trace: &PoolTrace, d_pooled: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
        let x = &trace.embeddings;
        let f = x.cols();
        if d_pooled.shape() != (trace.groups.len(), f) || f != self.width() {
            return Err(HegError::Internal(format!(
                "pool trace for {} graphs of width {f} does not match gradient {}x{}",
                trace.groups.len(),
                d_pooled.rows(),
                d_pooled.cols()
            )));
        }
        let mut dx = Matrix::zeros(x.rows(), f);
        let mut dw_gate = Matrix::zeros(f, f);
        let mut db_gate = Matrix::zeros(1, f);
        match self.mode {
            PoolingMode::Mean | PoolingMode::Sum => {
                for (k, nodes) in trace.groups.iter().enumerate() {
                    let scale = if self.mode == PoolingMode::Mean {
                        1.0 / nodes.len() as f64
                    } else {
                        1.0
                    };
                    for &p in nodes {
                        for (d, g) in dx.row_mut(p).iter_mut().zip(d_pooled.row(k)) {
                            *d += g * scale;
                        }
                    }
                }
            }
            PoolingMode::Max => {
                let winners = trace
                    .argmax
                    .as_ref()
                    .ok_or_else(|| HegError::Internal("max pooling trace has no argmax".into()))?;
                for (k, best) in winners.iter().enumerate() {
                    for (c, &p) in best.iter().enumerate() {
                        let v = dx.get(p, c) + d_pooled.get(k, c);
                        dx.set(p, c, v);
                    }
                }
            }
            PoolingMode::Attention => {
                let gates = trace
                    .gates
                    .as_ref()
                    .ok_or_else(|| HegError::Internal("attention trace has no gates".into()))?;
                // d logits[p][c] = G[p][c] · (dG[p][c] − Σ_q G[q][c] dG[q][c]),
                // with dG[p][c] = d_pooled[k][c] · X̂[p][c]
                let mut d_logits = Matrix::zeros(x.rows(), f);
                for (k, nodes) in trace.groups.iter().enumerate() {
                    let up = d_pooled.row(k);
                    let mut weighted = vec![0.0; f];
                    for &p in nodes {
                        for c in 0..f {
                            weighted[c] += gates.get(p, c) * up[c] * x.get(p, c);
                        }
                    }
                    for &p in nodes {
                        for c in 0..f {
                            let g = gates.get(p, c);
                            let d_gate = up[c] * x.get(p, c);
                            d_logits.set(p, c, g * (d_gate - weighted[c]));
                            let v = dx.get(p, c) + up[c] * g;
                            dx.set(p, c, v);
                        }
                    }
                }
                dw_gate = x.t_matmul(&d_logits)?;
                db_gate = d_logits.sum_rows();
                dx.add_assign(&d_logits.matmul_t(&self.w_gate)?)?;
            }
        }
        Ok((dx, dw_gate, db_gate))
    }

    /// Class logits `pooled · W_cls + b_cls`.
    pub fn logits(&self, pooled: &Matrix) -> Result<Matrix> {
        let mut z = pooled.matmul(&self.w_cls)?;
        z.add_row_broadcast(&self.b_cls)?;
        Ok(z)
    }

    /// Class probabilities, one row per graph.
    pub fn classify(&self, pooled: &Matrix) -> Result<Matrix> {
        Ok(row_softmax(&self.logits(pooled)?))
    }

    /// Returns `(d_pooled, d_w_cls, d_b_cls)` from the logit gradient.
    pub fn classifier_backward(&self, pooled: &Matrix, d_logits: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
        if d_logits.shape() != (pooled.rows(), self.classes()) {
            return Err(HegError::Internal(format!(
                "logit gradient {}x{} does not match {} graphs x {} classes",
                d_logits.rows(),
                d_logits.cols(),
                pooled.rows(),
                self.classes()
            )));
        }
        let dw = pooled.t_matmul(d_logits)?;
        let db = d_logits.sum_rows();
        let dp = d_logits.matmul_t(&self.w_cls)?;
        Ok((dp, dw, db))
    }
}

/// Softmax along each row.
pub fn row_softmax(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for r in 0..z.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

/// Mean negative log-likelihood of the true classes, computed from logits
/// with log-sum-exp, and its gradient `(softmax − onehot) / batch`.
pub fn cross_entropy_loss(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (n, c) = logits.shape();
    if labels.len() != n || n == 0 {
        return Err(HegError::Dimension(format!(
            "{} labels for {n} logit rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(HegError::Domain(format!("label {bad} out of range for {c} classes")));
    }
    let probs = row_softmax(logits);
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
    }
    let mut grad = probs;
    for (r, &label) in labels.iter().enumerate() {
        let v = grad.get(r, label) - 1.0;
        grad.set(r, label, v);
    }
    grad.scale(1.0 / n as f64);
    Ok((loss / n as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_gradient, relative_error, seeded_rng, unit_f64};
    use proptest::prelude::*;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = seeded_rng(seed);
        let data = (0..rows * cols).map(|_| unit_f64(&mut rng) * 2.0 - 1.0).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn single_node_attention_returns_the_node() {
        let head = PoolingHead::new(PoolingMode::Attention, 3, 2, 1).unwrap();
        let x = random_matrix(1, 3, 2);
        let (pooled, trace) = head.pool(&x, &[0], 1).unwrap();
        assert_eq!(pooled, x);
        assert_eq!(trace.gates().unwrap(), &Matrix::filled(1, 3, 1.0));
    }

    #[test]
    fn identical_nodes_split_gates_evenly() {
        let head = PoolingHead::new(PoolingMode::Attention, 3, 2, 1).unwrap();
        let row = random_matrix(1, 3, 2);
        let x = Matrix::from_rows(&[row.row(0), row.row(0)]);
        let (pooled, trace) = head.pool(&x, &[0, 0], 1).unwrap();
        assert_eq!(trace.gates().unwrap(), &Matrix::filled(2, 3, 0.5));
        assert!(relative_error(&pooled, &row) < 1e-15);
    }

    #[test]
    fn attention_matches_scalar_oracle() {
        let head = PoolingHead::new(PoolingMode::Attention, 4, 3, 7).unwrap();
        let x = random_matrix(5, 4, 8);
        let (pooled, _) = head.pool(&x, &[0; 5], 1).unwrap();
        for c in 0..4 {
            let logits: Vec<f64> = (0..5)
                .map(|p| {
                    let mut z = head.b_gate.get(0, c);
                    for j in 0..4 {
                        z += x.get(p, j) * head.w_gate.get(j, c);
                    }
                    z
                })
                .collect();
            let denom: f64 = logits.iter().map(|z| z.exp()).sum();
            let want: f64 = (0..5).map(|p| logits[p].exp() / denom * x.get(p, c)).sum();
            assert!((pooled.get(0, c) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn baseline_readouts() {
        let x = Matrix::from_rows(&[[1.0, -2.0], [3.0, 5.0], [10.0, 0.0]]);
        let membership = [0, 0, 1];
        let mut head = PoolingHead::new(PoolingMode::Mean, 2, 2, 0).unwrap();
        assert_eq!(head.pool(&x, &membership, 2).unwrap().0, Matrix::from_rows(&[[2.0, 1.5], [10.0, 0.0]]));
        head.mode = PoolingMode::Sum;
        assert_eq!(head.pool(&x, &membership, 2).unwrap().0, Matrix::from_rows(&[[4.0, 3.0], [10.0, 0.0]]));
        head.mode = PoolingMode::Max;
        assert_eq!(head.pool(&x, &membership, 2).unwrap().0, Matrix::from_rows(&[[3.0, 5.0], [10.0, 0.0]]));
    }

    #[test]
    fn max_ties_route_to_first_node() {
        let head = PoolingHead::new(PoolingMode::Max, 1, 2, 0).unwrap();
        let x = Matrix::from_rows(&[[1.0], [4.0], [4.0]]);
        let (_, trace) = head.pool(&x, &[0, 0, 0], 1).unwrap();
        let (dx, _, _) = head.pool_backward(&trace, &Matrix::filled(1, 1, 1.0)).unwrap();
        assert_eq!(dx, Matrix::from_rows(&[[0.0], [1.0], [0.0]]));
    }

    #[test]
    fn empty_graph_rejected() {
        let head = PoolingHead::new(PoolingMode::Mean, 2, 2, 0).unwrap();
        assert!(head.pool(&Matrix::zeros(2, 2), &[0, 0], 2).is_err());
        assert!(head.pool(&Matrix::zeros(2, 2), &[0, 3], 2).is_err());
    }

    #[test]
    fn classify_examples() {
        let mut head = PoolingHead::new(PoolingMode::Mean, 3, 4, 0).unwrap();
        head.w_cls = Matrix::zeros(3, 4);
        let p = head.classify(&random_matrix(2, 3, 1)).unwrap();
        assert!(p.data().iter().all(|v| (v - 0.25).abs() < 1e-15));

        let p = row_softmax(&Matrix::from_rows(&[[3f64.ln(), 0.0]]));
        assert!((p.get(0, 0) - 0.75).abs() < 1e-15 && (p.get(0, 1) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_examples() {
        let (loss, _) = cross_entropy_loss(&Matrix::zeros(1, 2), &[1]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        let (loss, grad) = cross_entropy_loss(&Matrix::from_rows(&[[60.0, -60.0]]), &[0]).unwrap();
        assert!(loss < 1e-50);
        assert!(grad.max_abs() < 1e-50);
        let (loss, _) = cross_entropy_loss(&Matrix::from_rows(&[[-800.0, 800.0]]), &[0]).unwrap();
        assert!(loss.is_finite() && (loss - 1600.0).abs() < 1e-9);
        assert!(cross_entropy_loss(&Matrix::zeros(1, 2), &[2]).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let z = random_matrix(4, 3, 5).map(|v| v * 3.0);
        let labels = [2, 0, 1, 1];
        let (_, grad) = cross_entropy_loss(&z, &labels).unwrap();
        let num = finite_diff_gradient(|m| cross_entropy_loss(m, &labels).unwrap().0, &z, 1e-5).unwrap();
        assert!(relative_error(&grad, &num) < 1e-6);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        for mode in PoolingMode::ALL {
            let head = PoolingHead::new(mode, 3, 2, 1).unwrap();
            let x = random_matrix(4, 3, 2);
            let (_, trace) = head.pool(&x, &[0, 0, 1, 1], 2).unwrap();
            let (dx, dw, db) = head.pool_backward(&trace, &Matrix::zeros(2, 3)).unwrap();
            assert_eq!(dx.max_abs() + dw.max_abs() + db.max_abs(), 0.0, "{mode}");
        }
    }

    #[test]
    fn single_node_attention_gate_path_is_inert() {
        let head = PoolingHead::new(PoolingMode::Attention, 3, 2, 1).unwrap();
        let x = random_matrix(1, 3, 2);
        let (_, trace) = head.pool(&x, &[0], 1).unwrap();
        let up = random_matrix(1, 3, 3);
        let (dx, dw, db) = head.pool_backward(&trace, &up).unwrap();
        assert_eq!(dx, up);
        assert_eq!(dw.max_abs() + db.max_abs(), 0.0);
    }

    #[test]
    fn pool_backward_matches_finite_differences_in_every_mode() {
        let membership = [0, 1, 0, 1, 1, 0, 2];
        for mode in PoolingMode::ALL {
            let head = PoolingHead::new(mode, 4, 3, 11).unwrap();
            let x = random_matrix(7, 4, 12);
            let up = random_matrix(3, 4, 13);
            let loss = |h: &PoolingHead, x: &Matrix| {
                let (p, _) = h.pool(x, &membership, 3).unwrap();
                p.data().iter().zip(up.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let (_, trace) = head.pool(&x, &membership, 3).unwrap();
            let (dx, dw, db) = head.pool_backward(&trace, &up).unwrap();
            let nx = finite_diff_gradient(|m| loss(&head, m), &x, 1e-5).unwrap();
            assert!(relative_error(&dx, &nx) < 1e-5, "{mode}");
            let nw = finite_diff_gradient(|m| loss(&PoolingHead { w_gate: m.clone(), ..head.clone() }, &x), &head.w_gate, 1e-5).unwrap();
            let nb = finite_diff_gradient(|m| loss(&PoolingHead { b_gate: m.clone(), ..head.clone() }, &x), &head.b_gate, 1e-5).unwrap();
            assert!(relative_error(&dw, &nw) < 1e-5, "{mode}");
            // per-column softmax ignores a column-constant shift, so the gate bias is inert
            assert!(db.max_abs() < 1e-12 && nb.max_abs() < 1e-9, "{mode}");
        }
    }

    #[test]
    fn classifier_backward_matches_finite_differences() {
        let head = PoolingHead::new(PoolingMode::Attention, 4, 3, 2).unwrap();
        let pooled = random_matrix(3, 4, 4);
        let labels = [0, 2, 1];
        let loss = |h: &PoolingHead, p: &Matrix| cross_entropy_loss(&h.logits(p).unwrap(), &labels).unwrap().0;
        let (_, dz) = cross_entropy_loss(&head.logits(&pooled).unwrap(), &labels).unwrap();
        let (dp, dw, db) = head.classifier_backward(&pooled, &dz).unwrap();
        let np = finite_diff_gradient(|m| loss(&head, m), &pooled, 1e-5).unwrap();
        let nw = finite_diff_gradient(|m| loss(&PoolingHead { w_cls: m.clone(), ..head.clone() }, &pooled), &head.w_cls, 1e-5).unwrap();
        let nb = finite_diff_gradient(|m| loss(&PoolingHead { b_cls: m.clone(), ..head.clone() }, &pooled), &head.b_cls, 1e-5).unwrap();
        assert!(relative_error(&dp, &np) < 1e-6);
        assert!(relative_error(&dw, &nw) < 1e-6);
        assert!(relative_error(&db, &nb) < 1e-6);
    }

    proptest! {
        #[test]
        fn gates_sum_to_one_per_graph(seed in 0u64..5000, n in 1usize..12, graphs in 1usize..4) {
            prop_assume!(n >= graphs);
            let head = PoolingHead::new(PoolingMode::Attention, 5, 2, seed).unwrap();
            let x = random_matrix(n, 5, seed + 1).map(|v| v * 4.0);
            let membership: Vec<usize> = (0..n).map(|i| i % graphs).collect();
            let (_, trace) = head.pool(&x, &membership, graphs).unwrap();
            let gates = trace.gates().unwrap();
            for nodes in trace.groups() {
                for c in 0..5 {
                    let total: f64 = nodes.iter().map(|&p| gates.get(p, c)).sum();
                    prop_assert!((total - 1.0).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn probabilities_sum_to_one(seed in 0u64..5000) {
            let head = PoolingHead::new(PoolingMode::Mean, 4, 5, seed).unwrap();
            let p = head.classify(&random_matrix(3, 4, seed).map(|v| v * 20.0)).unwrap();
            for r in 0..3 {
                prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
