//! Training loop, evaluation protocol, ablation grids and checkpoints.

use std::fmt::Write as _;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregators::{canonical_kinds, format_kinds, AggregatorKind, DEFAULT_STD_EPSILON};
use crate::binio::{put_f64, put_u32, put_u64, ByteReader};
use crate::error::{HegError, Result};
use crate::graph::{batch_graphs, GraphBatch, TemporalBipartiteGraph};
use crate::layer::{Activation, HegModel, ModelConfig, ModelTrace};
use crate::numerics::{adam_step, derive_seed, seeded_rng, AdamConfig, AdamState, Matrix};
use crate::pooling::{cross_entropy_loss, row_softmax, PoolTrace, PoolingHead, PoolingMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Frame sampling stride used when graphs are built from annotations.
    pub stride: usize,
    /// Tube length in frames.
    pub tau: usize,
    /// Tube box enlargement factor.
    pub box_scale: f64,
    pub kinds: Vec<AggregatorKind>,
    pub pooling: PoolingMode,
    pub compression: bool,
    pub std_epsilon: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Taken from the training labels when absent.
    pub num_classes: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 0.5,
            batch_size: 32,
            epochs: 200,
            seed: 0,
            stride: 5,
            tau: 16,
            box_scale: 1.5,
            kinds: AggregatorKind::ALL.to_vec(),
            pooling: PoolingMode::Attention,
            compression: true,
            std_epsilon: DEFAULT_STD_EPSILON,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            num_classes: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(HegError::Domain(format!("invalid training config: {what}")));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be finite and non-negative");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.stride == 0 {
            return bad("batch_size, epochs and stride must be positive");
        }
        if self.tau < 2 || self.tau % 2 != 0 {
            return bad("tau must be even and at least 2");
        }
        if !(self.box_scale > 0.0) || !(self.std_epsilon >= 0.0) {
            return bad("box_scale must be positive and std_epsilon non-negative");
        }
        if self.kinds.is_empty() {
            return bad("kinds must not be empty");
        }
        if matches!(self.num_classes, Some(c) if c < 2) {
            return bad("num_classes must be at least 2");
        }
        canonical_kinds(&self.kinds)?;
        self.adam(0.0).map(|_| ())
    }

    /// Parses a TOML document; missing keys take their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self =
            toml::from_str(text).map_err(|e| HegError::Domain(format!("config: {e}")))?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn model_config(&self, in_dim: usize) -> Result<ModelConfig> {
        Ok(ModelConfig {
            in_dim,
            kinds: canonical_kinds(&self.kinds)?,
            compression: self.compression,
            hidden_activation: Activation::Relu,
            output_activation: Activation::None,
            std_epsilon: self.std_epsilon,
        })
    }

    fn adam(&self, weight_decay: f64) -> Result<AdamState> {
        AdamState::new(
            1,
            1,
            AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.adam_epsilon,
                weight_decay,
            },
        )
    }
}

/// HEG encoder plus readout and classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub model: HegModel,
    pub head: PoolingHead,
}

/// Forward state of [`Classifier::forward`].
#[derive(Debug, Clone)]
pub struct ClassifierTrace {
    model: ModelTrace,
    pool: PoolTrace,
    pooled: Matrix,
}

impl Classifier {
    pub fn new(config: &TrainConfig, in_dim: usize, classes: usize) -> Result<Self> {
        config.validate()?;
        let model = HegModel::new(&config.model_config(in_dim)?, derive_seed(config.seed, 1))?;
        let head = PoolingHead::new(config.pooling, model.out_dim(), classes, derive_seed(config.seed, 2))?;
        Ok(Self { model, head })
    }

    pub fn in_dim(&self) -> usize {
        self.model.in_dim()
    }

    pub fn classes(&self) -> usize {
        self.head.classes()
    }

    /// `(name, value, is_weight)` for every trainable matrix, in a fixed order.
    pub fn parameters(&self) -> Vec<(String, &Matrix, bool)> {
        let mut out = Vec::new();
        for (prefix, layer) in [("layer1", &self.model.layer1), ("layer2", &self.model.layer2)] {
            for (name, m, w) in layer.parameters() {
                out.push((format!("{prefix}.{name}"), m, w));
            }
        }
        for (name, m, w) in self.head.parameters() {
            out.push((format!("head.{name}"), m, w));
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        out.extend(self.model.layer1.parameters_mut());
        out.extend(self.model.layer2.parameters_mut());
        out.extend(self.head.parameters_mut());
        out
    }

    /// Class logits, one row per graph in the batch.
    pub fn forward(&self, batch: &GraphBatch) -> Result<(Matrix, ClassifierTrace)> {
        let (emb, model) = self.model.forward(batch, batch.features())?;
        let (pooled, pool) = self.head.pool(&emb, batch.membership(), batch.graph_count())?;
        let logits = self.head.logits(&pooled)?;
        Ok((logits, ClassifierTrace { model, pool, pooled }))
    }

    /// Gradients in [`Classifier::parameters`] order.
    pub fn backward(&self, trace: &ClassifierTrace, d_logits: &Matrix) -> Result<Vec<Matrix>> {
        let (d_pooled, dw_cls, db_cls) = self.head.classifier_backward(&trace.pooled, d_logits)?;
        let (d_emb, dw_gate, db_gate) = self.head.pool_backward(&trace.pool, &d_pooled)?;
        let (_, grads) = self.model.backward(&trace.model, &d_emb)?;
        let mut out = grads.layer1.into_vec();
        out.extend(grads.layer2.into_vec());
        out.extend([dw_gate, db_gate, dw_cls, db_cls]);
        Ok(out)
    }

    /// Mean cross-entropy over the batch and its parameter gradients.
    pub fn loss_and_gradients(&self, batch: &GraphBatch) -> Result<(f64, Vec<Matrix>)> {
        let (logits, trace) = self.forward(batch)?;
        let (loss, d_logits) = cross_entropy_loss(&logits, batch.labels())?;
        Ok((loss, self.backward(&trace, &d_logits)?))
    }

    /// Class probabilities for each graph.
    pub fn predict_proba(&self, graphs: &[TemporalBipartiteGraph]) -> Result<Matrix> {
        const CHUNK: usize = 64;
        let mut rows = Vec::with_capacity(graphs.len() * self.classes());
        for chunk in graphs.chunks(CHUNK) {
            let batch = batch_graphs(chunk)?;
            let (logits, _) = self.forward(&batch)?;
            rows.extend_from_slice(row_softmax(&logits).data());
        }
        Matrix::from_vec(graphs.len(), self.classes(), rows)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub classifier: Classifier,
    /// Mean per-graph loss of each epoch, measured during the epoch.
    pub loss_history: Vec<f64>,
}

fn check_dataset(graphs: &[TemporalBipartiteGraph], in_dim: usize, classes: usize) -> Result<()> {
    if graphs.is_empty() {
        return Err(HegError::Domain("dataset is empty".into()));
    }
    for (i, g) in graphs.iter().enumerate() {
        if g.feature_dim() != in_dim {
            return Err(HegError::Dimension(format!(
                "graph {i} has feature width {}, expected {in_dim}",
                g.feature_dim()
            )));
        }
        if g.label() >= classes {
            return Err(HegError::Domain(format!(
                "graph {i} has label {} but the classifier has {classes} classes",
                g.label()
            )));
        }
    }
    Ok(())
}

fn infer_classes(config: &TrainConfig, graphs: &[TemporalBipartiteGraph]) -> usize {
    config
        .num_classes
        .unwrap_or_else(|| graphs.iter().map(|g| g.label() + 1).max().unwrap_or(0).max(2))
}

/// Trains from a fresh seeded initialization.
pub fn train(config: &TrainConfig, graphs: &[TemporalBipartiteGraph]) -> Result<TrainOutcome> {
    config.validate()?;
    let in_dim = graphs
        .first()
        .ok_or_else(|| HegError::Domain("dataset is empty".into()))?
        .feature_dim();
    let classifier = Classifier::new(config, in_dim, infer_classes(config, graphs))?;
    train_from(config, classifier, graphs)
}

/// Continues training an existing classifier with fresh optimizer state.
pub fn train_from(
    config: &TrainConfig,
    mut classifier: Classifier,
    graphs: &[TemporalBipartiteGraph],
) -> Result<TrainOutcome> {
    config.validate()?;
    check_dataset(graphs, classifier.in_dim(), classifier.classes())?;
    let mut states = Vec::new();
    for (_, m, is_weight) in classifier.parameters() {
        let template = config.adam(if is_weight { config.weight_decay } else { 0.0 })?;
        states.push(Some(AdamState {
            first_moment: Matrix::zeros(m.rows(), m.cols()),
            second_moment: Matrix::zeros(m.rows(), m.cols()),
            ..template
        }));
    }
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut loss_history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = seeded_rng(derive_seed(config.seed, 1_000_000 + epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch = batch_graphs(idx.iter().map(|&i| &graphs[i]))?;
            let (loss, grads) = classifier.loss_and_gradients(&batch)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(HegError::Divergence { epoch, batch: b, loss });
            }
            total += loss * idx.len() as f64;
            for ((param, grad), state) in classifier.parameters_mut().into_iter().zip(&grads).zip(states.iter_mut()) {
                let p = std::mem::replace(param, Matrix::zeros(0, 0));
                let (p, s) = adam_step(p, grad, state.take().expect("state present"))?;
                *param = p;
                *state = Some(s);
            }
        }
        let mean = total / graphs.len() as f64;
        debug!("epoch {epoch}: loss {mean:.6}");
        loss_history.push(mean);
    }
    if let Some(last) = loss_history.last() {
        info!("trained {} epochs, final loss {last:.6}", config.epochs);
    }
    Ok(TrainOutcome { classifier, loss_history })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub graphs: usize,
    /// Percentage of graphs whose highest-probability class is the label.
    pub accuracy: f64,
    /// Mean of the defined per-class APs, as a percentage.
    pub mean_ap: f64,
    /// Percentage AP per class; `None` when the class has no positives.
    pub per_class_ap: Vec<Option<f64>>,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// All-point interpolated average precision, `Σ (R_n − R_{n−1}) · P_n`, as a
/// percentage. Items are ranked by descending score, equal scores by
/// ascending index. `None` when there are no positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len(), "scores and labels differ in length");
    let total = positive.iter().filter(|&&p| p).count();
    if total == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            // recall rises by 1/total exactly at positives
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(100.0 * sum / total as f64)
}

/// Report from class probabilities and labels.
pub fn report_from_scores(probs: &Matrix, labels: &[usize]) -> Result<EvalReport> {
    let (n, classes) = probs.shape();
    if n == 0 || labels.len() != n {
        return Err(HegError::Domain(format!(
            "evaluation needs one label per scored graph, got {} labels for {n} rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(HegError::Domain(format!("label {bad} out of range for {classes} classes")));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut correct = 0;
    for (r, &label) in labels.iter().enumerate() {
        let pred = argmax(probs.row(r));
        confusion[label][pred] += 1;
        correct += usize::from(pred == label);
    }
    let mut per_class_ap = Vec::with_capacity(classes);
    for c in 0..classes {
        let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let ap = average_precision(&probs.column(c), &positive);
        if ap.is_none() {
            info!("class {c} has no positives and is left out of mAP");
        }
        per_class_ap.push(ap);
    }
    let defined: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
    let mean_ap = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(EvalReport {
        graphs: n,
        accuracy: 100.0 * correct as f64 / n as f64,
        mean_ap,
        per_class_ap,
        confusion,
    })
}

pub fn evaluate(classifier: &Classifier, graphs: &[TemporalBipartiteGraph]) -> Result<EvalReport> {
    check_dataset(graphs, classifier.in_dim(), classifier.classes())?;
    let probs = classifier.predict_proba(graphs)?;
    let labels: Vec<usize> = graphs.iter().map(|g| g.label()).collect();
    report_from_scores(&probs, &labels)
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "graphs    {}", self.graphs);
        let _ = writeln!(s, "accuracy  {:.2}%", self.accuracy);
        let _ = writeln!(s, "mAP       {:.2}%", self.mean_ap);
        for (c, ap) in self.per_class_ap.iter().enumerate() {
            match ap {
                Some(ap) => {
                    let _ = writeln!(s, "AP[{c}]     {ap:.2}%");
                }
                None => {
                    let _ = writeln!(s, "AP[{c}]     n/a (no positives)");
                }
            }
        }
        let _ = writeln!(s, "confusion (rows true, columns predicted)");
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>5}")).collect();
            let _ = writeln!(s, "{}", cells.join(""));
        }
        s
    }
}

/// One configuration of an ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub kinds: Vec<AggregatorKind>,
    pub pooling: PoolingMode,
    pub compression: bool,
}

impl AblationCell {
    pub fn from_config(config: &TrainConfig) -> Self {
        Self {
            kinds: config.kinds.clone(),
            pooling: config.pooling,
            compression: config.compression,
        }
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            kinds: self.kinds.clone(),
            pooling: self.pooling,
            compression: self.compression,
            ..base.clone()
        }
    }
}

/// Cumulative aggregator subsets, mean first, all five last.
pub fn table3_grid(base: &TrainConfig) -> Vec<AblationCell> {
    AggregatorKind::cumulative_subsets()
        .into_iter()
        .map(|kinds| AblationCell { kinds, ..AblationCell::from_config(base) })
        .collect()
}

pub fn pooling_grid(base: &TrainConfig) -> Vec<AblationCell> {
    PoolingMode::ALL
        .into_iter()
        .map(|pooling| AblationCell { pooling, ..AblationCell::from_config(base) })
        .collect()
}

/// Without compression first, then with.
pub fn compression_grid(base: &TrainConfig) -> Vec<AblationCell> {
    [false, true]
        .into_iter()
        .map(|compression| AblationCell { compression, ..AblationCell::from_config(base) })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub aggregators: String,
    pub pooling: PoolingMode,
    pub compression: bool,
    pub final_loss: Option<f64>,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

/// Trains and evaluates every cell. Cells run in parallel; a failing cell is
/// recorded and the rest still run.
pub fn ablate(
    base: &TrainConfig,
    grid: &[AblationCell],
    train_set: &[TemporalBipartiteGraph],
    eval_set: &[TemporalBipartiteGraph],
) -> Result<Vec<AblationRow>> {
    if grid.is_empty() {
        return Err(HegError::Domain("ablation grid is empty".into()));
    }
    Ok(grid
        .par_iter()
        .map(|cell| {
            let config = cell.apply(base);
            let outcome = train(&config, train_set)
                .and_then(|o| evaluate(&o.classifier, eval_set).map(|r| (o.loss_history.last().copied(), r)));
            let (final_loss, report, error) = match outcome {
                Ok((loss, report)) => (loss, Some(report), None),
                Err(e) => (None, None, Some(e.to_string())),
            };
            AblationRow {
                aggregators: format_kinds(&cell.kinds),
                pooling: cell.pooling,
                compression: cell.compression,
                final_loss,
                report,
                error,
            }
        })
        .collect())
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<24} {:<10} {:<12} {:>10} {:>9} {:>9}",
        "aggregators", "pooling", "compression", "loss", "acc%", "mAP%"
    );
    for r in rows {
        let (acc, map) = match &r.report {
            Some(rep) => (format!("{:.2}", rep.accuracy), format!("{:.2}", rep.mean_ap)),
            None => ("failed".to_string(), "-".to_string()),
        };
        let loss = r.final_loss.map_or_else(|| "-".to_string(), |l| format!("{l:.5}"));
        let _ = writeln!(
            s,
            "{:<24} {:<10} {:<12} {:>10} {:>9} {:>9}",
            r.aggregators,
            r.pooling.name(),
            if r.compression { "on" } else { "off" },
            loss,
            acc,
            map
        );
        if let Some(e) = &r.error {
            let _ = writeln!(s, "  error: {e}");
        }
    }
    s
}

/// Adjacent row pairs whose accuracy does not drop, out of all adjacent pairs.
pub fn monotone_pairs(rows: &[AblationRow]) -> (usize, usize) {
    let acc: Vec<Option<f64>> = rows.iter().map(|r| r.report.as_ref().map(|x| x.accuracy)).collect();
    let pairs = acc.len().saturating_sub(1);
    let ok = acc
        .windows(2)
        .filter(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if b >= a))
        .count();
    (ok, pairs)
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HEGC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    config: TrainConfig,
    in_dim: usize,
    classes: usize,
    parameters: Vec<(String, usize, usize)>,
}

/// Layout: magic, u32 version, u64 metadata length, metadata JSON, then every
/// parameter matrix as row-major little-endian f64 in metadata order.
pub fn encode_checkpoint(config: &TrainConfig, classifier: &Classifier) -> Vec<u8> {
    let params = classifier.parameters();
    let meta = CheckpointMeta {
        config: config.clone(),
        in_dim: classifier.in_dim(),
        classes: classifier.classes(),
        parameters: params.iter().map(|(n, m, _)| (n.clone(), m.rows(), m.cols())).collect(),
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u64(&mut out, json.len() as u64);
    out.extend_from_slice(&json);
    for (_, m, _) in params {
        for &v in m.data() {
            put_f64(&mut out, v);
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(TrainConfig, Classifier)> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(HegError::Format {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let len = r.usize("metadata length")?;
    let meta_offset = r.offset();
    let meta: CheckpointMeta = serde_json::from_slice(r.take(len, "metadata")?).map_err(|e| HegError::Format {
        offset: meta_offset,
        message: format!("checkpoint metadata: {e}"),
    })?;
    let mut classifier = Classifier::new(&meta.config, meta.in_dim, meta.classes)?;
    let expected: Vec<(String, usize, usize)> = classifier
        .parameters()
        .iter()
        .map(|(n, m, _)| (n.clone(), m.rows(), m.cols()))
        .collect();
    if expected != meta.parameters {
        return Err(HegError::Format {
            offset: meta_offset,
            message: "checkpoint parameters do not match the configured architecture".into(),
        });
    }
    for param in classifier.parameters_mut() {
        let (rows, cols) = param.shape();
        r.require(rows * cols, 8, "parameter values")?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f64("parameter value")?);
        }
        *param = Matrix::from_vec(rows, cols, data)?;
    }
    r.finish()?;
    Ok((meta.config, classifier))
}

pub fn save_checkpoint(path: &Path, config: &TrainConfig, classifier: &Classifier) -> Result<()> {
    std::fs::write(path, encode_checkpoint(config, classifier)).map_err(|e| HegError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(TrainConfig, Classifier)> {
    let bytes = std::fs::read(path).map_err(|e| HegError::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeOrigin;
    use crate::numerics::unit_f64;
    use proptest::prelude::*;

    /// Two-frame graphs whose node values carry the label in their sign.
    fn toy_dataset(count: usize, dim: usize, seed: u64) -> Vec<TemporalBipartiteGraph> {
        let mut rng = seeded_rng(seed);
        (0..count)
            .map(|i| {
                let label = i % 2;
                let sign = if label == 0 { -1.0 } else { 1.0 };
                let data = (0..4 * dim).map(|_| sign * (0.5 + unit_f64(&mut rng))).collect();
                let features = Matrix::from_vec(4, dim, data).unwrap();
                let origins = (0..4)
                    .map(|p| NodeOrigin { frame_position: p / 2, frame_index: 5 * (p / 2), object_id: p as u64 })
                    .collect();
                let mut edges = Vec::new();
                for a in 0..2 {
                    for b in 2..4 {
                        edges.push((a, b));
                        edges.push((b, a));
                    }
                }
                TemporalBipartiteGraph::from_parts(features, origins, edges, vec![vec![0, 1], vec![2, 3]], label).unwrap()
            })
            .collect()
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-2,
            weight_decay: 0.0,
            batch_size: 4,
            epochs: 30,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.learning_rate, c.weight_decay, c.batch_size, c.epochs), (1e-4, 0.5, 32, 200));
        assert_eq!((c.stride, c.tau, c.box_scale), (5, 16, 1.5));
        c.validate().unwrap();
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = TrainConfig { kinds: vec![AggregatorKind::Mean, AggregatorKind::Moment3], num_classes: Some(3), ..quick_config() };
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
        let partial = TrainConfig::from_toml("epochs = 7\npooling = \"max\"\n").unwrap();
        assert_eq!(partial.epochs, 7);
        assert_eq!(partial.pooling, PoolingMode::Max);
        assert_eq!(partial.batch_size, 32);
        assert!(TrainConfig::from_toml("epoch = 7").is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        for c in [
            TrainConfig { kinds: vec![], ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { tau: 15, ..TrainConfig::default() },
            TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
            TrainConfig { num_classes: Some(1), ..TrainConfig::default() },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let data = toy_dataset(6, 4, 1);
        let config = TrainConfig { learning_rate: 0.0, epochs: 3, ..quick_config() };
        let before = Classifier::new(&config, 4, 2).unwrap();
        let out = train(&config, &data).unwrap();
        assert_eq!(out.classifier, before);
        assert!(out.loss_history.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn same_seed_same_history() {
        let data = toy_dataset(10, 4, 2);
        let a = train(&quick_config(), &data).unwrap();
        let b = train(&quick_config(), &data).unwrap();
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(encode_checkpoint(&quick_config(), &a.classifier), encode_checkpoint(&quick_config(), &b.classifier));
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let data = toy_dataset(16, 4, 4);
        for pooling in PoolingMode::ALL {
            let config = TrainConfig { pooling, ..quick_config() };
            let out = train(&config, &data).unwrap();
            assert!(out.loss_history.last() < out.loss_history.first(), "{pooling}");
            assert_eq!(evaluate(&out.classifier, &data).unwrap().accuracy, 100.0, "{pooling}");
        }
    }

    #[test]
    fn classifier_gradients_match_finite_differences() {
        use crate::numerics::{finite_diff_gradient, relative_error};
        let data = toy_dataset(3, 4, 5);
        let batch = batch_graphs(&data).unwrap();
        let config = TrainConfig { num_classes: Some(3), ..quick_config() };
        let clf = Classifier::new(&config, 4, 3).unwrap();
        let (_, grads) = clf.loss_and_gradients(&batch).unwrap();
        for (i, grad) in grads.iter().enumerate() {
            let value = clf.parameters()[i].1.clone();
            let num = finite_diff_gradient(
                |m| {
                    let mut c = clf.clone();
                    *c.parameters_mut()[i] = m.clone();
                    c.loss_and_gradients(&batch).unwrap().0
                },
                &value,
                1e-5,
            )
            .unwrap();
            let scale = grad.frobenius_norm().max(num.frobenius_norm());
            // the gate bias gradient is identically zero
            assert!(scale < 1e-9 || relative_error(grad, &num) < 1e-5, "{}", clf.parameters()[i].0);
        }
    }

    #[test]
    fn divergence_names_epoch_and_batch() {
        let mut data = toy_dataset(4, 2, 6);
        let (rows, cols) = data[1].features().shape();
        let huge = (0..rows * cols).map(|i| if (i / cols) % 2 == 0 { 1e300 } else { -1e300 }).collect();
        let bad = Matrix::from_vec(rows, cols, huge).unwrap();
        data[1] = data[1].with_features(bad).unwrap();
        let err = train(&TrainConfig { batch_size: 2, ..quick_config() }, &data).unwrap_err();
        assert!(matches!(err, HegError::Divergence { epoch: 0, .. }), "{err}");
    }

    #[test]
    fn mismatched_width_rejected() {
        let mut data = toy_dataset(4, 3, 7);
        data.extend(toy_dataset(2, 4, 8));
        assert!(train(&quick_config(), &data).is_err());
        assert!(train(&quick_config(), &[]).is_err());
    }

    #[test]
    fn ap_fixtures() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert_eq!(ap, 100.0 * (1.0 / 1.0 + 2.0 / 3.0) / 2.0);
        assert!((ap - 83.333_333_333_333_33).abs() < 1e-12);
        assert_eq!(average_precision(&[0.1, 0.9, 0.5, 0.4], &[false, true, true, false]), Some(100.0));
        assert_eq!(average_precision(&[0.1, 0.2], &[false, false]), None);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.25, 0.5, 0.5, 0.1]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn constant_predictor_on_balanced_set() {
        let classes = 4;
        let labels: Vec<usize> = (0..20).map(|i| i % classes).collect();
        let probs = Matrix::filled(20, classes, 0.25);
        let r = report_from_scores(&probs, &labels).unwrap();
        assert_eq!(r.accuracy, 100.0 / classes as f64);
        assert_eq!(r.confusion[1][0], 5);
    }

    #[test]
    fn classes_without_positives_leave_map() {
        let probs = Matrix::from_rows(&[[0.9, 0.1, 0.0], [0.2, 0.8, 0.0]]);
        let r = report_from_scores(&probs, &[0, 1]).unwrap();
        assert_eq!(r.per_class_ap, vec![Some(100.0), Some(100.0), None]);
        assert_eq!(r.mean_ap, 100.0);
    }

    #[test]
    fn grids() {
        let base = TrainConfig::default();
        let t3 = table3_grid(&base);
        assert_eq!(t3.len(), 5);
        assert_eq!(t3[0].kinds, vec![AggregatorKind::Mean]);
        assert_eq!(t3[4].kinds, AggregatorKind::ALL.to_vec());
        assert_eq!(compression_grid(&base).iter().map(|c| c.compression).collect::<Vec<_>>(), vec![false, true]);
        assert_eq!(pooling_grid(&base).len(), 4);
    }

    #[test]
    fn single_cell_grid_matches_train_and_evaluate() {
        let data = toy_dataset(8, 4, 9);
        let config = quick_config();
        let rows = ablate(&config, &[AblationCell::from_config(&config)], &data, &data).unwrap();
        let out = train(&config, &data).unwrap();
        assert_eq!(rows[0].report.as_ref(), Some(&evaluate(&out.classifier, &data).unwrap()));
        assert_eq!(rows[0].final_loss, out.loss_history.last().copied());
        assert!(ablate(&config, &[], &data, &data).is_err());
    }

    #[test]
    fn failing_cell_does_not_abort_grid() {
        let data = toy_dataset(4, 1, 10);
        let base = TrainConfig { epochs: 1, ..quick_config() };
        // width 1 cannot be halved
        let rows = ablate(&base, &compression_grid(&base), &data, &data).unwrap();
        assert!(rows[0].report.is_some());
        assert!(rows[1].error.is_some());
        assert!(ablation_table(&rows).contains("failed"));
    }

    #[test]
    fn checkpoint_round_trip_and_rejections() {
        let config = quick_config();
        let clf = Classifier::new(&config, 6, 3).unwrap();
        let bytes = encode_checkpoint(&config, &clf);
        let (c2, clf2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!((c2, &clf2), (config.clone(), &clf));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
    }

    proptest! {
        #[test]
        fn ap_matches_prefix_oracle(scores in proptest::collection::vec(0u32..1000, 1..8), mask in 0u32..256) {
            let scores: Vec<f64> = scores.iter().map(|&s| s as f64 / 1000.0).collect();
            let positive: Vec<bool> = (0..scores.len()).map(|i| mask >> i & 1 == 1).collect();
            let ap = average_precision(&scores, &positive);
            // oracle: precision at each rank, recall increments
            let mut idx: Vec<usize> = (0..scores.len()).collect();
            idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
            let total = positive.iter().filter(|&&p| p).count();
            if total == 0 {
                prop_assert!(ap.is_none());
            } else {
                let mut prev_recall = 0.0;
                let mut sum = 0.0;
                for n in 1..=idx.len() {
                    let tp = idx[..n].iter().filter(|&&i| positive[i]).count() as f64;
                    let recall = tp / total as f64;
                    sum += (recall - prev_recall) * (tp / n as f64);
                    prev_recall = recall;
                }
                prop_assert!((ap.unwrap() - 100.0 * sum).abs() < 1e-9);
                prop_assert!((0.0..=100.0).contains(&ap.unwrap()));
            }
        }
    }
}
