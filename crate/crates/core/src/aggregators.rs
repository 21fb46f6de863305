//! Neighborhood reducers and the multi-statistic aggregation.
//!
//! Each reducer maps an `n × F` neighbor matrix to a `1 × F` row, column by
//! column:
//!
//! | kind      | value per column                                   |
//! |-----------|----------------------------------------------------|
//! | `mean`    | `μ = Σ xᵢ / n`                                      |
//! | `median`  | element at zero-based index `⌊n/2⌋` after sorting  |
//! | `std`     | `sqrt(Σ (xᵢ − μ)² / n + ε)`                         |
//! | `m3`,`m4` | `Σ (xᵢ − μ)^m / n`, unnormalized central moments    |
//!
//! [`MultiAggregator`] concatenates the selected reducers (always in the
//! order above, whatever order they were requested in) into a `1 × K·F` row
//! and applies one affine projection to `F^a` outputs.
//!
//! The fourth moment grows with the fourth power of the feature scale, so
//! node features are expected to be roughly unit-scaled at ingestion.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{HegError, Result};
use crate::numerics::{xavier_init, Matrix};

pub const DEFAULT_STD_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    Mean,
    Median,
    Std,
    #[serde(rename = "m3")]
    Moment3,
    #[serde(rename = "m4")]
    Moment4,
}

impl AggregatorKind {
    /// Canonical concatenation order.
    pub const ALL: [AggregatorKind; 5] = [
        AggregatorKind::Mean,
        AggregatorKind::Median,
        AggregatorKind::Std,
        AggregatorKind::Moment3,
        AggregatorKind::Moment4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::Mean => "mean",
            AggregatorKind::Median => "median",
            AggregatorKind::Std => "std",
            AggregatorKind::Moment3 => "m3",
            AggregatorKind::Moment4 => "m4",
        }
    }

    /// The cumulative subsets `{mean}`, `{mean, median}`, … up to all five.
    pub fn cumulative_subsets() -> Vec<Vec<AggregatorKind>> {
        (1..=Self::ALL.len()).map(|k| Self::ALL[..k].to_vec()).collect()
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregatorKind {
    type Err = HegError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(AggregatorKind::Mean),
            "median" | "med" => Ok(AggregatorKind::Median),
            "std" => Ok(AggregatorKind::Std),
            "m3" | "moment3" => Ok(AggregatorKind::Moment3),
            "m4" | "moment4" => Ok(AggregatorKind::Moment4),
            other => Err(HegError::Domain(format!("unknown aggregator {other:?}"))),
        }
    }
}

/// Sorts into canonical order and drops duplicates; rejects an empty set.
pub fn canonical_kinds(kinds: &[AggregatorKind]) -> Result<Vec<AggregatorKind>> {
    let mut out = kinds.to_vec();
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(HegError::Domain("at least one aggregator is required".into()));
    }
    Ok(out)
}

pub fn format_kinds(kinds: &[AggregatorKind]) -> String {
    kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join("+")
}

fn require_rows(x: &Matrix) -> Result<()> {
    if x.rows() == 0 {
        return Err(HegError::Domain("cannot reduce an empty neighborhood".into()));
    }
    Ok(())
}

fn column_means(x: &Matrix) -> Vec<f64> {
    let mut mean = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    let n = x.rows() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Column means of centered powers `Σ (xᵢ − μ)^m / n`.
fn central_moment(x: &Matrix, mean: &[f64], m: i32) -> Vec<f64> {
    let mut out = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for ((o, v), mu) in out.iter_mut().zip(x.row(r)).zip(mean) {
            *o += (v - mu).powi(m);
        }
    }
    let n = x.rows() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Row index holding each column's median, ties resolved by a stable sort.
fn median_rows(x: &Matrix) -> Vec<usize> {
    let n = x.rows();
    let pick = n / 2;
    let mut order: Vec<usize> = Vec::with_capacity(n);
    (0..x.cols())
        .map(|c| {
            order.clear();
            order.extend(0..n);
            order.sort_by(|&a, &b| x.get(a, c).total_cmp(&x.get(b, c)));
            order[pick]
        })
        .collect()
}

pub fn agg_mean(x: &Matrix) -> Result<Matrix> {
    require_rows(x)?;
    Ok(Matrix::row_vector(&column_means(x)))
}

pub fn agg_std(x: &Matrix, eps: f64) -> Result<Matrix> {
    require_rows(x)?;
    if !(eps >= 0.0) {
        return Err(HegError::Domain(format!("std epsilon must be >= 0, got {eps}")));
    }
    let var = central_moment(x, &column_means(x), 2);
    Ok(Matrix::row_vector(
        &var.iter().map(|v| (v + eps).sqrt()).collect::<Vec<_>>(),
    ))
}

pub fn agg_median(x: &Matrix) -> Result<Matrix> {
    require_rows(x)?;
    let rows = median_rows(x);
    Ok(Matrix::row_vector(
        &rows.iter().enumerate().map(|(c, &r)| x.get(r, c)).collect::<Vec<_>>(),
    ))
}

pub fn agg_moment(x: &Matrix, m: u32) -> Result<Matrix> {
    if m != 3 && m != 4 {
        return Err(HegError::Domain(format!(
            "central moment of order {m} is not supported (3 or 4)"
        )));
    }
    require_rows(x)?;
    Ok(Matrix::row_vector(&central_moment(x, &column_means(x), m as i32)))
}

/// Everything the backward pass needs from one neighborhood reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationTrace {
    neighbors: Matrix,
    mean: Vec<f64>,
    variance: Vec<f64>,
    std: Vec<f64>,
    moment3: Vec<f64>,
    median_rows: Vec<usize>,
    concat: Vec<f64>,
}

impl AggregationTrace {
    /// Concatenated reducer outputs, `1 × K·F`.
    pub fn concat(&self) -> &[f64] {
        &self.concat
    }

    pub fn neighbor_count(&self) -> usize {
        self.neighbors.rows()
    }
}

/// The `K` reducers plus the shared projection `w_proj` (`K·F × F^a`) and
/// bias `b_proj` (`1 × F^a`).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiAggregator {
    kinds: Vec<AggregatorKind>,
    pub w_proj: Matrix,
    pub b_proj: Matrix,
    std_epsilon: f64,
}

impl MultiAggregator {
    /// Xavier-initialized projection from `in_dim`-wide neighbors to
    /// `out_dim` outputs, zero bias.
    pub fn new(
        kinds: &[AggregatorKind],
        in_dim: usize,
        out_dim: usize,
        std_epsilon: f64,
        seed: u64,
    ) -> Result<Self> {
        let kinds = canonical_kinds(kinds)?;
        let w_proj = xavier_init(kinds.len() * in_dim, out_dim, seed);
        Self::from_parts(&kinds, w_proj, Matrix::zeros(1, out_dim), std_epsilon)
    }

    pub fn from_parts(
        kinds: &[AggregatorKind],
        w_proj: Matrix,
        b_proj: Matrix,
        std_epsilon: f64,
    ) -> Result<Self> {
        let canonical = canonical_kinds(kinds)?;
        if canonical != kinds {
            return Err(HegError::Domain(format!(
                "aggregator kinds must be distinct and in canonical order, got {}",
                format_kinds(kinds)
            )));
        }
        if w_proj.rows() % kinds.len() != 0 || w_proj.rows() == 0 {
            return Err(HegError::Dimension(format!(
                "projection has {} rows, not a positive multiple of K = {}",
                w_proj.rows(),
                kinds.len()
            )));
        }
        if b_proj.shape() != (1, w_proj.cols()) {
            return Err(HegError::Dimension(format!(
                "projection bias is {}x{}, expected 1x{}",
                b_proj.rows(),
                b_proj.cols(),
                w_proj.cols()
            )));
        }
        if !(std_epsilon >= 0.0) {
            return Err(HegError::Domain(format!("std epsilon must be >= 0, got {std_epsilon}")));
        }
        Ok(Self {
            kinds: canonical,
            w_proj,
            b_proj,
            std_epsilon,
        })
    }

    pub fn kinds(&self) -> &[AggregatorKind] {
        &self.kinds
    }

    pub fn std_epsilon(&self) -> f64 {
        self.std_epsilon
    }

    /// Neighbor feature width `F`.
    pub fn in_dim(&self) -> usize {
        self.w_proj.rows() / self.kinds.len()
    }

    /// Output width `F^a`.
    pub fn out_dim(&self) -> usize {
        self.w_proj.cols()
    }

    /// Concatenated reducer outputs without the projection.
    pub fn statistics(&self, x: &Matrix) -> Result<AggregationTrace> {
        require_rows(x)?;
        let f = self.in_dim();
        if x.cols() != f {
            return Err(HegError::Dimension(format!(
                "neighbor features have width {}, aggregator expects {f}",
                x.cols()
            )));
        }
        let wants = |k| self.kinds.contains(&k);
        let mean = column_means(x);
        let needs_variance = wants(AggregatorKind::Std) || wants(AggregatorKind::Moment3);
        let variance = if needs_variance {
            central_moment(x, &mean, 2)
        } else {
            Vec::new()
        };
        let needs_m3 = wants(AggregatorKind::Moment3) || wants(AggregatorKind::Moment4);
        let moment3 = if needs_m3 {
            central_moment(x, &mean, 3)
        } else {
            Vec::new()
        };
        let std: Vec<f64> = if wants(AggregatorKind::Std) {
            variance.iter().map(|v| (v + self.std_epsilon).sqrt()).collect()
        } else {
            Vec::new()
        };
        let median_rows = if wants(AggregatorKind::Median) {
            median_rows(x)
        } else {
            Vec::new()
        };
        let mut concat = Vec::with_capacity(self.kinds.len() * f);
        for kind in &self.kinds {
            match kind {
                AggregatorKind::Mean => concat.extend_from_slice(&mean),
                AggregatorKind::Median => {
                    concat.extend(median_rows.iter().enumerate().map(|(c, &r)| x.get(r, c)))
                }
                AggregatorKind::Std => concat.extend_from_slice(&std),
                AggregatorKind::Moment3 => concat.extend_from_slice(&moment3),
                AggregatorKind::Moment4 => concat.extend(central_moment(x, &mean, 4)),
            }
        }
        Ok(AggregationTrace {
            neighbors: x.clone(),
            mean,
            variance,
            std,
            moment3,
            median_rows,
            concat,
        })
    }

    /// Gradient with respect to the neighbor rows, given the gradient with
    /// respect to the concatenated statistics.
    pub fn statistics_backward(&self, trace: &AggregationTrace, d_concat: &[f64]) -> Result<Matrix> {
        let f = self.in_dim();
        let x = &trace.neighbors;
        if x.cols() != f || trace.concat.len() != self.kinds.len() * f || d_concat.len() != trace.concat.len() {
            return Err(HegError::Internal(format!(
                "aggregation trace does not match the aggregator: trace width {}, {} statistics, gradient length {}, aggregator {}x{}",
                x.cols(),
                trace.concat.len(),
                d_concat.len(),
                self.kinds.len(),
                f
            )));
        }
        let n = x.rows();
        let inv_n = 1.0 / n as f64;
        let mut grad = Matrix::zeros(n, f);
        for (slot, kind) in self.kinds.iter().enumerate() {
            let g = &d_concat[slot * f..(slot + 1) * f];
            match kind {
                AggregatorKind::Mean => {
                    for r in 0..n {
                        for (d, gc) in grad.row_mut(r).iter_mut().zip(g) {
                            *d += gc * inv_n;
                        }
                    }
                }
                AggregatorKind::Median => {
                    for (c, &r) in trace.median_rows.iter().enumerate() {
                        let v = grad.get(r, c) + g[c];
                        grad.set(r, c, v);
                    }
                }
                AggregatorKind::Std => {
                    // d sqrt(v + ε) / dx_r = (x_r − μ) / (n · std)
                    for r in 0..n {
                        let row = x.row(r);
                        for c in 0..f {
                            let dv = g[c] * (row[c] - trace.mean[c]) * inv_n / trace.std[c];
                            grad.data_mut()[r * f + c] += dv;
                        }
                    }
                }
                AggregatorKind::Moment3 | AggregatorKind::Moment4 => {
                    // dM_m / dx_r = (m / n) · ((x_r − μ)^(m−1) − mean((x − μ)^(m−1)))
                    let (m, lower) = if *kind == AggregatorKind::Moment3 {
                        (3, &trace.variance)
                    } else {
                        (4, &trace.moment3)
                    };
                    let scale = m as f64 * inv_n;
                    for r in 0..n {
                        let row = x.row(r);
                        for c in 0..f {
                            let d = (row[c] - trace.mean[c]).powi(m - 1) - lower[c];
                            grad.data_mut()[r * f + c] += g[c] * scale * d;
                        }
                    }
                }
            }
        }
        Ok(grad)
    }

    /// `concat(ψ_k(X)) · w_proj + b_proj`.
    pub fn multi_aggregate(&self, x: &Matrix) -> Result<(Matrix, AggregationTrace)> {
        let trace = self.statistics(x)?;
        let mut out = Matrix::row_vector(&trace.concat).matmul(&self.w_proj)?;
        out.add_assign(&self.b_proj)?;
        Ok((out, trace))
    }

    /// Returns `(grad_x, grad_w_proj, grad_b_proj)`.
    pub fn multi_aggregate_backward(
        &self,
        trace: &AggregationTrace,
        upstream: &Matrix,
    ) -> Result<(Matrix, Matrix, Matrix)> {
        if upstream.shape() != (1, self.out_dim()) {
            return Err(HegError::Dimension(format!(
                "upstream gradient is {}x{}, expected 1x{}",
                upstream.rows(),
                upstream.cols(),
                self.out_dim()
            )));
        }
        if trace.concat.len() != self.w_proj.rows() {
            return Err(HegError::Internal(format!(
                "trace has {} statistics, projection expects {}",
                trace.concat.len(),
                self.w_proj.rows()
            )));
        }
        let concat = Matrix::row_vector(&trace.concat);
        let grad_w = concat.t_matmul(upstream)?;
        let d_concat = upstream.matmul_t(&self.w_proj)?;
        let grad_x = self.statistics_backward(trace, d_concat.data())?;
        Ok((grad_x, grad_w, upstream.clone()))
    }
}
