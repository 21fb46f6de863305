//! Dense row-major matrices, parameter initialization, the Adam optimizer and
//! finite-difference gradient checking.
//!
//! Everything is `f64`. The learnable modules derive their gradients by hand,
//! and the central-difference checks in this module need that precision to be
//! meaningful at the `1e-5` relative level.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64Mcg;
use rayon::prelude::*;

use crate::error::{HegError, Result};

/// Deterministic generator used everywhere a seed is accepted.
///
/// PCG-64 with a multiplicative congruential 128-bit state ("MCG XSL RR").
/// The algorithm is fixed so that seeds reproduce across platforms and crate
/// upgrades.
pub type DetRng = Pcg64Mcg;

pub fn seeded_rng(seed: u64) -> DetRng {
    Pcg64Mcg::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a stream tag
/// (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Work (multiply-adds) above which `matmul` splits output rows across threads.
/// Each output row is still reduced sequentially, so results do not depend on
/// the thread count.
const PAR_THRESHOLD: usize = 1 << 16;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            if r > 0 {
                write!(f, "; ")?;
            }
            let row = self.row(r);
            for (c, v) in row.iter().take(8).enumerate() {
                if c > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{v}")?;
            }
            if self.cols > 8 {
                write!(f, ", ...")?;
            }
        }
        if self.rows > 8 {
            write!(f, "; ...")?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(HegError::Dimension(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input, which is
    /// only ever a literal in code.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Gathers the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        matmul(self, other)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(shape_error("t_matmul", self, other));
        }
        let (n, m) = (self.cols, other.cols);
        let mut out = Matrix::zeros(n, m);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let dst = &mut out.data[i * m..(i + 1) * m];
                for (d, &b) in dst.iter_mut().zip(b_row) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(shape_error("matmul_t", self, other));
        }
        let m = other.rows;
        let mut out = Matrix::zeros(self.rows, m);
        let work = self.rows * m * self.cols;
        let fill = |(i, dst): (usize, &mut [f64])| {
            let a = self.row(i);
            for (j, d) in dst.iter_mut().enumerate() {
                *d = dot(a, other.row(j));
            }
        };
        if work >= PAR_THRESHOLD && m > 0 {
            out.data.par_chunks_mut(m).enumerate().for_each(fill);
        } else if m > 0 {
            out.data.chunks_mut(m).enumerate().for_each(fill);
        }
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_error("add", self, other));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Adds a 1×cols row vector to every row.
    pub fn add_row_broadcast(&mut self, row: &Matrix) -> Result<()> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(shape_error("row broadcast", self, row));
        }
        for r in 0..self.rows {
            for (a, b) in self.row_mut(r).iter_mut().zip(&row.data) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// Column sums as a 1×cols row vector.
    pub fn sum_rows(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols);
        for r in 0..self.rows {
            for (a, b) in out.data.iter_mut().zip(self.row(r)) {
                *a += b;
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn shape_error(op: &str, a: &Matrix, b: &Matrix) -> HegError {
    HegError::Dimension(format!(
        "{op}: {}x{} vs {}x{}",
        a.rows, a.cols, b.rows, b.cols
    ))
}

/// Standard matrix product.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(shape_error("matmul", a, b));
    }
    let n = b.cols;
    let mut out = Matrix::zeros(a.rows, n);
    if n == 0 {
        return Ok(out);
    }
    let fill = |(i, dst): (usize, &mut [f64])| {
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (d, &bkj) in dst.iter_mut().zip(b.row(k)) {
                *d += aik * bkj;
            }
        }
    };
    if a.rows * a.cols * n >= PAR_THRESHOLD {
        out.data.par_chunks_mut(n).enumerate().for_each(fill);
    } else {
        out.data.chunks_mut(n).enumerate().for_each(fill);
    }
    Ok(out)
}

/// Normalizes every column independently across the rows:
/// `out[i][j] = exp(m[i][j]) / Σ_r exp(m[r][j])`, stabilized by the column max.
pub fn softmax_over_rows(m: &Matrix) -> Result<Matrix> {
    if m.rows == 0 || m.cols == 0 {
        return Err(HegError::Domain(
            "softmax over an empty matrix".to_string(),
        ));
    }
    let mut out = m.clone();
    for c in 0..m.cols {
        let max = (0..m.rows)
            .map(|r| m.get(r, c))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for r in 0..m.rows {
            let e = (m.get(r, c) - max).exp();
            out.set(r, c, e);
            total += e;
        }
        for r in 0..m.rows {
            let v = out.get(r, c) / total;
            out.set(r, c, v);
        }
    }
    Ok(out)
}

/// Glorot-uniform initialization in `±sqrt(6 / (rows + cols))`.
pub fn xavier_init(rows: usize, cols: usize, seed: u64) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mut rng = seeded_rng(seed);
    let data = (0..rows * cols)
        .map(|_| bound * (2.0 * unit_f64(&mut rng) - 1.0))
        .collect();
    Matrix { rows, cols, data }
}

/// Uniform `[0, 1)` draw from 53 random bits; kept local so generated data
/// does not depend on `rand`'s float sampling internals.
pub fn unit_f64(rng: &mut DetRng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Hyperparameters shared by every parameter's optimizer state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Per-parameter Adam moments.
///
/// Weight decay is *coupled* L2: `weight_decay · param` is added to the
/// gradient before the moment updates, so it is rescaled by the adaptive
/// denominator like any other gradient component.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Matrix,
    pub second_moment: Matrix,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, config: AdamConfig) -> Result<Self> {
        let positive = [config.beta1, config.beta2, config.epsilon];
        if positive.iter().any(|v| !(*v > 0.0))
            || config.beta1 >= 1.0
            || config.beta2 >= 1.0
            || !(config.learning_rate >= 0.0)
            || !(config.weight_decay >= 0.0)
        {
            return Err(HegError::Domain(format!(
                "invalid Adam hyperparameters {config:?}"
            )));
        }
        Ok(Self {
            step: 0,
            first_moment: Matrix::zeros(rows, cols),
            second_moment: Matrix::zeros(rows, cols),
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            learning_rate: config.learning_rate,
            weight_decay: config.weight_decay,
        })
    }
}

/// One Adam update with bias correction. Consumes and returns both the
/// parameter and its state.
pub fn adam_step(
    mut param: Matrix,
    grad: &Matrix,
    mut state: AdamState,
) -> Result<(Matrix, AdamState)> {
    if param.shape() != grad.shape() {
        return Err(shape_error("adam param/grad", &param, grad));
    }
    if param.shape() != state.first_moment.shape()
        || param.shape() != state.second_moment.shape()
    {
        return Err(shape_error("adam param/moments", &param, &state.first_moment));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2) = (state.beta1, state.beta2);
    let lr = state.learning_rate;
    let wd = state.weight_decay;
    let eps = state.epsilon;
    for (((p, &g), m), v) in param
        .data
        .iter_mut()
        .zip(&grad.data)
        .zip(state.first_moment.data.iter_mut())
        .zip(state.second_moment.data.iter_mut())
    {
        let g = g + wd * *p;
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok((param, state))
}

/// Central-difference gradient of a scalar function, one entry at a time.
pub fn finite_diff_gradient<F>(f: F, x: &Matrix, h: f64) -> Result<Matrix>
where
    F: Fn(&Matrix) -> f64,
{
    if !(h > 0.0) {
        return Err(HegError::Domain(format!("step size must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Matrix::zeros(x.rows, x.cols);
    for i in 0..x.data.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let plus = f(&probe);
        probe.data[i] = orig - h;
        let minus = f(&probe);
        probe.data[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(HegError::Numeric(format!(
                "non-finite function value while differentiating entry {i}"
            )));
        }
        grad.data[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both vanish.
pub fn relative_error(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape(), "relative_error shape mismatch");
    let diff = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = a.frobenius_norm().max(b.frobenius_norm());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = seeded_rng(seed);
        let data = (0..rows * cols).map(|_| unit_f64(&mut rng) * 2.0 - 1.0).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(Matrix::identity(2).matmul(&a).unwrap(), a);
        let r = matmul(&Matrix::from_rows(&[[1.0, 0.0]]), &Matrix::from_rows(&[[0.0], [5.0]]))
            .unwrap();
        assert_eq!(r, Matrix::from_rows(&[[0.0]]));
        let r = matmul(&a, &Matrix::from_rows(&[[5.0], [6.0]])).unwrap();
        assert_eq!(r, Matrix::from_rows(&[[17.0], [39.0]]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3 vs 2x3"), "{msg}");
    }

    #[test]
    fn transposed_products_agree_with_matmul() {
        let a = random_matrix(5, 3, 1);
        let b = random_matrix(5, 4, 2);
        let c = random_matrix(6, 3, 3);
        let direct = a.transpose().matmul(&b).unwrap();
        assert!(relative_error(&a.t_matmul(&b).unwrap(), &direct) < 1e-14);
        let direct = a.matmul(&c.transpose()).unwrap();
        assert!(relative_error(&a.matmul_t(&c).unwrap(), &direct) < 1e-14);
    }

    #[test]
    fn parallel_matmul_is_bitwise_sequential() {
        let a = random_matrix(64, 48, 4);
        let b = random_matrix(48, 40, 5);
        let par = matmul(&a, &b).unwrap();
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                assert_eq!(s.to_bits(), par.get(i, j).to_bits());
            }
        }
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_over_rows(&Matrix::zeros(2, 2)).unwrap();
        assert_eq!(s, Matrix::filled(2, 2, 0.5));
        let s = softmax_over_rows(&Matrix::from_rows(&[[3.0, -7.0]])).unwrap();
        assert_eq!(s, Matrix::filled(1, 2, 1.0));
        let s = softmax_over_rows(&Matrix::from_rows(&[[0.0], [3f64.ln()]])).unwrap();
        assert!((s.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((s.get(1, 0) - 0.75).abs() < 1e-15);
        assert!(softmax_over_rows(&Matrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn softmax_survives_large_logits() {
        let s = softmax_over_rows(&Matrix::from_rows(&[[1000.0], [999.0]])).unwrap();
        assert!(s.is_finite());
        assert!((s.get(0, 0) + s.get(1, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn xavier_bounds_and_determinism() {
        let m = xavier_init(1, 1, 9);
        assert!(m.get(0, 0).abs() <= 3f64.sqrt());
        assert_eq!(xavier_init(7, 5, 42), xavier_init(7, 5, 42));
        assert_ne!(xavier_init(7, 5, 42), xavier_init(7, 5, 43));
        let big = xavier_init(1024, 512, 3);
        let bound = (6.0f64 / 1536.0).sqrt();
        assert!(big.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let p = random_matrix(3, 2, 1);
        let st = AdamState::new(3, 2, AdamConfig::default()).unwrap();
        let (q, st) = adam_step(p.clone(), &Matrix::zeros(3, 2), st).unwrap();
        assert_eq!(p, q);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };
        let st = AdamState::new(1, 1, cfg).unwrap();
        let (q, _) = adam_step(Matrix::zeros(1, 1), &Matrix::filled(1, 1, 1.0), st).unwrap();
        assert!((q.get(0, 0) + 0.01).abs() < 1e-9);
    }

    #[test]
    fn adam_two_steps_match_scalar_recurrence() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.5,
        };
        let g = 0.3;
        // independent scalar reference
        let (mut p, mut m, mut v) = (2.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            let ge = g + 0.5 * p;
            m = 0.9 * m + 0.1 * ge;
            v = 0.999 * v + 0.001 * ge * ge;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            p -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        let mut param = Matrix::filled(1, 1, 2.0);
        let mut st = AdamState::new(1, 1, cfg).unwrap();
        for _ in 0..2 {
            let (np, ns) = adam_step(param, &Matrix::filled(1, 1, g), st).unwrap();
            param = np;
            st = ns;
        }
        assert!((param.get(0, 0) - p).abs() < 1e-15);
        assert!(st.second_moment.get(0, 0) >= 0.0);
    }

    #[test]
    fn adam_rejects_shape_mismatch_and_bad_hyperparameters() {
        let st = AdamState::new(2, 2, AdamConfig::default()).unwrap();
        assert!(adam_step(Matrix::zeros(2, 2), &Matrix::zeros(2, 1), st).is_err());
        let bad = AdamConfig {
            beta1: 0.0,
            ..AdamConfig::default()
        };
        assert!(AdamState::new(1, 1, bad).is_err());
    }

    #[test]
    fn finite_differences_examples() {
        let sq = |m: &Matrix| m.data().iter().map(|v| v * v).sum::<f64>();
        let g = finite_diff_gradient(sq, &Matrix::filled(1, 1, 3.0), 1e-5).unwrap();
        assert!((g.get(0, 0) - 6.0).abs() < 1e-6);

        let g = finite_diff_gradient(|_| 4.0, &random_matrix(2, 3, 1), 1e-5).unwrap();
        assert_eq!(g, Matrix::zeros(2, 3));

        let prod = |m: &Matrix| m.get(0, 0) * m.get(0, 1);
        let g = finite_diff_gradient(prod, &Matrix::from_rows(&[[2.0, 5.0]]), 1e-5).unwrap();
        assert!((g.get(0, 0) - 5.0).abs() < 1e-6);
        assert!((g.get(0, 1) - 2.0).abs() < 1e-6);

        assert!(finite_diff_gradient(|m| m.get(0, 0).sqrt(),&Matrix::zeros(1, 1), 1e-5).is_err());
        assert!(finite_diff_gradient(sq, &Matrix::zeros(1, 1), 0.0).is_err());
    }

    proptest! {
        #[test]
        fn matmul_is_associative(seed in 0u64..10_000, n in 1usize..6, k in 1usize..6, m in 1usize..6, p in 1usize..6) {
            let a = random_matrix(n, k, seed);
            let b = random_matrix(k, m, seed + 1);
            let c = random_matrix(m, p, seed + 2);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            prop_assert!(relative_error(&left, &right) < 1e-9);
        }

        #[test]
        fn softmax_columns_sum_to_one_and_shift_invariant(seed in 0u64..10_000, rows in 1usize..8, cols in 1usize..5, shift in -50.0f64..50.0) {
            let m = random_matrix(rows, cols, seed).map(|v| v * 10.0);
            let s = softmax_over_rows(&m).unwrap();
            for c in 0..cols {
                let total: f64 = s.column(c).iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
            let mut shifted = m.clone();
            for r in 0..rows {
                let v = shifted.get(r, 0) + shift;
                shifted.set(r, 0, v);
            }
            let t = softmax_over_rows(&shifted).unwrap();
            prop_assert!(relative_error(&s, &t) < 1e-12);
        }

        #[test]
        fn adam_with_zero_learning_rate_is_identity(seed in 0u64..10_000) {
            let p = random_matrix(3, 4, seed);
            let g = random_matrix(3, 4, seed + 7);
            let cfg = AdamConfig { learning_rate: 0.0, weight_decay: 0.5, ..AdamConfig::default() };
            let st = AdamState::new(3, 4, cfg).unwrap();
            let (q, _) = adam_step(p.clone(), &g, st).unwrap();
            prop_assert_eq!(p, q);
        }
    }
}
