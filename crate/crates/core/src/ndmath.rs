//! Dense numeric substrate: row-major matrices, gate activations, a seedable
//! RNG, inverted-dropout masks and linear-interpolation quantiles.
//!
//! Everything is `f64`. Reductions run in a fixed order so results are
//! reproducible bit-for-bit for a given build.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MathError {
    #[error("dimension mismatch: {op} expected {expected}, got {actual}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },
    #[error("drop rate must lie in [0, 1), got {0}")]
    InvalidDropRate(f64),
    #[error("quantile fraction must lie in [0, 1], got {0}")]
    InvalidQuantile(f64),
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value encountered")]
    NonFinite,
}

/// A dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major values. Rejects wrong lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, MathError> {
        if values.len() != rows * cols {
            return Err(MathError::DimensionMismatch {
                op: "from_vec",
                expected: format!("{} values", rows * cols),
                actual: format!("{} values", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MathError::NonFinite);
        }
        Ok(Matrix { rows, cols, values })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, MathError> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(MathError::DimensionMismatch {
                    op: "from_rows",
                    expected: format!("{cols} columns"),
                    actual: format!("{} columns", r.len()),
                });
            }
            values.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, MathError> {
        matmul(self, other)
    }

    /// `out[r] = row(r) · x` for every row.
    ///
    /// Unchecked in release builds; callers own the shapes.
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(r), x);
        }
    }

    /// `out += selfᵀ · v`.
    pub fn transpose_matvec_acc(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &scale) in v.iter().enumerate() {
            if scale != 0.0 {
                axpy(scale, self.row(r), out);
            }
        }
    }

    /// Rank-one update `self += a · bᵀ`.
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        let cols = self.cols;
        for (r, &scale) in a.iter().enumerate() {
            if scale != 0.0 {
                axpy(scale, b, &mut self.values[r * cols..(r + 1) * cols]);
            }
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Standard matrix product.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, MathError> {
    if a.cols != b.rows {
        return Err(MathError::DimensionMismatch {
            op: "matmul",
            expected: format!("lhs cols == rhs rows ({})", a.cols),
            actual: format!("rhs rows {}", b.rows),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let dst = &mut out.values[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.values[i * a.cols + k];
            axpy(aik, b.row(k), dst);
        }
    }
    Ok(out)
}

/// Dot product with four fixed-order partial sums so the loop vectorizes
/// while staying deterministic.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha · x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

/// Logistic function. Branches on sign so large negative inputs do not
/// overflow `exp`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activate(x: &Matrix, kind: Activation) -> Matrix {
    match kind {
        Activation::Sigmoid => x.map(sigmoid),
        Activation::Tanh => x.map(f64::tanh),
    }
}

/// xoshiro256** seeded through SplitMix64.
///
/// The stream is fully defined by the two published algorithms
/// (Blackman & Vigna), so any language can reproduce it:
///
/// * seeding: the 256-bit state is four consecutive SplitMix64 outputs
///   starting from `seed`;
/// * [`Rng::next_f64`] takes the top 53 bits of `next_u64` times 2⁻⁵³.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    state: [u64; 4],
}

#[inline]
fn splitmix64(x: &mut u64) -> u64 {
    *x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let state = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng { seed, state }
    }

    /// Seeds a substream from an ordered tuple of identifiers, e.g.
    /// `(seed, unit, cycle)`. The tuple is folded through SplitMix64:
    /// `acc = splitmix64(acc ^ part)` for each part starting from
    /// `acc = 0`, and the result seeds [`Rng::new`].
    pub fn from_parts(parts: &[u64]) -> Self {
        let mut acc = 0u64;
        for &p in parts {
            let mut s = acc ^ p;
            acc = splitmix64(&mut s);
        }
        Rng::new(acc)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift with rejection).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Standard normal via Box–Muller (one draw per call, the sine branch is
    /// discarded).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Fisher–Yates, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `drop_rate`,
/// else `1 / (1 - drop_rate)`. One uniform draw is consumed per entry even
/// when the rate is zero, so stream positions do not depend on the rates.
pub fn sample_mask(rng: &mut Rng, len: usize, drop_rate: f64) -> Result<Vec<f64>, MathError> {
    if !(0.0..1.0).contains(&drop_rate) {
        return Err(MathError::InvalidDropRate(drop_rate));
    }
    let keep = 1.0 / (1.0 - drop_rate);
    Ok((0..len)
        .map(|_| {
            if rng.next_f64() < drop_rate {
                0.0
            } else {
                keep
            }
        })
        .collect())
}

/// Linear-interpolation quantile (Hyndman–Fan type 7) of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> Result<f64, MathError> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

/// Same as [`quantile`] but `sorted` must already be ascending.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Result<f64, MathError> {
    if sorted.is_empty() {
        return Err(MathError::EmptyInput);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(MathError::InvalidQuantile(q));
    }
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}
