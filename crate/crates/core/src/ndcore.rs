//! Dense vectors, row-major matrices and a seeded random source.
//!
//! Everything above this module (networks, encoders, simulation) is written
//! against these three types. Sizes in this crate are small (tens to a few
//! hundred entries per side), so the kernels are plain loops.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Deref, DerefMut, Index, IndexMut};

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Owned dense vector of `f64`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Vector(vec![value; len])
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Vector(values.to_vec())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        self.check_len("dot", other)?;
        Ok(self.iter().zip(other.iter()).map(|(a, b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.iter().map(|v| v * v).sum()
    }

    /// Squared Euclidean distance `‖self − other‖²`.
    pub fn dist_sq(&self, other: &Vector) -> Result<f64> {
        self.check_len("dist_sq", other)?;
        Ok(self
            .iter()
            .zip(other.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub fn add(&self, other: &Vector) -> Result<Vector> {
        self.check_len("add", other)?;
        Ok(self.iter().zip(other.iter()).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        self.check_len("sub", other)?;
        Ok(self.iter().zip(other.iter()).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, s: f64) -> Vector {
        self.iter().map(|a| a * s).collect()
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Vector) -> Result<()> {
        self.check_len("axpy", other)?;
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a [f64]>) -> Vector {
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(p);
        }
        Vector(out)
    }

    fn check_len(&self, op: &'static str, other: &Vector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::shape(
                op,
                format!("len {}", self.len()),
                format!("len {}", other.len()),
            ));
        }
        Ok(())
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl FromIterator<f64> for Vector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Vector(iter.into_iter().collect())
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("row 0 len {cols}"),
                    format!("row {i} len {}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
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
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `m · v`
    pub fn matvec(&self, v: &[f64]) -> Result<Vector> {
        if v.len() != self.cols {
            return Err(Error::shape(
                "matvec",
                format!("matrix {}x{}", self.rows, self.cols),
                format!("vector len {}", v.len()),
            ));
        }
        Ok((0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .collect())
    }

    /// `mᵀ · v`
    pub fn matvec_t(&self, v: &[f64]) -> Result<Vector> {
        if v.len() != self.rows {
            return Err(Error::shape(
                "matvec_t",
                format!("matrix {}x{} (transposed)", self.rows, self.cols),
                format!("vector len {}", v.len()),
            ));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        Ok(Vector(out))
    }

    /// `m += s · u vᵀ`
    pub fn add_outer(&mut self, s: f64, u: &[f64], v: &[f64]) -> Result<()> {
        if u.len() != self.rows || v.len() != self.cols {
            return Err(Error::shape(
                "add_outer",
                format!("matrix {}x{}", self.rows, self.cols),
                format!("outer {}x{}", u.len(), v.len()),
            ));
        }
        let cols = self.cols;
        for (i, &ui) in u.iter().enumerate() {
            let su = s * ui;
            if su == 0.0 {
                continue;
            }
            for (m, b) in self.data[i * cols..(i + 1) * cols].iter_mut().zip(v) {
                *m += su * b;
            }
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Display for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// Seeded random source. Normal draws use the Box–Muller transform.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream keyed by `stream`.
    pub fn fork(&mut self, stream: u64) -> Rng {
        Rng::new(mix_seed(&[self.inner.next_u64(), stream]))
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - U lies in (0, 1], keeping the log finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.standard_normal()
    }

    /// `n` independent draws from `N(mean, sd²)`.
    pub fn gauss_vec(&mut self, n: usize, mean: f64, sd: f64) -> Result<Vector> {
        if !(sd >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gauss_vec: standard deviation must be >= 0, got {sd}"
            )));
        }
        Ok((0..n).map(|_| self.normal(mean, sd)).collect())
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

/// Stable 64-bit mix of a list of words (splitmix64 finalizer chained).
pub fn mix_seed(words: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &w in words {
        h ^= w;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// FNV-1a over bytes, used to fold strings into seed words.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn naive_matvec(m: &Matrix, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; m.rows()];
        for i in 0..m.rows() {
            let mut acc = 0.0;
            for j in 0..m.cols() {
                acc += m.as_slice()[i * m.cols() + j] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    #[test]
    fn matvec_identity() {
        let m = Matrix::identity(2);
        assert_eq!(m.matvec(&[3.0, 4.0]).unwrap().as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn matvec_direct() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(m.matvec(&[1.0, 1.0]).unwrap().as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn matvec_matches_naive_loop() {
        let mut rng = Rng::new(11);
        let m = Matrix::from_vec(5, 3, rng.gauss_vec(15, 0.0, 1.0).unwrap().into_inner()).unwrap();
        let v = rng.gauss_vec(3, 0.0, 1.0).unwrap();
        assert_eq!(m.matvec(&v).unwrap().into_inner(), naive_matvec(&m, &v));
    }

    #[test]
    fn matvec_shape_error_names_both() {
        let m = Matrix::zeros(2, 3);
        let err = m.matvec(&[1.0, 2.0]).unwrap_err().to_string();
        assert!(err.contains("2x3") && err.contains("len 2"), "{err}");
    }

    #[test]
    fn matvec_t_is_transpose() {
        let m = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(m.matvec_t(&[1.0, -1.0]).unwrap().as_slice(), &[-3.0, -3.0, -3.0]);
    }

    #[test]
    fn gauss_vec_degenerate() {
        let mut rng = Rng::new(1);
        assert_eq!(rng.gauss_vec(3, 7.0, 0.0).unwrap().as_slice(), &[7.0, 7.0, 7.0]);
    }

    #[test]
    fn gauss_vec_rejects_negative_sd() {
        assert!(Rng::new(0).gauss_vec(3, 0.0, -1.0).is_err());
    }

    #[test]
    fn gauss_vec_deterministic() {
        let a = Rng::new(42).gauss_vec(50, 1.0, 2.0).unwrap();
        let b = Rng::new(42).gauss_vec(50, 1.0, 2.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn standard_normal_moments() {
        let mut rng = Rng::new(2024);
        let n = 1_000_000;
        let v = rng.gauss_vec(n, 0.0, 1.0).unwrap();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 0.01, "mean {mean}");
        assert!((var - 1.0).abs() <= 0.02, "var {var}");
    }

    #[test]
    fn mix_seed_is_order_sensitive() {
        assert_ne!(mix_seed(&[1, 2]), mix_seed(&[2, 1]));
        assert_eq!(mix_seed(&[1, 2]), mix_seed(&[1, 2]));
    }

    proptest! {
        #[test]
        fn matvec_is_linear(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..6) {
            let mut rng = Rng::new(seed);
            let a = Matrix::from_vec(rows, cols, rng.gauss_vec(rows * cols, 0.0, 1.0).unwrap().into_inner()).unwrap();
            let u = rng.gauss_vec(cols, 0.0, 1.0).unwrap();
            let v = rng.gauss_vec(cols, 0.0, 1.0).unwrap();
            let lhs = a.matvec(&u.add(&v).unwrap()).unwrap();
            let rhs = a.matvec(&u).unwrap().add(&a.matvec(&v).unwrap()).unwrap();
            for (l, r) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((l - r).abs() <= 1e-12);
            }
        }

        #[test]
        fn equal_seeds_equal_streams(seed in any::<u64>()) {
            let mut a = Rng::new(seed);
            let mut b = Rng::new(seed);
            for _ in 0..16 {
                prop_assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
                prop_assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
            }
        }
    }
}
