//! Banded storage and LU with partial pivoting.

use crate::error::{KdvError, Result};

/// Square matrix with `kl` sub- and `ku` super-diagonals, stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self { n, kl, ku, data: vec![0.0; n * (kl + ku + 1)] }
    }

    pub fn identity(n: usize, kl: usize, ku: usize) -> Self {
        let mut m = Self::zeros(n, kl, ku);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower(&self) -> usize {
        self.kl
    }

    pub fn upper(&self) -> usize {
        self.ku
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku && i < self.n && j < self.n
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    /// Panics if `(i, j)` lies outside the band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band [{}, {}]", self.kl, self.ku);
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band [{}, {}]", self.kl, self.ku);
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n)
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            *yi = self.row_range(i).map(|j| self.data[self.idx(i, j)] * x[j]).sum();
        }
    }

    /// `alpha * self + beta * I`.
    pub fn shifted(&self, alpha: f64, beta: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= alpha);
        for i in 0..self.n {
            out.add(i, i, beta);
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j)).collect()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// LU factors of a [`BandMatrix`] with row interchanges.
///
/// Pivoting widens the upper band of `U` to `kl + ku`.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    width: usize,
    // row i holds columns i - kl ..= i + kl + ku
    u: Vec<f64>,
    l: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn factor(a: &BandMatrix) -> Result<Self> {
        let (n, kl, ku) = (a.n, a.kl, a.ku);
        let width = 2 * kl + ku + 1;
        let mut u = vec![0.0; n * width];
        let at = |i: usize, j: usize| i * width + (j + kl - i);
        for i in 0..n {
            for j in a.row_range(i) {
                u[at(i, j)] = a.get(i, j);
            }
        }
        let mut l = vec![0.0; n * kl.max(1)];
        let mut piv = vec![0; n];
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = u[at(k, k)].abs();
            for i in k + 1..=last {
                let v = u[at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= f64::EPSILON * scale * 1e-6 {
                return Err(KdvError::InvalidArgument(format!("zero pivot in column {k}")));
            }
            piv[k] = p;
            let cend = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=cend {
                    u.swap(at(k, j), at(p, j));
                }
            }
            let d = u[at(k, k)];
            for i in k + 1..=last {
                let f = u[at(i, k)] / d;
                l[k * kl.max(1) + (i - k - 1)] = f;
                u[at(i, k)] = 0.0;
                if f != 0.0 {
                    for j in k + 1..=cend {
                        u[at(i, j)] -= f * u[at(k, j)];
                    }
                }
            }
        }
        Ok(Self { n, kl, width, u, l, piv })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, kl, width) = (self.n, self.kl, self.width);
        let at = |i: usize, j: usize| i * width + (j + kl - i);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let last = (k + kl).min(n - 1);
            let bk = b[k];
            for i in k + 1..=last {
                b[i] -= self.l[k * kl.max(1) + (i - k - 1)] * bk;
            }
        }
        let ubw = width - kl - 1;
        for i in (0..n).rev() {
            let cend = (i + ubw).min(n - 1);
            let mut s = b[i];
            for j in i + 1..=cend {
                s -= self.u[at(i, j)] * b[j];
            }
            b[i] = s / self.u[at(i, i)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_mul(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    #[test]
    fn solves_non_dominant_system() {
        // small diagonal forces row interchanges
        let n = 12;
        let mut a = BandMatrix::zeros(n, 2, 3);
        for i in 0..n {
            for j in a.row_range(i) {
                let v = ((i * 7 + j * 3) % 11) as f64 - 5.0;
                a.set(i, j, if i == j { 1e-3 * v } else { v });
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 0.5).collect();
        let mut b = dense_mul(&a.to_dense(), &x);
        BandLu::factor(&a).unwrap().solve_in_place(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-10, "{u} vs {v}");
        }
    }

    #[test]
    fn singular_is_reported() {
        let a = BandMatrix::zeros(9, 1, 1);
        assert!(BandLu::factor(&a).is_err());
    }

    #[test]
    fn matvec_matches_dense() {
        let mut a = BandMatrix::zeros(6, 1, 2);
        for i in 0..6 {
            for j in a.row_range(i) {
                a.set(i, j, (i + 2 * j) as f64);
            }
        }
        let x = [1.0, -2.0, 0.5, 3.0, 0.0, 1.5];
        let mut y = [0.0; 6];
        a.matvec(&x, &mut y);
        assert_eq!(y.to_vec(), dense_mul(&a.to_dense(), &x));
    }
}
