//! Minimal dense containers used by the forecaster.

use rand::Rng;

/// Square single-channel feature map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Map {
    pub side: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn zeros(side: usize) -> Self {
        Self { side, data: vec![0.0; side * side] }
    }

    pub fn from_vec(side: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), side * side, "map data does not match side {side}");
        Self { side, data }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.side + col]
    }

    pub fn add_assign(&mut self, other: &Map) {
        debug_assert_eq!(self.side, other.side);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Elementwise sum of equally sized maps.
pub(crate) fn sum_maps(maps: &[Map]) -> Map {
    let mut acc = Map::zeros(maps[0].side);
    for m in maps {
        acc.add_assign(m);
    }
    acc
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn random(rows: usize, cols: usize, range: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols).map(|_| uniform(rng, -range, range)).collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `self · v`
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `selfᵀ · v`, accumulated into `out`.
    pub fn matvec_t_acc(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (row, &s) in self.data.chunks_exact(self.cols).zip(v) {
            if s == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * s;
            }
        }
    }

    /// `self += u · vᵀ`
    pub fn outer_acc(&mut self, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (row, &s) in self.data.chunks_exact_mut(self.cols).zip(u) {
            if s == 0.0 {
                continue;
            }
            for (o, b) in row.iter_mut().zip(v) {
                *o += s * b;
            }
        }
    }
}

pub(crate) fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

#[inline]
pub(crate) fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}
