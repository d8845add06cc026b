//! Dense transition matrices over small finite state spaces.

use std::fmt::Write as _;

use crate::error::{invalid, Result};

/// A square row-stochastic matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    data: Vec<f64>,
}

impl Kernel {
    /// Builds a kernel and checks that it is row-stochastic within `1e-10`.
    pub fn new(size: usize, data: Vec<f64>) -> Result<Self> {
        let k = Self::from_raw(size, data)?;
        if k.data.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(invalid("kernel has a negative or non-finite entry"));
        }
        let err = k.row_sum_error();
        if err > 1e-10 {
            return Err(invalid(format!("kernel rows deviate from 1 by {err:e}")));
        }
        Ok(k)
    }

    /// Builds a matrix without the stochasticity check (used for
    /// substochastic intermediates and by callers that validate later).
    pub fn from_raw(size: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != size * size {
            return Err(invalid(format!("expected {} entries for a {size}x{size} kernel, got {}", size * size, data.len())));
        }
        Ok(Self { size, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(size, data)
    }

    pub fn identity(size: usize) -> Self {
        let mut data = vec![0.0; size * size];
        for i in 0..size {
            data[i * size + i] = 1.0;
        }
        Self { size, data }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[x * self.size + y]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[x * self.size + y] = v;
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.data[x * self.size..(x + 1) * self.size]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Row vector times matrix.
    pub fn apply_left(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size];
        for (x, &vx) in v.iter().enumerate() {
            if vx == 0.0 {
                continue;
            }
            for (o, &k) in out.iter_mut().zip(self.row(x)) {
                *o += vx * k;
            }
        }
        out
    }

    /// `self · other`.
    pub fn compose(&self, other: &Kernel) -> Kernel {
        assert_eq!(self.size, other.size, "kernel sizes differ");
        let m = self.size;
        let mut data = vec![0.0; m * m];
        for x in 0..m {
            let out = &mut data[x * m..(x + 1) * m];
            for (z, &a) in self.row(x).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out.iter_mut().zip(other.row(z)) {
                    *o += a * b;
                }
            }
        }
        Kernel { size: m, data }
    }

    /// `(K + I) / 2`.
    pub fn half_lazy(&self) -> Kernel {
        let mut k = self.clone();
        for v in &mut k.data {
            *v *= 0.5;
        }
        for i in 0..self.size {
            k.data[i * self.size + i] += 0.5;
        }
        k
    }

    pub fn min_diagonal(&self) -> f64 {
        (0..self.size).map(|i| self.get(i, i)).fold(f64::INFINITY, f64::min)
    }

    pub fn row_sum_error(&self) -> f64 {
        (0..self.size).map(|x| (self.row(x).iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn column_sum_error(&self) -> f64 {
        (0..self.size).map(|y| ((0..self.size).map(|x| self.get(x, y)).sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// `max_y |(π K)(y) − π(y)|`.
    pub fn stationarity_error(&self, pi: &[f64]) -> f64 {
        self.apply_left(pi).iter().zip(pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Kernel) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Dense row-major text, one row per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for x in 0..self.size {
            let row: Vec<String> = self.row(x).iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_stochastic() {
        assert!(Kernel::new(2, vec![0.5, 0.4, 0.0, 1.0]).is_err());
        assert!(Kernel::new(2, vec![1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn compose_and_lazy() {
        let swap = Kernel::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let id = swap.compose(&swap);
        assert_eq!(id, Kernel::identity(2));
        let lazy = swap.half_lazy();
        assert_eq!(lazy.as_slice(), &[0.5, 0.5, 0.5, 0.5]);
        assert_eq!(lazy.min_diagonal(), 0.5);
        assert_eq!(swap.apply_left(&[1.0, 0.0]), vec![0.0, 1.0]);
        assert!(swap.stationarity_error(&[0.5, 0.5]) < 1e-15);
    }
}
