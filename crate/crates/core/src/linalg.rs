//! Banded linear solver used by the implicit PDE steps.
//!
//! The 1-d operator is tridiagonal and the 2-d operator (lexicographic
//! ordering) has half-bandwidth `nx0 + 1`; both go through the same
//! elimination without pivoting. The systems are of the form `I - dt·A` with
//! `A` a discrete elliptic operator, so pivots stay away from zero; a tiny
//! pivot is reported as a singular system rather than silently amplified.

use crate::error::{Error, Result};

/// Square banded matrix with equal lower/upper half-bandwidth.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    half: usize,
    // row-major, each row stores columns i-half ..= i+half
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn new(n: usize, half: usize) -> Self {
        BandMatrix { n, half, data: vec![0.0; n * (2 * half + 1)] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.half >= i && j <= i + self.half);
        i * (2 * self.half + 1) + (j + self.half - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.half < i || j > i + self.half {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    /// Solve `A x = rhs` in place, consuming the matrix.
    pub fn solve(mut self, rhs: &mut [f64]) -> Result<()> {
        let n = self.n;
        let h = self.half;
        assert_eq!(rhs.len(), n);
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for k in 0..n {
            let pivot = self.get(k, k);
            if !pivot.is_finite() || pivot.abs() <= 1e-14 * scale {
                return Err(Error::SingularSystem(format!("pivot {pivot:e} at row {k} of {n}")));
            }
            let last = (k + h).min(n - 1);
            for i in (k + 1)..=last {
                let factor = self.get(i, k) / pivot;
                if factor == 0.0 {
                    continue;
                }
                for j in k..=last {
                    let v = self.get(k, j);
                    if v != 0.0 {
                        self.add(i, j, -factor * v);
                    }
                }
                rhs[i] -= factor * rhs[k];
            }
        }
        for k in (0..n).rev() {
            let last = (k + h).min(n - 1);
            let mut acc = rhs[k];
            for j in (k + 1)..=last {
                acc -= self.get(k, j) * rhs[j];
            }
            rhs[k] = acc / self.get(k, k);
        }
        Ok(())
    }
}

/// Smallest eigenvalue of a symmetric `d×d` row-major matrix.
pub fn min_symmetric_eigenvalue(m: &[f64], d: usize) -> f64 {
    match d {
        1 => m[0],
        2 => {
            let (a, b, c) = (m[0], 0.5 * (m[1] + m[2]), m[3]);
            let mid = 0.5 * (a + c);
            let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            mid - rad
        }
        _ => {
            let mat = nalgebra::DMatrix::from_row_slice(d, d, m);
            let sym = 0.5 * (&mat + mat.transpose());
            sym.symmetric_eigenvalues().min()
        }
    }
}

/// Solve `m x = v` for a small dense row-major matrix.
pub fn solve_small(m: &[f64], d: usize, v: &[f64]) -> Option<Vec<f64>> {
    match d {
        1 => (m[0] != 0.0).then(|| vec![v[0] / m[0]]),
        2 => {
            let det = m[0] * m[3] - m[1] * m[2];
            if det == 0.0 || !det.is_finite() {
                return None;
            }
            Some(vec![(m[3] * v[0] - m[1] * v[1]) / det, (m[0] * v[1] - m[2] * v[0]) / det])
        }
        _ => {
            let mat = nalgebra::DMatrix::from_row_slice(d, d, m);
            let rhs = nalgebra::DVector::from_column_slice(v);
            mat.lu().solve(&rhs).map(|x| x.as_slice().to_vec())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_solve_matches_dense() {
        let n = 6;
        let mut a = BandMatrix::new(n, 1);
        let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            a.set(i, i, 4.0 + i as f64);
            dense[(i, i)] = 4.0 + i as f64;
            if i > 0 {
                a.set(i, i - 1, -1.0);
                dense[(i, i - 1)] = -1.0;
            }
            if i + 1 < n {
                a.set(i, i + 1, -1.5);
                dense[(i, i + 1)] = -1.5;
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = rhs.clone();
        a.solve(&mut x).unwrap();
        let expect = dense.lu().solve(&nalgebra::DVector::from_column_slice(&rhs)).unwrap();
        for i in 0..n {
            assert!((x[i] - expect[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_pivot_is_reported() {
        let a = BandMatrix::new(3, 1);
        let mut rhs = vec![1.0; 3];
        assert!(matches!(a.solve(&mut rhs), Err(Error::SingularSystem(_))));
    }

    #[test]
    fn eigen_and_small_solve() {
        let m = [2.0, 1.0, 1.0, 2.0];
        assert!((min_symmetric_eigenvalue(&m, 2) - 1.0).abs() < 1e-14);
        let x = solve_small(&m, 2, &[3.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
        let m3 = [2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.5];
        assert!((min_symmetric_eigenvalue(&m3, 3) - 0.5).abs() < 1e-12);
    }
}
