//! Small dense matrix helpers sized for feeder-scale systems (N <= a few hundred).

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
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
    pub fn add_to(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] += v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            out[r] = acc;
        }
        out
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Mat {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= s;
        }
        out
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (v, o) in out.data.iter_mut().zip(&other.data) {
            *v -= o;
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Solve `A x = b` in place by LU with partial pivoting. Returns `None` when
/// the matrix is numerically singular.
pub fn lu_solve(a: &Mat, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows;
    assert_eq!(a.rows, a.cols);
    assert_eq!(b.len(), n);

    let mut lu = a.data.clone();
    let mut x: Vec<f64> = b.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();

    for col in 0..n {
        // Pivot search.
        let mut pivot_row = col;
        let mut pivot_val = lu[perm[col] * n + col].abs();
        for (r, &pr) in perm.iter().enumerate().skip(col + 1) {
            let v = lu[pr * n + col].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = r;
            }
        }
        if pivot_val < 1e-300 {
            return None;
        }
        perm.swap(col, pivot_row);

        let prow = perm[col];
        let pivot = lu[prow * n + col];
        for &rr in perm.iter().skip(col + 1) {
            let factor = lu[rr * n + col] / pivot;
            lu[rr * n + col] = factor;
            for c in col + 1..n {
                lu[rr * n + c] -= factor * lu[prow * n + c];
            }
        }
    }

    // Forward substitution on permuted rows.
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut acc = x[perm[i]];
        for (j, yj) in y.iter().enumerate().take(i) {
            acc -= lu[perm[i] * n + j] * yj;
        }
        y[i] = acc;
    }
    // Back substitution.
    for i in (0..n).rev() {
        let mut acc = y[i];
        for j in i + 1..n {
            acc -= lu[perm[i] * n + j] * x[j];
        }
        x[i] = acc / lu[perm[i] * n + i];
    }
    Some(x)
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves_small_system() {
        let mut a = Mat::zeros(3, 3);
        let vals = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        for r in 0..3 {
            for c in 0..3 {
                a.set(r, c, vals[r][c]);
            }
        }
        let x_true = [1.0, -2.0, 3.0];
        let b = a.matvec(&x_true);
        let x = lu_solve(&a, &b).unwrap();
        for (xi, ti) in x.iter().zip(&x_true) {
            assert!((xi - ti).abs() < 1e-12);
        }
    }

    #[test]
    fn lu_detects_singular() {
        let mut a = Mat::zeros(2, 2);
        a.set(0, 0, 1.0);
        a.set(0, 1, 2.0);
        a.set(1, 0, 2.0);
        a.set(1, 1, 4.0);
        assert!(lu_solve(&a, &[1.0, 1.0]).is_none());
    }

    #[test]
    fn matmul_identity() {
        let mut a = Mat::zeros(2, 3);
        for r in 0..2 {
            for c in 0..3 {
                a.set(r, c, (r * 3 + c) as f64);
            }
        }
        let i = Mat::identity(2);
        assert_eq!(i.matmul(&a), a);
    }
}
