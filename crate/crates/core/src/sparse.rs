//! Minimal CSR sparse matrix with a Jacobi-preconditioned conjugate
//! gradient solver for the SPD systems assembled by the slit mapping.

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SparseMatrix {
    n: usize,
    row_offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a CSR matrix from triplets, summing duplicates. Triplets are
    /// sorted internally, so assembly order does not affect the result.
    pub fn from_triplets(n: usize, triplets: &[(u32, u32, f64)]) -> Self {
        let mut sorted: Vec<(u32, u32, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut rows: Vec<u32> = Vec::with_capacity(sorted.len());
        let mut cols: Vec<u32> = Vec::with_capacity(sorted.len());
        let mut vals: Vec<f64> = Vec::with_capacity(sorted.len());
        for &(r, c, v) in &sorted {
            if rows.last() == Some(&r) && cols.last() == Some(&c) {
                *vals.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                cols.push(c);
                vals.push(v);
            }
        }
        let mut row_offsets = vec![0usize; n + 1];
        for &r in &rows {
            row_offsets[r as usize + 1] += 1;
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        SparseMatrix { n, row_offsets, cols, vals }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                acc += self.vals[k] * x[self.cols[k] as usize];
            }
            y[r] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for r in 0..self.n {
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                if self.cols[k] as usize == r {
                    d[r] += self.vals[k];
                }
            }
        }
        d
    }
}

/// Solves `A x = b` for SPD `A` with Jacobi-preconditioned CG.
///
/// Converges when `||r|| <= tol_rel * ||b||`; errors out if the iteration
/// cap is hit or the matrix turns out indefinite.
pub fn solve_cg(a: &SparseMatrix, b: &[f64], tol_rel: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.n();
    assert_eq!(b.len(), n);
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut az = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let target = tol_rel * bnorm;

    for _ in 0..max_iter {
        a.mul_into(&p, &mut az);
        let pap = dot(&p, &az);
        if !pap.is_finite() || pap <= 0.0 {
            return Err(Error::Solve(format!("matrix not positive definite (pAp = {pap})")));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * az[i];
        }
        if norm(&r) <= target {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Solve(format!(
        "conjugate gradient failed to reach {tol_rel:.1e} in {max_iter} iterations"
    )))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_spd_system() {
        // Dense SPD matrix  [4 1 0; 1 3 1; 0 1 5].
        let triplets = vec![
            (0u32, 0u32, 4.0),
            (0, 1, 1.0),
            (1, 0, 1.0),
            (1, 1, 3.0),
            (1, 2, 1.0),
            (2, 1, 1.0),
            (2, 2, 5.0),
        ];
        let a = SparseMatrix::from_triplets(3, &triplets);
        let b = vec![1.0, 2.0, 3.0];
        let x = solve_cg(&a, &b, 1e-14, 100).unwrap();
        let mut ax = vec![0.0; 3];
        a.mul_into(&x, &mut ax);
        for (l, r) in ax.iter().zip(&b) {
            assert!((l - r).abs() < 1e-10);
        }
    }

    #[test]
    fn duplicate_triplets_are_summed() {
        let a = SparseMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 1, 1.0)]);
        let mut y = vec![0.0; 2];
        a.mul_into(&[1.0, 1.0], &mut y);
        assert_eq!(y, vec![3.0, 1.0]);
    }

    #[test]
    fn grid_laplacian_reproduces_linear_field() {
        // Dirichlet problem on a path graph: u'' = 0 with u(0)=0, u(n+1)=1
        // has the exact linear solution even discretely.
        let n = 50;
        let mut trips: Vec<(u32, u32, f64)> = Vec::new();
        let mut b = vec![0.0; n];
        for i in 0..n {
            trips.push((i as u32, i as u32, 2.0));
            if i > 0 {
                trips.push((i as u32, (i - 1) as u32, -1.0));
            } else {
                b[i] += 0.0;
            }
            if i + 1 < n {
                trips.push((i as u32, (i + 1) as u32, -1.0));
            } else {
                b[i] += 1.0;
            }
        }
        let a = SparseMatrix::from_triplets(n, &trips);
        let x = solve_cg(&a, &b, 1e-13, 10_000).unwrap();
        for (i, xi) in x.iter().enumerate() {
            let expect = (i + 1) as f64 / (n + 1) as f64;
            assert!((xi - expect).abs() < 1e-9, "x[{i}] = {xi}, expect {expect}");
        }
    }
}
