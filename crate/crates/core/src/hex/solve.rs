//! Small sparse solvers for the Laplace systems of the meshing stages.

/// Square sparse matrix in row-list form.
#[derive(Clone, Debug)]
pub(crate) struct Sparse {
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl Sparse {
    pub fn new(n: usize) -> Self {
        Sparse { rows: vec![Vec::new(); n] }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        match self.rows[i].iter_mut().find(|e| e.0 == j) {
            Some(e) => e.1 += v,
            None => self.rows[i].push((j, v)),
        }
    }

    pub fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (i, row) in self.rows.iter().enumerate() {
            out[i] = row.iter().map(|&(j, v)| v * x[j]).sum();
        }
    }

    /// `||b - A x|| / ||b||`, or the absolute residual when `b` is zero.
    pub fn relative_residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut ax = vec![0.0; x.len()];
        self.mul(x, &mut ax);
        let r: f64 = ax.iter().zip(b).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nb > 0.0 {
            r / nb
        } else {
            r
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive
/// definite system. Returns the final relative residual.
pub(crate) fn conjugate_gradient(a: &Sparse, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> f64 {
    let n = b.len();
    let diag: Vec<f64> = a
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| row.iter().find(|e| e.0 == i).map_or(1.0, |e| e.1))
        .collect();
    let nb = dot(b, b).sqrt();
    if n == 0 {
        return 0.0;
    }
    if nb == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return 0.0;
    }
    let mut ax = vec![0.0; n];
    a.mul(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..max_iter {
        if dot(&r, &r).sqrt() <= tol * nb {
            break;
        }
        a.mul(&p, &mut ax);
        let alpha = rz / dot(&p, &ax);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ax[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    a.relative_residual(x, b)
}

/// Gauss-Seidel sweeps for diagonally dominant, possibly non-symmetric
/// systems. Returns the final relative residual.
pub(crate) fn gauss_seidel(a: &Sparse, b: &[f64], x: &mut [f64], tol: f64, max_sweeps: usize) -> f64 {
    let mut res = a.relative_residual(x, b);
    for sweep in 0..max_sweeps {
        if res <= tol {
            break;
        }
        for (i, row) in a.rows.iter().enumerate() {
            let mut d = 0.0;
            let mut s = b[i];
            for &(j, v) in row {
                if j == i {
                    d = v;
                } else {
                    s -= v * x[j];
                }
            }
            x[i] = s / d;
        }
        if sweep % 16 == 15 {
            res = a.relative_residual(x, b);
        }
    }
    a.relative_residual(x, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_laplacian(n: usize) -> Sparse {
        let mut a = Sparse::new(n);
        for i in 0..n {
            a.add(i, i, 2.0);
            if i > 0 {
                a.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                a.add(i, i + 1, -1.0);
            }
        }
        a
    }

    #[test]
    fn cg_solves_path_laplacian() {
        // boundary values 0 and 1 on a path: the solution is linear
        let n = 50;
        let a = path_laplacian(n);
        let mut b = vec![0.0; n];
        b[n - 1] = 1.0;
        let mut x = vec![0.0; n];
        let res = conjugate_gradient(&a, &b, &mut x, 1e-14, 1000);
        assert!(res < 1e-12);
        for (i, v) in x.iter().enumerate() {
            assert!((v - (i + 1) as f64 / (n + 1) as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn gauss_seidel_agrees_with_cg() {
        let a = path_laplacian(12);
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let mut x1 = vec![0.0; 12];
        let mut x2 = vec![0.0; 12];
        conjugate_gradient(&a, &b, &mut x1, 1e-14, 1000);
        let res = gauss_seidel(&a, &b, &mut x2, 1e-13, 100_000);
        assert!(res < 1e-12);
        for (p, q) in x1.iter().zip(&x2) {
            assert!((p - q).abs() < 1e-9);
        }
    }
}
