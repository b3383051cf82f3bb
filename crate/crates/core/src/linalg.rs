//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

/// Symmetric part `(A + A^T) / 2`.
pub fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn min_eig_sym(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    if a.nrows() == 1 {
        return a[(0, 0)];
    }
    SymmetricEigen::new(sym(a)).eigenvalues.min()
}

/// Smallest eigenvalue of a Hermitian matrix via its real 2n x 2n embedding.
pub fn min_eig_herm(h: &DMatrix<Complex64>) -> f64 {
    let n = h.nrows();
    if n == 1 {
        return h[(0, 0)].re;
    }
    if n == 2 {
        // closed form for the common 2x2 case
        let a = h[(0, 0)].re;
        let d = h[(1, 1)].re;
        let b = 0.5 * (h[(0, 1)] + h[(1, 0)].conj());
        let m = 0.5 * (a + d);
        let r = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
        return m - r;
    }
    SymmetricEigen::new(real_embedding(h)).eigenvalues.min()
}

/// `[[Re, -Im], [Im, Re]]`, whose spectrum is that of `h` with doubled multiplicity.
pub fn real_embedding(h: &DMatrix<Complex64>) -> DMatrix<f64> {
    let n = h.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = 0.5 * (h[(i, j)] + h[(j, i)].conj());
            out[(i, j)] = z.re;
            out[(i + n, j + n)] = z.re;
            out[(i, j + n)] = -z.im;
            out[(i + n, j)] = z.im;
        }
    }
    out
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 1 && a.ncols() == 1 {
        return a[(0, 0)].abs();
    }
    a.clone().svd(false, false).singular_values.max()
}

pub mod poly {
    //! Real polynomials in descending powers.

    use nalgebra::DMatrix;
    use num_complex::Complex64;

    pub fn trim(p: &[f64]) -> Vec<f64> {
        let first = p.iter().position(|c| *c != 0.0).unwrap_or(p.len());
        if first == p.len() {
            vec![0.0]
        } else {
            p[first..].to_vec()
        }
    }

    pub fn degree(p: &[f64]) -> usize {
        trim(p).len() - 1
    }

    pub fn is_zero(p: &[f64]) -> bool {
        p.iter().all(|c| *c == 0.0)
    }

    pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    }

    pub fn eval(p: &[f64], s: Complex64) -> Complex64 {
        p.iter().fold(Complex64::new(0.0, 0.0), |acc, c| acc * s + c)
    }

    pub fn eval_real(p: &[f64], s: f64) -> f64 {
        p.iter().fold(0.0, |acc, c| acc * s + c)
    }

    pub fn roots(p: &[f64]) -> Vec<Complex64> {
        let p = trim(p);
        let n = p.len() - 1;
        match n {
            0 => vec![],
            1 => vec![Complex64::new(-p[1] / p[0], 0.0)],
            2 => {
                let (a, b, c) = (p[0], p[1], p[2]);
                let disc = Complex64::new(b * b - 4.0 * a * c, 0.0).sqrt();
                // numerically stable pairing
                let q = if b >= 0.0 {
                    -0.5 * (b + disc)
                } else {
                    -0.5 * (b - disc)
                };
                if q.norm() == 0.0 {
                    vec![Complex64::new(0.0, 0.0); 2]
                } else {
                    vec![q / a, c / q]
                }
            }
            _ => {
                let mut comp = DMatrix::zeros(n, n);
                for j in 0..n {
                    comp[(0, j)] = -p[j + 1] / p[0];
                }
                for i in 1..n {
                    comp[(i, i - 1)] = 1.0;
                }
                comp.complex_eigenvalues().iter().copied().collect()
            }
        }
    }
}
