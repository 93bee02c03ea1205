//! Offline ground-truth machinery: empirical covariance, a dense symmetric
//! eigensolver, and the batch-PCA baseline the scaling experiments compare
//! against.
//!
//! The eigensolver is cyclic Jacobi — not fast, but orthonormal to machine
//! precision and simple to audit, which is what an oracle is for. Every
//! decomposition is verified against its reconstruction before being
//! returned.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::oja;
use crate::spectra::SampleSource;

/// Symmetry acceptance tolerance, relative to `max(1, ‖M‖_F)`.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Jacobi convergence: max off-diagonal magnitude ≤ this × `‖M‖_F`.
pub const JACOBI_OFF_TOL: f64 = 1e-12;
/// Reconstruction acceptance: `‖M − UΛUᵀ‖_F` ≤ this × `‖M‖_F`.
pub const RECONSTRUCTION_TOL: f64 = 1e-9;
/// Hard cap on the eigensolver's input size.
pub const MAX_EIG_DIM: usize = 1024;
const MAX_SWEEPS: usize = 64;

/// A validated symmetric matrix, stored exactly symmetric (the strict upper
/// triangle is mirrored at construction after the symmetry check).
#[derive(Debug, Clone)]
pub struct SymmetricMatrix {
    m: Array2<f64>,
}

impl SymmetricMatrix {
    /// Validate squareness, finiteness, and symmetry within [`SYMMETRY_TOL`],
    /// then mirror the upper triangle so the stored matrix is exactly
    /// symmetric.
    pub fn new(mut m: Array2<f64>) -> Result<Self> {
        let d = m.nrows();
        if d == 0 || m.ncols() != d {
            return Err(Error::DimMismatch(format!(
                "symmetric matrix must be square and nonempty, got {}×{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let mut frob_sq = 0.0;
        for &v in m.iter() {
            if !v.is_finite() {
                return Err(Error::invalid("matrix has a non-finite entry"));
            }
            frob_sq += v * v;
        }
        let scale = frob_sq.sqrt().max(1.0);
        for i in 0..d {
            for j in i + 1..d {
                let diff = (m[(i, j)] - m[(j, i)]).abs();
                if diff > SYMMETRY_TOL * scale {
                    return Err(Error::invalid(format!(
                        "matrix not symmetric: |M[{i},{j}] − M[{j},{i}]| = {diff}"
                    )));
                }
                m[(j, i)] = m[(i, j)];
            }
        }
        Ok(SymmetricMatrix { m })
    }

    /// Side length `d`.
    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    /// The underlying array.
    pub fn as_array(&self) -> &Array2<f64> {
        &self.m
    }

    /// Frobenius norm.
    pub fn frob_norm(&self) -> f64 {
        self.m.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Streaming accumulator for `(1/n)Σ x xᵀ`. Only the upper triangle is
/// accumulated; mirroring at the end makes the result exactly symmetric, and
/// feeding samples in a fixed order makes the bytes reproducible.
#[derive(Debug, Clone)]
pub struct CovAccumulator {
    sums: Array2<f64>,
    n: u64,
}

impl CovAccumulator {
    pub fn new(d: usize) -> Self {
        CovAccumulator {
            sums: Array2::zeros((d, d)),
            n: 0,
        }
    }

    /// Add one sample's outer product.
    pub fn push(&mut self, x: &ArrayView1<f64>) -> Result<()> {
        let d = self.sums.nrows();
        if x.len() != d {
            return Err(Error::DimMismatch(format!(
                "sample has dim {}, accumulator is {d}-dimensional",
                x.len()
            )));
        }
        for i in 0..d {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for j in i..d {
                self.sums[(i, j)] += xi * x[j];
            }
        }
        self.n += 1;
        Ok(())
    }

    /// Samples pushed so far.
    pub fn count(&self) -> u64 {
        self.n
    }

    /// Normalize into the empirical covariance. Rejects an empty accumulator.
    pub fn finish(mut self) -> Result<SymmetricMatrix> {
        if self.n == 0 {
            return Err(Error::invalid(
                "empirical covariance needs at least one sample",
            ));
        }
        let d = self.sums.nrows();
        let inv = 1.0 / self.n as f64;
        for i in 0..d {
            for j in i..d {
                let v = self.sums[(i, j)] * inv;
                self.sums[(i, j)] = v;
                self.sums[(j, i)] = v;
            }
        }
        SymmetricMatrix::new(self.sums)
    }
}

/// `(1/n) Σ_i x_i x_iᵀ`, exactly symmetric. Rejects an empty list.
pub fn empirical_covariance(samples: &[Array1<f64>]) -> Result<SymmetricMatrix> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("empirical covariance needs at least one sample"))?;
    let mut acc = CovAccumulator::new(first.len());
    for x in samples {
        acc.push(&x.view())?;
    }
    acc.finish()
}

/// Dense symmetric eigendecomposition by cyclic Jacobi sweeps.
///
/// Returns eigenvalues in descending order (ties keep the pre-sort order —
/// the sort is stable) with matching orthonormal eigenvector columns under
/// the positive-leading-entry sign convention. Converges until the largest
/// off-diagonal magnitude is at most `1e−12·‖M‖_F`, then verifies
/// `‖M − UΛUᵀ‖_F ≤ 1e−9·‖M‖_F` before returning.
pub fn eig_sym(sym: &SymmetricMatrix) -> Result<(Vec<f64>, Array2<f64>)> {
    let d = sym.dim();
    if d > MAX_EIG_DIM {
        return Err(Error::invalid(format!(
            "eigensolver capped at {MAX_EIG_DIM}, got d = {d}"
        )));
    }
    let norm = sym.frob_norm();
    let mut a = sym.as_array().clone();
    let mut u = Array2::eye(d);
    if norm > 0.0 {
        let tol = JACOBI_OFF_TOL * norm;
        let skip = tol * 1e-3;
        let mut converged = false;
        for _sweep in 0..MAX_SWEEPS {
            let mut off: f64 = 0.0;
            for p in 0..d {
                for q in p + 1..d {
                    off = off.max(a[(p, q)].abs());
                }
            }
            if off <= tol {
                converged = true;
                break;
            }
            for p in 0..d {
                for q in p + 1..d {
                    if a[(p, q)].abs() <= skip {
                        continue;
                    }
                    jacobi_rotate(&mut a, &mut u, p, q);
                }
            }
        }
        if !converged {
            return Err(Error::Numerical(format!(
                "Jacobi sweeps did not converge in {MAX_SWEEPS} passes (d = {d})"
            )));
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    // Stable sort: equal eigenvalues keep their convergence order.
    order.sort_by(|&i, &j| {
        a[(j, j)]
            .partial_cmp(&a[(i, i)])
            .expect("eigenvalues are finite")
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Array2::zeros((d, d));
    for (col, &src) in order.iter().enumerate() {
        vectors.column_mut(col).assign(&u.column(src));
        oja::positive_leading_sign(&mut vectors.column_mut(col));
    }

    let mut recon_err_sq = 0.0;
    for i in 0..d {
        for j in 0..d {
            let mut v = 0.0;
            for (c, &lam) in eigenvalues.iter().enumerate() {
                v += lam * vectors[(i, c)] * vectors[(j, c)];
            }
            let diff = sym.as_array()[(i, j)] - v;
            recon_err_sq += diff * diff;
        }
    }
    if recon_err_sq.sqrt() > RECONSTRUCTION_TOL * norm.max(f64::MIN_POSITIVE) {
        return Err(Error::Numerical(format!(
            "eigendecomposition reconstruction error {} exceeds {RECONSTRUCTION_TOL}·‖M‖",
            recon_err_sq.sqrt()
        )));
    }
    Ok((eigenvalues, vectors))
}

/// One two-sided Jacobi rotation annihilating `a[(p,q)]`, accumulated into `u`.
fn jacobi_rotate(a: &mut Array2<f64>, u: &mut Array2<f64>, p: usize, q: usize) {
    let d = a.nrows();
    let apq = a[(p, q)];
    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    for i in 0..d {
        let aip = a[(i, p)];
        let aiq = a[(i, q)];
        a[(i, p)] = c * aip - s * aiq;
        a[(i, q)] = s * aip + c * aiq;
    }
    for i in 0..d {
        let api = a[(p, i)];
        let aqi = a[(q, i)];
        a[(p, i)] = c * api - s * aqi;
        a[(q, i)] = s * api + c * aqi;
    }
    // The rotation is chosen to zero this pair; drop the roundoff residue.
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for i in 0..d {
        let uip = u[(i, p)];
        let uiq = u[(i, q)];
        u[(i, p)] = c * uip - s * uiq;
        u[(i, q)] = s * uip + c * uiq;
    }
}

/// Top-`k` eigenvectors of the empirical covariance of `samples`, descending.
pub fn offline_pca(samples: &[Array1<f64>], k: usize) -> Result<Array2<f64>> {
    let cov = empirical_covariance(samples)?;
    top_k_of(&cov, k)
}

/// [`offline_pca`] fed directly from `n` stream draws, without storing them.
pub fn offline_pca_stream(source: &mut SampleSource, n: u64, k: usize) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::invalid(
            "empirical covariance needs at least one sample",
        ));
    }
    let mut acc = CovAccumulator::new(source.dim());
    let mut x = Array1::zeros(source.dim());
    for _ in 0..n {
        source.sample_into(&mut x);
        acc.push(&x.view())?;
    }
    top_k_of(&acc.finish()?, k)
}

fn top_k_of(cov: &SymmetricMatrix, k: usize) -> Result<Array2<f64>> {
    let d = cov.dim();
    if k == 0 || k > d {
        return Err(Error::invalid(format!("need 1 ≤ k ≤ d = {d}, got k = {k}")));
    }
    let (_vals, vecs) = eig_sym(cov)?;
    Ok(vecs.slice(ndarray::s![.., ..k]).to_owned())
}
