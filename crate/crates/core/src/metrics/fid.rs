//! Frechet distance between Gaussian fits of feature sets. The matrix square
//! root comes from a cyclic-Jacobi eigendecomposition of the symmetrized
//! product; diagonal shrinkage keeps small-sample covariances well posed.

use crate::error::{Error, Result};

/// Shrinkage added to every covariance diagonal.
pub const SHRINKAGE: f64 = 1e-6;
/// Negative eigenvalues beyond this are a hard error; within it they clip to 0.
pub const PSD_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major d x d covariance.
    pub cov: Vec<f64>,
}

impl GaussianStats {
    /// Fit from row-major samples (n x d), population covariance plus
    /// diagonal shrinkage.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::ConfigError("cannot fit Gaussian to an empty set".into()));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::ShapeError("inconsistent feature dimensions".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, &v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut cov = vec![0.0; d * d];
        for r in rows {
            for i in 0..d {
                let di = r[i] - mean[i];
                for jj in 0..d {
                    cov[i * d + jj] += di * (r[jj] - mean[jj]);
                }
            }
        }
        for v in cov.iter_mut() {
            *v /= n;
        }
        for i in 0..d {
            cov[i * d + i] += SHRINKAGE;
        }
        Ok(Self { mean, cov })
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns (eigenvalues, eigenvectors) with A = V diag(w) V^T, V row-major
/// with eigenvectors in columns.
pub fn jacobi_eigh(a: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), d * d);
    let mut m = a.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = (1e-14 * frob).max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..d {
            for q in p + 1..d {
                off += m[p * d + q] * m[p * d + q];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m[p * d + q];
                if apq.abs() <= tol / (d as f64) {
                    continue;
                }
                let tau = (m[q * d + q] - m[p * d + p]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..d {
                    let mkp = m[k * d + p];
                    let mkq = m[k * d + q];
                    m[k * d + p] = c * mkp - s * mkq;
                    m[k * d + q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[p * d + k];
                    let mqk = m[q * d + k];
                    m[p * d + k] = c * mpk - s * mqk;
                    m[q * d + k] = s * mpk + c * mqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let w = (0..d).map(|i| m[i * d + i]).collect();
    (w, v)
}

fn matmul_sq(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut c = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let av = a[i * d + k];
            if av == 0.0 {
                continue;
            }
            for j in 0..d {
                c[i * d + j] += av * b[k * d + j];
            }
        }
    }
    c
}

/// Symmetric PSD square root via eigendecomposition; eigenvalues slightly
/// negative (within PSD_TOL) clip to zero, beyond that is an error.
pub fn sqrtm_psd(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let (w, v) = jacobi_eigh(a, d);
    let mut sq = vec![0.0; d * d];
    let mut roots = Vec::with_capacity(d);
    for &lam in &w {
        if lam < -PSD_TOL {
            return Err(Error::NumericalError(format!("eigenvalue {lam:.3e} below -{PSD_TOL:.0e}")));
        }
        roots.push(lam.max(0.0).sqrt());
    }
    // V diag(sqrt(w)) V^T
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += v[i * d + k] * roots[k] * v[j * d + k];
            }
            sq[i * d + j] = acc;
        }
    }
    Ok(sq)
}

/// Frechet distance between two Gaussians:
/// ||mu_a - mu_b||^2 + tr(Ca + Cb - 2 (Ca Cb)^{1/2}).
pub fn fid_from_stats(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    let d = a.mean.len();
    if b.mean.len() != d {
        return Err(Error::ShapeError("stat dimension mismatch".into()));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    // tr sqrt(Ca Cb) = tr sqrt(S Cb S) with S = sqrt(Ca): the symmetrized
    // product is PSD, so Jacobi applies.
    let s = sqrtm_psd(&a.cov, d)?;
    let inner = matmul_sq(&matmul_sq(&s, &b.cov, d), &s, d);
    // Symmetrize against roundoff before decomposing.
    let mut sym = inner.clone();
    for i in 0..d {
        for j in 0..d {
            sym[i * d + j] = 0.5 * (inner[i * d + j] + inner[j * d + i]);
        }
    }
    let (w, _) = jacobi_eigh(&sym, d);
    let mut tr_sqrt = 0.0;
    for &lam in &w {
        if lam < -PSD_TOL {
            return Err(Error::NumericalError(format!("product eigenvalue {lam:.3e} below tolerance")));
        }
        tr_sqrt += lam.max(0.0).sqrt();
    }
    let tr_a: f64 = (0..d).map(|i| a.cov[i * d + i]).sum();
    let tr_b: f64 = (0..d).map(|i| b.cov[i * d + i]).sum();
    Ok(mean_term + tr_a + tr_b - 2.0 * tr_sqrt)
}

/// FID between two feature sets (rows are per-sequence feature vectors).
pub fn fid(set_a: &[Vec<f64>], set_b: &[Vec<f64>]) -> Result<f64> {
    let a = GaussianStats::fit(set_a)?;
    let b = GaussianStats::fit(set_b)?;
    fid_from_stats(&a, &b)
}

/// Mean pairwise Euclidean distance over all unordered pairs.
pub fn div(set: &[Vec<f64>]) -> Result<f64> {
    if set.len() < 2 {
        return Err(Error::ConfigError("diversity needs at least two samples".into()));
    }
    let mut acc = 0.0;
    let mut pairs = 0usize;
    for i in 0..set.len() {
        for j in i + 1..set.len() {
            let d2: f64 = set[i].iter().zip(&set[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            acc += d2.sqrt();
            pairs += 1;
        }
    }
    Ok(acc / pairs as f64)
}
