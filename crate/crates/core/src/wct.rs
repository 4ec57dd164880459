//! Whitening-coloring transform over abundance matrices, with a
//! self-contained cyclic Jacobi eigensolver (k = 10, so O(k^3) sweeps are
//! nothing).

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-9;

/// Mean, covariance, and symmetric eigendecomposition of one abundance
/// matrix. Eigenvectors are the columns of `eigenvectors`, ordered to
/// match `eigenvalues` (descending), so `cov = E * diag(d) * E^T`.
#[derive(Debug, Clone)]
pub struct WctStats {
    pub mean: Matrix,
    pub covariance: Matrix,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

/// Column means, unbiased covariance, and its eigendecomposition.
pub fn compute_stats(s: &Matrix) -> Result<WctStats> {
    if s.rows() < 2 {
        return Err(Error::Domain(format!(
            "covariance needs at least 2 rows, got {}",
            s.rows()
        )));
    }
    let mean = s.col_means();
    let centered = center(s, &mean);
    let covariance = centered
        .matmul_tn(&centered)?
        .scale(1.0 / (s.rows() - 1) as f64);
    let (eigenvalues, eigenvectors) = sym_eig(&covariance)?;
    // clamp tiny negative eigenvalues from roundoff
    let eigenvalues = eigenvalues.into_iter().map(|d| d.max(0.0)).collect();
    Ok(WctStats {
        mean,
        covariance,
        eigenvalues,
        eigenvectors,
    })
}

fn center(s: &Matrix, mean: &Matrix) -> Matrix {
    let mut out = s.clone();
    for i in 0..out.rows() {
        for (o, &m) in out.row_mut(i).iter_mut().zip(mean.row(0)) {
            *o -= m;
        }
    }
    out
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order with matching eigenvector
/// columns.
pub fn sym_eig(c: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = c.rows();
    if c.cols() != n {
        return Err(Error::shape(format!(
            "sym_eig needs a square matrix, got {}x{}",
            c.rows(),
            c.cols()
        )));
    }
    for i in 0..n {
        for j in i + 1..n {
            if (c.get(i, j) - c.get(j, i)).abs() > SYMMETRY_TOL {
                return Err(Error::Domain(format!(
                    "matrix not symmetric at ({i},{j}): {} vs {}",
                    c.get(i, j),
                    c.get(j, i)
                )));
            }
        }
    }
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a.set(i, j, 0.5 * (c.get(i, j) + c.get(j, i)));
        }
    }
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a.get(p, q) * a.get(p, q);
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = 0.5 * (a.get(q, q) - a.get(p, p)) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let cos = 1.0 / (t * t + 1.0).sqrt();
                let sin = t * cos;

                let app = a.get(p, p);
                let aqq = a.get(q, q);
                a.set(p, p, app - t * apq);
                a.set(q, q, aqq + t * apq);
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for r in 0..n {
                    if r != p && r != q {
                        let arp = a.get(r, p);
                        let arq = a.get(r, q);
                        a.set(r, p, cos * arp - sin * arq);
                        a.set(p, r, cos * arp - sin * arq);
                        a.set(r, q, sin * arp + cos * arq);
                        a.set(q, r, sin * arp + cos * arq);
                    }
                }
                for r in 0..n {
                    let vrp = v.get(r, p);
                    let vrq = v.get(r, q);
                    v.set(r, p, cos * vrp - sin * vrq);
                    v.set(r, q, sin * vrp + cos * vrq);
                }
            }
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).partial_cmp(&a.get(i, i)).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, dst, v.get(r, src));
        }
    }
    Ok((eigenvalues, vectors))
}

/// `e * diag(d) * e^T` with an entrywise function applied to d.
fn eig_map(e: &Matrix, d: &[f64], f: impl Fn(f64) -> f64) -> Matrix {
    let n = e.rows();
    let mut scaled = e.clone();
    for r in 0..n {
        for (j, o) in scaled.row_mut(r).iter_mut().enumerate() {
            *o *= f(d[j]);
        }
    }
    scaled.matmul_nt(e).expect("square shapes")
}

/// Whiten the content abundance against its own statistics, color it with
/// the style statistics, and shift to the style mean. Output rows are not
/// re-projected to the simplex unless `renormalize` is set.
pub fn wct_transfer_opts(
    s_content: &Matrix,
    s_style: &Matrix,
    eps: f64,
    renormalize: bool,
) -> Result<Matrix> {
    if eps <= 0.0 {
        return Err(Error::Config(format!(
            "WCT eigenvalue regularizer must be positive, got {eps}"
        )));
    }
    if s_content.cols() != s_style.cols() {
        return Err(Error::shape(format!(
            "content and style abundances must share column count: {} vs {}",
            s_content.cols(),
            s_style.cols()
        )));
    }
    let stats_c = compute_stats(s_content)?;
    let stats_s = compute_stats(s_style)?;

    let centered = center(s_content, &stats_c.mean);
    let whitener = eig_map(&stats_c.eigenvectors, &stats_c.eigenvalues, |d| {
        1.0 / (d + eps).sqrt()
    });
    let colorer = eig_map(&stats_s.eigenvectors, &stats_s.eigenvalues, |d| {
        d.max(0.0).sqrt()
    });
    let transform = whitener.matmul(&colorer)?;
    let mut out = centered.matmul(&transform)?;
    for i in 0..out.rows() {
        for (o, &m) in out.row_mut(i).iter_mut().zip(stats_s.mean.row(0)) {
            *o += m;
        }
    }
    if renormalize {
        let k = out.cols();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            for v in row.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                for v in row.iter_mut() {
                    *v /= sum;
                }
            } else {
                row.fill(1.0 / k as f64);
            }
        }
    }
    Ok(out)
}

/// [`wct_transfer_opts`] without simplex renormalization.
pub fn wct_transfer(s_content: &Matrix, s_style: &Matrix, eps: f64) -> Result<Matrix> {
    wct_transfer_opts(s_content, s_style, eps, false)
}
