//! Small dense helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for stream `tag`, index `index` under `base`.
pub fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    mix64(mix64(base ^ mix64(tag)) ^ index)
}

/// `rows × cols` matrix of i.i.d. standard normals, filled column by column.
pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    DMatrix::from_vec(rows, cols, data)
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| StandardNormal.sample(rng)))
}

pub fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(format!(
            "{what} contains non-finite entries"
        )))
    }
}

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order (eigenvectors permuted to match).
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    match to_faer(m).self_adjoint_eigen(faer::Side::Lower) {
        Ok(eig) => {
            // ascending from the solver
            let s = eig.S().column_vector();
            let u = eig.U();
            let values = (0..n).rev().map(|i| s[i]).collect();
            let vectors = DMatrix::from_fn(n, n, |i, j| u[(i, n - 1 - j)]);
            (values, vectors)
        }
        Err(_) => {
            let eig = SymmetricEigen::new(m.clone());
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
            let mut vectors = DMatrix::zeros(n, n);
            for (dst, &src) in order.iter().enumerate() {
                vectors.set_column(dst, &eig.eigenvectors.column(src));
            }
            (values, vectors)
        }
    }
}

pub fn sym_eigenvalues_desc(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut values = to_faer(m)
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .unwrap_or_else(|_| m.clone().symmetric_eigenvalues().iter().copied().collect());
    values.sort_by(|a, b| b.total_cmp(a));
    values
}

/// Spectral norm of a symmetric matrix, `max |λ_i|`.
pub fn sym_spectral_norm(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues_desc(m)
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Thin SVD `A = U diag(s) Vᵀ` with singular values in descending order.
pub fn svd_desc(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let (n, m) = a.shape();
    let k = n.min(m);
    if k == 0 {
        return Ok((DMatrix::zeros(n, 0), Vec::new(), DMatrix::zeros(m, 0)));
    }
    let svd = to_faer(a)
        .thin_svd()
        .map_err(|e| Error::numeric(format!("SVD failed: {e:?}")))?;
    let s = svd.S().column_vector();
    Ok((
        from_faer(svd.U()),
        (0..k).map(|i| s[i]).collect(),
        from_faer(svd.V()),
    ))
}

/// Largest singular value of a general matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    match to_faer(m).singular_values() {
        Ok(s) => s.iter().fold(0.0_f64, |acc, v| acc.max(*v)),
        Err(_) => m
            .clone()
            .singular_values()
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(*v)),
    }
}

/// `A Aᵀ`.
pub fn gram(a: &DMatrix<f64>) -> DMatrix<f64> {
    a * a.transpose()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Linearly interpolated percentile, `q ∈ [0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    percentile(values, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_matches_linear_interpolation() {
        let v = [3.0, 1.0, 2.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 5.0);
        assert!((percentile(&v, 0.6) - 3.4).abs() < 1e-15);
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]), 2.5);
    }

    #[test]
    fn eigen_desc_is_sorted_and_reconstructs() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 1.0]);
        let (vals, vecs) = sym_eigen_desc(&m);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        let rebuilt = &vecs * DMatrix::from_diagonal(&DVector::from_vec(vals)) * vecs.transpose();
        assert!((rebuilt - m).amax() < 1e-12);
    }

    #[test]
    fn gaussian_matrix_is_seed_deterministic() {
        let a = gaussian_matrix(&mut seeded_rng(3), 4, 5);
        let b = gaussian_matrix(&mut seeded_rng(3), 4, 5);
        assert_eq!(a, b);
    }
}
