use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean vector plus `d` orthonormal principal directions, ordered by
/// decreasing explained variance. Each direction's largest-magnitude entry is
/// positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Row-major `d × d_h`.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn d(&self) -> usize {
        self.components.len()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    /// `components · (h − mean)`.
    pub fn project(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.mean.len() {
            return Err(Error::Dimension {
                what: "hidden vector",
                expected: self.mean.len(),
                found: h.len(),
            });
        }
        Ok(self
            .components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(h.iter().zip(&self.mean))
                    .map(|(ci, (hi, mi))| ci * (hi - mi))
                    .sum()
            })
            .collect())
    }

    /// `mean + componentsᵀ · y`.
    pub fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &yi) in self.components.iter().zip(y) {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += yi * ci;
            }
        }
        out
    }

    /// Keep the first `d` components.
    pub fn truncated(&self, d: usize) -> PcaModel {
        PcaModel {
            mean: self.mean.clone(),
            components: self.components[..d.min(self.d())].to_vec(),
            explained_variance: self.explained_variance[..d.min(self.d())].to_vec(),
        }
    }
}

/// Sample mean and unbiased covariance of a set of rows.
pub fn covariance<'a, I>(rows: I, dim: usize) -> (Vec<f64>, DMatrix<f64>, usize)
where
    I: Iterator<Item = &'a [f64]> + Clone,
{
    let mut mean = vec![0.0; dim];
    let mut n = 0usize;
    for r in rows.clone() {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
        n += 1;
    }
    for m in &mut mean {
        *m /= n.max(1) as f64;
    }
    // Upper triangle accumulation, mirrored afterwards.
    let mut cov = vec![0.0; dim * dim];
    let mut centred = vec![0.0; dim];
    for r in rows {
        for ((c, x), m) in centred.iter_mut().zip(r).zip(&mean) {
            *c = x - m;
        }
        for i in 0..dim {
            let ci = centred[i];
            let row = &mut cov[i * dim..(i + 1) * dim];
            for j in i..dim {
                row[j] += ci * centred[j];
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    let mut m = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        for j in i..dim {
            let v = cov[i * dim + j] / denom;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    (mean, m, n)
}

/// Exact PCA through the eigendecomposition of the sample covariance.
pub fn fit_pca(hidden: &[Vec<f64>], d: usize) -> Result<PcaModel> {
    fit_pca_rows(hidden.iter().map(|v| v.as_slice()), d)
}

/// [`fit_pca`] over any re-iterable set of rows (avoids copying token data).
pub fn fit_pca_rows<'a, I>(rows: I, d: usize) -> Result<PcaModel>
where
    I: Iterator<Item = &'a [f64]> + Clone,
{
    let mut first = rows.clone();
    let dim = first
        .next()
        .map(|r| r.len())
        .ok_or_else(|| Error::invalid("PCA needs at least one vector"))?;
    if d == 0 || d > dim {
        return Err(Error::config(format!(
            "PCA dimension {d} must be in 1..={dim}"
        )));
    }
    if rows.clone().any(|r| r.len() != dim) {
        return Err(Error::invalid("hidden vectors have inconsistent lengths"));
    }
    let n = rows.clone().count();
    if n < d + 1 {
        return Err(Error::invalid(format!(
            "PCA with d = {d} needs at least {} vectors, got {n}",
            d + 1
        )));
    }
    let (mean, cov, _) = covariance(rows, dim);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    // Stable sort keeps ties in solver order, which is deterministic.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut components = Vec::with_capacity(d);
    let mut explained = Vec::with_capacity(d);
    for &j in order.iter().take(d) {
        let mut c: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut c {
            *x /= norm;
        }
        let pivot = c
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            for x in &mut c {
                *x = -*x;
            }
        }
        components.push(c);
        explained.push(eig.eigenvalues[j].max(0.0));
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance: explained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn axis_aligned_points() {
        let pts = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0]];
        let m = fit_pca(&pts, 1).unwrap();
        assert_abs_diff_eq!(m.mean[0], 0.0);
        assert_abs_diff_eq!(m.mean[1], 0.0);
        assert_abs_diff_eq!(m.components[0][0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.components[0][1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn isotropic_variances_match() {
        // The four points (±1, 0), (0, ±1) have covariance (2/3) I.
        let pts = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        let m = fit_pca(&pts, 2).unwrap();
        assert_abs_diff_eq!(m.explained_variance[0], m.explained_variance[1], epsilon = 1e-12);
    }

    #[test]
    fn errors() {
        let pts = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(fit_pca(&pts, 3).is_err());
        assert!(fit_pca(&pts, 2).is_err());
        assert!(fit_pca(&[], 1).is_err());
        let m = fit_pca(&[vec![1.0, 2.0], vec![3.0, 1.0], vec![0.0, 0.0]], 1).unwrap();
        assert!(matches!(m.project(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn projection_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let m = fit_pca(&pts, 3).unwrap();
        for v in m.project(&m.mean).unwrap() {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
        let shifted: Vec<f64> = m.mean.iter().zip(&m.components[0]).map(|(a, b)| a + b).collect();
        let e1 = m.project(&shifted).unwrap();
        assert_abs_diff_eq!(e1[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e1[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e1[2], 0.0, epsilon = 1e-12);

        // Independent loop over the raw definition.
        let h: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let got = m.project(&h).unwrap();
        for (k, c) in m.components.iter().enumerate() {
            let mut want = 0.0;
            for i in 0..5 {
                want += c[i] * (h[i] - m.mean[i]);
            }
            assert_abs_diff_eq!(got[k], want, epsilon = 1e-12);
        }
    }

    #[test]
    fn components_orthonormal_and_sorted() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec<f64>> = (0..60)
            .map(|_| {
                let a: f64 = rng.random_range(-1.0..1.0);
                (0..6).map(|i| a * i as f64 + rng.random_range(-0.5..0.5)).collect()
            })
            .collect();
        let m = fit_pca(&pts, 6).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let dot: f64 = m.components[i].iter().zip(&m.components[j]).map(|(a, b)| a * b).sum();
                assert_abs_diff_eq!(dot, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-9);
            }
            let pivot = m.components[i].iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            assert!(pivot > 0.0);
        }
        assert!(m.explained_variance.windows(2).all(|w| w[0] >= w[1]));
    }
}
