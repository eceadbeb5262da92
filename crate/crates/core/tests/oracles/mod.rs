//! Slow, obviously-correct reference implementations shared by the
//! integration and acceptance tests.
#![allow(dead_code)]

/// Cyclic Jacobi eigensolver for a dense symmetric matrix.
///
/// Returns eigenvalues in decreasing order and the matching unit
/// eigenvectors (as rows).
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| m[i][i] * m[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in m.iter_mut() {
                    let (mkp, mkq) = (row[p], row[q]);
                    row[p] = c * mkp - s * mkq;
                    row[q] = s * mkp + c * mkq;
                }
                let (rp, rq) = (m[p].clone(), m[q].clone());
                for k in 0..n {
                    m[p][k] = c * rp[k] - s * rq[k];
                    m[q][k] = s * rp[k] + c * rq[k];
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].total_cmp(&m[i][i]));
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..n).map(|k| v[k][i]).collect())
        .collect();
    (values, vectors)
}

/// Unbiased sample covariance, computed the long way.
pub fn sample_covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    rows.iter()
                        .map(|r| (r[i] - mean[i]) * (r[j] - mean[j]))
                        .sum::<f64>()
                        / (n - 1.0)
                })
                .collect()
        })
        .collect()
}

/// `P(pos > neg) + ½ P(pos = neg)` over every pair.
pub fn brute_auroc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in pos {
        for n in neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Flip `v` so its largest-magnitude entry is positive.
pub fn canonical_sign(v: &[f64]) -> Vec<f64> {
    let big = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
    if big < 0.0 {
        v.iter().map(|x| -x).collect()
    } else {
        v.to_vec()
    }
}

/// Largest disagreement between `fit_pca` output and the Jacobi oracle on
/// the same rows: eigenvalues directly, eigenvectors up to sign.
pub fn pca_oracle_error(model: &localcal::features::PcaModel, rows: &[Vec<f64>]) -> f64 {
    let (values, vectors) = jacobi_eigen(&sample_covariance(rows));
    let mut worst = 0.0f64;
    for (i, c) in model.components.iter().enumerate() {
        worst = worst.max((model.explained_variance[i] - values[i]).abs());
        let same: f64 = c.iter().zip(&vectors[i]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let flip: f64 = c.iter().zip(&vectors[i]).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
        worst = worst.max(same.min(flip));
    }
    worst
}

/// Gaussian rows with per-axis scales spread over a decade and a random
/// rotation-free mixing, so the spectrum has clear gaps.
pub fn random_rows<R: rand::Rng>(n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    let mut normal = || -> f64 { StandardNormal.sample(rng) };
    let scales: Vec<f64> = (0..dim).map(|j| 1.0 + 9.0 * (dim - j) as f64 / dim as f64).collect();
    let mix: Vec<Vec<f64>> = (0..dim)
        .map(|_| (0..dim).map(|_| normal()).collect())
        .collect();
    (0..n)
        .map(|_| {
            let x: Vec<f64> = scales.iter().map(|s| s * normal()).collect();
            (0..dim)
                .map(|i| x[i] + 0.3 * (0..dim).map(|j| mix[i][j] * x[j]).sum::<f64>() / dim as f64)
                .collect()
        })
        .collect()
}

/// Worst gradcheck error over `nets` random small networks for one head.
pub fn worst_gradcheck(head: localcal::calib::HeadKind, nets: usize, seed: u64) -> f64 {
    use localcal::calib::{gradcheck, HeadKind, MlpParams};
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..nets {
        let input = rng.random_range(1..5);
        let hidden = rng.random_range(2..7);
        let mut mlp = MlpParams::init(input, hidden, head.output_dim(), 0.0, &mut rng);
        // Scale weights up a little so the GELU curvature matters.
        for v in mlp.theta_mut() {
            *v *= 2.0;
        }
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..rng.random_range(1..6))
            .map(|_| {
                let x: Vec<f64> = (0..input).map(|_| rng.random_range(-2.0..2.0)).collect();
                let y = match head {
                    HeadKind::Gaussian => vec![rng.random_range(-2.0..2.0)],
                    HeadKind::Categorical { bins } => {
                        let w: Vec<f64> = (0..bins).map(|_| rng.random::<f64>()).collect();
                        let s: f64 = w.iter().sum();
                        w.iter().map(|v| v / s).collect()
                    }
                };
                (x, y)
            })
            .collect();
        let refs: Vec<(&[f64], &[f64])> = rows.iter().map(|(x, y)| (x.as_slice(), y.as_slice())).collect();
        worst = worst.max(gradcheck(&mlp, head, &refs).max_rel_error);
    }
    worst
}
