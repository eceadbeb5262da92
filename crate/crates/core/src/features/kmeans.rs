use rayon::prelude::*;

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 100;
pub const SHIFT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(p, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Greedy farthest-point seeding: start at `points[seed % n]`, then repeatedly
/// add the point farthest from every centroid chosen so far (lowest index wins
/// ties).
pub fn farthest_point_seeds(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = points.len();
    let start = (seed % n as u64) as usize;
    let mut centroids = vec![points[start].clone()];
    let mut min_d: Vec<f64> = points.par_iter().map(|p| sq_dist(p, &points[start])).collect();
    while centroids.len() < k {
        let mut far = 0;
        for (i, &d) in min_d.iter().enumerate() {
            if d > min_d[far] {
                far = i;
            }
        }
        let c = points[far].clone();
        min_d
            .par_iter_mut()
            .zip(points.par_iter())
            .for_each(|(m, p)| *m = m.min(sq_dist(p, &c)));
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm from farthest-point seeds.
///
/// Stops when no centroid moves more than [`SHIFT_TOLERANCE`] or after
/// [`MAX_ITERATIONS`] rounds. A cluster left empty is re-seeded with the
/// point farthest from its current centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::config("cluster count must be positive"));
    }
    if k > points.len() {
        return Err(Error::invalid(format!(
            "cannot form {k} clusters from {} points",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("points have inconsistent dimensions"));
    }

    let mut centroids = farthest_point_seeds(points, k, seed);
    let mut assignments = vec![0usize; points.len()];
    let mut inertia_trace = Vec::new();
    let mut iterations = 0;

    loop {
        let nearest_all: Vec<(usize, f64)> =
            points.par_iter().map(|p| nearest(p, &centroids)).collect();
        let mut inertia = 0.0;
        for (a, (c, d)) in assignments.iter_mut().zip(&nearest_all) {
            *a = *c;
            inertia += d;
        }
        inertia_trace.push(inertia);
        if iterations == MAX_ITERATIONS {
            break;
        }
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut max_shift = 0.0f64;
        for c in 0..k {
            let next = if counts[c] == 0 {
                let (far, _) = nearest_all
                    .iter()
                    .enumerate()
                    .fold((0, -1.0), |best, (i, &(_, d))| if d > best.1 { (i, d) } else { best });
                points[far].clone()
            } else {
                sums[c].iter().map(|s| s / counts[c] as f64).collect()
            };
            max_shift = max_shift.max(sq_dist(&next, &centroids[c]).sqrt());
            centroids[c] = next;
        }
        if max_shift < SHIFT_TOLERANCE {
            // Centroids are settled; one more assignment pass records the fixed point.
            let inertia: f64 = points
                .par_iter()
                .map(|p| nearest(p, &centroids).1)
                .collect::<Vec<_>>()
                .iter()
                .sum();
            for (a, p) in assignments.iter_mut().zip(points) {
                *a = nearest(p, &centroids).0;
            }
            inertia_trace.push(inertia);
            break;
        }
    }
    let inertia = *inertia_trace.last().unwrap();
    Ok(KMeans {
        assignments,
        centroids,
        inertia,
        inertia_trace,
        iterations,
    })
}

/// Index of the nearest centroid for each point.
pub fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    points.par_iter().map(|p| nearest(p, centroids).0).collect()
}
