//! Local outlier factor.
//!
//! For each point: its `k` nearest neighbors (distance ties broken by
//! ascending index), the reachability distance to each neighbor, the local
//! reachability density (lrd), and finally the ratio of the neighbors' mean
//! lrd to the point's own. Duplicate-heavy sets can make lrd infinite; when
//! both a point and its neighbor have infinite lrd their ratio counts as 1.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{check_matrix, sq_dist};

/// LOF score per point; ~1 for inliers, larger for outliers.
pub fn lof_scores<S: Scalar>(x: &[Vec<S>], k: usize) -> Result<Vec<S>> {
    check_matrix(x)?;
    let n = x.len();
    if k == 0 {
        return Err(Error::invalid("k", "neighbor count must be >= 1"));
    }
    if n < k + 1 {
        return Err(Error::InsufficientPoints {
            what: "lof_scores",
            required: k + 1,
            actual: n,
        });
    }

    // k nearest neighbors and k-distance per point
    let neighborhoods: Vec<(Vec<usize>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut dists: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (sq_dist(&x[i], &x[j]).f64().sqrt(), j))
                .collect();
            dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let neighbors: Vec<usize> = dists.iter().take(k).map(|&(_, j)| j).collect();
            let k_distance = dists[k - 1].0;
            (neighbors, k_distance)
        })
        .collect();

    let dist = |i: usize, j: usize| sq_dist(&x[i], &x[j]).f64().sqrt();

    // local reachability density
    let lrd: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (neighbors, _) = &neighborhoods[i];
            let mean_reach: f64 = neighbors
                .iter()
                .map(|&j| dist(i, j).max(neighborhoods[j].1))
                .sum::<f64>()
                / k as f64;
            if mean_reach > 0.0 {
                1.0 / mean_reach
            } else {
                f64::INFINITY
            }
        })
        .collect();

    let scores = (0..n)
        .map(|i| {
            let (neighbors, _) = &neighborhoods[i];
            let ratio_sum: f64 = neighbors
                .iter()
                .map(|&j| {
                    if lrd[i].is_infinite() && lrd[j].is_infinite() {
                        1.0
                    } else {
                        lrd[j] / lrd[i]
                    }
                })
                .sum();
            S::cast(ratio_sum / k as f64)
        })
        .collect();
    Ok(scores)
}
