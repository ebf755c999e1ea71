//! Isolation forest anomaly scores.
//!
//! Trees isolate points by recursive random axis-aligned splits over
//! per-tree subsamples; anomalies isolate in fewer splits. The score is
//! `2^(-E[h(x)] / c(psi))` where `h` is the path length (external nodes of
//! size m credit the average unsuccessful-search depth `c(m)`) and the
//! expectation runs over trees in index order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::check_matrix;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Average path length of an unsuccessful binary-search-tree lookup among
/// `m` points. `c(2)` is the exact harmonic value 1; larger `m` uses the
/// usual `ln` approximation of the harmonic number.
pub fn average_path_length(m: usize) -> f64 {
    match m {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = m as f64;
            2.0 * ((m - 1.0).ln() + EULER_GAMMA) - 2.0 * (m - 1.0) / m
        }
    }
}

enum Node<S> {
    Internal {
        attr: usize,
        split: S,
        left: Box<Node<S>>,
        right: Box<Node<S>>,
    },
    External {
        size: usize,
    },
}

fn build_node<S: Scalar>(
    x: &[Vec<S>],
    indices: &[usize],
    depth: usize,
    depth_cap: usize,
    rng: &mut ChaCha8Rng,
) -> Node<S> {
    if indices.len() <= 1 || depth >= depth_cap {
        return Node::External {
            size: indices.len(),
        };
    }
    let d = x[0].len();
    // attributes that actually vary on this node's points
    let mut valid: Vec<(usize, S, S)> = Vec::new();
    for attr in 0..d {
        let mut lo = S::infinity();
        let mut hi = S::neg_infinity();
        for &i in indices.iter() {
            let v = x[i][attr];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi > lo {
            valid.push((attr, lo, hi));
        }
    }
    if valid.is_empty() {
        return Node::External {
            size: indices.len(),
        };
    }
    let (attr, lo, hi) = valid[rng.gen_range(0..valid.len())];
    let u: f64 = rng.gen_range(0.0..1.0);
    let mut split = lo + (hi - lo) * S::cast(u);
    let partition = |split: S| {
        let mut left = Vec::new();
        let mut right = Vec::new();
        for &i in indices.iter() {
            if x[i][attr] < split {
                left.push(i);
            } else {
                right.push(i);
            }
        }
        (left, right)
    };
    let (mut left, mut right) = partition(split);
    if left.is_empty() || right.is_empty() {
        // the draw landed on the boundary; fall back to the midpoint
        split = lo + (hi - lo) / S::cast(2.0);
        (left, right) = partition(split);
        if left.is_empty() || right.is_empty() {
            return Node::External {
                size: indices.len(),
            };
        }
    }
    Node::Internal {
        attr,
        split,
        left: Box::new(build_node(x, &left, depth + 1, depth_cap, rng)),
        right: Box::new(build_node(x, &right, depth + 1, depth_cap, rng)),
    }
}

fn path_length<S: Scalar>(node: &Node<S>, point: &[S], depth: usize) -> f64 {
    match node {
        Node::External { size } => depth as f64 + average_path_length(*size),
        Node::Internal {
            attr,
            split,
            left,
            right,
        } => {
            if point[*attr] < *split {
                path_length(left, point, depth + 1)
            } else {
                path_length(right, point, depth + 1)
            }
        }
    }
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(tree as u64).to_le_bytes());
    key[24..32].copy_from_slice(b"iftree\0\0");
    ChaCha8Rng::from_seed(key)
}

/// Isolation-forest anomaly score per point. Deterministic for a fixed seed
/// and invariant to tree-level parallelism (per-tree substreams, index-ordered
/// averaging).
pub fn iforest_scores<S: Scalar>(
    x: &[Vec<S>],
    n_trees: usize,
    subsample: usize,
    seed: u64,
) -> Result<Vec<S>> {
    check_matrix(x)?;
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientPoints {
            what: "iforest_scores",
            required: 2,
            actual: n,
        });
    }
    if n_trees == 0 {
        return Err(Error::invalid("n_trees", "must be >= 1"));
    }
    if subsample < 2 {
        return Err(Error::invalid("subsample", "must be >= 2"));
    }
    if subsample > n {
        return Err(Error::Config(format!(
            "isolation-forest subsample {subsample} exceeds population {n}"
        )));
    }
    let depth_cap = (subsample as f64).log2().ceil() as usize;
    let per_tree: Vec<Vec<f64>> = (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(seed, t);
            let indices: Vec<usize> = if subsample == n {
                (0..n).collect()
            } else {
                rand::seq::index::sample(&mut rng, n, subsample).into_vec()
            };
            let root = build_node(x, &indices, 0, depth_cap, &mut rng);
            x.iter().map(|p| path_length(&root, p, 0)).collect()
        })
        .collect();
    let c = average_path_length(subsample);
    let scores = (0..n)
        .map(|i| {
            // sum trees in index order so the result is parallelism-invariant
            let total: f64 = per_tree.iter().map(|t| t[i]).sum();
            let expected = total / n_trees as f64;
            S::cast((2.0f64).powf(-expected / c))
        })
        .collect();
    Ok(scores)
}
