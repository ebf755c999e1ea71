//! Novelty scorers over a set of spectra.
//!
//! Each scorer takes the current population of measured spectra as an
//! `n x d` point set and assigns every member a uniqueness score relative to
//! the rest. All five are recomputed from scratch each time the population
//! grows; none keeps incremental state. Scores are deterministic given the
//! input order (ties always break toward the lower index) and, for the
//! isolation forest, the seed.

mod iforest;
mod lof;
mod ocsvm;

pub use iforest::{average_path_length, iforest_scores};
pub use lof::lof_scores;
pub use ocsvm::{ocsvm_scores, ocsvm_solve, OcsvmSolution};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataspace::GridDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default memory guard for the O(n^2) scorers in [`novelty_map`].
pub const DEFAULT_PAIRWISE_CAP: usize = 12_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoveltyMethod {
    /// Distance to the population centroid.
    Dtc,
    /// Mean distance to the k nearest neighbors.
    Nn,
    /// Isolation forest anomaly score.
    If,
    /// Negated one-class SVM decision function.
    Ocsvm,
    /// Local outlier factor.
    Lof,
}

impl NoveltyMethod {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "dtc" => Ok(Self::Dtc),
            "nn" => Ok(Self::Nn),
            "if" | "iforest" => Ok(Self::If),
            "ocsvm" => Ok(Self::Ocsvm),
            "lof" => Ok(Self::Lof),
            other => Err(Error::invalid(
                "method",
                format!("unknown novelty method '{other}' (dtc|nn|if|ocsvm|lof)"),
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Dtc => "dtc",
            Self::Nn => "nn",
            Self::If => "if",
            Self::Ocsvm => "ocsvm",
            Self::Lof => "lof",
        }
    }
}

/// Scorer selection plus hyperparameters. Fields not used by the selected
/// method are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoveltyConfig {
    pub method: NoveltyMethod,
    /// Neighbor count for NN and LOF.
    pub k: usize,
    /// Tree count for the isolation forest.
    pub n_trees: usize,
    /// Subsample size per tree; `None` means `min(256, n)`.
    pub subsample: Option<usize>,
    /// One-class SVM margin fraction, in (0, 1].
    pub nu: f64,
    /// RBF kernel width; `None` means `1 / (d * var(X))`.
    pub gamma: Option<f64>,
    /// Seed for the isolation forest's subsampling and splits.
    pub seed: u64,
    /// Min-max normalize scores to [0, 1] per call (constant input maps to
    /// all zeros).
    pub normalize: bool,
    /// Point-count guard for the O(n^2) methods in full-grid maps.
    pub pairwise_cap: usize,
}

impl Default for NoveltyConfig {
    fn default() -> Self {
        Self {
            method: NoveltyMethod::Nn,
            k: 5,
            n_trees: 100,
            subsample: None,
            nu: 0.1,
            gamma: None,
            seed: 0,
            normalize: true,
            pairwise_cap: DEFAULT_PAIRWISE_CAP,
        }
    }
}

impl NoveltyConfig {
    pub fn validate(&self) -> Result<()> {
        match self.method {
            NoveltyMethod::Nn | NoveltyMethod::Lof => {
                if self.k == 0 {
                    return Err(Error::invalid("k", "neighbor count must be >= 1"));
                }
            }
            NoveltyMethod::If => {
                if self.n_trees == 0 {
                    return Err(Error::invalid("n_trees", "must be >= 1"));
                }
                if let Some(psi) = self.subsample {
                    if psi < 2 {
                        return Err(Error::invalid("subsample", "must be >= 2"));
                    }
                }
            }
            NoveltyMethod::Ocsvm => {
                if !(self.nu > 0.0 && self.nu <= 1.0) {
                    return Err(Error::invalid("nu", "must lie in (0, 1]"));
                }
                if let Some(g) = self.gamma {
                    if !(g > 0.0) {
                        return Err(Error::invalid("gamma", "must be > 0"));
                    }
                }
            }
            NoveltyMethod::Dtc => {}
        }
        Ok(())
    }

    fn resolved_subsample(&self, n: usize) -> usize {
        self.subsample.unwrap_or_else(|| n.min(256))
    }

    fn resolved_gamma<S: Scalar>(&self, x: &[Vec<S>]) -> f64 {
        match self.gamma {
            Some(g) => g,
            None => {
                let d = x.first().map_or(1, |r| r.len()).max(1);
                let mut sum = 0.0;
                let mut sum_sq = 0.0;
                let mut count = 0usize;
                for row in x {
                    for &v in row {
                        let v = v.f64();
                        sum += v;
                        sum_sq += v * v;
                        count += 1;
                    }
                }
                if count == 0 {
                    return 1.0;
                }
                let mean = sum / count as f64;
                let var = (sum_sq / count as f64 - mean * mean).max(0.0);
                if var > 0.0 {
                    1.0 / (d as f64 * var)
                } else {
                    1.0
                }
            }
        }
    }
}

pub(crate) fn check_matrix<S: Scalar>(x: &[Vec<S>]) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::InsufficientPoints {
            what: "novelty scorer",
            required: 1,
            actual: 0,
        });
    }
    let d = x[0].len();
    for (i, row) in x.iter().enumerate() {
        if row.len() != d {
            return Err(Error::DimMismatch {
                what: "novelty input row",
                expected: d,
                actual: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "novelty input",
                format!("non-finite value in row {i}"),
            ));
        }
    }
    Ok(d)
}

pub(crate) fn sq_dist<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = S::zero();
    for (x, y) in a.iter().zip(b) {
        let diff = *x - *y;
        acc = acc + diff * diff;
    }
    acc
}

/// Euclidean distance of each point from the population centroid.
pub fn dtc_scores<S: Scalar>(x: &[Vec<S>]) -> Result<Vec<S>> {
    let d = check_matrix(x)?;
    let n = x.len();
    let inv_n = S::cast(1.0 / n as f64);
    let mut centroid = vec![S::zero(); d];
    for row in x {
        for (c, v) in centroid.iter_mut().zip(row) {
            *c = *c + *v;
        }
    }
    for c in centroid.iter_mut() {
        *c = *c * inv_n;
    }
    Ok(x.iter().map(|row| sq_dist(row, &centroid).sqrt()).collect())
}

/// Mean Euclidean distance of each point to its `k` nearest neighbors,
/// self excluded, distance ties broken by ascending index.
pub fn knn_scores<S: Scalar>(x: &[Vec<S>], k: usize) -> Result<Vec<S>> {
    check_matrix(x)?;
    let n = x.len();
    if k == 0 {
        return Err(Error::invalid("k", "neighbor count must be >= 1"));
    }
    if n < k + 1 {
        return Err(Error::InsufficientPoints {
            what: "knn_scores",
            required: k + 1,
            actual: n,
        });
    }
    let scores: Vec<S> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut dists: Vec<(S, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (sq_dist(&x[i], &x[j]), j))
                .collect();
            dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let mut acc = S::zero();
            for (d2, _) in dists.iter().take(k) {
                acc = acc + d2.sqrt();
            }
            acc / S::cast(k as f64)
        })
        .collect();
    Ok(scores)
}

/// Dispatches to the configured scorer and optionally min-max normalizes.
pub fn score<S: Scalar>(x: &[Vec<S>], cfg: &NoveltyConfig) -> Result<Vec<S>> {
    cfg.validate()?;
    let n = x.len();
    let mut scores = match cfg.method {
        NoveltyMethod::Dtc => dtc_scores(x)?,
        NoveltyMethod::Nn => knn_scores(x, cfg.k)?,
        NoveltyMethod::If => {
            iforest_scores(x, cfg.n_trees, cfg.resolved_subsample(n), cfg.seed)?
        }
        NoveltyMethod::Ocsvm => ocsvm_scores(x, cfg.nu, cfg.resolved_gamma(x))?,
        NoveltyMethod::Lof => lof_scores(x, cfg.k)?,
    };
    if cfg.normalize {
        min_max_normalize(&mut scores);
    }
    Ok(scores)
}

/// In-place min-max to [0, 1]; a constant vector maps to all zeros.
/// Infinite scores (LOF can produce them on duplicate-heavy sets) pin to the
/// matching endpoint so the output stays finite and order-preserving.
pub fn min_max_normalize<S: Scalar>(scores: &mut [S]) {
    let mut lo = S::infinity();
    let mut hi = S::neg_infinity();
    let mut has_pos_inf = false;
    let mut has_neg_inf = false;
    for &s in scores.iter() {
        if s.is_finite() {
            lo = lo.min(s);
            hi = hi.max(s);
        } else if s > S::zero() {
            has_pos_inf = true;
        } else {
            has_neg_inf = true;
        }
    }
    if !lo.is_finite() {
        // no finite entry at all
        for s in scores.iter_mut() {
            *s = if s.is_finite() || *s < S::zero() {
                S::zero()
            } else {
                S::one()
            };
        }
        if !(has_pos_inf && has_neg_inf) {
            for s in scores.iter_mut() {
                *s = S::zero();
            }
        }
        return;
    }
    let range = hi - lo;
    let spread = range > S::zero() || has_pos_inf || has_neg_inf;
    for s in scores.iter_mut() {
        *s = if !s.is_finite() {
            if *s > S::zero() {
                S::one()
            } else {
                S::zero()
            }
        } else if !spread {
            S::zero()
        } else if range > S::zero() {
            (*s - lo) / range
        } else if has_pos_inf {
            // finite entries are all equal and sit below the infinities
            S::zero()
        } else {
            S::one()
        };
    }
}

/// Scores every pixel's spectrum against the whole grid as one population.
/// The O(n^2) methods refuse grids above `cfg.pairwise_cap` points.
pub fn novelty_map(ds: &GridDataset, cfg: &NoveltyConfig) -> Result<Vec<f64>> {
    let n = ds.height() * ds.width();
    let pairwise = matches!(
        cfg.method,
        NoveltyMethod::Nn | NoveltyMethod::Lof | NoveltyMethod::Ocsvm
    );
    if pairwise && n > cfg.pairwise_cap {
        return Err(Error::CapExceeded {
            n,
            cap: cfg.pairwise_cap,
        });
    }
    let w = ds.width();
    let x: Vec<Vec<f64>> = (0..n)
        .map(|px| ds.spectrum_at((px / w, px % w)))
        .collect::<Result<_>>()?;
    score(&x, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{self, SynthConfig};
    use proptest::prelude::*;

    fn pts(values: &[&[f64]]) -> Vec<Vec<f64>> {
        values.iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn dtc_symmetric_pair() {
        let x = pts(&[&[0.0, 0.0], &[2.0, 0.0]]);
        assert_eq!(dtc_scores(&x).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn dtc_one_dimensional() {
        let x = pts(&[&[0.0], &[0.0], &[3.0]]);
        assert_eq!(dtc_scores(&x).unwrap(), vec![1.0, 1.0, 2.0]);
    }

    #[test]
    fn dtc_single_point_scores_zero() {
        let x = pts(&[&[5.0, -1.0]]);
        assert_eq!(dtc_scores(&x).unwrap(), vec![0.0]);
    }

    #[test]
    fn dtc_rejects_non_finite() {
        let x = pts(&[&[0.0], &[f64::NAN]]);
        assert!(dtc_scores(&x).is_err());
    }

    #[test]
    fn knn_line_examples() {
        let x = pts(&[&[0.0], &[1.0], &[3.0]]);
        assert_eq!(knn_scores(&x, 1).unwrap(), vec![1.0, 1.0, 2.0]);
        assert_eq!(knn_scores(&x, 2).unwrap(), vec![2.0, 1.5, 2.5]);
    }

    #[test]
    fn knn_requires_enough_points() {
        let x = pts(&[&[0.0], &[1.0]]);
        assert!(matches!(
            knn_scores(&x, 2),
            Err(Error::InsufficientPoints { .. })
        ));
    }

    /// Exhaustive O(n^2) oracle used by the unit suite and mirrored in the
    /// acceptance tests.
    pub(crate) fn knn_brute_force(x: &[Vec<f64>], k: usize) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|i| {
                let mut dists: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let d: f64 = x[i]
                            .iter()
                            .zip(&x[j])
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        (d.sqrt(), j)
                    })
                    .collect();
                dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
                dists.iter().take(k).map(|(d, _)| d).sum::<f64>() / k as f64
            })
            .collect()
    }

    #[test]
    fn knn_matches_brute_force_oracle() {
        let mut state = 0x1234_5678_u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        let n = 50;
        let d = 4;
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| next() * 5.0).collect())
            .collect();
        let got = knn_scores(&x, 5).unwrap();
        let want = knn_brute_force(&x, 5);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn score_normalizes_to_unit_range() {
        let x = pts(&[&[0.0], &[1.0], &[5.0]]);
        let cfg = NoveltyConfig {
            method: NoveltyMethod::Dtc,
            normalize: true,
            ..Default::default()
        };
        let s = score(&x, &cfg).unwrap();
        let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 1.0);
    }

    #[test]
    fn constant_scores_normalize_to_zero() {
        // A symmetric pair has equal DtC scores; the degenerate-range rule
        // maps them to zeros.
        let x = pts(&[&[0.0, 0.0], &[2.0, 0.0]]);
        let cfg = NoveltyConfig {
            method: NoveltyMethod::Dtc,
            normalize: true,
            ..Default::default()
        };
        assert_eq!(score(&x, &cfg).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn map_of_constant_spectra_is_constant() {
        let wf = synthgen::default_waveform(8).unwrap();
        let ds = crate::dataspace::GridDataset::new(
            4,
            4,
            vec![1.0; 16],
            vec![2.5; 16 * 8],
            wf,
            None,
        )
        .unwrap();
        let cfg = NoveltyConfig {
            method: NoveltyMethod::Dtc,
            normalize: false,
            ..Default::default()
        };
        let map = novelty_map(&ds, &cfg).unwrap();
        assert!(map.iter().all(|&v| v == map[0]));
    }

    #[test]
    fn iforest_map_flags_anomaly_disk() {
        let mut cfg = SynthConfig {
            height: 20,
            width: 20,
            spectrum_len: 32,
            read_voltage_index: 16,
            ..Default::default()
        };
        cfg.anomaly.count = 1;
        cfg.anomaly.radius = 2;
        let ds = synthgen::generate(&cfg, 11).unwrap();
        let ncfg = NoveltyConfig {
            method: NoveltyMethod::If,
            normalize: false,
            seed: 3,
            ..Default::default()
        };
        let map = novelty_map(&ds, &ncfg).unwrap();
        let labels = ds.labels().unwrap();
        let mut inside = (0.0, 0usize);
        let mut outside = (0.0, 0usize);
        for (px, &lab) in labels.iter().enumerate() {
            if lab == crate::dataspace::label::ANOMALY {
                inside.0 += map[px];
                inside.1 += 1;
            } else {
                outside.0 += map[px];
                outside.1 += 1;
            }
        }
        let mean_in = inside.0 / inside.1 as f64;
        let mean_out = outside.0 / outside.1 as f64;
        assert!(
            mean_in > mean_out,
            "anomaly mean {mean_in} vs rest {mean_out}"
        );
    }

    #[test]
    fn nn_map_matches_brute_force_on_grid() {
        let cfg = SynthConfig {
            height: 16,
            width: 16,
            spectrum_len: 16,
            read_voltage_index: 8,
            ..Default::default()
        };
        let ds = synthgen::generate(&cfg, 2).unwrap();
        let ncfg = NoveltyConfig {
            method: NoveltyMethod::Nn,
            normalize: false,
            ..Default::default()
        };
        let map = novelty_map(&ds, &ncfg).unwrap();
        let x: Vec<Vec<f64>> = (0..256)
            .map(|px| ds.spectrum_at((px / 16, px % 16)).unwrap())
            .collect();
        let oracle = knn_brute_force(&x, 5);
        for (g, w) in map.iter().zip(&oracle) {
            assert!((g - w).abs() < 1e-9);
        }
    }

    #[test]
    fn pairwise_cap_guards_large_maps() {
        let wf = synthgen::default_waveform(4).unwrap();
        let ds = crate::dataspace::GridDataset::new(
            5,
            5,
            vec![0.0; 25],
            vec![0.0; 100],
            wf,
            None,
        )
        .unwrap();
        let cfg = NoveltyConfig {
            method: NoveltyMethod::Lof,
            pairwise_cap: 10,
            ..Default::default()
        };
        assert!(matches!(
            novelty_map(&ds, &cfg),
            Err(Error::CapExceeded { n: 25, cap: 10 })
        ));
    }

    fn rotate_2d(x: &[Vec<f64>], theta: f64, shift: (f64, f64)) -> Vec<Vec<f64>> {
        x.iter()
            .map(|p| {
                vec![
                    p[0] * theta.cos() - p[1] * theta.sin() + shift.0,
                    p[0] * theta.sin() + p[1] * theta.cos() + shift.1,
                ]
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        // Permuting the rows permutes every scorer's output identically.
        #[test]
        fn permutation_equivariance(seed in 0u64..1000) {
            let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
            let mut next = || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64
            };
            let n = 12;
            let x: Vec<Vec<f64>> = (0..n).map(|_| vec![next() * 4.0, next() * 4.0]).collect();
            let perm: Vec<usize> = (0..n).rev().collect();
            let xp: Vec<Vec<f64>> = perm.iter().map(|&i| x[i].clone()).collect();
            for method in [
                NoveltyMethod::Dtc,
                NoveltyMethod::Nn,
                NoveltyMethod::If,
                NoveltyMethod::Ocsvm,
                NoveltyMethod::Lof,
            ] {
                let cfg = NoveltyConfig { method, k: 3, normalize: false, ..Default::default() };
                let s = score(&x, &cfg).unwrap();
                let sp = score(&xp, &cfg).unwrap();
                for (idx, &orig) in perm.iter().enumerate() {
                    // With n <= 256 the forest subsample is the full set, so
                    // tree construction depends only on value ranges and IF is
                    // exactly equivariant. OCSVM is equal up to solver tolerance.
                    let tol = if method == NoveltyMethod::Ocsvm { 1e-6 } else { 1e-9 };
                    prop_assert!(
                        (sp[idx] - s[orig]).abs() <= tol,
                        "method {:?} idx {} {} vs {}", method, idx, sp[idx], s[orig]
                    );
                }
            }
        }

        // DtC/NN scale linearly with the data; LOF is scale-invariant. All of
        // DtC/NN/LOF/OCSVM are invariant to rotation plus translation.
        #[test]
        fn scale_and_rigid_motion_behavior(seed in 0u64..200, theta in 0.0f64..std::f64::consts::TAU, c in 0.1f64..10.0) {
            let mut state = seed.wrapping_mul(0x2545F4914F6CDD1D).wrapping_add(99);
            let mut next = || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64
            };
            let n = 10;
            let x: Vec<Vec<f64>> = (0..n).map(|_| vec![next() * 3.0, next() * 3.0]).collect();
            let scaled: Vec<Vec<f64>> = x.iter().map(|p| vec![p[0] * c, p[1] * c]).collect();
            let moved = rotate_2d(&x, theta, (next(), next()));

            let dtc = dtc_scores(&x).unwrap();
            let dtc_scaled = dtc_scores(&scaled).unwrap();
            let dtc_moved = dtc_scores(&moved).unwrap();
            let nn = knn_scores(&x, 3).unwrap();
            let nn_scaled = knn_scores(&scaled, 3).unwrap();
            let nn_moved = knn_scores(&moved, 3).unwrap();
            let lof = lof_scores(&x, 3).unwrap();
            let lof_scaled = lof_scores(&scaled, 3).unwrap();
            let lof_moved = lof_scores(&moved, 3).unwrap();
            for i in 0..n {
                prop_assert!((dtc_scaled[i] - c * dtc[i]).abs() < 1e-9);
                prop_assert!((nn_scaled[i] - c * nn[i]).abs() < 1e-9);
                prop_assert!((lof_scaled[i] - lof[i]).abs() < 1e-9);
                prop_assert!((dtc_moved[i] - dtc[i]).abs() < 1e-8);
                prop_assert!((nn_moved[i] - nn[i]).abs() < 1e-8);
                prop_assert!((lof_moved[i] - lof[i]).abs() < 1e-8);
            }
        }
    }
}
