//! Seeded synthetic ferroelectric datasets with a known domain layout.
//!
//! Stands in for a pre-acquired spectroscopy grid: stripe or Voronoi domain
//! layouts for three base classes (out-of-plane up/down, low-signal in-plane),
//! wall pixels along class boundaries, and planted anomaly disks with a
//! distinct double-humped loop shape. Generation is a pure function of
//! `(config, seed)`; per-pixel noise comes from a counter-based substream
//! keyed by `(seed, row, col)` so parallel generation is order-invariant.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataspace::{label, GridDataset, VoltageWaveform};
use crate::error::{Error, Result};

/// Parametric hysteresis-loop shape: one tanh step per branch plus noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopParams {
    /// Saturation amplitude (arb. units).
    pub amplitude: f64,
    /// Coercive voltage: branch switching midpoint (V).
    pub coercive_v: f64,
    /// Transition width (V), must be positive.
    pub width: f64,
    /// Vertical offset (arb. units).
    pub offset: f64,
    /// Per-sample i.i.d. Gaussian noise sigma (arb. units), non-negative.
    pub noise_sigma: f64,
}

impl LoopParams {
    fn validate(&self, name: &'static str) -> Result<()> {
        if !(self.width > 0.0) {
            return Err(Error::invalid(
                name,
                format!("transition width must be > 0, got {}", self.width),
            ));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid(
                name,
                format!("noise sigma must be >= 0, got {}", self.noise_sigma),
            ));
        }
        Ok(())
    }
}

/// Spatial layout of the base classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Layout {
    /// Horizontal stripes; classes 0,1,2 cycle over stripe index.
    Stripes { count: usize },
    /// Voronoi cells around `sites` seeded centers; classes cycle over sites.
    Voronoi { sites: usize },
}

/// Planted anomaly regions: `count` disks of the given pixel radius whose
/// loops use `params` with a double-humped shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub count: usize,
    pub radius: usize,
    pub params: LoopParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub spectrum_len: usize,
    pub layout: Layout,
    /// Seed for the spatial layout (class map and anomaly placement). Kept
    /// separate from the generation seed so noise can vary under a fixed map.
    pub layout_seed: u64,
    /// Loop parameters for classes 0..=3 (up, down, in-plane, wall).
    pub class_params: [LoopParams; 4],
    pub anomaly: AnomalySpec,
    /// Waveform index whose response becomes the structure-image channel.
    pub read_voltage_index: usize,
    /// Default generation seed, used when the caller does not override it.
    pub master_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let noise = 0.02;
        Self {
            height: 64,
            width: 64,
            spectrum_len: 64,
            layout: Layout::Stripes { count: 6 },
            layout_seed: 7,
            class_params: [
                // out-of-plane up
                LoopParams {
                    amplitude: 1.0,
                    coercive_v: 1.0,
                    width: 0.2,
                    offset: 0.0,
                    noise_sigma: noise,
                },
                // out-of-plane down: weaker response than up
                LoopParams {
                    amplitude: 0.55,
                    coercive_v: 1.0,
                    width: 0.2,
                    offset: 0.0,
                    noise_sigma: noise,
                },
                // in-plane: weak response, hence low SNR at equal noise
                LoopParams {
                    amplitude: 0.1,
                    coercive_v: 1.0,
                    width: 0.2,
                    offset: 0.0,
                    noise_sigma: noise,
                },
                // wall: halved amplitude, earlier switching
                LoopParams {
                    amplitude: 0.5,
                    coercive_v: 0.5,
                    width: 0.2,
                    offset: 0.0,
                    noise_sigma: noise,
                },
            ],
            anomaly: AnomalySpec {
                count: 1,
                radius: 3,
                params: LoopParams {
                    amplitude: 2.2,
                    coercive_v: 0.4,
                    width: 0.15,
                    offset: 0.0,
                    noise_sigma: noise,
                },
            },
            read_voltage_index: 32,
            master_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height * self.width == 0 {
            return Err(Error::invalid("synth dims", "H*W must be >= 1"));
        }
        if self.spectrum_len < 4 {
            return Err(Error::invalid("spectrum_len", "must be >= 4"));
        }
        if self.read_voltage_index >= self.spectrum_len {
            return Err(Error::invalid(
                "read_voltage_index",
                format!(
                    "{} out of range for T={}",
                    self.read_voltage_index, self.spectrum_len
                ),
            ));
        }
        match self.layout {
            Layout::Stripes { count } if count == 0 || count > self.height => {
                return Err(Error::invalid(
                    "layout",
                    format!("stripe count {count} must be in 1..=H"),
                ));
            }
            Layout::Voronoi { sites } if sites == 0 => {
                return Err(Error::invalid("layout", "voronoi needs at least one site"));
            }
            _ => {}
        }
        for (i, p) in self.class_params.iter().enumerate() {
            p.validate(match i {
                0 => "class 0 params",
                1 => "class 1 params",
                2 => "class 2 params",
                _ => "class 3 params",
            })?;
        }
        self.anomaly.params.validate("anomaly params")?;
        if self.anomaly.count > 0 {
            let d = 2 * self.anomaly.radius + 1;
            if d > self.height || d > self.width {
                return Err(Error::Config(format!(
                    "anomaly disk of radius {} does not fit a {}x{} grid",
                    self.anomaly.radius, self.height, self.width
                )));
            }
        }
        Ok(())
    }
}

/// Single triangular sweep `-3 V -> +3 V -> -3 V` over `t` samples, cyclic.
pub fn default_waveform(t: usize) -> Result<VoltageWaveform> {
    if t < 4 {
        return Err(Error::invalid("waveform", "need T >= 4"));
    }
    let volts: Vec<f32> = (0..t)
        .map(|i| {
            let phase = i as f64 / t as f64;
            let v = if phase < 0.5 {
                -3.0 + 12.0 * phase
            } else {
                9.0 - 12.0 * phase
            };
            v as f32
        })
        .collect();
    VoltageWaveform::new(volts, true)
}

/// Branch of the sweep each sample belongs to. Ascending where the next
/// sample is higher; the final sample joins the branch in progress.
pub fn ascending_mask(volts: &[f64]) -> Vec<bool> {
    let t = volts.len();
    let mut asc = vec![true; t];
    for i in 0..t.saturating_sub(1) {
        asc[i] = volts[i + 1] > volts[i];
    }
    if t >= 2 {
        asc[t - 1] = asc[t - 2];
    }
    asc
}

/// Samples the single-tanh loop model over the waveform. With
/// `noise_sigma == 0` the output is deterministic.
pub fn loop_model(
    p: &LoopParams,
    waveform: &VoltageWaveform,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    p.validate("loop params")?;
    let volts = waveform.volts();
    let asc = ascending_mask(&volts);
    Ok(sample_loop(&volts, &asc, rng, p.noise_sigma, standard_branch(p)))
}

/// Double-humped anomaly loop: each branch is the sum of two tanh steps at
/// staggered coercive voltages.
pub fn anomaly_loop_model(
    p: &LoopParams,
    waveform: &VoltageWaveform,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    p.validate("anomaly loop params")?;
    let volts = waveform.volts();
    let asc = ascending_mask(&volts);
    Ok(sample_loop(&volts, &asc, rng, p.noise_sigma, anomalous_branch(p)))
}

fn standard_branch(p: &LoopParams) -> impl Fn(f64, bool) -> f64 + '_ {
    move |v, up| {
        let vc = if up { p.coercive_v } else { -p.coercive_v };
        p.amplitude * ((v - vc) / p.width).tanh() + p.offset
    }
}

fn anomalous_branch(p: &LoopParams) -> impl Fn(f64, bool) -> f64 + '_ {
    move |v, up| {
        let sign = if up { 1.0 } else { -1.0 };
        let vc1 = sign * 0.4 * p.coercive_v;
        let vc2 = sign * 1.6 * p.coercive_v;
        0.5 * p.amplitude * (((v - vc1) / p.width).tanh() + ((v - vc2) / p.width).tanh())
            + p.offset
    }
}

fn sample_loop(
    volts: &[f64],
    asc: &[bool],
    rng: &mut impl Rng,
    sigma: f64,
    branch_value: impl Fn(f64, bool) -> f64,
) -> Vec<f64> {
    volts
        .iter()
        .zip(asc)
        .map(|(&v, &up)| {
            let eps: f64 = if sigma > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                z * sigma
            } else {
                0.0
            };
            branch_value(v, up) + eps
        })
        .collect()
}

fn pixel_rng(seed: u64, row: usize, col: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(row as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(col as u64).to_le_bytes());
    key[24..32].copy_from_slice(b"pixnoise");
    ChaCha8Rng::from_seed(key)
}

/// Base class map (no walls, no anomalies) from the layout alone.
fn base_classes(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let (h, w) = (cfg.height, cfg.width);
    match cfg.layout {
        Layout::Stripes { count } => {
            let mut out = vec![0u8; h * w];
            for r in 0..h {
                let stripe = r * count / h;
                let class = (stripe % 3) as u8;
                for c in 0..w {
                    out[r * w + c] = class;
                }
            }
            out
        }
        Layout::Voronoi { sites } => {
            let centers: Vec<(usize, usize)> = (0..sites)
                .map(|_| (rng.gen_range(0..h), rng.gen_range(0..w)))
                .collect();
            let mut out = vec![0u8; h * w];
            for r in 0..h {
                for c in 0..w {
                    let mut best = usize::MAX;
                    let mut best_site = 0usize;
                    for (s, &(cr, cc)) in centers.iter().enumerate() {
                        let dr = r.abs_diff(cr);
                        let dc = c.abs_diff(cc);
                        let d2 = dr * dr + dc * dc;
                        if d2 < best {
                            best = d2;
                            best_site = s;
                        }
                    }
                    out[r * w + c] = (best_site % 3) as u8;
                }
            }
            out
        }
    }
}

/// Full label plane: layout classes, wall pixels where the closed
/// 4-neighborhood holds two or more base classes, then anomaly disks on top.
fn label_plane(cfg: &SynthConfig) -> Vec<u8> {
    let (h, w) = (cfg.height, cfg.width);
    let mut layout_rng = ChaCha8Rng::seed_from_u64(cfg.layout_seed);
    let base = base_classes(cfg, &mut layout_rng);
    let mut labels = base.clone();
    for r in 0..h {
        for c in 0..w {
            let mut seen = [false; 3];
            seen[base[r * w + c] as usize] = true;
            if r > 0 {
                seen[base[(r - 1) * w + c] as usize] = true;
            }
            if r + 1 < h {
                seen[base[(r + 1) * w + c] as usize] = true;
            }
            if c > 0 {
                seen[base[r * w + c - 1] as usize] = true;
            }
            if c + 1 < w {
                seen[base[r * w + c + 1] as usize] = true;
            }
            if seen.iter().filter(|&&s| s).count() >= 2 {
                labels[r * w + c] = label::WALL;
            }
        }
    }
    let radius = cfg.anomaly.radius;
    for _ in 0..cfg.anomaly.count {
        let cr = layout_rng.gen_range(radius..h - radius);
        let cc = layout_rng.gen_range(radius..w - radius);
        let r2 = (radius * radius) as i64;
        for dr in -(radius as i64)..=radius as i64 {
            for dc in -(radius as i64)..=radius as i64 {
                if dr * dr + dc * dc <= r2 {
                    let r = (cr as i64 + dr) as usize;
                    let c = (cc as i64 + dc) as usize;
                    labels[r * w + c] = label::ANOMALY;
                }
            }
        }
    }
    labels
}

/// Generates a labeled dataset. Pure in `(cfg, seed)`: identical inputs give
/// a bitwise-identical dataset.
pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<GridDataset> {
    cfg.validate()?;
    let (h, w, t) = (cfg.height, cfg.width, cfg.spectrum_len);
    let waveform = default_waveform(t)?;
    let volts = waveform.volts();
    let asc = ascending_mask(&volts);
    let labels = label_plane(cfg);

    let rows: Vec<Vec<f32>> = (0..h)
        .into_par_iter()
        .map(|r| {
            let mut row = Vec::with_capacity(w * t);
            for c in 0..w {
                let lab = labels[r * w + c];
                let mut rng = pixel_rng(seed, r, c);
                let spectrum = if lab == label::ANOMALY {
                    let p = &cfg.anomaly.params;
                    sample_loop(&volts, &asc, &mut rng, p.noise_sigma, anomalous_branch(p))
                } else {
                    let p = &cfg.class_params[lab as usize];
                    sample_loop(&volts, &asc, &mut rng, p.noise_sigma, standard_branch(p))
                };
                row.extend(spectrum.iter().map(|&x| x as f32));
            }
            row
        })
        .collect();

    let mut spectra = Vec::with_capacity(h * w * t);
    for row in rows {
        spectra.extend_from_slice(&row);
    }
    let image: Vec<f32> = (0..h * w)
        .map(|px| spectra[px * t + cfg.read_voltage_index])
        .collect();
    GridDataset::new(h, w, image, spectra, waveform, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataspace::label_histogram;

    fn noiseless(cfg: &mut SynthConfig) {
        for p in cfg.class_params.iter_mut() {
            p.noise_sigma = 0.0;
        }
        cfg.anomaly.params.noise_sigma = 0.0;
    }

    #[test]
    fn loop_model_hits_offset_at_coercive_voltage() {
        // Waveform value exactly at +Vc on the ascending branch.
        let volts = vec![-2.0f32, 1.0, 2.0, 1.5, -2.0];
        let wf = VoltageWaveform::new(volts, true).unwrap();
        let p = LoopParams {
            amplitude: 1.0,
            coercive_v: 1.0,
            width: 0.2,
            offset: 0.25,
            noise_sigma: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loop_vals = loop_model(&p, &wf, &mut rng).unwrap();
        // index 1 has V = 1.0 = Vc and the next sample is higher, so ascending.
        assert!((loop_vals[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_amplitude_gives_constant_loop() {
        let wf = default_waveform(32).unwrap();
        let p = LoopParams {
            amplitude: 0.0,
            coercive_v: 1.0,
            width: 0.2,
            offset: 0.7,
            noise_sigma: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loop_vals = loop_model(&p, &wf, &mut rng).unwrap();
        assert!(loop_vals.iter().all(|&v| (v - 0.7).abs() < 1e-15));
        let area = crate::scalarize::loop_area(&loop_vals, &wf).unwrap();
        assert!(area.abs() < 1e-12);
    }

    #[test]
    fn invalid_width_is_rejected() {
        let wf = default_waveform(16).unwrap();
        let p = LoopParams {
            amplitude: 1.0,
            coercive_v: 1.0,
            width: 0.0,
            offset: 0.0,
            noise_sigma: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(loop_model(&p, &wf, &mut rng).is_err());
    }

    #[test]
    fn stripe_histogram_matches_direct_construction() {
        let mut cfg = SynthConfig {
            height: 16,
            width: 16,
            layout: Layout::Stripes { count: 2 },
            ..SynthConfig::default()
        };
        cfg.anomaly.count = 0;
        noiseless(&mut cfg);
        let ds = generate(&cfg, 1).unwrap();
        let hist = label_histogram(&ds);
        // Direct construction: rows 0..8 class 0, rows 8..16 class 1; the
        // boundary rows 7 and 8 become wall under the 4-neighborhood rule.
        let mut expected = [0usize; 5];
        for r in 0..16usize {
            let class = if r == 7 || r == 8 {
                3
            } else if r < 8 {
                0
            } else {
                1
            };
            expected[class] += 16;
        }
        assert_eq!(hist, expected);
        assert_eq!(hist[0], 112);
        assert_eq!(hist[1], 112);
        assert_eq!(hist[3], 32);
    }

    #[test]
    fn anomaly_disk_pixel_count_matches_rasterization() {
        let mut cfg = SynthConfig {
            height: 32,
            width: 32,
            ..SynthConfig::default()
        };
        cfg.anomaly.count = 1;
        cfg.anomaly.radius = 2;
        noiseless(&mut cfg);
        let ds = generate(&cfg, 1).unwrap();
        let hist = label_histogram(&ds);
        // Independent rasterization oracle: offsets with dr^2+dc^2 <= r^2.
        let mut oracle = 0usize;
        for dr in -2i64..=2 {
            for dc in -2i64..=2 {
                if dr * dr + dc * dc <= 4 {
                    oracle += 1;
                }
            }
        }
        assert_eq!(hist[4], oracle);
        assert!(hist[4] >= 9 && hist[4] <= 13);
    }

    #[test]
    fn seeds_change_spectra_but_not_labels() {
        let cfg = SynthConfig {
            height: 12,
            width: 12,
            spectrum_len: 16,
            read_voltage_index: 8,
            ..SynthConfig::default()
        };
        let a = generate(&cfg, 1).unwrap();
        let b = generate(&cfg, 2).unwrap();
        assert_ne!(a.spectra_raw(), b.spectra_raw());
        assert_eq!(a.labels(), b.labels());
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            height: 10,
            width: 10,
            spectrum_len: 16,
            read_voltage_index: 8,
            ..SynthConfig::default()
        };
        let a = generate(&cfg, 42).unwrap();
        let b = generate(&cfg, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn in_plane_class_has_lower_signal_at_equal_noise() {
        let cfg = SynthConfig::default();
        assert_eq!(
            cfg.class_params[0].noise_sigma,
            cfg.class_params[2].noise_sigma
        );
        let ds = generate(&cfg, 3).unwrap();
        let labels = ds.labels().unwrap();
        let mut sums = [0.0f64; 3];
        let mut counts = [0usize; 3];
        for (px, &lab) in labels.iter().enumerate() {
            if lab <= 2 {
                let r = px / ds.width();
                let c = px % ds.width();
                sums[lab as usize] += ds.image_value(r, c).abs();
                counts[lab as usize] += 1;
            }
        }
        let mean = |i: usize| sums[i] / counts[i] as f64;
        assert!(mean(2) < mean(0));
        assert!(mean(2) < mean(1));
    }

    #[test]
    fn anomaly_mean_loop_is_distinct_from_every_class() {
        let mut cfg = SynthConfig::default();
        noiseless(&mut cfg);
        let ds = generate(&cfg, 0).unwrap();
        let labels = ds.labels().unwrap();
        let t = ds.spectrum_len();
        let mut means = vec![vec![0.0f64; t]; 5];
        let mut counts = [0usize; 5];
        for (px, &lab) in labels.iter().enumerate() {
            let r = px / ds.width();
            let c = px % ds.width();
            let s = ds.spectrum_at((r, c)).unwrap();
            for (acc, v) in means[lab as usize].iter_mut().zip(&s) {
                *acc += v;
            }
            counts[lab as usize] += 1;
        }
        for (mean, &count) in means.iter_mut().zip(&counts) {
            if count > 0 {
                for v in mean.iter_mut() {
                    *v /= count as f64;
                }
            }
        }
        assert!(counts[4] > 0, "default config plants an anomaly");
        let sigma = SynthConfig::default().class_params[0].noise_sigma;
        for class in 0..4 {
            if counts[class] == 0 {
                continue;
            }
            let dist: f64 = means[4]
                .iter()
                .zip(&means[class])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(dist > 0.0);
            assert!(dist > 10.0 * sigma, "class {class}: dist {dist}");
        }
    }

    #[test]
    fn oversized_anomaly_is_config_error() {
        let mut cfg = SynthConfig {
            height: 4,
            width: 4,
            spectrum_len: 8,
            read_voltage_index: 4,
            layout: Layout::Stripes { count: 2 },
            ..SynthConfig::default()
        };
        cfg.anomaly.radius = 3;
        assert!(matches!(generate(&cfg, 0), Err(Error::Config(_))));
    }
}
