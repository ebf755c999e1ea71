//! In-memory model of an image-spectrum grid dataset and its on-disk format.
//!
//! A dataset is a `H x W` structure image, a `H x W x T` spectrum cube sharing
//! one voltage waveform, and optional per-pixel class labels. Array storage is
//! 32-bit (matching the disk format bit for bit); every accessor that feeds the
//! numeric pipeline widens to `f64`.
//!
//! On disk a dataset is a directory: `manifest.json` plus raw little-endian
//! binary arrays with no header. `image.f32` is row-major `(row, col)`,
//! `spectra.f32` is `(row, col, t)`, `voltage.f32` is `t`, and the optional
//! `labels.u8` is one byte per pixel row-major.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

/// Class labels used by the synthetic generator.
pub mod label {
    pub const OUT_OF_PLANE_UP: u8 = 0;
    pub const OUT_OF_PLANE_DOWN: u8 = 1;
    pub const IN_PLANE: u8 = 2;
    pub const WALL: u8 = 3;
    pub const ANOMALY: u8 = 4;
    pub const COUNT: usize = 5;
}

/// Bias waveform shared by every spectrum in a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageWaveform {
    volts: Vec<f32>,
    cyclic: bool,
}

impl VoltageWaveform {
    /// `volts` must have at least 4 finite samples. When `cyclic`, the sweep
    /// forms a closed cycle; the closing edge back to the first sample is
    /// implied (the series need not repeat it).
    pub fn new(volts: Vec<f32>, cyclic: bool) -> Result<Self> {
        if volts.len() < 4 {
            return Err(Error::invalid(
                "waveform",
                format!("need T >= 4 samples, got {}", volts.len()),
            ));
        }
        if let Some(i) = volts.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "voltage waveform".into(),
                index: i,
            });
        }
        Ok(Self { volts, cyclic })
    }

    pub fn len(&self) -> usize {
        self.volts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volts.is_empty()
    }

    pub fn is_cyclic(&self) -> bool {
        self.cyclic
    }

    pub fn volts_raw(&self) -> &[f32] {
        &self.volts
    }

    /// Waveform samples widened to the working precision.
    pub fn volts(&self) -> Vec<f64> {
        self.volts.iter().map(|&v| v as f64).collect()
    }
}

/// Immutable image-spectrum grid. Shareable across threads after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDataset {
    height: usize,
    width: usize,
    image: Vec<f32>,
    spectra: Vec<f32>,
    waveform: VoltageWaveform,
    labels: Option<Vec<u8>>,
}

impl GridDataset {
    pub fn new(
        height: usize,
        width: usize,
        image: Vec<f32>,
        spectra: Vec<f32>,
        waveform: VoltageWaveform,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let pixels = height * width;
        if pixels == 0 {
            return Err(Error::invalid("grid", "H*W must be >= 1"));
        }
        if image.len() != pixels {
            return Err(Error::DimMismatch {
                what: "image",
                expected: pixels,
                actual: image.len(),
            });
        }
        let t = waveform.len();
        if spectra.len() != pixels * t {
            return Err(Error::DimMismatch {
                what: "spectra",
                expected: pixels * t,
                actual: spectra.len(),
            });
        }
        if let Some(ref l) = labels {
            if l.len() != pixels {
                return Err(Error::DimMismatch {
                    what: "labels",
                    expected: pixels,
                    actual: l.len(),
                });
            }
        }
        if let Some(i) = image.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "image".into(),
                index: i,
            });
        }
        if let Some(i) = spectra.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "spectra".into(),
                index: i,
            });
        }
        Ok(Self {
            height,
            width,
            image,
            spectra,
            waveform,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn spectrum_len(&self) -> usize {
        self.waveform.len()
    }

    pub fn waveform(&self) -> &VoltageWaveform {
        &self.waveform
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn label_at(&self, loc: (usize, usize)) -> Option<u8> {
        self.labels
            .as_ref()
            .map(|l| l[loc.0 * self.width + loc.1])
    }

    pub fn image_raw(&self) -> &[f32] {
        &self.image
    }

    pub fn spectra_raw(&self) -> &[f32] {
        &self.spectra
    }

    pub fn image_value(&self, row: usize, col: usize) -> f64 {
        self.image[row * self.width + col] as f64
    }

    /// Global min/max of the image channel, used to scale patches for the
    /// surrogate's feature network.
    pub fn image_range(&self) -> (f64, f64) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in &self.image {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo as f64, hi as f64)
    }

    fn check_in_grid(&self, loc: (usize, usize)) -> Result<()> {
        if loc.0 >= self.height || loc.1 >= self.width {
            return Err(Error::OutOfBounds {
                row: loc.0,
                col: loc.1,
                height: self.height,
                width: self.width,
            });
        }
        Ok(())
    }

    /// Simulated measurement: returns a copy of the stored spectrum at `loc`.
    /// Repeated calls return identical vectors.
    pub fn spectrum_at(&self, loc: (usize, usize)) -> Result<Vec<f64>> {
        self.check_in_grid(loc)?;
        let t = self.spectrum_len();
        let start = (loc.0 * self.width + loc.1) * t;
        Ok(self.spectra[start..start + t]
            .iter()
            .map(|&v| v as f64)
            .collect())
    }

    /// Extracts the odd-sided image window centered on `loc`.
    pub fn extract_patch(&self, loc: (usize, usize), side: usize) -> Result<Patch> {
        if side < 3 || side % 2 == 0 {
            return Err(Error::invalid(
                "patch side",
                format!("must be odd and >= 3, got {side}"),
            ));
        }
        let margin = (side - 1) / 2;
        let inside = loc.0 >= margin
            && loc.1 >= margin
            && loc.0 + margin < self.height
            && loc.1 + margin < self.width;
        if !inside {
            return Err(Error::OutOfMargin {
                row: loc.0,
                col: loc.1,
                side,
                margin,
            });
        }
        let mut values = Vec::with_capacity(side * side);
        for i in 0..side {
            let r = loc.0 - margin + i;
            for j in 0..side {
                let c = loc.1 - margin + j;
                values.push(self.image[r * self.width + c] as f64);
            }
        }
        Ok(Patch {
            center: loc,
            side,
            values,
        })
    }

    /// All pixels whose patch of side `s` fits inside the image, row-major.
    /// There are exactly `(H-s+1)*(W-s+1)` of them.
    pub fn candidate_locations(&self, side: usize) -> Result<Vec<(usize, usize)>> {
        if side < 3 || side % 2 == 0 {
            return Err(Error::invalid(
                "patch side",
                format!("must be odd and >= 3, got {side}"),
            ));
        }
        if self.height < side || self.width < side {
            return Err(Error::NoCandidates {
                height: self.height,
                width: self.width,
                side,
            });
        }
        let margin = (side - 1) / 2;
        let mut locs = Vec::with_capacity((self.height - side + 1) * (self.width - side + 1));
        for r in margin..self.height - margin {
            for c in margin..self.width - margin {
                locs.push((r, c));
            }
        }
        Ok(locs)
    }

    /// SHA-256 over dims, flags, and raw array bytes; identifies dataset content.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.height as u64).to_le_bytes());
        h.update((self.width as u64).to_le_bytes());
        h.update((self.spectrum_len() as u64).to_le_bytes());
        h.update([self.waveform.cyclic as u8]);
        h.update(f32_bytes(&self.image));
        h.update(f32_bytes(&self.spectra));
        h.update(f32_bytes(&self.waveform.volts));
        match &self.labels {
            Some(l) => {
                h.update([1u8]);
                h.update(l);
            }
            None => h.update([0u8]),
        }
        let digest = h.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

/// Odd-sided image window centered on a pixel; the surrogate's input.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub center: (usize, usize),
    pub side: usize,
    /// Row-major `side x side` image values.
    pub values: Vec<f64>,
}

/// Ordered record of measured locations and their spectra. Single-writer:
/// only the experiment loop appends.
#[derive(Debug, Clone, Default)]
pub struct MeasuredSet {
    entries: Vec<((usize, usize), Vec<f64>)>,
    index: HashMap<(usize, usize), usize>,
}

impl MeasuredSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, loc: (usize, usize), spectrum: Vec<f64>) -> Result<()> {
        if self.index.contains_key(&loc) {
            return Err(Error::DuplicateLocation {
                row: loc.0,
                col: loc.1,
            });
        }
        self.index.insert(loc, self.entries.len());
        self.entries.push((loc, spectrum));
        Ok(())
    }

    pub fn contains(&self, loc: (usize, usize)) -> bool {
        self.index.contains_key(&loc)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Insertion-ordered iteration.
    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &Vec<f64>)> {
        self.entries.iter().map(|(l, s)| (l, s))
    }

    pub fn locations(&self) -> Vec<(usize, usize)> {
        self.entries.iter().map(|(l, _)| *l).collect()
    }

    pub fn spectra(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|(_, s)| s.clone()).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    height: usize,
    width: usize,
    spectrum_len: usize,
    cyclic: bool,
    arrays: ManifestArrays,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestArrays {
    image: String,
    spectra: String,
    voltage: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<String>,
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn read_f32_file(path: &Path, expected_len: usize) -> Result<Vec<f32>> {
    let bytes = read_sized(path, expected_len as u64 * 4)?;
    let mut out = Vec::with_capacity(expected_len);
    for chunk in bytes.chunks_exact(4) {
        out.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
    Ok(out)
}

fn read_sized(path: &Path, expected_bytes: u64) -> Result<Vec<u8>> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let actual = f.metadata().map_err(|e| Error::io(path, e))?.len();
    if actual != expected_bytes {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected: expected_bytes,
            actual,
        });
    }
    let mut bytes = Vec::with_capacity(expected_bytes as usize);
    f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

/// Writes `ds` as a dataset directory. Loading it back is bitwise identical.
pub fn save_dataset(ds: &GridDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        height: ds.height,
        width: ds.width,
        spectrum_len: ds.spectrum_len(),
        cyclic: ds.waveform.cyclic,
        arrays: ManifestArrays {
            image: "image.f32".into(),
            spectra: "spectra.f32".into(),
            voltage: "voltage.f32".into(),
            labels: ds.labels.as_ref().map(|_| "labels.u8".into()),
        },
    };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .expect("manifest serialization is infallible");
    write_file(&manifest_path, json.as_bytes())?;
    write_file(&dir.join(&manifest.arrays.image), &f32_bytes(&ds.image))?;
    write_file(&dir.join(&manifest.arrays.spectra), &f32_bytes(&ds.spectra))?;
    write_file(
        &dir.join(&manifest.arrays.voltage),
        &f32_bytes(&ds.waveform.volts),
    )?;
    if let (Some(labels), Some(name)) = (&ds.labels, &manifest.arrays.labels) {
        write_file(&dir.join(name), labels)?;
    }
    Ok(())
}

/// Loads a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<GridDataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: manifest_path.clone(),
        reason: e.to_string(),
    })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Manifest {
            path: manifest_path,
            reason: format!(
                "unsupported version {} (supported: {MANIFEST_VERSION})",
                manifest.version
            ),
        });
    }
    let pixels = manifest.height * manifest.width;
    if pixels == 0 || manifest.spectrum_len < 4 {
        return Err(Error::Manifest {
            path: manifest_path,
            reason: format!(
                "degenerate dims {}x{}x{}",
                manifest.height, manifest.width, manifest.spectrum_len
            ),
        });
    }
    let image = read_f32_file(&dir.join(&manifest.arrays.image), pixels)?;
    let spectra = read_f32_file(
        &dir.join(&manifest.arrays.spectra),
        pixels * manifest.spectrum_len,
    )?;
    let volts = read_f32_file(&dir.join(&manifest.arrays.voltage), manifest.spectrum_len)?;
    let labels = match &manifest.arrays.labels {
        Some(name) => {
            let path = dir.join(name);
            Some(read_sized(&path, pixels as u64)?)
        }
        None => None,
    };
    let waveform = VoltageWaveform::new(volts, manifest.cyclic)?;
    GridDataset::new(
        manifest.height,
        manifest.width,
        image,
        spectra,
        waveform,
        labels,
    )
}

/// Per-class pixel counts over the label plane (all zeros when unlabeled).
pub fn label_histogram(ds: &GridDataset) -> [usize; label::COUNT] {
    let mut hist = [0usize; label::COUNT];
    if let Some(labels) = ds.labels() {
        for &l in labels {
            if (l as usize) < label::COUNT {
                hist[l as usize] += 1;
            }
        }
    }
    hist
}
