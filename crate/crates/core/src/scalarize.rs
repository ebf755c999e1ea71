//! Physical scalar descriptors of spectra. The primary descriptor is the
//! enclosed area of the hysteresis loop in the (voltage, response) plane.

use rayon::prelude::*;

use crate::dataspace::{GridDataset, VoltageWaveform};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Absolute shoelace area of the closed polygon `{(volts[i], spectrum[i])}`,
/// with the closing edge back to the first vertex implied.
pub fn loop_area<S: Scalar>(spectrum: &[S], waveform: &VoltageWaveform) -> Result<S> {
    if spectrum.len() != waveform.len() {
        return Err(Error::DimMismatch {
            what: "loop_area spectrum",
            expected: waveform.len(),
            actual: spectrum.len(),
        });
    }
    if !waveform.is_cyclic() {
        return Err(Error::invalid(
            "waveform",
            "loop area is defined for cyclic sweeps only",
        ));
    }
    let n = spectrum.len();
    let mut twice_area = S::zero();
    for i in 0..n {
        let j = (i + 1) % n;
        let xi = S::cast(waveform.volts_raw()[i] as f64);
        let xj = S::cast(waveform.volts_raw()[j] as f64);
        twice_area = twice_area + (xi * spectrum[j] - xj * spectrum[i]);
    }
    let area = (twice_area / S::cast(2.0)).abs();
    if !area.is_finite() {
        return Err(Error::NonFinite {
            what: "loop area".into(),
            index: 0,
        });
    }
    Ok(area)
}

/// Per-pixel loop area over the whole grid, row-major.
pub fn scalarize_grid(ds: &GridDataset) -> Result<Vec<f64>> {
    let (h, w) = (ds.height(), ds.width());
    (0..h * w)
        .into_par_iter()
        .map(|px| {
            let spectrum = ds.spectrum_at((px / w, px % w))?;
            loop_area(&spectrum, ds.waveform())
        })
        .collect()
}
