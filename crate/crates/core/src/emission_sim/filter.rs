use super::stream::PhotonStream;
use super::SimError;
use serde::{Deserialize, Serialize};

/// Ideal top-hat optical filter acting on line centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SpectralWindow {
    AllPass,
    /// Passes `center ± half_width` nm.
    BandPass {
        center: f64,
        half_width: f64,
    },
    /// Passes wavelengths above `cutoff` nm.
    LongPass {
        cutoff: f64,
    },
}

impl SpectralWindow {
    pub fn validate(&self) -> Result<(), SimError> {
        match *self {
            SpectralWindow::AllPass => Ok(()),
            SpectralWindow::BandPass { center, half_width } => {
                if !(half_width > 0.0 && half_width.is_finite() && center.is_finite()) {
                    Err(SimError::Invalid(format!(
                        "empty band-pass window {center} ± {half_width} nm"
                    )))
                } else {
                    Ok(())
                }
            }
            SpectralWindow::LongPass { cutoff } => {
                if cutoff.is_finite() {
                    Ok(())
                } else {
                    Err(SimError::Invalid("long-pass cutoff must be finite".into()))
                }
            }
        }
    }

    pub fn passes(&self, wavelength: f64) -> bool {
        match *self {
            SpectralWindow::AllPass => true,
            SpectralWindow::BandPass { center, half_width } => {
                (wavelength - center).abs() <= half_width
            }
            SpectralWindow::LongPass { cutoff } => wavelength > cutoff,
        }
    }
}

/// Keeps photons whose emitting line center lies in the window. Tags
/// without a line (background, dark counts) are kept.
pub fn apply_spectral_filter(
    stream: &PhotonStream,
    window: &SpectralWindow,
) -> Result<PhotonStream, SimError> {
    window.validate()?;
    let pass: Vec<bool> = stream
        .lines()
        .iter()
        .map(|l| window.passes(l.center))
        .collect();
    let mut times = Vec::with_capacity(stream.len());
    let mut labels = Vec::with_capacity(stream.len());
    for (t, label) in stream.iter() {
        if label.line.is_none_or(|i| pass[i as usize]) {
            times.push(t);
            labels.push(label);
        }
    }
    Ok(PhotonStream::from_sorted(times, labels, stream))
}
