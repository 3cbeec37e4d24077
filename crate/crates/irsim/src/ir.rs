//! IR physical layer: emitter radiation pattern, distance -> ADC transfer
//! curve with banded measurement noise, and ambient-light distortion.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Emitter/receiver lobe: raised-cosine main lobe plus a constant side floor
/// that models the low-intensity secondary streams around the beam.
///
/// A `lobe_exponent` of 0 selects an ideal flat sector: gain 1 inside the
/// half angle (inclusive), `side_floor` out to `side_extent`, 0 beyond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiationPattern {
    pub half_angle: f64,
    pub lobe_exponent: f64,
    pub side_floor: f64,
    pub side_extent: f64,
}

impl Default for RadiationPattern {
    /// LD274-like emitter: 20 degree main lobe.
    fn default() -> Self {
        RadiationPattern {
            half_angle: 20.0,
            lobe_exponent: 2.0,
            side_floor: 0.05,
            side_extent: 40.0,
        }
    }
}

impl RadiationPattern {
    /// Narrow-beam preset (TSTS7100-like, 10 degree opening).
    pub fn narrow() -> Self {
        RadiationPattern {
            half_angle: 10.0,
            lobe_exponent: 2.0,
            side_floor: 0.05,
            side_extent: 20.0,
        }
    }

    /// Ideal flat sector with the given half width and no side lobes.
    pub fn flat_sector(half_angle: f64) -> Self {
        RadiationPattern {
            half_angle,
            lobe_exponent: 0.0,
            side_floor: 0.0,
            side_extent: half_angle,
        }
    }

    pub fn is_flat(&self) -> bool {
        self.lobe_exponent == 0.0
    }
}

/// Normalized gain of the pattern at an angular offset from the axis.
pub fn pattern_gain(pattern: &RadiationPattern, offset_deg: f64) -> f64 {
    let a = offset_deg.abs();
    if a > pattern.side_extent {
        return 0.0;
    }
    if pattern.is_flat() {
        return if a <= pattern.half_angle {
            1.0
        } else {
            pattern.side_floor
        };
    }
    let main = if a <= pattern.half_angle {
        (90.0 * a / pattern.half_angle)
            .to_radians()
            .cos()
            .max(0.0)
            .powf(pattern.lobe_exponent)
    } else {
        0.0
    };
    main.max(pattern.side_floor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBand {
    pub from_mm: f64,
    pub to_mm: f64,
    pub sigma_mm: f64,
}

/// Distance -> ADC transfer: adc = round(scale * reflectivity / (d + offset)^k),
/// clamped to the 8-bit range, saturated at short range and cut off at the
/// maximum perceivable distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdcModel {
    pub scale: f64,
    pub offset_distance: f64,
    pub decay_exponent: f64,
    pub adc_bits: u32,
    pub saturation_distance: f64,
    pub max_range: f64,
    pub noise_bands: Vec<NoiseBand>,
}

impl Default for AdcModel {
    fn default() -> Self {
        // Anchors: full scale at <= 20 mm, reads nothing past 300 mm.
        AdcModel {
            scale: 255.0 * 400.0,
            offset_distance: 0.0,
            decay_exponent: 2.0,
            adc_bits: 8,
            saturation_distance: 20.0,
            max_range: 300.0,
            noise_bands: vec![
                NoiseBand { from_mm: 20.0, to_mm: 70.0, sigma_mm: 1.0 },
                NoiseBand { from_mm: 70.0, to_mm: 120.0, sigma_mm: 4.0 },
                NoiseBand { from_mm: 120.0, to_mm: 200.0, sigma_mm: 10.0 },
                NoiseBand { from_mm: 200.0, to_mm: 300.0, sigma_mm: 50.0 },
            ],
        }
    }
}

impl AdcModel {
    pub fn adc_max(&self) -> u32 {
        (1 << self.adc_bits) - 1
    }

    /// Noise-free transfer curve before quantization.
    fn curve(&self, distance: f64, reflectivity: f64) -> f64 {
        self.scale * reflectivity / (distance + self.offset_distance).powf(self.decay_exponent)
    }
}

/// Measurement accuracy (1-sigma, in mm) at a given distance, piecewise per
/// the sensor's accuracy bands.
pub fn noise_sigma(model: &AdcModel, distance: f64) -> f64 {
    for band in &model.noise_bands {
        if distance >= band.from_mm && distance < band.to_mm {
            return band.sigma_mm;
        }
    }
    if let (Some(first), Some(last)) = (model.noise_bands.first(), model.noise_bands.last()) {
        if distance < first.from_mm {
            return first.sigma_mm;
        }
        if distance >= last.to_mm {
            return last.sigma_mm;
        }
    }
    0.0
}

/// Simulated ADC reading for a reflective target at `distance`.
///
/// With `rng = None` the reading is the deterministic transfer curve. With a
/// random source, Gaussian noise with the banded sigma is applied in the
/// distance domain and pushed through the curve.
pub fn adc_from_distance(
    model: &AdcModel,
    distance: f64,
    reflectivity: f64,
    ambient: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<u32> {
    if distance <= 0.0 || !distance.is_finite() {
        return Err(SimError::param("distance", "must be > 0"));
    }
    let d = match rng {
        Some(rng) => {
            let n: f64 = StandardNormal.sample(rng);
            (distance + n * noise_sigma(model, distance)).max(0.1)
        }
        None => distance,
    };
    let raw = if d <= model.saturation_distance {
        model.adc_max()
    } else if d > model.max_range {
        0
    } else {
        (model.curve(d, reflectivity).round() as i64).clamp(0, model.adc_max() as i64) as u32
    };
    if ambient > 0.0 {
        Ok(apply_ambient(&AmbientModel::default(), raw, ambient, false))
    } else {
        Ok(raw)
    }
}

/// Inverse of the noise-free transfer curve. `None` marks an out-of-range
/// reading (ADC floor).
pub fn distance_from_adc(model: &AdcModel, adc: u32, assumed_reflectivity: f64) -> Option<f64> {
    if adc == 0 {
        return None;
    }
    if adc >= model.adc_max() {
        return Some(model.saturation_distance);
    }
    let d = (model.scale * assumed_reflectivity / adc as f64).powf(1.0 / model.decay_exponent)
        - model.offset_distance;
    Some(d.clamp(model.saturation_distance, model.max_range))
}

/// Ambient-light distortion: direct light blinds the phototransistor,
/// indirect light reduces sensitivity and compresses contrast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmbientModel {
    pub saturation_threshold: f64,
    pub sensitivity_loss: f64,
    pub contrast_loss: f64,
}

impl Default for AmbientModel {
    fn default() -> Self {
        AmbientModel {
            saturation_threshold: 0.8,
            sensitivity_loss: 0.3,
            contrast_loss: 0.2,
        }
    }
}

pub fn apply_ambient(model: &AmbientModel, raw_adc: u32, ambient: f64, direct_light: bool) -> u32 {
    if ambient == 0.0 {
        return raw_adc;
    }
    if direct_light && ambient >= model.saturation_threshold {
        return 255;
    }
    let scaled = raw_adc as f64 * (1.0 - model.sensitivity_loss * ambient);
    let compressed = 128.0 + (scaled - 128.0) * (1.0 - model.contrast_loss * ambient);
    (compressed.round() as i64).clamp(0, 255) as u32
}
