//! Multi-scale sinusoidal encoding of 2D positions.
//!
//! A position is projected on three unit directions 120° apart and each
//! projection is passed through `cos`/`sin` at `S` geometrically spaced
//! wavelengths. Slots are ordered by scale, then direction, then `[cos, sin]`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const HALF_SQRT3: f64 = 0.866_025_403_784_438_6;

/// The three projection directions.
pub const DIRECTIONS: [[f64; 2]; 3] = [[1.0, 0.0], [-0.5, HALF_SQRT3], [-0.5, -HALF_SQRT3]];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrfcConfig {
    pub scales: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Default for LrfcConfig {
    fn default() -> Self {
        Self {
            scales: 5,
            lambda_min: 1.0,
            lambda_max: 100.0,
        }
    }
}

impl LrfcConfig {
    pub fn new(scales: usize, lambda_min: f64, lambda_max: f64) -> Result<Self> {
        let cfg = Self {
            scales,
            lambda_min,
            lambda_max,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 {
            return invalid("LRFC needs at least one scale");
        }
        if !(self.lambda_min > 0.0 && self.lambda_min <= self.lambda_max && self.lambda_max.is_finite()) {
            return invalid(format!(
                "LRFC scales need 0 < lambda_min <= lambda_max, got {} and {}",
                self.lambda_min, self.lambda_max
            ));
        }
        Ok(())
    }

    /// Ratio `lambda_max / lambda_min`.
    pub fn ratio(&self) -> f64 {
        self.lambda_max / self.lambda_min
    }

    /// Encoding width `6S`.
    pub fn dim(&self) -> usize {
        6 * self.scales
    }

    pub fn wavelength(&self, s: usize) -> f64 {
        if self.scales == 1 {
            return self.lambda_min;
        }
        self.lambda_min * self.ratio().powf(s as f64 / (self.scales - 1) as f64)
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        (0..self.scales).map(|s| self.wavelength(s)).collect()
    }
}

/// Writes the encoding of `x` into `out` (length `6S`).
pub fn encode_into(x: [f64; 2], wavelengths: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), 6 * wavelengths.len());
    for (s, &lambda) in wavelengths.iter().enumerate() {
        for (j, a) in DIRECTIONS.iter().enumerate() {
            let (sin, cos) = ((x[0] * a[0] + x[1] * a[1]) / lambda).sin_cos();
            let base = 6 * s + 2 * j;
            out[base] = cos;
            out[base + 1] = sin;
        }
    }
}

pub fn encode(x: [f64; 2], cfg: &LrfcConfig) -> Vec<f64> {
    let mut out = vec![0.0; cfg.dim()];
    encode_into(x, &cfg.wavelengths(), &mut out);
    out
}

/// Elementwise `|PE(a) − PE(b)|`.
pub fn relative_encoding(a: [f64; 2], b: [f64; 2], cfg: &LrfcConfig) -> Vec<f64> {
    encode(a, cfg)
        .into_iter()
        .zip(encode(b, cfg))
        .map(|(u, v)| (u - v).abs())
        .collect()
}

/// Encodings of many points, row-major `n × 6S`.
pub fn encode_all(points: &[[f64; 2]], cfg: &LrfcConfig) -> Vec<f64> {
    let lambdas = cfg.wavelengths();
    let d = cfg.dim();
    let mut out = vec![0.0; points.len() * d];
    for (p, row) in points.iter().zip(out.chunks_exact_mut(d)) {
        encode_into(*p, &lambdas, row);
    }
    out
}
