use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// LQG parameter `gamma`, the metric dimension `d_gamma`, and the derived exponents.
///
/// `xi = gamma / d_gamma` weights distances, `q = 2/gamma + gamma/2` appears in
/// the coordinate-change log-derivative term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LqgParams {
    gamma: f64,
    d_gamma: f64,
    xi: f64,
    q: f64,
}

impl LqgParams {
    pub fn new(gamma: f64, d_gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 2.0) {
            return Err(Error::InvalidParams(format!(
                "gamma must lie in (0, 2), got {gamma}"
            )));
        }
        if !(d_gamma > 2.0 && d_gamma.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "d_gamma must exceed 2, got {d_gamma}"
            )));
        }
        Ok(LqgParams {
            gamma,
            d_gamma,
            xi: gamma / d_gamma,
            q: 2.0 / gamma + gamma / 2.0,
        })
    }

    /// `gamma = sqrt(8/3)` with its known dimension `d_gamma = 4`.
    pub fn pure_gravity() -> Self {
        LqgParams::new((8.0f64 / 3.0).sqrt(), 4.0).expect("valid constants")
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn d_gamma(&self) -> f64 {
        self.d_gamma
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn q(&self) -> f64 {
        self.q
    }
}

#[derive(Deserialize)]
struct RawParams {
    gamma: f64,
    d_gamma: f64,
}

impl<'de> Deserialize<'de> for LqgParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawParams::deserialize(d)?;
        LqgParams::new(raw.gamma, raw.d_gamma).map_err(serde::de::Error::custom)
    }
}
