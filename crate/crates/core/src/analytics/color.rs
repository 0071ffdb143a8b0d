use serde::{Deserialize, Serialize};

use super::AnalyticsError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rgb {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl Rgb {
    pub const fn new(r: f64, g: f64, b: f64) -> Self {
        Rgb { r, g, b }
    }

    pub fn to_hex(self) -> String {
        let c = |v: f64| v.round().clamp(0.0, 255.0) as u8;
        format!("#{:02x}{:02x}{:02x}", c(self.r), c(self.g), c(self.b))
    }
}

pub const RED: Rgb = Rgb::new(215.0, 48.0, 39.0);
pub const YELLOW: Rgb = Rgb::new(255.0, 255.0, 191.0);
pub const GREEN: Rgb = Rgb::new(26.0, 152.0, 80.0);

fn lerp(a: Rgb, b: Rgb, t: f64) -> Rgb {
    Rgb::new(a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t)
}

/// Piecewise-linear diverging scale: red at -1, yellow at 0, green at +1.
pub fn color_for(r: f64) -> Result<Rgb, AnalyticsError> {
    if !(-1.0..=1.0).contains(&r) {
        return Err(AnalyticsError::OutOfRange(r));
    }
    Ok(if r < 0.0 { lerp(YELLOW, RED, -r) } else { lerp(YELLOW, GREEN, r) })
}
