use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fidelity::BinaryMask;
use crate::grid::Field2D;
use crate::metrics::squared_distance_transform;

/// Appearance model: two intensity levels, a bright halo on the background
/// side of every boundary, optical blur and additive sensor noise. The halo
/// decays as `exp(-d^2 / (2 halo_width^2))` with `d` the distance from the
/// mask boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderParams {
    pub v_in: f64,
    pub v_bg: f64,
    pub halo_amp: f64,
    pub halo_width: f64,
    pub blur_sigma: f64,
    pub noise_sigma: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            v_in: 0.3,
            v_bg: 0.5,
            halo_amp: 0.3,
            halo_width: 1.5,
            blur_sigma: 0.8,
            noise_sigma: 0.08,
        }
    }
}

impl RenderParams {
    /// Two-level image with no halo, blur or noise.
    pub fn clean(v_in: f64, v_bg: f64) -> Self {
        Self {
            v_in,
            v_bg,
            halo_amp: 0.0,
            halo_width: 1.0,
            blur_sigma: 0.0,
            noise_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("v_in", self.v_in), ("v_bg", self.v_bg)] {
            if !(0.0..=1.0).contains(&v) {
                return invalid(format!("render.{name} must lie in [0,1], got {v}"));
            }
        }
        for (name, v) in [
            ("halo_amp", self.halo_amp),
            ("blur_sigma", self.blur_sigma),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return invalid(format!("render.{name} must be finite and nonnegative, got {v}"));
            }
        }
        if !(self.halo_width.is_finite() && self.halo_width > 0.0) {
            return invalid(format!("render.halo_width must be positive, got {}", self.halo_width));
        }
        Ok(())
    }
}

/// Separable Gaussian blur with edge-duplicated borders.
pub fn gaussian_blur(f: &Field2D, sigma: f64) -> Field2D {
    if sigma <= 0.0 {
        return f.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);

    let (h, w) = f.dims();
    let rows = Field2D::from_fn(h, w, |i, j| {
        kernel
            .iter()
            .enumerate()
            .map(|(t, k)| k * f.get_clamped(i as isize, j as isize + t as isize - radius))
            .sum()
    });
    Field2D::from_fn(h, w, |i, j| {
        kernel
            .iter()
            .enumerate()
            .map(|(t, k)| k * rows.get_clamped(i as isize + t as isize - radius, j as isize))
            .sum()
    })
}

/// Renders a synthetic phase-contrast-like image of `mask`.
pub fn render(mask: &BinaryMask, rp: &RenderParams, seed: u64) -> Result<Field2D> {
    rp.validate()?;
    let (h, w) = mask.dims();
    let mut img = Field2D::from_fn(h, w, |i, j| if mask.get(i, j) { rp.v_in } else { rp.v_bg });

    if rp.halo_amp > 0.0 {
        let fg: Vec<(usize, usize)> = (0..h)
            .flat_map(|i| (0..w).map(move |j| (i, j)))
            .filter(|&(i, j)| mask.get(i, j))
            .collect();
        let d2 = squared_distance_transform(h, w, &fg);
        let denom = 2.0 * rp.halo_width * rp.halo_width;
        for (k, v) in img.values_mut().iter_mut().enumerate() {
            if mask.values()[k] == 0 && d2[k].is_finite() {
                // The boundary runs half a pixel from the nearest foreground centre.
                let d = d2[k].sqrt() - 0.5;
                *v += rp.halo_amp * (-d * d / denom).exp();
            }
        }
    }

    let mut img = gaussian_blur(&img, rp.blur_sigma);

    if rp.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, rp.noise_sigma).expect("validated sigma");
        for v in img.values_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    for v in img.values_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(img)
}
